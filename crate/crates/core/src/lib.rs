//! Prime-product information dissemination over synchronous networks.
//!
//! Every agent owns a unique prime and a small integer datum. A table of
//! known data travels as one integer, the product of each known prime raised
//! to its datum, and receivers recover the table by trial division.
//!
//! - [`primes`]: prime sequence, encoding and decoding, registry
//! - [`graph`]: topologies and hop-distance queries
//! - [`protocol`]: the per-agent state machine, join and leave
//! - [`sim`]: the round engine, traces and CSV output
//! - [`analysis`]: size metrics and invariant checkers
//! - [`cli`]: the `primetime` command

pub mod analysis;
pub mod cli;
pub mod graph;
pub mod primes;
pub mod protocol;
pub mod sim;

pub use primes::{Codec, Message, Prime};
pub use protocol::{AgentState, Variant};
pub use sim::{run, SimConfig};
