//! Identifier primes and the prime-exponent message codec.
//!
//! A table of `(prime, value)` pairs is carried as the single integer
//! `∏ p^value`. Every prime doubles as the ID of the agent that owns it, so
//! the factorization of a message recovers both the data and its origin.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

/// How many primes the default sequence holds. The last of them (104729) is
/// also the default largest divisor tried while decoding.
pub const DEFAULT_PRIME_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrimeError {
    #[error("prime cap exceeded: requested prime #{requested}, cap is {cap}")]
    CapExceeded { requested: usize, cap: usize },
    #[error("prime index must be at least 1")]
    ZeroIndex,
    #[error("{0} is not prime")]
    NotPrime(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("duplicate prime {0} in pair set")]
    DuplicatePrime(Prime),
    #[error("value {value} for prime {prime} out of range [1, {max}]")]
    ValueOutOfRange { prime: Prime, value: u32, max: u32 },
    #[error("unfactorable residue {residue} after trial division up to {cap}")]
    UnfactorableResidue { residue: BigUint, cap: Prime },
    #[error("exponent {exponent} of prime {prime} exceeds {max}")]
    ExponentOutOfRange {
        prime: Prime,
        exponent: u32,
        max: u32,
    },
    #[error("message value must be at least 1")]
    ZeroMessage,
}

/// A prime number used as a globally unique agent identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prime(u64);

impl Prime {
    /// Checked constructor; primality is verified by trial division.
    pub fn new(value: u64) -> Result<Self, PrimeError> {
        if is_prime(value) {
            Ok(Prime(value))
        } else {
            Err(PrimeError::NotPrime(value))
        }
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Prime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl TryFrom<u64> for Prime {
    type Error = PrimeError;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        Prime::new(value)
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Upper bound on the n-th prime (Rosser): n (ln n + ln ln n) for n ≥ 6.
fn nth_prime_upper_bound(n: usize) -> usize {
    if n < 6 {
        return 13;
    }
    let nf = n as f64;
    (nf * (nf.ln() + nf.ln().ln())).ceil() as usize + 1
}

fn sieve_first(count: usize) -> Vec<u64> {
    let limit = nth_prime_upper_bound(count);
    let mut composite = vec![false; limit + 1];
    let mut primes = Vec::with_capacity(count);
    for i in 2..=limit {
        if composite[i] {
            continue;
        }
        primes.push(i as u64);
        if primes.len() == count {
            break;
        }
        let mut j = i * i;
        while j <= limit {
            composite[j] = true;
            j += i;
        }
    }
    debug_assert_eq!(primes.len(), count);
    primes
}

/// The ordered sequence of the first `cap` primes.
#[derive(Debug, Clone)]
pub struct PrimeSequence {
    primes: Vec<u64>,
}

impl PrimeSequence {
    pub fn with_cap(cap: usize) -> Self {
        PrimeSequence {
            primes: sieve_first(cap),
        }
    }

    /// The shared default sequence of [`DEFAULT_PRIME_CAP`] primes.
    pub fn standard() -> &'static PrimeSequence {
        static SEQ: OnceLock<PrimeSequence> = OnceLock::new();
        SEQ.get_or_init(|| PrimeSequence::with_cap(DEFAULT_PRIME_CAP))
    }

    pub fn cap(&self) -> usize {
        self.primes.len()
    }

    /// 1-indexed: `nth(1)` is 2.
    pub fn nth(&self, n: usize) -> Result<Prime, PrimeError> {
        if n == 0 {
            return Err(PrimeError::ZeroIndex);
        }
        self.primes
            .get(n - 1)
            .map(|&p| Prime(p))
            .ok_or(PrimeError::CapExceeded {
                requested: n,
                cap: self.cap(),
            })
    }

    pub fn largest(&self) -> Prime {
        Prime(*self.primes.last().expect("prime sequence is never empty"))
    }

    pub fn iter(&self) -> impl Iterator<Item = Prime> + '_ {
        self.primes.iter().map(|&p| Prime(p))
    }
}

/// The n-th prime from the default sequence.
pub fn nth_prime(n: usize) -> Result<Prime, PrimeError> {
    PrimeSequence::standard().nth(n)
}

/// An encoded pair set: `∏ p^x`. Always at least 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Message(BigUint);

impl Message {
    pub fn new(value: BigUint) -> Result<Self, CodecError> {
        if value.is_zero() {
            Err(CodecError::ZeroMessage)
        } else {
            Ok(Message(value))
        }
    }

    /// The empty-set message, 1.
    pub fn one() -> Self {
        Message(BigUint::one())
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    /// Number of bits in the binary representation; `bit_length(1) == 1`.
    pub fn bit_length(&self) -> u64 {
        self.0.bits()
    }

    /// `self · p^exponent`.
    pub fn times_power(&self, prime: Prime, exponent: u32) -> Message {
        Message(&self.0 * BigUint::from(prime.0).pow(exponent))
    }
}

impl std::ops::Mul<&Message> for &Message {
    type Output = Message;

    fn mul(self, rhs: &Message) -> Message {
        Message(&self.0 * &rhs.0)
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for Message {
    /// Panics on 0.
    fn from(v: u64) -> Self {
        Message::new(BigUint::from(v)).expect("message must be nonzero")
    }
}

/// Free-function form of [`Message::bit_length`].
pub fn bit_length(m: &Message) -> u64 {
    m.bit_length()
}

/// Decoded pair set, ordered by prime.
pub type Pairs = BTreeMap<Prime, u32>;

/// Encoder/decoder for one data range `[1, max_value]`.
///
/// The exponent `max_value + 1` is the leave sentinel and is accepted in
/// both directions so goodbyes survive the round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Codec {
    max_value: u32,
    cap: Prime,
}

impl Codec {
    /// Codec with the default trial-division cap. `max_value` must be ≥ 1.
    pub fn new(max_value: u32) -> Self {
        Codec::with_cap(max_value, PrimeSequence::standard().largest())
    }

    pub fn with_cap(max_value: u32, cap: Prime) -> Self {
        assert!(max_value >= 1, "data range upper bound must be at least 1");
        Codec { max_value, cap }
    }

    pub fn max_value(&self) -> u32 {
        self.max_value
    }

    /// The leave sentinel M' = M + 1.
    pub fn sentinel(&self) -> u32 {
        self.max_value + 1
    }

    pub fn cap(&self) -> Prime {
        self.cap
    }

    pub fn encode<I>(&self, pairs: I) -> Result<Message, CodecError>
    where
        I: IntoIterator<Item = (Prime, u32)>,
    {
        let mut seen = Pairs::new();
        for (prime, value) in pairs {
            if value < 1 || value > self.sentinel() {
                return Err(CodecError::ValueOutOfRange {
                    prime,
                    value,
                    max: self.sentinel(),
                });
            }
            if seen.insert(prime, value).is_some() {
                return Err(CodecError::DuplicatePrime(prime));
            }
        }
        let product = seen.iter().fold(BigUint::one(), |acc, (p, &x)| {
            acc * BigUint::from(p.0).pow(x)
        });
        Ok(Message(product))
    }

    /// Strict decode: every exponent must lie in `[1, M + 1]`.
    pub fn decode(&self, m: &Message) -> Result<Pairs, CodecError> {
        self.factor_bounded(m, self.sentinel())
    }

    /// Decode allowing exponents up to `max_exponent`. Used by receivers to
    /// see a leaving agent's `p^x · p^M'` product, whose exponent is `x + M'`.
    pub fn factor_bounded(&self, m: &Message, max_exponent: u32) -> Result<Pairs, CodecError> {
        let mut residue = m.0.clone();
        let mut pairs = Pairs::new();
        for prime in PrimeSequence::standard().iter() {
            if residue.is_one() || prime > self.cap {
                break;
            }
            let mut exponent = 0u32;
            loop {
                let rem = (&residue % prime.0)
                    .to_u64()
                    .expect("remainder is below a u64 divisor");
                if rem != 0 {
                    break;
                }
                residue /= prime.0;
                exponent += 1;
            }
            if exponent > 0 {
                if exponent > max_exponent {
                    return Err(CodecError::ExponentOutOfRange {
                        prime,
                        exponent,
                        max: max_exponent,
                    });
                }
                pairs.insert(prime, exponent);
            }
        }
        if !residue.is_one() {
            return Err(CodecError::UnfactorableResidue {
                residue,
                cap: self.cap,
            });
        }
        Ok(pairs)
    }
}

/// Agent index → identifier prime, kept injective.
///
/// Departed agents' primes are retired rather than recycled: receivers keep
/// a tombstone for every goodbye they relayed, so a reused prime would be
/// silently ignored by part of the network.
#[derive(Debug, Clone, Default)]
pub struct PrimeRegistry {
    assignments: BTreeMap<usize, Prime>,
    retired: BTreeMap<Prime, usize>,
    next_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("agent {0} already has a prime")]
    AgentAssigned(usize),
    #[error("prime {prime} already assigned to agent {owner}")]
    PrimeTaken { prime: Prime, owner: usize },
    #[error("prime {0} was retired by a departed agent")]
    PrimeRetired(Prime),
    #[error("agent {0} has no prime")]
    UnknownAgent(usize),
    #[error(transparent)]
    Prime(#[from] PrimeError),
}

impl PrimeRegistry {
    pub fn new() -> Self {
        PrimeRegistry {
            next_index: 1,
            ..Default::default()
        }
    }

    /// Agents `1..=n` receive the first `n` primes in index order.
    pub fn centralized(n: usize) -> Result<Self, RegistryError> {
        let mut reg = PrimeRegistry::new();
        for agent in 1..=n {
            reg.assign_next(agent)?;
        }
        Ok(reg)
    }

    /// Gives `agent` the next prime in the centralized sequence.
    pub fn assign_next(&mut self, agent: usize) -> Result<Prime, RegistryError> {
        loop {
            let prime = nth_prime(self.next_index)?;
            self.next_index += 1;
            if self.owner_of(prime).is_none() && !self.retired.contains_key(&prime) {
                self.assign(agent, prime)?;
                return Ok(prime);
            }
        }
    }

    pub fn assign(&mut self, agent: usize, prime: Prime) -> Result<(), RegistryError> {
        if self.assignments.contains_key(&agent) {
            return Err(RegistryError::AgentAssigned(agent));
        }
        if let Some(owner) = self.owner_of(prime) {
            return Err(RegistryError::PrimeTaken { prime, owner });
        }
        if self.retired.contains_key(&prime) {
            return Err(RegistryError::PrimeRetired(prime));
        }
        self.assignments.insert(agent, prime);
        Ok(())
    }

    /// Removes a departed agent and retires its prime.
    pub fn retire(&mut self, agent: usize) -> Result<Prime, RegistryError> {
        let prime = self
            .assignments
            .remove(&agent)
            .ok_or(RegistryError::UnknownAgent(agent))?;
        self.retired.insert(prime, agent);
        Ok(prime)
    }

    pub fn prime_of(&self, agent: usize) -> Option<Prime> {
        self.assignments.get(&agent).copied()
    }

    pub fn owner_of(&self, prime: Prime) -> Option<usize> {
        self.assignments
            .iter()
            .find_map(|(&a, &p)| (p == prime).then_some(a))
    }

    pub fn is_retired(&self, prime: Prime) -> bool {
        self.retired.contains_key(&prime)
    }

    pub fn assignments(&self) -> &BTreeMap<usize, Prime> {
        &self.assignments
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}
