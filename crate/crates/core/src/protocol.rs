//! Per-agent state machine for both protocol variants and the open-graph
//! join/leave flows.
//!
//! An agent's round is: [`AgentState::form_message`] from the table as it
//! stood at the start of the round, broadcast, then
//! [`AgentState::receive_message`] for every copy that arrived. Receptions
//! only affect the next round's message.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primes::{
    Codec, CodecError, Message, Prime, PrimeRegistry, PrimeSequence, RegistryError,
};

pub type AgentId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Broadcast the whole table every round.
    #[serde(rename = "primetime")]
    PrimeTime,
    /// Broadcast only pairs learned during the previous round.
    #[serde(rename = "incremental")]
    Incremental,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::PrimeTime => "primetime",
            Variant::Incremental => "incremental",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "primetime" => Ok(Variant::PrimeTime),
            "incremental" => Ok(Variant::Incremental),
            other => Err(format!(
                "unknown variant {other:?} (expected primetime|incremental)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("conflicting value for prime {prime}: stored {stored}, received {received}")]
    ConflictingValue {
        prime: Prime,
        stored: u32,
        received: u32,
    },
    #[error("agent {0} already departed")]
    AlreadyDeparted(AgentId),
    #[error("data value {value} outside [1, {max}]")]
    ValueOutOfRange { value: u32, max: u32 },
    #[error("no unused prime below the cap")]
    PrimeCapExceeded,
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Known `(prime → value)` pairs. Never holds the leave sentinel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairTable(BTreeMap<Prime, u32>);

impl PairTable {
    pub fn new() -> Self {
        PairTable::default()
    }

    pub fn get(&self, prime: Prime) -> Option<u32> {
        self.0.get(&prime).copied()
    }

    pub fn contains(&self, prime: Prime) -> bool {
        self.0.contains_key(&prime)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Prime, u32)> + '_ {
        self.0.iter().map(|(&p, &x)| (p, x))
    }

    pub fn primes(&self) -> impl Iterator<Item = Prime> + '_ {
        self.0.keys().copied()
    }

    /// Pairs in `self` whose prime is absent from `other`.
    pub fn minus(&self, other: &PairTable) -> PairTable {
        PairTable(
            self.0
                .iter()
                .filter(|(p, _)| !other.0.contains_key(p))
                .map(|(&p, &x)| (p, x))
                .collect(),
        )
    }

    pub fn is_subset(&self, other: &PairTable) -> bool {
        self.0.iter().all(|(p, x)| other.0.get(p) == Some(x))
    }

    fn insert(&mut self, prime: Prime, value: u32) {
        self.0.insert(prime, value);
    }

    fn remove(&mut self, prime: Prime) -> bool {
        self.0.remove(&prime).is_some()
    }
}

impl FromIterator<(Prime, u32)> for PairTable {
    fn from_iter<I: IntoIterator<Item = (Prime, u32)>>(iter: I) -> Self {
        PairTable(iter.into_iter().collect())
    }
}

/// Irregularities seen on receipt. None of them stop the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Anomaly {
    /// A goodbye for a prime this agent never stored. It is still relayed.
    SentinelForUnknownPrime(Prime),
    /// A goodbye naming this agent's own prime. Ignored.
    SentinelForOwnPrime(Prime),
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anomaly::SentinelForUnknownPrime(p) => write!(f, "goodbye for unknown prime {p}"),
            Anomaly::SentinelForOwnPrime(p) => write!(f, "goodbye for own prime {p}"),
        }
    }
}

/// What one received message changed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReceiveOutcome {
    pub added: Vec<Prime>,
    pub removed: Vec<Prime>,
    /// Data for already-departed primes, dropped.
    pub stale: Vec<Prime>,
    pub anomalies: Vec<Anomaly>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    id: AgentId,
    own_prime: Prime,
    own_value: u32,
    variant: Variant,
    codec: Codec,
    table: PairTable,
    prev_table: PairTable,
    goodbye_relay: BTreeSet<Prime>,
    departed: BTreeSet<Prime>,
    active: bool,
}

enum Step {
    Insert(Prime, u32),
    Goodbye(Prime),
    Stale(Prime),
    Skip,
    Flag(Anomaly),
}

impl AgentState {
    /// A fresh agent at round 0: the table holds only its own pair and the
    /// previous-round table is empty.
    pub fn new(
        id: AgentId,
        own_prime: Prime,
        own_value: u32,
        variant: Variant,
        codec: Codec,
    ) -> Result<Self, ProtocolError> {
        if own_value < 1 || own_value > codec.max_value() {
            return Err(ProtocolError::ValueOutOfRange {
                value: own_value,
                max: codec.max_value(),
            });
        }
        Ok(AgentState {
            id,
            own_prime,
            own_value,
            variant,
            codec,
            table: PairTable::from_iter([(own_prime, own_value)]),
            prev_table: PairTable::new(),
            goodbye_relay: BTreeSet::new(),
            departed: BTreeSet::new(),
            active: true,
        })
    }

    pub fn id(&self) -> AgentId {
        self.id
    }

    pub fn own_prime(&self) -> Prime {
        self.own_prime
    }

    pub fn own_value(&self) -> u32 {
        self.own_value
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn table(&self) -> &PairTable {
        &self.table
    }

    pub fn prev_table(&self) -> &PairTable {
        &self.prev_table
    }

    pub fn goodbye_relay(&self) -> &BTreeSet<Prime> {
        &self.goodbye_relay
    }

    pub fn departed(&self) -> &BTreeSet<Prime> {
        &self.departed
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// This round's outgoing message. Pending goodbyes ride along as
    /// `p^(M+1)` and are cleared, as is the auxiliary difference.
    pub fn form_message(&mut self) -> Result<Message, ProtocolError> {
        if !self.active {
            return Err(ProtocolError::AlreadyDeparted(self.id));
        }
        let data = match self.variant {
            Variant::PrimeTime => self.table.clone(),
            Variant::Incremental => self.table.minus(&self.prev_table),
        };
        let sentinel = self.codec.sentinel();
        let goodbyes = self.goodbye_relay.iter().map(|&p| (p, sentinel));
        let message = self.codec.encode(data.iter().chain(goodbyes))?;
        self.prev_table = self.table.clone();
        self.goodbye_relay.clear();
        Ok(message)
    }

    /// Merges one neighbor's message. Either every pair in it is applied or,
    /// on error, none is.
    pub fn receive_message(&mut self, m: &Message) -> Result<ReceiveOutcome, ProtocolError> {
        if !self.active {
            return Err(ProtocolError::AlreadyDeparted(self.id));
        }
        let sentinel = self.codec.sentinel();
        // A leaving agent's own pair folds into its goodbye: exponent x + M'.
        let decoded = self
            .codec
            .factor_bounded(m, sentinel + self.codec.max_value())?;

        let mut steps = Vec::with_capacity(decoded.len());
        for (prime, exponent) in decoded {
            let step = if exponent < sentinel {
                self.plan_data(prime, exponent)?
            } else {
                if exponent > sentinel {
                    log::debug!(
                        "agent {}: goodbye from {prime} carries its datum {}",
                        self.id,
                        exponent - sentinel
                    );
                }
                self.plan_goodbye(prime)
            };
            steps.push(step);
        }

        let mut outcome = ReceiveOutcome::default();
        for step in steps {
            match step {
                Step::Insert(p, x) => {
                    self.table.insert(p, x);
                    outcome.added.push(p);
                }
                Step::Goodbye(p) => {
                    if self.table.remove(p) {
                        self.prev_table.remove(p);
                        outcome.removed.push(p);
                    }
                    self.departed.insert(p);
                    self.goodbye_relay.insert(p);
                }
                Step::Stale(p) => outcome.stale.push(p),
                Step::Skip => {}
                Step::Flag(a) => {
                    if let Anomaly::SentinelForUnknownPrime(p) = a {
                        self.departed.insert(p);
                        self.goodbye_relay.insert(p);
                    }
                    outcome.anomalies.push(a);
                }
            }
        }
        Ok(outcome)
    }

    fn plan_data(&self, prime: Prime, value: u32) -> Result<Step, ProtocolError> {
        if self.departed.contains(&prime) {
            return Ok(Step::Stale(prime));
        }
        match self.table.get(prime) {
            None => Ok(Step::Insert(prime, value)),
            Some(stored) if stored == value => Ok(Step::Skip),
            Some(stored) => Err(ProtocolError::ConflictingValue {
                prime,
                stored,
                received: value,
            }),
        }
    }

    fn plan_goodbye(&self, prime: Prime) -> Step {
        if prime == self.own_prime {
            Step::Flag(Anomaly::SentinelForOwnPrime(prime))
        } else if self.departed.contains(&prime) {
            Step::Skip
        } else if self.table.contains(prime) {
            Step::Goodbye(prime)
        } else {
            Step::Flag(Anomaly::SentinelForUnknownPrime(prime))
        }
    }

    /// Final transmission `m(k) · p^(M+1)`; the agent is inactive afterwards.
    pub fn leave(&mut self) -> Result<Message, ProtocolError> {
        let message = self.form_message()?;
        self.active = false;
        Ok(message.times_power(self.own_prime, self.codec.sentinel()))
    }
}

/// Smallest prime absent from `neighbor_table`, skipping primes the registry
/// has retired.
pub fn smallest_unused_prime(
    neighbor_table: &PairTable,
    registry: &PrimeRegistry,
) -> Result<Prime, ProtocolError> {
    PrimeSequence::standard()
        .iter()
        .find(|&p| !neighbor_table.contains(p) && !registry.is_retired(p))
        .ok_or(ProtocolError::PrimeCapExceeded)
}

/// Admits a new agent using one neighbor's table to pick its prime.
///
/// The agent starts as if at round 0, except that the queried table is
/// already known and counts as sent: its first message under either variant
/// still introduces its own pair, and under Incremental it never rebroadcasts
/// data the network already holds.
pub fn join(
    new_id: AgentId,
    neighbor_table: &PairTable,
    registry: &mut PrimeRegistry,
    value: u32,
    variant: Variant,
    codec: Codec,
) -> Result<AgentState, ProtocolError> {
    if value < 1 || value > codec.max_value() {
        return Err(ProtocolError::ValueOutOfRange {
            value,
            max: codec.max_value(),
        });
    }
    let prime = smallest_unused_prime(neighbor_table, registry)?;
    registry.assign(new_id, prime)?;
    let mut state = AgentState::new(new_id, prime, value, variant, codec)?;
    for (p, x) in neighbor_table.iter() {
        state.table.insert(p, x);
        state.prev_table.insert(p, x);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: u64) -> Prime {
        Prime::new(v).unwrap()
    }

    fn table(pairs: &[(u64, u32)]) -> PairTable {
        pairs.iter().map(|&(q, x)| (p(q), x)).collect()
    }

    fn agent(prime: u64, value: u32, variant: Variant, max_value: u32) -> AgentState {
        AgentState::new(1, p(prime), value, variant, Codec::new(max_value)).unwrap()
    }

    #[test]
    fn fresh_agent_sends_own_power() {
        for variant in [Variant::PrimeTime, Variant::Incremental] {
            let mut a = agent(7, 2, variant, 4);
            assert_eq!(a.form_message().unwrap(), Message::from(49));
        }
    }

    #[test]
    fn incremental_steady_state_sends_one() {
        let mut a = agent(7, 2, Variant::Incremental, 4);
        a.form_message().unwrap();
        assert_eq!(a.form_message().unwrap(), Message::one());
        a.receive_message(&Message::from(625)).unwrap();
        assert_eq!(a.form_message().unwrap(), Message::from(625));
        assert_eq!(a.form_message().unwrap(), Message::one());
    }

    #[test]
    fn primetime_sends_whole_table() {
        let mut a = agent(2, 1, Variant::PrimeTime, 4);
        a.receive_message(&Message::from(9)).unwrap();
        assert_eq!(a.table(), &table(&[(2, 1), (3, 2)]));
        assert_eq!(a.form_message().unwrap(), Message::from(18));
        assert_eq!(a.form_message().unwrap(), Message::from(18));
    }

    #[test]
    fn receive_examples() {
        let mut a = agent(2, 1, Variant::PrimeTime, 4);
        a.receive_message(&Message::from(625)).unwrap();
        assert_eq!(a.table(), &table(&[(2, 1), (5, 4)]));

        let before = a.clone();
        let out = a.receive_message(&Message::one()).unwrap();
        assert_eq!(out, ReceiveOutcome::default());
        assert_eq!(a, before);

        // 5^5: M' = 5 is the goodbye for prime 5
        let out = a.receive_message(&Message::from(3125)).unwrap();
        assert_eq!(out.removed, vec![p(5)]);
        assert_eq!(a.table(), &table(&[(2, 1)]));
        assert_eq!(a.goodbye_relay(), &BTreeSet::from([p(5)]));
    }

    #[test]
    fn goodbye_is_relayed_exactly_once() {
        let mut a = agent(2, 1, Variant::PrimeTime, 4);
        a.receive_message(&Message::from(625)).unwrap();
        a.form_message().unwrap();
        a.receive_message(&Message::from(3125)).unwrap();
        // relay: 2^1 · 5^5
        assert_eq!(a.form_message().unwrap(), Message::from(2 * 3125));
        assert_eq!(a.form_message().unwrap(), Message::from(2));
        // echoes and stale data are ignored
        let out = a.receive_message(&Message::from(3125)).unwrap();
        assert!(out.removed.is_empty());
        let out = a.receive_message(&Message::from(625 * 3)).unwrap();
        assert_eq!(out.stale, vec![p(5)]);
        assert_eq!(out.added, vec![p(3)]);
        assert!(!a.table().contains(p(5)));
        assert!(a.goodbye_relay().is_empty());
    }

    #[test]
    fn leaving_product_with_folded_datum_is_a_goodbye() {
        let mut a = agent(2, 1, Variant::PrimeTime, 4);
        a.receive_message(&Message::from(625)).unwrap();
        // 5^(4+5) as sent by a leaving PrimeTime agent
        let out = a.receive_message(&Message::from(5u64.pow(9))).unwrap();
        assert_eq!(out.removed, vec![p(5)]);
        assert!(out.anomalies.is_empty());
    }

    #[test]
    fn unknown_goodbye_is_flagged_and_relayed() {
        let mut a = agent(2, 1, Variant::Incremental, 4);
        a.form_message().unwrap();
        let out = a.receive_message(&Message::from(243)).unwrap();
        assert_eq!(out.anomalies, vec![Anomaly::SentinelForUnknownPrime(p(3))]);
        assert_eq!(a.form_message().unwrap(), Message::from(243));
        let out = a.receive_message(&Message::from(32)).unwrap();
        assert_eq!(out.anomalies, vec![Anomaly::SentinelForOwnPrime(p(2))]);
        assert!(a.table().contains(p(2)));
    }

    #[test]
    fn conflicting_value_is_rejected_atomically() {
        let mut a = agent(2, 1, Variant::PrimeTime, 4);
        a.receive_message(&Message::from(625)).unwrap();
        let before = a.clone();
        // 3^1 would be new, but 5^3 contradicts the stored 5^4
        let err = a.receive_message(&Message::from(3 * 125)).unwrap_err();
        assert_eq!(
            err,
            ProtocolError::ConflictingValue {
                prime: p(5),
                stored: 4,
                received: 3
            }
        );
        assert_eq!(a, before);
        assert!(matches!(
            a.receive_message(&Message::from(4)),
            Err(ProtocolError::ConflictingValue { .. })
        ));
    }

    #[test]
    fn duplicate_data_messages_are_idempotent() {
        let mut once = agent(2, 1, Variant::Incremental, 4);
        let mut twice = once.clone();
        let m = Message::from(3 * 625);
        once.receive_message(&m).unwrap();
        twice.receive_message(&m).unwrap();
        twice.receive_message(&m).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn codec_errors_propagate() {
        let mut a = agent(2, 1, Variant::PrimeTime, 2);
        // exponent 6 > 2M + 1 = 5
        assert!(matches!(
            a.receive_message(&Message::from(3u64.pow(6))),
            Err(ProtocolError::Codec(CodecError::ExponentOutOfRange { .. }))
        ));
    }

    #[test]
    fn join_picks_smallest_unused_prime() {
        let mut reg = PrimeRegistry::new();
        let s = join(
            9,
            &table(&[(2, 1), (3, 1), (5, 1), (7, 1)]),
            &mut reg,
            2,
            Variant::PrimeTime,
            Codec::new(4),
        )
        .unwrap();
        assert_eq!(s.own_prime(), p(11));
        assert_eq!(reg.prime_of(9), Some(p(11)));

        let mut reg = PrimeRegistry::new();
        let mut s = join(
            9,
            &table(&[(2, 1), (5, 1), (7, 1)]),
            &mut reg,
            2,
            Variant::Incremental,
            Codec::new(4),
        )
        .unwrap();
        assert_eq!(s.own_prime(), p(3));
        assert_eq!(s.table(), &table(&[(2, 1), (3, 2), (5, 1), (7, 1)]));
        assert_eq!(s.form_message().unwrap(), Message::from(9));
        assert_eq!(s.form_message().unwrap(), Message::one());

        let mut reg = PrimeRegistry::new();
        let mut s = join(
            1,
            &PairTable::new(),
            &mut reg,
            3,
            Variant::Incremental,
            Codec::new(4),
        )
        .unwrap();
        assert_eq!(s.own_prime(), p(2));
        assert_eq!(s.form_message().unwrap(), Message::from(8));
    }

    #[test]
    fn join_errors() {
        let mut reg = PrimeRegistry::centralized(2).unwrap();
        // neighbor does not know agent 2 yet, so 3 looks free but is taken
        assert!(matches!(
            join(
                5,
                &table(&[(2, 1)]),
                &mut reg,
                1,
                Variant::PrimeTime,
                Codec::new(4)
            ),
            Err(ProtocolError::Registry(RegistryError::PrimeTaken { .. }))
        ));
        assert!(matches!(
            join(
                5,
                &PairTable::new(),
                &mut reg,
                9,
                Variant::PrimeTime,
                Codec::new(4)
            ),
            Err(ProtocolError::ValueOutOfRange { .. })
        ));
        let full: PairTable = PrimeSequence::standard().iter().map(|q| (q, 1)).collect();
        assert_eq!(
            smallest_unused_prime(&full, &PrimeRegistry::new()),
            Err(ProtocolError::PrimeCapExceeded)
        );
    }

    #[test]
    fn join_skips_retired_primes() {
        let mut reg = PrimeRegistry::centralized(3).unwrap();
        reg.retire(2).unwrap();
        let s = join(
            4,
            &table(&[(2, 1), (5, 1)]),
            &mut reg,
            1,
            Variant::PrimeTime,
            Codec::new(4),
        )
        .unwrap();
        assert_eq!(s.own_prime(), p(7));
    }

    #[test]
    fn leave_examples() {
        let mut a = agent(2, 1, Variant::PrimeTime, 4);
        assert_eq!(a.leave().unwrap(), Message::from(64));
        assert!(!a.is_active());
        assert_eq!(a.leave(), Err(ProtocolError::AlreadyDeparted(1)));
        assert!(a.receive_message(&Message::from(3)).is_err());

        let mut b = agent(3, 2, Variant::Incremental, 4);
        b.form_message().unwrap();
        assert_eq!(b.leave().unwrap(), Message::from(243));
    }

    #[test]
    fn own_value_must_be_in_range() {
        assert!(AgentState::new(1, p(2), 0, Variant::PrimeTime, Codec::new(4)).is_err());
        assert!(AgentState::new(1, p(2), 5, Variant::PrimeTime, Codec::new(4)).is_err());
    }
}
