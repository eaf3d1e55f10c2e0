//! Message-size metrics, the tabular baseline, and checkers that compare a
//! recorded run against the BFS hop-set characterizations.

use std::fmt;
use std::io::Write;

use num_bigint::BigUint;
use num_traits::One;

use crate::graph::{self, HopSets, Topology};
use crate::primes::{bit_length, nth_prime, Codec, Message, Prime};
use crate::protocol::Variant;
use crate::sim::{self, RunOutput};

/// `ceil(log2 x)` for `x ≥ 1`.
pub fn ceil_log2(x: u64) -> u64 {
    assert!(x >= 1);
    (64 - (x - 1).leading_zeros()) as u64
}

/// Bits for `pair_count` fixed-width `(id, value)` entries plus a count
/// header: `|S| (⌈log2 N⌉ + ⌈log2 (M+1)⌉) + ⌈log2 (N+1)⌉`.
pub fn tabular_bits(pair_count: usize, n_max: u64, max_value: u32) -> u64 {
    let per_pair = ceil_log2(n_max) + ceil_log2(max_value as u64 + 1);
    pair_count as u64 * per_pair + ceil_log2(n_max + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeComparison {
    pub primetime_bits: u64,
    pub tabular_bits: u64,
}

pub fn compare_encodings(
    pairs: &[(Prime, u32)],
    n_max: u64,
    max_value: u32,
) -> Result<SizeComparison, crate::primes::CodecError> {
    let m = Codec::new(max_value).encode(pairs.iter().copied())?;
    Ok(SizeComparison {
        primetime_bits: bit_length(&m),
        tabular_bits: tabular_bits(pairs.len(), n_max, max_value),
    })
}

/// The full table of agents `1..=n` all holding `value`.
pub fn uniform_full_table(n: usize, value: u32) -> Vec<(Prime, u32)> {
    (1..=n)
        .map(|i| (nth_prime(i).expect("n below prime cap"), value))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeRow {
    pub n: usize,
    pub max_value: u32,
    pub round: usize,
    pub agent: usize,
    pub primetime_bits: u64,
    pub tabular_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeReport {
    pub rows: Vec<SizeRow>,
    pub total_primetime_bits: u64,
    pub total_tabular_bits: u64,
    /// Per-agent bits in the last recorded round.
    pub final_round: Vec<SizeRow>,
}

/// Per-message size comparison over a recorded run. The tabular side
/// encodes the same pairs the message carried.
pub fn size_report(out: &RunOutput, n_max: u64, max_value: u32) -> SizeReport {
    let n = out.topology.node_count();
    let rows: Vec<SizeRow> = out
        .traces
        .iter()
        .flat_map(|t| {
            t.agents.iter().map(move |r| SizeRow {
                n,
                max_value,
                round: t.round,
                agent: r.agent,
                primetime_bits: r.message_bits,
                tabular_bits: tabular_bits(r.pairs_sent, n_max, max_value),
            })
        })
        .collect();
    let last = out.traces.last().map_or(0, |t| t.round);
    SizeReport {
        total_primetime_bits: rows.iter().map(|r| r.primetime_bits).sum(),
        total_tabular_bits: rows.iter().map(|r| r.tabular_bits).sum(),
        final_round: rows.iter().filter(|r| r.round == last).cloned().collect(),
        rows,
    }
}

pub fn write_size_report<W: Write>(report: &SizeReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "M", "round", "agent", "primetime_bits", "tabular_bits"])?;
    for r in &report.rows {
        w.write_record([
            r.n.to_string(),
            r.max_value.to_string(),
            r.round.to_string(),
            r.agent.to_string(),
            r.primetime_bits.to_string(),
            r.tabular_bits.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub check: &'static str,
    pub passed: bool,
    /// First counterexample found, if any.
    pub counterexample: Option<String>,
}

impl Verdict {
    fn pass(check: &'static str) -> Self {
        Verdict {
            check,
            passed: true,
            counterexample: None,
        }
    }

    fn fail(check: &'static str, why: String) -> Self {
        Verdict {
            check,
            passed: false,
            counterexample: Some(why),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "pass" } else { "fail" };
        match &self.counterexample {
            Some(c) => write!(f, "{}: {status} ({c})", self.check),
            None => write!(f, "{}: {status}", self.check),
        }
    }
}

pub fn write_verdicts<W: Write>(verdicts: &[Verdict], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "result", "counterexample"])?;
    for v in verdicts {
        w.write_record([
            v.check,
            if v.passed { "pass" } else { "fail" },
            v.counterexample.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Completion exactly at the diameter, and not one round earlier.
pub fn check_completion_at_diameter(out: &RunOutput, topology: &Topology) -> Verdict {
    const NAME: &str = "completion_at_diameter";
    let d = graph::diameter(topology);
    match sim::completion_round(&out.traces) {
        Some(k) if k == d => {}
        Some(k) => return Verdict::fail(NAME, format!("completed at round {k}, diameter is {d}")),
        None => {
            return Verdict::fail(
                NAME,
                format!(
                    "never completed in {} rounds, diameter is {d}",
                    out.traces.len()
                ),
            )
        }
    }
    if d == 0 {
        return Verdict::pass(NAME);
    }
    let before = &out.traces[d - 1];
    let incomplete = before.agents.iter().find(|holder| {
        out.initial
            .values()
            .any(|pair| holder.table.binary_search(pair).is_err())
    });
    match incomplete {
        Some(_) => Verdict::pass(NAME),
        None => Verdict::fail(
            NAME,
            format!("all tables already complete at round {}", d - 1),
        ),
    }
}

fn oracle_product<'a>(pairs: impl Iterator<Item = &'a (Prime, u32)>) -> BigUint {
    pairs.fold(BigUint::one(), |acc, &(p, x)| {
        acc * BigUint::from(p.get()).pow(x)
    })
}

/// Every recorded message and table against the hop-set products: inclusive
/// sets for PrimeTime, exclusive for Incremental.
pub fn check_hop_equations(out: &RunOutput, topology: &Topology, variant: Variant) -> Verdict {
    const NAME: &str = "hop_set_messages";
    let hops = HopSets::new(topology);
    let d = graph::diameter(topology);
    for trace in out.traces.iter().take(d + 3) {
        let k = trace.round;
        for rec in &trace.agents {
            let i = rec.agent;
            let inclusive: Vec<(Prime, u32)> = hops
                .inclusive(i, k)
                .iter()
                .map(|j| out.initial[j])
                .collect();
            let for_message: Vec<(Prime, u32)> = match variant {
                Variant::PrimeTime => inclusive.clone(),
                Variant::Incremental => hops
                    .exclusive(i, k)
                    .iter()
                    .map(|j| out.initial[j])
                    .collect(),
            };
            let expected = oracle_product(for_message.iter());
            if rec.message.value() != &expected {
                return Verdict::fail(
                    NAME,
                    format!(
                        "agent {i} round {k}: sent {}, hop-set product {expected}",
                        rec.message
                    ),
                );
            }
            if rec.table != inclusive {
                return Verdict::fail(
                    NAME,
                    format!("agent {i} round {k}: table differs from inclusive {k}-hop set"),
                );
            }
        }
    }
    if out.traces.len() < d + 3 {
        return Verdict::fail(
            NAME,
            format!("only {} rounds recorded, need {}", out.traces.len(), d + 3),
        );
    }
    Verdict::pass(NAME)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowthRow {
    pub n: usize,
    pub steady_state_bits: u64,
    /// At `M = 1` the message is the primorial; compared to `n!`.
    pub value_exceeds_factorial: bool,
}

/// Steady-state PrimeTime message size for the first `n` primes all
/// raised to `max_value`.
pub fn steady_state_growth(n_values: &[usize], max_value: u32) -> Vec<GrowthRow> {
    n_values
        .iter()
        .map(|&n| {
            let table = uniform_full_table(n, max_value);
            let message = oracle_product(table.iter());
            let primorial = oracle_product(uniform_full_table(n, 1).iter());
            let factorial: BigUint = (1..=n as u64).map(BigUint::from).product();
            GrowthRow {
                n,
                steady_state_bits: Message::new(message)
                    .expect("product is nonzero")
                    .bit_length(),
                value_exceeds_factorial: primorial > factorial,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, SimConfig, TopologySpec};

    fn p(v: u64) -> Prime {
        Prime::new(v).unwrap()
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
    }

    #[test]
    fn compare_examples() {
        assert_eq!(
            compare_encodings(&[], 8, 4).unwrap(),
            SizeComparison {
                primetime_bits: 1,
                tabular_bits: 4
            }
        );
        let four = [(p(2), 1), (p(3), 1), (p(5), 1), (p(7), 1)];
        assert_eq!(
            compare_encodings(&four, 4, 1).unwrap(),
            SizeComparison {
                primetime_bits: 8,
                tabular_bits: 15
            }
        );
        let big = compare_encodings(&uniform_full_table(20, 8), 20, 8).unwrap();
        // tabular: 20 · (5 + 4) + 5
        assert_eq!(big.tabular_bits, 185);
        assert!(big.primetime_bits > big.tabular_bits);
    }

    #[test]
    fn growth_examples() {
        let rows = steady_state_growth(&[1, 4, 10], 1);
        assert_eq!(rows[0].steady_state_bits, 2);
        assert_eq!(rows[1].steady_state_bits, 8);
        // 6469693230 needs 33 bits
        assert_eq!(rows[2].steady_state_bits, 33);
        assert!(rows.iter().all(|r| r.value_exceeds_factorial));
    }

    fn closed_run(spec: TopologySpec, variant: Variant) -> RunOutput {
        run(&SimConfig::new(spec, 3, variant)).unwrap()
    }

    #[test]
    fn completion_at_diameter_verdicts() {
        let out = closed_run(TopologySpec::Path { n: 4 }, Variant::PrimeTime);
        assert!(check_completion_at_diameter(&out, &out.topology).passed);
        assert_eq!(out.summary.diameter, 3);
        let out = closed_run(TopologySpec::Complete { n: 3 }, Variant::Incremental);
        assert!(check_completion_at_diameter(&out, &out.topology).passed);

        let mut cfg = SimConfig::new(TopologySpec::Path { n: 4 }, 3, Variant::PrimeTime);
        cfg.max_rounds = Some(3);
        let truncated = run(&cfg).unwrap();
        let v = check_completion_at_diameter(&truncated, &truncated.topology);
        assert!(!v.passed);
        assert!(v.counterexample.unwrap().contains("never completed"));
    }

    #[test]
    fn hop_equation_verdicts() {
        for variant in [Variant::PrimeTime, Variant::Incremental] {
            let out = closed_run(TopologySpec::Cycle { n: 7 }, variant);
            assert!(check_hop_equations(&out, &out.topology, variant).passed);
        }
        // checking a run against the wrong variant must fail
        let out = closed_run(TopologySpec::Path { n: 3 }, Variant::PrimeTime);
        let v = check_hop_equations(&out, &out.topology, Variant::Incremental);
        assert!(!v.passed);
    }

    #[test]
    fn hop_equation_boundary_rounds() {
        let out = closed_run(TopologySpec::Path { n: 3 }, Variant::PrimeTime);
        let (p2, x2) = out.initial[&2];
        assert_eq!(
            out.traces[0].record(2).unwrap().message,
            Message::one().times_power(p2, x2)
        );
        let full = oracle_product(out.initial.values());
        for t in &out.traces[2..] {
            assert!(t.agents.iter().all(|r| r.message.value() == &full));
        }
        let inc = closed_run(TopologySpec::Path { n: 3 }, Variant::Incremental);
        assert!(inc.traces[3].agents.iter().all(|r| r.message.is_one()));
    }

    #[test]
    fn size_report_rows() {
        let out = closed_run(TopologySpec::Path { n: 3 }, Variant::Incremental);
        let rep = size_report(&out, 3, 3);
        assert_eq!(rep.rows.len(), 3 * out.traces.len());
        // steady state sends 1: one bit vs the bare header
        assert!(rep
            .final_round
            .iter()
            .all(|r| r.primetime_bits == 1 && r.tabular_bits == 2));
        let mut buf = Vec::new();
        write_size_report(&rep, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("n,M,round,agent,primetime_bits,tabular_bits\n3,3,0,1,"));
    }
}
