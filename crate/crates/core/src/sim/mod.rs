//! Deterministic scenario replay with per-event cost accounting.
//!
//! Equal seeds and scenarios produce byte-identical traces and metrics.

pub mod measure;
pub mod predict;
pub mod scenario;

use std::fmt::Write as _;

use serde::Serialize;

use crate::arith::Residue;
use crate::cost::CostLedger;
use crate::crypto::{derive_symmetric_key, GroupParams, KeyValue, PrivateShare};
use crate::error::{Error, Result};
use crate::region::{EventKind, Hop, HopKey, RegionTopology, RekeyPlan, SubgroupId, DEFAULT_MAX_SUBGROUP};
use crate::shares::ShareSource;
use crate::MemberId;

pub use scenario::{parse_scenario, Action, Scenario, ScriptedShare, Step};

#[derive(Clone, Debug)]
pub struct SimConfig<T> {
    pub params: GroupParams<T>,
    pub max_subgroup: usize,
    pub seed: u64,
}

impl<T: Residue> SimConfig<T> {
    pub fn new(params: GroupParams<T>, seed: u64) -> Self {
        Self { params, max_subgroup: DEFAULT_MAX_SUBGROUP, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Record<T> {
    Membership {
        index: usize,
        line: usize,
        kind: EventKind,
        member: MemberId,
        subgroup: Option<SubgroupId>,
        plan: RekeyPlan,
        ledger: CostLedger,
        /// Every rekeyed key after the event; `None` when no key remains.
        keys: Vec<(HopKey, Option<KeyValue<T>>)>,
    },
    Send {
        index: usize,
        line: usize,
        from: MemberId,
        to: MemberId,
        hops: Vec<Hop>,
        bytes: usize,
    },
}

#[derive(Clone, Debug)]
pub struct SimRun<T> {
    pub records: Vec<Record<T>>,
    pub topology: RegionTopology<T>,
}

fn script<T: Residue>(topo: &mut RegionTopology<T>, line: usize, s: &ScriptedShare) -> Result<()> {
    let params = topo.params().clone();
    let bad = |message: String| Error::Scenario { line, message };
    let exponent = T::from_str_radix(&s.value, 10).map_err(|_| bad(format!("share value {} does not fit", s.value)))?;
    let share = PrivateShare::from_exponent(exponent, &params).map_err(|e| bad(e.to_string()))?;
    topo.shares_mut().script(&s.member, s.layer, share);
    Ok(())
}

pub fn run_scenario<T: Residue>(scenario: &Scenario, config: &SimConfig<T>) -> Result<SimRun<T>> {
    let mut topo = RegionTopology::empty(config.params.clone(), config.max_subgroup, ShareSource::seeded(config.seed))?;
    let mut records = Vec::with_capacity(scenario.steps.len());
    for (i, step) in scenario.steps.iter().enumerate() {
        let index = i + 1;
        let line = step.line;
        for s in &step.scripted {
            script(&mut topo, line, s)?;
        }
        let at_line = |e: Error| Error::Event { line, source: Box::new(e) };
        match &step.action {
            Action::Membership(event) => {
                let member = event.member().clone();
                let before = topo.subgroup_of(&member);
                let outcome = topo.handle_event(event).map_err(at_line)?;
                let subgroup = topo.subgroup_of(&member).or(before);
                let mut keys: Vec<(HopKey, Option<KeyValue<T>>)> = outcome
                    .plan
                    .subgroup_keys
                    .iter()
                    .chain(outcome.plan.founded.iter())
                    .chain(outcome.plan.dissolved.iter())
                    .map(|&sid| (HopKey::Subgroup(sid), topo.subgroup_key(sid).cloned()))
                    .collect();
                if outcome.plan.outer_key {
                    keys.push((HopKey::Outer, topo.outer_key().cloned()));
                }
                records.push(Record::Membership { index, line, kind: outcome.kind, member, subgroup, plan: outcome.plan, ledger: outcome.ledger, keys });
            }
            Action::Send { from, to, payload } => {
                let route = topo.route_message(from, to, payload.as_bytes()).map_err(at_line)?;
                if route.delivered != payload.as_bytes() {
                    return Err(at_line(Error::InvariantViolation("delivered payload differs".into())));
                }
                records.push(Record::Send { index, line, from: from.clone(), to: to.clone(), hops: route.hops, bytes: payload.len() });
            }
        }
    }
    Ok(SimRun { records, topology: topo })
}

fn render_key<T: Residue>(key: &Option<KeyValue<T>>) -> String {
    match key {
        None => "-".into(),
        Some(k) => format!("{k} (fp {})", derive_symmetric_key(k).fingerprint()),
    }
}

/// One line per event.
pub fn render_trace<T: Residue>(run: &SimRun<T>) -> String {
    let mut out = String::new();
    for r in &run.records {
        match r {
            Record::Membership { index, line, kind, member, subgroup, ledger, keys, .. } => {
                let sg = subgroup.map_or_else(|| "-".to_owned(), |s| s.to_string());
                let _ = write!(out, "#{index} line {line} {kind} {member} in {sg}:");
                if keys.is_empty() {
                    out.push_str(" no rekey");
                }
                for (hop, key) in keys {
                    let _ = write!(out, " {hop}={}", render_key(key));
                }
                let _ = writeln!(
                    out,
                    " | rounds={} unicast={} broadcast={} serial={}",
                    ledger.rounds, ledger.unicast_units, ledger.broadcast_units, ledger.serial_exps
                );
            }
            Record::Send { index, line, from, to, hops, bytes } => {
                let path: Vec<String> = hops.iter().map(|h| format!("{} {}->{}", h.key, h.sealed_by, h.opened_by)).collect();
                let _ = writeln!(out, "#{index} line {line} send {from}->{to}: {} | {bytes} bytes", path.join(", "));
            }
        }
    }
    out
}

pub const METRICS_HEADER: &str = "event,rounds,unicast_units,broadcast_units,serial_exps";

/// Per-event ledger as CSV; the event column is `index:kind`.
pub fn render_metrics_csv<T>(run: &SimRun<T>) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in &run.records {
        if let Record::Membership { index, kind, ledger, .. } = r {
            let _ = writeln!(
                out,
                "{index}:{kind},{},{},{},{}",
                ledger.rounds, ledger.unicast_units, ledger.broadcast_units, ledger.serial_exps
            );
        }
    }
    out
}

#[derive(Serialize)]
struct LedgerLine<'a> {
    event: usize,
    kind: EventKind,
    member: &'a MemberId,
    #[serde(flatten)]
    ledger: &'a CostLedger,
}

/// Per-event ledger as JSON lines.
pub fn render_metrics_jsonl<T>(run: &SimRun<T>) -> String {
    let mut out = String::new();
    for r in &run.records {
        if let Record::Membership { index, kind, member, ledger, .. } = r {
            let line = LedgerLine { event: *index, kind: *kind, member, ledger };
            out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
{"kind":"join","member":"A","subgroup":"new"}
{"kind":"join","member":"B","subgroup":0}
{"kind":"join","member":"C","subgroup":"new"}
{"kind":"join","member":"D","subgroup":1}
{"kind":"send","member":"A","to":"D","payload":"hello"}
{"kind":"send","member":"A","to":"B","payload":"hi"}
{"kind":"controller_leave","member":"B"}
"#;

    fn run(seed: u64) -> SimRun<u64> {
        run_scenario(&parse_scenario(TEXT).unwrap(), &SimConfig::new(GroupParams::safe_prime_62(), seed)).unwrap()
    }

    #[test]
    fn replay_is_deterministic() {
        let (a, b) = (run(9), run(9));
        assert_eq!(render_trace(&a), render_trace(&b));
        assert_eq!(render_metrics_csv(&a), render_metrics_csv(&b));
        assert_ne!(render_trace(&a), render_trace(&run(10)));
    }

    #[test]
    fn trace_shape() {
        let r = run(1);
        let trace = render_trace(&r);
        let lines: Vec<&str> = trace.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].starts_with("#1 line 2 join A in R0: KR[R0]="), "{}", lines[0]);
        assert!(lines[2].contains("KG="), "{}", lines[2]);
        assert!(lines[4].contains("KG A->C, KR[R1] C->D"), "{}", lines[4]);
        assert!(lines[5].contains("send A->B: KR[R0] A->B"), "{}", lines[5]);
        let csv = render_metrics_csv(&r);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(render_metrics_jsonl(&r).lines().count(), 5);
    }

    #[test]
    fn runtime_errors_carry_the_line() {
        let text = "{\"kind\":\"join\",\"member\":\"A\"}\n{\"kind\":\"leave\",\"member\":\"Q\"}";
        let err = run_scenario(&parse_scenario(text).unwrap(), &SimConfig::new(GroupParams::<u64>::demo(), 1)).unwrap_err();
        assert!(matches!(&err, Error::Event { line: 2, .. }));
        assert_eq!(err.root(), &Error::UnknownMember("Q".into()));
        let text = "{\"kind\":\"join\",\"member\":\"A\",\"shares\":[{\"layer\":\"subgroup\",\"value\":\"99999999999999999999999\"}]}";
        let err = run_scenario(&parse_scenario(text).unwrap(), &SimConfig::new(GroupParams::<u64>::demo(), 1)).unwrap_err();
        assert!(matches!(err, Error::Scenario { line: 1, .. }));
    }
}
