//! Message log and cost measurement for one membership event.
//!
//! Every exponentiation costs one time unit on the party performing it and a
//! party works sequentially. A message carries its sender's clock; receiving
//! it advances the receiver to at least that time. The serial exponentiation
//! count of an event is the latest time at which any party obtained its new
//! key. Rounds are causal depth: a message is one round deeper than the
//! deepest message its sender had received.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::gdh::{Handover, RekeyBroadcast};
use crate::tgdh::TreeSnapshot;
use crate::{KeyValue, MemberId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    Unicast(MemberId),
    Broadcast(Vec<MemberId>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(bound(serialize = "T: std::fmt::Display"))]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Payload<T> {
    /// Outgoing subgroup controller to the joiner.
    GdhHandover(Handover<T>),
    GdhRekey(RekeyBroadcast<T>),
    /// Outgoing outer controller to a joining gateway: the blinded tree.
    TreeHandover(TreeSnapshot<T>),
    TreeRekey(TreeSnapshot<T>),
    /// A joining member announcing its blinded share.
    JoinRequest { member: MemberId, blinded: KeyValue<T> },
}

impl<T> Payload<T> {
    /// Number of group elements carried.
    pub fn key_units(&self) -> u64 {
        match self {
            Payload::GdhHandover(h) => h.entries.len() as u64 + 1,
            Payload::GdhRekey(b) => b.entries.len() as u64,
            Payload::TreeHandover(t) | Payload::TreeRekey(t) => t.key_units(),
            Payload::JoinRequest { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(bound(serialize = "T: std::fmt::Display"))]
pub struct Message<T> {
    pub round: u32,
    pub sent_at: u64,
    pub from: MemberId,
    pub delivery: Delivery,
    pub payload: Payload<T>,
}

/// Measured cost of one event.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CostLedger {
    pub rounds: u64,
    pub unicast_units: u64,
    pub broadcast_units: u64,
    pub serial_exps: u64,
    pub unicast_messages: u64,
    pub broadcast_messages: u64,
    pub total_exps: u64,
}

#[derive(Clone, Debug)]
pub struct CostMeter<T> {
    clock: BTreeMap<MemberId, u64>,
    depth: BTreeMap<MemberId, u32>,
    completion: u64,
    ledger: CostLedger,
    messages: Vec<Message<T>>,
}

impl<T> Default for CostMeter<T> {
    fn default() -> Self {
        Self {
            clock: BTreeMap::new(),
            depth: BTreeMap::new(),
            completion: 0,
            ledger: CostLedger::default(),
            messages: Vec::new(),
        }
    }
}

impl<T: Clone> CostMeter<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn exp(&mut self, party: &MemberId) {
        *self.clock.entry(party.clone()).or_default() += 1;
        self.ledger.total_exps += 1;
    }

    pub fn exps(&mut self, party: &MemberId, n: u64) {
        for _ in 0..n {
            self.exp(party);
        }
    }

    pub fn clock(&self, party: &MemberId) -> u64 {
        self.clock.get(party).copied().unwrap_or(0)
    }

    /// Records that `party` now holds its new key.
    pub fn key_ready(&mut self, party: &MemberId) {
        self.completion = self.completion.max(self.clock(party));
    }

    pub fn send(&mut self, from: &MemberId, delivery: Delivery, payload: Payload<T>) -> Message<T> {
        let sent_at = self.clock(from);
        let round = self.depth.get(from).copied().unwrap_or(0) + 1;
        let units = payload.key_units();
        let receivers: Vec<MemberId> = match &delivery {
            Delivery::Unicast(to) => {
                self.ledger.unicast_units += units;
                self.ledger.unicast_messages += 1;
                vec![to.clone()]
            }
            Delivery::Broadcast(to) => {
                self.ledger.broadcast_units += units;
                self.ledger.broadcast_messages += 1;
                to.clone()
            }
        };
        for r in receivers {
            let c = self.clock.entry(r.clone()).or_default();
            *c = (*c).max(sent_at);
            let d = self.depth.entry(r).or_default();
            *d = (*d).max(round);
        }
        self.ledger.rounds = self.ledger.rounds.max(round as u64);
        let msg = Message { round, sent_at, from: from.clone(), delivery, payload };
        self.messages.push(msg.clone());
        msg
    }

    pub fn ledger(&self) -> CostLedger {
        CostLedger { serial_exps: self.completion, ..self.ledger }
    }

    pub fn messages(&self) -> &[Message<T>] {
        &self.messages
    }

    pub fn finish(self) -> (CostLedger, Vec<Message<T>>) {
        (self.ledger(), self.messages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_rounds_and_clocks() {
        let a = MemberId::from("a");
        let b = MemberId::from("b");
        let c = MemberId::from("c");
        let mut m = CostMeter::<u64>::new();
        m.exps(&a, 3);
        let req = Payload::JoinRequest { member: a.clone(), blinded: crate::KeyValue::new(5, &crate::DemoParams::demo()).unwrap() };
        let msg = m.send(&a, Delivery::Unicast(b.clone()), req.clone());
        assert_eq!((msg.round, msg.sent_at), (1, 3));
        m.exp(&b);
        let msg = m.send(&b, Delivery::Broadcast(vec![a.clone(), c.clone()]), req);
        assert_eq!((msg.round, msg.sent_at), (2, 4));
        m.exp(&c);
        m.key_ready(&c);
        let l = m.ledger();
        assert_eq!(l.rounds, 2);
        assert_eq!(l.serial_exps, 5);
        assert_eq!((l.unicast_units, l.broadcast_units), (1, 1));
        assert_eq!(l.total_exps, 5);
    }
}
