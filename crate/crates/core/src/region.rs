//! Two-level topology: subgroups keyed with GDH, gateways keyed with TGDH.
//!
//! Each subgroup elects one gateway (highest total resource score); the
//! gateways are the leaves of the outer key tree. Traffic inside a subgroup
//! is sealed under its KR; traffic between subgroups travels KR, KG, KR
//! through the two gateways.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arith::Residue;
use crate::cost::{CostLedger, CostMeter, Message};
use crate::crypto::{derive_symmetric_key, open, seal, Ciphertext, GroupParams, KeyValue};
use crate::error::{Error, Result};
use crate::gdh::SubgroupState;
use crate::shares::ShareSource;
use crate::tgdh::OuterGroup;
use crate::MemberId;

pub const DEFAULT_MAX_SUBGROUP: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubgroupId(pub u32);

impl fmt::Display for SubgroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

/// Resource scores used for gateway election.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub id: MemberId,
    #[serde(default)]
    pub processing: f64,
    #[serde(default)]
    pub memory: f64,
    #[serde(default)]
    pub battery: f64,
}

impl NodeProfile {
    pub fn new(id: impl Into<MemberId>, processing: f64, memory: f64, battery: f64) -> Result<Self> {
        let p = Self { id: id.into(), processing, memory, battery };
        p.validate()?;
        Ok(p)
    }

    /// All scores zero.
    pub fn plain(id: impl Into<MemberId>) -> Self {
        Self { id: id.into(), processing: 0.0, memory: 0.0, battery: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [self.processing, self.memory, self.battery] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidParams(format!("score {s} for {} must be finite and non-negative", self.id)));
            }
        }
        Ok(())
    }

    pub fn score(&self) -> f64 {
        self.processing + self.memory + self.battery
    }
}

/// Highest score sum wins; ties go to the smallest id. Members without a
/// profile score zero.
pub fn select_gateway<'a>(
    members: impl IntoIterator<Item = &'a MemberId>,
    profiles: &BTreeMap<MemberId, NodeProfile>,
) -> Option<MemberId> {
    let score = |m: &MemberId| profiles.get(m).map_or(0.0, NodeProfile::score);
    members
        .into_iter()
        .min_by(|a, b| score(b).total_cmp(&score(a)).then_with(|| a.cmp(b)))
        .cloned()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Member,
    SubgroupController,
    Gateway,
    OuterController,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Join,
    Leave,
    ControllerLeave,
    GatewayLeave,
    OuterControllerLeave,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Join => "join",
            EventKind::Leave => "leave",
            EventKind::ControllerLeave => "controller_leave",
            EventKind::GatewayLeave => "gateway_leave",
            EventKind::OuterControllerLeave => "outer_controller_leave",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a joining member goes. A full target makes the joiner found a new
/// subgroup instead.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JoinTarget {
    /// The smallest subgroup, ties to the lowest id.
    #[default]
    Auto,
    Existing(SubgroupId),
    New,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Join { profile: NodeProfile, target: JoinTarget },
    Leave { member: MemberId },
    ControllerLeave { member: MemberId },
    GatewayLeave { member: MemberId },
    OuterControllerLeave { member: MemberId },
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::Join { .. } => EventKind::Join,
            Event::Leave { .. } => EventKind::Leave,
            Event::ControllerLeave { .. } => EventKind::ControllerLeave,
            Event::GatewayLeave { .. } => EventKind::GatewayLeave,
            Event::OuterControllerLeave { .. } => EventKind::OuterControllerLeave,
        }
    }

    pub fn member(&self) -> &MemberId {
        match self {
            Event::Join { profile, .. } => &profile.id,
            Event::Leave { member }
            | Event::ControllerLeave { member }
            | Event::GatewayLeave { member }
            | Event::OuterControllerLeave { member } => member,
        }
    }
}

/// Keys a membership event rekeys.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RekeyPlan {
    pub subgroup_keys: BTreeSet<SubgroupId>,
    pub outer_key: bool,
    pub founded: Option<SubgroupId>,
    pub dissolved: Option<SubgroupId>,
}

impl RekeyPlan {
    /// Number of distinct keys rekeyed.
    pub fn rekey_count(&self) -> usize {
        self.subgroup_keys.len() + usize::from(self.outer_key)
    }
}

/// Current KR of every subgroup and the KG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySnapshot<T> {
    pub subgroup_keys: BTreeMap<SubgroupId, Option<KeyValue<T>>>,
    pub outer_key: Option<KeyValue<T>>,
}

#[derive(Clone, Debug)]
pub struct EventOutcome<T> {
    pub kind: EventKind,
    pub plan: RekeyPlan,
    pub ledger: CostLedger,
    pub messages: Vec<Message<T>>,
}

#[derive(Clone, Debug)]
pub struct Subgroup<T> {
    pub state: SubgroupState<T>,
    pub gateway: MemberId,
}

/// Stored secrets and public values for one member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MemberCensus {
    pub keys: usize,
    pub public_values: usize,
}

#[derive(Clone, Debug)]
pub struct RegionTopology<T> {
    params: GroupParams<T>,
    max_subgroup: usize,
    subgroups: BTreeMap<SubgroupId, Subgroup<T>>,
    tree: Option<OuterGroup<T>>,
    membership: BTreeMap<MemberId, SubgroupId>,
    profiles: BTreeMap<MemberId, NodeProfile>,
    shares: ShareSource<T>,
    next_subgroup: u32,
}

impl<T: Residue> RegionTopology<T> {
    pub fn empty(params: GroupParams<T>, max_subgroup: usize, shares: ShareSource<T>) -> Result<Self> {
        if max_subgroup < 2 {
            return Err(Error::InvalidParams(format!("max subgroup size {max_subgroup} is below 2")));
        }
        Ok(Self {
            params,
            max_subgroup,
            subgroups: BTreeMap::new(),
            tree: None,
            membership: BTreeMap::new(),
            profiles: BTreeMap::new(),
            shares,
            next_subgroup: 0,
        })
    }

    /// Splits `members` in order into `ceil(N / max)` subgroups whose sizes
    /// differ by at most one, keys each, elects gateways and keys the tree.
    pub fn form_subgroups(
        members: Vec<NodeProfile>,
        max_subgroup: usize,
        params: GroupParams<T>,
        shares: ShareSource<T>,
    ) -> Result<(Self, CostLedger)> {
        if members.is_empty() {
            return Err(Error::EmptyMemberList);
        }
        let mut topo = Self::empty(params, max_subgroup, shares)?;
        let mut seen = BTreeSet::new();
        for p in &members {
            p.validate()?;
            if !seen.insert(p.id.clone()) {
                return Err(Error::DuplicateMember(p.id.clone()));
            }
        }
        let n = members.len();
        let s = n.div_ceil(max_subgroup);
        let mut meter = CostMeter::new();
        let mut rest = members.into_iter();
        for i in 0..s {
            let size = n / s + usize::from(i < n % s);
            let chunk: Vec<NodeProfile> = rest.by_ref().take(size).collect();
            let sid = topo.alloc_subgroup();
            let mut state = SubgroupState::create(chunk[0].id.clone(), topo.params.clone(), &mut topo.shares, &mut meter);
            for p in &chunk[1..] {
                state.member_join(p.id.clone(), &mut topo.shares, &mut meter)?;
            }
            for p in chunk {
                topo.membership.insert(p.id.clone(), sid);
                topo.profiles.insert(p.id.clone(), p);
            }
            let gateway = select_gateway(state.members(), &topo.profiles).expect("non-empty chunk");
            topo.subgroups.insert(sid, Subgroup { state, gateway: gateway.clone() });
            topo.tree_add(gateway, &mut meter)?;
        }
        topo.check_invariants()?;
        Ok((topo, meter.ledger()))
    }

    pub fn params(&self) -> &GroupParams<T> {
        &self.params
    }

    pub fn max_subgroup(&self) -> usize {
        self.max_subgroup
    }

    pub fn shares_mut(&mut self) -> &mut ShareSource<T> {
        &mut self.shares
    }

    pub fn subgroups(&self) -> &BTreeMap<SubgroupId, Subgroup<T>> {
        &self.subgroups
    }

    pub fn subgroup(&self, id: SubgroupId) -> Option<&Subgroup<T>> {
        self.subgroups.get(&id)
    }

    pub fn tree(&self) -> Option<&OuterGroup<T>> {
        self.tree.as_ref()
    }

    pub fn member_count(&self) -> usize {
        self.membership.len()
    }

    pub fn members(&self) -> impl Iterator<Item = &MemberId> {
        self.membership.keys()
    }

    pub fn subgroup_of(&self, member: &MemberId) -> Option<SubgroupId> {
        self.membership.get(member).copied()
    }

    pub fn outer_key(&self) -> Option<&KeyValue<T>> {
        self.tree.as_ref().and_then(OuterGroup::key)
    }

    pub fn subgroup_key(&self, id: SubgroupId) -> Option<&KeyValue<T>> {
        self.subgroups.get(&id).and_then(|s| s.state.key())
    }

    pub fn keys(&self) -> KeySnapshot<T> {
        KeySnapshot {
            subgroup_keys: self.subgroups.iter().map(|(id, s)| (*id, s.state.key().cloned())).collect(),
            outer_key: self.outer_key().cloned(),
        }
    }

    pub fn is_gateway(&self, member: &MemberId) -> bool {
        self.subgroup_of(member).is_some_and(|s| &self.subgroups[&s].gateway == member)
    }

    pub fn outer_controller(&self) -> Option<&MemberId> {
        self.tree.as_ref().map(OuterGroup::controller)
    }

    /// Most senior role; a gateway may also be its subgroup's controller.
    pub fn role(&self, member: &MemberId) -> Result<Role> {
        let sid = self.subgroup_of(member).ok_or_else(|| Error::UnknownMember(member.clone()))?;
        let sg = &self.subgroups[&sid];
        Ok(if self.outer_controller() == Some(member) {
            Role::OuterController
        } else if &sg.gateway == member {
            Role::Gateway
        } else if sg.state.controller() == member {
            Role::SubgroupController
        } else {
            Role::Member
        })
    }

    /// The departure event appropriate to `member`'s current role.
    pub fn classify_departure(&self, member: &MemberId) -> Result<EventKind> {
        Ok(match self.role(member)? {
            Role::Member => EventKind::Leave,
            Role::SubgroupController => EventKind::ControllerLeave,
            Role::Gateway => EventKind::GatewayLeave,
            Role::OuterController => EventKind::OuterControllerLeave,
        })
    }

    pub fn handle_event(&mut self, event: &Event) -> Result<EventOutcome<T>> {
        let kind = event.kind();
        let mut meter = CostMeter::new();
        let plan = match event {
            Event::Join { profile, target } => self.join(profile, *target, &mut meter)?,
            _ => {
                let member = event.member();
                let actual = self.classify_departure(member)?;
                if actual != kind {
                    return Err(Error::RoleMismatch { member: member.clone(), event: kind.name() });
                }
                self.depart(member, &mut meter)?
            }
        };
        self.check_invariants()?;
        let (ledger, messages) = meter.finish();
        Ok(EventOutcome { kind, plan, ledger, messages })
    }

    fn alloc_subgroup(&mut self) -> SubgroupId {
        let id = SubgroupId(self.next_subgroup);
        self.next_subgroup += 1;
        id
    }

    fn tree_add(&mut self, gateway: MemberId, meter: &mut CostMeter<T>) -> Result<()> {
        match &mut self.tree {
            None => self.tree = Some(OuterGroup::create(gateway, self.params.clone(), &mut self.shares, meter)?),
            Some(t) => t.tree_join(gateway, &mut self.shares, meter)?,
        }
        Ok(())
    }

    fn join(&mut self, profile: &NodeProfile, target: JoinTarget, meter: &mut CostMeter<T>) -> Result<RekeyPlan> {
        profile.validate()?;
        let id = profile.id.clone();
        if self.membership.contains_key(&id) {
            return Err(Error::DuplicateMember(id));
        }
        let target = match target {
            JoinTarget::Existing(t) if self.subgroups.contains_key(&t) => Some(t),
            JoinTarget::Existing(t) => return Err(Error::Unknown { what: "subgroup", name: t.to_string() }),
            JoinTarget::Auto => self.subgroups.iter().min_by_key(|(sid, s)| (s.state.len(), **sid)).map(|(sid, _)| *sid),
            JoinTarget::New => None,
        };
        self.profiles.insert(id.clone(), profile.clone());
        let mut plan = RekeyPlan::default();
        match target.filter(|t| self.subgroups[t].state.len() < self.max_subgroup) {
            Some(sid) => {
                self.subgroups.get_mut(&sid).expect("checked").state.member_join(id.clone(), &mut self.shares, meter)?;
                self.membership.insert(id, sid);
                plan.subgroup_keys.insert(sid);
            }
            None => {
                let sid = self.alloc_subgroup();
                let state = SubgroupState::create(id.clone(), self.params.clone(), &mut self.shares, meter);
                self.subgroups.insert(sid, Subgroup { state, gateway: id.clone() });
                self.membership.insert(id.clone(), sid);
                plan.outer_key = self.tree.is_some();
                plan.founded = Some(sid);
                self.tree_add(id, meter)?;
            }
        }
        Ok(plan)
    }

    fn depart(&mut self, member: &MemberId, meter: &mut CostMeter<T>) -> Result<RekeyPlan> {
        let role = self.role(member)?;
        let sid = self.membership[member];
        let mut plan = RekeyPlan::default();

        if role == Role::OuterController {
            let tree = self.tree.as_mut().expect("outer controller implies a tree");
            if tree.len() > 1 {
                tree.tree_controller_leave(&mut self.shares, meter)?;
                plan.outer_key = true;
            } else {
                self.tree = None;
            }
        } else if role == Role::Gateway {
            self.tree.as_mut().expect("gateway implies a tree").tree_leave(member, &mut self.shares, meter)?;
            plan.outer_key = true;
        }

        let sg = self.subgroups.get_mut(&sid).expect("member's subgroup exists");
        if sg.state.len() == 1 {
            self.subgroups.remove(&sid);
            plan.dissolved = Some(sid);
        } else {
            if sg.state.controller() == member {
                sg.state.controller_leave(&mut self.shares, meter)?;
            } else {
                sg.state.member_leave(member, &mut self.shares, meter)?;
            }
            plan.subgroup_keys.insert(sid);
            if matches!(role, Role::Gateway | Role::OuterController) {
                let successor = select_gateway(sg.state.members(), &self.profiles).expect("survivors");
                sg.gateway = successor.clone();
                plan.outer_key = true;
                self.tree_add(successor, meter)?;
            }
        }
        self.membership.remove(member);
        self.profiles.remove(member);
        Ok(plan)
    }

    /// Partition, gateway/leaf correspondence, size bound and key agreement.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::InvariantViolation(what.to_owned()));
        let mut counted = 0;
        for (sid, sg) in &self.subgroups {
            counted += sg.state.len();
            if sg.state.len() > self.max_subgroup {
                return fail(&format!("subgroup {sid} exceeds the size bound"));
            }
            if !sg.state.contains(&sg.gateway) {
                return fail(&format!("gateway of {sid} is not a member"));
            }
            for m in sg.state.members() {
                if self.membership.get(m) != Some(sid) {
                    return fail(&format!("member {m} is not recorded in {sid}"));
                }
            }
            if sg.state.views().any(|v| v.key() != sg.state.key()) {
                return fail(&format!("subgroup key agreement in {sid}"));
            }
        }
        if counted != self.membership.len() {
            return fail("partition: membership index disagrees with subgroups");
        }
        let gateways: BTreeSet<&MemberId> = self.subgroups.values().map(|s| &s.gateway).collect();
        match &self.tree {
            None if gateways.is_empty() => {}
            None => return fail("gateways without an outer tree"),
            Some(t) => {
                let leaves: BTreeSet<&MemberId> = t.tree().members().collect();
                if leaves != gateways {
                    return fail("tree leaves differ from the gateways");
                }
                if t.views().any(|v| v.outer_key().as_ref() != t.key()) {
                    return fail("outer key agreement");
                }
                t.check_path_consistency()?;
            }
        }
        Ok(())
    }

    /// Keys and public values `member` stores.
    pub fn census(&self, member: &MemberId) -> Result<MemberCensus> {
        let sid = self.subgroup_of(member).ok_or_else(|| Error::UnknownMember(member.clone()))?;
        let c = self.subgroups[&sid].state.view(member).expect("member view").census();
        let mut out = MemberCensus { keys: c.secrets, public_values: c.public_values };
        if self.is_gateway(member) {
            let (secrets, blinded) = self.tree.as_ref().and_then(|t| t.view(member)).expect("gateway leaf").census();
            out.keys += secrets;
            out.public_values += blinded;
        }
        Ok(out)
    }

    /// Sends `plaintext` from `source` to `destination` through the
    /// KR / KG / KR pipeline, opening and resealing at each gateway. A stage
    /// whose receiver already holds the plaintext (a gateway at either end)
    /// is skipped.
    pub fn route_message(&mut self, source: &MemberId, destination: &MemberId, plaintext: &[u8]) -> Result<RouteTrace> {
        let src = self.subgroup_of(source).ok_or_else(|| Error::UnknownMember(source.clone()))?;
        let dst = self.subgroup_of(destination).ok_or_else(|| Error::UnknownMember(destination.clone()))?;
        let stages = if src == dst {
            vec![(HopKey::Subgroup(src), destination.clone())]
        } else {
            vec![
                (HopKey::Subgroup(src), self.subgroups[&src].gateway.clone()),
                (HopKey::Outer, self.subgroups[&dst].gateway.clone()),
                (HopKey::Subgroup(dst), destination.clone()),
            ]
        };
        let mut hops = Vec::new();
        let mut holder = source.clone();
        let mut text = plaintext.to_vec();
        let keys = stages.iter().map(|(k, _)| *k).collect();
        for (key, next) in stages {
            if next == holder {
                continue;
            }
            let env = self.seal_hop(key, source, destination, &text)?;
            text = self.open_as(&next, &env)?;
            hops.push(Hop { key, sealed_by: holder, opened_by: next.clone() });
            holder = next;
        }
        Ok(RouteTrace { stages: keys, hops, delivered: text })
    }

    /// The key value a hop key names, as currently agreed.
    pub fn hop_key_value(&self, key: HopKey) -> Result<&KeyValue<T>> {
        match key {
            HopKey::Subgroup(sid) => self.subgroup_key(sid),
            HopKey::Outer => self.outer_key(),
        }
        .ok_or(Error::NoKey)
    }

    fn hop_epoch(&self, key: HopKey) -> u64 {
        match key {
            HopKey::Subgroup(sid) => self.subgroups.get(&sid).map_or(0, |s| s.state.epoch()),
            HopKey::Outer => self.tree.as_ref().map_or(0, OuterGroup::epoch),
        }
    }

    fn seal_hop(&mut self, key: HopKey, source: &MemberId, destination: &MemberId, plaintext: &[u8]) -> Result<Envelope> {
        let k = derive_symmetric_key(self.hop_key_value(key)?);
        let ciphertext = seal(&k, plaintext, self.shares.rng());
        Ok(Envelope { source: source.clone(), destination: destination.clone(), hop_key: key, epoch: self.hop_epoch(key), ciphertext })
    }

    /// Opens an envelope with the key `holder` itself holds.
    pub fn open_as(&self, holder: &MemberId, env: &Envelope) -> Result<Vec<u8>> {
        let sid = self.subgroup_of(holder).ok_or_else(|| Error::UnknownMember(holder.clone()))?;
        let (key, epoch) = match env.hop_key {
            HopKey::Subgroup(_) => {
                let v = self.subgroups[&sid].state.view(holder).expect("member view");
                (v.key().cloned(), v.epoch())
            }
            HopKey::Outer => {
                let v = self.tree.as_ref().and_then(|t| t.view(holder)).ok_or_else(|| Error::RoleMismatch { member: holder.clone(), event: "open under the outer key" })?;
                (v.outer_key(), v.epoch())
            }
        };
        if epoch != env.epoch {
            return Err(Error::StaleEpoch { expected: env.epoch, got: epoch });
        }
        open(&derive_symmetric_key(&key.ok_or(Error::NoKey)?), &env.ciphertext)
    }

    /// Seals `plaintext` under the current key named by `key`.
    pub fn seal_under(&mut self, key: HopKey, source: &MemberId, destination: &MemberId, plaintext: &[u8]) -> Result<Envelope> {
        self.seal_hop(key, source, destination, plaintext)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HopKey {
    Subgroup(SubgroupId),
    Outer,
}

impl fmt::Display for HopKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HopKey::Subgroup(s) => write!(f, "KR[{s}]"),
            HopKey::Outer => f.write_str("KG"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub source: MemberId,
    pub destination: MemberId,
    pub hop_key: HopKey,
    pub epoch: u64,
    pub ciphertext: Ciphertext,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Hop {
    pub key: HopKey,
    pub sealed_by: MemberId,
    pub opened_by: MemberId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteTrace {
    /// The pipeline's key sequence: `[KR]` within a subgroup, `[KR, KG, KR]`
    /// across subgroups.
    pub stages: Vec<HopKey>,
    /// Stages actually sealed and opened.
    pub hops: Vec<Hop>,
    pub delivered: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use super::*;

    type Topo = RegionTopology<u64>;

    fn id(s: &str) -> MemberId {
        MemberId::from(s)
    }

    fn profiles(n: usize) -> Vec<NodeProfile> {
        (0..n).map(|i| NodeProfile::new(format!("m{i:03}"), (i % 7) as f64, (i % 5) as f64, 1.0).unwrap()).collect()
    }

    fn topo(n: usize, max: usize) -> Topo {
        Topo::form_subgroups(profiles(n), max, GroupParams::safe_prime_62(), ShareSource::seeded(5)).unwrap().0
    }

    fn sizes(t: &Topo) -> Vec<usize> {
        t.subgroups().values().map(|s| s.state.len()).collect()
    }

    #[test]
    fn gateway_election() {
        let by = |v: Vec<NodeProfile>| v.into_iter().map(|p| (p.id.clone(), p)).collect::<BTreeMap<_, _>>();
        let ids = [id("A"), id("B"), id("C")];
        let p = by(vec![NodeProfile::new("A", 1.0, 1.0, 1.0).unwrap(), NodeProfile::new("B", 9.0, 9.0, 9.0).unwrap()]);
        assert_eq!(select_gateway(&ids[..2], &p), Some(id("B")));
        assert_eq!(select_gateway(&ids, &BTreeMap::new()), Some(id("A")));
        let p = by(vec![
            NodeProfile::new("A", 5.0, 0.0, 0.0).unwrap(),
            NodeProfile::new("B", 0.0, 4.0, 0.0).unwrap(),
            NodeProfile::new("C", 0.0, 0.0, 4.0).unwrap(),
        ]);
        assert_eq!(select_gateway(&ids, &p), Some(id("A")));
        assert!(NodeProfile::new("X", -1.0, 0.0, 0.0).is_err());
        assert!(NodeProfile::new("X", f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn formation_balances_sizes() {
        let t = topo(250, 100);
        assert_eq!(sizes(&t), vec![84, 83, 83]);
        assert_eq!(t.tree().unwrap().len(), 3);
        assert!(t.outer_key().is_some());

        let t = topo(16, 4);
        assert_eq!(sizes(&t), vec![4, 4, 4, 4]);
        assert_eq!(t.tree().unwrap().len(), 4);

        let t = topo(1, 100);
        assert_eq!(sizes(&t), vec![1]);
        assert_eq!((t.outer_key(), t.subgroup_key(SubgroupId(0))), (None, None));

        let err = Topo::form_subgroups(vec![], 4, GroupParams::safe_prime_62(), ShareSource::seeded(0));
        assert!(matches!(err, Err(Error::EmptyMemberList)));
        let err = Topo::form_subgroups(profiles(3), 1, GroupParams::safe_prime_62(), ShareSource::seeded(0));
        assert!(matches!(err, Err(Error::InvalidParams(_))));
    }

    fn first_with_role(t: &Topo, role: Role) -> MemberId {
        t.members().find(|m| t.role(m).unwrap() == role).unwrap().clone()
    }

    #[test]
    fn rekey_plans_by_event() {
        let mut t = topo(16, 4);
        let before = t.keys();

        let m = first_with_role(&t, Role::Member);
        let sid = t.subgroup_of(&m).unwrap();
        let out = t.handle_event(&Event::Leave { member: m }).unwrap();
        assert_eq!((out.plan.subgroup_keys.iter().copied().collect::<Vec<_>>(), out.plan.outer_key), (vec![sid], false));
        assert_eq!(t.outer_key(), before.outer_key.as_ref());
        assert_ne!(t.subgroup_key(sid), before.subgroup_keys[&sid].as_ref());

        let g = first_with_role(&t, Role::Gateway);
        let sid = t.subgroup_of(&g).unwrap();
        let before = t.keys();
        let out = t.handle_event(&Event::GatewayLeave { member: g.clone() }).unwrap();
        assert_eq!(out.plan.rekey_count(), 2);
        assert!(out.plan.outer_key && out.plan.subgroup_keys.contains(&sid));
        assert_ne!(t.outer_key(), before.outer_key.as_ref());
        let new_gw = &t.subgroup(sid).unwrap().gateway;
        assert_ne!(new_gw, &g);
        assert_eq!(t.outer_controller(), Some(new_gw));

        let oc = t.outer_controller().unwrap().clone();
        let sid = t.subgroup_of(&oc).unwrap();
        let before = t.keys();
        let out = t.handle_event(&Event::OuterControllerLeave { member: oc }).unwrap();
        assert!(out.plan.outer_key);
        assert_eq!(out.plan.subgroup_keys.iter().copied().collect::<Vec<_>>(), vec![sid]);
        for (other, k) in &before.subgroup_keys {
            if *other != sid {
                assert_eq!(t.subgroup_key(*other), k.as_ref());
            }
        }
    }

    #[test]
    fn role_mismatch_is_rejected() {
        let mut t = topo(16, 4);
        let g = first_with_role(&t, Role::Gateway);
        assert!(matches!(t.handle_event(&Event::Leave { member: g.clone() }), Err(Error::RoleMismatch { .. })));
        let m = first_with_role(&t, Role::Member);
        assert!(matches!(t.handle_event(&Event::GatewayLeave { member: m }), Err(Error::RoleMismatch { .. })));
        assert!(matches!(t.handle_event(&Event::Leave { member: id("ghost") }), Err(Error::UnknownMember(_))));
        assert_eq!(t.classify_departure(&g).unwrap(), EventKind::GatewayLeave);
    }

    #[test]
    fn overflow_founds_a_new_subgroup() {
        let mut t = topo(4, 4);
        let kg = t.outer_key().cloned();
        let out = t.handle_event(&Event::Join { profile: NodeProfile::plain("new"), target: JoinTarget::Existing(SubgroupId(0)) }).unwrap();
        assert_eq!(out.plan.founded, Some(SubgroupId(1)));
        assert!(out.plan.subgroup_keys.is_empty() && out.plan.outer_key);
        assert_eq!(t.tree().unwrap().len(), 2);
        assert_ne!(t.outer_key().cloned(), kg);
        let out = t.handle_event(&Event::Join { profile: NodeProfile::plain("next"), target: JoinTarget::Auto }).unwrap();
        assert_eq!(out.plan.subgroup_keys.iter().copied().collect::<Vec<_>>(), vec![SubgroupId(1)]);
    }

    #[test]
    fn last_member_dissolves_its_subgroup() {
        let mut t = topo(4, 4);
        t.handle_event(&Event::Join { profile: NodeProfile::plain("solo"), target: JoinTarget::Existing(SubgroupId(0)) }).unwrap();
        let out = t.handle_event(&Event::OuterControllerLeave { member: id("solo") }).unwrap();
        assert_eq!(out.plan.dissolved, Some(SubgroupId(1)));
        assert_eq!(t.subgroups().len(), 1);
        assert_eq!(t.tree().unwrap().len(), 1);
    }

    #[test]
    fn routing_hops() {
        let mut t = topo(16, 4);
        let a = id("m000");
        let b = id("m001");
        let far = id("m015");
        let r = t.route_message(&a, &b, b"attack at dawn").unwrap();
        assert_eq!(r.delivered, b"attack at dawn");
        assert_eq!(r.hops.iter().map(|h| h.key).collect::<Vec<_>>(), vec![HopKey::Subgroup(SubgroupId(0))]);
        let r = t.route_message(&a, &far, b"hello").unwrap();
        assert_eq!(r.delivered, b"hello");
        assert_eq!(
            r.hops.iter().map(|h| h.key).collect::<Vec<_>>(),
            vec![HopKey::Subgroup(SubgroupId(0)), HopKey::Outer, HopKey::Subgroup(SubgroupId(3))]
        );
        assert!(t.route_message(&a, &id("ghost"), b"x").is_err());
    }

    #[test]
    fn lone_gateway_sends_under_the_outer_key() {
        let mut t = Topo::empty(GroupParams::safe_prime_62(), 4, ShareSource::seeded(1)).unwrap();
        for m in ["a", "b"] {
            t.handle_event(&Event::Join { profile: NodeProfile::plain(m), target: JoinTarget::New }).unwrap();
        }
        t.handle_event(&Event::Join { profile: NodeProfile::plain("c"), target: JoinTarget::Existing(SubgroupId(1)) }).unwrap();
        let r = t.route_message(&id("a"), &id("c"), b"x").unwrap();
        let keys: Vec<HopKey> = r.hops.iter().map(|h| h.key).collect();
        assert_eq!(keys, vec![HopKey::Outer, HopKey::Subgroup(SubgroupId(1))]);
        assert_eq!(r.stages, vec![HopKey::Subgroup(SubgroupId(0)), HopKey::Outer, HopKey::Subgroup(SubgroupId(1))]);
        assert_eq!((r.hops[0].sealed_by.as_str(), r.hops[0].opened_by.as_str()), ("a", "b"));
        let r = t.route_message(&id("c"), &id("a"), b"y").unwrap();
        assert_eq!(r.hops.len(), 2);
        assert_eq!(r.delivered, b"y");
    }

    #[test]
    fn outsiders_cannot_open() {
        let mut t = topo(16, 4);
        let env = t.seal_under(HopKey::Subgroup(SubgroupId(0)), &id("m000"), &id("m001"), b"secret").unwrap();
        let wrong = derive_symmetric_key(t.subgroup_key(SubgroupId(1)).unwrap());
        assert!(matches!(open(&wrong, &env.ciphertext), Err(Error::AuthenticationFailed)));
        let env = t.seal_under(HopKey::Outer, &id("m000"), &id("m015"), b"secret").unwrap();
        assert!(matches!(open(&wrong, &env.ciphertext), Err(Error::AuthenticationFailed)));
        let plain = first_with_role(&t, Role::Member);
        assert!(matches!(t.open_as(&plain, &env), Err(Error::RoleMismatch { .. })));
    }

    #[test]
    fn census_by_role() {
        let t = topo(40, 10);
        for m in t.members() {
            let sid = t.subgroup_of(m).unwrap();
            let x = t.subgroup(sid).unwrap().state.len();
            let c = t.census(m).unwrap();
            if t.is_gateway(m) {
                let tree = t.tree().unwrap();
                let l = tree.tree().depth(tree.tree().leaf_of(m).unwrap());
                let y = tree.len();
                assert_eq!((c.keys, c.public_values), (2 + l + 1, x + 2 * y - 1));
            } else {
                assert_eq!((c.keys, c.public_values), (2, x + 1));
            }
        }
    }
}
