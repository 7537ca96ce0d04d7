//! GDH.2 key agreement inside one subgroup.
//!
//! The subgroup key is `g^E` where `E` is the product of the members'
//! current contributions (departed members' old contributions may stay in
//! `E`; they never receive the values needed to use them). The member that
//! joined last is the controller. Each member `i` receives `g^(E / n_i)` and
//! raises it to its own share.
//!
//! Every member keeps a succession cache from the moment it joined: the
//! values `g^(E_j / (n_j n_i))` for the members `i` that preceded it and its
//! cardinal `g^(E_j / n_j)`. A controller never needs anything else, and a
//! predecessor that takes over after a controller leaves can rekey from its
//! cache without the departed controller's contribution.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::arith::Residue;
use crate::cost::{CostMeter, Delivery, Payload};
use crate::crypto::{blind, mod_exp, GroupParams, KeyValue, PrivateShare};
use crate::error::{Error, Result};
use crate::shares::{Layer, ShareSource};
use crate::MemberId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(bound(serialize = "T: std::fmt::Display"))]
pub struct Tagged<T> {
    pub member: MemberId,
    pub value: KeyValue<T>,
}

impl<T> Tagged<T> {
    pub fn new(member: MemberId, value: KeyValue<T>) -> Self {
        Self { member, value }
    }
}

/// Controller broadcast: one value per member, the controller's own entry
/// being its cardinal value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(bound(serialize = "T: std::fmt::Display"))]
pub struct RekeyBroadcast<T> {
    pub epoch: u64,
    pub sender: MemberId,
    pub entries: Vec<Tagged<T>>,
}

impl<T> RekeyBroadcast<T> {
    pub fn entry_for(&self, member: &MemberId) -> Option<&KeyValue<T>> {
        self.entries.iter().find(|e| &e.member == member).map(|e| &e.value)
    }
}

/// Outgoing controller to the joiner: one value per existing member plus
/// the cardinal `g^E` of the refreshed exponent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(bound(serialize = "T: std::fmt::Display"))]
pub struct Handover<T> {
    pub epoch: u64,
    pub entries: Vec<Tagged<T>>,
    pub cardinal: KeyValue<T>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuccessionCache<T> {
    pub partials: BTreeMap<MemberId, KeyValue<T>>,
    pub cardinal: KeyValue<T>,
}

/// Storage counts for one member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Census {
    pub secrets: usize,
    pub public_values: usize,
    pub succession_values: usize,
}

/// What a single member holds.
#[derive(Clone, Debug)]
pub struct MemberView<T> {
    pub id: MemberId,
    share: PrivateShare<T>,
    public: KeyValue<T>,
    key: Option<KeyValue<T>>,
    epoch: u64,
    /// Shared with every member that received the same broadcast.
    intermediate: Arc<[Tagged<T>]>,
    cache: SuccessionCache<T>,
}

impl<T: Residue> MemberView<T> {
    pub fn share(&self) -> &PrivateShare<T> {
        &self.share
    }

    pub fn public(&self) -> &KeyValue<T> {
        &self.public
    }

    pub fn key(&self) -> Option<&KeyValue<T>> {
        self.key.as_ref()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn intermediate(&self) -> &[Tagged<T>] {
        &self.intermediate
    }

    pub fn cache(&self) -> &SuccessionCache<T> {
        &self.cache
    }

    pub fn census(&self) -> Census {
        Census {
            secrets: 1 + usize::from(self.key.is_some()),
            public_values: self.intermediate.len() + 1,
            succession_values: self.cache.partials.len() + 1,
        }
    }

    /// Every key this member could derive by raising a value it retains to
    /// its share. Used to check that a departed member is locked out.
    pub fn derivable_keys(&self, params: &GroupParams<T>) -> Vec<KeyValue<T>> {
        let exp = self.share.value();
        self.intermediate
            .iter()
            .map(|e| &e.value)
            .chain(self.cache.partials.values())
            .chain([&self.cache.cardinal, &self.public])
            .map(|v| mod_exp(v, exp, params))
            .chain(self.key.clone())
            .collect()
    }
}

/// Computes a member's subgroup key from the controller's broadcast.
pub fn compute_subgroup_key<T: Residue>(
    view: &MemberView<T>,
    broadcast: &RekeyBroadcast<T>,
    params: &GroupParams<T>,
) -> Result<KeyValue<T>> {
    if broadcast.epoch != view.epoch + 1 {
        return Err(Error::StaleEpoch { expected: view.epoch + 1, got: broadcast.epoch });
    }
    let value = broadcast.entry_for(&view.id).ok_or_else(|| Error::MissingEntry(view.id.clone()))?;
    Ok(mod_exp(value, view.share.value(), params))
}

#[derive(Clone, Debug)]
pub struct SubgroupState<T> {
    params: GroupParams<T>,
    /// Join order; the last entry is the controller.
    members: Vec<MemberId>,
    views: BTreeMap<MemberId, MemberView<T>>,
    intermediate: Arc<[Tagged<T>]>,
    key: Option<KeyValue<T>>,
    epoch: u64,
}

impl<T: Residue> SubgroupState<T> {
    pub fn create(founder: MemberId, params: GroupParams<T>, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Self {
        let share = shares.draw(&founder, Layer::Subgroup, &params);
        let public = blind(&share, &params);
        meter.exp(&founder);
        let view = MemberView {
            id: founder.clone(),
            share,
            public,
            key: None,
            epoch: 0,
            intermediate: Arc::from([]),
            cache: SuccessionCache { partials: BTreeMap::new(), cardinal: params.generator_value() },
        };
        Self {
            params,
            members: vec![founder.clone()],
            views: BTreeMap::from([(founder, view)]),
            intermediate: Arc::from([]),
            key: None,
            epoch: 0,
        }
    }

    pub fn params(&self) -> &GroupParams<T> {
        &self.params
    }

    pub fn members(&self) -> &[MemberId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &MemberId) -> bool {
        self.views.contains_key(id)
    }

    pub fn controller(&self) -> &MemberId {
        self.members.last().expect("subgroup is never empty")
    }

    /// The member that takes over if the controller leaves.
    pub fn predecessor(&self) -> Option<&MemberId> {
        self.members.len().checked_sub(2).map(|i| &self.members[i])
    }

    pub fn key(&self) -> Option<&KeyValue<T>> {
        self.key.as_ref()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn intermediate(&self) -> &[Tagged<T>] {
        &self.intermediate
    }

    pub fn view(&self, id: &MemberId) -> Option<&MemberView<T>> {
        self.views.get(id)
    }

    pub fn views(&self) -> impl Iterator<Item = &MemberView<T>> {
        self.views.values()
    }

    /// The joiner becomes controller.
    pub fn member_join(&mut self, joiner: MemberId, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<()> {
        if self.contains(&joiner) {
            return Err(Error::DuplicateMember(joiner));
        }
        let params = self.params.clone();
        let epoch = self.epoch + 1;
        let old_members = self.members.clone();
        let controller = self.controller().clone();

        // the joiner prepares its contribution before hearing back
        let joiner_share = shares.draw(&joiner, Layer::Subgroup, &params);
        let joiner_public = blind(&joiner_share, &params);
        meter.exp(&joiner);

        let refreshed = shares.draw(&controller, Layer::Subgroup, &params);
        let (mut entries, own_cardinal) = self.values_for(&controller, &refreshed, meter)?;
        entries.push(Tagged::new(controller.clone(), own_cardinal.clone()));
        let cardinal = mod_exp(&own_cardinal, refreshed.value(), &params);
        meter.exp(&controller);
        let handover = Handover { epoch, entries, cardinal: cardinal.clone() };
        meter.send(&controller, Delivery::Unicast(joiner.clone()), Payload::GdhHandover(handover.clone()));
        {
            let view = self.views.get_mut(&controller).expect("controller has a view");
            view.public = blind(&refreshed, &params);
            view.share = refreshed;
            meter.exp(&controller);
        }

        let mut broadcast_entries = Vec::with_capacity(handover.entries.len() + 1);
        for e in &handover.entries {
            broadcast_entries.push(Tagged::new(e.member.clone(), mod_exp(&e.value, joiner_share.value(), &params)));
            meter.exp(&joiner);
        }
        broadcast_entries.push(Tagged::new(joiner.clone(), cardinal.clone()));
        let broadcast = RekeyBroadcast { epoch, sender: joiner.clone(), entries: broadcast_entries };
        meter.send(&joiner, Delivery::Broadcast(old_members.clone()), Payload::GdhRekey(broadcast.clone()));

        let key = mod_exp(&cardinal, joiner_share.value(), &params);
        meter.exp(&joiner);
        meter.key_ready(&joiner);

        let partials = handover.entries.iter().map(|e| (e.member.clone(), e.value.clone())).collect();
        self.views.insert(
            joiner.clone(),
            MemberView {
                id: joiner.clone(),
                share: joiner_share,
                public: joiner_public,
                key: Some(key.clone()),
                epoch: epoch - 1,
                intermediate: Arc::from([]),
                cache: SuccessionCache { partials, cardinal },
            },
        );
        self.members.push(joiner);
        self.deliver(&broadcast, &key, meter)
    }

    /// A non-controller member leaves; the controller refreshes and rekeys.
    pub fn member_leave(&mut self, leaver: &MemberId, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<()> {
        if !self.contains(leaver) {
            return Err(Error::UnknownMember(leaver.clone()));
        }
        if leaver == self.controller() {
            return Err(Error::RoleMismatch { member: leaver.clone(), event: "member leave (use controller leave)" });
        }
        self.remove(leaver);
        let controller = self.controller().clone();
        self.rekey_from(&controller, shares, meter)
    }

    /// The controller leaves; its predecessor in join order takes over.
    pub fn controller_leave(&mut self, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<MemberId> {
        if self.members.len() < 2 {
            return Err(Error::RoleMismatch { member: self.controller().clone(), event: "controller leave from a single-member subgroup" });
        }
        let leaver = self.controller().clone();
        self.remove(&leaver);
        let successor = self.controller().clone();
        self.rekey_from(&successor, shares, meter)?;
        Ok(leaver)
    }

    fn remove(&mut self, leaver: &MemberId) {
        self.members.retain(|m| m != leaver);
        self.views.remove(leaver);
        for v in self.views.values_mut() {
            v.cache.partials.remove(leaver);
        }
    }

    /// `controller` refreshes its share and broadcasts fresh values to the
    /// current membership.
    fn rekey_from(&mut self, controller: &MemberId, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<()> {
        let params = self.params.clone();
        self.epoch += 1;
        if self.members.len() == 1 {
            self.intermediate = Arc::from([]);
            self.key = None;
            let view = self.views.get_mut(controller).expect("sole member has a view");
            view.key = None;
            view.intermediate = Arc::from([]);
            view.epoch = self.epoch;
            return Ok(());
        }

        let refreshed = shares.draw(controller, Layer::Subgroup, &params);
        let (entries, cardinal) = self.values_for(controller, &refreshed, meter)?;
        let mut entries = entries;
        entries.push(Tagged::new(controller.clone(), cardinal.clone()));
        let broadcast = RekeyBroadcast { epoch: self.epoch, sender: controller.clone(), entries };
        let others: Vec<MemberId> = self.members.iter().filter(|m| *m != controller).cloned().collect();
        meter.send(controller, Delivery::Broadcast(others), Payload::GdhRekey(broadcast.clone()));

        let key = mod_exp(&cardinal, refreshed.value(), &params);
        meter.exp(controller);
        meter.key_ready(controller);
        {
            let view = self.views.get_mut(controller).expect("controller has a view");
            view.public = blind(&refreshed, &params);
            view.share = refreshed;
            meter.exp(controller);
            view.epoch = self.epoch - 1;
        }
        self.deliver(&broadcast, &key, meter)
    }

    /// Raises the controller's cached partials to `share` for every current
    /// member but the controller, in join order. Returns those entries and
    /// the controller's cardinal.
    fn values_for(
        &self,
        controller: &MemberId,
        share: &PrivateShare<T>,
        meter: &mut CostMeter<T>,
    ) -> Result<(Vec<Tagged<T>>, KeyValue<T>)> {
        let cache = &self.views[controller].cache;
        let mut entries = Vec::with_capacity(self.members.len());
        for m in self.members.iter().filter(|m| *m != controller) {
            let partial = cache.partials.get(m).ok_or_else(|| {
                Error::InvariantViolation(format!("controller {controller} has no cached value for {m}"))
            })?;
            entries.push(Tagged::new(m.clone(), mod_exp(partial, share.value(), &self.params)));
            meter.exp(controller);
        }
        Ok((entries, cache.cardinal.clone()))
    }

    /// Every member processes the broadcast; `sender_key` is the key the
    /// sender computed for itself.
    fn deliver(&mut self, broadcast: &RekeyBroadcast<T>, sender_key: &KeyValue<T>, meter: &mut CostMeter<T>) -> Result<()> {
        let params = self.params.clone();
        let entries: Arc<[Tagged<T>]> = Arc::from(broadcast.entries.as_slice());
        for view in self.views.values_mut() {
            if view.id == broadcast.sender {
                view.key = Some(sender_key.clone());
            } else {
                let key = compute_subgroup_key(view, broadcast, &params)?;
                meter.exp(&view.id);
                meter.key_ready(&view.id);
                if &key != sender_key {
                    return Err(Error::InvariantViolation(format!(
                        "member {} derived a different subgroup key",
                        view.id
                    )));
                }
                view.key = Some(key);
            }
            view.epoch = broadcast.epoch;
            view.intermediate = Arc::clone(&entries);
        }
        self.epoch = broadcast.epoch;
        self.intermediate = entries;
        self.key = Some(sender_key.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type P = GroupParams<u64>;

    fn id(s: &str) -> MemberId {
        MemberId::from(s)
    }

    fn kv(v: u64) -> KeyValue<u64> {
        KeyValue::new(v, &P::demo()).unwrap()
    }

    fn script(src: &mut ShareSource<u64>, m: &str, values: &[u64]) {
        for &v in values {
            src.script(&id(m), Layer::Subgroup, PrivateShare::from_exponent(v, &P::demo()).unwrap());
        }
    }

    /// A founds; B, C, D join. Refreshes reuse the previous value so the
    /// worked numbers stay reproducible.
    fn abcd(src: &mut ShareSource<u64>) -> SubgroupState<u64> {
        script(src, "A", &[76182, 76182]);
        script(src, "B", &[43310, 43310]);
        script(src, "C", &[30561, 30561]);
        script(src, "D", &[12513]);
        let mut m = CostMeter::new();
        let mut g = SubgroupState::create(id("A"), P::demo(), src, &mut m);
        assert_eq!(g.view(&id("A")).unwrap().public(), &kv(30754));
        for j in ["B", "C", "D"] {
            g.member_join(id(j), src, &mut m).unwrap();
        }
        g
    }

    #[test]
    fn worked_example_joins() {
        let mut src = ShareSource::seeded(0);
        script(&mut src, "A", &[76182, 76182]);
        script(&mut src, "B", &[43310, 43310]);
        script(&mut src, "C", &[30561]);
        let mut m = CostMeter::new();
        let mut g = SubgroupState::create(id("A"), P::demo(), &mut src, &mut m);
        g.member_join(id("B"), &mut src, &mut m).unwrap();
        assert_eq!(g.key(), Some(&kv(16972)));
        assert_eq!(g.view(&id("B")).unwrap().public(), &kv(5984));

        let mut m = CostMeter::new();
        g.member_join(id("C"), &mut src, &mut m).unwrap();
        let Payload::GdhHandover(h) = &m.messages()[0].payload else { panic!("expected handover") };
        let values: Vec<_> = h.entries.iter().map(|e| *e.value.value()).collect();
        assert_eq!((values, *h.cardinal.value()), (vec![5984, 30754], 16972));
        let Payload::GdhRekey(b) = &m.messages()[1].payload else { panic!("expected rekey") };
        assert_eq!(b.entry_for(&id("A")), Some(&kv(25090)));
        assert_eq!(b.entry_for(&id("B")), Some(&kv(1369)));
        assert_eq!(g.key(), Some(&kv(25404)));
        assert!(g.views().all(|v| v.key() == Some(&kv(25404))));
        assert_eq!(g.controller(), &id("C"));
    }

    #[test]
    fn worked_example_leaves() {
        let mut src = ShareSource::seeded(0);
        let mut g = abcd(&mut src);
        script(&mut src, "D", &[12513]);
        let mut m = CostMeter::new();
        g.member_leave(&id("B"), &mut src, &mut m).unwrap();
        let Payload::GdhRekey(b) = &m.messages()[0].payload else { panic!("expected rekey") };
        assert_eq!(b.entry_for(&id("A")), Some(&kv(11296)));
        assert_eq!(b.entry_for(&id("C")), Some(&kv(26470)));
        assert_eq!(g.key(), Some(&kv(5903)));

        script(&mut src, "C", &[54170]);
        let mut m = CostMeter::new();
        assert_eq!(g.controller_leave(&mut src, &mut m).unwrap(), id("D"));
        assert_eq!(g.controller(), &id("C"));
        let Payload::GdhRekey(b) = &m.messages()[0].payload else { panic!("expected rekey") };
        assert_eq!(b.entry_for(&id("A")), Some(&kv(17618)));
        assert_eq!(g.key(), Some(&kv(27086)));
    }

    #[test]
    fn controller_leave_with_full_membership() {
        let mut src = ShareSource::seeded(0);
        let mut g = abcd(&mut src);
        script(&mut src, "C", &[54170]);
        g.controller_leave(&mut src, &mut CostMeter::new()).unwrap();
        assert_eq!(g.intermediate().iter().find(|e| e.member == id("B")).map(|e| e.value.clone()), Some(kv(14156)));
        assert_eq!(g.key(), Some(&kv(27086)));
    }

    #[test]
    fn join_and_leave_costs() {
        let mut src = ShareSource::seeded(3);
        let mut m = CostMeter::new();
        let mut g = SubgroupState::create(id("m0"), P::safe_prime_62(), &mut src, &mut m);
        for x in 1..8u64 {
            let mut m = CostMeter::new();
            g.member_join(id(&format!("m{x}")), &mut src, &mut m).unwrap();
            let l = m.ledger();
            assert_eq!((l.rounds, l.unicast_units, l.broadcast_units, l.serial_exps), (2, x + 1, x + 1, 2 * x + 1), "join at {x}");
        }
        for x in (3..=8u64).rev() {
            let mut m = CostMeter::new();
            g.member_leave(&g.members()[0].clone(), &mut src, &mut m).unwrap();
            let l = m.ledger();
            assert_eq!((l.rounds, l.unicast_units, l.broadcast_units, l.serial_exps), (1, 0, x - 1, x - 1), "leave at {x}");
        }
    }

    #[test]
    fn role_and_membership_errors() {
        let mut src = ShareSource::seeded(0);
        let mut g = abcd(&mut src);
        let mut m = CostMeter::new();
        assert!(matches!(g.member_join(id("A"), &mut src, &mut m), Err(Error::DuplicateMember(_))));
        assert!(matches!(g.member_leave(&id("Z"), &mut src, &mut m), Err(Error::UnknownMember(_))));
        assert!(matches!(g.member_leave(&id("D"), &mut src, &mut m), Err(Error::RoleMismatch { .. })));
        let mut solo = SubgroupState::create(id("A"), P::demo(), &mut src, &mut m);
        assert!(matches!(solo.controller_leave(&mut src, &mut m), Err(Error::RoleMismatch { .. })));
    }

    #[test]
    fn stale_and_missing_entries() {
        let mut src = ShareSource::seeded(0);
        let g = abcd(&mut src);
        let view = g.view(&id("A")).unwrap();
        let b = RekeyBroadcast { epoch: view.epoch(), sender: id("D"), entries: g.intermediate().to_vec() };
        assert!(matches!(compute_subgroup_key(view, &b, g.params()), Err(Error::StaleEpoch { .. })));
        let b = RekeyBroadcast { epoch: view.epoch() + 1, sender: id("D"), entries: vec![] };
        assert!(matches!(compute_subgroup_key(view, &b, g.params()), Err(Error::MissingEntry(_))));
    }

    #[test]
    fn shrinking_to_one_member_drops_the_key() {
        let mut src = ShareSource::seeded(0);
        let mut m = CostMeter::new();
        let mut g = SubgroupState::create(id("A"), P::demo(), &mut src, &mut m);
        g.member_join(id("B"), &mut src, &mut m).unwrap();
        let e = g.epoch();
        g.member_leave(&id("A"), &mut src, &mut m).unwrap();
        assert_eq!((g.key(), g.epoch()), (None, e + 1));
        g.member_join(id("C"), &mut src, &mut m).unwrap();
        assert!(g.key().is_some());
    }

    #[derive(Clone, Debug)]
    enum Op {
        Join,
        Leave(usize),
        ControllerLeave,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![3 => Just(Op::Join), 2 => any::<usize>().prop_map(Op::Leave), 1 => Just(Op::ControllerLeave)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn agreement_freshness_and_exclusion(seed in any::<u64>(), ops in proptest::collection::vec(op(), 1..40)) {
            let params = P::safe_prime_62();
            let mut src = ShareSource::seeded(seed);
            let mut m = CostMeter::new();
            let mut g = SubgroupState::create(id("n0"), params.clone(), &mut src, &mut m);
            let mut seen = std::collections::BTreeSet::new();
            let mut next = 1;
            for op in ops {
                let departed = match op {
                    Op::Join => {
                        g.member_join(id(&format!("n{next}")), &mut src, &mut m).unwrap();
                        next += 1;
                        None
                    }
                    Op::Leave(i) if g.len() > 1 => {
                        let who = g.members()[i % (g.len() - 1)].clone();
                        let view = g.view(&who).unwrap().clone();
                        g.member_leave(&who, &mut src, &mut m).unwrap();
                        Some(view)
                    }
                    Op::ControllerLeave if g.len() > 1 => {
                        let view = g.view(g.controller()).unwrap().clone();
                        g.controller_leave(&mut src, &mut m).unwrap();
                        Some(view)
                    }
                    _ => continue,
                };
                if let Some(k) = g.key() {
                    prop_assert!(g.views().all(|v| v.key() == Some(k)));
                    prop_assert!(seen.insert(k.clone()), "key repeated");
                    if let Some(gone) = departed {
                        prop_assert!(!gone.derivable_keys(&params).contains(k));
                    }
                }
                for v in g.views() {
                    let c = v.census();
                    prop_assert_eq!(c.public_values, v.intermediate().len() + 1);
                }
            }
        }
    }
}
