//! Measured costs of single events on freshly built groups, for comparison
//! against the closed forms in [`super::predict`].

use crate::arith::Residue;
use crate::cost::{CostLedger, CostMeter};
use crate::crypto::GroupParams;
use crate::error::{Error, Result};
use crate::gdh::SubgroupState;
use crate::region::{Event, JoinTarget, NodeProfile, RegionTopology, Role, SubgroupId};
use crate::shares::ShareSource;
use crate::sim::predict::{BaselineEvent, CostEvent, Protocol, Shape};
use crate::tgdh::OuterGroup;
use crate::MemberId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Measured {
    pub ledger: CostLedger,
    pub shape: Shape,
}

fn member(i: u64) -> MemberId {
    MemberId::new(format!("m{i:04}"))
}

/// `y` subgroups of exactly `x` members. The first member of each subgroup
/// scores highest and becomes its gateway, so the gateway is never the
/// subgroup controller when `x >= 2`.
pub fn regional<T: Residue>(params: &GroupParams<T>, x: u64, y: u64, seed: u64) -> Result<RegionTopology<T>> {
    if x == 0 || y == 0 {
        return Err(Error::InvalidParams("x and y must be at least 1".into()));
    }
    let profiles = (0..x * y).map(|i| NodeProfile { processing: f64::from(u8::from(i % x == 0)), ..NodeProfile::plain(member(i)) }).collect();
    let max = usize::try_from(x).map_err(|_| Error::InvalidParams("x too large".into()))?;
    let (topo, _) = RegionTopology::form_subgroups(profiles, max.max(2), params.clone(), ShareSource::seeded(seed))?;
    Ok(topo)
}

fn tree_height<T: Residue>(topo: &RegionTopology<T>) -> u64 {
    topo.tree().map_or(0, |t| t.tree().height() as u64)
}

/// Shape of a regional topology before an event on subgroup `R0`.
fn regional_shape<T: Residue>(topo: &RegionTopology<T>, x: u64) -> Shape {
    Shape { x, y: topo.subgroups().len() as u64, h: tree_height(topo), sponsor_depth: 0 }
}

pub fn measure_rbgka<T: Residue>(params: &GroupParams<T>, event: CostEvent, x: u64, y: u64, seed: u64) -> Result<Measured> {
    let mut topo = match event {
        CostEvent::MemberJoin => regional_with_room(params, x, y, seed)?,
        _ => regional(params, x, y, seed)?,
    };
    let shape = regional_shape(&topo, x);
    let r0 = SubgroupId(0);
    let event = match event {
        CostEvent::MemberJoin => Event::Join { profile: NodeProfile::plain("joiner"), target: JoinTarget::Existing(r0) },
        CostEvent::ControllerJoin => Event::Join { profile: NodeProfile::plain("joiner"), target: JoinTarget::New },
        CostEvent::MemberLeave => {
            let sg = topo.subgroup(r0).expect("R0");
            let leaver = sg
                .state
                .members()
                .iter()
                .find(|m| topo.role(m).ok() == Some(Role::Member))
                .ok_or_else(|| Error::InvalidParams("no plain member to remove".into()))?
                .clone();
            Event::Leave { member: leaver }
        }
        CostEvent::ControllerLeave => {
            let gw = topo.subgroup(r0).expect("R0").gateway.clone();
            if topo.role(&gw)? != Role::Gateway {
                return Err(Error::InvalidParams("gateway leave needs at least two subgroups".into()));
            }
            Event::GatewayLeave { member: gw }
        }
    };
    let outcome = topo.handle_event(&event)?;
    Ok(Measured { ledger: outcome.ledger, shape })
}

/// Like [`regional`] but with a size bound one above `x`.
fn regional_with_room<T: Residue>(params: &GroupParams<T>, x: u64, y: u64, seed: u64) -> Result<RegionTopology<T>> {
    let mut topo = RegionTopology::empty(params.clone(), usize::try_from(x + 1).unwrap_or(usize::MAX), ShareSource::seeded(seed))?;
    for s in 0..y {
        for i in 0..x {
            let id = member(s * x + i);
            let target = if i == 0 { JoinTarget::New } else { JoinTarget::Existing(SubgroupId(s as u32)) };
            let profile = NodeProfile { processing: f64::from(u8::from(i == 0)), ..NodeProfile::plain(id) };
            topo.handle_event(&Event::Join { profile, target })?;
        }
    }
    Ok(topo)
}

pub fn gdh_group<T: Residue>(params: &GroupParams<T>, n: u64, seed: u64) -> Result<(SubgroupState<T>, ShareSource<T>)> {
    let mut shares = ShareSource::seeded(seed);
    let mut meter = CostMeter::new();
    let mut state = SubgroupState::create(member(0), params.clone(), &mut shares, &mut meter);
    for i in 1..n {
        state.member_join(member(i), &mut shares, &mut meter)?;
    }
    Ok((state, shares))
}

/// A TGDH tree grown by `n` sponsored joins.
pub fn tgdh_group<T: Residue>(params: &GroupParams<T>, n: u64, seed: u64) -> Result<(OuterGroup<T>, ShareSource<T>)> {
    let mut shares = ShareSource::seeded(seed);
    let mut meter = CostMeter::new();
    let mut tree = OuterGroup::create(member(0), params.clone(), &mut shares, &mut meter)?;
    for i in 1..n {
        tree.sponsored_join(member(i), &mut shares, &mut meter)?;
    }
    Ok((tree, shares))
}

/// One baseline event on a group of `n`. The TGDH leaver is the first
/// member, which sits at maximum depth.
pub fn measure_baseline<T: Residue>(params: &GroupParams<T>, protocol: Protocol, event: BaselineEvent, n: u64, seed: u64) -> Result<Measured> {
    if n < 2 {
        return Err(Error::InvalidParams("baseline group size must be at least 2".into()));
    }
    let mut meter = CostMeter::new();
    let mut shape = Shape { x: n, ..Shape::default() };
    match protocol {
        Protocol::Gdh => {
            let (mut state, mut shares) = gdh_group(params, n, seed)?;
            match event {
                BaselineEvent::Join => state.member_join(MemberId::from("joiner"), &mut shares, &mut meter)?,
                BaselineEvent::Leave => state.member_leave(&member(0), &mut shares, &mut meter)?,
            }
        }
        Protocol::Tgdh => {
            let (mut tree, mut shares) = tgdh_group(params, n, seed)?;
            match event {
                BaselineEvent::Join => tree.sponsored_join(MemberId::from("joiner"), &mut shares, &mut meter)?,
                BaselineEvent::Leave => tree.sponsored_leave(&member(0), &mut shares, &mut meter)?,
            }
            let t = tree.tree();
            let sponsor = t.leaf_of(tree.controller()).expect("sponsor leaf");
            shape.h = t.height() as u64;
            shape.sponsor_depth = t.depth(sponsor) as u64;
        }
    }
    Ok(Measured { ledger: meter.ledger(), shape })
}

/// One baseline member: id, tree depth (0 for GDH), `(keys, public values)`.
pub type CensusRow = (MemberId, u64, (u64, u64));

pub fn baseline_census<T: Residue>(params: &GroupParams<T>, protocol: Protocol, n: u64, seed: u64) -> Result<Vec<CensusRow>> {
    Ok(match protocol {
        Protocol::Gdh => {
            let (state, _) = gdh_group(params, n, seed)?;
            state.views().map(|v| {
                let c = v.census();
                (v.id.clone(), 0, (c.secrets as u64, c.public_values as u64))
            }).collect()
        }
        Protocol::Tgdh => {
            let (tree, _) = tgdh_group(params, n, seed)?;
            tree.views()
                .map(|v| {
                    let (k, p) = v.census();
                    let depth = tree.tree().depth(tree.tree().leaf_of(&v.id).expect("leaf")) as u64;
                    (v.id.clone(), depth, (k as u64, p as u64))
                })
                .collect()
        }
    })
}
