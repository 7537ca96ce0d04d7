//! TGDH key tree over gateway members and the outer-group rekeying
//! procedures built on it.
//!
//! A node secret `K` has blinded key `BK = g^K`. An internal node's secret is
//! `BK_sibling ^ K_child` for either child, so a leaf that knows the secrets on
//! its key path and the blinded keys on its co-path reaches the root secret,
//! from which the outer key is taken.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::arith::{self, Residue};
use crate::cost::{CostMeter, Delivery, Payload};
use crate::crypto::{blind, mod_exp, GroupParams, KeyValue, PrivateShare};
use crate::error::{Error, Result};
use crate::shares::{Layer, ShareSource};
use crate::MemberId;

pub type NodeId = usize;

/// Deepest tree whose coordinates fit a `u128` index.
pub const MAX_DEPTH: u32 = 127;

/// Node coordinates `<l, v>` with `0 <= v < 2^l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Coord {
    pub level: u32,
    pub index: u128,
}

impl Coord {
    pub const ROOT: Coord = Coord { level: 0, index: 0 };

    pub fn parent(self) -> Option<Coord> {
        (self.level > 0).then(|| Coord { level: self.level - 1, index: self.index >> 1 })
    }

    pub fn sibling(self) -> Option<Coord> {
        (self.level > 0).then_some(Coord { level: self.level, index: self.index ^ 1 })
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.level, self.index)
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    parent: Option<NodeId>,
    children: Option<[NodeId; 2]>,
    owner: Option<MemberId>,
    blinded: Option<KeyValue<T>>,
}

/// Tree shape and public blinded keys. Secrets live in [`GatewayView`]s.
#[derive(Clone, Debug)]
pub struct KeyTree<T> {
    nodes: Vec<Option<Node<T>>>,
    root: Option<NodeId>,
    leaves: BTreeMap<MemberId, NodeId>,
}

impl<T: Residue> Default for KeyTree<T> {
    fn default() -> Self {
        Self { nodes: Vec::new(), root: None, leaves: BTreeMap::new() }
    }
}

impl<T: Residue> KeyTree<T> {
    fn node(&self, id: NodeId) -> &Node<T> {
        self.nodes[id].as_ref().expect("live node id")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node<T> {
        self.nodes[id].as_mut().expect("live node id")
    }

    fn alloc(&mut self, node: Node<T>) -> NodeId {
        self.nodes.push(Some(node));
        self.nodes.len() - 1
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_of(&self, member: &MemberId) -> Option<NodeId> {
        self.leaves.get(member).copied()
    }

    pub fn members(&self) -> impl Iterator<Item = &MemberId> {
        self.leaves.keys()
    }

    pub fn owner(&self, id: NodeId) -> Option<&MemberId> {
        self.node(id).owner.as_ref()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).parent
    }

    pub fn children(&self, id: NodeId) -> Option<[NodeId; 2]> {
        self.node(id).children
    }

    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let p = self.parent(id)?;
        let [l, r] = self.children(p).expect("parent is internal");
        Some(if l == id { r } else { l })
    }

    pub fn blinded(&self, id: NodeId) -> Option<&KeyValue<T>> {
        self.node(id).blinded.as_ref()
    }

    pub fn set_blinded(&mut self, id: NodeId, bk: KeyValue<T>) {
        self.node_mut(id).blinded = Some(bk);
    }

    /// Node ids from `id` up to the root, inclusive.
    pub fn path(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.path(id).len() - 1
    }

    pub fn height(&self) -> usize {
        self.leaves.values().map(|&l| self.depth(l)).max().unwrap_or(0)
    }

    pub fn coord(&self, id: NodeId) -> Result<Coord> {
        let mut level = 0u32;
        let mut index = 0u128;
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            if level >= MAX_DEPTH {
                return Err(Error::TreeTooDeep(MAX_DEPTH));
            }
            let [_, right] = self.children(p).expect("parent is internal");
            if right == cur {
                index |= 1u128 << level;
            }
            level += 1;
            cur = p;
        }
        Ok(Coord { level, index })
    }

    pub fn rightmost_leaf(&self, mut id: NodeId) -> NodeId {
        while let Some([_, r]) = self.children(id) {
            id = r;
        }
        id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    /// Adds `owner` as the sibling of the whole current tree. Returns the
    /// new leaf.
    pub fn insert_at_root(&mut self, owner: MemberId) -> NodeId {
        let leaf = self.alloc(Node { parent: None, children: None, owner: Some(owner.clone()), blinded: None });
        self.leaves.insert(owner, leaf);
        match self.root {
            None => self.root = Some(leaf),
            Some(old) => {
                let root = self.alloc(Node { parent: None, children: Some([old, leaf]), owner: None, blinded: None });
                self.node_mut(old).parent = Some(root);
                self.node_mut(leaf).parent = Some(root);
                self.root = Some(root);
            }
        }
        leaf
    }

    /// Replaces leaf `at` by an internal node whose children are `at` and the
    /// new leaf. Returns the new leaf.
    pub fn insert_beside(&mut self, at: NodeId, owner: MemberId) -> NodeId {
        let parent = self.parent(at);
        let leaf = self.alloc(Node { parent: None, children: None, owner: Some(owner.clone()), blinded: None });
        self.leaves.insert(owner, leaf);
        let joint = self.alloc(Node { parent, children: Some([at, leaf]), owner: None, blinded: None });
        self.node_mut(at).parent = Some(joint);
        self.node_mut(leaf).parent = Some(joint);
        match parent {
            None => self.root = Some(joint),
            Some(p) => {
                let ch = self.node_mut(p).children.as_mut().expect("internal");
                let slot = if ch[0] == at { 0 } else { 1 };
                ch[slot] = joint;
            }
        }
        leaf
    }

    /// Removes a leaf and its parent; the sibling subtree takes the parent's
    /// place. Returns the promoted sibling, or `None` if the tree is now empty.
    pub fn remove_leaf(&mut self, owner: &MemberId) -> Result<Option<NodeId>> {
        let leaf = self.leaves.remove(owner).ok_or_else(|| Error::UnknownMember(owner.clone()))?;
        let Some(parent) = self.parent(leaf) else {
            self.nodes[leaf] = None;
            self.root = None;
            return Ok(None);
        };
        let sibling = self.sibling(leaf).expect("non-root leaf has a sibling");
        let grand = self.parent(parent);
        self.node_mut(sibling).parent = grand;
        match grand {
            None => self.root = Some(sibling),
            Some(g) => {
                let ch = self.node_mut(g).children.as_mut().expect("internal");
                let slot = if ch[0] == parent { 0 } else { 1 };
                ch[slot] = sibling;
            }
        }
        self.nodes[leaf] = None;
        self.nodes[parent] = None;
        Ok(Some(sibling))
    }

    /// Leaf used by balanced insertion: the rightmost among the shallowest.
    pub fn shallowest_rightmost_leaf(&self) -> Option<NodeId> {
        self.leaves
            .values()
            .map(|&l| (self.depth(l), self.coord(l).map(|c| c.index).unwrap_or(0), l))
            .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, _, l)| l)
    }

    /// Whether every leaf sits at the same depth and the leaf count is a power of two.
    pub fn is_complete(&self) -> bool {
        let n = self.leaf_count();
        n.is_power_of_two() && self.leaves.values().all(|&l| self.depth(l) == n.trailing_zeros() as usize)
    }

    /// Preorder records of the tree's blinded keys.
    pub fn snapshot(&self, epoch: u64, include_root: bool) -> Result<TreeSnapshot<T>> {
        let mut records = Vec::new();
        if let Some(root) = self.root {
            let mut stack = vec![root];
            while let Some(id) = stack.pop() {
                let node = self.node(id);
                let blinded = if id == root && !include_root { None } else { node.blinded.clone() };
                records.push(NodeRecord { coord: self.coord(id)?, blinded, owner: node.owner.clone() });
                if let Some([l, r]) = node.children {
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
        Ok(TreeSnapshot { epoch, records })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(bound(serialize = "T: std::fmt::Display"))]
pub struct NodeRecord<T> {
    pub coord: Coord,
    pub blinded: Option<KeyValue<T>>,
    pub owner: Option<MemberId>,
}

/// Broadcast form of a key tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(bound(serialize = "T: std::fmt::Display"))]
pub struct TreeSnapshot<T> {
    pub epoch: u64,
    pub records: Vec<NodeRecord<T>>,
}

impl<T> TreeSnapshot<T> {
    pub fn key_units(&self) -> u64 {
        self.records.iter().filter(|r| r.blinded.is_some()).count() as u64
    }

    pub fn find(&self, coord: Coord) -> Option<&NodeRecord<T>> {
        self.records.iter().find(|r| r.coord == coord)
    }

    pub fn leaf_coord(&self, owner: &MemberId) -> Option<Coord> {
        self.records.iter().find(|r| r.owner.as_ref() == Some(owner)).map(|r| r.coord)
    }
}

/// `sibling_blinded ^ own_secret mod p`.
pub fn tree_compute_parent<T: Residue>(
    own_secret: &T,
    sibling_blinded: Option<&KeyValue<T>>,
    params: &GroupParams<T>,
    at: Coord,
) -> Result<KeyValue<T>> {
    let bk = sibling_blinded.ok_or_else(|| Error::MissingBlindedKey(at.to_string()))?;
    Ok(mod_exp(bk, own_secret, params))
}

/// One step of a key path as remembered by its owner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathEntry<T> {
    pub node: NodeId,
    /// Path child the secret was derived from (none for the leaf).
    pub child: Option<NodeId>,
    pub secret: T,
    pub sibling_blinded: Option<KeyValue<T>>,
}

#[derive(Clone, Debug)]
pub struct GatewayView<T> {
    pub id: MemberId,
    share: PrivateShare<T>,
    path: Vec<PathEntry<T>>,
    epoch: u64,
    stored: Option<Arc<TreeSnapshot<T>>>,
}

impl<T: Residue> GatewayView<T> {
    pub fn share(&self) -> &PrivateShare<T> {
        &self.share
    }

    pub fn path(&self) -> &[PathEntry<T>] {
        &self.path
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Root secret as seen by this member, if it sits in a tree of two or more leaves.
    pub fn outer_key(&self) -> Option<KeyValue<T>> {
        (self.path.len() > 1).then(|| KeyValue::from_trusted(self.path.last().expect("non-empty").secret.clone()))
    }

    pub fn stored_snapshot(&self) -> Option<&TreeSnapshot<T>> {
        self.stored.as_deref()
    }

    /// Secrets on the key path (leaf through root) and blinded keys retained.
    pub fn census(&self) -> (usize, usize) {
        (self.path.len(), self.stored.as_ref().map_or(0, |s| s.key_units() as usize))
    }

    /// Recomputes path secrets that changed, charging one exponentiation per
    /// recomputed node. Returns the recomputed internal nodes.
    fn update_path(&mut self, tree: &KeyTree<T>, params: &GroupParams<T>, meter: &mut CostMeter<T>) -> Result<Vec<NodeId>> {
        let leaf = tree.leaf_of(&self.id).ok_or_else(|| Error::UnknownMember(self.id.clone()))?;
        let old: BTreeMap<NodeId, PathEntry<T>> = self.path.drain(..).map(|e| (e.node, e)).collect();
        let leaf_changed = old.get(&leaf).is_none_or(|e| &e.secret != self.share.value());
        let mut path = vec![PathEntry { node: leaf, child: None, secret: self.share.value().clone(), sibling_blinded: None }];
        let mut changed = leaf_changed;
        let mut recomputed = Vec::new();
        let mut cur = leaf;
        while let Some(parent) = tree.parent(cur) {
            let sibling = tree.sibling(cur).expect("internal parent");
            let sib_bk = tree.blinded(sibling).cloned();
            let reuse = old.get(&parent).filter(|e| !changed && e.child == Some(cur) && e.sibling_blinded == sib_bk);
            let secret = match reuse {
                Some(e) => e.secret.clone(),
                None => {
                    let below = &path.last().expect("non-empty").secret;
                    let s = tree_compute_parent(below, sib_bk.as_ref(), params, tree.coord(parent)?)?;
                    meter.exp(&self.id);
                    changed = true;
                    recomputed.push(parent);
                    s.into_inner()
                }
            };
            path.push(PathEntry { node: parent, child: Some(cur), secret, sibling_blinded: sib_bk });
            cur = parent;
        }
        self.path = path;
        Ok(recomputed)
    }
}

/// Folds a member's key path from a broadcast snapshot, without any cached state.
pub fn compute_outer_key<T: Residue>(
    view: &GatewayView<T>,
    snapshot: &TreeSnapshot<T>,
    params: &GroupParams<T>,
) -> Result<KeyValue<T>> {
    if snapshot.epoch != view.epoch + 1 && snapshot.epoch != view.epoch {
        return Err(Error::StaleEpoch { expected: view.epoch + 1, got: snapshot.epoch });
    }
    let mut at = snapshot.leaf_coord(&view.id).ok_or_else(|| Error::UnknownMember(view.id.clone()))?;
    if at == Coord::ROOT {
        return Err(Error::NoKey);
    }
    let mut secret = view.share.value().clone();
    while let (Some(parent), Some(sib)) = (at.parent(), at.sibling()) {
        let bk = snapshot.find(sib).and_then(|r| r.blinded.as_ref());
        secret = tree_compute_parent(&secret, bk, params, sib)?.into_inner();
        at = parent;
    }
    Ok(KeyValue::from_trusted(secret))
}

/// The outer group: key tree plus every gateway's private view.
#[derive(Clone, Debug)]
pub struct OuterGroup<T> {
    params: GroupParams<T>,
    tree: KeyTree<T>,
    views: BTreeMap<MemberId, GatewayView<T>>,
    controller: MemberId,
    epoch: u64,
    key: Option<KeyValue<T>>,
}

impl<T: Residue> OuterGroup<T> {
    pub fn create(founder: MemberId, params: GroupParams<T>, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<Self> {
        let mut tree = KeyTree::default();
        let leaf = tree.insert_at_root(founder.clone());
        let share = shares.draw(&founder, Layer::Tree, &params);
        tree.set_blinded(leaf, blind(&share, &params));
        meter.exp(&founder);
        let mut view = GatewayView { id: founder.clone(), share, path: Vec::new(), epoch: 0, stored: None };
        view.update_path(&tree, &params, meter)?;
        view.stored = Some(Arc::new(tree.snapshot(0, false)?));
        Ok(Self { params, tree, views: BTreeMap::from([(founder.clone(), view)]), controller: founder, epoch: 0, key: None })
    }

    pub fn params(&self) -> &GroupParams<T> {
        &self.params
    }

    pub fn tree(&self) -> &KeyTree<T> {
        &self.tree
    }

    pub fn controller(&self) -> &MemberId {
        &self.controller
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn key(&self) -> Option<&KeyValue<T>> {
        self.key.as_ref()
    }

    pub fn len(&self) -> usize {
        self.tree.leaf_count()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.leaf_count() == 0
    }

    pub fn contains(&self, id: &MemberId) -> bool {
        self.views.contains_key(id)
    }

    pub fn view(&self, id: &MemberId) -> Option<&GatewayView<T>> {
        self.views.get(id)
    }

    pub fn views(&self) -> impl Iterator<Item = &GatewayView<T>> {
        self.views.values()
    }

    /// Outer-controller handover: the current controller refreshes, hands the
    /// blinded tree to the joiner, which takes the root position's sibling
    /// slot, becomes controller, and broadcasts.
    pub fn tree_join(&mut self, joiner: MemberId, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<()> {
        if self.contains(&joiner) {
            return Err(Error::DuplicateMember(joiner));
        }
        let params = self.params.clone();
        let epoch = self.epoch + 1;
        let joiner_share = shares.draw(&joiner, Layer::Tree, &params);
        let joiner_bk = blind(&joiner_share, &params);
        meter.exp(&joiner);

        let controller = self.controller.clone();
        self.refresh_and_publish(&controller, true, true, shares, meter)?;
        let handover = self.tree.snapshot(self.epoch, true)?;
        meter.send(&controller, Delivery::Unicast(joiner.clone()), Payload::TreeHandover(handover));

        let leaf = self.tree.insert_at_root(joiner.clone());
        self.tree.set_blinded(leaf, joiner_bk);
        let mut view = GatewayView { id: joiner.clone(), share: joiner_share, path: Vec::new(), epoch: self.epoch, stored: None };
        view.update_path(&self.tree, &params, meter)?;
        meter.key_ready(&joiner);
        self.views.insert(joiner.clone(), view);
        self.controller = joiner.clone();
        self.broadcast_and_agree(&joiner, epoch, meter)
    }

    /// A gateway other than the controller leaves.
    pub fn tree_leave(&mut self, leaver: &MemberId, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<()> {
        if !self.contains(leaver) {
            return Err(Error::UnknownMember(leaver.clone()));
        }
        if *leaver == self.controller {
            return Err(Error::RoleMismatch { member: leaver.clone(), event: "gateway leave (use outer-controller leave)" });
        }
        let epoch = self.epoch + 1;
        let promoted = self.tree.remove_leaf(leaver)?.expect("controller remains");
        self.views.remove(leaver);
        if self.tree.leaf_count() == 1 {
            return self.collapse_to_single(epoch, meter);
        }
        let controller = self.controller.clone();
        let covered = match self.tree.parent(promoted) {
            None => true,
            Some(p) => self.tree.path(self.tree.leaf_of(&controller).expect("controller leaf")).contains(&p),
        };
        if !covered {
            // the controller's key path misses some changed nodes
            let sponsor = self.tree.owner(self.tree.rightmost_leaf(promoted)).expect("leaf owner").clone();
            self.refresh_and_publish(&sponsor, false, false, shares, meter)?;
            let snap = self.tree.snapshot(epoch, false)?;
            let others = self.others(&sponsor);
            meter.send(&sponsor, Delivery::Broadcast(others), Payload::TreeRekey(snap));
        }
        self.refresh_and_publish(&controller, true, false, shares, meter)?;
        meter.key_ready(&controller);
        self.broadcast_and_agree(&controller, epoch, meter)
    }

    /// The outer controller leaves; the rightmost leaf of its sibling subtree
    /// (the previous controller) takes over.
    pub fn tree_controller_leave(&mut self, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<MemberId> {
        let leaver = self.controller.clone();
        if self.tree.leaf_count() < 2 {
            return Err(Error::RoleMismatch { member: leaver, event: "outer-controller leave from a single-leaf tree" });
        }
        let epoch = self.epoch + 1;
        let promoted = self.tree.remove_leaf(&leaver)?.expect("sibling remains");
        self.views.remove(&leaver);
        let successor = self.tree.owner(self.tree.rightmost_leaf(promoted)).expect("leaf owner").clone();
        self.controller = successor.clone();
        if self.tree.leaf_count() == 1 {
            self.collapse_to_single(epoch, meter)?;
        } else {
            self.refresh_and_publish(&successor, true, false, shares, meter)?;
            meter.key_ready(&successor);
            self.broadcast_and_agree(&successor, epoch, meter)?;
        }
        Ok(leaver)
    }

    /// Standard TGDH join used as the comparison baseline: the joiner
    /// announces its blinded key, a sponsor at the insertion point refreshes
    /// and broadcasts. Inserts beside the shallowest rightmost leaf, or
    /// above the root when the tree is complete.
    pub fn sponsored_join(&mut self, joiner: MemberId, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<()> {
        if self.contains(&joiner) {
            return Err(Error::DuplicateMember(joiner));
        }
        let params = self.params.clone();
        let epoch = self.epoch + 1;
        // the joiner blinds its share before announcing itself, outside the event
        let share = shares.draw(&joiner, Layer::Tree, &params);
        let bk = blind(&share, &params);
        let everyone: Vec<MemberId> = self.views.keys().cloned().collect();
        meter.send(&joiner, Delivery::Broadcast(everyone), Payload::JoinRequest { member: joiner.clone(), blinded: bk.clone() });

        let root = self.tree.root().expect("non-empty tree");
        let (leaf, sponsor) = if self.tree.is_complete() {
            let sponsor = self.tree.owner(self.tree.rightmost_leaf(root)).expect("owner").clone();
            (self.tree.insert_at_root(joiner.clone()), sponsor)
        } else {
            let at = self.tree.shallowest_rightmost_leaf().expect("non-empty");
            let sponsor = self.tree.owner(at).expect("owner").clone();
            (self.tree.insert_beside(at, joiner.clone()), sponsor)
        };
        self.tree.set_blinded(leaf, bk);
        self.views.insert(joiner.clone(), GatewayView { id: joiner.clone(), share, path: Vec::new(), epoch: self.epoch, stored: None });
        self.refresh_and_publish(&sponsor, true, false, shares, meter)?;
        meter.key_ready(&sponsor);
        self.controller = sponsor.clone();
        self.broadcast_and_agree(&sponsor, epoch, meter)
    }

    /// Standard TGDH leave: the rightmost leaf of the leaver's sibling subtree
    /// sponsors the rekey.
    pub fn sponsored_leave(&mut self, leaver: &MemberId, shares: &mut ShareSource<T>, meter: &mut CostMeter<T>) -> Result<()> {
        if !self.contains(leaver) {
            return Err(Error::UnknownMember(leaver.clone()));
        }
        let epoch = self.epoch + 1;
        let promoted = self.tree.remove_leaf(leaver)?.ok_or(Error::EmptyMemberList)?;
        self.views.remove(leaver);
        let sponsor = self.tree.owner(self.tree.rightmost_leaf(promoted)).expect("owner").clone();
        self.controller = sponsor.clone();
        if self.tree.leaf_count() == 1 {
            return self.collapse_to_single(epoch, meter);
        }
        self.refresh_and_publish(&sponsor, true, false, shares, meter)?;
        meter.key_ready(&sponsor);
        self.broadcast_and_agree(&sponsor, epoch, meter)
    }

    fn others(&self, me: &MemberId) -> Vec<MemberId> {
        self.views.keys().filter(|m| *m != me).cloned().collect()
    }

    /// `member` optionally refreshes its leaf secret, recomputes its key path
    /// and writes the blinded keys of every recomputed node into the tree.
    fn refresh_and_publish(
        &mut self,
        member: &MemberId,
        refresh: bool,
        include_root: bool,
        shares: &mut ShareSource<T>,
        meter: &mut CostMeter<T>,
    ) -> Result<()> {
        let params = self.params.clone();
        let leaf = self.tree.leaf_of(member).ok_or_else(|| Error::UnknownMember(member.clone()))?;
        let view = self.views.get_mut(member).expect("view for every leaf");
        if refresh {
            view.share = shares.draw(member, Layer::Tree, &params);
            self.tree.set_blinded(leaf, blind(&view.share, &params));
            meter.exp(member);
            view.path.clear();
        }
        let recomputed = view.update_path(&self.tree, &params, meter)?;
        let root = self.tree.root();
        for entry in view.path.iter().skip(1) {
            let is_root = Some(entry.node) == root;
            if recomputed.contains(&entry.node) && (!is_root || include_root) {
                let bk = mod_exp(&params.generator_value(), &entry.secret, &params);
                meter.exp(member);
                self.tree.set_blinded(entry.node, bk);
            }
        }
        Ok(())
    }

    /// `sender` broadcasts the blinded tree; every other gateway recomputes
    /// and all must agree.
    fn broadcast_and_agree(&mut self, sender: &MemberId, epoch: u64, meter: &mut CostMeter<T>) -> Result<()> {
        let params = self.params.clone();
        let snap = self.tree.snapshot(epoch, false)?;
        let others = self.others(sender);
        meter.send(sender, Delivery::Broadcast(others), Payload::TreeRekey(snap.clone()));
        let shared = Arc::new(snap);
        let expected = self.views[sender].outer_key();
        for view in self.views.values_mut() {
            if &view.id != sender {
                view.update_path(&self.tree, &params, meter)?;
                meter.key_ready(&view.id);
                if view.outer_key() != expected {
                    return Err(Error::InvariantViolation(format!("gateway {} derived a different outer key", view.id)));
                }
            }
            view.epoch = epoch;
            view.stored = Some(Arc::clone(&shared));
        }
        self.epoch = epoch;
        self.key = expected;
        Ok(())
    }

    fn collapse_to_single(&mut self, epoch: u64, meter: &mut CostMeter<T>) -> Result<()> {
        let params = self.params.clone();
        let shared = Arc::new(self.tree.snapshot(epoch, false)?);
        for view in self.views.values_mut() {
            view.update_path(&self.tree, &params, meter)?;
            view.epoch = epoch;
            view.stored = Some(Arc::clone(&shared));
        }
        self.controller = self.views.keys().next().expect("one gateway").clone();
        self.epoch = epoch;
        self.key = None;
        Ok(())
    }

    /// Checks blinded keys against every member's path secrets.
    pub fn check_path_consistency(&self) -> Result<()> {
        let root = self.tree.root();
        for view in self.views.values() {
            for e in &view.path {
                if Some(e.node) == root {
                    continue;
                }
                let expect = KeyValue::from_trusted(arith::pow_mod(self.params.generator(), &e.secret, self.params.modulus()));
                if self.tree.blinded(e.node) != Some(&expect) {
                    return Err(Error::InvariantViolation(format!("blinded key mismatch on {}'s path", view.id)));
                }
            }
        }
        Ok(())
    }
}
