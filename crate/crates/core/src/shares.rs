use std::collections::{BTreeMap, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arith::Residue;
use crate::crypto::{GroupParams, PrivateShare};
use crate::MemberId;

/// Which key layer a share contributes to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Subgroup,
    Tree,
}

/// Deterministic source of private shares.
///
/// Draws come from a seeded ChaCha20 stream unless a value was scripted for
/// the requesting `(member, layer)`, in which case scripted values are
/// consumed first in FIFO order.
#[derive(Clone, Debug)]
pub struct ShareSource<T> {
    rng: ChaCha20Rng,
    scripted: BTreeMap<(MemberId, Layer), VecDeque<PrivateShare<T>>>,
}

impl<T: Residue> ShareSource<T> {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            scripted: BTreeMap::new(),
        }
    }

    pub fn script(&mut self, member: &MemberId, layer: Layer, share: PrivateShare<T>) -> &mut Self {
        self.scripted
            .entry((member.clone(), layer))
            .or_default()
            .push_back(share);
        self
    }

    pub fn draw(&mut self, member: &MemberId, layer: Layer, params: &GroupParams<T>) -> PrivateShare<T> {
        if let Some(queue) = self.scripted.get_mut(&(member.clone(), layer)) {
            if let Some(share) = queue.pop_front() {
                return share;
            }
        }
        PrivateShare::sample(params, &mut self.rng)
    }

    /// Number of scripted shares not yet consumed.
    pub fn pending_scripted(&self) -> usize {
        self.scripted.values().map(VecDeque::len).sum()
    }

    pub fn rng(&mut self) -> &mut dyn RngCore {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_values_come_first() {
        let p = GroupParams::<u64>::demo();
        let a = MemberId::from("A");
        let mut src = ShareSource::seeded(1);
        src.script(&a, Layer::Subgroup, PrivateShare::from_exponent(76182, &p).unwrap());
        assert_eq!(*src.draw(&a, Layer::Subgroup, &p).value(), 76182 % 32712);
        assert_eq!(src.pending_scripted(), 0);
        // tree layer is independent
        let t = src.draw(&a, Layer::Tree, &p);
        assert!((2..=32711).contains(t.value()));
    }

    #[test]
    fn seeded_draws_repeat() {
        let p = GroupParams::<u64>::safe_prime_62();
        let a = MemberId::from("A");
        let mut x = ShareSource::seeded(42);
        let mut y = ShareSource::seeded(42);
        for _ in 0..10 {
            assert_eq!(x.draw(&a, Layer::Subgroup, &p), y.draw(&a, Layer::Subgroup, &p));
        }
    }
}
