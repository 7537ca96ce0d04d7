//! Region-based group key agreement.
//!
//! Members are partitioned into subgroups. Each subgroup agrees on a
//! subgroup key (KR) with GDH.2 ([`gdh`]); one gateway per subgroup sits at a
//! leaf of a TGDH key tree ([`tgdh`]) whose root yields the outer key (KG).
//! [`region`] orchestrates membership events across both layers and routes
//! traffic, and [`sim`] replays scenarios with full cost accounting.
//!
//! All protocol types are generic over the residue representation
//! ([`arith::Residue`]). The aliases below fix it to `u64` (moduli below
//! 2^63) or [`BigUint`].

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod arith;
pub mod cost;
pub mod crypto;
pub mod error;
pub mod gdh;
pub mod region;
pub mod shares;
pub mod sim;
pub mod tgdh;
pub mod wire;

pub use num_bigint::BigUint;

pub use arith::Residue;
pub use cost::{CostLedger, CostMeter, Delivery, Message, Payload};
pub use crypto::{
    blind, derive_symmetric_key, mod_exp, open, seal, Ciphertext, GroupParams, KeyValue, PrivateShare,
    SymmetricKey,
};
pub use error::{Error, Result};
pub use shares::{Layer, ShareSource};

/// Opaque member identifier; ordering is lexicographic.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemberId(String);

impl MemberId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for MemberId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for MemberId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for MemberId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type DemoParams = GroupParams<u64>;
pub type BigParams = GroupParams<BigUint>;
pub type DemoKeyValue = KeyValue<u64>;
pub type BigKeyValue = KeyValue<BigUint>;
pub type DemoSubgroup = gdh::SubgroupState<u64>;
pub type BigSubgroup = gdh::SubgroupState<BigUint>;
pub type DemoOuterGroup = tgdh::OuterGroup<u64>;
pub type BigOuterGroup = tgdh::OuterGroup<BigUint>;
pub type DemoTopology = region::RegionTopology<u64>;
pub type BigTopology = region::RegionTopology<BigUint>;


