//! Scenario files: one JSON object per line.
//!
//! ```text
//! {"kind":"join","member":"A","subgroup":"new","shares":[{"layer":"subgroup","value":76182}]}
//! {"kind":"join","member":"B","subgroup":0,"processing":3,"memory":2,"battery":1}
//! {"kind":"leave","member":"B"}
//! {"kind":"send","member":"A","to":"C","payload":"hello"}
//! ```
//!
//! `subgroup` is a subgroup number, `"new"` or `"auto"` (the default).
//! `shares` pins the next private shares drawn; `member` inside a share entry
//! defaults to the event's member. Blank lines and lines starting with `#`
//! are ignored.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::region::{Event, JoinTarget, NodeProfile, SubgroupId};
use crate::shares::Layer;
use crate::MemberId;

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Membership(Event),
    Send { from: MemberId, to: MemberId, payload: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptedShare {
    pub member: MemberId,
    pub layer: Layer,
    /// Decimal exponent, converted once the residue type is known.
    pub value: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub line: usize,
    pub action: Action,
    pub scripted: Vec<ScriptedShare>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scenario {
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawNumber {
    Int(u64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTarget {
    Id(u32),
    Word(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShare {
    member: Option<String>,
    layer: Layer,
    value: RawNumber,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    kind: String,
    member: Option<String>,
    subgroup: Option<RawTarget>,
    to: Option<String>,
    payload: Option<String>,
    #[serde(default)]
    processing: f64,
    #[serde(default)]
    memory: f64,
    #[serde(default)]
    battery: f64,
    #[serde(default)]
    shares: Vec<RawShare>,
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Scenario { line, message };
        let step: RawStep = serde_json::from_str(trimmed).map_err(|e| err(e.to_string()))?;
        let member = step.member.map(MemberId::from).ok_or_else(|| err("missing field `member`".into()))?;
        let action = match step.kind.as_str() {
            "join" => {
                let target = match step.subgroup {
                    None => JoinTarget::Auto,
                    Some(RawTarget::Id(n)) => JoinTarget::Existing(SubgroupId(n)),
                    Some(RawTarget::Word(w)) if w == "new" => JoinTarget::New,
                    Some(RawTarget::Word(w)) if w == "auto" => JoinTarget::Auto,
                    Some(RawTarget::Word(w)) => return Err(err(format!("unknown subgroup target {w:?}"))),
                };
                let profile = NodeProfile { id: member.clone(), processing: step.processing, memory: step.memory, battery: step.battery };
                profile.validate().map_err(|e| err(e.to_string()))?;
                Action::Membership(Event::Join { profile, target })
            }
            "leave" => Action::Membership(Event::Leave { member: member.clone() }),
            "controller_leave" => Action::Membership(Event::ControllerLeave { member: member.clone() }),
            "gateway_leave" => Action::Membership(Event::GatewayLeave { member: member.clone() }),
            "outer_controller_leave" => Action::Membership(Event::OuterControllerLeave { member: member.clone() }),
            "send" => Action::Send {
                from: member.clone(),
                to: step.to.map(MemberId::from).ok_or_else(|| err("send needs `to`".into()))?,
                payload: step.payload.unwrap_or_default(),
            },
            other => return Err(err(format!("unknown event kind {other:?}"))),
        };
        let mut scripted = Vec::new();
        for s in step.shares {
            let value = match s.value {
                RawNumber::Int(v) => v.to_string(),
                RawNumber::Text(t) if !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) => t,
                RawNumber::Text(t) => return Err(err(format!("share value {t:?} is not a decimal integer"))),
            };
            let member = s.member.map(MemberId::from).unwrap_or_else(|| member.clone());
            scripted.push(ScriptedShare { member, layer: s.layer, value });
        }
        steps.push(Step { line, action, scripted });
    }
    Ok(Scenario { steps })
}
