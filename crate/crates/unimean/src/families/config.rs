//! Plain-text (TOML) descriptions of families: name, parameters, and an
//! optional truth seed. These round-trip through serde and back into
//! [`Family`] values, and double as the on-disk format for countable member
//! lists and union registries.

use serde::{Deserialize, Serialize};

use crate::meanvec::MeanVector;

use super::{Family, FamilyError};

/// Serializable family description.
///
/// ```
/// let cfg: unimean::families::FamilyConfig =
///     toml::from_str("family = \"qprop\"\nc = 1.0\ntruth_seed = 7").unwrap();
/// let family = cfg.to_family().unwrap();
/// assert_eq!(family.name(), "qprop(c=1)");
/// assert_eq!(cfg.truth_seed, Some(7));
/// ```
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilySpecToml {
    Qprop {
        c: f64,
    },
    Qbin {},
    Qtert {},
    Qtree {
        #[serde(default = "default_truth_depth")]
        truth_depth: u32,
    },
    Qround {},
    Countable {
        members: Vec<MemberSpec>,
    },
    Union {
        parts: Vec<FamilySpecToml>,
    },
}

fn default_truth_depth() -> u32 {
    32
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyConfig {
    #[serde(flatten)]
    pub spec: FamilySpecToml,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_seed: Option<u64>,
}

impl FamilyConfig {
    pub fn new(spec: FamilySpecToml, truth_seed: Option<u64>) -> Self {
        FamilyConfig { spec, truth_seed }
    }

    pub fn to_family(&self) -> Result<Family, FamilyError> {
        self.spec.to_family()
    }
}

impl FamilySpecToml {
    pub fn to_family(&self) -> Result<Family, FamilyError> {
        match self {
            FamilySpecToml::Qprop { c } => Family::prop(*c),
            FamilySpecToml::Qbin {} => Ok(Family::Bin),
            FamilySpecToml::Qtert {} => Ok(Family::Tert),
            FamilySpecToml::Qtree { truth_depth } => {
                if *truth_depth > 62 {
                    return Err(FamilyError::InvalidParam(format!(
                        "qtree truth_depth {truth_depth} exceeds the supported 62"
                    )));
                }
                Ok(Family::Tree {
                    truth_depth: *truth_depth,
                })
            }
            FamilySpecToml::Qround {} => Ok(Family::Round),
            FamilySpecToml::Countable { members } => {
                let vs = members
                    .iter()
                    .map(MemberSpec::to_mean_vector)
                    .collect::<Result<Vec<_>, _>>()?;
                Family::countable(vs)
            }
            FamilySpecToml::Union { parts } => {
                let fs = parts
                    .iter()
                    .map(FamilySpecToml::to_family)
                    .collect::<Result<Vec<_>, _>>()?;
                Family::union(fs)
            }
        }
    }
}

/// Serializable mean vector; covers the two structured kinds (closures are
/// generated, not listed).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MemberSpec {
    Explicit { prefix: Vec<f64>, tail: f64 },
    Branch { bits: String, on: f64, off: f64 },
}

impl MemberSpec {
    pub fn to_mean_vector(&self) -> Result<MeanVector, FamilyError> {
        match self {
            MemberSpec::Explicit { prefix, tail } => {
                Ok(MeanVector::explicit(prefix.clone(), *tail)?)
            }
            MemberSpec::Branch { bits, on, off } => {
                let parsed: Result<Vec<bool>, _> = bits
                    .chars()
                    .map(|ch| match ch {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        other => Err(FamilyError::InvalidParam(format!(
                            "branch bits must be 0/1, got {other:?}"
                        ))),
                    })
                    .collect();
                Ok(MeanVector::tree_branch(parsed?, *on, *off)?)
            }
        }
    }

    pub fn from_mean_vector(v: &MeanVector) -> Option<Self> {
        match v {
            MeanVector::ExplicitTail { prefix, tail } => Some(MemberSpec::Explicit {
                prefix: prefix.to_vec(),
                tail: *tail,
            }),
            MeanVector::TreeBranch(b) => Some(MemberSpec::Branch {
                bits: b.bits().iter().map(|&x| if x { '1' } else { '0' }).collect(),
                on: b.on_value(),
                off: b.off_value(),
            }),
            MeanVector::Closure { .. } => None,
        }
    }
}
