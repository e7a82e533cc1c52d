//! JSON checkpoints for single networks and committees.
//!
//! A model file looks like
//!
//! ```json
//! {
//!   "format": "nncommittee-mlp",
//!   "version": 1,
//!   "scalar": "f64",
//!   "topology": { "input_dim": 9, "hidden_dim": 30, "output_dim": 22 },
//!   "params": [ ... ],
//!   "normalizer": { "mean": [ ... ], "std": [ ... ] }
//! }
//! ```
//!
//! `params` follows the flattening order of [`MlpModel`]. Values are stored
//! as shortest round-trip decimal `f64`; `normalizer` may be `null`.
//! A committee file has `"format": "nncommittee-committee"`, one shared
//! `normalizer` and a `members` array of `{ "topology", "params" }` objects.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::committee::Committee;
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::mlp::{MlpModel, MlpTopology};
use crate::scalar::Real;

pub const MODEL_FORMAT: &str = "nncommittee-mlp";
pub const COMMITTEE_FORMAT: &str = "nncommittee-committee";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct NormalizerRepr {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MemberRepr {
    topology: TopologyRepr,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    format: String,
    version: u32,
    scalar: String,
    topology: TopologyRepr,
    params: Vec<f64>,
    normalizer: Option<NormalizerRepr>,
}

#[derive(Serialize, Deserialize)]
struct CommitteeRepr {
    format: String,
    version: u32,
    scalar: String,
    normalizer: Option<NormalizerRepr>,
    members: Vec<MemberRepr>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// A trained network or committee together with the input map it expects.
#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint<T> {
    Single {
        model: MlpModel<T>,
        normalizer: Option<Normalizer<T>>,
    },
    Committee {
        committee: Committee<T>,
        normalizer: Option<Normalizer<T>>,
    },
}

impl<T: Real> Checkpoint<T> {
    pub fn normalizer(&self) -> Option<&Normalizer<T>> {
        match self {
            Checkpoint::Single { normalizer, .. } | Checkpoint::Committee { normalizer, .. } => {
                normalizer.as_ref()
            }
        }
    }
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Real>(v: &[f64]) -> Result<Vec<T>> {
    v.iter()
        .map(|&x| {
            T::from_f64(x)
                .filter(|y| y.is_finite())
                .ok_or_else(|| Error::Checkpoint(format!("value {x} is not representable")))
        })
        .collect()
}

fn member_repr<T: Real>(m: &MlpModel<T>) -> MemberRepr {
    let t = m.topology();
    MemberRepr {
        topology: TopologyRepr {
            input_dim: t.input_dim,
            hidden_dim: t.hidden_dim,
            output_dim: t.output_dim,
        },
        params: to_f64(m.flatten()),
    }
}

fn member_from<T: Real>(topology: &TopologyRepr, params: &[f64]) -> Result<MlpModel<T>> {
    let topo = MlpTopology::new(topology.input_dim, topology.hidden_dim, topology.output_dim)?;
    MlpModel::unflatten(topo, from_f64(params)?)
        .map_err(|e| Error::Checkpoint(format!("parameter vector: {e}")))
}

fn normalizer_repr<T: Real>(n: Option<&Normalizer<T>>) -> Option<NormalizerRepr> {
    n.map(|n| NormalizerRepr {
        mean: to_f64(n.mean()),
        std: to_f64(n.std()),
    })
}

fn normalizer_from<T: Real>(n: Option<NormalizerRepr>) -> Result<Option<Normalizer<T>>> {
    n.map(|n| Normalizer::from_parts(from_f64(&n.mean)?, from_f64(&n.std)?))
        .transpose()
}

impl<T: Real> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        let text = match self {
            Checkpoint::Single { model, normalizer } => {
                let m = member_repr(model);
                serde_json::to_string_pretty(&ModelRepr {
                    format: MODEL_FORMAT.into(),
                    version: FORMAT_VERSION,
                    scalar: T::NAME.into(),
                    topology: m.topology,
                    params: m.params,
                    normalizer: normalizer_repr(normalizer.as_ref()),
                })?
            }
            Checkpoint::Committee {
                committee,
                normalizer,
            } => serde_json::to_string_pretty(&CommitteeRepr {
                format: COMMITTEE_FORMAT.into(),
                version: FORMAT_VERSION,
                scalar: T::NAME.into(),
                normalizer: normalizer_repr(normalizer.as_ref()),
                members: committee.experts().iter().map(member_repr).collect(),
            })?,
        };
        Ok(text + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        match header.format.as_str() {
            MODEL_FORMAT => {
                let r: ModelRepr = serde_json::from_str(text)?;
                Ok(Checkpoint::Single {
                    model: member_from(&r.topology, &r.params)?,
                    normalizer: normalizer_from(r.normalizer)?,
                })
            }
            COMMITTEE_FORMAT => {
                let r: CommitteeRepr = serde_json::from_str(text)?;
                let members = r
                    .members
                    .iter()
                    .map(|m| member_from(&m.topology, &m.params))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Checkpoint::Committee {
                    committee: Committee::new(members)?,
                    normalizer: normalizer_from(r.normalizer)?,
                })
            }
            other => Err(Error::Checkpoint(format!("unknown format {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
