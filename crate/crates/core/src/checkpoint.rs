//! Versioned JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "pisep-checkpoint",
//!   "version": 1,
//!   "model": { "kind": "edd", "config": { ... } },
//!   "joint_order": [11, 10, ...],
//!   "step": 2000,
//!   "normalization": { "translation": [0.0, 0.0, -2.5], "scale": 2.0 },
//!   "params": [ { "name": "input_proj.kernel", "shape": [8, 1, 3, 3], "data": [ ... ] }, ... ]
//! }
//! ```
//!
//! Parameters appear in visitation order with row-major data. Numbers are
//! written in shortest round-trip form and parsed exactly, so a save/load
//! cycle reproduces every weight bit for bit on any platform.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::edd::{EddConfig, EddModel};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::repr::{JointOrder, PAPER_JOINT_ORDER};
use crate::skeleton::JointId;
use crate::ste::{SteConfig, SteModel};
use crate::tensor::Tensor;

pub const FORMAT: &str = "pisep-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "lowercase")]
pub enum ModelConfig {
    Edd(EddConfig),
    Ste(SteConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Edd(_) => "edd",
            Self::Ste(_) => "ste",
        }
    }

    pub fn build(&self, seed: u64) -> Result<Model> {
        Ok(match self {
            Self::Edd(c) => Model::Edd(EddModel::new(*c, seed)?),
            Self::Ste(c) => Model::Ste(SteModel::new(c.clone(), seed)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Edd(EddModel),
    Ste(SteModel),
}

impl Model {
    pub fn config(&self) -> ModelConfig {
        match self {
            Self::Edd(m) => ModelConfig::Edd(*m.config()),
            Self::Ste(m) => ModelConfig::Ste(m.config().clone()),
        }
    }

    pub fn network(&self) -> &dyn Network {
        match self {
            Self::Edd(m) => m,
            Self::Ste(m) => m,
        }
    }

    pub fn network_mut(&mut self) -> &mut dyn Network {
        match self {
            Self::Edd(m) => m,
            Self::Ste(m) => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub joint_order: JointOrder,
    /// Optimiser steps taken when the checkpoint was written.
    pub step: u64,
    /// Maps file coordinates to model coordinates.
    pub normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Container {
    format: String,
    version: u32,
    model: ModelConfig,
    joint_order: Vec<JointId>,
    step: u64,
    normalization: Normalization,
    params: Vec<ParamRecord>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let net = self.model.network();
        if net.joints() != self.joint_order.len() {
            return Err(bad(format!(
                "model has {} joints but the joint order lists {}",
                net.joints(),
                self.joint_order.len()
            )));
        }
        let params = net
            .named_params()
            .into_iter()
            .map(|(name, t)| {
                if !t.is_finite() {
                    return Err(bad(format!("parameter {name} is not finite")));
                }
                Ok(ParamRecord {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
            })
            .collect::<Result<_>>()?;
        let c = Container {
            format: FORMAT.into(),
            version: VERSION,
            model: self.model.config(),
            joint_order: self.joint_order.ids().to_vec(),
            step: self.step,
            normalization: self.normalization,
            params,
        };
        serde_json::to_string(&c).map_err(|e| bad(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Container = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if c.format != FORMAT {
            return Err(bad(format!("unexpected format tag `{}`", c.format)));
        }
        if c.version != VERSION {
            return Err(bad(format!("unsupported version {}", c.version)));
        }
        let mut model = c.model.build(0)?;
        let expected: Vec<String> = model
            .network()
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        if expected.len() != c.params.len() {
            return Err(bad(format!(
                "config implies {} parameter tensors, file holds {}",
                expected.len(),
                c.params.len()
            )));
        }
        let mut values = Vec::with_capacity(c.params.len());
        for (want, rec) in expected.iter().zip(c.params) {
            if *want != rec.name {
                return Err(bad(format!("expected parameter {want}, found {}", rec.name)));
            }
            let t = Tensor::new(rec.shape, rec.data).map_err(|e| bad(format!("{want}: {e}")))?;
            values.push(t);
        }
        model
            .network_mut()
            .set_param_values(&values)
            .map_err(|e| bad(e.to_string()))?;
        let joint_order = if c.joint_order == PAPER_JOINT_ORDER {
            JointOrder::paper()
        } else {
            JointOrder::unordered(c.joint_order).map_err(|e| bad(e.to_string()))?
        };
        if joint_order.len() != model.network().joints() {
            return Err(bad("joint order length does not match the model"));
        }
        let n = c.normalization;
        if !(n.scale.is_finite() && n.scale > 0.0 && n.translation.iter().all(|t| t.is_finite())) {
            return Err(bad(format!("invalid normalization {n:?}")));
        }
        Ok(Self {
            model,
            joint_order,
            step: c.step,
            normalization: c.normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
