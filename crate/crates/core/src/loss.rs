//! Training objectives.
//!
//! Both losses sum over every element and divide by the number of predicted
//! frames, so values are per-frame sums. For an order-3 `K × N × 3` stack the
//! frame count is the leading dimension; lower-order tensors count as one
//! frame.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }

    pub fn evaluate(self, pred: &Tensor, target: &Tensor) -> Result<f64> {
        match self {
            LossKind::L1 => l1_loss(pred, target),
            LossKind::L2 => l2_loss(pred, target),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::Invalid(format!("unknown loss `{other}` (expected l1 or l2)"))),
        }
    }
}

pub fn frame_count(t: &Tensor) -> usize {
    if t.order() == 3 {
        t.shape()[0]
    } else {
        1
    }
}

pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    l1_with(pred, target, frame_count(pred))
}

pub fn l2_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    l2_with(pred, target, frame_count(pred))
}

pub(crate) fn l1_with(pred: &Tensor, target: &Tensor, frames: usize) -> Result<f64> {
    reduce("l1_loss", pred, target, frames, |d| d.abs())
}

pub(crate) fn l2_with(pred: &Tensor, target: &Tensor, frames: usize) -> Result<f64> {
    reduce("l2_loss", pred, target, frames, |d| d * d)
}

fn reduce(
    op: &'static str,
    pred: &Tensor,
    target: &Tensor,
    frames: usize,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    pred.check_same_shape(op, target)?;
    if frames == 0 {
        return Err(shape_err(op, "frame count must be positive"));
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| f(p - t))
        .sum();
    Ok(total / frames as f64)
}
