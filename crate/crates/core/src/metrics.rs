//! Per-frame MSE/MAE and their frame-, joint- and axis-wise breakdowns.
//!
//! Within a frame errors are summed over joints and axes, never averaged.
//! Only the sequence dimension is averaged. A joint's error is the sum over
//! its three axes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::repr::PseudoImage;
use crate::skeleton::JointId;

fn check_pair(op: &'static str, pred: &PseudoImage, gt: &PseudoImage) -> Result<()> {
    if pred.joints() != gt.joints() {
        return Err(shape_err(
            op,
            format!("{} joints vs {}", pred.joints(), gt.joints()),
        ));
    }
    Ok(())
}

/// Sum of squared coordinate differences over the frame.
pub fn mse_frame(pred: &PseudoImage, gt: &PseudoImage) -> Result<f64> {
    check_pair("mse_frame", pred, gt)?;
    Ok(pred.values().zip(gt.values()).map(|(p, g)| (p - g) * (p - g)).sum())
}

/// Sum of absolute coordinate differences over the frame.
pub fn mae_frame(pred: &PseudoImage, gt: &PseudoImage) -> Result<f64> {
    check_pair("mae_frame", pred, gt)?;
    Ok(pred.values().zip(gt.values()).map(|(p, g)| (p - g).abs()).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// One entry per predicted frame.
    pub frame_mse: Vec<f64>,
    pub frame_mae: Vec<f64>,
    /// One entry per joint row, averaged over frames.
    pub joint_mse: Vec<f64>,
    pub joint_mae: Vec<f64>,
    /// `[joint][axis]`, averaged over frames.
    pub axis_mse: Vec<[f64; 3]>,
    pub axis_mae: Vec<[f64; 3]>,
    pub mean_mse: f64,
    pub mean_mae: f64,
}

impl EvalReport {
    fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frame_mse: vec![0.0; frames],
            frame_mae: vec![0.0; frames],
            joint_mse: vec![0.0; joints],
            joint_mae: vec![0.0; joints],
            axis_mse: vec![[0.0; 3]; joints],
            axis_mae: vec![[0.0; 3]; joints],
            mean_mse: 0.0,
            mean_mae: 0.0,
        }
    }

    pub fn frames(&self) -> usize {
        self.frame_mse.len()
    }

    pub fn joints(&self) -> usize {
        self.joint_mse.len()
    }

    /// `(frame, mse, mae)` rows, frames numbered from 1.
    pub fn frame_wise_csv(&self) -> String {
        let mut s = String::from("frame,mse,mae\n");
        for (k, (m, a)) in self.frame_mse.iter().zip(&self.frame_mae).enumerate() {
            writeln!(s, "{},{m:?},{a:?}", k + 1).unwrap();
        }
        s
    }

    /// `(joint_id, mse, mae)` rows in pseudo-image row order.
    pub fn joint_wise_csv(&self, ids: &[JointId]) -> Result<String> {
        self.check_ids(ids)?;
        let mut s = String::from("joint_id,mse,mae\n");
        for (i, id) in ids.iter().enumerate() {
            writeln!(s, "{id},{:?},{:?}", self.joint_mse[i], self.joint_mae[i]).unwrap();
        }
        Ok(s)
    }

    /// `(joint_id, axis, mse, mae)` rows; axis is `x`, `y` or `z`.
    pub fn axis_wise_csv(&self, ids: &[JointId]) -> Result<String> {
        self.check_ids(ids)?;
        let mut s = String::from("joint_id,axis,mse,mae\n");
        for (i, id) in ids.iter().enumerate() {
            for (a, name) in ["x", "y", "z"].iter().enumerate() {
                writeln!(s, "{id},{name},{:?},{:?}", self.axis_mse[i][a], self.axis_mae[i][a]).unwrap();
            }
        }
        Ok(s)
    }

    fn check_ids(&self, ids: &[JointId]) -> Result<()> {
        if ids.len() != self.joints() {
            return Err(Error::Invalid(format!(
                "{} joint ids for a report over {} joints",
                ids.len(),
                self.joints()
            )));
        }
        Ok(())
    }

    /// Writes `frame_wise.csv`, `joint_wise.csv` and `axis_wise.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path, ids: &[JointId]) -> Result<()> {
        let joint = self.joint_wise_csv(ids)?;
        let axis = self.axis_wise_csv(ids)?;
        std::fs::write(dir.join("frame_wise.csv"), self.frame_wise_csv())?;
        std::fs::write(dir.join("joint_wise.csv"), joint)?;
        std::fs::write(dir.join("axis_wise.csv"), axis)?;
        Ok(())
    }
}

/// Scores a predicted sequence against ground truth of the same length.
pub fn evaluate(pred: &[PseudoImage], gt: &[PseudoImage]) -> Result<EvalReport> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Invalid(format!(
            "cannot evaluate {} predicted frames against {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let n = gt[0].joints();
    let k = gt.len();
    let mut r = EvalReport::zeros(k, n);
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        check_pair("evaluate", p, g)?;
        if g.joints() != n {
            return Err(shape_err("evaluate", "frames differ in joint count"));
        }
        for (i, (pr, gr)) in p.rows().iter().zip(g.rows()).enumerate() {
            for a in 0..3 {
                let d = pr[a] - gr[a];
                r.axis_mse[i][a] += d * d;
                r.axis_mae[i][a] += d.abs();
                r.frame_mse[f] += d * d;
                r.frame_mae[f] += d.abs();
            }
        }
    }
    let kf = k as f64;
    for i in 0..n {
        for a in 0..3 {
            r.axis_mse[i][a] /= kf;
            r.axis_mae[i][a] /= kf;
        }
        r.joint_mse[i] = r.axis_mse[i].iter().sum();
        r.joint_mae[i] = r.axis_mae[i].iter().sum();
    }
    r.mean_mse = r.frame_mse.iter().sum::<f64>() / kf;
    r.mean_mae = r.frame_mae.iter().sum::<f64>() / kf;
    Ok(r)
}

/// Unweighted mean of per-clip reports.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Invalid("no reports to aggregate".into()))?;
    let (k, n) = (first.frames(), first.joints());
    if reports.iter().any(|r| r.frames() != k || r.joints() != n) {
        return Err(Error::Invalid("reports differ in frame or joint count".into()));
    }
    let c = reports.len() as f64;
    let mut out = EvalReport::zeros(k, n);
    for r in reports {
        for f in 0..k {
            out.frame_mse[f] += r.frame_mse[f] / c;
            out.frame_mae[f] += r.frame_mae[f] / c;
        }
        for i in 0..n {
            out.joint_mse[i] += r.joint_mse[i] / c;
            out.joint_mae[i] += r.joint_mae[i] / c;
            for a in 0..3 {
                out.axis_mse[i][a] += r.axis_mse[i][a] / c;
                out.axis_mae[i][a] += r.axis_mae[i][a] / c;
            }
        }
        out.mean_mse += r.mean_mse / c;
        out.mean_mae += r.mean_mae / c;
    }
    Ok(out)
}
