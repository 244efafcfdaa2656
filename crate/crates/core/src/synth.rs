//! Seeded synthetic skeleton motion.
//!
//! Every kind starts from a fixed upright pose over the 18 default joint ids,
//! shifted by a small per-seed offset. Time is measured in frames.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{JointId, SkeletonFrame, SkeletonSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    /// Every frame is the start pose.
    Constant,
    /// Frame `t` is the start pose plus `t · velocity`.
    LinearDrift,
    /// Arms swing on phase-shifted sinusoids; legs barely move, trunk is still.
    SinusoidalLimb,
    /// `SinusoidalLimb` plus i.i.d. Gaussian noise on every coordinate.
    NoisySinusoid,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [
        Self::Constant,
        Self::LinearDrift,
        Self::SinusoidalLimb,
        Self::NoisySinusoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::LinearDrift => "linear-drift",
            Self::SinusoidalLimb => "sinusoidal-limb",
            Self::NoisySinusoid => "noisy-sinusoid",
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown motion kind `{s}` (expected constant, linear-drift, sinusoidal-limb or noisy-sinusoid)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionParams {
    /// Peak hand displacement in metres. Elbows move half as far, shoulders a
    /// tenth, ankles a tenth, trunk not at all.
    pub amplitude: f64,
    /// Frames per oscillation.
    pub period: f64,
    /// Per-frame displacement for linear drift.
    pub velocity: [f64; 3],
    pub noise_std: f64,
    /// Camera distance of the pelvis.
    pub depth: f64,
    /// Half-width of the uniform per-seed offset of the start pose.
    pub jitter: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            amplitude: 0.3,
            period: 25.0,
            velocity: [0.01, 0.0, 0.005],
            noise_std: 0.01,
            depth: 2.5,
            jitter: 0.05,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.amplitude, self.period, self.noise_std, self.depth, self.jitter]
            .iter()
            .chain(&self.velocity)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("motion parameters must be finite".into()));
        }
        if self.period <= 0.0 {
            return Err(Error::Invalid(format!("period must be positive, got {}", self.period)));
        }
        if self.noise_std < 0.0 || self.jitter < 0.0 || self.amplitude < 0.0 {
            return Err(Error::Invalid(
                "amplitude, noise_std and jitter must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One joint of the start pose.
struct PoseJoint {
    id: JointId,
    /// `[x, y]` relative to the pelvis, person facing the camera.
    xy: [f64; 2],
    /// Swing amplitude as a fraction of `amplitude`.
    gain: f64,
    /// Steps from the limb root; distal joints trail in phase.
    link: u8,
    /// Joints on the lagged side swing out of phase with the other side.
    lagged: bool,
}

const fn pj(id: JointId, xy: [f64; 2], gain: f64, link: u8, lagged: bool) -> PoseJoint {
    PoseJoint { id, xy, gain, link, lagged }
}

const BASE_POSE: [PoseJoint; 18] = [
    pj(3, [0.0, 0.65], 0.0, 0, false),
    pj(20, [0.0, 0.45], 0.0, 0, false),
    pj(1, [0.0, 0.2], 0.0, 0, false),
    pj(0, [0.0, 0.0], 0.0, 0, false),
    pj(4, [-0.2, 0.45], 0.1, 0, true),
    pj(5, [-0.25, 0.2], 0.5, 1, true),
    pj(6, [-0.28, -0.05], 0.9, 2, true),
    pj(7, [-0.3, -0.12], 1.0, 3, true),
    pj(8, [0.2, 0.45], 0.1, 0, false),
    pj(9, [0.25, 0.2], 0.5, 1, false),
    pj(10, [0.28, -0.05], 0.9, 2, false),
    pj(11, [0.3, -0.12], 1.0, 3, false),
    pj(12, [-0.1, -0.05], 0.0, 0, true),
    pj(13, [-0.12, -0.5], 0.05, 1, true),
    pj(14, [-0.12, -0.9], 0.1, 2, true),
    pj(16, [0.1, -0.05], 0.0, 0, false),
    pj(17, [0.12, -0.5], 0.05, 1, false),
    pj(18, [0.12, -0.9], 0.1, 2, false),
];

pub fn synthetic_motion(
    kind: MotionKind,
    params: &MotionParams,
    length: usize,
    seed: u64,
) -> Result<SkeletonSequence> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: [f64; 3] = std::array::from_fn(|_| {
        if params.jitter > 0.0 {
            rng.random_range(-params.jitter..=params.jitter)
        } else {
            0.0
        }
    });
    let base: Vec<[f64; 3]> = BASE_POSE
        .iter()
        .map(|j| [j.xy[0] + offset[0], j.xy[1] + offset[1], params.depth + offset[2]])
        .collect();
    let phase0: f64 = rng.random_range(0.0..TAU);
    let left_lag: f64 = rng.random_range(0.25..0.75) * TAU;
    let noise = Normal::new(0.0, params.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let omega = TAU / params.period;

    let frames = (0..length)
        .map(|t| {
            let tf = t as f64;
            let joints = BASE_POSE.iter().zip(&base).map(|(j, &p)| {
                let coords = match kind {
                    MotionKind::Constant => p,
                    MotionKind::LinearDrift => std::array::from_fn(|a| p[a] + tf * params.velocity[a]),
                    MotionKind::SinusoidalLimb | MotionKind::NoisySinusoid => {
                        let gain = params.amplitude * j.gain;
                        let lag = if j.lagged { left_lag } else { 0.0 };
                        let phi = omega * tf + phase0 + lag - 0.2 * f64::from(j.link);
                        let mut q = [
                            p[0] + 0.5 * gain * phi.cos(),
                            p[1] + gain * phi.sin(),
                            p[2] + 0.3 * gain * (phi + 1.0).sin(),
                        ];
                        if kind == MotionKind::NoisySinusoid && params.noise_std > 0.0 {
                            for c in &mut q {
                                *c += noise.sample(&mut rng);
                            }
                        }
                        q
                    }
                };
                (j.id, coords)
            });
            SkeletonFrame::with_joints(t as u64, joints.collect::<Vec<_>>())
        })
        .collect();
    let mut seq = SkeletonSequence::new(format!("synthetic:{kind}:{seed}"), frames);
    seq.action = Some(kind.to_string());
    Ok(seq)
}

/// `count` sequences whose seeds are drawn from one master seed.
pub fn synthetic_dataset(
    kind: MotionKind,
    params: &MotionParams,
    count: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<SkeletonSequence>> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| synthetic_motion(kind, params, length, master.next_u64()))
        .collect()
}
