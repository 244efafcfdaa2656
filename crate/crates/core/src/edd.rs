//! Encoder-dynamics-decoder forecaster.
//!
//! * Encoder: a 3×3 input projection (1 → C) followed by `encoder_blocks`
//!   residual blocks. One weight set, applied to every observed frame.
//! * Dynamics: a pairwise reduction tree over the `m` frame features. Layer
//!   `l` merges neighbours left to right with that layer's CMU (earlier frame
//!   on the left); an odd trailing feature is carried up unchanged. After
//!   `ceil(log2 m)` layers one global feature remains.
//! * Decoders: `K` independent stacks of `decoder_blocks` residual blocks and
//!   a 3×3 output projection (C → 1), one stack per future frame. All `K`
//!   frames come out of a single pass and none is fed back as input.
//!
//! [`EddModel::forward_recursive`] is the chained ablation: it reuses decoder
//! 0 to emit one frame at a time and slides its window over its own outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{cmu_on_tape, conv, rmb_on_tape, CmuWeights, ConvWeights, RmbWeights};
use crate::error::{shape_err, Error, Result};
use crate::network::{Network, Recorded};
use crate::params::{bind, join, ParamTree, Parameterized};
use crate::repr::{PseudoImage, PseudoImageSequence};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EddConfig {
    /// Observed frames `m`.
    pub input_len: usize,
    /// Predicted frames `K`.
    pub output_len: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub channels: usize,
    pub joints: usize,
}

impl Default for EddConfig {
    fn default() -> Self {
        Self::g3d()
    }
}

impl EddConfig {
    pub fn g3d() -> Self {
        Self {
            input_len: 10,
            output_len: 10,
            encoder_blocks: 2,
            decoder_blocks: 3,
            channels: 16,
            joints: 18,
        }
    }

    pub fn fntu() -> Self {
        Self {
            encoder_blocks: 4,
            decoder_blocks: 6,
            ..Self::g3d()
        }
    }

    /// Desk-scale preset for smoke tests.
    pub fn tiny() -> Self {
        Self {
            encoder_blocks: 2,
            decoder_blocks: 2,
            channels: 8,
            ..Self::g3d()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "g3d" => Ok(Self::g3d()),
            "fntu" => Ok(Self::fntu()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Invalid(format!(
                "unknown preset `{other}` (expected g3d, fntu or tiny)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Invalid(msg));
        if self.input_len < 2 {
            return fail(format!("input_len must be at least 2, got {}", self.input_len));
        }
        if self.output_len < 1 {
            return fail("output_len must be at least 1".into());
        }
        if self.encoder_blocks < 1 || self.decoder_blocks < 1 {
            return fail("encoder_blocks and decoder_blocks must be at least 1".into());
        }
        if self.channels == 0 || self.channels % 2 != 0 {
            return fail(format!("channels must be positive and even, got {}", self.channels));
        }
        if self.joints == 0 {
            return fail("joints must be positive".into());
        }
        Ok(())
    }

    pub fn dynamics_layers(&self) -> usize {
        dynamics_layers(self.input_len)
    }
}

/// `ceil(log2 m)` for `m ≥ 1`.
pub fn dynamics_layers(m: usize) -> usize {
    reduction_widths(m).len() - 1
}

/// Feature count at each level of the reduction tree, from `m` down to 1.
pub fn reduction_widths(m: usize) -> Vec<usize> {
    let mut widths = vec![m];
    let mut w = m;
    while w > 1 {
        w = w.div_ceil(2);
        widths.push(w);
    }
    widths
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights<P = Tensor> {
    pub blocks: Vec<RmbWeights<P>>,
    /// 3×3, C → 1.
    pub output: ConvWeights<P>,
}

impl<P> ParamTree<P> for DecoderWeights<P> {
    type Mapped<Q> = DecoderWeights<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> DecoderWeights<Q> {
        DecoderWeights {
            blocks: self.blocks.map_leaves(f),
            output: self.output.map_leaves(f),
        }
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.blocks.for_each_leaf(&join(prefix, "rmb"), f);
        self.output.for_each_leaf(&join(prefix, "output"), f);
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.blocks.for_each_leaf_mut(&join(prefix, "rmb"), f);
        self.output.for_each_leaf_mut(&join(prefix, "output"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EddWeights<P = Tensor> {
    /// 3×3, 1 → C.
    pub input_proj: ConvWeights<P>,
    pub encoder: Vec<RmbWeights<P>>,
    /// One CMU weight set per tree layer.
    pub dynamics: Vec<CmuWeights<P>>,
    /// One stack per predicted frame.
    pub decoders: Vec<DecoderWeights<P>>,
}

impl<P> ParamTree<P> for EddWeights<P> {
    type Mapped<Q> = EddWeights<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> EddWeights<Q> {
        EddWeights {
            input_proj: self.input_proj.map_leaves(f),
            encoder: self.encoder.map_leaves(f),
            dynamics: self.dynamics.map_leaves(f),
            decoders: self.decoders.map_leaves(f),
        }
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.input_proj.for_each_leaf(&join(prefix, "input_proj"), f);
        self.encoder.for_each_leaf(&join(prefix, "encoder"), f);
        self.dynamics.for_each_leaf(&join(prefix, "dynamics"), f);
        self.decoders.for_each_leaf(&join(prefix, "decoder"), f);
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.input_proj
            .for_each_leaf_mut(&join(prefix, "input_proj"), f);
        self.encoder.for_each_leaf_mut(&join(prefix, "encoder"), f);
        self.dynamics.for_each_leaf_mut(&join(prefix, "dynamics"), f);
        self.decoders.for_each_leaf_mut(&join(prefix, "decoder"), f);
    }
}

/// Work done by one call, for comparing the one-shot and chained modes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    pub encoder_passes: usize,
    pub dynamics_evaluations: usize,
    pub cmu_applications: usize,
    pub decoder_passes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EddModel {
    config: EddConfig,
    pub weights: EddWeights,
}

impl EddModel {
    pub fn new(config: EddConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let input_proj = ConvWeights::init(c, 1, 3, &mut rng);
        let encoder = (0..config.encoder_blocks)
            .map(|_| RmbWeights::init(c, &mut rng))
            .collect::<Result<_>>()?;
        let dynamics = (0..config.dynamics_layers())
            .map(|_| CmuWeights::init(c, &mut rng))
            .collect();
        let decoders = (0..config.output_len)
            .map(|_| {
                Ok(DecoderWeights {
                    blocks: (0..config.decoder_blocks)
                        .map(|_| RmbWeights::init(c, &mut rng))
                        .collect::<Result<_>>()?,
                    output: ConvWeights::init(1, c, 3, &mut rng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            weights: EddWeights {
                input_proj,
                encoder,
                dynamics,
                decoders,
            },
        })
    }

    pub fn config(&self) -> &EddConfig {
        &self.config
    }

    fn check_images(&self, images: &[PseudoImage]) -> Result<()> {
        self.check_window(images)
    }

    fn feature_shape(&self) -> [usize; 3] {
        [self.config.channels, self.config.joints, 3]
    }

    fn check_feature(&self, t: &Tensor) -> Result<()> {
        if t.shape() != self.feature_shape() {
            return Err(shape_err(
                "edd",
                format!(
                    "feature must be {:?}, got {:?}",
                    self.feature_shape(),
                    t.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Per-frame features `RMB^{l_e}(proj(image))`, all with the shared weights.
    pub fn encode(&self, images: &[PseudoImage]) -> Result<Vec<Tensor>> {
        self.check_images(images)?;
        let mut tape = Tape::new();
        let w = bind(&self.weights, &mut tape);
        let feats = encode_on_tape(&mut tape, &w, images)?;
        Ok(feats.iter().map(|&f| tape.value(f).clone()).collect())
    }

    /// Reduces `m` frame features to the global temporal feature.
    pub fn dynamics(&self, features: &[Tensor]) -> Result<Tensor> {
        if features.len() != self.config.input_len {
            return Err(Error::Invalid(format!(
                "expected {} features, got {}",
                self.config.input_len,
                features.len()
            )));
        }
        for f in features {
            self.check_feature(f)?;
        }
        let mut tape = Tape::new();
        let w = bind(&self.weights, &mut tape);
        let ids: Vec<NodeId> = features.iter().map(|f| tape.leaf(f.clone())).collect();
        let mut stats = ForwardStats::default();
        let g = dynamics_on_tape(&mut tape, &w, &ids, &mut stats)?;
        Ok(tape.value(g).clone())
    }

    /// Runs every decoder on the global feature.
    pub fn decode_all(&self, global: &Tensor) -> Result<PseudoImageSequence> {
        self.check_feature(global)?;
        let mut tape = Tape::new();
        let w = bind(&self.weights, &mut tape);
        let g = tape.leaf(global.clone());
        let frames = decode_on_tape(&mut tape, &w, g, 0..self.config.output_len)?;
        frames
            .iter()
            .map(|&f| PseudoImage::from_tensor(tape.value(f)))
            .collect()
    }

    /// All `K` future frames in one pass.
    pub fn forward(&self, images: &[PseudoImage]) -> Result<PseudoImageSequence> {
        Ok(self.forward_with_stats(images)?.0)
    }

    pub fn forward_with_stats(
        &self,
        images: &[PseudoImage],
    ) -> Result<(PseudoImageSequence, ForwardStats)> {
        self.check_images(images)?;
        let mut tape = Tape::new();
        let w = bind(&self.weights, &mut tape);
        let mut stats = ForwardStats::default();
        let frames = forward_on_tape(
            &mut tape,
            &w,
            images,
            0..self.config.output_len,
            &mut stats,
        )?;
        let out = frames
            .iter()
            .map(|&f| PseudoImage::from_tensor(tape.value(f)))
            .collect::<Result<_>>()?;
        Ok((out, stats))
    }

    /// Chained prediction: decoder 0 emits one frame per step from the latest
    /// `m` frames, and each emitted frame joins the window for later steps.
    pub fn forward_recursive(
        &self,
        images: &[PseudoImage],
        steps: usize,
    ) -> Result<PseudoImageSequence> {
        Ok(self.rollout(images, steps, |_, _| {})?.0)
    }

    /// [`forward_recursive`](Self::forward_recursive) with a hook that may
    /// edit each emitted frame before it is appended to the window.
    pub fn rollout(
        &self,
        images: &[PseudoImage],
        steps: usize,
        mut edit: impl FnMut(usize, &mut PseudoImage),
    ) -> Result<(PseudoImageSequence, ForwardStats)> {
        self.check_images(images)?;
        let m = self.config.input_len;
        let mut window: Vec<PseudoImage> = images.to_vec();
        let mut out = Vec::with_capacity(steps);
        let mut stats = ForwardStats::default();
        for step in 0..steps {
            let mut tape = Tape::new();
            let w = bind(&self.weights, &mut tape);
            let frames = forward_on_tape(&mut tape, &w, &window[window.len() - m..], 0..1, &mut stats)?;
            let mut next = PseudoImage::from_tensor(tape.value(frames[0]))?;
            edit(step, &mut next);
            window.push(next.clone());
            out.push(next);
        }
        Ok((out, stats))
    }
}

fn encode_on_tape(
    tape: &mut Tape,
    w: &EddWeights<NodeId>,
    images: &[PseudoImage],
) -> Result<Vec<NodeId>> {
    images
        .iter()
        .map(|img| {
            let x = tape.leaf(img.to_tensor());
            let mut h = conv(tape, x, &w.input_proj)?;
            for block in &w.encoder {
                h = rmb_on_tape(tape, h, block)?;
            }
            Ok(h)
        })
        .collect()
}

fn dynamics_on_tape(
    tape: &mut Tape,
    w: &EddWeights<NodeId>,
    features: &[NodeId],
    stats: &mut ForwardStats,
) -> Result<NodeId> {
    if features.len() < 2 {
        return Err(Error::Invalid(format!(
            "dynamics needs at least 2 frames, got {}",
            features.len()
        )));
    }
    let mut level = features.to_vec();
    for cmu in &w.dynamics {
        if level.len() == 1 {
            break;
        }
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            match *pair {
                [left, right] => {
                    next.push(cmu_on_tape(tape, left, right, cmu)?);
                    stats.cmu_applications += 1;
                }
                [carry] => next.push(carry),
                _ => unreachable!(),
            }
        }
        level = next;
    }
    if level.len() != 1 {
        return Err(Error::Invalid(format!(
            "{} dynamics layers cannot reduce {} frames",
            w.dynamics.len(),
            features.len()
        )));
    }
    stats.dynamics_evaluations += 1;
    Ok(level[0])
}

fn decode_on_tape(
    tape: &mut Tape,
    w: &EddWeights<NodeId>,
    global: NodeId,
    which: std::ops::Range<usize>,
) -> Result<Vec<NodeId>> {
    which
        .map(|k| {
            let dec = &w.decoders[k];
            let mut h = global;
            for block in &dec.blocks {
                h = rmb_on_tape(tape, h, block)?;
            }
            conv(tape, h, &dec.output)
        })
        .collect()
}

fn forward_on_tape(
    tape: &mut Tape,
    w: &EddWeights<NodeId>,
    images: &[PseudoImage],
    decoders: std::ops::Range<usize>,
    stats: &mut ForwardStats,
) -> Result<Vec<NodeId>> {
    let feats = encode_on_tape(tape, w, images)?;
    stats.encoder_passes += feats.len();
    let global = dynamics_on_tape(tape, w, &feats, stats)?;
    stats.decoder_passes += decoders.len();
    decode_on_tape(tape, w, global, decoders)
}

impl Parameterized for EddModel {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.weights.for_each_leaf("", f);
    }

    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.weights.for_each_leaf_mut("", f);
    }
}

impl Network for EddModel {
    fn input_len(&self) -> usize {
        self.config.input_len
    }

    fn output_len(&self) -> usize {
        self.config.output_len
    }

    fn joints(&self) -> usize {
        self.config.joints
    }

    fn record(&self, tape: &mut Tape, input: &[PseudoImage]) -> Result<Recorded> {
        self.check_images(input)?;
        let w = bind(&self.weights, tape);
        let params = w.leaves().into_iter().copied().collect();
        let mut stats = ForwardStats::default();
        let frames = forward_on_tape(tape, &w, input, 0..self.config.output_len, &mut stats)?;
        let prediction = tape.concat(&frames)?;
        Ok(Recorded { prediction, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn images(m: usize, seed: u64) -> Vec<PseudoImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| {
                PseudoImage::new(
                    (0..18)
                        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..3.0)])
                        .collect(),
                )
            })
            .collect()
    }

    fn small(m: usize, k: usize) -> EddConfig {
        EddConfig {
            input_len: m,
            output_len: k,
            encoder_blocks: 1,
            decoder_blocks: 1,
            channels: 4,
            joints: 18,
        }
    }

    #[test]
    fn reduction_tree_arithmetic() {
        assert_eq!(reduction_widths(10), vec![10, 5, 3, 2, 1]);
        assert_eq!(dynamics_layers(10), 4);
        assert_eq!(dynamics_layers(8), 3);
        assert_eq!(dynamics_layers(2), 1);
        assert_eq!(dynamics_layers(3), 2);
        assert_eq!(dynamics_layers(17), 5);
    }

    #[test]
    fn config_validation() {
        assert!(EddConfig::g3d().validate().is_ok());
        let bad = [
            EddConfig { input_len: 1, ..EddConfig::tiny() },
            EddConfig { output_len: 0, ..EddConfig::tiny() },
            EddConfig { encoder_blocks: 0, ..EddConfig::tiny() },
            EddConfig { decoder_blocks: 0, ..EddConfig::tiny() },
            EddConfig { channels: 7, ..EddConfig::tiny() },
        ];
        for c in bad {
            assert!(EddModel::new(c, 0).is_err(), "{c:?}");
        }
        assert_eq!(EddConfig::preset("fntu").unwrap().decoder_blocks, 6);
        assert!(EddConfig::preset("huge").is_err());
    }

    #[test]
    fn weight_sets_match_structure() {
        let model = EddModel::new(EddConfig::tiny(), 1).unwrap();
        assert_eq!(model.weights.encoder.len(), 2);
        assert_eq!(model.weights.dynamics.len(), 4);
        assert_eq!(model.weights.decoders.len(), 10);
        assert!(model.weights.decoders.iter().all(|d| d.blocks.len() == 2));
    }

    #[test]
    fn m_two_uses_single_cmu() {
        let model = EddModel::new(small(2, 1), 2).unwrap();
        let imgs = images(2, 3);
        let feats = model.encode(&imgs).unwrap();
        let global = model.dynamics(&feats).unwrap();
        let direct = crate::blocks::cmu_forward(&feats[0], &feats[1], &model.weights.dynamics[0]).unwrap();
        assert_eq!(global, direct);
    }

    #[test]
    fn cmu_application_counts() {
        for (m, expected) in [(2, 1), (8, 7), (10, 9), (5, 4)] {
            let model = EddModel::new(small(m, 2), 4).unwrap();
            let (_, stats) = model.forward_with_stats(&images(m, 5)).unwrap();
            assert_eq!(stats.cmu_applications, expected, "m = {m}");
            assert_eq!(stats.dynamics_evaluations, 1);
        }
    }

    #[test]
    fn dynamics_rejects_short_input() {
        let model = EddModel::new(small(2, 1), 0).unwrap();
        let f = Tensor::zeros(&[4, 18, 3]);
        assert!(model.dynamics(&[f]).is_err());
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let model = EddModel::new(small(4, 1), 0).unwrap();
        assert!(model.encode(&images(3, 0)).is_err());
        assert!(model.forward(&images(5, 0)).is_err());
    }

    #[test]
    fn encoding_is_frame_local_and_shared() {
        let model = EddModel::new(small(4, 1), 6).unwrap();
        let mut imgs = images(4, 7);
        imgs[2] = imgs[0].clone();
        let a = model.encode(&imgs).unwrap();
        assert_eq!(a[0], a[2]);
        imgs[1].rows_mut()[5][2] += 0.25;
        let b = model.encode(&imgs).unwrap();
        for j in 0..4 {
            assert_eq!(a[j] == b[j], j != 1, "frame {j}");
        }
    }

    #[test]
    fn recursive_single_step_equals_first_decoder() {
        let model = EddModel::new(small(4, 3), 8).unwrap();
        let imgs = images(4, 9);
        let one_shot = model.forward(&imgs).unwrap();
        let chained = model.forward_recursive(&imgs, 1).unwrap();
        assert_eq!(chained.len(), 1);
        assert_eq!(chained[0], one_shot[0]);
    }

    #[test]
    fn recursive_perturbation_propagates_forward() {
        let model = EddModel::new(small(4, 1), 10).unwrap();
        let imgs = images(4, 11);
        let (base, _) = model.rollout(&imgs, 6, |_, _| {}).unwrap();
        let t = 2;
        let (bumped, _) = model
            .rollout(&imgs, 6, |step, im| {
                if step == t {
                    im.rows_mut()[3][0] += 0.5;
                }
            })
            .unwrap();
        for s in 0..6 {
            if s < t {
                assert_eq!(base[s], bumped[s]);
            } else {
                assert_ne!(base[s], bumped[s], "step {s}");
            }
        }
    }

    #[test]
    fn recursive_work_grows_with_horizon() {
        let model = EddModel::new(small(4, 5), 12).unwrap();
        let imgs = images(4, 13);
        let (_, one) = model.forward_with_stats(&imgs).unwrap();
        assert_eq!(one.dynamics_evaluations, 1);
        for k in [1, 3, 5] {
            let (_, st) = model.rollout(&imgs, k, |_, _| {}).unwrap();
            assert_eq!(st.dynamics_evaluations, k);
            assert_eq!(st.encoder_passes, 4 * k);
        }
    }
}
