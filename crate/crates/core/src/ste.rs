//! Fully connected baseline forecaster.
//!
//! The `m` input images are flattened frame-major (`frame, joint row, axis`)
//! into one vector and pushed through an affine stack with `tanh` between
//! layers and an identity output. With `m = K = 10`, `N = 18` and hidden
//! widths 300, 100, 300 the layer sizes are 540 → 300 → 100 → 300 → 540.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, Recorded};
use crate::params::{bind, join, ParamTree, Parameterized};
use crate::repr::PseudoImage;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteConfig {
    pub input_len: usize,
    pub output_len: usize,
    pub joints: usize,
    pub hidden: Vec<usize>,
}

impl Default for SteConfig {
    fn default() -> Self {
        Self {
            input_len: 10,
            output_len: 10,
            joints: 18,
            hidden: vec![300, 100, 300],
        }
    }
}

impl SteConfig {
    pub fn input_width(&self) -> usize {
        self.input_len * self.joints * 3
    }

    pub fn output_width(&self) -> usize {
        self.output_len * self.joints * 3
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(&self.hidden);
        w.push(self.output_width());
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len == 0 || self.joints == 0 {
            return Err(Error::Invalid(
                "input_len, output_len and joints must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Invalid("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Scalar parameter count, `Σ (in + 1)·out` over layers.
    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineWeights<P = Tensor> {
    /// `out × in`.
    pub weight: P,
    pub bias: P,
}

impl<P> ParamTree<P> for AffineWeights<P> {
    type Mapped<Q> = AffineWeights<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> AffineWeights<Q> {
        AffineWeights {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteModel {
    config: SteConfig,
    pub layers: Vec<AffineWeights>,
}

impl SteModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: SteConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .widths()
            .windows(2)
            .map(|w| AffineWeights {
                weight: Tensor::uniform(&[w[1], w[0]], (6.0 / (w[0] + w[1]) as f64).sqrt(), &mut rng),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &SteConfig {
        &self.config
    }

    /// First-layer pre-activation `W_1 x + b_1` for a window.
    pub fn first_layer_preactivation(&self, input: &[PseudoImage]) -> Result<Tensor> {
        self.check_window(input)?;
        let mut tape = Tape::new();
        let w = bind(&self.layers[0], &mut tape);
        let x = flatten(&mut tape, input)?;
        let z = tape.affine(x, w.weight, w.bias)?;
        Ok(tape.value(z).clone())
    }

    /// Copy whose first layer reads joint row `perm[i]` of the original
    /// layout from row `i`. Feeding it inputs permuted the same way
    /// (`new.rows[i] = old.rows[perm[i]]`) reproduces the original outputs.
    pub fn with_permuted_input_rows(&self, perm: &[usize]) -> Result<Self> {
        let n = self.config.joints;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Invalid(format!(
                "expected a permutation of 0..{n}, got {perm:?}"
            )));
        }
        let mut out = self.clone();
        let cols = self.config.input_width();
        let old = self.layers[0].weight.data();
        let new = out.layers[0].weight.data_mut();
        for r in 0..self.layers[0].weight.shape()[0] {
            let base = r * cols;
            for f in 0..self.config.input_len {
                for (i, &p) in perm.iter().enumerate() {
                    for a in 0..3 {
                        new[base + (f * n + i) * 3 + a] = old[base + (f * n + p) * 3 + a];
                    }
                }
            }
        }
        Ok(out)
    }
}

fn flatten(tape: &mut Tape, input: &[PseudoImage]) -> Result<NodeId> {
    let frames: Vec<NodeId> = input.iter().map(|im| tape.leaf(im.to_tensor())).collect();
    tape.concat(&frames)
}

impl Parameterized for SteModel {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.layers.for_each_leaf("layer", f);
    }

    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.layers.for_each_leaf_mut("layer", f);
    }
}

impl Network for SteModel {
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
        self.check_window(input)?;
        let w = bind(&self.layers, tape);
        let params = w.leaves().into_iter().copied().collect();
        let mut h = flatten(tape, input)?;
        let last = w.len() - 1;
        for (i, layer) in w.iter().enumerate() {
            h = tape.affine(h, layer.weight, layer.bias)?;
            if i < last {
                h = tape.tanh(h);
            }
        }
        let prediction = tape.reshape(h, &[self.config.output_len, self.config.joints, 3])?;
        Ok(Recorded { prediction, params })
    }
}
