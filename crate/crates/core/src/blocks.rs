//! Gated convolutional building blocks.
//!
//! * MU: `g1 ⊙ tanh(g2 ⊙ x + g3 ⊙ u)` with `g_i = σ(W_i ∗ x)` and
//!   `u = tanh(W_4 ∗ x)`, all 3×3 convolutions at a fixed channel count.
//! * RMB: `x + expand(MU(MU(reduce(x))))`, where `reduce`/`expand` are 1×1
//!   convolutions halving and restoring the channel count.
//! * CMU: two consecutive inputs; the earlier one goes through two cascaded
//!   MUs, the later one through a single MU, and the sum `s` is emitted as
//!   `σ(W_o ∗ s) ⊙ tanh(s)`.
//!
//! Weight structs are generic over their leaves so the same tree can hold
//! tensors or tape node ids.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::params::{bind, join, ParamTree};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<P = Tensor> {
    pub kernel: P,
    pub bias: P,
}

impl ConvWeights {
    /// Glorot-uniform kernel, `U[-s, s]` with `s = sqrt(6 / ((c_in + c_out)·k·k))`;
    /// zero bias.
    pub fn init<R: Rng + ?Sized>(c_out: usize, c_in: usize, k: usize, rng: &mut R) -> Self {
        let bound = (6.0 / ((c_in + c_out) * k * k) as f64).sqrt();
        Self {
            kernel: Tensor::uniform(&[c_out, c_in, k, k], bound, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[c_out, c_in, k, k]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }
}

impl<P> ParamTree<P> for ConvWeights<P> {
    type Mapped<Q> = ConvWeights<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> ConvWeights<Q> {
        ConvWeights {
            kernel: f(&self.kernel),
            bias: f(&self.bias),
        }
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(join(prefix, "kernel"), &self.kernel);
        f(join(prefix, "bias"), &self.bias);
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        f(join(prefix, "kernel"), &mut self.kernel);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

pub(crate) fn conv(tape: &mut Tape, x: NodeId, w: &ConvWeights<NodeId>) -> Result<NodeId> {
    tape.conv2d(x, w.kernel, w.bias)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MuWeights<P = Tensor> {
    /// W1..W3, each feeding a sigmoid gate.
    pub gates: [ConvWeights<P>; 3],
    /// W4, feeding the tanh candidate.
    pub candidate: ConvWeights<P>,
}

impl MuWeights {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            gates: std::array::from_fn(|_| ConvWeights::init(channels, channels, 3, rng)),
            candidate: ConvWeights::init(channels, channels, 3, rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            gates: std::array::from_fn(|_| ConvWeights::zeros(channels, channels, 3)),
            candidate: ConvWeights::zeros(channels, channels, 3),
        }
    }

    pub fn channels(&self) -> usize {
        self.candidate.out_channels()
    }
}

impl<P> ParamTree<P> for MuWeights<P> {
    type Mapped<Q> = MuWeights<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> MuWeights<Q> {
        MuWeights {
            gates: self.gates.map_leaves(f),
            candidate: self.candidate.map_leaves(f),
        }
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.gates.for_each_leaf(&join(prefix, "gate"), f);
        self.candidate.for_each_leaf(&join(prefix, "candidate"), f);
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.gates.for_each_leaf_mut(&join(prefix, "gate"), f);
        self.candidate.for_each_leaf_mut(&join(prefix, "candidate"), f);
    }
}

pub fn mu_on_tape(tape: &mut Tape, x: NodeId, w: &MuWeights<NodeId>) -> Result<NodeId> {
    let gate = |tape: &mut Tape, cw: &ConvWeights<NodeId>| -> Result<NodeId> {
        let pre = conv(tape, x, cw)?;
        Ok(tape.sigmoid(pre))
    };
    let g1 = gate(tape, &w.gates[0])?;
    let g2 = gate(tape, &w.gates[1])?;
    let g3 = gate(tape, &w.gates[2])?;
    let u_pre = conv(tape, x, &w.candidate)?;
    let u = tape.tanh(u_pre);
    let a = tape.hadamard(g2, x)?;
    let b = tape.hadamard(g3, u)?;
    let s = tape.add(a, b)?;
    let t = tape.tanh(s);
    tape.hadamard(g1, t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmbWeights<P = Tensor> {
    /// 1×1, C → C/2.
    pub reduce: ConvWeights<P>,
    pub units: [MuWeights<P>; 2],
    /// 1×1, C/2 → C.
    pub expand: ConvWeights<P>,
}

impl RmbWeights {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Result<Self> {
        check_even(channels)?;
        let half = channels / 2;
        Ok(Self {
            reduce: ConvWeights::init(half, channels, 1, rng),
            units: [MuWeights::init(half, rng), MuWeights::init(half, rng)],
            expand: ConvWeights::init(channels, half, 1, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce.in_channels()
    }
}

fn check_even(channels: usize) -> Result<()> {
    if channels == 0 || channels % 2 != 0 {
        return Err(Error::Invalid(format!(
            "residual block needs a positive even channel count, got {channels}"
        )));
    }
    Ok(())
}

impl<P> ParamTree<P> for RmbWeights<P> {
    type Mapped<Q> = RmbWeights<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> RmbWeights<Q> {
        RmbWeights {
            reduce: self.reduce.map_leaves(f),
            units: self.units.map_leaves(f),
            expand: self.expand.map_leaves(f),
        }
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.reduce.for_each_leaf(&join(prefix, "reduce"), f);
        self.units.for_each_leaf(&join(prefix, "mu"), f);
        self.expand.for_each_leaf(&join(prefix, "expand"), f);
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.reduce.for_each_leaf_mut(&join(prefix, "reduce"), f);
        self.units.for_each_leaf_mut(&join(prefix, "mu"), f);
        self.expand.for_each_leaf_mut(&join(prefix, "expand"), f);
    }
}

/// The non-residual path `expand(MU(MU(reduce(x))))`.
pub fn rmb_branch_on_tape(tape: &mut Tape, x: NodeId, w: &RmbWeights<NodeId>) -> Result<NodeId> {
    let h = conv(tape, x, &w.reduce)?;
    let h = mu_on_tape(tape, h, &w.units[0])?;
    let h = mu_on_tape(tape, h, &w.units[1])?;
    conv(tape, h, &w.expand)
}

pub fn rmb_on_tape(tape: &mut Tape, x: NodeId, w: &RmbWeights<NodeId>) -> Result<NodeId> {
    let branch = rmb_branch_on_tape(tape, x, w)?;
    tape.add(x, branch)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmuWeights<P = Tensor> {
    /// Cascade applied to the earlier frame.
    pub left: [MuWeights<P>; 2],
    /// Single unit applied to the later frame.
    pub right: MuWeights<P>,
    pub output_gate: ConvWeights<P>,
}

impl CmuWeights {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            left: [MuWeights::init(channels, rng), MuWeights::init(channels, rng)],
            right: MuWeights::init(channels, rng),
            output_gate: ConvWeights::init(channels, channels, 3, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.output_gate.out_channels()
    }
}

impl<P> ParamTree<P> for CmuWeights<P> {
    type Mapped<Q> = CmuWeights<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> CmuWeights<Q> {
        CmuWeights {
            left: self.left.map_leaves(f),
            right: self.right.map_leaves(f),
            output_gate: self.output_gate.map_leaves(f),
        }
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.left.for_each_leaf(&join(prefix, "left"), f);
        self.right.for_each_leaf(&join(prefix, "right"), f);
        self.output_gate.for_each_leaf(&join(prefix, "output_gate"), f);
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.left.for_each_leaf_mut(&join(prefix, "left"), f);
        self.right.for_each_leaf_mut(&join(prefix, "right"), f);
        self.output_gate
            .for_each_leaf_mut(&join(prefix, "output_gate"), f);
    }
}

pub fn cmu_on_tape(
    tape: &mut Tape,
    left: NodeId,
    right: NodeId,
    w: &CmuWeights<NodeId>,
) -> Result<NodeId> {
    let (ls, rs) = (tape.value(left).shape(), tape.value(right).shape());
    if ls != rs {
        return Err(shape_err("cmu", format!("{ls:?} vs {rs:?}")));
    }
    let hl = mu_on_tape(tape, left, &w.left[0])?;
    let hl = mu_on_tape(tape, hl, &w.left[1])?;
    let hr = mu_on_tape(tape, right, &w.right)?;
    let s = tape.add(hl, hr)?;
    let gate_pre = conv(tape, s, &w.output_gate)?;
    let gate = tape.sigmoid(gate_pre);
    let t = tape.tanh(s);
    tape.hadamard(gate, t)
}

pub fn mu_forward(x: &Tensor, w: &MuWeights) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let wb = bind(w, &mut tape);
    let out = mu_on_tape(&mut tape, xi, &wb)?;
    Ok(tape.value(out).clone())
}

pub fn rmb_forward(x: &Tensor, w: &RmbWeights) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let wb = bind(w, &mut tape);
    let out = rmb_on_tape(&mut tape, xi, &wb)?;
    Ok(tape.value(out).clone())
}

pub fn cmu_forward(left: &Tensor, right: &Tensor, w: &CmuWeights) -> Result<Tensor> {
    let mut tape = Tape::new();
    let l = tape.leaf(left.clone());
    let r = tape.leaf(right.clone());
    let wb = bind(w, &mut tape);
    let out = cmu_on_tape(&mut tape, l, r, &wb)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Parameterized;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, 1.0, &mut rng(seed))
    }

    // Straight-line oracle: per-pixel convolution sums and the gating formula
    // written out with plain loops, sharing nothing with the tape.
    fn conv_ref(x: &Tensor, w: &ConvWeights) -> Vec<f64> {
        let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let c_out = w.out_channels();
        let k = w.kernel.shape()[2] as isize;
        let p = k / 2;
        let mut out = vec![0.0; c_out * h * wd];
        for co in 0..c_out {
            for y in 0..h as isize {
                for xx in 0..wd as isize {
                    let mut acc = w.bias.data()[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y + ky - p, xx + kx - p);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                let kidx = ((co * c_in + ci) * k as usize + ky as usize)
                                    * k as usize
                                    + kx as usize;
                                let xidx = (ci * h + sy as usize) * wd + sx as usize;
                                acc += w.kernel.data()[kidx] * x.data()[xidx];
                            }
                        }
                    }
                    out[(co * h + y as usize) * wd + xx as usize] = acc;
                }
            }
        }
        out
    }

    fn mu_ref(x: &Tensor, w: &MuWeights) -> Vec<f64> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let g1 = conv_ref(x, &w.gates[0]);
        let g2 = conv_ref(x, &w.gates[1]);
        let g3 = conv_ref(x, &w.gates[2]);
        let u = conv_ref(x, &w.candidate);
        (0..x.len())
            .map(|i| sig(g1[i]) * (sig(g2[i]) * x.data()[i] + sig(g3[i]) * u[i].tanh()).tanh())
            .collect()
    }

    #[test]
    fn mu_zero_weights_zero_input_is_zero() {
        let x = Tensor::zeros(&[4, 18, 3]);
        let out = mu_forward(&x, &MuWeights::zeros(4)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mu_matches_straight_line_oracle() {
        let w = MuWeights::init(3, &mut rng(1));
        let x = random(&[3, 18, 3], 2);
        let out = mu_forward(&x, &w).unwrap();
        for (a, e) in out.data().iter().zip(mu_ref(&x, &w)) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn mu_output_bounded_for_large_inputs() {
        let w = MuWeights::init(2, &mut rng(3));
        let x = Tensor::uniform(&[2, 6, 3], 1e6, &mut rng(4));
        let out = mu_forward(&x, &w).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn mu_rejects_channel_mismatch() {
        let w = MuWeights::init(4, &mut rng(0));
        let err = mu_forward(&Tensor::zeros(&[3, 18, 3]), &w).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn rmb_identity_when_expand_is_zero() {
        let mut w = RmbWeights::init(8, &mut rng(5)).unwrap();
        w.expand = ConvWeights::zeros(8, 4, 1);
        let x = random(&[8, 18, 3], 6);
        assert_eq!(rmb_forward(&x, &w).unwrap(), x);
    }

    #[test]
    fn rmb_preserves_shape_and_rejects_odd_channels() {
        let w = RmbWeights::init(16, &mut rng(7)).unwrap();
        let x = random(&[16, 18, 3], 8);
        assert_eq!(rmb_forward(&x, &w).unwrap().shape(), &[16, 18, 3]);
        assert!(RmbWeights::init(15, &mut rng(7)).is_err());
        assert!(RmbWeights::init(0, &mut rng(7)).is_err());
    }

    #[test]
    fn rmb_residual_equals_standalone_branch() {
        let w = RmbWeights::init(6, &mut rng(9)).unwrap();
        let x = random(&[6, 7, 3], 10);
        let out = rmb_forward(&x, &w).unwrap();

        let reduced = Tensor::new(vec![3, 7, 3], conv_ref(&x, &w.reduce)).unwrap();
        let h = Tensor::new(vec![3, 7, 3], mu_ref(&reduced, &w.units[0])).unwrap();
        let h = Tensor::new(vec![3, 7, 3], mu_ref(&h, &w.units[1])).unwrap();
        let branch = conv_ref(&h, &w.expand);
        for i in 0..x.len() {
            assert!(((out.data()[i] - x.data()[i]) - branch[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cmu_zero_case_and_shape() {
        let zero = Tensor::zeros(&[4, 18, 3]);
        let w = CmuWeights {
            left: [MuWeights::zeros(4), MuWeights::zeros(4)],
            right: MuWeights::zeros(4),
            output_gate: ConvWeights::zeros(4, 4, 3),
        };
        let out = cmu_forward(&zero, &zero, &w).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let w = CmuWeights::init(16, &mut rng(11));
        let a = random(&[16, 18, 3], 12);
        let b = random(&[16, 18, 3], 13);
        assert_eq!(cmu_forward(&a, &b, &w).unwrap().shape(), &[16, 18, 3]);
        assert!(cmu_forward(&a, &random(&[16, 17, 3], 1), &w).is_err());
    }

    #[test]
    fn cmu_cascade_runs_on_left_input() {
        let w = CmuWeights::init(3, &mut rng(14));
        let a = random(&[3, 5, 3], 15);
        let b = random(&[3, 5, 3], 16);
        let out = cmu_forward(&a, &b, &w).unwrap();

        let hl = Tensor::new(vec![3, 5, 3], mu_ref(&a, &w.left[0])).unwrap();
        let hl = mu_ref(&hl, &w.left[1]);
        let hr = mu_ref(&b, &w.right);
        let s: Vec<f64> = hl.iter().zip(&hr).map(|(p, q)| p + q).collect();
        let st = Tensor::new(vec![3, 5, 3], s.clone()).unwrap();
        let gate = conv_ref(&st, &w.output_gate);
        for i in 0..s.len() {
            let e = (1.0 / (1.0 + (-gate[i]).exp())) * s[i].tanh();
            assert!((out.data()[i] - e).abs() < 1e-12);
        }

        let swapped = cmu_forward(&b, &a, &w).unwrap();
        assert!(swapped.max_abs_diff(&out).unwrap() > 1e-6);
    }

    #[test]
    fn cmu_zeroed_right_unit_reduces_to_fixed_squash() {
        // With all right-unit weights zero every gate is 0.5 and the candidate
        // is 0, so that branch collapses to 0.5·tanh(0.5·x_right); the left
        // cascade never sees x_right.
        let mut w = CmuWeights::init(4, &mut rng(17));
        w.right = MuWeights::zeros(4);
        let a = random(&[4, 18, 3], 18);
        let b = random(&[4, 18, 3], 19);
        let out = cmu_forward(&a, &b, &w).unwrap();

        let hl = Tensor::new(vec![4, 18, 3], mu_ref(&a, &w.left[0])).unwrap();
        let hl = mu_ref(&hl, &w.left[1]);
        let s: Vec<f64> = hl
            .iter()
            .zip(b.data())
            .map(|(p, q)| p + 0.5 * (0.5 * q).tanh())
            .collect();
        let gate = conv_ref(&Tensor::new(vec![4, 18, 3], s.clone()).unwrap(), &w.output_gate);
        for i in 0..s.len() {
            let e = (1.0 / (1.0 + (-gate[i]).exp())) * s[i].tanh();
            assert!((out.data()[i] - e).abs() < 1e-12);
        }

        let mut tape = Tape::new();
        let l = tape.leaf(a.clone());
        let r = tape.leaf(b.clone());
        let wb = bind(&w, &mut tape);
        let hl = mu_on_tape(&mut tape, l, &wb.left[0]).unwrap();
        let hl = mu_on_tape(&mut tape, hl, &wb.left[1]).unwrap();
        assert!(!tape.depends_on(hl, r));
        assert!(tape.depends_on(hl, l));
    }

    #[test]
    fn parameter_names_are_hierarchical() {
        let w = RmbWeights::init(4, &mut rng(0)).unwrap();
        let names: Vec<String> = w.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "reduce.kernel");
        assert!(names.contains(&"mu.1.gate.2.bias".to_string()));
        assert_eq!(names.last().unwrap(), "expand.bias");
        assert_eq!(names.len(), 2 + 2 * 8 + 2);
    }
}
