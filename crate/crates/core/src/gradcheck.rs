//! Central finite-difference checks of every backward rule.
//!
//! Each case samples parameter elements, nudges each by `±eps` and compares
//! `(f(θ+eps) − f(θ−eps)) / 2eps` with the tape gradient using
//! `|a − n| / max(|a|, |n|, floor)`. The floor keeps near-zero gradients
//! from producing huge ratios out of rounding noise.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{cmu_on_tape, mu_on_tape, rmb_on_tape, CmuWeights, ConvWeights, MuWeights, RmbWeights};
use crate::edd::{EddConfig, EddModel};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::network::{clip_loss, loss_and_grad_on, Network};
use crate::params::ParamTree;
use crate::repr::{stack_images, unstack_images, PseudoImage};
use crate::ste::{SteConfig, SteModel};
use crate::tape::{NodeId, OpKind, Tape};
use crate::tensor::Tensor;

pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central difference of `f` along one coordinate of `x`.
pub fn central_difference(
    x: &mut Tensor,
    index: usize,
    eps: f64,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<f64> {
    let orig = x.data()[index];
    x.data_mut()[index] = orig + eps;
    let plus = f(x)?;
    x.data_mut()[index] = orig - eps;
    let minus = f(x)?;
    x.data_mut()[index] = orig;
    Ok((plus - minus) / (2.0 * eps))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Sampled elements per case.
    pub samples: usize,
    pub seed: u64,
    /// Scales the backward rule of one op kind, to confirm the check fails.
    pub fault: Option<(OpKind, f64)>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tolerance: 1e-4,
            samples: 24,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub case: String,
    pub params: Vec<ParamReport>,
    pub samples: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub cases: Vec<CaseReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            writeln!(
                s,
                "{} {}: {} samples, max rel err {:.3e} (tolerance {:.0e})",
                if c.passed { "PASS" } else { "FAIL" },
                c.case,
                c.samples,
                c.max_rel_err,
                self.tolerance
            )
            .unwrap();
            for p in &c.params {
                writeln!(s, "    {:<40} {:>3} samples  max {:.3e}", p.name, p.checked, p.max_rel_err).unwrap();
            }
        }
        s
    }
}

/// Names accepted by [`run_case`], in suite order.
pub const CASES: [&str; 10] = [
    "conv", "l1-loss", "l2-loss", "mu", "rmb", "cmu", "edd-l1", "edd-l2", "ste-l1", "ste-l2",
];

pub fn run_suite(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let cases = CASES
        .iter()
        .map(|name| run_case(name, config))
        .collect::<Result<_>>()?;
    Ok(GradCheckReport {
        tolerance: config.tolerance,
        cases,
    })
}

pub fn run_case(name: &str, cfg: &GradCheckConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ name_salt(name));
    const C: usize = 4;
    let feature = |rng: &mut ChaCha8Rng| Tensor::uniform(&[C, 18, 3], 1.0, rng);
    match name {
        "conv" => {
            let w = randomise(&ConvWeights::init(3, C, 3, &mut rng), &mut rng);
            let x = feature(&mut rng);
            let probe = Tensor::uniform(&[3, 18, 3], 1.0, &mut rng);
            tree_case(name, w, cfg, &mut rng, move |t, w| {
                let xi = t.leaf(x.clone());
                let y = t.conv2d(xi, w.kernel, w.bias)?;
                project(t, y, &probe)
            })
        }
        "l1-loss" | "l2-loss" => {
            let target = Tensor::uniform(&[4, 18, 3], 1.0, &mut rng);
            let pred = offset_from(&target, &mut rng);
            let kind = if name == "l1-loss" { LossKind::L1 } else { LossKind::L2 };
            tree_case(name, Prediction(pred), cfg, &mut rng, move |t, p| {
                let tg = t.leaf(target.clone());
                match kind {
                    LossKind::L1 => t.l1_loss(p.0, tg, 4),
                    LossKind::L2 => t.l2_loss(p.0, tg, 4),
                }
            })
        }
        "mu" => {
            let w = randomise(&MuWeights::init(C, &mut rng), &mut rng);
            let x = feature(&mut rng);
            let probe = feature(&mut rng);
            tree_case(name, w, cfg, &mut rng, move |t, w| {
                let xi = t.leaf(x.clone());
                let y = mu_on_tape(t, xi, w)?;
                project(t, y, &probe)
            })
        }
        "rmb" => {
            let w = randomise(&RmbWeights::init(C, &mut rng)?, &mut rng);
            let x = feature(&mut rng);
            let probe = feature(&mut rng);
            tree_case(name, w, cfg, &mut rng, move |t, w| {
                let xi = t.leaf(x.clone());
                let y = rmb_on_tape(t, xi, w)?;
                project(t, y, &probe)
            })
        }
        "cmu" => {
            let w = randomise(&CmuWeights::init(C, &mut rng), &mut rng);
            let (l, r) = (feature(&mut rng), feature(&mut rng));
            let probe = feature(&mut rng);
            tree_case(name, w, cfg, &mut rng, move |t, w| {
                let (li, ri) = (t.leaf(l.clone()), t.leaf(r.clone()));
                let y = cmu_on_tape(t, li, ri, w)?;
                project(t, y, &probe)
            })
        }
        "edd-l1" | "edd-l2" => {
            let net = EddModel::new(EddConfig::tiny(), rng.random())?;
            let loss = if name == "edd-l1" { LossKind::L1 } else { LossKind::L2 };
            network_case(name, net, loss, cfg, &mut rng)
        }
        "ste-l1" | "ste-l2" => {
            let net = SteModel::new(SteConfig::default(), rng.random())?;
            let loss = if name == "ste-l1" { LossKind::L1 } else { LossKind::L2 };
            network_case(name, net, loss, cfg, &mut rng)
        }
        other => Err(Error::Invalid(format!(
            "unknown gradient check `{other}` (expected one of {})",
            CASES.join(", ")
        ))),
    }
}

/// Stable per-name salt so cases draw independent streams from one seed.
fn name_salt(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// A bare prediction tensor, checked against a fixed target.
struct Prediction<P>(P);

impl<P> ParamTree<P> for Prediction<P> {
    type Mapped<Q> = Prediction<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Prediction<Q> {
        Prediction(f(&self.0))
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(crate::params::join(prefix, "prediction"), &self.0);
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        f(crate::params::join(prefix, "prediction"), &mut self.0);
    }
}

/// Same tree with every tensor redrawn from `U[-0.5, 0.5]`, biases included.
fn randomise<T: ParamTree<Tensor, Mapped<Tensor> = T>>(tree: &T, rng: &mut ChaCha8Rng) -> T {
    tree.map_leaves(&mut |t| Tensor::uniform(t.shape(), 0.5, rng))
}

/// `Σ probe ⊙ y`, a generic scalar readout of a block output.
fn project(t: &mut Tape, y: NodeId, probe: &Tensor) -> Result<NodeId> {
    let p = t.leaf(probe.clone());
    let h = t.hadamard(y, p)?;
    Ok(t.sum(h))
}

/// `x` plus a random offset of magnitude in `[0.05, 0.15]` per element, so
/// no residual sits near the kink of `|·|`.
fn offset_from(x: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        let m = rng.random_range(0.05..0.15);
        *v += if rng.random::<bool>() { m } else { -m };
    }
    out
}

fn tree_case<T>(
    name: &str,
    tree: T,
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
    objective: impl Fn(&mut Tape, &T::Mapped<NodeId>) -> Result<NodeId>,
) -> Result<CaseReport>
where
    T: ParamTree<Tensor>,
    T::Mapped<NodeId>: ParamTree<NodeId>,
{
    let named: Vec<(String, Tensor)> = {
        let mut v = Vec::new();
        tree.for_each_leaf("", &mut |n, t| v.push((n, t.clone())));
        v
    };
    let eval = |values: &[Tensor], fault: Option<(OpKind, f64)>| -> Result<(Tape, NodeId, T::Mapped<NodeId>)> {
        let mut tape = Tape::new();
        if let Some((k, s)) = fault {
            tape.inject_backward_fault(k, s);
        }
        let mut it = values.iter();
        let bound = tree.map_leaves(&mut |_| tape.leaf(it.next().expect("one value per leaf").clone()));
        let root = objective(&mut tape, &bound)?;
        Ok((tape, root, bound))
    };
    let values: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
    let (tape, root, bound) = eval(&values, cfg.fault)?;
    let mut grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = bound
        .leaves()
        .into_iter()
        .map(|&id| grads.take(id).unwrap_or_else(|| Tensor::zeros(tape.value(id).shape())))
        .collect();
    let mut values = values;
    compare(name, &named, &analytic, cfg, rng, |p, i| {
        let orig = values[p].data()[i];
        let at = |v: f64, values: &mut Vec<Tensor>| -> Result<f64> {
            values[p].data_mut()[i] = v;
            let (tape, root, _) = eval(values, None)?;
            tape.value(root).item()
        };
        let plus = at(orig + cfg.eps, &mut values)?;
        let minus = at(orig - cfg.eps, &mut values)?;
        values[p].data_mut()[i] = orig;
        Ok((plus - minus) / (2.0 * cfg.eps))
    })
}

fn network_case<N: Network + Clone>(
    name: &str,
    net: N,
    loss: LossKind,
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CaseReport> {
    let input: Vec<PseudoImage> = (0..net.input_len())
        .map(|_| PseudoImage::from_tensor(&Tensor::uniform(&[net.joints(), 3], 1.0, rng)))
        .collect::<Result<_>>()?;
    let pred = stack_images(&net.predict(&input)?)?;
    let target = unstack_images(&offset_from(&pred, rng))?;
    let mut tape = Tape::new();
    if let Some((k, s)) = cfg.fault {
        tape.inject_backward_fault(k, s);
    }
    let analytic = loss_and_grad_on(&net, tape, &input, &target, loss)?.grads;
    let named: Vec<(String, Tensor)> = net
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut probe = net.clone();
    compare(name, &named, &analytic, cfg, rng, |p, i| {
        let mut slots = probe.params_mut();
        let orig = slots[p].data()[i];
        slots[p].data_mut()[i] = orig + cfg.eps;
        let plus = clip_loss(&probe, &input, &target, loss)?;
        probe.params_mut()[p].data_mut()[i] = orig - cfg.eps;
        let minus = clip_loss(&probe, &input, &target, loss)?;
        probe.params_mut()[p].data_mut()[i] = orig;
        Ok((plus - minus) / (2.0 * cfg.eps))
    })
}

/// Samples `(tensor, element)` pairs, visiting tensors in a shuffled cycle so
/// small trees get every tensor covered.
fn compare(
    name: &str,
    named: &[(String, Tensor)],
    analytic: &[Tensor],
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
    mut numeric: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<CaseReport> {
    if named.is_empty() || named.len() != analytic.len() {
        return Err(Error::Invalid(format!("{name}: no parameters to check")));
    }
    let mut order: Vec<usize> = (0..named.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let mut per: Vec<Option<ParamReport>> = vec![None; named.len()];
    let mut worst: f64 = 0.0;
    for s in 0..cfg.samples {
        let p = order[s % order.len()];
        let i = rng.random_range(0..named[p].1.len());
        let n = numeric(p, i)?;
        let a = analytic[p].data()[i];
        let err = relative_error(a, n);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        worst = worst.max(err);
        let r = per[p].get_or_insert_with(|| ParamReport {
            name: named[p].0.clone(),
            checked: 0,
            max_rel_err: 0.0,
        });
        r.checked += 1;
        r.max_rel_err = r.max_rel_err.max(err);
    }
    Ok(CaseReport {
        case: name.to_string(),
        params: per.into_iter().flatten().collect(),
        samples: cfg.samples,
        max_rel_err: worst,
        passed: worst <= cfg.tolerance,
    })
}
