//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p pisep-core --test acceptance`.

use std::cell::OnceCell;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pisep_core::blocks::{rmb_forward, ConvWeights, RmbWeights};
use pisep_core::data::{clips_from_sequences, sliding_window, ImageClip, Normalization, WindowSpec};
use pisep_core::edd::{EddConfig, EddModel};
use pisep_core::gradcheck::{run_case, run_suite, GradCheckConfig};
use pisep_core::loss::LossKind;
use pisep_core::metrics::{aggregate, evaluate, EvalReport};
use pisep_core::params::Parameterized;
use pisep_core::repr::{frame_to_pseudo_image, pseudo_image_to_frame, JointOrder, PseudoImage};
use pisep_core::skeleton::{SkeletonFrame, SkeletonSequence};
use pisep_core::ste::{SteConfig, SteModel};
use pisep_core::synth::{synthetic_dataset, MotionKind, MotionParams};
use pisep_core::train::{mean_loss, train, Control, TrainConfig};
use pisep_core::{OpKind, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String)>;

const BATCH: usize = 4;
const STEPS: usize = 2000;

fn main() -> ExitCode {
    let forecast = OnceCell::new();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("gradient oracle", Box::new(gradient_oracle)),
        ("structural invariants", Box::new(structural_invariants)),
        ("metrics oracle", Box::new(metrics_oracle)),
        ("data pipeline", Box::new(data_pipeline)),
        ("S-TE dimension audit", Box::new(ste_audit)),
        ("representation round-trip", Box::new(representation)),
        ("overfit smoke test", Box::new(overfit)),
        (
            "error accumulation",
            Box::new(|| error_accumulation(forecast.get_or_init(run_forecast_pair))),
        ),
        (
            "L1 vs L2 trend",
            Box::new(|| loss_trend(forecast.get_or_init(run_forecast_pair))),
        ),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let (ok, detail) = match check() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "{} {name} ({:.1} s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn gradient_oracle() -> Verdict {
    let t = Instant::now();
    let cfg = GradCheckConfig::default();
    let report = run_suite(&cfg)?;
    let elapsed = t.elapsed();
    let worst = report
        .cases
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("suite has cases");
    let min_samples = report.cases.iter().map(|c| c.samples).min().unwrap_or(0);
    let control = run_case(
        "rmb",
        &GradCheckConfig {
            fault: Some((OpKind::Conv2d, 1.01)),
            ..cfg
        },
    )?;
    let ok = report.passed() && elapsed < Duration::from_secs(60) && min_samples >= 20 && !control.passed;
    Ok((
        ok,
        format!(
            "{} cases, >= {min_samples} samples each, worst {} at {:.2e} (tol {:.0e}), {:.1} s; corrupted conv rule caught: {}",
            report.cases.len(),
            worst.case,
            worst.max_rel_err,
            cfg.tolerance,
            elapsed.as_secs_f64(),
            !control.passed
        ),
    ))
}

fn structural_invariants() -> Verdict {
    let mut audit = true;
    for m in 2..=17usize {
        for k in [1, 10] {
            let cfg = EddConfig {
                input_len: m,
                output_len: k,
                ..EddConfig::tiny()
            };
            let model = EddModel::new(cfg, 11)?;
            let layers = (m as f64).log2().ceil() as usize;
            audit &= distinct(&model, "encoder") == cfg.encoder_blocks
                && distinct(&model, "dynamics") == layers
                && distinct(&model, "decoder") == k;
        }
    }

    let model = EddModel::new(EddConfig::tiny(), 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let input: Vec<PseudoImage> = (0..10).map(|_| random_image(&mut rng, 1.0)).collect();
    let base = model.forward(&input)?;
    let mut decoupled = true;
    for k in 0..10 {
        let mut m = model.clone();
        m.weights.decoders[k].output.bias.data_mut()[0] += 0.1;
        for v in m.weights.decoders[k].blocks[1].expand.kernel.data_mut() {
            *v *= 1.5;
        }
        let out = m.forward(&input)?;
        decoupled &= (0..10).all(|j| (out[j] == base[j]) == (j != k));
    }

    let mut w = RmbWeights::init(8, &mut rng)?;
    w.expand = ConvWeights::zeros(8, 4, 1);
    let x = Tensor::uniform(&[8, 18, 3], 5.0, &mut rng);
    let identity = rmb_forward(&x, &w)? == x;

    Ok((
        audit && decoupled && identity,
        format!("weight sets (one encoder stack, ceil(log2 m) dynamics, K decoders) for m = 2..=17, K in {{1, 10}}: {audit}; decoder k changes only frame k for all k: {decoupled}; zeroed RMB expansion is exact identity: {identity}"),
    ))
}

/// Distinct indices `i` among parameter names `{group}.{i}.…`.
fn distinct(model: &EddModel, group: &str) -> usize {
    let prefix = format!("{group}.");
    let mut ids: Vec<String> = model
        .named_params()
        .into_iter()
        .filter_map(|(n, _)| Some(n.strip_prefix(&prefix)?.split('.').next()?.to_string()))
        .collect();
    ids.sort();
    ids.dedup();
    ids.len()
}

fn random_image(rng: &mut ChaCha8Rng, bound: f64) -> PseudoImage {
    PseudoImage::new((0..18).map(|_| std::array::from_fn(|_| rng.random_range(-bound..bound))).collect())
}

/// Element-by-element accumulation written independently of the library.
fn brute_force(pred: &[PseudoImage], gt: &[PseudoImage]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = pred.len();
    let mut frame_sq = vec![0.0; k];
    let mut frame_abs = vec![0.0; k];
    let mut cell_sq = vec![0.0; 54];
    let mut cell_abs = vec![0.0; 54];
    for f in 0..k {
        let p: Vec<f64> = pred[f].rows().iter().flatten().copied().collect();
        let g: Vec<f64> = gt[f].rows().iter().flatten().copied().collect();
        for e in 0..54 {
            let d = p[e] - g[e];
            frame_sq[f] += d * d;
            frame_abs[f] += d.abs();
            cell_sq[e] += d * d / k as f64;
            cell_abs[e] += d.abs() / k as f64;
        }
    }
    let joint_sq = cell_sq.chunks(3).map(|c| c[0] + c[1] + c[2]).collect();
    let joint_abs = cell_abs.chunks(3).map(|c| c[0] + c[1] + c[2]).collect();
    (frame_sq, frame_abs, joint_sq, joint_abs, cell_sq, cell_abs)
}

fn metrics_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    let mut decomposition: f64 = 0.0;
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    for _ in 0..100 {
        let pred: Vec<PseudoImage> = (0..10).map(|_| random_image(&mut rng, 2.0)).collect();
        let gt: Vec<PseudoImage> = (0..10).map(|_| random_image(&mut rng, 2.0)).collect();
        let r: EvalReport = evaluate(&pred, &gt)?;
        let (fs, fa, js, ja, cs, ca) = brute_force(&pred, &gt);
        let axis_sq: Vec<f64> = r.axis_mse.iter().flatten().copied().collect();
        let axis_abs: Vec<f64> = r.axis_mae.iter().flatten().copied().collect();
        let mean_sq = fs.iter().sum::<f64>() / 10.0;
        let mean_abs = fa.iter().sum::<f64>() / 10.0;
        worst = [
            close(&r.frame_mse, &fs),
            close(&r.frame_mae, &fa),
            close(&r.joint_mse, &js),
            close(&r.joint_mae, &ja),
            close(&axis_sq, &cs),
            close(&axis_abs, &ca),
            (r.mean_mse - mean_sq).abs(),
            (r.mean_mae - mean_abs).abs(),
            worst,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let joints_total = r.joint_mse.iter().sum::<f64>();
        let axes_vs_joints = (0..18)
            .map(|i| (r.axis_mse[i].iter().sum::<f64>() - r.joint_mse[i]).abs())
            .fold(0.0, f64::max);
        decomposition = decomposition.max((joints_total - r.mean_mse).abs()).max(axes_vs_joints);
    }
    Ok((
        worst <= 1e-10 && decomposition <= 1e-10,
        format!("100 clip pairs, max deviation from brute force {worst:.2e}, decomposition residual {decomposition:.2e} (tol 1e-10)"),
    ))
}

fn data_pipeline() -> Verdict {
    let spec = WindowSpec::default();
    let mut mismatches = 0;
    for len in 0..=100usize {
        let frames: Vec<usize> = (0..len).collect();
        let enumerated = (0..len).filter(|s| s % 15 == 0 && s + 20 <= len).count();
        let closed = if len < 20 { 0 } else { (len - 20) / 15 + 1 };
        let clips = sliding_window(&frames, &spec)?;
        if clips.len() != enumerated || closed != enumerated || spec.count(len) != enumerated {
            mismatches += 1;
        }
    }
    let frames: Vec<usize> = (0..35).collect();
    let starts: Vec<usize> = sliding_window(&frames, &spec)?.iter().map(|c| c.start).collect();
    Ok((
        mismatches == 0 && starts == [0, 15],
        format!("L = 0..=100 mismatches: {mismatches}; L = 35 starts {starts:?}"),
    ))
}

fn ste_audit() -> Verdict {
    let model = SteModel::new(SteConfig::default(), 0)?;
    let n = model.param_count();
    Ok((n == 385_240, format!("{n} parameters, widths {:?}", model.config().widths())))
}

fn representation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let order = JointOrder::paper();
    let mut lossless = true;
    for t in 0..1000u64 {
        let frame = SkeletonFrame::with_joints(
            t,
            order.ids().iter().map(|&id| {
                let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1e3..1e3) * 10f64.powi(rng.random_range(-8..3)));
                (id, p)
            }),
        );
        let img = frame_to_pseudo_image(&frame, &order)?;
        let back = pseudo_image_to_frame(&img, &order, t)?;
        lossless &= back.joints.iter().all(|(id, p)| p.map(f64::to_bits) == frame.joints[id].map(f64::to_bits));
    }
    let printed = [11, 10, 9, 8, 4, 5, 6, 7, 3, 20, 1, 0, 16, 17, 18, 12, 13, 14];
    let default_ok = JointOrder::default().ids() == printed;
    Ok((
        lossless && default_ok,
        format!("1000 frames bit-exact: {lossless}; default order {:?}", JointOrder::default().ids()),
    ))
}

fn normalized_clips(seqs: &[SkeletonSequence], norm: &Normalization) -> Result<Vec<ImageClip>> {
    let seqs: Vec<SkeletonSequence> = seqs.iter().map(|s| norm.apply(s)).collect::<Result<_>>()?;
    clips_from_sequences(&seqs, &JointOrder::paper(), &WindowSpec::default())
}

fn overfit() -> Verdict {
    let t = Instant::now();
    let seqs = synthetic_dataset(MotionKind::Constant, &MotionParams::default(), 5, 35, 41)?;
    let norm = Normalization::fit(&seqs)?;
    let clips = normalized_clips(&seqs, &norm)?;
    let mut model = EddModel::new(EddConfig::tiny(), 42)?;
    let initial = mean_loss(&model, &clips, LossKind::L1)?;
    let mut last = initial;
    let cfg = TrainConfig {
        steps: STEPS,
        batch_size: BATCH,
        loss: LossKind::L1,
        seed: 43,
        ..Default::default()
    };
    let logs = train(&mut model, &clips, cfg, |log, net| {
        if log.step % 50 == 0 {
            last = mean_loss(net, &clips, LossKind::L1)?;
            if last < 0.1 * initial {
                return Ok(Control::Stop);
            }
        }
        Ok(Control::Continue)
    })?;
    let elapsed = t.elapsed();
    let ratio = last / initial;
    Ok((
        ratio < 0.1 && elapsed < Duration::from_secs(300),
        format!(
            "{} clips from 5 sequences, training L1 {initial:.3} -> {last:.3} ({:.1}% of initial) after {} steps at lr 1e-4, {:.1} s",
            clips.len(),
            100.0 * ratio,
            logs.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

/// Test-set metrics of one EDD trained with L1 and one with L2, in metres.
struct ForecastPair {
    train_clips: usize,
    l1_one_shot: EvalReport,
    l1_chained: EvalReport,
    l2_one_shot: EvalReport,
    /// Wall time of the L1 and L2 runs.
    seconds: [f64; 2],
}

fn run_forecast_pair() -> ForecastPair {
    try_forecast_pair().expect("forecast experiment failed")
}

fn try_forecast_pair() -> Result<ForecastPair> {
    let all = synthetic_dataset(MotionKind::NoisySinusoid, &MotionParams::default(), 25, 125, 51)?;
    let (train_seqs, test_seqs) = all.split_at(20);
    let norm = Normalization::fit(train_seqs)?;
    let train_clips = normalized_clips(train_seqs, &norm)?;
    let test_clips = normalized_clips(test_seqs, &norm)?;
    let to_metres = |v: &[PseudoImage]| -> Vec<PseudoImage> { v.iter().map(|im| norm.invert_image(im)).collect() };

    let mut reports = Vec::new();
    let mut seconds = [0.0; 2];
    for (i, loss) in [LossKind::L1, LossKind::L2].into_iter().enumerate() {
        let t = Instant::now();
        let mut model = EddModel::new(EddConfig::tiny(), 52)?;
        let cfg = TrainConfig {
            steps: STEPS,
            batch_size: BATCH,
            loss,
            seed: 53,
            ..Default::default()
        };
        train(&mut model, &train_clips, cfg, |_, _| Ok(Control::Continue))?;
        let (mut one_shot, mut chained) = (Vec::new(), Vec::new());
        for clip in &test_clips {
            let gt = to_metres(&clip.target);
            one_shot.push(evaluate(&to_metres(&model.forward(&clip.input)?), &gt)?);
            chained.push(evaluate(&to_metres(&model.forward_recursive(&clip.input, 10)?), &gt)?);
        }
        reports.push((aggregate(&one_shot)?, aggregate(&chained)?));
        seconds[i] = t.elapsed().as_secs_f64();
    }
    let (l2_one_shot, _) = reports.pop().expect("two runs");
    let (l1_one_shot, l1_chained) = reports.pop().expect("two runs");
    Ok(ForecastPair {
        train_clips: train_clips.len(),
        l1_one_shot,
        l1_chained,
        l2_one_shot,
        seconds,
    })
}

fn error_accumulation(p: &ForecastPair) -> Verdict {
    let growth = |r: &EvalReport| r.frame_mae[9] / r.frame_mae[0];
    let (chained, one_shot) = (growth(&p.l1_chained), growth(&p.l1_one_shot));
    let monotone_steps = p.l1_chained.frame_mae.windows(2).filter(|w| w[1] > w[0]).count();
    Ok((
        chained > one_shot && p.seconds[0] < 600.0,
        format!(
            "{} training clips, {STEPS} steps: MAE@10/MAE@1 chained {chained:.3} vs one-shot {one_shot:.3}; chained MAE rises on {monotone_steps}/9 steps ({:.3} -> {:.3} m); {:.0} s",
            p.train_clips,
            p.l1_chained.frame_mae[0],
            p.l1_chained.frame_mae[9],
            p.seconds[0]
        ),
    ))
}

fn loss_trend(p: &ForecastPair) -> Verdict {
    let (l1, l2) = (p.l1_one_shot.mean_mae, p.l2_one_shot.mean_mae);
    Ok((
        l1 <= l2,
        format!("test MAE with L1 objective {l1:.4} vs L2 objective {l2:.4} (per-frame sums, metres); {:.0} s + {:.0} s", p.seconds[0], p.seconds[1]),
    ))
}
