//! Subcommand bodies. Each validates its whole configuration and reads all
//! inputs before creating any output file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pisep_core::checkpoint::{Checkpoint, Model};
use pisep_core::data::{
    clips_from_sequences, load_skeleton_file, save_skeleton_file, split_sequences, ImageClip, Normalization,
};
use pisep_core::gradcheck::{run_suite, GradCheckConfig};
use pisep_core::metrics::{aggregate, evaluate};
use pisep_core::repr::{frame_to_pseudo_image, pseudo_image_to_frame, JointOrder, PseudoImage};
use pisep_core::skeleton::{SkeletonFrame, SkeletonSequence};
use pisep_core::synth::synthetic_dataset;
use pisep_core::train::{TrainConfig, Trainer};
use pisep_core::OpKind;

use crate::config::RunConfig;
use crate::CliError;

/// Skeleton files named directly, plus the sorted `.txt` files of any
/// directory.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("no data paths given".into()));
    }
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "txt"))
                .collect();
            if found.is_empty() {
                return Err(CliError::Data(format!("{}: no .txt skeleton files", p.display())));
            }
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(CliError::Data(format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(files)
}

fn load_sequences(cfg: &RunConfig) -> Result<Vec<SkeletonSequence>, CliError> {
    let sel = cfg.joint_selection()?;
    expand(&cfg.data)?
        .iter()
        .map(|f| load_skeleton_file(f, &sel).map_err(|e| CliError::Data(format!("{}: {e}", f.display()))))
        .collect()
}

fn clips(seqs: &[SkeletonSequence], norm: &Normalization, order: &JointOrder, cfg: &RunConfig, m: usize, k: usize) -> Result<Vec<ImageClip>, CliError> {
    let spec = cfg.window_for(m, k)?;
    let normalized = seqs.iter().map(|s| norm.apply(s)).collect::<pisep_core::Result<Vec<_>>>().map_err(CliError::data)?;
    let clips = clips_from_sequences(&normalized, order, &spec).map_err(CliError::data)?;
    if clips.is_empty() {
        return Err(CliError::Data(format!(
            "no sequence holds a complete {}-frame window",
            spec.window
        )));
    }
    Ok(clips)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed();
    let mut model = cfg.model_config()?.build(seed).map_err(CliError::config)?;
    let tc = TrainConfig {
        steps: cfg.train.steps,
        batch_size: cfg.train.batch_size,
        loss: cfg.loss(),
        adam: cfg.train.adam,
        seed: seed.wrapping_add(1),
    };
    tc.validate().map_err(CliError::config)?;
    if tc.steps == 0 {
        return Err(CliError::Config("steps must be positive".into()));
    }
    let out = cfg.out()?;
    let order = cfg.requested_order().unwrap_or_default();
    let seqs = load_sequences(cfg)?;
    let norm = if cfg.train.normalize {
        Normalization::fit(&seqs).map_err(CliError::data)?
    } else {
        Normalization::default()
    };
    let (m, k) = (model.network().input_len(), model.network().output_len());
    let clips = clips(&seqs, &norm, &order, cfg, m, k)?;
    let mut trainer = Trainer::new(model.network(), tc).map_err(CliError::config)?;

    create_dir(out)?;
    let checkpoint = |model: &Model, step: usize, path: &Path| {
        Checkpoint {
            model: model.clone(),
            joint_order: order.clone(),
            step: step as u64,
            normalization: norm,
        }
        .save(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    };
    let mut log = format!(
        "# objective={} model={} seed={seed} clips={}\nstep,objective,l1,l2\n",
        tc.loss.name(),
        model.config().kind(),
        clips.len()
    );
    let mut last = None;
    for _ in 0..tc.steps {
        let s = trainer
            .step(model.network_mut(), &clips)
            .map_err(|e| CliError::Data(format!("training stopped: {e}")))?;
        writeln!(log, "{},{:?},{:?},{:?}", s.step, s.objective, s.l1, s.l2).unwrap();
        let every = cfg.train.checkpoint_every;
        if every > 0 && s.step % every == 0 && s.step < tc.steps {
            checkpoint(&model, s.step, &out.join(format!("checkpoint-{:06}.json", s.step)))?;
        }
        last = Some(s);
    }
    write(&out.join("loss.csv"), &log)?;
    checkpoint(&model, tc.steps, &out.join("model.json"))?;
    let s = last.expect("at least one step");
    println!(
        "trained {} for {} steps on {} clips: final {} objective {:.6e} (l1 {:.6e}, l2 {:.6e})",
        model.config().kind(),
        s.step,
        clips.len(),
        tc.loss.name(),
        s.objective,
        s.l1,
        s.l2
    );
    Ok(())
}

/// Loads a checkpoint and rejects requests that contradict it.
fn load_checkpoint(cfg: &RunConfig, path: &Path) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if cfg.model_requested() {
        let want = cfg.model_config()?;
        if want != ck.model.config() {
            return Err(CliError::Config(format!(
                "requested {} model {:?} does not match checkpoint {:?}",
                want.kind(),
                want,
                ck.model.config()
            )));
        }
    }
    if let Some(order) = cfg.requested_order() {
        if order != ck.joint_order {
            return Err(CliError::Config(format!(
                "requested joint order {:?} does not match checkpoint order {:?}",
                order.ids(),
                ck.joint_order.ids()
            )));
        }
    }
    if cfg.recursive() && !matches!(ck.model, Model::Edd(_)) {
        return Err(CliError::Config("--recursive needs an edd model".into()));
    }
    Ok(ck)
}

/// Forecast in model coordinates.
fn forecast(ck: &Checkpoint, recursive: bool, input: &[PseudoImage]) -> pisep_core::Result<Vec<PseudoImage>> {
    match (&ck.model, recursive) {
        (Model::Edd(m), true) => m.forward_recursive(input, m.config().output_len),
        (model, _) => model.network().predict(input),
    }
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, input: &Path, start: Option<usize>) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let out = cfg.out()?;
    let net = ck.model.network();
    let m = net.input_len();
    let seq = load_skeleton_file(input, &cfg.joint_selection()?)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    if seq.len() < m {
        return Err(CliError::Data(format!("{} has {} frames, the model needs {m}", input.display(), seq.len())));
    }
    let start = start.unwrap_or(seq.len() - m);
    if start + m > seq.len() {
        return Err(CliError::Data(format!(
            "frames {start}..{} run past the end of {} ({} frames)",
            start + m,
            input.display(),
            seq.len()
        )));
    }
    let window = &seq.frames[start..start + m];
    let images = window
        .iter()
        .map(|f| frame_to_pseudo_image(f, &ck.joint_order).map(|im| ck.normalization.apply_image(&im)))
        .collect::<pisep_core::Result<Vec<_>>>()
        .map_err(CliError::data)?;
    let next = window.last().expect("m >= 1").index + 1;
    let frames = forecast(&ck, cfg.recursive(), &images)
        .and_then(|pred| {
            pred.iter()
                .enumerate()
                .map(|(j, im)| pseudo_image_to_frame(&ck.normalization.invert_image(im), &ck.joint_order, next + j as u64))
                .collect::<pisep_core::Result<Vec<SkeletonFrame>>>()
        })
        .map_err(CliError::data)?;

    create_dir(out)?;
    let path = out.join("prediction.txt");
    let count = frames.len();
    save_skeleton_file(&path, &SkeletonSequence::new("prediction", frames))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {count} frames to {}", path.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let out = cfg.out()?;
    let net = ck.model.network();
    let seqs = load_sequences(cfg)?;
    let clips = clips(&seqs, &ck.normalization, &ck.joint_order, cfg, net.input_len(), net.output_len())?;
    let to_metres = |v: &[PseudoImage]| -> Vec<PseudoImage> { v.iter().map(|im| ck.normalization.invert_image(im)).collect() };
    let reports = clips
        .iter()
        .map(|c| evaluate(&to_metres(&forecast(&ck, cfg.recursive(), &c.input)?), &to_metres(&c.target)))
        .collect::<pisep_core::Result<Vec<_>>>()
        .map_err(CliError::data)?;
    let report = aggregate(&reports).map_err(CliError::data)?;

    create_dir(out)?;
    report
        .write_csvs(out, ck.joint_order.ids())
        .map_err(|e| CliError::Data(format!("cannot write reports to {}: {e}", out.display())))?;
    let summary = format!(
        "model={} mode={} clips={} mean_mse={:?} mean_mae={:?}\n",
        ck.model.config().kind(),
        if cfg.recursive() { "recursive" } else { "one-shot" },
        clips.len(),
        report.mean_mse,
        report.mean_mae
    );
    write(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn parse_fault(spec: &str) -> Result<(OpKind, f64), CliError> {
    let (op, factor) = match spec.split_once(':') {
        Some((op, f)) => (
            op,
            f.parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad corruption factor `{f}`")))?,
        ),
        None => (spec, 1.5),
    };
    Ok((op.parse().map_err(CliError::config)?, factor))
}

pub fn gradcheck(cfg: &RunConfig, corrupt: Option<&str>) -> Result<(), CliError> {
    let g = cfg.gradcheck;
    if !(g.eps > 0.0 && g.tolerance > 0.0 && g.samples > 0) {
        return Err(CliError::Config("gradcheck eps, tolerance and samples must be positive".into()));
    }
    let check = GradCheckConfig {
        eps: g.eps,
        tolerance: g.tolerance,
        samples: g.samples,
        seed: cfg.seed(),
        fault: corrupt.map(parse_fault).transpose()?,
    };
    let report = run_suite(&check).map_err(CliError::config)?;
    let text = report.render();
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write(&out.join("gradcheck.txt"), &text)?;
    }
    print!("{text}");
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.cases.iter().filter(|c| !c.passed).map(|c| c.case.as_str()).collect();
        Err(CliError::Verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let s = cfg.synth;
    s.params.validate().map_err(CliError::config)?;
    if s.sequences == 0 || s.length == 0 {
        return Err(CliError::Config("sequences and length must be positive".into()));
    }
    if !(0.0..1.0).contains(&s.test_fraction) {
        return Err(CliError::Config(format!("test_fraction {} must lie in [0, 1)", s.test_fraction)));
    }
    let out = cfg.out()?;
    let seqs = synthetic_dataset(s.kind, &s.params, s.sequences, s.length, cfg.seed()).map_err(CliError::config)?;
    let numbered: Vec<(usize, SkeletonSequence)> = seqs.into_iter().enumerate().collect();
    let groups = if s.test_fraction > 0.0 {
        let (train, test) = split_sequences(numbered, s.test_fraction, cfg.seed()).map_err(CliError::config)?;
        vec![(out.join("train"), train), (out.join("test"), test)]
    } else {
        vec![(out.to_path_buf(), numbered)]
    };
    for (dir, group) in &groups {
        create_dir(dir)?;
        for (i, seq) in group {
            let path = dir.join(format!("seq-{i:03}.txt"));
            save_skeleton_file(&path, seq).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        }
        println!("wrote {} {} sequences of {} frames to {}", group.len(), s.kind, s.length, dir.display());
    }
    Ok(())
}
