//! Skeleton file ingestion, sliding-window clipping and dataset splits.
//!
//! # File format
//!
//! UTF-8 text, one frame per line:
//!
//! ```text
//! # comment lines start with '#'
//! 0 3:0.01,0.65,2.5 20:0.0,0.45,2.5 ...
//! 1 3:0.02,0.66,2.5 20:0.0,0.45,2.5 ...
//! ```
//!
//! A line is a non-negative frame index followed by whitespace-separated
//! `joint_id:x,y,z` tokens in any order. Coordinates are decimal doubles in
//! metres. Frame indices must strictly increase. Blank lines are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::{
    inverse_rescale, sequence_to_pseudo_images, uniform_rescale, JointOrder, PseudoImage,
    PAPER_JOINT_ORDER,
};
use crate::skeleton::{JointId, SkeletonFrame, SkeletonSequence};

/// Which file joint ids are kept, and the id each one is stored under.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointSelection {
    /// file id → stored id
    map: BTreeMap<JointId, JointId>,
}

impl Default for JointSelection {
    /// The 18 default ids, unchanged. Suits 25-joint captures.
    fn default() -> Self {
        Self::identity(PAPER_JOINT_ORDER.iter().copied()).expect("distinct ids")
    }
}

impl JointSelection {
    pub fn identity(ids: impl IntoIterator<Item = JointId>) -> Result<Self> {
        Self::mapping(ids.into_iter().map(|id| (id, id)))
    }

    /// Explicit `(file id, stored id)` pairs. Both sides must be distinct.
    pub fn mapping(pairs: impl IntoIterator<Item = (JointId, JointId)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for (from, to) in pairs {
            if map.insert(from, to).is_some() || !targets.insert(to) {
                return Err(Error::Invalid(format!(
                    "joint mapping {from} -> {to} repeats an id"
                )));
            }
        }
        if map.is_empty() {
            return Err(Error::Invalid("joint mapping is empty".into()));
        }
        Ok(Self { map })
    }

    /// 20-joint captures: the shoulder centre (id 2) stands in for id 20.
    pub fn kinect_v1() -> Self {
        Self::mapping(PAPER_JOINT_ORDER.iter().map(|&id| (if id == 20 { 2 } else { id }, id)))
            .expect("distinct ids")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" | "kinect-v2" => Ok(Self::default()),
            "kinect-v1" => Ok(Self::kinect_v1()),
            other => Err(Error::Invalid(format!(
                "unknown joint selection `{other}` (expected default, kinect-v1 or kinect-v2)"
            ))),
        }
    }

    pub fn stored_ids(&self) -> BTreeSet<JointId> {
        self.map.values().copied().collect()
    }
}

fn parse_error(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_line(text: &str, source: &str, line: usize, sel: &JointSelection) -> Result<SkeletonFrame> {
    let err = |m: String| parse_error(source, line, m);
    let mut tokens = text.split_whitespace();
    let head = tokens.next().expect("caller skips blank lines");
    let index: u64 = head
        .parse()
        .map_err(|_| err(format!("bad frame index `{head}`")))?;
    let mut frame = SkeletonFrame::new(index);
    let mut seen = BTreeSet::new();
    for tok in tokens {
        let (id, coords) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected joint_id:x,y,z, got `{tok}`")))?;
        let id: JointId = id
            .parse()
            .map_err(|_| err(format!("bad joint id `{id}`")))?;
        if !seen.insert(id) {
            return Err(err(format!("joint {id} appears twice")));
        }
        let parts: Vec<&str> = coords.split(',').collect();
        if parts.len() != 3 {
            return Err(err(format!("joint {id}: expected 3 coordinates, got {}", parts.len())));
        }
        let mut p = [0.0; 3];
        for (slot, s) in p.iter_mut().zip(&parts) {
            *slot = s
                .parse::<f64>()
                .map_err(|_| err(format!("joint {id}: bad coordinate `{s}`")))?;
            if !slot.is_finite() {
                return Err(err(format!("joint {id}: non-finite coordinate `{s}`")));
            }
        }
        if let Some(&stored) = sel.map.get(&id) {
            frame.joints.insert(stored, p);
        }
    }
    if let Some(&missing) = sel.map.iter().find(|(from, _)| !seen.contains(from)).map(|(f, _)| f) {
        return Err(err(format!("joint {missing} is missing")));
    }
    Ok(frame)
}

/// Parses skeleton text; `source` names the input in error messages.
pub fn parse_skeleton_text(text: &str, source: &str, sel: &JointSelection) -> Result<SkeletonSequence> {
    let mut frames: Vec<SkeletonFrame> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let frame = parse_line(line, source, i + 1, sel)?;
        if let Some(prev) = frames.last() {
            if frame.index <= prev.index {
                return Err(parse_error(
                    source,
                    i + 1,
                    format!("frame index {} does not follow {}", frame.index, prev.index),
                ));
            }
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(parse_error(source, text.lines().count(), "file contains no frames"));
    }
    Ok(SkeletonSequence::new(source, frames))
}

pub fn load_skeleton_file(path: &Path, sel: &JointSelection) -> Result<SkeletonSequence> {
    let text = std::fs::read_to_string(path)?;
    parse_skeleton_text(&text, &path.display().to_string(), sel)
}

/// Serialises frames. Coordinates are printed in shortest round-trip form,
/// so parsing the output reproduces every value bit for bit.
pub fn write_skeleton_text(seq: &SkeletonSequence) -> String {
    let mut out = String::new();
    for f in &seq.frames {
        write!(out, "{}", f.index).unwrap();
        for (id, [x, y, z]) in &f.joints {
            write!(out, " {id}:{x:?},{y:?},{z:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_skeleton_file(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    std::fs::write(path, write_skeleton_text(seq))?;
    Ok(())
}

/// Affine map `c ↦ scale · (c + translation)` applied to every coordinate
/// before training, and undone on predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub translation: [f64; 3],
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl Normalization {
    /// Centres on the mean coordinate and scales the RMS deviation from it
    /// to 1. Degenerate data (no spread) keeps scale 1.
    pub fn fit(seqs: &[SkeletonSequence]) -> Result<Self> {
        let points = || seqs.iter().flat_map(|s| &s.frames).flat_map(|f| f.joints.values());
        let n = points().count();
        if n == 0 {
            return Err(Error::Invalid("cannot fit a normalization to no data".into()));
        }
        let mut mean = [0.0; 3];
        for p in points() {
            for a in 0..3 {
                mean[a] += p[a] / n as f64;
            }
        }
        let var = points()
            .map(|p| (0..3).map(|a| (p[a] - mean[a]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let rms = var.sqrt();
        let scale = if rms > 1e-12 && rms.is_finite() { 1.0 / rms } else { 1.0 };
        Ok(Self {
            translation: mean.map(|m| -m),
            scale,
        })
    }

    pub fn apply(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        uniform_rescale(seq, self.translation, self.scale)
    }

    pub fn inverse(&self) -> Self {
        let (translation, scale) = inverse_rescale(self.translation, self.scale);
        Self { translation, scale }
    }

    pub fn apply_image(&self, img: &PseudoImage) -> PseudoImage {
        PseudoImage::new(
            img.rows()
                .iter()
                .map(|r| std::array::from_fn(|a| self.scale * (r[a] + self.translation[a])))
                .collect(),
        )
    }

    pub fn invert_image(&self, img: &PseudoImage) -> PseudoImage {
        self.inverse().apply_image(img)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub window: usize,
    pub overlap: usize,
    pub input_len: usize,
    pub output_len: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window: 20,
            overlap: 5,
            input_len: 10,
            output_len: 10,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len == 0 {
            return Err(Error::Invalid("input_len and output_len must be positive".into()));
        }
        if self.window != self.input_len + self.output_len {
            return Err(Error::Invalid(format!(
                "window ({}) must equal input_len + output_len ({})",
                self.window,
                self.input_len + self.output_len
            )));
        }
        if self.overlap >= self.window {
            return Err(Error::Invalid(format!(
                "overlap ({}) must be smaller than window ({})",
                self.overlap, self.window
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.window - self.overlap
    }

    /// `floor((len − window) / stride) + 1`, or 0 when `len < window`.
    pub fn count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.stride() + 1
        }
    }

    pub fn starts(&self, len: usize) -> impl Iterator<Item = usize> + use<> {
        let stride = self.stride();
        (0..self.count(len)).map(move |i| i * stride)
    }
}

/// One training example cut from a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip<T> {
    /// Index of the source sequence in the list it was cut from.
    pub sequence: usize,
    /// First frame of the window within that sequence.
    pub start: usize,
    pub input: Vec<T>,
    pub target: Vec<T>,
}

pub type ImageClip = Clip<PseudoImage>;

pub fn sliding_window<T: Clone>(frames: &[T], spec: &WindowSpec) -> Result<Vec<Clip<T>>> {
    spec.validate()?;
    Ok(spec
        .starts(frames.len())
        .map(|s| Clip {
            sequence: 0,
            start: s,
            input: frames[s..s + spec.input_len].to_vec(),
            target: frames[s + spec.input_len..s + spec.window].to_vec(),
        })
        .collect())
}

/// Clips from every sequence, each window inside one sequence.
pub fn clips_from_sequences(
    seqs: &[SkeletonSequence],
    order: &JointOrder,
    spec: &WindowSpec,
) -> Result<Vec<ImageClip>> {
    let mut out = Vec::new();
    for (i, seq) in seqs.iter().enumerate() {
        let images = sequence_to_pseudo_images(seq, order)?;
        out.extend(sliding_window(&images, spec)?.into_iter().map(|mut c| {
            c.sequence = i;
            c
        }));
    }
    Ok(out)
}

/// Splits whole sequences into `(train, test)` after a seeded shuffle.
/// `round(n · test_fraction)` items go to test, capped so that train keeps
/// at least one when `n > 0`.
pub fn split_sequences<T>(mut items: Vec<T>, test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Invalid(format!(
            "test fraction must lie in [0, 1], got {test_fraction}"
        )));
    }
    let n = items.len();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n.saturating_sub(1));
    let test = items.split_off(n - n_test);
    Ok((items, test))
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
