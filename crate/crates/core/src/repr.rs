//! Skeleton frames as `N × 3` pseudo-images.
//!
//! Row `i` of an image holds the `(x, y, z)` of the `i`-th joint of a
//! [`JointOrder`]. The default order groups joints by body part (left arm,
//! right arm, trunk, left leg, right leg) so that the trunk rows sit between
//! the upper and lower limbs. Values are raw coordinates; nothing here
//! normalises them.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::skeleton::{JointId, SkeletonFrame, SkeletonSequence};
use crate::tensor::Tensor;

/// Default joint ids, row by row.
pub const PAPER_JOINT_ORDER: [JointId; 18] =
    [11, 10, 9, 8, 4, 5, 6, 7, 3, 20, 1, 0, 16, 17, 18, 12, 13, 14];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BodyPart {
    LeftArm,
    RightArm,
    Trunk,
    LeftLeg,
    RightLeg,
}

impl BodyPart {
    pub const ORDER: [BodyPart; 5] = [
        BodyPart::LeftArm,
        BodyPart::RightArm,
        BodyPart::Trunk,
        BodyPart::LeftLeg,
        BodyPart::RightLeg,
    ];
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BodyPart::LeftArm => "left-arm",
            BodyPart::RightArm => "right-arm",
            BodyPart::Trunk => "trunk",
            BodyPart::LeftLeg => "left-leg",
            BodyPart::RightLeg => "right-leg",
        })
    }
}

const PAPER_PARTS: [(BodyPart, usize); 5] = [
    (BodyPart::LeftArm, 4),
    (BodyPart::RightArm, 4),
    (BodyPart::Trunk, 4),
    (BodyPart::LeftLeg, 3),
    (BodyPart::RightLeg, 3),
];

/// Row layout of a pseudo-image. `parts` is `None` for unordered layouts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointOrder {
    ids: Vec<JointId>,
    parts: Option<Vec<BodyPart>>,
}

impl Default for JointOrder {
    fn default() -> Self {
        Self::paper()
    }
}

impl JointOrder {
    pub fn paper() -> Self {
        let parts = PAPER_PARTS
            .iter()
            .flat_map(|&(p, n)| std::iter::repeat_n(p, n))
            .collect();
        Self {
            ids: PAPER_JOINT_ORDER.to_vec(),
            parts: Some(parts),
        }
    }

    /// An order without part annotations.
    pub fn unordered(ids: Vec<JointId>) -> Result<Self> {
        check_unique(&ids)?;
        Ok(Self { ids, parts: None })
    }

    /// An annotated order; parts must form contiguous blocks in the canonical
    /// left-arm, right-arm, trunk, left-leg, right-leg sequence.
    pub fn annotated(ids: Vec<JointId>, parts: Vec<BodyPart>) -> Result<Self> {
        check_unique(&ids)?;
        if ids.len() != parts.len() {
            return Err(Error::Invalid(format!(
                "{} joint ids but {} part labels",
                ids.len(),
                parts.len()
            )));
        }
        let rank = |p: BodyPart| BodyPart::ORDER.iter().position(|&q| q == p).unwrap();
        if parts.windows(2).any(|w| rank(w[1]) < rank(w[0])) {
            return Err(Error::Invalid(
                "part blocks must be contiguous and in canonical order".into(),
            ));
        }
        Ok(Self {
            ids,
            parts: Some(parts),
        })
    }

    pub fn ids(&self) -> &[JointId] {
        &self.ids
    }

    pub fn parts(&self) -> Option<&[BodyPart]> {
        self.parts.as_deref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_of(&self, id: JointId) -> Option<usize> {
        self.ids.iter().position(|&j| j == id)
    }

    /// Row indices carrying `part`, empty for unordered layouts.
    pub fn rows_of(&self, part: BodyPart) -> Vec<usize> {
        self.parts
            .iter()
            .flatten()
            .enumerate()
            .filter(|&(_, &p)| p == part)
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_unique(ids: &[JointId]) -> Result<()> {
    let mut seen = HashSet::new();
    for &id in ids {
        if !seen.insert(id) {
            return Err(Error::Invalid(format!("joint id {id} appears twice")));
        }
    }
    if ids.is_empty() {
        return Err(Error::Invalid("joint order is empty".into()));
    }
    Ok(())
}

/// Seeded uniform permutation of the default ids, without part labels.
pub fn make_disorder_order(seed: u64) -> JointOrder {
    let mut ids = PAPER_JOINT_ORDER.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    JointOrder { ids, parts: None }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoImage {
    rows: Vec<[f64; 3]>,
}

pub type PseudoImageSequence = Vec<PseudoImage>;

impl PseudoImage {
    pub fn new(rows: Vec<[f64; 3]>) -> Self {
        Self { rows }
    }

    pub fn zeros(joints: usize) -> Self {
        Self {
            rows: vec![[0.0; 3]; joints],
        }
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.rows
    }

    pub fn joints(&self) -> usize {
        self.rows.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flatten().copied()
    }

    /// One-channel image tensor, `1 × N × 3`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.rows.len(), 3], self.values().collect())
            .expect("pseudo-image has at least one row")
    }

    /// Accepts `N × 3` or `1 × N × 3`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let n = match t.shape() {
            [n, 3] | [1, n, 3] => *n,
            other => {
                return Err(shape_err(
                    "pseudo_image",
                    format!("expected N×3 or 1×N×3, got {other:?}"),
                ))
            }
        };
        let rows = (0..n)
            .map(|i| {
                let d = &t.data()[i * 3..i * 3 + 3];
                [d[0], d[1], d[2]]
            })
            .collect();
        Ok(Self { rows })
    }
}

/// Stacks images into a `K × N × 3` tensor.
pub fn stack_images(images: &[PseudoImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("cannot stack an empty image sequence".into()))?;
    let n = first.joints();
    if images.iter().any(|im| im.joints() != n) {
        return Err(shape_err("stack_images", "images differ in joint count"));
    }
    Tensor::new(
        vec![images.len(), n, 3],
        images.iter().flat_map(PseudoImage::values).collect(),
    )
}

/// Splits a `K × N × 3` tensor back into images.
pub fn unstack_images(t: &Tensor) -> Result<PseudoImageSequence> {
    let [k, n, 3] = *t.shape() else {
        return Err(shape_err(
            "unstack_images",
            format!("expected K×N×3, got {:?}", t.shape()),
        ));
    };
    Ok((0..k)
        .map(|f| {
            let d = &t.data()[f * n * 3..(f + 1) * n * 3];
            PseudoImage::new(d.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        })
        .collect())
}

pub fn frame_to_pseudo_image(frame: &SkeletonFrame, order: &JointOrder) -> Result<PseudoImage> {
    let rows = order
        .ids()
        .iter()
        .map(|&id| frame.joint(id))
        .collect::<Result<_>>()?;
    Ok(PseudoImage { rows })
}

pub fn pseudo_image_to_frame(
    img: &PseudoImage,
    order: &JointOrder,
    index: u64,
) -> Result<SkeletonFrame> {
    if img.joints() != order.len() {
        return Err(shape_err(
            "pseudo_image_to_frame",
            format!("image has {} rows, order has {}", img.joints(), order.len()),
        ));
    }
    Ok(SkeletonFrame::with_joints(
        index,
        order.ids().iter().copied().zip(img.rows.iter().copied()),
    ))
}

pub fn sequence_to_pseudo_images(
    seq: &SkeletonSequence,
    order: &JointOrder,
) -> Result<PseudoImageSequence> {
    seq.frames
        .iter()
        .map(|f| frame_to_pseudo_image(f, order))
        .collect()
}

/// Maps every coordinate `c` to `scale · (c + translation)`.
pub fn uniform_rescale(
    seq: &SkeletonSequence,
    translation: [f64; 3],
    scale: f64,
) -> Result<SkeletonSequence> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Invalid(format!(
            "scale must be positive and finite, got {scale}"
        )));
    }
    let mut out = seq.clone();
    for frame in &mut out.frames {
        for p in frame.joints.values_mut() {
            for a in 0..3 {
                p[a] = scale * (p[a] + translation[a]);
            }
        }
    }
    Ok(out)
}

/// Parameters undoing `uniform_rescale(_, translation, scale)`.
pub fn inverse_rescale(translation: [f64; 3], scale: f64) -> ([f64; 3], f64) {
    (translation.map(|d| -d * scale), 1.0 / scale)
}
