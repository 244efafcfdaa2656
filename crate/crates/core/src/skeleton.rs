use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type JointId = u32;

/// Joint positions (metres) of one captured frame, keyed by joint id.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonFrame {
    pub index: u64,
    pub joints: BTreeMap<JointId, [f64; 3]>,
}

impl SkeletonFrame {
    pub fn new(index: u64) -> Self {
        Self {
            index,
            joints: BTreeMap::new(),
        }
    }

    pub fn with_joints(index: u64, joints: impl IntoIterator<Item = (JointId, [f64; 3])>) -> Self {
        Self {
            index,
            joints: joints.into_iter().collect(),
        }
    }

    pub fn joint(&self, id: JointId) -> Result<[f64; 3]> {
        self.joints.get(&id).copied().ok_or(Error::MissingJoint(id))
    }

    pub fn is_finite(&self) -> bool {
        self.joints.values().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<SkeletonFrame>,
    pub source: String,
    pub subject: Option<String>,
    pub action: Option<String>,
}

impl SkeletonSequence {
    pub fn new(source: impl Into<String>, frames: Vec<SkeletonFrame>) -> Self {
        Self {
            frames,
            source: source.into(),
            subject: None,
            action: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Indices strictly increasing, one joint set shared by every frame, all
    /// coordinates finite.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Ok(());
        };
        for pair in self.frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Invalid(format!(
                    "{}: frame index {} does not follow {}",
                    self.source, pair[1].index, pair[0].index
                )));
            }
        }
        for f in &self.frames {
            if !f.joints.keys().eq(first.joints.keys()) {
                return Err(Error::Invalid(format!(
                    "{}: frame {} has a different joint set",
                    self.source, f.index
                )));
            }
            if !f.is_finite() {
                return Err(Error::Invalid(format!(
                    "{}: frame {} has a non-finite coordinate",
                    self.source, f.index
                )));
            }
        }
        Ok(())
    }
}
