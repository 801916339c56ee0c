//! Dataset model, hybrid-label ingestion, grouping, coarse labels,
//! contamination and augmentation.

mod augment;
mod coarse;
mod contaminate;
pub mod geometry;
pub mod io;
mod partition;
pub mod synth;

pub use augment::{augment, AugmentOp};
pub use coarse::{generate_coarse_label, mbd_raw, MBD_PASSES};
pub use contaminate::{contaminate, ContaminationSpec, OcclusionAnchor};
pub use partition::{partition, partition_ids, GroupPartition};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::Scalar;

/// Provenance of a sample's current label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Real,
    Coarse,
    Pseudo,
    Contaminated,
    None,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Real => "real",
            LabelKind::Coarse => "coarse",
            LabelKind::Pseudo => "pseudo",
            LabelKind::Contaminated => "contaminated",
            LabelKind::None => "none",
        }
    }
}

/// One training or evaluation item.
///
/// `image` is H×W×3 in `[0,1]`. `label` is the current supervision target
/// (its provenance in `label_kind`); `coarse` is the unsupervised prior that
/// the refinement network consumes as a fourth input channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub image: Array3<T>,
    pub label: Option<Array2<T>>,
    pub label_kind: LabelKind,
    pub coarse: Option<Array2<T>>,
    pub source_group: usize,
}

impl<T: Scalar> Sample<T> {
    pub fn new(id: impl Into<String>, image: Array3<T>) -> Self {
        Sample { id: id.into(), image, label: None, label_kind: LabelKind::None, coarse: None, source_group: 1 }
    }

    pub fn with_label(mut self, label: Array2<T>, kind: LabelKind) -> Self {
        self.label = Some(label);
        self.label_kind = kind;
        self
    }

    pub fn with_coarse(mut self, coarse: Array2<T>) -> Self {
        self.coarse = Some(coarse);
        self
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Checks the shape and range invariants.
    pub fn validate(&self) -> Result<()> {
        let s = self.image.shape();
        if s[2] != 3 {
            return Err(Error::Data(format!("{}: image must have 3 channels, got {}", self.id, s[2])));
        }
        for (name, map) in [("label", &self.label), ("coarse", &self.coarse)] {
            if let Some(m) = map {
                if m.shape() != &s[..2] {
                    return Err(shape_err(&format!("{} {name}", self.id), m.shape(), &s[..2]));
                }
                if m.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
                    return Err(Error::Data(format!("{}: {name} values outside [0,1]", self.id)));
                }
            }
        }
        if self.label_kind == LabelKind::Real {
            let Some(l) = &self.label else {
                return Err(Error::Data(format!("{}: real label kind without a label", self.id)));
            };
            if l.iter().any(|v| *v != T::zero() && *v != T::one()) {
                return Err(Error::Data(format!("{}: real labels must be binary", self.id)));
            }
        }
        Ok(())
    }
}

/// Target network for [`resize_for`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Rnet,
    Snet,
}

impl NetworkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Rnet => "rnet",
            NetworkKind::Snet => "snet",
        }
    }
}

/// Input resolutions of the two networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSizes {
    pub rnet: usize,
    pub snet: usize,
}

impl Default for NetworkSizes {
    fn default() -> Self {
        NetworkSizes { rnet: 288, snet: 320 }
    }
}

/// Square-resizes a sample to the configured input size of `network`:
/// bilinear for the image, bilinear then clamp for label maps.
pub fn resize_for<T: Scalar>(network: NetworkKind, sample: &Sample<T>, sizes: &NetworkSizes) -> Sample<T> {
    let side = match network {
        NetworkKind::Rnet => sizes.rnet,
        NetworkKind::Snet => sizes.snet,
    };
    resize_sample(sample, side, side)
}

pub fn resize_sample<T: Scalar>(sample: &Sample<T>, h: usize, w: usize) -> Sample<T> {
    if sample.size() == (h, w) {
        return sample.clone();
    }
    Sample {
        id: sample.id.clone(),
        image: geometry::resize_image(&sample.image, h, w),
        label: sample.label.as_ref().map(|l| geometry::resize_label(l, h, w)),
        label_kind: sample.label_kind,
        coarse: sample.coarse.as_ref().map(|l| geometry::resize_label(l, h, w)),
        source_group: sample.source_group,
    }
}
