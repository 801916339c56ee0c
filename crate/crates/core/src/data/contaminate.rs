use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{crop_resize_map, rotate_map};
use super::{LabelKind, Sample};
use crate::error::{Error, Result};
use crate::Scalar;

/// Where the occlusion rectangle is placed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionAnchor {
    #[default]
    Random,
    TopLeft,
}

/// Magnitude ranges for label degradation. Each `(lo, hi)` range is sampled
/// uniformly; `lo == hi` pins the value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub rotation_degrees: (f64, f64),
    /// Fraction of each side removed before resizing back.
    pub crop_fraction: (f64, f64),
    /// Fraction of the label area zeroed by a rectangle of the map's aspect.
    pub occlusion_area_fraction: (f64, f64),
    #[serde(default)]
    pub occlusion_anchor: OcclusionAnchor,
    pub seed: u64,
}

impl Default for ContaminationSpec {
    fn default() -> Self {
        ContaminationSpec {
            rotation_degrees: (-15.0, 15.0),
            crop_fraction: (0.1, 0.2),
            occlusion_area_fraction: (0.0, 0.25),
            occlusion_anchor: OcclusionAnchor::Random,
            seed: 0,
        }
    }
}

impl ContaminationSpec {
    pub fn identity() -> Self {
        ContaminationSpec {
            rotation_degrees: (0.0, 0.0),
            crop_fraction: (0.0, 0.0),
            occlusion_area_fraction: (0.0, 0.0),
            occlusion_anchor: OcclusionAnchor::Random,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation_degrees", self.rotation_degrees, None),
            ("crop_fraction", self.crop_fraction, Some(())),
            ("occlusion_area_fraction", self.occlusion_area_fraction, Some(())),
        ];
        for (name, (lo, hi), is_fraction) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("{name}: empty range ({lo}, {hi})")));
            }
            if is_fraction.is_some() && !(lo >= 0.0 && hi < 1.0) {
                return Err(Error::Config(format!("{name}: fractions must lie in [0,1), got ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    // Always consume one draw so the stream layout does not depend on the ranges.
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Degrades a real label by rotation, crop-and-resize and rectangular
/// occlusion. The image is returned untouched.
pub fn contaminate<T: Scalar>(sample: &Sample<T>, spec: &ContaminationSpec) -> Result<Sample<T>> {
    if sample.label_kind != LabelKind::Real {
        return Err(Error::Misuse(format!(
            "{}: only real-labeled samples can be contaminated (kind {})",
            sample.id,
            sample.label_kind.as_str()
        )));
    }
    spec.validate()?;
    let label =
        sample.label.as_ref().ok_or_else(|| Error::Misuse(format!("{}: real kind without label", sample.id)))?;
    let (h, w) = label.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let angle = draw(&mut rng, spec.rotation_degrees);
    let crop = draw(&mut rng, spec.crop_fraction);
    let crop_u: f64 = rng.random();
    let crop_v: f64 = rng.random();
    let occ = draw(&mut rng, spec.occlusion_area_fraction);
    let occ_u: f64 = rng.random();
    let occ_v: f64 = rng.random();

    let mut out = label.clone();
    if angle != 0.0 {
        out = rotate_map(&out, angle);
    }
    let ch = ((1.0 - crop) * h as f64).round().max(1.0) as usize;
    let cw = ((1.0 - crop) * w as f64).round().max(1.0) as usize;
    if (ch, cw) != (h, w) {
        let top = ((h - ch) as f64 * crop_u).floor() as usize;
        let left = ((w - cw) as f64 * crop_v).floor() as usize;
        out = crop_resize_map(&out, top, left, ch, cw);
    }
    let side = occ.sqrt();
    let oh = (side * h as f64).round() as usize;
    let ow = (side * w as f64).round() as usize;
    if oh > 0 && ow > 0 {
        let (top, left) = match spec.occlusion_anchor {
            OcclusionAnchor::TopLeft => (0, 0),
            OcclusionAnchor::Random => {
                (((h - oh) as f64 * occ_u).floor() as usize, ((w - ow) as f64 * occ_v).floor() as usize)
            }
        };
        out.slice_mut(ndarray::s![top..top + oh, left..left + ow]).fill(T::zero());
    }
    out.mapv_inplace(|v| v.max(T::zero()).min(T::one()));

    let mut s = sample.clone();
    s.label = Some(out);
    s.label_kind = LabelKind::Contaminated;
    Ok(s)
}
