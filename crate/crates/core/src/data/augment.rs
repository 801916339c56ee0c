use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::{flip_horizontal_image, flip_horizontal_map, rotate_quarter_image, rotate_quarter_map};
use super::Sample;
use crate::Scalar;

/// A geometric augmentation applied identically to image, label and coarse map.
/// Rotations are restricted to right angles so they are lossless.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentOp {
    pub flip: bool,
    /// Counter-clockwise quarter turns, applied after the flip.
    pub quarter_turns: u8,
}

impl AugmentOp {
    /// Draws a random op. Non-square samples only rotate by 0° or 180°.
    pub fn random(seed: u64, square: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip = rng.random_bool(0.5);
        let turns: u8 = rng.random_range(0..4);
        AugmentOp { flip, quarter_turns: if square { turns } else { turns & 2 } }
    }

    /// The op that undoes `self`.
    pub fn inverse(self) -> InverseOp {
        InverseOp(self)
    }

    pub fn apply<T: Scalar>(&self, s: &Sample<T>) -> Sample<T> {
        let map = |m: &ndarray::Array2<T>| {
            let m = if self.flip { flip_horizontal_map(m) } else { m.clone() };
            rotate_quarter_map(&m, self.quarter_turns)
        };
        let img = if self.flip { flip_horizontal_image(&s.image) } else { s.image.clone() };
        Sample {
            id: s.id.clone(),
            image: rotate_quarter_image(&img, self.quarter_turns),
            label: s.label.as_ref().map(map),
            label_kind: s.label_kind,
            coarse: s.coarse.as_ref().map(map),
            source_group: s.source_group,
        }
    }
}

/// Undo of an [`AugmentOp`]: rotate back, then flip.
#[derive(Clone, Copy, Debug)]
pub struct InverseOp(AugmentOp);

impl InverseOp {
    pub fn apply<T: Scalar>(&self, s: &Sample<T>) -> Sample<T> {
        let back = AugmentOp { flip: false, quarter_turns: (4 - self.0.quarter_turns % 4) % 4 }.apply(s);
        AugmentOp { flip: self.0.flip, quarter_turns: 0 }.apply(&back)
    }
}

/// Random horizontal flip and right-angle rotation, deterministic per seed.
pub fn augment<T: Scalar>(sample: &Sample<T>, seed: u64) -> Sample<T> {
    let (h, w) = sample.size();
    AugmentOp::random(seed, h == w).apply(sample)
}
