//! Unsupervised coarse saliency via the minimum barrier distance transform.
//!
//! The barrier of a path is `max − min` of intensity along it; each pixel's
//! distance is the smallest barrier over paths to the image border. An
//! approximate transform is computed by alternating forward and backward
//! raster scans, each relaxing a pixel from its two already-visited
//! 4-neighbours while tracking the running max/min of the best path.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::Scalar;

/// Number of forward+backward raster-scan pairs.
pub const MBD_PASSES: usize = 3;

/// Barrier distance of one intensity channel before normalization.
/// Border pixels are seeds with distance zero.
pub fn mbd_raw<T: Scalar>(channel: ArrayView2<T>, passes: usize) -> Array2<T> {
    let (h, w) = channel.dim();
    let mut dist = Array2::from_elem((h, w), T::infinity());
    let mut hi = channel.to_owned();
    let mut lo = channel.to_owned();
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                dist[[y, x]] = T::zero();
            }
        }
    }
    let relax =
        |dist: &mut Array2<T>, hi: &mut Array2<T>, lo: &mut Array2<T>, y: usize, x: usize, ny: usize, nx: usize| {
            let v = channel[[y, x]];
            let up = hi[[ny, nx]].max(v);
            let down = lo[[ny, nx]].min(v);
            let cost = up - down;
            if cost < dist[[y, x]] {
                dist[[y, x]] = cost;
                hi[[y, x]] = up;
                lo[[y, x]] = down;
            }
        };
    for _ in 0..passes {
        for y in 0..h {
            for x in 0..w {
                if y > 0 {
                    relax(&mut dist, &mut hi, &mut lo, y, x, y - 1, x);
                }
                if x > 0 {
                    relax(&mut dist, &mut hi, &mut lo, y, x, y, x - 1);
                }
            }
        }
        for y in (0..h).rev() {
            for x in (0..w).rev() {
                if y + 1 < h {
                    relax(&mut dist, &mut hi, &mut lo, y, x, y + 1, x);
                }
                if x + 1 < w {
                    relax(&mut dist, &mut hi, &mut lo, y, x, y, x + 1);
                }
            }
        }
    }
    dist
}

/// Coarse saliency map of an H×W×3 image in `[0,1]`: per-channel barrier
/// distances summed, then min–max normalized. A map with no spread
/// (constant images, 1×1 inputs) normalizes to all zeros.
pub fn generate_coarse_label<T: Scalar>(image: &Array3<T>) -> Array2<T> {
    let (h, w, _) = image.dim();
    let mut total = Array2::<T>::zeros((h, w));
    for channel in image.axis_iter(Axis(2)) {
        total += &mbd_raw(channel, MBD_PASSES);
    }
    let max = total.iter().copied().fold(T::neg_infinity(), T::max);
    let min = total.iter().copied().fold(T::infinity(), T::min);
    let spread = max - min;
    if !(spread > T::zero()) || !spread.is_finite() {
        return Array2::zeros((h, w));
    }
    total.mapv(|v| (v - min) / spread)
}
