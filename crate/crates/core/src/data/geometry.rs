//! Resampling and warping of label maps and RGB images.

use ndarray::{Array2, Array3, Axis};

use crate::autograd::kernels;
use crate::Scalar;

/// Bilinear resize with half-pixel centres.
pub fn resize_map<T: Scalar>(map: &Array2<T>, h: usize, w: usize) -> Array2<T> {
    let (hi, wi) = map.dim();
    if (hi, wi) == (h, w) {
        return map.clone();
    }
    let src = map.as_standard_layout();
    let mut out = Array2::zeros((h, w));
    kernels::resize_planes(src.as_slice().unwrap(), 1, (hi, wi), (h, w), out.as_slice_mut().unwrap());
    out
}

/// [`resize_map`] followed by a clamp to `[0,1]`.
pub fn resize_label<T: Scalar>(map: &Array2<T>, h: usize, w: usize) -> Array2<T> {
    resize_map(map, h, w).mapv(|v| v.max(T::zero()).min(T::one()))
}

/// Bilinear resize of an H×W×3 image.
pub fn resize_image<T: Scalar>(img: &Array3<T>, h: usize, w: usize) -> Array3<T> {
    let (hi, wi, c) = img.dim();
    if (hi, wi) == (h, w) {
        return img.clone();
    }
    let planar = img.view().permuted_axes([2, 0, 1]).as_standard_layout().into_owned();
    let mut out = Array3::zeros((c, h, w));
    kernels::resize_planes(planar.as_slice().unwrap(), c, (hi, wi), (h, w), out.as_slice_mut().unwrap());
    out.permuted_axes([1, 2, 0]).as_standard_layout().into_owned()
}

pub fn flip_horizontal_map<T: Scalar>(map: &Array2<T>) -> Array2<T> {
    let mut v = map.view();
    v.invert_axis(Axis(1));
    v.to_owned()
}

pub fn flip_horizontal_image<T: Scalar>(img: &Array3<T>) -> Array3<T> {
    let mut v = img.view();
    v.invert_axis(Axis(1));
    v.to_owned()
}

/// Counter-clockwise rotation by `quarter_turns`·90°.
pub fn rotate_quarter_map<T: Scalar>(map: &Array2<T>, quarter_turns: u8) -> Array2<T> {
    let mut out = map.clone();
    for _ in 0..quarter_turns % 4 {
        // ccw: new[r][c] = old[c][w-1-r]
        let mut v = out.view();
        v.invert_axis(Axis(1));
        out = v.reversed_axes().as_standard_layout().into_owned();
    }
    out
}

pub fn rotate_quarter_image<T: Scalar>(img: &Array3<T>, quarter_turns: u8) -> Array3<T> {
    let mut out = img.clone();
    for _ in 0..quarter_turns % 4 {
        let mut v = out.view();
        v.invert_axis(Axis(1));
        out = v.permuted_axes([1, 0, 2]).as_standard_layout().into_owned();
    }
    out
}

/// Rotation by `degrees` counter-clockwise about the map centre, bilinear,
/// with zero fill outside the source.
pub fn rotate_map<T: Scalar>(map: &Array2<T>, degrees: f64) -> Array2<T> {
    let (h, w) = map.dim();
    let theta = degrees.to_radians();
    let (s, c) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    Array2::from_shape_fn((h, w), |(y, x)| {
        // inverse map: rotate output coordinate by −θ (image y axis points down)
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = c * dx - s * dy + cx;
        let sy = s * dx + c * dy + cy;
        sample_bilinear_zero(map, sy, sx)
    })
}

fn sample_bilinear_zero<T: Scalar>(map: &Array2<T>, y: f64, x: f64) -> T {
    let (h, w) = map.dim();
    let y0 = y.floor();
    let x0 = x.floor();
    let ly = y - y0;
    let lx = x - x0;
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            map[[yy as usize, xx as usize]].to_f64_lossy()
        }
    };
    let v = (1.0 - ly) * ((1.0 - lx) * at(y0, x0) + lx * at(y0, x0 + 1.0))
        + ly * ((1.0 - lx) * at(y0 + 1.0, x0) + lx * at(y0 + 1.0, x0 + 1.0));
    T::lit(v)
}

/// Crops the window `(top, left, h, w)` and resizes it back to the map size.
pub fn crop_resize_map<T: Scalar>(map: &Array2<T>, top: usize, left: usize, h: usize, w: usize) -> Array2<T> {
    let (mh, mw) = map.dim();
    let window = map.slice(ndarray::s![top..top + h, left..left + w]).to_owned();
    resize_label(&window, mh, mw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quarter_rotation_is_counter_clockwise() {
        let m = array![[1.0f64, 2.0], [3.0, 4.0]];
        assert_eq!(rotate_quarter_map(&m, 1), array![[2.0, 4.0], [1.0, 3.0]]);
        assert_eq!(rotate_quarter_map(&m, 4), m);
    }

    #[test]
    fn image_and_map_quarter_rotations_agree() {
        let m = Array2::from_shape_fn((3, 3), |(r, c)| (r * 3 + c) as f64);
        let img = Array3::from_shape_fn((3, 3, 3), |(r, c, _)| (r * 3 + c) as f64);
        for k in 0..4 {
            let rm = rotate_quarter_map(&m, k);
            let ri = rotate_quarter_image(&img, k);
            for ch in 0..3 {
                assert_eq!(ri.index_axis(Axis(2), ch), rm);
            }
        }
    }

    #[test]
    fn zero_rotation_keeps_interior() {
        let m = Array2::from_shape_fn((5, 5), |(r, c)| ((r + c) % 2) as f64);
        let r = rotate_map(&m, 0.0);
        for (a, b) in r.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
