//! Stacking samples into network-resolution NCHW batches and back.

use ndarray::{s, Array2, Axis};

use crate::autograd::Tensor;
use crate::data::{geometry, Sample};
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// B×3×S×S
    pub images: Tensor<T>,
    /// B×1×S×S
    pub coarse: Option<Tensor<T>>,
    /// B×1×S×S
    pub labels: Option<Tensor<T>>,
    /// Native (H, W) of every item, for mapping predictions back.
    pub sizes: Vec<(usize, usize)>,
}

/// Resizes each sample to `side`×`side` and stacks it. Missing coarse maps
/// or labels are an input error when requested.
pub fn make_batch<T: Scalar>(
    samples: &[&Sample<T>],
    side: usize,
    with_coarse: bool,
    with_labels: bool,
) -> Result<Batch<T>> {
    let b = samples.len();
    let mut images = Tensor::zeros((b, 3, side, side));
    let mut coarse = with_coarse.then(|| Tensor::zeros((b, 1, side, side)));
    let mut labels = with_labels.then(|| Tensor::zeros((b, 1, side, side)));
    let mut sizes = Vec::with_capacity(b);
    for (i, s) in samples.iter().enumerate() {
        sizes.push(s.size());
        let img = geometry::resize_image(&s.image, side, side);
        images.slice_mut(s![i, .., .., ..]).assign(&img.view().permuted_axes([2, 0, 1]));
        if let Some(c) = coarse.as_mut() {
            let m = s.coarse.as_ref().ok_or_else(|| Error::Data(format!("{}: coarse label required", s.id)))?;
            c.slice_mut(s![i, 0, .., ..]).assign(&geometry::resize_label(m, side, side));
        }
        if let Some(l) = labels.as_mut() {
            let m = s.label.as_ref().ok_or_else(|| Error::Data(format!("{}: supervision label required", s.id)))?;
            l.slice_mut(s![i, 0, .., ..]).assign(&geometry::resize_label(m, side, side));
        }
    }
    Ok(Batch { images, coarse, labels, sizes })
}

/// Splits a B×1×S×S prediction into per-item maps at their native sizes.
pub fn unbatch_maps<T: Scalar>(pred: &Tensor<T>, sizes: &[(usize, usize)]) -> Vec<Array2<T>> {
    pred.axis_iter(Axis(0))
        .zip(sizes)
        .map(|(item, &(h, w))| {
            let m = item.index_axis(Axis(0), 0).to_owned();
            geometry::resize_label(&m, h, w)
        })
        .collect()
}
