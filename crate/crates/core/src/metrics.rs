//! Saliency evaluation: MAE, precision-recall curve over 256 thresholds,
//! maximum F-measure and the structure measure.
//!
//! Ground-truth maps are binarized at 0.5 (128 on the 8-bit scale).
//! Thresholds are `k/255` for `k = 0..=255` and a pixel is positive when
//! `pred ≥ k/255`, compared in f64.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{geometry, io};
use crate::error::{shape_err, Error, Result};
use crate::Scalar;

pub const NUM_THRESHOLDS: usize = 256;
pub const BETA2: f64 = 0.3;
pub const S_ALPHA: f64 = 0.5;
/// Double-precision machine epsilon, the regularizer of the structure measure.
const EPS: f64 = f64::EPSILON;

pub fn threshold(k: usize) -> f64 {
    k as f64 / 255.0
}

fn to_f64<T: Scalar>(m: &Array2<T>) -> Array2<f64> {
    m.mapv(Scalar::to_f64_lossy)
}

fn binarize<T: Scalar>(gt: &Array2<T>) -> Array2<bool> {
    gt.mapv(|v| v.to_f64_lossy() >= 0.5)
}

fn check_shapes<T>(what: &str, pred: &Array2<T>, gt: &Array2<T>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(shape_err(what, pred.shape(), gt.shape()));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn mae<T: Scalar>(pred: &Array2<T>, gt: &Array2<T>) -> Result<f64> {
    check_shapes("mae", pred, gt)?;
    if pred.is_empty() {
        return Err(Error::Data("mae of an empty map".into()));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(&p, &g)| (p.to_f64_lossy() - g.to_f64_lossy()).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Number of thresholds `k/255` that `p` reaches, minus one: the largest
/// `k` with `k/255 ≤ p`, or -1.
fn top_threshold(p: f64) -> isize {
    let mut k = ((p * 255.0).floor() as isize).clamp(-1, 255);
    while k < 255 && threshold((k + 1) as usize) <= p {
        k += 1;
    }
    while k >= 0 && threshold(k as usize) > p {
        k -= 1;
    }
    k
}

/// Precision and recall of one image at every threshold. Precision is 1
/// when nothing is predicted positive; recall is 0 when the ground truth
/// has no foreground.
pub fn image_pr<T: Scalar>(pred: &Array2<T>, gt: &Array2<T>) -> Result<Vec<(f64, f64)>> {
    check_shapes("pr curve", pred, gt)?;
    let mut fg_hist = [0usize; NUM_THRESHOLDS];
    let mut bg_hist = [0usize; NUM_THRESHOLDS];
    let mut fg_total = 0;
    for (&p, &g) in pred.iter().zip(gt) {
        let fg = g.to_f64_lossy() >= 0.5;
        fg_total += usize::from(fg);
        let k = top_threshold(p.to_f64_lossy());
        if k >= 0 {
            if fg {
                fg_hist[k as usize] += 1;
            } else {
                bg_hist[k as usize] += 1;
            }
        }
    }
    let mut out = vec![(0.0, 0.0); NUM_THRESHOLDS];
    let (mut tp, mut fp) = (0usize, 0usize);
    for k in (0..NUM_THRESHOLDS).rev() {
        tp += fg_hist[k];
        fp += bg_hist[k];
        let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if fg_total == 0 { 0.0 } else { tp as f64 / fg_total as f64 };
        out[k] = (p, r);
    }
    Ok(out)
}

/// Per-image curves averaged across images.
pub fn pr_curve<T: Scalar>(preds: &[Array2<T>], gts: &[Array2<T>]) -> Result<Vec<(f64, f64)>> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "pr curve needs matched nonempty lists, got {} predictions and {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut acc = vec![(0.0, 0.0); NUM_THRESHOLDS];
    for (p, g) in preds.iter().zip(gts) {
        for (a, (pp, rr)) in acc.iter_mut().zip(image_pr(p, g)?) {
            a.0 += pp;
            a.1 += rr;
        }
    }
    let n = preds.len() as f64;
    Ok(acc.into_iter().map(|(p, r)| (p / n, r / n)).collect())
}

pub fn f_measure(p: f64, r: f64, beta2: f64) -> f64 {
    let den = beta2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * p * r / den
    }
}

pub fn max_f(pr: &[(f64, f64)], beta2: f64) -> f64 {
    pr.iter().map(|&(p, r)| f_measure(p, r, beta2)).fold(0.0, f64::max)
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = xs.fold((0.0, 0), |(s, n), x| (s + x, n + 1));
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// `2x / (x² + 1 + σ + eps)` over the pixels selected by `mask`, with σ the
/// sample standard deviation.
fn object_score(values: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    let sel: Vec<f64> = values.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if sel.is_empty() {
        return 0.0;
    }
    let (x, n) = mean(sel.iter().copied());
    let sigma = if n > 1 { (sel.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn s_object(pred: &Array2<f64>, gt: &Array2<bool>) -> f64 {
    let u = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    let fg = object_score(pred, gt);
    let inv = pred.mapv(|p| 1.0 - p);
    let bg = object_score(&inv, &gt.mapv(|g| !g));
    u * fg + (1.0 - u) * bg
}

/// SSIM-style similarity of one region.
fn region_ssim(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = pred.sum() / nf;
    let y = gt.sum() / nf;
    let d = nf - 1.0 + EPS;
    let sx2 = pred.iter().map(|p| (p - x).powi(2)).sum::<f64>() / d;
    let sy2 = gt.iter().map(|g| (g - y).powi(2)).sum::<f64>() / d;
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / d;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Split point `(col, row)` as 1-based rounded centroid of the foreground;
/// the image centre when there is none. Quadrants are rows `..row`/`row..`
/// and columns `..col`/`col..` in 0-based half-open ranges.
fn centroid(gt: &Array2<bool>) -> (usize, usize) {
    let (h, w) = gt.dim();
    let total = gt.iter().filter(|&&g| g).count();
    if total == 0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((y, x), &g) in gt.indexed_iter() {
        if g {
            sx += (x + 1) as f64;
            sy += (y + 1) as f64;
        }
    }
    ((sx / total as f64).round() as usize, (sy / total as f64).round() as usize)
}

fn s_region(pred: &Array2<f64>, gt: &Array2<bool>) -> f64 {
    let (h, w) = gt.dim();
    let (cx, cy) = centroid(gt);
    let gtf = gt.mapv(|g| f64::from(u8::from(g)));
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let q = |r: ndarray::SliceInfo<_, ndarray::Ix2, ndarray::Ix2>| region_ssim(pred.slice(&r), gtf.slice(&r));
    w1 * q(s![..cy, ..cx]) + w2 * q(s![..cy, cx..]) + w3 * q(s![cy.., ..cx]) + w4 * q(s![cy.., cx..])
}

/// Structure measure `α·S_object + (1−α)·S_region`, clamped to `[0,1]`.
/// An all-background ground truth scores `1 − mean(pred)`, an
/// all-foreground one `mean(pred)`.
pub fn s_measure<T: Scalar>(pred: &Array2<T>, gt: &Array2<T>, alpha: f64) -> Result<f64> {
    check_shapes("s-measure", pred, gt)?;
    if pred.is_empty() {
        return Err(Error::Data("s-measure of an empty map".into()));
    }
    let p = to_f64(pred);
    let g = binarize(gt);
    let fg = g.iter().filter(|&&v| v).count();
    let q = if fg == 0 {
        1.0 - p.mean().unwrap()
    } else if fg == g.len() {
        p.mean().unwrap()
    } else {
        alpha * s_object(&p, &g) + (1.0 - alpha) * s_region(&p, &g)
    };
    Ok(q.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub t: f64,
    pub p: f64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub mae: f64,
    pub max_f: f64,
    pub s_measure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub n: usize,
    pub mae: f64,
    pub max_f: f64,
    pub s_measure: f64,
    pub pr: Vec<PrPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_image: Option<Vec<ImageMetrics>>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn pr_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for pt in &self.pr {
            writeln!(out, "{:.6},{:.6},{:.6}", pt.t, pt.p, pt.r).unwrap();
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "dataset    {}", self.dataset).unwrap();
        writeln!(out, "images     {}", self.n).unwrap();
        writeln!(out, "MAE        {:.4}", self.mae).unwrap();
        writeln!(out, "max F      {:.4}", self.max_f).unwrap();
        writeln!(out, "S-measure  {:.4}", self.s_measure).unwrap();
        out
    }
}

/// Aggregates metrics over `(id, pred, gt)` triples of equal-shaped maps.
pub fn evaluate_maps<T: Scalar>(
    dataset: &str,
    items: &[(String, Array2<T>, Array2<T>)],
    per_image: bool,
) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let n = items.len() as f64;
    let mut acc = vec![(0.0, 0.0); NUM_THRESHOLDS];
    let (mut mae_sum, mut s_sum) = (0.0, 0.0);
    let mut rows = Vec::new();
    for (id, p, g) in items {
        let m = mae(p, g)?;
        let sm = s_measure(p, g, S_ALPHA)?;
        let curve = image_pr(p, g)?;
        for (a, &(pp, rr)) in acc.iter_mut().zip(&curve) {
            a.0 += pp;
            a.1 += rr;
        }
        mae_sum += m;
        s_sum += sm;
        if per_image {
            rows.push(ImageMetrics { id: id.clone(), mae: m, max_f: max_f(&curve, BETA2), s_measure: sm });
        }
    }
    let curve: Vec<(f64, f64)> = acc.into_iter().map(|(p, r)| (p / n, r / n)).collect();
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        n: items.len(),
        mae: mae_sum / n,
        max_f: max_f(&curve, BETA2),
        s_measure: s_sum / n,
        pr: curve.iter().enumerate().map(|(k, &(p, r))| PrPoint { t: threshold(k), p, r }).collect(),
        per_image: per_image.then_some(rows),
    })
}

/// Result of pairing two directories by file stem.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pairing {
    pub matched: Vec<String>,
    pub missing_gt: Vec<String>,
    pub missing_pred: Vec<String>,
}

pub fn pair_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<Pairing> {
    let preds = io::list_ids(pred_dir)?;
    let gts = io::list_ids(gt_dir)?;
    let mut out = Pairing::default();
    for id in &preds {
        if gts.binary_search(id).is_ok() {
            out.matched.push(id.clone());
        } else {
            out.missing_gt.push(id.clone());
        }
    }
    out.missing_pred = gts.into_iter().filter(|id| preds.binary_search(id).is_err()).collect();
    Ok(out)
}

/// Evaluates 8-bit prediction PNGs against ground-truth PNGs with the same
/// stem. Predictions are resized to the ground-truth size when needed.
/// Unmatched files are logged and skipped.
pub fn evaluate_corpus(
    pred_dir: &Path,
    gt_dir: &Path,
    dataset: &str,
    per_image: bool,
) -> Result<(MetricsReport, Pairing)> {
    let pairing = pair_dirs(pred_dir, gt_dir)?;
    for id in &pairing.missing_gt {
        log::warn!("{id}: prediction has no ground truth, skipped");
    }
    for id in &pairing.missing_pred {
        log::warn!("{id}: ground truth has no prediction, skipped");
    }
    if pairing.matched.is_empty() {
        return Err(Error::Data(format!("no matching files between {} and {}", pred_dir.display(), gt_dir.display())));
    }
    let mut items = Vec::with_capacity(pairing.matched.len());
    for id in &pairing.matched {
        let gt: Array2<f64> = io::load_mask(&io::png_path(gt_dir, id))?;
        let mut pred: Array2<f64> = io::load_gray(&io::png_path(pred_dir, id))?;
        if pred.dim() != gt.dim() {
            pred = geometry::resize_label(&pred, gt.nrows(), gt.ncols());
        }
        items.push((id.clone(), pred, gt));
    }
    Ok((evaluate_maps(dataset, &items, per_image)?, pairing))
}
