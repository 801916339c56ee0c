//! Brute-force metric implementations used as references.

/// Maps as row-major vectors with explicit width.
pub struct Map {
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.v[row * self.w + col]
    }
}

pub fn mae(p: &Map, g: &Map) -> f64 {
    let mut s = 0.0;
    for i in 0..p.v.len() {
        s += (p.v[i] - g.v[i]).abs();
    }
    s / p.v.len() as f64
}

/// Counts TP/FP/FN for every threshold separately.
pub fn pr_curve(preds: &[Map], gts: &[Map]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for k in 0..256 {
        let t = k as f64 / 255.0;
        let (mut ps, mut rs) = (0.0, 0.0);
        for (p, g) in preds.iter().zip(gts) {
            let (mut tp, mut fp, mut fneg) = (0u32, 0u32, 0u32);
            for i in 0..p.v.len() {
                let pos = p.v[i] >= t;
                let fg = g.v[i] >= 0.5;
                match (pos, fg) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            ps += if tp + fp == 0 { 1.0 } else { f64::from(tp) / f64::from(tp + fp) };
            rs += if tp + fneg == 0 { 0.0 } else { f64::from(tp) / f64::from(tp + fneg) };
        }
        out.push((ps / preds.len() as f64, rs / preds.len() as f64));
    }
    out
}

pub fn max_f(pr: &[(f64, f64)]) -> f64 {
    let mut best = 0.0f64;
    for &(p, r) in pr {
        let f = if 0.3 * p + r == 0.0 { 0.0 } else { 1.3 * p * r / (0.3 * p + r) };
        best = best.max(f);
    }
    best
}

const EPS: f64 = 2.220446049250313e-16;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn std1(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std1(values) + EPS)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let n = p.len() as f64;
    let x = mean(p);
    let y = mean(g);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for i in 0..p.len() {
        sx += (p[i] - x) * (p[i] - x);
        sy += (g[i] - y) * (g[i] - y);
        sxy += (p[i] - x) * (g[i] - y);
    }
    sx /= n - 1.0 + EPS;
    sy /= n - 1.0 + EPS;
    sxy /= n - 1.0 + EPS;
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sx + sy);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure, following the reference definition with 1-based
/// MATLAB-style indexing for the centroid split.
pub fn s_measure(p: &Map, g: &Map) -> f64 {
    let gt: Vec<f64> = g.v.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    let y = mean(&gt);
    if y == 0.0 {
        return (1.0 - mean(&p.v)).clamp(0.0, 1.0);
    }
    if y == 1.0 {
        return mean(&p.v).clamp(0.0, 1.0);
    }
    // object term
    let fg: Vec<f64> = (0..gt.len()).filter(|&i| gt[i] == 1.0).map(|i| p.v[i]).collect();
    let bg: Vec<f64> = (0..gt.len()).filter(|&i| gt[i] == 0.0).map(|i| 1.0 - p.v[i]).collect();
    let s_obj = y * object(&fg) + (1.0 - y) * object(&bg);
    // region term: centroid over 1-based indices
    let (rows, cols) = (g.h, g.w);
    let total: f64 = gt.iter().sum();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for r in 1..=rows {
        for c in 1..=cols {
            let v = gt[(r - 1) * cols + (c - 1)];
            cx += v * c as f64;
            cy += v * r as f64;
        }
    }
    let xc = (cx / total).round() as usize;
    let yc = (cy / total).round() as usize;
    let area = (rows * cols) as f64;
    let quad = |r0: usize, r1: usize, c0: usize, c1: usize| {
        // 1-based inclusive ranges r0..=r1, c0..=c1
        let mut pp = Vec::new();
        let mut gg = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                pp.push(p.at(r - 1, c - 1));
                gg.push(gt[(r - 1) * cols + (c - 1)]);
            }
        }
        ssim(&pp, &gg)
    };
    let w1 = (xc * yc) as f64 / area;
    let w2 = ((cols - xc) * yc) as f64 / area;
    let w3 = (xc * (rows - yc)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let s_reg = w1 * quad(1, yc, 1, xc)
        + w2 * quad(1, yc, xc + 1, cols)
        + w3 * quad(yc + 1, rows, 1, xc)
        + w4 * quad(yc + 1, rows, xc + 1, cols);
    (0.5 * s_obj + 0.5 * s_reg).clamp(0.0, 1.0)
}
