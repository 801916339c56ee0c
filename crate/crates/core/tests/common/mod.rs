#![allow(dead_code)]

pub mod metric_oracle;
pub mod stubs;

use std::collections::BTreeMap;

use hybrid_sod::autograd::{Graph, Tensor, Var};
use hybrid_sod::nn::ParamStore;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Tensor<f64> {
    Array4::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

pub fn binary(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Tensor<f64> {
    Array4::from_shape_simple_fn(shape, || f64::from(u8::from(rng.random_bool(0.5))))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct-loop convolution with zero padding; `w` is Cout×Cin×k×k, `b` has Cout entries.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dim();
    let (cout, cin2, k, _) = w.dim();
    assert_eq!(cin, cin2);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Array4::zeros((n, cout, ho, wo));
    for bi in 0..n {
        for o in 0..cout {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for c in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w[[o, c, ky, kx]] * x[[bi, c, iy as usize, ix as usize]];
                            }
                        }
                    }
                    out[[bi, o, y, xx]] = acc;
                }
            }
        }
    }
    out
}

/// Bilinear resampling with half-pixel centres and edge clamping, written
/// straight from the coordinate mapping.
pub fn naive_resize(x: &Tensor<f64>, ho: usize, wo: usize) -> Tensor<f64> {
    let (n, c, h, w) = x.dim();
    let coord = |o: usize, inn: usize, out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * inn as f64 / out as f64 - 0.5).clamp(0.0, (inn - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(inn - 1);
        (lo, hi, s - lo as f64)
    };
    Array4::from_shape_fn((n, c, ho, wo), |(b, ch, y, xx)| {
        let (y0, y1, fy) = coord(y, h, ho);
        let (x0, x1, fx) = coord(xx, w, wo);
        let top = x[[b, ch, y0, x0]] * (1.0 - fx) + x[[b, ch, y0, x1]] * fx;
        let bot = x[[b, ch, y1, x0]] * (1.0 - fx) + x[[b, ch, y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Norm-wise relative error between analytic and numeric gradient samples.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-9 {
        diff
    } else {
        diff / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Checks every parameter tensor of `store` against central differences
/// on up to `per_tensor` sampled entries. `build` records the scalar loss.
/// Returns (tensor name, relative error) in name order.
pub fn param_gradcheck(
    store: &ParamStore<f64>,
    build: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
    per_tensor: usize,
    seed: u64,
) -> Vec<(String, f64)> {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss);
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let l = build(&mut g, s);
        g.scalar(l)
    };
    let mut r = rng(seed);
    let mut out = BTreeMap::new();
    let mut work = store.clone();
    for id in store.ids() {
        let value = store.get(id);
        let zeros = Tensor::zeros(value.raw_dim());
        let analytic = grads.param(id).unwrap_or(&zeros);
        let n = value.len();
        let picks: Vec<usize> =
            if n <= per_tensor { (0..n).collect() } else { (0..per_tensor).map(|_| r.random_range(0..n)).collect() };
        let mut a = Vec::new();
        let mut num = Vec::new();
        for flat in picks {
            let orig = value.as_slice().unwrap()[flat];
            work.get_mut(id).as_slice_mut().unwrap()[flat] = orig + FD_STEP;
            let up = eval(&work);
            work.get_mut(id).as_slice_mut().unwrap()[flat] = orig - FD_STEP;
            let down = eval(&work);
            work.get_mut(id).as_slice_mut().unwrap()[flat] = orig;
            a.push(analytic.as_slice().unwrap()[flat]);
            num.push((up - down) / (2.0 * FD_STEP));
        }
        if std::env::var("GRADDEBUG").is_ok() && relative_error(&a, &num) > 1e-4 {
            eprintln!("{} a={a:?} n={num:?}", store.name(id));
        }
        out.insert(store.name(id).to_string(), relative_error(&a, &num));
    }
    out.into_iter().collect()
}

/// Checks the gradient with respect to a graph input tensor.
pub fn input_gradcheck(
    input: &Tensor<f64>,
    build: impl Fn(&mut Graph<f64>, Var) -> Var,
    per_tensor: usize,
    seed: u64,
) -> f64 {
    let mut g = Graph::new();
    let x = g.watch(input.clone());
    let loss = build(&mut g, x);
    let grads = g.backward(loss);
    let analytic = grads.of(x).expect("input gradient").clone();
    let eval = |t: &Tensor<f64>| {
        let mut g = Graph::new();
        let x = g.watch(t.clone());
        let l = build(&mut g, x);
        g.scalar(l)
    };
    let mut r = rng(seed);
    let mut work = input.clone();
    let n = input.len();
    let mut a = Vec::new();
    let mut num = Vec::new();
    for _ in 0..per_tensor.min(n) {
        let flat = r.random_range(0..n);
        let orig = input.as_slice().unwrap()[flat];
        work.as_slice_mut().unwrap()[flat] = orig + FD_STEP;
        let up = eval(&work);
        work.as_slice_mut().unwrap()[flat] = orig - FD_STEP;
        let down = eval(&work);
        work.as_slice_mut().unwrap()[flat] = orig;
        a.push(analytic.as_slice().unwrap()[flat]);
        num.push((up - down) / (2.0 * FD_STEP));
    }
    relative_error(&a, &num)
}

/// Scalar objective for checks: BCE of σ(x) against a fixed random target.
pub fn squash_loss(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let shape = g.shape(x);
    let target = uniform(&mut rng(seed), (shape[0], shape[1], shape[2], shape[3]), 0.0, 1.0);
    let s = g.sigmoid(x);
    g.bce(s, &target, 1e-7).unwrap()
}

/// Smooth scalar probe `Σ_k mean(r_k ⊙ x_k)` with fixed random weights
/// `r_k`; batch size must be one.
pub fn probe_loss(g: &mut Graph<f64>, xs: &[Var], seed: u64) -> Var {
    let mut r = rng(seed);
    let terms: Vec<(Var, f64)> = xs
        .iter()
        .map(|&x| {
            let s = g.shape(x);
            assert_eq!(s[0], 1, "probe loss needs batch size one");
            let w = g.input(uniform(&mut r, (s[0], s[1], s[2], s[3]), -1.0, 1.0));
            let m = g.mul(x, w).unwrap();
            let c = g.channel_mean(m);
            (g.global_avg_pool(c), 1.0)
        })
        .collect();
    g.weighted_sum(&terms).unwrap()
}
