//! Synthetic salient-object corpus: one coloured shape on a smooth, noisy
//! background, with its exact mask and a degraded coarse map (dilated mask,
//! blurred, with additive noise and a spurious blob).

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{self, png_path};
use crate::error::Result;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    /// Dilation radius range (pixels) applied to the mask for the coarse map.
    pub dilation: (usize, usize),
    /// Amplitude of uniform noise added to the coarse map.
    pub coarse_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { count: 200, size: 48, dilation: (3, 5), coarse_noise: 0.25, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem<T> {
    pub id: String,
    pub image: Array3<T>,
    pub mask: Array2<T>,
    pub coarse: Array2<T>,
}

#[derive(Clone, Copy)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { cy: f64, cx: f64, hy: f64, hx: f64, angle: f64 },
    Triangle { pts: [(f64, f64); 3] },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, n: f64) -> Shape {
        let cy = rng.random_range(0.3..0.7) * n;
        let cx = rng.random_range(0.3..0.7) * n;
        match rng.random_range(0..3) {
            0 => Shape::Ellipse { cy, cx, ry: rng.random_range(0.12..0.3) * n, rx: rng.random_range(0.12..0.3) * n },
            1 => Shape::Rect {
                cy,
                cx,
                hy: rng.random_range(0.1..0.25) * n,
                hx: rng.random_range(0.1..0.25) * n,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            },
            _ => {
                let r = rng.random_range(0.18..0.32) * n;
                let a0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let pts = [0.0, 2.1, 4.2].map(|d: f64| {
                    let a = a0 + d + rng.random_range(-0.3..0.3);
                    (cy + r * a.sin(), cx + r * a.cos())
                });
                Shape::Triangle { pts }
            }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Rect { cy, cx, hy, hx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= hx && v.abs() <= hy
            }
            Shape::Triangle { pts } => {
                let sign = |(ay, ax): (f64, f64), (by, bx): (f64, f64)| (x - bx) * (ay - by) - (ax - bx) * (y - by);
                let d1 = sign(pts[0], pts[1]);
                let d2 = sign(pts[1], pts[2]);
                let d3 = sign(pts[2], pts[0]);
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn dilate(mask: &Array2<f64>, r: usize) -> Array2<f64> {
    let (h, w) = mask.dim();
    let r2 = (r * r) as isize;
    let ri = r as isize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if dy * dy + dx * dx > r2 {
                    continue;
                }
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0
                    && xx >= 0
                    && (yy as usize) < h
                    && (xx as usize) < w
                    && mask[[yy as usize, xx as usize]] > 0.5
                {
                    return 1.0;
                }
            }
        }
        0.0
    })
}

fn box_blur(m: &Array2<f64>) -> Array2<f64> {
    let (h, w) = m.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut s = 0.0;
        let mut n = 0.0;
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                s += m[[yy, xx]];
                n += 1.0;
            }
        }
        s / n
    })
}

/// Generates one item; `index` selects an independent random stream.
pub fn generate_item<T: Scalar>(cfg: &SynthConfig, index: usize) -> SynthItem<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = cfg.size;
    let nf = n as f64;
    let shape = Shape::random(&mut rng, nf);
    let fg = random_color(&mut rng);
    // background colours kept away from the object colour
    let mut bg0 = random_color(&mut rng);
    let mut bg1 = random_color(&mut rng);
    for bg in [&mut bg0, &mut bg1] {
        let dist: f64 = bg.iter().zip(&fg).map(|(a, b)| (a - b).abs()).sum();
        if dist < 0.6 {
            for (b, f) in bg.iter_mut().zip(&fg) {
                *b = 1.0 - *f;
            }
        }
    }
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gs, gc) = angle.sin_cos();
    let noise_amp = 0.06;
    let mut mask = Array2::<f64>::zeros((n, n));
    let mut image = Array3::<f64>::zeros((n, n, 3));
    for y in 0..n {
        for x in 0..n {
            let inside = shape.contains(y as f64 + 0.5, x as f64 + 0.5);
            mask[[y, x]] = f64::from(u8::from(inside));
            let t = (((x as f64 / nf - 0.5) * gc + (y as f64 / nf - 0.5) * gs) + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                let base = if inside { fg[c] } else { bg0[c] * (1.0 - t) + bg1[c] * t };
                let v = base + rng.random_range(-noise_amp..noise_amp);
                image[[y, x, c]] = v.clamp(0.0, 1.0);
            }
        }
    }
    let r = rng.random_range(cfg.dilation.0..=cfg.dilation.1);
    let mut coarse = box_blur(&dilate(&mask, r));
    // spurious blob
    let by = rng.random_range(0.0..nf);
    let bx = rng.random_range(0.0..nf);
    let br = rng.random_range(0.05..0.12) * nf;
    let bv = rng.random_range(0.3..0.7);
    for ((y, x), v) in coarse.indexed_iter_mut() {
        if ((y as f64 - by).powi(2) + (x as f64 - bx).powi(2)).sqrt() <= br {
            *v = v.max(bv);
        }
        *v = (*v + rng.random_range(-cfg.coarse_noise..cfg.coarse_noise) * 0.5).clamp(0.0, 1.0);
    }
    SynthItem {
        id: format!("syn{index:05}"),
        image: image.mapv(T::lit),
        mask: mask.mapv(T::lit),
        coarse: io::quantize_map(&coarse).mapv(T::lit),
    }
}

pub fn generate<T: Scalar>(cfg: &SynthConfig) -> Vec<SynthItem<T>> {
    (0..cfg.count).map(|i| generate_item(cfg, i)).collect()
}

/// Writes a dataset directory: `count` training items, the first
/// `num_real` of which get real labels, plus `val_count` validation items.
pub fn write_dataset(root: &Path, cfg: &SynthConfig, num_real: usize, val_count: usize) -> Result<()> {
    let dirs = [
        root.join(io::IMAGES_DIR),
        root.join(io::REAL_DIR),
        root.join(io::COARSE_DIR),
        root.join(io::VAL_DIR).join(io::IMAGES_DIR),
        root.join(io::VAL_DIR).join(io::VAL_LABELS_DIR),
        root.join(io::VAL_DIR).join(io::COARSE_DIR),
    ];
    for d in &dirs {
        io::create_dir(d)?;
    }
    for i in 0..cfg.count {
        let it: SynthItem<f64> = generate_item(cfg, i);
        io::save_rgb(&png_path(&dirs[0], &it.id), &it.image)?;
        if i < num_real {
            io::save_gray(&png_path(&dirs[1], &it.id), &it.mask)?;
        }
        io::save_gray(&png_path(&dirs[2], &it.id), &it.coarse)?;
    }
    for j in 0..val_count {
        let mut it: SynthItem<f64> = generate_item(cfg, cfg.count + j);
        it.id = format!("val{j:05}");
        io::save_rgb(&png_path(&dirs[3], &it.id), &it.image)?;
        io::save_gray(&png_path(&dirs[4], &it.id), &it.mask)?;
        io::save_gray(&png_path(&dirs[5], &it.id), &it.coarse)?;
    }
    Ok(())
}
