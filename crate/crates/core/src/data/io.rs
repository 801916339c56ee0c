//! PNG I/O for images and 8-bit label maps, and dataset directory scanning.
//!
//! Layout of a dataset root:
//!
//! ```text
//! images/<id>.png          RGB
//! labels_real/<id>.png     8-bit grayscale, binarized at 128
//! labels_coarse/<id>.png   8-bit grayscale
//! val/images/<id>.png      validation images
//! val/labels/<id>.png      validation ground truth
//! val/labels_coarse/<id>.png (optional)
//! ```

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::Scalar;

pub const IMAGES_DIR: &str = "images";
pub const REAL_DIR: &str = "labels_real";
pub const COARSE_DIR: &str = "labels_coarse";
pub const VAL_DIR: &str = "val";
pub const VAL_LABELS_DIR: &str = "labels";

pub fn load_rgb<T: Scalar>(path: &Path) -> Result<Array3<T>> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?.to_rgb8();
    Ok(rgb_to_array(&img))
}

pub fn rgb_to_array<T: Scalar>(img: &RgbImage) -> Array3<T> {
    let (w, h) = img.dimensions();
    let scale = T::lit(255.0);
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        T::lit(f64::from(img.get_pixel(x as u32, y as u32)[c])) / scale
    })
}

/// Loads an 8-bit grayscale map scaled to `[0,1]` by /255.
pub fn load_gray<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?.to_luma8();
    Ok(gray_to_array(&img))
}

pub fn gray_to_array<T: Scalar>(img: &GrayImage) -> Array2<T> {
    let (w, h) = img.dimensions();
    let scale = T::lit(255.0);
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        T::lit(f64::from(img.get_pixel(x as u32, y as u32)[0])) / scale
    })
}

/// Loads a ground-truth mask, binarized at 128.
pub fn load_mask<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        if img.get_pixel(x as u32, y as u32)[0] >= 128 {
            T::one()
        } else {
            T::zero()
        }
    }))
}

/// `round(255·v)` with clamping.
pub fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn map_to_gray<T: Scalar>(map: &Array2<T>) -> GrayImage {
    let (h, w) = map.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(map[[y as usize, x as usize]])]))
}

pub fn array_to_rgb<T: Scalar>(img: &Array3<T>) -> RgbImage {
    let (h, w, _) = img.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = |c| to_u8(img[[y as usize, x as usize, c]]);
        image::Rgb([p(0), p(1), p(2)])
    })
}

/// Snaps a map onto the 8-bit grid it will be stored on, so in-memory
/// values equal what a later reload produces.
pub fn quantize_map<T: Scalar>(map: &Array2<T>) -> Array2<T> {
    let scale = T::lit(255.0);
    map.mapv(|v| T::lit(f64::from(to_u8(v))) / scale)
}

pub fn encode_gray_png<T: Scalar>(map: &Array2<T>) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    map_to_gray(map).write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn save_gray<T: Scalar>(path: &Path, map: &Array2<T>) -> Result<()> {
    let bytes = encode_gray_png(map)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_rgb<T: Scalar>(path: &Path, img: &Array3<T>) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    array_to_rgb(img).write_to(&mut buf, ImageFormat::Png)?;
    std::fs::write(path, buf.into_inner()).map_err(|e| Error::io(path, e))
}

/// Sorted ids (file stems) of the `.png` files in `dir`; empty if absent.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("png")) == Some(true) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn png_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.png"))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
