//! 8-bit PNG reading and writing for `3×H×W` images and `H×W` masks.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};

use crate::diff::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("expected a {expected} tensor, got shape {shape:?}")]
    Shape { expected: &'static str, shape: Vec<usize> },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `[0,1]` to 8 bits, rounding half to even.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

/// Writes `bytes` next to `path` and renames into place, so a failed write
/// never leaves a truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

fn encode_png(path: &Path, img: image::DynamicImage) -> Result<(), ImageIoError> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|source| ImageIoError::Image {
            path: path.to_path_buf(),
            source,
        })?;
    write_atomic(path, &bytes).map_err(|source| ImageIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_rgb_png(path: &Path, image: &Tensor) -> Result<(), ImageIoError> {
    let &[3, h, w] = image.shape() else {
        return Err(ImageIoError::Shape {
            expected: "3×H×W",
            shape: image.shape().to_vec(),
        });
    };
    let d = image.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        image::Rgb([to_u8(d[p]), to_u8(d[h * w + p]), to_u8(d[2 * h * w + p])])
    });
    encode_png(path, img.into())
}

pub fn save_mask_png(path: &Path, mask: &Tensor) -> Result<(), ImageIoError> {
    let &[h, w] = mask.shape() else {
        return Err(ImageIoError::Shape {
            expected: "H×W",
            shape: mask.shape().to_vec(),
        });
    };
    let d = mask.data();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([to_u8(d[y as usize * w + x as usize])]));
    encode_png(path, img.into())
}

fn open(path: &Path) -> Result<image::DynamicImage, ImageIoError> {
    image::open(path).map_err(|source| ImageIoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// `3×H×W` in `[0,1]`.
pub fn load_rgb_png(path: &Path) -> Result<Tensor, ImageIoError> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let p = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + p] = px[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h, w], data).unwrap())
}

/// `H×W` in `[0,1]`.
pub fn load_mask_png(path: &Path) -> Result<Tensor, ImageIoError> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p[0] as f64 / 255.0).collect();
    Ok(Tensor::new(&[h, w], data).unwrap())
}
