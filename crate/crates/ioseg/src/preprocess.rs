//! Slice normalization, colorization, resizing, and label extraction.
//!
//! The processing path mirrors how detection models consume MRI slices:
//! min-max normalize, replicate intensity into RGB channels, resize to the
//! model's working resolution (bilinear for images, nearest-neighbor for
//! masks so label semantics survive).

use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{LabelMask, SliceImage};

/// An 8-bit RGB raster. Grayscale colorization keeps r = g = b.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<RgbImage> {
        if data.len() != width * height * 3 {
            return Err(Error::DomainError(format!(
                "rgb byte count {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> RgbImage {
        let mut data = Vec::with_capacity(width * height * 3);
        for row in 0..height {
            for col in 0..width {
                data.extend_from_slice(&f(row, col));
            }
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Interleaved RGB bytes, row-major.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean of the three channels mapped to [0, 1].
    pub fn intensity(&self, row: usize, col: usize) -> f64 {
        let [r, g, b] = self.get(row, col);
        (r as f64 + g as f64 + b as f64) / (3.0 * 255.0)
    }
}

/// A {0, 1} raster aligned to a [`SliceImage`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<BinaryMask> {
        if bits.len() != width * height {
            return Err(Error::DomainError(format!(
                "bit count {} does not match {width}x{height}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::DomainError(
                "binary mask may only hold 0 or 1".to_string(),
            ));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> BinaryMask {
        BinaryMask {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> BinaryMask {
        BinaryMask {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        let mut bits = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                bits.push(f(row, col) as u8);
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Foreground coordinates in (row, col) raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(move |(i, _)| (i / width, i % width))
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }
}

/// Min-max normalize to [0, 1]: `p' = (p - min) / (max - min)`.
/// A constant slice maps to all zeros.
pub fn normalize_intensity(slice: &SliceImage) -> SliceImage {
    let min = slice.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = slice
        .pixels()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let pixels = if max > min {
        let range = max - min;
        slice.pixels().iter().map(|&p| (p - min) / range).collect()
    } else {
        vec![0.0; slice.pixels().len()]
    };
    SliceImage::new(slice.width(), slice.height(), pixels)
        .expect("normalization preserves dimensions and finiteness")
}

fn quantize_channel(p: f64) -> u8 {
    // round() is round-half-away-from-zero, the rule the tests pin.
    (p * 255.0).round() as u8
}

/// Map a normalized slice to RGB with a custom per-pixel color map.
pub fn colorize_with(
    slice: &SliceImage,
    map: impl Fn(f64) -> [u8; 3],
) -> Result<RgbImage> {
    if !slice.is_normalized() {
        return Err(Error::DomainError(
            "colorize requires pixels in [0, 1]; normalize first".to_string(),
        ));
    }
    let mut data = Vec::with_capacity(slice.pixels().len() * 3);
    for &p in slice.pixels() {
        data.extend_from_slice(&map(p));
    }
    RgbImage::new(slice.width(), slice.height(), data)
}

/// Assign an RGB value to each pixel from its intensity: the grayscale
/// triple `round(p * 255)` replicated to all three channels.
pub fn colorize(slice: &SliceImage) -> Result<RgbImage> {
    colorize_with(slice, |p| {
        let v = quantize_channel(p);
        [v, v, v]
    })
}

/// Source coordinate for a destination pixel under center-aligned sampling.
fn src_coord(dst: usize, src_size: usize, dst_size: usize) -> f64 {
    (dst as f64 + 0.5) * (src_size as f64 / dst_size as f64) - 0.5
}

/// Bilinear resize with edge clamping.
pub fn resize_image(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    let (sw, sh) = (img.width(), img.height());
    RgbImage::from_fn(width, height, |row, col| {
        let sy = src_coord(row, sh, height).clamp(0.0, (sh - 1) as f64);
        let sx = src_coord(col, sw, width).clamp(0.0, (sw - 1) as f64);
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let x1 = (x0 + 1).min(sw - 1);
        let fy = sy - y0 as f64;
        let fx = sx - x0 as f64;
        let mut rgb = [0u8; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            let v00 = img.get(y0, x0)[c] as f64;
            let v01 = img.get(y0, x1)[c] as f64;
            let v10 = img.get(y1, x0)[c] as f64;
            let v11 = img.get(y1, x1)[c] as f64;
            // Incremental form: exact for constant inputs and at fx = fy = 0.
            let top = v00 + fx * (v01 - v00);
            let bottom = v10 + fx * (v11 - v10);
            let value = top + fy * (bottom - top);
            *out = value.round().clamp(0.0, 255.0) as u8;
        }
        rgb
    })
}

fn nearest_index(dst: usize, src_size: usize, dst_size: usize) -> usize {
    let idx = ((dst as f64 + 0.5) * (src_size as f64 / dst_size as f64)).floor();
    (idx.max(0.0) as usize).min(src_size - 1)
}

fn resize_nearest<T: Copy>(
    data: &[T],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for row in 0..dst_h {
        let sr = nearest_index(row, src_h, dst_h);
        for col in 0..dst_w {
            let sc = nearest_index(col, src_w, dst_w);
            out.push(data[sr * src_w + sc]);
        }
    }
    out
}

/// Nearest-neighbor resize; never introduces labels absent from the source.
pub fn resize_label_mask(mask: &LabelMask, width: usize, height: usize) -> LabelMask {
    let labels = resize_nearest(mask.labels(), mask.width(), mask.height(), width, height);
    LabelMask::new(width, height, labels, mask.semantics().clone())
        .expect("nearest-neighbor resize keeps the source label set")
}

/// Nearest-neighbor resize of a binary mask.
pub fn resize_binary_mask(mask: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    let bits = resize_nearest(mask.bits(), mask.width(), mask.height(), width, height);
    BinaryMask::new(width, height, bits).expect("nearest-neighbor resize keeps bits binary")
}

/// Binary mask of the pixels whose label belongs to `labels` (e.g. the
/// enhancing-tumor label set used for scoring).
pub fn extract_label_mask(mask: &LabelMask, labels: &[u32]) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |row, col| {
        labels.contains(&mask.get(row, col))
    })
}

/// Write an RGB raster as an 8-bit PNG.
pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let buffer = image::RgbImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().to_vec(),
    )
    .expect("buffer length is validated at construction");
    buffer.save(path.as_ref())?;
    Ok(())
}

/// Read an 8-bit PNG back as an RGB raster.
pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = image::open(path.as_ref())?.into_rgb8();
    RgbImage::new(
        img.width() as usize,
        img.height() as usize,
        img.into_raw(),
    )
}

/// Write a binary mask as an 8-bit grayscale PNG (0 / 255).
pub fn save_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.bits().iter().map(|&b| b * 255).collect();
    let buffer =
        image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
            .expect("buffer length is validated at construction");
    buffer.save(path.as_ref())?;
    Ok(())
}
