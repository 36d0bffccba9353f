//! Image buffers and the small set of raster operations shared by the
//! stages: sampling, luma, thresholding, labelling and morphology.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, Rgb32FImage, RgbImage};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image i/o: {0}")]
    Io(#[from] image::ImageError),
    #[error("file i/o: {0}")]
    File(#[from] std::io::Error),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

pub type RgbF = Rgb32FImage;
pub type GrayF = ImageBuffer<Luma<f32>, Vec<f32>>;

/// BT.709 luma of display-encoded RGB.
pub fn luma_of(p: &[f32; 3]) -> f32 {
    0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2]
}

pub fn luma(img: &RgbF) -> GrayF {
    let (w, h) = img.dimensions();
    GrayF::from_fn(w, h, |x, y| Luma([luma_of(&img.get_pixel(x, y).0)]))
}

pub fn to_rgb8(img: &RgbF) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x, y).0;
        Rgb(p.map(quantize))
    })
}

pub fn from_rgb8(img: &RgbImage) -> RgbF {
    let (w, h) = img.dimensions();
    RgbF::from_fn(w, h, |x, y| Rgb(img.get_pixel(x, y).0.map(|v| v as f32 / 255.0)))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb_png(img: &RgbF, path: &Path) -> Result<(), ImagingError> {
    to_rgb8(img).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbF, ImagingError> {
    Ok(from_rgb8(&image::open(path)?.to_rgb8()))
}

pub fn load_gray(path: &Path) -> Result<GrayImage, ImagingError> {
    Ok(image::open(path)?.to_luma8())
}

/// Bilinear sample at continuous pixel position `(x, y)`; pixel centres are
/// at half-integers and borders clamp.
pub fn sample_bilinear(img: &RgbF, x: f64, y: f64) -> [f32; 3] {
    let (w, h) = img.dimensions();
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as u32;
    let y0 = fy.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = (fx - x0 as f64) as f32;
    let ty = (fy - y0 as f64) as f32;
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = p00[c] + (p10[c] - p00[c]) * tx;
        let bottom = p01[c] + (p11[c] - p01[c]) * tx;
        out[c] = top + (bottom - top) * ty;
    }
    out
}

/// Bilinear sample of a scalar image (same conventions as [`sample_bilinear`]).
pub fn sample_gray(img: &GrayF, x: f64, y: f64) -> f32 {
    let (w, h) = img.dimensions();
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as u32;
    let y0 = fy.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = (fx - x0 as f64) as f32;
    let ty = (fy - y0 as f64) as f32;
    let top = img.get_pixel(x0, y0).0[0] * (1.0 - tx) + img.get_pixel(x1, y0).0[0] * tx;
    let bottom = img.get_pixel(x0, y1).0[0] * (1.0 - tx) + img.get_pixel(x1, y1).0[0] * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Otsu's threshold over values in `[0, 1]` (256 bins); returns the level
/// separating the two classes.
pub fn otsu_threshold(values: impl Iterator<Item = f32>) -> f32 {
    let mut hist = [0u64; 256];
    let mut n = 0u64;
    for v in values {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
        n += 1;
    }
    if n == 0 {
        return 0.5;
    }
    let total: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut sum_b, mut w_b) = (0.0, 0.0);
    let (mut best, mut best_var) = (127usize, -1.0);
    for (i, &c) in hist.iter().enumerate() {
        w_b += c as f64;
        if w_b == 0.0 {
            continue;
        }
        let w_f = n as f64 - w_b;
        if w_f == 0.0 {
            break;
        }
        sum_b += i as f64 * c as f64;
        let m_b = sum_b / w_b;
        let m_f = (total - sum_b) / w_f;
        let var = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    (best as f32 + 0.5) / 255.0
}

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Pixels with value ≥ 128 are set.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v >= 128).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
        .expect("buffer size")
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &BinaryImage) -> BinaryImage {
        BinaryImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    /// Intersection over union with another mask of equal size.
    pub fn iou(&self, other: &BinaryImage) -> f64 {
        let mut inter = 0usize;
        let mut uni = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            uni += (a || b) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    pub fn dilate(&self, radius: u32) -> BinaryImage {
        self.morph(radius, true)
    }

    pub fn erode(&self, radius: u32) -> BinaryImage {
        self.morph(radius, false)
    }

    /// Erosion then dilation.
    pub fn open(&self, radius: u32) -> BinaryImage {
        self.erode(radius).dilate(radius)
    }

    /// Dilation then erosion.
    pub fn close(&self, radius: u32) -> BinaryImage {
        self.dilate(radius).erode(radius)
    }

    /// Disc structuring element; pixels beyond the border count as unset
    /// for dilation and as set for erosion so closing does not eat borders.
    fn morph(&self, radius: u32, dilate: bool) -> BinaryImage {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let offsets: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = BinaryImage::new(self.width, self.height);
        out.data.par_chunks_mut(w.max(1) as usize).enumerate().for_each(|(y, row)| {
            let y = y as i64;
            for x in 0..w {
                let hit = offsets.iter().any(|&(dx, dy)| {
                    let (sx, sy) = (x + dx, y + dy);
                    let v = if sx < 0 || sy < 0 || sx >= w || sy >= h {
                        !dilate
                    } else {
                        self.data[(sy * w + sx) as usize]
                    };
                    if dilate {
                        v
                    } else {
                        !v
                    }
                });
                row[x as usize] = if dilate { hit } else { !hit };
            }
        });
        out
    }

    /// 8-connected component labelling of set pixels.
    pub fn components(&self) -> Components {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut labels = vec![u32::MAX; w * h];
        let mut areas = Vec::new();
        let mut bboxes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !self.data[start] || labels[start] != u32::MAX {
                continue;
            }
            let id = areas.len() as u32;
            let mut area = 0usize;
            let mut bb = [u32::MAX, u32::MAX, 0, 0];
            labels[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                area += 1;
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                bb[0] = bb[0].min(x as u32);
                bb[1] = bb[1].min(y as u32);
                bb[2] = bb[2].max(x as u32);
                bb[3] = bb[3].max(y as u32);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if self.data[j] && labels[j] == u32::MAX {
                            labels[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
            areas.push(area);
            bboxes.push(bb);
        }
        Components {
            labels,
            areas,
            bboxes,
        }
    }
}

/// Result of [`BinaryImage::components`]; unlabelled pixels hold `u32::MAX`.
#[derive(Debug, Clone)]
pub struct Components {
    pub labels: Vec<u32>,
    pub areas: Vec<usize>,
    /// `[min_x, min_y, max_x, max_y]` inclusive.
    pub bboxes: Vec<[u32; 4]>,
}
