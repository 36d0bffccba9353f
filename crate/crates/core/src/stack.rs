//! All-in-focus merging of macro focus stacks.
//!
//! Sharpness is the modified Laplacian of BT.709 luma summed over a square
//! window; each output pixel is copied from the sharpest slice after the
//! index map has been majority-filtered.

use image::Rgb;
use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{luma_of, RgbF};

#[derive(Debug, Error, PartialEq)]
pub enum StackError {
    #[error("focus stack is empty")]
    Empty,
    #[error("slice {0} is {1}x{2}, expected {3}x{4}")]
    DimensionMismatch(usize, u32, u32, u32, u32),
    #[error("{0} rail positions for {1} slices")]
    CountMismatch(usize, usize),
    #[error("rail positions must be strictly increasing")]
    RailNotIncreasing,
    #[error("window radius must be at least 1")]
    InvalidRadius,
}

#[derive(Debug, Clone)]
pub struct FocusStack {
    slices: Vec<RgbF>,
    rail_positions: Vec<f64>,
}

impl FocusStack {
    pub fn new(slices: Vec<RgbF>, rail_positions: Vec<f64>) -> Result<Self, StackError> {
        let first = slices.first().ok_or(StackError::Empty)?;
        let (w, h) = first.dimensions();
        for (i, s) in slices.iter().enumerate() {
            if s.dimensions() != (w, h) {
                return Err(StackError::DimensionMismatch(i, s.width(), s.height(), w, h));
            }
        }
        if rail_positions.len() != slices.len() {
            return Err(StackError::CountMismatch(rail_positions.len(), slices.len()));
        }
        if rail_positions.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(StackError::RailNotIncreasing);
        }
        Ok(Self {
            slices,
            rail_positions,
        })
    }

    pub fn slices(&self) -> &[RgbF] {
        &self.slices
    }

    pub fn rail_positions(&self) -> &[f64] {
        &self.rail_positions
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct StackedImage {
    pub image: RgbF,
    pub width: u32,
    pub height: u32,
    /// Row-major source slice per pixel.
    pub index_map: Vec<u16>,
    /// Row-major winning focus measure per pixel.
    pub confidence: Vec<f32>,
}

impl StackedImage {
    /// Index map as a 16-bit grayscale image.
    pub fn index_image(&self) -> image::ImageBuffer<image::Luma<u16>, Vec<u16>> {
        image::ImageBuffer::from_raw(self.width, self.height, self.index_map.clone()).expect("index map size")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StackOptions {
    pub window_radius: u32,
    pub smooth_radius: u32,
    /// Average colours across one-pixel seams between source slices.
    pub blend_seams: bool,
}

impl Default for StackOptions {
    fn default() -> Self {
        Self {
            window_radius: 4,
            smooth_radius: 8,
            blend_seams: false,
        }
    }
}

impl StackOptions {
    /// Defaults are tuned for 2 MP; radii scale linearly with image width.
    pub fn scaled_for(width: u32) -> Self {
        let f = width as f64 / 1632.0;
        Self {
            window_radius: ((4.0 * f).round() as u32).max(1),
            smooth_radius: (8.0 * f).round() as u32,
            blend_seams: false,
        }
    }
}

fn luma_plane(image: &RgbF) -> Vec<f32> {
    image.pixels().map(|p| luma_of(&p.0)).collect()
}

/// Per-pixel modified Laplacian of luma, borders replicated.
fn modified_laplacian(l: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            let c = 2.0 * l[y * w + x];
            row[x] = (c - l[y * w + left] - l[y * w + right]).abs() + (c - l[up * w + x] - l[down * w + x]).abs();
        }
    });
    out
}

/// Sum over the `(2r+1)²` window with zero padding.
fn box_sum(v: &[f32], w: usize, h: usize, r: usize) -> Vec<f32> {
    let mut rows = vec![0.0f32; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &v[y * w..(y + 1) * w];
        let mut prefix = vec![0.0f64; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + src[x] as f64;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            row[x] = (prefix[hi] - prefix[lo]) as f32;
        }
    });
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let lo = y.saturating_sub(r);
        let hi = (y + r + 1).min(h);
        for x in 0..w {
            let mut acc = 0.0f64;
            for yy in lo..hi {
                acc += rows[yy * w + x] as f64;
            }
            row[x] = acc as f32;
        }
    });
    out
}

/// Modified-Laplacian focus measure summed over the window around each pixel.
pub fn focus_measure_map(image: &RgbF, window_radius: u32) -> Result<Vec<f32>, StackError> {
    if window_radius < 1 {
        return Err(StackError::InvalidRadius);
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    let ml = modified_laplacian(&luma_plane(image), w, h);
    Ok(box_sum(&ml, w, h, window_radius as usize))
}

/// Majority (mode) filter over the `(2r+1)²` window; ties go to the lowest
/// label.
pub fn majority_filter(labels: &[u16], w: usize, h: usize, r: usize, label_count: usize) -> Vec<u16> {
    if r == 0 {
        return labels.to_vec();
    }
    let mut out = vec![0u16; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        let mut hist = vec![0u32; label_count];
        let add_col = |hist: &mut Vec<u32>, x: usize, delta: i32| {
            for yy in y0..y1 {
                let l = labels[yy * w + x] as usize;
                hist[l] = (hist[l] as i32 + delta) as u32;
            }
        };
        for x in 0..r.min(w) {
            add_col(&mut hist, x, 1);
        }
        for x in 0..w {
            if x + r < w {
                add_col(&mut hist, x + r, 1);
            }
            if x > r {
                add_col(&mut hist, x - r - 1, -1);
            }
            let mut best = 0usize;
            for (l, &c) in hist.iter().enumerate() {
                if c > hist[best] {
                    best = l;
                }
            }
            row[x] = best as u16;
        }
    });
    out
}

/// Merges an in-memory stack.
pub fn stack_slices(stack: &FocusStack, options: &StackOptions) -> Result<StackedImage, StackError> {
    stack_with(stack.len(), |i| Ok(stack.slices[i].clone()), options)
}

/// Merges `count` slices produced on demand by `load`, holding at most two
/// slices in memory at a time.
pub fn stack_with<E>(
    count: usize,
    load: impl Fn(usize) -> Result<RgbF, E>,
    options: &StackOptions,
) -> Result<StackedImage, E>
where
    E: From<StackError>,
{
    if count == 0 {
        return Err(StackError::Empty.into());
    }
    if count > u16::MAX as usize {
        return Err(StackError::CountMismatch(count, u16::MAX as usize).into());
    }
    let first = load(0)?;
    let (w, h) = first.dimensions();
    let n = (w * h) as usize;
    let mut best = focus_measure_map(&first, options.window_radius)?;
    let mut index = vec![0u16; n];
    drop(first);
    for i in 1..count {
        let slice = load(i)?;
        if slice.dimensions() != (w, h) {
            return Err(StackError::DimensionMismatch(i, slice.width(), slice.height(), w, h).into());
        }
        let fm = focus_measure_map(&slice, options.window_radius)?;
        for p in 0..n {
            if fm[p] > best[p] {
                best[p] = fm[p];
                index[p] = i as u16;
            }
        }
    }
    let index = majority_filter(&index, w as usize, h as usize, options.smooth_radius as usize, count);
    let mut image = RgbF::new(w, h);
    let mut seam_acc: Vec<[f32; 4]> = if options.blend_seams { vec![[0.0; 4]; n] } else { Vec::new() };
    let seam = |p: usize| -> bool {
        let (x, y) = (p % w as usize, p / w as usize);
        let l = index[p];
        (x > 0 && index[p - 1] != l)
            || (x + 1 < w as usize && index[p + 1] != l)
            || (y > 0 && index[p - w as usize] != l)
            || (y + 1 < h as usize && index[p + w as usize] != l)
    };
    for i in 0..count {
        let slice = load(i)?;
        let raw = slice.as_raw();
        let out = image.as_mut();
        for p in 0..n {
            if index[p] as usize == i {
                out[3 * p..3 * p + 3].copy_from_slice(&raw[3 * p..3 * p + 3]);
            }
        }
        if options.blend_seams {
            for p in 0..n {
                if !seam(p) {
                    continue;
                }
                let (x, y) = (p % w as usize, p / w as usize);
                let mut uses = index[p] as usize == i;
                uses |= x > 0 && index[p - 1] as usize == i;
                uses |= x + 1 < w as usize && index[p + 1] as usize == i;
                uses |= y > 0 && index[p - w as usize] as usize == i;
                uses |= y + 1 < h as usize && index[p + w as usize] as usize == i;
                if uses {
                    let a = &mut seam_acc[p];
                    for k in 0..3 {
                        a[k] += raw[3 * p + k];
                    }
                    a[3] += 1.0;
                }
            }
        }
    }
    if options.blend_seams {
        for (p, a) in seam_acc.iter().enumerate() {
            if a[3] > 0.0 {
                let (x, y) = ((p % w as usize) as u32, (p / w as usize) as u32);
                image.put_pixel(x, y, Rgb([a[0] / a[3], a[1] / a[3], a[2] / a[3]]));
            }
        }
    }
    Ok(StackedImage {
        image,
        width: w,
        height: h,
        index_map: index,
        confidence: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: u32, h: u32, f: impl Fn(u32, u32) -> f32) -> RgbF {
        RgbF::from_fn(w, h, |x, y| {
            let v = f(x, y);
            Rgb([v, v, v])
        })
    }

    /// Direct evaluation of the windowed modified Laplacian.
    fn oracle_measure(img: &RgbF, r: i64) -> Vec<f32> {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let l = |x: i64, y: i64| luma_of(&img.get_pixel(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32).0) as f64;
        let ml = |x: i64, y: i64| (2.0 * l(x, y) - l(x - 1, y) - l(x + 1, y)).abs() + (2.0 * l(x, y) - l(x, y - 1) - l(x, y + 1)).abs();
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx >= 0 && yy >= 0 && xx < w && yy < h {
                            acc += ml(xx, yy);
                        }
                    }
                }
                out.push(acc as f32);
            }
        }
        out
    }

    #[test]
    fn constant_image_has_zero_measure() {
        let img = gray(20, 15, |_, _| 0.37);
        assert!(focus_measure_map(&img, 2).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response() {
        let img = gray(9, 9, |x, y| if (x, y) == (4, 4) { 1.0 } else { 0.0 });
        let (w, h) = (9, 9);
        let ml = modified_laplacian(&luma_plane(&img), w, h);
        // Unwindowed: 2 from each axis at the impulse, 1 at each 4-neighbour.
        assert!((ml[4 * 9 + 4] - 4.0).abs() < 1e-6);
        assert!((ml[4 * 9 + 3] - 1.0).abs() < 1e-6);
        let fm = focus_measure_map(&img, 1).unwrap();
        let oracle = oracle_measure(&img, 1);
        assert!((fm[4 * 9 + 4] - oracle[4 * 9 + 4]).abs() < 1e-5);
        assert!((fm[4 * 9 + 4] - 8.0).abs() < 1e-5);
    }

    #[test]
    fn sharp_step_beats_blurred_step() {
        let sharp = gray(40, 8, |x, _| if x < 20 { 0.1 } else { 0.9 });
        let blurred = gray(40, 8, |x, _| {
            let t = (x as f32 - 19.5) / 3.0;
            0.1 + 0.8 * 0.5 * (1.0 + (t / std::f32::consts::SQRT_2).tanh())
        });
        let peak = |img: &RgbF| focus_measure_map(img, 1).unwrap().into_iter().fold(0.0f32, f32::max);
        assert!(peak(&sharp) > peak(&blurred));
    }

    fn box_blur(img: &RgbF) -> RgbF {
        let (w, h) = img.dimensions();
        RgbF::from_fn(w, h, |x, y| {
            let mut acc = [0.0f32; 3];
            let mut n = 0.0;
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 {
                        let p = img.get_pixel(xx as u32, yy as u32).0;
                        for k in 0..3 {
                            acc[k] += p[k];
                        }
                        n += 1.0;
                    }
                }
            }
            Rgb(acc.map(|v| v / n))
        })
    }

    fn texture(w: u32, h: u32, seed: u32) -> RgbF {
        RgbF::from_fn(w, h, |x, y| {
            let v = ((x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663) ^ seed.wrapping_mul(83_492_791)) % 1000) as f32 / 1000.0;
            Rgb([v, 1.0 - v, 0.5 * v])
        })
    }

    #[test]
    fn halves_select_their_sharp_slice() {
        let t = texture(60, 30, 1);
        let blurred = box_blur(&t);
        let a = RgbF::from_fn(60, 30, |x, y| if x < 30 { *t.get_pixel(x, y) } else { *blurred.get_pixel(x, y) });
        let b = RgbF::from_fn(60, 30, |x, y| if x >= 30 { *t.get_pixel(x, y) } else { *blurred.get_pixel(x, y) });
        let stack = FocusStack::new(vec![a.clone(), b.clone()], vec![0.0, 0.25]).unwrap();
        let opts = StackOptions { window_radius: 2, smooth_radius: 0, blend_seams: false };
        let out = stack_slices(&stack, &opts).unwrap();
        let fa = oracle_measure(&a, 2);
        let fb = oracle_measure(&b, 2);
        for y in 0..30usize {
            for x in 0..60usize {
                let p = y * 60 + x;
                let want = if fb[p] > fa[p] { 1 } else { 0 };
                assert_eq!(out.index_map[p], want);
                if (x as i64 - 30).abs() > 4 {
                    assert_eq!(out.index_map[p], (x >= 30) as u16);
                }
                let src = if out.index_map[p] == 0 { &a } else { &b };
                assert_eq!(out.image.get_pixel(x as u32, y as u32), src.get_pixel(x as u32, y as u32));
            }
        }
    }

    #[test]
    fn identical_slices_pick_the_first() {
        let t = texture(16, 12, 2);
        let stack = FocusStack::new(vec![t.clone(), t.clone(), t.clone()], vec![0.0, 1.0, 2.0]).unwrap();
        let out = stack_slices(&stack, &StackOptions::default()).unwrap();
        assert!(out.index_map.iter().all(|&i| i == 0));
        assert_eq!(out.image.as_raw(), t.as_raw());
    }

    #[test]
    fn stack_validation() {
        let t = texture(8, 8, 3);
        assert_eq!(FocusStack::new(vec![], vec![]).unwrap_err(), StackError::Empty);
        assert_eq!(FocusStack::new(vec![t.clone(), t.clone()], vec![0.0, 0.0]).unwrap_err(), StackError::RailNotIncreasing);
        assert!(matches!(
            FocusStack::new(vec![t.clone(), texture(9, 8, 0)], vec![0.0, 1.0]),
            Err(StackError::DimensionMismatch(1, 9, 8, 8, 8))
        ));
        assert_eq!(focus_measure_map(&t, 0).unwrap_err(), StackError::InvalidRadius);
    }

    #[test]
    fn majority_filter_matches_brute_force() {
        let (w, h) = (23usize, 17usize);
        let labels: Vec<u16> = (0..w * h).map(|i| ((i * 7919) % 13 % 4) as u16).collect();
        let out = majority_filter(&labels, w, h, 2, 4);
        for y in 0..h {
            for x in 0..w {
                let mut hist = [0u32; 4];
                for yy in y.saturating_sub(2)..(y + 3).min(h) {
                    for xx in x.saturating_sub(2)..(x + 3).min(w) {
                        hist[labels[yy * w + xx] as usize] += 1;
                    }
                }
                let best = (0..4).fold(0, |b, l| if hist[l] > hist[b] { l } else { b });
                assert_eq!(out[y * w + x] as usize, best);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn single_slice_is_identity(seed in 0u32..1000, r in 1u32..4, s in 0u32..4) {
            let t = texture(20, 14, seed);
            let stack = FocusStack::new(vec![t.clone()], vec![0.0]).unwrap();
            let out = stack_slices(&stack, &StackOptions { window_radius: r, smooth_radius: s, blend_seams: false }).unwrap();
            prop_assert_eq!(out.image.as_raw(), t.as_raw());
        }

        #[test]
        fn permuting_slices_keeps_the_image(seed in 0u32..1000) {
            let t = texture(24, 16, seed);
            let blurred = box_blur(&t);
            let a = RgbF::from_fn(24, 16, |x, y| if (x / 6 + y / 4) % 2 == 0 { *t.get_pixel(x, y) } else { *blurred.get_pixel(x, y) });
            let b = RgbF::from_fn(24, 16, |x, y| if (x / 6 + y / 4) % 2 == 1 { *t.get_pixel(x, y) } else { *blurred.get_pixel(x, y) });
            let opts = StackOptions { window_radius: 1, smooth_radius: 0, blend_seams: false };
            let ab = stack_slices(&FocusStack::new(vec![a.clone(), b.clone()], vec![0.0, 1.0]).unwrap(), &opts).unwrap();
            let ba = stack_slices(&FocusStack::new(vec![b.clone(), a.clone()], vec![0.0, 1.0]).unwrap(), &opts).unwrap();
            let fa = focus_measure_map(&a, 1).unwrap();
            let fb = focus_measure_map(&b, 1).unwrap();
            for (p, (x, y)) in (0..16u32).flat_map(|y| (0..24u32).map(move |x| (x, y))).enumerate() {
                if fa[p] != fb[p] {
                    prop_assert_eq!(ab.index_map[p], 1 - ba.index_map[p]);
                    prop_assert_eq!(ab.image.get_pixel(x, y), ba.image.get_pixel(x, y));
                }
            }
        }
    }
}
