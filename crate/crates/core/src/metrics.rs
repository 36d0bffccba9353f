//! Reconstruction quality measures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bvh::Bvh;
use crate::imaging::{BinaryImage, RgbF};
use crate::mesh::TexturedMesh;

/// Mean distance from `points` to the closest point of `target`.
pub fn mean_distance_to(points: &[crate::geometry::Vec3], target: &Bvh) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let total: f64 = points
        .par_iter()
        .map(|p| target.closest_point(p).map_or(f64::INFINITY, |c| c.0))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / points.len() as f64
}

/// Average of the two one-sided mean surface distances, each estimated from
/// `samples` area-uniform points.
pub fn symmetric_surface_distance(a: &TexturedMesh, b: &TexturedMesh, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pa = a.sample_surface(samples, &mut rng);
    let pb = b.sample_surface(samples, &mut rng);
    let (ba, bb) = (Bvh::build(a), Bvh::build(b));
    0.5 * (mean_distance_to(&pa, &bb) + mean_distance_to(&pb, &ba))
}

/// Peak signal-to-noise ratio in dB over pixels where `mask` is set, with
/// unit peak. Identical images give infinity.
pub fn psnr_masked(a: &RgbF, b: &RgbF, mask: Option<&BinaryImage>) -> Option<f64> {
    if a.dimensions() != b.dimensions() {
        return None;
    }
    let (w, _) = a.dimensions();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.pixels().zip(b.pixels()).enumerate() {
        let (x, y) = (i as u32 % w, i as u32 / w);
        if mask.is_some_and(|m| !m.get(x, y)) {
            continue;
        }
        for c in 0..3 {
            let d = (pa.0[c] - pb.0[c]) as f64;
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return None;
    }
    let mse = sum / n as f64;
    Some(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::mesh::shapes;
    use image::Rgb;

    #[test]
    fn concentric_spheres_are_a_radius_apart() {
        let a = shapes::sphere(Vec3::zeros(), 5.0, 60, 120);
        let b = shapes::sphere(Vec3::zeros(), 5.5, 60, 120);
        let d = symmetric_surface_distance(&a, &b, 4000, 1);
        assert!((d - 0.5).abs() < 0.01, "{d}");
        assert!(symmetric_surface_distance(&a, &a, 2000, 2) < 1e-9);
    }

    #[test]
    fn psnr_of_a_constant_offset() {
        let a = RgbF::from_pixel(8, 8, Rgb([0.5, 0.5, 0.5]));
        let b = RgbF::from_pixel(8, 8, Rgb([0.6, 0.6, 0.6]));
        // MSE 0.01 -> 20 dB.
        assert!((psnr_masked(&a, &b, None).unwrap() - 20.0).abs() < 1e-4);
        assert_eq!(psnr_masked(&a, &a, None), Some(f64::INFINITY));
        let mut c = b.clone();
        c.put_pixel(0, 0, Rgb([1.0, 0.0, 0.0]));
        let mask = BinaryImage::from_fn(8, 8, |x, y| (x, y) != (0, 0));
        assert!((psnr_masked(&a, &c, Some(&mask)).unwrap() - 20.0).abs() < 1e-4);
        assert_eq!(psnr_masked(&a, &c, Some(&BinaryImage::new(8, 8))), None);
        assert_eq!(psnr_masked(&a, &RgbF::new(4, 4), None), None);
    }
}
