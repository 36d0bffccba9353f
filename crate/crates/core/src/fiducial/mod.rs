//! Circular fiducial mat: layout, printable drawing, detection and camera
//! pose estimation.
//!
//! The mat is a white disc carrying, from the centre outwards, a dark
//! alignment dot, a ring of dark/light sectors encoding a cyclic-unique
//! binary code and a solid dark outer ring. Keypoints are the corners where
//! a code transition (a dark/light sector boundary) meets the inner or outer
//! edge of the code ring. Decoding the sector code fixes the absolute
//! in-plane rotation of the mat.

mod detect;
mod homography;
mod pose;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub use detect::{detect_mat, Correspondence, DetectConfig, MatDetection};
pub use homography::Homography;
pub use pose::{
    refine_poses_global, reprojection_rms, solve_pose, PoseEstimate, RefineReport, ViewObservations,
};

/// Smallest mat printable at 1200 dpi without the `force` flag.
pub const MIN_PRINTABLE_DIAMETER_MM: f64 = 5.0;
pub const DEFAULT_SECTOR_COUNT: u32 = 31;

/// Reflectance of the paper and of the printed ink.
pub const PAPER_REFLECTANCE: f32 = 0.92;
pub const INK_REFLECTANCE: f32 = 0.06;

/// Ring boundaries as fractions of the mat radius: alignment dot, code ring
/// inner/outer, solid ring inner/outer.
const RING_FRACTIONS: [f64; 5] = [0.12, 0.34, 0.62, 0.74, 0.92];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiducialError {
    #[error("mat diameter {0} mm is below the {MIN_PRINTABLE_DIAMETER_MM} mm print floor")]
    TooSmall(f64),
    #[error("invalid mat parameters: {0}")]
    InvalidParameters(String),
    #[error("mat not found: {0}")]
    NotFound(String),
    #[error("sector code could not be decoded unambiguously: {0}")]
    AmbiguousCode(String),
    #[error("degenerate correspondences: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialModel {
    pub diameter: f64,
    /// `[dot, code_inner, code_outer, ring_inner, ring_outer]` in mm.
    pub ring_radii: Vec<f64>,
    pub sector_count: u32,
    /// Bit `k` covers angles `[k, k+1) * 360° / sector_count`, counter-clockwise
    /// from `+x`; `true` is ink.
    pub code_bits: Vec<bool>,
    pub keypoints_3d: Vec<Vec3>,
}

/// What lies at a point of the mat plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatSurface {
    Ink,
    Paper,
    Outside,
}

impl FiducialModel {
    pub fn radius(&self) -> f64 {
        self.diameter / 2.0
    }

    pub fn dot_radius(&self) -> f64 {
        self.ring_radii[0]
    }

    pub fn code_inner(&self) -> f64 {
        self.ring_radii[1]
    }

    pub fn code_outer(&self) -> f64 {
        self.ring_radii[2]
    }

    pub fn ring_inner(&self) -> f64 {
        self.ring_radii[3]
    }

    pub fn ring_outer(&self) -> f64 {
        self.ring_radii[4]
    }

    pub fn sector_angle(&self) -> f64 {
        std::f64::consts::TAU / self.sector_count as f64
    }

    /// Sector index containing polar angle `theta` (radians).
    pub fn sector_at(&self, theta: f64) -> usize {
        let a = theta.rem_euclid(std::f64::consts::TAU);
        ((a / self.sector_angle()) as usize).min(self.sector_count as usize - 1)
    }

    pub fn surface_at(&self, x: f64, y: f64) -> MatSurface {
        let r = x.hypot(y);
        if r > self.radius() {
            MatSurface::Outside
        } else if r <= self.dot_radius()
            || (r >= self.ring_inner() && r < self.ring_outer())
            || (r >= self.code_inner() && r < self.code_outer() && self.code_bits[self.sector_at(y.atan2(x))])
        {
            MatSurface::Ink
        } else {
            MatSurface::Paper
        }
    }

    /// Sector indices `k` whose leading boundary (angle `k * sector_angle`)
    /// separates ink from paper.
    pub fn transitions(&self) -> Vec<usize> {
        let n = self.code_bits.len();
        (0..n)
            .filter(|&k| self.code_bits[k] != self.code_bits[(k + n - 1) % n])
            .collect()
    }

    pub fn validate(&self) -> Result<(), FiducialError> {
        let bad = |m: &str| Err(FiducialError::InvalidParameters(m.to_string()));
        if !(self.diameter > 0.0) {
            return bad("diameter must be positive");
        }
        if self.code_bits.len() != self.sector_count as usize {
            return bad("code length differs from sector count");
        }
        if self.ring_radii.len() != 5 || self.ring_radii.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ring radii must be five increasing values");
        }
        if self.ring_radii[4] > self.radius() {
            return bad("rings exceed the mat");
        }
        if self
            .keypoints_3d
            .iter()
            .any(|k| k.z != 0.0 || k.xy().norm() > self.radius() + 1e-12)
        {
            return bad("keypoints must lie on the mat plane within the disc");
        }
        if !is_cyclic_unique(&self.code_bits) {
            return bad("code is not cyclic-unique");
        }
        Ok(())
    }
}

/// Every rotation of `bits` is distinct.
pub fn is_cyclic_unique(bits: &[bool]) -> bool {
    let n = bits.len();
    (1..n).all(|s| (0..n).any(|i| bits[i] != bits[(i + s) % n]))
}

/// Smallest Hamming distance between `bits` and any non-trivial rotation.
pub fn min_cyclic_distance(bits: &[bool]) -> usize {
    let n = bits.len();
    (1..n)
        .map(|s| (0..n).filter(|&i| bits[i] != bits[(i + s) % n]).count())
        .min()
        .unwrap_or(0)
}

/// Cyclic-unique code of length `n`: a maximal-length LFSR sequence when
/// `n = 2^k - 1`, otherwise the best of a fixed-seed random search.
pub fn cyclic_code(n: usize) -> Vec<bool> {
    if let Some(bits) = (3..=12).find(|k| (1usize << k) - 1 == n).and_then(m_sequence) {
        return bits;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5ca2_ab00 ^ n as u64);
    let mut best: Option<(usize, usize, Vec<bool>)> = None;
    for _ in 0..4000 {
        let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let transitions = (0..n).filter(|&k| bits[k] != bits[(k + n - 1) % n]).count();
        let score = (min_cyclic_distance(&bits), transitions);
        if best.as_ref().is_none_or(|b| score > (b.0, b.1)) {
            best = Some((score.0, score.1, bits));
        }
    }
    best.expect("at least one candidate").2
}

/// First maximal-length sequence of degree `k` found by scanning feedback
/// masks in increasing order.
fn m_sequence(k: usize) -> Option<Vec<bool>> {
    let period = (1usize << k) - 1;
    for taps in (1usize << (k - 1))..(1usize << k) {
        if taps & 1 == 0 {
            continue;
        }
        let mut state = 1usize;
        let mut bits = Vec::with_capacity(period);
        let mut len = 0;
        loop {
            bits.push(state & 1 == 1);
            let feedback = (state & taps).count_ones() as usize & 1;
            state = (state >> 1) | (feedback << (k - 1));
            len += 1;
            if state == 1 || len > period {
                break;
            }
        }
        if len == period {
            return Some(bits);
        }
    }
    None
}

/// Printable mat drawing plus the matching model.
#[derive(Debug, Clone, PartialEq)]
pub struct MatDrawing {
    pub svg: String,
    pub model: FiducialModel,
}

/// Lays out a mat of `diameter_mm` with `sector_count` code sectors.
pub fn generate_mat(diameter_mm: f64, sector_count: u32, force: bool) -> Result<MatDrawing, FiducialError> {
    if !(diameter_mm.is_finite() && diameter_mm > 0.0) {
        return Err(FiducialError::InvalidParameters(format!("diameter {diameter_mm}")));
    }
    if diameter_mm < MIN_PRINTABLE_DIAMETER_MM && !force {
        return Err(FiducialError::TooSmall(diameter_mm));
    }
    if !(7..=4095).contains(&sector_count) {
        return Err(FiducialError::InvalidParameters(format!(
            "sector count {sector_count} outside [7, 4095]"
        )));
    }
    let radius = diameter_mm / 2.0;
    let ring_radii: Vec<f64> = RING_FRACTIONS.iter().map(|f| f * radius).collect();
    let code_bits = cyclic_code(sector_count as usize);
    let mut model = FiducialModel {
        diameter: diameter_mm,
        ring_radii,
        sector_count,
        code_bits,
        keypoints_3d: Vec::new(),
    };
    let step = model.sector_angle();
    model.keypoints_3d = model
        .transitions()
        .into_iter()
        .flat_map(|k| {
            let theta = k as f64 * step;
            let (r0, r1) = (model.code_inner(), model.code_outer());
            [r0, r1].map(|r| Vec3::new(r * theta.cos(), r * theta.sin(), 0.0))
        })
        .collect();
    model.validate()?;
    Ok(MatDrawing {
        svg: render_svg(&model),
        model,
    })
}

fn render_svg(model: &FiducialModel) -> String {
    let r = model.radius();
    let f = |v: f64| format!("{:.6}", v + 0.0);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{d}mm" height="{d}mm" viewBox="{o} {o} {d} {d}">"#,
        d = f(model.diameter),
        o = f(-r)
    );
    let _ = writeln!(
        svg,
        "  <!-- fiducial mat: {} sectors; print at 1200 dpi, 100% scale -->",
        model.sector_count
    );
    // SVG y grows downwards; flip so the drawing matches the model frame.
    let _ = writeln!(svg, r#"  <g transform="scale(1,-1)">"#);
    let _ = writeln!(svg, r##"    <circle cx="0" cy="0" r="{}" fill="#ffffff"/>"##, f(r));
    let annulus = |r0: f64, r1: f64| {
        format!(
            "M {a} 0 A {a} {a} 0 1 0 {na} 0 A {a} {a} 0 1 0 {a} 0 Z M {b} 0 A {b} {b} 0 1 1 {nb} 0 A {b} {b} 0 1 1 {b} 0 Z",
            a = f(r1),
            na = f(-r1),
            b = f(r0),
            nb = f(-r0)
        )
    };
    let _ = writeln!(
        svg,
        r##"    <path d="{}" fill="#000000" fill-rule="evenodd"/>"##,
        annulus(model.ring_inner(), model.ring_outer())
    );
    // One annular sector per run of ink bits.
    let n = model.code_bits.len();
    let step = model.sector_angle();
    let start = (0..n).find(|&k| !model.code_bits[k]).unwrap_or(0);
    let mut k = 0;
    while k < n {
        let idx = (start + k) % n;
        if !model.code_bits[idx] {
            k += 1;
            continue;
        }
        let mut len = 0;
        while len < n - k && model.code_bits[(start + k + len) % n] {
            len += 1;
        }
        let (t0, t1) = (idx as f64 * step, (idx + len) as f64 * step);
        let large = if t1 - t0 > std::f64::consts::PI { 1 } else { 0 };
        let (ri, ro) = (model.code_inner(), model.code_outer());
        let _ = writeln!(
            svg,
            r##"    <path d="M {} {} L {} {} A {ro} {ro} 0 {large} 1 {} {} L {} {} A {ri} {ri} 0 {large} 0 {} {} Z" fill="#000000"/>"##,
            f(ri * t0.cos()),
            f(ri * t0.sin()),
            f(ro * t0.cos()),
            f(ro * t0.sin()),
            f(ro * t1.cos()),
            f(ro * t1.sin()),
            f(ri * t1.cos()),
            f(ri * t1.sin()),
            f(ri * t0.cos()),
            f(ri * t0.sin()),
            ro = f(ro),
            ri = f(ri),
        );
        k += len;
    }
    let _ = writeln!(
        svg,
        r##"    <circle cx="0" cy="0" r="{}" fill="#000000"/>"##,
        f(model.dot_radius())
    );
    svg.push_str("  </g>\n</svg>\n");
    svg
}
