use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};

/// Plane-to-plane projective map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let v = self.0 * Vector3::new(p[0], p[1], 1.0);
        [v.x / v.z, v.y / v.z]
    }

    pub fn inverse(&self) -> Option<Self> {
        self.0.try_inverse().map(Self)
    }

    /// `self ∘ other`.
    pub fn then(&self, other: &Homography) -> Homography {
        Homography(other.0 * self.0)
    }

    pub fn normalized(&self) -> Self {
        let n = self.0.norm();
        let s = if self.0[(2, 2)] < 0.0 { -n } else { n };
        Self(self.0 / s)
    }

    /// Normalized direct linear transform from at least four point pairs.
    pub fn estimate(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Option<Self> {
        if src.len() != dst.len() || src.len() < 4 {
            return None;
        }
        let (ts, ns) = normalizer(src);
        let (td, nd) = normalizer(dst);
        let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
        for (i, (s, d)) in ns.iter().zip(&nd).enumerate() {
            let (x, y, u, v) = (s[0], s[1], d[0], d[1]);
            let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
            let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
            for j in 0..9 {
                a[(2 * i, j)] = r0[j];
                a[(2 * i + 1, j)] = r1[j];
            }
        }
        let ata = a.transpose() * &a;
        let h = smallest_eigenvector(ata)?;
        let hn = Matrix3::from_row_slice(h.as_slice());
        let td_inv = td.try_inverse()?;
        let m = td_inv * hn * ts;
        if !m.iter().all(|v| v.is_finite()) || m.norm() == 0.0 {
            return None;
        }
        Some(Homography(m).normalized())
    }
}

pub(crate) fn smallest_eigenvector(m: DMatrix<f64>) -> Option<nalgebra::DVector<f64>> {
    let eig = SymmetricEigen::new(m);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    Some(eig.eigenvectors.column(idx).into_owned())
}

/// Similarity taking the points to zero mean and RMS distance sqrt(2).
fn normalizer(points: &[[f64; 2]]) -> (Matrix3<f64>, Vec<[f64; 2]>) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let rms = (points
        .iter()
        .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        .max(1e-300);
    let s = std::f64::consts::SQRT_2 / rms;
    let t = Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0);
    let out = points.iter().map(|p| [s * (p[0] - mx), s * (p[1] - my)]).collect();
    (t, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_homography() {
        let h = Homography(Matrix3::new(2.0, 0.1, 30.0, -0.2, 1.5, 40.0, 1e-3, 2e-3, 1.0));
        let src: Vec<[f64; 2]> = (0..12).map(|i| [(i % 4) as f64 * 10.0, (i / 4) as f64 * 7.0 + (i as f64).sin()]).collect();
        let dst: Vec<[f64; 2]> = src.iter().map(|&p| h.apply(p)).collect();
        let est = Homography::estimate(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let p = est.apply(*s);
            assert!((p[0] - d[0]).abs() < 1e-8 && (p[1] - d[1]).abs() < 1e-8);
        }
        let inv = est.inverse().unwrap();
        let back = inv.apply(dst[5]);
        assert!((back[0] - src[5][0]).abs() < 1e-8);
    }
}
