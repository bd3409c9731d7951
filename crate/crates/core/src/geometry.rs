//! Spatial transformation models between two views.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// 2D affine map `p2 = A p1` with the third row fixed to `0 0 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    /// `[a11, a12, a13, a21, a22, a23]`.
    pub params: [f64; 6],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        params: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    };

    pub fn new(params: [f64; 6]) -> Result<Self> {
        let a = AffineTransform { params };
        ensure!(
            params.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "non-finite affine parameter"
        );
        ensure!(
            a.determinant() != 0.0,
            Degenerate,
            "singular affine transform {params:?}"
        );
        Ok(a)
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        AffineTransform {
            params: [1.0, 0.0, dx, 0.0, 1.0, dy],
        }
    }

    /// Rotation by `angle` radians and isotropic `scale` about `center`,
    /// followed by a translation `(dx, dy)`.
    pub fn similarity(angle: f64, scale: f64, dx: f64, dy: f64, center: (f64, f64)) -> Self {
        let (s, c) = angle.sin_cos();
        let (a, b) = (scale * c, -scale * s);
        let (d, e) = (scale * s, scale * c);
        let (cx, cy) = center;
        AffineTransform {
            params: [
                a,
                b,
                cx + dx - a * cx - b * cy,
                d,
                e,
                cy + dy - d * cx - e * cy,
            ],
        }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = &self.params;
        (p[0] * x + p[1] * y + p[2], p[3] * x + p[4] * y + p[5])
    }

    pub fn determinant(&self) -> f64 {
        self.params[0] * self.params[4] - self.params[1] * self.params[3]
    }

    /// Geometric-mean scale factor `sqrt(|det|)`.
    pub fn scale(&self) -> f64 {
        self.determinant().abs().sqrt()
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        ensure!(
            det != 0.0 && det.is_finite(),
            Degenerate,
            "singular affine transform"
        );
        let [a, b, c, d, e, f] = self.params;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(AffineTransform {
            params: [ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)],
        })
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Solves the six parameters from three point pairs `src[i] -> dst[i]`.
    pub fn from_three_pairs(src: [(f64, f64); 3], dst: [(f64, f64); 3]) -> Result<Self> {
        let m = Matrix3::new(
            src[0].0, src[0].1, 1.0, //
            src[1].0, src[1].1, 1.0, //
            src[2].0, src[2].1, 1.0,
        );
        let span = |i: usize, j: usize| {
            ((src[i].0 - src[j].0).powi(2) + (src[i].1 - src[j].1).powi(2)).sqrt()
        };
        let scale = span(0, 1).max(span(0, 2)).max(span(1, 2)).max(1.0);
        ensure!(
            m.determinant().abs() > 1e-9 * scale * scale,
            Degenerate,
            "collinear point triple"
        );
        let lu = m.lu();
        let xs = lu
            .solve(&Vector3::new(dst[0].0, dst[1].0, dst[2].0))
            .ok_or_else(|| Error::Degenerate("collinear point triple".into()))?;
        let ys = lu
            .solve(&Vector3::new(dst[0].1, dst[1].1, dst[2].1))
            .ok_or_else(|| Error::Degenerate("collinear point triple".into()))?;
        AffineTransform::new([xs[0], xs[1], xs[2], ys[0], ys[1], ys[2]])
    }

    /// Largest distance between where `self` and `other` send the four
    /// corners of a `width x height` frame.
    pub fn corner_error(&self, other: &AffineTransform, width: usize, height: usize) -> f64 {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
            .iter()
            .map(|&(x, y)| {
                let (ax, ay) = self.apply(x, y);
                let (bx, by) = other.apply(x, y);
                ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let p = &self.params;
        Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], 0.0, 0.0, 1.0)
    }
}

/// Rank-2, unit Frobenius norm 3x3 matrix with `p2ᵀ F p1 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix {
    m: Matrix3<f64>,
}

impl FundamentalMatrix {
    /// Projects `m` onto rank 2 and scales it to unit norm. The sign is
    /// fixed so the largest-magnitude entry is positive.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        ensure!(
            m.iter().all(|v| v.is_finite()),
            Degenerate,
            "non-finite fundamental matrix"
        );
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut s = svd.singular_values;
        let smallest = s.imin();
        s[smallest] = 0.0;
        let r2 = u * Matrix3::from_diagonal(&s) * vt;
        let norm = r2.norm();
        ensure!(norm > 1e-300, Degenerate, "zero fundamental matrix");
        let mut m = r2 / norm;
        let imax = m.iamax_full();
        if m[imax] < 0.0 {
            m = -m;
        }
        Ok(FundamentalMatrix { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Row-major entries.
    pub fn entries(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn singular_values(&self) -> Vector3<f64> {
        let mut s = self.m.singular_values();
        s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        s
    }

    pub fn transpose(&self) -> FundamentalMatrix {
        FundamentalMatrix {
            m: self.m.transpose(),
        }
    }

    /// Epipolar constraint residual `p2ᵀ F p1`.
    pub fn residual(&self, p1: (f64, f64), p2: (f64, f64)) -> f64 {
        let a = Vector3::new(p1.0, p1.1, 1.0);
        let b = Vector3::new(p2.0, p2.1, 1.0);
        b.dot(&(self.m * a))
    }

    /// Epipole in the first image (right null vector), in pixels; `None`
    /// when it lies at infinity.
    pub fn epipole_first(&self) -> Option<(f64, f64)> {
        null_point(&self.m)
    }

    /// Epipole in the second image (left null vector).
    pub fn epipole_second(&self) -> Option<(f64, f64)> {
        null_point(&self.m.transpose())
    }
}

fn null_point(m: &Matrix3<f64>) -> Option<(f64, f64)> {
    let svd = m.svd(false, true);
    let vt = svd.v_t.unwrap();
    let i = svd.singular_values.imin();
    let e = vt.row(i);
    (e[2].abs() > 1e-12).then(|| (e[0] / e[2], e[1] / e[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let a = AffineTransform::similarity(0.3, 1.7, 4.0, -2.0, (10.0, 12.0));
        let b = a.inverse().unwrap();
        let (x, y) = a.apply(3.0, 5.0);
        let (u, v) = b.apply(x, y);
        assert!((u - 3.0).abs() < 1e-12 && (v - 5.0).abs() < 1e-12);
        assert!((a.scale() - 1.7).abs() < 1e-12);
    }

    #[test]
    fn singular_affine_is_rejected() {
        assert!(AffineTransform::new([1.0, 2.0, 0.0, 2.0, 4.0, 0.0]).is_err());
    }

    #[test]
    fn similarity_fixes_shifted_center() {
        let a = AffineTransform::similarity(0.4, 2.0, 1.0, 1.0, (5.0, 5.0));
        let (x, y) = a.apply(5.0, 5.0);
        assert!((x - 6.0).abs() < 1e-12 && (y - 6.0).abs() < 1e-12);
    }

    #[test]
    fn three_pairs_recover_transform() {
        let a = AffineTransform::new([1.1, 0.2, 3.0, -0.1, 0.9, -4.0]).unwrap();
        let src = [(0.0, 0.0), (10.0, 1.0), (2.0, 8.0)];
        let dst = src.map(|(x, y)| a.apply(x, y));
        let b = AffineTransform::from_three_pairs(src, dst).unwrap();
        assert!(a.corner_error(&b, 64, 64) < 1e-9);
        let collinear = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        assert!(AffineTransform::from_three_pairs(collinear, dst).is_err());
    }

    #[test]
    fn fundamental_is_rank_two_unit_norm() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0);
        let f = FundamentalMatrix::from_matrix(m).unwrap();
        let s = f.singular_values();
        assert!(s[2] < 1e-12);
        assert!((f.matrix().norm() - 1.0).abs() < 1e-12);
    }
}
