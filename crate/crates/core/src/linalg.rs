//! Dense and banded linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Left singular vectors and singular values of `s`, sorted non-increasing.
///
/// Wide matrices (more columns than rows, the usual snapshot shape) are first
/// reduced with a QR factorization of the transpose so that the SVD only ever
/// runs on a square `rows x rows` factor.
pub fn left_singular(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (m, n) = s.shape();
    if m == 0 || n == 0 {
        return Err(Error::dim("empty matrix has no singular vectors"));
    }
    let small = if n > m {
        let qr = s.transpose().qr();
        qr.r().transpose()
    } else {
        s.clone()
    };
    let svd = small.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numeric("SVD did not return left vectors".into()))?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let k = sv.len();
    let mut modes = DMatrix::zeros(m, k);
    let mut sorted = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        modes.set_column(dst, &u.column(src));
        sorted.push(sv[src].max(0.0));
    }
    Ok((modes, sorted))
}

/// Thin SVD `a = U diag(s) Wᵀ` with singular values sorted non-increasing.
pub fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (m, n) = a.shape();
    let svd = a.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numeric("SVD did not converge".into())),
    };
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    let s = &svd.singular_values;
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut uu = DMatrix::zeros(m, k);
    let mut ww = DMatrix::zeros(n, k);
    let mut ss = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        uu.set_column(dst, &u.column(src));
        ww.set_column(dst, &vt.row(src).transpose());
        ss[dst] = s[src];
    }
    Ok((uu, ss, ww))
}

/// Modified Gram–Schmidt, run twice for stability. Fails on rank deficiency.
pub fn orthonormalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut q = a.clone();
    let k = q.ncols();
    for _pass in 0..2 {
        for j in 0..k {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).clone_owned();
                q.column_mut(j).axpy(-proj, &qi, 1.0);
            }
            let norm = q.column(j).norm();
            if !(norm > 1e-300) {
                return Err(Error::Geometry(format!("column {j} is linearly dependent")));
            }
            q.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    Ok(q)
}

/// Largest absolute entry of `VᵀV - I`.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Principal angles (radians, ascending) between the column spans of two
/// orthonormal matrices of equal shape.
///
/// Small angles come from the sines (singular values of the residual
/// `(I - AAᵀ)B`), large ones from the cosines, which keeps both ends accurate.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "principal angles need equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let cross = a.transpose() * b;
    let resid = b - a * &cross;
    let mut cos: Vec<f64> = cross.singular_values().iter().copied().collect();
    let mut sin: Vec<f64> = resid.singular_values().iter().copied().collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    sin.sort_by(|x, y| x.total_cmp(y));
    let k = a.ncols();
    sin.resize(k, 0.0);
    Ok((0..k)
        .map(|i| {
            let c = cos[i].clamp(0.0, 1.0);
            if c * c >= 0.5 {
                sin[i].clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect())
}

/// Minimum-norm least-squares solution of `a x = b` via the SVD.
///
/// Returns the solution and the numerical rank of `a`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim(format!(
            "least squares: {} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let x = svd
        .solve(b, tol)
        .map_err(|e| Error::Numeric(format!("least squares: {e}")))?;
    Ok((x, rank))
}

/// Symmetric band matrix stored by its lower band, row-major.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let bw = bandwidth.min(n.saturating_sub(1));
        BandMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `value` to entry (i, j) and, implicitly, (j, i).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(r, c);
        self.data[k] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Solves `A x = b` by band Cholesky, falling back to dense LU when the
    /// matrix is not positive definite.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self.cholesky() {
            Some(l) => Ok(l.cholesky_solve(b)),
            None => self
                .to_dense()
                .lu()
                .solve(b)
                .ok_or_else(|| Error::Numeric("singular tangent matrix".into())),
        }
    }

    fn cholesky(&self) -> Option<BandMatrix> {
        let mut l = self.clone();
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = l.data[l.idx(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= l.data[l.idx(i, k)] * l.data[l.idx(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return None;
                    }
                    let k = l.idx(i, i);
                    l.data[k] = sum.sqrt();
                } else {
                    let k = l.idx(i, j);
                    l.data[k] = sum / l.data[l.idx(j, j)];
                }
            }
        }
        Some(l)
    }

    fn cholesky_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let bw = self.bw;
        let mut y = b.clone();
        for i in 0..n {
            let mut sum = y[i];
            for k in i.saturating_sub(bw)..i {
                sum -= self.data[self.idx(i, k)] * y[k];
            }
            y[i] = sum / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                sum -= self.data[self.idx(k, i)] * y[k];
            }
            y[i] = sum / self.data[self.idx(i, i)];
        }
        y
    }
}

impl From<&DMatrix<f64>> for BandMatrix {
    /// Full-band copy of the lower triangle of a (symmetric) dense matrix.
    fn from(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let mut b = BandMatrix::zeros(n, n.saturating_sub(1));
        for i in 0..n {
            for j in 0..=i {
                let k = b.idx(i, j);
                b.data[k] = a[(i, j)];
            }
        }
        b
    }
}

/// Content hash of a matrix: SHA-256 over its shape and column-major data.
pub fn matrix_hash(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Root-mean-square of a slice (0 for an empty slice).
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn band_cholesky_matches_dense_solve() {
        let n = 7;
        let mut band = BandMatrix::zeros(n, 2);
        for i in 0..n {
            band.add(i, i, 6.0 + i as f64);
            if i >= 1 {
                band.add(i, i - 1, -1.5);
            }
            if i >= 2 {
                band.add(i, i - 2, 0.25);
            }
        }
        let b = DVector::from_fn(n, |i, _| (i as f64).sin() + 1.0);
        let x = band.solve(&b).unwrap();
        let dense = band.to_dense().lu().solve(&b).unwrap();
        assert_relative_eq!(x, dense, epsilon = 1e-12);
    }

    #[test]
    fn indefinite_band_falls_back_to_lu() {
        let mut band = BandMatrix::zeros(2, 1);
        band.add(0, 0, 1.0);
        band.add(1, 1, -2.0);
        band.add(1, 0, 0.5);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let x = band.solve(&b).unwrap();
        let r = band.to_dense() * &x - &b;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn left_singular_handles_wide_input() {
        let s = DMatrix::from_fn(4, 30, |i, j| ((i + 1) * (j + 2)) as f64 % 7.0 - 3.0);
        let (u, sv) = left_singular(&s).unwrap();
        let reference = s.clone().svd(false, false).singular_values;
        let mut r: Vec<f64> = reference.iter().copied().collect();
        r.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in sv.iter().zip(&r) {
            assert_relative_eq!(a, b, epsilon = 1e-10, max_relative = 1e-10);
        }
        assert!(orthonormality_defect(&u) < 1e-12);
    }

    #[test]
    fn principal_angles_of_rotated_plane() {
        let theta = 1e-9f64;
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 1, &[theta.cos(), theta.sin(), 0.0]);
        let ang = principal_angles(&a, &b).unwrap();
        assert_relative_eq!(ang[0], theta, max_relative = 1e-6);
        let c = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        let ang = principal_angles(&a, &c).unwrap();
        assert_relative_eq!(ang[0], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn hash_depends_on_shape_and_data() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 4, &[1.0, 3.0, 2.0, 4.0]);
        assert_ne!(matrix_hash(&a), matrix_hash(&b));
        assert_eq!(matrix_hash(&a), matrix_hash(&a.clone()));
    }
}
