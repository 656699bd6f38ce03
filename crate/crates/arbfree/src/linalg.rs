//! Dense linear algebra plumbing: a row-major matrix, Jacobi SVD and
//! symmetric eigendecomposition, LU/Cholesky solves, and least squares.
//!
//! Everything here is deterministic: Jacobi sweeps visit index pairs in a
//! fixed order, so repeated runs produce bitwise-identical factorizations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape/data length mismatch");
        Self { rows, cols, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_row(&mut self, i: usize, values: &[f64]) {
        self.row_mut(i).copy_from_slice(values);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for j in 0..other.cols {
                    dst[j] += a * src[j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `self^T x` without materializing the transpose.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (row, &xi) in self.data.chunks_exact(self.cols).zip(x) {
            if xi == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(row) {
                *o += xi * r;
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Subtract the column means in place; returns the means.
    pub fn center_columns(&mut self) -> Vec<f64> {
        let means = self.column_means();
        for i in 0..self.rows {
            let row = self.row_mut(i);
            for (v, m) in row.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        means
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        for m in &mut means {
            *m /= n;
        }
        means
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

// -- slice helpers --

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Result of a thin singular value decomposition `A = U diag(s) V^T`.
pub struct Svd {
    /// `m x k` left singular vectors (columns).
    pub u: Mat,
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// `n x k` right singular vectors (columns).
    pub v: Mat,
}

/// One-sided Jacobi SVD.
///
/// Orthogonalizes the columns of a working copy of `A` with plane rotations;
/// the accumulated rotations form `V` and the column norms the singular
/// values. Runs until all off-diagonal column inner products are negligible.
pub fn svd(a: &Mat) -> Svd {
    let m = a.nrows();
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = Mat::identity(n);

    let eps = 1e-14;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    app += wp * wp;
                    aqq += wq * wq;
                    apq += wp * wq;
                }
                if apq.abs() <= eps * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                off = off.max(apq.abs() / (app * aqq).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if off <= eps {
            break;
        }
    }

    // Column norms are the singular values; sort descending for determinism.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| w[(i, j)] * w[(i, j)]).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut u = Mat::zeros(m, n);
    let mut vs = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                u[(i, dst)] = w[(i, src)] / sigma;
            }
        }
        for i in 0..n {
            vs[(i, dst)] = v[(i, src)];
        }
    }
    Svd { u, s, v: vs }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with matching orthonormal
/// eigenvector columns. The sign of each eigenvector is fixed so that its
/// largest-magnitude entry is positive.
pub fn sym_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut w = a.clone();
    let mut v = Mat::identity(n);

    let eps = 1e-14;
    for _ in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += w[(p, q)] * w[(p, q)];
            }
        }
        let scale: f64 = (0..n).map(|i| w[(i, i)].abs()).sum::<f64>().max(1e-300);
        if off.sqrt() <= eps * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq.abs() <= eps * scale * 1e-2 {
                    continue;
                }
                let zeta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let wip = w[(i, p)];
                    let wiq = w[(i, q)];
                    w[(i, p)] = c * wip - s * wiq;
                    w[(i, q)] = s * wip + c * wiq;
                }
                for j in 0..n {
                    let wpj = w[(p, j)];
                    let wqj = w[(q, j)];
                    w[(p, j)] = c * wpj - s * wqj;
                    w[(q, j)] = s * wpj + c * wqj;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| w[(i, i)]).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap().then(i.cmp(&j)));

    let mut values = Vec::with_capacity(n);
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(diag[src]);
        let mut col: Vec<f64> = (0..n).map(|i| v[(i, src)]).collect();
        fix_sign(&mut col);
        for i in 0..n {
            vectors[(i, dst)] = col[i];
        }
    }
    (values, vectors)
}

/// Flip a vector so its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Solve `A x = b` by LU decomposition with partial pivoting.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    assert_eq!(n, b.len(), "rhs length mismatch");
    let mut lu = a.clone();
    let mut x = b.to_vec();
    let mut piv: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let mut p = k;
        for i in (k + 1)..n {
            if lu[(i, k)].abs() > lu[(p, k)].abs() {
                p = i;
            }
        }
        if lu[(p, k)].abs() < 1e-300 {
            return Err(Error::SingularSystem(format!(
                "zero pivot at column {k} in LU factorization"
            )));
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            x.swap(k, p);
            piv.swap(k, p);
        }
        for i in (k + 1)..n {
            let f = lu[(i, k)] / lu[(k, k)];
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                let v = lu[(k, j)];
                lu[(i, j)] -= f * v;
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= lu[(i, j)] * x[j];
        }
        x[i] = s / lu[(i, i)];
    }
    Ok(x)
}

/// Minimum-norm least squares `min |A x - b|_2` via the Jacobi SVD.
///
/// Singular values below `rcond * s_max` are truncated. Returns
/// `IllConditioned` when the system has no usable direction at all.
pub fn lstsq(a: &Mat, b: &[f64], rcond: f64) -> Result<Vec<f64>> {
    assert_eq!(a.nrows(), b.len(), "rhs length mismatch");
    let dec = svd(a);
    let smax = dec.s.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return Err(Error::IllConditioned("all singular values are zero".into()));
    }
    let cutoff = rcond * smax;
    let mut x = vec![0.0; a.ncols()];
    let mut used = 0;
    for (k, &sk) in dec.s.iter().enumerate() {
        if sk <= cutoff {
            continue;
        }
        used += 1;
        let uk = dec.u.col(k);
        let coef = dot(&uk, b) / sk;
        for i in 0..a.ncols() {
            x[i] += coef * dec.v[(i, k)];
        }
    }
    if used == 0 {
        return Err(Error::IllConditioned(
            "numerical rank zero after truncation".into(),
        ));
    }
    Ok(x)
}

/// Forward substitution: solve `L x = b` with `L` lower triangular.
pub fn solve_lower(l: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.nrows();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        let d = l[(i, i)];
        if d.abs() < 1e-300 {
            return Err(Error::SingularSystem(format!(
                "zero diagonal at row {i} in lower-triangular solve"
            )));
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Backward substitution: solve `L^T x = b` with `L` lower triangular.
pub fn solve_lower_transpose(l: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.nrows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        let d = l[(i, i)];
        if d.abs() < 1e-300 {
            return Err(Error::SingularSystem(format!(
                "zero diagonal at row {i} in transposed lower-triangular solve"
            )));
        }
        x[i] = s / d;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_identity() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let i = Mat::identity(2);
        assert_eq!(a.matmul(&i), a);
    }

    #[test]
    fn svd_reconstructs() {
        let a = Mat::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.3, 2.0],
            vec![0.2, -0.7, 1.1],
            vec![3.0, 0.1, -0.4],
        ]);
        let dec = svd(&a);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let mut v = 0.0;
                for k in 0..a.ncols() {
                    v += dec.u[(i, k)] * dec.s[k] * dec.v[(j, k)];
                }
                assert_abs_diff_eq!(v, a[(i, j)], epsilon = 1e-10);
            }
        }
        // descending singular values
        for w in dec.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // orthonormal V
        for p in 0..3 {
            for q in 0..3 {
                let vp = dec.v.col(p);
                let vq = dec.v.col(q);
                let expected = if p == q { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot(&vp, &vq), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sym_eigen_diagonalizes() {
        let a = Mat::from_rows(&[
            vec![4.0, 1.0, -0.5],
            vec![1.0, 3.0, 0.2],
            vec![-0.5, 0.2, 1.0],
        ]);
        let (vals, vecs) = sym_eigen(&a);
        for k in 0..3 {
            let v = vecs.col(k);
            let av = a.matvec(&v);
            for i in 0..3 {
                assert_abs_diff_eq!(av[i], vals[k] * v[i], epsilon = 1e-10);
            }
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }

    #[test]
    fn lu_solves_random_system() {
        let a = Mat::from_rows(&[
            vec![2.0, 1.0, -1.0],
            vec![-3.0, -1.0, 2.0],
            vec![-2.0, 1.0, 2.0],
        ]);
        let x = lu_solve(&a, &[8.0, -11.0, -3.0]).unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(lu_solve(&a, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn lstsq_overdetermined() {
        // y = 1 + 2 x sampled without noise
        let a = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            vec![1.0, 3.0],
        ]);
        let b = [1.0, 3.0, 5.0, 7.0];
        let x = lstsq(&a, &b, 1e-12).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn triangular_solves_match_lu() {
        let l = Mat::from_rows(&[vec![2.0, 0.0], vec![1.5, 0.5]]);
        let b = [4.0, 5.0];
        let x = solve_lower(&l, &b).unwrap();
        assert_abs_diff_eq!(2.0 * x[0], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(1.5 * x[0] + 0.5 * x[1], 5.0, epsilon = 1e-14);
        let y = solve_lower_transpose(&l, &b).unwrap();
        assert_abs_diff_eq!(2.0 * y[0] + 1.5 * y[1], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(0.5 * y[1], 5.0, epsilon = 1e-14);
    }
}
