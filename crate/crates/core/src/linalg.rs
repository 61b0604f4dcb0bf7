//! Dense row-major matrices and the few decompositions the rest of the crate
//! needs: power-iteration spectral norm, Frobenius norm, a symmetric
//! eigensolver and PCA.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

pub const SPECTRAL_TOL: f64 = 1e-6;
pub const SPECTRAL_MAX_ITER: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Build from row-major data. Rejects length mismatches and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        let m = Matrix { rows, cols, data };
        m.ensure_finite()?;
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("Matrix::from_rows", cols, format!("{} in row {i}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    /// Gather the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_parts_unchecked(indices.len(), self.cols, data)
    }

    pub fn transpose(&self) -> Matrix {
        const TILE: usize = 16;
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i0 in (0..self.rows).step_by(TILE) {
            for j0 in (0..self.cols).step_by(TILE) {
                for i in i0..(i0 + TILE).min(self.rows) {
                    for j in j0..(j0 + TILE).min(self.cols) {
                        out.data[j * self.rows + i] = self.data[i * self.cols + j];
                    }
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::InvalidInput(format!(
                "non-finite entry {} at ({}, {})",
                self.data[k],
                k / self.cols.max(1),
                k % self.cols.max(1)
            ))),
        }
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                rhs.rows,
            ));
        }
        Ok(gemm(self, false, rhs, false))
    }

    /// `selfᵀ · rhs`.
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::dim("matmul_tn", self.rows, rhs.rows));
        }
        Ok(gemm(self, true, rhs, false))
    }

    /// `self · rhsᵀ`.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::dim("matmul_nt", self.cols, rhs.cols));
        }
        Ok(gemm(self, false, rhs, true))
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_parts_unchecked(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, c: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        axpy(c, &other.data, &mut self.data);
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                "sub",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix::from_parts_unchecked(self.rows, self.cols, data))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Row `i` Euclidean norm.
    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Column `j` Euclidean norm.
    pub fn col_norm(&self, j: usize) -> f64 {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j].powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a · x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dense product with optional transposition of either operand. Shapes are
/// the caller's responsibility.
pub(crate) fn gemm(a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool) -> Matrix {
    let (m, k, rsa, csa) = if trans_a {
        (a.cols, a.rows, 1, a.cols)
    } else {
        (a.rows, a.cols, a.cols, 1)
    };
    let (kb, n, rsb, csb) = if trans_b {
        (b.cols, b.rows, 1, b.cols)
    } else {
        (b.rows, b.cols, b.cols, 1)
    };
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `out`
    // exactly, and all three outlive the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

pub fn frobenius_norm(m: &Matrix) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::InvalidInput("frobenius_norm of an empty matrix".into()));
    }
    m.ensure_finite()?;
    // Scaled accumulation avoids overflow for large-magnitude entries.
    let scale = m.data.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let ss: f64 = m.data.iter().map(|v| (v / scale).powi(2)).sum();
    Ok(scale * ss.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value by power iteration on `MᵀM` (or `MMᵀ` when that is
/// the smaller Gram matrix), starting from the normalized all-ones vector.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralNorm> {
    if m.is_empty() {
        return Err(Error::InvalidInput("spectral_norm of an empty matrix".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    m.ensure_finite()?;

    // Iterate in the smaller of the two spaces.
    let tall = m.rows >= m.cols;
    let dim = if tall { m.cols } else { m.rows };
    let apply = |v: &[f64]| if tall { m.matvec(v) } else { m.matvec_t(v) };
    let apply_t = |u: &[f64]| if tall { m.matvec_t(u) } else { m.matvec(u) };

    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut sigma = 0.0;
    let mut restarted = false;
    for it in 1..=max_iter {
        let u = apply(&v);
        let s = norm2(&u);
        if s == 0.0 {
            if restarted || m.data.iter().all(|&x| x == 0.0) {
                return Ok(SpectralNorm {
                    value: 0.0,
                    iterations: it,
                    converged: true,
                });
            }
            // Start vector orthogonal to the row space: restart from the
            // basis vector of the heaviest column (resp. row).
            let heaviest = (0..dim)
                .map(|j| if tall { m.col_norm(j) } else { m.row_norm(j) })
                .enumerate()
                .fold((0, -1.0), |best, (j, n)| if n > best.1 { (j, n) } else { best })
                .0;
            v = vec![0.0; dim];
            v[heaviest] = 1.0;
            restarted = true;
            continue;
        }
        let mut w = apply_t(&u);
        let wn = norm2(&w);
        w.iter_mut().for_each(|x| *x /= wn);
        let done = (s - sigma).abs() <= tol * s;
        sigma = s;
        v = w;
        if done {
            return Ok(SpectralNorm {
                value: sigma,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(SpectralNorm {
        value: sigma,
        iterations: max_iter,
        converged: false,
    })
}

/// Eigendecomposition of a symmetric matrix (Householder tridiagonalization
/// and implicit QR). Returns eigenvalues in descending order with matching
/// eigenvector columns.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows;
    if n != a.cols {
        return Err(Error::dim("symmetric_eigen", "square", format!("{:?}", a.shape())));
    }
    a.ensure_finite()?;
    let eig = nalgebra::DMatrix::from_row_slice(n, n, &a.data).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = eig.eigenvectors[(k, src)];
        }
    }
    Ok((values, vectors))
}

#[derive(Clone, Debug)]
pub struct Pca {
    /// Projected points, `n × k`.
    pub projected: Matrix,
    /// Principal directions as rows, `k × d`.
    pub components: Matrix,
    pub mean: Vec<f64>,
    /// Sample-covariance eigenvalues of the retained components.
    pub explained_variance: Vec<f64>,
    /// Set when `k` exceeded the numerical rank; trailing columns are zero.
    pub zero_padded: bool,
}

/// Mean-centred projection of `points` (`n × d`) onto the top `k` principal
/// directions. Each component is signed so its largest-magnitude entry is
/// positive.
pub fn pca_project(points: &Matrix, k: usize) -> Result<Pca> {
    let (n, d) = points.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!("pca needs at least 2 points, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidInput(format!("pca k={k} must be in 1..={}", n.min(d))));
    }
    points.ensure_finite()?;

    let mut mean = vec![0.0; d];
    for i in 0..n {
        axpy(1.0, points.row(i), &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = points.clone();
    for i in 0..n {
        axpy(-1.0, &mean, centered.row_mut(i));
    }
    // Decompose whichever of the d × d covariance and the n × n Gram matrix
    // is smaller; both share their nonzero eigenvalues.
    let gram = n < d;
    let mut cov = if gram {
        centered.matmul_nt(&centered)?
    } else {
        centered.matmul_tn(&centered)?
    };
    cov.scale(1.0 / (n as f64 - 1.0));
    // Exact symmetry for the solver.
    let m = cov.rows();
    for i in 0..m {
        for j in (i + 1)..m {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank_floor = top * 1e-12;

    let mut components = Matrix::zeros(k, d);
    let mut explained = Vec::with_capacity(k);
    let mut zero_padded = false;
    for c in 0..k {
        if values[c] <= rank_floor || top == 0.0 {
            zero_padded = true;
            explained.push(0.0);
            continue;
        }
        let mut dir = if gram {
            // v = Cᵀu / ‖Cᵀu‖ for a Gram eigenvector u.
            let mut v = centered.matvec_t(&vectors.col(c));
            let norm = norm2(&v);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        } else {
            vectors.col(c)
        };
        let lead = dir
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            dir.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(c).copy_from_slice(&dir);
        explained.push(values[c]);
    }
    let projected = centered.matmul_nt(&components)?;
    Ok(Pca {
        projected,
        components,
        mean,
        explained_variance: explained,
        zero_padded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        crate::seed::rng(seed, "test")
    }

    fn random_matrix(r: usize, c: usize, seed: u64) -> Matrix {
        let mut g = rng(seed);
        let data = (0..r * c).map(|_| g.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(r, c, data).unwrap()
    }

    #[test]
    fn spectral_norm_identity_and_diagonal() {
        let s = spectral_norm(&Matrix::identity(3), SPECTRAL_TOL, SPECTRAL_MAX_ITER).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12 && s.converged);
        let s = spectral_norm(&Matrix::diag(&[3.0, 1.0]), SPECTRAL_TOL, SPECTRAL_MAX_ITER).unwrap();
        assert!((s.value - 3.0).abs() < 3e-6);
    }

    /// Largest |root| of the characteristic polynomial of a symmetric 3×3,
    /// found by dense sign-change scanning plus bisection.
    fn char_poly_max_abs_root(a: &Matrix) -> f64 {
        let (a11, a12, a13) = (a[(0, 0)], a[(0, 1)], a[(0, 2)]);
        let (a22, a23, a33) = (a[(1, 1)], a[(1, 2)], a[(2, 2)]);
        // det(A − λI) = −λ³ + c2 λ² − c1 λ + c0
        let c2 = a11 + a22 + a33;
        let c1 = a11 * a22 + a11 * a33 + a22 * a33 - a12 * a12 - a13 * a13 - a23 * a23;
        let c0 = a11 * (a22 * a33 - a23 * a23) - a12 * (a12 * a33 - a23 * a13)
            + a13 * (a12 * a23 - a22 * a13);
        let p = |l: f64| -l * l * l + c2 * l * l - c1 * l + c0;
        let bound = 1.0 + c2.abs() + c1.abs() + c0.abs();
        let steps = 200_000;
        let mut roots = Vec::new();
        let mut prev = -bound;
        for s in 1..=steps {
            let x = -bound + 2.0 * bound * s as f64 / steps as f64;
            if p(prev) == 0.0 {
                roots.push(prev);
            } else if p(prev).signum() != p(x).signum() {
                let (mut lo, mut hi) = (prev, x);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if p(lo).signum() == p(mid).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev = x;
        }
        roots.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }

    #[test]
    fn spectral_norm_random_symmetric_matches_characteristic_roots() {
        let b = random_matrix(3, 3, 7);
        let mut s = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                s[(i, j)] = 0.5 * (b[(i, j)] + b[(j, i)]);
            }
        }
        let oracle = char_poly_max_abs_root(&s);
        let got = spectral_norm(&s, 1e-12, 100_000).unwrap();
        assert!(got.converged);
        assert!((got.value - oracle).abs() <= 1e-8 * oracle, "{} vs {oracle}", got.value);
    }

    #[test]
    fn spectral_norm_start_vector_orthogonal_to_rows() {
        let m = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
        let s = spectral_norm(&m, SPECTRAL_TOL, SPECTRAL_MAX_ITER).unwrap();
        assert!((s.value - 2f64.sqrt()).abs() < 1e-9);
        let z = spectral_norm(&Matrix::zeros(2, 3), SPECTRAL_TOL, 10).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn spectral_norm_rejects_non_finite_and_flags_unconverged() {
        let mut m = Matrix::identity(2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(
            spectral_norm(&m, SPECTRAL_TOL, 10),
            Err(Error::InvalidInput(_))
        ));
        let m = Matrix::diag(&[1.0, 0.999_999]);
        let s = spectral_norm(&m, 1e-15, 2).unwrap();
        assert!(!s.converged);
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(2, 2)).unwrap(), 0.0);
        assert!((frobenius_norm(&Matrix::identity(2)).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap()).unwrap(), 5.0);
        assert!(frobenius_norm(&Matrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn gemm_transposes_agree_with_naive() {
        let a = random_matrix(4, 3, 2);
        let b = random_matrix(3, 5, 3);
        let c = a.matmul(&b).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let want: f64 = (0..3).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((c[(i, j)] - want).abs() < 1e-14);
            }
        }
        let c2 = a.transpose().matmul_tn(&b).unwrap();
        let c3 = a.matmul_nt(&b.transpose()).unwrap();
        for ((x, y), z) in c.as_slice().iter().zip(c2.as_slice()).zip(c3.as_slice()) {
            assert!((x - y).abs() < 1e-14 && (x - z).abs() < 1e-14);
        }
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn pca_collinear_points_reconstruct_exactly() {
        let pts = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0], [0.5, 1.0, 1.5]]).unwrap();
        let p = pca_project(&pts, 1).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let rec = p.mean[j] + p.projected[(i, 0)] * p.components[(0, j)];
                assert!((rec - pts[(i, j)]).abs() < 1e-10);
            }
        }
        assert!(!p.zero_padded);
    }

    #[test]
    fn pca_one_dimensional_identity_up_to_sign() {
        let pts = Matrix::from_rows(&[[-2.0], [0.5], [1.5]]).unwrap();
        let p = pca_project(&pts, 1).unwrap();
        for i in 0..3 {
            assert!((p.projected[(i, 0)].abs() - pts[(i, 0)].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_preserves_total_variance_in_full_rank() {
        let mut g = rng(11);
        let data: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut g)).collect();
        let pts = Matrix::from_vec(10, 2, data).unwrap();
        let variance = |m: &Matrix| {
            let (n, d) = m.shape();
            (0..d)
                .map(|j| {
                    let c = m.col(j);
                    let mu = c.iter().sum::<f64>() / n as f64;
                    c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0)
                })
                .sum::<f64>()
        };
        let p = pca_project(&pts, 2).unwrap();
        assert!((variance(&pts) - variance(&p.projected)).abs() < 1e-10);
    }

    #[test]
    fn pca_rank_deficient_is_zero_padded() {
        let pts = Matrix::from_rows(&[[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [3.0, 3.0, 0.0]]).unwrap();
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.zero_padded);
        assert!((0..3).all(|i| p.projected[(i, 1)] == 0.0));
        assert!(pca_project(&pts, 4).is_err());
    }

    #[test]
    fn pca_sign_convention() {
        let pts = random_matrix(8, 4, 5);
        let p = pca_project(&pts, 3).unwrap();
        for c in 0..3 {
            let lead = p
                .components
                .row(c)
                .iter()
                .copied()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn wide_pca_matches_covariance_eigenvectors() {
        let pts = random_matrix(6, 9, 11);
        let p = pca_project(&pts, 4).unwrap();
        let mut c = pts.clone();
        for i in 0..6 {
            axpy(-1.0, &p.mean, c.row_mut(i));
        }
        let mut cov = c.matmul_tn(&c).unwrap();
        cov.scale(1.0 / 5.0);
        let (vals, vecs) = symmetric_eigen(&cov).unwrap();
        for k in 0..4 {
            assert!((p.explained_variance[k] - vals[k]).abs() < 1e-10);
            let overlap = dot(p.components.row(k), &vecs.col(k)).abs();
            assert!((overlap - 1.0).abs() < 1e-10, "component {k}: |cos| = {overlap}");
        }
    }

    #[test]
    fn eigensolver_recovers_diagonal_spectrum() {
        let (vals, vecs) = symmetric_eigen(&Matrix::diag(&[1.0, 5.0, 3.0])).unwrap();
        assert_eq!(vals, vec![5.0, 3.0, 1.0]);
        assert_eq!(vecs[(1, 0)].abs(), 1.0);
    }
}
