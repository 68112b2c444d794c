//! Dense symmetric linear algebra.
//!
//! [`SymMatrix`] is the carrier for every `d x d` matrix in the solver. [`SpectralShift`]
//! keeps matrices of the form `aI + b11'` symbolic so that inverses, square roots and
//! congruences cost `O(d^2)` instead of a dense factorization.

use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Largest tolerated asymmetry `|M_ij - M_ji|` (relative to the largest entry) on input.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Dense real symmetric matrix. Storage is always exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Validates and symmetrizes `m` as `(m + m') / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("matrix must have dim >= 1".into()));
        }
        check_dim(m.nrows(), m.ncols())?;
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let scale = 1.0 + m.amax();
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric: |M[{i},{j}] - M[{j},{i}]| = {gap:e}"
                    )));
                }
            }
        }
        Ok(Self::from_fn(d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    }

    /// Builds a matrix from its upper triangle; `f` is only called with `i <= j`.
    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(d >= 1, "SymMatrix dimension must be >= 1");
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { m }
    }

    pub fn zeros(d: usize) -> Self {
        Self::from_fn(d, |_, _| 0.0)
    }

    pub fn identity(d: usize) -> Self {
        Self::from_fn(d, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// The all-ones matrix `11'`.
    pub fn ones(d: usize) -> Self {
        Self::from_fn(d, |_, _| 1.0)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.m[(i, i)]).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.m.column_sum().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn sum(&self) -> f64 {
        self.m.sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn min_entry(&self) -> f64 {
        self.m.min()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.amax()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|x| x.is_finite())
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { m: &self.m * alpha }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &SymMatrix) {
        self.m.zip_apply(&other.m, |x, y| *x += alpha * y);
    }

    /// `M + t I`.
    pub fn shifted(&self, t: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim() {
            out.m[(i, i)] += t;
        }
        out
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), |i, j| self.m[(idx[i], idx[j])])
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        (&self.m - &other.m).amax()
    }

    /// Writes the matrix as headerless CSV, one row per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| format!("{}", self.m[(i, j)]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_csv_rows(r)?;
        let d = rows.len();
        if d == 0 {
            return Err(Error::Parse("empty matrix file".into()));
        }
        let mut m = DMatrix::zeros(d, d);
        for (i, row) in rows.iter().enumerate() {
            check_dim(d, row.len())?;
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Self::new(m)
    }
}

/// Parses headerless comma-separated numeric rows, skipping blank lines.
pub fn read_csv_rows<R: BufRead>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {tok:?}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            m: &self.m + &rhs.m,
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            m: &self.m - &rhs.m,
        }
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

/// The structured matrix `aI + b11'` of dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralShift {
    pub a: f64,
    pub b: f64,
    pub dim: usize,
}

/// Closed forms for the inverse and square roots of a positive definite [`SpectralShift`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredForms {
    pub inverse: SpectralShift,
    pub sqrt: SpectralShift,
    pub inv_sqrt: SpectralShift,
}

impl SpectralShift {
    pub fn new(a: f64, b: f64, dim: usize) -> Self {
        assert!(dim >= 1, "SpectralShift dimension must be >= 1");
        Self { a, b, dim }
    }

    /// Eigenvalue on the complement of `1` (multiplicity `d - 1`).
    pub fn eig_perp(&self) -> f64 {
        self.a
    }

    /// Eigenvalue on the `1` direction.
    pub fn eig_ones(&self) -> f64 {
        self.a + self.dim as f64 * self.b
    }

    pub fn lambda_min(&self) -> f64 {
        if self.dim == 1 {
            self.eig_ones()
        } else {
            self.eig_perp().min(self.eig_ones())
        }
    }

    pub fn lambda_max(&self) -> f64 {
        if self.dim == 1 {
            self.eig_ones()
        } else {
            self.eig_perp().max(self.eig_ones())
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.lambda_min() > 0.0
    }

    /// Spectral norm `||M||_2`.
    pub fn norm2(&self) -> f64 {
        self.lambda_min().abs().max(self.lambda_max().abs())
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.a + self.b
        } else {
            self.b
        }
    }

    pub fn min_entry(&self) -> f64 {
        if self.dim == 1 {
            self.a + self.b
        } else {
            (self.a + self.b).min(self.b)
        }
    }

    pub fn materialize(&self) -> SymMatrix {
        SymMatrix::from_fn(self.dim, |i, j| self.entry(i, j))
    }

    pub fn structured_forms(&self) -> Result<StructuredForms> {
        if !(self.a > 0.0 && self.eig_ones() > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "aI + b11' with a = {}, a + d b = {}",
                self.a,
                self.eig_ones()
            )));
        }
        let (a, b, d) = (self.a, self.b, self.dim as f64);
        let sa = a.sqrt();
        let sab = (a + d * b).sqrt();
        Ok(StructuredForms {
            inverse: SpectralShift::new(1.0 / a, -b / (a * a + a * b * d), self.dim),
            sqrt: SpectralShift::new(sa, (sab - sa) / d, self.dim),
            inv_sqrt: SpectralShift::new(1.0 / sa, -(sab - sa) / (d * sa * sab), self.dim),
        })
    }

    /// `S M S` for this `S`, in `O(d^2)`.
    pub fn congruence(&self, m: &SymMatrix) -> SymMatrix {
        assert_eq!(m.dim(), self.dim, "congruence dimension mismatch");
        let (alpha, beta) = (self.a, self.b);
        let r = m.row_sums();
        let s: f64 = r.iter().sum();
        SymMatrix::from_fn(self.dim, |i, j| {
            alpha * alpha * m.get(i, j) + alpha * beta * (r[i] + r[j]) + beta * beta * s
        })
    }

    /// `S x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let s: f64 = x.iter().sum();
        x.iter().map(|v| self.a * v + self.b * s).collect()
    }
}

/// Full spectral decomposition with eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl EigDecomp {
    pub fn reconstruct(&self) -> SymMatrix {
        let d = self.values.len();
        let scaled =
            &self.vectors * DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        let full = scaled * self.vectors.transpose();
        SymMatrix::from_fn(d, |i, j| 0.5 * (full[(i, j)] + full[(j, i)]))
    }
}

const EIG_MAX_ITERS: usize = 10_000;

pub fn eig_sym(m: &SymMatrix) -> Result<EigDecomp> {
    if !m.is_finite() {
        return Err(Error::InvalidInput(
            "eigendecomposition of non-finite matrix".into(),
        ));
    }
    let eig = SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, EIG_MAX_ITERS)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let d = m.dim();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(EigDecomp { values, vectors })
}

/// Eigenvalues only, ascending.
pub fn eigenvalues_sym(m: &SymMatrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::InvalidInput(
            "eigenvalues of non-finite matrix".into(),
        ));
    }
    let mut values: Vec<f64> = m
        .as_matrix()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "symmetric eigensolver produced non-finite values".into(),
        ));
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    Ok(eigenvalues_sym(m)?[0])
}

/// Trace inner product `<A, B> = sum_ij A_ij B_ij`.
pub fn trace_inner(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(a.as_matrix().dot(b.as_matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(d: usize, rng: &mut impl Rng) -> SymMatrix {
        SymMatrix::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Number of eigenvalues below `x`, from the signs of the LDL' pivots of `M - xI`.
    fn count_below(m: &SymMatrix, x: f64) -> usize {
        let d = m.dim();
        let mut a: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| m.get(i, j) - if i == j { x } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut neg = 0;
        for k in 0..d {
            let p = a[k][k];
            if p < 0.0 {
                neg += 1;
            }
            for i in (k + 1)..d {
                let f = a[i][k] / p;
                for j in (k + 1)..d {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
        neg
    }

    fn bisection_eigenvalues(m: &SymMatrix) -> Vec<f64> {
        let bound = 1.0
            + (0..m.dim())
                .map(|i| (0..m.dim()).map(|j| m.get(i, j).abs()).sum::<f64>())
                .fold(0.0, f64::max);
        (0..m.dim())
            .map(|k| {
                let (mut lo, mut hi) = (-bound, bound);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if count_below(m, mid) > k {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }

    #[test]
    fn identity_and_diagonal_spectra() {
        let e = eig_sym(&SymMatrix::identity(3)).unwrap();
        for v in e.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let e = eig_sym(&SymMatrix::from_diagonal(&[2.0, -1.0])).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn eig_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let m = random_sym(6, &mut rng);
            let e = eig_sym(&m).unwrap();
            let oracle = bisection_eigenvalues(&m);
            for (v, o) in e.values.iter().zip(&oracle) {
                assert!((v - o).abs() < 1e-10, "{v} vs {o}");
            }
        }
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..100u64 {
            let d = 2 + (seed as usize * 7) % 49;
            let m = random_sym(d, &mut rng);
            let e = eig_sym(&m).unwrap();
            let err = (e.reconstruct().as_matrix() - m.as_matrix()).norm();
            assert!(
                err <= 1e-10 * (1.0 + m.frobenius_norm()),
                "d={d} err={err:e}"
            );
            let qtq = e.vectors.transpose() * &e.vectors;
            let ortho = (qtq - DMatrix::identity(d, d)).amax();
            assert!(ortho <= 1e-10, "d={d} ortho={ortho:e}");
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn min_eigenvalue_cases() {
        assert!(min_eigenvalue(&SymMatrix::ones(3)).unwrap().abs() < 1e-14);
        assert!(
            (min_eigenvalue(&SymMatrix::from_diagonal(&[5.0, -2.0, 1.0])).unwrap() + 2.0).abs()
                < 1e-14
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_sym(8, &mut rng);
            let t = rng.random_range(-3.0..3.0);
            let a = min_eigenvalue(&m.shifted(t)).unwrap();
            let b = min_eigenvalue(&m).unwrap() + t;
            assert!((a - b).abs() < 1e-10);
            assert!((min_eigenvalue(&m).unwrap() - eig_sym(&m).unwrap().values[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_inner_cases() {
        assert_eq!(
            trace_inner(&SymMatrix::identity(4), &SymMatrix::identity(4)).unwrap(),
            4.0
        );
        assert_eq!(
            trace_inner(&SymMatrix::ones(3), &SymMatrix::identity(3)).unwrap(),
            3.0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_sym(5, &mut rng);
        let b = random_sym(5, &mut rng);
        let mut naive = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                naive += a.get(i, j) * b.get(i, j);
            }
        }
        assert!((trace_inner(&a, &b).unwrap() - naive).abs() < 1e-13);
        assert!(matches!(
            trace_inner(&a, &SymMatrix::identity(4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn structured_forms_identity_and_inverse_norm() {
        let f = SpectralShift::new(1.0, 0.0, 4).structured_forms().unwrap();
        assert_eq!(f.inverse, SpectralShift::new(1.0, 0.0, 4));
        let f = SpectralShift::new(0.25, 3.0 / 20.0, 5)
            .structured_forms()
            .unwrap();
        assert!((f.inverse.norm2() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn structured_inverse_matches_eigen_inverse() {
        let s = SpectralShift::new(2.0, 1.0, 4);
        let inv = s.structured_forms().unwrap().inverse.materialize();
        let e = eig_sym(&s.materialize()).unwrap();
        let dense = EigDecomp {
            values: e.values.iter().map(|v| 1.0 / v).collect(),
            vectors: e.vectors,
        }
        .reconstruct();
        assert!(inv.max_abs_diff(&dense) < 1e-12);
    }

    #[test]
    fn structured_forms_reject_indefinite() {
        assert!(SpectralShift::new(0.0, 1.0, 3).structured_forms().is_err());
        assert!(SpectralShift::new(1.0, -0.5, 3).structured_forms().is_err());
    }

    #[test]
    fn spectral_shift_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let d = rng.random_range(2..20);
            let s = SpectralShift::new(rng.random_range(0.01..3.0), rng.random_range(0.01..3.0), d);
            let e = eig_sym(&s.materialize()).unwrap();
            let mut expected = vec![s.a; d - 1];
            expected.push(s.a + d as f64 * s.b);
            expected.sort_by(f64::total_cmp);
            for (v, x) in e.values.iter().zip(&expected) {
                assert!((v - x).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn congruence_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_sym(7, &mut rng);
        let s = SpectralShift::new(0.7, -0.05, 7);
        let dense = s.materialize().as_matrix() * m.as_matrix() * s.materialize().as_matrix();
        assert!((s.congruence(&m).as_matrix() - dense).amax() < 1e-13);
    }

    #[test]
    fn new_rejects_asymmetry_and_symmetrizes_noise() {
        let mut m = DMatrix::from_element(2, 2, 1.0);
        m[(0, 1)] = 1.0 + 1e-12;
        let s = SymMatrix::new(m.clone()).unwrap();
        assert_eq!(s.get(0, 1), s.get(1, 0));
        m[(0, 1)] = 1.1;
        assert!(SymMatrix::new(m).is_err());
        assert!(SymMatrix::new(DMatrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_sym(5, &mut rng);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = SymMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(back, m);
    }
}
