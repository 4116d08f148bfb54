//! Dense linear algebra for the tiny matrices this crate works with.
//!
//! Everything here is sized for the control problems at hand: Hamiltonians
//! of dimension 2-8 and Gram matrices of dimension `M + 1` (4 for the
//! three-constraint benchmark). Eigenproblems are solved with cyclic Jacobi,
//! which keeps high relative accuracy on graded matrices, and SPD systems
//! with a Cholesky factorisation followed by iterative refinement.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute Hermiticity tolerance on matrix entries.
pub const HERMITIAN_TOL: f64 = 1e-13;

/// Eigenvalues below `SEMIDEFINITE_TOL * largest` count as zero for rank
/// reporting. Matrices themselves are never clamped.
pub const SEMIDEFINITE_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 64;

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape(format!(
                "expected a non-empty square matrix, got {} rows",
                dim
            )));
        }
        Ok(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        let n = self.dim;
        debug_assert_eq!(n, rhs.dim);
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim;
        debug_assert_eq!(n, v.len());
        (0..n)
            .map(|i| {
                self.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `self^* v`.
    pub fn adjoint_matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (row, vi) in self.data.chunks_exact(n).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * vi;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn sub(&self, rhs: &CMatrix) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest `|A_ij - conj(A_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `‖U*U - I‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        self.adjoint()
            .matmul(self)
            .sub(&CMatrix::identity(self.dim))
            .frobenius_norm()
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

/// A complex matrix verified to be Hermitian within [`HERMITIAN_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CMatrix", into = "CMatrix")]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let defect = m.hermitian_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian { defect });
        }
        Ok(Self(m))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(CMatrix::from_real_rows(rows)?)
    }

    pub fn diag(values: &[f64]) -> Self {
        Self(CMatrix::diag_real(values))
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    /// `self + s * other`; Hermitian whenever both operands are.
    pub fn add_scaled(&self, other: &HermitianMatrix, s: f64) -> HermitianMatrix {
        let data = self
            .0
            .data
            .iter()
            .zip(&other.0.data)
            .map(|(a, b)| a + b * s)
            .collect();
        HermitianMatrix(CMatrix {
            dim: self.0.dim,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        HermitianMatrix(self.0.scale(s))
    }
}

impl TryFrom<CMatrix> for HermitianMatrix {
    type Error = Error;
    fn try_from(m: CMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<HermitianMatrix> for CMatrix {
    fn from(h: HermitianMatrix) -> CMatrix {
        h.0
    }
}

/// Real symmetric matrix, row-major. Holds Gram matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SpdMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds from rows, rejecting asymmetry beyond `1e-13` relative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape(format!(
                "expected a non-empty square matrix, got {} rows",
                dim
            )));
        }
        let m = Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        };
        let scale = m.data.iter().fold(0.0_f64, |a, x| a.max(x.abs())).max(1.0);
        for i in 0..dim {
            for j in i + 1..dim {
                let d = (m[(i, j)] - m[(j, i)]).abs();
                if d > 1e-13 * scale {
                    return Err(Error::NotSymmetric { defect: d });
                }
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> SpdMatrix {
        let mut m = self.clone();
        for i in 0..self.dim {
            m[(i, i)] += shift;
        }
        m
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn to_complex(&self) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for SpdMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SpdMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors.
///
/// `vectors[k]` is the eigenvector for `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigPair<T> {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<T>>,
}

impl EigPair<Complex64> {
    /// Eigenvector matrix `V` with the eigenvectors as columns.
    pub fn vector_matrix(&self) -> CMatrix {
        let n = self.values.len();
        let mut v = CMatrix::zeros(n);
        for (k, col) in self.vectors.iter().enumerate() {
            for i in 0..n {
                v[(i, k)] = col[i];
            }
        }
        v
    }

    /// `V diag(values) V*`.
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.values.len();
        let mut out = CMatrix::zeros(n);
        for (lambda, col) in self.values.iter().zip(&self.vectors) {
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += col[i] * col[j].conj() * *lambda;
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi on a complex Hermitian matrix.
///
/// Off-diagonal entries are annihilated until each satisfies
/// `|a_pq| <= eps * sqrt(|a_pp a_qq|)`, the relative criterion that keeps
/// small eigenvalues of graded matrices accurate.
fn jacobi(mut a: CMatrix) -> EigPair<Complex64> {
    let n = a.dim;
    let mut v = CMatrix::identity(n);
    let zero = Complex64::new(0.0, 0.0);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                if r <= f64::EPSILON * 0.5 * (app.abs() * aqq.abs()).sqrt() {
                    a[(p, q)] = zero;
                    a[(q, p)] = zero;
                    continue;
                }
                rotated = true;
                let phase = apq / r;
                let zeta = (aqq - app) / (2.0 * r);
                let t = if zeta >= 0.0 {
                    -1.0 / (zeta + (zeta * zeta + 1.0).sqrt())
                } else {
                    1.0 / (-zeta + (zeta * zeta + 1.0).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // J = [[c, -s e^{iφ}], [s e^{-iφ}, c]] in the (p, q) plane.
                let jpq = -phase * s;
                let jqp = phase.conj() * s;
                // A <- A J
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c + akq * jqp;
                    a[(k, q)] = akp * jpq + akq * c;
                }
                // A <- J* A
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c + aqk * jqp.conj();
                    a[(q, k)] = apk * jpq.conj() + aqk * c;
                }
                a[(p, q)] = zero;
                a[(q, p)] = zero;
                a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c + vkq * jqp;
                    v[(k, q)] = vkp * jpq + vkq * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    EigPair {
        values: order.iter().map(|&i| a[(i, i)].re).collect(),
        vectors: order
            .iter()
            .map(|&k| (0..n).map(|i| v[(i, k)]).collect())
            .collect(),
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eig(a: &HermitianMatrix) -> EigPair<Complex64> {
    jacobi(a.0.clone())
}

/// Checked variant for raw matrices: reports the symmetry defect on failure.
pub fn hermitian_eig_checked(a: &CMatrix) -> Result<EigPair<Complex64>> {
    let h = HermitianMatrix::new(a.clone())?;
    Ok(hermitian_eig(&h))
}

/// Eigendecomposition of a real symmetric matrix, eigenvalues ascending.
pub fn symmetric_eig(a: &SpdMatrix) -> EigPair<f64> {
    let pair = jacobi(a.to_complex());
    EigPair {
        values: pair.values,
        vectors: pair
            .vectors
            .into_iter()
            .map(|col| col.into_iter().map(|z| z.re).collect())
            .collect(),
    }
}

/// Lower Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &SpdMatrix) -> Result<Self> {
        let n = a.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { dim: n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }
}

/// Solves `A x = b` for SPD `A` by Cholesky with two refinement sweeps.
pub fn spd_solve(a: &SpdMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim {
        return Err(Error::Shape(format!(
            "right-hand side has length {}, matrix has dimension {}",
            b.len(),
            a.dim
        )));
    }
    let chol = Cholesky::factor(a)?;
    let mut x = chol.solve(b);
    for _ in 0..2 {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = chol.solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    Ok(x)
}

/// Inverse of an SPD matrix, one column solve per unit vector.
pub fn spd_inverse(a: &SpdMatrix) -> Result<SpdMatrix> {
    let n = a.dim;
    let mut inv = SpdMatrix::zeros(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = spd_solve(a, &e)?;
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    // mirror the upper triangle so the result is exactly symmetric
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = avg;
            inv[(j, i)] = avg;
        }
    }
    Ok(inv)
}

/// Composite trapezoidal weights (without the `dt` factor).
pub fn trapezoid_weight(k: usize, n: usize) -> f64 {
    if k == 0 || k + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Composite trapezoidal rule on a uniform grid.
pub fn trapezoid(samples: &[f64], dt: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Quadrature(format!(
            "trapezoid needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Quadrature(format!("non-positive step dt = {dt}")));
    }
    Ok(trapezoid_unchecked(samples, dt))
}

pub(crate) fn trapezoid_unchecked(samples: &[f64], dt: f64) -> f64 {
    let n = samples.len();
    let inner: f64 = samples[1..n - 1].iter().sum();
    dt * (inner + 0.5 * (samples[0] + samples[n - 1]))
}

/// Trapezoidal integral of a pointwise product.
pub(crate) fn trapezoid_product(a: &[f64], b: &[f64], dt: f64) -> f64 {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    let inner: f64 = a[1..n - 1]
        .iter()
        .zip(&b[1..n - 1])
        .map(|(x, y)| x * y)
        .sum();
    dt * (inner + 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
}

/// Trapezoidal integral of a triple pointwise product.
pub(crate) fn trapezoid_triple(a: &[f64], b: &[f64], c: &[f64], dt: f64) -> f64 {
    let n = a.len();
    let mut inner = 0.0;
    for k in 1..n - 1 {
        inner += a[k] * b[k] * c[k];
    }
    dt * (inner + 0.5 * (a[0] * b[0] * c[0] + a[n - 1] * b[n - 1] * c[n - 1]))
}

/// Slice propagator `exp(-i A dt)` from an eigendecomposition of `A`.
pub fn unitary_from_eig(eig: &EigPair<Complex64>, dt: f64) -> CMatrix {
    let n = eig.values.len();
    let mut out = CMatrix::zeros(n);
    for (lambda, col) in eig.values.iter().zip(&eig.vectors) {
        let phase = Complex64::from_polar(1.0, -lambda * dt);
        for i in 0..n {
            let ci = col[i] * phase;
            for j in 0..n {
                out[(i, j)] += ci * col[j].conj();
            }
        }
    }
    out
}

/// `exp(-i A dt)` for Hermitian `A`.
pub fn matrix_exponential_step(a: &HermitianMatrix, dt: f64) -> CMatrix {
    unitary_from_eig(&hermitian_eig(a), dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        let mut m = CMatrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = c(rng.random_range(-2.0..2.0), 0.0);
            for j in i + 1..n {
                let z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        HermitianMatrix::new(m).unwrap()
    }

    #[test]
    fn diagonal_eigenvalues_sorted() {
        let eig = hermitian_eig(&HermitianMatrix::diag(&[2.0, -1.0]));
        assert_eq!(eig.values, vec![-1.0, 2.0]);
        assert_eq!(eig.vectors[0], vec![c(0.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(eig.vectors[1], vec![c(1.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn pauli_x_spectrum() {
        let x = HermitianMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let eig = hermitian_eig(&x);
        assert_relative_eq!(eig.values[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(eig.values[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn random_hermitian_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 3, 5, 8] {
            for _ in 0..50 {
                let a = random_hermitian(&mut rng, n);
                let eig = hermitian_eig(&a);
                let err = eig.reconstruct().sub(a.matrix()).frobenius_norm();
                assert!(
                    err <= 1e-11 * a.matrix().frobenius_norm(),
                    "n={n} err={err}"
                );
                assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
                assert!(eig.vector_matrix().unitarity_defect() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_residual_relative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_hermitian(&mut rng, 4);
        let eig = hermitian_eig(&a);
        let scale = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (lambda, v) in eig.values.iter().zip(&eig.vectors) {
            let av = a.matrix().matvec(v);
            let res: f64 = av
                .iter()
                .zip(v)
                .map(|(x, y)| (x - y * *lambda).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-11 * scale);
        }
    }

    #[test]
    fn rejects_non_hermitian_with_defect() {
        let m = CMatrix::from_rows(&[
            vec![c(1.0, 0.0), c(0.0, 1.0)],
            vec![c(0.0, 1.0), c(1.0, 0.0)],
        ])
        .unwrap();
        match hermitian_eig_checked(&m) {
            Err(Error::NotHermitian { defect }) => assert_relative_eq!(defect, 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spd_solve_trivial_cases() {
        let x = spd_solve(&SpdMatrix::identity(4), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(x, vec![1.0, 0.0, 0.0, 0.0]);
        let x = spd_solve(&SpdMatrix::diag(&[4.0, 1.0]), &[1.0, 1.0]).unwrap();
        assert_eq!(x, vec![0.25, 1.0]);
    }

    #[test]
    fn spd_solve_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut a = SpdMatrix::zeros(4);
            for i in 0..4 {
                for j in 0..4 {
                    a[(i, j)] = (0..4).map(|k| b[i * 4 + k] * b[j * 4 + k]).sum::<f64>();
                }
            }
            let a = a.shifted(0.1);
            let rhs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = spd_solve(&a, &rhs).unwrap();
            let r: f64 = a
                .matvec(&x)
                .iter()
                .zip(&rhs)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(r <= 1e-10, "residual {r}");
        }
    }

    #[test]
    fn spd_solve_reports_failing_pivot() {
        let a = SpdMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        match spd_solve(&a, &[1.0, 0.0]) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trapezoid_cases() {
        assert_eq!(trapezoid(&[1.0, 1.0, 1.0], 0.5).unwrap(), 1.0);
        assert_eq!(trapezoid(&[0.0, 1.0, 2.0], 1.0).unwrap(), 2.0);
        let n = 4000;
        let dt = std::f64::consts::PI / (n - 1) as f64;
        let s: Vec<f64> = (0..n).map(|k| (k as f64 * dt).sin()).collect();
        assert!((trapezoid(&s, dt).unwrap() - 2.0).abs() < 1e-6);
        assert!(trapezoid(&[1.0], 1.0).is_err());
        assert!(trapezoid(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn exponential_cases() {
        let z = matrix_exponential_step(&HermitianMatrix::diag(&[0.0, 0.0, 0.0]), 0.3);
        assert_eq!(z, CMatrix::identity(3));
        let w = [0.5, -1.25, 2.0];
        let u = matrix_exponential_step(&HermitianMatrix::diag(&w), 0.7);
        for (i, wi) in w.iter().enumerate() {
            let expect = Complex64::from_polar(1.0, -wi * 0.7);
            assert!((u[(i, i)] - expect).norm() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_hermitian(&mut rng, 3);
            let u = matrix_exponential_step(&a, rng.random_range(0.01..10.0));
            assert!(u.unitarity_defect() < 1e-12);
        }
    }

    #[test]
    fn graded_matrix_small_eigenvalue_is_relatively_accurate() {
        // diag(1e5, 1e-5) rotated slightly: the small eigenvalue must not be
        // swamped by the large one.
        let a = SpdMatrix::from_rows(&[vec![1e5, 1e-3], vec![1e-3, 1e-5]]).unwrap();
        let eig = symmetric_eig(&a);
        let det = 1e5 * 1e-5 - 1e-6;
        assert_relative_eq!(eig.values[0] * eig.values[1], det, max_relative = 1e-13);
    }
}
