//! Envelope-weighted Gram matrix of the objective and constraint gradients,
//! its Tikhonov shift and spectral diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TimeGrid;
use crate::numkit::{spd_inverse, spd_solve, symmetric_eig, trapezoid_triple, SpdMatrix};

/// Gating envelope `S(t) ∈ [0, 1]`, vanishing at both ends of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    grid: TimeGrid,
    samples: Vec<f64>,
    tau: f64,
}

impl Envelope {
    /// Wraps arbitrary samples; they must lie in `[0, 1]`.
    pub fn from_samples(grid: TimeGrid, samples: Vec<f64>, tau: f64) -> Result<Self> {
        grid.ensure_len(samples.len(), "envelope")?;
        if samples.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidParameter(
                "envelope samples must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { grid, samples, tau })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

fn gaussian(grid: &TimeGrid, tau: f64) -> Vec<f64> {
    (0..grid.n_points())
        .map(|k| {
            let t = grid.centred_time(k);
            (-t * t / (2.0 * tau * tau)).exp()
        })
        .collect()
}

/// Gaussian of width `tau` centred on the grid midpoint, scaled to unit
/// maximum, with both endpoint samples set to zero.
pub fn build_envelope(grid: &TimeGrid, tau: f64) -> Result<Envelope> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "envelope width must be positive, got {tau}"
        )));
    }
    let mut samples = gaussian(grid, tau);
    let peak = samples.iter().cloned().fold(0.0, f64::max);
    for s in samples.iter_mut() {
        *s /= peak;
    }
    let n = samples.len();
    samples[0] = 0.0;
    samples[n - 1] = 0.0;
    Envelope::from_samples(grid.clone(), samples, tau)
}

/// `Γ_{ℓℓ'} = ∫ S c_ℓ c_ℓ' dt`, upper triangle computed and mirrored.
pub fn assemble(envelope: &Envelope, gradients: &[Vec<f64>]) -> Result<SpdMatrix> {
    let n = envelope.samples.len();
    for (l, g) in gradients.iter().enumerate() {
        if g.len() != n {
            return Err(Error::GridMismatch(format!(
                "gradient {l} has {} samples, envelope has {n}",
                g.len()
            )));
        }
    }
    let dim = gradients.len();
    let dt = envelope.grid.dt();
    let mut gamma = SpdMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let v = trapezoid_triple(&envelope.samples, &gradients[i], &gradients[j], dt);
            gamma[(i, j)] = v;
            gamma[(j, i)] = v;
        }
    }
    Ok(gamma)
}

/// Regularised Gram matrix with its spectrum and the projection solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramData {
    pub gamma: SpdMatrix,
    pub eps: f64,
    pub gamma_eps: SpdMatrix,
    /// Ascending eigenvalues of `gamma` (unshifted).
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue of `gamma`; may be a tiny negative from round-off.
    pub sigma_min_sq: f64,
    pub sigma_max_sq: f64,
    pub cond: f64,
    pub g0: f64,
    /// Solution of `Γ_ε x = e₀`, i.e. the first column of `Γ_ε⁻¹`.
    pub x: Vec<f64>,
}

impl GramData {
    pub fn dim(&self) -> usize {
        self.gamma.dim()
    }

    /// Eigenvalues of `Γ_ε`, obtained by shifting those of `Γ`.
    pub fn shifted_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|l| l + self.eps * self.eps)
            .collect()
    }

    /// `‖Γ_ε⁻¹‖₂ = 1/(σ_min² + ε²)`, with `σ_min²` floored at zero.
    pub fn inverse_norm(&self) -> f64 {
        1.0 / (self.sigma_min_sq.max(0.0) + self.eps * self.eps)
    }

    /// `ρ = 1 − ε² [Γ_ε⁻¹]₀₀`.
    pub fn rho(&self) -> f64 {
        1.0 - self.eps * self.eps * self.x[0]
    }

    /// First-order rate `g₀ ρ` of the objective along the flow.
    pub fn first_order_rate(&self) -> f64 {
        self.g0 * self.rho()
    }

    /// Drift rates `−ε² g₀ [Γ_ε⁻¹]_{m0}` of the constraints `m = 1..M`.
    pub fn drift_rates(&self) -> Vec<f64> {
        let e2 = self.eps * self.eps;
        self.x[1..].iter().map(|xm| -e2 * self.g0 * xm).collect()
    }
}

/// Shifts `gamma` by `eps²`, records its spectrum and solves `Γ_ε x = e₀`.
///
/// A failed factorisation is reported as [`Error::GramFactorisation`]
/// together with the smallest eigenvalue of `gamma`.
pub fn regularize_and_diagnose(gamma: &SpdMatrix, eps: f64) -> Result<GramData> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "eps must be finite and >= 0, got {eps}"
        )));
    }
    let dim = gamma.dim();
    if dim == 0 {
        return Err(Error::Shape("Gram matrix is empty".into()));
    }
    let e2 = eps * eps;
    let gamma_eps = gamma.shifted(e2);
    let eigenvalues = symmetric_eig(gamma).values;
    let sigma_min_sq = eigenvalues[0];
    let sigma_max_sq = eigenvalues[dim - 1];
    let cond = (sigma_max_sq + e2) / (sigma_min_sq.max(0.0) + e2);
    let mut e0 = vec![0.0; dim];
    e0[0] = 1.0;
    let x = spd_solve(&gamma_eps, &e0).map_err(|err| match err {
        Error::NotPositiveDefinite { pivot, .. } => Error::GramFactorisation {
            pivot,
            sigma_min_sq,
        },
        other => other,
    })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::GramFactorisation {
            pivot: 0,
            sigma_min_sq,
        });
    }
    Ok(GramData {
        gamma: gamma.clone(),
        eps,
        gamma_eps,
        eigenvalues,
        sigma_min_sq,
        sigma_max_sq,
        cond,
        g0: gamma[(0, 0)],
        x,
    })
}

/// Outcome of checking the inverse-diagonal and Cauchy–Schwarz bounds on
/// random regularised Gram matrices. Margins are relative; negative means
/// the bound was exceeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub trials: usize,
    pub dim: usize,
    pub violations: usize,
    pub worst_lower_margin: f64,
    pub worst_upper_margin: f64,
    pub worst_cauchy_schwarz_margin: f64,
}

/// Tolerance on relative margins before a bound counts as violated.
pub const LEMMA_SLACK: f64 = 1e-12;

/// Checks the bounds on a single matrix, folding margins into `report`.
pub fn check_inverse_bounds(gamma: &SpdMatrix, eps: f64, report: &mut LemmaReport) -> Result<()> {
    let e2 = eps * eps;
    let inv = spd_inverse(&gamma.shifted(e2))?;
    let sigma_min_sq = symmetric_eig(gamma).values[0].max(0.0);
    let n = gamma.dim();
    let mut violated = false;
    for k in 0..n {
        let lower = 1.0 / (gamma[(k, k)] + e2);
        let upper = 1.0 / (sigma_min_sq + e2);
        let lo = (inv[(k, k)] - lower) / lower;
        let up = (upper - inv[(k, k)]) / upper;
        report.worst_lower_margin = report.worst_lower_margin.min(lo);
        report.worst_upper_margin = report.worst_upper_margin.min(up);
        violated |= lo < -LEMMA_SLACK || up < -LEMMA_SLACK;
        for j in 0..n {
            if j == k {
                continue;
            }
            let bound = (inv[(k, k)] * inv[(j, j)]).sqrt();
            let cs = (bound - inv[(k, j)].abs()) / bound;
            report.worst_cauchy_schwarz_margin = report.worst_cauchy_schwarz_margin.min(cs);
            violated |= cs < -LEMMA_SLACK;
        }
    }
    if violated {
        report.violations += 1;
    }
    report.trials += 1;
    Ok(())
}

/// Random symmetric positive definite matrix with eigenvalues spread over a
/// few decades.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> SpdMatrix {
    let b: Vec<Vec<f64>> = (0..dim)
        .map(|_| {
            let scale = 10f64.powf(rng.random_range(-2.0..2.0));
            (0..dim)
                .map(|_| scale * rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let shift = 10f64.powf(rng.random_range(-3.0..0.0));
    let mut m = SpdMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let v: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>()
                + if i == j { shift } else { 0.0 };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Random symmetric positive definite matrix `Q diag(λ) Qᵀ` with `Q`
/// orthogonal and `λ` log-uniform over `decades` decades below an overall
/// random scale, so `cond ≤ 10^decades`.
pub fn random_spd_bounded(rng: &mut ChaCha8Rng, dim: usize, decades: f64) -> SpdMatrix {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while q.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    let lambda: Vec<f64> = (0..dim)
        .map(|_| scale * 10f64.powf(-rng.random_range(0.0..decades)))
        .collect();
    let mut m = SpdMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let v: f64 = (0..dim).map(|k| lambda[k] * q[k][i] * q[k][j]).sum();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Runs the inverse-bound checks on `n_trials` random matrices with random
/// `ε ∈ [1e-4, 10]`.
pub fn lemma_suite(n_trials: usize, dim: usize, seed: u64) -> Result<LemmaReport> {
    if n_trials == 0 || dim == 0 {
        return Err(Error::InvalidParameter(
            "lemma suite needs n_trials >= 1 and dim >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LemmaReport {
        trials: 0,
        dim,
        violations: 0,
        worst_lower_margin: f64::INFINITY,
        worst_upper_margin: f64::INFINITY,
        worst_cauchy_schwarz_margin: f64::INFINITY,
    };
    for _ in 0..n_trials {
        let gamma = random_spd(&mut rng, dim);
        let eps = 10f64.powf(rng.random_range(-4.0..1.0));
        check_inverse_bounds(&gamma, eps, &mut report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn grid() -> TimeGrid {
        TimeGrid::new(-4.0, 4.0, 801).unwrap()
    }

    #[test]
    fn envelope_shape() {
        let env = build_envelope(&grid(), 1.0).unwrap();
        let s = env.samples();
        assert_eq!(s[400], 1.0);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[800], 0.0);
        for k in 0..801 {
            assert_eq!(s[k], s[800 - k]);
        }
        let raw = gaussian(&grid(), 1.0);
        assert_relative_eq!(raw[0], 3.3546262790251185e-4, max_relative = 1e-12);
        assert!(build_envelope(&grid(), 0.0).is_err());
    }

    #[test]
    fn envelope_even_grid_is_normalised() {
        let g = TimeGrid::new(-4.0, 4.0, 800).unwrap();
        let env = build_envelope(&g, 1.0).unwrap();
        let max = env.samples().iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn assemble_examples() {
        let g = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let env = Envelope::from_samples(g.clone(), vec![1.0, 1.0, 1.0], 1.0).unwrap();
        let c0 = vec![5f64.sqrt(); 3];
        let gamma = assemble(&env, &[c0]).unwrap();
        assert_relative_eq!(gamma[(0, 0)], 5.0, max_relative = 1e-14);

        // orthonormal pair under the trapezoid weights (1/4, 1/2, 1/4)
        let a = vec![2.0, 0.0, 0.0];
        let b = vec![0.0, 2f64.sqrt(), 0.0];
        let gamma = assemble(&env, &[a, b]).unwrap();
        let rows = gamma.rows();
        assert_relative_eq!(rows[0][0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(rows[1][1], 1.0, max_relative = 1e-15);
        assert_eq!(rows[0][1], 0.0);
        assert!(assemble(&env, &[vec![1.0; 4]]).is_err());
    }

    #[test]
    fn diagonal_regularisation() {
        let gd = regularize_and_diagnose(&SpdMatrix::diag(&[4.0, 1.0]), 1.0).unwrap();
        assert_eq!(gd.shifted_eigenvalues(), vec![2.0, 5.0]);
        assert_eq!(gd.cond, 2.5);
        assert_eq!(gd.inverse_norm(), 0.5);
        assert_relative_eq!(gd.x[0], 0.2, max_relative = 1e-15);
        assert_eq!(gd.x[1], 0.0);
        assert_eq!(gd.g0, 4.0);
    }

    #[test]
    fn large_eps_conditions_to_one() {
        let gamma = SpdMatrix::diag(&[9.0, 1.0]);
        for eps in [1e2, 1e3, 1e4] {
            let gd = regularize_and_diagnose(&gamma, eps).unwrap();
            assert!(gd.cond - 1.0 <= 9.0 / (eps * eps));
        }
    }

    #[test]
    fn singular_gamma_fails_without_regularisation() {
        let gamma = SpdMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        match regularize_and_diagnose(&gamma, 0.0) {
            Err(Error::GramFactorisation {
                pivot,
                sigma_min_sq,
            }) => {
                assert_eq!(pivot, 1);
                assert!(sigma_min_sq.abs() < 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
        let gd = regularize_and_diagnose(&gamma, 1e-3).unwrap();
        assert!(gd.x.iter().all(|v| v.is_finite()));
        assert!(regularize_and_diagnose(&gamma, -1.0).is_err());
    }

    #[test]
    fn lemma_examples() {
        let mut r = LemmaReport {
            trials: 0,
            dim: 2,
            violations: 0,
            worst_lower_margin: f64::INFINITY,
            worst_upper_margin: f64::INFINITY,
            worst_cauchy_schwarz_margin: f64::INFINITY,
        };
        check_inverse_bounds(&SpdMatrix::identity(2), 1.0, &mut r).unwrap();
        assert_eq!(r.worst_lower_margin, 0.0);
        assert_eq!(r.worst_upper_margin, 0.0);
        check_inverse_bounds(&SpdMatrix::diag(&[4.0, 1.0]), 0.0, &mut r).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.worst_lower_margin, 0.0);
    }

    #[test]
    fn lemma_suite_random() {
        let r = lemma_suite(1000, 4, 7).unwrap();
        assert_eq!(r.trials, 1000);
        assert_eq!(r.violations, 0);
        assert!(r.worst_lower_margin >= -LEMMA_SLACK);
        assert!(r.worst_upper_margin >= -LEMMA_SLACK);
        assert!(r.worst_cauchy_schwarz_margin >= -LEMMA_SLACK);
        assert!(lemma_suite(0, 4, 7).is_err());
    }

    proptest! {
        #[test]
        fn spectral_shift_identity(seed in 0u64..10_000, dim in 1usize..6, log_eps in -8.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gamma = random_spd(&mut rng, dim);
            let eps = 10f64.powf(log_eps);
            let gd = regularize_and_diagnose(&gamma, eps).unwrap();
            // exact entrywise shift
            for i in 0..dim {
                for j in 0..dim {
                    let expect = gamma[(i, j)] + if i == j { eps * eps } else { 0.0 };
                    prop_assert_eq!(gd.gamma_eps[(i, j)], expect);
                }
            }
            let measured = symmetric_eig(&gd.gamma_eps).values;
            let scale = gd.sigma_max_sq + eps * eps;
            for (m, s) in measured.iter().zip(gd.shifted_eigenvalues()) {
                prop_assert!((m - s).abs() <= 1e-12 * scale, "{} vs {}", m, s);
            }
            let inv = spd_inverse(&gd.gamma_eps).unwrap();
            let inv_norm = symmetric_eig(&inv).values[dim - 1];
            prop_assert!((inv_norm * (gd.sigma_min_sq + eps * eps) - 1.0).abs() < 1e-10);
            prop_assert!(gd.g0 >= 0.0);
            prop_assert!(gd.rho() >= -1e-12 && gd.rho() <= 1.0 + 1e-12);
        }

        #[test]
        fn cond_decreases_with_eps(seed in 0u64..10_000, a in -6.0f64..0.0, b in 0.01f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gamma = random_spd(&mut rng, 3);
            let e1 = 10f64.powf(a);
            let e2 = e1 * (1.0 + b);
            let c1 = regularize_and_diagnose(&gamma, e1).unwrap().cond;
            let c2 = regularize_and_diagnose(&gamma, e2).unwrap().cond;
            prop_assert!(c2 < c1);
        }

        #[test]
        fn assembled_gram_is_symmetric_psd(seed in 0u64..10_000, m in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = TimeGrid::new(0.0, 1.0, 64).unwrap();
            let env = build_envelope(&g, 0.2).unwrap();
            let grads: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let gamma = assemble(&env, &grads).unwrap();
            for i in 0..m {
                for j in 0..m {
                    prop_assert_eq!(gamma[(i, j)].to_bits(), gamma[(j, i)].to_bits());
                }
            }
            let ev = symmetric_eig(&gamma).values;
            prop_assert!(ev[0] >= -1e-12 * ev[m - 1].abs().max(1.0));
        }
    }
}
