//! The bilinear control problem `i ψ' = (H₀ − μ E(t)) ψ`, its terminal
//! fidelity and the adjoint-state gradient.
//!
//! Propagation is piecewise constant: the generator on slice
//! `[t_k, t_{k+1}]` uses the left-endpoint sample `E(t_k)` and is
//! exponentiated exactly through its eigendecomposition. The objective
//! gradient returned by [`objective_gradient`] is the exact derivative of
//! this discrete fidelity, expressed as functional-derivative samples: for
//! every perturbation `δE`,
//!
//! ```text
//! J[E + δE] − J[E] = trapezoid(c₀ · δE) + O(|δE|²)
//! ```
//!
//! It converges to the pointwise costate expression
//! `−2 Im⟨λ(t), μ ψ(t)⟩` ([`costate_gradient`]) as `dt → 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constraints::{Constraint, ConstraintSet};
use crate::error::{Error, Result};
use crate::numkit::{
    hermitian_eig, trapezoid_product, trapezoid_weight, unitary_from_eig, CMatrix, EigPair,
    HermitianMatrix,
};

/// Laboratory-to-atomic unit conversions.
pub mod units {
    /// Wavenumbers per Hartree.
    pub const WAVENUMBERS_PER_HARTREE: f64 = 219_474.631_363_2;
    /// Debye per atomic unit of dipole moment.
    pub const DEBYE_PER_AU: f64 = 2.541_746_473;
    /// Femtoseconds per atomic unit of time.
    pub const FS_PER_AU: f64 = 0.024_188_843_26;

    pub fn wavenumber_to_hartree(cm: f64) -> f64 {
        cm / WAVENUMBERS_PER_HARTREE
    }

    pub fn debye_to_au(d: f64) -> f64 {
        d / DEBYE_PER_AU
    }

    pub fn fs_to_au(fs: f64) -> f64 {
        fs / FS_PER_AU
    }

    pub fn au_to_fs(t: f64) -> f64 {
        t * FS_PER_AU
    }
}

/// Uniform time grid with `n_points >= 2` samples on `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_points: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs at least 2 points, got {n_points}"
            )));
        }
        let dt = (t_end - t_start) / (n_points - 1) as f64;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time grid [{t_start}, {t_end}] has non-positive spacing"
            )));
        }
        Ok(Self {
            t_start,
            t_end,
            n_points,
            dt,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    /// Offset of sample `k` from the grid midpoint; exactly antisymmetric.
    pub fn centred_time(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * (self.n_points - 1) as f64) * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.time(k)).collect()
    }

    pub fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "grids differ: [{}, {}]x{} vs [{}, {}]x{}",
                self.t_start, self.t_end, self.n_points, other.t_start, other.t_end, other.n_points
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n_points {
            return Err(Error::GridMismatch(format!(
                "{what} has {len} samples, grid has {}",
                self.n_points
            )));
        }
        Ok(())
    }
}

/// A real control field sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    grid: TimeGrid,
    samples: Vec<f64>,
}

impl ControlField {
    pub fn new(grid: TimeGrid, samples: Vec<f64>) -> Result<Self> {
        grid.ensure_len(samples.len(), "control field")?;
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "control field contains non-finite samples".into(),
            ));
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        let n = grid.n_points();
        Self {
            grid,
            samples: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples = grid.times().into_iter().map(f).collect();
        Self::new(grid, samples)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|x| x.is_finite())
    }

    /// `self + step * direction`, without the finiteness check so that
    /// blown-up iterates can still be reported.
    pub fn stepped(&self, direction: &[f64], step: f64) -> ControlField {
        debug_assert_eq!(direction.len(), self.samples.len());
        ControlField {
            grid: self.grid.clone(),
            samples: self
                .samples
                .iter()
                .zip(direction)
                .map(|(e, v)| e + step * v)
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> ControlField {
        ControlField {
            grid: self.grid.clone(),
            samples: self.samples.iter().map(|x| x * s).collect(),
        }
    }

    /// Trapezoidal `L²` inner product.
    pub fn inner(&self, other: &[f64]) -> f64 {
        trapezoid_product(&self.samples, other, self.grid.dt())
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(&self.samples).sqrt()
    }

    /// Relative `L²` distance `‖self − other‖ / ‖other‖`.
    pub fn relative_distance(&self, other: &ControlField) -> f64 {
        let diff: Vec<f64> = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a - b)
            .collect();
        let dist = trapezoid_product(&diff, &diff, self.grid.dt()).sqrt();
        dist / other.l2_norm()
    }
}

/// Something the flow can climb: a value and its functional gradient on the
/// trapezoidal inner product.
pub trait Objective: Sync {
    fn value(&self, field: &ControlField) -> Result<f64>;
    fn value_and_gradient(&self, field: &ControlField) -> Result<(f64, Vec<f64>)>;
}

/// Hermitian drift and control operators with boundary states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumSystem {
    h0: HermitianMatrix,
    mu: HermitianMatrix,
    psi0: Vec<Complex64>,
    psif: Vec<Complex64>,
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `⟨a, b⟩ = Σ conj(a_i) b_i`.
pub fn braket(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl QuantumSystem {
    pub fn new(
        h0: HermitianMatrix,
        mu: HermitianMatrix,
        psi0: Vec<Complex64>,
        psif: Vec<Complex64>,
    ) -> Result<Self> {
        let d = h0.dim();
        if d < 2 {
            return Err(Error::Shape(format!(
                "system dimension must be >= 2, got {d}"
            )));
        }
        if mu.dim() != d || psi0.len() != d || psif.len() != d {
            return Err(Error::Shape(format!(
                "inconsistent dimensions: H0 {d}, mu {}, psi0 {}, psif {}",
                mu.dim(),
                psi0.len(),
                psif.len()
            )));
        }
        for (name, v) in [("psi0", &psi0), ("psif", &psif)] {
            let n = vec_norm(v);
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a unit vector, has norm {n}"
                )));
            }
        }
        Ok(Self { h0, mu, psi0, psif })
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn h0(&self) -> &HermitianMatrix {
        &self.h0
    }

    pub fn mu(&self) -> &HermitianMatrix {
        &self.mu
    }

    pub fn psi0(&self) -> &[Complex64] {
        &self.psi0
    }

    pub fn psif(&self) -> &[Complex64] {
        &self.psif
    }

    /// Copy with a rescaled control operator.
    pub fn with_mu_scaled(&self, s: f64) -> Self {
        Self {
            mu: self.mu.scale(s),
            ..self.clone()
        }
    }

    fn slice_generator(&self, e: f64) -> HermitianMatrix {
        self.h0.add_scaled(&self.mu, -e)
    }
}

/// States and cumulative propagators on every grid point.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub states: Vec<Vec<Complex64>>,
    pub propagators: Vec<CMatrix>,
    /// Eigendecomposition of each slice generator `H₀ − μ E(t_k)`,
    /// `k = 0..N−1`.
    slices: Vec<EigPair<Complex64>>,
    dt: f64,
}

impl StateTrajectory {
    pub fn final_state(&self) -> &[Complex64] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_propagator(&self) -> &CMatrix {
        self.propagators.last().expect("trajectory is never empty")
    }

    pub fn slices(&self) -> &[EigPair<Complex64>] {
        &self.slices
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Propagates `U(t_{k+1}) = exp(−i (H₀ − μ E(t_k)) dt) U(t_k)`, `U(t_0) = I`.
pub fn propagate(system: &QuantumSystem, field: &ControlField) -> Result<StateTrajectory> {
    let d = system.dim();
    let n = field.grid().n_points();
    let dt = field.grid().dt();
    let mut propagators = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut slices = Vec::with_capacity(n - 1);
    let mut u = CMatrix::identity(d);
    states.push(system.psi0.clone());
    propagators.push(u.clone());
    for &e in &field.samples()[..n - 1] {
        let eig = hermitian_eig(&system.slice_generator(e));
        let step = unitary_from_eig(&eig, dt);
        u = step.matmul(&u);
        states.push(u.matvec(&system.psi0));
        propagators.push(u.clone());
        slices.push(eig);
    }
    Ok(StateTrajectory {
        states,
        propagators,
        slices,
        dt,
    })
}

/// Terminal fidelity `|⟨ψ_f, U(T) ψ₀⟩|²`.
///
/// Round-off overshoot above 1 of at most `1e-12` is clamped.
pub fn fidelity(system: &QuantumSystem, trajectory: &StateTrajectory) -> f64 {
    let j = braket(&system.psif, trajectory.final_state()).norm_sqr();
    if j > 1.0 && j - 1.0 <= 1e-12 {
        1.0
    } else {
        j
    }
}

/// Costate `λ(t_k) = U(t_k) U(T)* |ψ_f⟩⟨ψ_f| U(T) ψ₀`, reusing the stored
/// propagators.
pub fn costate(system: &QuantumSystem, trajectory: &StateTrajectory) -> Vec<Vec<Complex64>> {
    let overlap = braket(&system.psif, trajectory.final_state());
    let pulled: Vec<Complex64> = trajectory
        .final_propagator()
        .adjoint_matvec(&system.psif)
        .into_iter()
        .map(|z| z * overlap)
        .collect();
    trajectory
        .propagators
        .iter()
        .map(|u| u.matvec(&pulled))
        .collect()
}

/// Pointwise costate expression `−2 Im⟨λ(t_k), μ ψ(t_k)⟩`.
///
/// This is the continuous-time gradient sampled on the grid. It agrees with
/// [`objective_gradient`] only to `O(dt)`; the flow uses the latter.
pub fn costate_gradient(
    system: &QuantumSystem,
    trajectory: &StateTrajectory,
    lambda: &[Vec<Complex64>],
) -> Vec<f64> {
    trajectory
        .states
        .iter()
        .zip(lambda)
        .map(|(psi, lam)| {
            let mu_psi = system.mu.matrix().matvec(psi);
            -2.0 * braket(lam, &mu_psi).im
        })
        .collect()
}

/// Exact gradient of the discrete fidelity as functional-derivative samples.
///
/// Slice `k` contributes `∂J/∂E_k = 2 Re⟨λ(t_{k+1}), (∂P_k/∂E_k) ψ(t_k)⟩`,
/// where the derivative of `P_k = exp(−i A_k dt)` is taken in the
/// eigenbasis of `A_k` (divided differences of the exponential). Samples are
/// divided by the trapezoid weight `dt·w_k`; the last sample does not enter
/// the propagation and its gradient is zero.
pub fn objective_gradient_from(
    system: &QuantumSystem,
    trajectory: &StateTrajectory,
    lambda: &[Vec<Complex64>],
) -> Vec<f64> {
    let d = system.dim();
    let n = trajectory.states.len();
    let dt = trajectory.dt;
    let mut grad = vec![0.0; n];
    for (k, eig) in trajectory.slices.iter().enumerate() {
        let v = eig.vector_matrix();
        let psi_t = v.adjoint_matvec(&trajectory.states[k]);
        let lam_t = v.adjoint_matvec(&lambda[k + 1]);
        let mu_t = v.adjoint().matmul(system.mu.matrix()).matmul(&v);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..d {
            let li = lam_t[i].conj();
            for j in 0..d {
                let half_diff = 0.5 * (eig.values[i] - eig.values[j]) * dt;
                let sinc = if half_diff.abs() < 1e-6 {
                    1.0 - half_diff * half_diff / 6.0
                } else {
                    half_diff.sin() / half_diff
                };
                let mean_phase =
                    Complex64::from_polar(1.0, -0.5 * (eig.values[i] + eig.values[j]) * dt);
                // d/dE of −i(H₀ − μE)dt is +i μ dt
                let deriv = Complex64::new(0.0, dt) * mu_t[(i, j)] * mean_phase * sinc;
                acc += li * deriv * psi_t[j];
            }
        }
        grad[k] = 2.0 * acc.re / (dt * trapezoid_weight(k, n));
    }
    grad
}

/// Propagates and returns the exact discrete gradient of the fidelity.
pub fn objective_gradient(system: &QuantumSystem, field: &ControlField) -> Result<Vec<f64>> {
    let traj = propagate(system, field)?;
    let lambda = costate(system, &traj);
    Ok(objective_gradient_from(system, &traj, &lambda))
}

impl Objective for QuantumSystem {
    fn value(&self, field: &ControlField) -> Result<f64> {
        Ok(fidelity(self, &propagate(self, field)?))
    }

    fn value_and_gradient(&self, field: &ControlField) -> Result<(f64, Vec<f64>)> {
        let traj = propagate(self, field)?;
        let lambda = costate(self, &traj);
        Ok((
            fidelity(self, &traj),
            objective_gradient_from(self, &traj, &lambda),
        ))
    }
}

/// `J[E] = −½ ⟨E, E⟩`: concave with unit curvature, gradient `−E`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticObjective;

impl Objective for QuadraticObjective {
    fn value(&self, field: &ControlField) -> Result<f64> {
        Ok(-0.5 * field.inner(field.samples()))
    }

    fn value_and_gradient(&self, field: &ControlField) -> Result<(f64, Vec<f64>)> {
        Ok((
            self.value(field)?,
            field.samples().iter().map(|x| -x).collect(),
        ))
    }
}

/// Physical parameters of the two-atom Bell-state benchmark, in laboratory
/// units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkParams {
    pub omega0_cm: f64,
    pub vdd_cm: f64,
    pub mu_d_debye: f64,
    pub tau_fs: f64,
    pub theta_sg: f64,
}

impl BenchmarkParams {
    pub const TAU_CHOICES_FS: [f64; 3] = [100.0, 250.0, 400.0];

    pub fn new(tau_fs: f64) -> Self {
        Self {
            omega0_cm: 12578.95,
            vdd_cm: 12.35,
            mu_d_debye: std::f64::consts::SQRT_2 * 7.61,
            tau_fs,
            theta_sg: std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn omega0(&self) -> f64 {
        units::wavenumber_to_hartree(self.omega0_cm)
    }

    pub fn vdd(&self) -> f64 {
        units::wavenumber_to_hartree(self.vdd_cm)
    }

    pub fn mu_d(&self) -> f64 {
        units::debye_to_au(self.mu_d_debye)
    }

    pub fn tau(&self) -> f64 {
        units::fs_to_au(self.tau_fs)
    }

    /// Reference frequency `ω₀/2 + V_dd`.
    pub fn omega_r(&self) -> f64 {
        0.5 * self.omega0() + self.vdd()
    }

    /// Envelope amplitude `A` with `μ_d ∫ A exp(−t²/2τ²) dt = θ_sg`.
    pub fn amplitude(&self) -> f64 {
        self.theta_sg / (self.mu_d() * (2.0 * std::f64::consts::PI).sqrt() * self.tau())
    }
}

/// The assembled benchmark problem.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub params: BenchmarkParams,
    pub system: QuantumSystem,
    pub grid: TimeGrid,
    pub initial_field: ControlField,
    /// Fluence target `h₂[E₀]`.
    pub c2: f64,
    /// Reference-area target `h₃[E₀]`.
    pub c3: f64,
}

impl Benchmark {
    /// Zero area, fluence and reference area, in that order.
    pub fn constraints(&self) -> ConstraintSet {
        let mu_d = self.params.mu_d();
        let omega_r = self.params.omega_r();
        let kernel = self
            .grid
            .times()
            .into_iter()
            .map(|t| mu_d * (omega_r * t).cos())
            .collect();
        ConstraintSet::new(vec![
            Constraint::zero_area(&self.grid),
            Constraint::fluence(self.c2),
            Constraint::affine("reference_area", kernel, self.c3),
        ])
        .expect("benchmark labels are unique")
    }

    /// Gaussian gating envelope with the benchmark width.
    pub fn envelope(&self) -> crate::gram::Envelope {
        crate::gram::build_envelope(&self.grid, self.params.tau())
            .expect("benchmark tau is positive")
    }
}

/// Builds the three-level benchmark on `[−4τ, 4τ]` with `n_points` samples.
///
/// The initial field is the transform-limited Gaussian
/// `A exp(−t²/2τ²) cos(ω_r t)`, with the small area left over by truncating
/// the Gaussian removed along the envelope so that `h₁[E₀] = 0`.
pub fn build_benchmark(tau_fs: f64, n_points: usize) -> Result<Benchmark> {
    if !(tau_fs > 0.0) || !tau_fs.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "pulse duration must be positive, got {tau_fs} fs"
        )));
    }
    let params = BenchmarkParams::new(tau_fs);
    let (w0, vdd, mu_d, tau) = (params.omega0(), params.vdd(), params.mu_d(), params.tau());
    let h0 = HermitianMatrix::diag(&[-0.5 * w0, vdd, 0.5 * w0]);
    let mu = HermitianMatrix::from_real_rows(&[
        vec![0.0, mu_d, 0.0],
        vec![mu_d, 0.0, mu_d],
        vec![0.0, mu_d, 0.0],
    ])?;
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let system = QuantumSystem::new(h0, mu, vec![one, zero, zero], vec![zero, one, zero])?;

    let grid = TimeGrid::new(-4.0 * tau, 4.0 * tau, n_points)?;
    let amp = params.amplitude();
    let omega_r = params.omega_r();
    let gauss: Vec<f64> = (0..n_points)
        .map(|k| {
            let t = grid.centred_time(k);
            (-t * t / (2.0 * tau * tau)).exp()
        })
        .collect();
    let raw: Vec<f64> = (0..n_points)
        .map(|k| amp * gauss[k] * (omega_r * grid.time(k)).cos())
        .collect();
    let ones = vec![1.0; n_points];
    let dt = grid.dt();
    let shift = trapezoid_product(&raw, &ones, dt) / trapezoid_product(&gauss, &ones, dt);
    let samples: Vec<f64> = raw.iter().zip(&gauss).map(|(e, g)| e - shift * g).collect();
    let initial_field = ControlField::new(grid.clone(), samples)?;

    let c2 = initial_field.inner(initial_field.samples());
    let c3 = mu_d
        * (0..n_points)
            .map(|k| {
                trapezoid_weight(k, n_points)
                    * initial_field.samples()[k]
                    * (omega_r * grid.time(k)).cos()
            })
            .sum::<f64>()
        * dt;
    Ok(Benchmark {
        params,
        system,
        grid,
        initial_field,
        c2,
        c3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn two_level(coupling: f64) -> QuantumSystem {
        QuantumSystem::new(
            HermitianMatrix::diag(&[-0.5, 0.5]),
            HermitianMatrix::from_real_rows(&[vec![0.0, coupling], vec![coupling, 0.0]]).unwrap(),
            vec![c(1.0), c(0.0)],
            vec![c(0.0), c(1.0)],
        )
        .unwrap()
    }

    fn random_system(rng: &mut ChaCha8Rng, d: usize) -> QuantumSystem {
        let mut h = CMatrix::zeros(d);
        let mut m = CMatrix::zeros(d);
        for i in 0..d {
            h[(i, i)] = c(rng.random_range(-1.0..1.0));
            for j in i + 1..d {
                let z = Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
                let w = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                m[(i, j)] = w;
                m[(j, i)] = w.conj();
            }
        }
        let mut psi0 = vec![c(0.0); d];
        psi0[0] = c(1.0);
        let mut psif = vec![c(0.0); d];
        psif[d - 1] = c(1.0);
        QuantumSystem::new(
            HermitianMatrix::new(h).unwrap(),
            HermitianMatrix::new(m).unwrap(),
            psi0,
            psif,
        )
        .unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, n: usize, t_end: f64) -> ControlField {
        let grid = TimeGrid::new(0.0, t_end, n).unwrap();
        let samples = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        ControlField::new(grid, samples).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 1.0, 1).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 5).is_err());
        let g = TimeGrid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.centred_time(0), -g.centred_time(4));
    }

    #[test]
    fn drift_only_evolution_is_diagonal_phase() {
        let bench = build_benchmark(250.0, 200).unwrap();
        let field = ControlField::zeros(bench.grid.clone());
        let traj = propagate(&bench.system, &field).unwrap();
        let h = bench.system.h0().matrix();
        for k in [1, 57, 199] {
            let t = k as f64 * bench.grid.dt();
            let u = &traj.propagators[k];
            for i in 0..3 {
                let expect = Complex64::from_polar(1.0, -h[(i, i)].re * t);
                assert!((u[(i, i)] - expect).norm() < 1e-10);
                for j in 0..3 {
                    if i != j {
                        assert_eq!(u[(i, j)].norm(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn propagation_stays_unitary() {
        let bench = build_benchmark(250.0, 4000).unwrap();
        let traj = propagate(&bench.system, &bench.initial_field).unwrap();
        for (psi, u) in traj.states.iter().zip(&traj.propagators) {
            assert!((vec_norm(psi) - 1.0).abs() < 1e-10);
            assert!(u.unitarity_defect() < 1e-10);
        }
    }

    #[test]
    fn time_reversal_recovers_initial_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sys = random_system(&mut rng, 3);
        let field = random_field(&mut rng, 300, 20.0);
        let traj = propagate(&sys, &field).unwrap();
        let mut psi = traj.final_state().to_vec();
        for eig in traj.slices().iter().rev() {
            // exp(+i A dt) undoes exp(−i A dt)
            psi = unitary_from_eig(eig, -traj.dt()).matvec(&psi);
        }
        let err: f64 = psi
            .iter()
            .zip(sys.psi0())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn fidelity_trivial_cases() {
        let mut sys = two_level(1.0);
        sys.psif = sys.psi0.clone();
        let field = ControlField::zeros(TimeGrid::new(0.0, 3.0, 50).unwrap());
        assert_relative_eq!(sys.value(&field).unwrap(), 1.0, epsilon = 1e-14);

        let sys = two_level(0.0);
        let field =
            ControlField::from_fn(TimeGrid::new(0.0, 3.0, 50).unwrap(), |t| t.sin()).unwrap();
        assert_eq!(sys.value(&field).unwrap(), 0.0);
    }

    #[test]
    fn costate_endpoint_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = random_system(&mut rng, 3);
        let field = random_field(&mut rng, 120, 10.0);
        let traj = propagate(&sys, &field).unwrap();
        let lambda = costate(&sys, &traj);
        let overlap = braket(sys.psif(), traj.final_state());
        for (a, b) in lambda.last().unwrap().iter().zip(sys.psif()) {
            assert!((a - b * overlap).norm() < 1e-12);
        }
        for lam in &lambda {
            assert_relative_eq!(vec_norm(lam), overlap.norm(), max_relative = 1e-12);
        }
    }

    #[test]
    fn costate_matches_backward_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sys = random_system(&mut rng, 4);
        let field = random_field(&mut rng, 200, 15.0);
        let traj = propagate(&sys, &field).unwrap();
        let lambda = costate(&sys, &traj);
        let overlap = braket(sys.psif(), traj.final_state());
        let mut back: Vec<Complex64> = sys.psif().iter().map(|z| z * overlap).collect();
        for k in (0..traj.slices().len()).rev() {
            back = unitary_from_eig(&traj.slices()[k], traj.dt()).adjoint_matvec(&back);
            let err: f64 = back
                .iter()
                .zip(&lambda[k])
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-10, "k={k} err={err}");
        }
    }

    #[test]
    fn gradient_vanishes_without_coupling() {
        let sys = two_level(0.0);
        let field =
            ControlField::from_fn(TimeGrid::new(0.0, 5.0, 64).unwrap(), |t| t.cos()).unwrap();
        let g = objective_gradient(&sys, &field).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let sys = random_system(&mut rng, 3);
        let field = random_field(&mut rng, 80, 12.0);
        let (_, grad) = sys.value_and_gradient(&field).unwrap();
        let n = field.grid().n_points();
        let dt = field.grid().dt();
        let h = 1e-6;
        for k in [0, 1, 17, 40, 78] {
            let mut plus = field.samples().to_vec();
            let mut minus = plus.clone();
            plus[k] += h;
            minus[k] -= h;
            let jp = sys
                .value(&ControlField::new(field.grid().clone(), plus).unwrap())
                .unwrap();
            let jm = sys
                .value(&ControlField::new(field.grid().clone(), minus).unwrap())
                .unwrap();
            let fd = (jp - jm) / (2.0 * h * dt * trapezoid_weight(k, n));
            assert_relative_eq!(fd, grad[k], max_relative = 1e-6, epsilon = 1e-9);
        }
        assert_eq!(grad[n - 1], 0.0);
    }

    #[test]
    fn discrete_gradient_converges_to_costate_formula() {
        let sys = two_level(0.4);
        let mut errs = Vec::new();
        for n in [201, 401, 801] {
            let field =
                ControlField::from_fn(TimeGrid::new(0.0, 10.0, n).unwrap(), |t| (1.1 * t).cos())
                    .unwrap();
            let traj = propagate(&sys, &field).unwrap();
            let lambda = costate(&sys, &traj);
            let exact = objective_gradient_from(&sys, &traj, &lambda);
            let pointwise = costate_gradient(&sys, &traj, &lambda);
            let err = (1..n - 1)
                .map(|k| (exact[k] - pointwise[k]).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // first order in dt
        assert!(
            errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8,
            "{errs:?}"
        );
    }

    #[test]
    fn quadratic_objective_gradient() {
        let field = ControlField::from_fn(TimeGrid::new(0.0, 1.0, 11).unwrap(), |t| t).unwrap();
        let (j, g) = QuadraticObjective.value_and_gradient(&field).unwrap();
        assert_relative_eq!(
            j,
            -0.5 * (1.0 / 3.0 + 0.1 * 0.1 / 6.0),
            max_relative = 1e-12
        );
        assert_relative_eq!(g[3], -0.3, max_relative = 1e-15);
    }

    #[test]
    fn benchmark_layout() {
        let b = build_benchmark(250.0, 4000).unwrap();
        let tau = units::fs_to_au(250.0);
        assert_relative_eq!(b.grid.t_start(), -4.0 * tau);
        assert_relative_eq!(b.grid.t_end(), 4.0 * tau);
        assert_relative_eq!(
            units::au_to_fs(b.grid.t_end()),
            1000.0,
            max_relative = 1e-12
        );
        assert_eq!(b.grid.n_points(), 4000);
        let h0 = b.system.h0().matrix();
        assert_relative_eq!(
            h0[(0, 0)].re,
            -12578.95 / 2.0 / 219474.6313632,
            max_relative = 1e-14
        );
        assert_relative_eq!(h0[(1, 1)].re, 12.35 / 219474.6313632, max_relative = 1e-14);
        let mu = b.system.mu().matrix();
        assert_relative_eq!(
            mu[(0, 1)].re,
            2f64.sqrt() * 7.61 / 2.541746473,
            max_relative = 1e-14
        );
        assert_eq!(mu[(0, 2)].re, 0.0);
        assert_relative_eq!(b.params.omega_r(), b.params.omega0() / 2.0 + b.params.vdd());
        assert!(build_benchmark(0.0, 100).is_err());
        assert!(build_benchmark(-5.0, 100).is_err());
    }

    #[test]
    fn benchmark_constraint_targets() {
        let b = build_benchmark(250.0, 4000).unwrap();
        let dt = b.grid.dt();
        let l1: f64 = b
            .initial_field
            .samples()
            .iter()
            .map(|x| x.abs())
            .sum::<f64>()
            * dt;
        let h1 = crate::numkit::trapezoid(b.initial_field.samples(), dt).unwrap();
        assert!(h1.abs() <= 1e-8 * l1, "h1 = {h1}");
        assert_relative_eq!(b.c3, std::f64::consts::FRAC_PI_4, max_relative = 0.01);
        assert!(b.c2 > 0.0);
    }

    /// Splits every slice into `substeps` pieces holding the same sample.
    fn fidelity_substepped(system: &QuantumSystem, field: &ControlField, substeps: usize) -> f64 {
        let dt = field.grid().dt() / substeps as f64;
        let mut psi = system.psi0().to_vec();
        let n = field.grid().n_points();
        for &e in &field.samples()[..n - 1] {
            let step = crate::numkit::matrix_exponential_step(&system.slice_generator(e), dt);
            for _ in 0..substeps {
                psi = step.matvec(&psi);
            }
        }
        braket(system.psif(), &psi).norm_sqr()
    }

    #[test]
    fn benchmark_fidelity_matches_halved_slices() {
        let b = build_benchmark(250.0, 4000).unwrap();
        let j = b.system.value(&b.initial_field).unwrap();
        let reference = fidelity_substepped(&b.system, &b.initial_field, 2);
        assert!((j - reference).abs() < 1e-6, "{j} vs {reference}");
    }

    #[test]
    fn benchmark_fidelity_resampling_is_second_order() {
        let j: Vec<f64> = [2000, 3999, 7997]
            .iter()
            .map(|&n| {
                let b = build_benchmark(250.0, n).unwrap();
                b.system.value(&b.initial_field).unwrap()
            })
            .collect();
        let ratio = (j[0] - j[1]) / (j[1] - j[2]);
        assert!((3.2..4.8).contains(&ratio), "{j:?} ratio {ratio}");
    }
}
