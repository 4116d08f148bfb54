//! Scripted sweeps over the benchmark and a small well-conditioned
//! synthetic problem, emitting plot-ready tables.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::{violation, Constraint, ConstraintSet};
use crate::error::{Error, Result};
use crate::flow::{run, FlowLog, FlowOptions, StepPolicy, TerminationReason};
use crate::gram::{
    build_envelope, lemma_suite, random_spd_bounded, regularize_and_diagnose, Envelope,
};
use crate::model::{build_benchmark, ControlField, QuantumSystem, TimeGrid};
use crate::numkit::{symmetric_eig, trapezoid_triple, HermitianMatrix};

/// Version tag written into every table.
pub const TABLE_SCHEMA: &str = "gramflow-table/1";

/// Grid resolution and iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub n_points: usize,
    pub max_iter: usize,
}

impl Scale {
    pub const DESK: Scale = Scale {
        n_points: 1000,
        max_iter: 100,
    };
    pub const FULL: Scale = Scale {
        n_points: 4000,
        max_iter: 500,
    };
}

/// Nominal step and reduction settings shared by the benchmark runs.
pub const NOMINAL_DS: f64 = 1e-6;
pub const HALVING_FACTOR: f64 = 0.1;
pub const MIN_DS: f64 = 1e-14;

pub fn halving(ds: f64) -> StepPolicy {
    StepPolicy::HalvingOnDecrease {
        ds,
        factor: HALVING_FACTOR,
        min_ds: MIN_DS.min(ds),
    }
}

/// A control problem ready for [`run`].
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: QuantumSystem,
    pub constraints: ConstraintSet,
    pub envelope: Envelope,
    pub initial_field: ControlField,
}

impl Problem {
    pub fn benchmark(tau_fs: f64, n_points: usize) -> Result<Self> {
        let b = build_benchmark(tau_fs, n_points)?;
        Ok(Self {
            constraints: b.constraints(),
            envelope: b.envelope(),
            initial_field: b.initial_field.clone(),
            system: b.system,
        })
    }

    /// Two-level problem with O(1) scales: `H₀ = diag(−½, ½)`, `μ = σₓ`,
    /// transfer `|0⟩ → |1⟩` on `[0, 20]`. The two affine kernels (a constant
    /// and a linear ramp) are orthonormalised in the envelope-weighted inner
    /// product, so the Gram matrix stays well conditioned. `with_fluence`
    /// appends a fluence constraint.
    pub fn synthetic(with_fluence: bool) -> Result<Self> {
        let grid = TimeGrid::new(0.0, 20.0, 401)?;
        let tau = 2.5;
        let envelope = build_envelope(&grid, tau)?;
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let system = QuantumSystem::new(
            HermitianMatrix::diag(&[-0.5, 0.5]),
            HermitianMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])?,
            vec![one, zero],
            vec![zero, one],
        )?;
        let amp = std::f64::consts::FRAC_PI_2 / ((2.0 * std::f64::consts::PI).sqrt() * tau);
        let initial_field = ControlField::from_fn(grid.clone(), |t| {
            amp * (-(t - 10.0) * (t - 10.0) / (2.0 * tau * tau)).exp() * t.cos()
        })?;

        let dt = grid.dt();
        let s = envelope.samples();
        let weighted = |a: &[f64], b: &[f64]| trapezoid_triple(s, a, b, dt);
        let mut kernels: Vec<Vec<f64>> = vec![
            vec![1.0; grid.n_points()],
            grid.times().iter().map(|t| t - 10.0).collect(),
        ];
        for i in 0..kernels.len() {
            for j in 0..i {
                let proj = weighted(&kernels[i], &kernels[j]);
                let (head, tail) = kernels.split_at_mut(i);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= proj * y;
                }
            }
            let norm = weighted(&kernels[i], &kernels[i]).sqrt();
            kernels[i].iter_mut().for_each(|x| *x /= norm);
        }
        let mut items = Vec::new();
        for (label, kernel) in ["level", "ramp"].into_iter().zip(kernels) {
            let target = crate::constraints::evaluate(
                &Constraint::affine(label, kernel.clone(), 0.0),
                &initial_field,
            )?;
            items.push(Constraint::affine(label, kernel, target));
        }
        if with_fluence {
            items.push(Constraint::fluence(
                initial_field.inner(initial_field.samples()),
            ));
        }
        Ok(Self {
            system,
            constraints: ConstraintSet::new(items)?,
            envelope,
            initial_field,
        })
    }

    pub fn run(&self, options: &FlowOptions) -> Result<FlowLog> {
        run(
            &self.system,
            &self.constraints,
            &self.envelope,
            &self.initial_field,
            options,
        )
    }

    /// Index of the fluence constraint, if any.
    pub fn fluence_index(&self) -> Option<usize> {
        self.constraints.iter().position(|c| !c.is_affine())
    }
}

/// Short hex digest of the JSON form of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialise");
    let digest = Sha256::digest(&json);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Numeric table; every written row ends with the producing config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub experiment: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(experiment: &str, columns: &[&str]) -> Self {
        Self {
            experiment: experiment.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W, hash: &str) -> Result<()> {
        writeln!(w, "# schema {TABLE_SCHEMA}")?;
        writeln!(w, "# experiment {}", self.experiment)?;
        writeln!(w, "# config {hash}")?;
        writeln!(w, "{},config_hash", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{hash}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, hash: &str) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, hash)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Iterate-by-iterate diagnostics of an unregularised benchmark run.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub tau_fs: f64,
    pub log: FlowLog,
    /// Columns `k, J, fluence_rel_drift, abs_h1, cond`.
    pub table: Table,
}

impl BaselineResult {
    pub fn max_cond(&self) -> f64 {
        self.table
            .column("cond")
            .unwrap()
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn min_cond(&self) -> f64 {
        self.table
            .column("cond")
            .unwrap()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute violation of the affine constraints over all iterates.
    pub fn max_affine_violation(&self, constraints: &ConstraintSet) -> f64 {
        let mut worst = 0.0f64;
        for r in self.log.accepted() {
            for (c, h) in constraints.iter().zip(&r.constraint_values) {
                if c.is_affine() {
                    worst = worst.max((h - c.target).abs());
                }
            }
        }
        worst
    }

    pub fn final_fluence_drift(&self) -> f64 {
        *self
            .table
            .column("fluence_rel_drift")
            .unwrap()
            .last()
            .unwrap()
    }
}

/// Unregularised benchmark run with the nominal step-reduction policy.
pub fn baseline_run(tau_fs: f64, scale: Scale) -> Result<BaselineResult> {
    let problem = Problem::benchmark(tau_fs, scale.n_points)?;
    let options = FlowOptions::new(0.0, halving(NOMINAL_DS)).with_max_iter(scale.max_iter);
    let log = problem.run(&options)?;
    let fl = problem
        .fluence_index()
        .expect("benchmark has a fluence constraint");
    let c2 = problem.constraints.get(fl).unwrap().target;
    let mut table = Table::new(
        "baseline",
        &["k", "J", "fluence_rel_drift", "abs_h1", "cond"],
    );
    for r in log.accepted() {
        table.push(vec![
            r.k as f64,
            r.j,
            (r.constraint_values[fl] - c2) / c2,
            r.constraint_values[0].abs(),
            r.cond,
        ]);
    }
    Ok(BaselineResult { tau_fs, log, table })
}

/// Parameters of an ε-sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub taus: Vec<f64>,
    /// Must contain 0 for the convergence sweep (the reference run).
    pub eps: Vec<f64>,
    pub ds: Vec<f64>,
    /// Common number of accepted steps; with a fixed step this fixes the
    /// common flow time `s* = iterations·Δs`.
    pub iterations: usize,
    pub seed: u64,
    pub n_points: Option<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.eps.is_empty() || self.ds.is_empty() {
            return Err(Error::InvalidParameter(
                "sweep lists must be nonempty".into(),
            ));
        }
        if self.eps.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidParameter(
                "sweep eps values must be >= 0".into(),
            ));
        }
        if self.ds.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidParameter(
                "sweep steps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `count` log-spaced values from `10^lo` to `10^hi` preceded by 0.
    pub fn log_eps(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        let mut eps = vec![0.0];
        for i in 0..count {
            let e = lo + (hi - lo) * i as f64 / (count - 1).max(1) as f64;
            eps.push(10f64.powf(e));
        }
        eps
    }

    /// Benchmark ε-sweep at τ = 250 fs over ten decades.
    pub fn benchmark_default(scale: Scale) -> Self {
        Self {
            taus: vec![250.0],
            eps: Self::log_eps(-10.0, 0.0, 21),
            ds: vec![1e-8],
            iterations: 50,
            seed: 0,
            n_points: Some(scale.n_points),
        }
    }

    /// Conditioning sweep at τ = 250 fs, from the plateau to `cond ≈ 1`.
    pub fn cond_drift_default(scale: Scale) -> Self {
        Self {
            taus: vec![250.0],
            eps: Self::log_eps(-8.0, 4.0, 25),
            ds: vec![1e-8],
            iterations: 50,
            seed: 0,
            n_points: Some(scale.n_points),
        }
    }

    /// Step by ε grid of the payoff table.
    pub fn payoff_default(scale: Scale) -> Self {
        Self {
            taus: vec![250.0],
            eps: vec![0.0, 1e-4, 1e-3, 1e-2],
            ds: vec![1e-6, 5e-6, 1e-5, 5e-5, 1e-4],
            iterations: scale.max_iter,
            seed: 0,
            n_points: Some(scale.n_points),
        }
    }

    /// Sweep for the synthetic problem.
    pub fn synthetic_default() -> Self {
        Self {
            taus: vec![0.0],
            eps: Self::log_eps(-7.0, 0.0, 15),
            ds: vec![0.005],
            iterations: 50,
            seed: 0,
            n_points: None,
        }
    }
}

/// Fit windows in ε where the distance is expected to scale as ε².
pub const SYNTHETIC_SLOPE_WINDOW: (f64, f64) = (1e-6, 1e-2);
pub const BENCHMARK_SLOPE_WINDOW: (f64, f64) = (1e-8, 1e-4);

/// Window over which the maximum condition number falls as ε⁻² on the
/// benchmark.
pub const COND_SLOPE_WINDOW: (f64, f64) = (1e-2, 10.0);

/// Least-squares slope of `log10 distance` against `log10 ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub eps: Vec<f64>,
    pub distances: Vec<f64>,
    /// ε values whose run decreased the objective (excluded from the fit).
    pub flagged: Vec<f64>,
    pub window: (f64, f64),
    pub points_in_window: usize,
    pub slope: f64,
    pub intercept: f64,
}

/// Fits `log10 y = slope·log10 x + intercept` over `x ∈ [lo, hi]`.
pub fn fit_slope(xs: &[f64], ys: &[f64], window: (f64, f64)) -> Result<(f64, f64, usize)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x >= window.0 && **x <= window.1 && **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "slope window [{:e}, {:e}] holds {} points, need at least 4",
            window.0,
            window.1,
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx, pts.len()))
}

/// Runs every ε with the same fixed step and iteration count and measures
/// the relative `L²` distance of the final field to the ε = 0 run.
pub fn convergence_sweep(
    problem: &Problem,
    spec: &SweepSpec,
    window: (f64, f64),
) -> Result<SlopeFit> {
    spec.validate()?;
    if !spec.eps.contains(&0.0) {
        return Err(Error::InvalidParameter(
            "convergence sweep needs eps = 0 as reference".into(),
        ));
    }
    let ds = spec.ds[0];
    let options = |eps| {
        FlowOptions::new(eps, StepPolicy::Fixed { ds })
            .with_max_iter(spec.iterations)
            .with_tolerance(0.0)
    };
    let logs: Vec<(f64, FlowLog)> = spec
        .eps
        .par_iter()
        .map(|&eps| problem.run(&options(eps)).map(|log| (eps, log)))
        .collect::<Result<_>>()?;
    let reference = &logs.iter().find(|(e, _)| *e == 0.0).unwrap().1;
    let ref_steps: Vec<f64> = reference.accepted().map(|r| r.dt_step).collect();
    let mut eps_out = Vec::new();
    let mut distances = Vec::new();
    let mut flagged = Vec::new();
    for (eps, log) in &logs {
        if *eps == 0.0 {
            continue;
        }
        let steps: Vec<f64> = log.accepted().map(|r| r.dt_step).collect();
        if steps != ref_steps {
            return Err(Error::InvalidParameter(format!(
                "run at eps {eps:e} did not share the reference step sequence"
            )));
        }
        if log.decreases() > 0 || log.termination != TerminationReason::MaxIterations {
            flagged.push(*eps);
            continue;
        }
        eps_out.push(*eps);
        distances.push(
            log.terminal_field
                .relative_distance(&reference.terminal_field),
        );
    }
    let (slope, intercept, points_in_window) = fit_slope(&eps_out, &distances, window)?;
    Ok(SlopeFit {
        eps: eps_out,
        distances,
        flagged,
        window,
        points_in_window,
        slope,
        intercept,
    })
}

impl SlopeFit {
    pub fn table(&self) -> Table {
        let mut t = Table::new("converge", &["eps", "distance"]);
        for (e, d) in self.eps.iter().zip(&self.distances) {
            t.push(vec![*e, *d]);
        }
        t
    }
}

/// Per-ε maximum of `cond(Γ_ε)` over the run and terminal relative fluence
/// drift. Columns `eps, max_cond, fluence_rel_drift, final_J`.
pub fn cond_drift_sweep(
    problem: &Problem,
    eps: &[f64],
    policy: &StepPolicy,
    max_iter: usize,
) -> Result<Table> {
    let fl = problem.fluence_index();
    let rows: Vec<Vec<f64>> = eps
        .par_iter()
        .map(|&e| {
            let log = problem.run(&FlowOptions::new(e, policy.clone()).with_max_iter(max_iter))?;
            let max_cond = log.accepted().map(|r| r.cond).fold(0.0, f64::max);
            let drift = match fl {
                Some(i) => {
                    violation(&problem.constraints, &log.terminal_field)?[i]
                        / problem.constraints.get(i).unwrap().target
                }
                None => f64::NAN,
            };
            Ok(vec![e, max_cond, drift, log.final_j()])
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(
        "cond-drift",
        &["eps", "max_cond", "fluence_rel_drift", "final_J"],
    );
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffCell {
    pub ds: f64,
    pub eps: f64,
    /// Accepted steps to first reach `J ≥ 0.99`.
    pub iterations_to_target: Option<usize>,
    pub rejections: usize,
    pub fluence_rel_drift: f64,
    pub final_j: f64,
    pub breakdown: bool,
    pub termination: TerminationReason,
}

/// Fidelity the payoff table counts iterations to.
pub const PAYOFF_TARGET: f64 = 0.99;
/// Drop below the initial objective that counts as a breakdown.
pub const BREAKDOWN_DROP: f64 = 0.01;

/// A run breaks down when any attempted iterate falls more than
/// [`BREAKDOWN_DROP`] below the initial objective or is non-finite, or the
/// run ends without a usable step.
pub fn is_breakdown(log: &FlowLog) -> bool {
    let j0 = log.initial_j();
    log.termination.is_breakdown()
        || log
            .records
            .iter()
            .any(|r| !r.j.is_finite() || r.j < j0 - BREAKDOWN_DROP)
}

/// Step-size by ε grid of step-reduction runs.
pub fn payoff_matrix(
    problem: &Problem,
    ds: &[f64],
    eps: &[f64],
    max_iter: usize,
) -> Result<Vec<PayoffCell>> {
    let fl = problem
        .fluence_index()
        .ok_or_else(|| Error::InvalidParameter("payoff needs a fluence constraint".into()))?;
    let c2 = problem.constraints.get(fl).unwrap().target;
    let cells: Vec<(f64, f64)> = ds
        .iter()
        .flat_map(|&d| eps.iter().map(move |&e| (d, e)))
        .collect();
    cells
        .par_iter()
        .map(|&(d, e)| {
            let log = problem.run(&FlowOptions::new(e, halving(d)).with_max_iter(max_iter))?;
            let h = violation(&problem.constraints, &log.terminal_field)?;
            Ok(PayoffCell {
                ds: d,
                eps: e,
                iterations_to_target: log.steps_to_reach(PAYOFF_TARGET),
                rejections: log.total_rejections(),
                fluence_rel_drift: h[fl] / c2,
                final_j: log.final_j(),
                breakdown: is_breakdown(&log),
                termination: log.termination,
            })
        })
        .collect()
}

pub fn payoff_table(cells: &[PayoffCell]) -> Table {
    let mut t = Table::new(
        "payoff",
        &[
            "ds",
            "eps",
            "iterations_to_target",
            "rejections",
            "fluence_rel_drift",
            "final_J",
            "breakdown",
        ],
    );
    for c in cells {
        t.push(vec![
            c.ds,
            c.eps,
            c.iterations_to_target.map_or(f64::NAN, |i| i as f64),
            c.rejections as f64,
            c.fluence_rel_drift,
            c.final_j,
            f64::from(u8::from(c.breakdown)),
        ]);
    }
    t
}

/// Measured-minus-predicted drift of one constraint after a fixed number of
/// steps at `ds` and at `ds/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftScaling {
    pub eps: f64,
    pub ds: f64,
    pub steps: usize,
    pub measured: [f64; 2],
    pub predicted: [f64; 2],
    pub residual: [f64; 2],
    /// `residual(ds) / residual(ds/2)`; 4 for a pure `Δs²` term.
    pub ratio: f64,
}

pub fn drift_scaling(
    problem: &Problem,
    constraint: usize,
    eps: f64,
    ds: f64,
    steps: usize,
) -> Result<DriftScaling> {
    let mut measured = [0.0; 2];
    let mut predicted = [0.0; 2];
    let mut residual = [0.0; 2];
    for (i, step) in [ds, 0.5 * ds].into_iter().enumerate() {
        let log = problem.run(
            &FlowOptions::new(eps, StepPolicy::Fixed { ds: step })
                .with_max_iter(steps)
                .with_tolerance(0.0),
        )?;
        if log.steps() != steps {
            return Err(Error::InvalidParameter(format!(
                "drift run stopped after {} of {steps} steps ({})",
                log.steps(),
                log.termination.as_str()
            )));
        }
        let rep = crate::flow::drift_report(&log, &problem.constraints)?;
        measured[i] = rep[constraint].measured;
        predicted[i] = rep[constraint].predicted;
        residual[i] = rep[constraint].residual;
    }
    Ok(DriftScaling {
        eps,
        ds,
        steps,
        measured,
        predicted,
        residual,
        ratio: residual[0] / residual[1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<CheckResult>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

/// Worst relative gap between the measured spectrum of `Γ + ε²I` and the
/// shifted spectrum of `Γ`, over random matrices and `ε ∈ {1e-8, …, 1}`.
///
/// Rounding `Γ + ε²I` already perturbs eigenvalues by about `u·‖Γ‖`, so the
/// matrices have `cond(Γ) ≤ 10³` to keep that floor below `1e-12` relative.
pub fn spectral_shift_check(trials: usize, dim: usize, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let gamma = random_spd_bounded(&mut rng, dim, 3.0);
        for p in -8..=0 {
            let eps = 10f64.powi(p);
            let gd = regularize_and_diagnose(&gamma, eps)?;
            let measured = symmetric_eig(&gd.gamma_eps).values;
            for (m, s) in measured.iter().zip(gd.shifted_eigenvalues()) {
                worst = worst.max((m - s).abs() / s.abs());
            }
        }
    }
    Ok(worst)
}

/// Worst relative gap between `∫ c₀ v` and `g₀ ρ` over the accepted
/// iterates of a log, and the smallest `g₀ ρ` seen.
pub fn pairing_defect(log: &FlowLog) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut min_rate = f64::INFINITY;
    for r in log.accepted() {
        let scale = r.dj_firstorder.abs().max(f64::MIN_POSITIVE);
        worst = worst.max((r.pairing - r.dj_firstorder).abs() / scale);
        min_rate = min_rate.min(r.dj_firstorder);
    }
    (worst, min_rate)
}

/// Runs the algebraic identity checks: inverse bounds, spectral shift,
/// first-order pairing and ρ range on benchmark iterates, and zero drift
/// prediction without regularisation.
pub fn identity_suite(seed: u64, trials: usize, scale: Scale) -> Result<IdentityReport> {
    let mut checks = Vec::new();
    let lemma = lemma_suite(trials, 4, seed)?;
    checks.push(CheckResult {
        name: "inverse_bounds".into(),
        passed: lemma.violations == 0,
        detail: format!(
            "{} violations in {} trials; worst margins lower {:.3e} upper {:.3e} cs {:.3e}",
            lemma.violations,
            lemma.trials,
            lemma.worst_lower_margin,
            lemma.worst_upper_margin,
            lemma.worst_cauchy_schwarz_margin
        ),
    });
    let shift = spectral_shift_check(trials, 4, seed.wrapping_add(1))?;
    checks.push(CheckResult {
        name: "spectral_shift".into(),
        passed: shift <= 1e-12,
        detail: format!("worst relative gap {shift:.3e}"),
    });

    let problem = Problem::benchmark(250.0, scale.n_points)?;
    let logs: Vec<(f64, FlowLog)> = [0.0, 1e-2]
        .par_iter()
        .map(|&eps| {
            problem
                .run(&FlowOptions::new(eps, halving(NOMINAL_DS)).with_max_iter(50))
                .map(|l| (eps, l))
        })
        .collect::<Result<_>>()?;
    for (eps, log) in &logs {
        let (defect, min_rate) = pairing_defect(log);
        checks.push(CheckResult {
            name: format!("pairing_eps_{eps:e}"),
            passed: defect <= 1e-10 && min_rate >= -1e-15,
            detail: format!(
                "{} iterates, worst relative defect {defect:.3e}, min rate {min_rate:.3e}",
                log.accepted().count()
            ),
        });
        let rho_ok = log
            .accepted()
            .all(|r| r.rho >= -1e-12 && r.rho <= 1.0 + 1e-12);
        checks.push(CheckResult {
            name: format!("rho_range_eps_{eps:e}"),
            passed: rho_ok,
            detail: "rho within [0, 1] on every iterate".into(),
        });
    }
    let unreg = &logs[0].1;
    let zero_pred = unreg
        .accepted()
        .all(|r| r.drift_pred.iter().all(|&p| p == 0.0));
    checks.push(CheckResult {
        name: "zero_prediction_eps_0".into(),
        passed: zero_pred,
        detail: "predicted drift identically zero without regularisation".into(),
    });
    Ok(IdentityReport {
        seed,
        trials,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slope_fit_recovers_power_law() {
        let xs: Vec<f64> = (0..10).map(|i| 10f64.powf(-5.0 + 0.5 * i as f64)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        let (slope, intercept, n) = fit_slope(&xs, &ys, (1e-5, 1.0)).unwrap();
        assert_relative_eq!(slope, 2.0, max_relative = 1e-12);
        assert_relative_eq!(intercept, 3f64.log10(), max_relative = 1e-10);
        assert_eq!(n, 10);
        assert!(fit_slope(&xs, &ys, (1e-5, 1e-4)).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = SweepSpec::synthetic_default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 12);
    }

    #[test]
    fn table_rows_carry_hash() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![1.0, 2.5]);
        let csv = t.to_csv_string("h1");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], format!("# schema {TABLE_SCHEMA}"));
        assert_eq!(lines[3], "a,b,config_hash");
        assert_eq!(lines[4], "1,2.5,h1");
    }

    #[test]
    fn synthetic_problem_is_well_conditioned() {
        let p = Problem::synthetic(false).unwrap();
        assert!(p.constraints.contains(&p.initial_field, 1e-12).unwrap());
        let log = p
            .run(&FlowOptions::new(0.0, StepPolicy::Fixed { ds: 0.05 }).with_max_iter(0))
            .unwrap();
        let r = &log.records[0];
        assert!(r.cond < 1e3, "cond {}", r.cond);
        assert!(r.j > 0.05 && r.j < 0.95, "J {}", r.j);
    }

    #[test]
    fn sweep_spec_validation() {
        let mut s = SweepSpec::synthetic_default();
        assert!(s.validate().is_ok());
        s.eps.push(-1.0);
        assert!(s.validate().is_err());
        assert_eq!(SweepSpec::log_eps(-2.0, 0.0, 3), vec![0.0, 0.01, 0.1, 1.0]);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let p = Problem::synthetic(true).unwrap();
        let eps = [0.0, 0.1];
        let a = cond_drift_sweep(&p, &eps, &StepPolicy::Fixed { ds: 0.05 }, 5).unwrap();
        let b = cond_drift_sweep(&p, &eps, &StepPolicy::Fixed { ds: 0.05 }, 5).unwrap();
        assert_eq!(a.to_csv_string("h"), b.to_csv_string("h"));
    }
}
