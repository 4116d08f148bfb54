//! Forward-Euler integration of the regularised projected gradient flow.
//!
//! Each iteration evaluates the objective gradient and the constraint
//! gradients at the current field, assembles and regularises the
//! envelope-weighted Gram matrix, solves `Γ_ε x = e₀` and moves along
//! `v = S g₀ Σ_ℓ x_ℓ c_ℓ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::gram::{assemble, regularize_and_diagnose, Envelope, GramData};
use crate::model::{ControlField, Objective};
use crate::numkit::trapezoid_product;

/// Version tag written into CSV and JSON logs.
pub const LOG_SCHEMA: &str = "gramflow-log/1";

/// How the curvature bound `G` used by [`StepPolicy::CflBound`] is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CurvatureMode {
    /// Finite-difference probe along the current velocity, inflated by
    /// `safety` and refreshed every `refresh_every` accepted steps. A
    /// missing `probe` uses `1e-2·‖E‖`.
    Estimate {
        #[serde(default = "default_safety")]
        safety: f64,
        #[serde(default = "default_refresh")]
        refresh_every: usize,
        #[serde(default)]
        probe: Option<f64>,
    },
    /// A user-supplied bound.
    Given { g: f64 },
}

fn default_safety() -> f64 {
    5.0
}

fn default_refresh() -> usize {
    5
}

impl Default for CurvatureMode {
    fn default() -> Self {
        CurvatureMode::Estimate {
            safety: default_safety(),
            refresh_every: default_refresh(),
            probe: None,
        }
    }
}

fn default_factor() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPolicy {
    Fixed {
        ds: f64,
    },
    /// Rejects any step that lowers the objective and retries with
    /// `ds·factor`; the reduced step is kept for later iterations.
    HalvingOnDecrease {
        ds: f64,
        #[serde(default = "default_factor")]
        factor: f64,
        min_ds: f64,
    },
    /// `ds = alpha / (G ‖Γ_ε⁻¹‖₂)` at every iterate.
    CflBound {
        alpha: f64,
        #[serde(default)]
        curvature: CurvatureMode,
    },
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match *self {
            StepPolicy::Fixed { ds } if !(ds > 0.0 && ds.is_finite()) => {
                bad(format!("step {ds} must be positive"))
            }
            StepPolicy::HalvingOnDecrease { ds, factor, min_ds } => {
                if !(ds > 0.0 && ds.is_finite()) {
                    bad(format!("step {ds} must be positive"))
                } else if !(factor > 0.0 && factor < 1.0) {
                    bad(format!("reduction factor {factor} must lie in (0, 1)"))
                } else if !(min_ds > 0.0 && min_ds <= ds) {
                    bad(format!("minimum step {min_ds} must lie in (0, {ds}]"))
                } else {
                    Ok(())
                }
            }
            StepPolicy::CflBound {
                alpha,
                ref curvature,
            } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    return bad(format!("CFL number {alpha} must lie in (0, 2)"));
                }
                match *curvature {
                    CurvatureMode::Estimate {
                        safety,
                        refresh_every,
                        probe,
                    } => {
                        if !(safety > 0.0 && safety.is_finite()) || refresh_every == 0 {
                            bad("curvature safety must be positive and refresh_every >= 1".into())
                        } else if probe.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
                            bad("curvature probe must be positive".into())
                        } else {
                            Ok(())
                        }
                    }
                    CurvatureMode::Given { g } if !(g > 0.0 && g.is_finite()) => {
                        bad(format!("curvature bound {g} must be positive"))
                    }
                    CurvatureMode::Given { .. } => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StepPolicy::Fixed { .. } => "fixed",
            StepPolicy::HalvingOnDecrease { .. } => "halving",
            StepPolicy::CflBound { .. } => "cfl",
        }
    }
}

/// Quadrature in `s` for the predicted constraint drift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftRule {
    #[default]
    LeftEndpoint,
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub eps: f64,
    pub policy: StepPolicy,
    #[serde(default = "FlowOptions::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "FlowOptions::default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub drift_rule: DriftRule,
}

impl FlowOptions {
    pub const DEFAULT_TOLERANCE: f64 = 1e-10;
    pub const DEFAULT_MAX_ITER: usize = 500;

    fn default_tolerance() -> f64 {
        Self::DEFAULT_TOLERANCE
    }

    fn default_max_iter() -> usize {
        Self::DEFAULT_MAX_ITER
    }

    pub fn new(eps: f64, policy: StepPolicy) -> Self {
        Self {
            eps,
            policy,
            tolerance: Self::DEFAULT_TOLERANCE,
            max_iter: Self::DEFAULT_MAX_ITER,
            drift_rule: DriftRule::default(),
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_drift_rule(mut self, rule: DriftRule) -> Self {
        self.drift_rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eps {} must be >= 0",
                self.eps
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be >= 0".into()));
        }
        self.policy.validate()
    }
}

/// JSON has no NaN or infinity; non-finite values travel as `null` and come
/// back as NaN.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter()
                .map(|x| x.is_finite().then_some(*x))
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?
                .into_iter()
                .map(|x| x.unwrap_or(f64::NAN))
                .collect())
        }
    }
}

/// Current iterate of a run.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub field: ControlField,
    pub iteration: usize,
    pub s_accum: f64,
    pub drift_pred: Vec<f64>,
}

/// One row of the log. Accepted rows describe the iterate they produce;
/// rejected rows carry the trial objective and constraint values together
/// with the diagnostics of the iterate the step was taken from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub s_accum: f64,
    pub accepted: bool,
    pub dt_step: f64,
    #[serde(with = "nullable")]
    pub j: f64,
    /// `g₀ ρ`, the first-order rate of `J` along the flow.
    #[serde(with = "nullable")]
    pub dj_firstorder: f64,
    #[serde(with = "nullable")]
    pub g0: f64,
    #[serde(with = "nullable")]
    pub rho: f64,
    #[serde(with = "nullable")]
    pub cond: f64,
    #[serde(with = "nullable")]
    pub sigma_min_sq: f64,
    pub eps: f64,
    /// `Δs·G·‖Γ_ε⁻¹‖₂` of the step; NaN when no curvature bound is known.
    #[serde(with = "nullable")]
    pub cfl_product: f64,
    pub rejections_this_step: usize,
    #[serde(with = "nullable::vec")]
    pub constraint_values: Vec<f64>,
    #[serde(with = "nullable::vec")]
    pub drift_pred: Vec<f64>,
    /// `∫ c₀ v dt` at the iterate.
    #[serde(with = "nullable")]
    pub pairing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Tolerance,
    MaxIterations,
    StepUnderflow,
    FactorisationFailure,
    NonFinite,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::Tolerance => "tolerance",
            TerminationReason::MaxIterations => "max_iterations",
            TerminationReason::StepUnderflow => "step_underflow",
            TerminationReason::FactorisationFailure => "factorisation_failure",
            TerminationReason::NonFinite => "non_finite",
        }
    }

    pub fn is_breakdown(&self) -> bool {
        matches!(
            self,
            TerminationReason::StepUnderflow
                | TerminationReason::FactorisationFailure
                | TerminationReason::NonFinite
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLog {
    pub schema: String,
    pub labels: Vec<String>,
    pub options: FlowOptions,
    pub records: Vec<IterationRecord>,
    pub terminal_field: ControlField,
    pub termination: TerminationReason,
}

impl FlowLog {
    pub fn accepted(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    pub fn total_rejections(&self) -> usize {
        self.records.iter().filter(|r| !r.accepted).count()
    }

    /// Number of accepted steps taken (the initial record is not a step).
    pub fn steps(&self) -> usize {
        self.accepted().count().saturating_sub(1)
    }

    pub fn initial_j(&self) -> f64 {
        self.records[0].j
    }

    pub fn final_j(&self) -> f64 {
        self.accepted().last().map_or(f64::NAN, |r| r.j)
    }

    pub fn final_s(&self) -> f64 {
        self.accepted().last().map_or(0.0, |r| r.s_accum)
    }

    /// Accepted steps needed to first reach `J ≥ threshold`.
    pub fn steps_to_reach(&self, threshold: f64) -> Option<usize> {
        self.accepted().position(|r| r.j >= threshold)
    }

    /// Accepted steps along which `J` decreased.
    pub fn decreases(&self) -> usize {
        let js: Vec<f64> = self.accepted().map(|r| r.j).collect();
        js.windows(2).filter(|w| w[1] < w[0]).count()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, meta: &[(&str, &str)]) -> Result<()> {
        writeln!(w, "# schema {LOG_SCHEMA}")?;
        for (key, value) in meta {
            writeln!(w, "# {key} {value}")?;
        }
        writeln!(w, "# termination {}", self.termination.as_str())?;
        let mut header = String::from(
            "k,s,accepted,ds,J,dJ_first,g0,rho,cond,sigma_min_sq,eps,cfl_product,rejections",
        );
        for l in &self.labels {
            header.push_str(&format!(",h_{l}"));
        }
        for l in &self.labels {
            header.push_str(&format!(",drift_pred_{l}"));
        }
        writeln!(w, "{header}")?;
        for r in &self.records {
            write!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.s_accum,
                u8::from(r.accepted),
                r.dt_step,
                r.j,
                r.dj_firstorder,
                r.g0,
                r.rho,
                r.cond,
                r.sigma_min_sq,
                r.eps,
                r.cfl_product,
                r.rejections_this_step
            )?;
            for v in r.constraint_values.iter().chain(&r.drift_pred) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, meta: &[(&str, &str)]) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, meta)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `v(t_k) = S(t_k) g₀ Σ_ℓ x_ℓ c_ℓ(t_k)`.
pub fn velocity(envelope: &Envelope, gram: &GramData, gradients: &[Vec<f64>]) -> Vec<f64> {
    let s = envelope.samples();
    (0..s.len())
        .map(|k| {
            let combo: f64 = gram.x.iter().zip(gradients).map(|(x, c)| x * c[k]).sum();
            s[k] * gram.g0 * combo
        })
        .collect()
}

/// Largest step with `Δs G ‖Γ_ε⁻¹‖₂ ≤ α`.
pub fn cfl_step_bound(g: f64, gram: &GramData, alpha: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "curvature bound {g} must be positive"
        )));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "CFL number {alpha} must lie in (0, 2)"
        )));
    }
    Ok(alpha / (g * gram.inverse_norm()))
}

/// Second difference of `J` along the unit-normalised `direction`,
/// multiplied by `safety`.
pub fn estimate_curvature<O: Objective + ?Sized>(
    objective: &O,
    field: &ControlField,
    direction: &[f64],
    h: f64,
    safety: f64,
) -> Result<f64> {
    field
        .grid()
        .ensure_len(direction.len(), "probe direction")?;
    let norm = trapezoid_product(direction, direction, field.grid().dt()).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidParameter(
            "probe direction must be nonzero".into(),
        ));
    }
    let field_norm = field.l2_norm();
    if !(h > 0.0) || !h.is_finite() || h * h == 0.0 || h <= field_norm * f64::EPSILON {
        return Err(Error::ProbeUnderflow { h, field_norm });
    }
    let unit: Vec<f64> = direction.iter().map(|d| d / norm).collect();
    let jp = objective.value(&field.stepped(&unit, h))?;
    let j0 = objective.value(field)?;
    let jm = objective.value(&field.stepped(&unit, -h))?;
    Ok(safety * (jp - 2.0 * j0 + jm).abs() / (h * h))
}

/// Default probe scale for [`estimate_curvature`].
pub fn default_probe(field: &ControlField) -> f64 {
    1e-2 * field.l2_norm()
}

/// Everything computed at one iterate.
struct Base {
    j: f64,
    gradients: Vec<Vec<f64>>,
    gram: GramData,
    velocity: Vec<f64>,
    constraint_values: Vec<f64>,
}

enum Evaluated {
    Ok(Base),
    Singular {
        j: f64,
        g0: f64,
        sigma_min_sq: f64,
        constraint_values: Vec<f64>,
    },
}

fn evaluate_base<O: Objective + ?Sized>(
    objective: &O,
    constraints: &ConstraintSet,
    envelope: &Envelope,
    field: &ControlField,
    eps: f64,
) -> Result<Evaluated> {
    let (j, c0) = objective.value_and_gradient(field)?;
    let mut gradients = Vec::with_capacity(constraints.len() + 1);
    gradients.push(c0);
    gradients.extend(constraints.gradients(field)?);
    let constraint_values = constraints.evaluate_all(field)?;
    let gamma = assemble(envelope, &gradients)?;
    match regularize_and_diagnose(&gamma, eps) {
        Ok(gram) => {
            let velocity = velocity(envelope, &gram, &gradients);
            Ok(Evaluated::Ok(Base {
                j,
                gradients,
                gram,
                velocity,
                constraint_values,
            }))
        }
        Err(Error::GramFactorisation { sigma_min_sq, .. }) => Ok(Evaluated::Singular {
            j,
            g0: gamma[(0, 0)],
            sigma_min_sq,
            constraint_values,
        }),
        Err(e) => Err(e),
    }
}

impl Base {
    fn record(
        &self,
        k: usize,
        state: &FlowState,
        dt_step: f64,
        cfl_product: f64,
        rejections: usize,
    ) -> IterationRecord {
        IterationRecord {
            k,
            s_accum: state.s_accum,
            accepted: true,
            dt_step,
            j: self.j,
            dj_firstorder: self.gram.first_order_rate(),
            g0: self.gram.g0,
            rho: self.gram.rho(),
            cond: self.gram.cond,
            sigma_min_sq: self.gram.sigma_min_sq,
            eps: self.gram.eps,
            cfl_product,
            rejections_this_step: rejections,
            constraint_values: self.constraint_values.clone(),
            drift_pred: state.drift_pred.clone(),
            pairing: trapezoid_product(&self.gradients[0], &self.velocity, state.field.grid().dt()),
        }
    }
}

fn singular_record(
    k: usize,
    state: &FlowState,
    eps: f64,
    dt_step: f64,
    rejections: usize,
    (j, g0, sigma_min_sq, constraint_values): (f64, f64, f64, Vec<f64>),
) -> IterationRecord {
    IterationRecord {
        k,
        s_accum: state.s_accum,
        accepted: true,
        dt_step,
        j,
        dj_firstorder: f64::NAN,
        g0,
        rho: f64::NAN,
        cond: f64::INFINITY,
        sigma_min_sq,
        eps,
        cfl_product: f64::NAN,
        rejections_this_step: rejections,
        constraint_values,
        drift_pred: state.drift_pred.clone(),
        pairing: f64::NAN,
    }
}

/// Integrates the flow from `initial` until the objective change falls to
/// the tolerance, the iteration budget is spent, or the step breaks down.
pub fn run<O: Objective + ?Sized>(
    objective: &O,
    constraints: &ConstraintSet,
    envelope: &Envelope,
    initial: &ControlField,
    options: &FlowOptions,
) -> Result<FlowLog> {
    options.validate()?;
    initial.grid().ensure_same(envelope.grid())?;
    let eps = options.eps;
    let m = constraints.len();
    let labels = constraints.labels().into_iter().map(String::from).collect();
    let mut state = FlowState {
        field: initial.clone(),
        iteration: 0,
        s_accum: 0.0,
        drift_pred: vec![0.0; m],
    };
    let mut records = Vec::new();
    let finish = |records, state: FlowState, termination| FlowLog {
        schema: LOG_SCHEMA.into(),
        labels,
        options: options.clone(),
        records,
        terminal_field: state.field,
        termination,
    };

    let mut base = match evaluate_base(objective, constraints, envelope, &state.field, eps)? {
        Evaluated::Ok(b) => b,
        Evaluated::Singular {
            j,
            g0,
            sigma_min_sq,
            constraint_values,
        } => {
            records.push(singular_record(
                0,
                &state,
                eps,
                0.0,
                0,
                (j, g0, sigma_min_sq, constraint_values),
            ));
            return Ok(finish(
                records,
                state,
                TerminationReason::FactorisationFailure,
            ));
        }
    };
    records.push(base.record(0, &state, 0.0, f64::NAN, 0));

    let mut ds = match options.policy {
        StepPolicy::Fixed { ds } | StepPolicy::HalvingOnDecrease { ds, .. } => ds,
        StepPolicy::CflBound { .. } => f64::NAN,
    };
    let mut curvature = match options.policy {
        StepPolicy::CflBound {
            curvature: CurvatureMode::Given { g },
            ..
        } => Some(g),
        _ => None,
    };
    let mut since_estimate = 0usize;

    let termination = loop {
        if state.iteration >= options.max_iter {
            break TerminationReason::MaxIterations;
        }
        if base.velocity.iter().all(|&v| v == 0.0) {
            // stationary: any step leaves J unchanged
            break TerminationReason::Tolerance;
        }
        if let StepPolicy::CflBound {
            alpha,
            curvature: ref mode,
        } = options.policy
        {
            if let CurvatureMode::Estimate {
                safety,
                refresh_every,
                probe,
            } = *mode
            {
                if curvature.is_none() || since_estimate >= refresh_every {
                    let h = probe.unwrap_or_else(|| default_probe(&state.field));
                    let g = estimate_curvature(objective, &state.field, &base.velocity, h, safety)?;
                    // a flat probe gives no bound; fall back to machine-scale curvature
                    curvature = Some(g.max(f64::MIN_POSITIVE));
                    since_estimate = 0;
                }
            }
            ds = cfl_step_bound(curvature.expect("set above"), &base.gram, alpha)?;
        }

        let drift_rates = base.gram.drift_rates();
        let mut rejections = 0usize;
        let trial = loop {
            let cfl_product = curvature.map_or(f64::NAN, |g| ds * g * base.gram.inverse_norm());
            let trial = state.field.stepped(&base.velocity, ds);
            let j_trial = if trial.is_finite() {
                objective.value(&trial)?
            } else {
                f64::NAN
            };
            let halving = match options.policy {
                StepPolicy::HalvingOnDecrease { factor, min_ds, .. } => Some((factor, min_ds)),
                _ => None,
            };
            let rejected = halving.is_some() && !(j_trial >= base.j);
            if !rejected && j_trial.is_finite() {
                break Some((trial, cfl_product));
            }
            rejections += usize::from(rejected);
            records.push(IterationRecord {
                k: state.iteration + 1,
                s_accum: state.s_accum,
                accepted: false,
                dt_step: ds,
                j: j_trial,
                dj_firstorder: base.gram.first_order_rate(),
                g0: base.gram.g0,
                rho: base.gram.rho(),
                cond: base.gram.cond,
                sigma_min_sq: base.gram.sigma_min_sq,
                eps,
                cfl_product,
                rejections_this_step: rejections,
                constraint_values: if trial.is_finite() {
                    constraints.evaluate_all(&trial)?
                } else {
                    vec![f64::NAN; m]
                },
                drift_pred: state.drift_pred.clone(),
                pairing: f64::NAN,
            });
            match halving {
                Some((factor, min_ds)) => {
                    ds *= factor;
                    if ds < min_ds {
                        break None;
                    }
                }
                None => break None,
            }
        };
        let Some((trial, cfl_product)) = trial else {
            break if matches!(options.policy, StepPolicy::HalvingOnDecrease { .. }) {
                TerminationReason::StepUnderflow
            } else {
                TerminationReason::NonFinite
            };
        };

        let previous_j = base.j;
        state.field = trial;
        state.iteration += 1;
        state.s_accum += ds;
        since_estimate += 1;
        let weight = match options.drift_rule {
            DriftRule::LeftEndpoint => ds,
            DriftRule::Trapezoid => 0.5 * ds,
        };
        for (p, r) in state.drift_pred.iter_mut().zip(&drift_rates) {
            *p += weight * r;
        }
        match evaluate_base(objective, constraints, envelope, &state.field, eps)? {
            Evaluated::Ok(b) => base = b,
            Evaluated::Singular {
                j,
                g0,
                sigma_min_sq,
                constraint_values,
            } => {
                records.push(singular_record(
                    state.iteration,
                    &state,
                    eps,
                    ds,
                    rejections,
                    (j, g0, sigma_min_sq, constraint_values),
                ));
                break TerminationReason::FactorisationFailure;
            }
        }
        if options.drift_rule == DriftRule::Trapezoid {
            for (p, r) in state.drift_pred.iter_mut().zip(base.gram.drift_rates()) {
                *p += 0.5 * ds * r;
            }
        }
        records.push(base.record(state.iteration, &state, ds, cfl_product, rejections));
        if (base.j - previous_j).abs() <= options.tolerance {
            break TerminationReason::Tolerance;
        }
    };
    Ok(finish(records, state, termination))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub label: String,
    pub measured: f64,
    pub predicted: f64,
    pub residual: f64,
}

/// Measured drift of the terminal field against the accumulated prediction.
pub fn drift_report(log: &FlowLog, constraints: &ConstraintSet) -> Result<Vec<DriftEntry>> {
    let measured = crate::constraints::violation(constraints, &log.terminal_field)?;
    let predicted = log
        .accepted()
        .last()
        .map(|r| r.drift_pred.clone())
        .unwrap_or_else(|| vec![0.0; constraints.len()]);
    Ok(constraints
        .iter()
        .zip(measured.into_iter().zip(predicted))
        .map(|(c, (measured, predicted))| DriftEntry {
            label: c.label.clone(),
            measured,
            predicted,
            residual: measured - predicted,
        })
        .collect())
}
