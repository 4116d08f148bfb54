//! Run configuration: TOML (or JSON) in laboratory units, converted to
//! atomic units once when the problem is built.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gramflow::constraints::{evaluate, Constraint, ConstraintSet};
use gramflow::experiments::{Problem, Scale, SweepSpec};
use gramflow::flow::{DriftRule, FlowOptions, StepPolicy};
use gramflow::gram::build_envelope;
use gramflow::model::{build_benchmark, units, ControlField, QuantumSystem, TimeGrid};
use gramflow::numkit::HermitianMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Relative constraint violation of the initial field that is rejected.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub system: SystemSpec,
    #[serde(default)]
    pub grid: GridSpec,
    /// Empty means the system's default constraint set.
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    pub eps: f64,
    pub policy: StepPolicy,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub drift_rule: DriftRule,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub format: FormatSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepOverrides>,
}

fn default_name() -> String {
    "run".into()
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    500
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Three-level benchmark; pulse width in femtoseconds.
    Benchmark { tau_fs: f64 },
    /// Two-level problem with two orthonormal affine constraints.
    Synthetic {
        #[serde(default)]
        with_fluence: bool,
    },
    /// User-supplied matrices in cm⁻¹ and Debye, Gaussian seed pulse.
    Explicit {
        h0_cm: Vec<Vec<f64>>,
        mu_debye: Vec<Vec<f64>>,
        initial_state: usize,
        target_state: usize,
        pulse: PulseSpec,
    },
}

/// `E(t) = A exp(−t²/2τ²) cos(ω t)` centred in the window, `A` fixed by the
/// dipole-weighted pulse area `θ = μ_ref ∫ A exp(−t²/2τ²) dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub area: f64,
    pub carrier_cm: f64,
    pub tau_fs: f64,
    pub reference_dipole_debye: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_points: usize,
    /// Window in femtoseconds; benchmark and explicit systems default to
    /// `[−4τ, 4τ]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_fs: Option<[f64; 2]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_points: Scale::DESK.n_points,
            span_fs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub label: String,
    pub kind: ConstraintKindSpec,
    #[serde(default)]
    pub target: TargetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKindSpec {
    /// `∫ E dt`.
    ZeroArea,
    /// `∫ E² dt`.
    Fluence,
    /// `∫ μ_ref cos(ω t) E dt` with the pulse carrier (benchmark: the
    /// reference transition).
    ReferenceArea,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    #[default]
    FromInitialField,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatSpec {
    pub csv: bool,
    pub json: bool,
}

impl Default for FormatSpec {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
        }
    }
}

/// Optional overrides of the experiment sweeps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

impl SweepOverrides {
    pub fn apply(&self, mut spec: SweepSpec) -> SweepSpec {
        if let Some(t) = &self.taus {
            spec.taus = t.clone();
        }
        if let Some(e) = &self.eps {
            spec.eps = e.clone();
        }
        if let Some(d) = &self.ds {
            spec.ds = d.clone();
        }
        if let Some(i) = self.iterations {
            spec.iterations = i;
        }
        spec
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| anyhow::anyhow!("config parse error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("config parse error at `{}`: {}", e.path(), e.inner()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            bail!("eps = {} must be finite and >= 0", self.eps);
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            bail!("name must be a nonempty file stem");
        }
        if self.grid.n_points < 3 {
            bail!("grid.n_points must be at least 3");
        }
        if let Some([a, b]) = self.grid.span_fs {
            if !(b > a) {
                bail!("grid.span_fs must be increasing");
            }
        }
        self.options().validate()?;
        match &self.system {
            SystemSpec::Benchmark { tau_fs } if !(*tau_fs > 0.0) => {
                bail!("system.tau_fs must be positive")
            }
            SystemSpec::Explicit {
                h0_cm,
                mu_debye,
                initial_state,
                target_state,
                pulse,
            } => {
                let d = h0_cm.len();
                if d < 2 || mu_debye.len() != d {
                    bail!("system.h0_cm and system.mu_debye must be square of the same size >= 2");
                }
                if *initial_state >= d || *target_state >= d {
                    bail!("system states must index levels 0..{d}");
                }
                if !(pulse.tau_fs > 0.0) {
                    bail!("system.pulse.tau_fs must be positive");
                }
            }
            _ => {}
        }
        let mut labels: Vec<&str> = self.constraints.iter().map(|c| c.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            bail!("constraint labels must be unique");
        }
        if let Some(s) = &self.sweep {
            if let Some(e) = &s.eps {
                if e.is_empty() || e.iter().any(|v| !(*v >= 0.0)) {
                    bail!("sweep.eps must be nonempty with values >= 0");
                }
            }
            if let Some(d) = &s.ds {
                if d.is_empty() || d.iter().any(|v| !(*v > 0.0)) {
                    bail!("sweep.ds must be nonempty with positive values");
                }
            }
            if s.taus
                .as_ref()
                .is_some_and(|t| t.is_empty() || t.iter().any(|v| !(*v > 0.0)))
            {
                bail!("sweep.taus must be nonempty with positive values");
            }
        }
        if self.output_dir.exists() && !self.output_dir.is_dir() {
            bail!(
                "output_dir {} exists and is not a directory",
                self.output_dir.display()
            );
        }
        Ok(())
    }

    pub fn options(&self) -> FlowOptions {
        FlowOptions::new(self.eps, self.policy.clone())
            .with_tolerance(self.tolerance)
            .with_max_iter(self.max_iter)
            .with_drift_rule(self.drift_rule)
    }

    pub fn apply_full_scale(&mut self) {
        self.grid.n_points = Scale::FULL.n_points;
        self.max_iter = Scale::FULL.max_iter;
    }

    pub fn scale(&self) -> Scale {
        Scale {
            n_points: self.grid.n_points,
            max_iter: self.max_iter,
        }
    }

    /// Benchmark pulse width, if the system is the benchmark.
    pub fn benchmark_tau(&self) -> Option<f64> {
        match self.system {
            SystemSpec::Benchmark { tau_fs } => Some(tau_fs),
            _ => None,
        }
    }

    /// Atomic-unit values derived from the laboratory inputs, for echoing.
    pub fn atomic_units_summary(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        match &self.system {
            SystemSpec::Benchmark { tau_fs } => {
                let p = gramflow::model::BenchmarkParams::new(*tau_fs);
                out.push(("tau".into(), p.tau()));
                out.push(("omega0".into(), p.omega0()));
                out.push(("vdd".into(), p.vdd()));
                out.push(("mu_d".into(), p.mu_d()));
                out.push(("omega_r".into(), p.omega_r()));
                out.push(("amplitude".into(), p.amplitude()));
            }
            SystemSpec::Explicit { pulse, .. } => {
                out.push(("tau".into(), units::fs_to_au(pulse.tau_fs)));
                out.push((
                    "carrier".into(),
                    units::wavenumber_to_hartree(pulse.carrier_cm),
                ));
                out.push((
                    "reference_dipole".into(),
                    units::debye_to_au(pulse.reference_dipole_debye),
                ));
            }
            SystemSpec::Synthetic { .. } => {}
        }
        if let Some([a, b]) = self.grid.span_fs {
            out.push(("t_start".into(), units::fs_to_au(a)));
            out.push(("t_end".into(), units::fs_to_au(b)));
        }
        out
    }

    /// TOML echo followed by the atomic-unit values as comments.
    pub fn echo(&self) -> String {
        let mut s = self.to_toml();
        s.push_str("\n# atomic units\n");
        for (k, v) in self.atomic_units_summary() {
            s.push_str(&format!("# {k} = {v:e}\n"));
        }
        s
    }

    /// Builds the problem and checks that the initial field is feasible.
    pub fn build(&self) -> anyhow::Result<Problem> {
        let problem = match &self.system {
            SystemSpec::Benchmark { tau_fs } => {
                if self.grid.span_fs.is_some() {
                    bail!("grid.span_fs is fixed to [-4 tau, 4 tau] for the benchmark");
                }
                let b = build_benchmark(*tau_fs, self.grid.n_points)?;
                let reference = b
                    .constraints()
                    .get(2)
                    .cloned()
                    .expect("benchmark has three constraints");
                let constraints =
                    self.resolve_constraints(&b.initial_field, Some(reference), || {
                        b.constraints()
                    })?;
                Problem {
                    envelope: b.envelope(),
                    initial_field: b.initial_field.clone(),
                    system: b.system,
                    constraints,
                }
            }
            SystemSpec::Synthetic { with_fluence } => {
                if !self.constraints.is_empty() || self.grid.span_fs.is_some() {
                    bail!("the synthetic system uses its own grid and constraints");
                }
                Problem::synthetic(*with_fluence)?
            }
            SystemSpec::Explicit {
                h0_cm,
                mu_debye,
                initial_state,
                target_state,
                pulse,
            } => {
                let d = h0_cm.len();
                let h0 = HermitianMatrix::from_real_rows(
                    &h0_cm
                        .iter()
                        .map(|r| r.iter().map(|v| units::wavenumber_to_hartree(*v)).collect())
                        .collect::<Vec<_>>(),
                )?;
                let mu = HermitianMatrix::from_real_rows(
                    &mu_debye
                        .iter()
                        .map(|r| r.iter().map(|v| units::debye_to_au(*v)).collect())
                        .collect::<Vec<_>>(),
                )?;
                let basis = |i: usize| {
                    (0..d)
                        .map(|k| Complex64::new(if k == i { 1.0 } else { 0.0 }, 0.0))
                        .collect::<Vec<_>>()
                };
                let system =
                    QuantumSystem::new(h0, mu, basis(*initial_state), basis(*target_state))?;
                let tau = units::fs_to_au(pulse.tau_fs);
                let [a, b] = self
                    .grid
                    .span_fs
                    .map(|s| s.map(units::fs_to_au))
                    .unwrap_or([-4.0 * tau, 4.0 * tau]);
                let grid = TimeGrid::new(a, b, self.grid.n_points)?;
                let mid = 0.5 * (a + b);
                let omega = units::wavenumber_to_hartree(pulse.carrier_cm);
                let mu_ref = units::debye_to_au(pulse.reference_dipole_debye);
                if !(mu_ref > 0.0) {
                    bail!("system.pulse.reference_dipole_debye must be positive");
                }
                let amp = pulse.area / (mu_ref * (2.0 * std::f64::consts::PI).sqrt() * tau);
                let field = ControlField::from_fn(grid.clone(), |t| {
                    let x = t - mid;
                    amp * (-x * x / (2.0 * tau * tau)).exp() * (omega * x).cos()
                })?;
                let envelope = build_envelope(&grid, tau)?;
                let reference = Constraint::affine(
                    "reference_area",
                    grid.times()
                        .iter()
                        .map(|t| mu_ref * (omega * (t - mid)).cos())
                        .collect(),
                    0.0,
                );
                let defaults = vec![
                    Constraint::zero_area(&grid),
                    Constraint::fluence(0.0),
                    reference.clone(),
                ];
                let constraints = self.resolve_constraints(&field, Some(reference), || {
                    ConstraintSet::new(defaults).expect("labels unique")
                })?;
                Problem {
                    system,
                    constraints,
                    envelope,
                    initial_field: field,
                }
            }
        };
        check_feasible(&problem)?;
        Ok(problem)
    }

    fn resolve_constraints(
        &self,
        field: &ControlField,
        reference: Option<Constraint>,
        default: impl FnOnce() -> ConstraintSet,
    ) -> anyhow::Result<ConstraintSet> {
        let specs: Vec<Constraint> = if self.constraints.is_empty() {
            default().iter().cloned().collect()
        } else {
            self.constraints
                .iter()
                .map(|c| {
                    let mut built = match c.kind {
                        ConstraintKindSpec::ZeroArea => Constraint::zero_area(field.grid()),
                        ConstraintKindSpec::Fluence => Constraint::fluence(0.0),
                        ConstraintKindSpec::ReferenceArea => {
                            reference.clone().expect("reference kernel available")
                        }
                    };
                    built.label = c.label.clone();
                    if let TargetSpec::Value(v) = c.target {
                        built.target = v;
                    } else {
                        built.target = f64::NAN;
                    }
                    built
                })
                .collect()
        };
        let mut resolved = Vec::with_capacity(specs.len());
        for (i, mut c) in specs.into_iter().enumerate() {
            let from_field = self
                .constraints
                .get(i)
                .is_none_or(|s| s.target == TargetSpec::FromInitialField);
            if from_field {
                c.target = evaluate(&c, field)?;
            }
            resolved.push(c);
        }
        Ok(ConstraintSet::new(resolved)?)
    }
}

/// Rejects initial fields violating a constraint by more than
/// [`FEASIBILITY_TOL`] relative to its target (absolute for zero targets
/// scaled by the field's own size).
pub fn check_feasible(problem: &Problem) -> anyhow::Result<()> {
    let field = &problem.initial_field;
    let field_scale = field.l2_norm().max(f64::MIN_POSITIVE);
    for c in problem.constraints.iter() {
        let h = evaluate(c, field)?;
        let scale = if c.target != 0.0 {
            c.target.abs()
        } else {
            field_scale
        };
        if (h - c.target).abs() > FEASIBILITY_TOL * scale {
            bail!(
                "initial field violates constraint `{}`: value {h:e}, target {:e}",
                c.label,
                c.target
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BENCH: &str = r#"
name = "bench"
eps = 0.01
max_iter = 3

[system]
kind = "benchmark"
tau_fs = 250.0

[grid]
n_points = 400

[policy]
kind = "halving_on_decrease"
ds = 1e-6
factor = 0.1
min_ds = 1e-14
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml(BENCH).unwrap();
        assert_eq!(cfg.name, "bench");
        assert_eq!(cfg.tolerance, 1e-10);
        let again = RunConfig::from_toml(&cfg.echo()).unwrap();
        assert_eq!(cfg, again);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&json).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml(&BENCH.replace("max_iter", "max_iters"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("max_iters"), "{err}");
        let err = RunConfig::from_json(r#"{"eps": 0.1, "policy": {"kind": "fixed", "ds": 1.0}, "system": {"kind": "benchmark", "tau": 1}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("system"), "{err}");
    }

    #[test]
    fn negative_eps_rejected() {
        let err = RunConfig::from_toml(&BENCH.replace("eps = 0.01", "eps = -0.01"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("eps"), "{err}");
    }

    #[test]
    fn benchmark_defaults_to_three_constraints() {
        let cfg = RunConfig::from_toml(BENCH).unwrap();
        let p = cfg.build().unwrap();
        assert_eq!(
            p.constraints.labels(),
            ["zero_area", "fluence", "reference_area"]
        );
        assert_eq!(p.initial_field.grid().n_points(), 400);
    }

    #[test]
    fn explicit_target_violation_is_rejected() {
        let text = format!(
            "{BENCH}\n[[constraints]]\nlabel = \"area\"\nkind = \"zero_area\"\ntarget = {{ value = 1.0 }}\n"
        );
        let cfg = RunConfig::from_toml(&text).unwrap();
        let err = cfg.build().unwrap_err().to_string();
        assert!(err.contains("area"), "{err}");
    }

    #[test]
    fn explicit_system_builds() {
        let text = r#"
eps = 0.0
[system]
kind = "explicit"
h0_cm = [[0.0, 0.0], [0.0, 1000.0]]
mu_debye = [[0.0, 1.0], [1.0, 0.0]]
initial_state = 0
target_state = 1
[system.pulse]
area = 1.0
carrier_cm = 1000.0
tau_fs = 100.0
reference_dipole_debye = 1.0
[grid]
n_points = 200
[policy]
kind = "fixed"
ds = 1e-3
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let p = cfg.build().unwrap();
        assert_eq!(p.system.dim(), 2);
        assert_eq!(p.constraints.len(), 3);
        let au = cfg.atomic_units_summary();
        assert!(au
            .iter()
            .any(|(k, v)| k == "tau" && (*v - units::fs_to_au(100.0)).abs() < 1e-9));
    }
}
