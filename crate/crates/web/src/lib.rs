//! Browser bindings: benchmark setup, a flow trace and a conditioning scan,
//! each returned as a JSON string.

use gramflow::experiments::{halving, Problem};
use gramflow::flow::FlowOptions;
use gramflow::gram::{assemble, regularize_and_diagnose};
use gramflow::model::{objective_gradient, units, BenchmarkParams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_POINTS: usize = 4000;
const MAX_ITER: usize = 5000;

#[derive(Serialize)]
struct Setup {
    tau_fs: f64,
    omega_r_cm: f64,
    t_fs: Vec<f64>,
    envelope: Vec<f64>,
    field: Vec<f64>,
    targets: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct TracePoint {
    k: usize,
    s: f64,
    j: f64,
    cond: f64,
    rho: f64,
    fluence_rel_drift: f64,
}

#[derive(Serialize)]
struct Trace {
    termination: &'static str,
    rejections: usize,
    points: Vec<TracePoint>,
    t_fs: Vec<f64>,
    initial: Vec<f64>,
    terminal: Vec<f64>,
}

#[derive(Serialize)]
struct ScanPoint {
    eps: f64,
    cond: f64,
    rho: f64,
    inverse_norm: f64,
}

fn benchmark(tau_fs: f64, n_points: usize) -> Result<Problem, String> {
    if !(3..=MAX_POINTS).contains(&n_points) {
        return Err(format!("n_points must lie in [3, {MAX_POINTS}]"));
    }
    Problem::benchmark(tau_fs, n_points).map_err(|e| e.to_string())
}

fn times_fs(problem: &Problem) -> Vec<f64> {
    problem
        .initial_field
        .grid()
        .times()
        .into_iter()
        .map(units::au_to_fs)
        .collect()
}

pub fn setup_json(tau_fs: f64, n_points: usize) -> Result<String, String> {
    let p = benchmark(tau_fs, n_points)?;
    let setup = Setup {
        tau_fs,
        omega_r_cm: BenchmarkParams::new(tau_fs).omega_r() / units::wavenumber_to_hartree(1.0),
        t_fs: times_fs(&p),
        envelope: p.envelope.samples().to_vec(),
        field: p.initial_field.samples().to_vec(),
        targets: p
            .constraints
            .iter()
            .map(|c| (c.label.clone(), c.target))
            .collect(),
    };
    serde_json::to_string(&setup).map_err(|e| e.to_string())
}

pub fn trace_json(
    tau_fs: f64,
    n_points: usize,
    eps: f64,
    ds: f64,
    max_iter: usize,
) -> Result<String, String> {
    if max_iter > MAX_ITER {
        return Err(format!("max_iter must be at most {MAX_ITER}"));
    }
    let p = benchmark(tau_fs, n_points)?;
    let fluence = p
        .fluence_index()
        .expect("benchmark has a fluence constraint");
    let target = p
        .constraints
        .get(fluence)
        .map(|c| c.target)
        .unwrap_or(f64::NAN);
    let log = p
        .run(&FlowOptions::new(eps, halving(ds)).with_max_iter(max_iter))
        .map_err(|e| e.to_string())?;
    let trace = Trace {
        termination: log.termination.as_str(),
        rejections: log.total_rejections(),
        points: log
            .accepted()
            .map(|r| TracePoint {
                k: r.k,
                s: r.s_accum,
                j: r.j,
                cond: r.cond,
                rho: r.rho,
                fluence_rel_drift: (r.constraint_values[fluence] - target) / target,
            })
            .collect(),
        t_fs: times_fs(&p),
        initial: p.initial_field.samples().to_vec(),
        terminal: log.terminal_field.samples().to_vec(),
    };
    serde_json::to_string(&trace).map_err(|e| e.to_string())
}

pub fn scan_json(tau_fs: f64, n_points: usize, eps: &[f64]) -> Result<String, String> {
    let p = benchmark(tau_fs, n_points)?;
    let field = &p.initial_field;
    let mut grads = vec![objective_gradient(&p.system, field).map_err(|e| e.to_string())?];
    grads.extend(p.constraints.gradients(field).map_err(|e| e.to_string())?);
    let gamma = assemble(&p.envelope, &grads).map_err(|e| e.to_string())?;
    let points = eps
        .iter()
        .filter_map(|&e| {
            let g = regularize_and_diagnose(&gamma, e).ok()?;
            Some(ScanPoint {
                eps: e,
                cond: g.cond,
                rho: g.rho(),
                inverse_norm: g.inverse_norm(),
            })
        })
        .collect::<Vec<_>>();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

/// Time axis (fs), gating envelope, initial field and constraint targets.
#[wasm_bindgen(js_name = benchmarkSetup)]
pub fn benchmark_setup(tau_fs: f64, n_points: usize) -> Result<String, JsError> {
    setup_json(tau_fs, n_points).map_err(|e| JsError::new(&e))
}

/// Per-iterate fidelity, conditioning and fluence drift of a flow run.
#[wasm_bindgen(js_name = runFlow)]
pub fn run_flow(
    tau_fs: f64,
    n_points: usize,
    eps: f64,
    ds: f64,
    max_iter: usize,
) -> Result<String, JsError> {
    trace_json(tau_fs, n_points, eps, ds, max_iter).map_err(|e| JsError::new(&e))
}

/// Condition number of the regularised Gram matrix at the initial field for
/// each ε; values where the factorisation fails are skipped.
#[wasm_bindgen(js_name = condScan)]
pub fn cond_scan(tau_fs: f64, n_points: usize, eps: Vec<f64>) -> Result<String, JsError> {
    scan_json(tau_fs, n_points, &eps).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn setup_has_matching_lengths() {
        let v: Value = serde_json::from_str(&setup_json(250.0, 200).unwrap()).unwrap();
        let n = v["t_fs"].as_array().unwrap().len();
        assert_eq!(n, 200);
        assert_eq!(v["envelope"].as_array().unwrap().len(), n);
        assert_eq!(v["field"].as_array().unwrap().len(), n);
        assert!((v["t_fs"][0].as_f64().unwrap() + 1000.0).abs() < 1e-9);
        assert_eq!(v["targets"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn trace_is_monotone_under_halving() {
        let v: Value =
            serde_json::from_str(&trace_json(250.0, 400, 1e-2, 1e-6, 20).unwrap()).unwrap();
        let js: Vec<f64> = v["points"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["j"].as_f64().unwrap())
            .collect();
        assert_eq!(js.len(), 21);
        assert!(js.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn scan_condition_falls_with_eps() {
        let eps = [1e-6, 1e-3, 1e-1, 10.0];
        let v: Value = serde_json::from_str(&scan_json(250.0, 400, &eps).unwrap()).unwrap();
        let cond: Vec<f64> = v
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["cond"].as_f64().unwrap())
            .collect();
        assert_eq!(cond.len(), eps.len());
        assert!(cond.windows(2).all(|w| w[1] < w[0]), "{cond:?}");
    }

    #[test]
    fn oversized_requests_are_rejected() {
        assert!(setup_json(250.0, MAX_POINTS + 1).is_err());
        assert!(trace_json(250.0, 400, 0.0, 1e-6, MAX_ITER + 1).is_err());
    }
}
