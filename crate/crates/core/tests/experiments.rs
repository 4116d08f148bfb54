use gramflow::experiments::*;
use gramflow::flow::StepPolicy;

#[test]
fn baseline_desk_scale_stays_in_band() {
    let base = baseline_run(250.0, Scale::DESK).unwrap();
    assert_eq!(
        base.table.columns,
        ["k", "J", "fluence_rel_drift", "abs_h1", "cond"]
    );
    assert_eq!(base.table.rows.len(), base.log.accepted().count());
    assert!(
        base.min_cond() >= 1e8 && base.max_cond() <= 1e12,
        "{} {}",
        base.min_cond(),
        base.max_cond()
    );
    let h1 = base.table.column("abs_h1").unwrap();
    assert!(h1.iter().all(|h| *h <= 1e-6));
}

#[test]
fn baseline_full_scale_fluence_drift() {
    let base = baseline_run(250.0, Scale::FULL).unwrap();
    let drift = base.final_fluence_drift();
    assert!(
        (0.15..=0.45).contains(&drift),
        "terminal fluence drift {drift}"
    );
}

#[test]
fn synthetic_sweep_slope_and_identity_regime() {
    let problem = Problem::synthetic(false).unwrap();
    let mut spec = SweepSpec::synthetic_default();
    spec.eps.extend([1e-14, 1e-13]);
    let fit = convergence_sweep(&problem, &spec, SYNTHETIC_SLOPE_WINDOW).unwrap();
    assert!((1.8..=2.2).contains(&fit.slope), "slope {}", fit.slope);
    assert!(fit.points_in_window >= 4);
    for (e, d) in fit.eps.iter().zip(&fit.distances) {
        if *e < 1e-12 {
            assert!(*d <= 1e-15, "eps {e:e} distance {d:e}");
        }
    }
}

#[test]
fn sweep_tables_are_bitwise_reproducible() {
    let problem = Problem::synthetic(false).unwrap();
    let spec = SweepSpec::synthetic_default();
    let a = convergence_sweep(&problem, &spec, SYNTHETIC_SLOPE_WINDOW).unwrap();
    let b = convergence_sweep(&problem, &spec, SYNTHETIC_SLOPE_WINDOW).unwrap();
    let hash = config_hash(&spec);
    assert_eq!(
        a.table().to_csv_string(&hash),
        b.table().to_csv_string(&hash)
    );
}

#[test]
fn convergence_sweep_requires_reference() {
    let problem = Problem::synthetic(false).unwrap();
    let mut spec = SweepSpec::synthetic_default();
    spec.eps.retain(|e| *e > 0.0);
    assert!(convergence_sweep(&problem, &spec, SYNTHETIC_SLOPE_WINDOW).is_err());
}

#[test]
fn benchmark_sweep_saturates() {
    let problem = Problem::benchmark(250.0, Scale::DESK.n_points).unwrap();
    let fit = convergence_sweep(
        &problem,
        &SweepSpec::benchmark_default(Scale::DESK),
        BENCHMARK_SLOPE_WINDOW,
    )
    .unwrap();
    assert!((1.8..=2.2).contains(&fit.slope), "slope {}", fit.slope);
    let (upper, _, _) = fit_slope(&fit.eps, &fit.distances, (1e-2, 1.0)).unwrap();
    assert!(upper < 0.5, "slope above 1e-2: {upper}");
}

#[test]
fn cond_drift_shape() {
    let spec = SweepSpec::cond_drift_default(Scale::DESK);
    let problem = Problem::benchmark(250.0, Scale::DESK.n_points).unwrap();
    let policy = StepPolicy::Fixed { ds: spec.ds[0] };
    let t = cond_drift_sweep(&problem, &spec.eps, &policy, spec.iterations).unwrap();
    let eps = t.column("eps").unwrap();
    let cond = t.column("max_cond").unwrap();
    assert_eq!(eps[0], 0.0);
    let plateau = (cond[1] - cond[0]).abs() / cond[0];
    assert!(plateau <= 0.05, "plateau gap {plateau}");
    let (slope, _, _) = fit_slope(&eps, &cond, COND_SLOPE_WINDOW).unwrap();
    assert!((slope + 2.0).abs() <= 0.3, "slope {slope}");
    let last = *cond.last().unwrap();
    assert!(
        (last - 1.0).abs() <= 0.1,
        "cond at eps {:e}: {last}",
        eps.last().unwrap()
    );
}

#[test]
fn payoff_large_steps_break_down() {
    let problem = Problem::benchmark(250.0, Scale::FULL.n_points).unwrap();
    let spec = SweepSpec::payoff_default(Scale::FULL);
    let cells = payoff_matrix(&problem, &[5e-5, 1e-4], &spec.eps, 10).unwrap();
    assert_eq!(cells.len(), 2 * spec.eps.len());
    for c in &cells {
        assert!(
            c.breakdown,
            "ds {:e} eps {:e} did not break down",
            c.ds, c.eps
        );
    }
    let t = payoff_table(&cells);
    assert_eq!(t.rows.len(), cells.len());
}

#[test]
fn identity_suite_seed_42() {
    let report = identity_suite(42, 1000, Scale::DESK).unwrap();
    for c in &report.checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    assert_eq!(report.failures(), 0);
}
