//! Training against the direct solve of the stationarity system on small
//! mixed problems.

use fxam::smoothers::Backend;
use fxam::synthgen::{toy_problem, TOY_PERIOD};
use fxam::trainer::{
    fit_state, normal_equation_direct_solve, normal_equation_residuals, objective_value, Stage,
    TemporalSpec, TrainConfig, TrainState,
};

fn tight() -> TrainConfig {
    TrainConfig {
        backend: Backend::Penalized,
        lambda_num: 1e-3,
        lambda_cat: 1.0,
        lambda_trend: 1.0,
        lambda_seasonal: 1000.0,
        stage_tol: 1e-11,
        outer_tol: 1e-15,
        max_cycles: 500,
        max_stage1_passes: 1000,
        temporal_tol: 1e-10,
        temporal_max_iter: 2000,
        nga_tol: 1e-13,
        temporal: vec![TemporalSpec {
            name: "t".into(),
            tau: 1,
            period: TOY_PERIOD,
        }],
        ..Default::default()
    }
}

#[test]
fn training_reaches_the_direct_solution() {
    let cfg = tight();
    for seed in 0..4 {
        let ds = toy_problem(seed).unwrap();
        let (state, diag) = fit_state(&ds, &cfg, &mut |_, _| {}).unwrap();
        assert!(diag.converged, "seed {seed}");
        let direct = normal_equation_direct_solve(&ds, &cfg).unwrap();
        let diff = state.components().max_abs_diff(&direct);
        assert!(diff < 1e-6, "seed {seed}: {diff:e}");

        let mut at_direct = TrainState::new(&ds, &cfg).unwrap();
        at_direct.set_components(direct);
        let gap = objective_value(&state, &cfg) - objective_value(&at_direct, &cfg);
        assert!(gap.abs() < 1e-8, "seed {seed}: {gap:e}");
    }
}

#[test]
fn stationarity_holds_at_convergence() {
    let cfg = tight();
    let ds = toy_problem(7).unwrap();
    let (state, _) = fit_state(&ds, &cfg, &mut |_, _| {}).unwrap();
    let blocks = normal_equation_residuals(&state, &cfg).unwrap();
    let names: Vec<&str> = blocks.iter().map(|b| b.block.as_str()).collect();
    assert_eq!(names, ["intercept", "x1", "x2", "categorical", "t.trend", "t.seasonal"]);
    for b in &blocks {
        assert!(b.value < 1e-8, "{}: {:e}", b.block, b.value);
    }
}

#[test]
fn objective_never_increases() {
    let cfg = tight();
    for seed in 10..13 {
        let ds = toy_problem(seed).unwrap();
        let mut trace = Vec::new();
        let (_, diag) = fit_state(&ds, &cfg, &mut |st, stage| {
            trace.push((stage, objective_value(st, &cfg)));
        })
        .unwrap();
        for w in trace.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-10, "seed {seed}: {:?} -> {:?}", w[0], w[1]);
        }
        assert!(matches!(trace[0].0, Stage::Init));
        for w in diag.stage_objectives.windows(2) {
            assert!(w[1].value <= w[0].value + 1e-10);
        }
    }
}

#[test]
fn direct_solve_needs_penalized_backend() {
    let cfg = TrainConfig {
        backend: Backend::Kernel,
        ..tight()
    };
    let ds = toy_problem(0).unwrap();
    assert!(normal_equation_direct_solve(&ds, &cfg).is_err());
}
