use super::*;
use crate::model::{validate, LinearQuadratic, NoiseStage, Storage, TerminalQuadratic, UnitParams};
use crate::quadratic::QuadraticSpec;

fn hydro(name: &str, x0: f64, k: f64) -> UnitParams<f64> {
    UnitParams {
        name: name.into(),
        storage: Some(Storage {
            lower: 0.0,
            upper: 40.0,
            initial: x0,
            inflow_coordinate: Some(1),
            terminal: TerminalQuadratic::linear(k),
        }),
        control_lower: 0.0,
        control_upper: 6.0,
        cost: LinearQuadratic {
            quadratic: 0.1,
            linear: 0.0,
        },
        coupling: 1.0,
    }
}

fn thermal(upper: f64) -> UnitParams<f64> {
    UnitParams {
        name: "thermal".into(),
        storage: None,
        control_lower: 0.0,
        control_upper: upper,
        cost: LinearQuadratic {
            quadratic: 1.0,
            linear: 1.0,
        },
        coupling: 1.0,
    }
}

/// Two hydro units and a thermal slack; demand in {8, 10}, inflow in {0, 1}.
fn system(horizon: usize) -> ValidatedProblem<f64> {
    let stage = NoiseStage::uniform(vec![vec![8.0, 0.0], vec![10.0, 1.0]]);
    let units = vec![
        hydro("h1", 20.0, -7.0).build(horizon),
        hydro("h2", 20.0, -7.0).build(horizon),
        thermal(8.0).build(horizon),
    ];
    validate(
        ProblemSpec::with_demand(units, NoiseModel::new(vec![stage; horizon + 1]), 0).with_slack(2),
    )
    .unwrap()
}

/// Storage grid step 1 and mesh steps 0.5, so optimal controls are nodes.
fn config(problem: &ProblemSpec<f64>, samples: usize) -> DadpConfig<f64> {
    let mut c = DadpConfig::uniform(problem, 0.1, 41, 13);
    c.mesh_points[2] = vec![17];
    c.grid_points[2] = vec![];
    c.samples = samples;
    c
}

fn all_paths(noise: &NoiseModel<f64>) -> Vec<(f64, NoisePath<f64>)> {
    let horizon = noise.horizon();
    (0..1usize << (horizon + 1))
        .map(|code| {
            let atoms: Vec<usize> = (0..=horizon).map(|t| (code >> t) & 1).collect();
            let p = atoms
                .iter()
                .enumerate()
                .map(|(t, &k)| noise.stage(t).weights[k])
                .product();
            (p, NoisePath::from_atoms(noise, atoms))
        })
        .collect()
}

#[test]
fn zero_prices_leave_units_uncoupled() {
    let p = system(3);
    let model = Arc::new(PriceModel::zeros(3, 1));
    let sols = solve_subproblems(&p, &model, &config(&p, 1)).unwrap();
    let paths = iteration_paths(&p.noise, 1, 0, 20);
    for rec in simulate_iterate(&p, &sols, &model, &paths).unwrap() {
        // Water is worth 7 at the end and free now: nobody produces.
        for tr in &rec.units {
            assert!(tr.controls.iter().all(|u| u[0] == 0.0));
        }
        for (r, d) in rec.residuals.iter().zip(&rec.targets) {
            assert_eq!(r[0], -d[0]);
        }
    }
}

#[test]
fn constant_price_meets_first_order_conditions() {
    let p = system(3);
    // lambda = -8: hydro 0.2 u = 8 - 7, thermal 2 u + 1 = 8.
    let model = Arc::new(PriceModel::constant(3, vec![-8.0]));
    let sols = solve_subproblems(&p, &model, &config(&p, 1)).unwrap();
    let paths = iteration_paths(&p.noise, 2, 0, 20);
    for rec in simulate_iterate(&p, &sols, &model, &paths).unwrap() {
        for t in 0..3 {
            assert_eq!(rec.units[0].controls[t][0], 5.0);
            assert_eq!(rec.units[1].controls[t][0], 5.0);
            assert_eq!(rec.units[2].controls[t][0], 3.5);
        }
    }
}

#[test]
fn identical_units_act_identically() {
    let p = system(3);
    let mut model = PriceModel::constant(3, vec![-8.0]);
    model.stages[1].alpha = vec![0.5];
    model.stages[2].beta = vec![-0.3];
    let model = Arc::new(model);
    let sols = solve_subproblems(&p, &model, &config(&p, 1)).unwrap();
    assert_eq!(sols[0].values, sols[1].values);
    let paths = iteration_paths(&p.noise, 3, 0, 30);
    for rec in simulate_iterate(&p, &sols, &model, &paths).unwrap() {
        assert_eq!(rec.units[0], rec.units[1]);
    }
}

#[test]
fn dual_value_separates_over_units() {
    // Constant prices sit on a grid node and trajectories on storage nodes,
    // so the exact expectation of the simulated dual equals the DP values.
    let p = system(2);
    let c = -7.5;
    let model = Arc::new(PriceModel::constant(2, vec![c]));
    let sols = solve_subproblems(&p, &model, &config(&p, 1)).unwrap();
    let paths = all_paths(&p.noise);
    let records = simulate_iterate(
        &p,
        &sols,
        &model,
        &paths.iter().map(|(_, x)| x.clone()).collect::<Vec<_>>(),
    )
    .unwrap();
    let exact: f64 = paths
        .iter()
        .zip(dual_samples(&records))
        .map(|((w, _), v)| w * v)
        .sum();
    let demand: f64 = (0..2).map(|t| c * p.noise.stage(t).mean()[0]).sum();
    let split: f64 = sols
        .iter()
        .map(|s| s.expected_value().unwrap())
        .sum::<f64>()
        - demand;
    assert!((exact - split).abs() < 1e-9, "{exact} vs {split}");
}

#[test]
fn gradient_step_arithmetic() {
    let lambda = PricePathSamples {
        paths: vec![vec![vec![1.0], vec![2.0]]],
    };
    let next = gradient_step(&lambda, &[vec![vec![0.5], vec![-1.0]]], &[0.1, 0.2]).unwrap();
    assert_eq!(next.paths, vec![vec![vec![1.05], vec![1.8]]]);
    assert!(gradient_step(&lambda, &[], &[0.1, 0.2]).is_err());
    assert!(gradient_step(&lambda, &[vec![vec![0.5]]], &[0.1, 0.2]).is_err());
}

#[test]
fn estimate_of_known_samples() {
    let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(e.mean, 2.5);
    assert!((e.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    assert_eq!(Estimate::from_samples(&[3.0]).std_error, 0.0);
    assert!(Estimate::<f64>::from_samples(&[]).mean.is_nan());
    let a = Estimate {
        mean: 0.0,
        std_error: 3.0,
    };
    let b = Estimate {
        mean: 0.0,
        std_error: 4.0,
    };
    assert_eq!(a.combined_error(&b), 5.0);
}

/// One-step record of `system(1)` with the given controls and demand.
fn record(p: &ProblemSpec<f64>, path: &NoisePath<f64>, u: [f64; 3]) -> PathRecord<f64> {
    let d = path.realizations[0][0];
    let a = path.realizations[1][1];
    let units: Vec<UnitTrajectory<f64>> = (0..3)
        .map(|i| UnitTrajectory {
            states: if i < 2 {
                vec![vec![20.0], vec![20.0 - u[i] + a]]
            } else {
                vec![vec![], vec![]]
            },
            controls: vec![vec![u[i]]],
        })
        .collect();
    let stage_costs = (0..3)
        .map(|i| {
            vec![(p.subsystems[i].stage_cost)(
                &units[i].states[0],
                &units[i].controls[0],
                &path.realizations[1],
                0,
            )]
        })
        .collect();
    let terminal_costs = (0..3)
        .map(|i| (p.subsystems[i].terminal_cost)(&units[i].states[1]))
        .collect();
    PathRecord {
        lambda: vec![vec![0.0]],
        units,
        stage_costs,
        terminal_costs,
        couplings: (0..3).map(|i| vec![vec![u[i]]]).collect(),
        targets: vec![vec![d]],
        residuals: vec![vec![u.iter().sum::<f64>() - d]],
    }
}

#[test]
fn slack_closes_the_gap() {
    let p = system(1);
    let path = NoisePath::from_atoms(&p.noise, vec![0, 1]);
    let r = restore(&p, &path, &record(&p, &path, [2.0, 3.0, 0.0]), Some(2)).unwrap();
    assert_eq!(r.slack.as_ref().unwrap().controls, vec![vec![3.0]]);
    assert_eq!(r.residuals, vec![vec![0.0]]);
    assert_eq!(r.clamped, 0);
    let expect = 0.1 * 4.0 + 0.1 * 9.0 + 9.0 + 3.0 - 7.0 * (19.0 + 18.0);
    assert!((r.total_cost() - expect).abs() < 1e-12);
}

#[test]
fn clamped_slack_leaves_a_violation() {
    let p = system(1);
    let path = NoisePath::from_atoms(&p.noise, vec![0, 1]);
    let r = restore(&p, &path, &record(&p, &path, [4.5, 4.5, 2.0]), Some(2)).unwrap();
    assert_eq!(r.slack.as_ref().unwrap().controls, vec![vec![0.0]]);
    assert_eq!(r.residuals, vec![vec![1.0]]);
    assert_eq!(r.clamped, 1);
}

#[test]
fn feasible_records_are_kept() {
    let p = system(1);
    let path = NoisePath::from_atoms(&p.noise, vec![0, 1]);
    let rec = record(&p, &path, [2.0, 3.0, 3.0]);
    let r = restore(&p, &path, &rec, Some(2)).unwrap();
    assert_eq!(r.slack.unwrap(), rec.units[2]);
}

#[test]
fn primal_needs_a_slack_when_residuals_remain() {
    let p = system(1);
    let path = NoisePath::from_atoms(&p.noise, vec![0, 1]);
    let rec = record(&p, &path, [2.0, 3.0, 0.0]);
    assert!(matches!(
        primal_estimate(&p, std::slice::from_ref(&path), std::slice::from_ref(&rec), None),
        Err(Error::PrimalUndefined(_))
    ));
    let est = primal_estimate(&p, &[path], &[rec], Some(2)).unwrap();
    assert_eq!(est.violation_rms, vec![0.0]);
}

#[test]
fn single_iteration_run() {
    let p = system(3);
    let mut c = config(&p, 20);
    c.max_iters = 1;
    let out = run(&p, &c, PriceModel::zeros(3, 1)).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.termination, Termination::MaxIters);
    assert_eq!(out.history[0].k, 0);
    assert_eq!(*out.policy_model, PriceModel::zeros(3, 1));
}

#[test]
fn resuming_past_the_budget_is_rejected() {
    let p = system(2);
    let mut c = config(&p, 5);
    c.max_iters = 2;
    assert!(run_with(&p, &c, PriceModel::zeros(2, 1), 2, |_, _| Ok(())).is_err());
}

#[test]
fn fixed_point_stops_at_once() {
    // A lone thermal unit facing a constant demand of 4 clears at lambda = -9.
    let stages = vec![NoiseStage::dirac(vec![4.0]); 4];
    let p = validate(
        ProblemSpec::with_demand(vec![thermal(8.0).build(3)], NoiseModel::new(stages), 0)
            .with_slack(0),
    )
    .unwrap();
    let mut c = DadpConfig::uniform(&p, 0.5, 2, 17);
    c.samples = 10;
    let out = run(&p, &c, PriceModel::constant(3, vec![-9.0])).unwrap();
    assert_eq!(out.termination, Termination::Tolerance);
    let it = &out.history[0];
    assert!(it.delta_lambda < 1e-12);
    // 4^2 + 4 per step, and the dual equals the primal.
    assert!((it.dual.mean - 60.0).abs() < 1e-9);
    assert!((it.primal.as_ref().unwrap().value.mean - 60.0).abs() < 1e-9);
}

#[test]
fn iterations_are_reproducible() {
    let p = system(2);
    let mut c = config(&p, 30);
    c.max_iters = 3;
    c.seed = 77;
    let a = run(&p, &c, PriceModel::zeros(2, 1)).unwrap();
    let b = run(&p, &c, PriceModel::zeros(2, 1)).unwrap();
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(
            (x.dual, &x.model, x.delta_lambda),
            (y.dual, &y.model, y.delta_lambda)
        );
    }
    assert_eq!(a.next_model, b.next_model);
}

#[test]
fn weak_duality_on_a_small_system() {
    let p = system(3);
    let mut c = config(&p, 200);
    c.max_iters = 8;
    let out = run(&p, &c, PriceModel::zeros(3, 1)).unwrap();
    for it in &out.history {
        let primal = it.primal.as_ref().unwrap();
        assert!(it.dual.mean <= primal.value.mean + 3.0 * it.dual.combined_error(&primal.value));
    }
}

#[test]
fn closed_form_prices_clear_the_market() {
    // alpha = 0: no terminal value, lambda_t = -d_t / sum(1/c) in the dual sign.
    let stage = NoiseStage::uniform(vec![vec![2.0, 0.0, 0.0], vec![4.0, 0.0, 0.0]]);
    let spec = QuadraticSpec {
        c: vec![1.0, 1.0],
        gamma: vec![0.0, 0.0],
        x0: vec![10.0, 10.0],
        noise: NoiseModel::new(vec![stage; 4]),
    };
    let p = validate(spec.problem(&[(-10.0, 30.0); 2], &[(0.0, 4.0); 2]).unwrap()).unwrap();
    let mut model = PriceModel::zeros(3, 1);
    for s in &mut model.stages {
        s.beta = vec![-0.5];
    }
    let model = Arc::new(model);
    let c = DadpConfig::uniform(&p, 0.5, 41, 9);
    let sols = solve_subproblems(&p, &model, &c).unwrap();
    let paths = iteration_paths(&p.noise, 5, 0, 50);
    for rec in simulate_iterate(&p, &sols, &model, &paths).unwrap() {
        for r in &rec.residuals {
            assert_eq!(r[0], 0.0);
        }
    }
}

#[test]
fn settings_are_checked() {
    let p = system(2);
    let good = config(&p, 5);
    assert!(good.check(&p).is_ok());
    let mut c = good.clone();
    c.step_sizes = vec![0.1];
    assert!(c.check(&p).is_err());
    let mut c = good.clone();
    c.samples = 0;
    assert!(c.check(&p).is_err());
    let mut c = good.clone();
    c.lambda_grid_size = 1;
    assert!(c.check(&p).is_err());
    let mut c = good;
    c.step_sizes[1] = f64::NAN;
    assert!(c.check(&p).is_err());
}
