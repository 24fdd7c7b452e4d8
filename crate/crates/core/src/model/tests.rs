use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn storage(upper: f64, initial: f64, inflow: usize, k: f64) -> Storage<f64> {
    Storage {
        lower: 0.0,
        upper,
        initial,
        inflow_coordinate: Some(inflow),
        terminal: TerminalQuadratic::linear(k),
    }
}

fn hydro(name: &str, st: Storage<f64>) -> UnitParams<f64> {
    UnitParams {
        name: name.into(),
        storage: Some(st),
        control_lower: 0.0,
        control_upper: 6.0,
        cost: LinearQuadratic {
            quadratic: 0.1,
            linear: 0.0,
        },
        coupling: 1.0,
    }
}

fn thermal() -> UnitParams<f64> {
    UnitParams {
        name: "thermal".into(),
        storage: None,
        control_lower: 0.0,
        control_upper: 40.0,
        cost: LinearQuadratic {
            quadratic: 1.0,
            linear: 1.0,
        },
        coupling: 1.0,
    }
}

fn hydro_thermal(horizon: usize) -> ProblemSpec<f64> {
    let stages = (0..=horizon)
        .map(|_| NoiseStage::uniform(vec![vec![8.0, 0.5, 1.0], vec![12.0, 1.5, 0.5]]))
        .collect();
    let units = vec![
        hydro("hydro1", storage(50.0, 20.0, 1, -7.0)).build(horizon),
        hydro("hydro2", storage(40.0, 15.0, 2, -12.0)).build(horizon),
        thermal().build(horizon),
    ];
    ProblemSpec::with_demand(units, NoiseModel::new(stages), 0).with_slack(2)
}

#[test]
fn benchmark_shape_validates() {
    let p = validate(hydro_thermal(25)).unwrap();
    assert_eq!(p.horizon(), 25);
    assert_eq!(p.state_dim(), 2);
}

#[test]
fn inverted_bounds_name_the_unit() {
    let mut p = hydro_thermal(3);
    p.subsystems[0].state_bounds[1] = Bounds::scalar(50.0, 0.0);
    let Err(Error::Validation(issues)) = validate(p) else {
        panic!("inverted bounds accepted");
    };
    assert!(issues
        .iter()
        .any(|i| i.kind == IssueKind::BoundInversion && i.location.contains("unit 1")));
}

#[test]
fn short_mass_is_reported_at_its_step() {
    let mut p = hydro_thermal(3);
    p.noise.stages[2].weights = vec![0.45, 0.45];
    let Err(Error::Validation(issues)) = validate(p) else {
        panic!("mass 0.9 accepted");
    };
    assert_eq!(issues.len(), 1);
    assert_eq!(issues[0].kind, IssueKind::ProbabilityMass);
    assert!(issues[0].location.contains("t=2"));
}

#[test]
fn every_issue_is_listed() {
    let mut p = hydro_thermal(3);
    p.subsystems[1].control_bounds[0] = Bounds::scalar(6.0, 0.0);
    p.noise.stages[1].weights = vec![0.2, 0.2];
    p.subsystems[0].initial_state = vec![60.0];
    let Err(Error::Validation(issues)) = validate(p) else {
        panic!("broken spec accepted");
    };
    let kinds: Vec<IssueKind> = issues.iter().map(|i| i.kind).collect();
    assert!(kinds.contains(&IssueKind::BoundInversion));
    assert!(kinds.contains(&IssueKind::ProbabilityMass));
    assert!(kinds.contains(&IssueKind::InitialStateOutOfBounds));
}

#[test]
fn horizon_mismatch_is_caught() {
    let mut p = hydro_thermal(3);
    p.subsystems[2] = thermal().build(4);
    let Err(Error::Validation(issues)) = validate(p) else {
        panic!("mismatched horizon accepted");
    };
    assert!(issues.iter().any(|i| i.kind == IssueKind::HorizonMismatch));
}

#[test]
fn dirac_noise_has_one_path() {
    let noise = NoiseModel::new(vec![NoiseStage::dirac(vec![3.0]); 5]);
    let a = sample_path(&noise, 1);
    let b = sample_path(&noise, 99);
    assert_eq!(a.realizations, b.realizations);
    assert_eq!(a.realizations, vec![vec![3.0]; 5]);
}

#[test]
fn same_seed_same_path() {
    let p = hydro_thermal(25);
    assert_eq!(sample_path(&p.noise, 42), sample_path(&p.noise, 42));
    assert_ne!(
        sample_path(&p.noise, 42).atoms,
        sample_path(&p.noise, 43).atoms
    );
}

#[test]
fn empirical_frequencies_match_weights() {
    let stage = NoiseStage {
        atoms: vec![vec![0.0], vec![1.0]],
        weights: vec![0.3, 0.7],
    };
    let noise = NoiseModel::new(vec![stage; 2]);
    let n = 100_000;
    let mut ones = [0usize; 2];
    for s in 0..n {
        let p = sample_path(&noise, derive_seed(5, &[s]));
        for t in 0..2 {
            ones[t] += p.atoms[t];
        }
    }
    for c in ones {
        assert!((c as f64 / n as f64 - 0.7).abs() < 0.01, "{c}");
    }
}

#[test]
fn marginals_pass_chi_square() {
    // 1% critical value of chi-square with 3 degrees of freedom.
    const CRIT: f64 = 11.345;
    let w = [0.1, 0.2, 0.3, 0.4];
    let stage = NoiseStage {
        atoms: (0..4).map(|k| vec![k as f64]).collect(),
        weights: w.to_vec(),
    };
    let noise = NoiseModel::new(vec![stage; 4]);
    let n = 20_000;
    let mut counts = [[0usize; 4]; 4];
    for s in 0..n {
        let p = sample_path(&noise, derive_seed(11, &[s]));
        for (t, &k) in p.atoms.iter().enumerate() {
            counts[t][k] += 1;
        }
    }
    for row in counts {
        let chi: f64 = row
            .iter()
            .zip(w)
            .map(|(&o, p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        assert!(chi < CRIT, "chi-square {chi}");
    }
}

#[test]
fn residual_examples() {
    let p = hydro_thermal(3);
    let states = vec![vec![10.0], vec![10.0], vec![]];
    let r = coupling_residual(
        &p,
        0,
        &states,
        &[vec![2.0], vec![3.0], vec![5.0]],
        &[10.0, 1.0, 1.0],
    )
    .unwrap();
    assert_eq!(r, vec![0.0]);
    let r = coupling_residual(
        &p,
        0,
        &states,
        &[vec![0.0], vec![0.0], vec![0.0]],
        &[0.0, 1.0, 1.0],
    )
    .unwrap();
    assert_eq!(r, vec![0.0]);
    let r = coupling_residual(
        &p,
        0,
        &states,
        &[vec![1.0], vec![1.0], vec![1.0]],
        &[4.0, 1.0, 1.0],
    )
    .unwrap();
    assert_eq!(r, vec![-1.0]);
}

#[test]
fn residual_checks_dimensions() {
    let p = hydro_thermal(3);
    assert!(matches!(
        coupling_residual(&p, 0, &[vec![1.0]], &[vec![1.0]], &[4.0, 1.0, 1.0]),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn residual_is_additive_over_unit_sets() {
    let p = hydro_thermal(3);
    let xs = vec![vec![3.0], vec![7.0], vec![]];
    let us = vec![vec![1.5], vec![2.5], vec![4.0]];
    let xi = [9.0, 1.0, 1.0];
    let total = coupling_residual(&p, 1, &xs, &us, &xi).unwrap()[0];
    let part: f64 = (0..3)
        .map(|i| p.unit_coupling(i, 1, &xs[i], &us[i])[0])
        .sum();
    assert_eq!(total, part - 9.0);
}

#[test]
fn zero_costs_give_zero() {
    let mut unit = hydro("h", storage(50.0, 10.0, 1, 0.0));
    unit.cost = LinearQuadratic {
        quadratic: 0.0,
        linear: 0.0,
    };
    let horizon = 3;
    let stages = vec![NoiseStage::dirac(vec![5.0, 1.0]); horizon + 1];
    let p = ProblemSpec::with_demand(vec![unit.build(horizon)], NoiseModel::new(stages), 0);
    let path = sample_path(&p.noise, 0);
    let traj = UnitTrajectory {
        states: vec![vec![10.0], vec![10.0], vec![10.0], vec![10.0]],
        controls: vec![vec![1.0]; 3],
    };
    assert_eq!(pathwise_cost(&p, &path, &[traj]).unwrap(), 0.0);
}

#[test]
fn linear_terminal_value() {
    let mut unit = hydro("h", storage(50.0, 10.0, 1, -7.0));
    unit.cost = LinearQuadratic {
        quadratic: 0.0,
        linear: 0.0,
    };
    let p = ProblemSpec::with_demand(
        vec![unit.build(1)],
        NoiseModel::new(vec![NoiseStage::dirac(vec![1.0, 0.0]); 2]),
        0,
    );
    let path = sample_path(&p.noise, 0);
    let traj = UnitTrajectory {
        states: vec![vec![10.0], vec![10.0]],
        controls: vec![vec![0.0]],
    };
    assert_eq!(pathwise_cost(&p, &path, &[traj]).unwrap(), -70.0);
}

fn consistent_trajectory(
    p: &ProblemSpec<f64>,
    path: &NoisePath<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<UnitTrajectory<f64>> {
    p.subsystems
        .iter()
        .map(|unit| {
            let mut x = unit.initial_state.clone();
            let mut states = vec![x.clone()];
            let mut controls = Vec::new();
            for t in 0..p.horizon() {
                let u = vec![rng.gen_range(0.0..6.0)];
                let mut next = vec![0.0; unit.state_dim];
                (unit.dynamics)(&x, &u, &path.realizations[t + 1], t, &mut next);
                controls.push(u);
                x = next;
                states.push(x.clone());
            }
            UnitTrajectory { states, controls }
        })
        .collect()
}

#[test]
fn cost_matches_term_by_term_sum() {
    let p = hydro_thermal(6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in 0..20 {
        let path = sample_path(&p.noise, s);
        let traj = consistent_trajectory(&p, &path, &mut rng);
        // Re-summed from the closed-form unit costs, not the callables.
        let mut expect = 0.0;
        for t in 0..6 {
            for (i, tr) in traj.iter().enumerate() {
                let u = tr.controls[t][0];
                expect += if i == 2 { u + u * u } else { 0.1 * u * u };
            }
        }
        expect += -7.0 * traj[0].states[6][0] - 12.0 * traj[1].states[6][0];
        let got = pathwise_cost(&p, &path, &traj).unwrap();
        assert!(
            (got - expect).abs() < 1e-9 * expect.abs().max(1.0),
            "{got} vs {expect}"
        );
    }
}

#[test]
fn cost_is_additive_over_units() {
    let p = hydro_thermal(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let path = sample_path(&p.noise, 2);
    let traj = consistent_trajectory(&p, &path, &mut rng);
    let total = pathwise_cost(&p, &path, &traj).unwrap();
    let parts: f64 = (0..3)
        .map(|i| unit_path_cost(&p.subsystems[i], i, &path, &traj[i]).unwrap())
        .sum();
    assert_eq!(total, parts);
}

#[test]
fn corrupted_trajectory_is_rejected() {
    let p = hydro_thermal(4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let path = sample_path(&p.noise, 2);
    let mut traj = consistent_trajectory(&p, &path, &mut rng);
    traj[1].states[3][0] += 1e-6;
    assert!(matches!(
        pathwise_cost(&p, &path, &traj),
        Err(Error::Invalid(_))
    ));
}

#[test]
fn affine_coupling_recovers_the_slope() {
    let mut unit = thermal();
    unit.coupling = 2.5;
    let s = unit.build(2);
    let (g0, lu) = affine_coupling(&s, &[], 0, 1).unwrap();
    assert_eq!(g0, vec![0.0]);
    assert_eq!(lu.solve(&[5.0]), vec![2.0]);
}

#[test]
fn zero_slope_slack_is_singular() {
    let mut unit = thermal();
    unit.coupling = 0.0;
    let s = unit.build(2);
    assert!(matches!(
        affine_coupling(&s, &[], 0, 1),
        Err(Error::Singular(_))
    ));
}
