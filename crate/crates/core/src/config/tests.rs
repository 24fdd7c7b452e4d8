use super::*;

const BENCHMARK: &str = include_str!("../../../../configs/benchmark.toml");

const QUADRATIC: &str = r#"
version = 1
horizon = 2

[noise]
coordinates = ["d", "a1", "a2"]
[[noise.stage]]
atoms = [[4.0, 0.0, 0.0], [6.0, 0.0, 0.0]]
[[noise.stage]]
atoms = [[5.0, 1.0, 0.5]]
[[noise.stage]]
atoms = [[3.0, 0.0, 1.0], [7.0, 1.0, 0.0]]
weights = [0.25, 0.75]

[quadratic]
c = [1.0, 2.0]
gamma = [0.5, 1.0]
x0 = [5.0, 3.0]
state_bounds = [[0.0, 20.0], [0.0, 20.0]]
control_bounds = [[0.0, 10.0], [0.0, 10.0]]
root_atom = 1
"#;

fn key_of(e: Error) -> String {
    match e {
        Error::Config { key, .. } => key,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn benchmark_parses() {
    let cfg = Config::parse(BENCHMARK).unwrap();
    assert_eq!(cfg.horizon, 10);
    assert_eq!(cfg.units.len(), 3);
    let p = cfg.problem().unwrap();
    assert_eq!(p.horizon(), 10);
    assert_eq!(p.slack_unit, Some(2));
    crate::model::validate(p.clone()).unwrap();
    assert_eq!(p.noise.stage(0).len(), 27);
    assert_eq!(cfg.coordinates(), vec!["demand", "inflow1", "inflow2"]);
}

#[test]
fn unknown_keys_are_named() {
    let text = BENCHMARK.replace("rho = 0.1", "rho = 0.1\nrhoo = 2.0");
    assert_eq!(key_of(Config::parse(&text).unwrap_err()), "rhoo");
    let text = BENCHMARK.replace("slack = true", "slack = true\ncolour = \"red\"");
    assert_eq!(key_of(Config::parse(&text).unwrap_err()), "colour");
}

#[test]
fn bad_values_are_named() {
    let text = BENCHMARK.replace("version = 1", "version = 2");
    assert_eq!(key_of(Config::parse(&text).unwrap_err()), "version");
    let text = BENCHMARK.replace("max_iters = 100", "max_iters = 0");
    assert_eq!(key_of(Config::parse(&text).unwrap_err()), "dadp.max_iters");
    let text = BENCHMARK.replace("rho = 0.1", "rho = -1.0");
    assert_eq!(key_of(Config::parse(&text).unwrap_err()), "dadp.rho");
    let text = BENCHMARK.replace("name = \"hydro2\"", "name = \"hydro1\"");
    assert_eq!(key_of(Config::parse(&text).unwrap_err()), "unit[1].name");
    let text = BENCHMARK.replace("inflow = \"inflow2\"", "inflow = \"rain\"");
    let cfg = Config::parse(&text).unwrap();
    assert_eq!(key_of(cfg.problem().unwrap_err()), "unit[1].storage.inflow");
    let text = BENCHMARK.replace("rho = 0.1", "rho = 0.1\nstep_sizes = [0.1, 0.2]");
    assert_eq!(key_of(Config::parse(&text).unwrap_err()), "dadp.step_sizes");
}

#[test]
fn round_trips_through_toml() {
    for text in [BENCHMARK, QUADRATIC] {
        let cfg = Config::parse(text).unwrap();
        assert_eq!(Config::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn generated_noise_is_a_product_grid() {
    let cfg = Config::parse(BENCHMARK).unwrap();
    let noise = cfg.noise_model().unwrap();
    assert_eq!(noise.stages.len(), 11);
    let s0 = noise.stage(0);
    for w in &s0.weights {
        assert!((w - 1.0 / 27.0).abs() < 1e-15);
    }
    assert_eq!(s0.atoms[0], vec![8.0, 0.5, 0.5]);
    assert_eq!(s0.atoms[26], vec![12.0, 1.5, 1.5]);
    // Demand at t=3 sits at the crest of the seasonal profile.
    assert!((noise.stage(3).atoms[13][0] - 12.0).abs() < 1e-12);
    assert!((noise.stage(3).atoms[0][0] - 10.0).abs() < 1e-12);
}

#[test]
fn component_floors_and_lists() {
    let text = r#"
version = 1
horizon = 1
[noise]
demand = "d"
[[noise.component]]
name = "d"
mean = [1.0, 3.0]
spread = 2.0
atoms = 2
floor = 0.0
[[unit]]
name = "g"
control = [0.0, 5.0]
slack = true
"#;
    let noise = Config::parse(text).unwrap().noise_model().unwrap();
    assert_eq!(noise.stage(0).atoms, vec![vec![0.0], vec![3.0]]);
    assert_eq!(noise.stage(1).atoms, vec![vec![1.0], vec![5.0]]);
    let short = text.replace("horizon = 1", "horizon = 2");
    let cfg = Config::parse(&short).unwrap();
    assert_eq!(
        key_of(cfg.noise_model().unwrap_err()),
        "noise.component[0].mean"
    );
}

#[test]
fn unit_overrides_reach_the_solvers() {
    let cfg = Config::parse(BENCHMARK).unwrap();
    let p = cfg.problem().unwrap();
    let joint = cfg.joint_options(&p);
    assert_eq!(joint.grid_points, vec![vec![41], vec![41], vec![]]);
    assert_eq!(joint.mesh_points, vec![vec![13], vec![13], vec![161]]);
    let dadp = cfg.dadp_config(&p);
    assert_eq!(dadp.step_sizes, vec![0.1; 10]);
    assert_eq!(dadp.mesh_points[2], vec![161]);
    assert_eq!(dadp.seed, 2024);
}

#[test]
fn quadratic_instances() {
    let cfg = Config::parse(QUADRATIC).unwrap();
    let spec = cfg.quadratic_spec().unwrap();
    assert_eq!(spec.c, vec![1.0, 2.0]);
    assert_eq!(spec.noise.stage(2).weights, vec![0.25, 0.75]);
    assert_eq!(spec.noise.stage(0).weights, vec![0.5, 0.5]);
    assert_eq!(cfg.quadratic.as_ref().unwrap().root_atom, 1);
    let p = cfg.problem().unwrap();
    assert_eq!(p.subsystems.len(), 2);
    assert_eq!(p.slack_unit, None);
    assert_eq!(
        key_of(
            Config::parse(BENCHMARK)
                .unwrap()
                .quadratic_spec()
                .unwrap_err()
        ),
        "quadratic"
    );
    let bad = QUADRATIC.replace("x0 = [5.0, 3.0]", "x0 = [5.0]");
    assert_eq!(
        key_of(Config::parse(&bad).unwrap().quadratic_spec().unwrap_err()),
        "quadratic.x0"
    );
    let bad = QUADRATIC.replace("root_atom = 1", "root_atom = 2");
    assert_eq!(
        key_of(Config::parse(&bad).unwrap().quadratic_spec().unwrap_err()),
        "quadratic.root_atom"
    );
    let bad = QUADRATIC.replace("[5.0, 1.0, 0.5]", "[5.0, 1.0]");
    assert_eq!(
        key_of(Config::parse(&bad).unwrap().noise_model().unwrap_err()),
        "noise.stage[1].atoms"
    );
}

#[test]
fn units_and_quadratic_are_exclusive() {
    let both = format!("{QUADRATIC}\n[[unit]]\nname = \"x\"\ncontrol = [0.0, 1.0]\n");
    assert_eq!(key_of(Config::parse(&both).unwrap_err()), "unit");
    let neither = QUADRATIC.split("[quadratic]").next().unwrap();
    assert_eq!(key_of(Config::parse(neither).unwrap_err()), "unit");
}
