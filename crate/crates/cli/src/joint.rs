use dadp_core::dp::joint_solve;
use dadp_core::dp::table::write_value_table;
use serde::Serialize;

use crate::context::{now, write_manifest, Context, Failure};
use crate::output::{create, finish, write_all};

#[derive(Serialize)]
struct Summary {
    optimum: f64,
    horizon: usize,
    grid_nodes: Vec<usize>,
    observation_classes: Vec<usize>,
}

pub fn run(ctx: &Context) -> Result<(), Failure> {
    let started = now();
    let problem = ctx.problem()?;
    let options = ctx.config.joint_options(&problem);
    let sol = joint_solve(&problem, &options)?;
    let dir = ctx.out("joint")?;

    let values = dir.join("values.csv");
    let mut w = create(&values)?;
    write_value_table(&mut w, &sol.values, Some(&sol.policy))?;
    finish(w, &values)?;

    let summary = dir.join("summary.json");
    let s = Summary {
        optimum: sol.optimum,
        horizon: problem.horizon(),
        grid_nodes: sol.grids.iter().map(|g| g.len()).collect(),
        observation_classes: sol.values.iter().map(|v| v.classes).collect(),
    };
    write_all(
        &summary,
        &(serde_json::to_string_pretty(&s).expect("summary serializes") + "\n"),
    )?;
    write_manifest(
        ctx,
        &dir,
        "solve-joint",
        ctx.joint_hash(),
        &[values, summary],
        started,
    )?;
    println!("optimum {}", sol.optimum);
    Ok(())
}
