use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use dadp_core::dadp::iteration_paths;
use dadp_core::dp::table::read_value_table;
use dadp_core::dp::{simulate_policy, JointModel, StagewiseProblem};
use dadp_core::model::derive_seed;
use dadp_core::prices::propagate;
use serde::Serialize;

use crate::context::{check_hash, io_at, now, read_manifest, write_manifest, Context, Failure};
use crate::dadp::checkpoint;
use crate::output::{create, finish, num, write_all};

/// Seed stream of comparison paths.
pub const PRICE_STREAM: u64 = 0x5052_4943;

#[derive(Serialize)]
struct Summary {
    iterate: usize,
    paths: usize,
    /// RMS of `lambda_dadp - lambda_dp` over paths and interior steps.
    rms_gap: f64,
    /// RMS of `lambda_dp` over the same cells.
    rms_price: f64,
    relative_gap: f64,
    /// Cells per `t` where some joint state lies within one grid step of a bound.
    near_bound: Vec<usize>,
    /// Cells per `t` whose finite difference left the feasible set.
    undefined: Vec<usize>,
}

pub fn run(ctx: &Context, dadp_dir: &Path, joint_dir: &Path, which: &str) -> Result<(), Failure> {
    let started = now();
    let problem = ctx.problem()?;
    if problem.coupling_dim != 1 {
        return Err(Failure::usage(
            "price-compare handles a scalar coupling only",
        ));
    }
    let options = ctx.config.joint_options(&problem);
    let manifest = read_manifest(joint_dir)?;
    check_hash("joint", joint_dir, &manifest.config_hash, &ctx.joint_hash())?;
    let model = JointModel::new(&problem, &options)?;
    let grids = model.grids(&options)?;
    let classes: Vec<usize> = (0..=problem.horizon())
        .map(|t| model.observation(t).classes)
        .collect();
    let values_path = joint_dir.join("values.csv");
    let f = File::open(&values_path).map_err(io_at(&values_path))?;
    let values = read_value_table(BufReader::new(f), &grids, &classes)?;

    let (row, prices) = checkpoint(ctx, dadp_dir, which)?;
    let n = ctx.common.samples.unwrap_or(ctx.config.simulate.samples);
    let paths = iteration_paths(
        &problem.noise,
        derive_seed(ctx.config.seed, &[PRICE_STREAM]),
        0,
        n,
    );
    let horizon = problem.horizon();
    let h = ctx.config.joint.price_step;

    let dir = ctx.out("compare")?;
    let csv_path = dir.join("prices.csv");
    let mut w = create(&csv_path)?;
    writeln!(w, "path,t,lambda_dadp,lambda_dp").map_err(io_at(&csv_path))?;
    let mut gap = 0.0;
    let mut mag = 0.0;
    let mut cells = 0usize;
    let mut near_bound = vec![0; horizon];
    let mut undefined = vec![0; horizon];
    for (s, path) in paths.iter().enumerate() {
        let lambda = propagate(&prices, path, problem.demand_coordinate);
        let sim = simulate_policy(&model, &values, path)?;
        for t in 0..horizon {
            let class = model.observation(t).class_of_atom[path.atoms[t]];
            let dp = model.marginal_price(&values[t + 1], t, &sim.states[t], class, h)?[0];
            let x = &sim.states[t];
            let near = (0..x.len()).any(|k| {
                let axis = grids[t].axis(k);
                let step = axis[1] - axis[0];
                x[k] - axis[0] < step || axis[axis.len() - 1] - x[k] < step
            });
            if near {
                near_bound[t] += 1;
            }
            if !dp.is_finite() {
                undefined[t] += 1;
            } else if t > 0 && t + 1 < horizon {
                gap += (lambda[t][0] - dp).powi(2);
                mag += dp * dp;
                cells += 1;
            }
            writeln!(w, "{s},{t},{},{}", num(lambda[t][0]), num(dp)).map_err(io_at(&csv_path))?;
        }
    }
    finish(w, &csv_path)?;

    let rms_gap = (gap / cells.max(1) as f64).sqrt();
    let rms_price = (mag / cells.max(1) as f64).sqrt();
    let summary = Summary {
        iterate: row.k,
        paths: n,
        rms_gap,
        rms_price,
        relative_gap: rms_gap / rms_price,
        near_bound,
        undefined,
    };
    let summary_path = dir.join("summary.json");
    write_all(
        &summary_path,
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    write_manifest(
        ctx,
        &dir,
        "price-compare",
        ctx.dadp_hash(),
        &[csv_path, summary_path],
        started,
    )?;
    println!(
        "iterate {} paths {n} rms_gap {} rms_price {} relative {}",
        row.k, summary.rms_gap, summary.rms_price, summary.relative_gap
    );
    Ok(())
}
