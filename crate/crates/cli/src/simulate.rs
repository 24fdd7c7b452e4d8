use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use dadp_core::dadp::{iteration_paths, restore, simulate_iterate, solve_subproblems, Estimate};
use dadp_core::model::derive_seed;
use serde::Serialize;

use crate::context::{io_at, now, write_manifest, Context, Failure};
use crate::dadp::checkpoint;
use crate::output::{create, finish, num, opt, write_all};

/// Seed stream of simulation paths.
pub const SIM_STREAM: u64 = 0x5349_4d55;

#[derive(Serialize)]
struct Summary {
    iterate: usize,
    paths: usize,
    mean_cost: Option<f64>,
    cost_se: Option<f64>,
    viol_rms_mean: f64,
    clamped: usize,
    reported_primal: Option<f64>,
    reported_primal_se: Option<f64>,
}

pub fn suffixed(name: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![name.to_string()]
    } else {
        (0..d).map(|j| format!("{name}{j}")).collect()
    }
}

pub fn run(ctx: &Context, source: &Path, which: &str) -> Result<(), Failure> {
    let started = now();
    let problem = ctx.problem()?;
    let config = ctx.config.dadp_config(&problem);
    let (row, model) = checkpoint(ctx, source, which)?;
    let model = Arc::new(model);
    let n = ctx.common.samples.unwrap_or(ctx.config.simulate.samples);
    let dir = ctx.out("simulate")?;
    let traj_path = dir.join("trajectories.csv");

    let units = &problem.subsystems;
    let d = problem.coupling_dim;
    let mut header = vec!["path".to_string(), "t".to_string()];
    for u in units.iter() {
        header.extend(suffixed(&format!("x_{}", u.name), u.state_dim));
    }
    for u in units.iter() {
        header.extend(suffixed(&format!("u_{}", u.name), u.control_dim));
    }
    header.extend(suffixed("lambda", d));
    header.extend(suffixed("residual", d));
    header.push("cost".into());
    let mut w = create(&traj_path)?;
    writeln!(w, "{}", header.join(",")).map_err(io_at(&traj_path))?;

    let mut costs = Vec::with_capacity(n);
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut clamped = 0;
    if n > 0 {
        let solutions = solve_subproblems(&problem, &model, &config)?;
        let paths = iteration_paths(
            &problem.noise,
            derive_seed(ctx.config.seed, &[SIM_STREAM]),
            0,
            n,
        );
        let records = simulate_iterate(&problem, &solutions, &model, &paths)?;
        let horizon = problem.horizon();
        for (s, (path, rec)) in paths.iter().zip(&records).enumerate() {
            let r = restore(&problem, path, rec, problem.slack_unit)?;
            costs.push(r.total_cost());
            clamped += r.clamped;
            let traj = |i: usize| match (&r.slack, problem.slack_unit) {
                (Some(tr), Some(k)) if k == i => tr,
                _ => &rec.units[i],
            };
            for t in 0..=horizon {
                let mut cells = vec![s.to_string(), t.to_string()];
                for i in 0..units.len() {
                    cells.extend(traj(i).states[t].iter().map(|v| num(*v)));
                }
                if t < horizon {
                    for i in 0..units.len() {
                        cells.extend(traj(i).controls[t].iter().map(|v| num(*v)));
                    }
                    cells.extend(rec.lambda[t].iter().map(|v| num(*v)));
                    cells.extend(r.residuals[t].iter().map(|v| num(*v)));
                    cells.push(num(r.stage_costs[t]));
                    for v in &r.residuals[t] {
                        sq += v * v;
                    }
                    count += 1;
                } else {
                    let blanks = units.iter().map(|u| u.control_dim).sum::<usize>() + 2 * d;
                    cells.extend(std::iter::repeat_n(String::new(), blanks));
                    cells.push(num(r.terminal_cost));
                }
                writeln!(w, "{}", cells.join(",")).map_err(io_at(&traj_path))?;
            }
        }
    }
    finish(w, &traj_path)?;

    let est = (!costs.is_empty()).then(|| Estimate::from_samples(&costs));
    let viol = if count > 0 {
        (sq / count as f64).sqrt()
    } else {
        0.0
    };
    let summary = Summary {
        iterate: row.k,
        paths: n,
        mean_cost: est.map(|e| e.mean),
        cost_se: est.map(|e| e.std_error),
        viol_rms_mean: viol,
        clamped,
        reported_primal: row.primal,
        reported_primal_se: row.primal_se,
    };
    let summary_path = dir.join("summary.json");
    write_all(
        &summary_path,
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    write_manifest(
        ctx,
        &dir,
        "simulate",
        ctx.dadp_hash(),
        &[traj_path, summary_path],
        started,
    )?;
    println!(
        "iterate {} paths {n} mean_cost {} se {} viol_rms {} clamped {clamped}",
        row.k,
        opt(summary.mean_cost),
        opt(summary.cost_se),
        num(viol)
    );
    Ok(())
}
