use std::io::Write;

use dadp_core::quadratic::{verify_proposition, ScenarioTree, PROPOSITION_TOL};

use crate::context::{io_at, now, write_manifest, Context, Failure};
use crate::output::{create, finish, num, write_all};

pub fn run(ctx: &Context) -> Result<(), Failure> {
    let started = now();
    let spec = ctx.config.quadratic_spec()?;
    let alpha = spec.proportionality()?;
    let root = ctx.config.quadratic.as_ref().map_or(0, |q| q.root_atom);
    let tree = ScenarioTree::build_guarded(&spec.noise, root, spec.units())?;
    let report = verify_proposition(&spec, &tree)?;
    let dir = ctx.out("verify")?;

    let csv_path = dir.join("deviations.csv");
    let mut w = create(&csv_path)?;
    writeln!(w, "node,t,atoms,closed_form,kkt,deviation").map_err(io_at(&csv_path))?;
    for n in &report.nodes {
        let atoms: Vec<String> = n.atoms.iter().map(ToString::to_string).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            n.node,
            n.t,
            atoms.join(";"),
            num(n.closed_form),
            num(n.kkt),
            num(n.deviation())
        )
        .map_err(io_at(&csv_path))?;
    }
    finish(w, &csv_path)?;

    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    let text = format!(
        "{verdict}\nalpha {alpha}\nnodes {}\nmax_deviation {}\ntolerance {PROPOSITION_TOL}\nkkt_residual {}\n",
        report.nodes.len(),
        report.max_deviation,
        report.kkt_residual
    );
    let report_path = dir.join("report.txt");
    write_all(&report_path, &text)?;
    write_manifest(
        ctx,
        &dir,
        "verify-prop1",
        ctx.joint_hash(),
        &[csv_path, report_path],
        started,
    )?;
    println!(
        "{verdict} max_deviation {} kkt_residual {}",
        report.max_deviation, report.kkt_residual
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::solver(format!(
            "closed-form and KKT multipliers differ by {} (tolerance {PROPOSITION_TOL})",
            report.max_deviation
        )))
    }
}
