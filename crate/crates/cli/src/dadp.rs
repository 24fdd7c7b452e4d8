use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use dadp_core::config::InitialModel;
use dadp_core::dadp::{iteration_paths, run_with, DadpIterate, Termination};
use dadp_core::model::derive_seed;
use dadp_core::prices::{read_price_model, write_price_model, PriceModel};
use dadp_core::quadratic::warm_start;
use dadp_core::{Error, Prices};
use serde::{Deserialize, Serialize};

use crate::context::{io_at, now, read_manifest, write_manifest, Context, Failure};
use crate::output::{create, finish, num, opt, DIAGNOSTICS_HEADER};

/// Seed stream of the warm-start regression paths.
const WARM_STREAM: u64 = 0x5741_524d;

#[derive(Debug, Serialize, Deserialize)]
struct RunState {
    config_hash: String,
    samples: usize,
    /// Iterations whose rows and next model are on disk.
    completed: usize,
    /// Set once the stopping rule fired.
    converged: bool,
}

fn model_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("model_{k:04}.csv"))
}

pub fn write_model(path: &Path, model: &Prices) -> Result<(), Failure> {
    let mut w = create(path)?;
    write_price_model(&mut w, model)?;
    finish(w, path)
}

pub fn read_model(path: &Path) -> Result<Prices, Failure> {
    let f = fs::File::open(path).map_err(io_at(path))?;
    Ok(read_price_model(BufReader::new(f))?)
}

fn diagnostics_row(it: &DadpIterate<f64>, wall_ms: u128) -> String {
    let (p, pse) = match &it.primal {
        Some(p) => (Some(p.value.mean), Some(p.value.std_error)),
        None => (None, None),
    };
    format!(
        "{},{},{},{},{},{},{},{},{}",
        it.k,
        num(it.dual.mean),
        num(it.dual.std_error),
        opt(p),
        opt(pse),
        num(it.violation_rms_mean()),
        num(it.delta_lambda),
        num(it.regression_residual),
        wall_ms
    )
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_state(dir: &Path, state: &RunState) -> Result<(), Failure> {
    let path = dir.join("state.json");
    let text = serde_json::to_string_pretty(state).expect("state serializes");
    fs::write(&path, text + "\n").map_err(io_at(&path))
}

fn read_state(dir: &Path) -> Option<RunState> {
    let text = fs::read_to_string(dir.join("state.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn initial_model(
    ctx: &Context,
    problem: &dadp_core::Validated,
    samples: usize,
) -> Result<Prices, Failure> {
    match ctx.config.dadp.init {
        InitialModel::Zero => Ok(PriceModel::zeros(problem.horizon(), problem.coupling_dim)),
        InitialModel::Warm => {
            let spec = ctx.config.quadratic_spec()?;
            let paths = iteration_paths(
                &problem.noise,
                derive_seed(ctx.config.seed, &[WARM_STREAM]),
                0,
                samples,
            );
            Ok(warm_start(&spec, &paths)?.model)
        }
    }
}

pub fn run(ctx: &Context) -> Result<(), Failure> {
    let started = now();
    let problem = ctx.problem()?;
    let mut config = ctx.config.dadp_config(&problem);
    if let Some(s) = ctx.common.samples {
        config.samples = s;
    }
    config.check(&problem)?;
    let dir = ctx.out("dadp")?;
    fs::create_dir_all(dir.join("checkpoints")).map_err(io_at(&dir))?;
    let hash = ctx.dadp_hash();
    let diag_path = dir.join("diagnostics.csv");
    let viol_path = dir.join("violation.csv");

    let resumed = read_state(&dir).filter(|s| s.config_hash == hash && s.samples == config.samples);
    let (start, initial, diag_rows, viol_rows) = match resumed {
        Some(state) => {
            if state.converged || state.completed >= config.max_iters {
                println!(
                    "nothing to do: {} iterations already on disk",
                    state.completed
                );
                return Ok(());
            }
            let model = read_model(&model_path(&dir, state.completed))?;
            let diag = read_lines(&diag_path)?;
            let viol = read_lines(&viol_path)?;
            let keep_v = 1 + state.completed * problem.horizon();
            if diag.len() < 1 + state.completed || viol.len() < keep_v {
                return Err(Failure::usage(format!(
                    "checkpoint in {} is incomplete",
                    dir.display()
                )));
            }
            (
                state.completed,
                model,
                diag[..1 + state.completed].to_vec(),
                viol[..keep_v].to_vec(),
            )
        }
        None => {
            let model = initial_model(ctx, &problem, config.samples)?;
            write_model(&model_path(&dir, 0), &model)?;
            (
                0,
                model,
                vec![DIAGNOSTICS_HEADER.to_string()],
                vec!["iter,t,viol_rms".to_string()],
            )
        }
    };

    let mut diag = create(&diag_path)?;
    let mut viol = create(&viol_path)?;
    for l in &diag_rows {
        writeln!(diag, "{l}").map_err(io_at(&diag_path))?;
    }
    for l in &viol_rows {
        writeln!(viol, "{l}").map_err(io_at(&viol_path))?;
    }
    diag.flush().map_err(io_at(&diag_path))?;
    viol.flush().map_err(io_at(&viol_path))?;

    let result = run_with(&problem, &config, initial, start, |it, next| {
        let io = |e: std::io::Error| Error::Io(e);
        writeln!(diag, "{}", diagnostics_row(it, ctx.wall_ms(it.wall_ms))).map_err(io)?;
        diag.flush().map_err(io)?;
        for (t, v) in it.violation_rms.iter().enumerate() {
            writeln!(viol, "{},{},{}", it.k, t, num(*v)).map_err(io)?;
        }
        viol.flush().map_err(io)?;
        let path = model_path(&dir, it.k + 1);
        let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
        write_price_model(&mut w, next)?;
        w.flush()?;
        let converged = it.delta_lambda < config.stop_tol;
        let state = RunState {
            config_hash: hash.clone(),
            samples: config.samples,
            completed: it.k + 1,
            converged,
        };
        let text = serde_json::to_string_pretty(&state).expect("state serializes");
        fs::write(dir.join("state.json"), text + "\n")?;
        Ok(())
    })?;

    let last = result.history.last().expect("at least one iteration ran");
    let outputs = vec![
        diag_path,
        viol_path,
        dir.join("checkpoints"),
        dir.join("state.json"),
    ];
    write_manifest(ctx, &dir, "solve-dadp", hash.clone(), &outputs, started)?;
    match result.termination {
        Termination::NonFinite(reason) => {
            write_state(
                &dir,
                &RunState {
                    config_hash: hash,
                    samples: config.samples,
                    completed: last.k + 1,
                    converged: true,
                },
            )?;
            Err(Failure::solver(reason))
        }
        t => {
            println!(
                "iterations {} termination {} dual {} delta_lambda {}",
                last.k + 1,
                if t == Termination::Tolerance {
                    "tolerance"
                } else {
                    "max_iters"
                },
                last.dual.mean,
                last.delta_lambda
            );
            Ok(())
        }
    }
}

/// One diagnostics row read back.
#[derive(Clone, Debug)]
pub struct Row {
    pub k: usize,
    pub dual: f64,
    pub primal: Option<f64>,
    pub primal_se: Option<f64>,
}

pub fn read_rows(dir: &Path) -> Result<Vec<Row>, Failure> {
    let path = dir.join("diagnostics.csv");
    let lines = read_lines(&path)?;
    let bad = |i: usize| Failure::usage(format!("{}: malformed row {}", path.display(), i + 1));
    lines
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(bad(i));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad(i));
            let maybe = |s: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    float(s).map(Some)
                }
            };
            Ok(Row {
                k: f[0].parse().map_err(|_| bad(i))?,
                dual: if f[1].is_empty() {
                    f64::NAN
                } else {
                    float(f[1])?
                },
                primal: maybe(f[3])?,
                primal_se: maybe(f[4])?,
            })
        })
        .collect()
}

/// Resolves `best` (largest dual estimate), `last` or an iteration number
/// to its row and the price model its policies were computed for.
pub fn checkpoint(ctx: &Context, dir: &Path, which: &str) -> Result<(Row, Prices), Failure> {
    let manifest = read_manifest(dir)?;
    crate::context::check_hash(
        "decomposition",
        dir,
        &manifest.config_hash,
        &ctx.dadp_hash(),
    )?;
    let rows = read_rows(dir)?;
    let row = match which {
        "best" => rows
            .iter()
            .filter(|r| r.dual.is_finite())
            .fold(None::<&Row>, |b, r| match b {
                Some(b) if b.dual >= r.dual => Some(b),
                _ => Some(r),
            }),
        "last" => rows.last(),
        k => {
            let k: usize = k.parse().map_err(|_| {
                Failure::usage(format!(
                    "--iterate expects a number, `best` or `last`, got `{k}`"
                ))
            })?;
            rows.iter().find(|r| r.k == k)
        }
    }
    .ok_or_else(|| Failure::usage(format!("no iterate `{which}` in {}", dir.display())))?
    .clone();
    let model = read_model(&model_path(dir, row.k))?;
    Ok((row, model))
}
