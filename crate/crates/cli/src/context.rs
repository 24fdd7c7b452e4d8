use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use dadp_core::config::{Config, DadpSection, JointConfig, SimulateConfig};
use dadp_core::model::validate;
use dadp_core::{Error, Validated};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Common;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_HYPOTHESIS: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_SOLVER,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Validation(_)
            | Error::Config { .. }
            | Error::Dimension(_)
            | Error::DimensionCap { .. }
            | Error::TreeTooLarge { .. }
            | Error::Invalid(_)
            | Error::Parse(_)
            | Error::Io(_) => EXIT_VALIDATION,
            Error::Hypothesis(_) => EXIT_HYPOTHESIS,
            Error::OffGrid { .. }
            | Error::InfeasibleStart
            | Error::NoAdmissibleControl { .. }
            | Error::Singular(_)
            | Error::PrimalUndefined(_)
            | Error::Simulation { .. } => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Wraps an I/O error with the path it concerns.
pub fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::usage(format!("{}: {e}", path.display()))
}

pub struct Context {
    pub common: Common,
    pub config: Config,
    pub config_path: PathBuf,
}

impl Context {
    pub fn load(common: &Common) -> Result<Self, Failure> {
        let path = common
            .config
            .clone()
            .ok_or_else(|| Failure::usage("--config is required"))?;
        let text = fs::read_to_string(&path).map_err(io_at(&path))?;
        let mut config = Config::parse(&text).map_err(|e| {
            let f = Failure::from(e);
            Failure::usage(format!("{}: {}", path.display(), f.message))
        })?;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(k) = common.max_iters {
            if k == 0 {
                return Err(Failure::usage("--max-iters must be at least 1"));
            }
            config.dadp.max_iters = k;
        }
        Ok(Self {
            common: common.clone(),
            config,
            config_path: path,
        })
    }

    pub fn problem(&self) -> Result<Validated, Failure> {
        Ok(validate(self.config.problem()?)?)
    }

    pub fn out(&self, sub: &str) -> Result<PathBuf, Failure> {
        let dir = self.common.out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        Ok(dir)
    }

    /// The problem part of the config: everything but solver sections and seed.
    fn problem_text(&self) -> String {
        let mut c = self.config.clone();
        c.seed = 0;
        c.joint = JointConfig::default();
        c.dadp = DadpSection::default();
        c.simulate = SimulateConfig::default();
        c.to_toml()
    }

    pub fn joint_hash(&self) -> String {
        let joint = toml_of(&self.config.joint);
        digest(&[&self.problem_text(), &joint])
    }

    /// Identifies the problem and decomposition settings of a run;
    /// `max_iters` and `samples` are left out and checked separately.
    pub fn dadp_hash(&self) -> String {
        let mut d = self.config.dadp.clone();
        d.max_iters = 0;
        d.samples = 0;
        digest(&[
            &self.problem_text(),
            &toml_of(&d),
            &self.config.seed.to_string(),
        ])
    }

    pub fn wall_ms(&self, ms: u128) -> u128 {
        if self.common.no_wall_time {
            0
        } else {
            ms
        }
    }
}

fn toml_of<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("section serializes")
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config_path: String,
    pub seed: u64,
    pub version: String,
    pub subcommand: String,
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
}

pub fn now() -> DateTime<Utc> {
    Utc::now()
}

pub fn write_manifest(
    ctx: &Context,
    dir: &Path,
    subcommand: &str,
    hash: String,
    outputs: &[PathBuf],
    started: DateTime<Utc>,
) -> Result<(), Failure> {
    let m = RunManifest {
        config_hash: hash,
        config_path: ctx.config_path.display().to_string(),
        seed: ctx.config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: subcommand.to_string(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        started: started.to_rfc3339_opts(SecondsFormat::Millis, true),
        finished: now().to_rfc3339_opts(SecondsFormat::Millis, true),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_at(&path))
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, Failure> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_at(&path))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

pub fn check_hash(kind: &str, dir: &Path, found: &str, expected: &str) -> Result<(), Failure> {
    if found == expected {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "{kind} artifacts in {} were produced from a different configuration (hash {found}, expected {expected})",
            dir.display()
        )))
    }
}
