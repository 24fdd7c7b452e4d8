use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::context::{io_at, Failure};

pub const DIAGNOSTICS_HEADER: &str =
    "iter,dual,dual_se,primal,primal_se,viol_rms_mean,delta_lambda,regress_residual,wall_ms";

pub fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path).map_err(io_at(path))?))
}

pub fn write_all(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(io_at(path))
}

/// Shortest round-trip form (exponent notation for tiny and huge
/// magnitudes); `NaN` cells are left empty.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

pub fn finish<W: Write>(mut w: W, path: &Path) -> Result<(), Failure> {
    w.flush().map_err(io_at(path))
}
