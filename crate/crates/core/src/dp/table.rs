//! Flat CSV tables of value functions and policies.
//!
//! One row per `(t, class, node)`:
//! `t,class,i0,..,i{D-1},value,u0,..,u{m-1}` where `D` is the largest grid
//! dimension over time. Unused index cells and the controls of `t = T` (and
//! of infeasible nodes) are left empty. Values use the shortest round-trip
//! decimal form, `inf` for `+inf`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use super::{FeedbackPolicy, Grid, ValueFunction};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn write_value_table<S: Scalar, W: Write>(
    mut w: W,
    values: &[ValueFunction<S>],
    policy: Option<&FeedbackPolicy<S>>,
) -> Result<()> {
    let dim = values.iter().map(|v| v.grid.dim()).max().unwrap_or(0);
    let m = policy
        .and_then(|p| p.stages.first())
        .map_or(0, |s| s.control_dim);
    let mut header = vec!["t".to_string(), "class".to_string()];
    header.extend((0..dim).map(|d| format!("i{d}")));
    header.push("value".into());
    header.extend((0..m).map(|j| format!("u{j}")));
    writeln!(w, "{}", header.join(","))?;

    let mut line = String::new();
    for v in values {
        let nodes = v.grid.len();
        for class in 0..v.classes {
            for node in 0..nodes {
                line.clear();
                line.push_str(&format!("{},{}", v.t, class));
                let idx = v.grid.multi_index(node);
                for d in 0..dim {
                    line.push(',');
                    if let Some(i) = idx.get(d) {
                        line.push_str(&i.to_string());
                    }
                }
                line.push(',');
                line.push_str(&v.value(class, node).to_string());
                let control = policy
                    .and_then(|p| p.stages.get(v.t))
                    .and_then(|s| s.control(class, node));
                for j in 0..m {
                    line.push(',');
                    if let Some(u) = control {
                        line.push_str(&u[j].to_string());
                    }
                }
                writeln!(w, "{line}")?;
            }
        }
    }
    Ok(())
}

/// Reads a table written by [`write_value_table`] back onto known grids.
///
/// `classes[t]` is the number of observation classes stored at `t`.
pub fn read_value_table<S: Scalar, R: BufRead>(
    r: R,
    grids: &[Arc<Grid<S>>],
    classes: &[usize],
) -> Result<Vec<ValueFunction<S>>> {
    let mut values: Vec<ValueFunction<S>> = grids
        .iter()
        .zip(classes)
        .enumerate()
        .map(|(t, (g, &c))| ValueFunction {
            t,
            grid: Arc::clone(g),
            classes: c,
            values: vec![S::nan(); c * g.len()],
        })
        .collect();
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty value table".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    let dim = cols.iter().filter(|c| c.starts_with('i')).count();
    if cols.len() < 3 + dim || cols[0] != "t" || cols[1] != "class" || cols[2 + dim] != "value" {
        return Err(Error::Parse(format!(
            "unexpected value table header `{header}`"
        )));
    }
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let row = lineno + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Parse(format!(
                "row {row}: {} fields, expected {}",
                f.len(),
                cols.len()
            )));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("row {row}: `{s}`: {e}")))
        };
        let t = parse_usize(f[0])?;
        let class = parse_usize(f[1])?;
        let v = values
            .get_mut(t)
            .ok_or_else(|| Error::Parse(format!("row {row}: t={t} outside the horizon")))?;
        if class >= v.classes {
            return Err(Error::Parse(format!(
                "row {row}: class {class} out of range"
            )));
        }
        let g_dim = v.grid.dim();
        let idx = f[2..2 + g_dim]
            .iter()
            .map(|s| parse_usize(s))
            .collect::<Result<Vec<_>>>()?;
        if idx
            .iter()
            .enumerate()
            .any(|(d, &i)| i >= v.grid.axis(d).len())
        {
            return Err(Error::Parse(format!(
                "row {row}: node index {idx:?} outside the grid"
            )));
        }
        let value: f64 = f[2 + dim]
            .parse()
            .map_err(|e| Error::Parse(format!("row {row}: value `{}`: {e}", f[2 + dim])))?;
        let node = v.grid.flat_index(&idx);
        let n = v.grid.len();
        v.values[class * n + node] = S::of(value);
    }
    if let Some(v) = values.iter().find(|v| v.values.iter().any(|x| x.is_nan())) {
        return Err(Error::Parse(format!(
            "value table is missing nodes at t={}",
            v.t
        )));
    }
    Ok(values)
}
