//! Multiplier dynamics and the sample regression that projects updated
//! multiplier paths back onto them.
//!
//! The shipped family is the auto-regressive model
//!
//! ```text
//! lambda_0 = beta_0 d_0 + gamma_0
//! lambda_t = alpha_t lambda_{t-1} + beta_t d_t + gamma_t,   t = 1..T-1
//! ```
//!
//! with `alpha_t` a `dim x dim` matrix and `beta_t`, `gamma_t` vectors. The
//! demand `d_t` is the scalar demand coordinate of `xi_t` (zero when none is
//! declared).

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{least_squares_min_norm, Matrix};
use crate::model::{NoiseModel, NoisePath};
use crate::scalar::Scalar;

/// A short-memory multiplier process `lambda_t = h_t(lambda_{t-1}, d_t)`.
pub trait PriceDynamics<S: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// Number of multipliers `lambda_0..lambda_{T-1}`.
    fn horizon(&self) -> usize;

    fn initial(&self, demand: S, out: &mut [S]);

    /// `lambda_t` from `lambda_{t-1}` and `d_t`, for `t >= 1`.
    fn step(&self, t: usize, prev: &[S], demand: S, out: &mut [S]);
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceStage<S> {
    /// Row-major `dim x dim`; empty at `t = 0`.
    pub alpha: Vec<S>,
    pub beta: Vec<S>,
    pub gamma: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceModel<S> {
    pub dim: usize,
    pub stages: Vec<PriceStage<S>>,
}

impl<S: Scalar> PriceModel<S> {
    /// `lambda = 0` identically.
    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self::constant(horizon, vec![S::zero(); dim])
    }

    /// `lambda_t = c` for every `t`.
    pub fn constant(horizon: usize, c: Vec<S>) -> Self {
        let dim = c.len();
        let stages = (0..horizon)
            .map(|t| PriceStage {
                alpha: if t == 0 {
                    Vec::new()
                } else {
                    vec![S::zero(); dim * dim]
                },
                beta: vec![S::zero(); dim],
                gamma: c.clone(),
            })
            .collect();
        Self { dim, stages }
    }

    pub fn check(&self) -> Result<()> {
        for (t, s) in self.stages.iter().enumerate() {
            let alpha_len = if t == 0 { 0 } else { self.dim * self.dim };
            if s.alpha.len() != alpha_len || s.beta.len() != self.dim || s.gamma.len() != self.dim {
                return Err(Error::Dimension(format!(
                    "price stage t={t} does not match dimension {}",
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

impl<S: Scalar> PriceDynamics<S> for PriceModel<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> usize {
        self.stages.len()
    }

    fn initial(&self, demand: S, out: &mut [S]) {
        let s = &self.stages[0];
        for j in 0..self.dim {
            out[j] = s.beta[j] * demand + s.gamma[j];
        }
    }

    #[inline]
    fn step(&self, t: usize, prev: &[S], demand: S, out: &mut [S]) {
        let s = &self.stages[t];
        let d = self.dim;
        for j in 0..d {
            let mut acc = S::zero();
            for k in 0..d {
                acc += s.alpha[j * d + k] * prev[k];
            }
            out[j] = acc + s.beta[j] * demand + s.gamma[j];
        }
    }
}

fn demand_of<S: Scalar>(path: &NoisePath<S>, t: usize, coordinate: Option<usize>) -> S {
    coordinate.map_or(S::zero(), |c| path.realizations[t][c])
}

/// Unrolls the dynamics along a noise path: `lambda_0..lambda_{T-1}`.
pub fn propagate<S: Scalar, P: PriceDynamics<S> + ?Sized>(
    model: &P,
    path: &NoisePath<S>,
    demand_coordinate: Option<usize>,
) -> Vec<Vec<S>> {
    let horizon = model.horizon();
    let mut out = Vec::with_capacity(horizon);
    let mut cur = vec![S::zero(); model.dim()];
    model.initial(demand_of(path, 0, demand_coordinate), &mut cur);
    out.push(cur.clone());
    for t in 1..horizon {
        let mut next = vec![S::zero(); model.dim()];
        model.step(t, &cur, demand_of(path, t, demand_coordinate), &mut next);
        out.push(next.clone());
        cur = next;
    }
    out
}

/// Multiplier paths paired index-by-index with their noise paths.
#[derive(Clone, Debug, PartialEq)]
pub struct PricePathSamples<S> {
    /// `paths[sample][t][component]`.
    pub paths: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> PricePathSamples<S> {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

pub fn propagate_all<S: Scalar, P: PriceDynamics<S> + ?Sized>(
    model: &P,
    paths: &[NoisePath<S>],
    demand_coordinate: Option<usize>,
) -> PricePathSamples<S> {
    PricePathSamples {
        paths: paths
            .par_iter()
            .map(|p| propagate(model, p, demand_coordinate))
            .collect(),
    }
}

/// Per-`t`, per-component interval hull of the reachable multipliers,
/// widened by `margin` times its width on each side.
///
/// A degenerate interval is widened by `margin * max(|c|, 1)` instead so the
/// result always has positive width.
pub fn support_range<S: Scalar>(
    model: &PriceModel<S>,
    noise: &NoiseModel<S>,
    demand_coordinate: Option<usize>,
    margin: S,
) -> Vec<Vec<(S, S)>> {
    let demand_range = |t: usize| match demand_coordinate {
        Some(c) => noise.stage(t).coordinate_range(c),
        None => (S::zero(), S::zero()),
    };
    let scale = |a: S, (lo, hi): (S, S)| {
        let (p, q) = (a * lo, a * hi);
        (p.min(q), p.max(q))
    };
    let d = model.dim;
    let mut raw: Vec<Vec<(S, S)>> = Vec::with_capacity(model.stages.len());
    for (t, s) in model.stages.iter().enumerate() {
        let dr = demand_range(t);
        let hull = (0..d)
            .map(|j| {
                let (blo, bhi) = scale(s.beta[j], dr);
                let mut lo = blo + s.gamma[j];
                let mut hi = bhi + s.gamma[j];
                if t > 0 {
                    for k in 0..d {
                        let (plo, phi) = scale(s.alpha[j * d + k], raw[t - 1][k]);
                        lo += plo;
                        hi += phi;
                    }
                }
                (lo, hi)
            })
            .collect();
        raw.push(hull);
    }
    raw.into_iter()
        .map(|hull| {
            hull.into_iter()
                .map(|(lo, hi)| {
                    let w = hi - lo;
                    let pad = if w > S::zero() {
                        margin * w
                    } else {
                        margin * lo.abs().max(S::one())
                    };
                    let pad = if pad > S::zero() { pad } else { S::of(1e-6) };
                    (lo - pad, hi + pad)
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regression<S> {
    pub model: PriceModel<S>,
    /// `sum_t sum_sample |mu_t - target_t|^2` of the fitted paths.
    pub residual: S,
    /// Stages whose least-squares problem was rank deficient.
    pub rank_deficient: Vec<usize>,
}

/// Sequential least-squares projection of target paths onto the AR family.
///
/// `(beta_0, gamma_0)` are fitted on the `t = 0` targets; each later stage
/// regresses its targets on the already fitted `mu_{t-1}`, `d_t` and a
/// constant. Rank-deficient stages take the minimum-norm solution.
pub fn regress<S: Scalar>(
    targets: &PricePathSamples<S>,
    paths: &[NoisePath<S>],
    demand_coordinate: Option<usize>,
) -> Result<Regression<S>> {
    let s = targets.len();
    if s == 0 {
        return Err(Error::Invalid(
            "regression needs at least one sample".into(),
        ));
    }
    if paths.len() != s {
        return Err(Error::Dimension(format!(
            "{s} target paths but {} noise paths",
            paths.len()
        )));
    }
    let horizon = targets.paths[0].len();
    let dim = targets.paths[0].first().map_or(0, Vec::len);
    if targets
        .paths
        .iter()
        .any(|p| p.len() != horizon || p.iter().any(|l| l.len() != dim))
    {
        return Err(Error::Dimension(
            "target paths have inconsistent shapes".into(),
        ));
    }

    let mut stages = Vec::with_capacity(horizon);
    let mut fitted: Vec<Vec<S>> = vec![vec![S::zero(); dim]; s];
    let mut residual = S::zero();
    let mut rank_deficient = Vec::new();
    for t in 0..horizon {
        let p = if t == 0 { 2 } else { dim + 2 };
        let mut design = Matrix::zeros(s, p);
        for (row, path) in paths.iter().enumerate() {
            let mut c = 0;
            if t > 0 {
                for k in 0..dim {
                    design.set(row, c, fitted[row][k]);
                    c += 1;
                }
            }
            design.set(row, c, demand_of(path, t, demand_coordinate));
            design.set(row, c + 1, S::one());
        }
        let mut stage = PriceStage {
            alpha: if t == 0 {
                Vec::new()
            } else {
                vec![S::zero(); dim * dim]
            },
            beta: vec![S::zero(); dim],
            gamma: vec![S::zero(); dim],
        };
        let mut deficient = false;
        for j in 0..dim {
            let y: Vec<S> = targets.paths.iter().map(|p| p[t][j]).collect();
            let fit = least_squares_min_norm(&design, &y);
            deficient |= fit.rank_deficient();
            let off = if t == 0 { 0 } else { dim };
            if t > 0 {
                stage.alpha[j * dim..(j + 1) * dim].copy_from_slice(&fit.coef[..dim]);
            }
            stage.beta[j] = fit.coef[off];
            stage.gamma[j] = fit.coef[off + 1];
        }
        if deficient {
            rank_deficient.push(t);
        }
        let mut next = vec![vec![S::zero(); dim]; s];
        for (row, path) in paths.iter().enumerate() {
            let d = demand_of(path, t, demand_coordinate);
            for j in 0..dim {
                let mut v = stage.beta[j] * d + stage.gamma[j];
                if t > 0 {
                    for k in 0..dim {
                        v += stage.alpha[j * dim + k] * fitted[row][k];
                    }
                }
                next[row][j] = v;
                let e = v - targets.paths[row][t][j];
                residual += e * e;
            }
        }
        fitted = next;
        stages.push(stage);
    }
    Ok(Regression {
        model: PriceModel { dim, stages },
        residual,
        rank_deficient,
    })
}

/// Root mean square of `a - b` over samples, times and components.
pub fn rms_difference<S: Scalar>(a: &PricePathSamples<S>, b: &PricePathSamples<S>) -> S {
    let mut acc = S::zero();
    let mut n = 0usize;
    for (pa, pb) in a.paths.iter().zip(&b.paths) {
        for (la, lb) in pa.iter().zip(pb) {
            for (x, y) in la.iter().zip(lb) {
                acc += (*x - *y) * (*x - *y);
                n += 1;
            }
        }
    }
    if n == 0 {
        S::zero()
    } else {
        (acc / S::of(n as f64)).sqrt()
    }
}

fn join<S: Scalar>(v: &[S]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

/// CSV `t,alpha,beta,gamma`; vector and matrix fields list their
/// components (row-major) separated by `;`.
pub fn write_price_model<S: Scalar, W: Write>(mut w: W, model: &PriceModel<S>) -> Result<()> {
    writeln!(w, "t,alpha,beta,gamma")?;
    for (t, s) in model.stages.iter().enumerate() {
        writeln!(
            w,
            "{t},{},{},{}",
            join(&s.alpha),
            join(&s.beta),
            join(&s.gamma)
        )?;
    }
    Ok(())
}

pub fn read_price_model<S: Scalar, R: BufRead>(r: R) -> Result<PriceModel<S>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty price model".into()))??;
    if header.trim() != "t,alpha,beta,gamma" {
        return Err(Error::Parse(format!(
            "unexpected price model header `{header}`"
        )));
    }
    let parse = |field: &str, row: usize| -> Result<Vec<S>> {
        if field.is_empty() {
            return Ok(Vec::new());
        }
        field
            .split(';')
            .map(|v| {
                v.parse::<f64>()
                    .map(S::of)
                    .map_err(|e| Error::Parse(format!("price model row {row}: `{v}`: {e}")))
            })
            .collect()
    };
    let mut stages = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row = k + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 || f[0].parse::<usize>().ok() != Some(stages.len()) {
            return Err(Error::Parse(format!("price model row {row} is malformed")));
        }
        stages.push(PriceStage {
            alpha: parse(f[1], row)?,
            beta: parse(f[2], row)?,
            gamma: parse(f[3], row)?,
        });
    }
    let dim = stages.first().map_or(0, |s| s.beta.len());
    let model = PriceModel { dim, stages };
    model.check()?;
    Ok(model)
}
