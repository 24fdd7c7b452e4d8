//! The decomposition loop: per-unit subproblems priced by a multiplier
//! process with AR dynamics, solved by DP on the augmented state
//! `(x^i, lambda)`, then a sample-wise gradient step on the multipliers and a
//! regression back onto the AR family.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::dp::{backward_sweep, simulate_policy, ControlMesh, FeedbackPolicy, Grid, Observation};
use crate::dp::{StagewiseProblem, ValueFunction, MAX_DIM};
use crate::error::{Error, Result};
use crate::model::{affine_coupling, derive_seed, sample_path, NoiseModel, NoisePath, ProblemSpec};
use crate::model::{UnitTrajectory, ValidatedProblem};
use crate::prices::{propagate, propagate_all, regress, rms_difference, support_range};
use crate::prices::{PriceDynamics, PriceModel, PricePathSamples};
use crate::scalar::{scaled_tol, Scalar};

const BOUND_TOL: f64 = 1e-9;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DadpConfig<S> {
    /// `rho_t` for `t = 0..T`.
    pub step_sizes: Vec<S>,
    pub samples: usize,
    pub stop_tol: S,
    pub max_iters: usize,
    /// Grid levels per price component.
    pub lambda_grid_size: usize,
    /// Relative padding of the price grids around the reachable hull.
    pub support_margin: S,
    pub seed: u64,
    /// Grid levels per unit and state component.
    pub grid_points: Vec<Vec<usize>>,
    /// Candidate count per unit and control component.
    pub mesh_points: Vec<Vec<usize>>,
}

impl<S: Scalar> DadpConfig<S> {
    /// Constant step size and uniform resolutions for every unit.
    pub fn uniform(
        problem: &ProblemSpec<S>,
        rho: S,
        grid_points: usize,
        mesh_points: usize,
    ) -> Self {
        Self {
            step_sizes: vec![rho; problem.horizon()],
            samples: 1000,
            stop_tol: S::of(1e-3),
            max_iters: 100,
            lambda_grid_size: 21,
            support_margin: S::of(0.1),
            seed: 0,
            grid_points: problem
                .subsystems
                .iter()
                .map(|u| vec![grid_points; u.state_dim])
                .collect(),
            mesh_points: problem
                .subsystems
                .iter()
                .map(|u| vec![mesh_points; u.control_dim])
                .collect(),
        }
    }

    pub fn check(&self, problem: &ProblemSpec<S>) -> Result<()> {
        let bad = |what: &str| Err(Error::Invalid(format!("decomposition settings: {what}")));
        if self.step_sizes.len() != problem.horizon() {
            return bad("one step size per time step is required");
        }
        if self
            .step_sizes
            .iter()
            .any(|r| !(*r >= S::zero()) || !r.is_finite())
        {
            return bad("step sizes must be finite and nonnegative");
        }
        if self.samples == 0 || self.max_iters == 0 {
            return bad("samples and max_iters must be at least 1");
        }
        if !(self.stop_tol > S::zero()) {
            return bad("stop_tol must be positive");
        }
        if self.lambda_grid_size < 2 {
            return bad("lambda_grid_size must be at least 2");
        }
        if !(self.support_margin >= S::zero()) {
            return bad("support_margin must be nonnegative");
        }
        if self.grid_points.len() != problem.units() || self.mesh_points.len() != problem.units() {
            return bad("grid and mesh resolutions are needed for every unit");
        }
        Ok(())
    }
}

/// Unit `i` priced by a multiplier process: state `(x^i, lambda)`, stage
/// cost `L^i + lambda . g^i`, `lambda` driven by the demand of `xi_{t+1}`.
///
/// The demand term `-lambda . d` does not depend on the unit's decisions and
/// is left to [`dual_estimate`].
pub struct Subproblem<S> {
    problem: Arc<ProblemSpec<S>>,
    unit: usize,
    prices: Arc<PriceModel<S>>,
    mesh: Vec<Vec<S>>,
    grids: Vec<Arc<Grid<S>>>,
    observations: Vec<Observation>,
    ranges: Vec<Vec<(S, S)>>,
}

impl<S: Scalar> Subproblem<S> {
    pub fn unit(&self) -> usize {
        self.unit
    }

    pub fn prices(&self) -> &PriceModel<S> {
        &self.prices
    }

    pub fn grids(&self) -> &[Arc<Grid<S>>] {
        &self.grids
    }

    /// Price grid hull per `t`.
    pub fn lambda_ranges(&self) -> &[Vec<(S, S)>] {
        &self.ranges
    }

    fn n(&self) -> usize {
        self.problem.subsystems[self.unit].state_dim
    }
}

pub fn build_subproblem<S: Scalar>(
    problem: &ValidatedProblem<S>,
    i: usize,
    model: &Arc<PriceModel<S>>,
    config: &DadpConfig<S>,
) -> Result<Subproblem<S>> {
    let p = problem.shared();
    let unit = &p.subsystems[i];
    let horizon = p.horizon();
    model.check()?;
    if model.stages.len() != horizon || model.dim != p.coupling_dim {
        return Err(Error::Dimension(format!(
            "price model has {} stages of dimension {}, problem needs {horizon} of {}",
            model.stages.len(),
            model.dim,
            p.coupling_dim
        )));
    }
    if unit.state_dim + model.dim > MAX_DIM {
        return Err(Error::Dimension(format!(
            "augmented state of unit {} has dimension {}",
            i + 1,
            unit.state_dim + model.dim
        )));
    }
    let ranges = support_range(model, &p.noise, p.demand_coordinate, config.support_margin);
    let mut grids = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let b = &unit.state_bounds[t];
        let mut lower = b.lower.clone();
        let mut upper = b.upper.clone();
        let mut counts = config.grid_points[i].clone();
        if t < horizon {
            for &(lo, hi) in &ranges[t] {
                lower.push(lo);
                upper.push(hi);
                counts.push(config.lambda_grid_size);
            }
        }
        grids.push(Arc::new(Grid::uniform(&lower, &upper, &counts)?));
    }
    let mesh = ControlMesh::uniform_unit(&unit.control_bounds, &config.mesh_points[i])?
        .into_iter()
        .map(|cands| cands.into_iter().flatten().collect())
        .collect();
    let observations = p
        .noise
        .stages
        .iter()
        .map(|s| Observation::blind(s.len()))
        .collect();
    Ok(Subproblem {
        problem: p,
        unit: i,
        prices: Arc::clone(model),
        mesh,
        grids,
        observations,
        ranges,
    })
}

impl<S: Scalar> StagewiseProblem<S> for Subproblem<S> {
    fn horizon(&self) -> usize {
        self.problem.horizon()
    }

    fn state_dim(&self, t: usize) -> usize {
        if t < self.horizon() {
            self.n() + self.prices.dim
        } else {
            self.n()
        }
    }

    fn control_dim(&self) -> usize {
        self.problem.subsystems[self.unit].control_dim
    }

    fn noise(&self) -> &NoiseModel<S> {
        &self.problem.noise
    }

    fn observation(&self, t: usize) -> &Observation {
        &self.observations[t]
    }

    fn state_admissible(&self, t: usize, x: &[S]) -> bool {
        self.problem.subsystems[self.unit].state_bounds[t]
            .contains(&x[..self.n()], S::of(BOUND_TOL))
    }

    fn candidates(&self, t: usize, _x: &[S], _class: usize, out: &mut Vec<S>) {
        out.extend_from_slice(&self.mesh[t]);
    }

    fn transition(&self, t: usize, x: &[S], u: &[S], next_atom: usize, next: &mut [S]) -> S {
        let unit = &self.problem.subsystems[self.unit];
        let n = self.n();
        let d = self.prices.dim;
        let xi = &self.problem.noise.stage(t + 1).atoms[next_atom];
        let (xs, lambda) = x.split_at(n);
        let mut g = [S::zero(); MAX_DIM];
        (unit.coupling)(xs, u, t, &mut g[..d]);
        let mut cost = (unit.stage_cost)(xs, u, xi, t);
        for j in 0..d {
            cost += lambda[j] * g[j];
        }
        let (nx, nl) = next.split_at_mut(n);
        (unit.dynamics)(xs, u, xi, t, nx);
        if t + 1 < self.horizon() {
            self.prices.step(t + 1, lambda, self.problem.demand(xi), nl);
        }
        cost
    }

    fn terminal_cost(&self, x: &[S]) -> S {
        (self.problem.subsystems[self.unit].terminal_cost)(x)
    }

    fn initial_state(&self, atom: usize) -> Vec<S> {
        let mut x = self.problem.subsystems[self.unit].initial_state.clone();
        let mut l = vec![S::zero(); self.prices.dim];
        let xi = &self.problem.noise.stage(0).atoms[atom];
        self.prices.initial(self.problem.demand(xi), &mut l);
        x.extend(l);
        x
    }
}

pub struct UnitSolution<S> {
    pub subproblem: Subproblem<S>,
    pub values: Vec<ValueFunction<S>>,
    pub policy: FeedbackPolicy<S>,
}

impl<S: Scalar> UnitSolution<S> {
    /// `E[V_0]` of the subproblem over the atoms of `xi_0`.
    pub fn expected_value(&self) -> Result<S> {
        let stage = self.subproblem.noise().stage(0);
        let mut acc = S::zero();
        for (k, &p) in stage.weights.iter().enumerate() {
            if p > S::zero() {
                acc +=
                    p * self.values[0].interpolate_class(0, &self.subproblem.initial_state(k))?;
            }
        }
        Ok(acc)
    }
}

/// Solves every unit subproblem by backward DP, in parallel over units.
pub fn solve_subproblems<S: Scalar>(
    problem: &ValidatedProblem<S>,
    model: &Arc<PriceModel<S>>,
    config: &DadpConfig<S>,
) -> Result<Vec<UnitSolution<S>>> {
    (0..problem.units())
        .into_par_iter()
        .map(|i| {
            let subproblem = build_subproblem(problem, i, model, config)?;
            let sol = backward_sweep(&subproblem, subproblem.grids())?;
            Ok(UnitSolution {
                subproblem,
                values: sol.values,
                policy: sol.policy,
            })
        })
        .collect()
}

/// Everything recorded along one simulated noise path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord<S> {
    pub lambda: Vec<Vec<S>>,
    pub units: Vec<UnitTrajectory<S>>,
    /// Undualized stage costs `[unit][t]`.
    pub stage_costs: Vec<Vec<S>>,
    pub terminal_costs: Vec<S>,
    /// `g_t^i` values `[unit][t]`.
    pub couplings: Vec<Vec<Vec<S>>>,
    /// Coupling targets `d_t` per `t`.
    pub targets: Vec<Vec<S>>,
    /// `sum_i g_t^i - d_t` per `t`.
    pub residuals: Vec<Vec<S>>,
}

/// Runs every unit's DP feedback along each path.
pub fn simulate_iterate<S: Scalar>(
    problem: &ProblemSpec<S>,
    solutions: &[UnitSolution<S>],
    model: &PriceModel<S>,
    paths: &[NoisePath<S>],
) -> Result<Vec<PathRecord<S>>> {
    paths
        .par_iter()
        .enumerate()
        .map(|(k, path)| simulate_path(problem, solutions, model, path, k))
        .collect()
}

fn simulate_path<S: Scalar>(
    problem: &ProblemSpec<S>,
    solutions: &[UnitSolution<S>],
    model: &PriceModel<S>,
    path: &NoisePath<S>,
    index: usize,
) -> Result<PathRecord<S>> {
    let horizon = problem.horizon();
    let dim = problem.coupling_dim;
    let lambda = propagate(model, path, problem.demand_coordinate);
    let targets: Vec<Vec<S>> = (0..horizon)
        .map(|t| problem.target(t, &path.realizations[t]))
        .collect();
    let mut residuals: Vec<Vec<S>> = targets
        .iter()
        .map(|d| d.iter().map(|v| -*v).collect())
        .collect();
    let mut units = Vec::with_capacity(solutions.len());
    let mut stage_costs = Vec::with_capacity(solutions.len());
    let mut terminal_costs = Vec::with_capacity(solutions.len());
    let mut couplings = Vec::with_capacity(solutions.len());
    for (i, sol) in solutions.iter().enumerate() {
        let unit = &problem.subsystems[i];
        let n = unit.state_dim;
        let sim =
            simulate_policy(&sol.subproblem, &sol.values, path).map_err(|e| Error::Simulation {
                path: index,
                unit: i,
                source: Box::new(e),
            })?;
        let states: Vec<Vec<S>> = sim.states.iter().map(|s| s[..n].to_vec()).collect();
        let mut costs = Vec::with_capacity(horizon);
        let mut gs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let u = &sim.controls[t];
            costs.push((unit.stage_cost)(
                &states[t],
                u,
                &path.realizations[t + 1],
                t,
            ));
            let mut g = vec![S::zero(); dim];
            (unit.coupling)(&states[t], u, t, &mut g);
            for (r, gj) in residuals[t].iter_mut().zip(&g) {
                *r += *gj;
            }
            gs.push(g);
        }
        terminal_costs.push(sim.terminal_cost);
        stage_costs.push(costs);
        couplings.push(gs);
        units.push(UnitTrajectory {
            states,
            controls: sim.controls,
        });
    }
    Ok(PathRecord {
        lambda,
        units,
        stage_costs,
        terminal_costs,
        couplings,
        targets,
        residuals,
    })
}

/// `lambda + rho_t * residual`, sample by sample.
pub fn gradient_step<S: Scalar>(
    lambda: &PricePathSamples<S>,
    residuals: &[Vec<Vec<S>>],
    rho: &[S],
) -> Result<PricePathSamples<S>> {
    if residuals.len() != lambda.len() {
        return Err(Error::Dimension(format!(
            "{} multiplier samples but {} residual samples",
            lambda.len(),
            residuals.len()
        )));
    }
    lambda
        .paths
        .iter()
        .zip(residuals)
        .map(|(lp, rp)| {
            if lp.len() != rp.len() || lp.len() > rho.len() {
                return Err(Error::Dimension(
                    "sample horizon mismatch in gradient step".into(),
                ));
            }
            Ok(lp
                .iter()
                .zip(rp)
                .zip(rho)
                .map(|((l, r), &step)| l.iter().zip(r).map(|(&a, &b)| a + step * b).collect())
                .collect())
        })
        .collect::<Result<Vec<_>>>()
        .map(|paths| PricePathSamples { paths })
}

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate<S> {
    pub mean: S,
    pub std_error: S,
}

impl<S: Scalar> Estimate<S> {
    pub fn from_samples(v: &[S]) -> Self {
        let n = v.len();
        if n == 0 {
            return Self {
                mean: S::nan(),
                std_error: S::nan(),
            };
        }
        let nf = S::of(n as f64);
        let mean = v.iter().copied().sum::<S>() / nf;
        let std_error = if n > 1 {
            let var =
                v.iter().map(|x| (*x - mean) * (*x - mean)).sum::<S>() / S::of((n - 1) as f64);
            (var / nf).sqrt()
        } else {
            S::zero()
        };
        Self { mean, std_error }
    }

    /// `sqrt(se_a^2 + se_b^2)`.
    pub fn combined_error(&self, other: &Self) -> S {
        (self.std_error * self.std_error + other.std_error * other.std_error).sqrt()
    }
}

/// Dualized cost of unit `i` along a record: `sum_t (L + lambda . g) + K`.
pub fn unit_dual_value<S: Scalar>(record: &PathRecord<S>, i: usize) -> S {
    let mut acc = record.terminal_costs[i];
    for (t, (c, g)) in record.stage_costs[i]
        .iter()
        .zip(&record.couplings[i])
        .enumerate()
    {
        acc += *c;
        for (l, gj) in record.lambda[t].iter().zip(g) {
            acc += *l * *gj;
        }
    }
    acc
}

/// `sum_t lambda_t . d_t` along a record.
pub fn demand_term<S: Scalar>(record: &PathRecord<S>) -> S {
    let mut acc = S::zero();
    for (l, d) in record.lambda.iter().zip(&record.targets) {
        for (a, b) in l.iter().zip(d) {
            acc += *a * *b;
        }
    }
    acc
}

/// Per-path dual values `sum_i (unit dual value) - sum_t lambda_t . d_t`.
pub fn dual_samples<S: Scalar>(records: &[PathRecord<S>]) -> Vec<S> {
    records
        .iter()
        .map(|r| (0..r.units.len()).map(|i| unit_dual_value(r, i)).sum::<S>() - demand_term(r))
        .collect()
}

pub fn dual_estimate<S: Scalar>(records: &[PathRecord<S>]) -> Estimate<S> {
    Estimate::from_samples(&dual_samples(records))
}

/// Monte Carlo dual value of a price model under its subproblem policies.
pub fn dual_value<S: Scalar>(
    problem: &ProblemSpec<S>,
    model: &PriceModel<S>,
    solutions: &[UnitSolution<S>],
    paths: &[NoisePath<S>],
) -> Result<Estimate<S>> {
    Ok(dual_estimate(&simulate_iterate(
        problem, solutions, model, paths,
    )?))
}

/// A record after the slack unit's control is re-solved from the coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct RestoredPath<S> {
    /// Slack unit states and controls (empty when none is declared).
    pub slack: Option<UnitTrajectory<S>>,
    /// Total stage cost per `t` over all units.
    pub stage_costs: Vec<S>,
    pub terminal_cost: S,
    /// Coupling residual per `t` after restoration.
    pub residuals: Vec<Vec<S>>,
    /// Number of steps where the slack control was clamped to its bounds.
    pub clamped: usize,
}

impl<S: Scalar> RestoredPath<S> {
    pub fn total_cost(&self) -> S {
        self.stage_costs.iter().copied().sum::<S>() + self.terminal_cost
    }
}

/// Replaces the slack unit's control by the value closing the coupling
/// residual, clamped to its bounds, and re-integrates its dynamics.
pub fn restore<S: Scalar>(
    problem: &ProblemSpec<S>,
    path: &NoisePath<S>,
    record: &PathRecord<S>,
    slack: Option<usize>,
) -> Result<RestoredPath<S>> {
    let horizon = problem.horizon();
    let mut stage_costs: Vec<S> = (0..horizon)
        .map(|t| record.stage_costs.iter().map(|c| c[t]).sum())
        .collect();
    let mut terminal_cost: S = record.terminal_costs.iter().copied().sum();
    let Some(s) = slack else {
        return Ok(RestoredPath {
            slack: None,
            stage_costs,
            terminal_cost,
            residuals: record.residuals.clone(),
            clamped: 0,
        });
    };
    let unit = &problem.subsystems[s];
    let dim = problem.coupling_dim;
    let mut x = unit.initial_state.clone();
    let mut states = vec![x.clone()];
    let mut controls = Vec::with_capacity(horizon);
    let mut residuals = Vec::with_capacity(horizon);
    let mut clamped = 0;
    let mut g = vec![S::zero(); dim];
    for t in 0..horizon {
        let xi = &path.realizations[t + 1];
        let old_u = &record.units[s].controls[t];
        stage_costs[t] -= record.stage_costs[s][t];
        let others: Vec<S> = record.residuals[t]
            .iter()
            .zip(&record.couplings[s][t])
            .map(|(r, gs)| *r - *gs)
            .collect();
        let (g0, lu) = affine_coupling(unit, &x, t, dim)?;
        let rhs: Vec<S> = others.iter().zip(&g0).map(|(o, g0)| -*o - *g0).collect();
        let mut u = lu.solve(&rhs);
        let b = &unit.control_bounds[t];
        let mut hit = false;
        for (k, v) in u.iter_mut().enumerate() {
            if *v < b.lower[k] {
                *v = b.lower[k];
                hit = true;
            } else if *v > b.upper[k] {
                *v = b.upper[k];
                hit = true;
            }
        }
        if others.iter().all(|o| o.abs() <= S::of(RESIDUAL_TOL))
            && record.residuals[t]
                .iter()
                .all(|r| r.abs() <= S::of(RESIDUAL_TOL))
        {
            u.clone_from(old_u);
            hit = false;
        }
        if hit {
            clamped += 1;
        }
        (unit.coupling)(&x, &u, t, &mut g);
        residuals.push(
            others
                .iter()
                .zip(&g)
                .map(|(o, gj)| *o + *gj)
                .collect::<Vec<S>>(),
        );
        stage_costs[t] += (unit.stage_cost)(&x, &u, xi, t);
        let mut next = vec![S::zero(); unit.state_dim];
        (unit.dynamics)(&x, &u, xi, t, &mut next);
        controls.push(u);
        x = next;
        states.push(x.clone());
    }
    terminal_cost = terminal_cost - record.terminal_costs[s] + (unit.terminal_cost)(&x);
    Ok(RestoredPath {
        slack: Some(UnitTrajectory { states, controls }),
        stage_costs,
        terminal_cost,
        residuals,
        clamped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalEstimate<S> {
    pub value: Estimate<S>,
    /// Slack clamping events over all paths and times.
    pub clamped: usize,
    /// RMS over paths of the restored coupling residual, per `t`.
    pub violation_rms: Vec<S>,
}

/// True cost of the decomposed policies made feasible through the slack unit.
pub fn primal_estimate<S: Scalar>(
    problem: &ProblemSpec<S>,
    paths: &[NoisePath<S>],
    records: &[PathRecord<S>],
    slack: Option<usize>,
) -> Result<PrimalEstimate<S>> {
    let restored = paths
        .par_iter()
        .zip(records)
        .map(|(p, r)| restore(problem, p, r, slack))
        .collect::<Result<Vec<_>>>()?;
    let violation_rms = residual_rms(restored.iter().map(|r| &r.residuals), problem.horizon());
    if slack.is_none() {
        let worst = restored.iter().zip(records).any(|(r, rec)| {
            r.residuals.iter().zip(&rec.targets).any(|(res, d)| {
                res.iter()
                    .zip(d)
                    .any(|(v, dj)| v.abs() > scaled_tol(S::of(RESIDUAL_TOL), *dj))
            })
        });
        if worst {
            return Err(Error::PrimalUndefined(
                "coupling residuals are nonzero and no slack unit is declared".into(),
            ));
        }
    }
    let costs: Vec<S> = restored.iter().map(RestoredPath::total_cost).collect();
    Ok(PrimalEstimate {
        value: Estimate::from_samples(&costs),
        clamped: restored.iter().map(|r| r.clamped).sum(),
        violation_rms,
    })
}

/// Simulates and evaluates the restored policies.
pub fn primal_value<S: Scalar>(
    problem: &ProblemSpec<S>,
    solutions: &[UnitSolution<S>],
    model: &PriceModel<S>,
    paths: &[NoisePath<S>],
    slack: Option<usize>,
) -> Result<PrimalEstimate<S>> {
    let records = simulate_iterate(problem, solutions, model, paths)?;
    primal_estimate(problem, paths, &records, slack)
}

/// RMS over samples of the residual norm, per `t`.
fn residual_rms<'a, S: Scalar + 'a>(
    samples: impl Iterator<Item = &'a Vec<Vec<S>>>,
    horizon: usize,
) -> Vec<S> {
    let mut acc = vec![S::zero(); horizon];
    let mut n = 0usize;
    for res in samples {
        n += 1;
        for (a, r) in acc.iter_mut().zip(res) {
            *a += r.iter().map(|v| *v * *v).sum::<S>();
        }
    }
    let nf = S::of(n.max(1) as f64);
    acc.into_iter().map(|a| (a / nf).sqrt()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    Tolerance,
    MaxIters,
    NonFinite(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DadpIterate<S> {
    pub k: usize,
    /// Price model whose subproblems were solved at this iteration.
    pub model: PriceModel<S>,
    pub dual: Estimate<S>,
    /// `None` when the primal value is undefined (no slack unit, nonzero residuals).
    pub primal: Option<PrimalEstimate<S>>,
    /// RMS over samples of the subproblem coupling residual, per `t`.
    pub violation_rms: Vec<S>,
    /// RMS over samples and times of the change in multipliers.
    pub delta_lambda: S,
    pub regression_residual: S,
    pub rank_deficient: Vec<usize>,
    pub wall_ms: u128,
}

impl<S: Scalar> DadpIterate<S> {
    pub fn violation_rms_mean(&self) -> S {
        if self.violation_rms.is_empty() {
            return S::zero();
        }
        self.violation_rms.iter().copied().sum::<S>() / S::of(self.violation_rms.len() as f64)
    }
}

pub struct DadpResult<S> {
    pub history: Vec<DadpIterate<S>>,
    /// Model the final policies were computed for.
    pub policy_model: Arc<PriceModel<S>>,
    pub solutions: Vec<UnitSolution<S>>,
    /// Model produced by the last regression.
    pub next_model: PriceModel<S>,
    pub termination: Termination,
}

/// Sample paths of iteration `k`.
pub fn iteration_paths<S: Scalar>(
    noise: &NoiseModel<S>,
    seed: u64,
    k: usize,
    samples: usize,
) -> Vec<NoisePath<S>> {
    (0..samples)
        .into_par_iter()
        .map(|s| sample_path(noise, derive_seed(seed, &[k as u64, s as u64])))
        .collect()
}

/// Record of an iteration, the next model, and the policies it was run with.
pub type Step<S> = (DadpIterate<S>, PriceModel<S>, Vec<UnitSolution<S>>);

/// One full iteration from `model`; returns the record and the next model.
pub fn iterate<S: Scalar>(
    problem: &ValidatedProblem<S>,
    config: &DadpConfig<S>,
    model: &Arc<PriceModel<S>>,
    k: usize,
) -> Result<Step<S>> {
    let start = Instant::now();
    let solutions = solve_subproblems(problem, model, config)?;
    let paths = iteration_paths(&problem.noise, config.seed, k, config.samples);
    let records = simulate_iterate(problem, &solutions, model, &paths)?;

    let dual = dual_estimate(&records);
    let primal = match primal_estimate(problem, &paths, &records, problem.slack_unit) {
        Ok(p) => Some(p),
        Err(Error::PrimalUndefined(_)) => None,
        Err(e) => return Err(e),
    };
    let violation_rms = residual_rms(records.iter().map(|r| &r.residuals), problem.horizon());

    let lambda = PricePathSamples {
        paths: records.iter().map(|r| r.lambda.clone()).collect(),
    };
    let residuals: Vec<Vec<Vec<S>>> = records.iter().map(|r| r.residuals.clone()).collect();
    let targets = gradient_step(&lambda, &residuals, &config.step_sizes)?;
    let fit = regress(&targets, &paths, problem.demand_coordinate)?;
    let next = propagate_all(&fit.model, &paths, problem.demand_coordinate);
    let delta_lambda = rms_difference(&next, &lambda);

    let record = DadpIterate {
        k,
        model: (**model).clone(),
        dual,
        primal,
        violation_rms,
        delta_lambda,
        regression_residual: fit.residual,
        rank_deficient: fit.rank_deficient,
        wall_ms: start.elapsed().as_millis(),
    };
    Ok((record, fit.model, solutions))
}

fn non_finite<S: Scalar>(it: &DadpIterate<S>) -> Option<String> {
    let mut bad = Vec::new();
    if !it.dual.mean.is_finite() {
        bad.push("dual value");
    }
    if it
        .primal
        .as_ref()
        .is_some_and(|p| !p.value.mean.is_finite())
    {
        bad.push("primal value");
    }
    if !it.delta_lambda.is_finite() {
        bad.push("multiplier change");
    }
    if !it.regression_residual.is_finite() {
        bad.push("regression residual");
    }
    (!bad.is_empty()).then(|| format!("non-finite {} at iteration {}", bad.join(", "), it.k))
}

pub fn run<S: Scalar>(
    problem: &ValidatedProblem<S>,
    config: &DadpConfig<S>,
    initial: PriceModel<S>,
) -> Result<DadpResult<S>> {
    run_with(problem, config, initial, 0, |_, _| Ok(()))
}

/// Runs iterations `start..max_iters`, calling `observer` with each record
/// and the model it produced before moving on.
pub fn run_with<S, F>(
    problem: &ValidatedProblem<S>,
    config: &DadpConfig<S>,
    initial: PriceModel<S>,
    start: usize,
    mut observer: F,
) -> Result<DadpResult<S>>
where
    S: Scalar,
    F: FnMut(&DadpIterate<S>, &PriceModel<S>) -> Result<()>,
{
    config.check(problem)?;
    if start >= config.max_iters {
        return Err(Error::Invalid(format!(
            "iteration {start} is past max_iters = {}",
            config.max_iters
        )));
    }
    let mut model = Arc::new(initial);
    let mut history = Vec::new();
    let mut solutions = Vec::new();
    let mut termination = Termination::MaxIters;
    let mut policy_model = Arc::clone(&model);
    for k in start..config.max_iters {
        let (record, next, sols) = iterate(problem, config, &model, k)?;
        policy_model = Arc::clone(&model);
        solutions = sols;
        let failure = non_finite(&record);
        observer(&record, &next)?;
        let converged = record.delta_lambda < config.stop_tol;
        history.push(record);
        model = Arc::new(next);
        if let Some(reason) = failure {
            termination = Termination::NonFinite(reason);
            break;
        }
        if converged {
            termination = Termination::Tolerance;
            break;
        }
    }
    Ok(DadpResult {
        history,
        policy_model,
        solutions,
        next_model: (*model).clone(),
        termination,
    })
}

#[cfg(test)]
mod tests;
