//! Backward dynamic programming on rectangular state grids.
//!
//! Any finite-horizon Markov problem exposed through [`StagewiseProblem`] can
//! be swept: the joint coupled problem ([`joint`]) and the price-augmented
//! unit subproblems of the decomposition both go through the same code.

mod grid;
pub mod joint;
pub mod table;

use std::sync::Arc;

use rayon::prelude::*;

pub use grid::{Grid, MAX_DIM};
pub use joint::{joint_solve, JointModel, JointOptions, JointSolution};

use crate::error::{Error, Result};
use crate::model::{Bounds, NoiseModel, NoisePath};
use crate::scalar::Scalar;

/// Partition of the atoms of `xi_t` into classes the decision at `t` can
/// distinguish. Values and controls at `t` are stored per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub class_of_atom: Vec<usize>,
    pub classes: usize,
}

impl Observation {
    /// Every atom maps to the single class 0.
    pub fn blind(atoms: usize) -> Self {
        Self {
            class_of_atom: vec![0; atoms],
            classes: 1,
        }
    }
}

/// A finite-horizon Markov decision problem with finite noise support.
pub trait StagewiseProblem<S: Scalar>: Sync {
    fn horizon(&self) -> usize;

    /// Dimension of the state at `t` (may differ at `t = T`).
    fn state_dim(&self, t: usize) -> usize;

    fn control_dim(&self) -> usize;

    fn noise(&self) -> &NoiseModel<S>;

    fn observation(&self, t: usize) -> &Observation;

    /// Hard state constraints at `t`. Inadmissible successors make a candidate
    /// infeasible rather than raising an error.
    fn state_admissible(&self, t: usize, x: &[S]) -> bool;

    /// Appends the admissible candidate controls at `(t, x, class)` to `out`,
    /// flattened with stride `control_dim`, in a deterministic order.
    fn candidates(&self, t: usize, x: &[S], class: usize, out: &mut Vec<S>);

    /// Stage cost of applying `u` at `(t, x)` when atom `next_atom` of
    /// `xi_{t+1}` occurs; writes the successor state into `next`.
    fn transition(&self, t: usize, x: &[S], u: &[S], next_atom: usize, next: &mut [S]) -> S;

    fn terminal_cost(&self, x: &[S]) -> S;

    /// State at `t = 0` when atom `atom` of `xi_0` occurs.
    fn initial_state(&self, atom: usize) -> Vec<S>;
}

/// Tabulated `V_t` on a grid, one slice per observation class.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction<S> {
    pub t: usize,
    pub grid: Arc<Grid<S>>,
    pub classes: usize,
    /// Class-major: `values[class * grid.len() + node]`.
    pub values: Vec<S>,
}

impl<S: Scalar> ValueFunction<S> {
    pub fn value(&self, class: usize, node: usize) -> S {
        self.values[class * self.grid.len() + node]
    }

    pub fn slice(&self, class: usize) -> &[S] {
        let n = self.grid.len();
        &self.values[class * n..(class + 1) * n]
    }

    pub fn interpolate_class(&self, class: usize, x: &[S]) -> Result<S> {
        self.grid
            .interpolate(self.slice(class), x)
            .map_err(|axis| Error::OffGrid {
                t: self.t,
                axis,
                state: x.iter().map(|v| v.as_f64()).collect(),
            })
    }
}

/// Multilinear interpolation of a single-class value function.
pub fn interpolate<S: Scalar>(v: &ValueFunction<S>, x: &[S]) -> Result<S> {
    v.interpolate_class(0, x)
}

/// Argmin controls per `(t, class, node)`; `None` where no candidate is feasible.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStage<S> {
    pub t: usize,
    pub classes: usize,
    pub nodes: usize,
    pub control_dim: usize,
    controls: Vec<S>,
    feasible: Vec<bool>,
}

impl<S: Scalar> PolicyStage<S> {
    pub fn control(&self, class: usize, node: usize) -> Option<&[S]> {
        let k = class * self.nodes + node;
        self.feasible[k].then(|| &self.controls[k * self.control_dim..(k + 1) * self.control_dim])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackPolicy<S> {
    pub stages: Vec<PolicyStage<S>>,
}

impl<S: Scalar> FeedbackPolicy<S> {
    pub fn control(&self, t: usize, class: usize, node: usize) -> Option<&[S]> {
        self.stages[t].control(class, node)
    }
}

/// Candidate controls per unit and time: the discretized minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlMesh<S> {
    /// `units[i][t]` is the candidate list of unit `i` at time `t`.
    pub units: Vec<Vec<Vec<Vec<S>>>>,
}

impl<S: Scalar> ControlMesh<S> {
    /// Tensor product of `points[d]` evenly spaced values per control
    /// component, for every box in `bounds`.
    pub fn uniform_unit(bounds: &[Bounds<S>], points: &[usize]) -> Result<Vec<Vec<Vec<S>>>> {
        bounds
            .iter()
            .map(|b| {
                let axes = b
                    .lower
                    .iter()
                    .zip(&b.upper)
                    .zip(points)
                    .map(|((&lo, &hi), &n)| grid::uniform_levels(lo, hi, n))
                    .collect::<Result<Vec<_>>>()?;
                Ok(cartesian(&axes))
            })
            .collect()
    }

    pub fn unit(&self, i: usize, t: usize) -> &[Vec<S>] {
        &self.units[i][t]
    }
}

pub(crate) fn cartesian<S: Clone>(axes: &[Vec<S>]) -> Vec<Vec<S>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BellmanOutcome<S> {
    pub value: S,
    /// `None` when no candidate is feasible (`value` is then `+inf`).
    pub control: Option<Vec<S>>,
}

/// Minimizes the expected stage cost plus interpolated `V_{t+1}` over the
/// candidates at `(t, x, class)`. Ties go to the lowest candidate index.
pub fn bellman_update<S: Scalar, P: StagewiseProblem<S> + ?Sized>(
    problem: &P,
    next: &ValueFunction<S>,
    t: usize,
    x: &[S],
    class: usize,
) -> Result<BellmanOutcome<S>> {
    let mut buf = Vec::new();
    problem.candidates(t, x, class, &mut buf);
    minimize_over(problem, next, t, x, &buf)
}

pub(crate) fn minimize_over<S: Scalar, P: StagewiseProblem<S> + ?Sized>(
    problem: &P,
    next: &ValueFunction<S>,
    t: usize,
    x: &[S],
    candidates: &[S],
) -> Result<BellmanOutcome<S>> {
    let m = problem.control_dim();
    let stage = problem.noise().stage(t + 1);
    let next_obs = problem.observation(t + 1);
    let mut next_x = vec![S::zero(); problem.state_dim(t + 1)];
    let mut best = S::infinity();
    let mut best_idx = None;
    for (j, u) in candidates.chunks_exact(m.max(1)).enumerate() {
        let u = &u[..m];
        let mut acc = S::zero();
        for (k, &p) in stage.weights.iter().enumerate() {
            if p == S::zero() {
                continue;
            }
            let cost = problem.transition(t, x, u, k, &mut next_x);
            if !problem.state_admissible(t + 1, &next_x) {
                acc = S::infinity();
                break;
            }
            let class = if next.classes == 1 {
                0
            } else {
                next_obs.class_of_atom[k]
            };
            let v = next.interpolate_class(class, &next_x)?;
            acc += p * (cost + v);
            if acc == S::infinity() {
                break;
            }
        }
        if acc < best {
            best = acc;
            best_idx = Some(j);
        }
    }
    Ok(BellmanOutcome {
        value: best,
        control: best_idx.map(|j| candidates[j * m..(j + 1) * m].to_vec()),
    })
}

/// Value functions `V_0..=V_T` and the argmin policy.
#[derive(Clone, Debug, PartialEq)]
pub struct DpSolution<S> {
    pub values: Vec<ValueFunction<S>>,
    pub policy: FeedbackPolicy<S>,
}

impl<S: Scalar> DpSolution<S> {
    /// `E[V_0(x_0(xi_0), class(xi_0))]` over the atoms of `xi_0`.
    pub fn expected_initial_value<P: StagewiseProblem<S> + ?Sized>(
        &self,
        problem: &P,
    ) -> Result<S> {
        let stage = problem.noise().stage(0);
        let obs = problem.observation(0);
        let mut acc = S::zero();
        for (k, &p) in stage.weights.iter().enumerate() {
            if p == S::zero() {
                continue;
            }
            let x0 = problem.initial_state(k);
            let v = self.values[0].interpolate_class(obs.class_of_atom[k], &x0)?;
            if v == S::infinity() {
                return Ok(v);
            }
            acc += p * v;
        }
        Ok(acc)
    }
}

/// Backward recursion from `V_T = terminal cost` down to `V_0`.
///
/// Nodes at a fixed `t` are solved in parallel; each node's result depends
/// only on `V_{t+1}`, so the output does not depend on the thread count.
pub fn backward_sweep<S: Scalar, P: StagewiseProblem<S> + ?Sized>(
    problem: &P,
    grids: &[Arc<Grid<S>>],
) -> Result<DpSolution<S>> {
    let horizon = problem.horizon();
    if grids.len() != horizon + 1 {
        return Err(Error::Dimension(format!(
            "{} grids for horizon {horizon}",
            grids.len()
        )));
    }
    for (t, g) in grids.iter().enumerate() {
        if g.dim() != problem.state_dim(t) {
            return Err(Error::Dimension(format!(
                "grid at t={t} has dimension {} but the state has {}",
                g.dim(),
                problem.state_dim(t)
            )));
        }
    }

    let terminal_grid = Arc::clone(&grids[horizon]);
    let terminal_values = (0..terminal_grid.len())
        .map(|n| {
            let x = terminal_grid.node(n);
            if problem.state_admissible(horizon, &x) {
                problem.terminal_cost(&x)
            } else {
                S::infinity()
            }
        })
        .collect();
    let mut values = vec![ValueFunction {
        t: horizon,
        grid: terminal_grid,
        classes: 1,
        values: terminal_values,
    }];
    let mut stages = Vec::with_capacity(horizon);
    let m = problem.control_dim();

    for t in (0..horizon).rev() {
        let grid = Arc::clone(&grids[t]);
        let classes = problem.observation(t).classes;
        let nodes = grid.len();
        let next = values.last().expect("terminal value present");
        let outcomes = (0..classes * nodes)
            .into_par_iter()
            .map(|k| {
                let (class, node) = (k / nodes, k % nodes);
                let x = grid.node(node);
                if !problem.state_admissible(t, &x) {
                    return Ok(BellmanOutcome {
                        value: S::infinity(),
                        control: None,
                    });
                }
                bellman_update(problem, next, t, &x, class)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut vals = Vec::with_capacity(outcomes.len());
        let mut controls = vec![S::zero(); outcomes.len() * m];
        let mut feasible = vec![false; outcomes.len()];
        for (k, o) in outcomes.into_iter().enumerate() {
            vals.push(o.value);
            if let Some(u) = o.control {
                controls[k * m..(k + 1) * m].copy_from_slice(&u);
                feasible[k] = true;
            }
        }
        stages.push(PolicyStage {
            t,
            classes,
            nodes,
            control_dim: m,
            controls,
            feasible,
        });
        values.push(ValueFunction {
            t,
            grid,
            classes,
            values: vals,
        });
    }
    values.reverse();
    stages.reverse();
    Ok(DpSolution {
        values,
        policy: FeedbackPolicy { stages },
    })
}

/// Forward trajectory of a problem under its DP feedback.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPath<S> {
    pub states: Vec<Vec<S>>,
    pub controls: Vec<Vec<S>>,
    /// Stage cost realized at each `t`.
    pub stage_costs: Vec<S>,
    pub terminal_cost: S,
}

impl<S: Scalar> SimulatedPath<S> {
    pub fn total_cost(&self) -> S {
        self.stage_costs.iter().copied().sum::<S>() + self.terminal_cost
    }
}

/// Integrates the dynamics along `path`, choosing each control by a one-step
/// lookahead on the stored `V_{t+1}` at the actual (off-grid) state.
pub fn simulate_policy<S: Scalar, P: StagewiseProblem<S> + ?Sized>(
    problem: &P,
    values: &[ValueFunction<S>],
    path: &NoisePath<S>,
) -> Result<SimulatedPath<S>> {
    let horizon = problem.horizon();
    let mut x = problem.initial_state(path.atoms[0]);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut stage_costs = Vec::with_capacity(horizon);
    let mut buf = Vec::new();
    for t in 0..horizon {
        let class = problem.observation(t).class_of_atom[path.atoms[t]];
        buf.clear();
        problem.candidates(t, &x, class, &mut buf);
        let outcome = minimize_over(problem, &values[t + 1], t, &x, &buf)?;
        let u = outcome.control.ok_or_else(|| Error::NoAdmissibleControl {
            t,
            state: x.iter().map(|v| v.as_f64()).collect(),
        })?;
        let mut next = vec![S::zero(); problem.state_dim(t + 1)];
        let cost = problem.transition(t, &x, &u, path.atoms[t + 1], &mut next);
        stage_costs.push(cost);
        controls.push(u);
        states.push(std::mem::replace(&mut x, next));
    }
    let terminal_cost = problem.terminal_cost(&x);
    states.push(x);
    Ok(SimulatedPath {
        states,
        controls,
        stage_costs,
        terminal_cost,
    })
}
