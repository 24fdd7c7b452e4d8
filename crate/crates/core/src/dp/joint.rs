//! Dynamic programming on the full coupled state: the reference solver.

use std::sync::Arc;

use super::{backward_sweep, minimize_over, simulate_policy, ControlMesh, FeedbackPolicy, Grid};
use super::{Observation, SimulatedPath, StagewiseProblem, ValueFunction};
use crate::error::{Error, Result};
use crate::model::{affine_coupling, NoiseModel, NoisePath, ProblemSpec, ValidatedProblem};
use crate::scalar::Scalar;

const BOUND_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct JointOptions<S> {
    /// Grid levels per unit and state component.
    pub grid_points: Vec<Vec<usize>>,
    /// Candidate count per unit and control component.
    pub mesh_points: Vec<Vec<usize>>,
    pub dimension_cap: usize,
    /// Accepted `|residual|` for meshed candidates when no slack unit is
    /// declared. Defaults to half the finest mesh spacing.
    pub coupling_tolerance: Option<S>,
}

impl<S: Scalar> JointOptions<S> {
    pub fn uniform(problem: &ProblemSpec<S>, grid_points: usize, mesh_points: usize) -> Self {
        Self {
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
            dimension_cap: 3,
            coupling_tolerance: None,
        }
    }
}

/// The coupled problem as a single Markov problem on the concatenated state.
///
/// The decision at `t` sees the coupling target `d_t`; atoms of `xi_t` with
/// the same target share an observation class. Candidate controls are the
/// product of the unit meshes, filtered by the coupling equality. A declared
/// slack unit is not meshed; its control is solved from the equality.
pub struct JointModel<S> {
    problem: Arc<ProblemSpec<S>>,
    x_off: Vec<usize>,
    u_off: Vec<usize>,
    observations: Vec<Observation>,
    /// `targets[t][class]`.
    targets: Vec<Vec<Vec<S>>>,
    /// Flattened product candidates per `t`, slack slots left at zero.
    free: Vec<Vec<S>>,
    tolerance: S,
    mesh: ControlMesh<S>,
}

impl<S: Scalar> JointModel<S> {
    pub fn new(problem: &ValidatedProblem<S>, options: &JointOptions<S>) -> Result<Self> {
        let p = problem.shared();
        let horizon = p.horizon();
        let n = p.units();
        if options.mesh_points.len() != n || options.grid_points.len() != n {
            return Err(Error::Dimension(format!(
                "options list {} mesh / {} grid entries for {n} units",
                options.mesh_points.len(),
                options.grid_points.len()
            )));
        }
        let mut x_off = vec![0];
        let mut u_off = vec![0];
        for unit in &p.subsystems {
            x_off.push(x_off.last().unwrap() + unit.state_dim);
            u_off.push(u_off.last().unwrap() + unit.control_dim);
        }

        let mut units = Vec::with_capacity(n);
        for (i, unit) in p.subsystems.iter().enumerate() {
            if Some(i) == p.slack_unit {
                units.push(vec![vec![vec![S::zero(); unit.control_dim]]; horizon]);
            } else {
                units.push(ControlMesh::uniform_unit(
                    &unit.control_bounds,
                    &options.mesh_points[i],
                )?);
            }
        }
        let mesh = ControlMesh { units };

        let m = *u_off.last().unwrap();
        let free = (0..horizon)
            .map(|t| {
                let per_unit: Vec<Vec<Vec<S>>> = (0..n).map(|i| mesh.unit(i, t).to_vec()).collect();
                super::cartesian(&per_unit)
                    .into_iter()
                    .flat_map(|combo| combo.into_iter().flatten())
                    .collect::<Vec<S>>()
            })
            .collect::<Vec<_>>();
        debug_assert!(free.iter().all(|f| m == 0 || f.len() % m == 0));

        let mut observations = Vec::with_capacity(horizon + 1);
        let mut targets = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let stage = p.noise.stage(t);
            if t == horizon {
                observations.push(Observation::blind(stage.len()));
                targets.push(vec![p.target(t, &stage.atoms[0])]);
                continue;
            }
            let mut distinct: Vec<Vec<S>> = Vec::new();
            let mut class_of_atom = Vec::with_capacity(stage.len());
            for atom in &stage.atoms {
                let target = p.target(t, atom);
                let class = match distinct.iter().position(|d| *d == target) {
                    Some(c) => c,
                    None => {
                        distinct.push(target);
                        distinct.len() - 1
                    }
                };
                class_of_atom.push(class);
            }
            observations.push(Observation {
                class_of_atom,
                classes: distinct.len(),
            });
            targets.push(distinct);
        }

        let tolerance = options.coupling_tolerance.unwrap_or_else(|| {
            let mut spacing = S::infinity();
            for (i, unit) in p.subsystems.iter().enumerate() {
                if Some(i) == p.slack_unit {
                    continue;
                }
                for b in &unit.control_bounds {
                    for ((lo, hi), &k) in b.lower.iter().zip(&b.upper).zip(&options.mesh_points[i])
                    {
                        if k > 1 && hi > lo {
                            spacing = spacing.min((*hi - *lo) / S::of((k - 1) as f64));
                        }
                    }
                }
            }
            if spacing.is_finite() {
                spacing / S::of(2.0)
            } else {
                S::of(BOUND_TOL)
            }
        });

        Ok(Self {
            problem: p,
            x_off,
            u_off,
            observations,
            targets,
            free,
            tolerance,
            mesh,
        })
    }

    pub fn problem(&self) -> &ProblemSpec<S> {
        &self.problem
    }

    pub fn mesh(&self) -> &ControlMesh<S> {
        &self.mesh
    }

    pub fn coupling_tolerance(&self) -> S {
        self.tolerance
    }

    pub fn unit_state<'x>(&self, x: &'x [S], i: usize) -> &'x [S] {
        &x[self.x_off[i]..self.x_off[i + 1]]
    }

    pub fn unit_control<'u>(&self, u: &'u [S], i: usize) -> &'u [S] {
        &u[self.u_off[i]..self.u_off[i + 1]]
    }

    /// Coupling target of observation class `class` at `t`.
    pub fn target(&self, t: usize, class: usize) -> &[S] {
        &self.targets[t][class]
    }

    /// Uniform grids over the unit state boxes, one per `t = 0..=T`.
    pub fn grids(&self, options: &JointOptions<S>) -> Result<Vec<Arc<Grid<S>>>> {
        (0..=self.problem.horizon())
            .map(|t| {
                let mut lower = Vec::new();
                let mut upper = Vec::new();
                let mut counts = Vec::new();
                for (i, unit) in self.problem.subsystems.iter().enumerate() {
                    let b = &unit.state_bounds[t];
                    lower.extend_from_slice(&b.lower);
                    upper.extend_from_slice(&b.upper);
                    counts.extend_from_slice(&options.grid_points[i]);
                }
                Grid::uniform(&lower, &upper, &counts).map(Arc::new)
            })
            .collect()
    }

    /// Admissible joint controls at `(t, x)` for an arbitrary coupling target.
    pub fn candidates_for_target(
        &self,
        t: usize,
        x: &[S],
        target: &[S],
        out: &mut Vec<S>,
    ) -> Result<()> {
        let p = &*self.problem;
        let m = *self.u_off.last().unwrap();
        let dim = p.coupling_dim;
        let mut g = vec![S::zero(); dim];
        let mut r = vec![S::zero(); dim];

        let slack = match p.slack_unit {
            Some(s) => {
                let (g0, lu) = affine_coupling(&p.subsystems[s], self.unit_state(x, s), t, dim)?;
                Some((s, g0, lu))
            }
            None => None,
        };

        for cand in self.free[t].chunks_exact(m.max(1)) {
            let mut u = cand[..m].to_vec();
            for (rk, tk) in r.iter_mut().zip(target) {
                *rk = -*tk;
            }
            for (i, unit) in p.subsystems.iter().enumerate() {
                if slack.as_ref().is_some_and(|(s, ..)| *s == i) {
                    continue;
                }
                (unit.coupling)(self.unit_state(x, i), self.unit_control(&u, i), t, &mut g);
                for (rk, gk) in r.iter_mut().zip(&g) {
                    *rk += *gk;
                }
            }
            match &slack {
                Some((s, g0, lu)) => {
                    let rhs: Vec<S> = r.iter().zip(g0).map(|(rk, gk)| -*rk - *gk).collect();
                    let v = lu.solve(&rhs);
                    let bounds = &p.subsystems[*s].control_bounds[t];
                    if !bounds.contains(&v, S::of(BOUND_TOL)) {
                        continue;
                    }
                    u[self.u_off[*s]..self.u_off[*s + 1]].copy_from_slice(&v);
                }
                None => {
                    if r.iter().any(|rk| rk.abs() > self.tolerance) {
                        continue;
                    }
                }
            }
            out.extend_from_slice(&u);
        }
        Ok(())
    }

    /// Bellman minimum at `(t, x)` with the coupling target replaced by `target`.
    pub fn stage_minimum(
        &self,
        next: &ValueFunction<S>,
        t: usize,
        x: &[S],
        target: &[S],
    ) -> Result<S> {
        let mut buf = Vec::new();
        self.candidates_for_target(t, x, target, &mut buf)?;
        Ok(minimize_over(self, next, t, x, &buf)?.value)
    }

    /// Multiplier of the coupling equality at `(t, x)`: minus the central
    /// difference of the Bellman minimum in the coupling target, step `h`.
    ///
    /// Components whose perturbed minima are not both finite are `NaN`.
    pub fn marginal_price(
        &self,
        next: &ValueFunction<S>,
        t: usize,
        x: &[S],
        class: usize,
        h: S,
    ) -> Result<Vec<S>> {
        let base = self.target(t, class).to_vec();
        let mut out = Vec::with_capacity(base.len());
        for j in 0..base.len() {
            let mut up = base.clone();
            up[j] += h;
            let mut down = base.clone();
            down[j] -= h;
            let qu = self.stage_minimum(next, t, x, &up)?;
            let qd = self.stage_minimum(next, t, x, &down)?;
            out.push(if qu.is_finite() && qd.is_finite() {
                -(qu - qd) / (h + h)
            } else {
                S::nan()
            });
        }
        Ok(out)
    }
}

impl<S: Scalar> StagewiseProblem<S> for JointModel<S> {
    fn horizon(&self) -> usize {
        self.problem.horizon()
    }

    fn state_dim(&self, _t: usize) -> usize {
        *self.x_off.last().unwrap()
    }

    fn control_dim(&self) -> usize {
        *self.u_off.last().unwrap()
    }

    fn noise(&self) -> &NoiseModel<S> {
        &self.problem.noise
    }

    fn observation(&self, t: usize) -> &Observation {
        &self.observations[t]
    }

    fn state_admissible(&self, t: usize, x: &[S]) -> bool {
        self.problem
            .subsystems
            .iter()
            .enumerate()
            .all(|(i, unit)| unit.state_bounds[t].contains(self.unit_state(x, i), S::of(BOUND_TOL)))
    }

    fn candidates(&self, t: usize, x: &[S], class: usize, out: &mut Vec<S>) {
        self.candidates_for_target(t, x, &self.targets[t][class], out)
            .expect("slack coupling was checked when the model was built");
    }

    fn transition(&self, t: usize, x: &[S], u: &[S], next_atom: usize, next: &mut [S]) -> S {
        let xi = &self.problem.noise.stage(t + 1).atoms[next_atom];
        let mut cost = S::zero();
        for (i, unit) in self.problem.subsystems.iter().enumerate() {
            let (xs, us) = (self.unit_state(x, i), self.unit_control(u, i));
            cost += (unit.stage_cost)(xs, us, xi, t);
            (unit.dynamics)(xs, us, xi, t, &mut next[self.x_off[i]..self.x_off[i + 1]]);
        }
        cost
    }

    fn terminal_cost(&self, x: &[S]) -> S {
        self.problem
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, unit)| (unit.terminal_cost)(self.unit_state(x, i)))
            .sum()
    }

    fn initial_state(&self, _atom: usize) -> Vec<S> {
        self.problem
            .subsystems
            .iter()
            .flat_map(|u| u.initial_state.iter().copied())
            .collect()
    }
}

pub struct JointSolution<S> {
    pub model: JointModel<S>,
    pub grids: Vec<Arc<Grid<S>>>,
    pub values: Vec<ValueFunction<S>>,
    pub policy: FeedbackPolicy<S>,
    /// Expected `V_0` at the initial state over the atoms of `xi_0`.
    pub optimum: S,
}

impl<S: Scalar> JointSolution<S> {
    /// Trajectory of the optimal feedback along `path`.
    pub fn simulate(&self, path: &NoisePath<S>) -> Result<SimulatedPath<S>> {
        simulate_policy(&self.model, &self.values, path)
    }

    /// Marginal prices along a simulated trajectory, one per `t = 0..T`.
    pub fn price_path(
        &self,
        path: &NoisePath<S>,
        sim: &SimulatedPath<S>,
        h: S,
    ) -> Result<Vec<Vec<S>>> {
        (0..self.model.horizon())
            .map(|t| {
                let class = self.model.observation(t).class_of_atom[path.atoms[t]];
                self.model
                    .marginal_price(&self.values[t + 1], t, &sim.states[t], class, h)
            })
            .collect()
    }
}

/// Solves the coupled problem by backward DP on the joint state.
pub fn joint_solve<S: Scalar>(
    problem: &ValidatedProblem<S>,
    options: &JointOptions<S>,
) -> Result<JointSolution<S>> {
    let dim = problem.state_dim();
    if dim > options.dimension_cap {
        return Err(Error::DimensionCap {
            dim,
            cap: options.dimension_cap,
        });
    }
    let model = JointModel::new(problem, options)?;
    let grids = model.grids(options)?;
    let sol = backward_sweep(&model, &grids)?;
    let optimum = sol.expected_initial_value(&model)?;
    if !optimum.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    Ok(JointSolution {
        model,
        grids,
        values: sol.values,
        policy: sol.policy,
        optimum,
    })
}
