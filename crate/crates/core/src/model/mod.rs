//! The coupled control problem: independent units, white noise, and a static
//! coupling equality `sum_i g_t^i(x^i, u^i) = d_t` at every step.
//!
//! Time convention: noise stages are indexed `0..=T`. The realization `xi_t`
//! is observed before the control `u_t` is chosen (its demand coordinate sets
//! the coupling target), while `xi_{t+1}` drives the step `t -> t+1` through
//! the dynamics and the stage cost.

mod family;
mod noise;

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

pub use family::{LinearQuadratic, Storage, TerminalQuadratic, UnitParams};
pub use noise::{derive_seed, sample_path, NoiseModel, NoisePath, NoiseStage};

use crate::error::{Error, IssueKind, Result, ValidationIssue};
use crate::linalg::{Lu, Matrix};
use crate::scalar::Scalar;

/// `(state, control, next noise, t, next state out)`.
pub type DynamicsFn<S> = Arc<dyn Fn(&[S], &[S], &[S], usize, &mut [S]) + Send + Sync>;
/// `(state, control, next noise, t) -> cost`.
pub type StageCostFn<S> = Arc<dyn Fn(&[S], &[S], &[S], usize) -> S + Send + Sync>;
pub type TerminalCostFn<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;
/// `(state, control, t, out)` with `out` of length `coupling_dim`.
pub type CouplingFn<S> = Arc<dyn Fn(&[S], &[S], usize, &mut [S]) + Send + Sync>;
/// `(noise at t, t, out)`: the right-hand side `d_t` of the coupling equality.
pub type TargetFn<S> = Arc<dyn Fn(&[S], usize, &mut [S]) + Send + Sync>;

/// Componentwise box `lower <= v <= upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds<S> {
    pub lower: Vec<S>,
    pub upper: Vec<S>,
}

impl<S: Scalar> Bounds<S> {
    pub fn new(lower: Vec<S>, upper: Vec<S>) -> Self {
        Self { lower, upper }
    }

    pub fn scalar(lower: S, upper: S) -> Self {
        Self::new(vec![lower], vec![upper])
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Membership with an absolute slack of `tol` scaled by each bound's magnitude.
    pub fn contains(&self, v: &[S], tol: S) -> bool {
        v.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((&x, &lo), &hi)| {
                x >= lo - crate::scalar::scaled_tol(tol, lo)
                    && x <= hi + crate::scalar::scaled_tol(tol, hi)
            })
    }
}

/// One independent unit of the system.
#[derive(Clone)]
pub struct SubsystemSpec<S> {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub dynamics: DynamicsFn<S>,
    pub stage_cost: StageCostFn<S>,
    pub terminal_cost: TerminalCostFn<S>,
    pub coupling: CouplingFn<S>,
    /// State box per `t = 0..=T`.
    pub state_bounds: Vec<Bounds<S>>,
    /// Control box per `t = 0..T`.
    pub control_bounds: Vec<Bounds<S>>,
    pub initial_state: Vec<S>,
}

impl<S: Scalar> fmt::Debug for SubsystemSpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubsystemSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("initial_state", &self.initial_state)
            .finish_non_exhaustive()
    }
}

impl<S: Scalar> SubsystemSpec<S> {
    pub fn horizon(&self) -> usize {
        self.control_bounds.len()
    }
}

/// The full coupled problem.
#[derive(Clone)]
pub struct ProblemSpec<S> {
    pub subsystems: Vec<SubsystemSpec<S>>,
    pub noise: NoiseModel<S>,
    pub coupling_dim: usize,
    pub coupling_target: TargetFn<S>,
    /// Noise coordinate holding the scalar demand `d_t`, if any.
    pub demand_coordinate: Option<usize>,
    /// Unit whose control can be solved from the coupling equality.
    pub slack_unit: Option<usize>,
}

impl<S: Scalar> fmt::Debug for ProblemSpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("subsystems", &self.subsystems)
            .field("horizon", &self.noise.horizon())
            .field("coupling_dim", &self.coupling_dim)
            .field("demand_coordinate", &self.demand_coordinate)
            .field("slack_unit", &self.slack_unit)
            .finish_non_exhaustive()
    }
}

impl<S: Scalar> ProblemSpec<S> {
    /// Scalar coupling whose target is the demand coordinate of the noise.
    pub fn with_demand(
        subsystems: Vec<SubsystemSpec<S>>,
        noise: NoiseModel<S>,
        demand_coordinate: usize,
    ) -> Self {
        Self {
            subsystems,
            noise,
            coupling_dim: 1,
            coupling_target: Arc::new(move |xi: &[S], _t: usize, out: &mut [S]| {
                out[0] = xi[demand_coordinate];
            }),
            demand_coordinate: Some(demand_coordinate),
            slack_unit: None,
        }
    }

    pub fn with_slack(mut self, unit: usize) -> Self {
        self.slack_unit = Some(unit);
        self
    }

    pub fn horizon(&self) -> usize {
        self.noise.horizon()
    }

    pub fn units(&self) -> usize {
        self.subsystems.len()
    }

    /// Sum of unit state dimensions.
    pub fn state_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.state_dim).sum()
    }

    pub fn target(&self, t: usize, xi: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.coupling_dim];
        (self.coupling_target)(xi, t, &mut out);
        out
    }

    /// Demand value of a realization, zero when no demand coordinate is declared.
    pub fn demand(&self, xi: &[S]) -> S {
        self.demand_coordinate.map_or(S::zero(), |c| xi[c])
    }

    pub fn unit_coupling(&self, unit: usize, t: usize, x: &[S], u: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.coupling_dim];
        (self.subsystems[unit].coupling)(x, u, t, &mut out);
        out
    }
}

/// A problem that passed [`validate`].
pub struct ValidatedProblem<S>(Arc<ProblemSpec<S>>);

impl<S> Clone for ValidatedProblem<S> {
    fn clone(&self) -> Self {
        Self(Arc::clone(&self.0))
    }
}

impl<S: Scalar> fmt::Debug for ValidatedProblem<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ValidatedProblem").field(&*self.0).finish()
    }
}

impl<S> Deref for ValidatedProblem<S> {
    type Target = ProblemSpec<S>;

    fn deref(&self) -> &ProblemSpec<S> {
        &self.0
    }
}

impl<S> ValidatedProblem<S> {
    pub fn shared(&self) -> Arc<ProblemSpec<S>> {
        Arc::clone(&self.0)
    }
}

const MASS_TOL: f64 = 1e-12;

/// Checks every structural invariant and reports all violations at once.
pub fn validate<S: Scalar>(problem: ProblemSpec<S>) -> Result<ValidatedProblem<S>> {
    let mut issues: Vec<ValidationIssue> = Vec::new();

    let horizon = problem.noise.horizon();
    if problem.noise.stages.is_empty() || horizon == 0 {
        issue(
            &mut issues,
            IssueKind::HorizonMismatch,
            "noise".into(),
            "noise model needs stages t=0..=T with T >= 1".into(),
        );
    }
    let noise_dim = problem.noise.dim();
    for (t, stage) in problem.noise.stages.iter().enumerate() {
        let loc = format!("noise t={t}");
        if stage.atoms.is_empty() {
            issue(
                &mut issues,
                IssueKind::ProbabilityMass,
                loc.clone(),
                "empty support".into(),
            );
            continue;
        }
        if stage.atoms.len() != stage.weights.len() {
            issue(
                &mut issues,
                IssueKind::DimensionMismatch,
                loc.clone(),
                format!(
                    "{} atoms but {} weights",
                    stage.atoms.len(),
                    stage.weights.len()
                ),
            );
        }
        if let Some(bad) = stage.atoms.iter().position(|a| a.len() != noise_dim) {
            issue(
                &mut issues,
                IssueKind::DimensionMismatch,
                loc.clone(),
                format!(
                    "atom {bad} has length {} instead of {noise_dim}",
                    stage.atoms[bad].len()
                ),
            );
        }
        if stage.atoms.iter().flatten().any(|v| !v.is_finite()) {
            issue(
                &mut issues,
                IssueKind::NonFinite,
                loc.clone(),
                "non-finite atom".into(),
            );
        }
        let mass: S = stage.weights.iter().copied().sum();
        if stage
            .weights
            .iter()
            .any(|w| *w < S::zero() || !w.is_finite())
            || (mass - S::one()).abs() > S::of(MASS_TOL)
        {
            issue(
                &mut issues,
                IssueKind::ProbabilityMass,
                loc,
                format!("weights must be nonnegative and sum to 1, got total {mass}"),
            );
        }
    }
    if let Some(c) = problem.demand_coordinate {
        if c >= noise_dim {
            issue(
                &mut issues,
                IssueKind::DimensionMismatch,
                "demand_coordinate".into(),
                format!("coordinate {c} outside noise dimension {noise_dim}"),
            );
        }
    }
    if problem.coupling_dim == 0 {
        issue(
            &mut issues,
            IssueKind::DimensionMismatch,
            "coupling_dim".into(),
            "coupling dimension must be positive".into(),
        );
    }
    if let Some(s) = problem.slack_unit {
        if s >= problem.subsystems.len() {
            issue(
                &mut issues,
                IssueKind::DimensionMismatch,
                "slack_unit".into(),
                format!("unit {s} does not exist"),
            );
        } else if problem.subsystems[s].control_dim != problem.coupling_dim {
            issue(
                &mut issues,
                IssueKind::DimensionMismatch,
                "slack_unit".into(),
                "slack unit control dimension must equal the coupling dimension".into(),
            );
        }
    }
    if problem.subsystems.is_empty() {
        issue(
            &mut issues,
            IssueKind::DimensionMismatch,
            "units".into(),
            "no units declared".into(),
        );
    }

    for (i, unit) in problem.subsystems.iter().enumerate() {
        let who = format!("unit {} ({})", i + 1, unit.name);
        if unit.control_dim == 0 {
            issue(
                &mut issues,
                IssueKind::DimensionMismatch,
                who.clone(),
                "control dimension must be positive".into(),
            );
        }
        if unit.state_bounds.len() != horizon + 1 {
            issue(
                &mut issues,
                IssueKind::HorizonMismatch,
                format!("{who} state bounds"),
                format!(
                    "{} entries, expected T+1 = {}",
                    unit.state_bounds.len(),
                    horizon + 1
                ),
            );
        }
        if unit.control_bounds.len() != horizon {
            issue(
                &mut issues,
                IssueKind::HorizonMismatch,
                format!("{who} control bounds"),
                format!(
                    "{} entries, expected T = {horizon}",
                    unit.control_bounds.len()
                ),
            );
        }
        if unit.initial_state.len() != unit.state_dim {
            issue(
                &mut issues,
                IssueKind::DimensionMismatch,
                format!("{who} initial state"),
                format!(
                    "length {} vs state_dim {}",
                    unit.initial_state.len(),
                    unit.state_dim
                ),
            );
        }
        for (t, b) in unit.state_bounds.iter().enumerate() {
            check_box(&mut issues, &who, "state", t, b, unit.state_dim);
        }
        for (t, b) in unit.control_bounds.iter().enumerate() {
            check_box(&mut issues, &who, "control", t, b, unit.control_dim);
        }
        if let Some(b0) = unit.state_bounds.first() {
            if b0.dim() == unit.initial_state.len() && !b0.contains(&unit.initial_state, S::zero())
            {
                issue(
                    &mut issues,
                    IssueKind::InitialStateOutOfBounds,
                    format!("{who} initial state"),
                    format!("{:?} outside the t=0 state bounds", unit.initial_state),
                );
            }
        }
    }

    // Totality spot-check at the box corners for every noise atom.
    if issues.is_empty() {
        for (i, unit) in problem.subsystems.iter().enumerate() {
            let who = format!("unit {} ({})", i + 1, unit.name);
            let mut next = vec![S::zero(); unit.state_dim];
            let mut g = vec![S::zero(); problem.coupling_dim];
            'time: for t in 0..horizon {
                let sb = &unit.state_bounds[t];
                let cb = &unit.control_bounds[t];
                let corners = [(&sb.lower, &cb.lower), (&sb.upper, &cb.upper)];
                for (x, u) in corners {
                    if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
                        continue;
                    }
                    for xi in &problem.noise.stages[t + 1].atoms {
                        (unit.dynamics)(x, u, xi, t, &mut next);
                        let cost = (unit.stage_cost)(x, u, xi, t);
                        (unit.coupling)(x, u, t, &mut g);
                        if !cost.is_finite()
                            || next.iter().any(|v| !v.is_finite())
                            || g.iter().any(|v| !v.is_finite())
                        {
                            issue(
                                &mut issues,
                                IssueKind::NonFinite,
                                format!("{who} t={t}"),
                                "dynamics, cost or coupling is not finite at a box corner".into(),
                            );
                            break 'time;
                        }
                    }
                }
            }
        }
        for t in 0..horizon {
            for xi in &problem.noise.stages[t].atoms {
                if problem.target(t, xi).iter().any(|v| !v.is_finite()) {
                    issue(
                        &mut issues,
                        IssueKind::NonFinite,
                        format!("coupling target t={t}"),
                        "target is not finite".into(),
                    );
                }
            }
        }
    }

    if issues.is_empty() {
        Ok(ValidatedProblem(Arc::new(problem)))
    } else {
        Err(Error::Validation(issues))
    }
}

fn issue(issues: &mut Vec<ValidationIssue>, kind: IssueKind, location: String, message: String) {
    issues.push(ValidationIssue {
        kind,
        location,
        message,
    });
}

fn check_box<S: Scalar>(
    issues: &mut Vec<ValidationIssue>,
    who: &str,
    what: &str,
    t: usize,
    b: &Bounds<S>,
    dim: usize,
) {
    let loc = format!("{who} {what} bounds t={t}");
    if b.lower.len() != dim || b.upper.len() != dim {
        issue(
            issues,
            IssueKind::DimensionMismatch,
            loc,
            format!(
                "bounds of length {}/{} for dimension {dim}",
                b.lower.len(),
                b.upper.len()
            ),
        );
        return;
    }
    for (k, (lo, hi)) in b.lower.iter().zip(&b.upper).enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            issue(
                issues,
                IssueKind::BoundInversion,
                loc.clone(),
                format!("component {k}: lower {lo} > upper {hi}"),
            );
        }
    }
}

/// `sum_i g_t^i(x^i, u^i) - d_t`.
pub fn coupling_residual<S: Scalar>(
    problem: &ProblemSpec<S>,
    t: usize,
    states: &[Vec<S>],
    controls: &[Vec<S>],
    noise: &[S],
) -> Result<Vec<S>> {
    let n = problem.units();
    if states.len() != n || controls.len() != n {
        return Err(Error::Dimension(format!(
            "{} states and {} controls for {n} units",
            states.len(),
            controls.len()
        )));
    }
    let mut total = problem.target(t, noise);
    for v in total.iter_mut() {
        *v = -*v;
    }
    let mut g = vec![S::zero(); problem.coupling_dim];
    for (i, unit) in problem.subsystems.iter().enumerate() {
        if states[i].len() != unit.state_dim || controls[i].len() != unit.control_dim {
            return Err(Error::Dimension(format!(
                "unit {} ({}) expects state {} / control {}",
                i + 1,
                unit.name,
                unit.state_dim,
                unit.control_dim
            )));
        }
        (unit.coupling)(&states[i], &controls[i], t, &mut g);
        for (acc, gi) in total.iter_mut().zip(&g) {
            *acc += *gi;
        }
    }
    Ok(total)
}

/// Coupling of a unit whose control enters affinely, `g(x, u) = g0 + B u`,
/// probed at `x`. Returns `g0` and the factorized `B`.
pub(crate) fn affine_coupling<S: Scalar>(
    unit: &SubsystemSpec<S>,
    x: &[S],
    t: usize,
    dim: usize,
) -> Result<(Vec<S>, Lu<S>)> {
    let mut e = vec![S::zero(); unit.control_dim];
    let mut g0 = vec![S::zero(); dim];
    let mut g = vec![S::zero(); dim];
    (unit.coupling)(x, &e, t, &mut g0);
    let mut b = Matrix::zeros(dim, unit.control_dim);
    for j in 0..unit.control_dim {
        e[j] = S::one();
        (unit.coupling)(x, &e, t, &mut g);
        e[j] = S::zero();
        for k in 0..dim {
            b.set(k, j, g[k] - g0[k]);
        }
    }
    Ok((g0, Lu::factor(&b, "slack coupling")?))
}

/// States `x_0..=x_T` and controls `u_0..u_T` of a single unit.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitTrajectory<S> {
    pub states: Vec<Vec<S>>,
    pub controls: Vec<Vec<S>>,
}

const DYNAMICS_TOL: f64 = 1e-9;

/// Realized cost of one unit along a path; rejects trajectories that do not
/// follow the unit dynamics.
pub fn unit_path_cost<S: Scalar>(
    unit: &SubsystemSpec<S>,
    index: usize,
    path: &NoisePath<S>,
    traj: &UnitTrajectory<S>,
) -> Result<S> {
    let horizon = path.horizon();
    if traj.states.len() != horizon + 1 || traj.controls.len() != horizon {
        return Err(Error::Dimension(format!(
            "unit {} trajectory has {} states / {} controls for horizon {horizon}",
            index + 1,
            traj.states.len(),
            traj.controls.len()
        )));
    }
    let mut next = vec![S::zero(); unit.state_dim];
    let mut total = S::zero();
    for t in 0..horizon {
        let xi = &path.realizations[t + 1];
        let (x, u) = (&traj.states[t], &traj.controls[t]);
        (unit.dynamics)(x, u, xi, t, &mut next);
        let gap = next
            .iter()
            .zip(&traj.states[t + 1])
            .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        if gap
            > crate::scalar::scaled_tol(
                S::of(DYNAMICS_TOL),
                next.iter().fold(S::zero(), |m, v| m.max(v.abs())),
            )
        {
            return Err(Error::Invalid(format!(
                "unit {} trajectory breaks its dynamics at t={t} (gap {gap})",
                index + 1
            )));
        }
        total += (unit.stage_cost)(x, u, xi, t);
    }
    Ok(total + (unit.terminal_cost)(&traj.states[horizon]))
}

/// `sum_t sum_i L_t^i + sum_i K^i(x_T^i)` along a path.
pub fn pathwise_cost<S: Scalar>(
    problem: &ProblemSpec<S>,
    path: &NoisePath<S>,
    trajectory: &[UnitTrajectory<S>],
) -> Result<S> {
    if trajectory.len() != problem.units() {
        return Err(Error::Dimension(format!(
            "{} unit trajectories for {} units",
            trajectory.len(),
            problem.units()
        )));
    }
    problem
        .subsystems
        .iter()
        .zip(trajectory)
        .enumerate()
        .map(|(i, (unit, traj))| unit_path_cost(unit, i, path, traj))
        .sum()
}

#[cfg(test)]
mod tests;
