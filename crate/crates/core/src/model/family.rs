//! The closed family of unit models the configuration file can declare:
//! storage dynamics `x' = x - u + xi[inflow]`, costs `q u^2 + l u`, terminal
//! costs `q x^2 + l x + c` and coupling `g = k u`.

use std::sync::Arc;

use super::{Bounds, SubsystemSpec};
use crate::scalar::Scalar;

/// `quadratic * v^2 + linear * v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearQuadratic<S> {
    pub quadratic: S,
    pub linear: S,
}

impl<S: Scalar> LinearQuadratic<S> {
    #[inline]
    pub fn eval(&self, v: S) -> S {
        (self.quadratic * v + self.linear) * v
    }
}

/// `quadratic * x^2 + linear * x + constant`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerminalQuadratic<S> {
    pub quadratic: S,
    pub linear: S,
    pub constant: S,
}

impl<S: Scalar> TerminalQuadratic<S> {
    pub fn linear(k: S) -> Self {
        Self {
            quadratic: S::zero(),
            linear: k,
            constant: S::zero(),
        }
    }

    #[inline]
    pub fn eval(&self, x: S) -> S {
        (self.quadratic * x + self.linear) * x + self.constant
    }
}

/// Reservoir-like scalar state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Storage<S> {
    pub lower: S,
    pub upper: S,
    pub initial: S,
    pub inflow_coordinate: Option<usize>,
    pub terminal: TerminalQuadratic<S>,
}

/// Parameters of one unit with a scalar control.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitParams<S> {
    pub name: String,
    /// `None` for a unit without dynamics (e.g. a thermal plant).
    pub storage: Option<Storage<S>>,
    pub control_lower: S,
    pub control_upper: S,
    pub cost: LinearQuadratic<S>,
    pub coupling: S,
}

impl<S: Scalar> UnitParams<S> {
    pub fn build(&self, horizon: usize) -> SubsystemSpec<S> {
        let cost = self.cost;
        let k = self.coupling;
        let control_bounds = vec![Bounds::scalar(self.control_lower, self.control_upper); horizon];
        let stage_cost = Arc::new(move |_x: &[S], u: &[S], _xi: &[S], _t: usize| cost.eval(u[0]));
        let coupling = Arc::new(move |_x: &[S], u: &[S], _t: usize, out: &mut [S]| {
            out[0] = k * u[0];
        });
        match self.storage {
            Some(st) => {
                let inflow = st.inflow_coordinate;
                let terminal = st.terminal;
                SubsystemSpec {
                    name: self.name.clone(),
                    state_dim: 1,
                    control_dim: 1,
                    dynamics: Arc::new(
                        move |x: &[S], u: &[S], xi: &[S], _t: usize, out: &mut [S]| {
                            out[0] = x[0] - u[0] + inflow.map_or(S::zero(), |c| xi[c]);
                        },
                    ),
                    stage_cost,
                    terminal_cost: Arc::new(move |x: &[S]| terminal.eval(x[0])),
                    coupling,
                    state_bounds: vec![Bounds::scalar(st.lower, st.upper); horizon + 1],
                    control_bounds,
                    initial_state: vec![st.initial],
                }
            }
            None => SubsystemSpec {
                name: self.name.clone(),
                state_dim: 0,
                control_dim: 1,
                dynamics: Arc::new(|_x: &[S], _u: &[S], _xi: &[S], _t: usize, _out: &mut [S]| {}),
                stage_cost,
                terminal_cost: Arc::new(|_x: &[S]| S::zero()),
                coupling,
                state_bounds: vec![Bounds::empty(); horizon + 1],
                control_bounds,
                initial_state: Vec::new(),
            },
        }
    }
}
