//! Tiny two-unit storage instances with integer data, and an exhaustive
//! scenario-tree search written against the raw numbers only.
//!
//! Every reachable state is an integer, so the joint grid (one level per
//! integer) never interpolates and both solvers see exactly the same mesh.

#![allow(dead_code)]

use dadp_core::dp::JointOptions;
use dadp_core::model::{
    validate, LinearQuadratic, NoiseModel, NoiseStage, ProblemSpec, Storage, TerminalQuadratic,
    UnitParams, ValidatedProblem,
};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub horizon: usize,
    /// Mesh size of unit 1; its control box is `[0, mesh - 1]`.
    pub mesh: usize,
    pub x_max: [i64; 2],
    pub x0: [i64; 2],
    /// Control upper bound of the slack unit 2.
    pub slack_upper: i64,
    /// `(quadratic, linear)` stage cost per unit.
    pub cost: [(f64, f64); 2],
    /// `(quadratic, linear)` terminal cost per unit.
    pub terminal: [(f64, f64); 2],
    /// `atoms[t][k] = (d, a1, a2)`.
    pub atoms: Vec<[[i64; 3]; 2]>,
    pub weights: Vec<[f64; 2]>,
}

impl TinyInstance {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let horizon = 3;
        let mesh = rng.gen_range(2..=4);
        let x_max = [rng.gen_range(3..=6), rng.gen_range(3..=6)];
        let x0 = [rng.gen_range(0..=x_max[0]), rng.gen_range(0..=x_max[1])];
        let atoms = (0..=horizon)
            .map(|_| {
                let mut atom = || {
                    [
                        rng.gen_range(1..=5),
                        rng.gen_range(0..=2),
                        rng.gen_range(0..=2),
                    ]
                };
                [atom(), atom()]
            })
            .collect();
        let weights = (0..=horizon)
            .map(|_| {
                let p = rng.gen_range(0.1..0.9);
                [p, 1.0 - p]
            })
            .collect();
        Self {
            horizon,
            mesh,
            x_max,
            x0,
            slack_upper: rng.gen_range(3..=5),
            cost: [
                (rng.gen_range(0.1..2.0), rng.gen_range(-1.0..1.0)),
                (rng.gen_range(0.1..2.0), rng.gen_range(-1.0..1.0)),
            ],
            terminal: [
                (rng.gen_range(0.0..0.5), rng.gen_range(-3.0..0.0)),
                (rng.gen_range(0.0..0.5), rng.gen_range(-3.0..0.0)),
            ],
            atoms,
            weights,
        }
    }

    pub fn problem(&self) -> ValidatedProblem<f64> {
        let unit = |i: usize, upper: i64| UnitParams {
            name: format!("u{}", i + 1),
            storage: Some(Storage {
                lower: 0.0,
                upper: self.x_max[i] as f64,
                initial: self.x0[i] as f64,
                inflow_coordinate: Some(i + 1),
                terminal: TerminalQuadratic {
                    quadratic: self.terminal[i].0,
                    linear: self.terminal[i].1,
                    constant: 0.0,
                },
            }),
            control_lower: 0.0,
            control_upper: upper as f64,
            cost: LinearQuadratic {
                quadratic: self.cost[i].0,
                linear: self.cost[i].1,
            },
            coupling: 1.0,
        };
        let stages = self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| NoiseStage {
                atoms: a
                    .iter()
                    .map(|v| v.iter().map(|&c| c as f64).collect())
                    .collect(),
                weights: w.to_vec(),
            })
            .collect();
        let units = vec![
            unit(0, self.mesh as i64 - 1).build(self.horizon),
            unit(1, self.slack_upper).build(self.horizon),
        ];
        validate(ProblemSpec::with_demand(units, NoiseModel::new(stages), 0).with_slack(1)).unwrap()
    }

    pub fn options(&self) -> JointOptions<f64> {
        JointOptions {
            grid_points: vec![
                vec![self.x_max[0] as usize + 1],
                vec![self.x_max[1] as usize + 1],
            ],
            mesh_points: vec![vec![self.mesh], vec![1]],
            dimension_cap: 3,
            coupling_tolerance: None,
        }
    }

    fn stage_cost(&self, i: usize, u: f64) -> f64 {
        let (q, l) = self.cost[i];
        q * u * u + l * u
    }

    fn terminal_cost(&self, i: usize, x: i64) -> f64 {
        let (q, l) = self.terminal[i];
        let x = x as f64;
        q * x * x + l * x
    }

    /// Minimum expected cost from `(t, x)` after observing atom `k` of `xi_t`.
    fn node_value(&self, t: usize, x: [i64; 2], k: usize) -> f64 {
        if t == self.horizon {
            return self.terminal_cost(0, x[0]) + self.terminal_cost(1, x[1]);
        }
        let d = self.atoms[t][k][0];
        let mut best = f64::INFINITY;
        for u1 in 0..self.mesh as i64 {
            let u2 = d - u1;
            if u2 < 0 || u2 > self.slack_upper {
                continue;
            }
            let mut acc = 0.0;
            for (j, &p) in self.weights[t + 1].iter().enumerate() {
                let a = self.atoms[t + 1][j];
                let next = [x[0] - u1 + a[1], x[1] - u2 + a[2]];
                if next[0] < 0 || next[0] > self.x_max[0] || next[1] < 0 || next[1] > self.x_max[1]
                {
                    acc = f64::INFINITY;
                    break;
                }
                let cost = self.stage_cost(0, u1 as f64) + self.stage_cost(1, u2 as f64);
                acc += p * (cost + self.node_value(t + 1, next, j));
            }
            best = best.min(acc);
        }
        best
    }

    /// Expected optimal cost over the atoms of `xi_0`.
    pub fn exhaustive(&self) -> f64 {
        self.weights[0]
            .iter()
            .enumerate()
            .map(|(k, &p)| p * self.node_value(0, self.x0, k))
            .sum()
    }
}

/// Draws instances until `n` feasible ones are found.
pub fn feasible_instances<R: Rng>(rng: &mut R, n: usize) -> Vec<TinyInstance> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let inst = TinyInstance::random(rng);
        if inst.exhaustive().is_finite() {
            out.push(inst);
        }
    }
    out
}
