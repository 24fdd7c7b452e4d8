//! The quadratic storage instance with proportional terminal weights, its
//! closed-form optimal multipliers, and an exact KKT solve on the scenario
//! tree used to check them.
//!
//! Noise vectors are `(d, a^1, .., a^N)`. Multipliers here follow the price
//! convention `c_i u^i = lambda` at the optimum (no terminal term); the
//! decomposition loop uses the opposite sign.

use crate::error::{Error, Result};
use crate::linalg::{solve, Matrix};
use crate::model::{LinearQuadratic, NoiseModel, NoisePath, ProblemSpec, Storage};
use crate::model::{TerminalQuadratic, UnitParams};
use crate::prices::{regress, PricePathSamples, Regression};
use crate::scalar::Scalar;

/// Largest KKT system (primal plus dual unknowns) [`kkt_solve`] accepts.
pub const KKT_SIZE_CAP: usize = 5000;
/// Closed-form and KKT multipliers must agree to this.
pub const PROPOSITION_TOL: f64 = 1e-6;

const RATIO_TOL: f64 = 1e-12;

/// `min E[sum_t sum_i c_i/2 (u_t^i)^2 + sum_i gamma_i/2 (x_T^i - x_0^i)^2]`
/// subject to `x_{t+1}^i = x_t^i - u_t^i + a_{t+1}^i` and `sum_i u_t^i = d_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSpec<S> {
    pub c: Vec<S>,
    pub gamma: Vec<S>,
    pub x0: Vec<S>,
    pub noise: NoiseModel<S>,
}

impl<S: Scalar> QuadraticSpec<S> {
    pub fn units(&self) -> usize {
        self.c.len()
    }

    pub fn horizon(&self) -> usize {
        self.noise.horizon()
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.units();
        if n == 0 || self.gamma.len() != n || self.x0.len() != n {
            return Err(Error::Dimension(format!(
                "{} cost weights, {} terminal weights, {} initial states",
                n,
                self.gamma.len(),
                self.x0.len()
            )));
        }
        if self.horizon() == 0 {
            return Err(Error::Invalid(
                "quadratic instance needs a horizon of at least 1".into(),
            ));
        }
        if self
            .noise
            .stages
            .iter()
            .any(|s| s.atoms.iter().any(|a| a.len() != n + 1))
        {
            return Err(Error::Dimension(format!(
                "noise atoms must have {} coordinates",
                n + 1
            )));
        }
        if self.c.iter().any(|c| !(*c > S::zero())) {
            return Err(Error::Invalid("cost weights must be positive".into()));
        }
        Ok(())
    }

    /// The common ratio `gamma_i / c_i`.
    pub fn proportionality(&self) -> Result<S> {
        self.check_shape()?;
        let alpha = self.gamma[0] / self.c[0];
        if !(alpha >= S::zero()) {
            return Err(Error::Hypothesis(format!(
                "gamma_1 / c_1 = {alpha} is negative"
            )));
        }
        for (i, (g, c)) in self.gamma.iter().zip(&self.c).enumerate().skip(1) {
            let r = *g / *c;
            if (r - alpha).abs() > S::of(RATIO_TOL) * alpha.abs().max(S::one()) {
                return Err(Error::Hypothesis(format!(
                    "gamma_{} / c_{} = {r} differs from gamma_1 / c_1 = {alpha}",
                    i + 1,
                    i + 1
                )));
            }
        }
        Ok(alpha)
    }

    /// `sum_i 1 / c_i`.
    pub fn compliance(&self) -> S {
        self.c.iter().map(|c| S::one() / *c).sum()
    }

    /// Storage units without bounds beyond the given boxes, demand at
    /// coordinate 0 and unit inflows at `1..=N`.
    pub fn problem(&self, state_box: &[(S, S)], control_box: &[(S, S)]) -> Result<ProblemSpec<S>> {
        self.check_shape()?;
        let n = self.units();
        if state_box.len() != n || control_box.len() != n {
            return Err(Error::Dimension(format!(
                "state and control boxes are needed for all {n} units"
            )));
        }
        let half = S::of(0.5);
        let horizon = self.horizon();
        let units = (0..n)
            .map(|i| {
                let (g, x0) = (self.gamma[i], self.x0[i]);
                UnitParams {
                    name: format!("unit{}", i + 1),
                    storage: Some(Storage {
                        lower: state_box[i].0,
                        upper: state_box[i].1,
                        initial: x0,
                        inflow_coordinate: Some(i + 1),
                        terminal: TerminalQuadratic {
                            quadratic: half * g,
                            linear: -g * x0,
                            constant: half * g * x0 * x0,
                        },
                    }),
                    control_lower: control_box[i].0,
                    control_upper: control_box[i].1,
                    cost: LinearQuadratic {
                        quadratic: half * self.c[i],
                        linear: S::zero(),
                    },
                    coupling: S::one(),
                }
                .build(horizon)
            })
            .collect();
        Ok(ProblemSpec::with_demand(units, self.noise.clone(), 0))
    }
}

fn stage_means<S: Scalar>(spec: &QuadraticSpec<S>) -> (Vec<S>, Vec<S>) {
    spec.noise
        .stages
        .iter()
        .map(|s| {
            let m = s.mean();
            (m[0], m[1..].iter().copied().sum::<S>())
        })
        .unzip()
}

struct ClosedForm<S> {
    alpha: S,
    compliance: S,
    mean_d: Vec<S>,
    mean_a: Vec<S>,
    horizon: usize,
}

impl<S: Scalar> ClosedForm<S> {
    fn new(spec: &QuadraticSpec<S>) -> Result<Self> {
        let alpha = spec.proportionality()?;
        let (mean_d, mean_a) = stage_means(spec);
        Ok(Self {
            alpha,
            compliance: spec.compliance(),
            mean_d,
            mean_a,
            horizon: spec.horizon(),
        })
    }

    fn initial(&self, d0: S) -> S {
        let a = self.alpha;
        let ea: S = self.mean_a[1..=self.horizon].iter().copied().sum();
        let ed: S = self.mean_d[1..self.horizon].iter().copied().sum();
        (d0 * (S::one() + a) - a * ea + a * ed) / self.compliance
    }

    /// `lambda_{t+1}` from `lambda_t`, the realization at `t` and at `t + 1`.
    fn step(&self, t: usize, lambda: S, now: &[S], next: &[S]) -> S {
        let a = self.alpha;
        let inflow: S = next[1..].iter().copied().sum();
        let inc = next[0] * (S::one() + a)
            - now[0]
            - a * self.mean_d[t + 1]
            - a * (inflow - self.mean_a[t + 1]);
        lambda + inc / self.compliance
    }
}

/// Closed-form optimal multipliers `lambda_0 .. lambda_{T-1}` along a path.
pub fn closed_form_lambda<S: Scalar>(
    spec: &QuadraticSpec<S>,
    path: &NoisePath<S>,
) -> Result<Vec<S>> {
    let cf = ClosedForm::new(spec)?;
    if path.realizations.len() != cf.horizon + 1 {
        return Err(Error::Dimension(format!(
            "path has {} realizations, expected {}",
            path.realizations.len(),
            cf.horizon + 1
        )));
    }
    let r = &path.realizations;
    let mut out = Vec::with_capacity(cf.horizon);
    out.push(cf.initial(r[0][0]));
    for t in 0..cf.horizon - 1 {
        let next = cf.step(t, out[t], &r[t], &r[t + 1]);
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode<S> {
    pub t: usize,
    pub parent: Option<usize>,
    /// Atom index of the stage-`t` noise.
    pub atom: usize,
    /// Probability of the path from the root.
    pub probability: S,
    pub children: Vec<usize>,
}

/// Every noise history from a fixed `xi_0` atom, nodes in breadth-first order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTree<S> {
    pub nodes: Vec<TreeNode<S>>,
}

impl<S: Scalar> ScenarioTree<S> {
    /// Node count of the tree over `noise`, saturating on overflow.
    pub fn size(noise: &NoiseModel<S>) -> usize {
        let mut total = 1usize;
        let mut level = 1usize;
        for s in noise.stages.iter().skip(1) {
            level = level.saturating_mul(s.len());
            total = total.saturating_add(level);
        }
        total
    }

    /// Size of the KKT system of an `units`-unit instance on the tree over
    /// `noise`, computed without building it.
    pub fn kkt_size(noise: &NoiseModel<S>, units: usize) -> usize {
        let total = Self::size(noise);
        let mut leaves = 1usize;
        for s in noise.stages.iter().skip(1) {
            leaves = leaves.saturating_mul(s.len());
        }
        let inner = total.saturating_sub(leaves);
        inner
            .saturating_mul(units + 1)
            .saturating_add((total - 1).saturating_mul(2 * units))
    }

    /// Builds the tree, refusing when its KKT system would exceed [`KKT_SIZE_CAP`].
    pub fn build_guarded(noise: &NoiseModel<S>, root_atom: usize, units: usize) -> Result<Self> {
        let vars = Self::kkt_size(noise, units);
        if vars > KKT_SIZE_CAP {
            return Err(Error::TreeTooLarge {
                vars,
                cap: KKT_SIZE_CAP,
            });
        }
        Self::build(noise, root_atom)
    }

    pub fn build(noise: &NoiseModel<S>, root_atom: usize) -> Result<Self> {
        if root_atom >= noise.stage(0).len() {
            return Err(Error::Invalid(format!(
                "root atom {root_atom} is not in the support of xi_0"
            )));
        }
        let mut nodes = vec![TreeNode {
            t: 0,
            parent: None,
            atom: root_atom,
            probability: S::one(),
            children: Vec::new(),
        }];
        let mut frontier = vec![0usize];
        for t in 1..=noise.horizon() {
            let stage = noise.stage(t);
            let mut next = Vec::with_capacity(frontier.len() * stage.len());
            for &n in &frontier {
                for (k, &w) in stage.weights.iter().enumerate() {
                    let id = nodes.len();
                    nodes.push(TreeNode {
                        t,
                        parent: Some(n),
                        atom: k,
                        probability: nodes[n].probability * w,
                        children: Vec::new(),
                    });
                    nodes[n].children.push(id);
                    next.push(id);
                }
            }
            frontier = next;
        }
        Ok(Self { nodes })
    }

    /// Atom indices from the root down to `node`.
    pub fn history(&self, node: usize) -> Vec<usize> {
        let mut atoms = vec![self.nodes[node].atom];
        let mut n = node;
        while let Some(p) = self.nodes[n].parent {
            atoms.push(self.nodes[p].atom);
            n = p;
        }
        atoms.reverse();
        atoms
    }
}

fn set_sym<S: Scalar>(k: &mut Matrix<S>, row: usize, col: usize, v: S) {
    k.add(row, col, v);
    k.add(col, row, v);
}

#[derive(Clone, Debug, PartialEq)]
pub struct KktSolution<S> {
    /// Per node, one control per unit (empty at the leaves).
    pub controls: Vec<Vec<S>>,
    /// Per node, one state per unit.
    pub states: Vec<Vec<S>>,
    /// Per non-leaf node, the coupling multiplier divided by the node probability.
    pub lambda: Vec<Option<S>>,
    /// Expected cost conditional on the root.
    pub value: S,
    /// Largest absolute entry of the KKT system residual.
    pub residual: S,
    pub coupling_residual: S,
    pub dynamics_residual: S,
}

struct KktLayout {
    u: Vec<Option<usize>>,
    x: Vec<Option<usize>>,
    coupling: Vec<Option<usize>>,
    dynamics: Vec<Option<usize>>,
    size: usize,
}

fn layout<S>(tree: &ScenarioTree<S>, n: usize, horizon: usize) -> KktLayout {
    let mut next = 0;
    let mut u = Vec::with_capacity(tree.nodes.len());
    let mut x = Vec::with_capacity(tree.nodes.len());
    for node in &tree.nodes {
        u.push((node.t < horizon).then(|| {
            next += n;
            next - n
        }));
        x.push((node.t > 0).then(|| {
            next += n;
            next - n
        }));
    }
    let mut coupling = Vec::with_capacity(tree.nodes.len());
    let mut dynamics = Vec::with_capacity(tree.nodes.len());
    for node in &tree.nodes {
        coupling.push((node.t < horizon).then(|| {
            next += 1;
            next - 1
        }));
        dynamics.push((node.t > 0).then(|| {
            next += n;
            next - n
        }));
    }
    KktLayout {
        u,
        x,
        coupling,
        dynamics,
        size: next,
    }
}

/// Solves the equality-constrained QP on the tree exactly through its KKT
/// system `[H A^T; A 0] [z; mu] = [-g; b]`.
pub fn kkt_solve<S: Scalar>(
    spec: &QuadraticSpec<S>,
    tree: &ScenarioTree<S>,
) -> Result<KktSolution<S>> {
    spec.check_shape()?;
    let n = spec.units();
    let horizon = spec.horizon();
    if tree.nodes.last().map(|v| v.t) != Some(horizon) {
        return Err(Error::Dimension(
            "scenario tree depth differs from the horizon".into(),
        ));
    }
    let lay = layout(tree, n, horizon);
    if lay.size > KKT_SIZE_CAP {
        return Err(Error::TreeTooLarge {
            vars: lay.size,
            cap: KKT_SIZE_CAP,
        });
    }
    let mut k = Matrix::zeros(lay.size, lay.size);
    let mut rhs = vec![S::zero(); lay.size];
    let mut constant = S::zero();
    let half = S::of(0.5);
    let noise = &spec.noise;

    for (id, node) in tree.nodes.iter().enumerate() {
        let p = node.probability;
        let xi = &noise.stage(node.t).atoms[node.atom];
        if let (Some(u), Some(row)) = (lay.u[id], lay.coupling[id]) {
            for i in 0..n {
                k.add(u + i, u + i, p * spec.c[i]);
                set_sym(&mut k, row, u + i, S::one());
            }
            rhs[row] = xi[0];
        }
        if let (Some(x), Some(row)) = (lay.x[id], lay.dynamics[id]) {
            let parent = node.parent.expect("non-root node has a parent");
            let pu = lay.u[parent].expect("parent of a node is not a leaf");
            for i in 0..n {
                set_sym(&mut k, row + i, x + i, S::one());
                set_sym(&mut k, row + i, pu + i, S::one());
                rhs[row + i] = xi[i + 1];
                match lay.x[parent] {
                    Some(px) => set_sym(&mut k, row + i, px + i, -S::one()),
                    None => rhs[row + i] += spec.x0[i],
                }
                if node.t == horizon {
                    let g = spec.gamma[i];
                    k.add(x + i, x + i, p * g);
                    rhs[x + i] += p * g * spec.x0[i];
                    constant += p * half * g * spec.x0[i] * spec.x0[i];
                }
            }
        }
    }
    let z = solve(&k, &rhs, "KKT system")?;
    let kz = k.mul_vec(&z);
    let res: Vec<S> = kz.iter().zip(&rhs).map(|(a, b)| (*a - *b).abs()).collect();
    let max = |r: &[S]| r.iter().fold(S::zero(), |m, v| m.max(*v));
    let residual = max(&res);
    let coupling_residual = max(&lay
        .coupling
        .iter()
        .flatten()
        .map(|&r| res[r])
        .collect::<Vec<_>>());
    let dynamics_residual = max(&lay
        .dynamics
        .iter()
        .flatten()
        .flat_map(|&r| res[r..r + n].to_vec())
        .collect::<Vec<_>>());

    let mut value = constant;
    for (id, node) in tree.nodes.iter().enumerate() {
        let p = node.probability;
        if let Some(u) = lay.u[id] {
            for i in 0..n {
                value += p * half * spec.c[i] * z[u + i] * z[u + i];
            }
        }
        if node.t == horizon {
            let x = lay.x[id].expect("leaf has a state");
            for i in 0..n {
                let g = spec.gamma[i];
                value += p * (half * g * z[x + i] * z[x + i] - g * spec.x0[i] * z[x + i]);
            }
        }
    }
    let controls = lay
        .u
        .iter()
        .map(|u| u.map_or_else(Vec::new, |u| z[u..u + n].to_vec()))
        .collect();
    let states = lay
        .x
        .iter()
        .map(|x| x.map_or_else(|| spec.x0.clone(), |x| z[x..x + n].to_vec()))
        .collect();
    let lambda = tree
        .nodes
        .iter()
        .zip(&lay.coupling)
        .map(|(node, row)| row.map(|r| -z[r] / node.probability))
        .collect();
    Ok(KktSolution {
        controls,
        states,
        lambda,
        value,
        residual,
        coupling_residual,
        dynamics_residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeDeviation<S> {
    pub node: usize,
    pub t: usize,
    pub atoms: Vec<usize>,
    pub closed_form: S,
    pub kkt: S,
}

impl<S: Scalar> NodeDeviation<S> {
    pub fn deviation(&self) -> S {
        (self.closed_form - self.kkt).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropositionReport<S> {
    pub alpha: S,
    pub nodes: Vec<NodeDeviation<S>>,
    pub max_deviation: S,
    pub kkt_residual: S,
}

impl<S: Scalar> PropositionReport<S> {
    pub fn passed(&self) -> bool {
        self.max_deviation <= S::of(PROPOSITION_TOL)
    }
}

/// Compares closed-form and KKT multipliers at every non-leaf tree node.
pub fn verify_proposition<S: Scalar>(
    spec: &QuadraticSpec<S>,
    tree: &ScenarioTree<S>,
) -> Result<PropositionReport<S>> {
    let cf = ClosedForm::new(spec)?;
    let kkt = kkt_solve(spec, tree)?;
    let noise = &spec.noise;
    let mut closed = vec![S::nan(); tree.nodes.len()];
    let mut nodes = Vec::new();
    let mut max_deviation = S::zero();
    for (id, node) in tree.nodes.iter().enumerate() {
        let Some(kkt_lambda) = kkt.lambda[id] else {
            continue;
        };
        let xi = &noise.stage(node.t).atoms[node.atom];
        closed[id] = match node.parent {
            None => cf.initial(xi[0]),
            Some(p) => {
                let prev = &noise.stage(node.t - 1).atoms[tree.nodes[p].atom];
                cf.step(node.t - 1, closed[p], prev, xi)
            }
        };
        let row = NodeDeviation {
            node: id,
            t: node.t,
            atoms: tree.history(id),
            closed_form: closed[id],
            kkt: kkt_lambda,
        };
        let dev = row.deviation();
        max_deviation = if dev.is_nan() {
            dev
        } else {
            max_deviation.max(dev)
        };
        nodes.push(row);
    }
    Ok(PropositionReport {
        alpha: cf.alpha,
        nodes,
        max_deviation,
        kkt_residual: kkt.residual,
    })
}

/// Fits the multiplier dynamics of the decomposition loop to the closed-form
/// multipliers along `paths` (sign flipped to the loop's convention).
pub fn warm_start<S: Scalar>(
    spec: &QuadraticSpec<S>,
    paths: &[NoisePath<S>],
) -> Result<Regression<S>> {
    let targets = paths
        .iter()
        .map(|p| {
            closed_form_lambda(spec, p).map(|l| l.into_iter().map(|v| vec![-v]).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    regress(&PricePathSamples { paths: targets }, paths, Some(0))
}
