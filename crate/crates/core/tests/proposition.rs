//! Closed-form multipliers against a KKT system assembled independently:
//! states are eliminated, only controls and coupling multipliers remain.

use dadp_core::model::{NoiseModel, NoiseStage};
use dadp_core::quadratic::{kkt_solve, verify_proposition, QuadraticSpec, ScenarioTree};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spec(rng: &mut ChaCha8Rng) -> QuadraticSpec<f64> {
    let n = rng.gen_range(2..=3);
    let horizon = rng.gen_range(3..=4);
    let alpha = rng.gen_range(0.0..2.0);
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let stages = (0..=horizon)
        .map(|_| {
            let atoms = (0..2)
                .map(|_| {
                    let mut a = vec![rng.gen_range(2.0..10.0)];
                    a.extend((0..n).map(|_| rng.gen_range(0.0..2.0)));
                    a
                })
                .collect();
            let p = rng.gen_range(0.2..0.8);
            NoiseStage {
                atoms,
                weights: vec![p, 1.0 - p],
            }
        })
        .collect();
    QuadraticSpec {
        gamma: c.iter().map(|ci| alpha * ci).collect(),
        c,
        x0: (0..n).map(|_| rng.gen_range(0.0..10.0)).collect(),
        noise: NoiseModel::new(stages),
    }
}

struct Node {
    t: usize,
    history: Vec<usize>,
    probability: f64,
    /// Inner ancestors including the node itself when inner.
    path: Vec<usize>,
}

/// Price per inner node, keyed by atom history, in the `c u = lambda` sign.
fn oracle(spec: &QuadraticSpec<f64>, root: usize) -> Vec<(Vec<usize>, f64)> {
    let horizon = spec.horizon();
    let n = spec.c.len();
    let mut nodes = vec![Node {
        t: 0,
        history: vec![root],
        probability: 1.0,
        path: vec![],
    }];
    let mut k = 0;
    while k < nodes.len() {
        if nodes[k].t < horizon {
            let (t, hist, p, mut path) = (
                nodes[k].t,
                nodes[k].history.clone(),
                nodes[k].probability,
                nodes[k].path.clone(),
            );
            path.push(k);
            for (a, w) in spec.noise.stage(t + 1).weights.iter().enumerate() {
                let mut h = hist.clone();
                h.push(a);
                nodes.push(Node {
                    t: t + 1,
                    history: h,
                    probability: p * w,
                    path: path.clone(),
                });
            }
        }
        k += 1;
    }
    let inner: Vec<usize> = (0..nodes.len()).filter(|&k| nodes[k].t < horizon).collect();
    let pos = |node: usize| inner.iter().position(|&k| k == node).unwrap();
    let m = inner.len();
    let vars = m * n;
    let size = vars + m;
    let mut kkt = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    let var = |node: usize, i: usize| pos(node) * n + i;
    for (r, &node) in inner.iter().enumerate() {
        for i in 0..n {
            kkt[(var(node, i), var(node, i))] += nodes[node].probability * spec.c[i];
            kkt[(vars + r, var(node, i))] = 1.0;
            kkt[(var(node, i), vars + r)] = 1.0;
        }
        let atom = nodes[node].history[nodes[node].t];
        rhs[vars + r] = spec.noise.stage(nodes[node].t).atoms[atom][0];
    }
    for leaf in nodes.iter().filter(|l| l.t == horizon) {
        for i in 0..n {
            let inflow: f64 = (1..=horizon)
                .map(|t| spec.noise.stage(t).atoms[leaf.history[t]][1 + i])
                .sum();
            let w = leaf.probability * spec.gamma[i];
            for &a in &leaf.path {
                rhs[var(a, i)] += w * inflow;
                for &b in &leaf.path {
                    kkt[(var(a, i), var(b, i))] += w;
                }
            }
        }
    }
    let z = kkt.lu().solve(&rhs).expect("nonsingular KKT system");
    inner
        .iter()
        .enumerate()
        .map(|(r, &node)| {
            (
                nodes[node].history.clone(),
                -z[vars + r] / nodes[node].probability,
            )
        })
        .collect()
}

#[test]
fn both_kkt_assemblies_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..10 {
        let spec = random_spec(&mut rng);
        let root = rng.gen_range(0..2);
        let tree = ScenarioTree::build(&spec.noise, root).unwrap();
        let kkt = kkt_solve(&spec, &tree).unwrap();
        for (history, lambda) in oracle(&spec, root) {
            let id = (0..tree.nodes.len())
                .find(|&k| tree.history(k) == history)
                .unwrap();
            let got = kkt.lambda[id].unwrap();
            assert!(
                (got - lambda).abs() < 1e-8 * lambda.abs().max(1.0),
                "{got} vs {lambda}"
            );
        }
    }
}

#[test]
fn closed_form_matches_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..10 {
        let spec = random_spec(&mut rng);
        let tree = ScenarioTree::build(&spec.noise, 0).unwrap();
        let report = verify_proposition(&spec, &tree).unwrap();
        assert!(report.kkt_residual <= 1e-10);
        let expect = oracle(&spec, 0);
        assert_eq!(report.nodes.len(), expect.len());
        for row in &report.nodes {
            let (_, lambda) = expect.iter().find(|(h, _)| *h == row.atoms).unwrap();
            assert!(
                (row.closed_form - lambda).abs() <= 1e-6,
                "{} vs {lambda}",
                row.closed_form
            );
        }
    }
}
