use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Finite distribution of the noise vector at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStage<S> {
    pub atoms: Vec<Vec<S>>,
    pub weights: Vec<S>,
}

impl<S: Scalar> NoiseStage<S> {
    pub fn dirac(atom: Vec<S>) -> Self {
        Self {
            atoms: vec![atom],
            weights: vec![S::one()],
        }
    }

    pub fn uniform(atoms: Vec<Vec<S>>) -> Self {
        let w = S::one() / S::of(atoms.len() as f64);
        let weights = vec![w; atoms.len()];
        Self { atoms, weights }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> Vec<S> {
        let dim = self.atoms.first().map_or(0, Vec::len);
        let mut m = vec![S::zero(); dim];
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            for (mi, &ai) in m.iter_mut().zip(a) {
                *mi += w * ai;
            }
        }
        m
    }

    /// Smallest and largest value of one coordinate over the support.
    pub fn coordinate_range(&self, c: usize) -> (S, S) {
        self.atoms
            .iter()
            .fold((S::infinity(), S::neg_infinity()), |(lo, hi), a| {
                (lo.min(a[c]), hi.max(a[c]))
            })
    }
}

/// White noise: independent finite distributions for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel<S> {
    pub stages: Vec<NoiseStage<S>>,
}

impl<S: Scalar> NoiseModel<S> {
    pub fn new(stages: Vec<NoiseStage<S>>) -> Self {
        Self { stages }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.stages
            .first()
            .and_then(|s| s.atoms.first())
            .map_or(0, Vec::len)
    }

    pub fn stage(&self, t: usize) -> &NoiseStage<S> {
        &self.stages[t]
    }

    /// Product of the support sizes, i.e. the number of distinct paths.
    pub fn path_count(&self) -> usize {
        self.stages.iter().map(NoiseStage::len).product()
    }
}

/// One Monte Carlo draw of the noise process.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath<S> {
    pub seed: u64,
    /// Atom index drawn at each `t = 0..=T`.
    pub atoms: Vec<usize>,
    pub realizations: Vec<Vec<S>>,
}

impl<S: Scalar> NoisePath<S> {
    pub fn horizon(&self) -> usize {
        self.realizations.len().saturating_sub(1)
    }

    /// Path made of the given atom indices.
    pub fn from_atoms(noise: &NoiseModel<S>, atoms: Vec<usize>) -> Self {
        let realizations = atoms
            .iter()
            .enumerate()
            .map(|(t, &k)| noise.stages[t].atoms[k].clone())
            .collect();
        Self {
            seed: 0,
            atoms,
            realizations,
        }
    }
}

/// Draws a path with an independent inverse-CDF draw per time step.
///
/// The generator is seeded from `seed` alone so a path never depends on
/// which worker draws it.
pub fn sample_path<S: Scalar>(noise: &NoiseModel<S>, seed: u64) -> NoisePath<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = Vec::with_capacity(noise.stages.len());
    let mut realizations = Vec::with_capacity(noise.stages.len());
    for stage in &noise.stages {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = stage.len() - 1;
        for (k, w) in stage.weights.iter().enumerate() {
            acc += w.as_f64();
            if u < acc {
                pick = k;
                break;
            }
        }
        atoms.push(pick);
        realizations.push(stage.atoms[pick].clone());
    }
    NoisePath {
        seed,
        atoms,
        realizations,
    }
}

/// Mixes a base seed with stream indices (splitmix64 finalizer per word).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &s in stream {
        h = splitmix(h ^ splitmix(s.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
