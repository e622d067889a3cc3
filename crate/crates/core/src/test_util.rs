//! Random instances shared by unit tests.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{RewardTable, TabularMdp};
use crate::soft::WeightTable;

/// A dense random MDP with strictly positive transition rows.
pub(crate) fn random_mdp(n_states: usize, n_actions: usize, discount: f64, seed: u64) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Array3::<f64>::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            for (sp, &x) in raw.iter().enumerate() {
                transition[[s, a, sp]] = x / sum;
            }
        }
    }
    let raw: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    let start = Array1::from_iter(raw.into_iter().map(|x| x / sum));
    TabularMdp::new(transition, discount, start)
}

/// Rewards uniform in [-scale, scale].
pub(crate) fn random_reward(n_states: usize, n_actions: usize, scale: f64, seed: u64) -> RewardTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::zeros((n_states, n_actions));
    for v in values.iter_mut() {
        *v = (rng.gen::<f64>() * 2.0 - 1.0) * scale;
    }
    RewardTable::new(values)
}

/// Weights log-uniform in [lo, hi].
pub(crate) fn random_weights(n_states: usize, lo: f64, hi: f64, seed: u64) -> WeightTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Array1<f64> = (0..n_states)
        .map(|_| (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp())
        .collect();
    WeightTable::new(values)
}

/// A random row-stochastic policy with strictly positive rows.
pub(crate) fn random_policy(n_states: usize, n_actions: usize, seed: u64) -> crate::mdp::Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        for (a, &x) in raw.iter().enumerate() {
            probs[[s, a]] = x / sum;
        }
    }
    crate::mdp::Policy::new(probs)
}
