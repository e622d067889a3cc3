//! Procedural benchmark environments, expert synthesis, and demo sampling.

pub mod highway;
pub mod objectworld;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{sample_trajectory_with, DemoSet, Policy, RewardTable, TabularMdp};
use crate::soft::{solve_soft, WeightTable, DEFAULT_MAX_ITER, DEFAULT_TOL, MU_MAX, MU_MIN};

pub use highway::{gen_highway, render_highway, HighwaySpec, Vehicle};
pub use objectworld::{gen_objectworld, render_objectworld, ObjectworldSpec, PlacedObject};

/// Whether an environment exposes raw continuous features or their
/// threshold-indicator discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Continuous,
    Discrete,
}

/// Provenance of a generated environment: the spec plus the sampled layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvDescriptor {
    Objectworld {
        spec: ObjectworldSpec,
        objects: Vec<PlacedObject>,
    },
    Highway {
        spec: HighwaySpec,
        vehicles: Vec<Vehicle>,
    },
}

/// A generated environment: MDP, features, true rewards, and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvBundle {
    pub mdp: TabularMdp,
    pub features: FeatureMap,
    pub true_reward: RewardTable,
    pub seed: u64,
    pub descriptor: EnvDescriptor,
}

impl EnvBundle {
    /// Plain-text layout render for debugging.
    pub fn render(&self) -> String {
        match &self.descriptor {
            EnvDescriptor::Objectworld { spec, objects } => {
                render_objectworld(spec, objects, &self.true_reward)
            }
            EnvDescriptor::Highway { spec, vehicles } => render_highway(spec, vehicles),
        }
    }
}

/// Soft-optimal expert under the true rewards at constant temperature
/// `expert_temp`.
pub fn make_expert(
    mdp: &TabularMdp,
    true_reward: &RewardTable,
    expert_temp: f64,
) -> Result<Policy> {
    if !(expert_temp > 0.0) {
        return Err(Error::Contract(format!(
            "expert temperature {expert_temp} must be positive"
        )));
    }
    let weights = WeightTable::constant(mdp.n_states, expert_temp.clamp(MU_MIN, MU_MAX));
    let sol = solve_soft(mdp, true_reward, &weights, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    Ok(sol.policy)
}

/// Sample `n_trajs` expert trajectories of fixed horizon.
pub fn sample_demos(
    mdp: &TabularMdp,
    expert: &Policy,
    n_trajs: usize,
    horizon: usize,
    seed: u64,
) -> DemoSet {
    sample_demos_with_temp(mdp, expert, n_trajs, horizon, seed, None)
}

/// [`sample_demos`] recording the expert temperature in the metadata.
pub fn sample_demos_with_temp(
    mdp: &TabularMdp,
    expert: &Policy,
    n_trajs: usize,
    horizon: usize,
    seed: u64,
    expert_temp: Option<f64>,
) -> DemoSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectories = (0..n_trajs)
        .map(|_| sample_trajectory_with(mdp, expert, horizon, &mut rng))
        .collect();
    DemoSet {
        trajectories,
        seed,
        horizon,
        expert_temp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn small_objectworld() -> ObjectworldSpec {
        ObjectworldSpec {
            grid_n: 6,
            n_colors: 2,
            n_objects: 3,
            wind: 0.3,
            discount: 0.9,
            feature_mode: FeatureMode::Continuous,
            thresholds: None,
        }
    }

    #[test]
    fn expert_on_bandit_is_logistic_in_reward_gap() {
        let mdp = TabularMdp::new(Array3::from_elem((1, 2, 1), 1.0), 0.0, array![1.0]);
        let reward = RewardTable::new(array![[1.0, 0.0]]);
        let expert = make_expert(&mdp, &reward, 1.0).unwrap();
        assert!((expert.probs[[0, 0]] - 0.731059).abs() < 1e-6);
        assert!((expert.probs[[0, 1]] - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn huge_temperature_gives_near_uniform_expert() {
        let bundle = gen_objectworld(&small_objectworld(), 1).unwrap();
        let expert = make_expert(&bundle.mdp, &bundle.true_reward, MU_MAX).unwrap();
        let n_a = bundle.mdp.n_actions as f64;
        for row in expert.probs.rows() {
            let max = row.iter().copied().fold(0.0, f64::max);
            assert!(max <= 1.0 / n_a + 0.01, "row max {max}");
        }
    }

    #[test]
    fn expert_rows_are_strictly_positive() {
        let bundle = gen_objectworld(&small_objectworld(), 2).unwrap();
        let expert = make_expert(&bundle.mdp, &bundle.true_reward, 1.0).unwrap();
        assert!(expert.probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        let mdp = TabularMdp::new(Array3::from_elem((1, 1, 1), 1.0), 0.0, array![1.0]);
        let reward = RewardTable::zeros(1, 1);
        assert!(make_expert(&mdp, &reward, 0.0).is_err());
    }

    #[test]
    fn demo_sampling_is_seed_deterministic() {
        let bundle = gen_objectworld(&small_objectworld(), 3).unwrap();
        let expert = make_expert(&bundle.mdp, &bundle.true_reward, 1.0).unwrap();
        let a = sample_demos(&bundle.mdp, &expert, 8, 8, 42);
        let b = sample_demos(&bundle.mdp, &expert, 8, 8, 42);
        assert_eq!(a, b);
        assert_eq!(a.trajectories.len(), 8);
        assert!(a.trajectories.iter().all(|t| t.len() == 8));
        assert_eq!(a.n_pairs(), 64);
    }
}
