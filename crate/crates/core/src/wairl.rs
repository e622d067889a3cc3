//! Tabular weighted adversarial IRL.
//!
//! The discriminator classifies expert (s, a, s') triples against triples
//! generated by the current policy. It is the logistic of a disentangled
//! reward minus the weighted policy log-density:
//!
//! ```text
//! f(s,a,s') = r(s,a) + gamma h(s') - h(s)
//! D(s,a,s') = exp(f) / (exp(f) + exp(mu(s) ln pi(a|s)))
//! ```
//!
//! so that `ln D - ln(1-D) = f - mu(s) ln pi(a|s)` holds exactly: the shaped
//! reward the policy step optimizes is the weighted-entropy objective with
//! reward `f` and per-state temperatures `mu`. The policy step here is an
//! exact best response, a full soft re-solve on `E_{s'}[f]` under `mu`,
//! rather than a sampled policy-gradient step; at tabular scale that removes
//! an approximation without changing what the loop optimizes.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::likelihood::{weight_of_with_mask, WeightParams};
use crate::mdp::{policy_return, sample_trajectory_with, DemoSet, Policy, RewardTable, TabularMdp};
use crate::soft::{solve_soft, WeightTable, DEFAULT_MAX_ITER};
use crate::train::StepRule;

/// Logit cap keeping the discriminator output strictly inside (0, 1) in f64.
const LOGIT_CAP: f64 = 36.0;

/// An expert or generated transition sample.
pub type Triple = (usize, usize, usize);

/// Discriminator parameters: tabular reward and shaping potential plus
/// feature-based entropy weights (the same parameterization the MLE path
/// uses for its weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscParams {
    /// Tabular reward `r(s, a)`.
    pub theta_r: Array2<f64>,
    /// Shaping potential `h(s)`.
    pub delta_h: Array1<f64>,
    /// Weight parameters; `mu(s) = exp(psi . phi(s))` clamped.
    pub psi_mu: WeightParams,
}

impl DiscParams {
    pub fn zeros(n_states: usize, n_actions: usize, weight_dim: usize) -> Self {
        Self {
            theta_r: Array2::zeros((n_states, n_actions)),
            delta_h: Array1::zeros(n_states),
            psi_mu: WeightParams::zeros(weight_dim),
        }
    }

    /// `f(s,a,s') = r(s,a) + gamma h(s') - h(s)`.
    pub fn disentangled(&self, discount: f64, s: usize, a: usize, sp: usize) -> f64 {
        self.theta_r[[s, a]] + discount * self.delta_h[sp] - self.delta_h[s]
    }

    /// `E_{s'|s,a}[f(s,a,s')]` for every `(s, a)`.
    pub fn expected_f(&self, mdp: &TabularMdp) -> RewardTable {
        let eh = mdp.expected_next(&self.delta_h);
        let mut values = self.theta_r.clone();
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                values[[s, a]] += mdp.discount * eh[[s, a]] - self.delta_h[s];
            }
        }
        RewardTable::new(values)
    }
}

/// Adversarial loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WairlConfig {
    /// Features for the weight parameterization `mu(s)`. A zero feature map
    /// pins `mu = 1` (the unweighted baseline).
    pub features: FeatureMap,
    pub n_rounds: usize,
    /// Trajectories sampled from the current policy per round.
    pub gen_trajs_per_round: usize,
    /// Logistic-regression steps per round.
    pub disc_inner_steps: usize,
    /// Generator rollout horizon; defaults to the demos' horizon when zero.
    pub horizon: usize,
    /// Restrict `r(s, a)` to `r(s)` (tied across actions).
    pub state_only: bool,
    pub solver_tol: f64,
    pub step_rule: StepRule,
    pub seed: u64,
}

impl WairlConfig {
    pub fn new(features: FeatureMap, n_rounds: usize, seed: u64) -> Self {
        Self {
            features,
            n_rounds,
            gen_trajs_per_round: 16,
            disc_inner_steps: 5,
            horizon: 0,
            state_only: false,
            solver_tol: 1e-9,
            step_rule: StepRule::default(),
            seed,
        }
    }
}

/// Loop state: discriminator, current policy, and per-round histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialState {
    pub disc: DiscParams,
    pub policy: Policy,
    pub iteration: usize,
    pub disc_loss_history: Vec<f64>,
    /// Return of the round's policy under the round's learned reward
    /// `E_{s'}[f]`; a self-assessment trace, not a true-reward score.
    pub policy_return_history: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CAP, LOGIT_CAP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Discriminator logit `f(s,a,s') - mu(s) ln pi(a|s)`.
pub fn disc_logit(
    disc: &DiscParams,
    policy: &Policy,
    mdp: &TabularMdp,
    features: &FeatureMap,
    triple: Triple,
) -> Result<f64> {
    let (s, a, sp) = triple;
    let p = policy.probs[[s, a]];
    if !(p > 0.0) {
        return Err(Error::Contract(format!(
            "policy probability at (s={s}, a={a}) must be strictly positive"
        )));
    }
    let (weights, _) = weight_of_with_mask(&disc.psi_mu, features)?;
    Ok(disc.disentangled(mdp.discount, s, a, sp) - weights.values[s] * p.ln())
}

/// Discriminator probability, strictly inside (0, 1), computed in log space.
pub fn disc_prob(
    disc: &DiscParams,
    policy: &Policy,
    mdp: &TabularMdp,
    features: &FeatureMap,
    triple: Triple,
) -> Result<f64> {
    Ok(sigmoid(disc_logit(disc, policy, mdp, features, triple)?))
}

/// The reward the policy step optimizes, collapsed over next states:
/// `r~(s,a) = E_{s'}[f(s,a,s')] - mu(s) ln pi(a|s)`.
///
/// This is `ln D - ln(1-D)` by the discriminator identity, but it is computed
/// directly from `f` and `mu ln pi`, never through `D`.
pub fn shaped_reward(
    disc: &DiscParams,
    policy: &Policy,
    mdp: &TabularMdp,
    features: &FeatureMap,
) -> Result<RewardTable> {
    let (weights, _) = weight_of_with_mask(&disc.psi_mu, features)?;
    let mut values = disc.expected_f(mdp).values;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            values[[s, a]] -= weights.values[s] * policy.probs[[s, a]].ln();
        }
    }
    Ok(RewardTable::new(values))
}

/// Mean binary cross-entropy of the discriminator on labeled batches.
fn disc_loss(
    disc: &DiscParams,
    log_pi: &Array2<f64>,
    weights: &WeightTable,
    mdp: &TabularMdp,
    expert: &[Triple],
    generated: &[Triple],
) -> f64 {
    let mut total = 0.0;
    for &(s, a, sp) in expert {
        let x = disc.disentangled(mdp.discount, s, a, sp) - weights.values[s] * log_pi[[s, a]];
        total += softplus(-x); // -ln D
    }
    for &(s, a, sp) in generated {
        let x = disc.disentangled(mdp.discount, s, a, sp) - weights.values[s] * log_pi[[s, a]];
        total += softplus(x); // -ln (1 - D)
    }
    total / (expert.len() + generated.len()) as f64
}

struct DiscGrads {
    theta_r: Array2<f64>,
    delta_h: Array1<f64>,
    psi_mu: Array1<f64>,
}

#[allow(clippy::too_many_arguments)]
fn disc_loss_grads(
    disc: &DiscParams,
    log_pi: &Array2<f64>,
    weights: &WeightTable,
    phi_w_eff: &Array2<f64>,
    mdp: &TabularMdp,
    expert: &[Triple],
    generated: &[Triple],
    state_only: bool,
) -> DiscGrads {
    let n = (expert.len() + generated.len()) as f64;
    let mut g_theta = Array2::<f64>::zeros(disc.theta_r.dim());
    let mut g_h = Array1::<f64>::zeros(disc.delta_h.len());
    let mut g_psi = Array1::<f64>::zeros(disc.psi_mu.psi.len());
    let mut accumulate = |triples: &[Triple], label: f64| {
        for &(s, a, sp) in triples {
            let x =
                disc.disentangled(mdp.discount, s, a, sp) - weights.values[s] * log_pi[[s, a]];
            let g = (sigmoid(x) - label) / n; // d loss / d logit
            g_theta[[s, a]] += g;
            g_h[sp] += mdp.discount * g;
            g_h[s] -= g;
            // d logit / d psi_i = -ln pi(a|s) * dmu_i(s),
            // dmu_i(s) = phi_i(s) mu(s) (zero where clamped).
            let coeff = -g * log_pi[[s, a]] * weights.values[s];
            for (i, gp) in g_psi.iter_mut().enumerate() {
                *gp += coeff * phi_w_eff[[s, i]];
            }
        }
    };
    accumulate(expert, 1.0);
    accumulate(generated, 0.0);
    if state_only {
        // Tied reward across actions: the shared parameter's gradient is the
        // row sum.
        for s in 0..g_theta.nrows() {
            let row_sum = g_theta.row(s).sum();
            g_theta.row_mut(s).fill(row_sum);
        }
    }
    DiscGrads {
        theta_r: g_theta,
        delta_h: g_h,
        psi_mu: g_psi,
    }
}

/// One or more logistic-regression steps on the binary cross-entropy with
/// labels 1 for expert and 0 for generated triples.
///
/// Returns the updated parameters, a flag set when the batches were identical
/// (in which case the input is returned unchanged), and the loss after each
/// accepted step.
#[allow(clippy::too_many_arguments)]
pub fn disc_update(
    disc: &DiscParams,
    expert_batch: &[Triple],
    gen_batch: &[Triple],
    policy: &Policy,
    mdp: &TabularMdp,
    features: &FeatureMap,
    inner_steps: usize,
    step_rule: &StepRule,
    state_only: bool,
) -> Result<(DiscParams, bool, Vec<f64>)> {
    if expert_batch.is_empty() || gen_batch.is_empty() {
        return Err(Error::Contract(
            "discriminator batches must be nonempty".into(),
        ));
    }
    {
        let mut e = expert_batch.to_vec();
        let mut g = gen_batch.to_vec();
        e.sort_unstable();
        g.sort_unstable();
        if e == g {
            return Ok((disc.clone(), true, Vec::new()));
        }
    }

    let log_pi = policy.probs.mapv(f64::ln);
    let mut current = disc.clone();
    let mut losses = Vec::with_capacity(inner_steps);
    let mut step = step_rule.init_step;
    for _ in 0..inner_steps {
        let (weights, clamp_mask) = weight_of_with_mask(&current.psi_mu, features)?;
        let mut phi_w_eff = features.values.clone();
        for (s, &clamped) in clamp_mask.iter().enumerate() {
            if clamped {
                phi_w_eff.row_mut(s).fill(0.0);
            }
        }
        let loss = disc_loss(&current, &log_pi, &weights, mdp, expert_batch, gen_batch);
        let grads = disc_loss_grads(
            &current,
            &log_pi,
            &weights,
            &phi_w_eff,
            mdp,
            expert_batch,
            gen_batch,
            state_only,
        );
        let grad_sq = grads.theta_r.iter().map(|g| g * g).sum::<f64>()
            + grads.delta_h.iter().map(|g| g * g).sum::<f64>()
            + grads.psi_mu.iter().map(|g| g * g).sum::<f64>();
        if grad_sq == 0.0 {
            break;
        }

        let mut alpha = step;
        let mut accepted = false;
        for _ in 0..=step_rule.max_backtracks {
            let mut cand = current.clone();
            cand.theta_r.scaled_add(-alpha, &grads.theta_r);
            cand.delta_h.scaled_add(-alpha, &grads.delta_h);
            cand.psi_mu.psi.scaled_add(-alpha, &grads.psi_mu);
            let (w2, _) = weight_of_with_mask(&cand.psi_mu, features)?;
            let cand_loss = disc_loss(&cand, &log_pi, &w2, mdp, expert_batch, gen_batch);
            if cand_loss <= loss - step_rule.armijo_c * alpha * grad_sq {
                current = cand;
                losses.push(cand_loss);
                step = alpha * step_rule.grow;
                accepted = true;
                break;
            }
            alpha *= step_rule.shrink;
        }
        if !accepted {
            // No verifiable descent left on this batch; stop early.
            break;
        }
    }
    Ok((current, false, losses))
}

/// Mean binary cross-entropy of `disc` on labeled batches; the quantity
/// [`disc_update`] descends.
pub fn disc_batch_loss(
    disc: &DiscParams,
    policy: &Policy,
    mdp: &TabularMdp,
    features: &FeatureMap,
    expert_batch: &[Triple],
    gen_batch: &[Triple],
) -> Result<f64> {
    let (weights, _) = weight_of_with_mask(&disc.psi_mu, features)?;
    let log_pi = policy.probs.mapv(f64::ln);
    Ok(disc_loss(
        disc,
        &log_pi,
        &weights,
        mdp,
        expert_batch,
        gen_batch,
    ))
}

/// Consecutive (s, a, s') triples of a demo set.
pub fn demo_triples(demos: &DemoSet) -> Vec<Triple> {
    let mut out = Vec::new();
    for traj in &demos.trajectories {
        for w in traj.steps.windows(2) {
            out.push((w[0].0, w[0].1, w[1].0));
        }
    }
    out
}

/// The adversarial loop: alternate generator sampling, discriminator
/// logistic-regression updates, and an exact soft best-response policy
/// update on `E_{s'}[f]` under the learned weights.
pub fn wairl_train(
    mdp: &TabularMdp,
    demos: &DemoSet,
    config: &WairlConfig,
) -> Result<AdversarialState> {
    if demos.trajectories.is_empty() {
        return Err(Error::EmptyDemos);
    }
    if config.features.n_states() != mdp.n_states {
        return Err(Error::DimensionMismatch(format!(
            "weight features cover {} states, MDP has {}",
            config.features.n_states(),
            mdp.n_states
        )));
    }
    let expert_triples = demo_triples(demos);
    if expert_triples.is_empty() {
        return Err(Error::Contract(
            "demos need horizon >= 2 to provide (s,a,s') triples".into(),
        ));
    }
    let horizon = if config.horizon == 0 {
        demos.horizon
    } else {
        config.horizon
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdversarialState {
        disc: DiscParams::zeros(mdp.n_states, mdp.n_actions, config.features.dim()),
        policy: Policy::uniform(mdp.n_states, mdp.n_actions),
        iteration: 0,
        disc_loss_history: Vec::with_capacity(config.n_rounds),
        policy_return_history: Vec::with_capacity(config.n_rounds),
    };

    for round in 0..config.n_rounds {
        let gen_triples: Vec<Triple> = (0..config.gen_trajs_per_round)
            .flat_map(|_| {
                let traj = sample_trajectory_with(mdp, &state.policy, horizon, &mut rng);
                let mut triples = Vec::with_capacity(horizon.saturating_sub(1));
                for w in traj.steps.windows(2) {
                    triples.push((w[0].0, w[0].1, w[1].0));
                }
                triples
            })
            .collect();

        let (disc, _warned, losses) = disc_update(
            &state.disc,
            &expert_triples,
            &gen_triples,
            &state.policy,
            mdp,
            &config.features,
            config.disc_inner_steps,
            &config.step_rule,
            config.state_only,
        )?;
        state.disc = disc;

        let (weights, _) = weight_of_with_mask(&state.disc.psi_mu, &config.features)?;
        let learned_reward = state.disc.expected_f(mdp);
        let sol = solve_soft(
            mdp,
            &learned_reward,
            &weights,
            config.solver_tol,
            DEFAULT_MAX_ITER,
        )?;
        state.policy = sol.policy;
        state.iteration = round + 1;

        let last_loss = match losses.last() {
            Some(&l) => l,
            None => disc_batch_loss(
                &state.disc,
                &state.policy,
                mdp,
                &config.features,
                &expert_triples,
                &gen_triples,
            )?,
        };
        state.disc_loss_history.push(last_loss);
        state
            .policy_return_history
            .push(policy_return(mdp, &state.policy, &learned_reward)?);
    }
    Ok(state)
}
