//! The gen / train / eval pipeline behind the CLI subcommands.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wirl_core::envs::{
    gen_highway, gen_objectworld, make_expert, sample_demos_with_temp, EnvBundle,
};
use wirl_core::likelihood::FeatureSet;
use wirl_core::mdp::{DemoSet, Policy};
use wirl_core::metrics::{
    expected_value_difference, matching_scores, model_policy, test_loglik, CellMetrics,
};
use wirl_core::soft::solve_soft;
use wirl_core::train::{fit_phase2, train_wmaxent, TrainMode, TrainedModel};
use wirl_core::wairl::{wairl_train, AdversarialState, WairlConfig};

use crate::config::{Algorithm, EnvConfig, ExperimentConfig};

/// Worker-count environment variable honored by `train` and `eval`.
pub const WORKERS_ENV: &str = "WIRL_WORKERS";

/// Outcome of a sweep stage; failures are recorded, never fatal mid-sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepStatus {
    pub failures: Vec<String>,
}

impl SweepStatus {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// A trained artifact on disk: either an MLE model or an adversarial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArtifact {
    Mle(TrainedModel),
    Adversarial(AdversarialState),
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let text = if pretty {
        serde_json::to_string_pretty(value)?
    } else {
        serde_json::to_string(value)?
    };
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn generate_env(env: &EnvConfig, seed: u64) -> anyhow::Result<EnvBundle> {
    let bundle = match env {
        EnvConfig::Objectworld(spec) => gen_objectworld(spec, seed)?,
        EnvConfig::Highway(spec) => gen_highway(spec, seed)?,
    };
    Ok(bundle)
}

fn thread_pool() -> anyhow::Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let workers: usize = raw
            .parse()
            .map_err(|_| anyhow::anyhow!("{WORKERS_ENV}={raw} is not a worker count"))?;
        if workers > 0 {
            builder = builder.num_threads(workers);
        }
    }
    Ok(builder.build()?)
}

/// Generate environments and demo sets for every seed.
///
/// Rerunning with the same config rewrites byte-identical files.
pub fn cmd_gen(config: &ExperimentConfig) -> anyhow::Result<()> {
    for seed_idx in 0..config.eval.n_seeds {
        let bundle = generate_env(&config.env, config.env_seed(seed_idx))?;
        let report = wirl_core::mdp::validate_mdp(&bundle.mdp);
        if !report.is_empty() {
            anyhow::bail!("generated environment failed validation: {report:?}");
        }
        write_json(&config.env_path(seed_idx), &bundle, false)?;

        let expert = make_expert(&bundle.mdp, &bundle.true_reward, config.demo.expert_temp)?;
        let pool = sample_demos_with_temp(
            &bundle.mdp,
            &expert,
            config.max_demos(),
            config.demo.horizon,
            config.demo_seed(seed_idx),
            Some(config.demo.expert_temp),
        );
        write_json(&config.demo_path(seed_idx), &pool, false)?;
        let test = sample_demos_with_temp(
            &bundle.mdp,
            &expert,
            config.demo.n_test_trajs,
            config.demo.horizon,
            config.test_demo_seed(seed_idx),
            Some(config.demo.expert_temp),
        );
        write_json(&config.test_demo_path(seed_idx), &test, false)?;

        if config.eval.transfer {
            let fresh = generate_env(&config.env, config.transfer_seed(seed_idx))?;
            write_json(&config.transfer_env_path(seed_idx), &fresh, false)?;
        }
    }
    Ok(())
}

/// Train every requested (algorithm, seed, n_demos) cell.
///
/// Cells whose model file already exists are skipped, so an interrupted sweep
/// resumes where it stopped. A failing cell is recorded (with an error marker
/// file) and never aborts the sweep.
pub fn cmd_train(config: &ExperimentConfig) -> anyhow::Result<SweepStatus> {
    let groups: Vec<(usize, usize)> = (0..config.eval.n_seeds)
        .flat_map(|k| config.demo.n_demos.iter().map(move |&n| (k, n)))
        .collect();
    let pool = thread_pool()?;
    let failures: Vec<String> = pool.install(|| {
        groups
            .par_iter()
            .flat_map(|&(seed_idx, n_demos)| train_group(config, seed_idx, n_demos))
            .collect()
    });
    Ok(SweepStatus { failures })
}

/// Train all algorithms for one (seed, n_demos) cell group. MaxEnt is
/// exactly the weighted run's phase 1, so when both are requested the
/// phase-1 result is shared instead of recomputed.
fn train_group(config: &ExperimentConfig, seed_idx: usize, n_demos: usize) -> Vec<String> {
    let mut failures = Vec::new();
    let mut fail = |algo: Algorithm, err: &anyhow::Error| {
        let message = format!(
            "{} seed {seed_idx} n_demos {n_demos}: {err:#}",
            algo.name()
        );
        let _ = fs::create_dir_all(config.output_dir.join("models"));
        let _ = fs::write(config.error_path(algo, seed_idx, n_demos), &message);
        failures.push(message);
    };

    let wants_maxent = config.algorithms.contains(&Algorithm::Maxent);
    let wants_wmaxent = config.algorithms.contains(&Algorithm::Wmaxent);
    let wants_wairl = config.algorithms.contains(&Algorithm::Wairl);

    let maxent_path = config.model_path(Algorithm::Maxent, seed_idx, n_demos);
    let wmaxent_path = config.model_path(Algorithm::Wmaxent, seed_idx, n_demos);
    let wairl_path = config.model_path(Algorithm::Wairl, seed_idx, n_demos);

    let need_maxent = wants_maxent && !maxent_path.exists();
    let need_wmaxent = wants_wmaxent && !wmaxent_path.exists();
    let need_wairl = wants_wairl && !wairl_path.exists();
    if !(need_maxent || need_wmaxent || need_wairl) {
        return failures;
    }

    let loaded = (|| -> anyhow::Result<(EnvBundle, DemoSet)> {
        let bundle: EnvBundle = read_json(&config.env_path(seed_idx))?;
        let pool: DemoSet = read_json(&config.demo_path(seed_idx))?;
        Ok((bundle, pool.take(n_demos)))
    })();
    let (bundle, demos) = match loaded {
        Ok(x) => x,
        Err(err) => {
            for algo in [Algorithm::Maxent, Algorithm::Wmaxent, Algorithm::Wairl] {
                if config.algorithms.contains(&algo)
                    && !config.model_path(algo, seed_idx, n_demos).exists()
                {
                    fail(algo, &err);
                }
            }
            return failures;
        }
    };
    let features = FeatureSet::shared(bundle.features.clone());
    let mut train_config = config.train.clone();
    train_config.seed = config.env_seed(seed_idx);

    if need_maxent || need_wmaxent {
        // Phase 1 once; it is both the MaxEnt model and the warm start.
        let phase1 = match train_wmaxent(
            &demos,
            &bundle.mdp,
            &features,
            &train_config,
            TrainMode::MaxentOnly,
        ) {
            Ok(m) => m,
            Err(err) => {
                let err = anyhow::Error::from(err);
                if need_maxent {
                    fail(Algorithm::Maxent, &err);
                }
                if need_wmaxent {
                    fail(Algorithm::Wmaxent, &err);
                }
                return failures;
            }
        };
        if need_maxent {
            if let Err(err) =
                write_json(&maxent_path, &ModelArtifact::Mle(phase1.clone()), true)
            {
                fail(Algorithm::Maxent, &err);
            }
        }
        if need_wmaxent {
            match fit_phase2(
                &demos,
                &bundle.mdp,
                &features,
                phase1.theta.clone(),
                &train_config,
            ) {
                Ok(mut model) => {
                    model.phase1_loglik = phase1.phase1_loglik;
                    model.phase1_iterations = phase1.phase1_iterations;
                    model.phase1_curve = phase1.phase1_curve.clone();
                    model.phase1_objective_curve = phase1.phase1_objective_curve.clone();
                    if let Err(err) =
                        write_json(&wmaxent_path, &ModelArtifact::Mle(model), true)
                    {
                        fail(Algorithm::Wmaxent, &err);
                    }
                }
                Err(err) => fail(Algorithm::Wmaxent, &anyhow::Error::from(err)),
            }
        }
    }

    if need_wairl {
        let wairl_config = WairlConfig {
            features: bundle.features.clone(),
            n_rounds: config.wairl.n_rounds,
            gen_trajs_per_round: config.wairl.gen_trajs_per_round,
            disc_inner_steps: config.wairl.disc_inner_steps,
            horizon: demos.horizon,
            state_only: config.wairl.state_only,
            solver_tol: config.train.solver_tol,
            step_rule: config.train.step_rule.clone(),
            seed: config.wairl_seed(seed_idx),
        };
        match wairl_train(&bundle.mdp, &demos, &wairl_config) {
            Ok(state) => {
                if let Err(err) =
                    write_json(&wairl_path, &ModelArtifact::Adversarial(state), true)
                {
                    fail(Algorithm::Wairl, &err);
                }
            }
            Err(err) => fail(Algorithm::Wairl, &anyhow::Error::from(err)),
        }
    }
    failures
}

/// One CSV row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub env: String,
    pub feature_mode: String,
    pub n_demos: usize,
    pub seed: usize,
    pub metrics: Option<CellMetrics>,
    pub wall_seconds: Option<f64>,
}

pub const CSV_HEADER: &str =
    "algorithm,env,feature_mode,n_demos,seed,evd,transfer_evd,test_loglik,avg_matching,p90_matching,wall_seconds";

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let mut fields = vec![
            self.algorithm.clone(),
            self.env.clone(),
            self.feature_mode.clone(),
            self.n_demos.to_string(),
            self.seed.to_string(),
        ];
        match &self.metrics {
            Some(m) => {
                fields.push(m.evd.to_string());
                fields.push(m.transfer_evd.map(|x| x.to_string()).unwrap_or_default());
                fields.push(m.test_loglik.to_string());
                fields.push(m.avg_matching.to_string());
                fields.push(m.p90_matching.to_string());
            }
            None => fields.extend(std::iter::repeat_n(String::new(), 5)),
        }
        fields.push(self.wall_seconds.map(|x| format!("{x:.3}")).unwrap_or_default());
        fields.join(",")
    }
}

/// Mean and standard error of every metric over the seeds of one
/// (algorithm, n_demos) group; the plotting payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub algorithm: String,
    pub n_demos: usize,
    pub n_seeds: usize,
    pub evd_mean: f64,
    pub evd_stderr: f64,
    pub transfer_evd_mean: Option<f64>,
    pub transfer_evd_stderr: Option<f64>,
    pub test_loglik_mean: f64,
    pub test_loglik_stderr: f64,
    pub avg_matching_mean: f64,
    pub avg_matching_stderr: f64,
    pub p90_matching_mean: f64,
    pub p90_matching_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<SummaryGroup>,
    pub failures: Vec<String>,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evaluate one trained artifact on its training (and optionally transfer)
/// environment.
fn evaluate_cell(
    config: &ExperimentConfig,
    algo: Algorithm,
    seed_idx: usize,
    n_demos: usize,
) -> anyhow::Result<CellMetrics> {
    let bundle: EnvBundle = read_json(&config.env_path(seed_idx))?;
    let test_demos: DemoSet = read_json(&config.test_demo_path(seed_idx))?;
    let artifact: ModelArtifact = read_json(&config.model_path(algo, seed_idx, n_demos))?;

    let policy: Policy = match &artifact {
        ModelArtifact::Mle(model) => model_policy(model, &bundle, config.train.solver_tol)?,
        ModelArtifact::Adversarial(state) => state.policy.clone(),
    };
    let evd = expected_value_difference(&bundle, &policy)?;
    let (avg_matching, p90_matching) = matching_scores(
        &test_demos,
        &policy,
        &bundle.mdp,
        config.matching_seed(seed_idx),
    )?;
    let loglik = match &artifact {
        ModelArtifact::Mle(model) => {
            let features = FeatureSet::shared(bundle.features.clone());
            test_loglik(&test_demos, model, &bundle.mdp, &features)?
        }
        // The adversarial learner has no likelihood model; score its policy
        // density directly.
        ModelArtifact::Adversarial(state) => test_demos
            .trajectories
            .iter()
            .flat_map(|t| t.steps.iter())
            .map(|&(s, a)| state.policy.probs[[s, a]].ln())
            .sum(),
    };

    let transfer_evd = if config.eval.transfer {
        let fresh: EnvBundle = read_json(&config.transfer_env_path(seed_idx))?;
        Some(match &artifact {
            ModelArtifact::Mle(model) => wirl_core::metrics::transfer_eval(model, &fresh)?,
            ModelArtifact::Adversarial(state) => {
                // Tabular f transfers by state index; the weights transfer
                // through the fresh features.
                let (weights, _) = wirl_core::likelihood::weight_of_with_mask(
                    &state.disc.psi_mu,
                    &fresh.features,
                )?;
                let reward = state.disc.expected_f(&fresh.mdp);
                let sol = solve_soft(
                    &fresh.mdp,
                    &reward,
                    &weights,
                    config.train.solver_tol,
                    wirl_core::soft::DEFAULT_MAX_ITER,
                )?;
                expected_value_difference(&fresh, &sol.policy)?
            }
        })
    } else {
        None
    };

    Ok(CellMetrics {
        evd,
        transfer_evd,
        test_loglik: loglik,
        avg_matching,
        p90_matching,
    })
}

/// Evaluate every cell, writing `results.csv` and `summary.json`.
///
/// Missing or failing cells are listed in the summary and show up as rows
/// with empty metric fields; evaluation always continues.
pub fn cmd_eval(config: &ExperimentConfig) -> anyhow::Result<SweepStatus> {
    let mut cells: Vec<(Algorithm, usize, usize)> = Vec::new();
    let mut algos = config.algorithms.clone();
    algos.sort();
    algos.dedup();
    for &algo in &algos {
        for &n in &config.demo.n_demos {
            for k in 0..config.eval.n_seeds {
                cells.push((algo, k, n));
            }
        }
    }

    let pool = thread_pool()?;
    let mut rows: Vec<(ResultRow, Option<String>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(algo, seed_idx, n_demos)| {
                let started = Instant::now();
                let model_file = config.model_path(algo, seed_idx, n_demos);
                let outcome = if model_file.exists() {
                    evaluate_cell(config, algo, seed_idx, n_demos)
                        .map_err(|e| format!("{} {}: {e:#}", algo.name(), model_file.display()))
                } else {
                    Err(format!(
                        "{} seed {seed_idx} n_demos {n_demos}: missing model file {}",
                        algo.name(),
                        model_file.display()
                    ))
                };
                let (metrics, failure) = match outcome {
                    Ok(m) => (Some(m), None),
                    Err(msg) => (None, Some(msg)),
                };
                let row = ResultRow {
                    algorithm: algo.name().to_string(),
                    env: config.env.name().to_string(),
                    feature_mode: config.env.feature_mode_name().to_string(),
                    n_demos,
                    seed: seed_idx,
                    metrics,
                    wall_seconds: config
                        .eval
                        .record_timing
                        .then(|| started.elapsed().as_secs_f64()),
                };
                (row, failure)
            })
            .collect()
    });
    rows.sort_by(|a, b| {
        (&a.0.algorithm, a.0.n_demos, a.0.seed).cmp(&(&b.0.algorithm, b.0.n_demos, b.0.seed))
    });

    let failures: Vec<String> = rows.iter().filter_map(|(_, f)| f.clone()).collect();

    // results.csv, single writer.
    fs::create_dir_all(&config.output_dir)?;
    let mut csv = fs::File::create(config.results_path())?;
    writeln!(csv, "{CSV_HEADER}")?;
    for (row, _) in &rows {
        writeln!(csv, "{}", row.to_csv_line())?;
    }

    // summary.json: per (algorithm, n_demos) means and standard errors.
    let mut groups = Vec::new();
    for &algo in &algos {
        for &n in &config.demo.n_demos {
            let cells: Vec<&CellMetrics> = rows
                .iter()
                .filter(|(r, _)| r.algorithm == algo.name() && r.n_demos == n)
                .filter_map(|(r, _)| r.metrics.as_ref())
                .collect();
            if cells.is_empty() {
                continue;
            }
            let col = |f: fn(&CellMetrics) -> f64| -> Vec<f64> {
                cells.iter().map(|c| f(c)).collect()
            };
            let (evd_mean, evd_stderr) = mean_stderr(&col(|c| c.evd));
            let (ll_mean, ll_stderr) = mean_stderr(&col(|c| c.test_loglik));
            let (avg_mean, avg_stderr) = mean_stderr(&col(|c| c.avg_matching));
            let (p90_mean, p90_stderr) = mean_stderr(&col(|c| c.p90_matching));
            let transfer: Vec<f64> = cells.iter().filter_map(|c| c.transfer_evd).collect();
            let (t_mean, t_stderr) = if transfer.len() == cells.len() && !transfer.is_empty() {
                let (m, s) = mean_stderr(&transfer);
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            groups.push(SummaryGroup {
                algorithm: algo.name().to_string(),
                n_demos: n,
                n_seeds: cells.len(),
                evd_mean,
                evd_stderr,
                transfer_evd_mean: t_mean,
                transfer_evd_stderr: t_stderr,
                test_loglik_mean: ll_mean,
                test_loglik_stderr: ll_stderr,
                avg_matching_mean: avg_mean,
                avg_matching_stderr: avg_stderr,
                p90_matching_mean: p90_mean,
                p90_matching_stderr: p90_stderr,
            });
        }
    }
    let summary = Summary {
        groups,
        failures: failures.clone(),
    };
    write_json(&config.summary_path(), &summary, true)?;

    Ok(SweepStatus { failures })
}

/// gen, then train, then eval; failures accumulate across stages.
pub fn cmd_all(config: &ExperimentConfig) -> anyhow::Result<SweepStatus> {
    cmd_gen(config)?;
    let mut status = cmd_train(config)?;
    let eval_status = cmd_eval(config)?;
    status.failures.extend(eval_status.failures);
    Ok(status)
}
