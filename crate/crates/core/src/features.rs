//! Per-state feature vectors feeding the reward and weight parameterizations.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-state features `phi(s)`, one row per state.
///
/// Continuous features hold arbitrary finite reals; discretized features hold
/// 0/1 indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub values: Array2<f64>,
    pub names: Vec<String>,
}

impl FeatureMap {
    pub fn new(values: Array2<f64>, names: Vec<String>) -> Self {
        debug_assert_eq!(values.ncols(), names.len());
        Self { values, names }
    }

    pub fn n_states(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// A single all-ones feature, useful for constant (state-independent)
    /// parameterizations.
    pub fn constant(n_states: usize) -> Self {
        Self {
            values: Array2::ones((n_states, 1)),
            names: vec!["const".to_string()],
        }
    }

    /// One indicator column per state.
    pub fn state_indicators(n_states: usize) -> Self {
        let mut values = Array2::zeros((n_states, n_states));
        for s in 0..n_states {
            values[[s, s]] = 1.0;
        }
        Self {
            values,
            names: (0..n_states).map(|s| format!("state_{s}")).collect(),
        }
    }

    /// Dot product `theta . phi(s)` for every state.
    pub fn dot(&self, coeffs: &Array1<f64>) -> Result<Array1<f64>> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has length {}, feature dimension is {}",
                coeffs.len(),
                self.dim()
            )));
        }
        Ok(self.values.dot(coeffs))
    }
}

/// Turn each continuous feature into a bank of binary threshold indicators.
///
/// For feature `j` with observed range `[min_j, max_j]`, the thresholds are
/// `t_k = min_j + k (max_j - min_j) / T` for `k = 1..=T`, and indicator `k`
/// fires where `value < t_k`. The output dimension is `dim * T`.
pub fn discretize_features(features: &FeatureMap, thresholds_per_feature: usize) -> Result<FeatureMap> {
    if thresholds_per_feature < 1 {
        return Err(Error::Contract(
            "thresholds_per_feature must be at least 1".into(),
        ));
    }
    let n_states = features.n_states();
    let dim = features.dim();
    let t = thresholds_per_feature;
    let mut values = Array2::zeros((n_states, dim * t));
    let mut names = Vec::with_capacity(dim * t);
    for j in 0..dim {
        let col = features.values.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for k in 1..=t {
            let threshold = lo + (hi - lo) * k as f64 / t as f64;
            let out_col = j * t + (k - 1);
            for s in 0..n_states {
                if features.values[[s, j]] < threshold {
                    values[[s, out_col]] = 1.0;
                }
            }
            names.push(format!("{}_lt_{:.4}", features.names[j], threshold));
        }
    }
    Ok(FeatureMap { values, names })
}
