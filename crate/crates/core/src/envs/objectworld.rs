//! Objectworld: an N x N grid with randomly placed colored objects.
//!
//! Each object carries an outer and an inner color out of `C` colors. The
//! continuous features of a state are, for each color, the Euclidean distance
//! to the nearest object with that outer color and to the nearest object with
//! that inner color (`2C` values). The true reward is +1 within distance 3 of
//! an outer-color-0 object and within distance 2 of an outer-color-1 object,
//! -1 within distance 3 of an outer-color-0 object only, and 0 otherwise;
//! inner colors are distractors.

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{discretize_features, FeatureMap};
use crate::mdp::{RewardTable, TabularMdp};

use super::{EnvBundle, EnvDescriptor, FeatureMode};

/// Grid moves: up, right, down, left, stay.
const MOVES: [(i64, i64); 5] = [(-1, 0), (0, 1), (1, 0), (0, -1), (0, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectworldSpec {
    /// Grid side length N; the MDP has N^2 states.
    pub grid_n: usize,
    pub n_colors: usize,
    pub n_objects: usize,
    /// Probability mass spread over the four unintended moves.
    pub wind: f64,
    pub discount: f64,
    pub feature_mode: FeatureMode,
    /// Indicator thresholds per continuous feature in discrete mode;
    /// defaults to `grid_n`.
    pub thresholds: Option<usize>,
}

impl ObjectworldSpec {
    fn validate(&self) -> Result<()> {
        if self.grid_n < 4 {
            return Err(Error::Contract(format!(
                "grid_n {} must be at least 4",
                self.grid_n
            )));
        }
        if self.n_colors < 1 {
            return Err(Error::Contract("n_colors must be at least 1".into()));
        }
        if self.n_objects > self.grid_n * self.grid_n {
            return Err(Error::Contract(format!(
                "{} objects exceed {} cells",
                self.n_objects,
                self.grid_n * self.grid_n
            )));
        }
        if !(0.0..=1.0).contains(&self.wind) {
            return Err(Error::Contract(format!("wind {} outside [0, 1]", self.wind)));
        }
        Ok(())
    }
}

/// An object placed on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub cell: usize,
    pub outer_color: usize,
    pub inner_color: usize,
}

fn euclid(n: usize, a: usize, b: usize) -> f64 {
    let (ar, ac) = ((a / n) as f64, (a % n) as f64);
    let (br, bc) = ((b / n) as f64, (b % n) as f64);
    ((ar - br).powi(2) + (ac - bc).powi(2)).sqrt()
}

/// Distance from every cell to the nearest object satisfying `pred`, or the
/// off-grid sentinel `n * sqrt(2)` when none exists.
fn nearest_distances(
    n: usize,
    objects: &[PlacedObject],
    pred: impl Fn(&PlacedObject) -> bool,
) -> Array1<f64> {
    let sentinel = n as f64 * std::f64::consts::SQRT_2;
    let mut out = Array1::from_elem(n * n, sentinel);
    for cell in 0..n * n {
        for obj in objects.iter().filter(|o| pred(o)) {
            let d = euclid(n, cell, obj.cell);
            if d < out[cell] {
                out[cell] = d;
            }
        }
    }
    out
}

/// Generate an Objectworld instance; pure function of `(spec, seed)`.
pub fn gen_objectworld(spec: &ObjectworldSpec, seed: u64) -> Result<EnvBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.grid_n;
    let n_states = n * n;
    let n_actions = MOVES.len();

    // Object placement: distinct cells, uniform colors.
    let mut cells: Vec<usize> = (0..n_states).collect();
    cells.shuffle(&mut rng);
    let objects: Vec<PlacedObject> = cells
        .into_iter()
        .take(spec.n_objects)
        .map(|cell| PlacedObject {
            cell,
            outer_color: rng.gen_range(0..spec.n_colors),
            inner_color: rng.gen_range(0..spec.n_colors),
        })
        .collect();

    // Transitions: intended move with probability 1 - wind, the rest spread
    // uniformly over the four other moves. Off-grid moves stay in place.
    let mut transition = Array3::<f64>::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        let (row, col) = ((s / n) as i64, (s % n) as i64);
        let outcomes: Vec<usize> = MOVES
            .iter()
            .map(|&(dr, dc)| {
                let r = (row + dr).clamp(0, n as i64 - 1);
                let c = (col + dc).clamp(0, n as i64 - 1);
                (r * n as i64 + c) as usize
            })
            .collect();
        for a in 0..n_actions {
            transition[[s, a, outcomes[a]]] += 1.0 - spec.wind;
            for (other, &dest) in outcomes.iter().enumerate() {
                if other != a {
                    transition[[s, a, dest]] += spec.wind / (n_actions - 1) as f64;
                }
            }
        }
    }

    // Continuous features: per color, distance to nearest outer and inner.
    let mut columns = Vec::with_capacity(2 * spec.n_colors);
    let mut names = Vec::with_capacity(2 * spec.n_colors);
    for c in 0..spec.n_colors {
        columns.push(nearest_distances(n, &objects, |o| o.outer_color == c));
        names.push(format!("outer{c}_dist"));
        columns.push(nearest_distances(n, &objects, |o| o.inner_color == c));
        names.push(format!("inner{c}_dist"));
    }
    let mut values = Array2::zeros((n_states, columns.len()));
    for (j, col) in columns.iter().enumerate() {
        values.column_mut(j).assign(col);
    }
    let continuous = FeatureMap::new(values, names);

    // True reward from outer colors 0 and 1 (the distance rule degenerates
    // gracefully when C = 1: the +1 band is then empty).
    let d_out0 = nearest_distances(n, &objects, |o| o.outer_color == 0);
    let d_out1 = nearest_distances(n, &objects, |o| o.outer_color == 1);
    let reward_states: Array1<f64> = (0..n_states)
        .map(|s| {
            if d_out0[s] <= 3.0 && spec.n_colors > 1 && d_out1[s] <= 2.0 {
                1.0
            } else if d_out0[s] <= 3.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let true_reward = RewardTable::from_state_values(&reward_states, n_actions);

    // Start anywhere without an object.
    let mut occupied = vec![false; n_states];
    for obj in &objects {
        occupied[obj.cell] = true;
    }
    let free: Vec<usize> = (0..n_states).filter(|&s| !occupied[s]).collect();
    let mut start_dist = Array1::zeros(n_states);
    if free.is_empty() {
        start_dist.fill(1.0 / n_states as f64);
    } else {
        for &s in &free {
            start_dist[s] = 1.0 / free.len() as f64;
        }
    }

    let mdp = TabularMdp::new(transition, spec.discount, start_dist);
    let features = match spec.feature_mode {
        FeatureMode::Continuous => continuous,
        FeatureMode::Discrete => {
            discretize_features(&continuous, spec.thresholds.unwrap_or(n))?
        }
    };

    Ok(EnvBundle {
        mdp,
        features,
        true_reward,
        seed,
        descriptor: EnvDescriptor::Objectworld {
            spec: spec.clone(),
            objects,
        },
    })
}

/// Plain-text grid render: object outer colors as digits, otherwise the
/// reward sign of the cell.
pub fn render_objectworld(spec: &ObjectworldSpec, objects: &[PlacedObject], reward: &RewardTable) -> String {
    let n = spec.grid_n;
    let mut by_cell = vec![None; n * n];
    for obj in objects {
        by_cell[obj.cell] = Some(obj.outer_color);
    }
    let mut out = String::with_capacity(n * (n + 1));
    for row in 0..n {
        for col in 0..n {
            let s = row * n + col;
            let ch = match by_cell[s] {
                Some(c) => char::from_digit((c % 10) as u32, 10).unwrap(),
                None => match reward.values[[s, 0]] {
                    r if r > 0.0 => '+',
                    r if r < 0.0 => '-',
                    _ => '.',
                },
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}
