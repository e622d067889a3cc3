//! Highway driving: three lanes on a cyclic road, traffic at constant speed.
//!
//! The agent state is (cell, lane, speed index); actions are lane changes,
//! speed changes, and keep. Dynamics are deterministic in the frame of the
//! traffic, which all moves at speed 1: the agent advances by its speed minus
//! the traffic speed each step. Vehicles carry a class (car or motorcycle)
//! and a category (civilian or police). The true reward pays for speed but is
//! -1 when driving at or above double the traffic speed within two cells of a
//! police vehicle.

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

pub const N_LANES: usize = 3;
/// Speed of every traffic vehicle.
pub const TRAFFIC_SPEED: u32 = 1;
/// Road distance (cells) within which a police vehicle triggers the penalty.
pub const POLICE_RANGE: u32 = 2;

/// Actions: left, right, faster, slower, keep.
pub const HIGHWAY_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Car,
    Motorcycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleCategory {
    Civilian,
    Police,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vehicle {
    pub cell: usize,
    pub lane: usize,
    pub class: VehicleClass,
    pub category: VehicleCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighwaySpec {
    /// Road cells; the road is cyclic.
    pub length: usize,
    /// Must be 3.
    pub n_lanes: usize,
    pub n_vehicles: usize,
    /// Agent speed set, in traffic-speed units; must be nonempty.
    pub speeds: Vec<u32>,
    pub discount: f64,
    pub feature_mode: FeatureMode,
    /// Indicator thresholds per continuous feature in discrete mode;
    /// defaults to 8.
    pub thresholds: Option<usize>,
}

impl HighwaySpec {
    fn validate(&self) -> Result<()> {
        if self.n_lanes != N_LANES {
            return Err(Error::Contract(format!(
                "highway has exactly {N_LANES} lanes, got {}",
                self.n_lanes
            )));
        }
        if self.speeds.is_empty() {
            return Err(Error::Contract("speed set must be nonempty".into()));
        }
        if self.length < 4 {
            return Err(Error::Contract(format!(
                "road length {} must be at least 4",
                self.length
            )));
        }
        if self.n_vehicles > self.length * N_LANES {
            return Err(Error::Contract(format!(
                "{} vehicles exceed {} road slots",
                self.n_vehicles,
                self.length * N_LANES
            )));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.length * N_LANES * self.speeds.len()
    }

    pub fn state_index(&self, cell: usize, lane: usize, speed_idx: usize) -> usize {
        (cell * N_LANES + lane) * self.speeds.len() + speed_idx
    }

    pub fn state_parts(&self, s: usize) -> (usize, usize, usize) {
        let speed_idx = s % self.speeds.len();
        let rest = s / self.speeds.len();
        (rest / N_LANES, rest % N_LANES, speed_idx)
    }
}

/// Cells from `from` forward to `to` on the cyclic road.
fn dist_ahead(length: usize, from: usize, to: usize) -> usize {
    (to + length - from) % length
}

/// Minimum cyclic distance in either direction.
fn dist_cyclic(length: usize, a: usize, b: usize) -> usize {
    let fwd = dist_ahead(length, a, b);
    fwd.min(length - fwd)
}

fn speeding(spec: &HighwaySpec, speed_idx: usize) -> bool {
    spec.speeds[speed_idx] >= 2 * TRAFFIC_SPEED
}

fn police_nearby(spec: &HighwaySpec, vehicles: &[Vehicle], cell: usize) -> bool {
    vehicles.iter().any(|v| {
        v.category == VehicleCategory::Police
            && dist_cyclic(spec.length, cell, v.cell) <= POLICE_RANGE as usize
    })
}

/// The speed/police reward rule for a single state.
pub fn highway_reward(spec: &HighwaySpec, vehicles: &[Vehicle], s: usize) -> f64 {
    let (cell, _lane, speed_idx) = spec.state_parts(s);
    let max_speed = *spec.speeds.iter().max().expect("nonempty speeds") as f64;
    if speeding(spec, speed_idx) && police_nearby(spec, vehicles, cell) {
        -1.0
    } else {
        spec.speeds[speed_idx] as f64 / max_speed
    }
}

/// Generate a highway instance; pure function of `(spec, seed)`.
pub fn gen_highway(spec: &HighwaySpec, seed: u64) -> Result<EnvBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = spec.n_states();
    let n_speeds = spec.speeds.len();

    // Vehicles on distinct (cell, lane) slots.
    let mut slots: Vec<(usize, usize)> = (0..spec.length)
        .flat_map(|c| (0..N_LANES).map(move |l| (c, l)))
        .collect();
    slots.shuffle(&mut rng);
    let vehicles: Vec<Vehicle> = slots
        .into_iter()
        .take(spec.n_vehicles)
        .map(|(cell, lane)| Vehicle {
            cell,
            lane,
            class: if rng.gen::<bool>() {
                VehicleClass::Car
            } else {
                VehicleClass::Motorcycle
            },
            category: if rng.gen::<bool>() {
                VehicleCategory::Civilian
            } else {
                VehicleCategory::Police
            },
        })
        .collect();

    // Deterministic dynamics in the traffic frame.
    let mut transition = Array3::<f64>::zeros((n_states, HIGHWAY_ACTIONS, n_states));
    for s in 0..n_states {
        let (cell, lane, speed_idx) = spec.state_parts(s);
        for a in 0..HIGHWAY_ACTIONS {
            let (lane2, speed2) = match a {
                0 => (lane.saturating_sub(1), speed_idx),
                1 => ((lane + 1).min(N_LANES - 1), speed_idx),
                2 => (lane, (speed_idx + 1).min(n_speeds - 1)),
                3 => (lane, speed_idx.saturating_sub(1)),
                _ => (lane, speed_idx),
            };
            let relative = spec.speeds[speed2] as i64 - TRAFFIC_SPEED as i64;
            let cell2 =
                ((cell as i64 + relative).rem_euclid(spec.length as i64)) as usize;
            transition[[s, a, spec.state_index(cell2, lane2, speed2)]] = 1.0;
        }
    }

    // Continuous features: distance ahead to the nearest vehicle of each
    // class and category, in the same lane and in a different lane, plus the
    // normalized agent speed.
    let max_speed = *spec.speeds.iter().max().expect("nonempty") as f64;
    let kinds: [(&str, Box<dyn Fn(&Vehicle) -> bool>); 4] = [
        ("car", Box::new(|v: &Vehicle| v.class == VehicleClass::Car)),
        (
            "motorcycle",
            Box::new(|v: &Vehicle| v.class == VehicleClass::Motorcycle),
        ),
        (
            "civilian",
            Box::new(|v: &Vehicle| v.category == VehicleCategory::Civilian),
        ),
        (
            "police",
            Box::new(|v: &Vehicle| v.category == VehicleCategory::Police),
        ),
    ];
    let dim = 2 * kinds.len() + 1;
    let mut values = Array2::zeros((n_states, dim));
    let mut names = Vec::with_capacity(dim);
    for (k, (name, pred)) in kinds.iter().enumerate() {
        names.push(format!("{name}_ahead_same"));
        names.push(format!("{name}_ahead_diff"));
        for s in 0..n_states {
            let (cell, lane, _) = spec.state_parts(s);
            let mut same = spec.length as f64;
            let mut diff = spec.length as f64;
            for v in vehicles.iter().filter(|v| pred(v)) {
                let d = dist_ahead(spec.length, cell, v.cell) as f64;
                if v.lane == lane {
                    same = same.min(d);
                } else {
                    diff = diff.min(d);
                }
            }
            values[[s, 2 * k]] = same;
            values[[s, 2 * k + 1]] = diff;
        }
    }
    names.push("speed".into());
    for s in 0..n_states {
        let (_, _, speed_idx) = spec.state_parts(s);
        values[[s, dim - 1]] = spec.speeds[speed_idx] as f64 / max_speed;
    }
    let continuous = FeatureMap::new(values, names);

    let reward_states: Array1<f64> =
        (0..n_states).map(|s| highway_reward(spec, &vehicles, s)).collect();
    let true_reward = RewardTable::from_state_values(&reward_states, HIGHWAY_ACTIONS);

    // Start at cell 0, slowest speed, any lane.
    let mut start_dist = Array1::zeros(n_states);
    for lane in 0..N_LANES {
        start_dist[spec.state_index(0, lane, 0)] = 1.0 / N_LANES as f64;
    }

    let mdp = TabularMdp::new(transition, spec.discount, start_dist);
    let features = match spec.feature_mode {
        FeatureMode::Continuous => continuous,
        FeatureMode::Discrete => {
            discretize_features(&continuous, spec.thresholds.unwrap_or(8))?
        }
    };

    Ok(EnvBundle {
        mdp,
        features,
        true_reward,
        seed,
        descriptor: EnvDescriptor::Highway {
            spec: spec.clone(),
            vehicles,
        },
    })
}

/// Plain-text road render, one line per lane: c/m civilian car/motorcycle,
/// C/M police car/motorcycle.
pub fn render_highway(spec: &HighwaySpec, vehicles: &[Vehicle]) -> String {
    let mut grid = vec![vec!['.'; spec.length]; N_LANES];
    for v in vehicles {
        let ch = match (v.class, v.category) {
            (VehicleClass::Car, VehicleCategory::Civilian) => 'c',
            (VehicleClass::Motorcycle, VehicleCategory::Civilian) => 'm',
            (VehicleClass::Car, VehicleCategory::Police) => 'C',
            (VehicleClass::Motorcycle, VehicleCategory::Police) => 'M',
        };
        grid[v.lane][v.cell] = ch;
    }
    let mut out = String::new();
    for lane in grid {
        out.extend(lane);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate_mdp;

    fn small_spec() -> HighwaySpec {
        HighwaySpec {
            length: 12,
            n_lanes: 3,
            n_vehicles: 6,
            speeds: vec![1, 2],
            discount: 0.9,
            feature_mode: FeatureMode::Continuous,
            thresholds: None,
        }
    }

    #[test]
    fn generated_bundle_is_validator_clean_and_deterministic_rows() {
        let bundle = gen_highway(&small_spec(), 0).unwrap();
        assert!(validate_mdp(&bundle.mdp).is_empty());
        for s in 0..bundle.mdp.n_states {
            for a in 0..HIGHWAY_ACTIONS {
                let row = bundle.mdp.transition.slice(ndarray::s![s, a, ..]);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
            }
        }
        assert_eq!(bundle.mdp.n_states, 12 * 3 * 2);
        assert_eq!(bundle.features.dim(), 9);
    }

    #[test]
    fn same_seed_reproduces_bundle() {
        let a = gen_highway(&small_spec(), 5).unwrap();
        let b = gen_highway(&small_spec(), 5).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn no_police_makes_reward_increase_with_speed() {
        // Seed-independent: rebuild the reward with all vehicles civilian.
        let spec = small_spec();
        let bundle = gen_highway(&spec, 3).unwrap();
        let mut vehicles = match &bundle.descriptor {
            EnvDescriptor::Highway { vehicles, .. } => vehicles.clone(),
            _ => unreachable!(),
        };
        for v in &mut vehicles {
            v.category = VehicleCategory::Civilian;
        }
        for cell in 0..spec.length {
            for lane in 0..N_LANES {
                let slow = highway_reward(&spec, &vehicles, spec.state_index(cell, lane, 0));
                let fast = highway_reward(&spec, &vehicles, spec.state_index(cell, lane, 1));
                assert!(fast > slow, "cell {cell} lane {lane}: {fast} <= {slow}");
            }
        }
    }

    #[test]
    fn speeding_next_to_police_is_penalized() {
        let spec = small_spec();
        let vehicles = vec![Vehicle {
            cell: 4,
            lane: 1,
            class: VehicleClass::Car,
            category: VehicleCategory::Police,
        }];
        // Within two cells at double traffic speed: negative reward.
        for cell in [2, 3, 4, 5, 6] {
            let r = highway_reward(&spec, &vehicles, spec.state_index(cell, 0, 1));
            assert_eq!(r, -1.0, "cell {cell}");
        }
        // Out of range or slow: positive.
        assert!(highway_reward(&spec, &vehicles, spec.state_index(8, 0, 1)) > 0.0);
        assert!(highway_reward(&spec, &vehicles, spec.state_index(4, 0, 0)) > 0.0);
    }

    #[test]
    fn reward_table_matches_rule_for_every_state() {
        let bundle = gen_highway(&small_spec(), 9).unwrap();
        let (spec, vehicles) = match &bundle.descriptor {
            EnvDescriptor::Highway { spec, vehicles } => (spec.clone(), vehicles.clone()),
            _ => unreachable!(),
        };
        for s in 0..bundle.mdp.n_states {
            let expected = highway_reward(&spec, &vehicles, s);
            for a in 0..HIGHWAY_ACTIONS {
                assert_eq!(bundle.true_reward.values[[s, a]], expected);
            }
        }
    }

    #[test]
    fn wrong_lane_count_is_rejected() {
        let spec = HighwaySpec {
            n_lanes: 2,
            ..small_spec()
        };
        assert!(gen_highway(&spec, 0).is_err());
    }

    #[test]
    fn dynamics_move_relative_to_traffic() {
        let spec = small_spec();
        let bundle = gen_highway(&spec, 1).unwrap();
        // At traffic speed (index 0) with "keep", the agent stays put.
        let s = spec.state_index(5, 1, 0);
        assert_eq!(bundle.mdp.transition[[s, 4, s]], 1.0);
        // At double speed with "keep", the agent advances one cell.
        let s = spec.state_index(5, 1, 1);
        let expect = spec.state_index(6, 1, 1);
        assert_eq!(bundle.mdp.transition[[s, 4, expect]], 1.0);
        // "faster" accelerates immediately and moves.
        let s = spec.state_index(5, 1, 0);
        let expect = spec.state_index(6, 1, 1);
        assert_eq!(bundle.mdp.transition[[s, 2, expect]], 1.0);
    }

    #[test]
    fn render_shows_three_lanes() {
        let bundle = gen_highway(&small_spec(), 2).unwrap();
        let (spec, vehicles) = match &bundle.descriptor {
            EnvDescriptor::Highway { spec, vehicles } => (spec.clone(), vehicles.clone()),
            _ => unreachable!(),
        };
        let render = render_highway(&spec, &vehicles);
        assert_eq!(render.lines().count(), 3);
        assert!(render.lines().all(|l| l.len() == 12));
    }
}
