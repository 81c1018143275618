//! DroneConnect simulator: UAV kinematics, ground-node mobility, coverage
//! and the shared team reward.

use std::ops::{Add, AddAssign, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, ObservationSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Scales the vector down so its length is at most `max`.
    pub fn clamp_norm(self, max: f64) -> Vec2 {
        let n = self.norm();
        if n > max && n > 0.0 {
            self * (max / n)
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsMode {
    #[serde(rename = "FO")]
    Full,
    #[serde(rename = "PO")]
    Partial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommMode {
    #[serde(rename = "UC")]
    Unrestricted,
    #[serde(rename = "RC")]
    Restricted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    Static,
    RandomWaypoint,
}

/// Simulator configuration. Serialized as flat `key = value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub arena_side: f64,
    pub dt: f64,
    pub horizon: usize,
    pub num_uavs: usize,
    pub num_nodes: usize,
    pub sensing_radius: f64,
    pub comm_radius: f64,
    pub coverage_radius: f64,
    pub max_speed: f64,
    pub max_force: f64,
    pub lambda_cov: f64,
    pub lambda_dist: f64,
    pub obs_mode: ObsMode,
    pub comm_mode: CommMode,
    /// Per-node priority weights; empty means every node weighs 1.
    pub node_weights: Vec<f64>,
    pub mobility: Mobility,
    /// Node speed as a fraction of the UAV speed limit.
    pub node_speed_fraction: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            arena_side: 100.0,
            dt: 0.1,
            horizon: 200,
            num_uavs: 3,
            num_nodes: 6,
            sensing_radius: 25.0,
            comm_radius: 30.0,
            coverage_radius: 15.0,
            max_speed: 10.0,
            max_force: 10.0,
            lambda_cov: 1.0,
            lambda_dist: 0.1,
            obs_mode: ObsMode::Partial,
            comm_mode: CommMode::Restricted,
            node_weights: Vec::new(),
            mobility: Mobility::RandomWaypoint,
            node_speed_fraction: 0.2,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("arena_side", self.arena_side),
            ("dt", self.dt),
            ("sensing_radius", self.sensing_radius),
            ("comm_radius", self.comm_radius),
            ("coverage_radius", self.coverage_radius),
            ("max_speed", self.max_speed),
            ("max_force", self.max_force),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("must be a finite value > 0, got {v}")));
            }
        }
        for (field, v) in [
            ("lambda_cov", self.lambda_cov),
            ("lambda_dist", self.lambda_dist),
            ("node_speed_fraction", self.node_speed_fraction),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("must be >= 0, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        if self.num_uavs == 0 {
            return Err(Error::config("num_uavs", "must be >= 1"));
        }
        if self.num_nodes == 0 {
            return Err(Error::config("num_nodes", "must be >= 1"));
        }
        if !self.node_weights.is_empty() {
            if self.node_weights.len() != self.num_nodes {
                return Err(Error::config(
                    "node_weights",
                    format!("has {} entries for {} nodes", self.node_weights.len(), self.num_nodes),
                ));
            }
            if self.node_weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::config("node_weights", "weights must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn node_weight(&self, j: usize) -> f64 {
        self.node_weights.get(j).copied().unwrap_or(1.0)
    }

    pub fn node_speed(&self) -> f64 {
        match self.mobility {
            Mobility::Static => 0.0,
            Mobility::RandomWaypoint => self.node_speed_fraction * self.max_speed,
        }
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        toml::to_string(self).expect("world config always serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uav {
    pub pos: Vec2,
    pub vel: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundNode {
    pub pos: Vec2,
    pub vel: Vec2,
    pub weight: f64,
    pub waypoint: Vec2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub uavs: Vec<Uav>,
    pub nodes: Vec<GroundNode>,
    pub t: usize,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    pub fn uav_positions(&self) -> Vec<Vec2> {
        self.uavs.iter().map(|u| u.pos).collect()
    }

    pub fn node_positions(&self) -> Vec<Vec2> {
        self.nodes.iter().map(|n| n.pos).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: ObservationSet,
    pub reward: f64,
    pub coverage_mask: Vec<bool>,
    pub min_dists: Vec<f64>,
    pub done: bool,
}

impl StepResult {
    pub fn coverage_ratio(&self) -> f64 {
        self.coverage_mask.iter().filter(|c| **c).count() as f64 / self.coverage_mask.len() as f64
    }
}

fn uniform_point(rng: &mut ChaCha8Rng, side: f64) -> Vec2 {
    Vec2::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side))
}

/// Places UAVs and nodes uniformly at random; velocities start at zero.
pub fn reset(config: &WorldConfig) -> Result<WorldState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let side = config.arena_side;
    let uavs = (0..config.num_uavs).map(|_| Uav { pos: uniform_point(&mut rng, side), vel: Vec2::ZERO }).collect();
    let nodes = (0..config.num_nodes)
        .map(|j| {
            let pos = uniform_point(&mut rng, side);
            GroundNode { pos, vel: Vec2::ZERO, weight: config.node_weight(j), waypoint: uniform_point(&mut rng, side) }
        })
        .collect();
    Ok(WorldState { uavs, nodes, t: 0, rng })
}

/// Advances one step. `forces` holds one force per UAV and is clamped to
/// `max_force`. Integration is semi-implicit Euler with speed clamping; a
/// UAV pushed past the arena edge is clipped to it and loses the velocity
/// component along that axis.
pub fn step(config: &WorldConfig, state: &mut WorldState, forces: &[Vec2]) -> Result<StepResult> {
    if forces.len() != state.uavs.len() {
        return Err(Error::Contract(format!("expected {} actions, got {}", state.uavs.len(), forces.len())));
    }
    if state.t >= config.horizon {
        return Err(Error::Contract(format!("episode already finished at t = {}", state.t)));
    }
    if let Some(i) = forces.iter().position(|f| !f.is_finite()) {
        return Err(Error::Contract(format!("action for UAV {i} is not finite")));
    }
    let side = config.arena_side;
    for (u, f) in state.uavs.iter_mut().zip(forces) {
        let a = f.clamp_norm(config.max_force);
        u.vel = (u.vel + a * config.dt).clamp_norm(config.max_speed);
        let mut p = u.pos + u.vel * config.dt;
        if p.x < 0.0 || p.x > side {
            p.x = p.x.clamp(0.0, side);
            u.vel.x = 0.0;
        }
        if p.y < 0.0 || p.y > side {
            p.y = p.y.clamp(0.0, side);
            u.vel.y = 0.0;
        }
        u.pos = p;
    }
    node_mobility_step(config, state);
    state.t += 1;
    Ok(evaluate(config, state))
}

/// Observations, coverage and reward for the current state.
pub fn evaluate(config: &WorldConfig, state: &WorldState) -> StepResult {
    let uav_pos = state.uav_positions();
    let min_dists: Vec<f64> =
        state.nodes.iter().map(|n| min_distance(n.pos, &uav_pos).expect("world has at least one UAV")).collect();
    let coverage_mask = mask_from_dists(&min_dists, config.coverage_radius);
    let reward = reward_from(&coverage_mask, &min_dists, config);
    StepResult {
        observations: graph::build_observations(state, config),
        reward,
        coverage_mask,
        min_dists,
        done: state.t >= config.horizon,
    }
}

/// Random-waypoint motion: each node heads to its waypoint at fixed speed and
/// draws a fresh one from the state's RNG on arrival.
pub fn node_mobility_step(config: &WorldConfig, state: &mut WorldState) {
    let speed = config.node_speed();
    let reach = speed * config.dt;
    let side = config.arena_side;
    for n in state.nodes.iter_mut() {
        let old = n.pos;
        let to_wp = n.waypoint - n.pos;
        let d = to_wp.norm();
        if d <= reach {
            n.pos = n.waypoint;
            n.waypoint = uniform_point(&mut state.rng, side);
        } else {
            n.pos += to_wp * (reach / d);
        }
        n.pos.x = n.pos.x.clamp(0.0, side);
        n.pos.y = n.pos.y.clamp(0.0, side);
        n.vel = (n.pos - old) * (1.0 / config.dt);
    }
}

/// Distance from a node to its nearest UAV.
pub fn min_distance(node: Vec2, uavs: &[Vec2]) -> Result<f64> {
    uavs.iter()
        .map(|p| node.dist(*p))
        .reduce(f64::min)
        .ok_or_else(|| Error::Domain("min_distance over an empty UAV list".into()))
}

pub fn mask_from_dists(min_dists: &[f64], coverage_radius: f64) -> Vec<bool> {
    min_dists.iter().map(|d| *d <= coverage_radius).collect()
}

pub fn coverage_mask(config: &WorldConfig, state: &WorldState) -> Vec<bool> {
    let uav_pos = state.uav_positions();
    state.nodes.iter().map(|n| min_distance(n.pos, &uav_pos).map_or(false, |d| d <= config.coverage_radius)).collect()
}

/// `lambda_cov * mean(c_j) - lambda_dist * mean(d_j / r_cov)`.
pub fn reward_from(mask: &[bool], min_dists: &[f64], config: &WorldConfig) -> f64 {
    let n = mask.len() as f64;
    let covered = mask.iter().filter(|c| **c).count() as f64;
    let dist_sum: f64 = min_dists.iter().map(|d| d / config.coverage_radius).sum();
    config.lambda_cov * covered / n - config.lambda_dist * dist_sum / n
}

pub fn team_reward(config: &WorldConfig, state: &WorldState) -> f64 {
    let uav_pos = state.uav_positions();
    let dists: Vec<f64> =
        state.nodes.iter().map(|n| min_distance(n.pos, &uav_pos).expect("world has at least one UAV")).collect();
    reward_from(&mask_from_dists(&dists, config.coverage_radius), &dists, config)
}

/// Convenience owner of a config and its evolving state.
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub state: WorldState,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let state = reset(&config)?;
        Ok(Self { config, state })
    }

    pub fn step(&mut self, forces: &[Vec2]) -> Result<StepResult> {
        step(&self.config, &mut self.state, forces)
    }

    pub fn observe(&self) -> StepResult {
        evaluate(&self.config, &self.state)
    }
}

/// One line of the JSON-lines trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub uav_positions: Vec<[f64; 2]>,
    pub uav_velocities: Vec<[f64; 2]>,
    pub node_positions: Vec<[f64; 2]>,
    pub actions: Vec<[f64; 2]>,
    pub reward: f64,
    pub coverage_mask: Vec<bool>,
    pub min_dists: Vec<f64>,
    pub comm_edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_attention: Option<Vec<Vec<f64>>>,
}

impl StepRecord {
    pub fn capture(state: &WorldState, actions: &[Vec2], result: &StepResult) -> Self {
        Self {
            t: state.t,
            uav_positions: state.uavs.iter().map(|u| u.pos.to_array()).collect(),
            uav_velocities: state.uavs.iter().map(|u| u.vel.to_array()).collect(),
            node_positions: state.nodes.iter().map(|n| n.pos.to_array()).collect(),
            actions: actions.iter().map(|a| a.to_array()).collect(),
            reward: result.reward,
            coverage_mask: result.coverage_mask.clone(),
            min_dists: result.min_dists.clone(),
            comm_edges: result.observations.comm_edges(),
            entity_attention: None,
        }
    }
}

pub fn write_trajectory(records: &[StepRecord], mut out: impl std::io::Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("writing trajectory", e))?;
    }
    Ok(())
}

pub fn read_trajectory(text: &str) -> Result<Vec<StepRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}
