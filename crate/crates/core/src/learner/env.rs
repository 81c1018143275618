use crate::error::{Error, Result};
use crate::graph::ObservationSet;
use crate::world::{self, StepResult, Vec2, WorldConfig, WorldState};

/// Outcome of one joint step, seen from the controlled team.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    /// Team reward shared by every controlled agent.
    pub reward: f64,
    pub done: bool,
    /// Covered-node fraction after the step; zero where coverage is meaningless.
    pub coverage: f64,
    /// Set on the final step of an episode the controlled team won.
    pub won: bool,
}

/// A cooperative multi-agent task driven by the learner.
///
/// Observations list only the agents that currently act; `step` takes one
/// action per listed agent, in the same order.
pub trait MultiAgentEnv {
    fn reset(&mut self, seed: u64) -> Result<()>;
    fn observe(&self) -> ObservationSet;
    /// Flattened global state for the critic. Its length is fixed per config.
    fn global_state(&self) -> Vec<f64>;
    fn global_state_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn step(&mut self, actions: &[Vec<f64>]) -> Result<EnvStep>;
}

/// DroneConnect behind the learner interface. Actions are per-component
/// force fractions, clamped to `[-1, 1]` and scaled by `max_force`.
#[derive(Clone, Debug)]
pub struct ConnectEnv {
    pub config: WorldConfig,
    pub state: WorldState,
    last: StepResult,
}

impl ConnectEnv {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let state = world::reset(&config)?;
        let last = world::evaluate(&config, &state);
        Ok(Self { config, state, last })
    }

    /// Starts from a given state instead of a seeded reset.
    pub fn from_state(config: WorldConfig, state: WorldState) -> Result<Self> {
        config.validate()?;
        let last = world::evaluate(&config, &state);
        Ok(Self { config, state, last })
    }

    pub fn last(&self) -> &StepResult {
        &self.last
    }

    pub fn forces(&self, actions: &[Vec<f64>]) -> Result<Vec<Vec2>> {
        actions
            .iter()
            .map(|a| {
                if a.len() != 2 {
                    return Err(Error::Contract(format!("connect actions have 2 components, got {}", a.len())));
                }
                let f = self.config.max_force;
                Ok(Vec2::new(a[0].clamp(-1.0, 1.0) * f, a[1].clamp(-1.0, 1.0) * f))
            })
            .collect()
    }

    pub fn step_forces(&mut self, forces: &[Vec2]) -> Result<&StepResult> {
        self.last = world::step(&self.config, &mut self.state, forces)?;
        Ok(&self.last)
    }
}

/// Critic input: UAV positions and velocities, then node positions and
/// velocities, normalized, then the elapsed fraction of the episode.
pub fn connect_global_state(config: &WorldConfig, state: &WorldState) -> Vec<f64> {
    let side = config.arena_side;
    let v = config.max_speed;
    let mut s = Vec::with_capacity(connect_global_state_dim(config));
    for u in &state.uavs {
        s.extend([u.pos.x / side, u.pos.y / side, u.vel.x / v, u.vel.y / v]);
    }
    for n in &state.nodes {
        s.extend([n.pos.x / side, n.pos.y / side, n.vel.x / v, n.vel.y / v]);
    }
    s.push(state.t as f64 / config.horizon as f64);
    s
}

pub fn connect_global_state_dim(config: &WorldConfig) -> usize {
    4 * (config.num_uavs + config.num_nodes) + 1
}

impl MultiAgentEnv for ConnectEnv {
    fn reset(&mut self, seed: u64) -> Result<()> {
        self.config.seed = seed;
        self.state = world::reset(&self.config)?;
        self.last = world::evaluate(&self.config, &self.state);
        Ok(())
    }

    fn observe(&self) -> ObservationSet {
        self.last.observations.clone()
    }

    fn global_state(&self) -> Vec<f64> {
        connect_global_state(&self.config, &self.state)
    }

    fn global_state_dim(&self) -> usize {
        connect_global_state_dim(&self.config)
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<EnvStep> {
        let forces = self.forces(actions)?;
        let r = self.step_forces(&forces)?;
        Ok(EnvStep { reward: r.reward, done: r.done, coverage: r.coverage_ratio(), won: false })
    }
}
