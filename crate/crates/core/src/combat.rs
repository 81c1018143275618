//! DroneCombat: two teams of drones with planar motion, a heading and a
//! forward laser.
//!
//! Per-step rewards follow a fixed event table: firing costs 0.1, a miss
//! costs another 1, a hit earns 3 for the shooter and costs the victim 3,
//! every drone alive at the start of a step pays `50 / T`, and when one team
//! is wiped out each surviving member of the other earns 20. Beams are
//! resolved simultaneously from post-move positions, so two drones can
//! eliminate each other in the same step.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{radius_neighbors, AgentObservation, EntityFeature, EntityKind, EntityRef, ObservationSet};
use crate::learner::{EnvStep, MultiAgentEnv};
use crate::world::{CommMode, ObsMode, Vec2};

pub const EMIT_REWARD: f64 = -0.1;
pub const MISS_REWARD: f64 = -1.0;
pub const HIT_REWARD: f64 = 3.0;
pub const HIT_BY_REWARD: f64 = -3.0;
pub const STEP_PENALTY_TOTAL: f64 = -50.0;
pub const WIN_REWARD: f64 = 20.0;

/// Width of the combat self state `[px, py, vx, vy, cos h, sin h]`.
pub const COMBAT_SELF_DIM: usize = 6;
/// Action components: force x, force y, turn command, fire logit.
pub const COMBAT_ACT_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Attacker,
    Defender,
}

impl Team {
    pub fn other(self) -> Team {
        match self {
            Team::Attacker => Team::Defender,
            Team::Defender => Team::Attacker,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombatConfig {
    pub arena_side: f64,
    pub dt: f64,
    pub horizon: usize,
    pub attackers: usize,
    pub defenders: usize,
    pub max_speed: f64,
    pub max_force: f64,
    /// Largest turn rate in radians per second.
    pub max_turn_rate: f64,
    pub beam_range: f64,
    pub beam_half_width_deg: f64,
    pub sensing_radius: f64,
    pub comm_radius: f64,
    pub obs_mode: ObsMode,
    pub comm_mode: CommMode,
    /// Turn rate of the scripted opponent as a fraction of `max_turn_rate`.
    pub scripted_turn_fraction: f64,
    pub seed: u64,
}

impl Default for CombatConfig {
    fn default() -> Self {
        Self {
            arena_side: 100.0,
            dt: 0.1,
            horizon: 200,
            attackers: 2,
            defenders: 2,
            max_speed: 10.0,
            max_force: 10.0,
            max_turn_rate: PI,
            beam_range: 20.0,
            beam_half_width_deg: 3.0,
            sensing_radius: 25.0,
            comm_radius: 30.0,
            obs_mode: ObsMode::Partial,
            comm_mode: CommMode::Restricted,
            scripted_turn_fraction: 0.5,
            seed: 0,
        }
    }
}

impl CombatConfig {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("arena_side", self.arena_side),
            ("dt", self.dt),
            ("max_speed", self.max_speed),
            ("max_force", self.max_force),
            ("max_turn_rate", self.max_turn_rate),
            ("beam_range", self.beam_range),
            ("beam_half_width_deg", self.beam_half_width_deg),
            ("sensing_radius", self.sensing_radius),
            ("comm_radius", self.comm_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("combat.{f}"), "must be positive"));
            }
        }
        if self.horizon == 0 || self.attackers == 0 || self.defenders == 0 {
            return Err(Error::config("combat.horizon", "horizon and team sizes must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.scripted_turn_fraction) {
            return Err(Error::config("combat.scripted_turn_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn num_drones(&self) -> usize {
        self.attackers + self.defenders
    }

    pub fn step_penalty(&self) -> f64 {
        STEP_PENALTY_TOTAL / self.horizon as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drone {
    pub pos: Vec2,
    pub vel: Vec2,
    /// Radians in `[0, 2π)`.
    pub heading: f64,
    pub team: Team,
    pub alive: bool,
}

/// Attackers occupy indices `0..attackers`, defenders the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct CombatState {
    pub drones: Vec<Drone>,
    pub t: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombatAction {
    pub fx: f64,
    pub fy: f64,
    pub frot: f64,
    pub fire: bool,
}

impl CombatAction {
    pub const IDLE: CombatAction = CombatAction { fx: 0.0, fy: 0.0, frot: 0.0, fire: false };

    /// From a raw policy output: the first three components are clamped to
    /// `[-1, 1]` and scaled; the drone fires iff the fourth is positive.
    pub fn from_raw(a: &[f64], config: &CombatConfig) -> Result<Self> {
        if a.len() != COMBAT_ACT_DIM {
            return Err(Error::Contract(format!("combat actions have {COMBAT_ACT_DIM} components, got {}", a.len())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("combat action is not finite".into()));
        }
        Ok(Self {
            fx: a[0].clamp(-1.0, 1.0) * config.max_force,
            fy: a[1].clamp(-1.0, 1.0) * config.max_force,
            frot: a[2].clamp(-1.0, 1.0) * config.max_turn_rate,
            fire: a[3] > 0.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WinState {
    None,
    Attacker,
    Defender,
    Draw,
}

/// One entry of the JSON-lines event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CombatEvent {
    Fire { step: usize, shooter: usize, hit: Option<usize> },
    Eliminated { step: usize, drone: usize },
    End { step: usize, outcome: WinState },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombatStepResult {
    /// Reward of every drone this step; zero for drones already eliminated.
    pub rewards: Vec<f64>,
    pub done: bool,
    pub outcome: WinState,
    pub events: Vec<CombatEvent>,
}

fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Attackers start in the left third facing east, defenders in the right
/// third facing west.
pub fn combat_reset(config: &CombatConfig) -> Result<CombatState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let side = config.arena_side;
    let mut drones = Vec::with_capacity(config.num_drones());
    for (team, count, x0, heading) in
        [(Team::Attacker, config.attackers, 0.0, 0.0), (Team::Defender, config.defenders, 2.0 * side / 3.0, PI)]
    {
        for _ in 0..count {
            drones.push(Drone {
                pos: Vec2::new(x0 + rng.random_range(0.0..=side / 3.0), rng.random_range(0.0..=side)),
                vel: Vec2::ZERO,
                heading,
                team,
                alive: true,
            });
        }
    }
    Ok(CombatState { drones, t: 0 })
}

pub fn alive_indices(state: &CombatState, team: Option<Team>) -> Vec<usize> {
    (0..state.drones.len())
        .filter(|&i| state.drones[i].alive && team.is_none_or(|t| state.drones[i].team == t))
        .collect()
}

pub fn win_state(state: &CombatState, config: &CombatConfig) -> WinState {
    let att = state.drones.iter().any(|d| d.alive && d.team == Team::Attacker);
    let def = state.drones.iter().any(|d| d.alive && d.team == Team::Defender);
    match (att, def) {
        (false, false) => WinState::Draw,
        (true, false) => WinState::Attacker,
        (false, true) => WinState::Defender,
        (true, true) if state.t >= config.horizon => WinState::Draw,
        _ => WinState::None,
    }
}

/// Nearest live opponent inside the beam cone of drone `s`, if any.
pub fn beam_target(state: &CombatState, s: usize, config: &CombatConfig) -> Option<usize> {
    let me = &state.drones[s];
    let dir = Vec2::new(me.heading.cos(), me.heading.sin());
    let half = config.beam_half_width_deg.to_radians();
    let mut best: Option<(f64, usize)> = None;
    for (o, d) in state.drones.iter().enumerate() {
        if !d.alive || d.team == me.team {
            continue;
        }
        let rel = d.pos - me.pos;
        let dist = rel.norm();
        if dist > config.beam_range || dist == 0.0 {
            continue;
        }
        let cos = (rel.x * dir.x + rel.y * dir.y) / dist;
        if cos.clamp(-1.0, 1.0).acos() <= half && best.is_none_or(|(bd, _)| dist < bd) {
            best = Some((dist, o));
        }
    }
    best.map(|(_, o)| o)
}

/// Advances one step. `actions` holds one action per live drone, in index
/// order.
pub fn combat_step(
    config: &CombatConfig,
    state: &mut CombatState,
    actions: &[CombatAction],
) -> Result<CombatStepResult> {
    let alive = alive_indices(state, None);
    if actions.len() != alive.len() {
        return Err(Error::Contract(format!(
            "expected {} actions (one per live drone), got {}",
            alive.len(),
            actions.len()
        )));
    }
    if win_state(state, config) != WinState::None {
        return Err(Error::Contract("combat episode already finished".into()));
    }
    if actions.iter().any(|a| ![a.fx, a.fy, a.frot].iter().all(|v| v.is_finite())) {
        return Err(Error::Contract("combat action is not finite".into()));
    }
    let step = state.t;
    let side = config.arena_side;
    let mut rewards = vec![0.0; state.drones.len()];
    for (&i, a) in alive.iter().zip(actions) {
        let d = &mut state.drones[i];
        let f = Vec2::new(a.fx, a.fy).clamp_norm(config.max_force);
        d.vel = (d.vel + f * config.dt).clamp_norm(config.max_speed);
        let mut p = d.pos + d.vel * config.dt;
        if p.x < 0.0 || p.x > side {
            p.x = p.x.clamp(0.0, side);
            d.vel.x = 0.0;
        }
        if p.y < 0.0 || p.y > side {
            p.y = p.y.clamp(0.0, side);
            d.vel.y = 0.0;
        }
        d.pos = p;
        let turn = a.frot.clamp(-config.max_turn_rate, config.max_turn_rate);
        d.heading = wrap_angle(d.heading + turn * config.dt);
        rewards[i] += config.step_penalty();
    }
    let mut events = Vec::new();
    let mut hit = vec![false; state.drones.len()];
    for (&i, a) in alive.iter().zip(actions) {
        if !a.fire {
            continue;
        }
        rewards[i] += EMIT_REWARD;
        let target = beam_target(state, i, config);
        match target {
            Some(o) => {
                rewards[i] += HIT_REWARD;
                rewards[o] += HIT_BY_REWARD;
                hit[o] = true;
            }
            None => rewards[i] += MISS_REWARD,
        }
        events.push(CombatEvent::Fire { step, shooter: i, hit: target });
    }
    for (i, h) in hit.iter().enumerate() {
        if *h {
            state.drones[i].alive = false;
            events.push(CombatEvent::Eliminated { step, drone: i });
        }
    }
    state.t += 1;
    let outcome = win_state(state, config);
    let winner = match outcome {
        WinState::Attacker => Some(Team::Attacker),
        WinState::Defender => Some(Team::Defender),
        _ => None,
    };
    if let Some(team) = winner {
        for (i, d) in state.drones.iter().enumerate() {
            if d.alive && d.team == team {
                rewards[i] += WIN_REWARD;
            }
        }
    }
    let done = outcome != WinState::None;
    if done {
        events.push(CombatEvent::End { step, outcome });
    }
    Ok(CombatStepResult { rewards, done, outcome, events })
}

/// Per-drone episode returns rebuilt from an event log alone.
pub fn returns_from_log(events: &[CombatEvent], teams: &[Team], config: &CombatConfig) -> Result<Vec<f64>> {
    let n = teams.len();
    let (end_step, outcome) = events
        .iter()
        .find_map(|e| match e {
            CombatEvent::End { step, outcome } => Some((*step, *outcome)),
            _ => None,
        })
        .ok_or_else(|| Error::Domain("event log has no end record".into()))?;
    let mut died = vec![None; n];
    for e in events {
        if let CombatEvent::Eliminated { step, drone } = e {
            died[*drone] = Some(*step);
        }
    }
    let mut out = vec![0.0; n];
    for (i, r) in out.iter_mut().enumerate() {
        let last = died[i].unwrap_or(end_step);
        *r += (last + 1) as f64 * config.step_penalty();
    }
    for e in events {
        if let CombatEvent::Fire { shooter, hit, .. } = e {
            out[*shooter] += EMIT_REWARD;
            match hit {
                Some(o) => {
                    out[*shooter] += HIT_REWARD;
                    out[*o] += HIT_BY_REWARD;
                }
                None => out[*shooter] += MISS_REWARD,
            }
        }
    }
    let winner = match outcome {
        WinState::Attacker => Some(Team::Attacker),
        WinState::Defender => Some(Team::Defender),
        _ => None,
    };
    if let Some(team) = winner {
        for i in 0..n {
            if teams[i] == team && died[i].is_none() {
                out[i] += WIN_REWARD;
            }
        }
    }
    Ok(out)
}

pub fn write_events(events: &[CombatEvent], mut out: impl std::io::Write) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|e| Error::io("combat event log", e))?;
    }
    Ok(())
}

pub fn read_events(text: &str) -> Result<Vec<CombatEvent>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}

/// Observations of the live members of `team`. Teammates appear as
/// [`EntityKind::Uav`], opponents as [`EntityKind::Opponent`]; messages only
/// flow between teammates.
pub fn team_observations(state: &CombatState, team: Team, config: &CombatConfig) -> ObservationSet {
    let side = config.arena_side;
    let vmax = config.max_speed;
    let members = alive_indices(state, Some(team));
    let member_pos: Vec<Vec2> = members.iter().map(|&i| state.drones[i].pos).collect();
    let agents = members
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let me = state.drones[i];
            let mut sensed = Vec::new();
            let mut sensed_ids = Vec::new();
            for (j, d) in state.drones.iter().enumerate() {
                if j == i || !d.alive {
                    continue;
                }
                if config.obs_mode == ObsMode::Partial && d.pos.dist(me.pos) > config.sensing_radius {
                    continue;
                }
                sensed.push(EntityFeature {
                    relative_position: (d.pos - me.pos) * (1.0 / side),
                    velocity: d.vel * (1.0 / vmax),
                    kind: if d.team == team { EntityKind::Uav } else { EntityKind::Opponent },
                    weight: 1.0,
                });
                sensed_ids.push(EntityRef::Uav(j));
            }
            let comm_neighbors = match config.comm_mode {
                CommMode::Unrestricted => (0..members.len()).filter(|&o| o != k).collect(),
                CommMode::Restricted => radius_neighbors(&member_pos, k, config.comm_radius),
            };
            AgentObservation {
                id: i,
                self_state: vec![
                    me.pos.x / side,
                    me.pos.y / side,
                    me.vel.x / vmax,
                    me.vel.y / vmax,
                    me.heading.cos(),
                    me.heading.sin(),
                ],
                sensed,
                sensed_ids,
                comm_neighbors,
            }
        })
        .collect();
    ObservationSet { agents }
}

/// Chase-and-fire opponent: each drone steers toward the nearest live enemy,
/// turns toward it at a limited rate and fires when the enemy is in its beam.
pub fn scripted_action(state: &CombatState, i: usize, config: &CombatConfig) -> CombatAction {
    let me = state.drones[i];
    let target = state
        .drones
        .iter()
        .filter(|d| d.alive && d.team != me.team)
        .min_by(|a, b| a.pos.dist(me.pos).total_cmp(&b.pos.dist(me.pos)));
    let Some(t) = target else {
        return CombatAction::IDLE;
    };
    let rel = t.pos - me.pos;
    let dist = rel.norm();
    let force = if dist > 0.5 * config.beam_range { rel * (config.max_force / dist.max(1e-9)) } else { me.vel * -1.0 };
    let want = rel.y.atan2(rel.x);
    let mut err = (want - me.heading).rem_euclid(TAU);
    if err > PI {
        err -= TAU;
    }
    let rate = config.max_turn_rate * config.scripted_turn_fraction;
    let frot = (err / config.dt).clamp(-rate, rate);
    CombatAction { fx: force.x, fy: force.y, frot, fire: beam_target(state, i, config).is_some() }
}

/// Global critic input: per drone `[px, py, vx, vy, cos h, sin h, alive]`
/// followed by the elapsed episode fraction.
pub fn combat_global_state(state: &CombatState, config: &CombatConfig) -> Vec<f64> {
    let mut s = Vec::with_capacity(7 * state.drones.len() + 1);
    for d in &state.drones {
        s.extend([
            d.pos.x / config.arena_side,
            d.pos.y / config.arena_side,
            d.vel.x / config.max_speed,
            d.vel.y / config.max_speed,
            d.heading.cos(),
            d.heading.sin(),
            if d.alive { 1.0 } else { 0.0 },
        ]);
    }
    s.push(state.t as f64 / config.horizon as f64);
    s
}

/// The attacker team under learner control against scripted defenders.
/// The team reward is the mean of the attackers' per-step rewards.
#[derive(Clone, Debug)]
pub struct CombatEnv {
    pub config: CombatConfig,
    pub state: CombatState,
    pub events: Vec<CombatEvent>,
    pub returns: Vec<f64>,
}

impl CombatEnv {
    pub fn new(config: CombatConfig) -> Result<Self> {
        let state = combat_reset(&config)?;
        let n = state.drones.len();
        Ok(Self { config, state, events: Vec::new(), returns: vec![0.0; n] })
    }
}

impl MultiAgentEnv for CombatEnv {
    fn reset(&mut self, seed: u64) -> Result<()> {
        self.config.seed = seed;
        self.state = combat_reset(&self.config)?;
        self.events.clear();
        self.returns = vec![0.0; self.state.drones.len()];
        Ok(())
    }

    fn observe(&self) -> ObservationSet {
        team_observations(&self.state, Team::Attacker, &self.config)
    }

    fn global_state(&self) -> Vec<f64> {
        combat_global_state(&self.state, &self.config)
    }

    fn global_state_dim(&self) -> usize {
        7 * self.config.num_drones() + 1
    }

    fn act_dim(&self) -> usize {
        COMBAT_ACT_DIM
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<EnvStep> {
        let attackers = alive_indices(&self.state, Some(Team::Attacker));
        if actions.len() != attackers.len() {
            return Err(Error::Contract(format!(
                "expected {} attacker actions, got {}",
                attackers.len(),
                actions.len()
            )));
        }
        let mut own = actions.iter();
        let joint = alive_indices(&self.state, None)
            .into_iter()
            .map(|i| match self.state.drones[i].team {
                Team::Attacker => CombatAction::from_raw(own.next().unwrap(), &self.config),
                Team::Defender => Ok(scripted_action(&self.state, i, &self.config)),
            })
            .collect::<Result<Vec<_>>>()?;
        let r = combat_step(&self.config, &mut self.state, &joint)?;
        for (acc, x) in self.returns.iter_mut().zip(&r.rewards) {
            *acc += x;
        }
        self.events.extend(r.events.iter().cloned());
        let team: f64 = r.rewards[..self.config.attackers].iter().sum::<f64>() / self.config.attackers as f64;
        Ok(EnvStep { reward: team, done: r.done, coverage: 0.0, won: r.outcome == WinState::Attacker })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> CombatConfig {
        CombatConfig { obs_mode: ObsMode::Full, comm_mode: CommMode::Unrestricted, ..CombatConfig::default() }
    }

    fn drone(x: f64, y: f64, heading: f64, team: Team) -> Drone {
        Drone { pos: Vec2::new(x, y), vel: Vec2::ZERO, heading, team, alive: true }
    }

    fn fire() -> CombatAction {
        CombatAction { fire: true, ..CombatAction::IDLE }
    }

    #[test]
    fn idle_step_costs_only_the_step_penalty() {
        let c = cfg();
        let mut s = combat_reset(&c).unwrap();
        let r = combat_step(&c, &mut s, &[CombatAction::IDLE; 4]).unwrap();
        assert!(r.rewards.iter().all(|x| *x == -50.0 / 200.0));
        assert!(!r.done);
    }

    #[test]
    fn hit_and_miss_bookkeeping() {
        let c = cfg();
        let mut s = CombatState {
            drones: vec![
                drone(10.0, 10.0, 0.0, Team::Attacker),
                drone(10.0, 50.0, 0.0, Team::Attacker),
                drone(20.0, 10.0, PI, Team::Defender),
                drone(90.0, 90.0, 0.0, Team::Defender),
            ],
            t: 0,
        };
        let r = combat_step(&c, &mut s, &[fire(), fire(), CombatAction::IDLE, CombatAction::IDLE]).unwrap();
        let p = -0.25;
        assert_eq!(r.rewards[0], p + EMIT_REWARD + HIT_REWARD);
        assert_eq!(r.rewards[1], p + EMIT_REWARD + MISS_REWARD);
        assert_eq!(r.rewards[2], p + HIT_BY_REWARD);
        assert_eq!(r.rewards[3], p);
        assert!(!s.drones[2].alive);
        assert_eq!(win_state(&s, &c), WinState::None);
    }

    #[test]
    fn eliminating_the_last_opponent_wins() {
        let c = cfg();
        let mut s = CombatState {
            drones: vec![
                drone(10.0, 10.0, 0.0, Team::Attacker),
                drone(50.0, 50.0, 0.0, Team::Attacker),
                drone(20.0, 10.0, PI, Team::Defender),
            ],
            t: 5,
        };
        let c = CombatConfig { defenders: 1, ..c };
        let r = combat_step(&c, &mut s, &[fire(), CombatAction::IDLE, CombatAction::IDLE]).unwrap();
        assert!(r.done);
        assert_eq!(r.outcome, WinState::Attacker);
        assert_eq!(r.rewards[1], -0.25 + WIN_REWARD);
        assert_eq!(r.rewards[0], -0.25 + EMIT_REWARD + HIT_REWARD + WIN_REWARD);
        assert!(combat_step(&c, &mut s, &[CombatAction::IDLE; 2]).is_err());
    }

    #[test]
    fn mutual_elimination_is_a_draw() {
        let c = CombatConfig { attackers: 1, defenders: 1, ..cfg() };
        let mut s = CombatState {
            drones: vec![drone(10.0, 10.0, 0.0, Team::Attacker), drone(20.0, 10.0, PI, Team::Defender)],
            t: 0,
        };
        let r = combat_step(&c, &mut s, &[fire(), fire()]).unwrap();
        assert_eq!(r.outcome, WinState::Draw);
        assert_eq!(r.rewards[0], r.rewards[1]);
    }

    #[test]
    fn horizon_with_both_alive_is_a_draw() {
        let c = CombatConfig { horizon: 3, ..cfg() };
        let mut s = combat_reset(&c).unwrap();
        assert_eq!(win_state(&s, &c), WinState::None);
        for _ in 0..3 {
            let n = alive_indices(&s, None).len();
            combat_step(&c, &mut s, &vec![CombatAction::IDLE; n]).unwrap();
        }
        assert_eq!(win_state(&s, &c), WinState::Draw);
    }

    #[test]
    fn nearest_opponent_in_the_cone_is_hit() {
        let c = cfg();
        let s = CombatState {
            drones: vec![
                drone(10.0, 10.0, 0.0, Team::Attacker),
                drone(25.0, 10.0, 0.0, Team::Defender),
                drone(15.0, 10.2, 0.0, Team::Defender),
                drone(12.0, 10.0, 0.0, Team::Attacker),
            ],
            t: 0,
        };
        assert_eq!(beam_target(&s, 0, &c), Some(2));
        let off_axis = CombatState {
            drones: vec![drone(10.0, 10.0, 0.0, Team::Attacker), drone(15.0, 11.0, 0.0, Team::Defender)],
            t: 0,
        };
        assert_eq!(beam_target(&off_axis, 0, &c), None);
    }

    #[test]
    fn dead_drones_are_excluded_everywhere() {
        let c = cfg();
        let mut s = combat_reset(&c).unwrap();
        s.drones[1].alive = false;
        assert!(combat_step(&c, &mut s.clone(), &[CombatAction::IDLE; 4]).is_err());
        let obs = team_observations(&s, Team::Defender, &c);
        assert!(obs.agents.iter().all(|a| !a.sensed_ids.contains(&EntityRef::Uav(1))));
        assert_eq!(team_observations(&s, Team::Attacker, &c).agents.len(), 1);
        let r = combat_step(&c, &mut s, &[fire(); 3]).unwrap();
        assert_eq!(r.rewards[1], 0.0);
    }

    #[test]
    fn log_replay_matches_online_returns() {
        for seed in 0..20 {
            let c = CombatConfig { seed, ..cfg() };
            let mut env = CombatEnv::new(c.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loop {
                let n = alive_indices(&env.state, Some(Team::Attacker)).len();
                let acts: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                if env.step(&acts).unwrap().done {
                    break;
                }
            }
            let teams: Vec<Team> = env.state.drones.iter().map(|d| d.team).collect();
            let mut buf = Vec::new();
            write_events(&env.events, &mut buf).unwrap();
            let events = read_events(std::str::from_utf8(&buf).unwrap()).unwrap();
            let replay = returns_from_log(&events, &teams, &c).unwrap();
            for (a, b) in replay.iter().zip(&env.returns) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_state_and_actions_give_same_casualties() {
        let c = cfg();
        let mut a = combat_reset(&c).unwrap();
        for d in a.drones.iter_mut() {
            d.pos = Vec2::new(50.0 + d.pos.x / 10.0, 50.0);
        }
        let mut b = a.clone();
        let acts = [fire(); 4];
        let ra = combat_step(&c, &mut a, &acts).unwrap();
        let rb = combat_step(&c, &mut b, &acts).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn headings_stay_in_range() {
        let c = cfg();
        let mut s = combat_reset(&c).unwrap();
        let spin = CombatAction { frot: -10.0, ..CombatAction::IDLE };
        for _ in 0..50 {
            combat_step(&c, &mut s, &[spin; 4]).unwrap();
            assert!(s.drones.iter().all(|d| (0.0..TAU).contains(&d.heading)));
        }
    }

    #[test]
    fn scripted_opponent_turns_toward_and_shoots() {
        let c = cfg();
        let mut s = CombatState {
            drones: vec![drone(30.0, 50.0, 0.0, Team::Attacker), drone(40.0, 50.0, PI / 2.0, Team::Defender)],
            t: 0,
        };
        let c = CombatConfig { attackers: 1, defenders: 1, ..c };
        let mut fired = false;
        for _ in 0..40 {
            let a = scripted_action(&s, 1, &c);
            fired |= a.fire;
            if combat_step(&c, &mut s, &[CombatAction::IDLE, a]).unwrap().done {
                break;
            }
        }
        assert!(fired);
        assert_eq!(win_state(&s, &c), WinState::Defender);
    }
}
