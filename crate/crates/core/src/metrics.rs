//! Episode statistics computed from trajectory logs, seed aggregation and
//! the team-size sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{connected_components, ObservationSet};
use crate::learner::{act, ActMode, ActorView, ConnectEnv, EVAL_SEED_BASE};
use crate::world::{StepRecord, Vec2, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub mean_coverage_ratio: f64,
    pub overlap_rate: f64,
    /// Sum of per-step team rewards.
    pub mean_reward: f64,
    pub episode_length: usize,
    pub comm_component_count_mean: f64,
    pub won: Option<bool>,
}

/// Mean over steps of the covered fraction of nodes.
pub fn coverage_ratio(log: &[StepRecord]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Domain("coverage ratio of an empty trajectory".into()));
    }
    let mut total = 0.0;
    for r in log {
        if r.coverage_mask.is_empty() {
            return Err(Error::Domain(format!("step {} has no nodes", r.t)));
        }
        total += r.coverage_mask.iter().filter(|c| **c).count() as f64 / r.coverage_mask.len() as f64;
    }
    Ok(total / log.len() as f64)
}

fn pt(a: [f64; 2]) -> Vec2 {
    Vec2::new(a[0], a[1])
}

/// Fraction of covered nodes within `r_cov` of two or more UAVs, averaged
/// over the steps that cover at least one node. Zero if no step does.
pub fn overlap_rate(log: &[StepRecord], coverage_radius: f64) -> f64 {
    let mut total = 0.0;
    let mut steps = 0usize;
    for r in log {
        let mut covered = 0usize;
        let mut doubled = 0usize;
        for u in &r.node_positions {
            let k = r.uav_positions.iter().filter(|p| pt(**p).dist(pt(*u)) <= coverage_radius).count();
            if k >= 1 {
                covered += 1;
            }
            if k >= 2 {
                doubled += 1;
            }
        }
        if covered > 0 {
            total += doubled as f64 / covered as f64;
            steps += 1;
        }
    }
    if steps == 0 {
        0.0
    } else {
        total / steps as f64
    }
}

/// Mean number of connected components of the logged communication graphs.
pub fn comm_component_count_mean(log: &[StepRecord]) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let total: usize = log
        .iter()
        .map(|r| {
            let mut adj = vec![Vec::new(); r.uav_positions.len()];
            for [a, b] in &r.comm_edges {
                adj[*a].push(*b);
                adj[*b].push(*a);
            }
            connected_components(&adj).len()
        })
        .sum();
    total as f64 / log.len() as f64
}

pub fn episode_stats(log: &[StepRecord], coverage_radius: f64) -> Result<EpisodeStats> {
    Ok(EpisodeStats {
        mean_coverage_ratio: coverage_ratio(log)?,
        overlap_rate: overlap_rate(log, coverage_radius),
        mean_reward: log.iter().map(|r| r.reward).sum(),
        episode_length: log.len(),
        comm_component_count_mean: comm_component_count_mean(log),
        won: None,
    })
}

/// Runs one DroneConnect episode with the actor and logs every step. The
/// entity attention weights are stored when `record_attention` is set.
pub fn connect_episode_log(
    view: &ActorView,
    config: &WorldConfig,
    seed: u64,
    mode: ActMode,
    record_attention: bool,
) -> Result<Vec<StepRecord>> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    let mut env = ConnectEnv::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(config.horizon);
    loop {
        let obs: &ObservationSet = &env.last().observations;
        let out = act(view, obs, mode, &mut rng)?;
        let forces = env.forces(&out.actions)?;
        let result = env.step_forces(&forces)?.clone();
        let mut rec = StepRecord::capture(&env.state, &forces, &result);
        if record_attention {
            rec.entity_attention = Some(out.entity_attention);
        }
        log.push(rec);
        if result.done {
            return Ok(log);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> MeanStd {
    if xs.is_empty() {
        return MeanStd::default();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub coverage: MeanStd,
    pub overlap: MeanStd,
    pub reward: MeanStd,
    pub episode_length: MeanStd,
    pub components: MeanStd,
    pub win_rate: MeanStd,
}

/// Per-seed means first, then mean and population standard deviation across
/// seeds.
pub fn aggregate_seeds(groups: &[Vec<EpisodeStats>]) -> Result<AggregateStats> {
    if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Domain("aggregation needs at least one episode per seed".into()));
    }
    let per_seed = |f: &dyn Fn(&EpisodeStats) -> f64| -> Vec<f64> {
        groups.iter().map(|g| g.iter().map(f).sum::<f64>() / g.len() as f64).collect()
    };
    Ok(AggregateStats {
        coverage: mean_std(&per_seed(&|e| e.mean_coverage_ratio)),
        overlap: mean_std(&per_seed(&|e| e.overlap_rate)),
        reward: mean_std(&per_seed(&|e| e.mean_reward)),
        episode_length: mean_std(&per_seed(&|e| e.episode_length as f64)),
        components: mean_std(&per_seed(&|e| e.comm_component_count_mean)),
        win_rate: mean_std(&per_seed(&|e| if e.won == Some(true) { 1.0 } else { 0.0 })),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub num_uavs: usize,
    pub num_nodes: usize,
    pub coverage: f64,
}

/// Evaluates the shared actor at other team sizes without retraining.
/// `sizes` lists `(M', N')` pairs; every size uses the same evaluation seeds.
pub fn zero_shot_sweep(
    view: &ActorView,
    base: &WorldConfig,
    sizes: &[(usize, usize)],
    episodes: usize,
) -> Result<Vec<ZeroShotRow>> {
    sizes
        .iter()
        .map(|&(m, n)| {
            let cfg = WorldConfig { num_uavs: m, num_nodes: n, ..base.clone() };
            let cov: Vec<f64> = (0..episodes)
                .map(|e| {
                    let log =
                        connect_episode_log(view, &cfg, EVAL_SEED_BASE + e as u64, ActMode::Deterministic, false)?;
                    coverage_ratio(&log)
                })
                .collect::<Result<_>>()?;
            Ok(ZeroShotRow { num_uavs: m, num_nodes: n, coverage: mean_std(&cov).mean })
        })
        .collect()
}

fn with_comment(comment: Option<&str>, header: &str) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str(header);
    out.push('\n');
    out
}

/// Rows are `(training seed, episode seed, stats)`.
pub fn episode_csv(rows: &[(u64, u64, EpisodeStats)], comment: Option<&str>) -> String {
    let mut out = with_comment(
        comment,
        "seed,episode_seed,coverage_ratio,overlap_rate,episode_reward,episode_length,comm_components,won",
    );
    for (seed, episode_seed, e) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            seed,
            episode_seed,
            e.mean_coverage_ratio,
            e.overlap_rate,
            e.mean_reward,
            e.episode_length,
            e.comm_component_count_mean,
            e.won.map_or(String::new(), |w| w.to_string())
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub num_uavs: usize,
    pub num_nodes: usize,
    pub comm: String,
    pub obs: String,
    pub coverage: MeanStd,
}

pub fn results_csv(rows: &[ResultRow], comment: Option<&str>) -> String {
    let mut out = with_comment(comment, "method,M,N,comm,obs,coverage_mean,coverage_std");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method, r.num_uavs, r.num_nodes, r.comm, r.obs, r.coverage.mean, r.coverage.std
        ));
    }
    out
}

pub fn zero_shot_csv(rows: &[ZeroShotRow], comm: &str, obs: &str, comment: Option<&str>) -> String {
    let mut out = with_comment(comment, "num_drones,num_nodes,comm,obs,coverage_ratio");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.num_uavs, r.num_nodes, comm, obs, r.coverage));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombatRow {
    pub method: String,
    pub win_rate: MeanStd,
    pub avg_episode_steps: MeanStd,
}

pub fn combat_csv(rows: &[CombatRow], comment: Option<&str>) -> String {
    let mut out =
        with_comment(comment, "method,win_rate_mean,win_rate_std,avg_episode_steps_mean,avg_episode_steps_std");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.win_rate.mean, r.win_rate.std, r.avg_episode_steps.mean, r.avg_episode_steps.std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(uavs: &[[f64; 2]], nodes: &[[f64; 2]], r_cov: f64) -> StepRecord {
        let min_dists: Vec<f64> =
            nodes.iter().map(|u| uavs.iter().map(|p| pt(*p).dist(pt(*u))).fold(f64::INFINITY, f64::min)).collect();
        StepRecord {
            t: 0,
            uav_positions: uavs.to_vec(),
            uav_velocities: vec![[0.0; 2]; uavs.len()],
            node_positions: nodes.to_vec(),
            actions: vec![[0.0; 2]; uavs.len()],
            reward: 0.0,
            coverage_mask: min_dists.iter().map(|d| *d <= r_cov).collect(),
            min_dists,
            comm_edges: vec![],
            entity_attention: None,
        }
    }

    #[test]
    fn coverage_ratio_examples() {
        let all = rec(&[[0.0, 0.0]], &[[1.0, 0.0], [0.0, 1.0]], 5.0);
        assert_eq!(coverage_ratio(&[all.clone(), all]).unwrap(), 1.0);
        let none = rec(&[[0.0, 0.0]], &[[50.0, 0.0]], 5.0);
        assert_eq!(coverage_ratio(&[none]).unwrap(), 0.0);
        let half = rec(&[[0.0, 0.0]], &[[1.0, 0.0], [50.0, 0.0]], 5.0);
        let full = rec(&[[0.0, 0.0]], &[[1.0, 0.0], [2.0, 0.0]], 5.0);
        assert_eq!(coverage_ratio(&[half, full]).unwrap(), 0.75);
        assert!(coverage_ratio(&[]).is_err());
    }

    #[test]
    fn overlap_examples() {
        let single = rec(&[[0.0, 0.0]], &[[1.0, 0.0]], 5.0);
        assert_eq!(overlap_rate(&[single], 5.0), 0.0);
        let stacked = rec(&[[0.0, 0.0], [0.0, 0.0]], &[[1.0, 0.0]], 5.0);
        assert_eq!(overlap_rate(&[stacked], 5.0), 1.0);
        let scene =
            rec(&[[0.0, 0.0], [8.0, 0.0], [50.0, 50.0]], &[[4.0, 0.0], [-3.0, 0.0], [50.0, 52.0], [90.0, 90.0]], 5.0);
        assert!((overlap_rate(&[scene], 5.0) - 1.0 / 3.0).abs() < 1e-15);
        let empty = rec(&[[0.0, 0.0]], &[[90.0, 90.0]], 5.0);
        assert_eq!(overlap_rate(&[empty], 5.0), 0.0);
    }

    #[test]
    fn components_follow_comm_edges() {
        let mut r = rec(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[[0.0, 0.0]], 5.0);
        assert_eq!(comm_component_count_mean(&[r.clone()]), 3.0);
        r.comm_edges = vec![[0, 1]];
        assert_eq!(comm_component_count_mean(&[r]), 2.0);
    }

    fn stats(c: f64) -> EpisodeStats {
        EpisodeStats {
            mean_coverage_ratio: c,
            overlap_rate: 0.0,
            mean_reward: 0.0,
            episode_length: 10,
            comm_component_count_mean: 1.0,
            won: None,
        }
    }

    #[test]
    fn aggregation_examples() {
        let one = aggregate_seeds(&[vec![stats(0.5), stats(0.7)]]).unwrap();
        assert_eq!(one.coverage, MeanStd { mean: 0.6, std: 0.0 });
        let same = aggregate_seeds(&[vec![stats(0.4)], vec![stats(0.4)]]).unwrap();
        assert_eq!(same.coverage.std, 0.0);
        let three =
            aggregate_seeds(&[vec![stats(0.2), stats(0.4)], vec![stats(0.5)], vec![stats(0.6), stats(0.8)]]).unwrap();
        let means = [0.3, 0.5, 0.7];
        let mean = 0.5;
        let std = (means.iter().map(|m: &f64| (m - mean) * (m - mean)).sum::<f64>() / 3.0).sqrt();
        assert!((three.coverage.mean - mean).abs() < 1e-12);
        assert!((three.coverage.std - std).abs() < 1e-12);
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn coverage_ignores_node_order() {
        let a = rec(&[[0.0, 0.0], [30.0, 30.0]], &[[1.0, 0.0], [60.0, 0.0], [31.0, 30.0]], 5.0);
        let b = rec(&[[0.0, 0.0], [30.0, 30.0]], &[[31.0, 30.0], [1.0, 0.0], [60.0, 0.0]], 5.0);
        assert_eq!(coverage_ratio(&[a]).unwrap(), coverage_ratio(&[b]).unwrap());
    }
}
