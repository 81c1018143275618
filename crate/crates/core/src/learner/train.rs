use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::env::MultiAgentEnv;
use super::gae::{compute_gae, whiten};
use super::policy::{act_batch, evaluate_values, ActMode, ActorView, PolicyParams};
use super::ppo::{ppo_update, LossStats, RolloutBatch, Transition};
use super::{derive_seed, TrainConfig};
use crate::autodiff::{Adam, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::graph::ObservationSet;

/// Seed offset for evaluation episodes, disjoint from training episodes.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

const STREAM_ENV: u64 = 1;
const STREAM_UPDATE: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// How actions are chosen during evaluation.
#[derive(Clone, Copy, Debug)]
pub enum EvalPolicy<'a> {
    Actor(ActorView<'a>, ActMode),
    /// Independent uniform actions in `[-1, 1]` per component.
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub episode_return: f64,
    pub mean_coverage: f64,
    pub steps: usize,
    pub won: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeSummary>,
}

impl EvalSummary {
    fn mean_of(&self, f: impl Fn(&EpisodeSummary) -> f64) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(f).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn mean_coverage(&self) -> f64 {
        self.mean_of(|e| e.mean_coverage)
    }

    pub fn mean_return(&self) -> f64 {
        self.mean_of(|e| e.episode_return)
    }

    pub fn win_rate(&self) -> f64 {
        self.mean_of(|e| if e.won { 1.0 } else { 0.0 })
    }

    pub fn mean_steps(&self) -> f64 {
        self.mean_of(|e| e.steps as f64)
    }
}

/// Runs `episodes` episodes in lockstep, seeded `seed_base + e`. Only the
/// actor view is consulted; the critic is never evaluated.
pub fn evaluate_policy<E: MultiAgentEnv + Clone>(
    proto: &E,
    policy: EvalPolicy,
    episodes: usize,
    seed_base: u64,
    rng_seed: u64,
) -> Result<EvalSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, &[STREAM_EVAL]));
    let mut envs = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut env = proto.clone();
        env.reset(seed_base + e as u64)?;
        envs.push(env);
    }
    let mut sums: Vec<EpisodeSummary> = (0..episodes)
        .map(|e| EpisodeSummary {
            seed: seed_base + e as u64,
            episode_return: 0.0,
            mean_coverage: 0.0,
            steps: 0,
            won: false,
        })
        .collect();
    let mut active: Vec<usize> = (0..episodes).collect();
    while !active.is_empty() {
        let obs: Vec<ObservationSet> = active.iter().map(|&e| envs[e].observe()).collect();
        let actions: Vec<Vec<Vec<f64>>> = match policy {
            EvalPolicy::Actor(view, mode) => {
                let refs: Vec<&ObservationSet> = obs.iter().collect();
                act_batch(&view, &refs, mode, &mut rng)?.into_iter().map(|o| o.actions).collect()
            }
            EvalPolicy::UniformRandom => active
                .iter()
                .zip(&obs)
                .map(|(&e, o)| {
                    let d = envs[e].act_dim();
                    (0..o.agents.len()).map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
                })
                .collect(),
        };
        let mut still = Vec::with_capacity(active.len());
        for (&e, a) in active.iter().zip(&actions) {
            let r = envs[e].step(a)?;
            let s = &mut sums[e];
            s.episode_return += r.reward;
            s.mean_coverage += r.coverage;
            s.steps += 1;
            if r.done {
                s.won = r.won;
                s.mean_coverage /= s.steps as f64;
            } else {
                still.push(e);
            }
        }
        active = still;
    }
    Ok(EvalSummary { episodes: sums })
}

/// One row of the training metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_eval_coverage: f64,
    pub mean_eval_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "step,mean_eval_coverage,mean_eval_reward,policy_loss,value_loss,entropy,seed";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.mean_eval_coverage,
            self.mean_eval_reward,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.seed
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::Checkpoint(format!("malformed metrics row: {line}")));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::Checkpoint(format!("bad number {:?} in metrics row", f[i])))
        };
        let int = |i: usize| -> Result<u64> {
            f[i].parse().map_err(|_| Error::Checkpoint(format!("bad integer {:?} in metrics row", f[i])))
        };
        Ok(Self {
            step: int(0)?,
            mean_eval_coverage: num(1)?,
            mean_eval_reward: num(2)?,
            policy_loss: num(3)?,
            value_loss: num(4)?,
            entropy: num(5)?,
            seed: int(6)?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty() && *l != METRICS_HEADER)
        .map(MetricsRow::from_csv)
        .collect()
}

/// Where a run keeps its checkpoints and metrics log.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    /// Written as a `#` comment line at the top of the metrics CSV.
    pub comment: Option<String>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step:010}.bin"))
}

pub fn optimizer_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("optim_{step:010}.bin"))
}

/// Step of the newest checkpoint that has a matching optimizer file.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<u64>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))? {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(step) = name.strip_prefix("ckpt_").and_then(|s| s.strip_suffix(".bin")) {
            if let Ok(step) = step.parse::<u64>() {
                if optimizer_path(dir, step).exists() && best.is_none_or(|b| step > b) {
                    best = Some(step);
                }
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub metrics: Vec<MetricsRow>,
    pub checkpoints: Vec<PathBuf>,
    /// Environment steps consumed by the end of the run.
    pub env_steps: u64,
    /// True when training resumed from an existing checkpoint.
    pub resumed: bool,
}

struct Progress {
    update: u64,
    env_steps: u64,
}

fn save_state(dir: &Path, params: &PolicyParams, optim: &Adam, p: &Progress) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut o = optim.to_store(&params.store)?;
    o.add("progress.update", Tensor::scalar(p.update as f64))?;
    o.add("progress.env_steps", Tensor::scalar(p.env_steps as f64))?;
    o.save(&optimizer_path(dir, p.env_steps))?;
    let path = checkpoint_path(dir, p.env_steps);
    params.store.save(&path)?;
    Ok(path)
}

fn write_metrics(run: &RunDir, rows: &[MetricsRow]) -> Result<()> {
    let path = run.path.join("metrics.csv");
    fs::write(&path, metrics_csv(rows, run.comment.as_deref())).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Collects `rollout_length` steps from each of `num_parallel_envs`
/// environments. Every update starts from fresh seeded resets, so the batch
/// depends only on the parameters, the seed and the update index.
pub fn collect_rollout<E: MultiAgentEnv + Clone>(
    proto: &E,
    params: &PolicyParams,
    config: &TrainConfig,
    update: u64,
) -> Result<RolloutBatch> {
    let n_env = config.num_parallel_envs;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_UPDATE, update, 0]));
    let mut envs = Vec::with_capacity(n_env);
    let mut episode = vec![0u64; n_env];
    for e in 0..n_env {
        let mut env = proto.clone();
        env.reset(derive_seed(config.seed, &[STREAM_ENV, update, e as u64, 0]))?;
        envs.push(env);
    }
    let mut segs: Vec<Vec<Transition>> = vec![Vec::with_capacity(config.rollout_length); n_env];
    let view = params.actor_view();
    for _ in 0..config.rollout_length {
        let obs: Vec<ObservationSet> = envs.iter().map(|e| e.observe()).collect();
        let states: Vec<Vec<f64>> = envs.iter().map(|e| e.global_state()).collect();
        let values = evaluate_values(params, &states)?;
        let refs: Vec<&ObservationSet> = obs.iter().collect();
        let acts = act_batch(&view, &refs, ActMode::Sample, &mut rng)?;
        for (e, ((o, s), (v, a))) in obs.into_iter().zip(states).zip(values.into_iter().zip(acts)).enumerate() {
            let r = envs[e].step(&a.actions)?;
            segs[e].push(Transition {
                obs: o,
                actions: a.actions,
                log_probs: a.log_probs,
                global_state: s,
                value: v,
                reward: r.reward,
                done: r.done,
            });
            if r.done {
                episode[e] += 1;
                envs[e].reset(derive_seed(config.seed, &[STREAM_ENV, update, e as u64, episode[e]]))?;
            }
        }
    }
    let tails: Vec<Vec<f64>> = envs.iter().map(|e| e.global_state()).collect();
    let boot = evaluate_values(params, &tails)?;
    let mut batch = RolloutBatch::default();
    for (seg, b) in segs.into_iter().zip(boot) {
        let rewards: Vec<f64> = seg.iter().map(|t| t.reward * config.reward_scale).collect();
        let dones: Vec<bool> = seg.iter().map(|t| t.done).collect();
        let mut values: Vec<f64> = seg.iter().map(|t| t.value).collect();
        values.push(b);
        let (adv, ret) = compute_gae(&rewards, &values, &dones, config.gamma, config.gae_lambda)?;
        batch.advantages.extend(adv);
        batch.returns.extend(ret);
        batch.steps.extend(seg);
    }
    whiten(&mut batch.advantages);
    Ok(batch)
}

fn eval_row<E: MultiAgentEnv + Clone>(
    proto: &E,
    params: &PolicyParams,
    config: &TrainConfig,
    env_steps: u64,
    stats: LossStats,
) -> Result<MetricsRow> {
    let ev = evaluate_policy(
        proto,
        EvalPolicy::Actor(params.actor_view(), ActMode::Deterministic),
        config.eval_episodes,
        EVAL_SEED_BASE,
        config.seed,
    )?;
    Ok(MetricsRow {
        step: env_steps,
        mean_eval_coverage: ev.mean_coverage(),
        mean_eval_reward: ev.mean_return(),
        policy_loss: stats.policy_loss,
        value_loss: stats.value_loss,
        entropy: stats.entropy,
        seed: config.seed,
    })
}

/// Alternates rollouts and PPO updates until `total_env_steps` is reached.
///
/// With a run directory, checkpoints and `metrics.csv` are written there and
/// an interrupted run resumes from the newest checkpoint. A resumed run
/// produces the same parameters and metrics as an uninterrupted one.
pub fn train<E: MultiAgentEnv + Clone>(
    proto: &E,
    params: &mut PolicyParams,
    config: &TrainConfig,
    run: Option<&RunDir>,
) -> Result<TrainOutput> {
    config.validate()?;
    if proto.act_dim() != params.config.act_dim {
        return Err(Error::config(
            "policy.act_dim",
            format!("environment needs {} action components, policy has {}", proto.act_dim(), params.config.act_dim),
        ));
    }
    if proto.global_state_dim() != params.config.state_dim {
        return Err(Error::config(
            "policy.state_dim",
            format!(
                "environment state has {} features, critic expects {}",
                proto.global_state_dim(),
                params.config.state_dim
            ),
        ));
    }
    let per_update = config.steps_per_update();
    let num_updates = config.total_env_steps.div_ceil(per_update);
    let mut optim = Adam::new(&params.store);
    let mut progress = Progress { update: 0, env_steps: 0 };
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut resumed = false;

    if let Some(run) = run {
        if let Some(step) = latest_checkpoint(&run.path)? {
            let saved = ParamStore::load(&checkpoint_path(&run.path, step))?;
            params.store.load_from(&saved)?;
            let o = ParamStore::load(&optimizer_path(&run.path, step))?;
            optim.load_store(&params.store, &o)?;
            let read = |name: &str| {
                o.id(name)
                    .map(|id| o.get(id).item() as u64)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer file lacks {name}")))
            };
            progress = Progress { update: read("progress.update")?, env_steps: read("progress.env_steps")? };
            let mpath = run.path.join("metrics.csv");
            if mpath.exists() {
                let text = fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
                metrics = read_metrics_csv(&text)?.into_iter().filter(|r| r.step <= step).collect();
            }
            checkpoints.push(checkpoint_path(&run.path, step));
            resumed = true;
            info!("resuming seed {} from step {}", config.seed, step);
        }
    }

    if !resumed {
        metrics.push(eval_row(proto, params, config, 0, LossStats::default())?);
        if let Some(run) = run {
            checkpoints.push(save_state(&run.path, params, &optim, &progress)?);
            write_metrics(run, &metrics)?;
        }
    }

    while progress.update < num_updates {
        let u = progress.update;
        let batch = collect_rollout(proto, params, config, u)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_UPDATE, u, 1]));
        let stats = ppo_update(&batch, params, &mut optim, config, &mut rng)?;
        progress.update += 1;
        progress.env_steps += per_update;
        debug!(
            "seed {} update {} steps {} pl {:.4} vl {:.4} ent {:.3} kl {:.4}",
            config.seed,
            progress.update,
            progress.env_steps,
            stats.policy_loss,
            stats.value_loss,
            stats.entropy,
            stats.approx_kl
        );
        let last = progress.update == num_updates;
        if last || progress.update % config.eval_interval == 0 {
            let row = eval_row(proto, params, config, progress.env_steps, stats)?;
            info!(
                "seed {} step {} eval coverage {:.3} return {:.2}",
                config.seed, row.step, row.mean_eval_coverage, row.mean_eval_reward
            );
            metrics.push(row);
        }
        if let Some(run) = run {
            if last || progress.update % config.checkpoint_interval == 0 {
                checkpoints.push(save_state(&run.path, params, &optim, &progress)?);
                write_metrics(run, &metrics)?;
            }
        }
    }
    if let Some(run) = run {
        write_metrics(run, &metrics)?;
    }
    Ok(TrainOutput { metrics, checkpoints, env_steps: progress.env_steps, resumed })
}
