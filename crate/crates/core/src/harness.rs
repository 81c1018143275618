//! Experiment manifests and the train / eval / baseline / sweep / ablate
//! drivers behind the command line.
//!
//! Every run writes under `output_dir/seed_{k}/`. Every CSV starts with a
//! `# manifest_sha256=...` comment naming the manifest that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParamStore;
use crate::baseline::{
    grid_points, snap_to_grid, snapshot_instance, solve_exact_with_budget, solve_greedy, Optimality,
};
use crate::combat::{write_events, CombatConfig, CombatEnv, COMBAT_ACT_DIM, COMBAT_SELF_DIM};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{CONNECT_SELF_DIM, ENTITY_DIM};
use crate::learner::{
    act, checkpoint_path, latest_checkpoint, train, ActMode, ConnectEnv, MultiAgentEnv, PolicyConfig, PolicyParams,
    RunDir, TrainConfig, TrainOutput, EVAL_SEED_BASE,
};
use crate::metrics::{
    aggregate_seeds, combat_csv, connect_episode_log, episode_csv, episode_stats, mean_std, results_csv, zero_shot_csv,
    zero_shot_sweep, AggregateStats, CombatRow, EpisodeStats, MeanStd, ResultRow, ZeroShotRow,
};
use crate::world::{self, write_trajectory, CommMode, ObsMode, WorldConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Connect,
    Combat,
}

/// Network widths. Input and output sizes follow from the scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub agent_embed: usize,
    pub value_dim: usize,
    pub key_dim: usize,
    pub rounds: usize,
    pub per_round_comm: bool,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let pol = PolicyConfig::default();
        Self {
            hidden: enc.hidden,
            agent_embed: enc.agent_embed,
            value_dim: enc.value_dim,
            key_dim: enc.key_dim,
            rounds: enc.rounds,
            per_round_comm: enc.per_round_comm,
            actor_hidden: pol.actor_hidden,
            critic_hidden: pol.critic_hidden,
            init_log_std: pol.init_log_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentManifest {
    pub scenario: Scenario,
    pub world: WorldConfig,
    pub combat: CombatConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    /// Skip message passing: `h_K = h_0`.
    pub no_comm: bool,
    /// Unweighted mean of entity values instead of entity attention.
    pub mean_pool: bool,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Candidate placements per side for the coverage bound.
    pub grid_res: usize,
    pub baseline_snapshots: usize,
    pub exact_budget: u64,
    /// `[M', N']` pairs for the team-size sweep; empty means `M-2..=M+2`
    /// at the training node count.
    pub zero_shot_sizes: Vec<[usize; 2]>,
    /// Keep per-episode trajectory or event logs from evaluation.
    pub record_trajectories: bool,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            scenario: Scenario::Connect,
            world: WorldConfig::default(),
            combat: CombatConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            no_comm: false,
            mean_pool: false,
            eval_episodes: 50,
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs"),
            grid_res: 10,
            baseline_snapshots: 50,
            exact_budget: crate::baseline::DEFAULT_BUDGET,
            zero_shot_sizes: Vec::new(),
            record_trajectories: false,
        }
    }
}

impl ExperimentManifest {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// JSON for `.json` files, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match self.scenario {
            Scenario::Connect => self.world.validate()?,
            Scenario::Combat => self.combat.validate()?,
        }
        self.train.validate()?;
        self.policy_config()?.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.grid_res == 0 {
            return Err(Error::config("grid_res", "must be >= 1"));
        }
        if self.zero_shot_sizes.iter().any(|[m, n]| *m == 0 || *n == 0) {
            return Err(Error::config("zero_shot_sizes", "team and node counts must be >= 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding. The output directory is
    /// left out so that moving a run does not change its identity.
    pub fn hash(&self) -> String {
        let content = Self { output_dir: PathBuf::new(), ..self.clone() };
        let json = serde_json::to_string(&content).expect("manifest always serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn comment(&self) -> String {
        format!("manifest_sha256={}", self.hash())
    }

    pub fn policy_config(&self) -> Result<PolicyConfig> {
        let (self_dim, act_dim, state_dim) = match self.scenario {
            Scenario::Connect => (CONNECT_SELF_DIM, 2, connect_env(&self.world)?.global_state_dim()),
            Scenario::Combat => {
                (COMBAT_SELF_DIM, COMBAT_ACT_DIM, CombatEnv::new(self.combat.clone())?.global_state_dim())
            }
        };
        let m = &self.model;
        Ok(PolicyConfig {
            encoder: EncoderConfig {
                self_dim,
                entity_dim: ENTITY_DIM,
                hidden: m.hidden,
                agent_embed: m.agent_embed,
                value_dim: m.value_dim,
                key_dim: m.key_dim,
                rounds: m.rounds,
                per_round_comm: m.per_round_comm,
                no_comm: self.no_comm,
                mean_pool: self.mean_pool,
            },
            actor_hidden: m.actor_hidden.clone(),
            critic_hidden: m.critic_hidden.clone(),
            act_dim,
            state_dim,
            init_log_std: m.init_log_std,
        })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed_{seed}"))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    /// Team sizes of the sweep, defaulting to `M-2..=M+2` (at least 1).
    pub fn sweep_sizes(&self) -> Vec<(usize, usize)> {
        if self.zero_shot_sizes.is_empty() {
            let m = self.world.num_uavs;
            (m.saturating_sub(2).max(1)..=m + 2).map(|k| (k, self.world.num_nodes)).collect()
        } else {
            self.zero_shot_sizes.iter().map(|[m, n]| (*m, *n)).collect()
        }
    }
}

fn connect_env(world: &WorldConfig) -> Result<ConnectEnv> {
    ConnectEnv::new(world.clone())
}

/// Overrides applied on top of a manifest by the command line.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Run seeds one after another on the calling thread.
    pub deterministic: bool,
}

impl RunOptions {
    pub fn apply(&self, manifest: &ExperimentManifest) -> ExperimentManifest {
        let mut m = manifest.clone();
        if let Some(s) = self.seed {
            m.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            m.output_dir = o.clone();
        }
        m
    }
}

/// Runs `f` for every seed, in parallel threads unless `sequential`, and
/// returns the results in seed order.
fn per_seed<T: Send>(seeds: &[u64], sequential: bool, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    if sequential || seeds.len() == 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&s| {
                let f = &f;
                scope.spawn(move || f(s))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Contract("worker thread panicked".into()))))
            .collect()
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Freshly initialized parameters for one seed.
pub fn init_params(manifest: &ExperimentManifest, seed: u64) -> Result<PolicyParams> {
    PolicyParams::new(manifest.policy_config()?, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Parameters from the newest checkpoint of a seed's run directory.
pub fn load_params(manifest: &ExperimentManifest, seed: u64) -> Result<PolicyParams> {
    let dir = manifest.seed_dir(seed);
    let step = latest_checkpoint(&dir)?
        .ok_or_else(|| Error::Checkpoint(format!("no checkpoint in {}; run `train` first", dir.display())))?;
    load_params_from(manifest, seed, &checkpoint_path(&dir, step))
}

pub fn load_params_from(manifest: &ExperimentManifest, seed: u64, path: &Path) -> Result<PolicyParams> {
    let mut params = init_params(manifest, seed)?;
    let saved = ParamStore::load(path)?;
    let want = params.config.act_dim;
    if let Some(id) = saved.id("actor.log_std") {
        let got = saved.get(id).len();
        if got != want {
            return Err(Error::Checkpoint(format!(
                "{} was trained with act_dim {got}, the {:?} scenario needs {want}",
                path.display(),
                manifest.scenario
            )));
        }
    }
    params.store.load_from(&saved)?;
    Ok(params)
}

pub fn run_train(manifest: &ExperimentManifest, opts: &RunOptions) -> Result<Vec<TrainOutput>> {
    let m = opts.apply(manifest);
    m.validate()?;
    let comment = m.comment();
    per_seed(&m.seeds, opts.deterministic, |seed| {
        let run = RunDir { path: m.seed_dir(seed), comment: Some(comment.clone()) };
        fs::create_dir_all(&run.path).map_err(|e| Error::io(run.path.display().to_string(), e))?;
        let mut params = init_params(&m, seed)?;
        let cfg = m.train_config(seed);
        info!("training seed {seed} into {}", run.path.display());
        match m.scenario {
            Scenario::Connect => train(&connect_env(&m.world)?, &mut params, &cfg, Some(&run)),
            Scenario::Combat => train(&CombatEnv::new(m.combat.clone())?, &mut params, &cfg, Some(&run)),
        }
    })
}

/// Evaluation results of every seed, in seed order.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub episodes: Vec<Vec<EpisodeStats>>,
    /// `None` when no episodes were run.
    pub aggregate: Option<AggregateStats>,
}

fn combat_episode(params: &PolicyParams, config: &CombatConfig, seed: u64) -> Result<(EpisodeStats, CombatEnv)> {
    let mut env = CombatEnv::new(config.clone())?;
    env.reset(seed)?;
    let view = params.actor_view();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ret = 0.0;
    let mut steps = 0;
    loop {
        let out = act(&view, &env.observe(), ActMode::Deterministic, &mut rng)?;
        let r = env.step(&out.actions)?;
        ret += r.reward;
        steps += 1;
        if r.done {
            let stats = EpisodeStats {
                mean_coverage_ratio: 0.0,
                overlap_rate: 0.0,
                mean_reward: ret,
                episode_length: steps,
                comm_component_count_mean: 0.0,
                won: Some(r.won),
            };
            return Ok((stats, env));
        }
    }
}

/// Deterministic evaluation of one seed's parameters over the manifest's
/// evaluation episodes. Logs go to `log_dir` when given.
pub fn evaluate_params(
    manifest: &ExperimentManifest,
    params: &PolicyParams,
    log_dir: Option<&Path>,
) -> Result<Vec<EpisodeStats>> {
    (0..manifest.eval_episodes)
        .map(|e| {
            let seed = EVAL_SEED_BASE + e as u64;
            match manifest.scenario {
                Scenario::Connect => {
                    let log = connect_episode_log(
                        &params.actor_view(),
                        &manifest.world,
                        seed,
                        ActMode::Deterministic,
                        log_dir.is_some(),
                    )?;
                    if let Some(dir) = log_dir {
                        let mut buf = Vec::new();
                        write_trajectory(&log, &mut buf)?;
                        write_file(&dir.join(format!("episode_{e:03}.jsonl")), &String::from_utf8_lossy(&buf))?;
                    }
                    episode_stats(&log, manifest.world.coverage_radius)
                }
                Scenario::Combat => {
                    let (stats, env) = combat_episode(params, &manifest.combat, seed)?;
                    if let Some(dir) = log_dir {
                        let mut buf = Vec::new();
                        write_events(&env.events, &mut buf)?;
                        write_file(&dir.join(format!("episode_{e:03}.jsonl")), &String::from_utf8_lossy(&buf))?;
                    }
                    Ok(stats)
                }
            }
        })
        .collect()
}

fn method_name(m: &ExperimentManifest) -> String {
    match (m.no_comm, m.mean_pool) {
        (false, false) => "full".into(),
        (true, false) => "no_comm".into(),
        (false, true) => "mean_pool".into(),
        (true, true) => "no_comm+mean_pool".into(),
    }
}

fn obs_tag(o: ObsMode) -> &'static str {
    match o {
        ObsMode::Full => "FO",
        ObsMode::Partial => "PO",
    }
}

fn comm_tag(c: CommMode) -> &'static str {
    match c {
        CommMode::Unrestricted => "UC",
        CommMode::Restricted => "RC",
    }
}

fn summary_csv(m: &ExperimentManifest, agg: Option<&AggregateStats>) -> String {
    let comment = m.comment();
    match m.scenario {
        Scenario::Connect => {
            let rows: Vec<ResultRow> = agg
                .map(|a| ResultRow {
                    method: method_name(m),
                    num_uavs: m.world.num_uavs,
                    num_nodes: m.world.num_nodes,
                    comm: comm_tag(m.world.comm_mode).into(),
                    obs: obs_tag(m.world.obs_mode).into(),
                    coverage: a.coverage,
                })
                .into_iter()
                .collect();
            results_csv(&rows, Some(&comment))
        }
        Scenario::Combat => {
            let rows: Vec<CombatRow> = agg
                .map(|a| CombatRow {
                    method: method_name(m),
                    win_rate: a.win_rate,
                    avg_episode_steps: a.episode_length,
                })
                .into_iter()
                .collect();
            combat_csv(&rows, Some(&comment))
        }
    }
}

/// Evaluates the newest checkpoint of every seed. Writes `eval.csv`
/// (one row per episode) and `eval_summary.csv` into the output directory.
pub fn run_eval(manifest: &ExperimentManifest, opts: &RunOptions) -> Result<EvalReport> {
    let m = opts.apply(manifest);
    m.validate()?;
    let episodes = per_seed(&m.seeds, opts.deterministic, |seed| {
        let params = load_params(&m, seed)?;
        let logs = m.record_trajectories.then(|| m.seed_dir(seed).join("eval_logs"));
        evaluate_params(&m, &params, logs.as_deref())
    })?;
    let rows: Vec<(u64, u64, EpisodeStats)> = m
        .seeds
        .iter()
        .zip(&episodes)
        .flat_map(|(s, eps)| eps.iter().enumerate().map(move |(k, e)| (*s, EVAL_SEED_BASE + k as u64, e.clone())))
        .collect();
    let aggregate = if m.eval_episodes == 0 { None } else { Some(aggregate_seeds(&episodes)?) };
    write_file(&m.output_dir.join("eval.csv"), &episode_csv(&rows, Some(&m.comment())))?;
    write_file(&m.output_dir.join("eval_summary.csv"), &summary_csv(&m, aggregate.as_ref()))?;
    Ok(EvalReport { seeds: m.seeds.clone(), episodes, aggregate })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotBound {
    pub snapshot: usize,
    pub seed: u64,
    pub bound: f64,
    pub optimality: Optimality,
    /// Coverage of the policy's UAV positions snapped to the grid, when a
    /// trained policy was available.
    pub policy_snapped: Option<f64>,
}

/// Grid-restricted coverage bound of one snapshot, exact when the budget
/// allows and greedy otherwise.
pub fn snapshot_bound(
    state: &world::WorldState,
    config: &WorldConfig,
    grid_res: usize,
    budget: u64,
) -> Result<(f64, Optimality)> {
    let inst = snapshot_instance(state, config, grid_res);
    let m = state.uavs.len();
    let sol = match solve_exact_with_budget(&inst, m, budget) {
        Ok(s) => s,
        Err(Error::BudgetExceeded { .. }) => solve_greedy(&inst, m)?,
        Err(e) => return Err(e),
    };
    Ok((sol.objective / state.nodes.len() as f64, sol.optimality))
}

/// Covered-node ratio after moving each UAV of `state` to its nearest grid point.
pub fn snapped_coverage(state: &world::WorldState, config: &WorldConfig, grid_res: usize) -> f64 {
    let inst = snapshot_instance(state, config, grid_res);
    let grid = grid_points(config.arena_side, grid_res);
    let idx: Vec<usize> = state.uav_positions().into_iter().map(|p| snap_to_grid(p, &grid)).collect();
    let (_, mask) = inst.evaluate(&idx);
    mask.iter().filter(|c| **c).count() as f64 / mask.len() as f64
}

/// Coverage bounds on static snapshots. With a trained checkpoint for the
/// first seed, snapshot `s` is the final state of a deterministic policy
/// episode and the policy's snapped coverage is reported next to the
/// bound; otherwise snapshots are seeded resets.
pub fn run_baseline(manifest: &ExperimentManifest, opts: &RunOptions) -> Result<Vec<SnapshotBound>> {
    let m = opts.apply(manifest);
    m.validate()?;
    if m.scenario != Scenario::Connect {
        return Err(Error::config("scenario", "the coverage baseline needs the connect scenario"));
    }
    let seed = m.seeds[0];
    let params = match latest_checkpoint(&m.seed_dir(seed))? {
        Some(_) => Some(load_params(&m, seed)?),
        None => None,
    };
    let mut out = Vec::with_capacity(m.baseline_snapshots);
    for s in 0..m.baseline_snapshots {
        let ep_seed = EVAL_SEED_BASE + s as u64;
        let (state, policy_snapped) = match &params {
            Some(p) => {
                let log = connect_episode_log(&p.actor_view(), &m.world, ep_seed, ActMode::Deterministic, false)?;
                let last = log.last().expect("episodes have at least one step");
                let mut cfg = m.world.clone();
                cfg.seed = ep_seed;
                let mut state = world::reset(&cfg)?;
                for (u, p) in state.uavs.iter_mut().zip(&last.uav_positions) {
                    u.pos = world::Vec2::new(p[0], p[1]);
                }
                for (n, p) in state.nodes.iter_mut().zip(&last.node_positions) {
                    n.pos = world::Vec2::new(p[0], p[1]);
                }
                let cov = snapped_coverage(&state, &m.world, m.grid_res);
                (state, Some(cov))
            }
            None => {
                let mut cfg = m.world.clone();
                cfg.seed = ep_seed;
                (world::reset(&cfg)?, None)
            }
        };
        let (bound, optimality) = snapshot_bound(&state, &m.world, m.grid_res, m.exact_budget)?;
        out.push(SnapshotBound { snapshot: s, seed: ep_seed, bound, optimality, policy_snapped });
    }
    let mut csv = format!("# {}\nsnapshot,episode_seed,bound,optimality,policy_snapped_coverage\n", m.comment());
    for b in &out {
        let opt = match b.optimality {
            Optimality::Exact => "exact",
            Optimality::Greedy => "greedy",
        };
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            b.snapshot,
            b.seed,
            b.bound,
            opt,
            b.policy_snapped.map_or(String::new(), |c| c.to_string())
        ));
    }
    write_file(&m.output_dir.join("baseline.csv"), &csv)?;
    Ok(out)
}

/// Zero-shot team-size sweep of every seed's checkpoint. Returns the rows
/// averaged over seeds and writes `zero_shot.csv`.
pub fn run_sweep(manifest: &ExperimentManifest, opts: &RunOptions) -> Result<Vec<ZeroShotRow>> {
    let m = opts.apply(manifest);
    m.validate()?;
    if m.scenario != Scenario::Connect {
        return Err(Error::config("scenario", "the team-size sweep needs the connect scenario"));
    }
    let sizes = m.sweep_sizes();
    let per = per_seed(&m.seeds, opts.deterministic, |seed| {
        let params = load_params(&m, seed)?;
        zero_shot_sweep(&params.actor_view(), &m.world, &sizes, m.eval_episodes)
    })?;
    let rows: Vec<ZeroShotRow> = sizes
        .iter()
        .enumerate()
        .map(|(k, &(mm, n))| {
            let cov: Vec<f64> = per.iter().map(|r| r[k].coverage).collect();
            ZeroShotRow { num_uavs: mm, num_nodes: n, coverage: mean_std(&cov).mean }
        })
        .collect();
    let text = zero_shot_csv(&rows, comm_tag(m.world.comm_mode), obs_tag(m.world.obs_mode), Some(&m.comment()));
    write_file(&m.output_dir.join("zero_shot.csv"), &text)?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub method: String,
    pub coverage: MeanStd,
    pub win_rate: MeanStd,
    pub episode_steps: MeanStd,
}

/// Trains and evaluates the full model and its ablations under
/// `output_dir/{method}/`, then writes `ablation.csv`. The combat scenario
/// has no entity-pooling variant in the table, so only comm is ablated.
pub fn run_ablate(manifest: &ExperimentManifest, opts: &RunOptions) -> Result<Vec<AblationResult>> {
    let base = opts.apply(manifest);
    base.validate()?;
    let mut variants = vec![(false, false), (true, false)];
    if base.scenario == Scenario::Connect {
        variants.push((false, true));
    }
    let sub = RunOptions { seed: None, out: None, deterministic: opts.deterministic };
    let mut results = Vec::new();
    let mut connect_rows = Vec::new();
    let mut combat_rows = Vec::new();
    for (no_comm, mean_pool) in variants {
        let mut m = base.clone();
        m.no_comm = no_comm;
        m.mean_pool = mean_pool;
        let method = method_name(&m);
        m.output_dir = base.output_dir.join(&method);
        run_train(&m, &sub)?;
        let report = run_eval(&m, &sub)?;
        let agg = report.aggregate.unwrap_or_default();
        connect_rows.push(ResultRow {
            method: method.clone(),
            num_uavs: m.world.num_uavs,
            num_nodes: m.world.num_nodes,
            comm: comm_tag(m.world.comm_mode).into(),
            obs: obs_tag(m.world.obs_mode).into(),
            coverage: agg.coverage,
        });
        combat_rows.push(CombatRow {
            method: method.clone(),
            win_rate: agg.win_rate,
            avg_episode_steps: agg.episode_length,
        });
        results.push(AblationResult {
            method,
            coverage: agg.coverage,
            win_rate: agg.win_rate,
            episode_steps: agg.episode_length,
        });
    }
    let text = match base.scenario {
        Scenario::Connect => results_csv(&connect_rows, Some(&base.comment())),
        Scenario::Combat => combat_csv(&combat_rows, Some(&base.comment())),
    };
    write_file(&base.output_dir.join("ablation.csv"), &text)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_encode_the_same_manifest() {
        let m = ExperimentManifest { seeds: vec![4, 5], no_comm: true, ..ExperimentManifest::default() };
        let t = ExperimentManifest::from_toml_str(&m.to_toml_string()).unwrap();
        let j = ExperimentManifest::from_json_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(t, m);
        assert_eq!(j, m);
        assert_eq!(t.hash(), m.hash());
    }

    #[test]
    fn partial_manifest_takes_defaults() {
        let m = ExperimentManifest::from_toml_str("scenario = \"combat\"\n[train]\ntotal_env_steps = 1000\n").unwrap();
        assert_eq!(m.scenario, Scenario::Combat);
        assert_eq!(m.train.total_env_steps, 1000);
        assert_eq!(m.eval_episodes, 50);
        assert_eq!(m.seeds, vec![0, 1, 2]);
    }

    #[test]
    fn malformed_manifest_names_the_field() {
        let err = ExperimentManifest::from_toml_str("[world]\nnum_uavs = 0\n").unwrap_err().to_string();
        assert!(err.contains("num_uavs"), "{err}");
        let err = ExperimentManifest::from_toml_str("[train]\nclip_epsilon = 2.0\n").unwrap_err().to_string();
        assert!(err.contains("clip_epsilon"), "{err}");
        let err = ExperimentManifest::from_toml_str("bogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentManifest::default();
        let b = ExperimentManifest { mean_pool: true, ..a.clone() };
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sweep_sizes_default_around_training_size() {
        let mut m = ExperimentManifest::default();
        m.world.num_uavs = 4;
        m.world.num_nodes = 8;
        assert_eq!(m.sweep_sizes(), vec![(2, 8), (3, 8), (4, 8), (5, 8), (6, 8)]);
        m.world.num_uavs = 1;
        assert_eq!(m.sweep_sizes(), vec![(1, 8), (2, 8), (3, 8)]);
    }
}
