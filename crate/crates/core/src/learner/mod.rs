//! Centralized training with decentralized execution.
//!
//! A single Gaussian actor on top of the encoder acts for every agent from
//! its own observation and received messages. A critic over the flattened
//! global state is used only to compute advantages during PPO updates.

mod env;
mod gae;
mod policy;
mod ppo;
mod train;

pub use env::{connect_global_state, connect_global_state_dim, ConnectEnv, EnvStep, MultiAgentEnv};
pub use gae::{compute_gae, whiten};
pub use policy::{
    act, act_batch, critic_forward, evaluate_value, evaluate_values, ActMode, ActOutput, ActorGraph, ActorView,
    PolicyConfig, PolicyParams,
};
pub use ppo::{
    clip_group, gaussian_entropy, ppo_gradients, ppo_loss, ppo_update, LossGraph, LossStats, RolloutBatch, Transition,
};
pub use train::{
    checkpoint_path, collect_rollout, evaluate_policy, latest_checkpoint, metrics_csv, optimizer_path,
    read_metrics_csv, train, EpisodeSummary, EvalPolicy, EvalSummary, MetricsRow, RunDir, TrainOutput, EVAL_SEED_BASE,
    METRICS_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_env_steps: u64,
    /// Steps collected from each environment per update.
    pub rollout_length: usize,
    /// Environment steps (not agent transitions) per minibatch.
    pub minibatch_size: usize,
    pub epochs: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Multiplies rewards before advantage estimation; keeps critic targets
    /// near unit scale without changing the optimal policy.
    pub reward_scale: f64,
    pub max_grad_norm: f64,
    pub num_parallel_envs: usize,
    pub seed: u64,
    /// Updates between deterministic evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Updates between checkpoints.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_env_steps: 200_000,
            rollout_length: 200,
            minibatch_size: 200,
            epochs: 4,
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            reward_scale: 0.1,
            max_grad_norm: 0.5,
            num_parallel_envs: 4,
            seed: 0,
            eval_interval: 25,
            eval_episodes: 10,
            checkpoint_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rollout_length", self.rollout_length as f64),
            ("minibatch_size", self.minibatch_size as f64),
            ("epochs", self.epochs as f64),
            ("num_parallel_envs", self.num_parallel_envs as f64),
            ("eval_interval", self.eval_interval as f64),
            ("checkpoint_interval", self.checkpoint_interval as f64),
            ("learning_rate", self.learning_rate),
            ("max_grad_norm", self.max_grad_norm),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("value_coef", self.value_coef),
            ("reward_scale", self.reward_scale),
        ];
        for (f, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("train.{f}"), "must be positive"));
            }
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::config("train.clip_epsilon", "must lie in (0, 1)"));
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(Error::config("train.gamma", "gamma and gae_lambda must be at most 1"));
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return Err(Error::config("train.entropy_coef", "must be >= 0"));
        }
        Ok(())
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.rollout_length * self.num_parallel_envs) as u64
    }
}

/// Mixes a base seed with a path of stream indices (splitmix64 finalizer).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(base), |acc, p| mix(acc ^ mix(*p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::encoder::EncoderConfig;
    use crate::graph::ObservationSet;
    use crate::world::{CommMode, ObsMode, WorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(m: usize, n: usize) -> WorldConfig {
        WorldConfig {
            num_uavs: m,
            num_nodes: n,
            horizon: 20,
            obs_mode: ObsMode::Partial,
            comm_mode: CommMode::Restricted,
            ..WorldConfig::default()
        }
    }

    fn policy(env: &ConnectEnv, seed: u64) -> PolicyParams {
        let config = PolicyConfig {
            encoder: EncoderConfig { hidden: 8, agent_embed: 4, value_dim: 4, key_dim: 4, ..EncoderConfig::default() },
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            act_dim: env.act_dim(),
            state_dim: env.global_state_dim(),
            init_log_std: -0.5,
        };
        PolicyParams::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn tiny_train(seed: u64) -> TrainConfig {
        TrainConfig {
            total_env_steps: 160,
            rollout_length: 20,
            minibatch_size: 10,
            epochs: 2,
            num_parallel_envs: 2,
            eval_interval: 2,
            eval_episodes: 2,
            checkpoint_interval: 2,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deterministic_mode_is_repeatable() {
        let env = ConnectEnv::new(world(3, 6)).unwrap();
        let p = policy(&env, 1);
        let obs = env.observe();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = act(&p.actor_view(), &obs, ActMode::Deterministic, &mut rng).unwrap();
        let b = act(&p.actor_view(), &obs, ActMode::Deterministic, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.actions, a.means);
    }

    #[test]
    fn zero_actor_weights_give_zero_mean() {
        let env = ConnectEnv::new(world(3, 6)).unwrap();
        let mut p = policy(&env, 2);
        for id in p.actor.params().collect::<Vec<_>>() {
            p.store.get_mut(id).data_mut().fill(0.0);
        }
        let out =
            act(&p.actor_view(), &env.observe(), ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.means.iter().all(|m| m == &vec![0.0, 0.0]));
    }

    #[test]
    fn sample_mean_matches_head_mean() {
        let env = ConnectEnv::new(world(1, 3)).unwrap();
        let p = policy(&env, 3);
        let obs = env.observe();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut sum = [0.0; 2];
        let mut mean = vec![];
        for _ in 0..n {
            let out = act(&p.actor_view(), &obs, ActMode::Sample, &mut rng).unwrap();
            sum[0] += out.actions[0][0];
            sum[1] += out.actions[0][1];
            mean = out.means[0].clone();
        }
        let sigma = (-0.5f64).exp();
        for k in 0..2 {
            assert!((sum[k] / n as f64 - mean[k]).abs() < 3.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn zero_critic_gives_zero_and_layout_is_checked() {
        let env = ConnectEnv::new(world(3, 6)).unwrap();
        let mut p = policy(&env, 4);
        for id in p.critic_params() {
            p.store.get_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(evaluate_value(&p, &env.global_state()).unwrap(), 0.0);
        assert!(matches!(evaluate_value(&p, &[0.0; 3]), Err(Error::Config { .. })));
    }

    #[test]
    fn evaluation_never_touches_the_critic() {
        let env = ConnectEnv::new(world(3, 6)).unwrap();
        let p = policy(&env, 5);
        let clean = evaluate_policy(&env, EvalPolicy::Actor(p.actor_view(), ActMode::Deterministic), 2, 7, 0).unwrap();
        let mut poisoned = p.clone();
        for id in poisoned.critic_params() {
            poisoned.store.get_mut(id).data_mut().fill(f64::NAN);
        }
        let dirty =
            evaluate_policy(&env, EvalPolicy::Actor(poisoned.actor_view(), ActMode::Deterministic), 2, 7, 0).unwrap();
        assert_eq!(clean, dirty);
    }

    fn single_step(p: &PolicyParams, env: &ConnectEnv) -> Transition {
        let obs = env.observe();
        let out = act(&p.actor_view(), &obs, ActMode::Sample, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        Transition {
            obs,
            actions: out.actions,
            log_probs: out.log_probs,
            global_state: env.global_state(),
            value: 0.0,
            reward: 0.0,
            done: false,
        }
    }

    #[test]
    fn fresh_ratio_is_one_and_surrogate_is_mean_advantage() {
        let env = ConnectEnv::new(world(3, 6)).unwrap();
        let p = policy(&env, 6);
        let t = single_step(&p, &env);
        let mut tape = Tape::new();
        let cfg = TrainConfig::default();
        let g = ppo_loss(&mut tape, &p, &[&t], &[0.7], &[0.0], &cfg).unwrap();
        assert!(tape.value(g.ratio).data().iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert!((tape.value(g.policy).item() + 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_gives_no_policy_gradient() {
        let env = ConnectEnv::new(world(3, 6)).unwrap();
        let p = policy(&env, 7);
        let t = single_step(&p, &env);
        let cfg = TrainConfig { entropy_coef: 0.0, ..TrainConfig::default() };
        let (g, _) = ppo_gradients(&p, &[&t], &[0.0], &[1.0], &cfg).unwrap();
        for id in p.actor_params() {
            assert!(g.get(id).iter().all(|v| *v == 0.0), "{}", p.store.name(id));
        }
        assert!(p.critic_params().iter().any(|id| g.get(*id).iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn single_transition_loss_matches_hand_objective() {
        let env = ConnectEnv::new(world(1, 2)).unwrap();
        let p = policy(&env, 8);
        let mut t = single_step(&p, &env);
        let new_lp = t.log_probs[0];
        t.log_probs[0] = new_lp - 0.5;
        let cfg = TrainConfig::default();
        for adv in [1.3, -0.4] {
            let mut tape = Tape::new();
            let g = ppo_loss(&mut tape, &p, &[&t], &[adv], &[2.0], &cfg).unwrap();
            let ratio = 0.5f64.exp();
            let expect = -(ratio * adv).min(ratio.clamp(0.8, 1.2) * adv);
            assert!((tape.value(g.policy).item() - expect).abs() < 1e-12);
            let v = evaluate_value(&p, &t.global_state).unwrap();
            assert!((tape.value(g.value).item() - (v - 2.0) * (v - 2.0)).abs() < 1e-12);
            let ls = p.actor_view().log_std_values().iter().sum::<f64>();
            let ent = ls + (1.0 + (2.0 * std::f64::consts::PI).ln());
            assert!((tape.value(g.entropy).item() - ent).abs() < 1e-12);
            let total = expect + 0.5 * (v - 2.0) * (v - 2.0) - 0.01 * ent;
            assert!((tape.value(g.total).item() - total).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_agents_leaves_the_update_unchanged() {
        let env = ConnectEnv::new(world(3, 6)).unwrap();
        let p = policy(&env, 9);
        let t = single_step(&p, &env);
        let perm = [2usize, 0, 1];
        let mut inv = [0; 3];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut u = t.clone();
        u.obs = ObservationSet {
            agents: perm
                .iter()
                .map(|&old| {
                    let mut a = t.obs.agents[old].clone();
                    a.comm_neighbors = a.comm_neighbors.iter().map(|j| inv[*j]).collect();
                    a.comm_neighbors.sort_unstable();
                    a
                })
                .collect(),
        };
        u.actions = perm.iter().map(|&o| t.actions[o].clone()).collect();
        u.log_probs = perm.iter().map(|&o| t.log_probs[o]).collect();
        let cfg = TrainConfig::default();
        let (ga, _) = ppo_gradients(&p, &[&t], &[0.9], &[1.0], &cfg).unwrap();
        let (gb, _) = ppo_gradients(&p, &[&u], &[0.9], &[1.0], &cfg).unwrap();
        for id in p.store.ids() {
            for (a, b) in ga.get(id).iter().zip(gb.get(id)) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{}", p.store.name(id));
            }
        }
    }

    #[test]
    fn zero_step_budget_writes_initial_checkpoint_only() {
        let env = ConnectEnv::new(world(2, 3)).unwrap();
        let mut p = policy(&env, 10);
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir { path: dir.path().to_path_buf(), comment: None };
        let cfg = TrainConfig { total_env_steps: 0, ..tiny_train(0) };
        let out = train(&env, &mut p, &cfg, Some(&run)).unwrap();
        assert_eq!(out.checkpoints, vec![checkpoint_path(dir.path(), 0)]);
        assert_eq!(out.metrics.len(), 1);
    }

    #[test]
    fn same_seed_gives_identical_metrics_and_resume_matches() {
        let env = ConnectEnv::new(world(2, 3)).unwrap();
        let run_in = |dir: &std::path::Path, cfg: &TrainConfig| {
            let mut p = policy(&env, 11);
            let run = RunDir { path: dir.to_path_buf(), comment: Some("test".into()) };
            train(&env, &mut p, cfg, Some(&run)).unwrap();
            (std::fs::read_to_string(dir.join("metrics.csv")).unwrap(), p.store)
        };
        let cfg = tiny_train(3);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (ma, sa) = run_in(a.path(), &cfg);
        let (mb, sb) = run_in(b.path(), &cfg);
        assert_eq!(ma, mb);
        assert_eq!(sa, sb);

        let c = tempfile::tempdir().unwrap();
        let half = TrainConfig { total_env_steps: 80, ..cfg.clone() };
        run_in(c.path(), &half);
        let (mc, sc) = run_in(c.path(), &cfg);
        assert_eq!(mc, ma);
        assert_eq!(sc, sa);
    }

    #[test]
    fn ppo_moves_the_policy_toward_positive_advantage() {
        let env = ConnectEnv::new(world(2, 3)).unwrap();
        let mut p = policy(&env, 12);
        let t = single_step(&p, &env);
        let batch = RolloutBatch { steps: vec![t.clone()], advantages: vec![1.0], returns: vec![0.0] };
        let before: f64 = act(&p.actor_view(), &t.obs, ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .means
            .iter()
            .zip(&t.actions)
            .map(|(m, a)| crate::autodiff::gaussian_logprob(m, p.actor_view().log_std_values(), a).unwrap())
            .sum();
        let mut opt = crate::autodiff::Adam::new(&p.store);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        ppo_update(&batch, &mut p, &mut opt, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let view = p.actor_view();
        let after: f64 = act(&view, &t.obs, ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .means
            .iter()
            .zip(&t.actions)
            .map(|(m, a)| crate::autodiff::gaussian_logprob(m, view.log_std_values(), a).unwrap())
            .sum();
        assert!(after > before);
    }

    #[test]
    fn train_config_validation_names_fields() {
        let bad = TrainConfig { clip_epsilon: 1.5, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "train.clip_epsilon"));
    }
}
