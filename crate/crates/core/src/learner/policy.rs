use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{gaussian_logprob, mlp_forward, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::{encode, EncodeOutput, EncoderBatch, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::ObservationSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub encoder: EncoderConfig,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub act_dim: usize,
    pub state_dim: usize,
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            actor_hidden: vec![64],
            critic_hidden: vec![64, 64],
            act_dim: 2,
            state_dim: 0,
            init_log_std: -0.5,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.act_dim == 0 {
            return Err(Error::config("policy.act_dim", "must be >= 1"));
        }
        if self.state_dim == 0 {
            return Err(Error::config("policy.state_dim", "must be >= 1"));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::config("policy.hidden", "layer widths must be >= 1"));
        }
        if !self.init_log_std.is_finite() {
            return Err(Error::config("policy.init_log_std", "must be finite"));
        }
        Ok(())
    }
}

/// Shared actor, state-independent log standard deviation and centralized
/// critic. One parameter set serves every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub actor: Mlp,
    pub log_std: ParamId,
    pub critic: Mlp,
}

impl PolicyParams {
    pub fn new(config: PolicyConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, config.encoder.clone(), rng)?;
        let mut sizes = vec![config.encoder.self_dim + config.encoder.message_dim()];
        sizes.extend(&config.actor_hidden);
        sizes.push(config.act_dim);
        let actor = Mlp::new(&mut store, "actor", &sizes, false, 0.01, rng)?;
        let log_std = store.add("actor.log_std", Tensor::vector(vec![config.init_log_std; config.act_dim]))?;
        let mut sizes = vec![config.state_dim];
        sizes.extend(&config.critic_hidden);
        sizes.push(1);
        let critic = Mlp::new(&mut store, "critic", &sizes, false, 1.0, rng)?;
        Ok(Self { config, store, encoder, actor, log_std, critic })
    }

    /// Everything needed for execution; the critic is not reachable from it.
    pub fn actor_view(&self) -> ActorView<'_> {
        ActorView {
            store: &self.store,
            encoder: &self.encoder,
            actor: &self.actor,
            log_std: self.log_std,
            act_dim: self.config.act_dim,
        }
    }

    pub fn critic_params(&self) -> Vec<ParamId> {
        self.critic.params().collect()
    }

    pub fn actor_params(&self) -> Vec<ParamId> {
        let critic = self.critic_params();
        self.store.ids().filter(|id| !critic.contains(id)).collect()
    }
}

/// Actor-only slice of the policy used for decentralized execution.
#[derive(Clone, Copy, Debug)]
pub struct ActorView<'a> {
    pub store: &'a ParamStore,
    pub encoder: &'a EncoderParams,
    pub actor: &'a Mlp,
    pub log_std: ParamId,
    pub act_dim: usize,
}

pub struct ActorGraph {
    pub mean: Var,
    pub log_std: Var,
    pub encoded: EncodeOutput,
}

impl ActorView<'_> {
    /// Action means for every agent of the batch, on `tape`.
    pub fn forward(&self, tape: &mut Tape, batch: &EncoderBatch) -> Result<ActorGraph> {
        let encoded = encode(tape, self.encoder, self.store, batch)?;
        let s = tape.constant(batch.self_states.clone());
        let x = tape.concat_cols(&[s, encoded.hk])?;
        let mean = self.actor.forward(tape, self.store, x)?;
        let log_std = tape.param(self.store, self.log_std);
        Ok(ActorGraph { mean, log_std, encoded })
    }

    pub fn log_std_values(&self) -> &[f64] {
        self.store.get(self.log_std).data()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    /// Unclamped actions, one row per agent; environments clamp them.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Entity attention weights per agent.
    pub entity_attention: Vec<Vec<f64>>,
}

/// Acts for every scene at once. Scenes share the parameters but not
/// information: attention never crosses scene boundaries.
pub fn act_batch(
    view: &ActorView,
    scenes: &[&ObservationSet],
    mode: ActMode,
    rng: &mut impl Rng,
) -> Result<Vec<ActOutput>> {
    let batch = EncoderBatch::new(scenes, &view.encoder.config)?;
    let mut tape = Tape::new();
    let g = view.forward(&mut tape, &batch)?;
    let means = tape.value(g.mean);
    let log_std = view.log_std_values();
    let (groups, alpha) = tape.attention_weights(g.encoded.entity_attention).expect("entity attention node");
    let mut outs = Vec::with_capacity(scenes.len());
    for s in 0..batch.num_scenes() {
        let mut out =
            ActOutput { actions: Vec::new(), log_probs: Vec::new(), means: Vec::new(), entity_attention: Vec::new() };
        for i in batch.scene_offsets[s]..batch.scene_offsets[s + 1] {
            let mean = means.row(i).to_vec();
            let action: Vec<f64> = match mode {
                ActMode::Deterministic => mean.clone(),
                ActMode::Sample => mean
                    .iter()
                    .zip(log_std)
                    .map(|(m, ls)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + ls.exp() * z
                    })
                    .collect(),
            };
            out.log_probs.push(gaussian_logprob(&mean, log_std, &action)?);
            out.actions.push(action);
            out.means.push(mean);
            out.entity_attention.push(alpha[groups.range(i)].to_vec());
        }
        outs.push(out);
    }
    Ok(outs)
}

pub fn act(view: &ActorView, obs: &ObservationSet, mode: ActMode, rng: &mut impl Rng) -> Result<ActOutput> {
    Ok(act_batch(view, &[obs], mode, rng)?.remove(0))
}

/// Critic estimate for one flattened global state.
pub fn evaluate_value(params: &PolicyParams, state: &[f64]) -> Result<f64> {
    evaluate_values(params, &[state.to_vec()]).map(|v| v[0])
}

pub fn evaluate_values(params: &PolicyParams, states: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = params.config.state_dim;
    if let Some(bad) = states.iter().find(|s| s.len() != dim) {
        return Err(Error::config(
            "policy.state_dim",
            format!("critic expects {dim} state features, got {}", bad.len()),
        ));
    }
    let x = Tensor::matrix(states.len(), dim, states.concat())?;
    Ok(mlp_forward(&params.critic, &params.store, &x)?.into_data())
}

/// Critic node on `tape` for a stack of global states.
pub fn critic_forward(tape: &mut Tape, params: &PolicyParams, states: &Tensor) -> Result<Var> {
    let x = tape.constant(states.clone());
    params.critic.forward(tape, &params.store, x)
}
