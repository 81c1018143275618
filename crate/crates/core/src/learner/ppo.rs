use rand::seq::SliceRandom;
use rand::Rng;

use super::policy::{critic_forward, PolicyParams};
use super::TrainConfig;
use crate::autodiff::{Adam, Grads, ParamId, Tape, Tensor, Var};
use crate::encoder::EncoderBatch;
use crate::error::{Error, Result};
use crate::graph::ObservationSet;

/// One joint step of one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: ObservationSet,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub global_state: Vec<f64>,
    pub value: f64,
    /// Team reward; every agent of the step is credited with it.
    pub reward: f64,
    pub done: bool,
}

/// Transitions with per-step advantages and returns. Advantages are shared by
/// all agents of a step and whitened over the batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub steps: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub struct LossGraph {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub ratio: Var,
}

/// Gaussian entropy of the state-independent action distribution.
pub fn gaussian_entropy(tape: &mut Tape, log_std: Var, act_dim: usize) -> Var {
    let s = tape.sum(log_std);
    let c = 0.5 * act_dim as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    tape.add_scalar(s, c)
}

/// Clipped surrogate plus value and entropy terms for the given steps.
///
/// The policy term averages over every agent transition, the value term over
/// steps.
pub fn ppo_loss(
    tape: &mut Tape,
    params: &PolicyParams,
    steps: &[&Transition],
    advantages: &[f64],
    returns: &[f64],
    config: &TrainConfig,
) -> Result<LossGraph> {
    if steps.is_empty() {
        return Err(Error::Contract("ppo loss over an empty batch".into()));
    }
    let scenes: Vec<&ObservationSet> = steps.iter().map(|s| &s.obs).collect();
    let batch = EncoderBatch::new(&scenes, &params.config.encoder)?;
    let g = params.actor_view().forward(tape, &batch)?;
    let mut actions = Vec::new();
    let mut old = Vec::new();
    let mut adv = Vec::new();
    for (s, a) in steps.iter().zip(advantages) {
        for (act, lp) in s.actions.iter().zip(&s.log_probs) {
            actions.extend_from_slice(act);
            old.push(*lp);
            adv.push(*a);
        }
    }
    let logp = tape.gaussian_logprob(g.mean, g.log_std, actions)?;
    let old = tape.constant(Tensor::vector(old));
    let diff = tape.sub(logp, old)?;
    let ratio = tape.exp(diff);
    let surr1 = tape.mul_const(ratio, adv.clone())?;
    let clipped = tape.clamp(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
    let surr2 = tape.mul_const(clipped, adv)?;
    let surr = tape.minimum(surr1, surr2)?;
    let mean_surr = tape.mean(surr)?;
    let policy = tape.scale(mean_surr, -1.0);

    let dim = params.config.state_dim;
    let states: Vec<f64> = steps.iter().flat_map(|s| s.global_state.iter().copied()).collect();
    if states.len() != steps.len() * dim {
        return Err(Error::config("policy.state_dim", "global state length does not match the critic"));
    }
    let v = critic_forward(tape, params, &Tensor::matrix(steps.len(), dim, states)?)?;
    let target = tape.constant(Tensor::matrix(steps.len(), 1, returns.to_vec())?);
    let err = tape.sub(v, target)?;
    let sq = tape.square(err);
    let value = tape.mean(sq)?;

    let entropy = gaussian_entropy(tape, g.log_std, params.config.act_dim);
    let vterm = tape.scale(value, config.value_coef);
    let eterm = tape.scale(entropy, -config.entropy_coef);
    let partial = tape.add(policy, vterm)?;
    let total = tape.add(partial, eterm)?;
    Ok(LossGraph { total, policy, value, entropy, ratio })
}

/// Scales the gradients of `ids` so their joint norm is at most `max_norm`.
pub fn clip_group(grads: &mut Grads, ids: &[ParamId], max_norm: f64) -> f64 {
    let norm = ids.iter().map(|id| grads.get(*id).iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for id in ids {
            grads.get_mut(*id).iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

fn diagnostic(params: &PolicyParams, tape: &Tape, g: &LossGraph) -> String {
    let mut out = format!(
        "policy_loss={} value_loss={} entropy={}",
        tape.value(g.policy).item(),
        tape.value(g.value).item(),
        tape.value(g.entropy).item()
    );
    for (name, t) in params.store.iter() {
        if !t.is_finite() {
            out.push_str(&format!("; non-finite parameter {name}"));
        }
    }
    out
}

/// Gradients of the PPO loss on one minibatch.
pub fn ppo_gradients(
    params: &PolicyParams,
    steps: &[&Transition],
    advantages: &[f64],
    returns: &[f64],
    config: &TrainConfig,
) -> Result<(Grads, LossStats)> {
    let mut tape = Tape::new();
    let g = ppo_loss(&mut tape, params, steps, advantages, returns, config)?;
    let total = tape.value(g.total).item();
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("PPO loss is {total}: {}", diagnostic(params, &tape, &g))));
    }
    let ratio = tape.value(g.ratio).data();
    let n = ratio.len() as f64;
    let approx_kl = ratio.iter().map(|r| (r - 1.0) - r.ln()).sum::<f64>() / n;
    let clip_fraction = ratio.iter().filter(|r| (**r - 1.0).abs() > config.clip_epsilon).count() as f64 / n;
    let stats = LossStats {
        policy_loss: tape.value(g.policy).item(),
        value_loss: tape.value(g.value).item(),
        entropy: tape.value(g.entropy).item(),
        approx_kl,
        clip_fraction,
    };
    let grads = tape.backward(g.total, &params.store)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("PPO gradients: {}", diagnostic(params, &tape, &g))));
    }
    Ok((grads, stats))
}

/// Several epochs of shuffled minibatch updates over `batch`. Returns the
/// loss statistics averaged over all minibatches.
pub fn ppo_update(
    batch: &RolloutBatch,
    params: &mut PolicyParams,
    optim: &mut Adam,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LossStats> {
    if batch.steps.is_empty() {
        return Err(Error::Contract("ppo update on an empty batch".into()));
    }
    let actor_ids = params.actor_params();
    let critic_ids = params.critic_params();
    let mut order: Vec<usize> = (0..batch.steps.len()).collect();
    let mut sum = LossStats::default();
    let mut count = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let steps: Vec<&Transition> = chunk.iter().map(|&i| &batch.steps[i]).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| batch.advantages[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| batch.returns[i]).collect();
            let (mut grads, stats) = ppo_gradients(params, &steps, &adv, &ret, config)?;
            clip_group(&mut grads, &actor_ids, config.max_grad_norm);
            clip_group(&mut grads, &critic_ids, config.max_grad_norm);
            optim.step(&mut params.store, &grads, config.learning_rate);
            sum.policy_loss += stats.policy_loss;
            sum.value_loss += stats.value_loss;
            sum.entropy += stats.entropy;
            sum.approx_kl += stats.approx_kl;
            sum.clip_fraction += stats.clip_fraction;
            count += 1.0;
        }
    }
    Ok(LossStats {
        policy_loss: sum.policy_loss / count,
        value_loss: sum.value_loss / count,
        entropy: sum.entropy / count,
        approx_kl: sum.approx_kl / count,
        clip_fraction: sum.clip_fraction / count,
    })
}
