//! Dual-attention encoder.
//!
//! Each agent embeds its own state with `f_a` and every sensed entity with
//! `f_e`, then attends over the entities with its own embedding as the query.
//! The result `h0 = [f_a(S_i); E_agg]` is refined by `K` rounds of neighbor
//! self-attention over the communication graph (self-loop included), each
//! followed by the update `h <- h + f_upd([h; m])`.
//!
//! All agents of all scenes in a batch are stacked into one matrix, so a
//! single tape covers a whole minibatch.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AttentionMode, Groups, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{ObservationSet, CONNECT_SELF_DIM, ENTITY_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub self_dim: usize,
    pub entity_dim: usize,
    /// Hidden width of `f_a`, `f_e` and `f_upd`.
    pub hidden: usize,
    /// Output width of `f_a`.
    pub agent_embed: usize,
    /// Width of the entity values; `agent_embed + value_dim` is the message size.
    pub value_dim: usize,
    pub key_dim: usize,
    pub rounds: usize,
    /// Separate communication projections for every round.
    pub per_round_comm: bool,
    /// Ablation: skip message passing, `h_K = h_0`.
    pub no_comm: bool,
    /// Ablation: unweighted mean of entity values instead of attention.
    pub mean_pool: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            self_dim: CONNECT_SELF_DIM,
            entity_dim: ENTITY_DIM,
            hidden: 64,
            agent_embed: 32,
            value_dim: 32,
            key_dim: 32,
            rounds: 2,
            per_round_comm: false,
            no_comm: false,
            mean_pool: false,
        }
    }
}

impl EncoderConfig {
    /// Dimension of `h` and of the transmitted message.
    pub fn message_dim(&self) -> usize {
        self.agent_embed + self.value_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("self_dim", self.self_dim),
            ("entity_dim", self.entity_dim),
            ("hidden", self.hidden),
            ("agent_embed", self.agent_embed),
            ("value_dim", self.value_dim),
            ("key_dim", self.key_dim),
            ("rounds", self.rounds),
        ] {
            if v == 0 {
                return Err(Error::config(format!("encoder.{f}"), "must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommProjections {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub f_a: Mlp,
    pub f_e: Mlp,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// One set shared by every round, or one per round.
    pub comm: Vec<CommProjections>,
    pub f_upd: Mlp,
}

fn projection(store: &mut ParamStore, name: &str, i: usize, o: usize, rng: &mut impl Rng) -> Result<ParamId> {
    let normal = Normal::new(0.0, 1.0 / (i as f64).sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let w = (0..i * o).map(|_| normal.sample(rng)).collect();
    store.add(name, Tensor::matrix(i, o, w)?)
}

impl EncoderParams {
    pub fn new(store: &mut ParamStore, config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.message_dim();
        let f_a = Mlp::new(store, "enc.f_a", &[c.self_dim, c.hidden, c.agent_embed], true, 1.0, rng)?;
        let f_e = Mlp::new(store, "enc.f_e", &[c.entity_dim, c.hidden, c.hidden], true, 1.0, rng)?;
        let w_q = projection(store, "enc.w_q", c.agent_embed, c.key_dim, rng)?;
        let w_k = projection(store, "enc.w_k", c.hidden, c.key_dim, rng)?;
        let w_v = projection(store, "enc.w_v", c.hidden, c.value_dim, rng)?;
        let sets = if c.per_round_comm { c.rounds } else { 1 };
        let comm = (0..sets)
            .map(|r| {
                Ok(CommProjections {
                    w_q: projection(store, &format!("enc.comm{r}.w_q"), d, c.key_dim, rng)?,
                    w_k: projection(store, &format!("enc.comm{r}.w_k"), d, c.key_dim, rng)?,
                    w_v: projection(store, &format!("enc.comm{r}.w_v"), d, d, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        let f_upd = Mlp::new(store, "enc.f_upd", &[2 * d, c.hidden, d], false, 0.1, rng)?;
        Ok(Self { config, f_a, f_e, w_q, w_k, w_v, comm, f_upd })
    }

    pub fn comm_for_round(&self, k: usize) -> &CommProjections {
        if self.comm.len() == 1 {
            &self.comm[0]
        } else {
            &self.comm[k - 1]
        }
    }
}

/// A stack of scenes laid out for one batched encoder pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBatch {
    pub self_states: Tensor,
    pub entities: Tensor,
    /// Per agent: its rows in `entities`.
    pub entity_groups: Groups,
    /// Per agent: global agent rows it attends over, self included, ascending.
    pub comm_groups: Groups,
    /// Agent row range of each scene.
    pub scene_offsets: Vec<usize>,
}

impl EncoderBatch {
    pub fn new(scenes: &[&ObservationSet], config: &EncoderConfig) -> Result<Self> {
        let mut self_rows = Vec::new();
        let mut ent_rows = Vec::new();
        let mut entity_groups = Groups::new();
        let mut comm_groups = Groups::new();
        let mut scene_offsets = vec![0];
        let mut base = 0;
        for obs in scenes {
            for (i, a) in obs.agents.iter().enumerate() {
                if a.self_state.len() != config.self_dim {
                    return Err(Error::Dimension {
                        op: "encoder self state",
                        lhs: vec![config.self_dim],
                        rhs: vec![a.self_state.len()],
                    });
                }
                self_rows.extend_from_slice(&a.self_state);
                let start = ent_rows.len() / config.entity_dim;
                for f in &a.sensed {
                    let v = f.to_vec();
                    if v.len() != config.entity_dim {
                        return Err(Error::Dimension {
                            op: "encoder entity",
                            lhs: vec![config.entity_dim],
                            rhs: vec![v.len()],
                        });
                    }
                    ent_rows.extend_from_slice(&v);
                }
                entity_groups.push(start..start + a.sensed.len());
                let mut members: Vec<usize> = a.comm_neighbors.iter().map(|j| base + j).collect();
                if a.comm_neighbors.iter().any(|&j| j >= obs.agents.len() || j == i) {
                    return Err(Error::Contract(format!("agent {i} has an invalid comm neighbor list")));
                }
                members.push(base + i);
                members.sort_unstable();
                comm_groups.push(members);
            }
            base += obs.agents.len();
            scene_offsets.push(base);
        }
        let n_ent = ent_rows.len() / config.entity_dim;
        Ok(Self {
            self_states: Tensor::matrix(base, config.self_dim, self_rows)?,
            entities: Tensor::matrix(n_ent, config.entity_dim, ent_rows)?,
            entity_groups,
            comm_groups,
            scene_offsets,
        })
    }

    pub fn num_agents(&self) -> usize {
        *self.scene_offsets.last().unwrap()
    }

    pub fn num_scenes(&self) -> usize {
        self.scene_offsets.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub h0: Var,
    pub hk: Var,
    /// Entity attention node; its weights are the `alpha`s.
    pub entity_attention: Var,
    /// One attention node per message round; weights are the `beta`s.
    pub comm_attention: Vec<Var>,
}

/// `h0` for every agent in the batch, plus the entity attention node.
pub fn embed_environment(
    tape: &mut Tape,
    params: &EncoderParams,
    store: &ParamStore,
    batch: &EncoderBatch,
) -> Result<(Var, Var)> {
    let s = tape.constant(batch.self_states.clone());
    let ha = params.f_a.forward(tape, store, s)?;
    let x = tape.constant(batch.entities.clone());
    let e = params.f_e.forward(tape, store, x)?;
    let wq = tape.param(store, params.w_q);
    let wk = tape.param(store, params.w_k);
    let wv = tape.param(store, params.w_v);
    let q = tape.matmul(ha, wq)?;
    let k = tape.matmul(e, wk)?;
    let v = tape.matmul(e, wv)?;
    let mode = if params.config.mean_pool { AttentionMode::Mean } else { AttentionMode::ScaledDot };
    let agg = tape.attention(q, k, v, batch.entity_groups.clone(), mode)?;
    let h0 = tape.concat_cols(&[ha, agg])?;
    Ok((h0, agg))
}

/// Round `k` (1-based) of neighbor self-attention followed by the update.
pub fn message_round(
    tape: &mut Tape,
    params: &EncoderParams,
    store: &ParamStore,
    h: Var,
    comm_groups: &Groups,
    k: usize,
) -> Result<(Var, Var)> {
    if k == 0 || k > params.config.rounds {
        return Err(Error::Contract(format!("message round {k} outside 1..={}", params.config.rounds)));
    }
    let proj = params.comm_for_round(k);
    let wq = tape.param(store, proj.w_q);
    let wk = tape.param(store, proj.w_k);
    let wv = tape.param(store, proj.w_v);
    let q = tape.matmul(h, wq)?;
    let kk = tape.matmul(h, wk)?;
    let v = tape.matmul(h, wv)?;
    let m = tape.attention(q, kk, v, comm_groups.clone(), AttentionMode::ScaledDot)?;
    let hm = tape.concat_cols(&[h, m])?;
    let delta = params.f_upd.forward(tape, store, hm)?;
    let next = tape.add(h, delta)?;
    Ok((next, m))
}

pub fn encode(
    tape: &mut Tape,
    params: &EncoderParams,
    store: &ParamStore,
    batch: &EncoderBatch,
) -> Result<EncodeOutput> {
    let (h0, entity_attention) = embed_environment(tape, params, store, batch)?;
    let mut h = h0;
    let mut comm_attention = Vec::new();
    if !params.config.no_comm {
        for k in 1..=params.config.rounds {
            let (next, m) = message_round(tape, params, store, h, &batch.comm_groups, k)?;
            comm_attention.push(m);
            h = next;
        }
    }
    Ok(EncodeOutput { h0, hk: h, entity_attention, comm_attention })
}

/// Per-agent attention weights of an attention node, split by query row.
pub fn attention_rows(tape: &Tape, node: Var) -> Vec<Vec<f64>> {
    let (groups, w) = tape.attention_weights(node).expect("node is an attention node");
    (0..groups.len()).map(|i| w[groups.range(i)].to_vec()).collect()
}

/// Final embeddings of one observation set as plain rows.
pub fn encode_values(params: &EncoderParams, store: &ParamStore, obs: &ObservationSet) -> Result<Vec<Vec<f64>>> {
    let batch = EncoderBatch::new(&[obs], &params.config)?;
    let mut tape = Tape::new();
    let out = encode(&mut tape, params, store, &batch)?;
    let t = tape.value(out.hk);
    Ok((0..batch.num_agents()).map(|i| t.row(i).to_vec()).collect())
}
