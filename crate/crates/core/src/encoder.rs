//! Neighbourhood encoders for an unseen entity: the time-difference encoder
//! and four variants (relation-specific mean, Time2Vec, functional time
//! encoding, time-aware attention).
//!
//! Encoding is split in two: per-neighbour messages depend only on the
//! support set and are shared by every query of the entity, while the
//! aggregation weights depend on the query time (and relation, for
//! attention).

use serde::{Deserialize, Serialize};

use crate::data::{EntityId, Quadruple, RelationId, TimeId};
use crate::episodes::{inverse_relation, UnseenSide};
use crate::error::{FiltError, Result};
use crate::numeric::tape::{softmax, Activation, NodeId, Tape};
use crate::numeric::{ModelParams, ParamId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Filt,
    Rgcn,
    Time2Vec,
    Functional,
    Attention,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 5] = [
        EncoderKind::Filt,
        EncoderKind::Rgcn,
        EncoderKind::Time2Vec,
        EncoderKind::Functional,
        EncoderKind::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Filt => "filt",
            EncoderKind::Rgcn => "rgcn",
            EncoderKind::Time2Vec => "time2vec",
            EncoderKind::Functional => "functional",
            EncoderKind::Attention => "attention",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            EncoderKind::Filt => "FILT",
            EncoderKind::Rgcn => "B1",
            EncoderKind::Time2Vec => "B2",
            EncoderKind::Functional => "B3",
            EncoderKind::Attention => "B4",
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = FiltError;

    fn from_str(s: &str) -> Result<Self> {
        let l = s.to_ascii_lowercase();
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == l || k.label().to_ascii_lowercase() == l)
            .ok_or_else(|| FiltError::InvalidArgument(format!("unknown encoder `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighbor {
    pub entity: EntityId,
    /// Oriented so that the owner is the object: `(entity, relation, owner)`.
    pub relation: RelationId,
    pub time: TimeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalNeighborhood {
    pub owner: EntityId,
    pub neighbors: Vec<Neighbor>,
    pub query_time: TimeId,
    /// Query relation under the same orientation as the neighbours.
    pub query_relation: RelationId,
}

impl TemporalNeighborhood {
    /// Support quadruples with the owner as subject are inverted so the owner
    /// always ends up on the object side.
    pub fn from_support(
        owner: EntityId,
        support: &[Quadruple],
        query: &Quadruple,
        num_relations: usize,
    ) -> Result<Self> {
        let neighbors = support_neighbors(owner, support, num_relations)?;
        let side = UnseenSide::of(query, owner).ok_or_else(|| {
            FiltError::InvalidArgument(format!("query {query:?} does not contain entity {owner}"))
        })?;
        let query_relation = match side {
            UnseenSide::Subject => inverse_relation(query.relation, num_relations),
            UnseenSide::Object => query.relation,
        };
        Ok(Self {
            owner,
            neighbors,
            query_time: query.timestamp,
            query_relation,
        })
    }
}

pub fn support_neighbors(
    owner: EntityId,
    support: &[Quadruple],
    num_relations: usize,
) -> Result<Vec<Neighbor>> {
    support
        .iter()
        .map(|q| {
            if q.relation >= num_relations {
                return Err(FiltError::InvalidArgument(format!(
                    "support relation {} out of range (|R| = {num_relations})",
                    q.relation
                )));
            }
            match UnseenSide::of(q, owner) {
                Some(UnseenSide::Subject) => Ok(Neighbor {
                    entity: q.object,
                    relation: q.relation + num_relations,
                    time: q.timestamp,
                }),
                Some(UnseenSide::Object) => Ok(Neighbor {
                    entity: q.subject,
                    relation: q.relation,
                    time: q.timestamp,
                }),
                None => Err(FiltError::InvalidArgument(format!(
                    "support quadruple {q:?} does not contain entity {owner}"
                ))),
            }
        })
        .collect()
}

/// Normalised time-difference weights: `exp(1 / |t_q - t_i|)`, or `lambda`
/// when the two times coincide.
pub fn filt_weights(t_q: TimeId, times: &[TimeId], lambda: f64) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Err(FiltError::EmptyInput("neighbourhood".into()));
    }
    if !(lambda > 0.0) {
        return Err(FiltError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let w: Vec<f64> = times
        .iter()
        .map(|&t| {
            let dt = t.abs_diff(t_q);
            if dt == 0 {
                lambda
            } else {
                (1.0 / dt as f64).exp()
            }
        })
        .collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// `[w_0 t + p_0, sin(w_1 t + p_1), ...]`.
pub fn time2vec(t: f64, omega: &[f64], phi: &[f64]) -> Vec<f64> {
    omega
        .iter()
        .zip(phi)
        .enumerate()
        .map(|(j, (w, p))| if j == 0 { w * t + p } else { (w * t + p).sin() })
        .collect()
}

/// `sqrt(1 / d_t) [cos(w_1 t + p_1), ...]`.
pub fn functional_time(t: f64, omega: &[f64], phi: &[f64]) -> Vec<f64> {
    let s = (1.0 / omega.len() as f64).sqrt();
    omega.iter().zip(phi).map(|(w, p)| s * (w * t + p).cos()).collect()
}

fn time_features(tape: &mut Tape, params: &ModelParams, kind: EncoderKind, t: TimeId) -> Result<NodeId> {
    let (fid, pid) = match kind {
        EncoderKind::Time2Vec => (ParamId::Time2VecFreq, ParamId::Time2VecPhase),
        _ => (ParamId::FunctionalFreq, ParamId::FunctionalPhase),
    };
    let omega = tape.param(params, fid)?;
    let phi = tape.param(params, pid)?;
    let wt = tape.mul_const(omega, t as f64);
    let arg = tape.add(wt, phi)?;
    let n = tape.value(arg).len();
    if kind == EncoderKind::Time2Vec {
        let lin = tape.slice(arg, 0, 1)?;
        if n == 1 {
            return Ok(lin);
        }
        let rest = tape.slice(arg, 1, n - 1)?;
        let periodic = tape.sin(rest);
        tape.concat(&[lin, periodic])
    } else {
        let c = tape.cos(arg);
        Ok(tape.mul_const(c, (1.0 / n as f64).sqrt()))
    }
}

/// Support-dependent part of an encoding.
#[derive(Clone, Debug)]
pub struct NeighborMessages {
    pub messages: Vec<NodeId>,
    /// Attention keys, one per neighbour (attention encoder only).
    pub keys: Vec<NodeId>,
    pub times: Vec<TimeId>,
}

/// `neighbor_emb[i]` is the (possibly concept-injected) embedding of
/// `neighbors[i].entity`.
pub fn messages(
    tape: &mut Tape,
    params: &ModelParams,
    kind: EncoderKind,
    act: Activation,
    neighbors: &[Neighbor],
    neighbor_emb: &[NodeId],
) -> Result<NeighborMessages> {
    if neighbors.is_empty() {
        return Err(FiltError::EmptyInput("neighbourhood".into()));
    }
    if neighbors.len() != neighbor_emb.len() {
        return Err(FiltError::Shape {
            op: "messages",
            detail: format!("{} neighbours, {} embeddings", neighbors.len(), neighbor_emb.len()),
        });
    }
    let d = params.dims.dim;
    let dt = params.dims.time_dim;
    let mut out = NeighborMessages {
        messages: Vec::with_capacity(neighbors.len()),
        keys: Vec::new(),
        times: neighbors.iter().map(|n| n.time).collect(),
    };
    for (n, &h) in neighbors.iter().zip(neighbor_emb) {
        let h_r = tape.param_row(params, ParamId::Relation, n.relation)?;
        let msg = match kind {
            EncoderKind::Rgcn => {
                let w = tape.param_slice(params, ParamId::RelationWeights, n.relation * d * d, d * d)?;
                tape.matvec(w, d, d, h)?
            }
            EncoderKind::Time2Vec | EncoderKind::Functional => {
                let (proj, width) = if kind == EncoderKind::Time2Vec {
                    (ParamId::Time2VecProj, d + dt + 1)
                } else {
                    (ParamId::FunctionalProj, d + dt)
                };
                let phi = time_features(tape, params, kind, n.time)?;
                let x = tape.concat(&[h, phi])?;
                let f = tape.param(params, proj)?;
                let pre = tape.matvec(f, d, width, x)?;
                let ht = tape.activation(pre, act);
                project(tape, params, ht, h_r)?
            }
            EncoderKind::Filt | EncoderKind::Attention => project(tape, params, h, h_r)?,
        };
        out.messages.push(msg);
        if kind == EncoderKind::Attention {
            let phi = time_features(tape, params, EncoderKind::Functional, n.time)?;
            let x = tape.concat(&[h_r, phi])?;
            let wk = tape.param(params, ParamId::AttnKey)?;
            out.keys.push(tape.matvec(wk, d, d + dt, x)?);
        }
    }
    Ok(out)
}

/// `W_g (h || h_r)`.
fn project(tape: &mut Tape, params: &ModelParams, h: NodeId, h_r: NodeId) -> Result<NodeId> {
    let d = params.dims.dim;
    let x = tape.concat(&[h, h_r])?;
    let w = tape.param(params, ParamId::EncoderWeight)?;
    tape.matvec(w, d, 2 * d, x)
}

/// Aggregation weights for a query at `t_q` with oriented relation `r_q`.
pub fn aggregation_weights(
    tape: &mut Tape,
    params: &ModelParams,
    kind: EncoderKind,
    lambda: f64,
    act: Activation,
    msgs: &NeighborMessages,
    t_q: TimeId,
    r_q: RelationId,
) -> Result<NodeId> {
    let k = msgs.messages.len();
    match kind {
        EncoderKind::Filt => {
            let g = filt_weights(t_q, &msgs.times, lambda)?;
            Ok(tape.constant(g))
        }
        EncoderKind::Rgcn | EncoderKind::Time2Vec | EncoderKind::Functional => {
            Ok(tape.constant(vec![1.0 / k as f64; k]))
        }
        EncoderKind::Attention => {
            let (d, dt) = (params.dims.dim, params.dims.time_dim);
            let h_rq = tape.param_row(params, ParamId::Relation, r_q)?;
            let phi = time_features(tape, params, EncoderKind::Functional, t_q)?;
            let x = tape.concat(&[h_rq, phi])?;
            let wq = tape.param(params, ParamId::AttnQuery)?;
            let q = tape.matvec(wq, d, d + dt, x)?;
            let logits = msgs
                .keys
                .iter()
                .map(|&key| {
                    let s = tape.dot(q, key)?;
                    Ok(tape.activation(s, act))
                })
                .collect::<Result<Vec<_>>>()?;
            let logits = tape.concat(&logits)?;
            tape.softmax(logits)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn aggregate(
    tape: &mut Tape,
    params: &ModelParams,
    kind: EncoderKind,
    lambda: f64,
    act: Activation,
    msgs: &NeighborMessages,
    t_q: TimeId,
    r_q: RelationId,
) -> Result<NodeId> {
    let gamma = aggregation_weights(tape, params, kind, lambda, act, msgs, t_q, r_q)?;
    tape.weighted_sum(gamma, &msgs.messages)
}

/// Encode a neighbourhood in one go from raw entity rows (no concept
/// injection). Mostly useful for tests and tooling.
pub fn encode(
    tape: &mut Tape,
    params: &ModelParams,
    kind: EncoderKind,
    lambda: f64,
    act: Activation,
    nbhd: &TemporalNeighborhood,
) -> Result<NodeId> {
    let embs = nbhd
        .neighbors
        .iter()
        .map(|n| tape.param_row(params, ParamId::Entity, n.entity))
        .collect::<Result<Vec<_>>>()?;
    let msgs = messages(tape, params, kind, act, &nbhd.neighbors, &embs)?;
    aggregate(tape, params, kind, lambda, act, &msgs, nbhd.query_time, nbhd.query_relation)
}

/// Plain attention weights for the attention encoder, computed without a
/// tape from explicit query and key vectors.
pub fn attention_weights(q: &[f64], keys: &[Vec<f64>], act: Activation) -> Vec<f64> {
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| act.apply(q.iter().zip(k).map(|(a, b)| a * b).sum()))
        .collect();
    softmax(&logits)
}
