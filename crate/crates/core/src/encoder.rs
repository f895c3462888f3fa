//! Neighborhood aggregators producing output entity embeddings.
//!
//! Every neighbor `(r, e_j)` is first projected by the relation transform
//! `T_r(e) = e - (w_rᵀe) w_r`. The aggregator then combines the projected
//! vectors:
//!
//! * `Mean` averages them,
//! * `Lstm` runs a single-layer LSTM over a permutation of them,
//! * `Lan` weights each by `α_logic + α_nn`,
//! * `QueryAttention` uses `α_nn` alone,
//! * `GlobalAttention` uses `α_nn` with the query vector replaced by zeros,
//! * `LogicOnly` uses `α_logic` alone.
//!
//! An entity without neighbors encodes to the zero vector and is flagged.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diff::{dot, masked_softmax, ParamKey, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, NeighborSample, RelationId};
use crate::rules::{logic_attention, ConfidenceTable, LogicMode, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregatorKind {
    Mean,
    Lstm,
    #[default]
    Lan,
    QueryAttention,
    GlobalAttention,
    LogicOnly,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::Mean,
        AggregatorKind::Lstm,
        AggregatorKind::Lan,
        AggregatorKind::QueryAttention,
        AggregatorKind::GlobalAttention,
        AggregatorKind::LogicOnly,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(AggregatorKind::Mean),
            "lstm" => Some(AggregatorKind::Lstm),
            "lan" => Some(AggregatorKind::Lan),
            "query-attn" => Some(AggregatorKind::QueryAttention),
            "global-attn" => Some(AggregatorKind::GlobalAttention),
            "logic-only" => Some(AggregatorKind::LogicOnly),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Lstm => "lstm",
            AggregatorKind::Lan => "lan",
            AggregatorKind::QueryAttention => "query-attn",
            AggregatorKind::GlobalAttention => "global-attn",
            AggregatorKind::LogicOnly => "logic-only",
        }
    }

    pub fn uses_rules(self) -> bool {
        matches!(self, AggregatorKind::Lan | AggregatorKind::LogicOnly)
    }

    pub fn uses_attention_net(self) -> bool {
        matches!(
            self,
            AggregatorKind::Lan | AggregatorKind::QueryAttention | AggregatorKind::GlobalAttention
        )
    }

    /// Whether the output is unchanged by reordering the neighbors.
    pub fn is_permutation_invariant(self) -> bool {
        self != AggregatorKind::Lstm
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    pub neighbor_budget: usize,
    pub logic_mode: LogicMode,
    pub epsilon: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            kind: AggregatorKind::Lan,
            neighbor_budget: 64,
            logic_mode: LogicMode::Normalized,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl AggregatorConfig {
    pub fn new(kind: AggregatorKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Weights assigned to one neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEntry {
    pub relation: RelationId,
    pub entity: EntityId,
    pub alpha_logic: f64,
    pub alpha_nn: f64,
    pub alpha_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedEntity {
    pub embedding: Vec<f64>,
    /// One entry per real neighbor in sample order; empty for Mean and Lstm.
    pub trace: Vec<AttentionEntry>,
    pub zero_neighbors: bool,
}

impl EncodedEntity {
    /// Trace entries ordered by combined weight, largest first.
    pub fn ranked_trace(&self) -> Vec<AttentionEntry> {
        let mut t = self.trace.clone();
        t.sort_by(|a, b| {
            b.alpha_total
                .total_cmp(&a.alpha_total)
                .then(a.relation.cmp(&b.relation))
                .then(a.entity.cmp(&b.entity))
        });
        t
    }
}

/// Result of building an encoding on a tape.
#[derive(Debug, Clone)]
pub struct TapeEncoding {
    pub embedding: Var,
    pub trace: Vec<AttentionEntry>,
    pub zero_neighbors: bool,
}

/// `e - (wᵀe) w`.
pub fn transform(e: &[f64], w: &[f64]) -> Vec<f64> {
    let k = dot(w, e);
    e.iter().zip(w).map(|(x, y)| x - k * y).collect()
}

/// Unnormalized attention `u_aᵀ tanh(W_a [z; t])` with `z = z_q`, or zeros
/// when `query` is `None`.
pub fn nn_attention_score(params: &ParamStore, query: Option<RelationId>, transformed: &[f64]) -> f64 {
    let d = params.dim();
    let wa = params.get(ParamKey::AttnProj);
    let ua = params.get(ParamKey::AttnOut);
    let z: Vec<f64> = match query {
        Some(q) => params.row(ParamKey::QueryAttn, q.index()).to_vec(),
        None => vec![0.0; d],
    };
    (0..d)
        .map(|i| {
            let row = wa.row(i);
            let pre = dot(&row[..d], &z) + dot(&row[d..], transformed);
            ua.data[i] * pre.tanh()
        })
        .sum()
}

/// `T_r(e_j)` on the tape for one neighbor.
pub fn transform_on_tape(tape: &mut Tape, params: &ParamStore, r: RelationId, e: EntityId) -> Result<Var> {
    let ev = tape.param_row(params, ParamKey::EntityInput, e.index());
    let wv = tape.param_row(params, ParamKey::Transform, r.index());
    let k = tape.dot(wv, ev)?;
    let proj = tape.scale_by(k, wv)?;
    Ok(tape.sub(ev, proj)?)
}

/// Mean over the masked-in vectors; `None` when nothing is valid.
pub fn aggregate_mean(tape: &mut Tape, items: &[Var], mask: &[bool]) -> Result<Option<Var>> {
    if !mask.iter().any(|&m| m) {
        return Ok(None);
    }
    Ok(Some(tape.mean_masked(items, mask)?))
}

/// Final hidden state of a single-layer LSTM fed `items` in `order`.
/// Gates use the `[i, f, g, o]` row blocks of the stacked weights.
pub fn aggregate_lstm(tape: &mut Tape, params: &ParamStore, items: &[Var], order: &[usize]) -> Result<Option<Var>> {
    if order.is_empty() {
        return Ok(None);
    }
    if !params.has_lstm() {
        return Err(Error::Model("LSTM parameters are not allocated".into()));
    }
    let d = params.dim();
    let w = tape.param(params, ParamKey::LstmInput);
    let u = tape.param(params, ParamKey::LstmHidden);
    let b = tape.param(params, ParamKey::LstmBias);
    let mut h = tape.input(vec![0.0; d]);
    let mut c = tape.input(vec![0.0; d]);
    for &j in order {
        let x = *items
            .get(j)
            .ok_or_else(|| Error::Model(format!("permutation index {j} out of range")))?;
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, h)?;
        let z = tape.add(wx, uh)?;
        let z = tape.add(z, b)?;
        let zi = tape.slice(z, 0, d)?;
        let zf = tape.slice(z, d, d)?;
        let zg = tape.slice(z, 2 * d, d)?;
        let zo = tape.slice(z, 3 * d, d)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        h = tape.mul(o, tc)?;
    }
    Ok(Some(h))
}

/// Attention-network scores for every item followed by the softmax across them.
fn nn_attention_on_tape(
    tape: &mut Tape,
    params: &ParamStore,
    query: Option<RelationId>,
    items: &[Var],
) -> Result<Var> {
    let d = params.dim();
    let wa = tape.param(params, ParamKey::AttnProj);
    let ua = tape.param(params, ParamKey::AttnOut);
    let z = match query {
        Some(q) => tape.param_row(params, ParamKey::QueryAttn, q.index()),
        None => tape.input(vec![0.0; d]),
    };
    let left = tape.matvec_cols(wa, 0, z)?;
    let mut scores = Vec::with_capacity(items.len());
    for &t in items {
        let right = tape.matvec_cols(wa, d, t)?;
        let pre = tape.add(left, right)?;
        let act = tape.tanh(pre);
        scores.push(tape.dot(ua, act)?);
    }
    let stacked = tape.stack(&scores)?;
    let mask = vec![true; items.len()];
    Ok(tape.softmax_masked(stacked, &mask)?)
}

/// Encodes `sample.owner` for query `q` on the given tape.
///
/// `order` is the LSTM feeding order over the valid entries; `None` feeds
/// them in sample order. Other aggregators ignore it.
pub fn encode_on_tape(
    tape: &mut Tape,
    params: &ParamStore,
    table: Option<&ConfidenceTable>,
    cfg: &AggregatorConfig,
    sample: &NeighborSample,
    q: RelationId,
    order: Option<&[usize]>,
) -> Result<TapeEncoding> {
    let d = params.dim();
    if q.index() >= params.get(ParamKey::Relation).rows {
        return Err(Error::Model(format!("query relation {} unknown", q.0)));
    }
    let valid: Vec<(RelationId, EntityId)> = sample.valid().collect();
    if valid.is_empty() {
        return Ok(TapeEncoding {
            embedding: tape.input(vec![0.0; d]),
            trace: Vec::new(),
            zero_neighbors: true,
        });
    }
    let items = valid
        .iter()
        .map(|&(r, e)| transform_on_tape(tape, params, r, e))
        .collect::<Result<Vec<_>>>()?;

    let logic = if cfg.kind.uses_rules() {
        let table = table.ok_or_else(|| {
            Error::Model(format!("aggregator {} needs a rule table", cfg.kind))
        })?;
        let w = logic_attention(table, sample, q, cfg.logic_mode, cfg.epsilon)?;
        w.weights
            .iter()
            .zip(&sample.mask)
            .filter(|(_, &m)| m)
            .map(|(&w, _)| w)
            .collect()
    } else {
        vec![0.0; valid.len()]
    };

    let (embedding, nn) = match cfg.kind {
        AggregatorKind::Mean => {
            let mask = vec![true; items.len()];
            let e = aggregate_mean(tape, &items, &mask)?.expect("non-empty");
            (e, None)
        }
        AggregatorKind::Lstm => {
            let identity: Vec<usize> = (0..items.len()).collect();
            let order = order.unwrap_or(&identity);
            if order.len() != items.len() {
                return Err(Error::Model(format!(
                    "LSTM order covers {} of {} neighbors",
                    order.len(),
                    items.len()
                )));
            }
            let e = aggregate_lstm(tape, params, &items, order)?.expect("non-empty");
            (e, None)
        }
        AggregatorKind::LogicOnly => {
            let w = tape.input(logic.clone());
            (tape.weighted_sum(w, &items)?, None)
        }
        AggregatorKind::QueryAttention | AggregatorKind::GlobalAttention => {
            let query = (cfg.kind == AggregatorKind::QueryAttention).then_some(q);
            let alpha = nn_attention_on_tape(tape, params, query, &items)?;
            (tape.weighted_sum(alpha, &items)?, Some(alpha))
        }
        AggregatorKind::Lan => {
            let alpha = nn_attention_on_tape(tape, params, Some(q), &items)?;
            let lw = tape.input(logic.clone());
            let total = tape.add(lw, alpha)?;
            (tape.weighted_sum(total, &items)?, Some(alpha))
        }
    };

    let trace = match cfg.kind {
        AggregatorKind::Mean | AggregatorKind::Lstm => Vec::new(),
        _ => {
            let nn_vals: Vec<f64> = match nn {
                Some(v) => tape.value(v).to_vec(),
                None => vec![0.0; valid.len()],
            };
            valid
                .iter()
                .enumerate()
                .map(|(j, &(r, e))| AttentionEntry {
                    relation: r,
                    entity: e,
                    alpha_logic: logic[j],
                    alpha_nn: nn_vals[j],
                    alpha_total: logic[j] + nn_vals[j],
                })
                .collect()
        }
    };
    Ok(TapeEncoding {
        embedding,
        trace,
        zero_neighbors: false,
    })
}

/// Encodes an entity outside of training: samples its neighborhood, draws an
/// LSTM order if needed, and returns plain values.
pub fn encode<R: Rng + ?Sized>(
    e: EntityId,
    q: RelationId,
    kg: &KnowledgeGraph,
    table: Option<&ConfidenceTable>,
    params: &ParamStore,
    cfg: &AggregatorConfig,
    rng: &mut R,
) -> Result<EncodedEntity> {
    let sample = kg.neighborhood(e)?.sample(cfg.neighbor_budget, rng);
    encode_sample(&sample, q, table, params, cfg, rng)
}

/// Like [`encode`] for an already drawn sample.
pub fn encode_sample<R: Rng + ?Sized>(
    sample: &NeighborSample,
    q: RelationId,
    table: Option<&ConfidenceTable>,
    params: &ParamStore,
    cfg: &AggregatorConfig,
    rng: &mut R,
) -> Result<EncodedEntity> {
    let order = lstm_order(cfg.kind, sample.num_valid(), rng);
    let mut tape = Tape::new();
    let enc = encode_on_tape(&mut tape, params, table, cfg, sample, q, order.as_deref())?;
    Ok(EncodedEntity {
        embedding: tape.value(enc.embedding).to_vec(),
        trace: enc.trace,
        zero_neighbors: enc.zero_neighbors,
    })
}

/// Random feeding order for the LSTM aggregator; `None` for the others.
pub fn lstm_order<R: Rng + ?Sized>(kind: AggregatorKind, n: usize, rng: &mut R) -> Option<Vec<usize>> {
    (kind == AggregatorKind::Lstm).then(|| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order
    })
}

/// Softmax of plain attention scores, for inspection and cross-checks.
pub fn nn_attention_weights(params: &ParamStore, query: Option<RelationId>, transformed: &[Vec<f64>]) -> Vec<f64> {
    let scores: Vec<f64> = transformed
        .iter()
        .map(|t| nn_attention_score(params, query, t))
        .collect();
    masked_softmax(&scores, &vec![true; scores.len()]).unwrap_or_default()
}
