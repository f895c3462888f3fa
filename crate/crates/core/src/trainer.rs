//! Margin-ranking training with corrupted negatives.
//!
//! Each epoch shuffles the inverse-augmented training triplets and walks them
//! in mini-batches. Before any gradient is taken a batch is turned into a
//! plan: negatives, neighbor samples and LSTM orders are all drawn from
//! per-item seeded streams, so the objective of a planned batch is a
//! deterministic function of the parameters.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::DatasetBundle;
use crate::decoder::{score_on_tape, ScorerKind};
use crate::diff::{Gradients, ParamKey, ParamStore, Tape, Var};
use crate::encoder::{encode_on_tape, lstm_order, AggregatorConfig, AggregatorKind};
use crate::error::{Error, Result};
use crate::evaluator::{EvalData, Evaluator, Side};
use crate::kg::{sample_neighbors, EntityId, KnowledgeGraph, NeighborSample, RelationId, Triplet};
use crate::rng;
use crate::rules::ConfidenceTable;

/// Consecutive rejected corruptions after which the last draw is kept.
pub const MAX_CORRUPTION_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub margin: f64,
    pub dim: usize,
    pub negatives: usize,
    /// Weight of the squared L2 penalty on `u_a`, `W_a` and `z_q`.
    pub l2_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub subtask: bool,
    /// Hide the edge being predicted from both endpoints' neighbor samples.
    pub mask_target_edge: bool,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Cap on validation triplets per evaluation; 0 means all.
    pub valid_limit: usize,
    /// Write a periodic checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            margin: 1.0,
            dim: 100,
            negatives: 1,
            l2_rate: 0.001,
            epochs: 100,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            subtask: true,
            mask_target_edge: true,
            eval_every: 1,
            patience: 10,
            valid_limit: 500,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_rate >= 0.0 && self.l2_rate.is_finite()) {
            return bad("l2_rate must be non-negative");
        }
        if self.dim == 0 || self.batch_size == 0 || self.negatives == 0 || self.epochs == 0 {
            return bad("dim, batch_size, negatives and epochs must be at least 1");
        }
        Ok(())
    }
}

/// A corrupted triplet and the endpoint that was replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Negative {
    pub triplet: Triplet,
    pub side: Side,
}

/// Replaces the subject or the object (each with probability ½) by an entity
/// drawn uniformly from `entities`, redrawing while the result is a known
/// training triplet.
pub fn corrupt<R: Rng + ?Sized>(
    t: &Triplet,
    kg: &KnowledgeGraph,
    entities: &[EntityId],
    rng: &mut R,
) -> Result<Negative> {
    if entities.len() < 2 {
        return Err(Error::Model("corruption needs at least two entities".into()));
    }
    let side = if rng.gen_bool(0.5) {
        Side::Subject
    } else {
        Side::Object
    };
    let mut out = *t;
    for _ in 0..MAX_CORRUPTION_RETRIES {
        let e = entities[rng.gen_range(0..entities.len())];
        out = match side {
            Side::Subject => Triplet::new(e, t.relation, t.object),
            Side::Object => Triplet::new(t.subject, t.relation, e),
        };
        if !kg.contains(&out) {
            break;
        }
    }
    Ok(Negative { triplet: out, side })
}

/// What to feed the encoder for one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodePlan {
    pub query: RelationId,
    pub sample: NeighborSample,
    pub order: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativePlan {
    pub negative: Negative,
    /// Encoding of the replacement entity.
    pub fresh: EncodePlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemPlan {
    pub positive: Triplet,
    pub subject: EncodePlan,
    pub object: EncodePlan,
    pub negatives: Vec<NegativePlan>,
}

fn plan_encoding<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    e: EntityId,
    query: RelationId,
    hidden: Option<(RelationId, EntityId)>,
    agg: &AggregatorConfig,
    rng: &mut R,
) -> Result<EncodePlan> {
    let nb = kg.neighborhood(e)?;
    let sample = match hidden {
        Some(edge) if nb.entries.contains(&edge) => {
            let kept: Vec<_> = nb.entries.iter().copied().filter(|x| *x != edge).collect();
            sample_neighbors(e, &kept, agg.neighbor_budget, rng)
        }
        _ => nb.sample(agg.neighbor_budget, rng),
    };
    let order = lstm_order(agg.kind, sample.num_valid(), rng);
    Ok(EncodePlan {
        query,
        sample,
        order,
    })
}

/// Draws negatives, neighbor samples and LSTM orders for one positive.
pub fn plan_item<R: Rng + ?Sized>(
    t: &Triplet,
    kg: &KnowledgeGraph,
    entities: &[EntityId],
    cfg: &TrainConfig,
    agg: &AggregatorConfig,
    rng: &mut R,
) -> Result<ItemPlan> {
    if agg.neighbor_budget == 0 {
        return Err(Error::Config("neighbor_budget must be at least 1".into()));
    }
    let m = kg.num_base_relations();
    let q_inv = t.relation.inverse(m);
    let (hide_s, hide_o) = if cfg.mask_target_edge {
        (Some((t.relation, t.object)), Some((q_inv, t.subject)))
    } else {
        (None, None)
    };
    let subject = plan_encoding(kg, t.subject, t.relation, hide_s, agg, rng)?;
    let object = plan_encoding(kg, t.object, q_inv, hide_o, agg, rng)?;
    let mut negatives = Vec::with_capacity(cfg.negatives);
    for _ in 0..cfg.negatives {
        let negative = corrupt(t, kg, entities, rng)?;
        let fresh = match negative.side {
            Side::Subject => plan_encoding(kg, negative.triplet.subject, t.relation, None, agg, rng)?,
            Side::Object => plan_encoding(kg, negative.triplet.object, q_inv, None, agg, rng)?,
        };
        negatives.push(NegativePlan { negative, fresh });
    }
    Ok(ItemPlan {
        positive: *t,
        subject,
        object,
        negatives,
    })
}

/// Plans a batch; item `i` draws from stream `(epoch, first_index + i)`.
pub fn plan_batch(
    batch: &[Triplet],
    kg: &KnowledgeGraph,
    entities: &[EntityId],
    cfg: &TrainConfig,
    agg: &AggregatorConfig,
    epoch: u32,
    first_index: usize,
) -> Result<Vec<ItemPlan>> {
    batch
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = rng::stream(cfg.seed, epoch, (first_index + i) as u32);
            plan_item(t, kg, entities, cfg, agg, &mut r)
        })
        .collect()
}

/// Everything the loss needs besides parameters and plans.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub table: Option<&'a ConfidenceTable>,
    pub aggregator: &'a AggregatorConfig,
    pub scorer: ScorerKind,
    pub margin: f64,
    pub subtask: bool,
    pub l2_rate: f64,
}

/// `max(0, γ - pos + neg)` on the tape.
pub fn hinge(tape: &mut Tape, pos: Var, neg: Var, margin: f64) -> Result<Var> {
    let gap = tape.sub(neg, pos)?;
    let shifted = tape.offset(gap, margin);
    Ok(tape.relu(shifted))
}

fn encode_plan(
    tape: &mut Tape,
    params: &ParamStore,
    spec: &LossSpec<'_>,
    plan: &EncodePlan,
) -> Result<Var> {
    let enc = encode_on_tape(
        tape,
        params,
        spec.table,
        spec.aggregator,
        &plan.sample,
        plan.query,
        plan.order.as_deref(),
    )?;
    Ok(enc.embedding)
}

/// Main hinge loss over output embeddings for every planned negative.
/// Returns the summed loss node and the per-negative hinge values.
pub fn main_loss(
    tape: &mut Tape,
    params: &ParamStore,
    spec: &LossSpec<'_>,
    item: &ItemPlan,
) -> Result<(Var, Vec<f64>)> {
    let s = encode_plan(tape, params, spec, &item.subject)?;
    let o = encode_plan(tape, params, spec, &item.object)?;
    let q = tape.param_row(params, ParamKey::Relation, item.positive.relation.index());
    let pos = score_on_tape(tape, s, q, o, spec.scorer)?;
    let mut terms = Vec::with_capacity(item.negatives.len());
    for neg in &item.negatives {
        let fresh = encode_plan(tape, params, spec, &neg.fresh)?;
        let (ns, no) = match neg.negative.side {
            Side::Subject => (fresh, o),
            Side::Object => (s, fresh),
        };
        let score = score_on_tape(tape, ns, q, no, spec.scorer)?;
        terms.push(hinge(tape, pos, score, spec.margin)?);
    }
    let values = terms.iter().map(|&v| tape.scalar_value(v)).collect();
    let stacked = tape.stack(&terms)?;
    Ok((tape.sum(stacked), values))
}

/// Hinge loss on input embeddings, sharing the relation embeddings.
pub fn subtask_loss(
    tape: &mut Tape,
    params: &ParamStore,
    spec: &LossSpec<'_>,
    item: &ItemPlan,
) -> Result<(Var, Vec<f64>)> {
    let t = item.positive;
    let input = |tape: &mut Tape, e: EntityId| tape.param_row(params, ParamKey::EntityInput, e.index());
    let s = input(tape, t.subject);
    let o = input(tape, t.object);
    let q = tape.param_row(params, ParamKey::Relation, t.relation.index());
    let pos = score_on_tape(tape, s, q, o, spec.scorer)?;
    let mut terms = Vec::with_capacity(item.negatives.len());
    for neg in &item.negatives {
        let n = neg.negative.triplet;
        let ns = input(tape, n.subject);
        let no = input(tape, n.object);
        let score = score_on_tape(tape, ns, q, no, spec.scorer)?;
        terms.push(hinge(tape, pos, score, spec.margin)?);
    }
    let values = terms.iter().map(|&v| tape.scalar_value(v)).collect();
    let stacked = tape.stack(&terms)?;
    Ok((tape.sum(stacked), values))
}

/// Loss and gradients of one planned batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Batch-mean hinge losses plus the L2 penalty.
    pub loss: f64,
    pub main_sum: f64,
    pub subtask_sum: f64,
    pub grads: Gradients,
}

fn l2_keys(kind: AggregatorKind) -> &'static [ParamKey] {
    if kind.uses_attention_net() {
        &[ParamKey::AttnOut, ParamKey::AttnProj, ParamKey::QueryAttn]
    } else {
        &[]
    }
}

/// Weighted squared L2 norm of the attention arrays, and its gradient.
pub fn l2_penalty(params: &ParamStore, spec: &LossSpec<'_>) -> (f64, Gradients) {
    let mut grads = Gradients::new();
    let mut value = 0.0;
    if spec.l2_rate == 0.0 {
        return (value, grads);
    }
    for &key in l2_keys(spec.aggregator.kind) {
        let p = params.get(key);
        for r in 0..p.rows {
            let row = p.row(r);
            value += spec.l2_rate * row.iter().map(|x| x * x).sum::<f64>();
            let g: Vec<f64> = row.iter().map(|x| 2.0 * spec.l2_rate * x).collect();
            grads.add_row(key, r, &g);
        }
    }
    (value, grads)
}

/// Mean over the batch of the per-item losses, plus the L2 penalty.
/// Item gradients are computed in parallel and summed in item order.
pub fn batch_objective(params: &ParamStore, spec: &LossSpec<'_>, plans: &[ItemPlan]) -> Result<BatchOutcome> {
    if plans.is_empty() {
        return Err(Error::Model("empty batch".into()));
    }
    let per_item: Vec<(f64, f64, f64, Gradients)> = plans
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new();
            let (main, main_vals) = main_loss(&mut tape, params, spec, item)?;
            let (total, sub_sum) = if spec.subtask {
                let (sub, sub_vals) = subtask_loss(&mut tape, params, spec, item)?;
                (tape.add(main, sub)?, sub_vals.iter().sum())
            } else {
                (main, 0.0)
            };
            let grads = tape.backward(total)?;
            Ok((tape.scalar_value(total), main_vals.iter().sum(), sub_sum, grads))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / plans.len() as f64;
    let mut grads = Gradients::new();
    let (mut loss, mut main_sum, mut subtask_sum) = (0.0, 0.0, 0.0);
    for (l, m, s, g) in &per_item {
        loss += l;
        main_sum += m;
        subtask_sum += s;
        grads.merge(g);
    }
    grads.scale(inv);
    let (penalty, pgrads) = l2_penalty(params, spec);
    grads.merge(&pgrads);
    Ok(BatchOutcome {
        loss: loss * inv + penalty,
        main_sum,
        subtask_sum,
        grads,
    })
}

/// First-order optimizer with dense moment estimates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = ParamKey::ALL
            .iter()
            .map(|&k| match kind {
                OptimizerKind::Adam => vec![0.0; params.get(k).data.len()],
                OptimizerKind::Sgd => Vec::new(),
            })
            .collect();
        Self {
            kind,
            learning_rate,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update and renormalizes the transform rows.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for key in ParamKey::ALL {
                    let p = params.get_mut(key);
                    for (r, g) in grads.rows(key) {
                        for (x, gi) in p.row_mut(r).iter_mut().zip(g) {
                            *x -= lr * gi;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for key in ParamKey::ALL {
                    let p = params.get_mut(key);
                    if p.data.is_empty() {
                        continue;
                    }
                    let g = grads.dense(key, p);
                    let (m, v) = (&mut self.m[key.index()], &mut self.v[key.index()]);
                    for i in 0..p.data.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p.data[i] -= lr * mh / (vh.sqrt() + ADAM_EPSILON);
                    }
                }
            }
        }
        params.normalize_transforms();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean main hinge loss per positive.
    pub main_loss: f64,
    /// Mean subtask hinge loss per positive (0 when disabled).
    pub subtask_loss: f64,
    /// Mean gradient norm over the epoch's batches.
    pub grad_norm: f64,
    pub seconds: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_validation: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    /// Main plus subtask loss per epoch.
    pub fn loss_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.main_loss + e.subtask_loss).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tmain_loss\tsubtask_loss\tgrad_norm\tseconds\tvalidation\n");
        for e in &self.epochs {
            let v = e.validation.map(|v| format!("{v:.6}")).unwrap_or_default();
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}\t{v}\n",
                e.epoch, e.main_loss, e.subtask_loss, e.grad_norm, e.seconds
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Periodic,
    Best,
}

type Validator<'a> = Box<dyn Fn(&ParamStore) -> Result<Option<f64>> + 'a>;
type CheckpointSink<'a> = Box<dyn FnMut(CheckpointKind, usize, &ParamStore) -> Result<()> + 'a>;

/// Optional callbacks for validation (higher is better) and checkpointing.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub validate: Option<Validator<'a>>,
    pub checkpoint: Option<CheckpointSink<'a>>,
    pub on_epoch: Option<Box<dyn FnMut(&EpochRecord) + 'a>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation score, or after the last epoch when
    /// no validation ran.
    pub params: ParamStore,
    pub report: TrainReport,
}

/// Validator computing filtered MRR on the bundle's validation triplets.
pub fn validation_mrr_hook<'a>(
    data: &'a EvalData,
    bundle: &'a DatasetBundle,
    table: Option<&'a ConfidenceTable>,
    agg: &'a AggregatorConfig,
    scorer: ScorerKind,
    cfg: &TrainConfig,
) -> Validator<'a> {
    let limit = (cfg.valid_limit > 0).then_some(cfg.valid_limit);
    let seed = cfg.seed;
    Box::new(move |params: &ParamStore| {
        let ev = Evaluator {
            data,
            params,
            table,
            aggregator: agg,
            scorer,
            seed,
        };
        ev.validation_mrr(&bundle.validation, limit)
    })
}

/// Trains with validation MRR early stopping when the bundle has validation
/// triplets.
pub fn train(
    bundle: &DatasetBundle,
    table: Option<&ConfidenceTable>,
    cfg: &TrainConfig,
    agg: &AggregatorConfig,
    scorer: ScorerKind,
) -> Result<TrainOutcome> {
    let data = EvalData::new(bundle)?;
    let hooks = TrainHooks {
        validate: (!bundle.validation.is_empty())
            .then(|| validation_mrr_hook(&data, bundle, table, agg, scorer, cfg)),
        ..TrainHooks::default()
    };
    train_with(bundle, table, cfg, agg, scorer, hooks)
}

/// Initial parameters for a run.
pub fn init_params(bundle: &DatasetBundle, cfg: &TrainConfig, agg: &AggregatorConfig) -> ParamStore {
    ParamStore::init(
        bundle.num_entities(),
        2 * bundle.num_base_relations(),
        cfg.dim,
        agg.kind == AggregatorKind::Lstm,
        &mut rng::stream(cfg.seed, u32::MAX, 0),
    )
}

pub fn train_with(
    bundle: &DatasetBundle,
    table: Option<&ConfidenceTable>,
    cfg: &TrainConfig,
    agg: &AggregatorConfig,
    scorer: ScorerKind,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    scorer.check_dim(cfg.dim)?;
    let kg = bundle.train_graph()?;
    if kg.is_empty() {
        return Err(Error::Model("training set is empty".into()));
    }
    if agg.kind.uses_rules() {
        let t = table.ok_or_else(|| Error::Model(format!("aggregator {} needs rules", agg.kind)))?;
        if t.num_relations() != kg.num_relations() {
            return Err(Error::Model(format!(
                "rule table covers {} relations, graph has {}",
                t.num_relations(),
                kg.num_relations()
            )));
        }
    }
    let entities = kg.active_entities();
    let spec = LossSpec {
        table,
        aggregator: agg,
        scorer,
        margin: cfg.margin,
        subtask: cfg.subtask,
        l2_rate: cfg.l2_rate,
    };
    let mut params = init_params(bundle, cfg, agg);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut positives: Vec<Triplet> = kg.triplets().to_vec();
    let mut report = TrainReport::default();
    let mut best: Option<ParamStore> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        positives.shuffle(&mut rng::stream(cfg.seed, epoch as u32, u32::MAX));
        let (mut main_sum, mut sub_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in positives.chunks(cfg.batch_size).enumerate() {
            let plans = plan_batch(batch, &kg, &entities, cfg, agg, epoch as u32, b * cfg.batch_size)?;
            let out = batch_objective(&params, &spec, &plans)?;
            if !out.loss.is_finite() || !out.grads.all_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {b} (loss {})",
                    out.loss
                )));
            }
            main_sum += out.main_sum;
            sub_sum += out.subtask_sum;
            norm_sum += out.grads.norm();
            batches += 1;
            opt.step(&mut params, &out.grads);
            if !params.all_finite() {
                return Err(Error::Diverged(format!(
                    "parameters became non-finite at epoch {epoch}, batch {b}"
                )));
            }
        }
        let n = positives.len() as f64;
        let mut record = EpochRecord {
            epoch,
            main_loss: main_sum / n,
            subtask_loss: sub_sum / n,
            grad_norm: norm_sum / batches as f64,
            seconds: 0.0,
            validation: None,
        };
        let mut stop = false;
        if let Some(validate) = &hooks.validate {
            if cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
                if let Some(v) = validate(&params)? {
                    record.validation = Some(v);
                    if report.best_validation.map_or(true, |b| v > b) {
                        report.best_validation = Some(v);
                        report.best_epoch = Some(epoch);
                        best = Some(params.clone());
                        since_best = 0;
                        if let Some(sink) = hooks.checkpoint.as_mut() {
                            sink(CheckpointKind::Best, epoch, &params)?;
                        }
                    } else {
                        since_best += 1;
                        stop = since_best >= cfg.patience;
                    }
                }
            }
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            if let Some(sink) = hooks.checkpoint.as_mut() {
                sink(CheckpointKind::Periodic, epoch, &params)?;
            }
        }
        record.seconds = started.elapsed().as_secs_f64();
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(&record);
        }
        report.epochs.push(record);
        if stop {
            report.stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.unwrap_or(params),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(s: u32, r: u32, o: u32) -> Triplet {
        Triplet::new(EntityId(s), RelationId(r), EntityId(o))
    }

    #[test]
    fn two_entity_corruption_has_one_choice() {
        let kg = KnowledgeGraph::new(2, 1, [t(0, 0, 1)]).unwrap();
        let ents = [EntityId(0), EntityId(1)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let n = corrupt(&t(0, 0, 1), &kg, &ents, &mut rng).unwrap();
            match n.side {
                Side::Object => assert_eq!(n.triplet, t(0, 0, 0)),
                Side::Subject => assert_eq!(n.triplet, t(1, 0, 1)),
            }
        }
    }

    #[test]
    fn corruption_changes_one_endpoint_and_is_balanced() {
        let triplets: Vec<Triplet> = (0..30).map(|i| t(i, i % 3, (i * 7 + 1) % 40)).collect();
        let kg = KnowledgeGraph::new(40, 3, triplets.clone()).unwrap();
        let ents: Vec<EntityId> = (0..40).map(EntityId).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut subjects = 0;
        for i in 0..10_000 {
            let pos = triplets[i % triplets.len()];
            let n = corrupt(&pos, &kg, &ents, &mut rng).unwrap();
            let changed = (n.triplet.subject != pos.subject) as u8 + (n.triplet.object != pos.object) as u8;
            assert!(changed <= 1);
            assert_eq!(n.triplet.relation, pos.relation);
            assert!(!kg.contains(&n.triplet));
            if n.side == Side::Subject {
                subjects += 1;
            }
        }
        let ratio = subjects as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn hinge_hand_values() {
        let mut tape = Tape::new();
        let pos = tape.constant(-1.0);
        let neg = tape.constant(-5.0);
        let h = hinge(&mut tape, pos, neg, 1.0).unwrap();
        assert_eq!(tape.scalar_value(h), 0.0);
        let h = hinge(&mut tape, pos, pos, 2.5).unwrap();
        assert_eq!(tape.scalar_value(h), 2.5);
    }

    fn toy_bundle() -> DatasetBundle {
        let names: Vec<String> = (0..6).map(|i| format!("e{i}")).collect();
        let vocab = Vocabulary::new(&names, ["a", "b"]).unwrap();
        let train = vec![
            t(0, 0, 1),
            t(1, 0, 2),
            t(2, 1, 3),
            t(3, 1, 4),
            t(4, 0, 5),
            t(5, 1, 0),
            t(0, 1, 3),
            t(2, 0, 4),
            t(1, 1, 5),
            t(3, 0, 0),
        ];
        DatasetBundle::transductive(vocab, train, Vec::new())
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let b = toy_bundle();
        let cfg = TrainConfig { dim: 4, ..TrainConfig::default() };
        let agg = AggregatorConfig::new(AggregatorKind::Mean);
        let params = init_params(&b, &cfg, &agg);
        let kg = b.train_graph().unwrap();
        let ents = kg.active_entities();
        let plans = plan_batch(kg.triplets(), &kg, &ents, &cfg, &agg, 1, 0).unwrap();
        let spec = LossSpec {
            table: None,
            aggregator: &agg,
            scorer: ScorerKind::TransE,
            margin: 1.0,
            subtask: true,
            l2_rate: 0.0,
        };
        let out = batch_objective(&params, &spec, &plans).unwrap();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = params.clone();
            let mut opt = Optimizer::new(kind, 0.0, &p);
            opt.step(&mut p, &out.grads);
            assert_eq!(p.get(ParamKey::EntityInput), params.get(ParamKey::EntityInput));
            assert_eq!(p.get(ParamKey::Relation), params.get(ParamKey::Relation));
            let (a, b) = (p.get(ParamKey::Transform), params.get(ParamKey::Transform));
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn subtask_equals_main_when_aggregation_is_identity() {
        // each entity's only neighbor is itself and the transform is zero,
        // so mean aggregation returns the input embedding unchanged
        let mut params = ParamStore::init(3, 2, 4, false, &mut ChaCha8Rng::seed_from_u64(1));
        params.get_mut(ParamKey::Transform).data.iter_mut().for_each(|x| *x = 0.0);
        let agg = AggregatorConfig { neighbor_budget: 1, ..AggregatorConfig::new(AggregatorKind::Mean) };
        let plan = ItemPlan {
            positive: t(0, 0, 1),
            subject: EncodePlan { query: RelationId(0), sample: NeighborSample::from_entries(EntityId(0), vec![(RelationId(0), EntityId(0))]), order: None },
            object: EncodePlan { query: RelationId(1), sample: NeighborSample::from_entries(EntityId(1), vec![(RelationId(0), EntityId(1))]), order: None },
            negatives: vec![NegativePlan {
                negative: Negative { triplet: t(0, 0, 2), side: Side::Object },
                fresh: EncodePlan { query: RelationId(1), sample: NeighborSample::from_entries(EntityId(2), vec![(RelationId(0), EntityId(2))]), order: None },
            }],
        };
        let spec = LossSpec { table: None, aggregator: &agg, scorer: ScorerKind::DistMult, margin: 0.7, subtask: true, l2_rate: 0.0 };
        let mut tape = Tape::new();
        let (_, main) = main_loss(&mut tape, &params, &spec, &plan).unwrap();
        let (_, sub) = subtask_loss(&mut tape, &params, &spec, &plan).unwrap();
        assert_eq!(main, sub);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let b = toy_bundle();
        let cfg = TrainConfig {
            dim: 8,
            epochs: 200,
            batch_size: 8,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let agg = AggregatorConfig::new(AggregatorKind::Mean);
        for seed in 0..3 {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let a = train(&b, None, &cfg, &agg, ScorerKind::TransE).unwrap();
            let trace = a.report.loss_trace();
            assert!(trace.last().unwrap() < trace.first().unwrap(), "{trace:?}");
            if seed == 0 {
                let again = train(&b, None, &cfg, &agg, ScorerKind::TransE).unwrap();
                assert_eq!(again.report.loss_trace(), trace);
                assert_eq!(again.params, a.params);
            }
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let vocab = Vocabulary::new(["a", "b"], ["r"]).unwrap();
        let b = DatasetBundle::transductive(vocab, Vec::new(), Vec::new());
        let agg = AggregatorConfig::new(AggregatorKind::Mean);
        assert!(train(&b, None, &TrainConfig { dim: 2, ..TrainConfig::default() }, &agg, ScorerKind::TransE).is_err());
    }

    #[test]
    fn masked_target_edge_is_hidden() {
        let b = toy_bundle();
        let kg = b.train_graph().unwrap();
        let cfg = TrainConfig::default();
        let agg = AggregatorConfig::new(AggregatorKind::Mean);
        let pos = t(0, 0, 1);
        let plan = plan_item(&pos, &kg, &kg.active_entities(), &cfg, &agg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(!plan.subject.sample.valid().any(|x| x == (RelationId(0), EntityId(1))));
        assert!(!plan.object.sample.valid().any(|x| x == (RelationId(2), EntityId(0))));
        let open = TrainConfig { mask_target_edge: false, ..cfg };
        let plan = plan_item(&pos, &kg, &kg.active_entities(), &open, &agg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(plan.subject.sample.valid().any(|x| x == (RelationId(0), EntityId(1))));
    }
}
