//! Filtered link-prediction ranking and threshold-based triplet classification.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{DatasetBundle, LabeledTriplet};
use crate::decoder::{score_vectors, ScorerKind};
use crate::diff::{ParamKey, ParamStore};
use crate::encoder::{encode, AggregatorConfig, EncodedEntity};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triplet};
use crate::rng;
use crate::rules::ConfidenceTable;

/// Which endpoint of a triplet is replaced by candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Subject,
    Object,
}

/// Graphs and index sets derived once from a bundle.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub train_graph: KnowledgeGraph,
    pub aux_graph: KnowledgeGraph,
    pub unseen: HashSet<EntityId>,
    /// Seen entities, the candidate set, sorted.
    pub seen: Vec<EntityId>,
    pub known: HashSet<Triplet>,
    num_base_relations: usize,
}

impl EvalData {
    pub fn new(bundle: &DatasetBundle) -> Result<Self> {
        Ok(Self {
            train_graph: bundle.train_graph()?,
            aux_graph: bundle.auxiliary_graph()?,
            unseen: bundle.unseen.iter().copied().collect(),
            seen: bundle.seen_entities(),
            known: bundle.all_triplets(),
            num_base_relations: bundle.num_base_relations(),
        })
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    /// Unseen entities draw neighbors from the auxiliary graph, the rest from
    /// the training graph.
    pub fn graph_for(&self, e: EntityId) -> &KnowledgeGraph {
        if self.unseen.contains(&e) {
            &self.aux_graph
        } else {
            &self.train_graph
        }
    }

    /// The side to predict: the seen endpoint of a triplet with one unseen
    /// endpoint, or the object otherwise.
    pub fn predicted_side(&self, t: &Triplet) -> Side {
        if self.unseen.contains(&t.object) && !self.unseen.contains(&t.subject) {
            Side::Subject
        } else {
            Side::Object
        }
    }
}

/// Query relation used when encoding an endpoint: `q` for subjects, `q⁻¹`
/// for objects.
pub fn encoding_relation(q: RelationId, side: Side, num_base_relations: usize) -> RelationId {
    match side {
        Side::Subject => q,
        Side::Object => q.inverse(num_base_relations),
    }
}

/// A trained model bound to evaluation data.
pub struct Evaluator<'a> {
    pub data: &'a EvalData,
    pub params: &'a ParamStore,
    pub table: Option<&'a ConfidenceTable>,
    pub aggregator: &'a AggregatorConfig,
    pub scorer: ScorerKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub triplet: Triplet,
    pub side: Side,
    /// 1-based filtered rank.
    pub rank: usize,
    /// Candidates left after filtering, truth included.
    pub candidates: usize,
    /// The given endpoint had no neighbors and was encoded as zeros.
    pub zero_neighbors: bool,
}

impl<'a> Evaluator<'a> {
    /// Output embedding of `e` when it sits on `side` of a `q` triplet.
    /// Sampling is seeded by entity and relation only.
    pub fn embed(&self, e: EntityId, q: RelationId, side: Side) -> Result<EncodedEntity> {
        let r = encoding_relation(q, side, self.data.num_base_relations);
        let mut rng = rng::stream(self.seed, e.0, r.0);
        encode(e, r, self.data.graph_for(e), self.table, self.params, self.aggregator, &mut rng)
    }

    pub fn score_embeddings(&self, s: &[f64], q: RelationId, o: &[f64]) -> Result<f64> {
        let rel = self.params.get(ParamKey::Relation);
        if q.index() >= rel.rows {
            return Err(Error::Eval(format!("relation {} has no embedding", q.0)));
        }
        score_vectors(s, rel.row(q.index()), o, self.scorer)
    }

    pub fn score_triplet(&self, t: &Triplet) -> Result<f64> {
        let s = self.embed(t.subject, t.relation, Side::Subject)?;
        let o = self.embed(t.object, t.relation, Side::Object)?;
        self.score_embeddings(&s.embedding, t.relation, &o.embedding)
    }

    /// Embeddings of every seen entity placed on `side` of a `q` triplet.
    pub fn candidate_embeddings(&self, q: RelationId, side: Side) -> Result<Vec<Vec<f64>>> {
        self.data
            .seen
            .par_iter()
            .map(|&c| self.embed(c, q, side).map(|e| e.embedding))
            .collect()
    }

    fn rank_with(&self, t: &Triplet, side: Side, candidates: &[Vec<f64>]) -> Result<RankResult> {
        let (given, truth) = match side {
            Side::Object => (t.subject, t.object),
            Side::Subject => (t.object, t.subject),
        };
        let given_side = match side {
            Side::Object => Side::Subject,
            Side::Subject => Side::Object,
        };
        let anchor = self.embed(given, t.relation, given_side)?;
        let truth_pos = self
            .data
            .seen
            .binary_search(&truth)
            .map_err(|_| Error::Eval(format!("ground truth entity {} is not a candidate", truth.0)))?;
        let score_of = |c: &[f64]| match side {
            Side::Object => self.score_embeddings(&anchor.embedding, t.relation, c),
            Side::Subject => self.score_embeddings(c, t.relation, &anchor.embedding),
        };
        let truth_score = score_of(&candidates[truth_pos])?;
        if !truth_score.is_finite() {
            return Err(Error::Eval("non-finite score".into()));
        }
        let (mut better, mut ties, mut kept) = (0usize, 0usize, 1usize);
        for (i, &c) in self.data.seen.iter().enumerate() {
            if i == truth_pos {
                continue;
            }
            let candidate = match side {
                Side::Object => Triplet::new(t.subject, t.relation, c),
                Side::Subject => Triplet::new(c, t.relation, t.object),
            };
            if self.data.known.contains(&candidate) {
                continue;
            }
            kept += 1;
            let s = score_of(&candidates[i])?;
            if s > truth_score {
                better += 1;
            } else if s == truth_score {
                ties += 1;
            }
        }
        Ok(RankResult {
            triplet: *t,
            side,
            rank: 1 + better + ties.div_ceil(2),
            candidates: kept,
            zero_neighbors: anchor.zero_neighbors,
        })
    }

    /// Filtered rank of the missing `side` of `t` among seen entities.
    pub fn rank_query(&self, t: &Triplet, side: Side) -> Result<RankResult> {
        let candidates = self.candidate_embeddings(t.relation, side)?;
        self.rank_with(t, side, &candidates)
    }

    /// Ranks every triplet, predicting the side chosen by
    /// [`EvalData::predicted_side`]. Results follow the input order.
    pub fn rank_all(&self, triplets: &[Triplet]) -> Result<Vec<RankResult>> {
        let groups: BTreeSet<(RelationId, Side)> = triplets
            .iter()
            .map(|t| (t.relation, self.data.predicted_side(t)))
            .collect();
        let mut tables = HashMap::new();
        for (q, side) in groups {
            tables.insert((q, side), self.candidate_embeddings(q, side)?);
        }
        triplets
            .par_iter()
            .map(|t| {
                let side = self.data.predicted_side(t);
                self.rank_with(t, side, &tables[&(t.relation, side)])
            })
            .collect()
    }

    /// Link prediction over `triplets`.
    pub fn link_prediction(&self, triplets: &[Triplet]) -> Result<LinkPredictionReport> {
        let ranks = self.rank_all(triplets)?;
        let summary = MetricsSummary::from_ranks(ranks.iter().map(|r| r.rank))?;
        let zero_neighbor_queries = ranks.iter().filter(|r| r.zero_neighbors).count();
        Ok(LinkPredictionReport {
            ranks,
            summary,
            zero_neighbor_queries,
        })
    }

    /// MRR over the validation triplets whose endpoints are both seen,
    /// optionally capped to the first `limit` of them.
    pub fn validation_mrr(&self, validation: &[Triplet], limit: Option<usize>) -> Result<Option<f64>> {
        let seen: HashSet<EntityId> = self.data.seen.iter().copied().collect();
        let usable: Vec<Triplet> = validation
            .iter()
            .filter(|t| seen.contains(&t.subject) && seen.contains(&t.object))
            .take(limit.unwrap_or(usize::MAX))
            .copied()
            .collect();
        if usable.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.link_prediction(&usable)?.summary.mrr))
    }

    pub fn score_labeled(&self, items: &[LabeledTriplet]) -> Result<Vec<ScoredLabel>> {
        items
            .par_iter()
            .map(|l| {
                let score = self.score_triplet(&l.triplet)?;
                if !score.is_finite() {
                    return Err(Error::Eval("non-finite score".into()));
                }
                Ok(ScoredLabel {
                    relation: l.triplet.relation,
                    score,
                    label: l.label,
                })
            })
            .collect()
    }

    pub fn tune_thresholds(&self, valid: &[LabeledTriplet]) -> Result<ThresholdTable> {
        tune_thresholds(&self.score_labeled(valid)?)
    }

    pub fn classify(&self, test: &[LabeledTriplet], thresholds: &ThresholdTable) -> Result<Classification> {
        Ok(classify(&self.score_labeled(test)?, thresholds))
    }
}

#[derive(Debug, Clone)]
pub struct LinkPredictionReport {
    pub ranks: Vec<RankResult>,
    pub summary: MetricsSummary,
    pub zero_neighbor_queries: usize,
}

/// Ranking metrics; hits are proportions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    pub count: usize,
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl MetricsSummary {
    pub fn from_ranks<I: IntoIterator<Item = usize>>(ranks: I) -> Result<Self> {
        let (mut n, mut sum, mut rr) = (0usize, 0.0, 0.0);
        let mut hits = [0usize; 3];
        for r in ranks {
            if r == 0 {
                return Err(Error::Eval("ranks are 1-based".into()));
            }
            n += 1;
            sum += r as f64;
            rr += 1.0 / r as f64;
            for (h, k) in hits.iter_mut().zip([1, 3, 10]) {
                if r <= k {
                    *h += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::Eval("no ranked queries".into()));
        }
        let nf = n as f64;
        Ok(Self {
            count: n,
            mr: sum / nf,
            mrr: rr / nf,
            hits1: hits[0] as f64 / nf,
            hits3: hits[1] as f64 / nf,
            hits10: hits[2] as f64 / nf,
        })
    }
}

pub const METRICS_HEADER: &str = "model,dataset,MR,MRR,hits1,hits3,hits10";

/// One `metrics.csv` data row; hits are written as percentages.
pub fn metrics_row(model: &str, dataset: &str, m: &MetricsSummary) -> String {
    format!(
        "{model},{dataset},{:.4},{:.6},{:.4},{:.4},{:.4}",
        m.mr,
        m.mrr,
        100.0 * m.hits1,
        100.0 * m.hits3,
        100.0 * m.hits10
    )
}

pub fn write_metrics_csv(path: &Path, rows: &[(String, String, MetricsSummary)]) -> Result<()> {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for (model, dataset, m) in rows {
        let _ = writeln!(s, "{}", metrics_row(model, dataset, m));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Per-query rank trace: `subject relation object side rank candidates`.
pub fn write_rank_trace(path: &Path, bundle: &DatasetBundle, ranks: &[RankResult]) -> Result<()> {
    let mut s = String::from("subject\trelation\tobject\tpredicted\trank\tcandidates\n");
    for r in ranks {
        let t = bundle.vocab.decode(&r.triplet)?;
        let side = match r.side {
            Side::Subject => "subject",
            Side::Object => "object",
        };
        let _ = writeln!(s, "{t}\t{side}\t{}\t{}", r.rank, r.candidates);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredLabel {
    pub relation: RelationId,
    pub score: f64,
    pub label: bool,
}

/// Per-relation thresholds with a global fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub per_relation: BTreeMap<RelationId, f64>,
    pub fallback: f64,
}

impl ThresholdTable {
    pub fn get(&self, r: RelationId) -> f64 {
        self.per_relation.get(&r).copied().unwrap_or(self.fallback)
    }
}

/// Threshold maximizing accuracy when predicting positive iff `score ≥ δ`.
///
/// Candidates are `min - 1`, midpoints between consecutive distinct scores and
/// `max + 1`; ties go to the smallest candidate. Returns `(δ, correct)`.
pub fn best_threshold(items: &[(f64, bool)]) -> Option<(f64, usize)> {
    if items.is_empty() {
        return None;
    }
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = sorted.iter().filter(|x| x.1).count();
    let mut best = (sorted[0].0 - 1.0, positives);
    let mut correct = positives as i64;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            correct += if sorted[i].1 { -1 } else { 1 };
            i += 1;
        }
        let delta = if i < sorted.len() {
            (v + sorted[i].0) / 2.0
        } else {
            v + 1.0
        };
        if correct as usize > best.1 {
            best = (delta, correct as usize);
        }
    }
    Some(best)
}

pub fn tune_thresholds(scored: &[ScoredLabel]) -> Result<ThresholdTable> {
    let all: Vec<(f64, bool)> = scored.iter().map(|s| (s.score, s.label)).collect();
    let (fallback, _) =
        best_threshold(&all).ok_or_else(|| Error::Eval("validation set is empty".into()))?;
    let mut groups: BTreeMap<RelationId, Vec<(f64, bool)>> = BTreeMap::new();
    for s in scored {
        groups.entry(s.relation).or_default().push((s.score, s.label));
    }
    let per_relation = groups
        .into_iter()
        .filter_map(|(r, items)| best_threshold(&items).map(|(d, _)| (r, d)))
        .collect();
    Ok(ThresholdTable {
        per_relation,
        fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

pub fn classify(scored: &[ScoredLabel], thresholds: &ThresholdTable) -> Classification {
    let correct = scored
        .iter()
        .filter(|s| (s.score >= thresholds.get(s.relation)) == s.label)
        .count();
    Classification {
        correct,
        total: scored.len(),
        accuracy: if scored.is_empty() {
            0.0
        } else {
            correct as f64 / scored.len() as f64
        },
    }
}
