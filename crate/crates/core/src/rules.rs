//! Relation co-occurrence rules and the logic attention weights derived from them.
//!
//! The confidence of `r1 ⇒ r2` is the fraction of entities having `r1` among
//! their neighboring relations that also have `r2`. Counting runs over the
//! inverse-augmented graph, so `r` and `r⁻¹` are distinct relations.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NeighborSample, RelationId, Vocabulary};

/// Default floor on the redundancy denominator.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Sparse map `(r1, r2) → P(r1 ⇒ r2)`; absent pairs have confidence 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    num_relations: usize,
    support: Vec<u64>,
    confidence: HashMap<(RelationId, RelationId), f64>,
}

impl ConfidenceTable {
    pub fn empty(num_relations: usize) -> Self {
        Self {
            num_relations,
            support: vec![0; num_relations],
            confidence: HashMap::new(),
        }
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Number of entities having `r` as a neighboring relation.
    pub fn support(&self, r: RelationId) -> u64 {
        self.support.get(r.index()).copied().unwrap_or(0)
    }

    pub fn get(&self, premise: RelationId, conclusion: RelationId) -> f64 {
        self.confidence
            .get(&(premise, conclusion))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.confidence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidence.is_empty()
    }

    /// Stored pairs in `(r1, r2)` order.
    pub fn entries(&self) -> Vec<(RelationId, RelationId, f64)> {
        let mut out: Vec<_> = self
            .confidence
            .iter()
            .map(|(&(a, b), &c)| (a, b, c))
            .collect();
        out.sort_by_key(|&(a, b, _)| (a, b));
        out
    }

    pub fn insert(&mut self, premise: RelationId, conclusion: RelationId, confidence: f64) -> Result<()> {
        if premise.index() >= self.num_relations || conclusion.index() >= self.num_relations {
            return Err(Error::Rules(format!(
                "relation pair ({}, {}) outside vocabulary of {}",
                premise.0, conclusion.0, self.num_relations
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Rules(format!("confidence {confidence} outside [0, 1]")));
        }
        if confidence > 0.0 {
            self.confidence.insert((premise, conclusion), confidence);
        }
        Ok(())
    }
}

/// Mines every nonzero `P(r1 ⇒ r2)` over the entities of an augmented graph.
///
/// Each entity contributes its distinct relation set; pair counts are
/// accumulated per chunk in parallel and summed. Integer counts make the
/// merge order irrelevant to the result.
pub fn mine_confidence(kg: &KnowledgeGraph) -> Result<ConfidenceTable> {
    if !kg.is_augmented() {
        return Err(Error::Rules("rule mining requires an inverse-augmented graph".into()));
    }
    let nr = kg.num_relations();
    let entities: Vec<_> = (0..kg.num_entities()).collect();
    let (support, pairs) = entities
        .par_chunks(256)
        .map(|chunk| {
            let mut support = vec![0u64; nr];
            let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
            for &e in chunk {
                let nb = kg
                    .neighborhood(crate::kg::EntityId(e as u32))
                    .expect("entity index in range");
                let rels = nb.relations();
                for &a in &rels {
                    support[a.index()] += 1;
                    for &b in &rels {
                        *pairs.entry((a.0, b.0)).or_insert(0) += 1;
                    }
                }
            }
            (support, pairs)
        })
        .reduce(
            || (vec![0u64; nr], HashMap::new()),
            |(mut sa, mut pa), (sb, pb)| {
                sa.iter_mut().zip(&sb).for_each(|(a, b)| *a += b);
                for (k, v) in pb {
                    *pa.entry(k).or_insert(0) += v;
                }
                (sa, pa)
            },
        );
    let confidence = pairs
        .into_iter()
        .map(|((a, b), count)| {
            let c = count as f64 / support[a as usize] as f64;
            ((RelationId(a), RelationId(b)), c)
        })
        .collect();
    Ok(ConfidenceTable {
        num_relations: nr,
        support,
        confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogicMode {
    /// `P(r ⇒ q) / max(...)` as is.
    Raw,
    /// Raw weights divided by their sum over real neighbors.
    #[default]
    Normalized,
}

impl LogicMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(LogicMode::Raw),
            "normalized" => Some(LogicMode::Normalized),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogicMode::Raw => "raw",
            LogicMode::Normalized => "normalized",
        }
    }
}

/// One nonnegative weight per slot of a [`NeighborSample`]; padding gets 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicWeightVector {
    pub weights: Vec<f64>,
    pub mode: LogicMode,
}

/// Logic attention for every neighbor of a sample under query `q`.
///
/// A neighbor reached through `r` is promoted by `P(r ⇒ q)` and demoted by the
/// strongest `P(r' ⇒ r)` over the other relations `r'` present in the sample.
/// With no other relation present the denominator is 1; it never drops below
/// `epsilon`.
pub fn logic_attention(
    table: &ConfidenceTable,
    sample: &NeighborSample,
    q: RelationId,
    mode: LogicMode,
    epsilon: f64,
) -> Result<LogicWeightVector> {
    if q.index() >= table.num_relations() {
        return Err(Error::Rules(format!("query relation {} unknown", q.0)));
    }
    let present: BTreeSet<RelationId> = sample.valid().map(|(r, _)| r).collect();
    let mut per_relation: HashMap<RelationId, f64> = HashMap::with_capacity(present.len());
    for &r in &present {
        let redundancy = present
            .iter()
            .filter(|&&other| other != r)
            .map(|&other| table.get(other, r))
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
            .unwrap_or(1.0);
        per_relation.insert(r, table.get(r, q) / redundancy.max(epsilon));
    }
    let mut weights: Vec<f64> = sample
        .entries
        .iter()
        .zip(&sample.mask)
        .map(|(&(r, _), &valid)| if valid { per_relation[&r] } else { 0.0 })
        .collect();
    if mode == LogicMode::Normalized {
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
    }
    Ok(LogicWeightVector { weights, mode })
}

/// Writes `r1\tr2\tconfidence` lines using relation names.
pub fn export_table(table: &ConfidenceTable, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut s = String::new();
    for (a, b, c) in table.entries() {
        let name = |r: RelationId| {
            vocab
                .relation_name(r)
                .ok_or_else(|| Error::Rules(format!("relation {} missing from vocabulary", r.0)))
        };
        // {:?} prints the shortest representation that parses back exactly
        writeln!(s, "{}\t{}\t{:?}", name(a)?, name(b)?, c).expect("string write");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`export_table`]. Support counts are not stored
/// in the file and come back as zero, except that any `P(r ⇒ r) > 0` row marks
/// `r` as supported.
pub fn import_table(vocab: &Vocabulary, path: &Path) -> Result<ConfidenceTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = ConfidenceTable::empty(vocab.num_relations());
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Rules(format!("{}:{}: expected 3 fields", path.display(), i + 1)));
        }
        let rel = |name: &str| {
            vocab
                .relation_id(name)
                .ok_or_else(|| Error::Rules(format!("{}:{}: unknown relation {name}", path.display(), i + 1)))
        };
        let (a, b) = (rel(fields[0])?, rel(fields[1])?);
        let c: f64 = fields[2]
            .parse()
            .map_err(|_| Error::Rules(format!("{}:{}: bad confidence", path.display(), i + 1)))?;
        table.insert(a, b, c)?;
        if a == b {
            table.support[a.index()] = table.support[a.index()].max(1);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityId, Triplet};

    fn rel(i: u32) -> RelationId {
        RelationId(i)
    }

    /// N_R(a) = {r1, r2}, N_R(b) = {r1}, N_R(c) = {r2}, realized with a
    /// subject-only layout: relations 0 and 1 point from a, b, c into sink entities.
    fn three_entity_graph() -> KnowledgeGraph {
        let (a, b, c, x) = (EntityId(0), EntityId(1), EntityId(2), EntityId(3));
        KnowledgeGraph::new_augmented(
            4,
            2,
            [
                Triplet::new(a, rel(0), x),
                Triplet::new(a, rel(1), x),
                Triplet::new(b, rel(0), x),
                Triplet::new(c, rel(1), x),
            ],
        )
        .unwrap()
    }

    #[test]
    fn confidence_by_hand() {
        let t = mine_confidence(&three_entity_graph()).unwrap();
        assert_eq!(t.get(rel(0), rel(1)), 0.5);
        assert_eq!(t.get(rel(1), rel(0)), 0.5);
        assert_eq!(t.get(rel(0), rel(0)), 1.0);
        assert_eq!(t.support(rel(0)), 2);
        // the sink x only has inverse relations: P(0⁻¹ ⇒ 1⁻¹) = 1
        assert_eq!(t.get(rel(2), rel(3)), 1.0);
        assert_eq!(t.get(rel(0), rel(2)), 0.0);
    }

    #[test]
    fn rejects_unaugmented_graph() {
        let kg = KnowledgeGraph::new(2, 1, [Triplet::new(EntityId(0), rel(0), EntityId(1))]).unwrap();
        assert!(mine_confidence(&kg).is_err());
    }

    fn table(entries: &[(u32, u32, f64)], n: usize) -> ConfidenceTable {
        let mut t = ConfidenceTable::empty(n);
        for &(a, b, c) in entries {
            t.insert(rel(a), rel(b), c).unwrap();
        }
        t
    }

    #[test]
    fn lone_relation_uses_unit_denominator() {
        let t = table(&[(0, 2, 0.8)], 4);
        let s = NeighborSample::from_entries(EntityId(0), vec![(rel(0), EntityId(1))]);
        let w = logic_attention(&t, &s, rel(2), LogicMode::Raw, DEFAULT_EPSILON).unwrap();
        assert_eq!(w.weights, vec![0.8]);
        let w = logic_attention(&t, &s, rel(2), LogicMode::Normalized, DEFAULT_EPSILON).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn implied_relation_is_demoted() {
        // r_a = 0, r_b = 1, q = 2
        let t = table(&[(0, 2, 0.6), (1, 2, 0.6), (1, 0, 0.9), (0, 1, 0.1)], 4);
        let s = NeighborSample::from_entries(
            EntityId(0),
            vec![(rel(0), EntityId(1)), (rel(1), EntityId(2))],
        );
        let w = logic_attention(&t, &s, rel(2), LogicMode::Raw, DEFAULT_EPSILON).unwrap();
        assert!((w.weights[0] - 0.6 / 0.9).abs() < 1e-12);
        assert!((w.weights[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_numerators_give_zero_weights() {
        let t = table(&[(0, 1, 0.5)], 4);
        let s = NeighborSample::from_entries(
            EntityId(0),
            vec![(rel(0), EntityId(1)), (rel(1), EntityId(2))],
        );
        for mode in [LogicMode::Raw, LogicMode::Normalized] {
            let w = logic_attention(&t, &s, rel(3), mode, DEFAULT_EPSILON).unwrap();
            assert_eq!(w.weights, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn epsilon_floor_and_padding() {
        let t = table(&[(0, 2, 0.5)], 4);
        let mut s = NeighborSample::from_entries(
            EntityId(0),
            vec![(rel(0), EntityId(1)), (rel(1), EntityId(2))],
        );
        s.entries.push((rel(0), EntityId(0)));
        s.mask.push(false);
        let w = logic_attention(&t, &s, rel(2), LogicMode::Raw, DEFAULT_EPSILON).unwrap();
        assert_eq!(w.weights, vec![0.5 / DEFAULT_EPSILON, 0.0, 0.0]);
        assert!(logic_attention(&t, &s, rel(4), LogicMode::Raw, DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn duplicate_relations_share_weight() {
        let t = table(&[(0, 2, 0.7), (1, 2, 0.2), (1, 0, 0.3)], 4);
        let s = NeighborSample::from_entries(
            EntityId(0),
            vec![(rel(0), EntityId(1)), (rel(1), EntityId(2)), (rel(0), EntityId(3))],
        );
        let w = logic_attention(&t, &s, rel(2), LogicMode::Raw, DEFAULT_EPSILON).unwrap();
        assert_eq!(w.weights[0], w.weights[2]);
    }

    #[test]
    fn export_import_round_trip() {
        let vocab = Vocabulary::new(["a", "b"], ["p", "q"]).unwrap();
        let t = table(&[(0, 0, 1.0), (0, 3, 1.0 / 3.0), (2, 1, 0.123456789012345)], 4);
        let f = tempfile::NamedTempFile::new().unwrap();
        export_table(&t, &vocab, f.path()).unwrap();
        let back = import_table(&vocab, f.path()).unwrap();
        for (a, b, c) in t.entries() {
            assert!((back.get(a, b) - c).abs() <= 1e-12);
        }
        assert_eq!(back.len(), t.len());
        let text = fs::read_to_string(f.path()).unwrap();
        assert!(text.contains("p\tq**INV\t"));
    }
}
