//! Triplet storage, vocabularies, inverse augmentation and neighborhood queries.
//!
//! Relation ids live in an augmented space of size `2m`: the `m` relations read
//! from data occupy `[0, m)` and their inverses occupy `[m, 2m)`. A graph starts
//! out holding only the raw facts; [`KnowledgeGraph::augment_inverses`] adds
//! `(o, r⁻¹, s)` for every `(s, r, o)` and rebuilds the adjacency lists.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::KgError;

/// Suffix marking an inverse relation in serialized names.
pub const INVERSE_SUFFIX: &str = "**INV";

pub type Result<T> = std::result::Result<T, KgError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index into the augmented relation vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// `num_base` is `m`, the count of non-inverse relations.
    pub fn is_inverse(self, num_base: usize) -> bool {
        self.index() >= num_base
    }

    pub fn base(self, num_base: usize) -> RelationId {
        if self.is_inverse(num_base) {
            RelationId((self.index() - num_base) as u32)
        } else {
            self
        }
    }

    pub fn inverse(self, num_base: usize) -> RelationId {
        if self.is_inverse(num_base) {
            RelationId((self.index() - num_base) as u32)
        } else {
            RelationId((self.index() + num_base) as u32)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triplet {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

/// A triplet still expressed in surface names, as read from a TSV file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NamedTriplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl NamedTriplet {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        Self {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
        }
    }
}

impl fmt::Display for NamedTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.subject, self.relation, self.object)
    }
}

/// Bijective name ↔ id maps, ordered lexicographically by name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
}

impl Vocabulary {
    pub fn new<E, R, S, T>(entities: E, relations: R) -> Result<Self>
    where
        E: IntoIterator<Item = S>,
        R: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let entities: BTreeSet<String> = entities
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect();
        let relations: BTreeSet<String> = relations
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect();
        for name in entities.iter().chain(relations.iter()) {
            if name.contains(INVERSE_SUFFIX) {
                return Err(KgError::ReservedName {
                    line: 0,
                    name: name.clone(),
                });
            }
        }
        let entities: Vec<String> = entities.into_iter().collect();
        let relations: Vec<String> = relations.into_iter().collect();
        let entity_index = entities
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), EntityId(i as u32)))
            .collect();
        let relation_index = relations
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), RelationId(i as u32)))
            .collect();
        Ok(Self {
            entities,
            relations,
            entity_index,
            relation_index,
        })
    }

    /// Vocabulary covering every name used by the given triplets.
    pub fn from_triplets<'a, I>(triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a NamedTriplet>,
    {
        let mut entities = BTreeSet::new();
        let mut relations = BTreeSet::new();
        for t in triplets {
            entities.insert(t.subject.as_str());
            entities.insert(t.object.as_str());
            relations.insert(t.relation.as_str());
        }
        Self::new(entities, relations)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// `m`: relations as read from data, without inverses.
    pub fn num_base_relations(&self) -> usize {
        self.relations.len()
    }

    /// `2m`: size of the augmented relation space.
    pub fn num_relations(&self) -> usize {
        2 * self.relations.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id.index()).map(String::as_str)
    }

    /// Resolves base names and `name**INV` inverse names.
    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        match name.strip_suffix(INVERSE_SUFFIX) {
            Some(base) => self
                .relation_index
                .get(base)
                .map(|r| r.inverse(self.num_base_relations())),
            None => self.relation_index.get(name).copied(),
        }
    }

    pub fn relation_name(&self, id: RelationId) -> Option<String> {
        let m = self.num_base_relations();
        if id.index() >= 2 * m {
            return None;
        }
        let base = &self.relations[id.base(m).index()];
        Some(if id.is_inverse(m) {
            format!("{base}{INVERSE_SUFFIX}")
        } else {
            base.clone()
        })
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn encode(&self, t: &NamedTriplet) -> Result<Triplet> {
        let entity = |n: &str| {
            self.entity_id(n)
                .ok_or_else(|| KgError::UnknownEntity(n.to_string()))
        };
        let relation = self
            .relation_id(&t.relation)
            .ok_or_else(|| KgError::UnknownRelation(t.relation.clone()))?;
        Ok(Triplet::new(entity(&t.subject)?, relation, entity(&t.object)?))
    }

    pub fn decode(&self, t: &Triplet) -> Result<NamedTriplet> {
        let entity = |e: EntityId| {
            self.entity_name(e)
                .map(str::to_string)
                .ok_or_else(|| KgError::UnknownEntity(format!("#{}", e.0)))
        };
        Ok(NamedTriplet {
            subject: entity(t.subject)?,
            relation: self
                .relation_name(t.relation)
                .ok_or_else(|| KgError::UnknownRelation(format!("#{}", t.relation.0)))?,
            object: entity(t.object)?,
        })
    }

    /// Hex SHA-256 over the ordered entity and relation names.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entities {
            h.update(e.as_bytes());
            h.update(b"\n");
        }
        h.update(b"--\n");
        for r in &self.relations {
            h.update(r.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Parses `subject\trelation\tobject` lines. Blank lines are skipped.
pub fn parse_triplets(text: &str) -> Result<Vec<NamedTriplet>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        for f in &fields {
            if f.is_empty() {
                return Err(KgError::Parse {
                    line: i + 1,
                    message: "empty field".into(),
                });
            }
            if f.contains(INVERSE_SUFFIX) {
                return Err(KgError::ReservedName {
                    line: i + 1,
                    name: f.to_string(),
                });
            }
        }
        out.push(NamedTriplet::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Reads a triplet TSV file without deduplication.
pub fn read_named_triplets(path: &Path) -> Result<Vec<NamedTriplet>> {
    let text = fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    parse_triplets(&text)
}

pub fn write_named_triplets(path: &Path, triplets: &[NamedTriplet]) -> Result<()> {
    let mut s = String::new();
    for t in triplets {
        s.push_str(&t.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| KgError::io(path, e))
}

/// Drops repeated triplets, keeping first occurrences in order.
pub fn dedup_named(triplets: Vec<NamedTriplet>) -> Vec<NamedTriplet> {
    let mut seen = HashSet::with_capacity(triplets.len());
    triplets
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Loads a TSV file into a fresh, non-augmented graph with its own vocabulary.
pub fn load_triplets(path: &Path) -> Result<(Vocabulary, KnowledgeGraph)> {
    let named = dedup_named(read_named_triplets(path)?);
    if named.is_empty() {
        return Err(KgError::EmptyGraph);
    }
    let vocab = Vocabulary::from_triplets(&named)?;
    let triplets = named
        .iter()
        .map(|t| vocab.encode(t))
        .collect::<Result<Vec<_>>>()?;
    let kg = KnowledgeGraph::new(vocab.num_entities(), vocab.num_base_relations(), triplets)?;
    Ok((vocab, kg))
}

/// Triplet store with a membership index and per-entity adjacency.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_base_relations: usize,
    triplets: Vec<Triplet>,
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
    triplet_set: HashSet<Triplet>,
    augmented: bool,
}

impl KnowledgeGraph {
    /// Builds a non-augmented graph. Duplicates are dropped; base relations only.
    pub fn new<I>(num_entities: usize, num_base_relations: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = Triplet>,
    {
        let mut set = HashSet::new();
        let mut kept = Vec::new();
        for t in triplets {
            if t.subject.index() >= num_entities || t.object.index() >= num_entities {
                return Err(KgError::UnknownEntity(format!(
                    "#{}",
                    t.subject.0.max(t.object.0)
                )));
            }
            if t.relation.index() >= num_base_relations {
                return Err(KgError::UnknownRelation(format!("#{}", t.relation.0)));
            }
            if set.insert(t) {
                kept.push(t);
            }
        }
        let mut kg = Self {
            num_entities,
            num_base_relations,
            triplets: kept,
            adjacency: Vec::new(),
            triplet_set: set,
            augmented: false,
        };
        kg.rebuild_adjacency();
        Ok(kg)
    }

    /// Shorthand for `new(..)?.augment_inverses()`.
    pub fn new_augmented<I>(num_entities: usize, num_base_relations: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = Triplet>,
    {
        Self::new(num_entities, num_base_relations, triplets)?.augment_inverses()
    }

    /// Adds `(o, r⁻¹, s)` for every stored `(s, r, o)`.
    pub fn augment_inverses(mut self) -> Result<Self> {
        if self.augmented {
            return Err(KgError::AlreadyAugmented);
        }
        let m = self.num_base_relations;
        let inverses: Vec<Triplet> = self
            .triplets
            .iter()
            .map(|t| Triplet::new(t.object, t.relation.inverse(m), t.subject))
            .collect();
        for t in inverses {
            if self.triplet_set.insert(t) {
                self.triplets.push(t);
            }
        }
        self.augmented = true;
        self.rebuild_adjacency();
        Ok(self)
    }

    fn rebuild_adjacency(&mut self) {
        let mut adjacency = vec![Vec::new(); self.num_entities];
        for t in &self.triplets {
            adjacency[t.subject.index()].push((t.relation, t.object));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        self.adjacency = adjacency;
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    pub fn num_relations(&self) -> usize {
        2 * self.num_base_relations
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.triplet_set.contains(t)
    }

    pub fn neighborhood(&self, e: EntityId) -> Result<Neighborhood<'_>> {
        let entries = self
            .adjacency
            .get(e.index())
            .ok_or_else(|| KgError::UnknownEntity(format!("#{}", e.0)))?;
        Ok(Neighborhood { owner: e, entries })
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.adjacency.get(e.index()).map_or(0, Vec::len)
    }

    /// Entities that occur in at least one triplet.
    pub fn active_entities(&self) -> Vec<EntityId> {
        (0..self.num_entities)
            .filter(|&i| !self.adjacency[i].is_empty())
            .map(|i| EntityId(i as u32))
            .collect()
    }

    /// Entities in the vocabulary without any neighbor. Such entities embed
    /// to the zero vector and are reported rather than rejected.
    pub fn isolated_entities(&self) -> Vec<EntityId> {
        (0..self.num_entities)
            .filter(|&i| self.adjacency[i].is_empty())
            .map(|i| EntityId(i as u32))
            .collect()
    }
}

/// `N(e)`: every `(r, e')` with `(e, r, e')` in the graph.
#[derive(Debug, Clone, Copy)]
pub struct Neighborhood<'a> {
    pub owner: EntityId,
    pub entries: &'a [(RelationId, EntityId)],
}

impl<'a> Neighborhood<'a> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct neighbor entities, sorted.
    pub fn entities(&self) -> Vec<EntityId> {
        let set: BTreeSet<EntityId> = self.entries.iter().map(|&(_, e)| e).collect();
        set.into_iter().collect()
    }

    /// Distinct neighboring relations, sorted.
    pub fn relations(&self) -> Vec<RelationId> {
        let set: BTreeSet<RelationId> = self.entries.iter().map(|&(r, _)| r).collect();
        set.into_iter().collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> NeighborSample {
        sample_neighbors(self.owner, self.entries, k, rng)
    }
}

/// Fixed-size neighbor list. Real entries come first; padding slots are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSample {
    pub owner: EntityId,
    pub entries: Vec<(RelationId, EntityId)>,
    pub mask: Vec<bool>,
}

impl NeighborSample {
    pub fn num_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid(&self) -> impl Iterator<Item = (RelationId, EntityId)> + '_ {
        self.entries
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&e, _)| e)
    }

    /// A sample holding exactly the given entries, no padding.
    pub fn from_entries(owner: EntityId, entries: Vec<(RelationId, EntityId)>) -> Self {
        let mask = vec![true; entries.len()];
        Self {
            owner,
            entries,
            mask,
        }
    }
}

/// Uniform sample of `k` entries without replacement, or every entry plus
/// masked padding when fewer than `k` exist. Sampled entries keep the order
/// of `entries`.
pub fn sample_neighbors<R: Rng + ?Sized>(
    owner: EntityId,
    entries: &[(RelationId, EntityId)],
    k: usize,
    rng: &mut R,
) -> NeighborSample {
    assert!(k >= 1, "neighbor budget must be at least 1");
    let mut chosen: Vec<(RelationId, EntityId)> = if entries.len() > k {
        let mut idx = index::sample(rng, entries.len(), k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| entries[i]).collect()
    } else {
        entries.to_vec()
    };
    let real = chosen.len();
    chosen.resize(k, (RelationId(0), owner));
    let mut mask = vec![false; k];
    mask[..real].iter_mut().for_each(|m| *m = true);
    NeighborSample {
        owner,
        entries: chosen,
        mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), text).unwrap();
        f
    }

    fn random_graph(seed: u64, n: usize, m: usize, count: usize) -> KnowledgeGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triplets: Vec<Triplet> = (0..count)
            .map(|_| {
                Triplet::new(
                    EntityId(rng.gen_range(0..n) as u32),
                    RelationId(rng.gen_range(0..m) as u32),
                    EntityId(rng.gen_range(0..n) as u32),
                )
            })
            .collect();
        KnowledgeGraph::new(n, m, triplets).unwrap()
    }

    #[test]
    fn load_counts_entities_and_relations() {
        let f = write_tmp("a\tr\tb\nb\tr\tc\n");
        let (vocab, kg) = load_triplets(f.path()).unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(vocab.num_entities(), 3);
        assert_eq!(vocab.num_base_relations(), 1);
        assert!(!kg.is_augmented());
    }

    #[test]
    fn load_deduplicates() {
        let f = write_tmp("a\tr\tb\na\tr\tb\n");
        let (_, kg) = load_triplets(f.path()).unwrap();
        assert_eq!(kg.len(), 1);
    }

    #[test]
    fn load_rejects_bad_lines() {
        let f = write_tmp("a\tr\tb\na\tr\n");
        match load_triplets(f.path()) {
            Err(KgError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("");
        assert!(matches!(load_triplets(f.path()), Err(KgError::EmptyGraph)));
        let f = write_tmp("a\tr**INV\tb\n");
        assert!(matches!(
            load_triplets(f.path()),
            Err(KgError::ReservedName { line: 1, .. })
        ));
    }

    #[test]
    fn augment_adds_inverse_view() {
        let kg = KnowledgeGraph::new_augmented(2, 1, [Triplet::new(EntityId(0), RelationId(0), EntityId(1))])
            .unwrap();
        assert_eq!(kg.len(), 2);
        assert!(kg.contains(&Triplet::new(EntityId(1), RelationId(1), EntityId(0))));
        let nb_a = kg.neighborhood(EntityId(0)).unwrap();
        assert_eq!(nb_a.entries, &[(RelationId(0), EntityId(1))]);
        let nb_b = kg.neighborhood(EntityId(1)).unwrap();
        assert_eq!(nb_b.entries, &[(RelationId(1), EntityId(0))]);
        assert!(matches!(kg.augment_inverses(), Err(KgError::AlreadyAugmented)));
    }

    #[test]
    fn self_loop_keeps_distinct_inverse() {
        let kg = KnowledgeGraph::new_augmented(1, 1, [Triplet::new(EntityId(0), RelationId(0), EntityId(0))])
            .unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(
            kg.neighborhood(EntityId(0)).unwrap().entries,
            &[(RelationId(0), EntityId(0)), (RelationId(1), EntityId(0))]
        );
    }

    #[test]
    fn unknown_entity_lookup_fails() {
        let kg = random_graph(1, 4, 2, 5);
        assert!(kg.neighborhood(EntityId(9)).is_err());
    }

    #[test]
    fn adjacency_matches_naive_scan() {
        for seed in 0..20 {
            let kg = random_graph(seed, 30, 4, 100).augment_inverses().unwrap();
            for e in 0..30u32 {
                let e = EntityId(e);
                let mut naive: Vec<_> = kg
                    .triplets()
                    .iter()
                    .filter(|t| t.subject == e)
                    .map(|t| (t.relation, t.object))
                    .collect();
                naive.sort();
                assert_eq!(kg.neighborhood(e).unwrap().entries, naive.as_slice());
                for &(r, o) in &naive {
                    let back = kg.neighborhood(o).unwrap();
                    assert!(back.entries.contains(&(r.inverse(4), e)));
                }
            }
        }
    }

    #[test]
    fn vocabulary_round_trip() {
        let vocab = Vocabulary::new(["b", "a", "c"], ["x", "w"]).unwrap();
        assert_eq!(vocab.entity_names(), &["a", "b", "c"]);
        for name in ["a", "b", "c"] {
            assert_eq!(vocab.entity_name(vocab.entity_id(name).unwrap()), Some(name));
        }
        let inv = vocab.relation_id("x**INV").unwrap();
        assert_eq!(inv, RelationId(3));
        assert_eq!(vocab.relation_name(inv).unwrap(), "x**INV");
        assert_eq!(inv.inverse(2).inverse(2), inv);
    }

    #[test]
    fn sampling_pads_and_masks() {
        let entries: Vec<_> = (0..3).map(|i| (RelationId(0), EntityId(i))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_neighbors(EntityId(9), &entries, 64, &mut rng);
        assert_eq!(s.entries.len(), 64);
        assert_eq!(s.num_valid(), 3);
        assert!(s.mask[..3].iter().all(|&m| m));
    }

    #[test]
    fn sampling_large_neighborhood_is_distinct_and_deterministic() {
        let entries: Vec<_> = (0..100).map(|i| (RelationId(i % 3), EntityId(i))).collect();
        let a = sample_neighbors(EntityId(0), &entries, 64, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_neighbors(EntityId(0), &entries, 64, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let distinct: HashSet<_> = a.entries.iter().collect();
        assert_eq!(distinct.len(), 64);
        assert_eq!(a.num_valid(), 64);
    }

    #[test]
    fn sampling_exact_budget_is_identity() {
        let entries: Vec<_> = (0..64).map(|i| (RelationId(0), EntityId(i))).collect();
        let s = sample_neighbors(EntityId(0), &entries, 64, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s.entries, entries);
    }

    #[test]
    fn empty_neighborhood_is_fully_masked() {
        let s = sample_neighbors(EntityId(0), &[], 4, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s.num_valid(), 0);
        assert_eq!(s.entries.len(), 4);
    }
}
