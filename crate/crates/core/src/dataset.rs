//! Unseen-entity splits built from a standard train/valid/test corpus.
//!
//! A fraction of the original test triplets is sampled and their subjects (or
//! objects) become candidate unseen entities. Candidates that have no training
//! neighbor outside the candidate set are dropped. Training triplets are then
//! partitioned into a seen-only training set and an auxiliary set holding the
//! facts that tie each unseen entity to the seen graph.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{
    dedup_named, parse_triplets, EntityId, KnowledgeGraph, NamedTriplet, Triplet, Vocabulary,
};

pub const TRAIN_FILE: &str = "train.tsv";
pub const AUX_FILE: &str = "aux.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const UNSEEN_FILE: &str = "unseen.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Subject,
    Object,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "subject" => Some(Strategy::Subject),
            "object" => Some(Strategy::Object),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Subject => "subject",
            Strategy::Object => "object",
        }
    }

    fn endpoint(self, t: &NamedTriplet) -> &str {
        match self {
            Strategy::Subject => &t.subject,
            Strategy::Object => &t.object,
        }
    }

    fn other(self, t: &NamedTriplet) -> &str {
        match self {
            Strategy::Subject => &t.object,
            Strategy::Object => &t.subject,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub strategy: Strategy,
    pub sample_rate: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(strategy: Strategy, sample_rate: f64, seed: u64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate <= 1.0) {
            return Err(Error::Dataset(format!(
                "sample rate must lie in (0, 1], got {sample_rate}"
            )));
        }
        Ok(Self {
            strategy,
            sample_rate,
            seed,
        })
    }
}

/// Original train/valid/test triplets plus the checksums of their files.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<NamedTriplet>,
    pub valid: Vec<NamedTriplet>,
    pub test: Vec<NamedTriplet>,
    pub checksums: BTreeMap<String, String>,
}

const CORPUS_NAMES: [(&str, [&str; 3]); 3] = [
    ("train", ["train.tsv", "train.txt", "freebase_mtr100_mte100-train.txt"]),
    ("valid", ["valid.tsv", "valid.txt", "freebase_mtr100_mte100-valid.txt"]),
    ("test", ["test.tsv", "test.txt", "freebase_mtr100_mte100-test.txt"]),
];

impl Corpus {
    pub fn new(train: Vec<NamedTriplet>, valid: Vec<NamedTriplet>, test: Vec<NamedTriplet>) -> Self {
        Self {
            train: dedup_named(train),
            valid: dedup_named(valid),
            test: dedup_named(test),
            checksums: BTreeMap::new(),
        }
    }

    /// Reads `train`, `valid` and `test` from `dir` (`.tsv`, `.txt` or the
    /// FB15K file names). A missing validation file is treated as empty.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut parts: Vec<Vec<NamedTriplet>> = Vec::new();
        let mut checksums = BTreeMap::new();
        for (split, names) in CORPUS_NAMES {
            let found = names.iter().map(|n| dir.join(n)).find(|p| p.is_file());
            match found {
                Some(path) => {
                    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    let text = String::from_utf8(bytes.clone()).map_err(|_| {
                        Error::Dataset(format!("{} is not valid UTF-8", path.display()))
                    })?;
                    let triplets = parse_triplets(&text).map_err(|e| {
                        Error::Dataset(format!("{}: {e}", path.display()))
                    })?;
                    checksums.insert(split.to_string(), sha256_hex(&bytes));
                    parts.push(dedup_named(triplets));
                }
                None if split == "valid" => parts.push(Vec::new()),
                None => {
                    return Err(Error::Dataset(format!(
                        "no {split} file in {} (tried {})",
                        dir.display(),
                        names.join(", ")
                    )))
                }
            }
        }
        let test = parts.pop().unwrap_or_default();
        let valid = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        Ok(Self {
            train,
            valid,
            test,
            checksums,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Train/auxiliary/validation/test splits around a set of unseen entities.
///
/// All triplets use base relation ids of [`DatasetBundle::vocab`], which covers
/// exactly the names occurring in the bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub vocab: Vocabulary,
    pub train: Vec<Triplet>,
    pub auxiliary: Vec<Triplet>,
    pub validation: Vec<Triplet>,
    pub test: Vec<Triplet>,
    /// Sorted.
    pub unseen: Vec<EntityId>,
    pub spec: Option<SplitSpec>,
    pub corpus_checksums: BTreeMap<String, String>,
}

impl DatasetBundle {
    /// Assembles a bundle from named parts, building a compact vocabulary.
    pub fn from_named(
        train: &[NamedTriplet],
        auxiliary: &[NamedTriplet],
        validation: &[NamedTriplet],
        test: &[NamedTriplet],
        unseen: &[String],
    ) -> Result<Self> {
        let all = train.iter().chain(auxiliary).chain(validation).chain(test);
        let mut entities: BTreeSet<&str> = unseen.iter().map(String::as_str).collect();
        let mut relations = BTreeSet::new();
        for t in all {
            entities.insert(&t.subject);
            entities.insert(&t.object);
            relations.insert(t.relation.as_str());
        }
        let vocab = Vocabulary::new(entities, relations)?;
        let enc = |ts: &[NamedTriplet]| -> Result<Vec<Triplet>> {
            Ok(ts.iter().map(|t| vocab.encode(t)).collect::<std::result::Result<_, _>>()?)
        };
        let mut unseen_ids: Vec<EntityId> = unseen
            .iter()
            .map(|u| vocab.entity_id(u).expect("unseen names are in the vocabulary"))
            .collect();
        unseen_ids.sort();
        unseen_ids.dedup();
        Ok(Self {
            train: enc(train)?,
            auxiliary: enc(auxiliary)?,
            validation: enc(validation)?,
            test: enc(test)?,
            unseen: unseen_ids,
            vocab,
            spec: None,
            corpus_checksums: BTreeMap::new(),
        })
    }

    /// A bundle that only has training (and optionally validation) data.
    pub fn transductive(vocab: Vocabulary, train: Vec<Triplet>, validation: Vec<Triplet>) -> Self {
        Self {
            vocab,
            train,
            auxiliary: Vec::new(),
            validation,
            test: Vec::new(),
            unseen: Vec::new(),
            spec: None,
            corpus_checksums: BTreeMap::new(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_base_relations(&self) -> usize {
        self.vocab.num_base_relations()
    }

    pub fn is_unseen(&self, e: EntityId) -> bool {
        self.unseen.binary_search(&e).is_ok()
    }

    /// Entities occurring in the training triplets, sorted.
    pub fn seen_entities(&self) -> Vec<EntityId> {
        let set: BTreeSet<EntityId> = self
            .train
            .iter()
            .flat_map(|t| [t.subject, t.object])
            .collect();
        set.into_iter().collect()
    }

    /// Inverse-augmented graph over the training triplets.
    pub fn train_graph(&self) -> Result<KnowledgeGraph> {
        Ok(KnowledgeGraph::new_augmented(
            self.num_entities(),
            self.num_base_relations(),
            self.train.iter().copied(),
        )?)
    }

    /// Inverse-augmented graph over the auxiliary triplets.
    pub fn auxiliary_graph(&self) -> Result<KnowledgeGraph> {
        Ok(KnowledgeGraph::new_augmented(
            self.num_entities(),
            self.num_base_relations(),
            self.auxiliary.iter().copied(),
        )?)
    }

    /// Every triplet of every split, for filtered ranking.
    pub fn all_triplets(&self) -> HashSet<Triplet> {
        self.train
            .iter()
            .chain(&self.auxiliary)
            .chain(&self.validation)
            .chain(&self.test)
            .copied()
            .collect()
    }

    /// Checks the split invariants exhaustively.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Dataset(m));
        let unseen: HashSet<EntityId> = self.unseen.iter().copied().collect();
        let name = |e: EntityId| self.vocab.entity_name(e).unwrap_or("?").to_string();
        for t in self.train.iter().chain(&self.validation) {
            for e in [t.subject, t.object] {
                if unseen.contains(&e) {
                    return fail(format!("unseen entity {} in train or validation", name(e)));
                }
            }
        }
        let mut covered = HashSet::new();
        for t in &self.auxiliary {
            let (a, b) = (unseen.contains(&t.subject), unseen.contains(&t.object));
            if a == b {
                return fail(format!(
                    "auxiliary triplet ({}, {}) does not have exactly one unseen endpoint",
                    name(t.subject),
                    name(t.object)
                ));
            }
            covered.insert(if a { t.subject } else { t.object });
        }
        if let Some(u) = self.unseen.iter().find(|u| !covered.contains(u)) {
            return fail(format!("unseen entity {} has no auxiliary triplet", name(*u)));
        }
        for t in &self.test {
            let (a, b) = (unseen.contains(&t.subject), unseen.contains(&t.object));
            let ok = match self.spec.map(|s| s.strategy) {
                Some(Strategy::Subject) => a && !b,
                Some(Strategy::Object) => !a && b,
                None => a != b,
            };
            if !ok {
                return fail(format!(
                    "test triplet ({}, {}) has the wrong unseen endpoint",
                    name(t.subject),
                    name(t.object)
                ));
            }
        }
        Ok(())
    }

    fn named(&self, ts: &[Triplet]) -> Result<Vec<NamedTriplet>> {
        Ok(ts
            .iter()
            .map(|t| self.vocab.decode(t))
            .collect::<std::result::Result<_, _>>()?)
    }
}

/// Builds an unseen-entity split from `corpus`.
pub fn build_split(corpus: &Corpus, spec: &SplitSpec) -> Result<DatasetBundle> {
    if corpus.test.is_empty() {
        return Err(Error::Dataset("original test set is empty".into()));
    }
    let strategy = spec.strategy;
    let mut order: Vec<usize> = (0..corpus.test.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = ((spec.sample_rate * corpus.test.len() as f64).round() as usize)
        .clamp(1, corpus.test.len());
    let mut sampled: Vec<usize> = order[..take].to_vec();
    sampled.sort_unstable();

    let candidates: HashSet<&str> = sampled
        .iter()
        .map(|&i| strategy.endpoint(&corpus.test[i]))
        .collect();
    let mut has_outside_neighbor: HashSet<&str> = HashSet::new();
    for t in &corpus.train {
        if candidates.contains(t.subject.as_str()) && !candidates.contains(t.object.as_str()) {
            has_outside_neighbor.insert(&t.subject);
        }
        if candidates.contains(t.object.as_str()) && !candidates.contains(t.subject.as_str()) {
            has_outside_neighbor.insert(&t.object);
        }
    }
    let unseen: BTreeSet<&str> = candidates
        .iter()
        .copied()
        .filter(|c| has_outside_neighbor.contains(c))
        .collect();
    if unseen.is_empty() {
        return Err(Error::Dataset(
            "no sampled entity has a training neighbor; unseen set is empty".into(),
        ));
    }

    let mut train = Vec::new();
    let mut auxiliary = Vec::new();
    for t in &corpus.train {
        match (unseen.contains(t.subject.as_str()), unseen.contains(t.object.as_str())) {
            (false, false) => train.push(t.clone()),
            (true, true) => {}
            _ => auxiliary.push(t.clone()),
        }
    }
    let seen: HashSet<&str> = train
        .iter()
        .flat_map(|t| [t.subject.as_str(), t.object.as_str()])
        .collect();
    let test: Vec<NamedTriplet> = sampled
        .iter()
        .map(|&i| &corpus.test[i])
        .filter(|t| {
            unseen.contains(strategy.endpoint(t))
                && !unseen.contains(strategy.other(t))
                && seen.contains(strategy.other(t))
        })
        .cloned()
        .collect();
    if test.is_empty() {
        return Err(Error::Dataset("no test triplet survives filtering".into()));
    }
    let validation: Vec<NamedTriplet> = corpus
        .valid
        .iter()
        .filter(|t| !unseen.contains(t.subject.as_str()) && !unseen.contains(t.object.as_str()))
        .cloned()
        .collect();
    let unseen: Vec<String> = unseen.into_iter().map(str::to_string).collect();
    let mut bundle = DatasetBundle::from_named(&train, &auxiliary, &validation, &test, &unseen)?;
    bundle.spec = Some(*spec);
    bundle.corpus_checksums = corpus.checksums.clone();
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats {
    pub num_relations: usize,
    pub num_entities: usize,
    pub num_unseen: usize,
    pub min_neighbors: usize,
    pub max_neighbors: usize,
    pub avg_neighbors: f64,
}

impl fmt::Display for SplitStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "relations\t{}", self.num_relations)?;
        writeln!(f, "entities\t{}", self.num_entities)?;
        writeln!(f, "unseen\t{}", self.num_unseen)?;
        writeln!(f, "min_neighbors\t{}", self.min_neighbors)?;
        writeln!(f, "max_neighbors\t{}", self.max_neighbors)?;
        write!(f, "avg_neighbors\t{:.1}", self.avg_neighbors)
    }
}

/// Relation and entity counts of the training set, and distinct auxiliary
/// neighbor counts per unseen entity.
pub fn emit_statistics(bundle: &DatasetBundle) -> SplitStats {
    let relations: HashSet<_> = bundle.train.iter().map(|t| t.relation).collect();
    let entities = bundle.seen_entities();
    let mut neighbors: BTreeMap<EntityId, HashSet<EntityId>> =
        bundle.unseen.iter().map(|&u| (u, HashSet::new())).collect();
    for t in &bundle.auxiliary {
        if let Some(s) = neighbors.get_mut(&t.subject) {
            s.insert(t.object);
        }
        if let Some(s) = neighbors.get_mut(&t.object) {
            s.insert(t.subject);
        }
    }
    let counts: Vec<usize> = neighbors.values().map(HashSet::len).collect();
    let total: usize = counts.iter().sum();
    SplitStats {
        num_relations: relations.len(),
        num_entities: entities.len(),
        num_unseen: bundle.unseen.len(),
        min_neighbors: counts.iter().copied().min().unwrap_or(0),
        max_neighbors: counts.iter().copied().max().unwrap_or(0),
        avg_neighbors: if counts.is_empty() {
            0.0
        } else {
            total as f64 / counts.len() as f64
        },
    }
}

fn triplet_text(ts: &[NamedTriplet]) -> String {
    let mut s = String::new();
    for t in ts {
        s.push_str(&t.to_string());
        s.push('\n');
    }
    s
}

/// Writes the five split files and a manifest with their checksums.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut unseen = String::new();
    for &u in &bundle.unseen {
        unseen.push_str(bundle.vocab.entity_name(u).unwrap_or_default());
        unseen.push('\n');
    }
    let files = [
        (TRAIN_FILE, triplet_text(&bundle.named(&bundle.train)?)),
        (AUX_FILE, triplet_text(&bundle.named(&bundle.auxiliary)?)),
        (VALID_FILE, triplet_text(&bundle.named(&bundle.validation)?)),
        (TEST_FILE, triplet_text(&bundle.named(&bundle.test)?)),
        (UNSEEN_FILE, unseen),
    ];
    let mut manifest = String::new();
    if let Some(spec) = bundle.spec {
        manifest.push_str(&format!("strategy = {}\n", spec.strategy));
        manifest.push_str(&format!("sample_rate = {}\n", spec.sample_rate));
        manifest.push_str(&format!("seed = {}\n", spec.seed));
    }
    for (split, sum) in &bundle.corpus_checksums {
        manifest.push_str(&format!("corpus.{split}.sha256 = {sum}\n"));
    }
    for (name, text) in &files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!("file.{name}.sha256 = {}\n", sha256_hex(text.as_bytes())));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
        }
    }
    Ok(out)
}

/// Reads a bundle written by [`write_bundle`], verifying file checksums.
pub fn read_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let kv = parse_key_values(&manifest)?;
    let read = |name: &str| -> Result<String> {
        let path: PathBuf = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if let Some(expected) = kv.get(&format!("file.{name}.sha256")) {
            let found = sha256_hex(text.as_bytes());
            if &found != expected {
                return Err(Error::Checksum {
                    path,
                    expected: expected.clone(),
                    found,
                });
            }
        }
        Ok(text)
    };
    let parse = |name: &str| -> Result<Vec<NamedTriplet>> {
        parse_triplets(&read(name)?).map_err(|e| Error::Dataset(format!("{name}: {e}")))
    };
    let train = parse(TRAIN_FILE)?;
    let auxiliary = parse(AUX_FILE)?;
    let validation = parse(VALID_FILE)?;
    let test = parse(TEST_FILE)?;
    let unseen: Vec<String> = read(UNSEEN_FILE)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let mut bundle = DatasetBundle::from_named(&train, &auxiliary, &validation, &test, &unseen)?;
    let strategy = kv.get("strategy").map(|s| {
        Strategy::parse(s).ok_or_else(|| Error::Dataset(format!("unknown strategy {s}")))
    });
    if let Some(strategy) = strategy {
        let rate = kv
            .get("sample_rate")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Dataset("manifest lacks a valid sample_rate".into()))?;
        let seed = kv
            .get("seed")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Dataset("manifest lacks a valid seed".into()))?;
        bundle.spec = Some(SplitSpec::new(strategy?, rate, seed)?);
    }
    bundle.corpus_checksums = kv
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix("corpus.")
                .and_then(|k| k.strip_suffix(".sha256"))
                .map(|k| (k.to_string(), v.clone()))
        })
        .collect();
    Ok(bundle)
}

/// A triplet with a true/false label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledTriplet {
    pub triplet: Triplet,
    pub label: bool,
}

/// Reads `subject\trelation\tobject\tlabel` lines, with label `1` for true
/// and `0` or `-1` for false.
pub fn read_labeled(path: &Path, vocab: &Vocabulary) -> Result<Vec<LabeledTriplet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let at = |m: String| Error::Dataset(format!("{}:{}: {m}", path.display(), i + 1));
        if fields.len() != 4 {
            return Err(at(format!("expected 4 fields, found {}", fields.len())));
        }
        let label = match fields[3].trim() {
            "1" => true,
            "0" | "-1" => false,
            other => return Err(at(format!("bad label {other:?}"))),
        };
        let triplet = vocab
            .encode(&NamedTriplet::new(fields[0], fields[1], fields[2]))
            .map_err(|e| at(e.to_string()))?;
        out.push(LabeledTriplet { triplet, label });
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("{} holds no labeled triplets", path.display())));
    }
    Ok(out)
}
