mod meta;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lankgc::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use lankgc::config::RunConfig;
use lankgc::dataset::{
    build_split, emit_statistics, read_bundle, read_labeled, write_bundle, Corpus,
    DatasetBundle, SplitSpec, Strategy,
};
use lankgc::encoder::AggregatorKind;
use lankgc::evaluator::{write_metrics_csv, write_rank_trace, EvalData, Evaluator, Side};
use lankgc::kg::write_named_triplets;
use lankgc::rules::{export_table, import_table, mine_confidence, ConfidenceTable};
use lankgc::synthetic::{generate, SyntheticSpec};
use lankgc::trainer::{train_with, validation_mrr_hook, CheckpointKind, TrainHooks};

use meta::RunMeta;

const RULES_FILE: &str = "rules.tsv";

#[derive(Parser)]
#[command(name = "lankgc", version, about = "Inductive knowledge graph embedding with neighborhood aggregators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an unseen-entity split from a train/valid/test corpus
    BuildDataset(BuildDataset),
    /// Mine relation implication confidences from a bundle's training graph
    MineRules(MineRules),
    /// Train a model on a bundle
    Train(Train),
    /// Filtered link prediction on a bundle split
    EvalLp(EvalLp),
    /// Triplet classification with per-relation thresholds
    EvalTc(EvalTc),
    /// Show the neighbor weights an aggregator assigns for one entity and query
    InspectWeights(InspectWeights),
    /// Generate a synthetic corpus with planted implication rules
    GenSynthetic(GenSynthetic),
}

#[derive(Args)]
struct BuildDataset {
    /// Directory holding train/valid/test triplet files
    #[arg(long)]
    corpus: PathBuf,
    /// subject or object
    #[arg(long, default_value = "subject")]
    strategy: String,
    /// Fraction of original test triplets to sample
    #[arg(long, default_value_t = 0.10)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineRules {
    #[arg(long)]
    bundle: PathBuf,
    /// Output TSV (`premise\tconclusion\tconfidence`)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Overrides {
    /// lan, mean, lstm, query-attn, global-attn or logic-only
    #[arg(long)]
    aggregator: Option<String>,
    /// transe, distmult or complex
    #[arg(long)]
    scorer: Option<String>,
    /// key=value config override (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    bundle: PathBuf,
    /// Rule table from mine-rules; required by lan and logic-only
    #[arg(long)]
    rules: Option<PathBuf>,
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Labeled validation TSV; selects checkpoints by classification accuracy
    #[arg(long)]
    valid_labeled: Option<PathBuf>,
    /// Checkpoint directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalLp {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// metrics.csv to write
    #[arg(long)]
    out: PathBuf,
    /// test or valid
    #[arg(long, default_value = "test")]
    split: String,
    /// Per-query rank trace TSV
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Model label in metrics.csv (defaults to the aggregator)
    #[arg(long)]
    model: Option<String>,
    /// Dataset label in metrics.csv (defaults to the bundle directory name)
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct EvalTc {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Labeled validation TSV used to tune thresholds
    #[arg(long)]
    valid: PathBuf,
    /// Labeled test TSV
    #[arg(long)]
    test: PathBuf,
    /// Optional CSV report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectWeights {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    entity: String,
    /// Query relation name (append **INV for an inverse)
    #[arg(long)]
    query: String,
    /// Write the table here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthetic {
    #[arg(long, default_value_t = 1000)]
    entities: usize,
    #[arg(long, default_value_t = 0.9)]
    rule_strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    rules: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first.trim());
            return ExitCode::from(2);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", one_line(&e));
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(1)
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        // library errors already print their source inline
        if parts.last().is_some_and(|p| p.ends_with(&msg)) {
            continue;
        }
        parts.push(msg);
    }
    parts.join(": ").replace('\n', " ")
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LANKGC_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow!("LANKGC_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildDataset(a) => build_dataset(a),
        Command::MineRules(a) => mine_rules(a),
        Command::Train(a) => train(a),
        Command::EvalLp(a) => eval_lp(a),
        Command::EvalTc(a) => eval_tc(a),
        Command::InspectWeights(a) => inspect_weights(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
    }
}

fn build_dataset(a: BuildDataset) -> Result<()> {
    let strategy = Strategy::parse(&a.strategy)
        .ok_or_else(|| anyhow!("unknown strategy {:?}; use subject or object", a.strategy))?;
    let spec = SplitSpec::new(strategy, a.rate, a.seed)?;
    let corpus = Corpus::load(&a.corpus)?;
    let bundle = build_split(&corpus, &spec)?;
    bundle.validate()?;
    write_bundle(&bundle, &a.out)?;
    let stats = emit_statistics(&bundle);
    let stats_path = a.out.join("stats.tsv");
    fs::write(&stats_path, format!("{stats}\n")).with_context(|| format!("writing {}", stats_path.display()))?;
    let mut meta = RunMeta::new("build-dataset");
    meta.set("strategy", strategy)
        .set("rate", a.rate)
        .set("seed", a.seed)
        .input("corpus", &a.corpus)?;
    meta.write_in(&a.out)?;
    println!("{stats}");
    Ok(())
}

fn mine_rules(a: MineRules) -> Result<()> {
    let bundle = read_bundle(&a.bundle)?;
    let table = mine_confidence(&bundle.train_graph()?)?;
    export_table(&table, &bundle.vocab, &a.out)?;
    let mut meta = RunMeta::new("mine-rules");
    meta.input("bundle", &a.bundle)?;
    meta.write_beside(&a.out)?;
    println!("{} rule entries written to {}", table.len(), a.out.display());
    Ok(())
}

fn resolve_config(file: Option<&Path>, o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &o.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {pair:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(v) = &o.aggregator {
        cfg.set("aggregator", v)?;
    }
    if let Some(v) = &o.scorer {
        cfg.set("scorer", v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_rules(bundle: &DatasetBundle, path: Option<&Path>, kind: AggregatorKind) -> Result<Option<ConfidenceTable>> {
    match path {
        Some(p) => Ok(Some(
            import_table(&bundle.vocab, p).with_context(|| format!("loading rules {}", p.display()))?,
        )),
        None if kind.uses_rules() => bail!("aggregator {kind} needs a rule table (--rules)"),
        None => Ok(None),
    }
}

fn train(a: Train) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
    let bundle = read_bundle(&a.bundle)?;
    let table = load_rules(&bundle, a.rules.as_deref(), cfg.aggregator.kind)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let data = EvalData::new(&bundle)?;
    let labeled = match &a.valid_labeled {
        Some(p) => Some(read_labeled(p, &bundle.vocab)?),
        None => None,
    };
    let validate: Option<Box<dyn Fn(&lankgc::diff::ParamStore) -> lankgc::Result<Option<f64>> + '_>> =
        if let Some(items) = &labeled {
            let (data, table, cfg) = (&data, table.as_ref(), &cfg);
            Some(Box::new(move |params| {
                let ev = Evaluator {
                    data,
                    params,
                    table,
                    aggregator: &cfg.aggregator,
                    scorer: cfg.scorer,
                    seed: cfg.eval_seed,
                };
                let th = ev.tune_thresholds(items)?;
                Ok(Some(ev.classify(items, &th)?.accuracy))
            }))
        } else if !bundle.validation.is_empty() {
            Some(validation_mrr_hook(
                &data,
                &bundle,
                table.as_ref(),
                &cfg.aggregator,
                cfg.scorer,
                &cfg.train,
            ))
        } else {
            None
        };
    let out = a.out.clone();
    let hooks = TrainHooks {
        validate,
        checkpoint: Some(Box::new(|kind, epoch, params| {
            let dir = match kind {
                CheckpointKind::Best => out.clone(),
                CheckpointKind::Periodic => out.join(format!("epoch_{epoch:04}")),
            };
            save_checkpoint(&dir, params, &cfg, epoch, &bundle.vocab)
        })),
        on_epoch: Some(Box::new(|r| {
            let v = r.validation.map(|v| format!(" validation {v:.4}")).unwrap_or_default();
            eprintln!(
                "epoch {} loss {:.4} subtask {:.4}{v}",
                r.epoch, r.main_loss, r.subtask_loss
            );
        })),
    };
    let outcome = train_with(&bundle, table.as_ref(), &cfg.train, &cfg.aggregator, cfg.scorer, hooks)?;
    let epoch = outcome
        .report
        .best_epoch
        .unwrap_or_else(|| outcome.report.epochs.len());
    save_checkpoint(&a.out, &outcome.params, &cfg, epoch, &bundle.vocab)?;
    let report_path = a.out.join("train_report.tsv");
    fs::write(&report_path, outcome.report.to_tsv())
        .with_context(|| format!("writing {}", report_path.display()))?;
    fs::write(a.out.join("config.txt"), cfg.to_text()).context("writing config.txt")?;
    if let Some(p) = &a.rules {
        fs::copy(p, a.out.join(RULES_FILE)).with_context(|| format!("copying {}", p.display()))?;
    }
    let mut meta = RunMeta::new("train");
    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            meta.set(k, v);
        }
    }
    meta.input("bundle", &a.bundle)?;
    if let Some(p) = &a.rules {
        meta.input("rules", p)?;
    }
    if let Some(p) = &a.config {
        meta.input("config", p)?;
    }
    meta.write_in(&a.out)?;
    println!(
        "trained {} epochs, kept epoch {epoch}{}",
        outcome.report.epochs.len(),
        outcome
            .report
            .best_validation
            .map(|v| format!(" (validation {v:.4})"))
            .unwrap_or_default()
    );
    Ok(())
}

struct Loaded {
    bundle: DatasetBundle,
    ckpt: Checkpoint,
    table: Option<ConfidenceTable>,
    data: EvalData,
}

fn load_model(bundle_dir: &Path, ckpt_dir: &Path) -> Result<Loaded> {
    let bundle = read_bundle(bundle_dir)?;
    let ckpt = load_checkpoint(ckpt_dir)?;
    ckpt.check_vocab(&bundle.vocab)
        .context("checkpoint was trained on a different bundle")?;
    let rules = ckpt_dir.join(RULES_FILE);
    let table = load_rules(
        &bundle,
        rules.is_file().then_some(rules.as_path()),
        ckpt.config.aggregator.kind,
    )?;
    let data = EvalData::new(&bundle)?;
    Ok(Loaded {
        bundle,
        ckpt,
        table,
        data,
    })
}

impl Loaded {
    fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            data: &self.data,
            params: &self.ckpt.params,
            table: self.table.as_ref(),
            aggregator: &self.ckpt.config.aggregator,
            scorer: self.ckpt.config.scorer,
            seed: self.ckpt.config.eval_seed,
        }
    }
}

fn eval_lp(a: EvalLp) -> Result<()> {
    let m = load_model(&a.bundle, &a.ckpt)?;
    let triplets = match a.split.as_str() {
        "test" => &m.bundle.test,
        "valid" => &m.bundle.validation,
        other => bail!("unknown split {other:?}; use test or valid"),
    };
    let report = m.evaluator().link_prediction(triplets)?;
    let model = a
        .model
        .clone()
        .unwrap_or_else(|| m.ckpt.config.aggregator.kind.to_string());
    let dataset = a.dataset.clone().unwrap_or_else(|| {
        a.bundle
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "bundle".into())
    });
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_metrics_csv(&a.out, &[(model, dataset, report.summary)])?;
    if let Some(t) = &a.trace {
        write_rank_trace(t, &m.bundle, &report.ranks)?;
    }
    let mut meta = RunMeta::new("eval-lp");
    meta.set("split", &a.split)
        .set("eval_seed", m.ckpt.config.eval_seed)
        .set("zero_neighbor_queries", report.zero_neighbor_queries)
        .input("bundle", &a.bundle)?
        .input("ckpt", &a.ckpt)?;
    meta.write_beside(&a.out)?;
    let s = report.summary;
    println!(
        "MR {:.2} MRR {:.4} Hits@1 {:.2} Hits@3 {:.2} Hits@10 {:.2} ({} queries)",
        s.mr,
        s.mrr,
        100.0 * s.hits1,
        100.0 * s.hits3,
        100.0 * s.hits10,
        s.count
    );
    Ok(())
}

fn eval_tc(a: EvalTc) -> Result<()> {
    let m = load_model(&a.bundle, &a.ckpt)?;
    let valid = read_labeled(&a.valid, &m.bundle.vocab)?;
    let test = read_labeled(&a.test, &m.bundle.vocab)?;
    let ev = m.evaluator();
    let thresholds = ev.tune_thresholds(&valid)?;
    let result = ev.classify(&test, &thresholds)?;
    if let Some(out) = &a.out {
        let text = format!(
            "model,accuracy,correct,total\n{},{:.6},{},{}\n",
            m.ckpt.config.aggregator.kind, result.accuracy, result.correct, result.total
        );
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
        let mut meta = RunMeta::new("eval-tc");
        meta.input("bundle", &a.bundle)?
            .input("ckpt", &a.ckpt)?
            .input("valid", &a.valid)?
            .input("test", &a.test)?;
        meta.write_beside(out)?;
    }
    println!(
        "accuracy {:.4} ({}/{})",
        result.accuracy, result.correct, result.total
    );
    Ok(())
}

fn inspect_weights(a: InspectWeights) -> Result<()> {
    let m = load_model(&a.bundle, &a.ckpt)?;
    let vocab = &m.bundle.vocab;
    let e = vocab
        .entity_id(&a.entity)
        .ok_or_else(|| anyhow!("unknown entity {:?}", a.entity))?;
    let q = vocab
        .relation_id(&a.query)
        .ok_or_else(|| anyhow!("unknown relation {:?}", a.query))?;
    let enc = m.evaluator().embed(e, q, Side::Subject)?;
    let mut s = String::from(
        "entity\tquery\tneighbor_relation\tneighbor_entity\talpha_logic\talpha_nn\talpha_total\n",
    );
    for t in enc.ranked_trace() {
        let rel = vocab.relation_name(t.relation).unwrap_or_default();
        let ent = vocab.entity_name(t.entity).unwrap_or_default();
        s.push_str(&format!(
            "{}\t{}\t{rel}\t{ent}\t{:.6}\t{:.6}\t{:.6}\n",
            a.entity, a.query, t.alpha_logic, t.alpha_nn, t.alpha_total
        ));
    }
    match &a.out {
        Some(out) => {
            fs::write(out, &s).with_context(|| format!("writing {}", out.display()))?;
            let mut meta = RunMeta::new("inspect-weights");
            meta.set("entity", &a.entity)
                .set("query", &a.query)
                .input("bundle", &a.bundle)?
                .input("ckpt", &a.ckpt)?;
            meta.write_beside(out)?;
        }
        None => print!("{s}"),
    }
    if enc.zero_neighbors {
        eprintln!("note: {} has no neighbors; its embedding is zero", a.entity);
    }
    Ok(())
}

fn gen_synthetic(a: GenSynthetic) -> Result<()> {
    let spec = SyntheticSpec {
        entities: a.entities,
        rule_strength: a.rule_strength,
        seed: a.seed,
        num_rules: a.rules,
        ..SyntheticSpec::default()
    };
    let corpus = generate(&spec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_named_triplets(&a.out.join("train.tsv"), &corpus.train)?;
    write_named_triplets(&a.out.join("valid.tsv"), &corpus.valid)?;
    write_named_triplets(&a.out.join("test.tsv"), &corpus.test)?;
    fs::write(a.out.join("planted_rules.tsv"), corpus.rules_tsv()).context("writing planted_rules.tsv")?;
    let mut meta = RunMeta::new("gen-synthetic");
    meta.set("entities", a.entities)
        .set("rule_strength", a.rule_strength)
        .set("seed", a.seed)
        .set("rules", a.rules);
    meta.write_in(&a.out)?;
    println!(
        "{} train, {} valid, {} test triplets written to {}",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        a.out.display()
    );
    Ok(())
}
