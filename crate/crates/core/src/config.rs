//! Flat `key = value` run configuration covering training, aggregation and scoring.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::parse_key_values;
use crate::decoder::ScorerKind;
use crate::encoder::{AggregatorConfig, AggregatorKind};
use crate::error::{Error, Result};
use crate::rules::LogicMode;
use crate::trainer::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub aggregator: AggregatorConfig,
    pub scorer: ScorerKind,
    /// Seed for neighbor sampling during evaluation.
    pub eval_seed: u64,
}

pub const KEYS: [&str; 21] = [
    "aggregator",
    "batch_size",
    "checkpoint_every",
    "dim",
    "epochs",
    "epsilon",
    "eval_every",
    "eval_seed",
    "l2_rate",
    "learning_rate",
    "logic_mode",
    "margin",
    "mask_target_edge",
    "negatives",
    "neighbor_budget",
    "optimizer",
    "patience",
    "scorer",
    "seed",
    "subtask",
    "valid_limit",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let a = &mut self.aggregator;
        match key {
            "learning_rate" => t.learning_rate = num(key, v)?,
            "margin" => t.margin = num(key, v)?,
            "dim" => t.dim = num(key, v)?,
            "negatives" => t.negatives = num(key, v)?,
            "l2_rate" => t.l2_rate = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "optimizer" => {
                t.optimizer = OptimizerKind::parse(v)
                    .ok_or_else(|| Error::Config(format!("unknown optimizer {v:?}")))?
            }
            "seed" => t.seed = num(key, v)?,
            "subtask" => t.subtask = flag(key, v)?,
            "mask_target_edge" => t.mask_target_edge = flag(key, v)?,
            "eval_every" => t.eval_every = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "valid_limit" => t.valid_limit = num(key, v)?,
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "aggregator" => {
                a.kind = AggregatorKind::parse(v)
                    .ok_or_else(|| Error::Config(format!("unknown aggregator {v:?}")))?
            }
            "neighbor_budget" => a.neighbor_budget = num(key, v)?,
            "logic_mode" => {
                a.logic_mode = LogicMode::parse(v)
                    .ok_or_else(|| Error::Config(format!("unknown logic mode {v:?}")))?
            }
            "epsilon" => a.epsilon = num(key, v)?,
            "scorer" => {
                self.scorer = ScorerKind::parse(v)
                    .ok_or_else(|| Error::Config(format!("unknown scorer {v:?}")))?
            }
            "eval_seed" => self.eval_seed = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let a = &self.aggregator;
        Some(match key {
            "learning_rate" => t.learning_rate.to_string(),
            "margin" => t.margin.to_string(),
            "dim" => t.dim.to_string(),
            "negatives" => t.negatives.to_string(),
            "l2_rate" => t.l2_rate.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "optimizer" => t.optimizer.to_string(),
            "seed" => t.seed.to_string(),
            "subtask" => t.subtask.to_string(),
            "mask_target_edge" => t.mask_target_edge.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "patience" => t.patience.to_string(),
            "valid_limit" => t.valid_limit.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "aggregator" => a.kind.to_string(),
            "neighbor_budget" => a.neighbor_budget.to_string(),
            "logic_mode" => a.logic_mode.as_str().to_string(),
            "epsilon" => a.epsilon.to_string(),
            "scorer" => self.scorer.to_string(),
            "eval_seed" => self.eval_seed.to_string(),
            _ => return None,
        })
    }

    /// Applies every pair; unknown keys are errors.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_key_values(text)?)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every key in sorted order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.aggregator.neighbor_budget == 0 {
            return Err(Error::Config("neighbor_budget must be at least 1".into()));
        }
        if !(self.aggregator.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        self.scorer.check_dim(self.train.dim)
    }
}
