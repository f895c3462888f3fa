//! Checkpoint directories: a `key = value` manifest plus one little-endian
//! `f64` file per parameter array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::dataset::{parse_key_values, sha256_hex};
use crate::diff::{Param, ParamKey, ParamStore};
use crate::error::{Error, Result};
use crate::kg::Vocabulary;

pub const MANIFEST: &str = "checkpoint.txt";
const FORMAT: &str = "lankgc-checkpoint-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub config: RunConfig,
    pub epoch: usize,
    pub vocab_checksum: String,
}

impl Checkpoint {
    /// Fails when the checkpoint was trained on a different vocabulary.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let found = vocab.checksum();
        if found != self.vocab_checksum {
            return Err(Error::Checksum {
                path: MANIFEST.into(),
                expected: self.vocab_checksum.clone(),
                found,
            });
        }
        Ok(())
    }
}

fn file_name(key: ParamKey) -> String {
    format!("{}.f64", key.name())
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ParamStore,
    config: &RunConfig,
    epoch: usize,
    vocab: &Vocabulary,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("format = {FORMAT}\nepoch = {epoch}\ndim = {}\n", params.dim());
    manifest.push_str(&format!("vocab.sha256 = {}\n", vocab.checksum()));
    for line in config.to_text().lines() {
        manifest.push_str(&format!("config.{line}\n"));
    }
    for key in params.keys() {
        let p = params.get(key);
        let bytes: Vec<u8> = p.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        let path = dir.join(file_name(key));
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!("param.{}.shape = {}x{}\n", key.name(), p.rows, p.cols));
        manifest.push_str(&format!("param.{}.sha256 = {}\n", key.name(), sha256_hex(&bytes)));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

fn required<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    kv.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Model(format!("checkpoint manifest lacks {key}")))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let kv = parse_key_values(&text)?;
    if required(&kv, "format")? != FORMAT {
        return Err(Error::Model(format!("{} is not a {FORMAT} manifest", path.display())));
    }
    let parse_usize = |key: &str| -> Result<usize> {
        required(&kv, key)?
            .parse()
            .map_err(|_| Error::Model(format!("bad {key} in checkpoint manifest")))
    };
    let dim = parse_usize("dim")?;
    let epoch = parse_usize("epoch")?;
    let mut config = RunConfig::default();
    for (k, v) in &kv {
        if let Some(key) = k.strip_prefix("config.") {
            config.set(key, v)?;
        }
    }
    let mut arrays = Vec::new();
    for key in ParamKey::ALL {
        let Some(shape) = kv.get(&format!("param.{}.shape", key.name())) else {
            continue;
        };
        let (rows, cols) = shape
            .split_once('x')
            .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
            .ok_or_else(|| Error::Model(format!("bad shape {shape:?} for {}", key.name())))?;
        let file = dir.join(file_name(key));
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        let expected = required(&kv, &format!("param.{}.sha256", key.name()))?;
        let found = sha256_hex(&bytes);
        if found != expected {
            return Err(Error::Checksum {
                path: file,
                expected: expected.to_string(),
                found,
            });
        }
        let rows: usize = rows;
        let cols: usize = cols;
        if bytes.len() != rows * cols * 8 {
            return Err(Error::Model(format!(
                "{} holds {} bytes, expected {}",
                file.display(),
                bytes.len(),
                rows * cols * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        arrays.push((key, Param { rows, cols, data }));
    }
    Ok(Checkpoint {
        params: ParamStore::from_params(dim, arrays),
        config,
        epoch,
        vocab_checksum: required(&kv, "vocab.sha256")?.to_string(),
    })
}
