//! On-disk training state.
//!
//! A checkpoint is a directory:
//!
//! * `params.bin`: parameter tensors (little-endian f64, see [`write_tensors`])
//! * `optimizer.bin`: Adam first and second moments in the same format
//! * `manifest.json`: configs, step, AvgOut tracker, reward baseline, vocabulary hash
//! * `vocab.txt`: the vocabulary, one token per line
//! * `avgout.json`: standalone export of the tracker for scoring

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::avgout::{AvgOutExport, AvgOutTracker};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::losses::RewardBaseline;
use crate::model::{ModelConfig, Seq2Seq};
use crate::optim::{Adam, AdamConfig};
use crate::tape::{ParamStore, Tensor};
use crate::trainer::{EvalSnapshot, TrainConfig};

const MAGIC: &[u8; 8] = b"AVGOUTT1";
const FORMAT_VERSION: u32 = 1;

/// Writes named tensors as: magic, u64 count, then per tensor u64 name
/// length, name bytes, u64 rows, u64 cols and rows*cols f64 values.
pub fn write_tensors<W: Write>(
    mut w: W,
    names: &[String],
    tensors: &[Tensor],
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in names.iter().zip(tensors) {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<ParamStore> {
    let bad = |e: std::io::Error| Error::Checkpoint(format!("truncated tensor archive: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a tensor archive".into()));
    }
    let n = read_u64(&mut r).map_err(bad)?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let len = read_u64(&mut r).map_err(bad)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(bad)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = read_u64(&mut r).map_err(bad)? as usize;
        let cols = read_u64(&mut r).map_err(bad)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_bits(read_u64(&mut r).map_err(bad)?));
        }
        store.add(name, Tensor { rows, cols, data });
    }
    Ok(store)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    train_config: TrainConfig,
    model_config: ModelConfig,
    step: u64,
    vocab_hash: String,
    parameter_count: usize,
    optimizer: AdamConfig,
    optimizer_step: u64,
    tracker: AvgOutTracker,
    baseline: RewardBaseline,
    best_eval: Option<EvalSnapshot>,
}

/// Complete training state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub model: Seq2Seq,
    pub optimizer: Adam,
    pub tracker: AvgOutTracker,
    pub baseline: RewardBaseline,
    pub step: u64,
    pub best_eval: Option<EvalSnapshot>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params = self.model.params();

        let mut buf = Vec::new();
        write_tensors(&mut buf, params.names(), params.tensors()).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("params.bin"), &buf)?;

        let names: Vec<String> = params
            .names()
            .iter()
            .map(|n| format!("m:{n}"))
            .chain(params.names().iter().map(|n| format!("v:{n}")))
            .collect();
        let moments: Vec<Tensor> = self
            .optimizer
            .m
            .iter()
            .chain(&self.optimizer.v)
            .cloned()
            .collect();
        buf.clear();
        write_tensors(&mut buf, &names, &moments).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("optimizer.bin"), &buf)?;

        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            train_config: self.config.clone(),
            model_config: self.model.config().clone(),
            step: self.step,
            vocab_hash: self.vocab.hash(),
            parameter_count: params.size(),
            optimizer: self.optimizer.config,
            optimizer_step: self.optimizer.step,
            tracker: self.tracker.clone(),
            baseline: self.baseline,
            best_eval: self.best_eval.clone(),
        };
        write_file(
            &dir.join("manifest.json"),
            (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
        )?;
        self.vocab.save(dir.join("vocab.txt"))?;
        AvgOutExport::new(&self.tracker, self.vocab.tokens()).save(dir.join("avgout.json"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let manifest: Manifest = serde_json::from_slice(&read("manifest.json")?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(Error::Checkpoint(
                "vocabulary does not match the manifest hash".into(),
            ));
        }
        if vocab.len() != manifest.model_config.vocab_size
            || manifest.tracker.vocab_size() != vocab.len()
        {
            return Err(Error::Checkpoint(
                "vocabulary size does not match the model".into(),
            ));
        }
        let params = read_tensors(read("params.bin")?.as_slice())?;
        let model = Seq2Seq::new(manifest.model_config.clone(), 0)?.with_params(params)?;

        let moments = read_tensors(read("optimizer.bin")?.as_slice())?;
        let n = model.params().tensors().len();
        if moments.tensors().len() != 2 * n {
            return Err(Error::Checkpoint(
                "optimizer state does not match the parameters".into(),
            ));
        }
        let mut optimizer = Adam::new(manifest.optimizer, model.params());
        optimizer.step = manifest.optimizer_step;
        optimizer.m = moments.tensors()[..n].to_vec();
        optimizer.v = moments.tensors()[n..].to_vec();

        Ok(Self {
            config: manifest.train_config,
            vocab,
            model,
            optimizer,
            tracker: manifest.tracker,
            baseline: manifest.baseline,
            step: manifest.step,
            best_eval: manifest.best_eval,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_archive_round_trips_bits() {
        let names = vec!["a".to_string(), "bb".to_string()];
        let tensors = vec![
            Tensor {
                rows: 1,
                cols: 3,
                data: vec![0.1, -0.0, f64::MIN_POSITIVE],
            },
            Tensor {
                rows: 2,
                cols: 1,
                data: vec![1e300, -7.25],
            },
        ];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &names, &tensors).unwrap();
        let store = read_tensors(buf.as_slice()).unwrap();
        assert_eq!(store.names(), names.as_slice());
        for (a, b) in store.tensors().iter().zip(&tensors) {
            let bits = |t: &Tensor| t.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert!(read_tensors(&buf[..buf.len() - 3]).is_err());
        assert!(read_tensors(&b"nonsense"[..]).is_err());
    }
}
