//! Training loop, configuration and generation.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::avgout::{AvgOutTracker, DEFAULT_GAMMA};
use crate::checkpoint::Checkpoint;
use crate::corpus::{
    self, DialogueExample, LoadOptions, PaddedBatch, TokenId, Vocabulary, DIVLABEL,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::losses::{
    self, LossBreakdown, LossWeights, Objective, RewardBaseline, Sampling, StepSpec,
};
use crate::metrics::{self, DiversityReport};
use crate::model::{ModelConfig, Seq2Seq};
use crate::optim::{clip_global_norm, Adam, AdamConfig};

/// Header of the per-step training log.
pub const LOG_HEADER: &str = "step,L_ML,L_B,L_RL,total,B_c,B_d,R_b";
pub const LOG_FILE: &str = "train_log.csv";

/// Every training hyperparameter. The config file uses these field names
/// as keys (`key = value`, `#` comments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub weights: LossWeights,
    pub gamma: f64,
    pub baseline_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gradient_clip_norm: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Steps between held-out evaluations; 0 disables them.
    pub eval_interval: u64,
    /// Examples held out from the training corpus for evaluation.
    pub holdout: usize,
    pub lft_inference_score: f64,
    pub embedding_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    /// Longest sampled response for rl and hybrid.
    pub sample_max_len: usize,
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        let model = ModelConfig::new(0);
        let load = LoadOptions::default();
        Self {
            objective,
            weights: LossWeights::default(),
            gamma: DEFAULT_GAMMA,
            baseline_decay: DEFAULT_GAMMA,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            gradient_clip_norm: 5.0,
            seed: 0,
            checkpoint_interval: 0,
            eval_interval: 0,
            holdout: 0,
            lft_inference_score: 0.015,
            embedding_dim: model.embedding_dim,
            encoder_hidden: model.encoder_hidden,
            decoder_hidden: model.decoder_hidden,
            attention_dim: model.attention_dim,
            max_source_len: load.max_source_len,
            max_target_len: load.max_target_len,
            sample_max_len: load.max_target_len,
        }
    }

    /// Parses a config file. `objective` (from the command line) takes
    /// precedence over an `objective` key. The weight of the chosen objective
    /// (`alpha`, `beta` or `hybrid_shared`) must be present.
    pub fn parse(text: &str, objective: Option<Objective>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            pairs.push((i + 1, k.trim().replace('-', "_"), v.trim().to_string()));
        }
        let from_file = pairs
            .iter()
            .find(|(_, k, _)| k == "objective")
            .map(|(line, _, v)| {
                v.parse::<Objective>().map_err(|e| Error::Config {
                    line: *line,
                    message: e.to_string(),
                })
            })
            .transpose()?;
        let objective = objective
            .or(from_file)
            .ok_or_else(|| Error::MissingKey("objective".into()))?;
        let mut cfg = Self::new(objective);
        for (line, key, value) in &pairs {
            cfg.set(key, value).map_err(|message| Error::Config {
                line: *line,
                message,
            })?;
        }
        cfg.objective = objective;
        let required = match objective {
            Objective::MinAvgOut => Some("alpha"),
            Objective::Rl => Some("beta"),
            Objective::Hybrid => Some("hybrid_shared"),
            Objective::Ml | Objective::Lft => None,
        };
        if let Some(key) = required {
            if !pairs.iter().any(|(_, k, _)| k == key) {
                return Err(Error::MissingKey(key.into()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>, objective: Option<Objective>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, objective)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value `{value}` for `{key}`"))
        }
        match key {
            "objective" => {}
            "alpha" => self.weights.alpha = num(key, value)?,
            "beta" => self.weights.beta = num(key, value)?,
            "hybrid_shared" => self.weights.hybrid_shared = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "baseline_decay" => self.baseline_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "gradient_clip_norm" => self.gradient_clip_norm = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "holdout" => self.holdout = num(key, value)?,
            "lft_inference_score" => self.lft_inference_score = num(key, value)?,
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "encoder_hidden" => self.encoder_hidden = num(key, value)?,
            "decoder_hidden" => self.decoder_hidden = num(key, value)?,
            "attention_dim" => self.attention_dim = num(key, value)?,
            "max_source_len" => self.max_source_len = num(key, value)?,
            "max_target_len" => self.max_target_len = num(key, value)?,
            "sample_max_len" => self.sample_max_len = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let invalid = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return invalid("gamma must be in (0, 1]");
        }
        if !(self.baseline_decay > 0.0 && self.baseline_decay <= 1.0) {
            return invalid("baseline_decay must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be positive");
        }
        if self.gradient_clip_norm.is_nan() || self.gradient_clip_norm < 0.0 {
            return invalid("gradient_clip_norm must be non-negative");
        }
        if !self.lft_inference_score.is_finite() {
            return invalid("lft_inference_score must be finite");
        }
        if self.max_source_len == 0 || self.max_target_len < 2 || self.sample_max_len == 0 {
            return invalid("length caps must be positive (max_target_len at least 2)");
        }
        self.model_config(DIVLABEL as usize + 1).validate()
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embedding_dim: self.embedding_dim,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
            attention_dim: self.attention_dim,
            diversity_label: self.objective == Objective::Lft,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            max_source_len: self.max_source_len,
            max_target_len: self.max_target_len,
        }
    }

    /// The resolved configuration in config-file syntax.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("objective", &self.objective);
        kv("alpha", &self.weights.alpha);
        kv("beta", &self.weights.beta);
        kv("hybrid_shared", &self.weights.hybrid_shared);
        kv("gamma", &self.gamma);
        kv("baseline_decay", &self.baseline_decay);
        kv("epochs", &self.epochs);
        kv("batch_size", &self.batch_size);
        kv("learning_rate", &self.learning_rate);
        kv("gradient_clip_norm", &self.gradient_clip_norm);
        kv("seed", &self.seed);
        kv("checkpoint_interval", &self.checkpoint_interval);
        kv("eval_interval", &self.eval_interval);
        kv("holdout", &self.holdout);
        kv("lft_inference_score", &self.lft_inference_score);
        kv("embedding_dim", &self.embedding_dim);
        kv("encoder_hidden", &self.encoder_hidden);
        kv("decoder_hidden", &self.decoder_hidden);
        kv("attention_dim", &self.attention_dim);
        kv("max_source_len", &self.max_source_len);
        kv("max_target_len", &self.max_target_len);
        kv("sample_max_len", &self.sample_max_len);
        s
    }
}

/// Metrics of one held-out evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub step: u64,
    /// Mean per-example negative log-likelihood of the references.
    pub ml_loss: f64,
    pub report: DiversityReport,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn log_line(step: u64, b: &LossBreakdown) -> String {
    format!(
        "{step},{},{},{},{},{},{},{}",
        b.l_ml, b.l_b, b.l_rl, b.total, b.b_c, b.b_d, b.reward_baseline
    )
}

/// Owns the model and every piece of mutable training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    vocab: Vocabulary,
    model: Seq2Seq,
    optimizer: Adam,
    tracker: AvgOutTracker,
    baseline: RewardBaseline,
    step: u64,
    best_eval: Option<EvalSnapshot>,
    empty_samples: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let model = Seq2Seq::new(config.model_config(vocab.len()), mix(config.seed, 0x5eed))?;
        let optimizer = Adam::new(
            AdamConfig {
                learning_rate: config.learning_rate,
                ..Default::default()
            },
            model.params(),
        );
        Ok(Self {
            tracker: AvgOutTracker::for_vocab(vocab.len(), config.gamma)?,
            baseline: RewardBaseline::new(config.baseline_decay),
            config,
            vocab,
            model,
            optimizer,
            step: 0,
            best_eval: None,
            empty_samples: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self {
            config: ckpt.config,
            vocab: ckpt.vocab,
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            tracker: ckpt.tracker,
            baseline: ckpt.baseline,
            step: ckpt.step,
            best_eval: ckpt.best_eval,
            empty_samples: 0,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            tracker: self.tracker.clone(),
            baseline: self.baseline,
            step: self.step,
            best_eval: self.best_eval.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn model(&self) -> &Seq2Seq {
        &self.model
    }

    pub fn tracker(&self) -> &AvgOutTracker {
        &self.tracker
    }

    pub fn baseline(&self) -> &RewardBaseline {
        &self.baseline
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn best_eval(&self) -> Option<&EvalSnapshot> {
        self.best_eval.as_ref()
    }

    /// Sampled responses with no content token so far (they contribute no RL term).
    pub fn empty_samples(&self) -> u64 {
        self.empty_samples
    }

    fn dump_batch(&self, batch: &PaddedBatch) -> String {
        let mut s = String::new();
        for row in 0..batch.len() {
            let _ = writeln!(
                s,
                "  [{row}] {} => {}",
                self.vocab.decode(batch.source_row(row)),
                self.vocab.decode(batch.target_row(row))
            );
        }
        s
    }

    /// One optimisation step on `batch`.
    pub fn train_step(&mut self, batch: &PaddedBatch) -> Result<LossBreakdown> {
        let step = self.step + 1;
        let out = if self.config.objective == Objective::Lft {
            losses::lft_step_loss(&self.model, batch, &self.tracker)?.1
        } else {
            let (alpha, beta) = self.config.weights.coefficients(self.config.objective);
            let sampling = if self.config.objective.samples() {
                Sampling::Draw {
                    seed: mix(self.config.seed, step),
                    max_len: self.config.sample_max_len,
                }
            } else {
                Sampling::Off
            };
            losses::objective_step(
                &self.model,
                batch,
                &self.tracker,
                &self.baseline,
                StepSpec {
                    alpha,
                    beta,
                    sampling,
                },
            )?
        };
        if !out.breakdown.is_finite() || !out.gradients.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                breakdown: out.breakdown.to_string(),
                batch: self.dump_batch(batch),
            });
        }
        let mut grads = out.gradients;
        clip_global_norm(&mut grads, self.config.gradient_clip_norm);
        self.optimizer.update(self.model.params_mut(), &grads);
        self.tracker.ema_update(&out.summary);
        if let Some(r) = out.batch_reward {
            self.baseline.update(r);
        }
        if out.empty_samples > 0 {
            self.empty_samples += out.empty_samples as u64;
            log::debug!("step {step}: {} empty samples", out.empty_samples);
        }
        self.step = step;
        Ok(out.breakdown)
    }

    /// Batches of epoch `epoch`; a fixed function of the seed.
    pub fn epoch_batches(
        &self,
        examples: &[DialogueExample],
        epoch: usize,
    ) -> Result<Vec<PaddedBatch>> {
        corpus::make_batches(
            examples,
            self.config.batch_size,
            mix(self.config.seed, epoch as u64 + 1),
        )
    }

    /// Trains until `epochs` are complete, continuing from the current step.
    /// With `out_dir`, log rows are appended to `train_log.csv` and
    /// checkpoints are written there.
    pub fn run(
        &mut self,
        train: &[DialogueExample],
        holdout: &[DialogueExample],
        out_dir: Option<&Path>,
    ) -> Result<Vec<(u64, LossBreakdown)>> {
        self.run_until(train, holdout, out_dir, u64::MAX)
    }

    /// Like [`Trainer::run`] but stops after step `stop` (or at the end of
    /// the last epoch, whichever comes first).
    pub fn run_until(
        &mut self,
        train: &[DialogueExample],
        holdout: &[DialogueExample],
        out_dir: Option<&Path>,
        stop: u64,
    ) -> Result<Vec<(u64, LossBreakdown)>> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let per_epoch = train.len().div_ceil(self.config.batch_size) as u64;
        let total = (per_epoch * self.config.epochs as u64).min(stop);
        let mut log = match out_dir {
            Some(dir) => Some(open_log(dir, self.step > 0)?),
            None => None,
        };
        let mut rows = Vec::new();
        while self.step < total {
            let epoch = (self.step / per_epoch) as usize;
            let skip = (self.step % per_epoch) as usize;
            let batches = self.epoch_batches(train, epoch)?;
            for batch in &batches[skip..] {
                if self.step >= total {
                    break;
                }
                let b = self.train_step(batch)?;
                if let Some(w) = log.as_mut() {
                    writeln!(w, "{}", log_line(self.step, &b))
                        .map_err(|e| Error::io(LOG_FILE, e))?;
                }
                rows.push((self.step, b));
                if self.config.eval_interval > 0
                    && self.step.is_multiple_of(self.config.eval_interval)
                    && !holdout.is_empty()
                {
                    let snap = self.evaluate(holdout)?;
                    log::info!(
                        "step {}: eval NLL {:.4}, iAUC-avg {:.4}, distinct-1 {:.4}",
                        snap.step,
                        snap.ml_loss,
                        snap.report.iauc_avg,
                        snap.report.distinct_1
                    );
                    if self
                        .best_eval
                        .as_ref()
                        .is_none_or(|b| snap.report.iauc_avg > b.report.iauc_avg)
                    {
                        self.best_eval = Some(snap);
                    }
                }
                if let (Some(dir), true) = (
                    out_dir,
                    self.config.checkpoint_interval > 0
                        && self.step.is_multiple_of(self.config.checkpoint_interval),
                ) {
                    if let Some(w) = log.as_mut() {
                        w.flush().map_err(|e| Error::io(LOG_FILE, e))?;
                    }
                    self.checkpoint().save(dir)?;
                }
            }
            log::info!("epoch {} done at step {}", epoch + 1, self.step);
        }
        if let Some(dir) = out_dir {
            if let Some(w) = log.as_mut() {
                w.flush().map_err(|e| Error::io(LOG_FILE, e))?;
            }
            self.checkpoint().save(dir)?;
        }
        if self.empty_samples > 0 {
            log::warn!(
                "{} sampled responses were empty and received no RL signal",
                self.empty_samples
            );
        }
        Ok(rows)
    }

    /// Label score used at inference (LFT only).
    pub fn inference_label(&self) -> Option<f64> {
        (self.config.objective == Objective::Lft).then_some(self.config.lft_inference_score)
    }

    /// Greedy generations and reference likelihood on held-out examples.
    pub fn evaluate(&self, examples: &[DialogueExample]) -> Result<EvalSnapshot> {
        let label = self.inference_label();
        let responses = greedy_responses(&self.model, examples, label, self.config.max_target_len);
        let decoded: Vec<Vec<String>> = responses
            .iter()
            .map(|r| metrics::tokenize(&self.vocab.decode(r)))
            .collect();
        Ok(EvalSnapshot {
            step: self.step,
            ml_loss: mean_nll(&self.model, examples, label),
            report: metrics::evaluate_corpus(&decoded, None, None)?,
        })
    }
}

fn open_log(dir: &Path, append: bool) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(LOG_FILE);
    if append && path.exists() {
        let f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        return Ok(BufWriter::new(f));
    }
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
    Ok(w)
}

fn with_label(source: &[TokenId], label: Option<f64>) -> Vec<TokenId> {
    match label {
        Some(_) => std::iter::once(DIVLABEL)
            .chain(source.iter().copied())
            .collect(),
        None => source.to_vec(),
    }
}

/// Greedy responses (EOS excluded) for each example's source.
pub fn greedy_responses(
    model: &Seq2Seq,
    examples: &[DialogueExample],
    label: Option<f64>,
    max_len: usize,
) -> Vec<Vec<TokenId>> {
    let sources: Vec<Vec<TokenId>> = examples
        .iter()
        .map(|e| with_label(&e.source, label))
        .collect();
    model.decode_greedy_batch(&sources, label, max_len)
}

/// Mean over examples of the reference's negative log-likelihood.
pub fn mean_nll(model: &Seq2Seq, examples: &[DialogueExample], label: Option<f64>) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let nll = exec::map(examples, |e| {
        let lp = model.sequence_log_probs(&with_label(&e.source, label), label, e.response());
        -lp.iter()
            .map(|l| l.max(losses::LOG_EPSILON.ln()))
            .sum::<f64>()
    });
    nll.iter().sum::<f64>() / examples.len() as f64
}

/// Splits off the last `config.holdout` examples, trains and (with
/// `out_dir`) writes the log and final checkpoint.
pub fn train(
    config: TrainConfig,
    vocab: Vocabulary,
    examples: &[DialogueExample],
    out_dir: Option<&Path>,
) -> Result<Trainer> {
    if config.holdout >= examples.len() {
        return Err(Error::InvalidArgument(format!(
            "holdout of {} leaves no training examples out of {}",
            config.holdout,
            examples.len()
        )));
    }
    let (train, holdout) = examples.split_at(examples.len() - config.holdout);
    let mut trainer = Trainer::new(config, vocab)?;
    trainer.run(train, holdout, out_dir)?;
    Ok(trainer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "sample" => Ok(DecodeMode::Sample),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode `{s}` (expected greedy or sample)"
            ))),
        }
    }
}

/// One response per source line. LFT checkpoints use `lft_score` or the
/// configured inference score; passing a score to any other checkpoint is
/// an error. Sampling seeds line `i` from `(seed, i)`.
pub fn generate(
    ckpt: &Checkpoint,
    lines: &[&str],
    mode: DecodeMode,
    lft_score: Option<f64>,
    seed: u64,
) -> Result<Vec<String>> {
    let is_lft = ckpt.model.config().diversity_label;
    if lft_score.is_some() && !is_lft {
        return Err(Error::InvalidArgument(
            "--lft-score given for a checkpoint not trained with lft".into(),
        ));
    }
    if let Some(s) = lft_score.filter(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lft score {s} is not finite"
        )));
    }
    let label = is_lft.then(|| lft_score.unwrap_or(ckpt.config.lft_inference_score));
    let max_len = ckpt.config.max_target_len;
    let sources: Vec<Vec<TokenId>> = lines
        .iter()
        .map(|l| corpus::encode_source(l, &ckpt.vocab, ckpt.config.max_source_len))
        .collect();
    let idx: Vec<usize> = (0..sources.len()).collect();
    let out = exec::map(&idx, |&i| -> Result<Vec<TokenId>> {
        let src = &sources[i];
        if src.is_empty() {
            return Ok(Vec::new());
        }
        let src = with_label(src, label);
        match mode {
            DecodeMode::Greedy => Ok(ckpt.model.decode_greedy(&src, label, max_len)),
            DecodeMode::Sample => Ok(ckpt
                .model
                .decode_sampled(&src, label, max_len, mix(seed, i as u64), 1.0)?
                .tokens),
        }
    });
    out.into_iter()
        .map(|r| r.map(|t| ckpt.vocab.decode(&t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_requires_objective_weight() {
        let err = TrainConfig::parse("epochs = 2\n", Some(Objective::Hybrid)).unwrap_err();
        assert!(
            matches!(&err, Error::MissingKey(k) if k == "hybrid_shared"),
            "{err}"
        );
        assert!(
            matches!(TrainConfig::parse("", Some(Objective::Rl)), Err(Error::MissingKey(k)) if k == "beta")
        );
        assert!(
            matches!(TrainConfig::parse("", None), Err(Error::MissingKey(k)) if k == "objective")
        );
        let cfg = TrainConfig::parse(
            "# comment\nhybrid-shared = 7 # inline\nseed=9\n",
            Some(Objective::Hybrid),
        )
        .unwrap();
        assert_eq!(cfg.weights.hybrid_shared, 7.0);
        assert_eq!(cfg.seed, 9);
        assert!(matches!(
            TrainConfig::parse("bogus = 1", Some(Objective::Ml)),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            TrainConfig::parse("\nepochs = x", Some(Objective::Ml)),
            Err(Error::Config { line: 2, .. })
        ));
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = TrainConfig::new(Objective::MinAvgOut);
        cfg.learning_rate = 0.0031;
        cfg.holdout = 5;
        assert_eq!(TrainConfig::parse(&cfg.to_text(), None).unwrap(), cfg);
    }

    #[test]
    fn seed_mixing_separates_streams() {
        assert_ne!(mix(1, 2), mix(2, 1));
        assert_ne!(mix(0, 0), mix(0, 1));
    }
}
