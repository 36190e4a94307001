//! Attention encoder-decoder: a single-layer bidirectional LSTM encoder and a
//! single-layer LSTM decoder with additive attention, plus the scaled
//! diversity-label input used by label fine-tuning.
//!
//! Rows of a batch are processed independently, each on its own [`Tape`];
//! padding therefore never enters a computation and results do not depend on
//! batch composition.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PaddedBatch, TokenId, BOS, DIVLABEL, EOS, PAD};
use crate::error::{Error, Result};
use crate::exec;
use crate::tape::{self, ParamId, ParamStore, Tape, Tensor, Var};

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Per direction; annotations are twice this wide.
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub diversity_label: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embedding_dim: 256,
            encoder_hidden: 256,
            decoder_hidden: 512,
            attention_dim: 256,
            diversity_label: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_dim", self.attention_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.vocab_size <= DIVLABEL as usize {
            return Err(Error::InvalidArgument(
                "vocabulary must contain the reserved tokens".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LstmIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ParamIds {
    src_embedding: ParamId,
    tgt_embedding: ParamId,
    enc_fwd: LstmIds,
    enc_bwd: LstmIds,
    bridge_w: ParamId,
    bridge_b: ParamId,
    attn_query: ParamId,
    attn_key: ParamId,
    attn_v: ParamId,
    dec: LstmIds,
    out_w: ParamId,
    out_b: ParamId,
}

/// Recurrent state carried between decoder steps.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// Encoder output for one source row.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// One `2 * encoder_hidden` annotation per source position.
    pub annotations: Vec<Var>,
    keys: Vec<Var>,
    attn_v: Var,
    logit_mask: Var,
    pub initial: DecoderState,
}

/// Nodes produced by one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub state: DecoderState,
    pub logits: Var,
    pub attention: Var,
}

/// Output distribution of one decoder step, one row per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStepOutput {
    pub probs: Vec<Vec<f64>>,
}

/// Teacher-forced decoding of a whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherForced {
    /// One entry per target position (max target length of the batch).
    pub steps: Vec<DecoderStepOutput>,
    /// `[step][row]` attention weights over the padded source positions.
    pub attention: Vec<Vec<Vec<f64>>>,
    /// Copy of the batch's target mask, `[row][step]`.
    pub mask: Vec<Vec<u8>>,
}

/// Encoder annotations of a whole batch, zero-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    /// `[row][position]` annotation vectors.
    pub annotations: Vec<Vec<Vec<f64>>>,
    /// `[row][position]`: 1 where attention may look, 0 on padding.
    pub attention_mask: Vec<Vec<u8>>,
}

/// A sampled response.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledResponse {
    /// Sampled tokens, EOS excluded.
    pub tokens: Vec<TokenId>,
    /// Log-probability of every sampled step under the temperature-scaled
    /// distribution, including the terminating EOS step when one was drawn.
    pub log_probs: Vec<f64>,
}

/// A response drawn on a tape.
#[derive(Debug, Clone, Default)]
pub struct SampleNodes {
    /// Content tokens, EOS excluded.
    pub tokens: Vec<TokenId>,
    /// Every drawn step, including a terminating EOS.
    pub drawn: Vec<TokenId>,
    /// Log-softmax node and chosen index per drawn step.
    pub picks: Vec<(Var, usize)>,
}

/// The encoder-decoder network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

const INIT_RANGE: f64 = 0.08;

/// Tokens the decoder can never emit; they are never targets.
pub const UNGENERATABLE: [TokenId; 3] = [PAD, BOS, DIVLABEL];
/// Offset added to the logits of [`UNGENERATABLE`] tokens; their
/// probability underflows to exactly zero.
const MASKED_LOGIT: f64 = -1e30;

impl Seq2Seq {
    /// Builds the network with parameters drawn uniformly from [-0.08, 0.08].
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE);
        let mut params = ParamStore::new();
        let mut add = |name: &str, rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
            params.add(name, Tensor { rows, cols, data })
        };
        let v = config.vocab_size;
        let e = config.embedding_dim;
        let he = config.encoder_hidden;
        let hd = config.decoder_hidden;
        let a = config.attention_dim;
        let ids = ParamIds {
            src_embedding: add("src_embedding", v, e),
            tgt_embedding: add("tgt_embedding", v, e),
            enc_fwd: LstmIds {
                w: add("encoder.forward.w", 4 * he, e + he),
                b: add("encoder.forward.b", 1, 4 * he),
            },
            enc_bwd: LstmIds {
                w: add("encoder.backward.w", 4 * he, e + he),
                b: add("encoder.backward.b", 1, 4 * he),
            },
            bridge_w: add("bridge.w", hd, 2 * he),
            bridge_b: add("bridge.b", 1, hd),
            attn_query: add("attention.query", a, hd),
            attn_key: add("attention.key", a, 2 * he),
            attn_v: add("attention.v", 1, a),
            dec: LstmIds {
                w: add("decoder.w", 4 * hd, e + 2 * he + hd),
                b: add("decoder.b", 1, 4 * hd),
            },
            out_w: add("output.w", v, hd + 2 * he),
            out_b: add("output.b", 1, v),
        };
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    /// Replaces the parameters; names and shapes must match.
    pub fn with_params(mut self, params: ParamStore) -> Result<Self> {
        let same = params.names() == self.params.names()
            && params
                .tensors()
                .iter()
                .zip(self.params.tensors())
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols);
        if !same {
            return Err(Error::Checkpoint(
                "parameter names or shapes do not match the model config".into(),
            ));
        }
        self.params = params;
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn lstm_step(
        tape: &mut Tape,
        ids: LstmIds,
        x: Var,
        state: DecoderState,
        hidden: usize,
    ) -> DecoderState {
        let xh = tape.concat(&[x, state.h]);
        let z = tape.matvec(ids.w, xh);
        let b = tape.param(ids.b);
        let z = tape.add(z, b);
        let i = tape.slice(z, 0, hidden);
        let f = tape.slice(z, hidden, hidden);
        let g = tape.slice(z, 2 * hidden, hidden);
        let o = tape.slice(z, 3 * hidden, hidden);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, state.c);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        DecoderState { h, c }
    }

    /// Encodes one unpadded source row. When `label_score` is given the row
    /// must start with DIVLABEL, whose embedding is multiplied by the score.
    pub fn encode_row(
        &self,
        tape: &mut Tape,
        source: &[TokenId],
        label_score: Option<f64>,
    ) -> Encoded {
        assert!(!source.is_empty(), "source rows must be non-empty");
        let he = self.config.encoder_hidden;
        let ids = self.ids;
        let embedded: Vec<Var> = source
            .iter()
            .map(|&tok| {
                let scale = match (tok, label_score) {
                    (DIVLABEL, Some(s)) => s,
                    _ => 1.0,
                };
                tape.embed(ids.src_embedding, tok as usize, scale)
            })
            .collect();
        let zero = || vec![0.0; he];
        let mut state = DecoderState {
            h: tape.input(zero()),
            c: tape.input(zero()),
        };
        let mut fwd = Vec::with_capacity(source.len());
        for &x in &embedded {
            state = Self::lstm_step(tape, ids.enc_fwd, x, state, he);
            fwd.push(state.h);
        }
        let mut state_b = DecoderState {
            h: tape.input(zero()),
            c: tape.input(zero()),
        };
        let mut bwd = vec![state_b.h; source.len()];
        for (j, &x) in embedded.iter().enumerate().rev() {
            state_b = Self::lstm_step(tape, ids.enc_bwd, x, state_b, he);
            bwd[j] = state_b.h;
        }
        let annotations: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat(&[f, b]))
            .collect();
        let keys = annotations
            .iter()
            .map(|&h| tape.matvec(ids.attn_key, h))
            .collect();
        let finals = tape.concat(&[*fwd.last().unwrap(), bwd[0]]);
        let bridged = tape.matvec(ids.bridge_w, finals);
        let bias = tape.param(ids.bridge_b);
        let bridged = tape.add(bridged, bias);
        let h0 = tape.tanh(bridged);
        let c0 = tape.input(vec![0.0; self.config.decoder_hidden]);
        let attn_v = tape.param(ids.attn_v);
        Encoded {
            annotations,
            keys,
            attn_v,
            logit_mask: tape.input(self.logit_mask()),
            initial: DecoderState { h: h0, c: c0 },
        }
    }

    fn logit_mask(&self) -> Vec<f64> {
        let mut mask = vec![0.0; self.config.vocab_size];
        for t in UNGENERATABLE {
            mask[t as usize] = MASKED_LOGIT;
        }
        mask
    }

    /// One decoder step fed with `prev` (the previous target token, or BOS).
    pub fn decoder_step(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        state: DecoderState,
        prev: TokenId,
    ) -> StepNodes {
        let ids = self.ids;
        let query = tape.matvec(ids.attn_query, state.h);
        let scores: Vec<Var> = enc
            .keys
            .iter()
            .map(|&k| {
                let s = tape.add(query, k);
                let s = tape.tanh(s);
                tape.dot(enc.attn_v, s)
            })
            .collect();
        let scores = tape.concat(&scores);
        let attention = tape.softmax(scores);
        let context = tape.weighted_sum(attention, &enc.annotations);
        let emb = tape.embed(ids.tgt_embedding, prev as usize, 1.0);
        let x = tape.concat(&[emb, context]);
        let state = Self::lstm_step(tape, ids.dec, x, state, self.config.decoder_hidden);
        let feat = tape.concat(&[state.h, context]);
        let logits = tape.matvec(ids.out_w, feat);
        let bias = tape.param(ids.out_b);
        let logits = tape.add(logits, bias);
        let logits = tape.add(logits, enc.logit_mask);
        StepNodes {
            state,
            logits,
            attention,
        }
    }

    /// Teacher-forced steps over `target`: step t is fed BOS, y_1 .. y_{t-1}.
    pub fn teacher_forced_row(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        target: &[TokenId],
    ) -> Vec<StepNodes> {
        let mut state = enc.initial;
        let mut prev = BOS;
        let mut out = Vec::with_capacity(target.len());
        for &y in target {
            let step = self.decoder_step(tape, enc, state, prev);
            state = step.state;
            prev = y;
            out.push(step);
        }
        out
    }

    /// Encoder annotations for every row of a batch.
    pub fn encode(&self, batch: &PaddedBatch) -> EncodedBatch {
        let max_src = batch.source.first().map_or(0, Vec::len);
        let width = 2 * self.config.encoder_hidden;
        let rows = exec::map_range(batch.len(), |row| {
            let mut tape = Tape::new(&self.params);
            let enc = self.encode_row(&mut tape, batch.source_row(row), batch.label_score(row));
            let mut ann: Vec<Vec<f64>> = enc
                .annotations
                .iter()
                .map(|&a| tape.value(a).to_vec())
                .collect();
            ann.resize(max_src, vec![0.0; width]);
            ann
        });
        EncodedBatch {
            annotations: rows,
            attention_mask: (0..batch.len())
                .map(|r| {
                    (0..max_src)
                        .map(|p| u8::from(p < batch.source_lengths[r]))
                        .collect()
                })
                .collect(),
        }
    }

    /// Teacher-forced output distributions for every target position of the
    /// batch. Positions past a row's length keep being fed PAD; they are
    /// flagged by the returned mask.
    pub fn decode_teacher_forced(&self, batch: &PaddedBatch) -> TeacherForced {
        let max_src = batch.source.first().map_or(0, Vec::len);
        let per_row = exec::map_range(batch.len(), |row| {
            let mut tape = Tape::new(&self.params);
            let enc = self.encode_row(&mut tape, batch.source_row(row), batch.label_score(row));
            let steps = self.teacher_forced_row(&mut tape, &enc, &batch.target[row]);
            steps
                .iter()
                .map(|s| {
                    let mut attn = tape.value(s.attention).to_vec();
                    attn.resize(max_src, 0.0);
                    (tape::softmax(tape.value(s.logits)), attn)
                })
                .collect::<Vec<_>>()
        });
        let steps_n = batch.max_target_len();
        let mut steps = Vec::with_capacity(steps_n);
        let mut attention = Vec::with_capacity(steps_n);
        for t in 0..steps_n {
            steps.push(DecoderStepOutput {
                probs: per_row.iter().map(|r| r[t].0.clone()).collect(),
            });
            attention.push(per_row.iter().map(|r| r[t].1.clone()).collect());
        }
        TeacherForced {
            steps,
            attention,
            mask: batch.target_mask.clone(),
        }
    }

    /// Greedy decoding; ties go to the lower token id. The returned sequence
    /// excludes EOS.
    pub fn decode_greedy(
        &self,
        source: &[TokenId],
        label_score: Option<f64>,
        max_len: usize,
    ) -> Vec<TokenId> {
        let mut tape = Tape::new(&self.params);
        let enc = self.encode_row(&mut tape, source, label_score);
        let mut state = enc.initial;
        let mut prev = BOS;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let step = self.decoder_step(&mut tape, &enc, state, prev);
            let tok = argmax(tape.value(step.logits)) as TokenId;
            if tok == EOS {
                break;
            }
            out.push(tok);
            state = step.state;
            prev = tok;
        }
        out
    }

    /// Greedy decoding of many sources, in parallel.
    pub fn decode_greedy_batch(
        &self,
        sources: &[Vec<TokenId>],
        label_score: Option<f64>,
        max_len: usize,
    ) -> Vec<Vec<TokenId>> {
        exec::map(sources, |s| {
            if s.is_empty() {
                Vec::new()
            } else {
                self.decode_greedy(s, label_score, max_len)
            }
        })
    }

    /// Multinomial sampling from the temperature-scaled distribution.
    pub fn decode_sampled(
        &self,
        source: &[TokenId],
        label_score: Option<f64>,
        max_len: usize,
        seed: u64,
        temperature: f64,
    ) -> Result<SampledResponse> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new(&self.params);
        let enc = self.encode_row(&mut tape, source, label_score);
        let mut state = enc.initial;
        let mut prev = BOS;
        let mut tokens = Vec::new();
        let mut log_probs = Vec::new();
        for _ in 0..max_len {
            let step = self.decoder_step(&mut tape, &enc, state, prev);
            let scaled: Vec<f64> = tape
                .value(step.logits)
                .iter()
                .map(|z| z / temperature)
                .collect();
            let lse = tape::log_sum_exp(&scaled);
            let probs: Vec<f64> = scaled.iter().map(|z| (z - lse).exp()).collect();
            let tok = sample_index(&probs, &mut rng) as TokenId;
            log_probs.push(scaled[tok as usize] - lse);
            if tok == EOS {
                break;
            }
            tokens.push(tok);
            state = step.state;
            prev = tok;
        }
        Ok(SampledResponse { tokens, log_probs })
    }

    /// Draws a response at temperature 1 on an existing tape. With `forced`
    /// the given steps (a previously drawn sequence, EOS included when it was
    /// drawn) are replayed instead of sampled.
    pub fn sample_on_tape<R: Rng>(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        max_len: usize,
        rng: &mut R,
        forced: Option<&[TokenId]>,
    ) -> SampleNodes {
        let mut state = enc.initial;
        let mut prev = BOS;
        let mut out = SampleNodes::default();
        let steps = forced.map_or(max_len, <[TokenId]>::len);
        for t in 0..steps {
            let step = self.decoder_step(tape, enc, state, prev);
            let logp = tape.log_softmax(step.logits);
            let tok = match forced {
                Some(f) => f[t],
                None => {
                    let probs: Vec<f64> = tape.value(logp).iter().map(|l| l.exp()).collect();
                    sample_index(&probs, rng) as TokenId
                }
            };
            out.picks.push((logp, tok as usize));
            out.drawn.push(tok);
            if tok == EOS {
                break;
            }
            out.tokens.push(tok);
            state = step.state;
            prev = tok;
        }
        out
    }

    /// Puts DIVLABEL at source position 0 of every row; its embedding will be
    /// scaled by the row's score.
    pub fn prepend_diversity_label(
        &self,
        batch: &PaddedBatch,
        scores: &[f64],
    ) -> Result<PaddedBatch> {
        if !self.config.diversity_label {
            return Err(Error::LabelDisabled);
        }
        prepend_label(batch, scores)
    }

    /// Log-probability of each token of `tokens` (EOS appended) under
    /// teacher forcing.
    pub fn sequence_log_probs(
        &self,
        source: &[TokenId],
        label_score: Option<f64>,
        tokens: &[TokenId],
    ) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let enc = self.encode_row(&mut tape, source, label_score);
        let mut target = tokens.to_vec();
        target.push(EOS);
        self.teacher_forced_row(&mut tape, &enc, &target)
            .iter()
            .zip(&target)
            .map(|(s, &y)| {
                let z = tape.value(s.logits);
                z[y as usize] - tape::log_sum_exp(z)
            })
            .collect()
    }

    /// Embedding actually fed to the encoder at a source position.
    pub fn source_embedding(&self, token: TokenId, label_score: Option<f64>) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let scale = match (token, label_score) {
            (DIVLABEL, Some(s)) => s,
            _ => 1.0,
        };
        let v = tape.embed(self.ids.src_embedding, token as usize, scale);
        tape.value(v).to_vec()
    }
}

pub(crate) fn prepend_label(batch: &PaddedBatch, scores: &[f64]) -> Result<PaddedBatch> {
    if scores.len() != batch.len() {
        return Err(Error::InvalidArgument(format!(
            "{} label scores for a batch of {}",
            scores.len(),
            batch.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "label score {s} is not finite"
        )));
    }
    if batch.label_scores.is_some() {
        return Err(Error::InvalidArgument(
            "batch already carries a diversity label".into(),
        ));
    }
    let mut out = batch.clone();
    for row in &mut out.source {
        row.insert(0, DIVLABEL);
    }
    for len in &mut out.source_lengths {
        *len += 1;
    }
    out.label_scores = Some(scores.to_vec());
    debug_assert!(out
        .source
        .iter()
        .all(|r| r[0] == DIVLABEL && r[1..].iter().all(|&t| t != DIVLABEL || t == PAD)));
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
