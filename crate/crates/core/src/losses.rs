//! Training objectives: maximum likelihood, MinAvgOut, LFT, RL and their
//! hybrid.
//!
//! A step runs in three phases. Every batch row is first forwarded on its own
//! tape (in parallel), producing teacher-forced log-distributions, partial
//! sums for the batch distribution `D'` and, for the reinforcement objectives,
//! a sampled response. The batch-level quantities (`B_c`, rewards, the
//! baseline) are then combined, and finally each row tape is seeded with the
//! cotangents of the total loss and back-propagated. The running distribution
//! `D` and the baseline `R_b` only ever enter as constants.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::avgout::{self, AvgOutTracker, BatchDistributionSummary};
use crate::corpus::{PaddedBatch, TokenId};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{DecoderStepOutput, Seq2Seq};
use crate::tape::{Gradients, Tape, Var};

/// Floor applied to probabilities before taking logs.
pub const LOG_EPSILON: f64 = 1e-12;

/// The five training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ml,
    MinAvgOut,
    Lft,
    Rl,
    Hybrid,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Ml,
        Objective::MinAvgOut,
        Objective::Lft,
        Objective::Rl,
        Objective::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Ml => "ml",
            Objective::MinAvgOut => "minavgout",
            Objective::Lft => "lft",
            Objective::Rl => "rl",
            Objective::Hybrid => "hybrid",
        }
    }

    pub fn samples(self) -> bool {
        matches!(self, Objective::Rl | Objective::Hybrid)
    }

    pub fn uses_label(self) -> bool {
        self == Objective::Lft
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown objective `{s}` (expected ml, minavgout, lft, rl or hybrid)"
                ))
            })
    }
}

/// Coefficients of the diversity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// MinAvgOut coefficient.
    pub alpha: f64,
    /// RL coefficient.
    pub beta: f64,
    /// Replaces both alpha and beta for the hybrid objective.
    pub hybrid_shared: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 100.0,
            hybrid_shared: 50.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("hybrid_shared", self.hybrid_shared),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Effective (alpha, beta) for an objective.
    pub fn coefficients(&self, objective: Objective) -> (f64, f64) {
        match objective {
            Objective::Ml | Objective::Lft => (0.0, 0.0),
            Objective::MinAvgOut => (self.alpha, 0.0),
            Objective::Rl => (0.0, self.beta),
            Objective::Hybrid => (self.hybrid_shared, self.hybrid_shared),
        }
    }
}

/// Loss components of one step. `l_rl` holds the weighted contribution
/// `beta * L_RL`, so `total = l_ml + l_b + l_rl`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ml: f64,
    pub l_b: f64,
    pub l_rl: f64,
    pub total: f64,
    pub b_c: f64,
    /// Mean `B_d` over the batch's scored samples (0 when nothing was sampled).
    pub b_d: f64,
    /// Reward used for the step; equals `b_d`.
    pub reward: f64,
    /// Baseline the advantages were computed against.
    pub reward_baseline: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.l_ml,
            self.l_b,
            self.l_rl,
            self.total,
            self.b_c,
            self.b_d,
            self.reward_baseline,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L_ML={} L_B={} L_RL={} total={} B_c={} B_d={} R_b={}",
            self.l_ml, self.l_b, self.l_rl, self.total, self.b_c, self.b_d, self.reward_baseline
        )
    }
}

/// Exponential average of past rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    pub value: f64,
    pub decay: f64,
    pub update_count: u64,
    /// False until the first reward arrives; the first batch is then scored
    /// against its own mean reward.
    pub initialized: bool,
}

impl RewardBaseline {
    pub fn new(decay: f64) -> Self {
        Self {
            value: 0.0,
            decay,
            update_count: 0,
            initialized: false,
        }
    }

    pub fn with_value(value: f64, decay: f64) -> Self {
        Self {
            value,
            decay,
            update_count: 0,
            initialized: true,
        }
    }

    /// Baseline to score a batch whose mean reward is `batch_reward` against.
    pub fn current(&self, batch_reward: f64) -> f64 {
        if self.initialized {
            self.value
        } else {
            batch_reward
        }
    }

    /// `R_b <- decay * R + (1 - decay) * R_b`.
    pub fn update(&mut self, reward: f64) {
        if self.initialized {
            self.value = self.decay * reward + (1.0 - self.decay) * self.value;
        } else {
            self.value = reward;
            self.initialized = true;
        }
        self.update_count += 1;
    }
}

/// `-sum_t log p(y_t*)` over unmasked positions, averaged over rows.
/// `steps[t].probs[row]` must be the teacher-forced distribution for
/// `targets[row][t]`.
pub fn ml_loss(steps: &[DecoderStepOutput], targets: &[Vec<TokenId>], mask: &[Vec<u8>]) -> f64 {
    let rows = targets.len();
    let mut total = 0.0;
    for row in 0..rows {
        let mut row_sum = 0.0;
        for (t, step) in steps.iter().enumerate() {
            if mask[row].get(t).copied().unwrap_or(0) == 0 {
                continue;
            }
            let p = step.probs[row][targets[row][t] as usize];
            row_sum -= p.max(LOG_EPSILON).ln();
        }
        total += row_sum;
    }
    total / rows as f64
}

/// `L_B = -alpha * B_c`.
pub fn minavgout_loss(b_c: f64, alpha: f64) -> f64 {
    -alpha * b_c
}

/// `L_RL = -(R - R_b) * sum_t log p(y_t^s)` for one sample (unweighted).
pub fn rl_loss(sampled_log_probs: &[f64], reward: f64, baseline: f64) -> f64 {
    if sampled_log_probs.is_empty() {
        return 0.0;
    }
    -(reward - baseline) * sampled_log_probs.iter().sum::<f64>()
}

/// Where sampled responses come from in a step.
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a> {
    /// No sampling pass.
    Off,
    /// Draw one response per row, row `i` seeded from `(seed, i)`.
    Draw { seed: u64, max_len: usize },
    /// Replay previously drawn responses (EOS included when it was drawn).
    Fixed(&'a [Vec<TokenId>]),
}

/// Everything a loss step needs besides the model.
#[derive(Debug, Clone, Copy)]
pub struct StepSpec<'a> {
    pub alpha: f64,
    pub beta: f64,
    pub sampling: Sampling<'a>,
}

/// Result of one objective evaluation.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    pub gradients: Gradients,
    /// `D'` of the batch (teacher-forced).
    pub summary: BatchDistributionSummary,
    /// Drawn responses per row, EOS included when drawn.
    pub samples: Vec<Vec<TokenId>>,
    /// `B_d` per row; `None` for empty samples.
    pub rewards: Vec<Option<f64>>,
    /// Mean reward over scored rows, when any.
    pub batch_reward: Option<f64>,
    /// Rows whose sample had no content token.
    pub empty_samples: usize,
}

struct RowPass<'p> {
    tape: Tape<'p>,
    /// (log-softmax node, target id, floored)
    steps: Vec<(Var, usize, bool)>,
    ml: f64,
    sums: Vec<f64>,
    weighted: f64,
    content: f64,
    sample_picks: Vec<(Var, usize)>,
    drawn: Vec<TokenId>,
    reward: Option<f64>,
    sample_log_prob: f64,
}

fn row_seed(seed: u64, row: usize) -> u64 {
    seed ^ (row as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn forward_row<'p>(
    model: &'p Seq2Seq,
    batch: &PaddedBatch,
    row: usize,
    tracker: &AvgOutTracker,
    content_mask: &[bool],
    sampling: Sampling<'_>,
) -> RowPass<'p> {
    let mut tape = Tape::new(model.params());
    let enc = model.encode_row(&mut tape, batch.source_row(row), batch.label_score(row));
    let target = batch.target_row(row);
    let d = tracker.distribution();
    let v = d.len();
    let mut sums = vec![0.0; v];
    let mut steps = Vec::with_capacity(target.len());
    let (mut ml, mut weighted, mut content) = (0.0, 0.0, 0.0);
    let floor = LOG_EPSILON.ln();
    for (node, &y) in model
        .teacher_forced_row(&mut tape, &enc, target)
        .iter()
        .zip(target)
    {
        let logp = tape.log_softmax(node.logits);
        let lp = tape.value(logp);
        let floored = lp[y as usize] < floor;
        ml -= lp[y as usize].max(floor);
        for k in 0..v {
            let p = lp[k].exp();
            sums[k] += p;
            weighted += d[k] * p;
            if content_mask[k] {
                content += p;
            }
        }
        steps.push((logp, y as usize, floored));
    }

    let mut pass = RowPass {
        tape,
        steps,
        ml,
        sums,
        weighted,
        content,
        sample_picks: Vec::new(),
        drawn: Vec::new(),
        reward: None,
        sample_log_prob: 0.0,
    };
    let (forced, max_len, seed) = match sampling {
        Sampling::Off => return pass,
        Sampling::Draw { seed, max_len } => (None, max_len, row_seed(seed, row)),
        Sampling::Fixed(samples) => (Some(samples[row].as_slice()), samples[row].len(), 0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = model.sample_on_tape(&mut pass.tape, &enc, max_len, &mut rng, forced);
    pass.sample_log_prob = sample
        .picks
        .iter()
        .map(|&(n, i)| pass.tape.value(n)[i])
        .sum();
    pass.reward = avgout::discrete_diversity(tracker, &sample.tokens)
        .ok()
        .map(|r| r.b_d);
    pass.sample_picks = sample.picks;
    pass.drawn = sample.drawn;
    pass
}

/// Evaluates the combined objective `L_ML - alpha * B_c + beta * L_RL` on a
/// batch and back-propagates it.
///
/// `B_c` and the rewards are measured against `tracker` as given; neither the
/// tracker nor `baseline` is modified.
pub fn objective_step(
    model: &Seq2Seq,
    batch: &PaddedBatch,
    tracker: &AvgOutTracker,
    baseline: &RewardBaseline,
    spec: StepSpec<'_>,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if tracker.vocab_size() != model.config().vocab_size {
        return Err(Error::InvalidArgument(
            "tracker and model vocabulary sizes differ".into(),
        ));
    }
    if let Sampling::Fixed(s) = spec.sampling {
        if s.len() != batch.len() {
            return Err(Error::InvalidArgument(
                "one fixed sample per row is required".into(),
            ));
        }
    }
    let v = tracker.vocab_size();
    let mut content_mask = vec![true; v];
    for &t in tracker.excluded() {
        content_mask[t as usize] = false;
    }

    let passes = exec::map_range(batch.len(), |row| {
        forward_row(model, batch, row, tracker, &content_mask, spec.sampling)
    });

    let rows = batch.len() as f64;
    let positions: usize = passes.iter().map(|p| p.steps.len()).sum();
    let mut sums = vec![0.0; v];
    let (mut weighted, mut content, mut ml) = (0.0, 0.0, 0.0);
    for p in &passes {
        for (s, x) in sums.iter_mut().zip(&p.sums) {
            *s += x;
        }
        weighted += p.weighted;
        content += p.content;
        ml += p.ml;
    }
    let summary = tracker.summarize_sums(&sums, positions)?;
    let b_c = avgout::continuous_diversity(tracker, &summary);

    let rewards: Vec<Option<f64>> = passes.iter().map(|p| p.reward).collect();
    let scored: Vec<f64> = rewards.iter().flatten().copied().collect();
    let sampled = !matches!(spec.sampling, Sampling::Off);
    let empty_samples = if sampled {
        rewards.len() - scored.len()
    } else {
        0
    };
    let batch_reward =
        (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    let r_b = batch_reward.map_or(baseline.value, |r| baseline.current(r));

    let l_ml = ml / rows;
    let l_b = minavgout_loss(b_c, spec.alpha);
    let rl_sum: f64 = passes
        .iter()
        .map(|p| {
            p.reward
                .map_or(0.0, |r| rl_loss(&[p.sample_log_prob], r, r_b))
        })
        .sum();
    let l_rl = spec.beta * (rl_sum / rows);
    let breakdown = LossBreakdown {
        l_ml,
        l_b,
        l_rl,
        total: l_ml + l_b + l_rl,
        b_c,
        b_d: batch_reward.unwrap_or(0.0),
        reward: batch_reward.unwrap_or(0.0),
        reward_baseline: if sampled { r_b } else { 0.0 },
    };

    // d(-alpha * (1 - weighted/content)) / dp_k per position
    let d = tracker.distribution();
    let coef_d = spec.alpha / content;
    let coef_c = spec.alpha * weighted / (content * content);
    let grad_p: Vec<f64> = (0..v)
        .map(|k| coef_d * d[k] - if content_mask[k] { coef_c } else { 0.0 })
        .collect();
    let use_b = spec.alpha != 0.0;

    let samples: Vec<Vec<TokenId>> = passes.iter().map(|p| p.drawn.clone()).collect();
    let grads = exec::map_owned(passes, |p| {
        let mut seeds: Vec<(Var, Vec<f64>)> =
            Vec::with_capacity(p.steps.len() + p.sample_picks.len());
        for &(node, y, floored) in &p.steps {
            let mut g = if use_b {
                p.tape
                    .value(node)
                    .iter()
                    .zip(&grad_p)
                    .map(|(l, gp)| l.exp() * gp)
                    .collect()
            } else {
                vec![0.0; v]
            };
            if !floored {
                g[y] -= 1.0 / rows;
            }
            seeds.push((node, g));
        }
        if let Some(r) = p.reward {
            let c = -spec.beta * (r - r_b) / rows;
            if c != 0.0 {
                for &(node, idx) in &p.sample_picks {
                    let mut g = vec![0.0; v];
                    g[idx] = c;
                    seeds.push((node, g));
                }
            }
        }
        let mut grads = model.params().zeros_like();
        p.tape.backward(&seeds, &mut grads);
        grads
    });
    let mut gradients = model.params().zeros_like();
    for g in &grads {
        gradients.add_assign(g);
    }

    Ok(StepOutput {
        breakdown,
        gradients,
        summary,
        samples,
        rewards,
        batch_reward,
        empty_samples,
    })
}

/// Label fine-tuning: each row is labelled with the diversity of its
/// ground-truth target under `tracker`, then trained with plain ML.
pub fn lft_step_loss(
    model: &Seq2Seq,
    batch: &PaddedBatch,
    tracker: &AvgOutTracker,
) -> Result<(PaddedBatch, StepOutput)> {
    let scores = ground_truth_scores(batch, tracker)?;
    let labelled = model.prepend_diversity_label(batch, &scores)?;
    let out = objective_step(
        model,
        &labelled,
        tracker,
        &RewardBaseline::new(0.0),
        StepSpec {
            alpha: 0.0,
            beta: 0.0,
            sampling: Sampling::Off,
        },
    )?;
    Ok((labelled, out))
}

/// Per-row ground-truth diversity scores.
pub fn ground_truth_scores(batch: &PaddedBatch, tracker: &AvgOutTracker) -> Result<Vec<f64>> {
    (0..batch.len())
        .map(|row| avgout::score_ground_truth(tracker, batch.target_row(row)))
        .collect()
}

/// MinAvgOut plus RL, both weighted by `weights.hybrid_shared`.
pub fn hybrid_step_loss(
    model: &Seq2Seq,
    batch: &PaddedBatch,
    tracker: &AvgOutTracker,
    baseline: &RewardBaseline,
    weights: &LossWeights,
    sampling: Sampling<'_>,
) -> Result<StepOutput> {
    let (alpha, beta) = weights.coefficients(Objective::Hybrid);
    objective_step(
        model,
        batch,
        tracker,
        baseline,
        StepSpec {
            alpha,
            beta,
            sampling,
        },
    )
}
