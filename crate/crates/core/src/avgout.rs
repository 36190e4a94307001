//! The AvgOut distribution: an exponential moving average of the decoder's
//! mean teacher-forced output distribution, and the two diversity scores
//! derived from it.
//!
//! Non-content tokens (PAD, BOS, UNK and the diversity label) are held at
//! zero in both the running distribution and every batch summary; the
//! remaining entries are renormalised.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, EOS, NON_CONTENT, PAD};
use crate::error::{Error, Result};
use crate::model::DecoderStepOutput;

pub const DEFAULT_GAMMA: f64 = 0.01;

/// Running AvgOut distribution `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgOutTracker {
    distribution: Vec<f64>,
    gamma: f64,
    update_count: u64,
    excluded: Vec<TokenId>,
}

impl AvgOutTracker {
    /// Uniform over every id not in `excluded`.
    pub fn new(vocab_size: usize, gamma: f64, excluded: &[TokenId]) -> Result<Self> {
        check_gamma(gamma)?;
        let mut excluded: Vec<TokenId> = excluded
            .iter()
            .copied()
            .filter(|&t| (t as usize) < vocab_size)
            .collect();
        excluded.sort_unstable();
        excluded.dedup();
        let live = vocab_size - excluded.len();
        if live == 0 {
            return Err(Error::InvalidArgument(
                "no content tokens left for AvgOut".into(),
            ));
        }
        let mut distribution = vec![1.0 / live as f64; vocab_size];
        for &t in &excluded {
            distribution[t as usize] = 0.0;
        }
        Ok(Self {
            distribution,
            gamma,
            update_count: 0,
            excluded,
        })
    }

    /// Uniform over content tokens of a vocabulary of `vocab_size`.
    pub fn for_vocab(vocab_size: usize, gamma: f64) -> Result<Self> {
        Self::new(vocab_size, gamma, &NON_CONTENT)
    }

    /// Wraps an explicit distribution; nothing is excluded.
    pub fn from_distribution(distribution: Vec<f64>, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        check_distribution(&distribution, 1e-6)?;
        Ok(Self {
            distribution,
            gamma,
            update_count: 0,
            excluded: Vec::new(),
        })
    }

    pub fn distribution(&self) -> &[f64] {
        &self.distribution
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn excluded(&self) -> &[TokenId] {
        &self.excluded
    }

    pub fn vocab_size(&self) -> usize {
        self.distribution.len()
    }

    /// Probability of `token` under `D`.
    pub fn prob(&self, token: TokenId) -> f64 {
        self.distribution
            .get(token as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// `D <- gamma * D' + (1 - gamma) * D`.
    pub fn ema_update(&mut self, summary: &BatchDistributionSummary) {
        assert_eq!(
            summary.distribution.len(),
            self.distribution.len(),
            "vocabulary size mismatch"
        );
        let g = self.gamma;
        for (d, &p) in self.distribution.iter_mut().zip(&summary.distribution) {
            *d = g * p + (1.0 - g) * *d;
        }
        self.update_count += 1;
    }

    /// Summarises summed step distributions: excluded entries are zeroed and
    /// the rest renormalised.
    pub fn summarize_sums(
        &self,
        sums: &[f64],
        positions: usize,
    ) -> Result<BatchDistributionSummary> {
        BatchDistributionSummary::from_sums(sums.to_vec(), positions, &self.excluded)
    }

    /// Mean of the unmasked step distributions. `mask` is `[row][step]`.
    pub fn summarize_batch(
        &self,
        steps: &[DecoderStepOutput],
        mask: &[Vec<u8>],
    ) -> Result<BatchDistributionSummary> {
        summarize_batch(steps, mask, self.vocab_size(), &self.excluded)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )))
    }
}

fn check_distribution(d: &[f64], tol: f64) -> Result<()> {
    if d.is_empty() || d.iter().any(|&x| x.is_nan() || x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "distribution entries must be finite and non-negative".into(),
        ));
    }
    let total: f64 = d.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "distribution sums to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Per-batch mean output distribution `D'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDistributionSummary {
    pub distribution: Vec<f64>,
    pub positions: usize,
}

impl BatchDistributionSummary {
    pub fn from_sums(mut sums: Vec<f64>, positions: usize, excluded: &[TokenId]) -> Result<Self> {
        if positions == 0 {
            return Err(Error::AllPositionsMasked);
        }
        for &t in excluded {
            if let Some(x) = sums.get_mut(t as usize) {
                *x = 0.0;
            }
        }
        let total: f64 = sums.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::InvalidArgument(
                "batch summary carries no content mass".into(),
            ));
        }
        for x in &mut sums {
            *x /= total;
        }
        Ok(Self {
            distribution: sums,
            positions,
        })
    }
}

/// Arithmetic mean of the step distributions over unmasked positions.
pub fn summarize_batch(
    steps: &[DecoderStepOutput],
    mask: &[Vec<u8>],
    vocab_size: usize,
    excluded: &[TokenId],
) -> Result<BatchDistributionSummary> {
    let mut sums = vec![0.0; vocab_size];
    let mut positions = 0;
    for (t, step) in steps.iter().enumerate() {
        for (row, probs) in step.probs.iter().enumerate() {
            if mask[row].get(t).copied().unwrap_or(0) == 0 {
                continue;
            }
            positions += 1;
            for (s, p) in sums.iter_mut().zip(probs) {
                *s += p;
            }
        }
    }
    BatchDistributionSummary::from_sums(sums, positions, excluded)
}

/// `B_c = 1 - D . D'`.
pub fn continuous_diversity(tracker: &AvgOutTracker, summary: &BatchDistributionSummary) -> f64 {
    1.0 - dot(tracker.distribution(), &summary.distribution)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `B_d` of a discrete token sequence, with its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDiversityResult {
    pub b_d: f64,
    /// `D[token]` for each scored token, in sequence order.
    pub probabilities: Vec<f64>,
    pub n_g: usize,
    pub n_unique: usize,
}

/// `B_d = 1 - (P_1 + ... + P_{N_G}) / N_unique`, where `P_i` is the AvgOut
/// probability of the i-th token. EOS and PAD are not scored. Unclamped.
pub fn discrete_diversity(
    tracker: &AvgOutTracker,
    tokens: &[TokenId],
) -> Result<DiscreteDiversityResult> {
    discrete_diversity_from(tracker.distribution(), tokens)
}

pub fn discrete_diversity_from(
    distribution: &[f64],
    tokens: &[TokenId],
) -> Result<DiscreteDiversityResult> {
    let scored: Vec<TokenId> = tokens
        .iter()
        .copied()
        .filter(|&t| t != EOS && t != PAD)
        .collect();
    if scored.is_empty() {
        return Err(Error::EmptySequence);
    }
    let probabilities: Vec<f64> = scored
        .iter()
        .map(|&t| distribution.get(t as usize).copied().unwrap_or(0.0))
        .collect();
    let n_unique = scored.iter().collect::<HashSet<_>>().len();
    let total: f64 = probabilities.iter().sum();
    Ok(DiscreteDiversityResult {
        b_d: 1.0 - total / n_unique as f64,
        probabilities,
        n_g: scored.len(),
        n_unique,
    })
}

/// Diversity of a ground-truth target, used to scale the LFT label.
pub fn score_ground_truth(tracker: &AvgOutTracker, target: &[TokenId]) -> Result<f64> {
    discrete_diversity(tracker, target).map(|r| r.b_d)
}

/// Standalone export of `D` with its token strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgOutExport {
    pub gamma: f64,
    pub update_count: u64,
    pub excluded: Vec<TokenId>,
    pub tokens: Vec<String>,
    pub distribution: Vec<f64>,
}

impl AvgOutExport {
    pub fn new(tracker: &AvgOutTracker, tokens: &[String]) -> Self {
        Self {
            gamma: tracker.gamma,
            update_count: tracker.update_count,
            excluded: tracker.excluded.clone(),
            tokens: tokens.to_vec(),
            distribution: tracker.distribution.clone(),
        }
    }

    pub fn tracker(&self) -> Result<AvgOutTracker> {
        if self.tokens.len() != self.distribution.len() {
            return Err(Error::InvalidArgument(
                "avgout export has mismatched token and distribution lengths".into(),
            ));
        }
        check_gamma(self.gamma)?;
        check_distribution(&self.distribution, 1e-6)?;
        Ok(AvgOutTracker {
            distribution: self.distribution.clone(),
            gamma: self.gamma,
            update_count: self.update_count,
            excluded: self.excluded.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tracker(d: &[f64]) -> AvgOutTracker {
        AvgOutTracker::from_distribution(d.to_vec(), DEFAULT_GAMMA).unwrap()
    }

    fn summary(d: &[f64]) -> BatchDistributionSummary {
        BatchDistributionSummary::from_sums(d.to_vec(), 1, &[]).unwrap()
    }

    #[test]
    fn summary_of_one_position_is_that_distribution() {
        let p = vec![0.1, 0.2, 0.7];
        let steps = vec![DecoderStepOutput {
            probs: vec![p.clone()],
        }];
        let s = summarize_batch(&steps, &[vec![1]], 3, &[]).unwrap();
        for (a, b) in s.distribution.iter().zip(&p) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s.positions, 1);
    }

    #[test]
    fn summary_averages_and_ignores_masked_positions() {
        let steps = vec![
            DecoderStepOutput {
                probs: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            },
            DecoderStepOutput {
                probs: vec![vec![0.0, 0.0, 1.0], vec![0.3, 0.3, 0.4]],
            },
        ];
        let s = summarize_batch(&steps, &[vec![1, 0], vec![1, 0]], 3, &[]).unwrap();
        assert_eq!(s.distribution, vec![0.5, 0.5, 0.0]);
        assert_eq!(s.positions, 2);
        let err = summarize_batch(&steps, &[vec![0, 0], vec![0, 0]], 3, &[]).unwrap_err();
        assert!(matches!(err, Error::AllPositionsMasked));
    }

    #[test]
    fn excluded_tokens_are_zeroed_and_renormalised() {
        let t = AvgOutTracker::new(4, 0.5, &[0]).unwrap();
        assert_eq!(t.distribution(), &[0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let s = t.summarize_sums(&[1.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(s.distribution, vec![0.0, 0.25, 0.25, 0.5]);
    }

    #[test]
    fn ema_update_arithmetic() {
        let mut t = tracker(&[1.0, 0.0]);
        t.ema_update(&summary(&[0.0, 1.0]));
        assert!((t.distribution()[0] - 0.99).abs() < 1e-15);
        assert!((t.distribution()[1] - 0.01).abs() < 1e-15);
        assert_eq!(t.update_count(), 1);

        let mut fixed = tracker(&[0.25, 0.75]);
        fixed.ema_update(&summary(&[0.25, 0.75]));
        for (x, y) in fixed.distribution().iter().zip([0.25, 0.75]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn continuous_diversity_examples() {
        assert_eq!(
            continuous_diversity(&tracker(&[0.0, 1.0]), &summary(&[0.0, 1.0])),
            0.0
        );
        let b = continuous_diversity(&tracker(&[0.5, 0.5]), &summary(&[0.9, 0.1]));
        assert!((b - 0.5).abs() < 1e-15);
    }

    #[test]
    fn discrete_diversity_examples() {
        let mut d = vec![0.0; 10];
        d[5] = 0.05;
        d[6] = 0.2;
        d[7] = 0.1;
        d[8] = 0.01;
        d[9] = 0.64;
        let t = tracker(&d);
        let r = discrete_diversity(&t, &[5, 6, 7, 8]).unwrap();
        assert!((r.b_d - 0.91).abs() < 1e-12);
        assert_eq!((r.n_g, r.n_unique), (4, 4));

        let mut d = vec![0.0; 10];
        d[5] = 0.2;
        d[6] = 0.2;
        d[9] = 0.6;
        let t = tracker(&d);
        let repeated = discrete_diversity(&t, &[5, 5]).unwrap().b_d;
        let distinct = discrete_diversity(&t, &[5, 6]).unwrap().b_d;
        assert!((repeated - 0.6).abs() < 1e-12);
        assert!((distinct - 0.8).abs() < 1e-12);
        assert!(repeated < distinct);

        assert_eq!(discrete_diversity(&t, &[7]).unwrap().b_d, 1.0);
        // EOS is not scored
        assert_eq!(discrete_diversity(&t, &[7, EOS]).unwrap().n_g, 1);
        assert!(matches!(
            discrete_diversity(&t, &[]),
            Err(Error::EmptySequence)
        ));
        assert!(matches!(
            discrete_diversity(&t, &[EOS]),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn ground_truth_scores() {
        let mut d = vec![0.0; 10];
        d[5] = 0.3;
        d[6] = 0.1;
        d[7] = 0.2;
        d[9] = 0.4;
        let t = tracker(&d);
        let s = score_ground_truth(&t, &[5, 6, 7, EOS]).unwrap();
        assert!((s - 0.8).abs() < 1e-12);
        assert_eq!(s, score_ground_truth(&t, &[5, 6, 7, EOS]).unwrap());
        assert_eq!(score_ground_truth(&t, &[8]).unwrap(), 1.0);
        assert!(score_ground_truth(&t, &[EOS]).is_err());
    }

    #[test]
    fn export_round_trips() {
        let t = AvgOutTracker::new(6, 0.01, &NON_CONTENT).unwrap();
        let tokens: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("avgout.json");
        AvgOutExport::new(&t, &tokens).save(&path).unwrap();
        let back = AvgOutExport::load(&path).unwrap();
        assert_eq!(back.tracker().unwrap(), t);
        assert_eq!(back.tokens, tokens);
    }

    fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_map(|xs| {
            let total: f64 = xs.iter().sum::<f64>() + 1e-9;
            xs.iter()
                .map(|x| (x + 1e-9 / xs.len() as f64) / total)
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ema_stays_a_distribution(d0 in distribution(8), updates in proptest::collection::vec(distribution(8), 1..50), gamma in 0.001f64..1.0) {
            let mut t = AvgOutTracker::from_distribution(d0, gamma).unwrap();
            for u in &updates {
                t.ema_update(&BatchDistributionSummary { distribution: u.clone(), positions: 1 });
                prop_assert!(t.distribution().iter().all(|&x| x >= 0.0));
                prop_assert!((t.distribution().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn one_minus_b_c_is_weighted_average(d in distribution(7), dp in distribution(7)) {
            let b = continuous_diversity(&tracker(&d), &BatchDistributionSummary { distribution: dp.clone(), positions: 1 });
            let weighted: f64 = d.iter().zip(&dp).map(|(w, p)| w * p).sum::<f64>() / d.iter().sum::<f64>();
            prop_assert!((1.0 - b - weighted).abs() < 1e-12);
        }

        #[test]
        fn duplicates_never_raise_b_d(d in distribution(9), seq in proptest::collection::vec(5u32..9, 1..8), pick in 0usize..8) {
            let t = tracker(&d);
            let before = discrete_diversity(&t, &seq).unwrap().b_d;
            let mut longer = seq.clone();
            longer.push(seq[pick % seq.len()]);
            let after = discrete_diversity(&t, &longer).unwrap().b_d;
            prop_assert!(after <= before);
        }
    }
}
