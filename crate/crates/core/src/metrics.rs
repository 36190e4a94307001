//! Corpus-level diversity and relevance metrics.
//!
//! Responses are whitespace-tokenized strings. `<eos>` and `<pad>` never
//! count towards n-gram statistics; `<unk>` is an ordinary token.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of top frequencies kept in a Diversity-32 curve.
pub const CURVE_LEN: usize = 32;

/// Whitespace tokenization of one response line.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

fn countable(tok: &str) -> bool {
    tok != "<eos>" && tok != "<pad>"
}

fn content(response: &[String]) -> Vec<&str> {
    response
        .iter()
        .map(String::as_str)
        .filter(|t| countable(t))
        .collect()
}

fn ngrams<'a>(tokens: &'a [&'a str], n: usize) -> impl Iterator<Item = &'a [&'a str]> {
    tokens.windows(n)
}

/// Unique n-grams over total n-grams across the corpus.
pub fn distinct_n(responses: &[Vec<String>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    let contents: Vec<Vec<&str>> = responses.iter().map(|r| content(r)).collect();
    for toks in &contents {
        for g in ngrams(toks, n) {
            seen.insert(g.to_vec());
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::NoNgrams { n });
    }
    Ok(seen.len() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Sentence,
    Unigram,
    Bigram,
    Trigram,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Sentence,
        Granularity::Unigram,
        Granularity::Bigram,
        Granularity::Trigram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Sentence => "sentence",
            Granularity::Unigram => "unigram",
            Granularity::Bigram => "bigram",
            Granularity::Trigram => "trigram",
        }
    }

    fn order(self) -> Option<usize> {
        match self {
            Granularity::Sentence => None,
            Granularity::Unigram => Some(1),
            Granularity::Bigram => Some(2),
            Granularity::Trigram => Some(3),
        }
    }
}

/// Item counts sorted from most to least frequent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySpectrum {
    pub granularity: Granularity,
    /// Descending item counts.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl FrequencySpectrum {
    pub fn item_count(&self) -> usize {
        self.counts.len()
    }

    /// Normalized frequencies, descending; sums to 1 when non-empty.
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }

    /// The top `k` normalized frequencies.
    pub fn top(&self, k: usize) -> Vec<f64> {
        self.counts
            .iter()
            .take(k)
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }
}

pub fn frequency_spectrum(
    responses: &[Vec<String>],
    granularity: Granularity,
) -> FrequencySpectrum {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for r in responses {
        let toks = content(r);
        match granularity.order() {
            None => *counts.entry(toks.join(" ")).or_default() += 1,
            Some(n) => {
                for g in ngrams(&toks, n) {
                    *counts.entry(g.join(" ")).or_default() += 1;
                }
            }
        }
    }
    let mut counts: Vec<u64> = counts.into_values().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    FrequencySpectrum {
        granularity,
        total: counts.iter().sum(),
        counts,
    }
}

/// Probability mass outside the `k` most frequent items. Computed from
/// integer counts, so it is exact up to the final division.
pub fn inverted_auc(spectrum: &FrequencySpectrum, k: usize) -> f64 {
    if spectrum.total == 0 {
        return 0.0;
    }
    let tail: u64 = spectrum.counts.iter().skip(k).sum();
    tail as f64 / spectrum.total as f64
}

/// Activity and entity lexicons, lowercased.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicons {
    pub activities: HashSet<String>,
    pub entities: HashSet<String>,
}

impl Lexicons {
    pub fn new<S: AsRef<str>>(
        activities: impl IntoIterator<Item = S>,
        entities: impl IntoIterator<Item = S>,
    ) -> Self {
        let lower =
            |it: &mut dyn Iterator<Item = S>| it.map(|s| s.as_ref().to_lowercase()).collect();
        Self {
            activities: lower(&mut activities.into_iter()),
            entities: lower(&mut entities.into_iter()),
        }
    }

    /// Reads two one-token-per-line files.
    pub fn load(activities: impl AsRef<Path>, entities: impl AsRef<Path>) -> Result<Self> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let a = read(activities.as_ref())?;
        let e = read(entities.as_ref())?;
        Ok(Self::new(a.split_whitespace(), e.split_whitespace()))
    }
}

fn micro_f1(model: &[Vec<String>], gold: &[Vec<String>], lexicon: &HashSet<String>) -> f64 {
    let (mut tp, mut predicted, mut relevant) = (0usize, 0usize, 0usize);
    let matches = |r: &[String]| -> HashSet<String> {
        r.iter()
            .map(|t| t.to_lowercase())
            .filter(|t| lexicon.contains(t))
            .collect()
    };
    for (m, g) in model.iter().zip(gold) {
        let g = matches(g);
        if g.is_empty() {
            continue;
        }
        let m = matches(m);
        tp += m.intersection(&g).count();
        predicted += m.len();
        relevant += g.len();
    }
    if predicted + relevant == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (predicted + relevant) as f64
}

/// Micro-averaged (activity, entity) F1 of model responses against
/// references. Pairs whose reference mentions no lexicon item are skipped.
pub fn activity_entity_f1(
    model: &[Vec<String>],
    gold: &[Vec<String>],
    lexicons: &Lexicons,
) -> Result<(f64, f64)> {
    if model.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} responses but {} references",
            model.len(),
            gold.len()
        )));
    }
    if lexicons.activities.is_empty() {
        return Err(Error::EmptyLexicon("activity"));
    }
    if lexicons.entities.is_empty() {
        return Err(Error::EmptyLexicon("entity"));
    }
    Ok((
        micro_f1(model, gold, &lexicons.activities),
        micro_f1(model, gold, &lexicons.entities),
    ))
}

/// Top-32 frequency curves per granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityCurves {
    pub sentence: Vec<f64>,
    pub unigram: Vec<f64>,
    pub bigram: Vec<f64>,
    pub trigram: Vec<f64>,
}

impl DiversityCurves {
    pub fn get(&self, g: Granularity) -> &[f64] {
        match g {
            Granularity::Sentence => &self.sentence,
            Granularity::Unigram => &self.unigram,
            Granularity::Bigram => &self.bigram,
            Granularity::Trigram => &self.trigram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub responses: usize,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub iauc_s: f64,
    pub iauc_1: f64,
    pub iauc_2: f64,
    pub iauc_3: f64,
    pub iauc_avg: f64,
    pub curves: DiversityCurves,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub activity_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entity_f1: Option<f64>,
}

impl DiversityReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn distinct_or_zero(responses: &[Vec<String>], n: usize) -> Result<f64> {
    match distinct_n(responses, n) {
        Err(Error::NoNgrams { .. }) => {
            log::warn!("no {n}-grams in the evaluated responses; distinct-{n} reported as 0");
            Ok(0.0)
        }
        other => other,
    }
}

/// Full diversity report for `responses`; F1s are added when `references`
/// and `lexicons` are given. Distinct-n is reported as 0 for a corpus with
/// no n-grams at all.
pub fn evaluate_corpus(
    responses: &[Vec<String>],
    references: Option<&[Vec<String>]>,
    lexicons: Option<&Lexicons>,
) -> Result<DiversityReport> {
    if responses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let spectra: Vec<FrequencySpectrum> = Granularity::ALL
        .iter()
        .map(|&g| frequency_spectrum(responses, g))
        .collect();
    let iauc: Vec<f64> = spectra.iter().map(|s| inverted_auc(s, CURVE_LEN)).collect();
    let (activity_f1, entity_f1) = match (references, lexicons) {
        (Some(r), Some(l)) => {
            let (a, e) = activity_entity_f1(responses, r, l)?;
            (Some(a), Some(e))
        }
        _ => (None, None),
    };
    Ok(DiversityReport {
        responses: responses.len(),
        distinct_1: distinct_or_zero(responses, 1)?,
        distinct_2: distinct_or_zero(responses, 2)?,
        iauc_s: iauc[0],
        iauc_1: iauc[1],
        iauc_2: iauc[2],
        iauc_3: iauc[3],
        iauc_avg: (iauc[0] + iauc[1] + iauc[2] + iauc[3]) / 4.0,
        curves: DiversityCurves {
            sentence: spectra[0].top(CURVE_LEN),
            unigram: spectra[1].top(CURVE_LEN),
            bigram: spectra[2].top(CURVE_LEN),
            trigram: spectra[3].top(CURVE_LEN),
        },
        activity_f1,
        entity_f1,
    })
}

/// Writes `diversity32_<granularity>.csv` (rank, frequency) for each curve,
/// zero-padded to 32 rows. Returns the written paths.
pub fn write_curves(report: &DiversityReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(4);
    for g in Granularity::ALL {
        let curve = report.curves.get(g);
        let mut csv = String::from("rank,frequency\n");
        for rank in 0..CURVE_LEN {
            let f = curve.get(rank).copied().unwrap_or(0.0);
            csv.push_str(&format!("{},{}\n", rank + 1, f));
        }
        let path = dir.join(format!("diversity32_{}.csv", g.name()));
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&corpus(&["a b c"]), 1).unwrap(), 1.0);
        assert_eq!(distinct_n(&corpus(&["a b a", "a c"]), 1).unwrap(), 0.6);
        assert_eq!(distinct_n(&corpus(&["a b", "a b"]), 2).unwrap(), 0.5);
        assert!(matches!(
            distinct_n(&corpus(&["a", "b"]), 2),
            Err(Error::NoNgrams { n: 2 })
        ));
        assert_eq!(
            distinct_n(&corpus(&["a <eos>", "a <pad> <pad>"]), 1).unwrap(),
            0.5
        );
    }

    #[test]
    fn spectrum_examples() {
        let s = frequency_spectrum(&corpus(&["x y"; 4]), Granularity::Sentence);
        assert_eq!(s.frequencies(), vec![1.0]);
        let s = frequency_spectrum(&corpus(&["s1", "s1", "s2", "s1"]), Granularity::Sentence);
        assert_eq!(s.frequencies(), vec![0.75, 0.25]);
        let s = frequency_spectrum(&corpus(&["a a b"]), Granularity::Unigram);
        assert_eq!(s.frequencies(), vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn inverted_auc_examples() {
        let one = frequency_spectrum(&corpus(&["same"; 10]), Granularity::Sentence);
        assert_eq!(inverted_auc(&one, 32), 0.0);
        let lines: Vec<String> = (0..64).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let uniform = frequency_spectrum(&corpus(&refs), Granularity::Sentence);
        assert_eq!(inverted_auc(&uniform, 32), 0.5);
        let skewed = frequency_spectrum(&corpus(&["a a a a a b c d"]), Granularity::Unigram);
        assert_eq!(inverted_auc(&skewed, 32), 0.0);
    }

    #[test]
    fn f1_examples() {
        let lex = Lexicons::new(["install", "upgrade"], ["ubuntu"]);
        let (a, e) = activity_entity_f1(
            &corpus(&["install it"]),
            &corpus(&["install and upgrade"]),
            &lex,
        )
        .unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e, 0.0);
        let gold = corpus(&["Install ubuntu", "upgrade now"]);
        assert_eq!(activity_entity_f1(&gold, &gold, &lex).unwrap(), (1.0, 1.0));
        let (a, _) =
            activity_entity_f1(&corpus(&["nothing here"]), &corpus(&["upgrade"]), &lex).unwrap();
        assert_eq!(a, 0.0);
        assert!(matches!(
            activity_entity_f1(&gold, &gold, &Lexicons::new(Vec::<&str>::new(), vec!["x"])),
            Err(Error::EmptyLexicon("activity"))
        ));
    }

    #[test]
    fn dull_corpus_report() {
        let n = 7;
        let r = evaluate_corpus(&corpus(&["i do not know"; 7]), None, None).unwrap();
        assert_eq!(r.distinct_1, 4.0 / (4 * n) as f64);
        assert_eq!(
            [r.iauc_s, r.iauc_1, r.iauc_2, r.iauc_3, r.iauc_avg],
            [0.0; 5]
        );
        assert_eq!(r.activity_f1, None);
    }

    #[test]
    fn curves_are_padded() {
        let r = evaluate_corpus(&corpus(&["a b", "c"]), None, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_curves(&r, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let text = fs::read_to_string(&files[1]).unwrap();
        assert_eq!(text.lines().count(), 33);
        assert!(text.ends_with("32,0\n"));
        let again = write_curves(&r, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&again[1]).unwrap(), text);
    }
}
