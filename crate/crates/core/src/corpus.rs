//! Corpus ingestion: vocabularies, dialogue examples, padded mini-batches and
//! a synthetic dull-biased corpus generator.
//!
//! Corpus files hold one example per line, `source tokens<TAB>target tokens`,
//! with tokens already split on single spaces.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
/// Diversity label token, injected in front of LFT sources.
pub const DIVLABEL: TokenId = 4;

pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<div>"];

/// Tokens that are never generatable content: excluded from AvgOut.
pub const NON_CONTENT: [TokenId; 4] = [PAD, BOS, UNK, DIVLABEL];

/// Dense token vocabulary. Ids 0..5 are the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// A vocabulary holding only the reserved tokens.
    pub fn reserved_only() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }

    /// Builds a vocabulary from content tokens; reserved tokens are prepended
    /// and any reserved strings or duplicates in `content` are skipped.
    pub fn from_tokens<S: Into<String>>(content: impl IntoIterator<Item = S>) -> Self {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for tok in content {
            let tok = tok.into();
            if index.contains_key(&tok) {
                continue;
            }
            index.insert(tok.clone(), tokens.len() as TokenId);
            tokens.push(tok);
        }
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Content tokens, i.e. everything after the reserved block.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED_TOKENS.len()..]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id for a corpus token; unknown and reserved strings become UNK so that
    /// corpus text can never inject control tokens.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        match self.index.get(token) {
            Some(&id) if id as usize >= RESERVED_TOKENS.len() => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[&str]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// Space-joined token strings, stopping at EOS and skipping PAD.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD)
            .map(|&id| self.token(id).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Writes one token per line, reserved tokens first.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED_TOKENS.len() || lines[..RESERVED_TOKENS.len()] != RESERVED_TOKENS
        {
            return Err(Error::InvalidArgument(format!(
                "{} does not start with the reserved tokens {:?}",
                path.display(),
                RESERVED_TOKENS
            )));
        }
        Ok(Self::from_tokens(
            lines[RESERVED_TOKENS.len()..].iter().copied(),
        ))
    }
}

/// One context/response pair. The target always ends with EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueExample {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl DialogueExample {
    /// Target tokens without the trailing EOS.
    pub fn response(&self) -> &[TokenId] {
        match self.target.last() {
            Some(&EOS) => &self.target[..self.target.len() - 1],
            _ => &self.target,
        }
    }
}

/// Truncation caps applied while loading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Sources longer than this keep their tail.
    pub max_source_len: usize,
    /// Targets (EOS included) longer than this keep their head.
    pub max_target_len: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            max_source_len: 128,
            max_target_len: 32,
        }
    }
}

fn split_line(line: &str, lineno: usize) -> Result<(Vec<&str>, Vec<&str>)> {
    let (src, tgt) = line
        .split_once('\t')
        .ok_or(Error::MalformedLine { line: lineno })?;
    Ok((
        src.split_whitespace().collect(),
        tgt.split_whitespace().collect(),
    ))
}

fn read_corpus(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Counts source and target tokens, keeps those with frequency at least
/// `min_count` (most frequent first, ties by first occurrence) and truncates
/// to `max_size` content tokens.
pub fn build_vocabulary(
    path: impl AsRef<Path>,
    min_count: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    let text = read_corpus(path.as_ref())?;
    build_vocabulary_from_str(&text, min_count, max_size)
}

pub fn build_vocabulary_from_str(
    text: &str,
    min_count: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    // token -> (count, first occurrence)
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut seen = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = split_line(line, i + 1)?;
        for tok in src.into_iter().chain(tgt) {
            if RESERVED_TOKENS.contains(&tok) {
                continue;
            }
            let entry = counts.entry(tok).or_insert((0, seen));
            entry.0 += 1;
            seen += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_count)
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size);
    if ranked.is_empty() {
        log::error!("no corpus token met min-count {min_count}");
    }
    Ok(Vocabulary::from_tokens(
        ranked.into_iter().map(|(t, _, _)| t),
    ))
}

pub fn load_examples(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    opts: LoadOptions,
) -> Result<Vec<DialogueExample>> {
    let text = read_corpus(path.as_ref())?;
    parse_examples(&text, vocab, opts)
}

/// Parses corpus text. Out-of-vocabulary tokens become UNK and EOS is appended
/// to every target.
pub fn parse_examples(
    text: &str,
    vocab: &Vocabulary,
    opts: LoadOptions,
) -> Result<Vec<DialogueExample>> {
    if opts.max_source_len == 0 || opts.max_target_len < 2 {
        return Err(Error::InvalidArgument(
            "max_source_len must be >= 1 and max_target_len >= 2".into(),
        ));
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (src, tgt) = split_line(line, lineno)?;
        if src.is_empty() {
            return Err(Error::EmptySource { line: lineno });
        }
        if tgt.is_empty() {
            return Err(Error::EmptyTarget { line: lineno });
        }
        let src = &src[src.len().saturating_sub(opts.max_source_len)..];
        let tgt = &tgt[..tgt.len().min(opts.max_target_len - 1)];
        let mut target = vocab.encode(tgt);
        target.push(EOS);
        out.push(DialogueExample {
            source: vocab.encode(src),
            target,
        });
    }
    Ok(out)
}

/// Encodes a bare source line (no tab) for generation, keeping the tail.
pub fn encode_source(line: &str, vocab: &Vocabulary, max_source_len: usize) -> Vec<TokenId> {
    let context = line.split('\t').next().unwrap_or("");
    let toks: Vec<&str> = context.split_whitespace().collect();
    let toks = &toks[toks.len().saturating_sub(max_source_len)..];
    vocab.encode(toks)
}

/// A padded mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    /// batch x max source length, PAD-filled.
    pub source: Vec<Vec<TokenId>>,
    pub source_lengths: Vec<usize>,
    /// batch x max target length, PAD-filled.
    pub target: Vec<Vec<TokenId>>,
    /// 1 on real target positions (EOS included), 0 on padding.
    pub target_mask: Vec<Vec<u8>>,
    /// Per-row scale for the diversity label at source position 0, when present.
    pub label_scores: Option<Vec<f64>>,
}

impl PaddedBatch {
    pub fn from_examples(examples: &[&DialogueExample]) -> Self {
        let max_src = examples.iter().map(|e| e.source.len()).max().unwrap_or(0);
        let max_tgt = examples.iter().map(|e| e.target.len()).max().unwrap_or(0);
        let pad = |seq: &[TokenId], len: usize| {
            let mut row = seq.to_vec();
            row.resize(len, PAD);
            row
        };
        Self {
            source: examples.iter().map(|e| pad(&e.source, max_src)).collect(),
            source_lengths: examples.iter().map(|e| e.source.len()).collect(),
            target: examples.iter().map(|e| pad(&e.target, max_tgt)).collect(),
            target_mask: examples
                .iter()
                .map(|e| (0..max_tgt).map(|t| u8::from(t < e.target.len())).collect())
                .collect(),
            label_scores: None,
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn max_target_len(&self) -> usize {
        self.target.first().map_or(0, Vec::len)
    }

    pub fn target_length(&self, row: usize) -> usize {
        self.target_mask[row].iter().map(|&m| m as usize).sum()
    }

    pub fn source_row(&self, row: usize) -> &[TokenId] {
        &self.source[row][..self.source_lengths[row]]
    }

    pub fn target_row(&self, row: usize) -> &[TokenId] {
        &self.target[row][..self.target_length(row)]
    }

    pub fn label_score(&self, row: usize) -> Option<f64> {
        self.label_scores.as_ref().map(|s| s[row])
    }

    /// Total number of unmasked target positions.
    pub fn mask_sum(&self) -> usize {
        self.target_mask.iter().flatten().map(|&m| m as usize).sum()
    }

    /// Recovers the unpadded example at `row`.
    pub fn example(&self, row: usize) -> DialogueExample {
        DialogueExample {
            source: self.source_row(row).to_vec(),
            target: self.target_row(row).to_vec(),
        }
    }
}

/// Shuffles with `seed` and chunks into padded batches of at most `batch_size` rows.
pub fn make_batches(
    examples: &[DialogueExample],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<PaddedBatch>> {
    if batch_size < 1 {
        return Err(Error::InvalidArgument(
            "batch size must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|idx| {
            let rows: Vec<&DialogueExample> = idx.iter().map(|&i| &examples[i]).collect();
            PaddedBatch::from_examples(&rows)
        })
        .collect())
}

pub const DULL_RESPONSE: &str = "i do not know";

const VERBS: [&str; 24] = [
    "install",
    "upgrade",
    "remove",
    "configure",
    "mount",
    "compile",
    "update",
    "restart",
    "download",
    "uninstall",
    "backup",
    "reboot",
    "format",
    "partition",
    "patch",
    "boot",
    "enable",
    "disable",
    "debug",
    "rebuild",
    "encrypt",
    "resize",
    "unmount",
    "reset",
];
const NOUNS: [&str; 30] = [
    "grub",
    "kernel",
    "driver",
    "firefox",
    "apache",
    "python",
    "wifi",
    "nvidia",
    "xorg",
    "samba",
    "ssh",
    "vim",
    "java",
    "mysql",
    "printer",
    "compiz",
    "gnome",
    "kde",
    "flash",
    "wine",
    "swap",
    "cron",
    "sudo",
    "alsa",
    "pulseaudio",
    "network",
    "bluetooth",
    "usb",
    "raid",
    "lvm",
];
const SYSTEMS: [&str; 10] = [
    "ubuntu", "kubuntu", "xubuntu", "debian", "lucid", "karmic", "hardy", "jaunty", "intrepid",
    "server",
];
const MODIFIERS: [&str; 6] = [
    "quickly", "safely", "manually", "remotely", "again", "properly",
];

/// Writes a synthetic corpus whose targets are the fixed dull sentence with
/// probability `dull_fraction` and otherwise echo the context's content words.
/// Contexts (and echo responses) are distinct for up to 43,200 examples.
pub fn generate_synthetic_corpus(
    num_examples: usize,
    dull_fraction: f64,
    seed: u64,
    out_path: impl AsRef<Path>,
) -> Result<()> {
    let lines = synthetic_corpus_lines(num_examples, dull_fraction, seed)?;
    let path = out_path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in &lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn synthetic_corpus_lines(
    num_examples: usize,
    dull_fraction: f64,
    seed: u64,
) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&dull_fraction) {
        return Err(Error::InvalidArgument(format!(
            "dull fraction {dull_fraction} outside [0, 1]"
        )));
    }
    let combos = VERBS.len() * NOUNS.len() * SYSTEMS.len() * MODIFIERS.len();
    if num_examples > combos {
        return Err(Error::InvalidArgument(format!(
            "at most {combos} distinct synthetic contexts are available"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, combos, num_examples);
    let mut lines = Vec::with_capacity(num_examples);
    for code in picked.iter() {
        let verb = VERBS[code % VERBS.len()];
        let rest = code / VERBS.len();
        let noun = NOUNS[rest % NOUNS.len()];
        let rest = rest / NOUNS.len();
        let system = SYSTEMS[rest % SYSTEMS.len()];
        let modifier = MODIFIERS[rest / SYSTEMS.len()];
        let context = format!("how do i {verb} {noun} {modifier} on {system}");
        let response = if rng.gen_bool(dull_fraction) {
            DULL_RESPONSE.to_string()
        } else {
            format!("you can {verb} {noun} {modifier} on {system}")
        };
        lines.push(format!("{context}\t{response}"));
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocabulary_orders_by_frequency_then_first_occurrence() {
        let v = build_vocabulary_from_str("a b\tc\na\tc\n", 1, 100).unwrap();
        assert_eq!(v.content_tokens(), ["a", "c", "b"]);
        assert_eq!(&v.tokens()[..5], RESERVED_TOKENS);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as TokenId));
            assert_eq!(v.token(i as TokenId), Some(t.as_str()));
        }
    }

    #[test]
    fn vocabulary_truncates_and_filters() {
        let v = build_vocabulary_from_str("a b\tc\na\tc\n", 1, 2).unwrap();
        assert_eq!(v.content_tokens(), ["a", "c"]);
        let v = build_vocabulary_from_str("a b\tc\na\tc\n", 3, 100).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.content_tokens().is_empty());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            build_vocabulary_from_str("", 1, 10),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            build_vocabulary_from_str("\t\n", 1, 10),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn reserved_strings_never_enter_vocabulary() {
        let v = build_vocabulary_from_str("<div> x\t<eos> y\n", 1, 10).unwrap();
        assert_eq!(v.content_tokens(), ["x", "y"]);
        assert_eq!(v.id_or_unk("<div>"), UNK);
    }

    #[test]
    fn loads_examples_with_eos_and_unk() {
        let v = Vocabulary::from_tokens(["hi", "there", "ok"]);
        let ex = parse_examples(
            "hi there\tok\nhi stranger\tok ok\n",
            &v,
            LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(ex[0].source, vec![5, 6]);
        assert_eq!(ex[0].target, vec![7, EOS]);
        assert_eq!(ex[1].source, vec![5, UNK]);
        assert_eq!(ex[1].response(), &[7, 7]);
    }

    #[test]
    fn load_errors_name_the_line() {
        let v = Vocabulary::from_tokens(["hi"]);
        let err = parse_examples("hi\thi\nhi\t\n", &v, LoadOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty target at line 2");
        let err = parse_examples("hi hi\n", &v, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 1 }));
    }

    #[test]
    fn truncation_keeps_source_tail_and_target_head() {
        let v = Vocabulary::from_tokens(["a", "b", "c", "d"]);
        let opts = LoadOptions {
            max_source_len: 2,
            max_target_len: 3,
        };
        let ex = parse_examples("a b c d\ta b c d\n", &v, opts).unwrap();
        assert_eq!(ex[0].source, v.encode(&["c", "d"]));
        assert_eq!(ex[0].target, vec![5, 6, EOS]);
    }

    fn toy_examples(n: usize) -> Vec<DialogueExample> {
        (0..n)
            .map(|i| DialogueExample {
                source: vec![5 + i as TokenId; 1 + i % 3],
                target: {
                    let mut t = vec![6; 1 + (i * 2) % 5];
                    t.push(EOS);
                    t
                },
            })
            .collect()
    }

    #[test]
    fn batches_have_expected_sizes_and_masks() {
        let ex = toy_examples(5);
        let batches = make_batches(&ex, 2, 1).unwrap();
        assert_eq!(
            batches.iter().map(PaddedBatch::len).collect::<Vec<_>>(),
            vec![2, 2, 1]
        );
        assert_eq!(make_batches(&ex, 2, 1).unwrap(), batches);
        assert!(make_batches(&ex, 0, 1).is_err());

        let a = DialogueExample {
            source: vec![5],
            target: vec![6, 6, EOS],
        };
        let b = DialogueExample {
            source: vec![5, 5],
            target: vec![6, 6, 6, 6, EOS],
        };
        let batch = PaddedBatch::from_examples(&[&a, &b]);
        let sums: Vec<usize> = (0..2).map(|r| batch.target_length(r)).collect();
        assert_eq!(sums, vec![3, 5]);
        assert_eq!(batch.mask_sum(), 8);
    }

    #[test]
    fn synthetic_corpus_dull_fraction_extremes() {
        let all_dull = synthetic_corpus_lines(50, 1.0, 3).unwrap();
        assert!(all_dull
            .iter()
            .all(|l| l.ends_with(&format!("\t{DULL_RESPONSE}"))));
        let none_dull = synthetic_corpus_lines(200, 0.0, 3).unwrap();
        let targets: std::collections::HashSet<&str> = none_dull
            .iter()
            .map(|l| l.split_once('\t').unwrap().1)
            .collect();
        let contexts: std::collections::HashSet<&str> = none_dull
            .iter()
            .map(|l| l.split_once('\t').unwrap().0)
            .collect();
        assert_eq!(contexts.len(), 200);
        assert_eq!(targets.len(), 200);
    }

    #[test]
    fn synthetic_corpus_dull_rate_near_requested() {
        let lines = synthetic_corpus_lines(2000, 0.6, 7).unwrap();
        let dull = lines
            .iter()
            .filter(|l| l.ends_with(&format!("\t{DULL_RESPONSE}")))
            .count();
        assert!((1100..=1300).contains(&dull), "dull count {dull}");
    }

    proptest! {
        #[test]
        fn batches_partition_examples(n in 1usize..40, bs in 1usize..9, seed in any::<u64>()) {
            let ex = toy_examples(n);
            let batches = make_batches(&ex, bs, seed).unwrap();
            let mut recovered: Vec<DialogueExample> = Vec::new();
            for b in &batches {
                for row in 0..b.len() {
                    // PAD iff mask is zero
                    for (t, &m) in b.target_mask[row].iter().enumerate() {
                        prop_assert_eq!(m == 0, b.target[row][t] == PAD);
                    }
                    let prefix = b.target_mask[row].iter().take_while(|&&m| m == 1).count();
                    prop_assert_eq!(prefix, b.target_length(row));
                    recovered.push(b.example(row));
                }
            }
            let mut expected = ex.clone();
            expected.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
            recovered.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
            prop_assert_eq!(recovered, expected);
        }

        #[test]
        fn loaded_examples_detokenize_to_source_text(words in proptest::collection::vec("[a-e]{1,3}", 2..12)) {
            let half = words.len() / 2;
            let line = format!("{}\t{}", words[..half].join(" "), words[half..].join(" "));
            let vocab = build_vocabulary_from_str(&line, 1, 100).unwrap();
            let ex = parse_examples(&line, &vocab, LoadOptions { max_source_len: 100, max_target_len: 100 }).unwrap();
            prop_assert_eq!(vocab.decode(&ex[0].source), words[..half].join(" "));
            prop_assert_eq!(vocab.decode(&ex[0].target), words[half..].join(" "));
        }
    }
}
