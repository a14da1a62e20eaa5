//! Corpus ingestion, vocabulary/frequency statistics, and synthetic
//! cipher-pair generation used as a test oracle.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Short uppercase language identifier, rendered as "[XX]".
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: &str) -> Result<Self> {
        if code.is_empty() {
            return Err(Error::Parameter("language code must be non-empty".into()));
        }
        if !code.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()) {
            return Err(Error::Parameter(format!(
                "language code must be uppercase ASCII, got {code:?}"
            )));
        }
        Ok(LanguageTag(code.to_string()))
    }

    pub fn code(&self) -> &str {
        &self.0
    }

    /// Bracketed surface form, e.g. "[EN]".
    pub fn rendered(&self) -> String {
        format!("[{}]", self.0)
    }

    /// Parses a rendered form like "[EN]" back into a tag.
    pub fn from_rendered(s: &str) -> Result<Self> {
        let inner = s
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::Parse(format!("not a language tag: {s:?}")))?;
        LanguageTag::new(inner)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub lang: LanguageTag,
}

impl Sentence {
    /// Whitespace-splits a line into tokens.
    pub fn from_line(line: &str, lang: LanguageTag) -> Self {
        Sentence {
            tokens: line.split_whitespace().map(str::to_string).collect(),
            lang,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub source: Sentence,
    pub target: Sentence,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub id: String,
    pub pairs: Vec<ParallelPair>,
}

impl Corpus {
    pub fn new(id: &str, pairs: Vec<ParallelPair>) -> Result<Self> {
        if let Some(first) = pairs.first() {
            if first.source.lang == first.target.lang {
                return Err(Error::Parameter("source and target language must differ".into()));
            }
            for p in &pairs {
                if p.source.lang != first.source.lang || p.target.lang != first.target.lang {
                    return Err(Error::Parameter("all pairs must share the same language pair".into()));
                }
            }
        }
        Ok(Corpus { id: id.to_string(), pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_lang(&self) -> Option<&LanguageTag> {
        self.pairs.first().map(|p| &p.source.lang)
    }

    pub fn target_lang(&self) -> Option<&LanguageTag> {
        self.pairs.first().map(|p| &p.target.lang)
    }

    pub fn source_sentences(&self) -> Vec<Sentence> {
        self.pairs.iter().map(|p| p.source.clone()).collect()
    }

    pub fn target_sentences(&self) -> Vec<Sentence> {
        self.pairs.iter().map(|p| p.target.clone()).collect()
    }

    /// Optional exact-match duplicate filter; keeps first occurrences.
    pub fn dedup_exact(&self) -> Corpus {
        let mut seen = std::collections::HashSet::new();
        let pairs = self
            .pairs
            .iter()
            .filter(|p| seen.insert((p.source.text(), p.target.text())))
            .cloned()
            .collect();
        Corpus { id: self.id.clone(), pairs }
    }
}

/// Which side(s) of a corpus an operation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
    Both,
}

/// Frequency bucket classification for a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bucket {
    Low,
    Mid,
    High,
    Unknown,
}

pub const PAD: &str = "⟨pad⟩";
pub const BOS: &str = "⟨bos⟩";
pub const EOS: &str = "⟨eos⟩";
pub const MASK: &str = "⟨mask⟩";

/// Word table with dense indices and training-corpus counts. Special
/// tokens (pad, bos, eos, mask, language tags) occupy the lowest indices.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    n_specials: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit (word, count) content entries and
    /// special tokens. Content entries are sorted by descending count,
    /// ties broken lexicographically.
    pub fn from_counts(counts: HashMap<String, u64>, tags: &[LanguageTag]) -> Self {
        let mut specials: Vec<String> = vec![PAD.into(), BOS.into(), EOS.into(), MASK.into()];
        let mut tags: Vec<&LanguageTag> = tags.iter().collect();
        tags.sort();
        tags.dedup();
        for t in tags {
            specials.push(t.rendered());
        }
        let n_specials = specials.len();

        let mut content: Vec<(String, u64)> =
            counts.into_iter().filter(|(w, _)| !specials.contains(w)).collect();
        content.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut words = specials;
        let mut count_vec = vec![0u64; n_specials];
        for (w, c) in content {
            words.push(w);
            count_vec.push(c);
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, counts: count_vec, index, n_specials }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn n_specials(&self) -> usize {
        self.n_specials
    }

    pub fn word(&self, idx: usize) -> Option<&str> {
        self.words.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn count(&self, word: &str) -> Option<u64> {
        self.index_of(word).map(|i| self.counts[i])
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Content words only (specials excluded), in index order.
    pub fn content_words(&self) -> &[String] {
        &self.words[self.n_specials..]
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn bos_id(&self) -> usize {
        1
    }

    pub fn eos_id(&self) -> usize {
        2
    }

    pub fn mask_id(&self) -> usize {
        3
    }

    pub fn tag_id(&self, tag: &LanguageTag) -> Option<usize> {
        self.index_of(&tag.rendered())
    }

    /// TSV export: "word<TAB>index<TAB>count" per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(&format!("{w}\t{i}\t{}\n", self.counts[i]));
        }
        out
    }
}

/// Reads a parallel corpus from two line-aligned UTF-8 files.
pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
    src_lang: LanguageTag,
    tgt_lang: LanguageTag,
) -> Result<Corpus> {
    let read = |p: &Path| -> Result<Vec<String>> {
        let bytes = fs::read(p)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::Decode(format!("{}: {e}", p.display())))?;
        Ok(text.lines().map(str::to_string).collect())
    };
    let src_lines = read(src_path)?;
    let tgt_lines = read(tgt_path)?;
    if src_lines.is_empty() || tgt_lines.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{} / {}",
            src_path.display(),
            tgt_path.display()
        )));
    }
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Alignment(format!(
            "line counts differ: {} vs {}",
            src_lines.len(),
            tgt_lines.len()
        )));
    }
    let pairs = src_lines
        .iter()
        .zip(&tgt_lines)
        .map(|(s, t)| ParallelPair {
            source: Sentence::from_line(s, src_lang.clone()),
            target: Sentence::from_line(t, tgt_lang.clone()),
        })
        .collect();
    Corpus::new(
        &format!(
            "{}-{}",
            src_path.file_stem().unwrap_or_default().to_string_lossy(),
            tgt_path.file_stem().unwrap_or_default().to_string_lossy()
        ),
        pairs,
    )
}

/// Writes a corpus back out as two line-per-sentence files.
pub fn save_parallel(corpus: &Corpus, src_path: &Path, tgt_path: &Path) -> Result<()> {
    let mut src = String::new();
    let mut tgt = String::new();
    for p in &corpus.pairs {
        src.push_str(&p.source.text());
        src.push('\n');
        tgt.push_str(&p.target.text());
        tgt.push('\n');
    }
    fs::write(src_path, src)?;
    fs::write(tgt_path, tgt)?;
    Ok(())
}

/// Counts every token on the selected side(s) of the corpus.
pub fn build_vocab(corpus: &Corpus, side: Side) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(corpus.id.clone()));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for p in &corpus.pairs {
        if matches!(side, Side::Source | Side::Both) {
            for t in &p.source.tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
        if matches!(side, Side::Target | Side::Both) {
            for t in &p.target.tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }
    let mut tags = Vec::new();
    if let (Some(s), Some(t)) = (corpus.source_lang(), corpus.target_lang()) {
        tags.push(s.clone());
        tags.push(t.clone());
    }
    Ok(Vocabulary::from_counts(counts, &tags))
}

/// Classifies a word by training-set count: strictly below `low` is Low,
/// strictly above `high` is High, otherwise Mid; out-of-vocabulary words
/// are Unknown.
pub fn frequency_bucket(
    vocab: &Vocabulary,
    word: &str,
    low_threshold: u64,
    high_threshold: u64,
) -> Bucket {
    debug_assert!(low_threshold <= high_threshold);
    match vocab.count(word) {
        None => Bucket::Unknown,
        Some(c) if c < low_threshold => Bucket::Low,
        Some(c) if c > high_threshold => Bucket::High,
        Some(_) => Bucket::Mid,
    }
}

/// Synthetic parallel corpus whose target is a fixed word bijection of
/// the source: source words "sK", target words "tσ(K)". Returns the
/// corpus and the gold source→target word map.
pub fn gen_cipher_pair(
    seed: u64,
    vocab_size: usize,
    n_sentences: usize,
    len_range: (usize, usize),
) -> Result<(Corpus, HashMap<String, String>)> {
    if vocab_size < 10 {
        return Err(Error::Parameter("vocab_size must be >= 10".into()));
    }
    if n_sentences < 1 {
        return Err(Error::Parameter("n_sentences must be >= 1".into()));
    }
    let (min_len, max_len) = len_range;
    if min_len < 1 || min_len > max_len {
        return Err(Error::Parameter(format!("degenerate length range ({min_len},{max_len})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Fisher-Yates permutation for the cipher.
    let mut perm: Vec<usize> = (0..vocab_size).collect();
    for i in (1..vocab_size).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let gold: HashMap<String, String> =
        (0..vocab_size).map(|k| (format!("s{k}"), format!("t{}", perm[k]))).collect();

    // Zipf-like unigram model via an explicit cumulative table.
    let weights: Vec<f64> = (1..=vocab_size).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(vocab_size);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }

    let src_lang = LanguageTag::new("SRC")?;
    let tgt_lang = LanguageTag::new("TGT")?;
    let mut pairs = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let len = rng.gen_range(min_len..=max_len);
        let mut src_tokens = Vec::with_capacity(len);
        let mut tgt_tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let u: f64 = rng.gen();
            let k = cumulative.partition_point(|&c| c < u).min(vocab_size - 1);
            src_tokens.push(format!("s{k}"));
            tgt_tokens.push(format!("t{}", perm[k]));
        }
        pairs.push(ParallelPair {
            source: Sentence { tokens: src_tokens, lang: src_lang.clone() },
            target: Sentence { tokens: tgt_tokens, lang: tgt_lang.clone() },
        });
    }
    Ok((Corpus::new("cipher", pairs)?, gold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tag(c: &str) -> LanguageTag {
        LanguageTag::new(c).unwrap()
    }

    fn tmp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_parallel_preserves_order() {
        let src = tmp_file("a b\nc d\n");
        let tgt = tmp_file("x\ny z\n");
        let c = load_parallel(src.path(), tgt.path(), tag("EN"), tag("ZH")).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[0].source.tokens, ["a", "b"]);
        assert_eq!(c.pairs[1].target.tokens, ["y", "z"]);
    }

    #[test]
    fn load_parallel_line_count_mismatch() {
        let src = tmp_file("a\nb\nc\n");
        let tgt = tmp_file("1\n2\n3\n4\n");
        let err = load_parallel(src.path(), tgt.path(), tag("EN"), tag("ZH")).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn load_parallel_empty_file() {
        let src = tmp_file("");
        let tgt = tmp_file("x\n");
        let err = load_parallel(src.path(), tgt.path(), tag("EN"), tag("ZH")).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus(_)));
    }

    #[test]
    fn whitespace_split_token_count() {
        let s = Sentence::from_line("Bush held a talk with Sharon .", tag("EN"));
        assert_eq!(s.len(), 7);
    }

    #[test]
    fn round_trip_utf8() {
        let src = tmp_file("布什 与 沙龙\nnaïve café\n");
        let tgt = tmp_file("Bush and Sharon\nplain text\n");
        let c = load_parallel(src.path(), tgt.path(), tag("ZH"), tag("EN")).unwrap();
        let out_s = tempfile::NamedTempFile::new().unwrap();
        let out_t = tempfile::NamedTempFile::new().unwrap();
        save_parallel(&c, out_s.path(), out_t.path()).unwrap();
        assert_eq!(std::fs::read(src.path()).unwrap(), std::fs::read(out_s.path()).unwrap());
        assert_eq!(std::fs::read(tgt.path()).unwrap(), std::fs::read(out_t.path()).unwrap());
    }

    #[test]
    fn build_vocab_counts_and_order() {
        let pairs = vec![
            ParallelPair {
                source: Sentence::from_line("a b a", tag("EN")),
                target: Sentence::from_line("x", tag("ZH")),
            },
            ParallelPair {
                source: Sentence::from_line("b", tag("EN")),
                target: Sentence::from_line("y", tag("ZH")),
            },
        ];
        let c = Corpus::new("t", pairs).unwrap();
        let v = build_vocab(&c, Side::Source).unwrap();
        assert_eq!(v.count("a"), Some(2));
        assert_eq!(v.count("b"), Some(2));
        // Ties broken lexicographically: a before b.
        assert!(v.index_of("a").unwrap() < v.index_of("b").unwrap());
        // Specials occupy the lowest indices.
        assert_eq!(v.word(0), Some(PAD));
        assert_eq!(v.word(3), Some(MASK));
        assert!(v.index_of("a").unwrap() >= v.n_specials());
    }

    #[test]
    fn build_vocab_both_sides() {
        let pairs = vec![ParallelPair {
            source: Sentence::from_line("hello", tag("EN")),
            target: Sentence::from_line("你好", tag("ZH")),
        }];
        let c = Corpus::new("t", pairs).unwrap();
        let v = build_vocab(&c, Side::Both).unwrap();
        assert!(v.index_of("hello").is_some());
        assert!(v.index_of("你好").is_some());
    }

    #[test]
    fn build_vocab_matches_brute_force_tally() {
        let (c, _) = gen_cipher_pair(7, 20, 50, (1, 12)).unwrap();
        let v = build_vocab(&c, Side::Both).unwrap();
        let mut tally: HashMap<String, u64> = HashMap::new();
        for p in &c.pairs {
            for t in p.source.tokens.iter().chain(&p.target.tokens) {
                *tally.entry(t.clone()).or_insert(0) += 1;
            }
        }
        for (w, n) in tally {
            assert_eq!(v.count(&w), Some(n), "count mismatch for {w}");
        }
    }

    #[test]
    fn frequency_bucket_boundaries() {
        let mut counts = HashMap::new();
        counts.insert("low".to_string(), 99u64);
        counts.insert("hi".to_string(), 1001u64);
        counts.insert("mid_lo".to_string(), 100u64);
        counts.insert("mid_hi".to_string(), 1000u64);
        let v = Vocabulary::from_counts(counts, &[]);
        assert_eq!(frequency_bucket(&v, "low", 100, 1000), Bucket::Low);
        assert_eq!(frequency_bucket(&v, "hi", 100, 1000), Bucket::High);
        assert_eq!(frequency_bucket(&v, "mid_lo", 100, 1000), Bucket::Mid);
        assert_eq!(frequency_bucket(&v, "mid_hi", 100, 1000), Bucket::Mid);
        assert_eq!(frequency_bucket(&v, "absent", 100, 1000), Bucket::Unknown);
    }

    #[test]
    fn cipher_pair_deterministic() {
        let (a, ga) = gen_cipher_pair(42, 50, 100, (3, 10)).unwrap();
        let (b, gb) = gen_cipher_pair(42, 50, 100, (3, 10)).unwrap();
        assert_eq!(ga, gb);
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn cipher_pair_positional_substitution() {
        let (c, gold) = gen_cipher_pair(3, 30, 200, (1, 15)).unwrap();
        for p in &c.pairs {
            assert_eq!(p.source.len(), p.target.len());
            for (s, t) in p.source.tokens.iter().zip(&p.target.tokens) {
                assert_eq!(&gold[s], t);
            }
        }
    }

    #[test]
    fn cipher_pair_full_key_coverage() {
        let (c, gold) = gen_cipher_pair(0, 50, 2000, (3, 20)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &c.pairs {
            for t in &p.source.tokens {
                seen.insert(t.clone());
            }
        }
        assert_eq!(seen.len(), gold.len(), "every cipher key appears at least once");
    }

    #[test]
    fn cipher_pair_degenerate_range() {
        assert!(matches!(
            gen_cipher_pair(0, 50, 10, (5, 2)),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(gen_cipher_pair(0, 5, 10, (1, 5)), Err(Error::Parameter(_))));
    }
}
