//! The corruption side of the restore tasks: Poisson span sampling,
//! span masking, sentence permutation, and code-switching against a
//! translation lexicon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::DirectionalLexicon;
use crate::corpus::{Corpus, Sentence, MASK};

#[derive(Debug, Clone)]
pub struct NoiseConfig {
    /// Fraction of words affected.
    pub ratio: f64,
    /// Expected raw span length.
    pub poisson_lambda: f64,
    /// Neighbor rank bound for switching.
    pub k: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { ratio: 0.35, poisson_lambda: 3.5, k: 4, seed: 1 }
    }
}

/// Corrupted input with its original sentence as restore target. Both
/// carry the original language's tag as a trailing token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestorePair {
    pub input: Sentence,
    pub target: Sentence,
    pub side: RestoreSide,
    /// Indices into the original (untagged) sentence that were switched
    /// or masked.
    pub replaced_positions: Vec<usize>,
    /// Set when the lexicon covered no replaceable token.
    pub coverage_warning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestoreSide {
    Source,
    Target,
}

/// Raw Poisson(λ) draw via Knuth's product-of-uniforms method.
pub fn poisson(lambda: f64, rng: &mut ChaCha8Rng) -> usize {
    let limit = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Word budget for a sentence of length `n`: round-half-up of ratio·n,
/// floored at 1.
pub fn word_budget(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 + 0.5).floor() as usize).max(1)
}

/// Samples disjoint in-bounds spans whose lengths are Poisson(λ) draws
/// clamped to ≥ 1, until exactly `budget` words are covered; the final
/// span is truncated to hit the budget. Returns (spans, raw_draws).
pub fn sample_spans_raw(
    n: usize,
    config: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<(usize, usize)>, Vec<usize>) {
    assert!(n >= 1);
    let budget = word_budget(n, config.ratio).min(n);
    let mut occupied = vec![false; n];
    let mut spans = Vec::new();
    let mut raws = Vec::new();
    let mut covered = 0usize;
    while covered < budget {
        let raw = poisson(config.poisson_lambda, rng);
        raws.push(raw);
        let mut len = raw.max(1).min(budget - covered);
        // Place without overlap: redraw on collision a few times, then
        // fall back to the free placements; shrink if none fit.
        let start = loop {
            let mut placed = None;
            for _ in 0..20 {
                if len > n {
                    break;
                }
                let s = rng.gen_range(0..=(n - len));
                if occupied[s..s + len].iter().all(|&o| !o) {
                    placed = Some(s);
                    break;
                }
            }
            if placed.is_none() && len <= n {
                let free: Vec<usize> = (0..=(n - len))
                    .filter(|&s| occupied[s..s + len].iter().all(|&o| !o))
                    .collect();
                if !free.is_empty() {
                    placed = Some(free[rng.gen_range(0..free.len())]);
                }
            }
            match placed {
                Some(s) => break s,
                None => {
                    len -= 1;
                    assert!(len >= 1, "a length-1 span always fits under the budget");
                }
            }
        };
        for cell in occupied.iter_mut().skip(start).take(len) {
            *cell = true;
        }
        spans.push((start, len));
        covered += len;
    }
    spans.sort_unstable();
    (spans, raws)
}

pub fn sample_spans(n: usize, config: &NoiseConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    sample_spans_raw(n, config, rng).0
}

fn with_tag(tokens: Vec<String>, sent: &Sentence) -> Sentence {
    let mut tokens = tokens;
    tokens.push(sent.lang.rendered());
    Sentence { tokens, lang: sent.lang.clone() }
}

/// Collapses each sampled span to a single mask token; the target is the
/// original sentence. Both sides carry the language tag.
pub fn span_mask(sent: &Sentence, config: &NoiseConfig, rng: &mut ChaCha8Rng) -> RestorePair {
    assert!(!sent.is_empty());
    let spans = sample_spans(sent.len(), config, rng);
    let mut input = Vec::new();
    let mut replaced = Vec::new();
    let mut i = 0usize;
    let mut span_iter = spans.iter().peekable();
    while i < sent.len() {
        if let Some(&&(start, len)) = span_iter.peek() {
            if i == start {
                input.push(MASK.to_string());
                replaced.extend(start..start + len);
                i += len;
                span_iter.next();
                continue;
            }
        }
        input.push(sent.tokens[i].clone());
        i += 1;
    }
    RestorePair {
        input: with_tag(input, sent),
        target: with_tag(sent.tokens.clone(), sent),
        side: RestoreSide::Source,
        replaced_positions: replaced,
        coverage_warning: false,
    }
}

/// Uniformly random permutation of a sentence list.
pub fn permute_sentences(doc: &[Sentence], rng: &mut ChaCha8Rng) -> Vec<Sentence> {
    assert!(!doc.is_empty());
    let mut out: Vec<Sentence> = doc.to_vec();
    for i in (1..out.len()).rev() {
        let j = rng.gen_range(0..=i);
        out.swap(i, j);
    }
    out
}

/// Replaces words inside sampled spans by a uniformly random choice
/// among their top-k lexicon neighbors. Words without lexicon entries
/// are skipped and do not count toward the budget; sampling continues
/// until the budget is met or every position has been considered once.
pub fn code_switch(
    sent: &Sentence,
    lexicon: &DirectionalLexicon,
    config: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> RestorePair {
    assert!(!sent.is_empty());
    let n = sent.len();
    let budget = word_budget(n, config.ratio).min(n);
    let mut tokens = sent.tokens.clone();
    let mut considered = vec![false; n];
    let mut n_considered = 0usize;
    let mut replaced = Vec::new();

    while replaced.len() < budget && n_considered < n {
        let raw = poisson(config.poisson_lambda, rng);
        let need = budget - replaced.len();
        let mut len = raw.max(1).min(need).min(n - n_considered);
        let start = loop {
            let mut placed = None;
            for _ in 0..20 {
                if len > n {
                    break;
                }
                let s = rng.gen_range(0..=(n - len));
                if considered[s..s + len].iter().all(|&c| !c) {
                    placed = Some(s);
                    break;
                }
            }
            if placed.is_none() && len <= n {
                let free: Vec<usize> = (0..=(n - len))
                    .filter(|&s| considered[s..s + len].iter().all(|&c| !c))
                    .collect();
                if !free.is_empty() {
                    placed = Some(free[rng.gen_range(0..free.len())]);
                }
            }
            match placed {
                Some(s) => break s,
                None => {
                    len -= 1;
                    assert!(len >= 1);
                }
            }
        };
        for pos in start..start + len {
            considered[pos] = true;
            n_considered += 1;
            if let Some(neighbors) = lexicon.neighbors(&sent.tokens[pos]) {
                if neighbors.is_empty() {
                    continue;
                }
                let top = neighbors.len().min(config.k);
                let choice = rng.gen_range(0..top);
                tokens[pos] = neighbors[choice].0.clone();
                replaced.push(pos);
            }
        }
    }
    replaced.sort_unstable();
    let coverage_warning = replaced.is_empty();
    RestorePair {
        input: with_tag(tokens, sent),
        target: with_tag(sent.tokens.clone(), sent),
        side: RestoreSide::Source,
        replaced_positions: replaced,
        coverage_warning,
    }
}

/// One alternating batch of restore pairs.
#[derive(Debug, Clone)]
pub struct RestoreBatch {
    pub side: RestoreSide,
    pub pairs: Vec<RestorePair>,
}

/// One epoch of alternating source/target restore batches: every X_i and
/// every Y_j appears exactly once, in seed-shuffled order, with sides
/// strictly alternating (source first).
pub fn make_restore_stream(
    corpus: &Corpus,
    lex_src: &DirectionalLexicon,
    lex_tgt: &DirectionalLexicon,
    config: &NoiseConfig,
    batch_size: usize,
    epoch_seed: u64,
) -> Vec<RestoreBatch> {
    if corpus.is_empty() {
        return Vec::new();
    }
    let batch_size = batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let shuffled = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..corpus.len()).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    };
    let src_order = shuffled(&mut rng);
    let tgt_order = shuffled(&mut rng);

    let corrupt = |indices: &[usize], side: RestoreSide| -> Vec<RestorePair> {
        indices
            .iter()
            .map(|&i| {
                // Per-sentence derived rng stream keeps corruption of
                // distinct sentences independent.
                let side_bit = match side {
                    RestoreSide::Source => 0u64,
                    RestoreSide::Target => 1u64 << 32,
                };
                let mut srng = ChaCha8Rng::seed_from_u64(
                    config.seed ^ epoch_seed.rotate_left(17) ^ side_bit ^ (i as u64),
                );
                let (sent, lex) = match side {
                    RestoreSide::Source => (&corpus.pairs[i].source, lex_src),
                    RestoreSide::Target => (&corpus.pairs[i].target, lex_tgt),
                };
                let mut pair = code_switch(sent, lex, config, &mut srng);
                pair.side = side;
                pair
            })
            .collect()
    };
    let src_pairs = corrupt(&src_order, RestoreSide::Source);
    let tgt_pairs = corrupt(&tgt_order, RestoreSide::Target);

    let mut batches = Vec::new();
    let mut src_chunks = src_pairs.chunks(batch_size);
    let mut tgt_chunks = tgt_pairs.chunks(batch_size);
    loop {
        let s = src_chunks.next();
        let t = tgt_chunks.next();
        if s.is_none() && t.is_none() {
            break;
        }
        if let Some(s) = s {
            batches.push(RestoreBatch { side: RestoreSide::Source, pairs: s.to_vec() });
        }
        if let Some(t) = t {
            batches.push(RestoreBatch { side: RestoreSide::Target, pairs: t.to_vec() });
        }
    }
    batches
}

/// TSV dump of restore pairs: "side<TAB>input tokens<TAB>target tokens".
pub fn dump_restore_tsv(pairs: &[&RestorePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let side = match p.side {
            RestoreSide::Source => "source",
            RestoreSide::Target => "target",
        };
        out.push_str(&format!("{side}\t{}\t{}\n", p.input.text(), p.target.text()));
    }
    out
}
