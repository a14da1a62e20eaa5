//! In-domain word embeddings per language side: a from-scratch skip-gram
//! with negative sampling trainer, the standard text embedding format,
//! and row/column normalization schemes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Word vectors with their own dense word index.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix<S: Scalar> {
    words: Vec<String>,
    index: HashMap<String, usize>,
    pub vectors: Array2<S>,
}

impl<S: Scalar> EmbeddingMatrix<S> {
    pub fn new(words: Vec<String>, vectors: Array2<S>) -> Result<Self> {
        if words.len() != vectors.nrows() {
            return Err(Error::Format(format!(
                "{} words but {} vector rows",
                words.len(),
                vectors.nrows()
            )));
        }
        if vectors.ncols() < 2 {
            return Err(Error::Parameter("embedding dim must be >= 2".into()));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("non-finite embedding component".into()));
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(EmbeddingMatrix { words, index, vectors })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

/// Normalization step applied to an embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormStep {
    /// Scale every row to unit Euclidean norm.
    Unit,
    /// Subtract the mean from every column.
    Center,
}

/// Applies the scheme steps in order. `Unit` on a zero-norm row is an error.
pub fn normalize<S: Scalar>(
    e: &EmbeddingMatrix<S>,
    scheme: &[NormStep],
) -> Result<EmbeddingMatrix<S>> {
    let mut vectors = e.vectors.clone();
    for step in scheme {
        match step {
            NormStep::Unit => {
                for (i, row) in vectors.rows().into_iter().enumerate() {
                    let norm = row.iter().map(|&x| x * x).sum::<S>().sqrt();
                    if norm <= S::min_positive_value() {
                        return Err(Error::Normalization(format!(
                            "zero vector for word {:?}",
                            e.words[i]
                        )));
                    }
                }
                linalg::unit_rows(&mut vectors);
            }
            NormStep::Center => linalg::center_columns(&mut vectors),
        }
    }
    EmbeddingMatrix::new(e.words.clone(), vectors)
}

#[derive(Debug, Clone)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_count: u64,
    pub seed: u64,
    /// Seed-controlled sentence shuffling per epoch.
    pub shuffle: bool,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            min_count: 1,
            seed: 1,
            shuffle: false,
        }
    }
}

impl SgnsConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 2
            || self.window == 0
            || self.negatives == 0
            || self.epochs == 0
            || self.lr <= 0.0
            || self.min_count < 1
        {
            return Err(Error::Parameter("invalid sgns config".into()));
        }
        Ok(())
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Gradient of the per-pair negative-sampling loss
///   L = −log σ(u·v⁺) − Σ_k log σ(−u·v⁻_k)
/// with respect to the center vector u, the positive context vector v⁺,
/// and each negative context vector v⁻_k.
pub fn sgns_gradients<S: Scalar>(
    center: &[S],
    positive: &[S],
    negatives: &[Vec<S>],
) -> (Vec<S>, Vec<S>, Vec<Vec<S>>) {
    let d = center.len();
    let dot = |a: &[S], b: &[S]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<S>();
    let mut g_center = vec![S::zero(); d];
    let mut g_positive = vec![S::zero(); d];

    let s_pos = sigmoid(dot(center, positive));
    let coeff = s_pos - S::one();
    for i in 0..d {
        g_center[i] += coeff * positive[i];
        g_positive[i] += coeff * center[i];
    }
    let mut g_negatives = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s_neg = sigmoid(dot(center, neg));
        let mut g_neg = vec![S::zero(); d];
        for i in 0..d {
            g_center[i] += s_neg * neg[i];
            g_neg[i] = s_neg * center[i];
        }
        g_negatives.push(g_neg);
    }
    (g_center, g_positive, g_negatives)
}

/// Per-pair negative-sampling loss; the quantity `sgns_gradients`
/// differentiates.
pub fn sgns_loss<S: Scalar>(center: &[S], positive: &[S], negatives: &[Vec<S>]) -> S {
    let dot = |a: &[S], b: &[S]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<S>();
    let mut loss = -sigmoid(dot(center, positive)).ln();
    for neg in negatives {
        loss -= sigmoid(-dot(center, neg)).ln();
    }
    loss
}

/// Trains skip-gram with negative sampling on one corpus side and
/// returns the input-vector matrix. Single-threaded and deterministic
/// per seed. Per-epoch mean losses are returned alongside.
pub fn train_sgns_with_loss<S: Scalar>(
    sentences: &[Sentence],
    config: &SgnsConfig,
) -> Result<(EmbeddingMatrix<S>, Vec<f64>)> {
    config.validate()?;
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in sentences {
        for t in &s.tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, u64)> =
        counts.into_iter().filter(|&(_, c)| c >= config.min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if entries.is_empty() {
        return Err(Error::DegenerateCorpus("no words survive min_count".into()));
    }
    let words: Vec<String> = entries.iter().map(|&(w, _)| w.to_string()).collect();
    let index: HashMap<&str, usize> =
        entries.iter().enumerate().map(|(i, &(w, _))| (w, i)).collect();
    let v = words.len();
    let d = config.dim;

    // Negative-sampling table: unigram distribution to the 0.75 power.
    let weights: Vec<f64> = entries.iter().map(|&(_, c)| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(v);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    let sample_negative = |rng: &mut ChaCha8Rng| -> usize {
        let u: f64 = rng.gen();
        cumulative.partition_point(|&c| c < u).min(v - 1)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input = Array2::<S>::zeros((v, d));
    let bound = 0.5 / d as f64;
    for x in input.iter_mut() {
        *x = S::from_f64_lossy(rng.gen_range(-bound..bound));
    }
    let mut output = Array2::<S>::zeros((v, d));

    let sent_ids: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.tokens.iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
        .collect();
    let total_pairs: usize = sent_ids
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .map(|(i, _)| {
                    let lo = i.saturating_sub(config.window);
                    let hi = (i + config.window).min(s.len().saturating_sub(1));
                    hi - lo
                })
                .sum::<usize>()
        })
        .sum::<usize>()
        .max(1);
    let total_budget = (total_pairs * config.epochs) as f64;

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut seen_pairs = 0usize;
    let mut order: Vec<usize> = (0..sent_ids.len()).collect();
    for _epoch in 0..config.epochs {
        if config.shuffle {
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
        }
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0usize;
        for &si in &order {
            let ids = &sent_ids[si];
            for (i, &center) in ids.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(ids.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = ids[j];
                    let lr = S::from_f64_lossy(
                        config.lr * (1.0 - seen_pairs as f64 / total_budget).max(1e-4),
                    );
                    let negs: Vec<usize> = (0..config.negatives)
                        .map(|_| sample_negative(&mut rng))
                        .filter(|&n| n != context)
                        .collect();

                    let center_vec: Vec<S> = input.row(center).to_vec();
                    let positive: Vec<S> = output.row(context).to_vec();
                    let neg_vecs: Vec<Vec<S>> =
                        negs.iter().map(|&n| output.row(n).to_vec()).collect();
                    epoch_loss += sgns_loss(&center_vec, &positive, &neg_vecs).to_f64_lossy();
                    epoch_pairs += 1;

                    let (g_c, g_p, g_n) = sgns_gradients(&center_vec, &positive, &neg_vecs);
                    for k in 0..d {
                        input[(center, k)] -= lr * g_c[k];
                        output[(context, k)] -= lr * g_p[k];
                    }
                    for (gi, &n) in negs.iter().enumerate() {
                        for k in 0..d {
                            output[(n, k)] -= lr * g_n[gi][k];
                        }
                    }
                    seen_pairs += 1;
                }
            }
        }
        epoch_losses.push(epoch_loss / epoch_pairs.max(1) as f64);
    }

    Ok((EmbeddingMatrix::new(words, input)?, epoch_losses))
}

pub fn train_sgns<S: Scalar>(
    sentences: &[Sentence],
    config: &SgnsConfig,
) -> Result<EmbeddingMatrix<S>> {
    train_sgns_with_loss(sentences, config).map(|(e, _)| e)
}

/// Writes the word2vec text format: header "V D", then one
/// "word c_1 ... c_D" line per word. Components use Rust's shortest
/// round-tripping float formatting, so save→load is bit-exact.
pub fn save_embeddings<S: Scalar>(e: &EmbeddingMatrix<S>, path: &Path) -> Result<()> {
    let mut out = format!("{} {}\n", e.len(), e.dim());
    for (i, w) in e.words.iter().enumerate() {
        out.push_str(w);
        for x in e.vectors.row(i) {
            out.push(' ');
            out.push_str(&format!("{x}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_embeddings<S: Scalar>(path: &Path) -> Result<EmbeddingMatrix<S>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty embedding file".into()))?;
    let mut parts = header.split_whitespace();
    let parse_usize = |s: Option<&str>| -> Result<usize> {
        s.ok_or_else(|| Error::Format("bad header".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("bad header: {e}")))
    };
    let v = parse_usize(parts.next())?;
    let d = parse_usize(parts.next())?;
    let mut words = Vec::with_capacity(v);
    let mut values = Vec::with_capacity(v * d);
    for (row, line) in lines.enumerate() {
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| Error::Format(format!("row {row}: missing word")))?;
        words.push(word.to_string());
        let mut n = 0;
        for f in fields {
            let x: f64 =
                f.parse().map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            values.push(S::from_f64_lossy(x));
            n += 1;
        }
        if n != d {
            return Err(Error::Format(format!("row {row}: {n} values, expected {d}")));
        }
    }
    if words.len() != v {
        return Err(Error::Format(format!("{} rows, header says {v}", words.len())));
    }
    let vectors = Array2::from_shape_vec((v, d), values)
        .map_err(|e| Error::Format(e.to_string()))?;
    EmbeddingMatrix::new(words, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageTag;
    use ndarray::array;

    fn sent(line: &str) -> Sentence {
        Sentence::from_line(line, LanguageTag::new("EN").unwrap())
    }

    #[test]
    fn sgns_deterministic() {
        let sentences: Vec<Sentence> =
            (0..50).map(|i| sent(&format!("w{} w{} w{}", i % 5, (i + 1) % 5, (i + 2) % 5))).collect();
        let cfg = SgnsConfig { dim: 8, epochs: 2, ..Default::default() };
        let a: EmbeddingMatrix<f64> = train_sgns(&sentences, &cfg).unwrap();
        let b: EmbeddingMatrix<f64> = train_sgns(&sentences, &cfg).unwrap();
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.words(), b.words());
    }

    #[test]
    fn sgns_loss_non_increasing_on_average() {
        let sentences: Vec<Sentence> = (0..100)
            .map(|i| sent(&format!("a{} b{} a{} b{}", i % 7, i % 7, (i + 1) % 7, (i + 1) % 7)))
            .collect();
        let cfg = SgnsConfig { dim: 16, epochs: 4, ..Default::default() };
        let (_, losses) = train_sgns_with_loss::<f64>(&sentences, &cfg).unwrap();
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "loss should decrease on average: {losses:?}"
        );
    }

    #[test]
    fn sgns_identical_contexts_high_similarity() {
        // Two target words occur in identical contexts; 1k sentences.
        let mut rng_i = 0u64;
        let sentences: Vec<Sentence> = (0..1000)
            .map(|i| {
                rng_i = rng_i.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407 + i);
                let w = if (rng_i >> 33) % 2 == 0 { "twinA" } else { "twinB" };
                let c = (rng_i >> 17) % 6;
                sent(&format!("left{c} {w} right{c}"))
            })
            .collect();
        let cfg = SgnsConfig { dim: 16, window: 2, epochs: 10, seed: 3, ..Default::default() };
        let e: EmbeddingMatrix<f64> = train_sgns(&sentences, &cfg).unwrap();
        let a = e.vectors.row(e.index_of("twinA").unwrap()).to_owned();
        let b = e.vectors.row(e.index_of("twinB").unwrap()).to_owned();
        let cos = a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
        assert!(cos > 0.9, "cosine {cos}");
    }

    #[test]
    fn sgns_gradient_matches_finite_differences() {
        // Central-difference oracle over every coordinate of one triple.
        let center = vec![0.3, -0.2, 0.5, 0.1];
        let positive = vec![-0.4, 0.2, 0.1, -0.3];
        let negatives = vec![vec![0.2, 0.1, -0.5, 0.4], vec![-0.1, -0.3, 0.2, 0.2]];
        let (g_c, g_p, g_n) = sgns_gradients(&center, &positive, &negatives);
        let h = 1e-6;
        let check = |analytic: f64, mut lo: Box<dyn FnMut() -> f64>, mut hi: Box<dyn FnMut() -> f64>| {
            let num = (hi() - lo()) / (2.0 * h);
            let rel = (analytic - num).abs() / num.abs().max(1e-8);
            assert!(rel < 1e-4, "analytic {analytic} vs numeric {num}");
        };
        for i in 0..4 {
            let (c, p, n) = (center.clone(), positive.clone(), negatives.clone());
            check(
                g_c[i],
                Box::new({
                    let (mut c, p, n) = (c.clone(), p.clone(), n.clone());
                    move || {
                        c[i] -= h;
                        let l = sgns_loss(&c, &p, &n);
                        c[i] += h;
                        l
                    }
                }),
                Box::new({
                    let (mut c, p, n) = (c, p, n);
                    move || {
                        c[i] += h;
                        let l = sgns_loss(&c, &p, &n);
                        c[i] -= h;
                        l
                    }
                }),
            );
            let mut p_lo = positive.clone();
            p_lo[i] -= h;
            let mut p_hi = positive.clone();
            p_hi[i] += h;
            let num =
                (sgns_loss(&center, &p_hi, &negatives) - sgns_loss(&center, &p_lo, &negatives)) / (2.0 * h);
            assert!((g_p[i] - num).abs() / num.abs().max(1e-8) < 1e-4);
            for k in 0..2 {
                let mut n_lo = negatives.clone();
                n_lo[k][i] -= h;
                let mut n_hi = negatives.clone();
                n_hi[k][i] += h;
                let num = (sgns_loss(&center, &positive, &n_hi)
                    - sgns_loss(&center, &positive, &n_lo))
                    / (2.0 * h);
                assert!((g_n[k][i] - num).abs() / num.abs().max(1e-8) < 1e-4);
            }
        }
    }

    #[test]
    fn sgns_empty_after_min_count() {
        let sentences = vec![sent("a b c")];
        let cfg = SgnsConfig { min_count: 5, ..Default::default() };
        assert!(matches!(
            train_sgns::<f64>(&sentences, &cfg),
            Err(Error::DegenerateCorpus(_))
        ));
    }

    #[test]
    fn load_identity_like() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "2 2\na 1 0\nb 0 1\n").unwrap();
        let e: EmbeddingMatrix<f64> = load_embeddings(f.path()).unwrap();
        assert_eq!(e.words(), ["a", "b"]);
        assert_eq!(e.vectors, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let e = EmbeddingMatrix::new(
            vec!["x".into(), "y".into(), "z".into()],
            array![[0.1, -0.2], [1.0 / 3.0, 2.0_f64.sqrt()], [-1e-17, 5.5]],
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_embeddings(&e, f.path()).unwrap();
        let back: EmbeddingMatrix<f64> = load_embeddings(f.path()).unwrap();
        assert_eq!(e.vectors, back.vectors);
        assert_eq!(e.words(), back.words());
    }

    #[test]
    fn load_row_width_mismatch() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "1 2\na 1 2 3\n").unwrap();
        assert!(matches!(load_embeddings::<f64>(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn load_non_numeric_component() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "1 2\na 1 oops\n").unwrap();
        assert!(matches!(load_embeddings::<f64>(f.path()), Err(Error::Parse(_))));
    }

    #[test]
    fn normalize_unit_analytic() {
        let e: EmbeddingMatrix<f64> =
            EmbeddingMatrix::new(vec!["a".into()], array![[3.0, 4.0]]).unwrap();
        let n = normalize(&e, &[NormStep::Unit]).unwrap();
        assert!((n.vectors[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((n.vectors[(0, 1)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_center_analytic() {
        let e = EmbeddingMatrix::new(
            vec!["a".into(), "b".into()],
            array![[1.0, 0.0], [3.0, 0.0]],
        )
        .unwrap();
        let n = normalize(&e, &[NormStep::Center]).unwrap();
        assert_eq!(n.vectors, array![[-1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn normalize_unit_center_unit_final_norms() {
        let e = EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]],
        )
        .unwrap();
        let n = normalize(&e, &[NormStep::Unit, NormStep::Center, NormStep::Unit]).unwrap();
        for row in n.vectors.rows() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_unit_idempotent() {
        let e: EmbeddingMatrix<f64> = EmbeddingMatrix::new(
            vec!["a".into(), "b".into()],
            array![[1.0, 2.0], [-3.0, 0.5]],
        )
        .unwrap();
        let once = normalize(&e, &[NormStep::Unit]).unwrap();
        let twice = normalize(&once, &[NormStep::Unit]).unwrap();
        for (x, y) in once.vectors.iter().zip(twice.vectors.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_zero_vector_error() {
        let e = EmbeddingMatrix::new(
            vec!["a".into(), "b".into()],
            array![[0.0, 0.0], [1.0, 1.0]],
        )
        .unwrap();
        assert!(matches!(normalize(&e, &[NormStep::Unit]), Err(Error::Normalization(_))));
    }
}
