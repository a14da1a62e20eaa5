//! Metrics and analyses: corpus BLEU, frequency-bucketed word
//! F-measure, cross-lingual representation distance, and convergence
//! comparison between training runs.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::corpus::{Bucket, Corpus, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::pipeline::{self, TrainLog};
use crate::scalar::Scalar;
use crate::seq2seq::{self, Seq2SeqModel};

// ---------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU on word tokens: geometric mean of clipped n-gram
/// precisions (n = 1..=max_n) times the brevity penalty, scaled to
/// 0–100. No smoothing: any zero precision gives a zero score.
pub fn bleu(hypotheses: &[Sentence], references: &[Sentence], max_n: usize) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::Pairing(format!(
            "need equal non-empty hypothesis/reference lists, got {}/{}",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Parameter("max_n must be >= 1".into()));
    }
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(&h.tokens, n);
            let rc = ngram_counts(&r.tokens, n);
            for (gram, &count) in &hc {
                total[n - 1] += count;
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_precision_sum = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * (log_precision_sum / max_n as f64).exp())
}

// ---------------------------------------------------------------------
// Frequency-bucketed word F-measure
// ---------------------------------------------------------------------

/// Per-bucket F-measures; a bucket with zero reference occurrences is
/// reported as absent.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketF {
    pub all: Option<f64>,
    pub high: Option<f64>,
    pub mid: Option<f64>,
    pub low: Option<f64>,
}

#[derive(Default)]
struct FCounts {
    matched: usize,
    hyp_total: usize,
    ref_total: usize,
}

impl FCounts {
    fn f_measure(&self) -> Option<f64> {
        if self.ref_total == 0 {
            return None;
        }
        let recall = self.matched as f64 / self.ref_total as f64;
        let precision = if self.hyp_total > 0 {
            self.matched as f64 / self.hyp_total as f64
        } else {
            0.0
        };
        if precision + recall == 0.0 {
            Some(0.0)
        } else {
            Some(2.0 * precision * recall / (precision + recall))
        }
    }
}

/// Word F-measure per frequency bucket of the training vocabulary:
/// per-sentence clipped occurrence matching restricted to each bucket's
/// words; the "all" bucket covers every word.
pub fn bucket_fmeasure(
    hypotheses: &[Sentence],
    references: &[Sentence],
    train_vocab: &Vocabulary,
    thresholds: (u64, u64),
) -> Result<BucketF> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::Pairing(format!(
            "need equal non-empty hypothesis/reference lists, got {}/{}",
            hypotheses.len(),
            references.len()
        )));
    }
    let (low, high) = thresholds;
    if low > high {
        return Err(Error::Parameter(format!("thresholds out of order: {low} > {high}")));
    }
    let mut all = FCounts::default();
    let mut per_bucket: HashMap<Bucket, FCounts> = HashMap::new();
    fn word_counts(s: &Sentence) -> HashMap<&str, usize> {
        let mut c = HashMap::new();
        for t in &s.tokens {
            *c.entry(t.as_str()).or_insert(0) += 1;
        }
        c
    }
    for (h, r) in hypotheses.iter().zip(references) {
        let hc = word_counts(h);
        let rc = word_counts(r);
        let mut words: Vec<&str> = hc.keys().chain(rc.keys()).copied().collect();
        words.sort_unstable();
        words.dedup();
        for w in words {
            let in_hyp = hc.get(w).copied().unwrap_or(0);
            let in_ref = rc.get(w).copied().unwrap_or(0);
            let m = in_hyp.min(in_ref);
            all.matched += m;
            all.hyp_total += in_hyp;
            all.ref_total += in_ref;
            let bucket = crate::corpus::frequency_bucket(train_vocab, w, low, high);
            let c = per_bucket.entry(bucket).or_default();
            c.matched += m;
            c.hyp_total += in_hyp;
            c.ref_total += in_ref;
        }
    }
    let f = |b: Bucket| per_bucket.get(&b).and_then(FCounts::f_measure);
    Ok(BucketF {
        all: all.f_measure(),
        high: f(Bucket::High),
        mid: f(Bucket::Mid),
        low: f(Bucket::Low),
    })
}

// ---------------------------------------------------------------------
// Representation distance
// ---------------------------------------------------------------------

pub const DISTANCE_SUBSET_CAP: usize = 20_000;

/// Cross-lingual representation distance over a parallel subset:
/// sqrt( Σ_i ‖e_i^src − e_i^tgt‖² ), with e_i the final decoder hidden
/// state of a teacher-forced copy of sentence i. Magnitude scales with
/// the subset size, which callers should record.
pub fn representation_distance<S: Scalar>(
    model: &Seq2SeqModel<S>,
    vocab: &Vocabulary,
    src_sentences: &[Sentence],
    tgt_sentences: &[Sentence],
) -> Result<f64> {
    if src_sentences.len() != tgt_sentences.len() {
        return Err(Error::Pairing(format!(
            "list lengths differ: {} vs {}",
            src_sentences.len(),
            tgt_sentences.len()
        )));
    }
    if src_sentences.len() > DISTANCE_SUBSET_CAP {
        return Err(Error::Parameter(format!(
            "subset of {} exceeds the {DISTANCE_SUBSET_CAP}-sentence cap",
            src_sentences.len()
        )));
    }
    let mut sum_sq = 0.0f64;
    for (s, t) in src_sentences.iter().zip(tgt_sentences) {
        let e_s = embed_sentence(model, vocab, s)?;
        let e_t = embed_sentence(model, vocab, t)?;
        sum_sq += e_s
            .iter()
            .zip(&e_t)
            .map(|(&a, &b)| {
                let d = a.to_f64_lossy() - b.to_f64_lossy();
                d * d
            })
            .sum::<f64>();
    }
    Ok(sum_sq.sqrt())
}

/// Sentence ids with the language tag appended (matching the training
/// input convention), run through the teacher-forced-copy embedding.
fn embed_sentence<S: Scalar>(
    model: &Seq2SeqModel<S>,
    vocab: &Vocabulary,
    sentence: &Sentence,
) -> Result<Vec<S>> {
    let mut tokens = sentence.tokens.clone();
    tokens.push(sentence.lang.rendered());
    let ids = pipeline::encode_tokens(vocab, &tokens)?;
    let (e, _truncated) = seq2seq::sentence_embedding(model, &ids, vocab.bos_id())?;
    Ok(e.to_vec())
}

// ---------------------------------------------------------------------
// Convergence comparison
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRecord {
    pub steps_a: Option<usize>,
    pub steps_b: Option<usize>,
    /// steps_a / steps_b; undefined when either side never crosses.
    pub ratio: Option<f64>,
}

/// Steps-to-threshold for two runs and their ratio; a run that never
/// reaches the threshold propagates as an undefined ratio.
pub fn compare_runs(log_a: &TrainLog, log_b: &TrainLog, threshold: f64) -> ComparisonRecord {
    let steps_a = pipeline::steps_to_threshold(log_a, threshold);
    let steps_b = pipeline::steps_to_threshold(log_b, threshold);
    let ratio = match (steps_a, steps_b) {
        (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
        _ => None,
    };
    ComparisonRecord { steps_a, steps_b, ratio }
}

// ---------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------

/// Collected metrics with stable serialization for golden-file tests.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub bleu: Option<f64>,
    pub bucket_f: Option<BucketF>,
    pub distance: Option<f64>,
    pub distance_subset_size: Option<usize>,
    pub steps_to_threshold_a: Option<usize>,
    pub steps_to_threshold_b: Option<usize>,
    pub ratio: Option<f64>,
    pub corpus_id: String,
    pub model_id: String,
    pub seeds: (u64, u64),
}

impl MetricReport {
    pub fn empty(corpus_id: &str, model_id: &str, seeds: (u64, u64)) -> Self {
        MetricReport {
            bleu: None,
            bucket_f: None,
            distance: None,
            distance_subset_size: None,
            steps_to_threshold_a: None,
            steps_to_threshold_b: None,
            ratio: None,
            corpus_id: corpus_id.to_string(),
            model_id: model_id.to_string(),
            seeds,
        }
    }

    /// "key = value" lines in fixed order; absent values render as
    /// "none".
    pub fn to_text(&self) -> String {
        fn num(v: Option<f64>) -> String {
            v.map_or_else(|| "none".into(), |x| x.to_string())
        }
        fn int(v: Option<usize>) -> String {
            v.map_or_else(|| "none".into(), |x| x.to_string())
        }
        let f = |pick: fn(&BucketF) -> Option<f64>| num(self.bucket_f.as_ref().and_then(pick));
        let mut out = String::new();
        writeln!(out, "bleu = {}", num(self.bleu)).unwrap();
        writeln!(out, "f_all = {}", f(|b| b.all)).unwrap();
        writeln!(out, "f_high = {}", f(|b| b.high)).unwrap();
        writeln!(out, "f_mid = {}", f(|b| b.mid)).unwrap();
        writeln!(out, "f_low = {}", f(|b| b.low)).unwrap();
        writeln!(out, "distance = {}", num(self.distance)).unwrap();
        writeln!(out, "distance_subset_size = {}", int(self.distance_subset_size)).unwrap();
        writeln!(out, "steps_to_threshold_a = {}", int(self.steps_to_threshold_a)).unwrap();
        writeln!(out, "steps_to_threshold_b = {}", int(self.steps_to_threshold_b)).unwrap();
        writeln!(out, "ratio = {}", num(self.ratio)).unwrap();
        writeln!(out, "corpus_id = {}", self.corpus_id).unwrap();
        writeln!(out, "model_id = {}", self.model_id).unwrap();
        writeln!(out, "seeds = {} {}", self.seeds.0, self.seeds.1).unwrap();
        out
    }
}

/// End-of-run evaluation: decodes a capped holdout subset for BLEU and
/// bucketed F, measures the representation distance on the same subset,
/// and records the run's own steps-to-threshold at its final smoothed
/// loss.
pub fn evaluate_model<S: Scalar>(
    model: &Seq2SeqModel<S>,
    vocab: &Vocabulary,
    holdout: &Corpus,
    stage2_log: &TrainLog,
    config: &RunConfig,
) -> Result<MetricReport> {
    let mut report = MetricReport::empty(
        &holdout.id,
        "stage2",
        (config.plan.data_seed, config.plan.model_seed),
    );
    let n = holdout.len().min(config.eval.eval_sentences);
    if n > 0 {
        let subset = &holdout.pairs[..n];
        let mut hypotheses = Vec::with_capacity(n);
        let mut references = Vec::with_capacity(n);
        for pair in subset {
            let enc = pipeline::encode_tokens(vocab, &pipeline::stage2_encoder_tokens(pair))?;
            let out_ids = seq2seq::decode(
                model,
                &enc,
                config.eval.beam,
                config.model.max_len - 1,
                config.eval.length_penalty,
                vocab.bos_id(),
                vocab.eos_id(),
            )?;
            let mut out_tokens: Vec<String> = out_ids
                .iter()
                .filter_map(|&i| vocab.word(i).map(str::to_string))
                .collect();
            // Drop the leading target-language tag if the model emitted it.
            let tag = pair.target.lang.rendered();
            if out_tokens.first() == Some(&tag) {
                out_tokens.remove(0);
            }
            hypotheses.push(Sentence { tokens: out_tokens, lang: pair.target.lang.clone() });
            references.push(pair.target.clone());
        }
        report.bleu = Some(bleu(&hypotheses, &references, config.eval.max_n)?);
        report.bucket_f = Some(bucket_fmeasure(
            &hypotheses,
            &references,
            vocab,
            (config.eval.bucket_low, config.eval.bucket_high),
        )?);
        let dist_n = n.min(config.eval.distance_subset);
        let src: Vec<Sentence> = subset[..dist_n].iter().map(|p| p.source.clone()).collect();
        let tgt: Vec<Sentence> = subset[..dist_n].iter().map(|p| p.target.clone()).collect();
        report.distance = Some(representation_distance(model, vocab, &src, &tgt)?);
        report.distance_subset_size = Some(dist_n);
    }
    if !stage2_log.records.is_empty() {
        let window = config.eval.threshold_window;
        let stage2: Vec<f64> = stage2_log.stage_records(2).iter().map(|r| r.loss).collect();
        if !stage2.is_empty() {
            let tail = &stage2[stage2.len().saturating_sub(window)..];
            let threshold = tail.iter().sum::<f64>() / tail.len() as f64;
            report.steps_to_threshold_a =
                pipeline::steps_to_threshold_window(stage2_log, threshold, window);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageTag;
    use crate::pipeline::LogRecord;
    use crate::seq2seq::Objective;
    use std::collections::HashMap as Map;

    fn en(line: &str) -> Sentence {
        Sentence::from_line(line, LanguageTag::new("EN").unwrap())
    }

    fn sentences(lines: &[&str]) -> Vec<Sentence> {
        lines.iter().map(|l| en(l)).collect()
    }

    #[test]
    fn bleu_identity_is_100() {
        let c = sentences(&["the cat sat on the mat", "a longer sentence with words"]);
        assert!((bleu(&c, &c, 4).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_clipping_hand_case() {
        // hyp "the the the" vs ref "the cat sat": unigram matches clipped
        // to 1 (ref has one "the"), precision 1/3; bigram precision 0, so
        // the unsmoothed score is 0.
        let hyp = sentences(&["the the the"]);
        let r = sentences(&["the cat sat"]);
        assert_eq!(bleu(&hyp, &r, 4).unwrap(), 0.0);
        // At max_n = 1 the clipped precision survives: 1/3 with brevity
        // penalty 1 (equal lengths) → 100/3.
        let got = bleu(&hyp, &r, 1).unwrap();
        assert!((got - 100.0 / 3.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn bleu_brevity_penalty_hand_case() {
        // hyp "a b" vs ref "a b c d": p1 = 1, p2 = 1, bp = exp(1 - 4/2).
        let hyp = sentences(&["a b"]);
        let r = sentences(&["a b c d"]);
        let expected = 100.0 * (1.0 - 2.0f64).exp();
        assert!((bleu(&hyp, &r, 2).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn bleu_is_permutation_invariant() {
        let hyp = sentences(&["a b c", "d e f g", "h i"]);
        let r = sentences(&["a b x", "d e f y", "h z"]);
        let forward = bleu(&hyp, &r, 2).unwrap();
        let hyp_rev: Vec<Sentence> = hyp.iter().rev().cloned().collect();
        let ref_rev: Vec<Sentence> = r.iter().rev().cloned().collect();
        assert_eq!(forward, bleu(&hyp_rev, &ref_rev, 2).unwrap());
    }

    #[test]
    fn bleu_rejects_mismatched_or_empty_lists() {
        let a = sentences(&["x"]);
        assert!(bleu(&a, &[], 4).is_err());
        assert!(bleu(&[], &[], 4).is_err());
    }

    fn vocab_with(counts: &[(&str, u64)]) -> Vocabulary {
        let map: Map<String, u64> =
            counts.iter().map(|&(w, c)| (w.to_string(), c)).collect();
        Vocabulary::from_counts(map, &[])
    }

    #[test]
    fn bucket_f_is_one_on_identical_inputs() {
        let vocab = vocab_with(&[("cat", 5000), ("sat", 500), ("mat", 5)]);
        let c = sentences(&["cat sat mat", "cat cat"]);
        let f = bucket_fmeasure(&c, &c, &vocab, (100, 1000)).unwrap();
        assert_eq!(f.all, Some(1.0));
        assert_eq!(f.high, Some(1.0));
        assert_eq!(f.mid, Some(1.0));
        assert_eq!(f.low, Some(1.0));
    }

    #[test]
    fn bucket_f_hand_count_low_miss() {
        // One pair; hyp misses the single low-frequency reference word →
        // low-bucket recall 0, F 0. High bucket matches fully.
        let vocab = vocab_with(&[("common", 5000), ("rare", 2)]);
        let hyp = sentences(&["common common"]);
        let r = sentences(&["common rare"]);
        let f = bucket_fmeasure(&hyp, &r, &vocab, (100, 1000)).unwrap();
        assert_eq!(f.low, Some(0.0));
        // High: matched 1 (clipped), hyp 2, ref 1 → P=1/2, R=1, F=2/3.
        let high = f.high.unwrap();
        assert!((high - 2.0 / 3.0).abs() < 1e-12);
        // All: matched 1, hyp 2, ref 2 → P=R=1/2, F=1/2.
        assert!((f.all.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(f.mid, None);
    }

    #[test]
    fn bucket_f_absent_bucket_reported_as_none() {
        let vocab = vocab_with(&[("word", 500)]);
        let c = sentences(&["word word"]);
        let f = bucket_fmeasure(&c, &c, &vocab, (100, 1000)).unwrap();
        assert_eq!(f.mid, Some(1.0));
        assert_eq!(f.high, None);
        assert_eq!(f.low, None);
    }

    fn toy_model_and_vocab() -> (Seq2SeqModel<f64>, Vocabulary, Corpus) {
        let (corpus, _) = crate::corpus::gen_cipher_pair(9, 12, 20, (2, 5)).unwrap();
        let vocab = crate::corpus::build_vocab(&corpus, crate::corpus::Side::Both).unwrap();
        let model = crate::seq2seq::init_model(&crate::seq2seq::ModelConfig {
            vocab_size: vocab.len(),
            dim: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 12,
            dropout: 0.0,
            max_len: 16,
            seed: 4,
        })
        .unwrap();
        (model, vocab, corpus)
    }

    #[test]
    fn distance_of_list_with_itself_is_zero() {
        let (model, vocab, corpus) = toy_model_and_vocab();
        let src: Vec<Sentence> = corpus.pairs.iter().take(4).map(|p| p.source.clone()).collect();
        assert_eq!(representation_distance(&model, &vocab, &src, &src).unwrap(), 0.0);
    }

    #[test]
    fn distance_is_symmetric_and_matches_hand_arithmetic() {
        let (model, vocab, corpus) = toy_model_and_vocab();
        let src: Vec<Sentence> = corpus.pairs.iter().take(2).map(|p| p.source.clone()).collect();
        let tgt: Vec<Sentence> = corpus.pairs.iter().take(2).map(|p| p.target.clone()).collect();
        let d_st = representation_distance(&model, &vocab, &src, &tgt).unwrap();
        let d_ts = representation_distance(&model, &vocab, &tgt, &src).unwrap();
        assert!((d_st - d_ts).abs() < 1e-12);
        // Hand arithmetic from individually extracted embeddings.
        let mut sum_sq = 0.0;
        for (s, t) in src.iter().zip(&tgt) {
            let es = embed_sentence(&model, &vocab, s).unwrap();
            let et = embed_sentence(&model, &vocab, t).unwrap();
            sum_sq += es.iter().zip(&et).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        assert!((d_st - sum_sq.sqrt()).abs() < 1e-6);
        assert!(d_st > 0.0);
    }

    #[test]
    fn distance_rejects_mismatched_lists() {
        let (model, vocab, corpus) = toy_model_and_vocab();
        let src: Vec<Sentence> = corpus.pairs.iter().take(2).map(|p| p.source.clone()).collect();
        let tgt: Vec<Sentence> = corpus.pairs.iter().take(1).map(|p| p.target.clone()).collect();
        assert!(representation_distance(&model, &vocab, &src, &tgt).is_err());
    }

    fn log_with_crossing(step: usize, total: usize) -> TrainLog {
        let records = (1..=total)
            .map(|s| LogRecord {
                step: s,
                stage: 2,
                objective: Objective::Generation,
                // Zeros begin 9 steps early so the window-10 smoothed
                // loss first reaches 0 exactly at `step`.
                loss: if s + 9 < step { 5.0 } else { 0.0 },
                lr: 0.1,
            })
            .collect();
        TrainLog { records, wall_clock_secs: 0.0 }
    }

    #[test]
    fn compare_runs_reports_expected_ratio() {
        // Crossing at 12000 vs 25000 steps → ratio 0.48.
        let a = log_with_crossing(12_000, 13_000);
        let b = log_with_crossing(25_000, 26_000);
        let cmp = compare_runs(&a, &b, 0.0);
        assert_eq!(cmp.steps_a, Some(12_000));
        assert_eq!(cmp.steps_b, Some(25_000));
        assert!((cmp.ratio.unwrap() - 0.48).abs() < 1e-12);
    }

    #[test]
    fn compare_runs_identical_logs_ratio_one() {
        let a = log_with_crossing(10, 20);
        let cmp = compare_runs(&a, &a, 0.0);
        assert_eq!(cmp.ratio, Some(1.0));
    }

    #[test]
    fn compare_runs_none_propagates() {
        let a = log_with_crossing(10, 20);
        let never = log_with_crossing(100, 20); // crossing beyond the log
        let cmp = compare_runs(&a, &never, 0.0);
        assert_eq!(cmp.steps_b, None);
        assert_eq!(cmp.ratio, None);
    }

    #[test]
    fn report_serialization_is_stable_and_none_aware() {
        let mut report = MetricReport::empty("toy", "stage2", (1, 2));
        report.bleu = Some(63.25);
        report.bucket_f =
            Some(BucketF { all: Some(0.632), high: Some(0.687), mid: Some(0.584), low: None });
        report.steps_to_threshold_a = Some(12);
        let text = report.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "bleu = 63.25");
        assert_eq!(lines[1], "f_all = 0.632");
        assert_eq!(lines[2], "f_high = 0.687");
        assert_eq!(lines[3], "f_mid = 0.584");
        assert_eq!(lines[4], "f_low = none");
        assert_eq!(lines[5], "distance = none");
        assert_eq!(lines[7], "steps_to_threshold_a = 12");
        assert_eq!(lines[9], "ratio = none");
        assert_eq!(lines[12], "seeds = 1 2");
    }
}
