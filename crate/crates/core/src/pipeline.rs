//! Two-stage orchestration: stage 1 trains on the alternating
//! code-switch restore stream; stage 2 finetunes on the supervised
//! parallel pairs with language-tag conventions. Emits line-delimited
//! training logs and a run manifest.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::align::{self, TranslationLexicon};
use crate::config::RunConfig;
use crate::corpus::{self, Corpus, Sentence, Side, Vocabulary};
use crate::embed::{self, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval;
use crate::noise::{self, NoiseConfig, RestorePair};
use crate::scalar::Scalar;
use crate::seq2seq::{
    self, Batch, ModelConfig, Objective, OptimState, Schedule, Seq2SeqModel,
};

/// Step budget and seeds for a two-stage run.
#[derive(Debug, Clone)]
pub struct StagePlan {
    /// 0 = direct-finetune baseline (stage 1 skipped).
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub data_seed: u64,
    pub model_seed: u64,
    pub peak_lr: f64,
    pub label_smoothing: f64,
    pub warmup_fraction: f64,
    pub interleave_span_mask: bool,
}

impl Default for StagePlan {
    fn default() -> Self {
        let p = crate::config::PlanSection::default();
        StagePlan {
            stage1_steps: p.stage1_steps,
            stage2_steps: p.stage2_steps,
            batch_size: p.batch_size,
            eval_every: p.eval_every,
            data_seed: p.data_seed,
            model_seed: p.model_seed,
            peak_lr: p.peak_lr,
            label_smoothing: p.label_smoothing,
            warmup_fraction: p.warmup_fraction,
            interleave_span_mask: p.interleave_span_mask,
        }
    }
}

impl StagePlan {
    pub fn from_section(p: &crate::config::PlanSection) -> Self {
        StagePlan {
            stage1_steps: p.stage1_steps,
            stage2_steps: p.stage2_steps,
            batch_size: p.batch_size,
            eval_every: p.eval_every,
            data_seed: p.data_seed,
            model_seed: p.model_seed,
            peak_lr: p.peak_lr,
            label_smoothing: p.label_smoothing,
            warmup_fraction: p.warmup_fraction,
            interleave_span_mask: p.interleave_span_mask,
        }
    }

    fn schedule(&self, total_steps: usize) -> Schedule {
        Schedule {
            warmup_steps: ((total_steps as f64 * self.warmup_fraction).round() as usize).max(1),
            peak_lr: self.peak_lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    /// 1-based step within the stage.
    pub step: usize,
    pub stage: u8,
    pub objective: Objective,
    pub loss: f64,
    pub lr: f64,
}

/// Line-delimited training log; one record per optimizer step.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    /// Wall-clock seconds; excluded from serialized artifacts.
    pub wall_clock_secs: f64,
}

impl TrainLog {
    /// "step stage objective loss lr" lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let obj = match r.objective {
                Objective::Generation => "generation",
                Objective::Restore => "restore",
            };
            writeln!(out, "{} {} {obj} {} {}", r.step, r.stage, r.loss, r.lr).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<TrainLog> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!("log line {}: expected 5 fields", i + 1)));
            }
            let objective = match fields[2] {
                "generation" => Objective::Generation,
                "restore" => Objective::Restore,
                other => return Err(Error::Parse(format!("log line {}: bad objective {other:?}", i + 1))),
            };
            records.push(LogRecord {
                step: fields[0].parse().map_err(|e| Error::Parse(format!("log line {}: {e}", i + 1)))?,
                stage: fields[1].parse().map_err(|e| Error::Parse(format!("log line {}: {e}", i + 1)))?,
                objective,
                loss: fields[3].parse().map_err(|e| Error::Parse(format!("log line {}: {e}", i + 1)))?,
                lr: fields[4].parse().map_err(|e| Error::Parse(format!("log line {}: {e}", i + 1)))?,
            });
        }
        Ok(TrainLog { records, wall_clock_secs: 0.0 })
    }

    pub fn stage_records(&self, stage: u8) -> Vec<&LogRecord> {
        self.records.iter().filter(|r| r.stage == stage).collect()
    }
}

/// Maps a token sequence to vocabulary ids; every token must be known.
pub fn encode_tokens(vocab: &Vocabulary, tokens: &[String]) -> Result<Vec<usize>> {
    tokens
        .iter()
        .map(|t| {
            vocab
                .index_of(t)
                .ok_or_else(|| Error::Index(format!("token {t:?} not in vocabulary")))
        })
        .collect()
}

fn restore_batch_to_seq2seq(vocab: &Vocabulary, pairs: &[RestorePair]) -> Result<Batch> {
    let mut enc = Vec::with_capacity(pairs.len());
    let mut tgt = Vec::with_capacity(pairs.len());
    for p in pairs {
        enc.push(encode_tokens(vocab, &p.input.tokens)?);
        // Restore pairs carry the language tag appended; the decoder is
        // trained with the tag rotated to the front so that both stages
        // share one decoder convention (tag first, then content).
        let mut target = encode_tokens(vocab, &p.target.tokens)?;
        if let Some(tag) = target.pop() {
            target.insert(0, tag);
        }
        tgt.push(target);
    }
    Batch::new(&enc, &tgt, vocab.pad_id(), vocab.bos_id(), vocab.eos_id())
}

/// Encoder input for supervised finetuning: source tokens with the
/// source tag appended.
pub fn stage2_encoder_tokens(pair: &corpus::ParallelPair) -> Vec<String> {
    let mut tokens = pair.source.tokens.clone();
    tokens.push(pair.source.lang.rendered());
    tokens
}

/// Decoder target for supervised finetuning: target tag prepended to the
/// target tokens.
pub fn stage2_target_tokens(pair: &corpus::ParallelPair) -> Vec<String> {
    let mut tokens = vec![pair.target.lang.rendered()];
    tokens.extend_from_slice(&pair.target.tokens);
    tokens
}

fn stage2_batch(vocab: &Vocabulary, pairs: &[&corpus::ParallelPair]) -> Result<Batch> {
    let mut enc = Vec::with_capacity(pairs.len());
    let mut tgt = Vec::with_capacity(pairs.len());
    for p in pairs {
        enc.push(encode_tokens(vocab, &stage2_encoder_tokens(p))?);
        tgt.push(encode_tokens(vocab, &stage2_target_tokens(p))?);
    }
    Batch::new(&enc, &tgt, vocab.pad_id(), vocab.bos_id(), vocab.eos_id())
}

/// Stage 1: restore training on the alternating code-switch stream.
/// Consumes exactly `stage1_steps` batches; a plan with 0 steps is a
/// no-op returning an empty log.
pub fn run_stage1<S: Scalar>(
    model: &mut Seq2SeqModel<S>,
    corpus: &Corpus,
    vocab: &Vocabulary,
    lexicon: &TranslationLexicon,
    plan: &StagePlan,
    noise_config: &NoiseConfig,
) -> Result<TrainLog> {
    let start = Instant::now();
    let mut log = TrainLog::default();
    if plan.stage1_steps == 0 {
        return Ok(log);
    }
    if lexicon.src_to_tgt.is_empty() || lexicon.tgt_to_src.is_empty() {
        return Err(Error::Alignment("both lexicon directions required for stage 1".into()));
    }
    let mut optim = OptimState::new(model, plan.schedule(plan.stage1_steps), plan.label_smoothing);
    let mut step = 0usize;
    let mut epoch = 0u64;
    'outer: loop {
        let batches = noise::make_restore_stream(
            corpus,
            &lexicon.src_to_tgt,
            &lexicon.tgt_to_src,
            noise_config,
            plan.batch_size,
            plan.data_seed.wrapping_add(epoch),
        );
        if batches.is_empty() {
            return Err(Error::EmptyCorpus("restore stream produced no batches".into()));
        }
        for batch in &batches {
            let mut pairs: Vec<RestorePair> = batch.pairs.clone();
            // Optional denoising interleave: every other batch per side
            // uses span masking instead of code-switching.
            if plan.interleave_span_mask && (step / 2) % 2 == 1 {
                pairs = span_mask_variant(batch, noise_config, plan.data_seed, epoch);
            }
            let lr = optim.schedule.lr(optim.step);
            let b = restore_batch_to_seq2seq(vocab, &pairs)?;
            let loss = seq2seq::train_step(model, &b, &mut optim, Objective::Restore)?;
            step += 1;
            log.records.push(LogRecord { step, stage: 1, objective: Objective::Restore, loss, lr });
            if step == plan.stage1_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(log)
}

fn span_mask_variant(
    batch: &noise::RestoreBatch,
    config: &NoiseConfig,
    data_seed: u64,
    epoch: u64,
) -> Vec<RestorePair> {
    use rand::SeedableRng;
    batch
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                config.seed ^ data_seed.rotate_left(29) ^ epoch.rotate_left(11) ^ (i as u64),
            );
            // Strip the trailing tag; span_mask re-appends it.
            let original = Sentence {
                tokens: p.target.tokens[..p.target.tokens.len() - 1].to_vec(),
                lang: p.target.lang.clone(),
            };
            let mut masked = noise::span_mask(&original, config, &mut rng);
            masked.side = p.side;
            masked
        })
        .collect()
}

/// Stage 2: supervised finetuning on (X → Y) with tagging conventions.
/// The batch order depends only on the data seed, never on stage 1.
pub fn run_stage2<S: Scalar>(
    model: &mut Seq2SeqModel<S>,
    corpus: &Corpus,
    vocab: &Vocabulary,
    plan: &StagePlan,
) -> Result<TrainLog> {
    use rand::{Rng, SeedableRng};
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("stage 2 needs a parallel corpus".into()));
    }
    let start = Instant::now();
    let mut log = TrainLog::default();
    // Fresh optimizer state: stage 2 re-warms from zero.
    let mut optim = OptimState::new(model, plan.schedule(plan.stage2_steps), plan.label_smoothing);
    let mut order_rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(plan.data_seed.wrapping_mul(0x9e3779b97f4a7c15));
    let mut queue: Vec<usize> = Vec::new();
    for step in 1..=plan.stage2_steps {
        let mut members = Vec::with_capacity(plan.batch_size);
        while members.len() < plan.batch_size.min(corpus.len()) {
            if queue.is_empty() {
                let mut idx: Vec<usize> = (0..corpus.len()).collect();
                for i in (1..idx.len()).rev() {
                    let j = order_rng.gen_range(0..=i);
                    idx.swap(i, j);
                }
                queue = idx;
            }
            members.push(queue.pop().unwrap());
        }
        let pairs: Vec<&corpus::ParallelPair> =
            members.iter().map(|&i| &corpus.pairs[i]).collect();
        let lr = optim.schedule.lr(optim.step);
        let b = stage2_batch(vocab, &pairs)?;
        let loss = seq2seq::train_step(model, &b, &mut optim, Objective::Generation)?;
        log.records.push(LogRecord { step, stage: 2, objective: Objective::Generation, loss, lr });
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Smallest stage-2 step whose trailing-window (10) smoothed loss is at
/// or below the threshold; a window longer than the available prefix
/// falls back to the mean of that prefix.
pub fn steps_to_threshold(log: &TrainLog, threshold: f64) -> Option<usize> {
    steps_to_threshold_window(log, threshold, 10)
}

pub fn steps_to_threshold_window(
    log: &TrainLog,
    threshold: f64,
    window: usize,
) -> Option<usize> {
    let losses: Vec<f64> = log.stage_records(2).iter().map(|r| r.loss).collect();
    let window = window.max(1);
    for i in 0..losses.len() {
        let lo = (i + 1).saturating_sub(window);
        let mean = losses[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
        if mean <= threshold {
            return Some(log.stage_records(2)[i].step);
        }
    }
    None
}

/// Artifact paths produced by a full run.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<(String, PathBuf)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, p) in &self.entries {
            writeln!(out, "{k} = {}", p.display()).unwrap();
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&Path> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, p)| p.as_path())
    }
}

/// Aggregates everything a run produces in memory, for callers that want
/// more than the manifest.
pub struct RunOutput<S: Scalar> {
    pub manifest: Manifest,
    pub model: Seq2SeqModel<S>,
    pub vocab: Vocabulary,
    pub stage1_log: TrainLog,
    pub stage2_log: TrainLog,
    pub train_corpus: Corpus,
    pub holdout_corpus: Corpus,
}

pub fn load_or_gen_corpus(config: &RunConfig) -> Result<(Corpus, Option<HashMap<String, String>>)> {
    match (&config.data.source_path, &config.data.target_path) {
        (Some(src), Some(tgt)) => {
            let c = corpus::load_parallel(
                src,
                tgt,
                corpus::LanguageTag::new(&config.data.source_lang)?,
                corpus::LanguageTag::new(&config.data.target_lang)?,
            )?;
            Ok((c, None))
        }
        _ => {
            let (c, gold) = corpus::gen_cipher_pair(
                config.plan.data_seed,
                config.data.synth_vocab,
                config.data.synth_sentences,
                (config.data.synth_min_len, config.data.synth_max_len),
            )?;
            Ok((c, Some(gold)))
        }
    }
}

fn split_holdout(c: &Corpus, holdout: usize) -> Result<(Corpus, Corpus)> {
    let holdout = holdout.min(c.len().saturating_sub(1));
    let cut = c.len() - holdout;
    let train = Corpus::new(&format!("{}-train", c.id), c.pairs[..cut].to_vec())?;
    let eval = if holdout > 0 {
        Corpus::new(&format!("{}-holdout", c.id), c.pairs[cut..].to_vec())?
    } else {
        train.clone()
    };
    Ok((train, eval))
}

/// Trains monolingual embeddings on both sides and aligns them into a
/// top-k translation lexicon.
pub fn induce_lexicon<S: Scalar>(
    corpus: &Corpus,
    config: &RunConfig,
) -> Result<(EmbeddingMatrix<S>, EmbeddingMatrix<S>, TranslationLexicon)> {
    let sgns = config.embed.to_sgns();
    let mut sgns_tgt = sgns.clone();
    sgns_tgt.seed = sgns.seed.wrapping_add(1);
    let e_x: EmbeddingMatrix<S> = embed::train_sgns(&corpus.source_sentences(), &sgns)?;
    let e_y: EmbeddingMatrix<S> = embed::train_sgns(&corpus.target_sentences(), &sgns_tgt)?;
    let e_x = embed::normalize(&e_x, &[embed::NormStep::Unit])?;
    let e_y = embed::normalize(&e_y, &[embed::NormStep::Unit])?;
    let seed = align::seed_lexicon(&e_x, &e_y, config.align.seed_method()?)?;
    let retrieval = config.align.retrieval()?;
    let result = align::self_learn(&e_x, &e_y, &seed, config.align.max_iter, retrieval)?;
    let mapped = EmbeddingMatrix::new(e_x.words().to_vec(), e_x.vectors.dot(&result.w))?;
    let mapped = embed::normalize(&mapped, &[embed::NormStep::Unit])?;
    let lexicon = align::extract_lexicon(&mapped, &e_y, config.align.k, retrieval)?;
    Ok((mapped, e_y, lexicon))
}

/// Executes embed → align → stage1 → stage2 → eval, writing every
/// artifact under `out_dir` and recording it in the manifest. A partial
/// manifest file is left behind if a stage fails.
pub fn run_two_stage<S: Scalar>(config: &RunConfig, out_dir: &Path) -> Result<RunOutput<S>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest { entries: Vec::new() };
    let result = run_two_stage_inner(config, out_dir, &mut manifest);
    // Write the manifest even on failure so partial artifacts are listed.
    let manifest_path = out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest.to_text())?;
    match result {
        Ok(mut output) => {
            output.manifest.entries.push(("manifest".into(), manifest_path.clone()));
            std::fs::write(&manifest_path, output.manifest.to_text())?;
            Ok(output)
        }
        Err(e) => Err(e),
    }
}

fn run_two_stage_inner<S: Scalar>(
    config: &RunConfig,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> Result<RunOutput<S>> {
    let record = |key: &str, path: PathBuf, manifest: &mut Manifest| {
        manifest.entries.push((key.to_string(), path));
    };

    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, config.to_text())?;
    record("config", config_path, manifest);

    let (full_corpus, _gold) = load_or_gen_corpus(config)?;
    let (train_corpus, holdout_corpus) = split_holdout(&full_corpus, config.data.holdout)?;
    let vocab = corpus::build_vocab(&full_corpus, Side::Both)?;
    let vocab_path = out_dir.join("vocab.tsv");
    std::fs::write(&vocab_path, vocab.to_tsv())?;
    record("vocab", vocab_path, manifest);

    let (e_x, e_y, lexicon) = induce_lexicon::<S>(&train_corpus, config)?;
    let src_emb_path = out_dir.join("embeddings.src.txt");
    let tgt_emb_path = out_dir.join("embeddings.tgt.txt");
    embed::save_embeddings(&e_x, &src_emb_path)?;
    embed::save_embeddings(&e_y, &tgt_emb_path)?;
    record("embeddings_src", src_emb_path, manifest);
    record("embeddings_tgt", tgt_emb_path, manifest);

    let src_code = train_corpus.source_lang().map(|l| l.code().to_string()).unwrap_or_default();
    let tgt_code = train_corpus.target_lang().map(|l| l.code().to_string()).unwrap_or_default();
    let lex_st_path = out_dir.join("lexicon.src2tgt.tsv");
    let lex_ts_path = out_dir.join("lexicon.tgt2src.tsv");
    align::save_lexicon(&lexicon.src_to_tgt, &format!("{src_code}->{tgt_code}"), &lex_st_path)?;
    align::save_lexicon(&lexicon.tgt_to_src, &format!("{tgt_code}->{src_code}"), &lex_ts_path)?;
    record("lexicon_src2tgt", lex_st_path, manifest);
    record("lexicon_tgt2src", lex_ts_path, manifest);

    let model_config = ModelConfig {
        vocab_size: vocab.len(),
        dim: config.model.dim,
        layers: config.model.layers,
        heads: config.model.heads,
        ffn_dim: config.model.ffn_dim,
        dropout: config.model.dropout,
        max_len: config.model.max_len,
        seed: config.plan.model_seed,
    };
    let mut model: Seq2SeqModel<S> = seq2seq::init_model(&model_config)?;
    let plan = StagePlan::from_section(&config.plan);
    let noise_config = config.noise.to_noise();

    let stage1_log = run_stage1(&mut model, &train_corpus, &vocab, &lexicon, &plan, &noise_config)?;
    let s1_ckpt = out_dir.join("stage1.ckpt");
    let s1_log_path = out_dir.join("stage1.log");
    seq2seq::save_checkpoint(&model, &s1_ckpt)?;
    std::fs::write(&s1_log_path, stage1_log.to_text())?;
    record("checkpoint_stage1", s1_ckpt, manifest);
    record("log_stage1", s1_log_path, manifest);

    let stage2_log = run_stage2(&mut model, &train_corpus, &vocab, &plan)?;
    let s2_ckpt = out_dir.join("stage2.ckpt");
    let s2_log_path = out_dir.join("stage2.log");
    seq2seq::save_checkpoint(&model, &s2_ckpt)?;
    std::fs::write(&s2_log_path, stage2_log.to_text())?;
    record("checkpoint_stage2", s2_ckpt, manifest);
    record("log_stage2", s2_log_path, manifest);

    let report = eval::evaluate_model(&model, &vocab, &holdout_corpus, &stage2_log, config)?;
    let report_path = out_dir.join("report.txt");
    std::fs::write(&report_path, report.to_text())?;
    record("report", report_path, manifest);

    Ok(RunOutput {
        manifest: Manifest { entries: manifest.entries.clone() },
        model,
        vocab,
        stage1_log,
        stage2_log,
        train_corpus,
        holdout_corpus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_cipher_pair, LanguageTag, ParallelPair};
    use crate::noise::RestoreSide;
    use std::collections::HashMap as Map;

    fn small_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.data.synth_vocab = 12;
        c.data.synth_sentences = 40;
        c.data.holdout = 4;
        c.embed.dim = 8;
        c.embed.epochs = 2;
        c.model.dim = 8;
        c.model.layers = 1;
        c.model.ffn_dim = 12;
        c.model.dropout = 0.0;
        c.model.max_len = 20;
        c.plan.stage1_steps = 4;
        c.plan.stage2_steps = 6;
        c.plan.batch_size = 4;
        c.eval.eval_sentences = 2;
        c.eval.beam = 1;
        c
    }

    fn toy_lexicon(corpus: &Corpus) -> TranslationLexicon {
        // Word-identity cipher lexicon built from co-occurring positions.
        let mut fwd: Map<String, Vec<(String, f64)>> = Map::new();
        let mut rev: Map<String, Vec<(String, f64)>> = Map::new();
        for p in &corpus.pairs {
            for (s, t) in p.source.tokens.iter().zip(&p.target.tokens) {
                fwd.entry(s.clone()).or_insert_with(|| vec![(t.clone(), 1.0)]);
                rev.entry(t.clone()).or_insert_with(|| vec![(s.clone(), 1.0)]);
            }
        }
        let mut fwd_order: Vec<String> = fwd.keys().cloned().collect();
        fwd_order.sort();
        let mut rev_order: Vec<String> = rev.keys().cloned().collect();
        rev_order.sort();
        TranslationLexicon {
            src_to_tgt: crate::align::DirectionalLexicon { entries: fwd, order: fwd_order },
            tgt_to_src: crate::align::DirectionalLexicon { entries: rev, order: rev_order },
            k: 1,
        }
    }

    fn toy_setup() -> (Corpus, Vocabulary, TranslationLexicon, Seq2SeqModel<f64>) {
        let (corpus, _) = gen_cipher_pair(5, 12, 30, (2, 6)).unwrap();
        let vocab = corpus::build_vocab(&corpus, Side::Both).unwrap();
        let lexicon = toy_lexicon(&corpus);
        let model = seq2seq::init_model(&ModelConfig {
            vocab_size: vocab.len(),
            dim: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 12,
            dropout: 0.0,
            max_len: 16,
            seed: 2,
        })
        .unwrap();
        (corpus, vocab, lexicon, model)
    }

    fn toy_plan() -> StagePlan {
        StagePlan {
            stage1_steps: 10,
            stage2_steps: 8,
            batch_size: 4,
            peak_lr: 1e-3,
            label_smoothing: 0.1,
            ..StagePlan::default()
        }
    }

    #[test]
    fn stage1_zero_steps_is_a_no_op() {
        let (corpus, vocab, lexicon, mut model) = toy_setup();
        let before = model.params.clone();
        let plan = StagePlan { stage1_steps: 0, ..toy_plan() };
        let log = run_stage1(&mut model, &corpus, &vocab, &lexicon, &plan, &NoiseConfig::default())
            .unwrap();
        assert!(log.records.is_empty());
        for (k, v) in &model.params {
            assert_eq!(v, &before[k]);
        }
    }

    #[test]
    fn stage1_logs_alternating_sides_and_gapless_steps() {
        let (corpus, vocab, lexicon, mut model) = toy_setup();
        let plan = toy_plan();
        let log = run_stage1(&mut model, &corpus, &vocab, &lexicon, &plan, &NoiseConfig::default())
            .unwrap();
        assert_eq!(log.records.len(), 10);
        for (i, r) in log.records.iter().enumerate() {
            assert_eq!(r.step, i + 1);
            assert_eq!(r.stage, 1);
            assert_eq!(r.objective, Objective::Restore);
        }
        // The restore stream alternates source/target batches, so with 10
        // steps exactly 5 of each side were consumed. Re-derive the stream
        // and check the sides directly.
        let batches = noise::make_restore_stream(
            &corpus,
            &lexicon.src_to_tgt,
            &lexicon.tgt_to_src,
            &NoiseConfig::default(),
            plan.batch_size,
            plan.data_seed,
        );
        let sides: Vec<RestoreSide> = batches.iter().take(10).map(|b| b.side).collect();
        let n_src = sides.iter().filter(|&&s| s == RestoreSide::Source).count();
        assert_eq!(n_src, 5);
        for pair in sides.chunks(2) {
            assert_eq!(pair[0], RestoreSide::Source);
            if pair.len() == 2 {
                assert_eq!(pair[1], RestoreSide::Target);
            }
        }
    }

    #[test]
    fn default_plan_keeps_one_to_six_stage_ratio() {
        let plan = StagePlan::default();
        let total = plan.stage1_steps + plan.stage2_steps;
        assert_eq!(plan.stage1_steps * 6, total);
    }

    #[test]
    fn stage2_tagging_convention() {
        let src = Sentence::from_line("布什 与 沙龙 举行 了 会谈", LanguageTag::new("ZH").unwrap());
        let tgt = Sentence::from_line("bush held a talk with sharon", LanguageTag::new("EN").unwrap());
        let pair = ParallelPair { source: src, target: tgt };
        let enc = stage2_encoder_tokens(&pair);
        assert_eq!(enc.last().unwrap(), "[ZH]");
        let dec = stage2_target_tokens(&pair);
        assert_eq!(dec.first().unwrap(), "[EN]");
        assert_eq!(dec[1], "bush");
    }

    #[test]
    fn stage2_is_bit_exactly_reproducible() {
        let run = || {
            let (corpus, vocab, _lexicon, mut model) = toy_setup();
            run_stage2(&mut model, &corpus, &vocab, &toy_plan()).unwrap().to_text()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stage2_order_is_independent_of_stage1() {
        // Identical data seeds must consume identical stage-2 batch
        // sequences whether or not stage 1 ran: the loss traces differ
        // (different parameters) but the step count and determinism of
        // each arm must hold. We verify via the sampling queue directly:
        // run stage 2 twice from differently-trained models and check the
        // selected batch members agree by instrumenting through identical
        // log lengths and the shared order-rng construction.
        let (corpus, vocab, lexicon, mut with_stage1) = toy_setup();
        let (_, _, _, mut direct) = toy_setup();
        let plan = toy_plan();
        run_stage1(&mut with_stage1, &corpus, &vocab, &lexicon, &plan, &NoiseConfig::default())
            .unwrap();
        let log_a = run_stage2(&mut with_stage1, &corpus, &vocab, &plan).unwrap();
        let log_b = run_stage2(&mut direct, &corpus, &vocab, &plan).unwrap();
        assert_eq!(log_a.records.len(), log_b.records.len());
        // lr traces are schedule-only and must agree exactly.
        for (a, b) in log_a.records.iter().zip(&log_b.records) {
            assert_eq!(a.lr, b.lr);
            assert_eq!(a.step, b.step);
        }
    }

    #[test]
    fn steps_to_threshold_finds_first_smoothed_crossing() {
        // Construct a log whose window-10 smoothed loss crosses 1.0 at
        // step 37: loss 2.0 for steps 1..=27, 0.9 afterwards. At step i,
        // window mean = (2*k + 0.9*(10-k))/10 with k remaining 2.0-entries.
        let mut records = Vec::new();
        for step in 1..=60 {
            let loss = if step <= 27 { 2.0 } else { 0.9 };
            records.push(LogRecord { step, stage: 2, objective: Objective::Generation, loss, lr: 0.1 });
        }
        let log = TrainLog { records, wall_clock_secs: 0.0 };
        // Window at step s covers s-9..=s; mean ≤ 1.0 once ≤ 1 old entry
        // remains: steps 28..37 hold k = 27-(s-10) old entries.
        let expected = (28..=60)
            .find(|&s| {
                let lo = s - 9;
                let k = if lo <= 27 { 27 - lo + 1 } else { 0 };
                (2.0 * k as f64 + 0.9 * (10 - k) as f64) / 10.0 <= 1.0
            })
            .unwrap();
        assert_eq!(expected, 37);
        assert_eq!(steps_to_threshold(&log, 1.0), Some(37));
    }

    #[test]
    fn steps_to_threshold_none_and_short_window() {
        let records: Vec<LogRecord> = (1..=5)
            .map(|step| LogRecord {
                step,
                stage: 2,
                objective: Objective::Generation,
                loss: 3.0 - step as f64 * 0.5,
                lr: 0.1,
            })
            .collect();
        let log = TrainLog { records, wall_clock_secs: 0.0 };
        assert_eq!(steps_to_threshold(&log, 0.1), None);
        // Window 10 > log length 5: prefix means are used. At step 3 the
        // mean of (2.5, 2.0, 1.5) = 2.0.
        assert_eq!(steps_to_threshold(&log, 2.0), Some(3));
    }

    #[test]
    fn log_text_round_trips() {
        let records = vec![
            LogRecord { step: 1, stage: 1, objective: Objective::Restore, loss: 2.25, lr: 0.0 },
            LogRecord { step: 2, stage: 1, objective: Objective::Restore, loss: 1.5, lr: 1e-4 },
            LogRecord { step: 1, stage: 2, objective: Objective::Generation, loss: 3.125, lr: 2e-4 },
        ];
        let log = TrainLog { records: records.clone(), wall_clock_secs: 1.0 };
        let parsed = TrainLog::from_text(&log.to_text()).unwrap();
        assert_eq!(parsed.records, records);
        let first = log.to_text().lines().next().unwrap().to_string();
        assert_eq!(first, "1 1 restore 2.25 0");
    }

    #[test]
    fn run_two_stage_writes_manifest_and_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = small_config();
        let out_a = run_two_stage::<f64>(&config, dir_a.path()).unwrap();
        let _out_b = run_two_stage::<f64>(&config, dir_b.path()).unwrap();
        for key in [
            "config",
            "vocab",
            "lexicon_src2tgt",
            "lexicon_tgt2src",
            "checkpoint_stage1",
            "checkpoint_stage2",
            "log_stage1",
            "log_stage2",
            "report",
        ] {
            let pa = out_a.manifest.get(key).unwrap_or_else(|| panic!("missing {key}"));
            let pb = dir_b.path().join(pa.file_name().unwrap());
            assert_eq!(
                std::fs::read(pa).unwrap(),
                std::fs::read(&pb).unwrap(),
                "artifact {key} differs between reruns"
            );
        }
        assert_eq!(out_a.manifest.entries.last().unwrap().0, "manifest");
    }

    #[test]
    fn run_two_stage_stage1_zero_is_direct_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config();
        config.plan.stage1_steps = 0;
        let out = run_two_stage::<f64>(&config, dir.path()).unwrap();
        assert!(out.stage1_log.records.is_empty());
        assert_eq!(out.stage2_log.records.len(), config.plan.stage2_steps);
    }

    #[test]
    fn interleaved_span_mask_batches_contain_mask_tokens() {
        let (corpus, vocab, lexicon, mut model) = toy_setup();
        let plan = StagePlan { interleave_span_mask: true, ..toy_plan() };
        // Smoke: runs without unknown-token errors (mask is in the vocab)
        // and still logs the full schedule.
        let log = run_stage1(&mut model, &corpus, &vocab, &lexicon, &plan, &NoiseConfig::default())
            .unwrap();
        assert_eq!(log.records.len(), plan.stage1_steps);
    }
}
