//! Command-line surface: one binary with subcommands sharing config
//! parsing, a run directory, and fixed default seeds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use csrlab::config::{parse_config, RunConfig};
use csrlab::error::{Error, Result};
use csrlab::{align, corpus, embed, eval, noise, pipeline, seq2seq, Real};

#[derive(Parser)]
#[command(name = "csrlab", version, about = "Two-stage code-switching-restore laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file ("[section]" headers, "key = value" lines); defaults
    /// apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory for all artifacts (fallback: $CSRLAB_OUT, then
    /// ./csrlab-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides every seed in the config (data, model, embed, noise).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cipher corpus into the run directory.
    GenSynth,
    /// Train embeddings on both sides and induce the translation lexicon.
    InduceLexicon,
    /// Emit a TSV of corrupted/original restore pairs.
    Corrupt {
        /// Number of pairs to dump.
        #[arg(long, default_value_t = 32)]
        count: usize,
    },
    /// Run the full two-stage pipeline (embed, align, stage 1, stage 2, eval).
    Train,
    /// Evaluate the stage-2 checkpoint on the holdout split.
    Evaluate,
    /// Representation distance between the two sides under the stage-2 model.
    Distance,
    /// Compare two training logs at a loss threshold.
    Compare {
        #[arg(long)]
        log_a: PathBuf,
        #[arg(long)]
        log_b: PathBuf,
        #[arg(long)]
        threshold: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error category={} message={:?}", e.category(), e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("CSRLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("csrlab-out"))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    config.validate()?;
    Ok(config)
}

fn say(cli: &Cli, msg: &str) {
    if !cli.quiet {
        println!("{msg}");
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let out = out_dir(cli);
    std::fs::create_dir_all(&out)?;
    match &cli.command {
        Command::GenSynth => gen_synth(cli, &config, &out),
        Command::InduceLexicon => induce_lexicon(cli, &config, &out),
        Command::Corrupt { count } => corrupt(cli, &config, &out, *count),
        Command::Train => train(cli, &config, &out),
        Command::Evaluate => evaluate(cli, &config, &out),
        Command::Distance => distance(cli, &config, &out),
        Command::Compare { log_a, log_b, threshold } => compare(cli, log_a, log_b, *threshold, &out),
    }
}

fn gen_synth(cli: &Cli, config: &RunConfig, out: &Path) -> Result<()> {
    let (c, gold) = pipeline::load_or_gen_corpus(config)?;
    let src = out.join("source.txt");
    let tgt = out.join("target.txt");
    corpus::save_parallel(&c, &src, &tgt)?;
    if let Some(gold) = gold {
        let mut entries: Vec<(&String, &String)> = gold.iter().collect();
        entries.sort();
        let text: String =
            entries.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect();
        std::fs::write(out.join("gold.tsv"), text)?;
    }
    std::fs::write(out.join("config.toml"), config.to_text())?;
    say(cli, &format!("wrote {} sentence pairs to {}", c.len(), out.display()));
    Ok(())
}

fn induce_lexicon(cli: &Cli, config: &RunConfig, out: &Path) -> Result<()> {
    let (c, _) = pipeline::load_or_gen_corpus(config)?;
    let (e_x, e_y, lexicon) = pipeline::induce_lexicon::<Real>(&c, config)?;
    embed::save_embeddings(&e_x, &out.join("embeddings.src.txt"))?;
    embed::save_embeddings(&e_y, &out.join("embeddings.tgt.txt"))?;
    let src_code = c.source_lang().map(|l| l.code().to_string()).unwrap_or_default();
    let tgt_code = c.target_lang().map(|l| l.code().to_string()).unwrap_or_default();
    align::save_lexicon(
        &lexicon.src_to_tgt,
        &format!("{src_code}->{tgt_code}"),
        &out.join("lexicon.src2tgt.tsv"),
    )?;
    align::save_lexicon(
        &lexicon.tgt_to_src,
        &format!("{tgt_code}->{src_code}"),
        &out.join("lexicon.tgt2src.tsv"),
    )?;
    say(cli, &format!("induced top-{} lexicon into {}", lexicon.k, out.display()));
    Ok(())
}

fn load_lexicon_pair(out: &Path) -> Result<align::TranslationLexicon> {
    let (src_to_tgt, _) = align::load_lexicon(&out.join("lexicon.src2tgt.tsv"))?;
    let (tgt_to_src, _) = align::load_lexicon(&out.join("lexicon.tgt2src.tsv"))?;
    let k = src_to_tgt.entries.values().map(Vec::len).max().unwrap_or(1);
    Ok(align::TranslationLexicon { src_to_tgt, tgt_to_src, k })
}

fn corrupt(cli: &Cli, config: &RunConfig, out: &Path, count: usize) -> Result<()> {
    let (c, _) = pipeline::load_or_gen_corpus(config)?;
    let lexicon = load_lexicon_pair(out)?;
    let batches = noise::make_restore_stream(
        &c,
        &lexicon.src_to_tgt,
        &lexicon.tgt_to_src,
        &config.noise.to_noise(),
        config.plan.batch_size,
        config.plan.data_seed,
    );
    let pairs: Vec<&noise::RestorePair> =
        batches.iter().flat_map(|b| b.pairs.iter()).take(count).collect();
    let path = out.join("corrupt.tsv");
    std::fs::write(&path, noise::dump_restore_tsv(&pairs))?;
    say(cli, &format!("wrote {} restore pairs to {}", pairs.len(), path.display()));
    Ok(())
}

fn train(cli: &Cli, config: &RunConfig, out: &Path) -> Result<()> {
    let output = pipeline::run_two_stage::<Real>(config, out)?;
    say(cli, &format!("run complete; manifest at {}", out.join("manifest.txt").display()));
    if !cli.quiet {
        for (key, path) in &output.manifest.entries {
            println!("  {key} = {}", path.display());
        }
    }
    Ok(())
}

fn load_eval_inputs(
    config: &RunConfig,
    out: &Path,
) -> Result<(csrlab::Seq2SeqModel, corpus::Vocabulary, corpus::Corpus)> {
    let model: csrlab::Seq2SeqModel = seq2seq::load_checkpoint(&out.join("stage2.ckpt"))?;
    let (full, _) = pipeline::load_or_gen_corpus(config)?;
    let vocab = corpus::build_vocab(&full, corpus::Side::Both)?;
    let holdout = config.data.holdout.min(full.len().saturating_sub(1));
    let cut = full.len() - holdout;
    let eval_pairs = if holdout > 0 { full.pairs[cut..].to_vec() } else { full.pairs.clone() };
    let holdout_corpus = corpus::Corpus::new(&format!("{}-holdout", full.id), eval_pairs)?;
    Ok((model, vocab, holdout_corpus))
}

fn evaluate(cli: &Cli, config: &RunConfig, out: &Path) -> Result<()> {
    let (model, vocab, holdout) = load_eval_inputs(config, out)?;
    let log_path = out.join("stage2.log");
    let log = if log_path.exists() {
        pipeline::TrainLog::from_text(&std::fs::read_to_string(&log_path)?)?
    } else {
        pipeline::TrainLog::default()
    };
    let report = eval::evaluate_model(&model, &vocab, &holdout, &log, config)?;
    let path = out.join("report.txt");
    std::fs::write(&path, report.to_text())?;
    say(cli, &report.to_text());
    Ok(())
}

fn distance(cli: &Cli, config: &RunConfig, out: &Path) -> Result<()> {
    let (model, vocab, holdout) = load_eval_inputs(config, out)?;
    let n = holdout.len().min(config.eval.distance_subset);
    let src: Vec<corpus::Sentence> =
        holdout.pairs[..n].iter().map(|p| p.source.clone()).collect();
    let tgt: Vec<corpus::Sentence> =
        holdout.pairs[..n].iter().map(|p| p.target.clone()).collect();
    let d = eval::representation_distance(&model, &vocab, &src, &tgt)?;
    let text = format!("distance = {d}\ndistance_subset_size = {n}\n");
    std::fs::write(out.join("distance.txt"), &text)?;
    say(cli, text.trim_end());
    Ok(())
}

fn compare(cli: &Cli, log_a: &Path, log_b: &Path, threshold: f64, out: &Path) -> Result<()> {
    let a = pipeline::TrainLog::from_text(&std::fs::read_to_string(log_a)?)?;
    let b = pipeline::TrainLog::from_text(&std::fs::read_to_string(log_b)?)?;
    if a.stage_records(2).is_empty() || b.stage_records(2).is_empty() {
        return Err(Error::Parse("both logs must contain stage-2 records".into()));
    }
    let cmp = eval::compare_runs(&a, &b, threshold);
    fn int(v: Option<usize>) -> String {
        v.map_or_else(|| "none".into(), |x| x.to_string())
    }
    let ratio = cmp.ratio.map_or_else(|| "none".into(), |r| r.to_string());
    let text = format!(
        "steps_to_threshold_a = {}\nsteps_to_threshold_b = {}\nratio = {ratio}\n",
        int(cmp.steps_a),
        int(cmp.steps_b),
    );
    std::fs::write(out.join("compare.txt"), &text)?;
    say(cli, text.trim_end());
    Ok(())
}
