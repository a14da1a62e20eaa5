//! Run configuration: "[section]" / "key = value" files with documented
//! defaults for every field, strict unknown-key rejection, and paths
//! resolved relative to the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_lang_src() -> String {
    "SRC".into()
}
fn default_lang_tgt() -> String {
    "TGT".into()
}

/// Corpus source: either a pair of line-aligned text files or the
/// built-in synthetic cipher generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source_path: Option<PathBuf>,
    pub target_path: Option<PathBuf>,
    pub source_lang: String,
    pub target_lang: String,
    /// Synthetic-cipher parameters, used when no paths are given.
    pub synth_vocab: usize,
    pub synth_sentences: usize,
    pub synth_min_len: usize,
    pub synth_max_len: usize,
    /// Trailing pairs held out from training for evaluation.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source_path: None,
            target_path: None,
            source_lang: default_lang_src(),
            target_lang: default_lang_tgt(),
            synth_vocab: 50,
            synth_sentences: 2000,
            synth_min_len: 3,
            synth_max_len: 12,
            holdout: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_count: u64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        let d = crate::embed::SgnsConfig::default();
        EmbedConfig {
            dim: d.dim,
            window: d.window,
            negatives: d.negatives,
            epochs: d.epochs,
            lr: d.lr,
            min_count: d.min_count,
            seed: d.seed,
            shuffle: d.shuffle,
        }
    }
}

impl EmbedConfig {
    pub fn to_sgns(&self) -> crate::embed::SgnsConfig {
        crate::embed::SgnsConfig {
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            lr: self.lr,
            min_count: self.min_count,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    /// Seed method: "identical_strings", "numerals", or "similarity_init".
    pub seed_method: String,
    pub max_iter: usize,
    /// Retrieval: "csls" or "dot".
    pub retrieval: String,
    pub csls_neighborhood: usize,
    /// Top-k neighbors kept in the extracted lexicon.
    pub k: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            seed_method: "similarity_init".into(),
            max_iter: 50,
            retrieval: "csls".into(),
            csls_neighborhood: 10,
            k: 4,
        }
    }
}

impl AlignConfig {
    pub fn seed_method(&self) -> Result<crate::align::SeedMethod> {
        match self.seed_method.as_str() {
            "identical_strings" => Ok(crate::align::SeedMethod::IdenticalStrings),
            "numerals" => Ok(crate::align::SeedMethod::Numerals),
            "similarity_init" => Ok(crate::align::SeedMethod::SimilarityInit),
            other => Err(Error::Config(format!("unknown seed_method {other:?}"))),
        }
    }

    pub fn retrieval(&self) -> Result<crate::align::Retrieval> {
        match self.retrieval.as_str() {
            "csls" => Ok(crate::align::Retrieval::Csls { neighborhood: self.csls_neighborhood }),
            "dot" => Ok(crate::align::Retrieval::Dot),
            other => Err(Error::Config(format!("unknown retrieval {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub ratio: f64,
    pub poisson_lambda: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let d = crate::noise::NoiseConfig::default();
        NoiseSection { ratio: d.ratio, poisson_lambda: d.poisson_lambda, k: d.k, seed: d.seed }
    }
}

impl NoiseSection {
    pub fn to_noise(&self) -> crate::noise::NoiseConfig {
        crate::noise::NoiseConfig {
            ratio: self.ratio,
            poisson_lambda: self.poisson_lambda,
            k: self.k,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { dim: 64, layers: 2, heads: 2, ffn_dim: 128, dropout: 0.3, max_len: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub data_seed: u64,
    pub model_seed: u64,
    pub peak_lr: f64,
    pub label_smoothing: f64,
    /// Warmup steps = warmup_fraction × steps of each stage.
    pub warmup_fraction: f64,
    /// Interleave span-mask batches into stage 1 (default restore-only).
    pub interleave_span_mask: bool,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection {
            stage1_steps: 500,
            stage2_steps: 2500,
            batch_size: 8,
            eval_every: 100,
            data_seed: 1,
            model_seed: 1,
            peak_lr: 3e-4,
            label_smoothing: 0.2,
            warmup_fraction: 0.1,
            interleave_span_mask: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub beam: usize,
    pub length_penalty: f64,
    pub max_n: usize,
    pub bucket_low: u64,
    pub bucket_high: u64,
    pub distance_subset: usize,
    /// Sentences decoded for BLEU / F-measure.
    pub eval_sentences: usize,
    pub threshold_window: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            beam: 5,
            length_penalty: 1.0,
            max_n: 4,
            bucket_low: 100,
            bucket_high: 1000,
            distance_subset: 20_000,
            eval_sentences: 32,
            threshold_window: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub embed: EmbedConfig,
    pub align: AlignConfig,
    pub noise: NoiseSection,
    pub model: ModelSection,
    pub plan: PlanSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise.ratio) {
            return Err(Error::Config(format!("noise.ratio must be in [0,1], got {}", self.noise.ratio)));
        }
        if self.noise.poisson_lambda <= 0.0 {
            return Err(Error::Config("noise.poisson_lambda must be positive".into()));
        }
        if self.plan.stage2_steps < 1 {
            return Err(Error::Config("plan.stage2_steps must be >= 1".into()));
        }
        if self.plan.batch_size < 1 {
            return Err(Error::Config("plan.batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config("model.dropout must be in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.plan.label_smoothing) {
            return Err(Error::Config("plan.label_smoothing must be in [0,1)".into()));
        }
        if self.eval.beam < 1 {
            return Err(Error::Config("eval.beam must be >= 1".into()));
        }
        if self.data.source_path.is_some() != self.data.target_path.is_some() {
            return Err(Error::Config("data.source_path and data.target_path must be given together".into()));
        }
        Ok(())
    }

    /// Overrides every seed field (data, model, embed, noise).
    pub fn override_seed(&mut self, seed: u64) {
        self.plan.data_seed = seed;
        self.plan.model_seed = seed;
        self.embed.seed = seed;
        self.noise.seed = seed;
    }

    /// Serialized effective configuration (defaults applied), suitable
    /// for the run-directory echo; parsing it back reproduces the run.
    pub fn to_text(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }
}

/// Parses a config file, applying defaults for every missing key and
/// resolving relative paths against the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = parse_config_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for p in [&mut config.data.source_path, &mut config.data.target_path] {
        if let Some(p) = p.as_mut() {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
    }
    Ok(config)
}

/// Parses config text; unknown keys and type mismatches are reported
/// with the offending key/line.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let c = parse_config_str("").unwrap();
        assert_eq!(c.noise.ratio, 0.35);
        assert_eq!(c.noise.poisson_lambda, 3.5);
        assert_eq!(c.eval.beam, 5);
        assert_eq!(c.model.dropout, 0.3);
        assert_eq!(c.plan.label_smoothing, 0.2);
        assert_eq!(c.plan.stage1_steps, 500);
        assert_eq!(c.plan.stage2_steps, 2500);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = parse_config_str("[noise]\nspam = 1\n").unwrap_err();
        assert!(err.to_string().contains("spam"), "{err}");
    }

    #[test]
    fn type_mismatch_reports_location() {
        let err = parse_config_str("[noise]\nratio = \"high\"\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn ratio_bound_is_checked() {
        let err = parse_config_str("[noise]\nratio = 1.5\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn stage1_zero_is_a_valid_baseline() {
        let c = parse_config_str("[plan]\nstage1_steps = 0\n").unwrap();
        assert_eq!(c.plan.stage1_steps, 0);
    }

    #[test]
    fn effective_config_round_trips() {
        let c = parse_config_str("[plan]\nstage1_steps = 7\n[noise]\nratio = 0.2\n").unwrap();
        let echoed = parse_config_str(&c.to_text()).unwrap();
        assert_eq!(c, echoed);
    }

    #[test]
    fn seed_override_hits_every_seed() {
        let mut c = RunConfig::default();
        c.override_seed(99);
        assert_eq!(c.plan.data_seed, 99);
        assert_eq!(c.plan.model_seed, 99);
        assert_eq!(c.embed.seed, 99);
        assert_eq!(c.noise.seed, 99);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "[data]\nsource_path = \"src.txt\"\ntarget_path = \"tgt.txt\"\n")
            .unwrap();
        let c = parse_config(&cfg).unwrap();
        assert_eq!(c.data.source_path.unwrap(), dir.path().join("src.txt"));
    }
}
