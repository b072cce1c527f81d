//! The single TOML file driving a pipeline run.
//!
//! Every field has a default, so an empty file is a valid config. Secrets are
//! never stored here; providers name the environment variable holding them.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{BalanceMode, ColumnMap, InputFormat, Split, SplitSpec};
use crate::embedding::ProviderConfig;
use crate::error::{ConfigIssue, Error, Result};
use crate::geometry::ReductionMethod;
use crate::llm::{ChatConfig, GatewayMode};
use crate::topics::{SelectionSpace, TokenizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub output: PathBuf,
    pub cache: PathBuf,
    /// Defaults to `{output}/transcript.jsonl`.
    pub transcript: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: "data/reviews.tsv".into(),
            output: "out".into(),
            cache: "cache".into(),
            transcript: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub format: InputFormat,
    pub columns: ColumnMap,
    pub balance: BalanceMode,
    pub balance_seed: u64,
    pub train_end: NaiveDate,
    pub validation_end: NaiveDate,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let spec = SplitSpec::default();
        Self {
            format: InputFormat::Tsv,
            columns: ColumnMap::default(),
            balance: BalanceMode::default(),
            balance_seed: 0,
            train_end: spec.train_end,
            validation_end: spec.validation_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub provider: ProviderConfig,
    pub normalize: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            provider: ProviderConfig::default(),
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub dims: usize,
    pub method: ReductionMethod,
    /// Coordinates file per split for `external_import`, `{split}` substituted.
    pub coords: Option<String>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            dims: 5,
            method: ReductionMethod::Pca,
            coords: None,
            max_iters: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentConfig {
    pub pool_size: usize,
    pub n: usize,
    pub lambda: f64,
    pub space: SelectionSpace,
    pub keywords_top_n: usize,
}

impl Default for RepresentConfig {
    fn default() -> Self {
        Self {
            pool_size: 500,
            n: 10,
            lambda: 0.5,
            space: SelectionSpace::Ctfidf,
            keywords_top_n: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seeds: Vec<u64>,
    pub splits: Vec<Split>,
    pub paraphrase_n: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            splits: vec![Split::Train, Split::Test],
            paraphrase_n: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcConfig {
    /// Take the proposed action for every pending triage row.
    pub auto_accept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsConfig {
    pub k: usize,
    pub seed: u64,
    pub dims: usize,
    /// Ordered `keyword,group` CSV; replaces clustering when set.
    pub rules: Option<PathBuf>,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        Self {
            k: 4,
            seed: 0,
            dims: 5,
            rules: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSource {
    pub name: String,
    /// Predictions CSV covering every case of every variant.
    pub predictions: Option<PathBuf>,
    /// Predict endpoint, used when `predictions` is absent.
    pub url: Option<String>,
    /// Optional predictions for raw corpus documents (`case_id` = document id).
    pub raw_predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub models: Vec<ModelSource>,
    pub allow_partial: bool,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            allow_partial: false,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: GatewayMode,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub embedding: EmbedConfig,
    pub chat: ChatConfig,
    pub cluster: ClusterConfig,
    pub represent: RepresentConfig,
    /// Used for c-TF-IDF terms, both for corpus clusters and case topics.
    pub tokenizer: TokenizerConfig,
    pub generate: GenerateConfig,
    pub qc: QcConfig,
    pub topics: TopicsConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.corpus.train_end, self.corpus.validation_end)
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.paths
            .transcript
            .clone()
            .unwrap_or_else(|| self.paths.output.join("transcript.jsonl"))
    }

    /// Relative paths are taken relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.output);
        fix(&mut self.paths.cache);
        if let Some(t) = self.paths.transcript.as_mut() {
            fix(t);
        }
        if let Some(r) = self.topics.rules.as_mut() {
            fix(r);
        }
        for m in &mut self.eval.models {
            for p in [m.predictions.as_mut(), m.raw_predictions.as_mut()].into_iter().flatten() {
                fix(p);
            }
        }
        if let Some(c) = self.cluster.coords.as_mut() {
            if Path::new(c).is_relative() {
                *c = base.join(&*c).to_string_lossy().into_owned();
            }
        }
    }

    /// Stable digest of a config section.
    pub fn section_hash<T: Serialize>(section: &T) -> String {
        crate::io::sha256_hex(serde_json::to_string(section).expect("config serializes").as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Every invariant violation, each with its key path.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut check = |ok: bool, path: &str, message: &str| {
            if !ok {
                out.push(ConfigIssue {
                    path: path.into(),
                    message: message.into(),
                });
            }
        };
        let r = &self.represent;
        check((0.0..=1.0).contains(&r.lambda), "represent.lambda", "lambda out of range [0, 1]");
        check(r.n >= 1, "represent.n", "must be at least 1");
        check(r.pool_size >= r.n, "represent.pool_size", "must be at least represent.n");
        check(r.keywords_top_n >= 1, "represent.keywords_top_n", "must be at least 1");
        check(self.tokenizer.min_len >= 1, "tokenizer.min_len", "must be at least 1");
        let g = &self.generate;
        check(!g.seeds.is_empty(), "generate.seeds", "must not be empty");
        let mut seeds = g.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        check(seeds.len() == g.seeds.len(), "generate.seeds", "must not repeat");
        check(!g.splits.is_empty(), "generate.splits", "must not be empty");
        let c = &self.cluster;
        check(c.k >= 1, "cluster.k", "must be at least 1");
        check(c.dims >= 1, "cluster.dims", "must be at least 1");
        check(c.max_iters >= 1, "cluster.max_iters", "must be at least 1");
        check(c.tol >= 0.0 && c.tol.is_finite(), "cluster.tol", "must be a non-negative number");
        check(
            c.method != ReductionMethod::ExternalImport || c.coords.is_some(),
            "cluster.coords",
            "required when cluster.method is external_import",
        );
        check(self.topics.k >= 1, "topics.k", "must be at least 1");
        check(self.topics.dims >= 1, "topics.dims", "must be at least 1");
        check(
            self.corpus.train_end < self.corpus.validation_end,
            "corpus.validation_end",
            "must be after corpus.train_end",
        );
        let e = &self.embedding.provider;
        check(e.batch_size >= 1, "embedding.provider.batch_size", "must be at least 1");
        check(e.concurrency >= 1, "embedding.provider.concurrency", "must be at least 1");
        check(e.retry.max_attempts >= 1, "embedding.provider.retry.max_attempts", "must be at least 1");
        let ch = &self.chat;
        check(ch.concurrency >= 1, "chat.concurrency", "must be at least 1");
        check(ch.retry.max_attempts >= 1, "chat.retry.max_attempts", "must be at least 1");
        check(ch.generation_temperature >= 0.0, "chat.generation_temperature", "must be non-negative");
        check(ch.label_temperature >= 0.0, "chat.label_temperature", "must be non-negative");
        check(ch.max_tokens >= 1, "chat.max_tokens", "must be at least 1");
        check(self.eval.batch_size >= 1, "eval.batch_size", "must be at least 1");
        for (i, m) in self.eval.models.iter().enumerate() {
            check(!m.name.trim().is_empty(), &format!("eval.models[{i}].name"), "must not be empty");
            check(
                m.predictions.is_some() || m.url.is_some(),
                &format!("eval.models[{i}]"),
                "needs `predictions` or `url`",
            );
        }
        let mut names: Vec<&str> = self.eval.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        check(
            names.windows(2).all(|w| w[0] != w[1]),
            "eval.models",
            "model names must be unique",
        );
        out
    }
}

/// Parses and checks a config text. Relative paths stay as written.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
        Error::Config(vec![ConfigIssue {
            path: e.span().map_or_else(|| "<root>".to_string(), |s| locate(text, s.start)),
            message: e.message().to_string(),
        }])
    })?;
    let issues = cfg.issues();
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(issues))
    }
}

/// `line N` for a byte offset.
fn locate(text: &str, offset: usize) -> String {
    let line = text[..offset.min(text.len())].matches('\n').count() + 1;
    format!("line {line}")
}

/// Loads, checks and resolves a config file against its directory.
pub fn validate_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.cluster.k, 5);
        assert_eq!(cfg.topics.k, 4);
        assert_eq!(cfg.represent.lambda, 0.5);
        assert_eq!(cfg.represent.n, 10);
        assert_eq!(cfg.represent.pool_size, 500);
        assert_eq!(cfg.generate.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.generate.paraphrase_n, 5);
    }

    #[test]
    fn lambda_bounds() {
        let err = parse_config("[represent]\nlambda = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("represent.lambda: lambda out of range"));
    }

    #[test]
    fn issues_are_collected() {
        let err = parse_config("[generate]\nseeds = []\n[cluster]\nk = 0\n").unwrap_err();
        let Error::Config(issues) = err else { panic!() };
        let paths: Vec<_> = issues.iter().map(|i| i.path.as_str()).collect();
        assert_eq!(paths, vec!["generate.seeds", "cluster.k"]);
    }

    #[test]
    fn unknown_key_has_location() {
        let err = parse_config("\n[represent]\nlamda = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }
}
