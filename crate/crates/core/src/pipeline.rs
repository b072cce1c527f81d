//! Stage orchestration over flat artifacts in the output directory.
//!
//! Every stage reads what earlier stages wrote and writes its own directory.
//! A manifest under `.stages/` records the hash of the stage's config slice,
//! its input files and its output files; an unchanged rerun is skipped.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::corpus::{self, Label, LabeledCorpus, Split};
use crate::embedding::{embed_matrix, normalize, EmbeddingCache, EmbeddingMatrix, RemoteEmbedder};
use crate::error::{Error, Result};
use crate::eval::{self, Accuracy, EvalReport, HttpPredictor, PlotInput, PredictionRecord};
use crate::geometry::{self, cluster_stats, kmeans, reduce, ClusterModel, KMeansParams, ReducedMatrix, ReductionMethod};
use crate::http::RetryPolicy;
use crate::io::{file_sha256, read_json, read_jsonl, sha256_hex, write_atomic, write_json, write_jsonl};
use crate::llm::{Gateway, GatewayMode};
use crate::mft_gen::{dedup, run_generation, Generator, MftCase, MftSuite, Provenance};
use crate::qc::{self, ApplyOptions, Labeler, QcVerdict};
use crate::suite::{self, MftTopicModel, SizeRow, SuiteVariantSet, TopicParams};
use crate::topics::{
    class_term_stats, ctfidf, raw_keywords, select_representatives, signatures_to_csv, topic_keywords, topic_name,
    RepresentativeSet, SelectionParams, TokenizerConfig, TopicSignature,
};

pub const STAGES: [&str; 11] = [
    "ingest",
    "embed",
    "cluster",
    "represent",
    "generate",
    "qc-label",
    "triage-apply",
    "assemble",
    "mft-topics",
    "evaluate",
    "report",
];

/// Command-line overrides on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub mode: Option<GatewayMode>,
    pub transcript: Option<PathBuf>,
    /// Rerun stages even when their manifest is current.
    pub force: bool,
    /// Take the proposed action for pending triage rows.
    pub accept_proposed: bool,
    /// Triage file to apply instead of `qc/triage.csv`.
    pub triage: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    stage: String,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// The parts of the chat config that change responses.
#[derive(Serialize)]
struct ChatKey<'a> {
    model_name: &'a str,
    generation_temperature: f64,
    label_temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct EmbedKey<'a> {
    model_name: &'a str,
    normalize: bool,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    mode: GatewayMode,
    transcript: PathBuf,
    options: RunOptions,
    out: PathBuf,
    tokenizer: TokenizerConfig,
    _lock: OutputLock,
}

fn missing(what: &str, stage: &str) -> Error {
    Error::MissingArtifact(format!("{what}; run `{stage}` first"))
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn clear_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn suite_stem(seed: u64) -> String {
    format!("mft_{seed}")
}

fn read_coords(path: &Path) -> Result<ReducedMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = geometry::parse_coords(file)?;
    let (ids, coords) = rows.into_iter().unzip();
    Ok(ReducedMatrix {
        ids,
        coords,
        method: ReductionMethod::Pca,
        seed: 0,
        explained_variance: Vec::new(),
    })
}

impl Pipeline {
    /// Takes the output lock for the lifetime of the pipeline.
    pub fn open(cfg: PipelineConfig, options: RunOptions) -> Result<Self> {
        let issues = cfg.issues();
        if !issues.is_empty() {
            return Err(Error::Config(issues));
        }
        let out = cfg.paths.output.clone();
        let lock = OutputLock::acquire(&out)?;
        Ok(Self {
            mode: options.mode.unwrap_or(cfg.mode),
            transcript: options.transcript.clone().unwrap_or_else(|| cfg.transcript_path()),
            out,
            tokenizer: cfg.tokenizer.clone(),
            cfg,
            options,
            _lock: lock,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    fn hash_files(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for p in paths {
            for f in files_under(p)? {
                out.insert(self.rel(&f), file_sha256(&f)?);
            }
        }
        Ok(out)
    }

    /// Digest recorded in suite provenance; independent of paths and endpoints.
    pub fn provenance_hash(&self) -> String {
        let c = &self.cfg;
        let mut cluster = c.cluster.clone();
        cluster.coords = None;
        PipelineConfig::section_hash(&json!({
            "corpus": c.corpus,
            "embedding": self.embed_key(),
            "chat": self.chat_key(),
            "cluster": cluster,
            "represent": c.represent,
            "generate": c.generate,
        }))
    }

    fn chat_key(&self) -> ChatKey<'_> {
        let c = &self.cfg.chat;
        ChatKey {
            model_name: &c.model_name,
            generation_temperature: c.generation_temperature,
            label_temperature: c.label_temperature,
            max_tokens: c.max_tokens,
        }
    }

    fn embed_key(&self) -> EmbedKey<'_> {
        EmbedKey {
            model_name: &self.cfg.embedding.provider.model_name,
            normalize: self.cfg.embedding.normalize,
        }
    }

    /// Runs `body` unless the manifest shows the same config, inputs and outputs.
    fn stage(
        &self,
        name: &str,
        key: serde_json::Value,
        inputs: &[PathBuf],
        body: impl FnOnce() -> Result<Vec<PathBuf>>,
    ) -> Result<StageStatus> {
        let config_hash = sha256_hex(format!("{name}\n{key}").as_bytes());
        let input_hashes = self.hash_files(inputs)?;
        let manifest_path = self.out.join(".stages").join(format!("{name}.json"));
        if !self.options.force && manifest_path.exists() {
            if let Ok(old) = read_json::<Manifest>(&manifest_path) {
                let outputs: Vec<PathBuf> = old.outputs.keys().map(|k| self.out.join(k)).collect();
                let current = outputs
                    .iter()
                    .all(|p| p.is_file())
                    .then(|| self.hash_files(&outputs))
                    .transpose()?;
                if old.config_hash == config_hash && old.inputs == input_hashes && current.as_ref() == Some(&old.outputs)
                {
                    log::info!("{name}: up to date");
                    return Ok(StageStatus::UpToDate);
                }
            }
        }
        log::info!("{name}: running");
        let written = body()?;
        let manifest = Manifest {
            stage: name.to_string(),
            config_hash,
            inputs: input_hashes,
            outputs: self.hash_files(&written)?,
        };
        write_json(&manifest_path, &manifest)?;
        Ok(StageStatus::Ran)
    }

    fn gateway(&self) -> Result<Gateway> {
        Gateway::from_config(&self.cfg.chat, self.mode, Some(&self.transcript))
    }

    /// With a replayed transcript, the responses are an input of the stage.
    fn gateway_inputs(&self) -> Vec<PathBuf> {
        if self.mode == GatewayMode::Replay {
            vec![self.transcript.clone()]
        } else {
            Vec::new()
        }
    }

    fn embedder(&self) -> Result<RemoteEmbedder> {
        let provider = self.cfg.embedding.provider.clone();
        let cache = EmbeddingCache::open(&self.cfg.paths.cache, &provider.model_name)?;
        let embedder = RemoteEmbedder::new(provider, cache)?;
        // Replay must not reach any provider, embeddings included.
        Ok(if self.mode == GatewayMode::Replay { embedder.offline() } else { embedder })
    }

    fn corpus_path(&self) -> PathBuf {
        self.dir("corpus").join("corpus.jsonl")
    }

    fn embeddings_path(&self) -> PathBuf {
        self.dir("embeddings").join("corpus.emb")
    }

    fn load_corpus(&self) -> Result<LabeledCorpus> {
        let p = self.corpus_path();
        if !p.exists() {
            return Err(missing("corpus artifacts", "ingest"));
        }
        LabeledCorpus::load(&p)
    }

    fn load_embeddings(&self) -> Result<EmbeddingMatrix> {
        let p = self.embeddings_path();
        if !p.exists() {
            return Err(missing("embedding artifacts", "embed"));
        }
        EmbeddingMatrix::load(&p)
    }

    fn load_cluster_model(&self, split: Split) -> Result<ClusterModel> {
        let p = self.dir("cluster").join(split.name()).join("model.json");
        if !p.exists() {
            return Err(missing("cluster artifacts", "cluster"));
        }
        read_json(&p)
    }

    fn splits(&self) -> &[Split] {
        &self.cfg.generate.splits
    }

    fn load_seed_suites(&self, stage: &str, split: Split) -> Result<Vec<MftSuite>> {
        let dir = self.dir(stage).join(split.name());
        self.cfg
            .generate
            .seeds
            .iter()
            .map(|&seed| {
                let stem = suite_stem(seed);
                if !dir.join(format!("{stem}.jsonl")).exists() {
                    return Err(missing(&format!("{stage} suites for {split} seed {seed}"), stage));
                }
                MftSuite::load(&dir, &stem)
            })
            .collect()
    }

    pub fn ingest(&self) -> Result<StageStatus> {
        let c = &self.cfg.corpus;
        let src = self.cfg.paths.corpus.clone();
        if !src.exists() {
            return Err(Error::MissingArtifact(format!("input corpus {}", src.display())));
        }
        self.stage("ingest", json!({ "corpus": c }), std::slice::from_ref(&src), || {
            let dir = self.dir("corpus");
            clear_dir(&dir)?;
            let raw = corpus::ingest(&src, c.format, &c.columns)?;
            let built = corpus::build_corpus(&raw, &self.cfg.split_spec()?, c.balance, c.balance_seed)?;
            built.save(&self.corpus_path())?;
            let mut per_split: BTreeMap<String, BTreeMap<Label, usize>> = BTreeMap::new();
            for d in &built.documents {
                let split = d.split.map_or("none", Split::name).to_string();
                *per_split.entry(split).or_default().entry(d.label).or_insert(0) += 1;
            }
            let summary = json!({
                "raw_rows": raw.records.len(),
                "skipped_rows": raw.skipped,
                "documents": built.len(),
                "per_split": per_split,
            });
            write_json(&dir.join("summary.json"), &summary)?;
            files_under(&dir)
        })
    }

    pub fn embed(&self) -> Result<StageStatus> {
        let key = json!({ "embedding": self.embed_key(), "splits": self.splits() });
        self.stage("embed", key, &[self.corpus_path()], || {
            let corpus = self.load_corpus()?;
            let dir = self.dir("embeddings");
            clear_dir(&dir)?;
            let docs: Vec<_> = corpus
                .documents
                .iter()
                .filter(|d| d.split.is_some_and(|s| self.splits().contains(&s)))
                .collect();
            if docs.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            let ids = docs.iter().map(|d| d.id.clone()).collect();
            let texts: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
            let embedder = self.embedder()?;
            let result = embed_matrix(&embedder, ids, &texts);
            embedder.flush_cache()?;
            let mut m = result?;
            if self.cfg.embedding.normalize {
                m = normalize(&m)?;
            }
            m.save(&self.embeddings_path())?;
            write_json(
                &dir.join("info.json"),
                &json!({
                    "model": self.cfg.embedding.provider.model_name,
                    "rows": m.len(),
                    "dim": m.dim(),
                    "normalized": self.cfg.embedding.normalize,
                }),
            )?;
            files_under(&dir)
        })
    }

    fn external_coords(&self, split: Split) -> Option<PathBuf> {
        (self.cfg.cluster.method == ReductionMethod::ExternalImport)
            .then(|| self.cfg.cluster.coords.as_ref().map(|c| PathBuf::from(c.replace("{split}", split.name()))))
            .flatten()
    }

    pub fn cluster(&self) -> Result<StageStatus> {
        let c = &self.cfg.cluster;
        let mut inputs = vec![self.corpus_path(), self.embeddings_path()];
        inputs.extend(self.splits().iter().filter_map(|&s| self.external_coords(s)));
        let mut key_cluster = c.clone();
        key_cluster.coords = None;
        let key = json!({ "cluster": key_cluster, "splits": self.splits(), "tokenizer": self.tokenizer });
        self.stage("cluster", key, &inputs, || {
            let corpus = self.load_corpus()?;
            let emb = self.load_embeddings()?;
            let root = self.dir("cluster");
            clear_dir(&root)?;
            for &split in self.splits() {
                let docs = corpus.split(split);
                if docs.is_empty() {
                    return Err(Error::Precondition(format!("split {split} has no documents")));
                }
                let ids: Vec<String> = docs.documents.iter().map(|d| d.id.clone()).collect();
                let m = emb.select(&ids)?;
                let external = self.external_coords(split);
                let reduced = reduce(&m, c.dims.min(m.dim()), c.method, c.seed, external.as_deref())?;
                let model = kmeans(
                    &reduced,
                    &KMeansParams {
                        k: c.k,
                        seed: c.seed,
                        max_iters: c.max_iters,
                        tol: c.tol,
                    },
                )?;
                let stats = cluster_stats(&model, &docs)?;
                let terms = class_term_stats(&docs, &model, &self.tokenizer)?;
                let signatures: Vec<TopicSignature> = ctfidf(&terms)
                    .into_iter()
                    .map(|mut s| {
                        s.raw_keywords = raw_keywords(&s, self.cfg.represent.keywords_top_n);
                        s.topic_name = topic_name(s.cluster, &s.raw_keywords);
                        s
                    })
                    .collect();
                let dir = root.join(split.name());
                write_atomic(&dir.join("coords.csv"), &geometry::export_coords(&reduced)?)?;
                write_json(&dir.join("model.json"), &model)?;
                write_atomic(&dir.join("stats.csv"), &stats.to_csv()?)?;
                write_atomic(&dir.join("ctfidf.csv"), &signatures_to_csv(&signatures)?)?;
            }
            files_under(&root)
        })
    }

    fn representative_path(&self, split: Split, seed: u64, cluster: usize) -> PathBuf {
        self.dir("represent")
            .join(split.name())
            .join(format!("s{seed}"))
            .join(format!("cluster_{cluster}.json"))
    }

    /// Selects representatives for every cluster, or for `only` alone.
    pub fn represent(&self, only: Option<usize>) -> Result<StageStatus> {
        let k = self.cfg.cluster.k;
        if let Some(c) = only {
            if c >= k {
                return Err(Error::Invalid(format!("cluster {c} does not exist (k = {k})")));
            }
        }
        let name = only.map_or_else(|| "represent".to_string(), |c| format!("represent-cluster-{c}"));
        let key = json!({
            "represent": self.cfg.represent,
            "seeds": self.cfg.generate.seeds,
            "embedding": self.embed_key(),
            "tokenizer": self.tokenizer,
            "only": only,
        });
        let inputs = [self.corpus_path(), self.embeddings_path(), self.dir("cluster")];
        self.stage(&name, key, &inputs, || {
            let corpus = self.load_corpus()?;
            let emb = self.load_embeddings()?;
            let root = self.dir("represent");
            if only.is_none() {
                clear_dir(&root)?;
            }
            let r = &self.cfg.represent;
            let mut written = Vec::new();
            let embedder = if only.is_none() { Some(self.embedder()?) } else { None };
            for &split in self.splits() {
                let docs = corpus.split(split);
                let model = self.load_cluster_model(split)?;
                let terms = class_term_stats(&docs, &model, &self.tokenizer)?;
                let ids: Vec<String> = docs.documents.iter().map(|d| d.id.clone()).collect();
                let split_emb = emb.select(&ids)?;
                let assignments = model.assignments();
                let clusters: Vec<usize> = only.map_or_else(|| (0..model.k).collect(), |c| vec![c]);
                let mut first_seed: BTreeMap<usize, RepresentativeSet> = BTreeMap::new();
                for &seed in &self.cfg.generate.seeds {
                    let params = SelectionParams {
                        pool_size: r.pool_size,
                        n: r.n,
                        lambda: r.lambda,
                        seed,
                        space: r.space,
                    };
                    for &c in &clusters {
                        let members: Vec<_> =
                            docs.documents.iter().filter(|d| assignments.get(d.id.as_str()) == Some(&c)).collect();
                        let set =
                            select_representatives(c, &members, &terms, &self.tokenizer, &params, Some(&split_emb))?;
                        let path = self.representative_path(split, seed, c);
                        write_json(&path, &set)?;
                        written.push(path);
                        first_seed.entry(c).or_insert(set);
                    }
                }
                if let Some(embedder) = &embedder {
                    let mut signatures = Vec::new();
                    for sig in ctfidf(&terms) {
                        let set = &first_seed[&sig.cluster];
                        let rep_ids: Vec<String> = set.doc_ids().into_iter().map(String::from).collect();
                        let rep = split_emb.select(&rep_ids)?;
                        signatures.push(topic_keywords(&sig, &rep, embedder, r.keywords_top_n)?);
                    }
                    embedder.flush_cache()?;
                    let dir = root.join(split.name());
                    write_json(&dir.join("topics.json"), &signatures)?;
                    write_atomic(&dir.join("topics.csv"), &topics_csv(&signatures)?)?;
                    written.push(dir.join("topics.json"));
                    written.push(dir.join("topics.csv"));
                }
            }
            Ok(written)
        })
    }

    fn load_representatives(&self, split: Split) -> Result<Vec<(u64, Vec<RepresentativeSet>)>> {
        let k = self.load_cluster_model(split)?.k;
        self.cfg
            .generate
            .seeds
            .iter()
            .map(|&seed| {
                let sets = (0..k)
                    .map(|c| {
                        let p = self.representative_path(split, seed, c);
                        if !p.exists() {
                            return Err(missing(
                                &format!("representatives for {split} seed {seed} cluster {c}"),
                                "represent",
                            ));
                        }
                        read_json(&p)
                    })
                    .collect::<Result<Vec<RepresentativeSet>>>()?;
                Ok((seed, sets))
            })
            .collect()
    }

    fn generator<'g>(&self, gateway: &'g Gateway) -> Generator<'g> {
        let c = &self.cfg.chat;
        Generator::new(gateway, c.model_name.clone(), c.generation_temperature, c.max_tokens)
    }

    /// Flushes the transcript whether or not `result` succeeded.
    fn finish<T>(gateway: &Gateway, result: Result<T>) -> Result<T> {
        let flushed = gateway.flush();
        let value = result?;
        flushed?;
        Ok(value)
    }

    pub fn generate(&self) -> Result<StageStatus> {
        let key = json!({
            "chat": self.chat_key(),
            "seeds": self.cfg.generate.seeds,
            "splits": self.splits(),
            "provenance": self.provenance_hash(),
        });
        let mut inputs = vec![self.corpus_path(), self.dir("represent"), self.dir("cluster")];
        inputs.extend(self.gateway_inputs());
        self.stage("generate", key, &inputs, || {
            let corpus = self.load_corpus()?;
            let reps: Vec<_> =
                self.splits().iter().map(|&s| self.load_representatives(s).map(|r| (s, r))).collect::<Result<_>>()?;
            let root = self.dir("generate");
            clear_dir(&root)?;
            let gateway = self.gateway()?;
            let generator = self.generator(&gateway);
            let hash = self.provenance_hash();
            let result = (|| {
                for (split, reps) in &reps {
                    let docs = corpus.split(*split);
                    let out = run_generation(&generator, *split, &docs, reps, &hash)?;
                    let dir = root.join(split.name());
                    for (suite, (seed, _)) in out.suites.iter().zip(reps) {
                        suite.save(&dir, &suite_stem(*seed))?;
                    }
                    let fewshots: Vec<_> =
                        out.fewshots.iter().map(|(seed, ex)| json!({ "seed": seed, "example": ex })).collect();
                    write_json(&dir.join("fewshot.json"), &fewshots)?;
                    write_atomic(&dir.join("generation_log.csv"), &out.log.to_csv()?)?;
                }
                Ok(())
            })();
            Self::finish(&gateway, result)?;
            files_under(&root)
        })
    }

    fn generated_cases(&self) -> Result<Vec<MftCase>> {
        let mut cases = Vec::new();
        for &split in self.splits() {
            for s in self.load_seed_suites("generate", split)? {
                cases.extend(s.cases);
            }
        }
        Ok(cases)
    }

    pub fn qc_label(&self) -> Result<StageStatus> {
        let key = json!({ "chat": self.chat_key() });
        let mut inputs = vec![self.dir("generate")];
        inputs.extend(self.gateway_inputs());
        self.stage("qc-label", key, &inputs, || {
            let cases = self.generated_cases()?;
            let dir = self.dir("qc");
            clear_dir(&dir)?;
            let gateway = self.gateway()?;
            let c = &self.cfg.chat;
            let labeler = Labeler::new(&gateway, c.model_name.clone(), c.label_temperature, c.max_tokens);
            let verdicts = Self::finish(&gateway, labeler.auto_label_many(&cases))?;
            write_jsonl(&dir.join("verdicts.jsonl"), &verdicts)?;
            qc::triage_export(&cases, &verdicts, &dir.join("triage.csv"))?;
            write_json(&dir.join("summary.json"), &qc::summarize(&verdicts))?;
            files_under(&dir)
        })
    }

    fn triage_path(&self) -> PathBuf {
        self.options.triage.clone().unwrap_or_else(|| self.dir("qc").join("triage.csv"))
    }

    pub fn triage_apply(&self) -> Result<StageStatus> {
        let accept = self.cfg.qc.auto_accept || self.options.accept_proposed;
        let triage = self.triage_path();
        let inputs = [self.dir("generate"), triage.clone()];
        self.stage("triage-apply", json!({ "accept_proposed": accept }), &inputs, || {
            if !triage.exists() {
                return Err(missing("triage file", "qc-label"));
            }
            let records = qc::read_triage(&triage)?;
            let suites: Vec<(Split, Vec<MftSuite>)> = self
                .splits()
                .iter()
                .map(|&s| self.load_seed_suites("generate", s).map(|v| (s, v)))
                .collect::<Result<_>>()?;
            // Triage rows span every split and seed, so apply them to one pool.
            let pool_cases: Vec<MftCase> =
                suites.iter().flat_map(|(_, v)| v.iter().flat_map(|s| s.cases.iter().cloned())).collect();
            let pool = MftSuite::new("pool", pool_cases, Provenance::default());
            let applied = qc::apply_triage(
                &pool,
                &records,
                ApplyOptions {
                    accept_proposed: accept,
                },
            )?;
            let by_id: HashMap<&str, &MftCase> = applied.cases.iter().map(|c| (c.id.as_str(), c)).collect();
            let root = self.dir("triaged");
            clear_dir(&root)?;
            let mut summary = Vec::new();
            for (split, seed_suites) in &suites {
                for (suite, &seed) in seed_suites.iter().zip(&self.cfg.generate.seeds) {
                    let cases: Vec<MftCase> =
                        suite.cases.iter().filter_map(|c| by_id.get(c.id.as_str()).map(|&c| c.clone())).collect();
                    let relabeled = cases
                        .iter()
                        .filter(|c| suite.get(&c.id).is_some_and(|o| o.inherited_label != c.inherited_label))
                        .count();
                    summary.push(json!({
                        "split": split,
                        "seed": seed,
                        "before": suite.len(),
                        "after": cases.len(),
                        "relabeled": relabeled,
                    }));
                    let out = MftSuite::new(suite.name.clone(), cases, suite.provenance.clone());
                    out.check()?;
                    out.save(&root.join(split.name()), &suite_stem(seed))?;
                }
            }
            write_json(&root.join("summary.json"), &summary)?;
            files_under(&root)
        })
    }

    fn suites_dir(&self, split: Split) -> PathBuf {
        self.dir("suites").join(split.name())
    }

    pub fn assemble(&self) -> Result<StageStatus> {
        let n = self.cfg.generate.paraphrase_n;
        let key = json!({ "chat": self.chat_key(), "paraphrase_n": n });
        let mut inputs = vec![self.dir("triaged"), self.dir("generate")];
        inputs.extend(self.gateway_inputs());
        self.stage("assemble", key, &inputs, || {
            let mut work = Vec::new();
            for &split in self.splits() {
                work.push((split, self.load_seed_suites("triaged", split)?, self.load_seed_suites("generate", split)?));
            }
            let root = self.dir("suites");
            clear_dir(&root)?;
            let gateway = self.gateway()?;
            let generator = self.generator(&gateway);
            let result = (|| {
                let mut all_sizes = Vec::new();
                for (split, seeds, pre) in &work {
                    let union: Vec<MftCase> = seeds.iter().flat_map(|s| s.cases.iter().cloned()).collect();
                    let paraphrases = if n == 0 { Vec::new() } else { generator.paraphrase_many(&dedup(&union), n)? };
                    let set = suite::assemble_variants(seeds, &paraphrases, *split, n, Some(pre))?;
                    self.save_variant_set(&set, &paraphrases)?;
                    all_sizes.extend(set.sizes);
                }
                write_atomic(&root.join("sizes.csv"), &suite::sizes_to_csv(&all_sizes)?)?;
                Ok(())
            })();
            Self::finish(&gateway, result)?;
            files_under(&root)
        })
    }

    fn save_variant_set(&self, set: &SuiteVariantSet, paraphrases: &[MftCase]) -> Result<()> {
        let dir = self.suites_dir(set.split);
        for (suite, &seed) in set.seed_suites.iter().zip(&self.cfg.generate.seeds) {
            suite.save(&dir, &suite_stem(seed))?;
        }
        set.original.save(&dir, "original")?;
        set.extended.save(&dir, "extended")?;
        write_jsonl(&dir.join("paraphrases.jsonl"), paraphrases)?;
        write_json(&dir.join("sizes.json"), &set.sizes)?;
        write_atomic(&dir.join("sizes.csv"), &suite::sizes_to_csv(&set.sizes)?)
    }

    pub fn load_variant_set(&self, split: Split) -> Result<SuiteVariantSet> {
        let dir = self.suites_dir(split);
        if !dir.join("original.jsonl").exists() || !dir.join("extended.jsonl").exists() {
            return Err(missing("suite artifacts", "assemble"));
        }
        let seed_suites = self
            .cfg
            .generate
            .seeds
            .iter()
            .map(|&s| MftSuite::load(&dir, &suite_stem(s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SuiteVariantSet {
            split,
            seed_suites,
            original: MftSuite::load(&dir, "original")?,
            extended: MftSuite::load(&dir, "extended")?,
            sizes: read_json(&dir.join("sizes.json"))?,
        })
    }

    fn topics_dir(&self, split: Split) -> PathBuf {
        self.dir("topics").join(split.name())
    }

    pub fn mft_topics(&self) -> Result<StageStatus> {
        let t = &self.cfg.topics;
        let key = json!({ "topics": t, "embedding": self.embed_key(), "tokenizer": self.tokenizer });
        let mut inputs = vec![self.dir("suites")];
        inputs.extend(t.rules.clone());
        self.stage("mft-topics", key, &inputs, || {
            let sets: Vec<SuiteVariantSet> =
                self.splits().iter().map(|&s| self.load_variant_set(s)).collect::<Result<_>>()?;
            let rules = match &t.rules {
                Some(p) => {
                    let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
                    Some(suite::parse_rules(f)?)
                }
                None => None,
            };
            let root = self.dir("topics");
            clear_dir(&root)?;
            let embedder = self.embedder()?;
            for set in &sets {
                let original = &set.original;
                let ids: Vec<String> = original.cases.iter().map(|c| c.id.clone()).collect();
                let texts: Vec<String> = original.cases.iter().map(|c| c.text.clone()).collect();
                let embedded = embed_matrix(&embedder, ids, &texts);
                embedder.flush_cache()?;
                let mut m = embedded?;
                if self.cfg.embedding.normalize {
                    m = normalize(&m)?;
                }
                let model = match &rules {
                    Some(rules) => suite::manual_grouping(original, rules)?,
                    None => suite::cluster_mft_topics(
                        original,
                        &m,
                        &TopicParams {
                            k: t.k,
                            seed: t.seed,
                            reduce_dims: t.dims,
                            method: ReductionMethod::Pca,
                        },
                        &self.tokenizer,
                    )?,
                };
                let dir = self.topics_dir(set.split);
                write_json(&dir.join("model.json"), &model)?;
                write_atomic(&dir.join("assignments.csv"), &model.to_csv()?)?;
                model.apply(original)?.save(&dir, "original_topics")?;
                m.save(&dir.join("cases.emb"))?;
                if m.len() >= 2 && m.dim() >= 2 {
                    let plane = geometry::reduce_pca(&m, 2, t.seed)?;
                    write_atomic(&dir.join("coords_2d.csv"), &geometry::export_coords(&plane)?)?;
                } else {
                    log::warn!("{}: too few cases for a 2-D projection", set.split);
                }
            }
            files_under(&root)
        })
    }

    fn load_topic_model(&self, split: Split) -> Result<Option<MftTopicModel>> {
        let p = self.topics_dir(split).join("model.json");
        if p.exists() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn evaluate(&self) -> Result<StageStatus> {
        let e = &self.cfg.eval;
        let mut inputs = vec![self.dir("suites"), self.dir("topics"), self.corpus_path()];
        for m in &e.models {
            inputs.extend(m.predictions.clone());
            inputs.extend(m.raw_predictions.clone());
        }
        let sets: Vec<SuiteVariantSet> =
            self.splits().iter().map(|&s| self.load_variant_set(s)).collect::<Result<_>>()?;
        if e.models.is_empty() {
            return Err(Error::Precondition("no models configured under [eval]".into()));
        }
        self.stage("evaluate", json!({ "eval": e }), &inputs, || {
            let mut texts: BTreeMap<&str, &str> = BTreeMap::new();
            for set in &sets {
                for s in set.variants() {
                    for c in &s.cases {
                        texts.insert(&c.id, &c.text);
                    }
                }
            }
            let topic_target = self
                .splits()
                .iter()
                .find_map(|&s| self.load_topic_model(s).transpose().map(|m| m.map(|m| (s, m))))
                .transpose()?;
            let root = self.dir("eval");
            clear_dir(&root)?;
            let mut reports = Vec::new();
            for m in &e.models {
                let records = self.model_predictions(m, &texts)?;
                write_atomic(
                    &root.join("predictions").join(format!("{}.csv", file_safe(&m.name))),
                    &eval::predictions_to_csv(&records)?,
                )?;
                let predictions = eval::prediction_map(&records);
                let covered: Vec<SuiteVariantSet> = sets.iter().map(|s| restrict(s, &predictions)).collect();
                let topic_suite = topic_target
                    .as_ref()
                    .and_then(|(split, model)| covered.iter().find(|s| s.split == *split).map(|s| (&s.original, model)));
                let raw = self.raw_accuracy(m.raw_predictions.as_deref())?;
                reports.push(eval::score(&m.name, &covered, &predictions, topic_suite, raw)?);
            }
            write_json(&root.join("reports.json"), &reports)?;
            files_under(&root)
        })
    }

    fn model_predictions(
        &self,
        model: &crate::config::ModelSource,
        texts: &BTreeMap<&str, &str>,
    ) -> Result<Vec<PredictionRecord>> {
        let allow = self.cfg.eval.allow_partial;
        if let Some(p) = &model.predictions {
            let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            return eval::check_coverage(eval::parse_predictions(f)?, texts.keys().copied(), allow);
        }
        let url = model
            .url
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("model {} has neither predictions nor url", model.name)))?;
        let predictor =
            HttpPredictor::new(url.clone(), self.cfg.eval.batch_size, Duration::from_secs(120), RetryPolicy::default())?;
        let batch: Vec<String> = texts.values().map(|t| t.to_string()).collect();
        let labels = predictor.predict(&batch)?;
        Ok(texts
            .keys()
            .zip(labels)
            .map(|(id, label)| PredictionRecord {
                case_id: id.to_string(),
                predicted_label: label,
                score: None,
            })
            .collect())
    }

    fn raw_accuracy(&self, path: Option<&Path>) -> Result<BTreeMap<Split, Accuracy>> {
        let mut out = BTreeMap::new();
        let Some(path) = path else { return Ok(out) };
        let corpus = self.load_corpus()?;
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let records = eval::check_coverage(eval::parse_predictions(f)?, corpus.documents.iter().map(|d| d.id.as_str()), true)?;
        let predictions = eval::prediction_map(&records);
        let mut counts: BTreeMap<Split, (u64, u64)> = BTreeMap::new();
        for d in &corpus.documents {
            if let (Some(split), Some(p)) = (d.split, predictions.get(&d.id)) {
                let slot = counts.entry(split).or_default();
                slot.1 += 1;
                if *p == d.label {
                    slot.0 += 1;
                }
            }
        }
        for (split, (correct, total)) in counts {
            out.insert(split, Accuracy::new(correct, total)?);
        }
        Ok(out)
    }

    pub fn report(&self) -> Result<StageStatus> {
        let inputs = [self.dir("eval"), self.dir("suites"), self.dir("topics")];
        self.stage("report", json!({}), &inputs, || {
            let p = self.dir("eval").join("reports.json");
            if !p.exists() {
                return Err(missing("evaluation reports", "evaluate"));
            }
            let reports: Vec<EvalReport> = read_json(&p)?;
            let mut sizes: Vec<SizeRow> = Vec::new();
            let mut plot_data = Vec::new();
            for &split in self.splits() {
                let set = self.load_variant_set(split)?;
                sizes.extend(set.sizes.iter().cloned());
                let coords = self.topics_dir(split).join("coords_2d.csv");
                if coords.exists() {
                    plot_data.push((
                        format!("{}_original", split.name()),
                        read_coords(&coords)?,
                        set.original,
                        self.load_topic_model(split)?,
                    ));
                }
            }
            let plots: Vec<PlotInput> = plot_data
                .iter()
                .map(|(name, coords, suite, topics)| PlotInput {
                    name,
                    coords,
                    suite,
                    topics: topics.as_ref(),
                })
                .collect();
            let root = self.dir("report");
            clear_dir(&root)?;
            let rendered = eval::render(&reports, &sizes, &plots, &root)?;
            Ok(rendered.paths)
        })
    }

    /// Every stage in order. Triage takes proposed actions for pending rows;
    /// evaluation and the report run only when models are configured.
    pub fn run_all(&mut self) -> Result<Vec<(&'static str, StageStatus)>> {
        self.options.accept_proposed = true;
        let mut done = vec![
            ("ingest", self.ingest()?),
            ("embed", self.embed()?),
            ("cluster", self.cluster()?),
            ("represent", self.represent(None)?),
            ("generate", self.generate()?),
            ("qc-label", self.qc_label()?),
            ("triage-apply", self.triage_apply()?),
            ("assemble", self.assemble()?),
            ("mft-topics", self.mft_topics()?),
        ];
        if self.cfg.eval.models.is_empty() {
            log::info!("no models configured; skipping evaluate and report");
        } else {
            done.push(("evaluate", self.evaluate()?));
            done.push(("report", self.report()?));
        }
        Ok(done)
    }
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Drops cases without a prediction (only reachable with `allow_partial`).
fn restrict(set: &SuiteVariantSet, predictions: &HashMap<String, Label>) -> SuiteVariantSet {
    let keep = |s: &MftSuite| {
        let cases = s.cases.iter().filter(|c| predictions.contains_key(&c.id)).cloned().collect();
        MftSuite::new(s.name.clone(), cases, s.provenance.clone())
    };
    SuiteVariantSet {
        split: set.split,
        seed_suites: set.seed_suites.iter().map(keep).collect(),
        original: keep(&set.original),
        extended: keep(&set.extended),
        sizes: set.sizes.clone(),
    }
}

fn topics_csv(signatures: &[TopicSignature]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cluster", "topic_name", "raw_keywords", "reranked_keywords"])?;
    for s in signatures {
        w.write_record([
            s.cluster.to_string(),
            s.topic_name.clone(),
            s.raw_keywords.join(" "),
            s.reranked_keywords.join(" "),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

/// Verdicts written by `qc-label`.
pub fn read_verdicts(out_dir: &Path) -> Result<Vec<QcVerdict>> {
    read_jsonl(&out_dir.join("qc").join("verdicts.jsonl"))
}
