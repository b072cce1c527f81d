#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use mftgen::config::{parse_config, PipelineConfig};
use mftgen::llm::GatewayMode;
use mftgen::mock::scenario::Scenario;
use mftgen::mock::{ChatCall, MockReply, MockServer};
use tempfile::TempDir;

pub mod fixtures;

pub struct World {
    pub dir: TempDir,
    pub server: MockServer,
    pub scenario: Scenario,
}

impl World {
    pub fn start() -> Self {
        Self::with(Scenario::default())
    }

    pub fn with(scenario: Scenario) -> Self {
        Self::with_responder(scenario, move |call| scenario.reply(call))
    }

    pub fn with_responder(scenario: Scenario, f: impl Fn(&ChatCall) -> MockReply + Send + Sync + 'static) -> Self {
        let dir = tempfile::tempdir().unwrap();
        scenario.write_corpus(&dir.path().join("reviews.tsv")).unwrap();
        let server = MockServer::builder()
            .dim(64)
            .responder(f)
            .predictor(Scenario::predict)
            .start()
            .unwrap();
        Self { dir, server, scenario }
    }

    pub fn path(&self, rel: &str) -> std::path::PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PipelineConfig {
        parse_config(&self.scenario.config_toml(self.server.url(), self.dir.path())).unwrap()
    }

    /// Same run replayed into `out`, with no chat endpoint reachable.
    pub fn replay_config(&self, out: &str) -> PipelineConfig {
        let mut cfg = self.config();
        cfg.mode = GatewayMode::Replay;
        cfg.paths.output = self.path(out);
        cfg.chat.base_url = "http://127.0.0.1:1".into();
        cfg
    }
}

/// Every file under `dir` by relative path.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
