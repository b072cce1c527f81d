//! Stage mechanics against the scripted server: reruns, isolation, replay errors.

mod common;

use std::collections::BTreeMap;
use std::time::SystemTime;

use common::World;
use mftgen::corpus::Split;
use mftgen::llm::{GatewayMode, Transcript};
use mftgen::mft_gen::{MftSuite, QcLabel};
use mftgen::mock::scenario::Scenario;
use mftgen::mock::MockReply;
use mftgen::pipeline::{Pipeline, RunOptions, StageStatus};
use mftgen::Error;

fn record(w: &World) -> Vec<(&'static str, StageStatus)> {
    Pipeline::open(w.config(), RunOptions::default()).unwrap().run_all().unwrap()
}

fn mtimes(dir: &std::path::Path) -> BTreeMap<String, SystemTime> {
    common::tree(dir)
        .keys()
        .map(|k| (k.clone(), std::fs::metadata(dir.join(k)).unwrap().modified().unwrap()))
        .collect()
}

#[test]
fn unchanged_rerun_is_a_noop_and_edits_rerun_downstream() {
    let w = World::start();
    assert!(record(&w).iter().all(|(_, s)| *s == StageStatus::Ran));
    let before = mtimes(&w.path("out"));
    let files = common::tree(&w.path("out"));

    let again = Pipeline::open(w.config(), RunOptions::default()).unwrap().run_all().unwrap();
    assert!(again.iter().all(|(_, s)| *s == StageStatus::UpToDate), "{again:?}");
    assert_eq!(mtimes(&w.path("out")), before);
    assert_eq!(common::tree(&w.path("out")), files);

    let mut cfg = w.config();
    cfg.topics.k = 3;
    let third = Pipeline::open(cfg, RunOptions::default()).unwrap().run_all().unwrap();
    let ran: Vec<&str> = third.iter().filter(|(_, s)| *s == StageStatus::Ran).map(|(n, _)| *n).collect();
    assert_eq!(ran, ["mft-topics", "evaluate", "report"]);

    let forced = Pipeline::open(
        w.config(),
        RunOptions {
            force: true,
            ..Default::default()
        },
    )
    .unwrap()
    .ingest()
    .unwrap();
    assert_eq!(forced, StageStatus::Ran);
}

#[test]
fn tampered_output_reruns_the_stage() {
    let w = World::start();
    let p = Pipeline::open(w.config(), RunOptions::default()).unwrap();
    p.ingest().unwrap();
    std::fs::write(w.path("out/corpus/summary.json"), "{}").unwrap();
    assert_eq!(p.ingest().unwrap(), StageStatus::Ran);
    assert_eq!(p.ingest().unwrap(), StageStatus::UpToDate);
}

#[test]
fn represent_one_cluster() {
    let w = World::start();
    let p = Pipeline::open(w.config(), RunOptions::default()).unwrap();
    p.ingest().unwrap();
    p.embed().unwrap();
    p.cluster().unwrap();
    p.represent(Some(2)).unwrap();
    let files: Vec<String> = common::tree(&w.path("out/represent")).into_keys().collect();
    assert_eq!(files, ["train/s1/cluster_2.json", "train/s2/cluster_2.json", "train/s3/cluster_2.json"]);
    assert!(matches!(p.represent(Some(5)), Err(Error::Invalid(_))));
    let err = p.generate().unwrap_err();
    assert!(err.to_string().contains("missing representatives"), "{err}");
}

#[test]
fn stages_name_their_missing_inputs() {
    let w = World::start();
    let p = Pipeline::open(w.config(), RunOptions::default()).unwrap();
    let err = p.evaluate().unwrap_err();
    assert_eq!(err.kind(), "missing_artifact");
    assert!(err.to_string().contains("missing suite artifacts"), "{err}");
    assert!(p.embed().unwrap_err().to_string().contains("missing corpus artifacts"));
    assert!(p.report().unwrap_err().to_string().contains("missing evaluation reports"));
}

#[test]
fn one_run_per_output_directory() {
    let w = World::start();
    let _p = Pipeline::open(w.config(), RunOptions::default()).unwrap();
    assert!(matches!(Pipeline::open(w.config(), RunOptions::default()), Err(Error::Locked(_))));
}

#[test]
fn replay_reports_missing_and_stale_responses() {
    let w = World::start();
    record(&w);
    let path = w.path("transcript.jsonl");
    let full = Transcript::load(&path).unwrap();

    let mut cfg = w.replay_config("out_stale");
    cfg.chat.generation_temperature = 0.9;
    let err = Pipeline::open(cfg, RunOptions::default()).unwrap().run_all().unwrap_err();
    assert_eq!(err.kind(), "transcript_stale", "{err}");

    let kept: Vec<_> = full.records().iter().filter(|r| !r.tag.starts_with("qc/")).cloned().collect();
    Transcript::from_records(kept).unwrap().save(&path).unwrap();
    let err = Pipeline::open(w.replay_config("out_miss"), RunOptions::default()).unwrap().run_all().unwrap_err();
    assert_eq!(err.kind(), "transcript_miss", "{err}");

    let missing = RunOptions {
        mode: Some(GatewayMode::Replay),
        transcript: Some(w.path("nope.jsonl")),
        ..Default::default()
    };
    let mut cfg = w.config();
    cfg.paths.output = w.path("out_none");
    let err = Pipeline::open(cfg, missing).unwrap().run_all().unwrap_err();
    assert_eq!(err.kind(), "missing_artifact", "{err}");

    // A cold embedding cache fails instead of calling the provider.
    Transcript::from_records(full.records().to_vec()).unwrap().save(&path).unwrap();
    let mut cfg = w.replay_config("out_cold");
    cfg.paths.cache = w.path("cold_cache");
    let before = w.server.request_count("/v1/embeddings");
    let err = Pipeline::open(cfg, RunOptions::default()).unwrap().run_all().unwrap_err();
    assert_eq!(err.kind(), "missing_artifact", "{err}");
    assert!(err.to_string().contains("not cached"), "{err}");
    assert_eq!(w.server.request_count("/v1/embeddings"), before);
}

#[test]
fn qc_removals_and_relabels_flow_into_variants() {
    let scenario = Scenario::default();
    // Case 2 of every document is called hard; case 3 gets the opposite label.
    let w = World::with_responder(scenario, move |call| {
        let tag = call.tag.as_deref().unwrap_or_default();
        if let Some(id) = tag.strip_prefix("qc/") {
            let text = scenario.text_for_case(id).unwrap_or_default();
            let positive = text.contains("lovely");
            let label = if id.ends_with("-2") {
                "Hard to Decide"
            } else if id.ends_with("-3") == positive {
                "Negative"
            } else {
                "Positive"
            };
            return MockReply::Text(format!("Label: {label}\nReason: scripted"));
        }
        scenario.reply(call)
    });
    record(&w);

    let qc = std::fs::read_to_string(w.path("out/qc/triage.csv")).unwrap();
    assert_eq!(qc.lines().count(), 1 + 2 * 150);
    let dir = w.path("out/suites/train");
    let original = MftSuite::load(&dir, "original").unwrap();
    assert!(original.cases.iter().all(|c| !c.id.ends_with("-2")));
    for c in &original.cases {
        let flipped = c.id.ends_with("-3");
        let doc_label = scenario.doc_label(&c.source_doc_id).unwrap();
        let want = if flipped { doc_label.opposite() } else { doc_label };
        assert_eq!(c.inherited_label, want, "{}", c.id);
        assert_eq!(c.qc_label, QcLabel::from(want));
    }
    let extended = MftSuite::load(&dir, "extended").unwrap();
    for p in extended.cases.iter().filter(|c| c.is_paraphrase()) {
        let parent = original.get(p.paraphrase_of.as_deref().unwrap()).unwrap();
        assert_eq!(p.expected_label(), parent.expected_label());
    }
    let sizes = std::fs::read_to_string(dir.join("sizes.csv")).unwrap();
    assert!(sizes.contains("Train MFT 1,150,200"), "{sizes}");
    assert_eq!(original.provenance.split, Some(Split::Train));
    assert!(sizes.lines().all(|l| !l.contains(",0,")));
}
