//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Each check compares library output against an oracle written here from
//! scratch, or against a fixed value, inside a wall-clock budget.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use mftgen::corpus::{Document, Label, Split};
use mftgen::embedding::{EmbeddingCache, Embedder, ProviderConfig, RemoteEmbedder};
use mftgen::eval::{score, stability};
use mftgen::geometry::{adjusted_rand_index, kmeans, KMeansParams, ReducedMatrix};
use mftgen::http::RetryPolicy;
use mftgen::llm::{ChatConfig, ChatRequest, Gateway, GatewayMode, TAG_HEADER};
use mftgen::mft_gen::{parse_mft_block, MftCase, MftSuite, Provenance, QcLabel};
use mftgen::mock::{MockReply, MockServer};
use mftgen::pipeline::{Pipeline, RunOptions};
use mftgen::qc::{apply_triage, parse_verdict, triage_records, ApplyOptions, Labeler, LlmLabel, QcVerdict, TriageAction};
use mftgen::suite::MftTopicModel;
use mftgen::topics::{
    class_term_stats_for, largest_remainder, mmr_select, quotas_from_counts, select_representatives,
    RepresentativeSet, SelectionParams, TokenizerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

type Check = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn run(name: &str, budget: Duration, f: fn() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let outcome = match outcome {
        Ok(d) if took > budget => Err(format!("{d}; took {took:.2?}, budget {budget:?}")),
        other => other,
    };
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name} [{took:.2?} / {budget:?}] {detail}");
    outcome.is_ok()
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("ctfidf-oracle", 1, ctfidf_oracle),
        ("mmr-oracle", 5, mmr_oracle),
        ("kmeans-properties", 10, kmeans_properties),
        ("stratified-selection", 1, stratified_selection),
        ("diversity-fixture", 1, diversity_fixture),
        ("parser-fixtures", 1, parser_fixtures),
        ("end-to-end-mock", 60, end_to_end),
        ("qc-semantics", 1, qc_semantics),
        ("eval-identities", 1, eval_identities),
        ("wire-conformance", 5, wire_conformance),
    ];
    let mut failed = 0;
    for (name, secs, f) in criteria {
        if !run(name, Duration::from_secs(secs), f) {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// c-TF-IDF

/// Straight from the definition: tf(x, c) * ln(1 + A / f(x)), A = tokens / classes.
fn scalar_ctfidf(classes: &[Vec<&str>]) -> BTreeMap<(usize, String), f64> {
    let tokens: Vec<Vec<String>> = classes
        .iter()
        .map(|docs| {
            docs.iter()
                .flat_map(|d| d.split(|ch: char| !ch.is_alphanumeric()))
                .filter(|w| w.chars().count() >= 2)
                .map(str::to_lowercase)
                .collect()
        })
        .collect();
    let total: usize = tokens.iter().map(Vec::len).sum();
    let a = total as f64 / classes.len() as f64;
    let mut out = BTreeMap::new();
    let vocab: BTreeSet<&String> = tokens.iter().flatten().collect();
    for x in vocab {
        let f = tokens.iter().flatten().filter(|t| *t == x).count() as f64;
        for (c, toks) in tokens.iter().enumerate() {
            let tf = toks.iter().filter(|t| *t == x).count() as f64;
            out.insert((c, x.clone()), tf * (1.0 + a / f).ln());
        }
    }
    out
}

fn compare_ctfidf(classes: &[Vec<&str>]) -> Result<BTreeMap<(usize, String), f64>, String> {
    let pairs: Vec<(&str, usize)> = classes
        .iter()
        .enumerate()
        .flat_map(|(c, docs)| docs.iter().map(move |d| (*d, c)))
        .collect();
    let stats = class_term_stats_for(pairs, classes.len(), &TokenizerConfig::default()).map_err(|e| e.to_string())?;
    let oracle = scalar_ctfidf(classes);
    ensure!(
        stats.vocabulary.len() * classes.len() == oracle.len(),
        "vocabulary size {} vs oracle {}",
        stats.vocabulary.len(),
        oracle.len() / classes.len()
    );
    for ((c, term), want) in &oracle {
        let x = stats.term_index(term).ok_or(format!("term `{term}` missing"))?;
        let got = stats.weight(*c, x);
        ensure!((got - want).abs() <= 1e-9, "W({term}, {c}) = {got}, oracle {want}");
    }
    Ok(oracle)
}

fn ctfidf_oracle() -> Check {
    let small = compare_ctfidf(&[vec!["good toy good"], vec!["bad toy"]])?;
    let toy = small[&(0, "toy".to_string())];
    let good = small[&(0, "good".to_string())];
    ensure!((toy - 0.81093).abs() <= 1e-5, "W(toy, c) = {toy}");
    ensure!((good - 1.62186).abs() <= 1e-5, "W(good, c) = {good}");

    let toy_corpus = [
        vec!["The puzzle pieces fit well", "Great puzzle for kids"],
        vec!["Battery died on the truck", "The remote truck is fast"],
        vec!["Lovely doll with a red dress", "The doll hair tangles"],
    ];
    let words: usize = toy_corpus.iter().flatten().map(|d| d.split_whitespace().count()).sum();
    ensure!(words <= 50, "toy corpus has {words} tokens");
    let big = compare_ctfidf(&toy_corpus)?;
    Ok(format!(
        "{} (term, class) weights within 1e-9; W(toy)={toy:.5}, W(good)={good:.5}",
        small.len() + big.len()
    ))
}

// MMR

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Recomputes the objective from scratch at every step.
fn brute_mmr(cands: &[Vec<f64>], query: &[f64], lambda: f64, n: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..cands.len()).filter(|i| !chosen.contains(i)) {
            let rel = cos(&cands[i], query);
            let s = if chosen.is_empty() {
                rel
            } else {
                let red = chosen.iter().map(|&j| cos(&cands[i], &cands[j])).fold(f64::NEG_INFINITY, f64::max);
                (1.0 - lambda) * rel - lambda * red
            };
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        chosen.push(best.expect("candidates left").0);
    }
    chosen
}

fn mmr_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instances = 0;
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        for _ in 0..20 {
            let m = rng.gen_range(1..=8);
            let dim = rng.gen_range(2..=5);
            let point = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let cands: Vec<Vec<f64>> = (0..m).map(|_| point(&mut rng)).collect();
            let query = point(&mut rng);
            let n = rng.gen_range(1..=m);
            let input: Vec<(usize, Vec<f64>)> = cands.iter().cloned().enumerate().collect();
            let got: Vec<usize> = mmr_select(&input, &query, lambda, n)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|p| p.id)
                .collect();
            let want = brute_mmr(&cands, &query, lambda, n);
            ensure!(got == want, "lambda {lambda}, {m} candidates: got {got:?}, replay {want:?}");
            if lambda == 0.0 {
                let mut by_rel: Vec<usize> = (0..m).collect();
                by_rel.sort_by(|&a, &b| cos(&cands[b], &query).total_cmp(&cos(&cands[a], &query)));
                ensure!(got == by_rel[..n], "lambda 0 differs from relevance order: {got:?} vs {by_rel:?}");
            }
            instances += 1;
        }
    }
    Ok(format!("{instances} instances match the stepwise replay"))
}

// k-means

fn kmeans_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for inst in 0..50 {
        let n = rng.gen_range(10..80);
        let dim = rng.gen_range(1..5);
        let k = rng.gen_range(1..=6.min(n));
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let model = kmeans(&ReducedMatrix::from_points(pts), &KMeansParams::new(k, inst)).map_err(|e| e.to_string())?;
        for w in model.inertia_trace.windows(2) {
            ensure!(w[1] <= w[0], "instance {inst}: inertia rose from {} to {}", w[0], w[1]);
        }
    }

    let pts: Vec<Vec<f64>> = (0..37).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(0.0..9.0)]).collect();
    let mean: Vec<f64> = (0..2).map(|d| pts.iter().map(|p| p[d]).sum::<f64>() / pts.len() as f64).collect();
    let one = kmeans(&ReducedMatrix::from_points(pts), &KMeansParams::new(1, 3)).map_err(|e| e.to_string())?;
    for d in 0..2 {
        ensure!((one.centroids[0][d] - mean[d]).abs() <= 1e-12, "k=1 centroid {:?} vs mean {mean:?}", one.centroids[0]);
    }

    // Five unit-variance blobs on a circle of radius 10: neighbours sit 11.8 sigma apart.
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for i in 0..200 {
        let b = i % 5;
        let angle = b as f64 * std::f64::consts::TAU / 5.0;
        pts.push(vec![10.0 * angle.cos() + noise.sample(&mut rng), 10.0 * angle.sin() + noise.sample(&mut rng)]);
        truth.push(b);
    }
    let m = ReducedMatrix::from_points(pts);
    let runs: Vec<_> = (0..3)
        .map(|_| kmeans(&m, &KMeansParams::new(5, 42)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let ari = adjusted_rand_index(&truth, &runs[0].labels);
    ensure!(ari >= 0.9, "planted blobs ARI {ari}");
    ensure!(
        runs.iter().all(|r| r.labels == runs[0].labels && r.inertia.to_bits() == runs[0].inertia.to_bits()),
        "runs with one seed differ"
    );
    Ok(format!("50 monotone traces; k=1 is the mean; blob ARI {ari:.3}; 3 identical runs"))
}

// Stratified selection

fn doc(id: String, text: String, label: Label) -> Document {
    Document {
        id,
        text,
        label,
        category: "Toys".into(),
        date: NaiveDate::from_ymd_opt(2015, 6, 1).expect("valid date"),
        split: Some(Split::Train),
    }
}

fn stratified_selection() -> Check {
    let q = quotas_from_counts(10, &[40, 60]);
    ensure!(q == [4, 6], "quotas for 40/60 are {q:?}");

    let docs: Vec<Document> = (0..100)
        .map(|i| {
            let label = if i < 40 { Label::Positive } else { Label::Negative };
            doc(format!("d{i}"), format!("toy number{i} word{} thing{}", i % 7, i % 11), label)
        })
        .collect();
    let refs: Vec<&Document> = docs.iter().collect();
    let tok = TokenizerConfig::default();
    let stats = class_term_stats_for(docs.iter().map(|d| (d.text.as_str(), 0)), 1, &tok).map_err(|e| e.to_string())?;
    let set = select_representatives(0, &refs, &stats, &tok, &SelectionParams::default(), None).map_err(|e| e.to_string())?;
    let pos = set.picks.iter().filter(|p| p.label == Label::Positive).count();
    let neg = set.picks.len() - pos;
    ensure!((pos, neg) == (4, 6), "picked {pos} positive and {neg} negative");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let len = rng.gen_range(1..8);
        let w: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let n = rng.gen_range(0..60);
        let got: usize = largest_remainder(n, &w).iter().sum();
        ensure!(got == n, "quotas sum to {got} for n = {n}, weights {w:?}");
    }
    Ok("40/60 gives 4 positive + 6 negative; 100 quota vectors sum to n".into())
}

// Diversity fixture

fn diversity_fixture() -> Check {
    let dups = ["Five stars", "five stars!!!", "Five stars! Five stars!"];
    let distinct = [
        "Sturdy wheels survived the stairs",
        "Bright colors kept toddlers busy",
        "Instructions were clear enough",
        "Arrived quickly, packaging intact",
        "Batteries included, which helped",
        "Grandson plays with it daily",
        "Smaller than pictured online",
    ];
    let other = ["Puzzle pieces went missing", "Doll hair tangles badly", "Kite string snapped"];
    let cluster: Vec<&str> = dups.iter().chain(&distinct).copied().collect();
    let tok = TokenizerConfig::default();
    let pairs = cluster.iter().map(|t| (*t, 0)).chain(other.iter().map(|t| (*t, 1)));
    let stats = class_term_stats_for(pairs, 2, &tok).map_err(|e| e.to_string())?;
    let dim = stats.vocabulary.len();
    let vecs: Vec<_> = cluster.iter().map(|t| stats.document_vector(t, &tok)).collect();
    let query = stats.class_vector(0);
    let dense: Vec<Vec<f64>> = vecs.iter().map(|v| v.to_dense(dim)).collect();
    let dense_q = query.to_dense(dim);
    let input: Vec<(usize, _)> = vecs.iter().cloned().enumerate().collect();

    let mut dup_count = BTreeMap::new();
    let mut min_dist = BTreeMap::new();
    for lambda in [0.0, 0.5] {
        let got: Vec<usize> = mmr_select(&input, &query, lambda, 5)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|p| p.id)
            .collect();
        let want = brute_mmr(&dense, &dense_q, lambda, 5);
        ensure!(got == want, "lambda {lambda}: got {got:?}, replay {want:?}");
        dup_count.insert(lambda.to_string(), got.iter().filter(|&&i| i < dups.len()).count());
        let mut d = f64::INFINITY;
        for (a, &i) in got.iter().enumerate() {
            for &j in &got[a + 1..] {
                d = d.min(1.0 - cos(&dense[i], &dense[j]));
            }
        }
        min_dist.insert(lambda.to_string(), d);
    }
    let (before, after) = (dup_count["0"], dup_count["0.5"]);
    ensure!(after <= 1, "lambda 0.5 kept {after} near-duplicates");
    ensure!(before >= 2, "lambda 0 kept only {before} near-duplicates");
    ensure!(min_dist["0.5"] >= min_dist["0"], "min pairwise distance shrank: {min_dist:?}");
    Ok(format!("near-duplicates: {before} at lambda 0, {after} at lambda 0.5"))
}

// Parsers

fn parser_fixtures() -> Check {
    use common::fixtures::*;
    let album = parse_mft_block(&fixture("album_answer.txt"));
    ensure!(album.pairs == album_pairs(), "album answer pairs differ: {:?}", album.pairs);
    ensure!(album.pairs[0].summary == "Complex Sound and Maturity", "first summary");
    let lego = parse_mft_block(&fixture("lego_block.txt")).pairs;
    ensure!(lego == lego_pairs(), "lego block pairs differ: {lego:?}");
    let kindle = parse_mft_block(&fixture("kindle_block.txt")).pairs;
    let summaries: Vec<&str> = kindle.iter().map(|p| p.summary.as_str()).collect();
    ensure!(summaries == KINDLE_SUMMARIES, "kindle summaries {summaries:?}");
    ensure!(kindle.iter().all(|p| !p.review.is_empty()), "kindle review missing");
    let verdict = parse_verdict(&fixture("label_response.txt")).map(|v| v.0);
    ensure!(verdict == Some(LlmLabel::Negative), "label response parsed as {verdict:?}");

    let expected = pairs(&AB);
    let all = variants();
    ensure!(all.len() >= 20, "only {} variants", all.len());
    let bad: Vec<&str> = all.iter().filter(|(_, t)| parse_mft_block(t).pairs != expected).map(|(n, _)| *n).collect();
    ensure!(bad.is_empty(), "variants not parsed: {bad:?}");
    for p in [&album.pairs, &lego, &kindle, &expected] {
        let again = parse_mft_block(&mftgen::mft_gen::render_mft_block(p)).pairs;
        ensure!(&again == p, "round trip changed {p:?}");
    }
    Ok(format!("3 worked answers, label response, {} variants, round trip", all.len()))
}

// End to end

fn end_to_end() -> Check {
    let w = common::World::start();
    let e = |e: mftgen::Error| e.to_string();
    Pipeline::open(w.config(), RunOptions::default()).map_err(e)?.run_all().map_err(e)?;
    let recorded = common::tree(&w.path("out"));

    let scenario = w.scenario;
    let mut reps: Vec<RepresentativeSet> = Vec::new();
    for (name, bytes) in &recorded {
        if name.starts_with("represent/train/s") && name.contains("/cluster_") {
            reps.push(serde_json::from_slice(bytes).map_err(|e| e.to_string())?);
        }
    }
    let mut per_seed: BTreeMap<u64, usize> = BTreeMap::new();
    let mut docs = BTreeSet::new();
    for r in &reps {
        *per_seed.entry(r.seed).or_default() += r.picks.len();
        docs.extend(r.doc_ids().into_iter().map(str::to_string));
    }
    // Cases 1..c-1 carry the seed; case c is shared by every seed; paraphrase 1 restates its parent.
    let c = scenario.cases_per_doc;
    let want_original: usize = per_seed.values().map(|n| (c - 1) * n).sum::<usize>() + docs.len();
    let cfg = w.config();
    let want_extended = want_original * cfg.generate.paraphrase_n;

    let p = Pipeline::open(w.config(), RunOptions::default()).map_err(e)?;
    let set = p.load_variant_set(Split::Train).map_err(e)?;
    drop(p);
    for s in &set.seed_suites {
        let n = s.len() as f64;
        ensure!((180.0..=220.0).contains(&n), "{} has {n} cases", s.name);
    }
    let (orig, ext) = (set.original.len(), set.extended.len());
    ensure!(orig == want_original, "Original has {orig}, plan says {want_original}");
    ensure!(ext == want_extended, "Extended has {ext}, plan says {want_extended}");
    ensure!(ext <= 6 * orig, "Extended {ext} > 6 x {orig}");

    let chat_before = w.server.request_count("/v1/chat/completions");
    let emb_before = w.server.request_count("/v1/embeddings");
    let mut trees = Vec::new();
    for out in ["replay_a", "replay_b"] {
        Pipeline::open(w.replay_config(out), RunOptions::default()).map_err(e)?.run_all().map_err(e)?;
        trees.push(common::tree(&w.path(out)));
    }
    ensure!(w.server.request_count("/v1/chat/completions") == chat_before, "replay sent chat requests");
    ensure!(w.server.request_count("/v1/embeddings") == emb_before, "replay sent embedding requests");
    ensure!(trees[0] == trees[1], "replay runs differ");
    let artifacts = |t: &BTreeMap<String, Vec<u8>>| -> BTreeMap<String, Vec<u8>> {
        t.iter().filter(|(k, _)| !k.starts_with(".stages/")).map(|(k, v)| (k.clone(), v.clone())).collect()
    };
    let recorded = artifacts(&recorded);
    let differing: Vec<&String> = recorded
        .iter()
        .filter(|(k, v)| trees[0].get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    ensure!(differing.is_empty(), "replay differs from the recorded run in {differing:?}");
    let sizes: Vec<usize> = set.seed_suites.iter().map(MftSuite::len).collect();
    Ok(format!(
        "seed suites {sizes:?}, Original {orig}, Extended {ext}; {} files identical across replays",
        trees[0].len()
    ))
}

// QC

fn case(id: &str, text: &str, label: Label, parent: Option<&str>) -> MftCase {
    MftCase {
        id: id.into(),
        text: text.into(),
        summary: String::new(),
        inherited_label: label,
        qc_label: QcLabel::Unreviewed,
        source_doc_id: "doc".into(),
        cluster: 0,
        seed: 1,
        paraphrase_of: parent.map(str::to_string),
        mft_topic: None,
    }
}

fn qc_semantics() -> Check {
    let server = MockServer::builder()
        .responder(|call| {
            let label = if call.prompt.contains("pretty good") {
                "Positive"
            } else if call.prompt.contains("somewhat") {
                "Hard to Decide"
            } else {
                "Negative"
            };
            MockReply::Text(format!("Label: {label}\nReason: Judged from the wording."))
        })
        .start()
        .map_err(|e| e.to_string())?;
    let chat = ChatConfig {
        base_url: server.url().into(),
        ..ChatConfig::default()
    };
    let gateway = Gateway::from_config(&chat, GatewayMode::Live, None).map_err(|e| e.to_string())?;
    let labeler = Labeler::new(&gateway, "mock", 0.0, 64);

    let mixed = case("s1-d1-1", "The quality of the toy is pretty good!", Label::Negative, None);
    let pricey = case("s1-d1-2", "This toy is too pricy. It isn't worth it.", Label::Negative, None);
    let unsure = case("s1-d2-1", "It is somewhat fine I guess.", Label::Negative, None);
    let originals = vec![mixed.clone(), pricey.clone(), unsure.clone()];
    let verdicts: Vec<QcVerdict> = labeler.auto_label_many(&originals).map_err(|e| e.to_string())?;
    ensure!(verdicts[0].llm_label == LlmLabel::Positive && verdicts[0].flagged(), "mixed case not flagged: {:?}", verdicts[0]);
    ensure!(!verdicts[1].flagged(), "agreeing case flagged");
    ensure!(verdicts[2].llm_label == LlmLabel::Hard, "hard case labeled {:?}", verdicts[2].llm_label);

    let records = triage_records(&originals, &verdicts).map_err(|e| e.to_string())?;
    let actions: Vec<TriageAction> = records.iter().map(|r| r.proposed_action).collect();
    ensure!(
        actions == [TriageAction::RelabelPositive, TriageAction::Remove],
        "proposed actions {actions:?}"
    );

    let mut cases = originals;
    cases.push(case("s1-d1-1-p1", "Really good quality toy!", Label::Negative, Some("s1-d1-1")));
    cases.push(case("s1-d2-1-p1", "Fine, I suppose.", Label::Negative, Some("s1-d2-1")));
    cases.push(case("s1-d2-1-p2", "Okay-ish overall.", Label::Negative, Some("s1-d2-1")));
    let suite = MftSuite::new("Train MFT 1", cases, Provenance::default());
    let opts = ApplyOptions { accept_proposed: true };
    let once = apply_triage(&suite, &records, opts).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = once.cases.iter().map(|c| c.id.as_str()).collect();
    ensure!(ids == ["s1-d1-1", "s1-d1-2", "s1-d1-1-p1"], "surviving cases {ids:?}");
    ensure!(
        once.cases.iter().filter(|c| c.id.starts_with("s1-d1-1")).all(|c| c.expected_label() == Label::Positive),
        "relabel did not cascade to the paraphrase"
    );
    let twice = apply_triage(&once, &records, opts).map_err(|e| e.to_string())?;
    ensure!(twice == once, "second application changed the suite");
    Ok("mixed case flagged; hard case and 2 paraphrases removed; reapplying is a no-op".into())
}

// Evaluation

fn eval_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for inst in 0..50 {
        let m = rng.gen_range(1..120);
        let k = rng.gen_range(1..7);
        let mut cases = Vec::new();
        let mut assignments = BTreeMap::new();
        let mut predictions = HashMap::new();
        for i in 0..m {
            let label = if rng.gen_bool(0.5) { Label::Positive } else { Label::Negative };
            let id = format!("c{i}");
            cases.push(case(&id, &format!("text {i}"), label, None));
            assignments.insert(id.clone(), rng.gen_range(0..k));
            let predicted = if rng.gen_bool(0.7) { label } else { Label::ALL.into_iter().find(|l| *l != label).expect("two labels") };
            predictions.insert(id, predicted);
        }
        let suite = MftSuite::new("Train MFT (Original)", cases, Provenance::default());
        let model = MftTopicModel {
            k,
            assignments,
            topic_names: (0..k).map(|t| format!("{t}_topic")).collect(),
        };
        let report = score("m", &[], &predictions, Some((&suite, &model)), BTreeMap::new()).map_err(|e| e.to_string())?;
        let correct = suite.cases.iter().filter(|c| predictions[&c.id] == c.expected_label()).count() as u64;
        let (sum_c, sum_n) = report
            .topics
            .iter()
            .fold((0u64, 0u64), |(c, n), t| (c + t.accuracy.correct, n + t.accuracy.total));
        // sum_t (n_t / N)(c_t / n_t) = C / N  reduces to  sum c_t = C when sum n_t = N.
        ensure!(sum_n == m as u64 && sum_c == correct, "instance {inst}: topics give {sum_c}/{sum_n}, overall {correct}/{m}");
    }

    let xs = [82.20, 89.74, 92.70];
    let got = stability(&xs).map_err(|e| e.to_string())?;
    let mean = xs.iter().sum::<f64>() / 3.0;
    let direct = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    ensure!((got - 5.41).abs() <= 0.01, "stability {got}");
    ensure!((got - direct).abs() <= 1e-9, "stability {got} vs direct {direct}");
    let flat = stability(&[87.35, 87.35, 87.35, 87.35]).map_err(|e| e.to_string())?;
    ensure!(flat == 0.0, "constant series gives {flat}");
    Ok(format!("50 weighted-mean identities exact; stability {got:.4}; constant series 0"))
}

// Wire protocol

fn quick_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_delay_ms: 1,
        factor: 1.0,
        max_delay_ms: 1,
        jitter: false,
    }
}

fn keys(v: &Value) -> BTreeSet<&str> {
    v.as_object().map(|o| o.keys().map(String::as_str).collect()).unwrap_or_default()
}

fn check_chat_request(r: &mftgen::mock::RecordedRequest) -> Result<(), String> {
    let b = &r.body;
    ensure!(r.method == "POST", "chat method {}", r.method);
    ensure!(r.content_type.as_deref().is_some_and(|c| c.starts_with("application/json")), "chat content type {:?}", r.content_type);
    ensure!(keys(b) == BTreeSet::from(["model", "messages", "temperature", "max_tokens"]), "chat body keys {:?}", keys(b));
    ensure!(b["model"].is_string(), "model is not a string");
    let msgs = b["messages"].as_array().ok_or("messages is not a list")?;
    ensure!(msgs.len() == 1, "{} messages", msgs.len());
    ensure!(keys(&msgs[0]) == BTreeSet::from(["role", "content"]), "message keys {:?}", keys(&msgs[0]));
    ensure!(msgs[0]["role"] == "user" && msgs[0]["content"].is_string(), "message {:?}", msgs[0]);
    ensure!(b["temperature"].is_number(), "temperature is not a number");
    ensure!(b["max_tokens"].is_u64(), "max_tokens is not an integer");
    ensure!(r.tag.as_deref().is_some_and(|t| !t.is_empty()), "no {TAG_HEADER} header");
    Ok(())
}

fn wire_conformance() -> Check {
    let e = |e: mftgen::Error| e.to_string();
    let busy = || MockReply::Status(429, "slow down".into());
    let server = MockServer::builder()
        .script("wire/ok", vec![busy(), busy(), MockReply::Text("fine".into())])
        .script("wire/exhausted", vec![busy(), busy(), busy(), MockReply::Text("too late".into())])
        .script("wire/bad", vec![MockReply::Status(400, "bad request".into())])
        .dim(8)
        .start()
        .map_err(e)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let chat = ChatConfig {
        base_url: server.url().into(),
        retry: quick_retry(3),
        ..ChatConfig::default()
    };
    let gateway = Gateway::from_config(&chat, GatewayMode::Record, Some(&dir.path().join("t.jsonl"))).map_err(e)?;
    let req = |tag: &str| ChatRequest {
        prompt: format!("Prompt for {tag}"),
        model: "mock-chat".into(),
        temperature: 0.7,
        max_tokens: 256,
        tag: tag.into(),
    };
    ensure!(gateway.chat(&req("wire/ok")).map_err(e)? == "fine", "wrong reply");
    ensure!(gateway.chat(&req("wire/exhausted")).is_err(), "exhausted retries succeeded");
    ensure!(gateway.chat(&req("wire/bad")).is_err(), "400 succeeded");
    let count = |tag: &str| server.requests().iter().filter(|r| r.tag.as_deref() == Some(tag)).count();
    let counts = [count("wire/ok"), count("wire/exhausted"), count("wire/bad")];
    ensure!(counts == [3, 3, 1], "attempts per tag {counts:?}");
    let t = gateway.transcript();
    ensure!(t.get("wire/ok").map(|r| r.attempts) == Some(3), "transcript attempts {:?}", t.get("wire/ok"));
    ensure!(t.len() == 1, "failed calls were recorded");
    for r in server.requests().iter().filter(|r| r.path == "/v1/chat/completions") {
        check_chat_request(r)?;
        ensure!(r.body["messages"][0]["content"] == format!("Prompt for {}", r.tag.as_deref().unwrap_or("")), "prompt mangled");
    }

    server.fail_embeddings(&[429, 503]);
    let provider = ProviderConfig {
        base_url: server.url().into(),
        model_name: "mock-embed".into(),
        batch_size: 2,
        concurrency: 1,
        retry: quick_retry(3),
        ..ProviderConfig::default()
    };
    let embedder = RemoteEmbedder::new(provider, EmbeddingCache::in_memory()).map_err(e)?;
    let texts: Vec<String> = ["alpha", "beta", "gamma"].map(String::from).to_vec();
    let vecs = embedder.embed(&texts).map_err(e)?;
    ensure!(vecs.len() == 3 && vecs.iter().all(|v| v.len() == 8), "embedding shapes");
    let emb: Vec<_> = server.requests().into_iter().filter(|r| r.path == "/v1/embeddings").collect();
    ensure!(emb.len() == 4, "{} embedding requests, want 2 batches + 2 retries", emb.len());
    for r in &emb {
        ensure!(r.method == "POST", "embedding method {}", r.method);
        ensure!(keys(&r.body) == BTreeSet::from(["model", "input"]), "embedding body keys {:?}", keys(&r.body));
        ensure!(r.body["model"] == "mock-embed", "embedding model {:?}", r.body["model"]);
        let input = r.body["input"].as_array().ok_or("input is not a list")?;
        ensure!(!input.is_empty() && input.len() <= 2 && input.iter().all(Value::is_string), "input {input:?}");
    }
    Ok("chat and embedding bodies match the schema; attempts 3/3/1 under scripted errors".into())
}
