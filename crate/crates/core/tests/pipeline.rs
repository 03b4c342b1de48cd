// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::BTreeSet;

use rhythm_core::credit::Scheme;
use rhythm_core::pipeline::{run_analysis, run_coupling, run_credit, RunConfig, SpanMode, TraceStatus, WeightRecord};
use rhythm_core::synth::CorpusSpec;
use rhythm_core::tensor_io::LayerPolicy;
use sha2::{Digest, Sha256};

fn corpus(n: usize, seed: u64) -> (tempfile::TempDir, String) {
    let tmp = tempfile::tempdir().unwrap();
    common::write_corpus(&tmp.path().join("corpus"), &CorpusSpec::default(), n, seed);
    let glob = tmp.path().join("corpus/*.attd").display().to_string();
    (tmp, glob)
}

fn config(tmp: &tempfile::TempDir, glob: &str, out: &str) -> RunConfig {
    let mut cfg = RunConfig::new(vec![glob.to_string()], tmp.path().join(out), 5);
    cfg.n_shuffles = 100;
    cfg
}

#[test]
fn empty_glob_gives_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::new(vec![tmp.path().join("nothing/*.attd").display().to_string()], tmp.path().join("out"), 1);
    let m = run_analysis(&cfg).unwrap();
    assert!(m.traces.is_empty());
    assert!(tmp.path().join("out/manifest.json").exists());
    assert_eq!(m.skipped_statistics.len(), 3);
}

#[test]
fn three_traces_produce_expected_files_and_digests() {
    let (tmp, glob) = corpus(3, 10);
    let m = run_analysis(&config(&tmp, &glob, "out")).unwrap();
    assert_eq!(m.n_ok(), 3);
    let out = tmp.path().join("out");
    let profiles: Vec<_> = std::fs::read_dir(out.join("profiles")).unwrap().collect();
    assert_eq!(profiles.len(), 6);
    assert!(out.join("coupling.json").exists() && out.join("manifest.json").exists());
    let coupling: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("coupling.json")).unwrap()).unwrap();
    assert_eq!(coupling.as_array().unwrap().len(), 3);
    for t in &m.traces {
        let bytes = std::fs::read(&t.dump.path).unwrap();
        assert_eq!(t.dump.sha256.as_deref(), Some(hex::encode(Sha256::digest(&bytes)).as_str()));
        assert!(t.trace.sha256.is_some());
        assert_eq!(t.outputs.len(), 3);
        for rel in &t.outputs {
            assert!(out.join(rel).exists());
        }
    }
    let text = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(!text.contains("\"workers\"") && !text.contains("\"output_dir\""));
    assert!(!std::fs::read_dir(&out).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "tmp")));
}

#[test]
fn bad_inputs_are_isolated() {
    let (tmp, glob) = corpus(3, 20);
    let dir = tmp.path().join("corpus");
    std::fs::write(dir.join("trace-01.attd"), b"not a dump").unwrap();
    std::fs::copy(dir.join("trace-00.attd"), dir.join("orphan.attd")).unwrap();
    let m = run_analysis(&config(&tmp, &glob, "out")).unwrap();
    assert_eq!(m.traces.len(), 4);
    assert_eq!(m.n_ok(), 2);
    let by_id = |id: &str| m.traces.iter().find(|t| t.trace_id == id).unwrap();
    assert_eq!(by_id("trace-01").status, TraceStatus::Failed);
    assert_eq!(by_id("trace-01").error_code.as_deref(), Some("bad-magic"));
    assert_eq!(by_id("orphan").error_code.as_deref(), Some("io"));
    assert!(by_id("orphan").trace.sha256.is_none());
    assert!(tmp.path().join("out/profiles/trace-02.csv").exists());
}

#[test]
fn global_weights_cover_planted_anchors() {
    let tmp = tempfile::tempdir().unwrap();
    let planted = common::write_corpus(&tmp.path().join("corpus"), &CorpusSpec::default(), 6, 30);
    let glob = tmp.path().join("corpus/*.attd").display().to_string();
    let cfg = config(&tmp, &glob, "out");
    let m = run_credit(&cfg, Scheme::Global).unwrap();
    assert_eq!(m.n_ok(), 6);
    let prompt = CorpusSpec::default().prompt_len;
    for (id, p) in planted {
        let line = std::fs::read_to_string(tmp.path().join(format!("out/weights/{id}.jsonl"))).unwrap();
        assert_eq!(line.lines().count(), 1);
        let rec: WeightRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(rec.trace_id, id);
        let selected: BTreeSet<usize> = rec.selected_global.iter().copied().collect();
        for a in p.anchors {
            assert!(selected.contains(&(a - prompt)), "{id}: anchor {a} not selected");
        }
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let want: BTreeSet<&str> =
            ["trace_id", "gamma", "selected_local", "selected_global", "dominated", "intro_map", "params"].into();
        assert_eq!(keys, want);
    }
    assert!(tmp.path().join("out/weights_summary.json").exists());
}

#[test]
fn coupled_with_zero_alpha_matches_global() {
    let (tmp, glob) = corpus(4, 40);
    let mut cfg = config(&tmp, &glob, "global");
    cfg.credit.alpha = 0.0;
    run_credit(&cfg, Scheme::Global).unwrap();
    cfg.output_dir = tmp.path().join("coupled");
    run_credit(&cfg, Scheme::Coupled).unwrap();
    let g = common::read_tree(&tmp.path().join("global/weights"));
    let c = common::read_tree(&tmp.path().join("coupled/weights"));
    assert_eq!(g.len(), 4);
    assert_eq!(g, c);
}

#[test]
fn reruns_are_byte_identical() {
    let (tmp, glob) = corpus(4, 50);
    for out in ["a", "b"] {
        let cfg = config(&tmp, &glob, out);
        run_analysis(&cfg).unwrap();
        for scheme in [Scheme::Local, Scheme::Coupled] {
            run_credit(&cfg, scheme).unwrap();
        }
    }
    assert_eq!(common::diff_trees(&tmp.path().join("a"), &tmp.path().join("b")), None);
}

#[test]
fn corpus_mean_grouping_is_shared() {
    let (tmp, glob) = corpus(3, 60);
    let mut cfg = config(&tmp, &glob, "out");
    cfg.span_mode = SpanMode::CorpusMean;
    cfg.layer_policy = LayerPolicy::Strict;
    let m = run_analysis(&cfg).unwrap();
    assert_eq!(m.n_ok(), 3);
    let groups: BTreeSet<String> = (0..3)
        .map(|i| {
            let csv = std::fs::read_to_string(tmp.path().join(format!("out/heads/trace-{i:02}.csv"))).unwrap();
            csv.lines().filter(|l| l.ends_with(",local") || l.ends_with(",global")).map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{}", f[0], f[1], f[3])
            }).collect::<Vec<_>>().join(";")
        })
        .collect();
    assert_eq!(groups.len(), 1);
}

#[test]
fn config_paths_resolve_against_config_dir() {
    let (tmp, _) = corpus(2, 70);
    let path = tmp.path().join("run.toml");
    std::fs::write(&path, common::config_text("corpus/*.attd", "results", 3, 2)).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.workers, 2);
    let m = run_coupling(&cfg).unwrap();
    assert_eq!(m.n_ok(), 2);
    assert_eq!(m.command, "couple");
    assert!(tmp.path().join("results/coupling.csv").exists());
    assert!(!tmp.path().join("results/profiles").exists());
}
