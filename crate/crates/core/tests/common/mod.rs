// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rhythm_core::synth::{synth_example, CorpusSpec, Planted};
use rhythm_core::tensor_io::{write_attention_dump, write_token_trace};
use rhythm_core::AttentionMap;

/// Random causal row-stochastic map; some rows are sparse.
pub fn random_map(rng: &mut impl Rng, n: usize) -> AttentionMap {
    let mut m = AttentionMap::zeros(n);
    for t in 0..n {
        let sparse = rng.gen_bool(0.2);
        let row = m.row_mut(t);
        let mut total = 0.0;
        for w in row.iter_mut().take(t + 1) {
            *w = if sparse && rng.gen_bool(0.7) { 0.0 } else { rng.gen::<f64>() };
            total += *w;
        }
        if total == 0.0 {
            row[t] = 1.0;
        } else {
            for w in row.iter_mut().take(t + 1) {
                *w /= total;
            }
        }
    }
    m
}

/// Writes `count` synthetic traces named `trace-XX` and returns the planted
/// structure by trace id.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, count: usize, seed: u64) -> BTreeMap<String, Planted> {
    std::fs::create_dir_all(dir).unwrap();
    let mut planted = BTreeMap::new();
    for i in 0..count {
        let id = format!("trace-{i:02}");
        let (stack, trace, p) = synth_example(spec, seed + i as u64).unwrap();
        write_attention_dump(dir.join(format!("{id}.attd")), &stack).unwrap();
        write_token_trace(dir.join(format!("{id}.json")), &trace).unwrap();
        planted.insert(id, p);
    }
    planted
}

/// Every regular file under `root`, keyed by relative path.
pub fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn is_manifest(p: &Path) -> bool {
    p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("manifest.json"))
}

/// Compares two output trees byte for byte, except that manifests are
/// compared with their wall-clock `timings` removed. Returns the first
/// difference found.
pub fn diff_trees(a: &Path, b: &Path) -> Option<String> {
    let ta = read_tree(a);
    let tb = read_tree(b);
    let ka: Vec<_> = ta.keys().collect();
    let kb: Vec<_> = tb.keys().collect();
    if ka != kb {
        return Some(format!("file lists differ: {ka:?} vs {kb:?}"));
    }
    for (path, bytes) in &ta {
        let other = &tb[path];
        if is_manifest(path) {
            let strip = |b: &[u8]| {
                let mut v: serde_json::Value = serde_json::from_slice(b).unwrap();
                v.as_object_mut().unwrap().remove("timings");
                v
            };
            if strip(bytes) != strip(other) {
                return Some(format!("{} differs beyond timings", path.display()));
            }
        } else if bytes != other {
            return Some(format!("{} differs", path.display()));
        }
    }
    None
}

pub fn config_text(inputs: &str, output: &str, seed: u64, workers: usize) -> String {
    format!("inputs = [\"{inputs}\"]\noutput_dir = \"{output}\"\nseed = {seed}\nworkers = {workers}\nn_shuffles = 200\n")
}
