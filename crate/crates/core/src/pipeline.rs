// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corpus runs: load and validate every `(dump, trace)` pair, group heads,
//! compute profiles, then write coupling reports or credit weights plus a
//! manifest.
//!
//! Inputs are ATTD dumps matched by the configured globs; each `<stem>.attd`
//! is paired with `<stem>.json` in the same directory and `<stem>` becomes the
//! trace id. Output layout under `output_dir`:
//!
//! ```text
//! profiles/<id>.csv, profiles/<id>.json, heads/<id>.csv
//! coupling.json, coupling.csv, manifest.json          (analyze / couple)
//! weights/<id>.jsonl, weights_summary.json,
//! weights_manifest.json                               (weights)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::{
    entropy_at_peaks_pooled, follows_or_coincides_pooled, cooccurrence_pooled, report_csv,
    report_json, Aggregation, CouplingEntry, CouplingParams, LiftStat,
};
use crate::credit::{gamma_coupled, gamma_global, gamma_local, CreditParams, CreditWeights, Scheme};
use crate::error::{Error, Result};
use crate::heads::{average_span_tables, group_heads, span_table, HeadGroups};
use crate::index_set::IndexSet;
use crate::profile::{analyze_trace, check_pairing, TraceAnalysis};
use crate::rhythm::MetricParams;
use crate::tensor_io::{
    decode_attention_dump, ensure_valid, parse_token_trace, AttentionStack, LayerPolicy, TokenTrace,
};

/// How head groups are formed across a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanMode {
    /// Each trace is grouped from its own span table.
    #[default]
    PerTrace,
    /// One grouping from the mean span table of all loaded traces.
    CorpusMean,
}

fn default_head_quantile() -> f64 {
    0.3
}
fn default_n_shuffles() -> usize {
    1000
}
fn default_max_lag() -> i64 {
    1
}

/// Everything a corpus run needs. Read from TOML; relative paths resolve
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Glob patterns selecting `.attd` dumps.
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 picks the number of available cores.
    #[serde(default, skip_serializing)]
    pub workers: usize,
    #[serde(default = "default_head_quantile")]
    pub head_quantile: f64,
    #[serde(default)]
    pub span_mode: SpanMode,
    #[serde(default)]
    pub layer_policy: LayerPolicy,
    #[serde(default = "default_n_shuffles")]
    pub n_shuffles: usize,
    #[serde(default = "default_max_lag")]
    pub max_lag: i64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub metrics: MetricParams,
    #[serde(default)]
    pub credit: CreditParams,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    /// A config with every default and the given inputs, output and seed.
    pub fn new(inputs: Vec<String>, output_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            inputs,
            output_dir: output_dir.into(),
            seed,
            workers: 0,
            head_quantile: default_head_quantile(),
            span_mode: SpanMode::default(),
            layer_policy: LayerPolicy::default(),
            n_shuffles: default_n_shuffles(),
            max_lag: default_max_lag(),
            aggregation: Aggregation::default(),
            metrics: MetricParams::default(),
            credit: CreditParams::default(),
            base_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = Some(path.parent().map(Path::to_path_buf).unwrap_or_default());
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        self.metrics.check()?;
        self.credit.check()?;
        if !(self.head_quantile > 0.0 && self.head_quantile <= 0.5) {
            return Err(Error::QuantileOutOfRange(self.head_quantile));
        }
        if self.n_shuffles < 1 {
            return Err(Error::InvalidConfig("n_shuffles must be at least 1".into()));
        }
        if self.max_lag < 0 {
            return Err(Error::InvalidLag(format!("max_lag must be nonnegative, got {}", self.max_lag)));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
    }
}

/// One discovered `(dump, trace)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputPair {
    pub trace_id: String,
    pub dump: PathBuf,
    pub trace: PathBuf,
}

/// Expands the input globs into pairs sorted by trace id. Files that do not
/// end in `.attd` are ignored. A stem seen twice is an error.
pub fn discover_inputs(config: &RunConfig) -> Result<Vec<InputPair>> {
    let mut found: BTreeMap<String, InputPair> = BTreeMap::new();
    for pattern in &config.inputs {
        let full = config.resolve(Path::new(pattern));
        let full = full.to_string_lossy();
        let paths = glob::glob(&full).map_err(|e| Error::InvalidConfig(format!("glob `{pattern}`: {e}")))?;
        for entry in paths {
            let path = entry.map_err(|e| {
                let p = e.path().to_path_buf();
                Error::io(p, e.into())
            })?;
            if path.extension().and_then(|e| e.to_str()) != Some("attd") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let pair = InputPair {
                trace_id: stem.clone(),
                trace: path.with_extension("json"),
                dump: path,
            };
            match found.get(&stem) {
                Some(prev) if prev.dump != pair.dump => {
                    return Err(Error::InvalidConfig(format!(
                        "trace id `{stem}` matched by both {} and {}",
                        prev.dump.display(),
                        pair.dump.display()
                    )))
                }
                _ => {
                    found.insert(stem, pair);
                }
            }
        }
    }
    Ok(found.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    /// Hex SHA-256 of the file bytes; `None` when the file could not be read.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub status: TraceStatus,
    pub dump: InputDigest,
    pub trace: InputDigest,
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// A corpus statistic that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStatistic {
    pub statistic_name: String,
    pub error_code: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub per_trace_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scheme: Option<Scheme>,
    pub config: RunConfig,
    pub traces: Vec<TraceRecord>,
    /// Corpus-level outputs relative to the output directory.
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub skipped_statistics: Vec<SkippedStatistic>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn n_ok(&self) -> usize {
        self.traces.iter().filter(|t| t.status == TraceStatus::Ok).count()
    }

    pub fn n_failed(&self) -> usize {
        self.traces.len() - self.n_ok()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Loaded {
    stack: AttentionStack,
    trace: TokenTrace,
}

struct Slot {
    pair: InputPair,
    dump_digest: InputDigest,
    trace_digest: InputDigest,
    loaded: Result<Loaded>,
    elapsed_ms: f64,
}

fn read_input(path: &Path) -> (InputDigest, Result<Vec<u8>>) {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e));
    let digest = InputDigest {
        path: path.display().to_string(),
        sha256: bytes.as_ref().ok().map(|b| sha256_hex(b)),
    };
    (digest, bytes)
}

fn load_pair(pair: &InputPair, policy: LayerPolicy) -> Slot {
    let start = Instant::now();
    let (dump_digest, dump_bytes) = read_input(&pair.dump);
    let (trace_digest, trace_bytes) = read_input(&pair.trace);
    let loaded = (|| {
        let stack = decode_attention_dump(&dump_bytes?)?;
        ensure_valid(&stack, policy)?;
        let text = String::from_utf8(trace_bytes?)
            .map_err(|e| Error::SchemaViolation(format!("trace is not utf-8: {e}")))?;
        let trace = parse_token_trace(&text)?;
        check_pairing(&stack, &trace)?;
        Ok(Loaded { stack, trace })
    })();
    Slot {
        pair: pair.clone(),
        dump_digest,
        trace_digest,
        loaded,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Per-trace outcome of the shared analysis stage.
pub struct CorpusTrace {
    pub pair: InputPair,
    pub dump_digest: InputDigest,
    pub trace_digest: InputDigest,
    pub result: Result<(TokenTrace, TraceAnalysis)>,
    pub elapsed_ms: f64,
}

/// Loads, validates and analyzes every input on the configured pool. The
/// returned vector is in trace-id order regardless of scheduling.
pub fn analyze_corpus(config: &RunConfig) -> Result<Vec<CorpusTrace>> {
    config.check()?;
    let pairs = discover_inputs(config)?;
    let pool = config.pool()?;
    pool.install(|| {
        let slots: Vec<Slot> = pairs.par_iter().map(|p| load_pair(p, config.layer_policy)).collect();

        let shared_groups = match config.span_mode {
            SpanMode::PerTrace => None,
            SpanMode::CorpusMean => corpus_groups(&slots, config.head_quantile)?,
        };

        Ok(slots
            .into_par_iter()
            .map(|slot| {
                let start = Instant::now();
                let result = slot.loaded.and_then(|Loaded { stack, trace }| {
                    let a = analyze_trace(
                        &slot.pair.trace_id,
                        &stack,
                        &trace,
                        &config.metrics,
                        config.head_quantile,
                        shared_groups.as_ref(),
                    )?;
                    Ok((trace, a))
                });
                CorpusTrace {
                    pair: slot.pair,
                    dump_digest: slot.dump_digest,
                    trace_digest: slot.trace_digest,
                    result,
                    elapsed_ms: slot.elapsed_ms + start.elapsed().as_secs_f64() * 1e3,
                }
            })
            .collect())
    })
}

/// Groups from the mean span table of every successfully loaded trace;
/// `None` when nothing loaded.
fn corpus_groups(slots: &[Slot], quantile: f64) -> Result<Option<HeadGroups>> {
    let tables: Vec<_> = slots
        .par_iter()
        .filter_map(|s| s.loaded.as_ref().ok())
        .map(|l| span_table(&l.stack, l.trace.response_range()))
        .collect::<Result<_>>()?;
    if tables.is_empty() {
        return Ok(None);
    }
    let mean = average_span_tables(&tables)?;
    Ok(Some(group_heads(&mean, quantile)?))
}

fn failed_record(t: &CorpusTrace, err: &Error) -> TraceRecord {
    TraceRecord {
        trace_id: t.pair.trace_id.clone(),
        status: TraceStatus::Failed,
        dump: t.dump_digest.clone(),
        trace: t.trace_digest.clone(),
        outputs: Vec::new(),
        error_code: Some(err.code().to_string()),
        error: Some(err.to_string()),
    }
}

fn ok_record(t: &CorpusTrace, outputs: Vec<String>) -> TraceRecord {
    TraceRecord {
        trace_id: t.pair.trace_id.clone(),
        status: TraceStatus::Ok,
        dump: t.dump_digest.clone(),
        trace: t.trace_digest.clone(),
        outputs,
        error_code: None,
        error: None,
    }
}

/// Pooled coupling statistics over the analyzed traces. Statistics that
/// cannot be computed (no peaks, no receiver heads, no entropy) are returned
/// as skipped rather than failing the run.
pub fn corpus_coupling(
    analyses: &[&TraceAnalysis],
    config: &RunConfig,
) -> (Vec<CouplingEntry>, Vec<SkippedStatistic>) {
    let profiles: Vec<_> = analyses.iter().map(|a| &a.profile).collect();
    let waad_peaks: Vec<IndexSet> = profiles.iter().map(|p| p.waad_peak_set()).collect();
    let fai_peaks: Vec<IndexSet> = profiles.iter().map(|p| p.fai_peak_set()).collect();
    let receiver_peaks: Vec<Option<IndexSet>> = profiles.iter().map(|p| p.receiver_peak_set()).collect();

    let entropy_input: Vec<(&[f64], &IndexSet)> = profiles
        .iter()
        .zip(&waad_peaks)
        .filter_map(|(p, w)| p.entropy.as_deref().map(|h| (h, w)))
        .collect();
    let cooc_input: Vec<(&IndexSet, &IndexSet, usize)> = profiles
        .iter()
        .zip(&receiver_peaks)
        .zip(&fai_peaks)
        .filter_map(|((p, r), f)| r.as_ref().map(|r| (r, f, p.response_len())))
        .collect();
    let follow_input: Vec<(&IndexSet, &IndexSet)> = fai_peaks.iter().zip(&waad_peaks).collect();

    let results: [(&str, Result<LiftStat>); 3] = [
        (
            crate::coupling::ENTROPY_AT_WAAD_PEAKS,
            if entropy_input.is_empty() {
                Err(Error::MissingPanelData("no trace carries entropy".into()))
            } else {
                entropy_at_peaks_pooled(&entropy_input, config.aggregation)
            },
        ),
        (
            crate::coupling::RECEIVER_GLOBAL_COOCCURRENCE,
            if cooc_input.is_empty() {
                Err(Error::EmptyGroup)
            } else {
                cooccurrence_pooled(&cooc_input, config.aggregation)
            },
        ),
        (
            crate::coupling::FAI_FOLLOWS_WAAD,
            if follow_input.is_empty() {
                Err(Error::EmptyPeakSet)
            } else {
                follows_or_coincides_pooled(
                    &follow_input,
                    config.max_lag,
                    config.n_shuffles,
                    config.seed,
                    config.aggregation,
                )
            },
        ),
    ];

    let params = CouplingParams {
        peak_method: config.metrics.peak_method.tag().to_string(),
        max_lag: config.max_lag,
        aggregation: config.aggregation,
        extra: serde_json::Map::new(),
    };
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (name, r) in results {
        match r {
            Ok(stat) => entries.push(CouplingEntry {
                stat,
                params: params.clone(),
            }),
            Err(e) => skipped.push(SkippedStatistic {
                statistic_name: name.to_string(),
                error_code: e.code().to_string(),
                error: e.to_string(),
            }),
        }
    }
    (entries, skipped)
}

fn write_manifest(out: &Path, name: &str, manifest: &RunManifest) -> Result<()> {
    let mut s = serde_json::to_string_pretty(manifest)?;
    s.push('\n');
    write_atomic(&out.join(name), s.as_bytes())
}

fn finish_timings(corpus: &[CorpusTrace], start: Instant) -> Timings {
    Timings {
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        per_trace_ms: corpus.iter().map(|t| (t.pair.trace_id.clone(), t.elapsed_ms)).collect(),
    }
}

fn run_analysis_inner(config: &RunConfig, write_profiles: bool) -> Result<RunManifest> {
    let start = Instant::now();
    let out = config.resolved_output_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let corpus = analyze_corpus(config)?;

    let mut traces = Vec::with_capacity(corpus.len());
    let mut ok: Vec<&TraceAnalysis> = Vec::new();
    for t in &corpus {
        match &t.result {
            Ok((_, a)) => {
                let mut outputs = Vec::new();
                if write_profiles {
                    let id = &t.pair.trace_id;
                    let files = [
                        (format!("profiles/{id}.csv"), a.profile.to_csv()?),
                        (format!("profiles/{id}.json"), a.profile.to_json()?),
                        (format!("heads/{id}.csv"), a.heads_csv()),
                    ];
                    for (rel, body) in files {
                        write_atomic(&out.join(&rel), body.as_bytes())?;
                        outputs.push(rel);
                    }
                }
                traces.push(ok_record(t, outputs));
                ok.push(a);
            }
            Err(e) => traces.push(failed_record(t, e)),
        }
    }

    let (entries, skipped) = corpus_coupling(&ok, config);
    write_atomic(&out.join("coupling.json"), report_json(&entries)?.as_bytes())?;
    write_atomic(&out.join("coupling.csv"), report_csv(&entries).as_bytes())?;

    let manifest = RunManifest {
        version: crate::VERSION.to_string(),
        command: if write_profiles { "analyze" } else { "couple" }.to_string(),
        scheme: None,
        config: config.clone(),
        traces,
        artifacts: vec!["coupling.json".into(), "coupling.csv".into()],
        skipped_statistics: skipped,
        timings: finish_timings(&corpus, start),
    };
    write_manifest(&out, "manifest.json", &manifest)?;
    Ok(manifest)
}

/// Full analysis: per-trace profiles and head tables, the pooled coupling
/// report and `manifest.json` (written last).
pub fn run_analysis(config: &RunConfig) -> Result<RunManifest> {
    run_analysis_inner(config, true)
}

/// Coupling report only; no per-trace files.
pub fn run_coupling(config: &RunConfig) -> Result<RunManifest> {
    run_analysis_inner(config, false)
}

/// One line of `weights/<id>.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub trace_id: String,
    pub gamma: Vec<f64>,
    pub selected_local: Vec<usize>,
    pub selected_global: Vec<usize>,
    pub dominated: Vec<usize>,
    pub intro_map: BTreeMap<usize, usize>,
    pub params: CreditParams,
}

impl WeightRecord {
    pub fn new(trace_id: &str, w: &CreditWeights) -> Self {
        Self {
            trace_id: trace_id.to_string(),
            gamma: w.gamma.clone(),
            selected_local: w.selected_local.clone(),
            selected_global: w.selected_global.clone(),
            dominated: w.dominated.clone(),
            intro_map: w.intro_map.clone(),
            params: w.params,
        }
    }

    /// Compact JSON plus a trailing newline.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Weights for one analyzed trace under `scheme`.
pub fn trace_weights(analysis: &TraceAnalysis, scheme: Scheme, params: &CreditParams) -> Result<CreditWeights> {
    let p = &analysis.profile;
    match scheme {
        Scheme::Local => gamma_local(&p.delta, p.response_len(), params),
        Scheme::Global => gamma_global(p.fai_global_response(), params),
        Scheme::Coupled => gamma_coupled(p.fai_global_response(), &p.waad, &p.delta, params),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    /// Set size -> number of traces.
    pub counts: BTreeMap<usize, usize>,
    pub mean: f64,
}

impl SizeDistribution {
    fn from_sizes(sizes: impl Iterator<Item = usize>) -> Self {
        let mut counts = BTreeMap::new();
        let (mut total, mut n) = (0usize, 0usize);
        for s in sizes {
            *counts.entry(s).or_insert(0) += 1;
            total += s;
            n += 1;
        }
        let mean = if n == 0 { 0.0 } else { total as f64 / n as f64 };
        Self { counts, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaHistogram {
    /// `bins + 1` edges spanning `[1, 1 + 2(gamma_amp - 1)]`.
    pub edges: Vec<f64>,
    /// Token counts per bin; the last bin includes its upper edge.
    pub counts: Vec<usize>,
}

const HISTOGRAM_BINS: usize = 10;

impl GammaHistogram {
    fn new(gamma_amp: f64, values: impl Iterator<Item = f64>) -> Self {
        let lo = 1.0;
        let hi = (1.0 + 2.0 * (gamma_amp - 1.0)).max(lo + f64::EPSILON);
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let edges = (0..=HISTOGRAM_BINS).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; HISTOGRAM_BINS];
        for v in values {
            let bin = (((v - lo) / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    pub scheme: Scheme,
    pub n_traces: usize,
    pub n_tokens: usize,
    pub selected_local: SizeDistribution,
    pub selected_global: SizeDistribution,
    pub dominated: SizeDistribution,
    pub intros: SizeDistribution,
    pub gamma_histogram: GammaHistogram,
}

impl WeightsSummary {
    pub fn new(scheme: Scheme, params: &CreditParams, weights: &[&CreditWeights]) -> Self {
        let dist = |f: &dyn Fn(&CreditWeights) -> usize| SizeDistribution::from_sizes(weights.iter().map(|w| f(w)));
        Self {
            scheme,
            n_traces: weights.len(),
            n_tokens: weights.iter().map(|w| w.gamma.len()).sum(),
            selected_local: dist(&|w| w.selected_local.len()),
            selected_global: dist(&|w| w.selected_global.len()),
            dominated: dist(&|w| w.dominated.len()),
            intros: dist(&|w| w.intro_map.values().collect::<std::collections::BTreeSet<_>>().len()),
            gamma_histogram: GammaHistogram::new(
                params.gamma_amp,
                weights.iter().flat_map(|w| w.gamma.iter().copied()),
            ),
        }
    }
}

/// Credit weights for every trace: `weights/<id>.jsonl`,
/// `weights_summary.json` and `weights_manifest.json` (written last).
pub fn run_credit(config: &RunConfig, scheme: Scheme) -> Result<RunManifest> {
    let start = Instant::now();
    let out = config.resolved_output_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let corpus = analyze_corpus(config)?;

    let mut traces = Vec::with_capacity(corpus.len());
    let mut all = Vec::new();
    for t in &corpus {
        let analysis = match &t.result {
            Ok((_, a)) => a,
            Err(e) => {
                traces.push(failed_record(t, e));
                continue;
            }
        };
        match trace_weights(analysis, scheme, &config.credit) {
            Ok(w) => {
                let rel = format!("weights/{}.jsonl", t.pair.trace_id);
                let line = WeightRecord::new(&t.pair.trace_id, &w).to_jsonl()?;
                write_atomic(&out.join(&rel), line.as_bytes())?;
                traces.push(ok_record(t, vec![rel]));
                all.push(w);
            }
            Err(e) => traces.push(failed_record(t, &e)),
        }
    }

    let refs: Vec<&CreditWeights> = all.iter().collect();
    let summary = WeightsSummary::new(scheme, &config.credit, &refs);
    let mut s = serde_json::to_string_pretty(&summary)?;
    s.push('\n');
    write_atomic(&out.join("weights_summary.json"), s.as_bytes())?;

    let manifest = RunManifest {
        version: crate::VERSION.to_string(),
        command: "weights".into(),
        scheme: Some(scheme),
        config: config.clone(),
        traces,
        artifacts: vec!["weights_summary.json".into()],
        skipped_statistics: Vec::new(),
        timings: finish_timings(&corpus, start),
    };
    write_manifest(&out, "weights_manifest.json", &manifest)?;
    Ok(manifest)
}

/// Analysis of a single trace of the configured corpus, honoring
/// `span_mode` (corpus-mean grouping still reads every input).
pub fn analyze_one(config: &RunConfig, trace_id: &str) -> Result<(TokenTrace, TraceAnalysis)> {
    config.check()?;
    let pairs = discover_inputs(config)?;
    let pair = pairs
        .iter()
        .find(|p| p.trace_id == trace_id)
        .ok_or_else(|| Error::InvalidConfig(format!("trace `{trace_id}` not found among the inputs")))?;
    let groups = match config.span_mode {
        SpanMode::PerTrace => None,
        SpanMode::CorpusMean => {
            let pool = config.pool()?;
            let slots: Vec<Slot> =
                pool.install(|| pairs.par_iter().map(|p| load_pair(p, config.layer_policy)).collect());
            corpus_groups(&slots, config.head_quantile)?
        }
    };
    let Loaded { stack, trace } = load_pair(pair, config.layer_policy).loaded?;
    let a = analyze_trace(trace_id, &stack, &trace, &config.metrics, config.head_quantile, groups.as_ref())?;
    Ok((trace, a))
}
