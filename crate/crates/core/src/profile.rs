// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single-trace analysis: head grouping, group maps and the aligned
//! [`RhythmProfile`] series, with CSV and JSON export.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{
    aggregate_group, group_heads, select_receiver_heads, span_table, AggregatedMap, GroupKind,
    HeadGroups, HeadSpanTable, ReceiverSelection,
};
use crate::index_set::IndexSet;
use crate::rhythm::{detect_peaks, fai_series, waad_delta, waad_series_with, MetricParams};
use crate::tensor_io::{AttentionStack, HeadId, TokenTrace};

/// Aligned per-token series for one trace.
///
/// `waad`, `delta`, `entropy` and the peak sets are indexed from the first
/// response token; `fai_global` and `fai_receiver` cover every position of
/// the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhythmProfile {
    pub trace_id: String,
    pub tokens: Vec<String>,
    pub response_start: usize,
    pub waad: Vec<f64>,
    pub delta: Vec<f64>,
    pub fai_global: Vec<f64>,
    /// Positions whose FAI horizon contained no response row.
    pub fai_uncovered: Vec<usize>,
    pub fai_receiver: Option<Vec<f64>>,
    pub entropy: Option<Vec<f64>>,
    pub waad_peaks: Vec<usize>,
    pub fai_peaks: Vec<usize>,
    pub receiver_peaks: Option<Vec<usize>>,
    pub peak_method: String,
    pub params: MetricParams,
}

impl RhythmProfile {
    pub fn n_positions(&self) -> usize {
        self.tokens.len()
    }

    pub fn response_len(&self) -> usize {
        self.waad.len()
    }

    /// Global FAI over response positions only.
    pub fn fai_global_response(&self) -> &[f64] {
        &self.fai_global[self.response_start..]
    }

    pub fn fai_receiver_response(&self) -> Option<&[f64]> {
        self.fai_receiver.as_deref().map(|f| &f[self.response_start..])
    }

    fn peak_set(&self, peaks: &[usize]) -> IndexSet {
        IndexSet::new(peaks.to_vec(), self.response_len()).expect("peaks lie within the response")
    }

    pub fn waad_peak_set(&self) -> IndexSet {
        self.peak_set(&self.waad_peaks)
    }

    pub fn fai_peak_set(&self) -> IndexSet {
        self.peak_set(&self.fai_peaks)
    }

    pub fn receiver_peak_set(&self) -> Option<IndexSet> {
        self.receiver_peaks.as_deref().map(|p| self.peak_set(p))
    }

    /// `pos,token,waad,delta,fai_global,fai_receiver,entropy`, one row per
    /// sequence position; cells with no value are left empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::SchemaViolation(format!("csv: {e}"));
        w.write_record(["pos", "token", "waad", "delta", "fai_global", "fai_receiver", "entropy"])
            .map_err(csv_err)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for pos in 0..self.n_positions() {
            let r = pos.checked_sub(self.response_start);
            w.write_record([
                pos.to_string(),
                self.tokens[pos].clone(),
                cell(r.map(|i| self.waad[i])),
                cell(r.and_then(|i| self.delta.get(i).copied())),
                cell(Some(self.fai_global[pos])),
                cell(self.fai_receiver.as_ref().map(|f| f[pos])),
                cell(r.and_then(|i| self.entropy.as_ref().map(|h| h[i]))),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::SchemaViolation(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Everything computed for one trace.
#[derive(Debug, Clone)]
pub struct TraceAnalysis {
    pub spans: HeadSpanTable,
    pub groups: HeadGroups,
    pub receivers: ReceiverSelection,
    pub local_map: AggregatedMap,
    pub global_map: AggregatedMap,
    pub receiver_map: Option<AggregatedMap>,
    pub profile: RhythmProfile,
}

/// Checks that a stack and a trace describe the same sequence.
pub fn check_pairing(stack: &AttentionStack, trace: &TokenTrace) -> Result<()> {
    if stack.sequence_length() != trace.len() {
        return Err(Error::DimensionMismatch(format!(
            "dump has N={} but trace has {} tokens",
            stack.sequence_length(),
            trace.len()
        )));
    }
    Ok(())
}

/// Runs the per-trace analysis. `groups` overrides span-based grouping (for
/// corpus-level grouping); otherwise heads are grouped from this trace's
/// spans at `head_quantile`. Receiver heads use the same quantile.
pub fn analyze_trace(
    trace_id: &str,
    stack: &AttentionStack,
    trace: &TokenTrace,
    params: &MetricParams,
    head_quantile: f64,
    groups: Option<&HeadGroups>,
) -> Result<TraceAnalysis> {
    params.check()?;
    check_pairing(stack, trace)?;
    let range = trace.response_range();
    let spans = span_table(stack, range)?;
    let groups = match groups {
        Some(g) => g.clone(),
        None => group_heads(&spans, head_quantile)?,
    };
    let receivers = select_receiver_heads(stack, range, head_quantile)?;

    let local_map = aggregate_group(stack, &groups.local_set, GroupKind::Local)?;
    let global_map = aggregate_group(stack, &groups.global_set, GroupKind::Global)?;
    let receiver_map = if receivers.selected.is_empty() {
        None
    } else {
        Some(aggregate_group(stack, &receivers.selected, GroupKind::Receiver)?)
    };

    let waad = waad_series_with(&local_map.map, range, params.window, params.sink)?;
    let delta = if waad.len() >= 2 { waad_delta(&waad)? } else { Vec::new() };
    let fai = fai_series(&global_map.map, range, params.h_lo, params.h_hi)?;
    let fai_receiver = receiver_map
        .as_ref()
        .map(|m| fai_series(&m.map, range, params.h_lo, params.h_hi))
        .transpose()?;

    let waad_peaks = detect_peaks(&waad, params.peak_method)?;
    let fai_peaks = detect_peaks(fai.response_slice(range), params.peak_method)?;
    let receiver_peaks = fai_receiver
        .as_ref()
        .map(|f| detect_peaks(f.response_slice(range), params.peak_method))
        .transpose()?;

    let profile = RhythmProfile {
        trace_id: trace_id.to_string(),
        tokens: trace.tokens.iter().map(|t| t.text.clone()).collect(),
        response_start: range.start,
        waad,
        delta,
        fai_global: fai.values,
        fai_uncovered: fai.uncovered.indices().to_vec(),
        fai_receiver: fai_receiver.map(|f| f.values),
        entropy: trace.entropy.clone(),
        waad_peaks: waad_peaks.indices().to_vec(),
        fai_peaks: fai_peaks.indices().to_vec(),
        receiver_peaks: receiver_peaks.map(|p| p.indices().to_vec()),
        peak_method: params.peak_method.tag().to_string(),
        params: *params,
    };

    Ok(TraceAnalysis {
        spans,
        groups,
        receivers,
        local_map,
        global_map,
        receiver_map,
        profile,
    })
}

impl TraceAnalysis {
    pub fn heads_csv(&self) -> String {
        let receivers: BTreeSet<HeadId> = self.receivers.selected.clone();
        crate::heads::span_table_csv(&self.spans, Some(&self.groups), Some(&receivers))
    }
}
