// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats: the binary ATTD attention dump and the JSON token trace.
//!
//! ATTD layout (all integers little-endian):
//!
//! ```text
//! "ATTD" | u16 version=1 | u32 N | u32 L | u32 entry_count
//! entry_count x ( u16 layer | u16 head | N*N f32 row-major weights )
//! ```
//!
//! Weights are widened to `f64` on load and narrowed back to `f32` on write,
//! so loading and re-writing a dump reproduces it byte for byte. The loader
//! never renormalizes; [`validate_stack`] reports anything out of tolerance.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{AttentionMap, ResponseRange};
use crate::rhythm::entropy_series;

pub const ATTD_MAGIC: [u8; 4] = *b"ATTD";
pub const ATTD_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

/// Allowed deviation of a row sum (or probability row sum) from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// One captured head: its coordinates and `N x N` map.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadEntry {
    pub layer: u16,
    pub head: u16,
    pub map: AttentionMap,
}

/// Identifies a head by `(layer, head)`; ordering is lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: u16,
    pub head: u16,
}

impl HeadId {
    pub fn new(layer: u16, head: u16) -> Self {
        Self { layer, head }
    }
}

impl HeadEntry {
    pub fn id(&self) -> HeadId {
        HeadId::new(self.layer, self.head)
    }
}

/// Per-head causal attention maps for one prompt+response sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    sequence_length: usize,
    layer_count: u32,
    entries: Vec<HeadEntry>,
}

impl AttentionStack {
    /// Assembles a stack. Only shape is checked here; content invariants
    /// (causality, row sums, unique heads, layer range) are the job of
    /// [`validate_stack`].
    pub fn new(sequence_length: usize, layer_count: u32, entries: Vec<HeadEntry>) -> Result<Self> {
        if sequence_length == 0 {
            return Err(Error::DimensionMismatch("sequence length must be positive".into()));
        }
        if layer_count == 0 {
            return Err(Error::DimensionMismatch("layer count must be positive".into()));
        }
        for e in &entries {
            if e.map.size() != sequence_length {
                return Err(Error::DimensionMismatch(format!(
                    "head ({},{}) map is {}x{}, stack N={sequence_length}",
                    e.layer,
                    e.head,
                    e.map.size(),
                    e.map.size()
                )));
            }
        }
        Ok(Self {
            sequence_length,
            layer_count,
            entries,
        })
    }

    pub fn sequence_length(&self) -> usize {
        self.sequence_length
    }

    pub fn layer_count(&self) -> u32 {
        self.layer_count
    }

    pub fn entries(&self) -> &[HeadEntry] {
        &self.entries
    }

    pub fn get(&self, id: HeadId) -> Option<&HeadEntry> {
        self.entries.iter().find(|e| e.id() == id)
    }
}

// ---------------------------------------------------------------------------
// ATTD codec
// ---------------------------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(Error::TruncatedPayload {
                needed: len,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes an ATTD dump held in memory.
pub fn decode_attention_dump(bytes: &[u8]) -> Result<AttentionStack> {
    if bytes.len() < 4 || bytes[..4] != ATTD_MAGIC {
        return Err(Error::BadMagic {
            found: bytes.iter().take(4).copied().collect(),
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16()?;
    if version != ATTD_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let n = r.u32()? as usize;
    let layer_count = r.u32()?;
    let entry_count = r.u32()? as usize;
    if n == 0 {
        return Err(Error::DimensionMismatch("header declares N=0".into()));
    }

    let record_len = n
        .checked_mul(n)
        .and_then(|nn| nn.checked_mul(4))
        .and_then(|w| w.checked_add(4))
        .ok_or_else(|| Error::DimensionMismatch(format!("N={n} overflows record size")))?;
    let payload = bytes.len() - HEADER_LEN;
    let needed = record_len
        .checked_mul(entry_count)
        .ok_or_else(|| Error::DimensionMismatch("entry count overflows payload size".into()))?;
    if payload != needed {
        return Err(payload_error(n, entry_count, payload, needed));
    }

    let mut entries = Vec::with_capacity(entry_count);
    for _ in 0..entry_count {
        let layer = r.u16()?;
        let head = r.u16()?;
        let raw = r.take(n * n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        entries.push(HeadEntry {
            layer,
            head,
            map: AttentionMap::from_vec(n, data)?,
        });
    }
    AttentionStack::new(n, layer_count, entries)
}

/// Classifies a payload whose size disagrees with the header. A payload that
/// divides evenly into records of some other square size is reported as a
/// dimension mismatch; a short payload otherwise counts as truncation.
fn payload_error(n: usize, entry_count: usize, payload: usize, needed: usize) -> Error {
    if entry_count > 0 && payload % entry_count == 0 {
        let per_record = payload / entry_count;
        if per_record > 4 && (per_record - 4) % 4 == 0 {
            let values = (per_record - 4) / 4;
            let side = (values as f64).sqrt().round() as usize;
            if side * side == values && side != n {
                return Error::DimensionMismatch(format!(
                    "header declares N={n} but payload holds {side}x{side} maps"
                ));
            }
        }
    }
    if payload < needed {
        Error::TruncatedPayload {
            needed,
            available: payload,
        }
    } else {
        Error::DimensionMismatch(format!(
            "payload has {} bytes beyond the {entry_count} declared records",
            payload - needed
        ))
    }
}

/// Encodes a stack as ATTD bytes (weights narrowed to binary32).
pub fn encode_attention_dump(stack: &AttentionStack) -> Vec<u8> {
    let n = stack.sequence_length;
    let mut out = Vec::with_capacity(HEADER_LEN + stack.entries.len() * (4 + 4 * n * n));
    out.extend_from_slice(&ATTD_MAGIC);
    out.extend_from_slice(&ATTD_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&stack.layer_count.to_le_bytes());
    out.extend_from_slice(&(stack.entries.len() as u32).to_le_bytes());
    for e in &stack.entries {
        out.extend_from_slice(&e.layer.to_le_bytes());
        out.extend_from_slice(&e.head.to_le_bytes());
        for &w in e.map.as_slice() {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_attention_dump(path: impl AsRef<Path>) -> Result<AttentionStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_attention_dump(&bytes)
}

pub fn write_attention_dump(path: impl AsRef<Path>, stack: &AttentionStack) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_attention_dump(stack)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Which layers a dump is expected to contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerPolicy {
    /// Any layer below `L` is accepted.
    #[default]
    Lenient,
    /// The layer set must equal [`sampled_layers`] for the model's `L`.
    Strict,
}

/// Five evenly spaced layer indices over `[floor(L/3), floor(2L/3)]`,
/// rounded to the nearest integer (halves away from zero) and deduplicated.
pub fn sampled_layers(layer_count: u32) -> Vec<u32> {
    let lo = (layer_count / 3) as f64;
    let hi = (2 * layer_count / 3) as f64;
    let mut out: Vec<u32> = (0..5)
        .map(|i| (lo + (hi - lo) * i as f64 / 4.0).round() as u32)
        .collect();
    out.dedup();
    out
}

/// Where a violation was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Location {
    Stack,
    Layer { layer: u32 },
    Head { layer: u16, head: u16 },
    Row { layer: u16, head: u16, row: usize },
    Cell { layer: u16, head: u16, row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub location: Location,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            ok: violations.is_empty(),
            violations,
        }
    }

    pub fn summary(&self) -> String {
        match self.violations.first() {
            None => "ok".to_string(),
            Some(v) => format!(
                "{} violation(s); first: {} at {:?} (measured {})",
                self.violations.len(),
                v.rule,
                v.location,
                v.measured
            ),
        }
    }
}

/// Checks every stack invariant and, under [`LayerPolicy::Strict`], the
/// sampled-layer set. Nothing is thrown; each failure becomes a violation.
///
/// Rules: `layer-range`, `duplicate-head`, `invalid-weight` (negative or
/// non-finite; measured = the value), `causal` (first nonzero above the
/// diagonal per row), `row-stochastic` (measured = the row sum), and
/// `layer-policy` (measured = 0 for a required layer that is missing, 1 for
/// a present layer that is not required).
pub fn validate_stack(stack: &AttentionStack, policy: LayerPolicy) -> ValidationReport {
    let mut violations = Vec::new();
    let n = stack.sequence_length;
    let mut seen = BTreeSet::new();

    for e in &stack.entries {
        if u32::from(e.layer) >= stack.layer_count {
            violations.push(Violation {
                rule: "layer-range".into(),
                location: Location::Head {
                    layer: e.layer,
                    head: e.head,
                },
                measured: f64::from(e.layer),
            });
        }
        if !seen.insert(e.id()) {
            violations.push(Violation {
                rule: "duplicate-head".into(),
                location: Location::Head {
                    layer: e.layer,
                    head: e.head,
                },
                measured: f64::from(e.head),
            });
        }
        for t in 0..n {
            let row = e.map.row(t);
            if let Some((s, &w)) = row.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
                violations.push(Violation {
                    rule: "invalid-weight".into(),
                    location: Location::Cell {
                        layer: e.layer,
                        head: e.head,
                        row: t,
                        col: s,
                    },
                    measured: w,
                });
            }
            if let Some((off, &w)) = row[t + 1..].iter().enumerate().find(|(_, w)| **w != 0.0) {
                violations.push(Violation {
                    rule: "causal".into(),
                    location: Location::Cell {
                        layer: e.layer,
                        head: e.head,
                        row: t,
                        col: t + 1 + off,
                    },
                    measured: w,
                });
            }
            let sum: f64 = row[..=t].iter().sum();
            if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                violations.push(Violation {
                    rule: "row-stochastic".into(),
                    location: Location::Row {
                        layer: e.layer,
                        head: e.head,
                        row: t,
                    },
                    measured: sum,
                });
            }
        }
    }

    if policy == LayerPolicy::Strict {
        let required: BTreeSet<u32> = sampled_layers(stack.layer_count).into_iter().collect();
        let present: BTreeSet<u32> = stack.entries.iter().map(|e| u32::from(e.layer)).collect();
        for &layer in required.difference(&present) {
            violations.push(Violation {
                rule: "layer-policy".into(),
                location: Location::Layer { layer },
                measured: 0.0,
            });
        }
        for &layer in present.difference(&required) {
            violations.push(Violation {
                rule: "layer-policy".into(),
                location: Location::Layer { layer },
                measured: 1.0,
            });
        }
    }

    ValidationReport::from_violations(violations)
}

/// Fails unless the stack passes validation under `policy`.
pub fn ensure_valid(stack: &AttentionStack, policy: LayerPolicy) -> Result<()> {
    let report = validate_stack(stack, policy);
    if report.ok {
        Ok(())
    } else {
        Err(Error::InvalidStack(report.summary()))
    }
}

// ---------------------------------------------------------------------------
// Token traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub id: i64,
    pub text: String,
}

/// Tokens of one prompt+response sequence plus optional per-token signals.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrace {
    pub tokens: Vec<Token>,
    pub response_start: usize,
    /// Per response token entropy in nats.
    pub entropy: Option<Vec<f64>>,
    pub prob_rows: Option<Vec<Vec<f64>>>,
    pub reward: Option<f64>,
    pub group_id: Option<String>,
    entropy_derived: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceDoc {
    tokens: Vec<Token>,
    response_start: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entropy: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob_rows: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_id: Option<String>,
}

impl TokenTrace {
    /// Builds and checks a trace. When `prob_rows` is given without
    /// `entropy`, the entropy series is derived from it.
    pub fn new(
        tokens: Vec<Token>,
        response_start: usize,
        entropy: Option<Vec<f64>>,
        prob_rows: Option<Vec<Vec<f64>>>,
        reward: Option<f64>,
        group_id: Option<String>,
    ) -> Result<Self> {
        if response_start == 0 || response_start >= tokens.len() {
            return Err(Error::InconsistentLengths(format!(
                "response_start {response_start} must lie in 1..{}",
                tokens.len()
            )));
        }
        let n_resp = tokens.len() - response_start;
        if let Some(h) = &entropy {
            if h.len() != n_resp {
                return Err(Error::InconsistentLengths(format!(
                    "entropy has {} values for {n_resp} response tokens",
                    h.len()
                )));
            }
            if let Some(v) = h.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::SchemaViolation(format!("entropy value {v} is not a nonnegative real")));
            }
        }
        if let Some(rows) = &prob_rows {
            if rows.len() != n_resp {
                return Err(Error::InconsistentLengths(format!(
                    "prob_rows has {} rows for {n_resp} response tokens",
                    rows.len()
                )));
            }
            for (t, row) in rows.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                    return Err(Error::SchemaViolation(format!("prob_rows[{t}] sums to {sum}")));
                }
            }
        }
        let (entropy, entropy_derived) = match (entropy, &prob_rows) {
            (Some(h), _) => (Some(h), false),
            (None, Some(rows)) => (Some(entropy_series(rows)?), true),
            (None, None) => (None, false),
        };
        Ok(Self {
            tokens,
            response_start,
            entropy,
            prob_rows,
            reward,
            group_id,
            entropy_derived,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn response_len(&self) -> usize {
        self.tokens.len() - self.response_start
    }

    pub fn response_range(&self) -> ResponseRange {
        ResponseRange::new(self.response_start, self.tokens.len())
    }

    /// True when `entropy` was computed from `prob_rows` rather than read.
    pub fn entropy_is_derived(&self) -> bool {
        self.entropy_derived
    }
}

pub fn parse_token_trace(text: &str) -> Result<TokenTrace> {
    let doc: TraceDoc =
        serde_json::from_str(text).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    TokenTrace::new(
        doc.tokens,
        doc.response_start,
        doc.entropy,
        doc.prob_rows,
        doc.reward,
        doc.group_id,
    )
}

/// Canonical compact JSON followed by a newline. Derived entropy is not
/// written back, so the output reflects only what the source file held.
pub fn render_token_trace(trace: &TokenTrace) -> Result<String> {
    let doc = TraceDoc {
        tokens: trace.tokens.clone(),
        response_start: trace.response_start,
        entropy: if trace.entropy_derived {
            None
        } else {
            trace.entropy.clone()
        },
        prob_rows: trace.prob_rows.clone(),
        reward: trace.reward,
        group_id: trace.group_id.clone(),
    };
    let mut s = serde_json::to_string(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn load_token_trace(path: impl AsRef<Path>) -> Result<TokenTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_token_trace(&text)
}

pub fn write_token_trace(path: impl AsRef<Path>, trace: &TokenTrace) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_token_trace(trace)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_token_stack() -> AttentionStack {
        let map = AttentionMap::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        AttentionStack::new(2, 1, vec![HeadEntry { layer: 0, head: 0, map }]).unwrap()
    }

    #[test]
    fn smallest_dump_loads() {
        let bytes = encode_attention_dump(&two_token_stack());
        let stack = decode_attention_dump(&bytes).unwrap();
        assert_eq!(stack.sequence_length(), 2);
        assert_eq!(stack.entries().len(), 1);
        for t in 0..2 {
            let sum: f64 = stack.entries()[0].map.row(t).iter().sum();
            assert_eq!(sum, 1.0);
        }
        assert_eq!(encode_attention_dump(&stack), bytes);
    }

    #[test]
    fn header_n_larger_than_payload_is_dimension_mismatch() {
        let mut bytes = encode_attention_dump(&two_token_stack());
        bytes[6..10].copy_from_slice(&3u32.to_le_bytes());
        let err = decode_attention_dump(&bytes).unwrap_err();
        assert_eq!(err.code(), "dimension-mismatch", "{err}");
    }

    #[test]
    fn short_payload_is_truncated() {
        let bytes = encode_attention_dump(&two_token_stack());
        let err = decode_attention_dump(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(err.code(), "truncated-payload");
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut bytes = encode_attention_dump(&two_token_stack());
        bytes[0] = b'X';
        assert_eq!(decode_attention_dump(&bytes).unwrap_err().code(), "bad-magic");
        assert_eq!(decode_attention_dump(b"AT").unwrap_err().code(), "bad-magic");
        let mut bytes = encode_attention_dump(&two_token_stack());
        bytes[4] = 2;
        assert_eq!(decode_attention_dump(&bytes).unwrap_err().code(), "version-unsupported");
    }

    #[test]
    fn strict_layer_set_for_36_layers() {
        assert_eq!(sampled_layers(36), vec![12, 15, 18, 21, 24]);
    }

    #[test]
    fn sampled_layers_matches_linspace_enumeration() {
        for l in 1..=128u32 {
            let lo = l / 3;
            let hi = 2 * l / 3;
            let mut expect: Vec<u32> = [0.0, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|f| (lo as f64 + f * (hi - lo) as f64).round() as u32)
                .collect();
            expect.dedup();
            let got = sampled_layers(l);
            assert_eq!(got, expect, "L={l}");
            assert!(got.iter().all(|&x| x >= lo && x <= hi && x < l.max(1)));
        }
    }

    #[test]
    fn valid_two_token_stack_is_ok() {
        let report = validate_stack(&two_token_stack(), LayerPolicy::Lenient);
        assert!(report.ok);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn short_row_is_reported() {
        let map = AttentionMap::from_rows(&[vec![1.0, 0.0], vec![0.45, 0.45]]).unwrap();
        let stack = AttentionStack::new(2, 1, vec![HeadEntry { layer: 0, head: 3, map }]).unwrap();
        let report = validate_stack(&stack, LayerPolicy::Lenient);
        assert!(!report.ok);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!(v.rule, "row-stochastic");
        assert_eq!(v.location, Location::Row { layer: 0, head: 3, row: 1 });
        assert!((v.measured - 0.9).abs() < 1e-12);
    }

    #[test]
    fn causal_duplicate_and_range_violations() {
        let upper = AttentionMap::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let good = AttentionMap::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let stack = AttentionStack::new(
            2,
            2,
            vec![
                HeadEntry { layer: 0, head: 0, map: upper },
                HeadEntry { layer: 0, head: 0, map: good.clone() },
                HeadEntry { layer: 5, head: 0, map: good },
            ],
        )
        .unwrap();
        let report = validate_stack(&stack, LayerPolicy::Lenient);
        let rules: BTreeSet<&str> = report.violations.iter().map(|v| v.rule.as_str()).collect();
        assert!(rules.contains("causal"));
        assert!(rules.contains("row-stochastic"));
        assert!(rules.contains("duplicate-head"));
        assert!(rules.contains("layer-range"));
    }

    #[test]
    fn strict_policy_reports_missing_layers() {
        let report = validate_stack(
            &AttentionStack::new(2, 36, two_token_stack().entries().to_vec()).unwrap(),
            LayerPolicy::Strict,
        );
        let missing: Vec<_> = report
            .violations
            .iter()
            .filter(|v| v.rule == "layer-policy" && v.measured == 0.0)
            .collect();
        assert_eq!(missing.len(), 5);
        assert!(report
            .violations
            .iter()
            .any(|v| v.location == Location::Layer { layer: 0 } && v.measured == 1.0));
    }

    fn trace_json(extra: &str) -> String {
        format!(
            r#"{{"tokens":[{{"id":1,"text":"a"}},{{"id":2,"text":"b"}},{{"id":3,"text":"c"}},{{"id":4,"text":"d"}},{{"id":5,"text":"e"}}],"response_start":3{extra}}}"#
        )
    }

    #[test]
    fn trace_with_three_prompt_tokens() {
        let trace = parse_token_trace(&trace_json("")).unwrap();
        assert_eq!(trace.len(), 5);
        assert_eq!(trace.response_len(), 2);
        assert!(trace.entropy.is_none());
    }

    #[test]
    fn wrong_entropy_length() {
        let err = parse_token_trace(&trace_json(r#","entropy":[0.1]"#)).unwrap_err();
        assert_eq!(err.code(), "inconsistent-lengths");
    }

    #[test]
    fn entropy_derived_from_uniform_rows() {
        let trace = parse_token_trace(&trace_json(
            r#","prob_rows":[[0.25,0.25,0.25,0.25],[0.25,0.25,0.25,0.25]]"#,
        ))
        .unwrap();
        let h = trace.entropy.as_ref().unwrap();
        assert!(trace.entropy_is_derived());
        for v in h {
            assert!((v - 4f64.ln()).abs() < 1e-12);
            assert!((v - 1.386294).abs() < 1e-6);
        }
        // derived entropy is not written back
        let text = render_token_trace(&trace).unwrap();
        assert!(!text.contains("entropy"));
    }

    #[test]
    fn schema_violations() {
        assert_eq!(
            parse_token_trace(r#"{"response_start":1}"#).unwrap_err().code(),
            "schema-violation"
        );
        assert_eq!(
            parse_token_trace(&trace_json(r#","reward":"high""#)).unwrap_err().code(),
            "schema-violation"
        );
        assert_eq!(
            parse_token_trace(&trace_json(r#","prob_rows":[[0.5,0.4],[1.0]]"#))
                .unwrap_err()
                .code(),
            "schema-violation"
        );
    }

    #[test]
    fn response_start_bounds() {
        let text = trace_json("").replace("\"response_start\":3", "\"response_start\":0");
        assert_eq!(parse_token_trace(&text).unwrap_err().code(), "inconsistent-lengths");
        let text = trace_json("").replace("\"response_start\":3", "\"response_start\":5");
        assert_eq!(parse_token_trace(&text).unwrap_err().code(), "inconsistent-lengths");
    }
}
