// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-token series over a response: windowed backward attention distance
//! (WAAD), future attention influence (FAI), predictive entropy and the WAAD
//! transition magnitude, plus the selection primitives built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_set::IndexSet;
use crate::matrix::{AttentionMap, ResponseRange};

/// Whether the first key column (the usual attention sink) counts toward WAAD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinkColumn {
    #[default]
    Include,
    Exclude,
}

/// How peaks of a series are picked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum PeakMethod {
    /// The `ceil(q * n)` largest values.
    Topq { q: f64 },
    /// Strict-left / weak-right interior local maxima at least `kappa`
    /// population standard deviations above the series mean.
    LocalMax { kappa: f64 },
}

impl PeakMethod {
    /// Parses a method tag (`topq` or `local-max`) with its parameter.
    pub fn from_tag(tag: &str, q: f64, kappa: f64) -> Result<Self> {
        match tag {
            "topq" => Ok(PeakMethod::Topq { q }),
            "local-max" => Ok(PeakMethod::LocalMax { kappa }),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            PeakMethod::Topq { .. } => "topq",
            PeakMethod::LocalMax { .. } => "local-max",
        }
    }
}

impl Default for PeakMethod {
    fn default() -> Self {
        PeakMethod::Topq { q: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    /// WAAD clipping window `W`.
    pub window: usize,
    pub h_lo: usize,
    pub h_hi: usize,
    /// Quantile used for TopQ selections.
    pub q: f64,
    pub peak_method: PeakMethod,
    pub sink: SinkColumn,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            window: 10,
            h_lo: 10,
            h_hi: 50,
            q: 0.4,
            peak_method: PeakMethod::default(),
            sink: SinkColumn::Include,
        }
    }
}

impl MetricParams {
    pub fn check(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if self.h_lo >= self.h_hi {
            return Err(Error::InvalidConfig(format!(
                "h_lo ({}) must be below h_hi ({})",
                self.h_lo, self.h_hi
            )));
        }
        check_quantile(self.q)?;
        if let PeakMethod::Topq { q } = self.peak_method {
            check_quantile(q)?;
        }
        Ok(())
    }
}

fn check_quantile(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::QuantileOutOfRange(q))
    }
}

/// `ceil(q * n)` clamped to `1..=n`, with a small slack so that products
/// like `0.3 * 10` that land a hair above an integer do not round up.
pub fn quantile_count(q: f64, n: usize) -> usize {
    let k = (q * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// WAAD for each response row, summing over every key column.
pub fn waad_series(map: &AttentionMap, range: ResponseRange, window: usize) -> Result<Vec<f64>> {
    waad_series_with(map, range, window, SinkColumn::Include)
}

/// WAAD for each response row: `sum_s A[t][s] * min(t - s, W)`.
///
/// Columns farther than `W` all contribute `W` times their mass, so each row
/// costs `O(W)` plus one pass for the far mass.
pub fn waad_series_with(
    map: &AttentionMap,
    range: ResponseRange,
    window: usize,
    sink: SinkColumn,
) -> Result<Vec<f64>> {
    range.check(map.size())?;
    if window < 1 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    let first = match sink {
        SinkColumn::Include => 0,
        SinkColumn::Exclude => 1,
    };
    let out = range
        .iter()
        .map(|t| {
            let row = map.row(t);
            // Columns s <= t - W saturate the clip.
            let near_start = (t + 1).saturating_sub(window).max(first);
            let far: f64 = if t >= window && first <= t - window {
                row[first..=t - window].iter().sum()
            } else {
                0.0
            };
            let near: f64 = (near_start..=t)
                .map(|s| row[s] * (t - s) as f64)
                .sum();
            near + far * window as f64
        })
        .collect();
    Ok(out)
}

/// FAI values over every position plus the positions whose horizon held no
/// response row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaiSeries {
    pub values: Vec<f64>,
    pub uncovered: IndexSet,
}

impl FaiSeries {
    /// Values at response positions only, re-indexed from zero.
    pub fn response_slice(&self, range: ResponseRange) -> &[f64] {
        &self.values[range.start..range.end]
    }
}

/// FAI for every position `s` of the sequence: mean inbound attention from
/// response rows `t` with `s + H_lo <= t <= s + H_hi`. Positions with no
/// such row get 0 and are listed in `uncovered`.
pub fn fai_series(
    map: &AttentionMap,
    range: ResponseRange,
    h_lo: usize,
    h_hi: usize,
) -> Result<FaiSeries> {
    let n = map.size();
    range.check(n)?;
    if h_lo >= h_hi {
        return Err(Error::InvalidConfig(format!("h_lo ({h_lo}) must be below h_hi ({h_hi})")));
    }
    let mut values = vec![0.0; n];
    let mut uncovered = Vec::new();
    for (s, value) in values.iter_mut().enumerate() {
        let lo = (s + h_lo).max(range.start);
        let hi = (s + h_hi).min(range.end - 1);
        if lo > hi {
            uncovered.push(s);
            continue;
        }
        let total: f64 = (lo..=hi).map(|t| map.get(t, s)).sum();
        *value = total / (hi - lo + 1) as f64;
    }
    Ok(FaiSeries {
        values,
        uncovered: IndexSet::new(uncovered, n)?,
    })
}

/// Shannon entropy in nats of each probability row, with `0 ln 0 = 0`.
pub fn entropy_series(prob_rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    prob_rows
        .iter()
        .enumerate()
        .map(|(row, probs)| {
            let mut h = 0.0;
            for (col, &p) in probs.iter().enumerate() {
                if p < 0.0 || p.is_nan() {
                    return Err(Error::NegativeProbability { row, col, value: p });
                }
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
            // Rows that sum to slightly over 1 can drive tiny negatives.
            Ok(h.max(0.0))
        })
        .collect()
}

/// `|waad[t] - waad[t + 1]|` for consecutive positions.
pub fn waad_delta(waad: &[f64]) -> Result<Vec<f64>> {
    if waad.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            len: waad.len(),
        });
    }
    Ok(waad.windows(2).map(|w| (w[0] - w[1]).abs()).collect())
}

/// Indices of the `ceil(q * n)` largest values, where `n` is the size of the
/// restriction (or of the whole series). Ties at the cut go to the lower
/// index.
pub fn top_quantile(series: &[f64], q: f64, restrict: Option<&IndexSet>) -> Result<IndexSet> {
    check_quantile(q)?;
    if series.is_empty() {
        return Err(Error::SeriesTooShort { needed: 1, len: 0 });
    }
    let mut candidates: Vec<usize> = match restrict {
        Some(set) => {
            if set.universe_size() != series.len() {
                return Err(Error::LengthMismatch(format!(
                    "restriction universe {} vs series length {}",
                    set.universe_size(),
                    series.len()
                )));
            }
            set.indices().to_vec()
        }
        None => (0..series.len()).collect(),
    };
    if candidates.is_empty() {
        return Ok(IndexSet::empty(series.len()));
    }
    let k = quantile_count(q, candidates.len());
    candidates.sort_by(|&a, &b| series[b].total_cmp(&series[a]).then(a.cmp(&b)));
    candidates.truncate(k);
    IndexSet::new(candidates, series.len())
}

/// Picks peaks of `series` by `method`.
pub fn detect_peaks(series: &[f64], method: PeakMethod) -> Result<IndexSet> {
    if series.is_empty() {
        return Err(Error::SeriesTooShort { needed: 1, len: 0 });
    }
    match method {
        PeakMethod::Topq { q } => top_quantile(series, q, None),
        PeakMethod::LocalMax { kappa } => {
            let n = series.len() as f64;
            let mean = series.iter().sum::<f64>() / n;
            let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let floor = mean + kappa * var.sqrt();
            let peaks = (1..series.len().saturating_sub(1))
                .filter(|&t| {
                    series[t] > series[t - 1] && series[t] >= series[t + 1] && series[t] >= floor
                })
                .collect();
            IndexSet::new(peaks, series.len())
        }
    }
}

/// Linear-interpolation percentile (`p` in `[0, 1]`) of a nonempty series.
pub fn percentile(series: &[f64], p: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::SeriesTooShort { needed: 1, len: 0 });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::QuantileOutOfRange(p));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}
