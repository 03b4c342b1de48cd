// SPDX-License-Identifier: MIT OR Apache-2.0

//! Coupling statistics between rhythm series, each reported as a lift
//! `(observed - baseline) / baseline` over a chance baseline.
//!
//! Three statistics are provided:
//!
//! - mean entropy at WAAD peaks vs. mean entropy over all response tokens;
//! - fraction of receiver-head FAI peaks that are also global-head FAI peaks
//!   vs. the global peak density;
//! - fraction of FAI peaks at or within `max_lag` tokens after a WAAD peak
//!   vs. the same fraction with FAI peak positions redrawn uniformly.
//!
//! Each has a pooled form taking many traces at once. Pooling sums counts
//! over all traces before dividing (micro-average); [`Aggregation::Macro`]
//! averages per-trace values instead.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_set::IndexSet;

pub const ENTROPY_AT_WAAD_PEAKS: &str = "avg-entropy-at-waad-peaks";
pub const RECEIVER_GLOBAL_COOCCURRENCE: &str = "receiver-global-fai-peak-cooccurrence";
pub const FAI_FOLLOWS_WAAD: &str = "fai-peak-follows-or-coincides-waad-peak";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftStat {
    pub statistic_name: String,
    pub observed: f64,
    pub baseline: f64,
    /// `None` when the baseline is zero.
    pub lift: Option<f64>,
    pub n_traces: usize,
    pub n_shuffles: usize,
    pub seed: u64,
}

impl LiftStat {
    fn new(name: &str, observed: f64, baseline: f64, n_traces: usize, n_shuffles: usize, seed: u64) -> Self {
        Self {
            statistic_name: name.to_string(),
            observed,
            baseline,
            lift: lift(observed, baseline),
            n_traces,
            n_shuffles,
            seed,
        }
    }
}

pub fn lift(observed: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (observed - baseline) / baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Micro,
    Macro,
}

// ---------------------------------------------------------------------------
// Entropy at WAAD peaks
// ---------------------------------------------------------------------------

pub fn entropy_at_peaks_lift(entropy: &[f64], peaks: &IndexSet) -> Result<LiftStat> {
    entropy_at_peaks_pooled(&[(entropy, peaks)], Aggregation::Micro)
}

/// Pooled entropy-at-peaks statistic; traces without peaks are skipped.
pub fn entropy_at_peaks_pooled(traces: &[(&[f64], &IndexSet)], agg: Aggregation) -> Result<LiftStat> {
    let mut parts = Vec::with_capacity(traces.len());
    for &(entropy, peaks) in traces {
        if peaks.universe_size() != entropy.len() {
            return Err(Error::LengthMismatch(format!(
                "peak universe {} vs entropy length {}",
                peaks.universe_size(),
                entropy.len()
            )));
        }
        if peaks.is_empty() {
            continue;
        }
        let at_peaks: f64 = peaks.indices().iter().map(|&i| entropy[i]).sum();
        let all: f64 = entropy.iter().sum();
        parts.push((at_peaks, peaks.len() as f64, all, entropy.len() as f64));
    }
    if parts.is_empty() {
        return Err(Error::EmptyPeakSet);
    }
    let (observed, baseline) = combine(&parts, agg);
    Ok(LiftStat::new(ENTROPY_AT_WAAD_PEAKS, observed, baseline, parts.len(), 0, 0))
}

/// Reduces `(obs_num, obs_den, base_num, base_den)` tuples to
/// `(observed, baseline)` under the chosen aggregation.
fn combine(parts: &[(f64, f64, f64, f64)], agg: Aggregation) -> (f64, f64) {
    match agg {
        Aggregation::Micro => {
            let (mut on, mut od, mut bn, mut bd) = (0.0, 0.0, 0.0, 0.0);
            for &(a, b, c, d) in parts {
                on += a;
                od += b;
                bn += c;
                bd += d;
            }
            (on / od, bn / bd)
        }
        Aggregation::Macro => {
            let n = parts.len() as f64;
            let obs = parts.iter().map(|p| p.0 / p.1).sum::<f64>() / n;
            let base = parts.iter().map(|p| p.2 / p.3).sum::<f64>() / n;
            (obs, base)
        }
    }
}

// ---------------------------------------------------------------------------
// Receiver / global co-occurrence
// ---------------------------------------------------------------------------

/// Share of `set_a` inside `set_b`, against the density of `set_b`.
pub fn cooccurrence_lift(set_a: &IndexSet, set_b: &IndexSet, n_positions: usize) -> Result<LiftStat> {
    cooccurrence_pooled(&[(set_a, set_b, n_positions)], Aggregation::Micro)
}

pub fn cooccurrence_pooled(traces: &[(&IndexSet, &IndexSet, usize)], agg: Aggregation) -> Result<LiftStat> {
    let mut parts = Vec::with_capacity(traces.len());
    for &(a, b, n) in traces {
        if a.indices().last().is_some_and(|&i| i >= n) || b.indices().last().is_some_and(|&i| i >= n) {
            return Err(Error::DimensionMismatch(format!("peak index outside 0..{n}")));
        }
        if a.is_empty() {
            continue;
        }
        parts.push((a.intersection_len(b) as f64, a.len() as f64, b.len() as f64, n as f64));
    }
    if parts.is_empty() {
        return Err(Error::EmptySetA);
    }
    let (observed, baseline) = combine(&parts, agg);
    Ok(LiftStat::new(RECEIVER_GLOBAL_COOCCURRENCE, observed, baseline, parts.len(), 0, 0))
}

// ---------------------------------------------------------------------------
// FAI peaks following WAAD peaks
// ---------------------------------------------------------------------------

/// Marks every position `p` with some WAAD peak `w` such that
/// `0 <= p - w <= max_lag`.
fn follow_mask(waad_peaks: &IndexSet, n: usize, max_lag: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &w in waad_peaks.indices() {
        for p in w..=(w + max_lag).min(n.saturating_sub(1)) {
            mask[p] = true;
        }
    }
    mask
}

/// Random stream for one shuffle trial; independent of scheduling.
fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

pub fn follows_or_coincides_lift(
    fai_peaks: &IndexSet,
    waad_peaks: &IndexSet,
    max_lag: i64,
    n_shuffles: usize,
    seed: u64,
) -> Result<LiftStat> {
    follows_or_coincides_pooled(&[(fai_peaks, waad_peaks)], max_lag, n_shuffles, seed, Aggregation::Micro)
}

/// Observed: share of FAI peaks within `max_lag` after a WAAD peak.
/// Baseline: mean of the same share over `n_shuffles` trials, each redrawing
/// every trace's FAI peaks uniformly without replacement (count preserved).
/// Trial `i` draws from a ChaCha8 stream keyed by `(seed, i)`, so results do
/// not depend on how trials are scheduled.
pub fn follows_or_coincides_pooled(
    traces: &[(&IndexSet, &IndexSet)],
    max_lag: i64,
    n_shuffles: usize,
    seed: u64,
    agg: Aggregation,
) -> Result<LiftStat> {
    if max_lag < 0 {
        return Err(Error::InvalidLag(format!("max_lag must be nonnegative, got {max_lag}")));
    }
    if n_shuffles < 1 {
        return Err(Error::InvalidConfig("n_shuffles must be at least 1".into()));
    }
    let max_lag = max_lag as usize;
    struct Prepared {
        mask: Vec<bool>,
        k: usize,
        hits: usize,
    }
    let mut prepared = Vec::with_capacity(traces.len());
    for &(fai, waad) in traces {
        let n = fai.universe_size();
        if waad.universe_size() != n {
            return Err(Error::LengthMismatch(format!(
                "FAI peaks over {n} positions, WAAD peaks over {}",
                waad.universe_size()
            )));
        }
        if fai.is_empty() {
            continue;
        }
        let mask = follow_mask(waad, n, max_lag);
        let hits = fai.indices().iter().filter(|&&p| mask[p]).count();
        prepared.push(Prepared { mask, k: fai.len(), hits });
    }
    if prepared.is_empty() {
        return Err(Error::EmptyPeakSet);
    }

    let share = |hits: &[usize]| -> f64 {
        match agg {
            Aggregation::Micro => {
                let total: usize = prepared.iter().map(|p| p.k).sum();
                hits.iter().sum::<usize>() as f64 / total as f64
            }
            Aggregation::Macro => {
                hits.iter()
                    .zip(&prepared)
                    .map(|(&h, p)| h as f64 / p.k as f64)
                    .sum::<f64>()
                    / prepared.len() as f64
            }
        }
    };

    let observed_hits: Vec<usize> = prepared.iter().map(|p| p.hits).collect();
    let observed = share(&observed_hits);

    let trial_shares: Vec<f64> = (0..n_shuffles)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let hits: Vec<usize> = prepared
                .iter()
                .map(|p| {
                    sample(&mut rng, p.mask.len(), p.k)
                        .into_iter()
                        .filter(|&i| p.mask[i])
                        .count()
                })
                .collect();
            share(&hits)
        })
        .collect();
    let baseline = trial_shares.iter().sum::<f64>() / n_shuffles as f64;

    Ok(LiftStat::new(
        FAI_FOLLOWS_WAAD,
        observed,
        baseline,
        prepared.len(),
        n_shuffles,
        seed,
    ))
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub peak_method: String,
    pub max_lag: i64,
    pub aggregation: Aggregation,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    #[serde(flatten)]
    pub stat: LiftStat,
    pub params: CouplingParams,
}

/// JSON array of `{statistic_name, observed, baseline, lift, n_traces,
/// n_shuffles, seed, params}`.
pub fn report_json(entries: &[CouplingEntry]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(entries)?;
    s.push('\n');
    Ok(s)
}

/// Table-style CSV: `statistic,random,observed,lift_percent`.
pub fn report_csv(entries: &[CouplingEntry]) -> String {
    let mut out = String::from("statistic,random,observed,lift_percent\n");
    for e in entries {
        let lift = e.stat.lift.map(|l| format!("{:.2}", l * 100.0)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.stat.statistic_name, e.stat.baseline, e.stat.observed, lift
        ));
    }
    out
}
