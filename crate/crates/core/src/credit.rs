// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-token advantage weights `gamma_t` and the objective they feed.
//!
//! Three schemes:
//!
//! - **local**: amplify the tokens with the largest WAAD transitions
//!   (`delta`), i.e. chunk-onset preplan tokens;
//! - **global**: amplify the highest-FAI anchor tokens;
//! - **coupled**: as global, but an anchor with low WAAD that sits right
//!   after a large WAAD transition hands a fraction `alpha` of its bonus back
//!   to the transition token (its "intro").
//!
//! All positions are response-local (0 is the first response token).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rhythm::{percentile, top_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Local,
    Global,
    Coupled,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Scheme::Local),
            "global" => Ok(Scheme::Global),
            "coupled" => Ok(Scheme::Coupled),
            other => Err(Error::InvalidConfig(format!("unknown scheme `{other}`"))),
        }
    }
}

/// A threshold given directly or as a per-trace percentile of its series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Threshold {
    Absolute(f64),
    /// Linear-interpolation percentile, `p` in `[0, 1]`.
    Quantile(f64),
}

impl Threshold {
    pub fn resolve(&self, series: &[f64]) -> Result<f64> {
        match *self {
            Threshold::Absolute(v) => Ok(v),
            Threshold::Quantile(p) => percentile(series, p),
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Threshold::Absolute(v) => v >= 0.0,
            Threshold::Quantile(p) => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{name} threshold {self:?} out of range")))
        }
    }
}

/// Which token a transition `delta[u] = |waad[u] - waad[u + 1]|` credits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaCredit {
    /// Token `u`.
    #[default]
    Earlier,
    /// Token `u + 1`.
    Later,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreditParams {
    pub gamma_amp: f64,
    pub q: f64,
    pub alpha: f64,
    pub tau_waad: Threshold,
    pub tau_delta: Threshold,
    /// Look-back distance for the dominance test.
    pub k: usize,
    /// Leave negative advantages unshaped.
    pub nonneg_only: bool,
    pub delta_credit: DeltaCredit,
}

impl Default for CreditParams {
    fn default() -> Self {
        Self {
            gamma_amp: 1.5,
            q: 0.4,
            alpha: 0.5,
            tau_waad: Threshold::Quantile(0.3),
            tau_delta: Threshold::Quantile(0.7),
            k: 2,
            nonneg_only: true,
            delta_credit: DeltaCredit::Earlier,
        }
    }
}

impl CreditParams {
    pub fn check(&self) -> Result<()> {
        if !(self.gamma_amp >= 1.0 && self.gamma_amp.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma_amp {} must be >= 1", self.gamma_amp)));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::QuantileOutOfRange(self.q));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} must lie in [0, 1]", self.alpha)));
        }
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        self.tau_waad.check("tau_waad")?;
        self.tau_delta.check("tau_delta")
    }

    fn bonus(&self) -> f64 {
        self.gamma_amp - 1.0
    }
}

/// Per-token weights and the selections that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditWeights {
    pub scheme: Scheme,
    pub gamma: Vec<f64>,
    pub selected_local: Vec<usize>,
    pub selected_global: Vec<usize>,
    pub dominated: Vec<usize>,
    /// Dominated anchor -> its intro position.
    pub intro_map: BTreeMap<usize, usize>,
    pub params: CreditParams,
    /// Thresholds actually used by the coupled scheme.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau_waad_resolved: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau_delta_resolved: Option<f64>,
}

impl CreditWeights {
    fn plain(scheme: Scheme, gamma: Vec<f64>, params: &CreditParams) -> Self {
        Self {
            scheme,
            gamma,
            selected_local: Vec::new(),
            selected_global: Vec::new(),
            dominated: Vec::new(),
            intro_map: BTreeMap::new(),
            params: *params,
            tau_waad_resolved: None,
            tau_delta_resolved: None,
        }
    }
}

/// Local-chunk weights over `n_positions` tokens from the transition
/// series. The `ceil(q * len(delta))` largest transitions are selected and
/// each credits the token given by `params.delta_credit`.
pub fn gamma_local(delta: &[f64], n_positions: usize, params: &CreditParams) -> Result<CreditWeights> {
    params.check()?;
    let offset = match params.delta_credit {
        DeltaCredit::Earlier => 0,
        DeltaCredit::Later => 1,
    };
    if delta.len() + offset > n_positions {
        return Err(Error::MisalignedSeries(format!(
            "{} transitions cannot credit {n_positions} positions",
            delta.len()
        )));
    }
    let selected: Vec<usize> = top_quantile(delta, params.q, None)?
        .indices()
        .iter()
        .map(|&u| u + offset)
        .collect();
    let mut gamma = vec![1.0; n_positions];
    for &t in &selected {
        gamma[t] = params.gamma_amp;
    }
    let mut out = CreditWeights::plain(Scheme::Local, gamma, params);
    out.selected_local = selected;
    Ok(out)
}

/// Global-anchor weights: the `ceil(q * n)` highest-FAI response tokens get
/// `gamma_amp`, everything else 1.
pub fn gamma_global(fai: &[f64], params: &CreditParams) -> Result<CreditWeights> {
    params.check()?;
    let anchors = top_quantile(fai, params.q, None)?;
    let mut gamma = vec![1.0; fai.len()];
    for &t in anchors.indices() {
        gamma[t] = params.gamma_amp;
    }
    let mut out = CreditWeights::plain(Scheme::Global, gamma, params);
    out.selected_global = anchors.indices().to_vec();
    Ok(out)
}

/// Coupled weights. `fai` and `waad` cover the same `n` response tokens and
/// `delta` their `n - 1` transitions.
///
/// An anchor `t` is dominated when `waad[t] <= tau_waad` and the largest
/// transition among `delta[t-k..t]` reaches `tau_delta`; its intro is that
/// transition's index (latest on ties). Bonuses: free anchors `amp - 1`,
/// dominated anchors `(1 - alpha)(amp - 1)`, intro tokens `alpha(amp - 1)`.
/// A token holding several roles sums its bonuses, capped at `2(amp - 1)`.
/// With `alpha = 0` nothing is handed back, so no anchor is reported as
/// dominated and the result equals [`gamma_global`] apart from `scheme`.
pub fn gamma_coupled(
    fai: &[f64],
    waad: &[f64],
    delta: &[f64],
    params: &CreditParams,
) -> Result<CreditWeights> {
    params.check()?;
    let n = fai.len();
    if waad.len() != n || delta.len() + 1 != n {
        return Err(Error::MisalignedSeries(format!(
            "fai {n}, waad {}, delta {} (expected {n}, {n}, {})",
            waad.len(),
            delta.len(),
            n.saturating_sub(1)
        )));
    }
    let anchors = top_quantile(fai, params.q, None)?;
    let tau_waad = params.tau_waad.resolve(waad)?;
    let tau_delta = params.tau_delta.resolve(delta)?;

    let mut dominated = Vec::new();
    let mut intro_map = BTreeMap::new();
    for &t in anchors.indices() {
        if t == 0 || params.alpha == 0.0 || waad[t] > tau_waad {
            continue;
        }
        let lo = t.saturating_sub(params.k);
        // latest index wins ties: scan backwards, keep strict improvements
        let mut best: Option<usize> = None;
        for u in (lo..t).rev() {
            if best.is_none_or(|b| delta[u] > delta[b]) {
                best = Some(u);
            }
        }
        if let Some(u) = best {
            if delta[u] >= tau_delta {
                dominated.push(t);
                intro_map.insert(t, u);
            }
        }
    }

    let bonus = params.bonus();
    let dominated_set: BTreeSet<usize> = dominated.iter().copied().collect();
    let intros: BTreeSet<usize> = intro_map.values().copied().collect();
    let mut extra = vec![0.0; n];
    for &t in anchors.indices() {
        extra[t] += if dominated_set.contains(&t) {
            (1.0 - params.alpha) * bonus
        } else {
            bonus
        };
    }
    for &u in &intros {
        extra[u] += params.alpha * bonus;
    }
    let cap = 2.0 * bonus;
    let gamma = extra.into_iter().map(|b| 1.0 + b.min(cap)).collect();

    Ok(CreditWeights {
        scheme: Scheme::Coupled,
        gamma,
        selected_local: Vec::new(),
        selected_global: anchors.indices().to_vec(),
        dominated,
        intro_map,
        params: *params,
        tau_waad_resolved: Some(tau_waad),
        tau_delta_resolved: Some(tau_delta),
    })
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageSource {
    Gae,
    GroupNormalized,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSeries {
    pub values: Vec<f64>,
    pub source: AdvantageSource,
}

impl AdvantageSeries {
    pub fn new(values: Vec<f64>, source: AdvantageSource) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("advantage {v} is not finite")));
        }
        Ok(Self { values, source })
    }

    /// One sequence-level advantage repeated over `len` tokens.
    pub fn broadcast(value: f64, len: usize, source: AdvantageSource) -> Result<Self> {
        Self::new(vec![value; len], source)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAdvantage {
    pub values: Vec<f64>,
    /// Every reward in the group was identical; `values` are all zero.
    pub degenerate: bool,
}

/// `(r_i - mean) / std` with the population standard deviation.
pub fn group_normalized_advantage(rewards: &[f64]) -> Result<GroupAdvantage> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::InvalidConfig(format!("reward {r} is not finite")));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(GroupAdvantage {
            values: vec![0.0; rewards.len()],
            degenerate: true,
        });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(GroupAdvantage {
        values: rewards.iter().map(|r| (r - mean) / std).collect(),
        degenerate: false,
    })
}

/// `gamma_t * A_t`, except that negative advantages pass through unchanged
/// when `nonneg_only` is set.
pub fn shape_advantages(
    adv: &AdvantageSeries,
    weights: &CreditWeights,
    params: &CreditParams,
) -> Result<AdvantageSeries> {
    if adv.values.len() != weights.gamma.len() {
        return Err(Error::LengthMismatch(format!(
            "{} advantages vs {} weights",
            adv.values.len(),
            weights.gamma.len()
        )));
    }
    let values = adv
        .values
        .iter()
        .zip(&weights.gamma)
        .map(|(&a, &g)| if a < 0.0 && params.nonneg_only { a } else { g * a })
        .collect();
    Ok(AdvantageSeries {
        values,
        source: adv.source,
    })
}

/// Per-token clipped surrogate with a shaped advantage:
/// `min(r * A * gamma, clip(r, 1 - eps, 1 + eps) * A * gamma)`.
pub fn shaped_token_objective(ratio: f64, adv: f64, gamma: f64, epsilon: f64) -> f64 {
    let shaped = adv * gamma;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * shaped).min(clipped * shaped)
}
