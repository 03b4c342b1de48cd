// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic attention maps with planted structure, synthetic corpora built
//! from them, and naive reference implementations of the metrics.
//!
//! Two generators:
//!
//! - [`make_sawtooth_map`]: phrasal chunks. Inside a chunk each row puts
//!   `within_chunk_locality` on the previous token; a chunk onset row puts all
//!   of its mass `onset_lookback` tokens back.
//! - [`make_anchor_map`]: sparse anchors. Every row gives `anchor_mass` to
//!   each earlier anchor column and spreads the rest over non-anchor columns.
//!
//! With `jitter = 0` the spread-out mass is uniform. A positive `jitter`
//! moves that fraction of it onto seeded random weights over the same
//! columns, which is the only place the seed enters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_set::IndexSet;
use crate::matrix::AttentionMap;
use crate::tensor_io::{sampled_layers, AttentionStack, HeadEntry, Token, TokenTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SawtoothSpec {
    pub n_tokens: usize,
    pub chunk_lengths: Vec<usize>,
    pub onset_lookback: usize,
    pub within_chunk_locality: f64,
    #[serde(default)]
    pub jitter: f64,
}

impl SawtoothSpec {
    fn check(&self) -> Result<()> {
        if self.n_tokens == 0 {
            return Err(Error::InvalidSpec("n_tokens must be positive".into()));
        }
        if self.chunk_lengths.iter().any(|&c| c == 0) {
            return Err(Error::InvalidSpec("chunk lengths must be positive".into()));
        }
        let total: usize = self.chunk_lengths.iter().sum();
        if total != self.n_tokens {
            return Err(Error::InvalidSpec(format!(
                "chunk lengths sum to {total}, expected {}",
                self.n_tokens
            )));
        }
        if self.onset_lookback == 0 {
            return Err(Error::InvalidSpec("onset_lookback must be positive".into()));
        }
        if !(self.within_chunk_locality > 0.0 && self.within_chunk_locality <= 1.0) {
            return Err(Error::InvalidSpec("within_chunk_locality must lie in (0, 1]".into()));
        }
        check_jitter(self.jitter)
    }

    /// First position of every chunk after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.chunk_lengths
            .iter()
            .scan(0, |pos, &len| {
                *pos += len;
                Some(*pos)
            })
            .take(self.chunk_lengths.len().saturating_sub(1))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub n_tokens: usize,
    pub anchor_positions: IndexSet,
    pub anchor_mass: f64,
    #[serde(default)]
    pub jitter: f64,
}

impl AnchorSpec {
    fn check(&self) -> Result<()> {
        if self.n_tokens == 0 || self.anchor_positions.universe_size() != self.n_tokens {
            return Err(Error::InvalidSpec(format!(
                "anchor universe {} vs n_tokens {}",
                self.anchor_positions.universe_size(),
                self.n_tokens
            )));
        }
        if !(self.anchor_mass > 0.0 && self.anchor_mass < 1.0) {
            return Err(Error::InvalidSpec("anchor_mass must lie in (0, 1)".into()));
        }
        let reachable = self
            .anchor_positions
            .indices()
            .iter()
            .filter(|&&a| a + 1 < self.n_tokens)
            .count();
        if self.anchor_mass * reachable as f64 >= 1.0 {
            return Err(Error::InvalidSpec(format!(
                "{reachable} anchors x mass {} leave no room for the remainder",
                self.anchor_mass
            )));
        }
        check_jitter(self.jitter)
    }
}

fn check_jitter(jitter: f64) -> Result<()> {
    if (0.0..=1.0).contains(&jitter) {
        Ok(())
    } else {
        Err(Error::InvalidSpec("jitter must lie in [0, 1]".into()))
    }
}

/// Spreads `mass` over `cols`: `(1 - jitter)` of it uniformly, the rest with
/// random weights.
fn spread(row: &mut [f64], cols: &[usize], mass: f64, jitter: f64, rng: &mut ChaCha8Rng) {
    let uniform = mass * (1.0 - jitter) / cols.len() as f64;
    for &s in cols {
        row[s] += uniform;
    }
    if jitter > 0.0 {
        let weights: Vec<f64> = cols.iter().map(|_| rng.gen::<f64>() + 1e-12).collect();
        let total: f64 = weights.iter().sum();
        for (&s, w) in cols.iter().zip(&weights) {
            row[s] += mass * jitter * w / total;
        }
    }
}

pub fn make_sawtooth_map(spec: &SawtoothSpec, seed: u64) -> Result<AttentionMap> {
    spec.check()?;
    let n = spec.n_tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let onsets: std::collections::BTreeSet<usize> = spec.boundaries().into_iter().collect();
    let mut map = AttentionMap::zeros(n);
    for t in 0..n {
        let row = map.row_mut(t);
        if t == 0 {
            row[0] = 1.0;
        } else if onsets.contains(&t) {
            row[t - spec.onset_lookback.min(t)] = 1.0;
        } else {
            let far: Vec<usize> = (0..t - 1).collect();
            if far.is_empty() {
                row[t - 1] = 1.0;
            } else {
                row[t - 1] = spec.within_chunk_locality;
                spread(row, &far, 1.0 - spec.within_chunk_locality, spec.jitter, &mut rng);
            }
        }
    }
    Ok(map)
}

pub fn make_anchor_map(spec: &AnchorSpec, seed: u64) -> Result<AttentionMap> {
    spec.check()?;
    let n = spec.n_tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = AttentionMap::zeros(n);
    for t in 0..n {
        let row = map.row_mut(t);
        let mut used = 0.0;
        for &a in spec.anchor_positions.indices().iter().take_while(|&&a| a < t) {
            row[a] = spec.anchor_mass;
            used += spec.anchor_mass;
        }
        let rest: Vec<usize> = (0..=t).filter(|&s| !spec.anchor_positions.contains(s)).collect();
        if rest.is_empty() {
            row[t] += 1.0 - used;
        } else {
            spread(row, &rest, 1.0 - used, spec.jitter, &mut rng);
        }
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Varied chunk structure on local heads; entropy raised at chunk onsets.
    Sawtooth,
    /// Planted anchors on global heads.
    Anchor,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sawtooth" => Ok(SynthKind::Sawtooth),
            "anchor" => Ok(SynthKind::Anchor),
            other => Err(Error::InvalidSpec(format!("unknown synth kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub kind: SynthKind,
    pub n_tokens: usize,
    pub prompt_len: usize,
    pub layer_count: u32,
    pub heads_per_layer: u16,
    pub min_chunk: usize,
    pub max_chunk: usize,
    pub n_anchors: usize,
    pub anchor_mass: f64,
    pub jitter: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            kind: SynthKind::Anchor,
            n_tokens: 96,
            prompt_len: 16,
            layer_count: 12,
            heads_per_layer: 4,
            min_chunk: 3,
            max_chunk: 8,
            n_anchors: 4,
            anchor_mass: 0.12,
            jitter: 0.2,
        }
    }
}

/// Ground truth planted into one synthetic trace (absolute positions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub chunk_boundaries: Vec<usize>,
    pub anchors: Vec<usize>,
    pub local_heads: Vec<(u16, u16)>,
    pub global_heads: Vec<(u16, u16)>,
}

/// Random chunk lengths in `min..=max` covering exactly `n` tokens.
pub fn random_chunks(n: usize, min: usize, max: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut left = n;
    while left > 0 {
        let len = rng.gen_range(min..=max).min(left);
        out.push(len);
        left -= len;
    }
    out
}

/// Builds one synthetic (stack, trace) pair. Even heads of each sampled
/// layer carry the sawtooth pattern, odd heads the anchor pattern.
pub fn synth_example(spec: &CorpusSpec, seed: u64) -> Result<(AttentionStack, TokenTrace, Planted)> {
    let n = spec.n_tokens;
    if spec.prompt_len == 0 || spec.prompt_len >= n {
        return Err(Error::InvalidSpec("prompt_len must lie in 1..n_tokens".into()));
    }
    if spec.min_chunk == 0 || spec.min_chunk > spec.max_chunk {
        return Err(Error::InvalidSpec("chunk bounds must satisfy 1 <= min <= max".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunks = random_chunks(n, spec.min_chunk, spec.max_chunk, &mut rng);
    let saw = SawtoothSpec {
        n_tokens: n,
        chunk_lengths: chunks,
        onset_lookback: 24,
        within_chunk_locality: 0.92,
        jitter: spec.jitter,
    };
    let boundaries = saw.boundaries();

    let response_len = n - spec.prompt_len;
    let mut anchors: Vec<usize> = rand::seq::index::sample(&mut rng, response_len.saturating_sub(12), spec.n_anchors.min(response_len.saturating_sub(12)))
        .into_iter()
        .map(|i| i + spec.prompt_len)
        .collect();
    anchors.sort_unstable();
    let anchor_spec = AnchorSpec {
        n_tokens: n,
        anchor_positions: IndexSet::new(anchors.clone(), n)?,
        anchor_mass: spec.anchor_mass,
        jitter: spec.jitter,
    };

    let mut entries = Vec::new();
    let mut local_heads = Vec::new();
    let mut global_heads = Vec::new();
    for &layer in &sampled_layers(spec.layer_count) {
        for head in 0..spec.heads_per_layer {
            let head_seed = rng.gen::<u64>();
            let map = if head % 2 == 0 {
                local_heads.push((layer as u16, head));
                let local = SawtoothSpec {
                    within_chunk_locality: if spec.kind == SynthKind::Sawtooth {
                        0.9 + 0.05 * rng.gen::<f64>()
                    } else {
                        0.95
                    },
                    ..saw.clone()
                };
                make_sawtooth_map(&local, head_seed)?
            } else {
                global_heads.push((layer as u16, head));
                make_anchor_map(&anchor_spec, head_seed)?
            };
            entries.push(HeadEntry {
                layer: layer as u16,
                head,
                map,
            });
        }
    }
    let stack = AttentionStack::new(n, spec.layer_count, entries)?;

    const WORDS: [&str; 16] = [
        "the", "value", "of", "x", "is", "so", "we", "compute", "total", "then", "=", "3", "+", "answer", ",", ".",
    ];
    let tokens = (0..n)
        .map(|i| {
            let w = rng.gen_range(0..WORDS.len());
            Token {
                id: (w as i64) + 100 * i64::from(i < spec.prompt_len),
                text: WORDS[w].to_string(),
            }
        })
        .collect();
    let entropy = (spec.prompt_len..n)
        .map(|t| {
            let base = 0.5 * rng.gen::<f64>();
            if spec.kind == SynthKind::Sawtooth && boundaries.contains(&t) {
                base + 1.0
            } else {
                base
            }
        })
        .collect();
    let reward = if rng.gen::<bool>() { 1.0 } else { 0.0 };
    let trace = TokenTrace::new(
        tokens,
        spec.prompt_len,
        Some(entropy),
        None,
        Some(reward),
        Some(format!("group-{}", seed / 4)),
    )?;
    Ok((
        stack,
        trace,
        Planted {
            chunk_boundaries: boundaries,
            anchors,
            local_heads,
            global_heads,
        },
    ))
}

// ---------------------------------------------------------------------------
// Reference implementations
// ---------------------------------------------------------------------------

/// Direct, unoptimized evaluations of the metric definitions. Nothing here
/// calls into [`crate::rhythm`] or [`crate::heads`].
pub mod oracle {
    use crate::matrix::{AttentionMap, ResponseRange};

    /// `sum_{s <= t} A[t][s] * min(t - s, W)`.
    pub fn brute_force_waad(map: &AttentionMap, t: usize, window: usize) -> f64 {
        let mut total = 0.0;
        for s in 0..=t {
            let d = t - s;
            let clipped = if d < window { d } else { window };
            total += map.get(t, s) * clipped as f64;
        }
        total
    }

    /// Mean of `A[t][s]` over response rows `t` with
    /// `s + h_lo <= t <= s + h_hi`; 0 when there are none.
    pub fn brute_force_fai(
        map: &AttentionMap,
        s: usize,
        h_lo: usize,
        h_hi: usize,
        range: ResponseRange,
    ) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for t in 0..map.size() {
            let in_range = t >= range.start && t < range.end;
            if in_range && t >= s + h_lo && t <= s + h_hi {
                total += map.get(t, s);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Mean over response rows of `sum_{s <= t} A[t][s] * (t - s)`.
    pub fn brute_force_span(map: &AttentionMap, range: ResponseRange) -> f64 {
        let mut total = 0.0;
        let mut rows = 0usize;
        for t in range.start..range.end {
            for s in 0..=t {
                total += map.get(t, s) * (t - s) as f64;
            }
            rows += 1;
        }
        total / rows as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::ResponseRange;
    use crate::rhythm::{fai_series, top_quantile, waad_delta, waad_series};
    use crate::tensor_io::{validate_stack, LayerPolicy};

    fn assert_stochastic(map: &AttentionMap) {
        for t in 0..map.size() {
            let row = map.row(t);
            assert!(row[t + 1..].iter().all(|&w| w == 0.0), "row {t} not causal");
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {t} sums to {sum}");
        }
    }

    #[test]
    fn single_chunk_has_no_onsets() {
        let spec = SawtoothSpec {
            n_tokens: 40,
            chunk_lengths: vec![40],
            onset_lookback: 20,
            within_chunk_locality: 0.9,
            jitter: 0.0,
        };
        let map = make_sawtooth_map(&spec, 1).unwrap();
        assert_stochastic(&map);
        let waad = waad_series(&map, ResponseRange::new(0, 40), 10).unwrap();
        let delta = waad_delta(&waad).unwrap();
        // uniform background: transitions never exceed the far-mass share of W
        assert!(delta.iter().all(|&d| d <= 0.1 * 10.0 + 1.0), "{delta:?}");
    }

    #[test]
    fn two_chunk_boundary_holds_the_transition_peak() {
        let spec = SawtoothSpec {
            n_tokens: 8,
            chunk_lengths: vec![4, 4],
            onset_lookback: 8,
            within_chunk_locality: 1.0,
            jitter: 0.0,
        };
        let map = make_sawtooth_map(&spec, 0).unwrap();
        let waad = waad_series(&map, ResponseRange::new(0, 8), 10).unwrap();
        // hand: onset row 4 looks back min(8, 4) = 4 tokens; others look back 1
        assert_eq!(waad, vec![0.0, 1.0, 1.0, 1.0, 4.0, 1.0, 1.0, 1.0]);
        let delta = waad_delta(&waad).unwrap();
        let max = delta.iter().cloned().fold(f64::MIN, f64::max);
        let argmax: Vec<usize> = (0..delta.len()).filter(|&i| delta[i] == max).collect();
        assert!(argmax.iter().all(|&i| i == 3 || i == 4), "{argmax:?}");
    }

    #[test]
    fn anchor_map_fai_is_exact() {
        let spec = AnchorSpec {
            n_tokens: 32,
            anchor_positions: IndexSet::new(vec![5], 32).unwrap(),
            anchor_mass: 0.5,
            jitter: 0.0,
        };
        let map = make_anchor_map(&spec, 0).unwrap();
        assert_stochastic(&map);
        let fai = fai_series(&map, ResponseRange::new(15, 32), 10, 26).unwrap();
        assert_eq!(fai.values[5], 0.5);
        for s in 0..32 {
            if s != 5 {
                assert!(fai.values[s] < 0.5);
            }
        }
    }

    #[test]
    fn no_anchors_gives_uniform_causal() {
        let spec = AnchorSpec {
            n_tokens: 6,
            anchor_positions: IndexSet::empty(6),
            anchor_mass: 0.3,
            jitter: 0.0,
        };
        let map = make_anchor_map(&spec, 0).unwrap();
        for t in 0..6 {
            for s in 0..=t {
                assert!((map.get(t, s) - 1.0 / (t + 1) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn anchor_recovery_at_matched_quantile() {
        let anchors = vec![3, 9, 20];
        let spec = AnchorSpec {
            n_tokens: 64,
            anchor_positions: IndexSet::new(anchors.clone(), 64).unwrap(),
            anchor_mass: 0.2,
            jitter: 0.0,
        };
        let map = make_anchor_map(&spec, 0).unwrap();
        let fai = fai_series(&map, ResponseRange::new(0, 64), 10, 50).unwrap();
        let top = top_quantile(&fai.values, 3.0 / 64.0, None).unwrap();
        assert_eq!(top.indices(), anchors.as_slice());
    }

    #[test]
    fn invalid_specs() {
        let bad = SawtoothSpec {
            n_tokens: 10,
            chunk_lengths: vec![4, 4],
            onset_lookback: 2,
            within_chunk_locality: 0.9,
            jitter: 0.0,
        };
        assert_eq!(make_sawtooth_map(&bad, 0).unwrap_err().code(), "invalid-spec");
        let bad = AnchorSpec {
            n_tokens: 10,
            anchor_positions: IndexSet::new(vec![1, 2, 3], 10).unwrap(),
            anchor_mass: 0.4,
            jitter: 0.0,
        };
        assert_eq!(make_anchor_map(&bad, 0).unwrap_err().code(), "invalid-spec");
    }

    #[test]
    fn generators_are_seed_deterministic_and_valid() {
        let spec = CorpusSpec::default();
        let (a, ta, pa) = synth_example(&spec, 11).unwrap();
        let (b, tb, pb) = synth_example(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(pa, pb);
        assert!(validate_stack(&a, LayerPolicy::Strict).ok);
        for e in a.entries() {
            assert_stochastic(&e.map);
        }
        let (c, _, _) = synth_example(&spec, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn oracle_identity_and_column_zero() {
        let mut id = AttentionMap::zeros(5);
        (0..5).for_each(|t| id.set(t, t, 1.0));
        assert!((0..5).all(|t| oracle::brute_force_waad(&id, t, 3) == 0.0));
        let mut col = AttentionMap::zeros(30);
        (0..30).for_each(|t| col.set(t, 0, 1.0));
        let r = ResponseRange::new(0, 30);
        assert_eq!(oracle::brute_force_fai(&col, 0, 10, 50, r), 1.0);
    }
}
