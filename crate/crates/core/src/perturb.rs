// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counterfactual rollout comparison: content-word sets, Jaccard overlap and
//! the top- vs bottom-FAI deviation report.
//!
//! Rollouts are produced elsewhere and arrive as JSON lines, one
//! [`RolloutPair`] per line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::Token;

const DEFAULT_STOPLIST: &str = include_str!("../data/stopwords_en.txt");

/// Words removed before content-word comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stoplist {
    words: BTreeSet<String>,
}

impl Stoplist {
    /// Parses one word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPLIST)
    }

    pub fn empty() -> Self {
        Self {
            words: BTreeSet::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

impl FromIterator<String> for Stoplist {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Self {
            words: iter.into_iter().map(|w| w.to_lowercase()).collect(),
        }
    }
}

fn is_stripped(c: char) -> bool {
    c.is_whitespace()
        || c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2010}'..='\u{2027}' | '\u{00a1}' | '\u{00ab}' | '\u{00bb}' | '\u{00bf}' | '\u{3001}' | '\u{3002}'
        )
}

/// Lowercases a token text and drops whitespace and punctuation characters.
pub fn normalize_token(text: &str) -> String {
    text.chars()
        .filter(|&c| !is_stripped(c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Normalized token texts minus empty strings and stoplist entries.
pub fn content_token_set<S: AsRef<str>>(tokens: &[S], stoplist: &Stoplist) -> BTreeSet<String> {
    tokens
        .iter()
        .map(|t| normalize_token(t.as_ref()))
        .filter(|w| !w.is_empty() && !stoplist.contains(w))
        .collect()
}

/// `|A n B| / |A u B|`; undefined (error) when both sets are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::BothEmpty);
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Top,
    Bottom,
}

/// One counterfactual rollout compared against the original continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutPair {
    pub position: usize,
    pub bucket: Bucket,
    pub forced_token: Token,
    pub original_suffix: Vec<String>,
    pub counterfactual_suffix: Vec<String>,
    pub trace_id: String,
    pub trial_id: u64,
    /// Free-form capture metadata (candidate count, horizon, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

/// Parses JSON lines; blank lines are skipped.
pub fn parse_rollout_pairs(text: &str) -> Result<Vec<RolloutPair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let pair: RolloutPair = serde_json::from_str(line)
                .map_err(|e| Error::SchemaViolation(format!("line {}: {e}", i + 1)))?;
            if pair.original_suffix.is_empty() || pair.counterfactual_suffix.is_empty() {
                return Err(Error::SchemaViolation(format!("line {}: empty suffix", i + 1)));
            }
            Ok(pair)
        })
        .collect()
}

pub fn load_rollout_pairs(path: impl AsRef<Path>) -> Result<Vec<RolloutPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rollout_pairs(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub mean_jaccard_top: f64,
    pub mean_jaccard_bottom: f64,
    /// Share of matched trials whose top-bucket Jaccard is strictly lower.
    pub prob_top_lt_bottom: f64,
    pub n_pairs: usize,
    pub n_matched_trials: usize,
    pub stoplist: Vec<String>,
}

/// Requires exactly one top and one bottom pair per `(trace_id, trial_id)`.
pub fn perturbation_report(pairs: &[RolloutPair], stoplist: &Stoplist) -> Result<PerturbReport> {
    let mut trials: BTreeMap<(&str, u64), [Option<f64>; 2]> = BTreeMap::new();
    for p in pairs {
        let j = jaccard(
            &content_token_set(&p.original_suffix, stoplist),
            &content_token_set(&p.counterfactual_suffix, stoplist),
        )?;
        let slot = &mut trials.entry((p.trace_id.as_str(), p.trial_id)).or_default()[p.bucket as usize];
        if slot.is_some() {
            return Err(Error::UnmatchedBuckets(format!(
                "duplicate {:?} pair for trace {} trial {}",
                p.bucket, p.trace_id, p.trial_id
            )));
        }
        *slot = Some(j);
    }
    if trials.is_empty() {
        return Err(Error::UnmatchedBuckets("no pairs".into()));
    }
    let (mut top_sum, mut bottom_sum, mut wins) = (0.0, 0.0, 0usize);
    for ((trace, trial), slots) in &trials {
        match slots {
            [Some(top), Some(bottom)] => {
                top_sum += top;
                bottom_sum += bottom;
                if top < bottom {
                    wins += 1;
                }
            }
            _ => {
                return Err(Error::UnmatchedBuckets(format!(
                    "trace {trace} trial {trial} lacks a top/bottom counterpart"
                )))
            }
        }
    }
    let n = trials.len() as f64;
    Ok(PerturbReport {
        mean_jaccard_top: top_sum / n,
        mean_jaccard_bottom: bottom_sum / n,
        prob_top_lt_bottom: wins as f64 / n,
        n_pairs: pairs.len(),
        n_matched_trials: trials.len(),
        stoplist: stoplist.words().map(str::to_string).collect(),
    })
}
