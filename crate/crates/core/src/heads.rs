// SPDX-License-Identifier: MIT OR Apache-2.0

//! Head-level analysis: backward attention span, local/global grouping by
//! span quantile, group-mean maps, and receiver-head scoring by the excess
//! kurtosis of column-mean inbound attention.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{AttentionMap, ResponseRange};
use crate::rhythm::quantile_count;
use crate::tensor_io::{AttentionStack, HeadId};

/// Mean backward distance of every head in a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpanTable {
    pub spans: BTreeMap<HeadId, f64>,
    /// Rows the spans were measured on; `None` for corpus averages.
    pub response_range: Option<ResponseRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadGroups {
    pub local_set: BTreeSet<HeadId>,
    pub global_set: BTreeSet<HeadId>,
    pub quantile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    Local,
    Global,
    Receiver,
}

/// Element-wise mean of the maps of a head group.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedMap {
    pub map: AttentionMap,
    pub source_group: GroupKind,
    pub member_count: usize,
}

/// `(1/|R|) * sum_{t in R} sum_{s <= t} A[t][s] * (t - s)`.
pub fn head_span(map: &AttentionMap, range: ResponseRange) -> Result<f64> {
    range.check(map.size())?;
    let total: f64 = range
        .iter()
        .map(|t| {
            let row = &map.row(t)[..=t];
            let mass: f64 = row.iter().sum();
            let first_moment: f64 = row.iter().enumerate().map(|(s, w)| s as f64 * w).sum();
            t as f64 * mass - first_moment
        })
        .sum();
    Ok(total / range.len() as f64)
}

/// Spans for every head of a stack.
pub fn span_table(stack: &AttentionStack, range: ResponseRange) -> Result<HeadSpanTable> {
    let spans = stack
        .entries()
        .par_iter()
        .map(|e| Ok((e.id(), head_span(&e.map, range)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeadSpanTable {
        spans: spans.into_iter().collect(),
        response_range: Some(range),
    })
}

/// Mean span per head over several tables; only heads present in every
/// table are kept.
pub fn average_span_tables(tables: &[HeadSpanTable]) -> Result<HeadSpanTable> {
    let first = tables.first().ok_or(Error::EmptyGroup)?;
    let mut spans = BTreeMap::new();
    for (&id, _) in &first.spans {
        let values: Option<Vec<f64>> = tables.iter().map(|t| t.spans.get(&id).copied()).collect();
        if let Some(values) = values {
            spans.insert(id, values.iter().sum::<f64>() / values.len() as f64);
        }
    }
    Ok(HeadSpanTable {
        spans,
        response_range: None,
    })
}

/// Ranks heads ascending by `(span, layer, head)`; the bottom
/// `min(ceil(q * H), floor(H / 2))` become local and the same number from the
/// top become global. The cap keeps the sets disjoint when `2 * ceil(q * H)`
/// would exceed `H`.
pub fn group_heads(table: &HeadSpanTable, quantile: f64) -> Result<HeadGroups> {
    if !(quantile > 0.0 && quantile <= 0.5) {
        return Err(Error::QuantileOutOfRange(quantile));
    }
    let total = table.spans.len();
    if total < 2 {
        return Err(Error::EmptyGroup);
    }
    let k = quantile_count(quantile, total).min(total / 2);
    let mut ranked: Vec<(HeadId, f64)> = table.spans.iter().map(|(&id, &d)| (id, d)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(HeadGroups {
        local_set: ranked[..k].iter().map(|(id, _)| *id).collect(),
        global_set: ranked[total - k..].iter().map(|(id, _)| *id).collect(),
        quantile,
    })
}

/// Unweighted element-wise mean of the group's maps, summed in head order.
pub fn aggregate_group(
    stack: &AttentionStack,
    group: &BTreeSet<HeadId>,
    kind: GroupKind,
) -> Result<AggregatedMap> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let n = stack.sequence_length();
    let mut sum = vec![0.0; n * n];
    for &id in group {
        let entry = stack.get(id).ok_or(Error::MissingHead {
            layer: id.layer,
            head: id.head,
        })?;
        for (acc, w) in sum.iter_mut().zip(entry.map.as_slice()) {
            *acc += w;
        }
    }
    let scale = 1.0 / group.len() as f64;
    sum.iter_mut().for_each(|v| *v *= scale);
    Ok(AggregatedMap {
        map: AttentionMap::from_vec(n, sum)?,
        source_group: kind,
        member_count: group.len(),
    })
}

/// Population excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::DegenerateDistribution(format!(
            "{} value(s) cannot define a kurtosis",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    if !(m2 > (f64::EPSILON * mean.abs()).powi(2)) {
        return Err(Error::DegenerateDistribution("zero variance".into()));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Column-mean inbound attention `c_s = mean_{t in R, t >= s} A[t][s]` for
/// each column `s < R.end`.
pub fn column_inbound_means(map: &AttentionMap, range: ResponseRange) -> Result<Vec<f64>> {
    range.check(map.size())?;
    let mut sums = vec![0.0; range.end];
    for t in range.iter() {
        for (acc, w) in sums.iter_mut().zip(&map.row(t)[..=t]) {
            *acc += w;
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(s, total)| total / (range.end - s.max(range.start)) as f64)
        .collect())
}

/// Receiver score of one head: excess kurtosis of its column-mean inbound
/// attention. Higher means more selective.
pub fn receiver_score(map: &AttentionMap, range: ResponseRange) -> Result<f64> {
    excess_kurtosis(&column_inbound_means(map, range)?)
}

/// Receiver scores of every head plus the selected top-quantile set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSelection {
    /// Heads with a defined score.
    pub scores: BTreeMap<HeadId, f64>,
    /// Heads excluded because their score was undefined.
    pub degenerate: BTreeSet<HeadId>,
    pub selected: BTreeSet<HeadId>,
}

/// Scores every head and selects the top `ceil(q * scored)` by kurtosis,
/// ties going to the lower `(layer, head)`.
pub fn select_receiver_heads(
    stack: &AttentionStack,
    range: ResponseRange,
    quantile: f64,
) -> Result<ReceiverSelection> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::QuantileOutOfRange(quantile));
    }
    let results: Vec<(HeadId, Result<f64>)> = stack
        .entries()
        .par_iter()
        .map(|e| (e.id(), receiver_score(&e.map, range)))
        .collect();
    let mut scores = BTreeMap::new();
    let mut degenerate = BTreeSet::new();
    for (id, r) in results {
        match r {
            Ok(k) => {
                scores.insert(id, k);
            }
            Err(Error::DegenerateDistribution(_)) => {
                degenerate.insert(id);
            }
            Err(e) => return Err(e),
        }
    }
    let mut ranked: Vec<(HeadId, f64)> = scores.iter().map(|(&id, &k)| (id, k)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let selected = if ranked.is_empty() {
        BTreeSet::new()
    } else {
        let k = quantile_count(quantile, ranked.len());
        ranked[..k].iter().map(|(id, _)| *id).collect()
    };
    Ok(ReceiverSelection {
        scores,
        degenerate,
        selected,
    })
}

/// CSV `layer,head,span,group`. A head in several groups gets one row per
/// group; a head in none gets a single `none` row.
pub fn span_table_csv(
    table: &HeadSpanTable,
    groups: Option<&HeadGroups>,
    receivers: Option<&BTreeSet<HeadId>>,
) -> String {
    let mut out = String::from("layer,head,span,group\n");
    for (id, span) in &table.spans {
        let mut labels = Vec::new();
        if let Some(g) = groups {
            if g.local_set.contains(id) {
                labels.push("local");
            }
            if g.global_set.contains(id) {
                labels.push("global");
            }
        }
        if receivers.is_some_and(|r| r.contains(id)) {
            labels.push("receiver");
        }
        if labels.is_empty() {
            labels.push("none");
        }
        for label in labels {
            let _ = writeln!(out, "{},{},{},{}", id.layer, id.head, span, label);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::HeadEntry;

    fn table(spans: &[(u16, u16, f64)]) -> HeadSpanTable {
        HeadSpanTable {
            spans: spans.iter().map(|&(l, h, d)| (HeadId::new(l, h), d)).collect(),
            response_range: None,
        }
    }

    #[test]
    fn identity_span_is_zero() {
        let mut m = AttentionMap::zeros(6);
        (0..6).for_each(|t| m.set(t, t, 1.0));
        assert_eq!(head_span(&m, ResponseRange::new(2, 6)).unwrap(), 0.0);
    }

    #[test]
    fn column_zero_span() {
        let mut m = AttentionMap::zeros(6);
        (0..6).for_each(|t| m.set(t, 0, 1.0));
        assert_eq!(head_span(&m, ResponseRange::new(4, 6)).unwrap(), 4.5);
        assert_eq!(
            head_span(&m, ResponseRange::new(6, 6)).unwrap_err().code(),
            "empty-response-range"
        );
    }

    #[test]
    fn grouping_ten_heads() {
        let t = table(&(1..=10).map(|i| (0, i as u16, i as f64)).collect::<Vec<_>>());
        let g = group_heads(&t, 0.3).unwrap();
        let local: Vec<u16> = g.local_set.iter().map(|h| h.head).collect();
        let global: Vec<u16> = g.global_set.iter().map(|h| h.head).collect();
        assert_eq!(local, vec![1, 2, 3]);
        assert_eq!(global, vec![8, 9, 10]);
    }

    #[test]
    fn grouping_two_heads() {
        let g = group_heads(&table(&[(0, 0, 2.0), (1, 0, 1.0)]), 0.5).unwrap();
        assert_eq!(g.local_set.len(), 1);
        assert_eq!(g.global_set.len(), 1);
        assert!(g.local_set.is_disjoint(&g.global_set));
        assert!(g.local_set.contains(&HeadId::new(1, 0)));
    }

    #[test]
    fn grouping_ties_are_deterministic() {
        let t = table(&[(1, 1, 3.0), (0, 1, 3.0), (1, 0, 3.0), (0, 0, 3.0)]);
        let g = group_heads(&t, 0.25).unwrap();
        assert_eq!(g.local_set, BTreeSet::from([HeadId::new(0, 0)]));
        assert_eq!(g.global_set, BTreeSet::from([HeadId::new(1, 1)]));
        for _ in 0..10 {
            assert_eq!(group_heads(&t, 0.25).unwrap(), g);
        }
    }

    #[test]
    fn grouping_odd_count_stays_disjoint() {
        let g = group_heads(&table(&[(0, 0, 1.0), (0, 1, 2.0), (0, 2, 3.0)]), 0.5).unwrap();
        assert_eq!(g.local_set.len(), 1);
        assert_eq!(g.global_set.len(), 1);
    }

    #[test]
    fn grouping_errors() {
        let t = table(&[(0, 0, 1.0), (0, 1, 2.0)]);
        assert_eq!(group_heads(&t, 0.0).unwrap_err().code(), "quantile-out-of-range");
        assert_eq!(group_heads(&t, 0.6).unwrap_err().code(), "quantile-out-of-range");
        assert_eq!(group_heads(&table(&[(0, 0, 1.0)]), 0.3).unwrap_err().code(), "empty-group");
    }

    fn stack_of(maps: Vec<AttentionMap>) -> AttentionStack {
        let n = maps[0].size();
        let entries = maps
            .into_iter()
            .enumerate()
            .map(|(i, map)| HeadEntry { layer: 0, head: i as u16, map })
            .collect();
        AttentionStack::new(n, 1, entries).unwrap()
    }

    #[test]
    fn aggregate_hand_case() {
        let a = AttentionMap::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        let b = AttentionMap::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let stack = stack_of(vec![a.clone(), b]);
        let both = BTreeSet::from([HeadId::new(0, 0), HeadId::new(0, 1)]);
        let agg = aggregate_group(&stack, &both, GroupKind::Local).unwrap();
        assert_eq!(agg.map.row(1), &[0.5, 0.5, 0.0]);
        assert_eq!(agg.member_count, 2);

        let single = aggregate_group(&stack, &BTreeSet::from([HeadId::new(0, 0)]), GroupKind::Global).unwrap();
        assert_eq!(single.map, a);

        let twice = stack_of(vec![a.clone(), a.clone()]);
        assert_eq!(aggregate_group(&twice, &both, GroupKind::Local).unwrap().map, a);

        assert_eq!(
            aggregate_group(&stack, &BTreeSet::new(), GroupKind::Local).unwrap_err().code(),
            "empty-group"
        );
        assert_eq!(
            aggregate_group(&stack, &BTreeSet::from([HeadId::new(3, 0)]), GroupKind::Local)
                .unwrap_err()
                .code(),
            "missing-head"
        );
    }

    #[test]
    fn kurtosis_degenerate() {
        assert_eq!(excess_kurtosis(&[0.2; 8]).unwrap_err().code(), "degenerate-distribution");
        assert_eq!(excess_kurtosis(&[0.2]).unwrap_err().code(), "degenerate-distribution");
    }

    #[test]
    fn csv_lists_every_membership() {
        let t = table(&[(0, 0, 1.0), (0, 1, 2.0), (0, 2, 2.5)]);
        let g = group_heads(&t, 0.3).unwrap();
        let receivers = BTreeSet::from([HeadId::new(0, 2)]);
        let csv = span_table_csv(&t, Some(&g), Some(&receivers));
        assert_eq!(
            csv,
            "layer,head,span,group\n0,0,1,local\n0,1,2,none\n0,2,2.5,global\n0,2,2.5,receiver\n"
        );
    }
}
