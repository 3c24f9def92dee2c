//! Global prototype aggregation and prototype quality detection.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::ShardStats;
use crate::error::{Error, Result};
use crate::numeric::l2_distance;
use crate::prototype::{PrototypeSet, Submission};

/// How per-client class prototypes are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AggregationMode {
    /// `G_j = 1/|S_j| * sum_k (|D_kj| / |D_j|) P_kj`
    DividedBySharers,
    /// `G_j = sum_k (|D_kj| / |D_j|) P_kj`, a convex combination.
    #[default]
    Normalized,
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "divided" => Ok(Self::DividedBySharers),
            other => Err(Error::Config(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Normalized => "normalized",
            Self::DividedBySharers => "divided",
        })
    }
}

/// Statistics implied by the counts the submissions carry.
pub fn stats_of(submissions: &[Submission]) -> ShardStats {
    ShardStats::from_counts(submissions.iter().map(|s| (s.client_id, s.protos.counts())))
}

fn check_consistent(submissions: &[Submission], stats: &ShardStats) -> Result<()> {
    if submissions.len() != stats.per_client.len() {
        return Err(Error::Consistency(format!(
            "{} submissions but statistics describe {} clients",
            submissions.len(),
            stats.per_client.len()
        )));
    }
    for s in submissions {
        let expected = stats.per_client.get(&s.client_id).ok_or_else(|| {
            Error::Consistency(format!("client {} missing from statistics", s.client_id))
        })?;
        if *expected != s.protos.counts() {
            return Err(Error::Consistency(format!(
                "class counts of client {} disagree with statistics",
                s.client_id
            )));
        }
    }
    Ok(())
}

/// Weighted per-class combination of client prototypes.
///
/// Computed as `ref + sum_k w_k (P_k - ref)` with `ref` the lowest-id
/// client's prototype, so identical inputs reproduce exactly.
pub fn aggregate(submissions: &[Submission], stats: &ShardStats, mode: AggregationMode) -> Result<PrototypeSet> {
    if submissions.is_empty() {
        return Err(Error::Consistency("no prototype sets to aggregate".into()));
    }
    check_consistent(submissions, stats)?;
    let mut sorted: Vec<&Submission> = submissions.iter().collect();
    sorted.sort_by_key(|s| s.client_id);

    let mut out = PrototypeSet::new();
    for (&class, holders) in &stats.coverage {
        let total = stats.class_totals[&class];
        if holders.is_empty() || total == 0 {
            continue;
        }
        let members: Vec<(f64, &[f64])> = sorted
            .iter()
            .filter_map(|s| s.protos.get(class))
            .map(|p| (p.count as f64 / total as f64, p.values.as_slice()))
            .collect();
        let dim = members[0].1.len();
        if let Some((_, bad)) = members.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Shape(format!(
                "class {class}: prototypes of length {dim} and {} cannot be aggregated",
                bad.len()
            )));
        }
        let reference = members[0].1;
        let mut acc = reference.to_vec();
        for (w, v) in &members {
            for ((a, x), r) in acc.iter_mut().zip(*v).zip(reference) {
                *a += w * (x - r);
            }
        }
        if mode == AggregationMode::DividedBySharers {
            let s = holders.len() as f64;
            acc.iter_mut().for_each(|a| *a /= s);
        }
        out.insert(class, acc, total);
    }
    Ok(out)
}

/// Number of classes two prototype sets have in common.
pub fn shared_classes(protos: &PrototypeSet, global: &PrototypeSet) -> usize {
    protos.class_ids().filter(|j| global.get(*j).is_some()).count()
}

/// Mean L2 distance over classes present on both sides; 0 when none are.
pub fn discrepancy(protos: &PrototypeSet, global: &PrototypeSet) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (&j, p) in &protos.classes {
        if let Some(g) = global.get(j) {
            total += l2_distance(&p.values, &g.values);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Outcome of prototype quality detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Aggregate over every submitting client.
    pub provisional: PrototypeSet,
    /// `(client_id, d_k)` in ascending client order.
    pub discrepancies: Vec<(usize, f64)>,
    /// The `psi` clients with the largest discrepancy, ascending ids.
    pub filtered: Vec<usize>,
    /// Clients sharing no class with the provisional aggregate (their `d_k` is 0).
    pub no_overlap: Vec<usize>,
}

impl QualityReport {
    pub fn retained<'a>(&'a self, submissions: &'a [Submission]) -> impl Iterator<Item = &'a Submission> + 'a {
        submissions.iter().filter(move |s| self.filtered.binary_search(&s.client_id).is_err())
    }
}

/// Picks the `psi` largest discrepancies; ties filter the lower id first.
pub fn select_largest(discrepancies: &[(usize, f64)], psi: usize) -> Vec<usize> {
    let mut order: Vec<&(usize, f64)> = discrepancies.iter().collect();
    order.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    let mut ids: Vec<usize> = order.into_iter().take(psi).map(|(id, _)| *id).collect();
    ids.sort_unstable();
    ids
}

/// Aggregates everyone, scores each client against the aggregate, and
/// marks the `psi` worst for removal.
pub fn quality_detect(
    submissions: &[Submission],
    stats: &ShardStats,
    psi: usize,
    mode: AggregationMode,
) -> Result<QualityReport> {
    if psi >= submissions.len() {
        return Err(Error::Config(format!(
            "security level psi = {psi} must be below the number of submitting clients ({})",
            submissions.len()
        )));
    }
    let provisional = aggregate(submissions, stats, mode)?;
    let mut discrepancies = Vec::with_capacity(submissions.len());
    let mut no_overlap = Vec::new();
    for s in submissions {
        if shared_classes(&s.protos, &provisional) == 0 {
            no_overlap.push(s.client_id);
        }
        discrepancies.push((s.client_id, discrepancy(&s.protos, &provisional)));
    }
    discrepancies.sort_by_key(|(id, _)| *id);
    no_overlap.sort_unstable();
    let filtered = select_largest(&discrepancies, psi);
    Ok(QualityReport { provisional, discrepancies, filtered, no_overlap })
}

/// Aggregates the clients the report retained, with weights recomputed over
/// that subset. Classes held only by filtered clients are absent.
pub fn global_calculate(
    submissions: &[Submission],
    report: &QualityReport,
    stats: &ShardStats,
    mode: AggregationMode,
) -> Result<PrototypeSet> {
    check_consistent(submissions, stats)?;
    let known: BTreeSet<usize> = submissions.iter().map(|s| s.client_id).collect();
    if let Some(id) = report.filtered.iter().find(|id| !known.contains(id)) {
        return Err(Error::Consistency(format!("report filters unknown client {id}")));
    }
    let retained: Vec<Submission> = report.retained(submissions).cloned().collect();
    if retained.is_empty() {
        return Ok(PrototypeSet::new());
    }
    aggregate(&retained, &stats_of(&retained), mode)
}
