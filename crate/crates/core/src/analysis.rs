//! Closed-form security probability, clustering quality, upload accounting
//! and loss-trajectory diagnostics.

use serde::{Deserialize, Serialize};

use crate::consensus::max_faulty;
use crate::error::{Error, Result};
use crate::numeric::l2_distance;
use crate::softpool::KernelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityQuery {
    pub servers: usize,
    /// Probability that any single server is faulty.
    pub p_m: f64,
}

impl SecurityQuery {
    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::Config("security query needs at least one server".into()));
        }
        if !(0.0..=1.0).contains(&self.p_m) {
            return Err(Error::Config(format!("p_m must lie in [0, 1], got {}", self.p_m)));
        }
        Ok(())
    }
}

/// Probability that at most `floor((N-1)/3)` of `N` servers are faulty when
/// each fails independently with probability `p_m`.
///
/// Terms are built in log space so large `N` neither overflows the binomial
/// coefficient nor underflows the powers. When the result is close to 1 it
/// is taken as one minus the upper tail, which keeps its last bits accurate.
pub fn security_probability(q: SecurityQuery) -> Result<f64> {
    q.validate()?;
    let n = q.servers;
    let f_max = max_faulty(n);
    if q.p_m == 0.0 {
        return Ok(1.0);
    }
    if q.p_m == 1.0 {
        return Ok(0.0);
    }
    let (lp, lq) = (q.p_m.ln(), (-q.p_m).ln_1p());
    let mut ln_choose = 0.0;
    let mut lower = 0.0;
    let mut upper = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        let term = (ln_choose + i as f64 * lp + (n - i) as f64 * lq).exp();
        if i <= f_max {
            lower += term;
        } else {
            upper += term;
        }
    }
    let p = if lower > upper { 1.0 - upper } else { lower };
    Ok(p.clamp(0.0, 1.0))
}

/// Mean silhouette coefficient of labelled points under Euclidean distance.
///
/// Points alone in their class score 0, as do points with `a = b = 0`.
pub fn silhouette(points: &[(usize, Vec<f64>)]) -> Result<f64> {
    let mut labels: Vec<usize> = points.iter().map(|(l, _)| *l).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::Analysis(format!("silhouette needs at least two classes, got {}", labels.len())));
    }
    let slot = |l: usize| labels.binary_search(&l).expect("label collected above");
    let mut sizes = vec![0usize; labels.len()];
    for (l, _) in points {
        sizes[slot(*l)] += 1;
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; labels.len()];
    for (i, (li, xi)) in points.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, (lj, xj)) in points.iter().enumerate() {
            if i != j {
                sums[slot(*lj)] += l2_distance(xi, xj);
            }
        }
        let own = slot(*li);
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..labels.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// Scalars a client uploads per round: classes held times the pooled map size.
pub fn comm_params(classes_held: usize, proto_rows: usize, proto_cols: usize, spec: KernelSpec) -> Result<usize> {
    let (r, c) = spec.output_dims(proto_rows, proto_cols)?;
    Ok(classes_held * r * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    /// Rounds whose value exceeds the previous round's.
    pub increases: usize,
    pub final_over_initial: f64,
}

pub fn loss_trajectory_report(losses: &[f64]) -> Result<TrajectoryReport> {
    if losses.len() < 2 {
        return Err(Error::Analysis(format!("need at least two rounds, got {}", losses.len())));
    }
    let increases = losses.windows(2).filter(|w| w[1] > w[0]).count();
    let first = losses[0];
    let last = losses[losses.len() - 1];
    let final_over_initial = if first == last { 1.0 } else { last / first };
    Ok(TrajectoryReport { increases, final_over_initial })
}
