use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample (after dropping zeros) that gets the exact null distribution.
pub const EXACT_MAX_N: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Alternative: differences tend to be negative.
    Less,
    /// Alternative: differences tend to be positive.
    Greater,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "less" => Ok(Direction::Less),
            "greater" => Ok(Direction::Greater),
            _ => Err(Error::argument(format!("direction must be less or greater, got {s:?}"))),
        }
    }
}

/// Outcome of a one-sided paired Wilcoxon signed-rank test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub d_i: Vec<f64>,
    pub delta: f64,
    pub p_value: f64,
    pub direction: Direction,
    pub n: usize,
    /// Units left after dropping zero differences.
    pub n_nonzero: usize,
    /// Signed-rank statistic `W+` (sum of ranks of positive differences).
    pub w_plus: f64,
    pub exact: bool,
}

impl PairedComparison {
    pub fn significant(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Ranks of `|x|` starting at 1, ties sharing their average rank.
fn average_ranks(abs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0.0; abs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && abs[idx[end]] == abs[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Null distribution of the doubled signed-rank sum: `counts[s]` is the
/// number of sign assignments with `2·W+ = s`, as f64.
fn doubled_rank_counts(doubled: &[usize]) -> Vec<f64> {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// One-sided paired Wilcoxon signed-rank test on differences `d_i`.
///
/// Zeros are dropped and tied magnitudes get average ranks. Up to
/// [`EXACT_MAX_N`] nonzero differences the p-value comes from the exact null
/// distribution; above that from a normal approximation with continuity and
/// tie corrections. All-zero input gives `p = 1`.
pub fn wilcoxon_one_sided(d_i: &[f64], direction: Direction) -> Result<PairedComparison> {
    if d_i.is_empty() {
        return Err(Error::argument("Wilcoxon test needs at least one difference"));
    }
    if let Some(bad) = d_i.iter().find(|x| !x.is_finite()) {
        return Err(Error::argument(format!("non-finite difference {bad}")));
    }
    let delta = d_i.iter().sum::<f64>() / d_i.len() as f64;
    let nonzero: Vec<f64> = d_i.iter().copied().filter(|&x| x != 0.0).collect();
    let n = nonzero.len();
    let mut out = PairedComparison {
        d_i: d_i.to_vec(),
        delta,
        p_value: 1.0,
        direction,
        n: d_i.len(),
        n_nonzero: n,
        w_plus: 0.0,
        exact: true,
    };
    if n == 0 {
        return Ok(out);
    }
    let abs: Vec<f64> = nonzero.iter().map(|x| x.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nonzero.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    out.w_plus = w_plus;

    if n <= EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = doubled_rank_counts(&doubled);
        let observed = (2.0 * w_plus).round() as usize;
        let total: f64 = counts.iter().sum();
        let tail: f64 = match direction {
            Direction::Greater => counts[observed..].iter().sum(),
            Direction::Less => counts[..=observed].iter().sum(),
        };
        out.p_value = (tail / total).min(1.0);
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut k = 0;
        while k < sorted.len() {
            let mut e = k + 1;
            while e < sorted.len() && sorted[e] == sorted[k] {
                e += 1;
            }
            let t = (e - k) as f64;
            tie_term += t * t * t - t;
            k = e;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let sd = var.sqrt();
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        out.p_value = match direction {
            Direction::Greater => 1.0 - std_normal.cdf((w_plus - mean - 0.5) / sd),
            Direction::Less => std_normal.cdf((w_plus - mean + 0.5) / sd),
        };
        out.exact = false;
    }
    Ok(out)
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::argument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::argument("AUC needs at least one positive and one negative label"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::argument("NaN score"));
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, q) = (pos as f64, neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Largest over group pairs of `½(|ΔTPR| + |ΔFPR|)`.
///
/// A group without positives (negatives) has no TPR (FPR) and is left out of
/// that rate's gap. Fewer than two groups give 0.
pub fn equalized_odds(pred: &[bool], labels: &[bool], group: &[u32]) -> Result<f64> {
    if pred.len() != labels.len() || pred.len() != group.len() {
        return Err(Error::argument("predictions, labels and groups differ in length"));
    }
    let mut groups: Vec<u32> = group.to_vec();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        log::warn!("equalized odds over a single group is 0 by convention");
        return Ok(0.0);
    }
    let rates: Vec<(Option<f64>, Option<f64>)> = groups
        .iter()
        .map(|&g| {
            let (mut tp, mut p, mut fp, mut n) = (0usize, 0usize, 0usize, 0usize);
            for ((&yhat, &y), &gg) in pred.iter().zip(labels).zip(group) {
                if gg != g {
                    continue;
                }
                if y {
                    p += 1;
                    tp += yhat as usize;
                } else {
                    n += 1;
                    fp += yhat as usize;
                }
            }
            let rate = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
            (rate(tp, p), rate(fp, n))
        })
        .collect();
    let gap = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs(),
        _ => 0.0,
    };
    let mut eo: f64 = 0.0;
    for a in 0..rates.len() {
        for b in a + 1..rates.len() {
            eo = eo.max(0.5 * (gap(rates[a].0, rates[b].0) + gap(rates[a].1, rates[b].1)));
        }
    }
    Ok(eo)
}
