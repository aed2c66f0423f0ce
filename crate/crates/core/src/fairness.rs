//! Sales-ratio fairness measures.
//!
//! Samples are ranked by sale-price quantile within the evaluation
//! population. Group fairness penalizes every pair in which a lower-priced
//! group's ratio exceeds a higher-priced group's ratio; deviation-weighted
//! fairness penalizes over-assessment at the low end and under-assessment at
//! the high end.

use serde::{Deserialize, Serialize};

use crate::dataset::{PropertyRecord, QuantileIndex};
use crate::error::{Error, Result};
use crate::ksegment::KSegmentModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub sale_price: f64,
    pub sale_quantile: f64,
    pub assessed_value: f64,
    pub ratio: f64,
}

/// Builds ratio samples from paired sale prices and assessed values.
pub fn ratio_samples(sale_prices: &[f64], assessed: &[f64]) -> Result<Vec<RatioSample>> {
    if sale_prices.len() != assessed.len() {
        return Err(Error::Dataset(format!(
            "{} sale prices but {} assessed values",
            sale_prices.len(),
            assessed.len()
        )));
    }
    let index = QuantileIndex::new(sale_prices)?;
    Ok(sale_prices
        .iter()
        .zip(assessed)
        .map(|(&x, &v)| RatioSample {
            sale_price: x,
            sale_quantile: index.quantile_of(x),
            assessed_value: v,
            ratio: v / x,
        })
        .collect())
}

pub fn sta_ratios(records: &[PropertyRecord], model: &KSegmentModel) -> Result<Vec<RatioSample>> {
    let prices = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.sale_price
                .ok_or_else(|| Error::Dataset(format!("record {i} (`{}`) has no sale price", r.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let assessed = model.assess_all(records)?;
    ratio_samples(&prices, &assessed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    pub n: usize,
    pub alpha: f64,
}

impl FairnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Partition(format!("group count must be at least 2, got {}", self.n)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Equal-count groups in ascending quantile order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPartition {
    pub n: usize,
    /// Largest quantile in each of groups `1..n-1`.
    pub boundaries: Vec<f64>,
    /// 1-based group of each sample, indexed like the input samples.
    pub group_of: Vec<usize>,
    pub group_sizes: Vec<usize>,
}

impl GroupPartition {
    /// Sample indices belonging to 1-based group `g`.
    pub fn members(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        self.group_of
            .iter()
            .enumerate()
            .filter(move |(_, &h)| h == g)
            .map(|(i, _)| i)
    }
}

/// Splits samples into `n` groups of equal size by ascending quantile; the
/// first `m mod n` groups take one extra sample. Ties in quantile are
/// ordered by sample index.
pub fn partition_groups(samples: &[RatioSample], n: usize) -> Result<GroupPartition> {
    if n < 2 {
        return Err(Error::Partition(format!("group count must be at least 2, got {n}")));
    }
    let m = samples.len();
    if m < n {
        return Err(Error::Partition(format!("{m} samples cannot fill {n} groups")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .sale_quantile
            .total_cmp(&samples[b].sale_quantile)
            .then(a.cmp(&b))
    });
    let group_sizes: Vec<usize> = (0..n).map(|g| m / n + usize::from(g < m % n)).collect();
    let mut group_of = vec![0; m];
    let mut boundaries = Vec::with_capacity(n - 1);
    let mut pos = 0;
    for (g, &size) in group_sizes.iter().enumerate() {
        for &i in &order[pos..pos + size] {
            group_of[i] = g + 1;
        }
        pos += size;
        if g + 1 < n {
            boundaries.push(samples[order[pos - 1]].sale_quantile);
        }
    }
    Ok(GroupPartition {
        n,
        boundaries,
        group_of,
        group_sizes,
    })
}

fn check_partition(samples: &[RatioSample], partition: &GroupPartition) -> Result<()> {
    if partition.group_of.len() != samples.len() {
        return Err(Error::Partition(format!(
            "partition covers {} samples, got {}",
            partition.group_of.len(),
            samples.len()
        )));
    }
    Ok(())
}

fn negate(total: f64) -> f64 {
    if total == 0.0 {
        0.0
    } else {
        -total
    }
}

/// Group fairness by direct enumeration of all cross-group pairs, `O(m²)`.
pub fn group_fairness_bruteforce(samples: &[RatioSample], partition: &GroupPartition) -> Result<f64> {
    check_partition(samples, partition)?;
    let mut total = 0.0;
    for (i, si) in samples.iter().enumerate() {
        let gi = partition.group_of[i];
        for (j, sj) in samples.iter().enumerate() {
            let gj = partition.group_of[j];
            if gi < gj {
                let excess = si.ratio - sj.ratio;
                if excess > 0.0 {
                    let norm = (partition.group_sizes[gi - 1] * partition.group_sizes[gj - 1]) as f64;
                    total += excess / norm;
                }
            }
        }
    }
    Ok(negate(total))
}

/// `sum over a in lower, b in upper of (a - b)^+`, with `upper` sorted
/// ascending and `prefix[c]` the sum of its first `c` entries.
fn positive_excess(lower: &[f64], upper_sorted: &[f64], prefix: &[f64]) -> f64 {
    lower
        .iter()
        .map(|&a| {
            let c = upper_sorted.partition_point(|&b| b < a);
            c as f64 * a - prefix[c]
        })
        .sum()
}

/// Group fairness in `O(m log m)` per group pair via sorting and prefix sums.
pub fn group_fairness_fast(samples: &[RatioSample], partition: &GroupPartition) -> Result<f64> {
    check_partition(samples, partition)?;
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); partition.n];
    for (s, &g) in samples.iter().zip(&partition.group_of) {
        groups[g - 1].push(s.ratio);
    }
    let sorted: Vec<(Vec<f64>, Vec<f64>)> = groups
        .iter()
        .map(|g| {
            let mut v = g.clone();
            v.sort_by(f64::total_cmp);
            let mut prefix = Vec::with_capacity(v.len() + 1);
            prefix.push(0.0);
            let mut acc = 0.0;
            for &x in &v {
                acc += x;
                prefix.push(acc);
            }
            (v, prefix)
        })
        .collect();

    let mut total = 0.0;
    for a in 0..partition.n {
        for b in a + 1..partition.n {
            let (upper, prefix) = &sorted[b];
            let norm = (groups[a].len() * groups[b].len()) as f64;
            if norm > 0.0 {
                total += positive_excess(&groups[a], upper, prefix) / norm;
            }
        }
    }
    Ok(negate(total))
}

pub fn group_fairness(samples: &[RatioSample], n: usize) -> Result<f64> {
    group_fairness_fast(samples, &partition_groups(samples, n)?)
}

/// Deviation-weighted fairness with weights `exp(-alpha * q)` on
/// over-assessment and `exp(-alpha * (1 - q))` on under-assessment.
pub fn deviation_weighted_fairness(samples: &[RatioSample], alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be nonnegative, got {alpha}")));
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            let over = (s.ratio - 1.0).max(0.0);
            let under = (1.0 - s.ratio).max(0.0);
            over * (-alpha * s.sale_quantile).exp() + under * (-alpha * (1.0 - s.sale_quantile)).exp()
        })
        .sum();
    Ok(negate(total))
}

/// A model's fairness score relative to the original model's score.
pub fn relative_unfairness(model_score: f64, original_score: f64) -> Result<f64> {
    if original_score == 0.0 {
        return Err(Error::DegenerateBaseline(original_score));
    }
    if !(original_score < 0.0) {
        return Err(Error::Domain(format!(
            "fairness scores are nonpositive; baseline score {original_score} is invalid"
        )));
    }
    // `+ 0.0` turns -0.0 into 0.0 for a perfectly fair model.
    Ok(model_score / original_score + 0.0)
}
