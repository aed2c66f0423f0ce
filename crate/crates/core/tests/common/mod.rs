//! Independent reference implementations and fixtures shared by the
//! integration and acceptance tests.

#![allow(dead_code)]

use ksegment::dataset::QuantileIndex;
use ksegment::evaluation::ParetoPoint;
use ksegment::fairness::RatioSample;
use ksegment::gbm::{GbmModel, TargetTransform};
use ksegment::ksegment::KSegmentModel;
use ksegment::segmentation::{SegmentationScheme, SmoothingSpec};
use rand::Rng;

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Ratio samples whose sale quantiles are the empirical CDF of the prices.
pub fn samples_from(prices: &[f64], ratios: &[f64]) -> Vec<RatioSample> {
    let m = prices.len() as f64;
    prices
        .iter()
        .zip(ratios)
        .map(|(&p, &r)| RatioSample {
            sale_price: p,
            sale_quantile: prices.iter().filter(|&&q| q <= p).count() as f64 / m,
            assessed_value: p * r,
            ratio: r,
        })
        .collect()
}

/// Random samples; `tie_levels` > 0 draws prices from that many distinct
/// values so quantile ties occur.
pub fn random_samples<R: Rng>(rng: &mut R, m: usize, tie_levels: usize) -> Vec<RatioSample> {
    let prices: Vec<f64> = (0..m)
        .map(|_| {
            if tie_levels > 0 {
                1e5 * (1 + rng.gen_range(0..tie_levels)) as f64
            } else {
                rng.gen_range(5e4..2e6)
            }
        })
        .collect();
    let ratios: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..2.5)).collect();
    samples_from(&prices, &ratios)
}

/// Group fairness straight from the definition: sort by quantile (ties by
/// index), cut into `n` groups whose sizes differ by at most one with the
/// larger groups first, and sum every ordered cross-group pair.
pub fn group_fairness_oracle(samples: &[RatioSample], n: usize) -> f64 {
    let m = samples.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .sale_quantile
            .partial_cmp(&samples[b].sale_quantile)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut group = vec![0usize; m];
    let mut sizes = vec![0usize; n];
    let mut pos = 0;
    for (g, size) in sizes.iter_mut().enumerate() {
        *size = m / n + if g < m % n { 1 } else { 0 };
        for &i in &order[pos..pos + *size] {
            group[i] = g;
        }
        pos += *size;
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if group[i] < group[j] {
                let diff = samples[i].ratio - samples[j].ratio;
                if diff > 0.0 {
                    total += diff / (sizes[group[i]] * sizes[group[j]]) as f64;
                }
            }
        }
    }
    -total
}

/// Pairwise dominance check, `O(n²)`.
pub fn non_dominated_oracle(points: &[ParetoPoint]) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&i| {
            !points.iter().any(|q| {
                let p = &points[i];
                q.accuracy >= p.accuracy
                    && q.fairness >= p.fairness
                    && (q.accuracy > p.accuracy || q.fairness > p.fairness)
            })
        })
        .collect();
    keep.sort_by(|&a, &b| points[a].accuracy.partial_cmp(&points[b].accuracy).unwrap().then(a.cmp(&b)));
    keep
}

/// Fairness of the chord between `a` and `b` at accuracy `x`.
pub fn chord_at(a: &ParetoPoint, b: &ParetoPoint, x: f64) -> f64 {
    a.fairness + (b.fairness - a.fairness) * (x - a.accuracy) / (b.accuracy - a.accuracy)
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, grid: bool) -> Vec<ParetoPoint> {
    (0..n)
        .map(|i| {
            let (a, f) = if grid {
                (rng.gen_range(0..8) as f64 / 8.0, -(rng.gen_range(0..8) as f64) / 8.0)
            } else {
                (rng.gen_range(0.0..1.0), -rng.gen_range(0.0..1.0))
            };
            ParetoPoint {
                model: format!("m{i}"),
                accuracy: a,
                fairness: f,
            }
        })
        .collect()
}

/// An ensemble whose k-th submodel predicts the constant `values[k]`.
pub fn constant_model(scheme: &SegmentationScheme, spec: &SmoothingSpec, values: &[f64]) -> KSegmentModel {
    let submodels = values
        .iter()
        .map(|&c| GbmModel::constant(c, 1, TargetTransform::Identity))
        .collect();
    let index = QuantileIndex::new(&[1.0, 2.0, 3.0]).unwrap();
    KSegmentModel::from_parts(scheme.clone(), spec.clone(), submodels, index).unwrap()
}

/// Evenly spaced points covering `[0, 1]` inclusive.
pub fn unit_grid(points: usize) -> impl Iterator<Item = f64> {
    (0..points).map(move |i| i as f64 / (points - 1) as f64)
}
