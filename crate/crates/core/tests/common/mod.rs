//! Reference implementations used only by tests. They are written as
//! plainly as possible and share no code with the library paths they check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_se::loss::{self, Aggregation, AggregationSpec, Distance, DistanceKind, Grid3};
use robust_se::model::{MaskNet, MaskNetConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(k: usize, t: usize, f: usize, lo: f64, hi: f64, seed: u64) -> Grid3 {
    let mut r = rng(seed);
    Grid3::from_shape_simple_fn((k, t, f), || r.random_range(lo..hi))
}

fn to_nested(e: &Grid3) -> Vec<Vec<Vec<f64>>> {
    let (k, t, f) = e.dim();
    (0..k)
        .map(|a| (0..t).map(|b| (0..f).map(|c| e[[a, b, c]]).collect()).collect())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn median_lower(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[(sorted.len() - 1) / 2]
}

fn trimmed_mean(v: &[f64], frac: f64) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut keep = (frac * v.len() as f64).floor() as usize;
    if keep < 1 {
        keep = 1;
    }
    mean(&sorted[..keep])
}

/// Naive sort-and-loop evaluation of every aggregation order.
pub fn oracle_aggregate(e: &Grid3, order: Aggregation, trim: f64) -> f64 {
    let v = to_nested(e);
    let (k, t, f) = e.dim();
    match order {
        Aggregation::SampleTfMean => {
            let mut all = Vec::new();
            for a in &v {
                for b in a {
                    all.extend_from_slice(b);
                }
            }
            mean(&all)
        }
        Aggregation::SampleMedianTfMean => {
            let per: Vec<f64> = v.iter().map(|a| mean(&a.concat())).collect();
            median_lower(&per)
        }
        Aggregation::SampleMeanTfMedian => {
            let per: Vec<f64> = v.iter().map(|a| median_lower(&a.concat())).collect();
            mean(&per)
        }
        Aggregation::SampleMeanTmedianFmean => {
            let per: Vec<f64> = v
                .iter()
                .map(|a| {
                    let frames: Vec<f64> = a.iter().map(|row| mean(row)).collect();
                    median_lower(&frames)
                })
                .collect();
            mean(&per)
        }
        Aggregation::TfMeanSampleMedian | Aggregation::TfMeanSampleTrimmedMean => {
            let mut bins = Vec::new();
            for b in 0..t {
                for c in 0..f {
                    let col: Vec<f64> = (0..k).map(|a| v[a][b][c]).collect();
                    bins.push(if order == Aggregation::TfMeanSampleMedian {
                        median_lower(&col)
                    } else {
                        trimmed_mean(&col, trim)
                    });
                }
            }
            mean(&bins)
        }
    }
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between the analytic loss gradient and central
/// differences, on inputs kept away from ties and the SDR clamp.
pub fn loss_gradient_error(d: Distance, order: Aggregation, seed: u64) -> f64 {
    let (k, t, f) = (5, 3, 4);
    let target = random_grid(k, t, f, 0.5, 2.0, seed);
    let mut r = rng(seed + 1000);
    let est = Grid3::from_shape_fn((k, t, f), |idx| {
        let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        target[idx] + sign * r.random_range(0.05..0.8)
    });
    let dist = DistanceKind::from(d);
    let spec = AggregationSpec::from(order);
    let (_, grad) = loss::loss_gradient(&est, &target, &dist, &spec).unwrap();
    let x: Vec<f64> = est.iter().copied().collect();
    let mut eval = |p: &[f64]| {
        let e = Grid3::from_shape_vec((k, t, f), p.to_vec()).unwrap();
        loss::loss_value(&e, &target, &dist, &spec).unwrap()
    };
    let mut worst: f64 = 0.0;
    for (i, g) in grad.iter().enumerate() {
        let fd = central_difference(&mut eval, &x, i, 1e-4);
        worst = worst.max(rel_err(*g, fd, 1e-6));
    }
    worst
}

/// Same check for the parameters of a tiny mask network, through a fixed
/// random linear read-out of its masks.
pub fn network_gradient_error(n_outputs: usize, seed: u64) -> f64 {
    let cfg = MaskNetConfig {
        n_freq: 9,
        bottleneck: 8,
        recurrent_layers: 1,
        bidirectional: true,
        n_outputs,
    };
    let net = MaskNet::new(cfg, seed).unwrap();
    let mag = random_grid(2, 4, 9, 0.0, 2.0, seed + 7);
    let weights: Vec<Grid3> = (0..n_outputs)
        .map(|i| random_grid(2, 4, 9, -1.0, 1.0, seed + 100 + i as u64))
        .collect();
    let scalar = |net: &MaskNet| -> f64 {
        let m = net.forward(&mag).unwrap();
        m.masks
            .iter()
            .zip(&weights)
            .map(|(a, w)| (a * w).sum())
            .sum()
    };
    let (_, trace) = net.forward_trace(&mag).unwrap();
    let grad = net.backward(&trace, &weights).unwrap();
    let x = net.params.clone();
    let mut probe = net.clone();
    let mut eval = |p: &[f64]| {
        probe.params.copy_from_slice(p);
        scalar(&probe)
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let fd = central_difference(&mut eval, &x, i, 1e-5);
        worst = worst.max(rel_err(grad[i], fd, 1e-6));
    }
    worst
}
