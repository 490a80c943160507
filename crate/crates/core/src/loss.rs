//! Per-bin distances and axis-ordered aggregation.
//!
//! Every loss follows the same template: a distance is evaluated for each
//! (sample, frame, frequency) cell of a `K×T×F` magnitude grid, then the
//! resulting [`ErrorTensor`] is collapsed to a scalar by one of the
//! [`Aggregation`] orders. Median and trimmed-mean reductions are
//! differentiated by selection: the gradient flows only into the elements
//! the reduction actually picked.
//!
//! Selection rules, shared by all robust orders:
//! - the median of an even-length list is the lower of the two middle
//!   order statistics, so exactly one element is selected;
//! - ties are broken by the lowest index;
//! - a trimmed mean keeps `max(1, floor(trim_fraction * K))` smallest
//!   samples per T-F bin.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K×T×F` real grid (sample × frame × frequency).
pub type Grid3 = Array3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[serde(try_from = "String")]
pub enum Distance {
    Mse,
    Sdr,
}

impl TryFrom<String> for Distance {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Distance::Mse),
            "sdr" => Ok(Distance::Sdr),
            other => Err(Error::Config(format!(
                "unknown distance '{other}', expected mse|sdr"
            ))),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::Mse => "mse",
            Distance::Sdr => "sdr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceKind {
    pub metric: Distance,
    #[serde(default = "default_clamp")]
    pub sdr_clamp_db: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_clamp() -> f64 {
    30.0
}

fn default_epsilon() -> f64 {
    1e-8
}

impl DistanceKind {
    pub fn mse() -> Self {
        Self::from(Distance::Mse)
    }

    pub fn sdr() -> Self {
        Self::from(Distance::Sdr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sdr_clamp_db > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "sdr clamp ({}) and epsilon ({}) must be positive",
                self.sdr_clamp_db, self.epsilon
            )));
        }
        Ok(())
    }
}

impl From<Distance> for DistanceKind {
    fn from(metric: Distance) -> Self {
        Self {
            metric,
            sdr_clamp_db: default_clamp(),
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String")]
pub enum Aggregation {
    #[serde(rename = "sample_tf_mean")]
    SampleTfMean,
    #[serde(rename = "sample_median_tf_mean")]
    SampleMedianTfMean,
    #[serde(rename = "sample_mean_tf_median")]
    SampleMeanTfMedian,
    #[serde(rename = "sample_mean_tmedian_fmean")]
    SampleMeanTmedianFmean,
    #[serde(rename = "tf_mean_sample_median")]
    TfMeanSampleMedian,
    #[serde(rename = "tf_mean_sample_trimmed_mean")]
    TfMeanSampleTrimmedMean,
}

impl Aggregation {
    pub const ALL: [Aggregation; 6] = [
        Aggregation::SampleTfMean,
        Aggregation::SampleMedianTfMean,
        Aggregation::SampleMeanTfMedian,
        Aggregation::SampleMeanTmedianFmean,
        Aggregation::TfMeanSampleMedian,
        Aggregation::TfMeanSampleTrimmedMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::SampleTfMean => "sample_tf_mean",
            Aggregation::SampleMedianTfMean => "sample_median_tf_mean",
            Aggregation::SampleMeanTfMedian => "sample_mean_tf_median",
            Aggregation::SampleMeanTmedianFmean => "sample_mean_tmedian_fmean",
            Aggregation::TfMeanSampleMedian => "tf_mean_sample_median",
            Aggregation::TfMeanSampleTrimmedMean => "tf_mean_sample_trimmed_mean",
        }
    }
}

impl TryFrom<String> for Aggregation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Aggregation::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| {
                let names: Vec<_> = Aggregation::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!(
                    "unknown aggregation '{s}', expected one of {}",
                    names.join("|")
                ))
            })
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub order: Aggregation,
    #[serde(default = "default_trim")]
    pub trim_fraction: f64,
}

fn default_trim() -> f64 {
    0.25
}

impl AggregationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.trim_fraction > 0.0 && self.trim_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "trim fraction must lie in (0, 1], got {}",
                self.trim_fraction
            )));
        }
        Ok(())
    }

    /// Samples kept per T-F bin by the trimmed mean.
    pub fn trim_count(&self, k: usize) -> usize {
        ((self.trim_fraction * k as f64).floor() as usize).clamp(1, k.max(1))
    }
}

impl From<Aggregation> for AggregationSpec {
    fn from(order: Aggregation) -> Self {
        Self {
            order,
            trim_fraction: default_trim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTensor {
    pub values: Grid3,
    pub distance: Distance,
}

impl ErrorTensor {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

fn check_shapes(est: &Grid3, target: &Grid3) -> Result<()> {
    if est.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "estimate {:?} vs target {:?}",
            est.dim(),
            target.dim()
        )));
    }
    if est.is_empty() {
        return Err(Error::Shape("empty grid".into()));
    }
    Ok(())
}

pub fn mse_error(est: &Grid3, target: &Grid3) -> Result<ErrorTensor> {
    check_shapes(est, target)?;
    let values = ndarray::Zip::from(est)
        .and(target)
        .map_collect(|&a, &b| (a - b) * (a - b));
    Ok(ErrorTensor {
        values,
        distance: Distance::Mse,
    })
}

fn sdr_value(est: f64, target: f64, d: &DistanceKind) -> f64 {
    let diff = est - target;
    let v = 10.0 * ((diff * diff + d.epsilon) / (target * target + d.epsilon)).log10();
    v.clamp(-d.sdr_clamp_db, d.sdr_clamp_db)
}

/// Per-bin negative SDR in dB, clamped to `±sdr_clamp_db`. Larger
/// distortion gives a larger value.
pub fn sdr_error(est: &Grid3, target: &Grid3, d: &DistanceKind) -> Result<ErrorTensor> {
    check_shapes(est, target)?;
    d.validate()?;
    let values = ndarray::Zip::from(est)
        .and(target)
        .map_collect(|&a, &b| sdr_value(a, b, d));
    Ok(ErrorTensor {
        values,
        distance: Distance::Sdr,
    })
}

pub fn distance(est: &Grid3, target: &Grid3, d: &DistanceKind) -> Result<ErrorTensor> {
    match d.metric {
        Distance::Mse => mse_error(est, target),
        Distance::Sdr => sdr_error(est, target, d),
    }
}

/// Elementwise derivative of the distance with respect to the estimate.
fn distance_derivative(est: &Grid3, target: &Grid3, d: &DistanceKind) -> Grid3 {
    match d.metric {
        Distance::Mse => ndarray::Zip::from(est)
            .and(target)
            .map_collect(|&a, &b| 2.0 * (a - b)),
        Distance::Sdr => {
            let c = 10.0 / std::f64::consts::LN_10;
            ndarray::Zip::from(est).and(target).map_collect(|&a, &b| {
                let raw = 10.0 * (((a - b) * (a - b) + d.epsilon) / (b * b + d.epsilon)).log10();
                if raw <= -d.sdr_clamp_db || raw >= d.sdr_clamp_db {
                    0.0
                } else {
                    c * 2.0 * (a - b) / ((a - b) * (a - b) + d.epsilon)
                }
            })
        }
    }
}

// Sort key: value, then index.
fn by_value_then_index(values: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))
}

/// Index of the (lower) median.
pub fn lower_median_index(values: &[f64]) -> usize {
    assert!(!values.is_empty());
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(by_value_then_index(values));
    idx[(values.len() - 1) / 2]
}

/// Indices of the `n` smallest values, in ascending index order.
pub fn smallest_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(by_value_then_index(values));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Aggregated loss and the subgradient `dL/de` for every error element.
pub fn aggregate_with_weights(e: &ErrorTensor, spec: &AggregationSpec) -> (f64, Grid3) {
    let v = &e.values;
    let (k, t, f) = v.dim();
    let mut w = Grid3::zeros((k, t, f));
    let kf = k as f64;
    let tf = (t * f) as f64;

    let value = match spec.order {
        Aggregation::SampleTfMean => {
            // Per-bin sample mean, then mean over bins; shares its summation
            // order with the trimmed mean so that trim_fraction = 1 agrees
            // bit for bit.
            let mut total = 0.0;
            for ti in 0..t {
                for fi in 0..f {
                    let mut s = 0.0;
                    for ki in 0..k {
                        s += v[[ki, ti, fi]];
                    }
                    total += s / kf;
                }
            }
            w.fill(1.0 / (kf * tf));
            total / tf
        }
        Aggregation::TfMeanSampleTrimmedMean => {
            let keep = spec.trim_count(k);
            let mut total = 0.0;
            let mut column = vec![0.0; k];
            for ti in 0..t {
                for fi in 0..f {
                    for ki in 0..k {
                        column[ki] = v[[ki, ti, fi]];
                    }
                    let mut s = 0.0;
                    for ki in smallest_indices(&column, keep) {
                        s += column[ki];
                        w[[ki, ti, fi]] = 1.0 / (keep as f64 * tf);
                    }
                    total += s / keep as f64;
                }
            }
            total / tf
        }
        Aggregation::TfMeanSampleMedian => {
            let mut total = 0.0;
            let mut column = vec![0.0; k];
            for ti in 0..t {
                for fi in 0..f {
                    for ki in 0..k {
                        column[ki] = v[[ki, ti, fi]];
                    }
                    let m = lower_median_index(&column);
                    total += column[m];
                    w[[m, ti, fi]] = 1.0 / tf;
                }
            }
            total / tf
        }
        Aggregation::SampleMedianTfMean => {
            let means: Vec<f64> = (0..k)
                .map(|ki| {
                    let mut s = 0.0;
                    for ti in 0..t {
                        for fi in 0..f {
                            s += v[[ki, ti, fi]];
                        }
                    }
                    s / tf
                })
                .collect();
            let m = lower_median_index(&means);
            w.index_axis_mut(ndarray::Axis(0), m).fill(1.0 / tf);
            means[m]
        }
        Aggregation::SampleMeanTfMedian => {
            let mut total = 0.0;
            let mut cells = vec![0.0; t * f];
            for ki in 0..k {
                for ti in 0..t {
                    for fi in 0..f {
                        cells[ti * f + fi] = v[[ki, ti, fi]];
                    }
                }
                let m = lower_median_index(&cells);
                total += cells[m];
                w[[ki, m / f, m % f]] = 1.0 / kf;
            }
            total / kf
        }
        Aggregation::SampleMeanTmedianFmean => {
            let mut total = 0.0;
            let mut frames = vec![0.0; t];
            for ki in 0..k {
                for ti in 0..t {
                    let mut s = 0.0;
                    for fi in 0..f {
                        s += v[[ki, ti, fi]];
                    }
                    frames[ti] = s / f as f64;
                }
                let m = lower_median_index(&frames);
                total += frames[m];
                for fi in 0..f {
                    w[[ki, m, fi]] = 1.0 / (kf * f as f64);
                }
            }
            total / kf
        }
    };
    (value, w)
}

pub fn aggregate(e: &ErrorTensor, spec: &AggregationSpec) -> f64 {
    aggregate_with_weights(e, spec).0
}

/// Loss value and its gradient with respect to the estimate.
pub fn loss_gradient(
    est: &Grid3,
    target: &Grid3,
    d: &DistanceKind,
    spec: &AggregationSpec,
) -> Result<(f64, Grid3)> {
    let e = distance(est, target, d)?;
    let (value, weights) = aggregate_with_weights(&e, spec);
    let mut grad = distance_derivative(est, target, d);
    grad *= &weights;
    Ok((value, grad))
}

/// Loss value only.
pub fn loss_value(
    est: &Grid3,
    target: &Grid3,
    d: &DistanceKind,
    spec: &AggregationSpec,
) -> Result<f64> {
    Ok(aggregate(&distance(est, target, d)?, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn grid(k: usize, t: usize, f: usize, v: &[f64]) -> Grid3 {
        Array3::from_shape_vec((k, t, f), v.to_vec()).unwrap()
    }

    fn err(k: usize, t: usize, f: usize, v: &[f64]) -> ErrorTensor {
        ErrorTensor {
            values: grid(k, t, f, v),
            distance: Distance::Mse,
        }
    }

    fn agg(order: Aggregation) -> AggregationSpec {
        order.into()
    }

    #[test]
    fn mse_examples() {
        let e = mse_error(&grid(1, 1, 1, &[2.0]), &grid(1, 1, 1, &[0.0])).unwrap();
        assert_eq!(e.values[[0, 0, 0]], 4.0);
        let a = grid(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(mse_error(&a, &a).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Grid3::zeros((1, 2, 3));
        let b = Grid3::zeros((1, 3, 2));
        assert!(matches!(mse_error(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(
            sdr_error(&a, &b, &DistanceKind::sdr()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sdr_examples() {
        let d = DistanceKind::sdr();
        let v = |est: f64, tgt: f64| {
            sdr_error(&grid(1, 1, 1, &[est]), &grid(1, 1, 1, &[tgt]), &d)
                .unwrap()
                .values[[0, 0, 0]]
        };
        assert!(v(4.0, 2.0).abs() < 1e-9);
        assert_eq!(v(1.0, 1.0), -30.0);
        assert!((v(1.1, 1.0) - (-20.0)).abs() < 1e-5);
        assert_eq!(v(1e6, 0.0), 30.0);
    }

    #[test]
    fn aggregation_examples() {
        let e = err(3, 1, 1, &[1.0, 2.0, 100.0]);
        assert_eq!(aggregate(&e, &agg(Aggregation::SampleMedianTfMean)), 2.0);

        let e = err(1, 1, 3, &[1.0, 2.0, 100.0]);
        assert_eq!(aggregate(&e, &agg(Aggregation::SampleMeanTfMedian)), 2.0);

        // bin 1 samples [1,5,9], bin 2 samples [2,4,6]
        let e = err(3, 1, 2, &[1.0, 2.0, 5.0, 4.0, 9.0, 6.0]);
        assert_eq!(aggregate(&e, &agg(Aggregation::TfMeanSampleMedian)), 4.5);

        let e = err(4, 1, 1, &[3.0, 1.0, 2.0, 9.0]);
        assert_eq!(
            aggregate(&e, &agg(Aggregation::TfMeanSampleTrimmedMean)),
            1.0
        );

        // per-frame F means [1, 7, 100]
        let e = err(1, 3, 2, &[0.0, 2.0, 7.0, 7.0, 50.0, 150.0]);
        assert_eq!(aggregate(&e, &agg(Aggregation::SampleMeanTmedianFmean)), 7.0);
    }

    #[test]
    fn even_median_takes_lower_middle() {
        assert_eq!(lower_median_index(&[4.0, 1.0, 3.0, 2.0]), 3);
        // ties: lowest index wins
        assert_eq!(lower_median_index(&[5.0, 5.0, 5.0]), 1);
        assert_eq!(lower_median_index(&[1.0, 1.0]), 0);
        assert_eq!(smallest_indices(&[2.0, 1.0, 1.0, 0.0], 2), vec![1, 3]);
    }

    #[test]
    fn trim_count_rule() {
        let s = AggregationSpec::from(Aggregation::TfMeanSampleTrimmedMean);
        assert_eq!(s.trim_count(16), 4);
        assert_eq!(s.trim_count(3), 1);
        assert_eq!(s.trim_count(1), 1);
        let full = AggregationSpec {
            trim_fraction: 1.0,
            ..s
        };
        assert_eq!(full.trim_count(7), 7);
    }

    #[test]
    fn mse_mean_gradient_single_bin() {
        let (v, g) = loss_gradient(
            &grid(1, 1, 1, &[2.0]),
            &grid(1, 1, 1, &[0.0]),
            &DistanceKind::mse(),
            &agg(Aggregation::SampleTfMean),
        )
        .unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(g[[0, 0, 0]], 4.0);
    }

    #[test]
    fn sample_median_gradient_selects_one_sample() {
        // per-sample means [1, 2, 100] from est - 0 squared
        let est = grid(3, 1, 2, &[1.0, 1.0, 2f64.sqrt(), 2f64.sqrt(), 10.0, 10.0]);
        let tgt = Grid3::zeros((3, 1, 2));
        let (v, g) = loss_gradient(
            &est,
            &tgt,
            &DistanceKind::mse(),
            &agg(Aggregation::SampleMedianTfMean),
        )
        .unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        for ki in 0..3 {
            let nz = g.index_axis(ndarray::Axis(0), ki).iter().any(|&x| x != 0.0);
            assert_eq!(nz, ki == 1, "sample {ki}");
        }
    }

    #[test]
    fn sdr_gradient_zero_when_clamped() {
        let est = grid(1, 1, 2, &[1.0, 3.0]);
        let tgt = grid(1, 1, 2, &[1.0, 2.0]);
        let (_, g) = loss_gradient(
            &est,
            &tgt,
            &DistanceKind::sdr(),
            &agg(Aggregation::SampleTfMean),
        )
        .unwrap();
        assert_eq!(g[[0, 0, 0]], 0.0);
        assert!(g[[0, 0, 1]] > 0.0);
    }

    #[test]
    fn names_round_trip_case_insensitively() {
        for a in Aggregation::ALL {
            assert_eq!(a.name().to_uppercase().parse::<Aggregation>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert_eq!("SDR".parse::<Distance>().unwrap(), Distance::Sdr);
        assert!("huber".parse::<Distance>().is_err());
        assert!("sample_mode".parse::<Aggregation>().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = AggregationSpec::from(Aggregation::TfMeanSampleTrimmedMean);
        assert!(s.validate().is_ok());
        s.trim_fraction = 0.0;
        assert!(s.validate().is_err());
        s.trim_fraction = 1.5;
        assert!(s.validate().is_err());
        let mut d = DistanceKind::sdr();
        d.epsilon = 0.0;
        assert!(d.validate().is_err());
    }
}
