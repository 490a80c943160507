//! Mixture-invariant training over three output branches, and the input
//! noise augmentation that forces speech into the first branch.
//!
//! With outputs `X̂₁, X̂₂, X̂₃`, the two admissible groupings are
//!
//! - assignment A: `X̂₁ + X̂₂ → X`, `X̂₃ → N`
//! - assignment B: `X̂₁ + X̂₃ → X`, `X̂₂ → N`
//!
//! and the loss is the smaller of the two sums. `X̂₁` appears on the `X`
//! side of both groupings, which is what makes it the speech branch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::loss::{self, AggregationSpec, DistanceKind, Grid3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assignment {
    A,
    B,
}

impl Assignment {
    /// Index of the output branch matched to the noise reference.
    pub fn noise_branch(self) -> usize {
        match self {
            Assignment::A => 2,
            Assignment::B => 1,
        }
    }

    /// Index of the branch paired with `X̂₁` to rebuild the mixture.
    pub fn partner_branch(self) -> usize {
        match self {
            Assignment::A => 1,
            Assignment::B => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixItBatch {
    /// Noisy speech reference `X`, `K×T×F`.
    pub mixture: Grid3,
    /// Noise-only reference `N`.
    pub noise: Grid3,
    /// The three branch outputs.
    pub outputs: [Grid3; 3],
}

impl MixItBatch {
    pub fn validate(&self) -> Result<()> {
        let dim = self.mixture.dim();
        if self.noise.dim() != dim || self.outputs.iter().any(|o| o.dim() != dim) {
            return Err(Error::Shape(format!(
                "mixture {:?}, noise {:?}, outputs {:?}",
                dim,
                self.noise.dim(),
                self.outputs.iter().map(|o| o.dim()).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MixItLoss {
    pub value: f64,
    pub assignment: Assignment,
    pub loss_a: f64,
    pub loss_b: f64,
    /// Gradients with respect to each output; zero for terms of the losing
    /// assignment.
    pub grads: [Grid3; 3],
}

struct Grouping {
    value: f64,
    grad_sum: Grid3,
    grad_noise: Grid3,
}

fn grouping(
    b: &MixItBatch,
    partner: usize,
    noise_branch: usize,
    d: &DistanceKind,
    spec: &AggregationSpec,
) -> Result<Grouping> {
    let sum = &b.outputs[0] + &b.outputs[partner];
    let (lx, grad_sum) = loss::loss_gradient(&sum, &b.mixture, d, spec)?;
    let (ln, grad_noise) = loss::loss_gradient(&b.outputs[noise_branch], &b.noise, d, spec)?;
    Ok(Grouping {
        value: lx + ln,
        grad_sum,
        grad_noise,
    })
}

/// The smaller of the two grouping losses; ties go to A.
pub fn select_assignment(loss_a: f64, loss_b: f64) -> (f64, Assignment) {
    if loss_a <= loss_b {
        (loss_a, Assignment::A)
    } else {
        (loss_b, Assignment::B)
    }
}

/// Loss, winning assignment and output gradients. Ties go to assignment A.
pub fn mixit_loss(
    b: &MixItBatch,
    d: &DistanceKind,
    spec: &AggregationSpec,
) -> Result<MixItLoss> {
    b.validate()?;
    let a = grouping(b, 1, 2, d, spec)?;
    let bb = grouping(b, 2, 1, d, spec)?;
    let (loss_a, loss_b) = (a.value, bb.value);
    let (_, assignment) = select_assignment(loss_a, loss_b);
    let win = match assignment {
        Assignment::A => a,
        Assignment::B => bb,
    };
    let zero = Grid3::zeros(b.mixture.dim());
    let mut grads = [zero.clone(), zero.clone(), zero];
    grads[0] = win.grad_sum.clone();
    grads[assignment.partner_branch()] = win.grad_sum;
    grads[assignment.noise_branch()] = win.grad_noise;
    Ok(MixItLoss {
        value: win.value,
        assignment,
        loss_a,
        loss_b,
        grads,
    })
}

/// The designated speech branch `X̂₁`.
pub fn speech_estimate(b: &MixItBatch) -> &Grid3 {
    &b.outputs[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub enabled: bool,
    /// Mixing SNR range in dB (inclusive), drawn uniformly per clip.
    pub snr_db: (f64, f64),
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            snr_db: (0.0, 15.0),
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_db;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::Config(format!(
                "augmentation snr range [{lo}, {hi}] is invalid"
            )));
        }
        Ok(())
    }
}

/// Gain that puts `noise` at `snr_db` below `signal`.
pub fn snr_gain(signal: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    let es = crate::dsp::energy(signal);
    let en = crate::dsp::energy(noise);
    if en <= 0.0 {
        return Err(Error::DegenerateNoise);
    }
    Ok((es / (en * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `X = s_plus_rec + g·n_artificial` at an SNR drawn from `spec`.
pub fn augment_input<R: Rng + ?Sized>(
    s_plus_rec: &Waveform,
    n_artificial: &Waveform,
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Result<(Waveform, f64)> {
    if s_plus_rec.len() != n_artificial.len() {
        return Err(Error::Shape(format!(
            "speech has {} samples, augmentation noise {}",
            s_plus_rec.len(),
            n_artificial.len()
        )));
    }
    if !spec.enabled {
        return Ok((s_plus_rec.clone(), 0.0));
    }
    spec.validate()?;
    let (lo, hi) = spec.snr_db;
    let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let g = snr_gain(&s_plus_rec.samples, &n_artificial.samples, snr)?;
    let samples = s_plus_rec
        .samples
        .iter()
        .zip(&n_artificial.samples)
        .map(|(s, n)| s + g * n)
        .collect();
    Ok((
        Waveform {
            samples,
            sample_rate: s_plus_rec.sample_rate,
        },
        g,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::Aggregation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(v: &[f64]) -> Grid3 {
        Grid3::from_shape_vec((1, 1, v.len()), v.to_vec()).unwrap()
    }

    fn mean() -> AggregationSpec {
        Aggregation::SampleTfMean.into()
    }

    #[test]
    fn exact_solution_has_zero_loss() {
        let x = g(&[1.0, 2.0, 3.0]);
        let n = g(&[0.5, 0.1, 0.7]);
        let b = MixItBatch {
            mixture: x.clone(),
            noise: n.clone(),
            outputs: [x, g(&[0.0; 3]), n],
        };
        let l = mixit_loss(&b, &DistanceKind::mse(), &mean()).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.assignment, Assignment::A);
    }

    #[test]
    fn min_of_two_sums() {
        assert_eq!(select_assignment(1.0 + 0.5, 2.0 + 0.2), (1.5, Assignment::A));
        assert_eq!(select_assignment(3.0, 2.0), (2.0, Assignment::B));

        let b = MixItBatch {
            mixture: g(&[1.0, 2.0, 0.5]),
            noise: g(&[0.3, 0.4, 0.1]),
            outputs: [g(&[0.2, 1.5, 0.1]), g(&[0.9, 0.3, 0.6]), g(&[0.1, 0.05, 0.2])],
        };
        let d = DistanceKind::mse();
        let term = |est: &Grid3, tgt: &Grid3| loss::loss_value(est, tgt, &d, &mean()).unwrap();
        let la = term(&(&b.outputs[0] + &b.outputs[1]), &b.mixture) + term(&b.outputs[2], &b.noise);
        let lb = term(&(&b.outputs[0] + &b.outputs[2]), &b.mixture) + term(&b.outputs[1], &b.noise);
        let l = mixit_loss(&b, &d, &mean()).unwrap();
        assert_eq!(l.loss_a, la);
        assert_eq!(l.loss_b, lb);
        assert_eq!(l.value, la.min(lb));
    }

    #[test]
    fn swapping_branches_flips_assignment() {
        let b = MixItBatch {
            mixture: g(&[1.0, 2.0]),
            noise: g(&[0.3, 0.4]),
            outputs: [g(&[0.7, 1.1]), g(&[0.2, 0.9]), g(&[0.35, 0.41])],
        };
        let swapped = MixItBatch {
            outputs: [
                b.outputs[0].clone(),
                b.outputs[2].clone(),
                b.outputs[1].clone(),
            ],
            ..b.clone()
        };
        let d = DistanceKind::sdr();
        let l1 = mixit_loss(&b, &d, &mean()).unwrap();
        let l2 = mixit_loss(&swapped, &d, &mean()).unwrap();
        assert_eq!(l1.value, l2.value);
        assert_ne!(l1.assignment, l2.assignment);
    }

    #[test]
    fn losing_branch_gets_no_gradient() {
        let b = MixItBatch {
            mixture: g(&[1.0, 2.0]),
            noise: g(&[0.3, 0.4]),
            outputs: [g(&[0.7, 1.1]), g(&[0.2, 0.9]), g(&[0.35, 0.41])],
        };
        let l = mixit_loss(&b, &DistanceKind::mse(), &mean()).unwrap();
        assert_eq!(l.assignment, Assignment::A);
        // Under A every branch takes part; under B the roles of 2 and 3 swap.
        for i in 0..3 {
            assert!(l.grads[i].iter().any(|&v| v != 0.0));
        }
        assert_eq!(l.grads[0], l.grads[1]);
    }

    #[test]
    fn shape_mismatch() {
        let b = MixItBatch {
            mixture: g(&[1.0, 2.0]),
            noise: g(&[0.3]),
            outputs: [g(&[0.7, 1.1]), g(&[0.2, 0.9]), g(&[0.35, 0.41])],
        };
        assert!(matches!(
            mixit_loss(&b, &DistanceKind::mse(), &mean()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn speech_estimate_is_first_branch() {
        let b = MixItBatch {
            mixture: g(&[1.0, 2.0]),
            noise: g(&[0.3, 0.4]),
            outputs: [g(&[0.7, 1.1]), g(&[0.2, 0.9]), g(&[0.35, 0.41])],
        };
        assert_eq!(speech_estimate(&b), &b.outputs[0]);
        assert_eq!(speech_estimate(&b).dim(), b.mixture.dim());
    }

    fn unit_energy(seed: u64, len: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e = crate::dsp::energy(&v).sqrt();
        v.iter_mut().for_each(|x| *x /= e);
        Waveform::new(v, 16_000).unwrap()
    }

    #[test]
    fn augmentation_disabled_is_identity() {
        let s = unit_energy(1, 1000);
        let n = unit_energy(2, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, gain) = augment_input(&s, &n, &AugmentationSpec::default(), &mut rng).unwrap();
        assert_eq!(x, s);
        assert_eq!(gain, 0.0);
    }

    #[test]
    fn augmentation_hits_requested_snr() {
        let s = unit_energy(1, 4000);
        let n = unit_energy(2, 4000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = AugmentationSpec {
            enabled: true,
            snr_db: (0.0, 0.0),
        };
        let (_, gain) = augment_input(&s, &n, &zero, &mut rng).unwrap();
        assert!((gain - 1.0).abs() < 1e-12);

        let six = AugmentationSpec {
            enabled: true,
            snr_db: (6.0, 6.0),
        };
        let (x, gain) = augment_input(&s, &n, &six, &mut rng).unwrap();
        let added: Vec<f64> = x.samples.iter().zip(&s.samples).map(|(a, b)| a - b).collect();
        let ratio = 10.0 * (s.energy() / crate::dsp::energy(&added)).log10();
        assert!((ratio - 6.0).abs() < 0.01, "{ratio}");
        assert!(gain > 0.0);
    }

    #[test]
    fn silent_augmentation_noise_is_rejected() {
        let s = unit_energy(1, 100);
        let n = Waveform::zeros(100, 16_000);
        let spec = AugmentationSpec {
            enabled: true,
            snr_db: (3.0, 3.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            augment_input(&s, &n, &spec, &mut rng),
            Err(Error::DegenerateNoise)
        ));
    }
}
