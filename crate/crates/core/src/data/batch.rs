use ndarray::{Array2, Array3, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainingExample;
use crate::dsp::{stft, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::loss::Grid3;

/// `K` aligned time-domain crops. There is deliberately no clean-speech
/// field: nothing built from a batch can see the evaluation oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Indices into the batcher's clip list.
    pub clips: Vec<usize>,
    pub offsets: Vec<usize>,
    pub input: Array2<f64>,
    pub target: Array2<f64>,
    /// Present when every clip in the batch has a noise-only companion.
    pub noise: Option<Array2<f64>>,
    /// Clips shorter than the segment were zero-padded.
    pub padded: Vec<bool>,
    pub sample_rate: u32,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn segment_len(&self) -> usize {
        self.input.ncols()
    }

    pub fn magnitudes(&self, rows: &Array2<f64>, cfg: &StftConfig) -> Result<Grid3> {
        magnitudes(rows, self.sample_rate, cfg)
    }
}

/// STFT magnitudes of each row, stacked as `K × T × F`.
pub fn magnitudes(rows: &Array2<f64>, sample_rate: u32, cfg: &StftConfig) -> Result<Grid3> {
    let (k, len) = rows.dim();
    let (t, f) = (cfg.n_frames(len), cfg.n_freq());
    let mut out = Array3::<f64>::zeros((k, t, f));
    for (i, row) in rows.outer_iter().enumerate() {
        let w = Waveform {
            samples: row.to_vec(),
            sample_rate,
        };
        let m = stft(&w, cfg)?.magnitude();
        // Spectrogram magnitudes are F × T.
        out.index_axis_mut(ndarray::Axis(0), i).assign(&m.t());
    }
    Ok(out)
}

fn crop(src: &[f64], offset: usize, len: usize) -> (Vec<f64>, bool) {
    if src.len() >= len {
        (src[offset..offset + len].to_vec(), false)
    } else {
        let mut v = src.to_vec();
        v.resize(len, 0.0);
        (v, true)
    }
}

pub struct Batcher<'a> {
    clips: Vec<&'a TrainingExample>,
    batch_size: usize,
    segment_len: usize,
    sample_rate: u32,
}

impl<'a> Batcher<'a> {
    pub fn new(clips: Vec<&'a TrainingExample>, batch_size: usize, segment_len: usize) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Config("batcher needs at least one clip".into()));
        }
        if batch_size == 0 || segment_len == 0 {
            return Err(Error::Config("batch size and segment length must be positive".into()));
        }
        let sample_rate = clips[0].target.sample_rate;
        for c in &clips {
            c.validate()?;
            if c.target.sample_rate != sample_rate {
                return Err(Error::Shape("clips mix sample rates".into()));
            }
        }
        let short = clips.iter().filter(|c| c.target.len() < segment_len).count();
        if short > 0 {
            log::warn!("{short} clip(s) shorter than the segment will be zero-padded");
        }
        Ok(Self {
            clips,
            batch_size,
            segment_len,
            sample_rate,
        })
    }

    pub fn n_clips(&self) -> usize {
        self.clips.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.clips.len().div_ceil(self.batch_size)
    }

    fn assemble(&self, picks: &[(usize, usize)]) -> Batch {
        let (k, l) = (picks.len(), self.segment_len);
        let mut input = Array2::zeros((k, l));
        let mut target = Array2::zeros((k, l));
        let all_noise = picks.iter().all(|&(i, _)| self.clips[i].noise_only.is_some());
        let mut noise = all_noise.then(|| Array2::zeros((k, l)));
        let mut padded = Vec::with_capacity(k);
        for (row, &(i, off)) in picks.iter().enumerate() {
            let c = self.clips[i];
            let (x, p) = crop(&c.input.samples, off, l);
            input.row_mut(row).assign(&ArrayView1::from(&x));
            let (y, _) = crop(&c.target.samples, off, l);
            target.row_mut(row).assign(&ArrayView1::from(&y));
            if let (Some(n), Some(src)) = (noise.as_mut(), c.noise_only.as_ref()) {
                let (z, _) = crop(&src.samples, off, l);
                n.row_mut(row).assign(&ArrayView1::from(&z));
            }
            padded.push(p);
        }
        Batch {
            clips: picks.iter().map(|p| p.0).collect(),
            offsets: picks.iter().map(|p| p.1).collect(),
            input,
            target,
            noise,
            padded,
            sample_rate: self.sample_rate,
        }
    }

    /// One pass over every clip in random order with random crops. All
    /// randomness is drawn up front, so the sequence depends only on `rng`.
    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> impl Iterator<Item = Batch> + '_ {
        let mut order: Vec<usize> = (0..self.clips.len()).collect();
        order.shuffle(rng);
        let picks: Vec<(usize, usize)> = order
            .into_iter()
            .map(|i| {
                let len = self.clips[i].target.len();
                let off = if len > self.segment_len {
                    rng.random_range(0..=len - self.segment_len)
                } else {
                    0
                };
                (i, off)
            })
            .collect();
        let chunks: Vec<Vec<(usize, usize)>> =
            picks.chunks(self.batch_size).map(<[_]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.assemble(&c))
    }

    /// Deterministic in-order batches of centered crops, for validation.
    pub fn fixed(&self) -> Vec<Batch> {
        let picks: Vec<(usize, usize)> = (0..self.clips.len())
            .map(|i| (i, self.clips[i].target.len().saturating_sub(self.segment_len) / 2))
            .collect();
        picks.chunks(self.batch_size).map(|c| self.assemble(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_corpus, Corpus, CorpusRecipe, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(clips: usize) -> Corpus {
        let m = build_corpus(&CorpusRecipe {
            clips,
            test_clips: 0,
            valid_fraction: 0.0,
            duration_s: 1.5,
            ..Default::default()
        })
        .unwrap();
        Corpus::load(&m).unwrap()
    }

    fn examples(c: &Corpus) -> Vec<&TrainingExample> {
        c.split(Split::Train).into_iter().map(|c| &c.example).collect()
    }

    #[test]
    fn batch_shape_matches_segment() {
        let c = corpus(20);
        let b = Batcher::new(examples(&c), 16, 16_000).unwrap();
        let batches: Vec<_> = b.epoch(&mut ChaCha8Rng::seed_from_u64(0)).collect();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].input.dim(), (16, 16_000));
        assert_eq!(batches[1].len(), 4);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.clips.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        assert!(batches[0].noise.is_some());
    }

    #[test]
    fn single_clip_different_crops() {
        let c = corpus(1);
        let b = Batcher::new(examples(&c), 1, 16_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let offs: Vec<usize> = (0..6).map(|_| b.epoch(&mut rng).next().unwrap().offsets[0]).collect();
        assert!(offs.iter().any(|&o| o != offs[0]));
    }

    #[test]
    fn same_seed_same_batches() {
        let c = corpus(5);
        let b = Batcher::new(examples(&c), 2, 8000).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut out = Vec::new();
            for _ in 0..2 {
                out.extend(b.epoch(&mut rng));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn short_clips_are_padded_and_flagged() {
        let c = corpus(2);
        let b = Batcher::new(examples(&c), 2, 30_000).unwrap();
        let batch = b.epoch(&mut ChaCha8Rng::seed_from_u64(0)).next().unwrap();
        assert_eq!(batch.padded, vec![true, true]);
        assert_eq!(batch.input.ncols(), 30_000);
        assert!(batch.input.row(0).iter().skip(24_000).all(|v| *v == 0.0));
    }

    #[test]
    fn magnitude_stack_shape() {
        let c = corpus(3);
        let b = Batcher::new(examples(&c), 3, 16_000).unwrap();
        let batch = &b.fixed()[0];
        let m = batch.magnitudes(&batch.input, &StftConfig::default()).unwrap();
        assert_eq!(m.dim(), (3, 63, 513));
    }
}
