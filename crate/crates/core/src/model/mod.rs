//! Open-Unmix style mask estimator.
//!
//! ```text
//! |X| -> normalize -> dense(F→H) + tanh -> BiLSTM × L ──┐
//!                          └──────────── skip ──────────┴─> concat(2H)
//!     -> per head: dense(2H→H) + relu -> dense(H→F) + relu -> mask
//! ```
//!
//! All heads share the encoder and recurrent trunk. Parameters live in a
//! single flat vector so that the optimizer, gradient clipping and
//! checkpoints can treat them uniformly; [`ParamLayout`] maps named tensors
//! onto it. Gradients are computed by a hand-written backward pass.

mod lstm;

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{with_phase, Spectrogram};
use crate::error::{Error, Result};
use crate::loss::Grid3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskNetConfig {
    pub n_freq: usize,
    pub bottleneck: usize,
    pub recurrent_layers: usize,
    pub bidirectional: bool,
    pub n_outputs: usize,
}

impl Default for MaskNetConfig {
    fn default() -> Self {
        Self {
            n_freq: 513,
            bottleneck: 512,
            recurrent_layers: 3,
            bidirectional: true,
            n_outputs: 1,
        }
    }
}

impl MaskNetConfig {
    /// Small network used for desk-scale experiments.
    pub fn desk(n_freq: usize, n_outputs: usize) -> Self {
        Self {
            n_freq,
            bottleneck: 64,
            recurrent_layers: 1,
            bidirectional: true,
            n_outputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_outputs != 1 && self.n_outputs != 3 {
            return Err(Error::Config(format!(
                "n_outputs must be 1 or 3, got {}",
                self.n_outputs
            )));
        }
        if self.bottleneck == 0 || self.n_freq == 0 || self.recurrent_layers == 0 {
            return Err(Error::Config(
                "bottleneck, n_freq and recurrent_layers must be positive".into(),
            ));
        }
        if self.bidirectional && !self.bottleneck.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bidirectional core needs an even bottleneck, got {}",
                self.bottleneck
            )));
        }
        Ok(())
    }

    fn hidden_per_direction(&self) -> usize {
        if self.bidirectional {
            self.bottleneck / 2
        } else {
            self.bottleneck
        }
    }

    fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmSlots {
    w_ih: Slot,
    w_hh: Slot,
    bias: Slot,
}

#[derive(Debug, Clone, Copy)]
struct HeadSlots {
    hidden_w: Slot,
    hidden_b: Slot,
    out_w: Slot,
    out_b: Slot,
}

/// Where each named tensor sits in the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    enc_w: Slot,
    enc_b: Slot,
    // [layer][direction]
    lstm: Vec<Vec<LstmSlots>>,
    heads: Vec<HeadSlots>,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &MaskNetConfig) -> Self {
        let mut offset = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = Slot { offset, rows, cols };
            offset += rows * cols;
            s
        };
        let (f, h) = (cfg.n_freq, cfg.bottleneck);
        let hd = cfg.hidden_per_direction();
        let enc_w = slot(h, f);
        let enc_b = slot(h, 1);
        let lstm = (0..cfg.recurrent_layers)
            .map(|_| {
                (0..cfg.directions())
                    .map(|_| LstmSlots {
                        w_ih: slot(4 * hd, h),
                        w_hh: slot(4 * hd, hd),
                        bias: slot(4 * hd, 1),
                    })
                    .collect()
            })
            .collect();
        let heads = (0..cfg.n_outputs)
            .map(|_| HeadSlots {
                hidden_w: slot(h, 2 * h),
                hidden_b: slot(h, 1),
                out_w: slot(f, h),
                out_b: slot(f, 1),
            })
            .collect();
        Self {
            enc_w,
            enc_b,
            lstm,
            heads,
            total: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

fn mat<'a>(p: &'a [f64], s: Slot) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((s.rows, s.cols), &p[s.offset..s.offset + s.len()]).unwrap()
}

fn vec1<'a>(p: &'a [f64], s: Slot) -> ArrayView1<'a, f64> {
    ArrayView1::from(&p[s.offset..s.offset + s.len()])
}

fn mat_mut<'a>(p: &'a mut [f64], s: Slot) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((s.rows, s.cols), &mut p[s.offset..s.offset + s.len()]).unwrap()
}

fn vec_mut<'a>(p: &'a mut [f64], s: Slot) -> ArrayViewMut1<'a, f64> {
    ArrayViewMut1::from(&mut p[s.offset..s.offset + s.len()])
}

/// Per-frequency standardization frozen from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(n_freq: usize) -> Self {
        Self {
            mean: vec![0.0; n_freq],
            scale: vec![1.0; n_freq],
        }
    }

    /// Mean and inverse standard deviation over every frame of `mags`.
    pub fn fit<'a>(n_freq: usize, mags: impl IntoIterator<Item = &'a Grid3>) -> Self {
        let mut sum = vec![0.0; n_freq];
        let mut sq = vec![0.0; n_freq];
        let mut count = 0usize;
        for g in mags {
            let (k, t, f) = g.dim();
            assert_eq!(f, n_freq);
            for ki in 0..k {
                for ti in 0..t {
                    for fi in 0..f {
                        let v = g[[ki, ti, fi]];
                        sum[fi] += v;
                        sq[fi] += v * v;
                    }
                }
            }
            count += k * t;
        }
        if count == 0 {
            return Self::identity(n_freq);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                1.0 / var.sqrt().max(1e-4)
            })
            .collect();
        Self { mean, scale }
    }
}

/// Non-negative masks, one `K×T×F` grid per output head.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: Vec<Grid3>,
}

impl MaskSet {
    pub fn n_outputs(&self) -> usize {
        self.masks.len()
    }

    /// `Mᵢ ⊙ |X|` for every head.
    pub fn apply_to_magnitude(&self, mag: &Grid3) -> Result<Vec<Grid3>> {
        self.masks
            .iter()
            .map(|m| {
                if m.dim() != mag.dim() {
                    Err(Error::Shape(format!("mask {:?} vs input {:?}", m.dim(), mag.dim())))
                } else {
                    Ok(m * mag)
                }
            })
            .collect()
    }
}

/// Masked spectrograms `Mᵢ ⊙ |X|` carrying the phase of `x`. The mask set
/// must hold a single sample (`K = 1`).
pub fn apply_mask(masks: &MaskSet, x: &Spectrogram) -> Result<Vec<Spectrogram>> {
    let mag = x.magnitude();
    masks
        .masks
        .iter()
        .map(|m| {
            let (k, t, f) = m.dim();
            if k != 1 || t != x.n_frames() || f != x.n_freq() {
                return Err(Error::Shape(format!(
                    "mask {:?} vs spectrogram {}×{}",
                    m.dim(),
                    x.n_freq(),
                    x.n_frames()
                )));
            }
            let mask_ft = m.index_axis(Axis(0), 0).t().to_owned();
            with_phase(&(&mask_ft * &mag), x)
        })
        .collect()
}

struct HeadTrace {
    hidden: Array2<f64>,
    pre_out: Array2<f64>,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardTrace {
    batch: usize,
    steps: usize,
    input: Array2<f64>,
    encoded: Array2<f64>,
    // [layer] inputs, [layer][direction] traces
    layer_inputs: Vec<Array2<f64>>,
    lstm: Vec<Vec<lstm::LstmTrace>>,
    concat: Array2<f64>,
    heads: Vec<HeadTrace>,
}

#[derive(Debug, Clone)]
pub struct MaskNet {
    pub cfg: MaskNetConfig,
    pub norm: InputNorm,
    pub params: Vec<f64>,
    layout: ParamLayout,
}

impl MaskNet {
    /// PyTorch-style uniform initialization from a seed.
    pub fn new(cfg: MaskNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        let mut params = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |p: &mut [f64], s: Slot, bound: f64| {
            for v in &mut p[s.offset..s.offset + s.len()] {
                *v = rng.random_range(-bound..bound);
            }
        };
        let h = cfg.bottleneck;
        let enc_bound = 1.0 / (cfg.n_freq as f64).sqrt();
        fill(&mut params, layout.enc_w, enc_bound);
        fill(&mut params, layout.enc_b, enc_bound);
        let lstm_bound = 1.0 / (cfg.hidden_per_direction() as f64).sqrt();
        for layer in &layout.lstm {
            for d in layer {
                fill(&mut params, d.w_ih, lstm_bound);
                fill(&mut params, d.w_hh, lstm_bound);
                fill(&mut params, d.bias, lstm_bound);
            }
        }
        let out_bias = if cfg.n_outputs == 1 { 1.0 } else { 0.5 };
        for head in &layout.heads {
            fill(&mut params, head.hidden_w, 1.0 / ((2 * h) as f64).sqrt());
            fill(&mut params, head.hidden_b, 1.0 / ((2 * h) as f64).sqrt());
            fill(&mut params, head.out_w, 1.0 / (h as f64).sqrt());
            // Heads start near a flat mask so early outputs resemble the
            // input (or an even split of it across three heads).
            for v in &mut params[head.out_b.offset..head.out_b.offset + head.out_b.len()] {
                *v = out_bias;
            }
        }
        Ok(Self {
            cfg,
            norm: InputNorm::identity(cfg.n_freq),
            params,
            layout,
        })
    }

    pub fn from_parts(cfg: MaskNetConfig, norm: InputNorm, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        if params.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        if norm.mean.len() != cfg.n_freq || norm.scale.len() != cfg.n_freq {
            return Err(Error::Shape("normalization statistics do not match n_freq".into()));
        }
        Ok(Self {
            cfg,
            norm,
            params,
            layout,
        })
    }

    /// A network whose every head outputs the constant mask `value`.
    pub fn constant_mask(cfg: MaskNetConfig, value: f64) -> Result<Self> {
        let mut net = Self::new(cfg, 0)?;
        for head in net.layout.heads.clone() {
            net.params[head.out_w.offset..head.out_w.offset + head.out_w.len()].fill(0.0);
            net.params[head.out_b.offset..head.out_b.offset + head.out_b.len()].fill(value);
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    fn check_input(&self, mag: &Grid3) -> Result<()> {
        let (k, t, f) = mag.dim();
        if f != self.cfg.n_freq {
            return Err(Error::Shape(format!(
                "input has {f} frequency bins, network expects {}",
                self.cfg.n_freq
            )));
        }
        if k == 0 || t == 0 {
            return Err(Error::Shape("empty input".into()));
        }
        if mag.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("input contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn forward(&self, mag: &Grid3) -> Result<MaskSet> {
        Ok(self.forward_trace(mag)?.0)
    }

    pub fn forward_trace(&self, mag: &Grid3) -> Result<(MaskSet, ForwardTrace)> {
        self.check_input(mag)?;
        let (k, t, f) = mag.dim();
        let p = &self.params[..];
        let l = &self.layout;
        let h = self.cfg.bottleneck;

        // (T·K) × F, time-major rows
        let mut input = Array2::<f64>::zeros((t * k, f));
        for ti in 0..t {
            for ki in 0..k {
                let row = ti * k + ki;
                for fi in 0..f {
                    input[[row, fi]] = (mag[[ki, ti, fi]] - self.norm.mean[fi]) * self.norm.scale[fi];
                }
            }
        }

        let mut encoded = input.dot(&mat(p, l.enc_w).t());
        encoded += &vec1(p, l.enc_b);
        encoded.mapv_inplace(f64::tanh);

        let mut layer_inputs = Vec::with_capacity(l.lstm.len());
        let mut traces = Vec::with_capacity(l.lstm.len());
        let mut current = encoded.clone();
        for layer in &l.lstm {
            let dir_traces: Vec<_> = layer
                .iter()
                .enumerate()
                .map(|(di, slots)| {
                    let lp = lstm::LstmParams {
                        w_ih: mat(p, slots.w_ih),
                        w_hh: mat(p, slots.w_hh),
                        bias: vec1(p, slots.bias),
                    };
                    lstm::forward(&lp, &current, t, k, di == 1)
                })
                .collect();
            let hd = self.cfg.hidden_per_direction();
            let mut out = Array2::<f64>::zeros((t * k, hd * dir_traces.len()));
            for (di, tr) in dir_traces.iter().enumerate() {
                out.slice_mut(s![.., di * hd..(di + 1) * hd]).assign(&tr.hidden);
            }
            layer_inputs.push(std::mem::replace(&mut current, out));
            traces.push(dir_traces);
        }

        let mut concat = Array2::<f64>::zeros((t * k, 2 * h));
        concat.slice_mut(s![.., ..h]).assign(&encoded);
        concat.slice_mut(s![.., h..]).assign(&current);

        let mut masks = Vec::with_capacity(l.heads.len());
        let mut heads = Vec::with_capacity(l.heads.len());
        for hs in &l.heads {
            let mut hidden = concat.dot(&mat(p, hs.hidden_w).t());
            hidden += &vec1(p, hs.hidden_b);
            hidden.mapv_inplace(|v| v.max(0.0));
            let mut pre_out = hidden.dot(&mat(p, hs.out_w).t());
            pre_out += &vec1(p, hs.out_b);
            let mut m = Grid3::zeros((k, t, f));
            for ti in 0..t {
                for ki in 0..k {
                    let row = ti * k + ki;
                    for fi in 0..f {
                        m[[ki, ti, fi]] = pre_out[[row, fi]].max(0.0);
                    }
                }
            }
            masks.push(m);
            heads.push(HeadTrace { hidden, pre_out });
        }

        Ok((
            MaskSet { masks },
            ForwardTrace {
                batch: k,
                steps: t,
                input,
                encoded,
                layer_inputs,
                lstm: traces,
                concat,
                heads,
            },
        ))
    }

    /// Parameter gradient given `dL/dMᵢ` for every head.
    pub fn backward(&self, trace: &ForwardTrace, d_masks: &[Grid3]) -> Result<Vec<f64>> {
        let l = &self.layout;
        if d_masks.len() != l.heads.len() {
            return Err(Error::Shape(format!(
                "{} mask gradients for {} heads",
                d_masks.len(),
                l.heads.len()
            )));
        }
        let (k, t) = (trace.batch, trace.steps);
        let f = self.cfg.n_freq;
        let h = self.cfg.bottleneck;
        let p = &self.params[..];
        let mut g = vec![0.0; l.len()];

        let mut d_concat = Array2::<f64>::zeros((t * k, 2 * h));
        for ((hs, ht), dm) in l.heads.iter().zip(&trace.heads).zip(d_masks) {
            if dm.dim() != (k, t, f) {
                return Err(Error::Shape(format!(
                    "mask gradient {:?}, expected {:?}",
                    dm.dim(),
                    (k, t, f)
                )));
            }
            let mut d_pre = Array2::<f64>::zeros((t * k, f));
            for ti in 0..t {
                for ki in 0..k {
                    let row = ti * k + ki;
                    for fi in 0..f {
                        if ht.pre_out[[row, fi]] > 0.0 {
                            d_pre[[row, fi]] = dm[[ki, ti, fi]];
                        }
                    }
                }
            }
            ndarray::linalg::general_mat_mul(
                1.0,
                &d_pre.t(),
                &ht.hidden,
                1.0,
                &mut mat_mut(&mut g, hs.out_w),
            );
            vec_mut(&mut g, hs.out_b).scaled_add(1.0, &d_pre.sum_axis(Axis(0)));
            let mut d_hidden = d_pre.dot(&mat(p, hs.out_w));
            ndarray::Zip::from(&mut d_hidden)
                .and(&ht.hidden)
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            ndarray::linalg::general_mat_mul(
                1.0,
                &d_hidden.t(),
                &trace.concat,
                1.0,
                &mut mat_mut(&mut g, hs.hidden_w),
            );
            vec_mut(&mut g, hs.hidden_b).scaled_add(1.0, &d_hidden.sum_axis(Axis(0)));
            ndarray::linalg::general_mat_mul(
                1.0,
                &d_hidden,
                &mat(p, hs.hidden_w),
                1.0,
                &mut d_concat,
            );
        }

        let mut d_encoded = d_concat.slice(s![.., ..h]).to_owned();
        let mut d_current = d_concat.slice(s![.., h..]).to_owned();
        let hd = self.cfg.hidden_per_direction();
        for li in (0..l.lstm.len()).rev() {
            let input = &trace.layer_inputs[li];
            let mut d_input = Array2::<f64>::zeros(input.dim());
            for (di, slots) in l.lstm[li].iter().enumerate() {
                let lp = lstm::LstmParams {
                    w_ih: mat(p, slots.w_ih),
                    w_hh: mat(p, slots.w_hh),
                    bias: vec1(p, slots.bias),
                };
                // The three slots are disjoint; split the gradient buffer.
                let (w_ih, w_hh, bias) = split3(&mut g, slots.w_ih, slots.w_hh, slots.bias);
                let mut lg = lstm::LstmGrads { w_ih, w_hh, bias };
                let d_h = d_current.slice(s![.., di * hd..(di + 1) * hd]);
                let dx = lstm::backward(&lp, &mut lg, &trace.lstm[li][di], input, d_h);
                d_input += &dx;
            }
            d_current = d_input;
        }
        d_encoded += &d_current;

        ndarray::Zip::from(&mut d_encoded)
            .and(&trace.encoded)
            .for_each(|d, &a| *d *= 1.0 - a * a);
        ndarray::linalg::general_mat_mul(
            1.0,
            &d_encoded.t(),
            &trace.input,
            1.0,
            &mut mat_mut(&mut g, l.enc_w),
        );
        vec_mut(&mut g, l.enc_b).scaled_add(1.0, &d_encoded.sum_axis(Axis(0)));
        Ok(g)
    }
}

/// Disjoint mutable views of three ordered slots.
fn split3(
    g: &mut [f64],
    a: Slot,
    b: Slot,
    c: Slot,
) -> (ArrayViewMut2<'_, f64>, ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
    // Slots are laid out in order a < b < c by construction.
    debug_assert!(a.offset + a.len() <= b.offset && b.offset + b.len() <= c.offset);
    let (first, rest) = g.split_at_mut(b.offset);
    let (second, third) = rest.split_at_mut(c.offset - b.offset);
    let a_view = ArrayViewMut2::from_shape((a.rows, a.cols), &mut first[a.offset..a.offset + a.len()]).unwrap();
    let b_view = ArrayViewMut2::from_shape((b.rows, b.cols), &mut second[..b.len()]).unwrap();
    let c_view = ArrayViewMut1::from(&mut third[..c.len()]);
    (a_view, b_view, c_view)
}

/// Flattened L2 norm.
pub fn global_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scale `g` in place so that its global norm is at most `max_norm`.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(g);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
    norm
}
