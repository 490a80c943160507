//! Single-direction LSTM over time-major row blocks.
//!
//! Sequences are stored as `(T·K) × width` matrices whose row `t·K + k`
//! holds sample `k` at frame `t`, so a time step is a contiguous block of
//! `K` rows. Gate order within the `4·H` pre-activation columns is
//! input, forget, cell, output.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) struct LstmParams<'a> {
    pub w_ih: ArrayView2<'a, f64>,
    pub w_hh: ArrayView2<'a, f64>,
    pub bias: ArrayView1<'a, f64>,
}

pub(crate) struct LstmGrads<'a> {
    pub w_ih: ArrayViewMut2<'a, f64>,
    pub w_hh: ArrayViewMut2<'a, f64>,
    pub bias: ArrayViewMut1<'a, f64>,
}

/// Activations kept for the backward pass.
pub(crate) struct LstmTrace {
    /// Activated gates `[i, f, g, o]`, `(T·K) × 4H`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    pub hidden: Array2<f64>,
    reverse: bool,
    steps: usize,
    batch: usize,
}

fn step_order(steps: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    }
}

pub(crate) fn forward(
    p: &LstmParams<'_>,
    input: &Array2<f64>,
    steps: usize,
    batch: usize,
    reverse: bool,
) -> LstmTrace {
    let h = p.w_hh.ncols();
    let rows = steps * batch;
    let mut pre = input.dot(&p.w_ih.t());
    pre += &p.bias;
    let mut gates = Array2::<f64>::zeros((rows, 4 * h));
    let mut cells = Array2::<f64>::zeros((rows, h));
    let mut tanh_cells = Array2::<f64>::zeros((rows, h));
    let mut hidden = Array2::<f64>::zeros((rows, h));
    let mut h_prev = Array2::<f64>::zeros((batch, h));
    let mut c_prev = Array2::<f64>::zeros((batch, h));

    for t in step_order(steps, reverse) {
        let r = t * batch..(t + 1) * batch;
        let mut a = pre.slice(s![r.clone(), ..]).to_owned();
        a += &h_prev.dot(&p.w_hh.t());
        for k in 0..batch {
            for j in 0..h {
                let i = sigmoid(a[[k, j]]);
                let f = sigmoid(a[[k, h + j]]);
                let g = a[[k, 2 * h + j]].tanh();
                let o = sigmoid(a[[k, 3 * h + j]]);
                let c = f * c_prev[[k, j]] + i * g;
                let tc = c.tanh();
                let row = t * batch + k;
                gates[[row, j]] = i;
                gates[[row, h + j]] = f;
                gates[[row, 2 * h + j]] = g;
                gates[[row, 3 * h + j]] = o;
                cells[[row, j]] = c;
                tanh_cells[[row, j]] = tc;
                hidden[[row, j]] = o * tc;
            }
        }
        h_prev.assign(&hidden.slice(s![r.clone(), ..]));
        c_prev.assign(&cells.slice(s![r, ..]));
    }

    LstmTrace {
        gates,
        cells,
        tanh_cells,
        hidden,
        reverse,
        steps,
        batch,
    }
}

/// Accumulates parameter gradients into `g` and returns the gradient with
/// respect to `input`.
pub(crate) fn backward(
    p: &LstmParams<'_>,
    g: &mut LstmGrads<'_>,
    trace: &LstmTrace,
    input: &Array2<f64>,
    d_hidden: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let h = p.w_hh.ncols();
    let (steps, batch) = (trace.steps, trace.batch);
    let rows = steps * batch;
    let mut d_pre = Array2::<f64>::zeros((rows, 4 * h));
    let mut h_prev_all = Array2::<f64>::zeros((rows, h));
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = Array2::<f64>::zeros((batch, h));

    let order = step_order(steps, trace.reverse);
    // Processing order is `order`; walk it backwards.
    for (pos, &t) in order.iter().enumerate().rev() {
        let prev = if pos == 0 { None } else { Some(order[pos - 1]) };
        let mut dh = d_hidden.slice(s![t * batch..(t + 1) * batch, ..]).to_owned();
        dh += &dh_next;
        let mut da = Array2::<f64>::zeros((batch, 4 * h));
        for k in 0..batch {
            let row = t * batch + k;
            for j in 0..h {
                let i = trace.gates[[row, j]];
                let f = trace.gates[[row, h + j]];
                let gg = trace.gates[[row, 2 * h + j]];
                let o = trace.gates[[row, 3 * h + j]];
                let tc = trace.tanh_cells[[row, j]];
                let c_prev = prev.map_or(0.0, |pt| trace.cells[[pt * batch + k, j]]);
                let dhv = dh[[k, j]];
                let d_o = dhv * tc;
                let dc = dhv * o * (1.0 - tc * tc) + dc_next[[k, j]];
                da[[k, j]] = dc * gg * i * (1.0 - i);
                da[[k, h + j]] = dc * c_prev * f * (1.0 - f);
                da[[k, 2 * h + j]] = dc * i * (1.0 - gg * gg);
                da[[k, 3 * h + j]] = d_o * o * (1.0 - o);
                dc_next[[k, j]] = dc * f;
            }
        }
        dh_next = da.dot(&p.w_hh);
        d_pre.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&da);
        if let Some(pt) = prev {
            h_prev_all
                .slice_mut(s![t * batch..(t + 1) * batch, ..])
                .assign(&trace.hidden.slice(s![pt * batch..(pt + 1) * batch, ..]));
        }
    }

    ndarray::linalg::general_mat_mul(1.0, &d_pre.t(), input, 1.0, &mut g.w_ih);
    ndarray::linalg::general_mat_mul(1.0, &d_pre.t(), &h_prev_all, 1.0, &mut g.w_hh);
    g.bias += &d_pre.sum_axis(Axis(0));
    d_pre.dot(&p.w_ih)
}
