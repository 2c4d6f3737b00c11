//! LSTM recurrence and its backward pass through time.
//!
//! ```text
//! f_t = σ(W_f·[h_{t-1}, v_t] + b_f)
//! i_t = σ(W_i·[h_{t-1}, v_t] + b_i)
//! o_t = σ(W_o·[h_{t-1}, v_t] + b_o)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ tanh(W_c·[h_{t-1}, v_t] + b_c)
//! h_t = o_t ⊙ tanh(c_t)
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{LstmParams, ModelError, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Array1<T>,
    pub c: Array1<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

/// Applies the gate nonlinearities to `pre` (length 4H, gate order f, i, o,
/// candidate) in place and returns `(c_t, tanh(c_t), h_t)`.
fn cell_update<T: Scalar>(pre: &mut [T], c_prev: ArrayView1<T>, c: &mut [T], tanh_c: &mut [T], h: &mut [T]) {
    let hd = c.len();
    for x in &mut pre[..3 * hd] {
        *x = x.sigmoid();
    }
    for x in &mut pre[3 * hd..] {
        *x = x.tanh();
    }
    for j in 0..hd {
        let (f, i, o, g) = (pre[j], pre[hd + j], pre[2 * hd + j], pre[3 * hd + j]);
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
}

/// One recurrence step from `state` on input `v`.
pub fn lstm_step<T: Scalar>(
    state: &LstmState<T>,
    v: ArrayView1<T>,
    p: &LstmParams<T>,
) -> Result<LstmState<T>, ModelError> {
    let hd = p.hidden();
    let e = p.input_dim();
    for (what, expected, found) in [
        ("lstm input", e, v.len()),
        ("lstm h", hd, state.h.len()),
        ("lstm c", hd, state.c.len()),
    ] {
        if expected != found {
            return Err(ModelError::Dimension { what, expected, found });
        }
    }
    let mut pre = p.w.slice(s![.., ..hd]).dot(&state.h) + p.w.slice(s![.., hd..]).dot(&v) + &p.b;
    let mut next = LstmState::zeros(hd);
    let mut tanh_c = vec![T::zero(); hd];
    cell_update(
        pre.as_slice_mut().unwrap(),
        state.c.view(),
        next.c.as_slice_mut().unwrap(),
        &mut tanh_c,
        next.h.as_slice_mut().unwrap(),
    );
    Ok(next)
}

/// Everything the backward pass needs from a forward run over `n` steps.
#[derive(Debug, Clone)]
pub struct LstmTrace<T> {
    /// `(n + 1) × H`; row 0 is the zero initial state, row t is `h_t`.
    pub h: Array2<T>,
    /// `(n + 1) × H`, same layout as `h`.
    pub c: Array2<T>,
    /// `n × 4H` activated gates (f, i, o, candidate).
    pub gates: Array2<T>,
    /// `n × H`
    pub tanh_c: Array2<T>,
}

impl<T: Scalar> LstmTrace<T> {
    /// `h_1..h_n` as an `n × H` view.
    pub fn outputs(&self) -> ArrayView2<'_, T> {
        self.h.slice(s![1.., ..])
    }
}

/// Runs the recurrence over the rows of `inputs` (`n × E`) from a zero state.
pub fn lstm_forward<T: Scalar>(inputs: ArrayView2<T>, p: &LstmParams<T>) -> LstmTrace<T> {
    let n = inputs.nrows();
    let hd = p.hidden();
    let w_h = p.w.slice(s![.., ..hd]);
    let w_v = p.w.slice(s![.., hd..]);

    // input contributions for every step at once: n × 4H
    let mut gates = inputs.dot(&w_v.t());
    gates += &p.b;

    let mut h = Array2::zeros((n + 1, hd));
    let mut c = Array2::zeros((n + 1, hd));
    let mut tanh_c = Array2::zeros((n, hd));
    for t in 0..n {
        let rec = w_h.dot(&h.row(t));
        let mut pre = gates.row_mut(t);
        pre += &rec;
        let (c_prev, mut c_rest) = c.view_mut().split_at(Axis(0), t + 1);
        let mut h_next = h.row_mut(t + 1);
        cell_update(
            pre.as_slice_mut().unwrap(),
            c_prev.row(t).view(),
            c_rest.row_mut(0).as_slice_mut().unwrap(),
            tanh_c.row_mut(t).as_slice_mut().unwrap(),
            h_next.as_slice_mut().unwrap(),
        );
    }
    LstmTrace { h, c, gates, tanh_c }
}

/// Backpropagates `d_out` (gradient w.r.t. `h_1..h_n`, `n × H`) through
/// time. Accumulates into `grad` and returns the gradient w.r.t. `inputs`.
pub(crate) fn lstm_backward<T: Scalar>(
    inputs: ArrayView2<T>,
    trace: &LstmTrace<T>,
    d_out: ArrayView2<T>,
    p: &LstmParams<T>,
    grad: &mut LstmParams<T>,
) -> Array2<T> {
    let n = inputs.nrows();
    let hd = p.hidden();
    let one = T::one();
    let w_h = p.w.slice(s![.., ..hd]);
    let w_v = p.w.slice(s![.., hd..]);

    // contiguous H × 4H copy so each step's product runs over unit-stride rows
    let w_h_t = w_h.t().as_standard_layout().into_owned();

    // pre-activation gradients for every step
    let mut da = Array2::<T>::zeros((n, 4 * hd));
    let mut dh_next = Array1::<T>::zeros(hd);
    let mut dc_next = vec![T::zero(); hd];
    for t in (0..n).rev() {
        let g = trace.gates.row(t);
        let g = g.as_slice().unwrap();
        let tc = trace.tanh_c.row(t);
        let tc = tc.as_slice().unwrap();
        let c_prev = trace.c.row(t);
        let c_prev = c_prev.as_slice().unwrap();
        let dh_out = d_out.row(t);
        let mut row = da.row_mut(t);
        let row = row.as_slice_mut().unwrap();
        for j in 0..hd {
            let (f, i, o, cand) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let dh = dh_out[j] + dh_next[j];
            let d_o = dh * tc[j];
            let dc = dc_next[j] + dh * o * (one - tc[j] * tc[j]);
            let d_f = dc * c_prev[j];
            let d_i = dc * cand;
            let d_g = dc * i;
            row[j] = d_f * f * (one - f);
            row[hd + j] = d_i * i * (one - i);
            row[2 * hd + j] = d_o * o * (one - o);
            row[3 * hd + j] = d_g * (one - cand * cand);
            dc_next[j] = dc * f;
        }
        dh_next = w_h_t.dot(&da.row(t));
    }

    let h_prev = trace.h.slice(s![..n, ..]);
    general_mat_mul(one, &da.t(), &h_prev, one, &mut grad.w.slice_mut(s![.., ..hd]));
    general_mat_mul(one, &da.t(), &inputs, one, &mut grad.w.slice_mut(s![.., hd..]));
    grad.b += &da.sum_axis(Axis(0));
    da.dot(&w_v)
}
