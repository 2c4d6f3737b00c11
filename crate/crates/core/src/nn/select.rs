//! Equally spaced hidden-state selection.

use ndarray::{s, Array2, ArrayView2};

use super::Scalar;

/// Zero-based indices of the kept states among `n`.
///
/// With `n >= m` the 1-based picks are `⌊(i + 1)·n / m⌋` for `i < m`: strictly
/// increasing and always ending at `n`. With `n < m` every state is kept.
pub fn selected_indices(n: usize, m: usize) -> Vec<usize> {
    if n < m {
        (0..n).collect()
    } else {
        (0..m).map(|i| (i + 1) * n / m - 1).collect()
    }
}

/// Stacks the selected rows of `states` (`n × H`) into an `m × H` matrix,
/// zero-padding at the bottom when `n < m`.
pub fn select_states<T: Scalar>(states: ArrayView2<T>, m: usize) -> Array2<T> {
    let mut out = Array2::zeros((m, states.ncols()));
    for (row, idx) in selected_indices(states.nrows(), m).into_iter().enumerate() {
        out.row_mut(row).assign(&states.row(idx));
    }
    out
}

/// Routes the gradient of the selected matrix back to `n` state rows.
pub(crate) fn select_states_backward<T: Scalar>(d_selected: ArrayView2<T>, n: usize) -> Array2<T> {
    let m = d_selected.nrows();
    let mut d = Array2::zeros((n, d_selected.ncols()));
    for (row, idx) in selected_indices(n, m).into_iter().enumerate() {
        d.row_mut(idx).assign(&d_selected.slice(s![row, ..]));
    }
    d
}
