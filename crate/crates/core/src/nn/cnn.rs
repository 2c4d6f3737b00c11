//! Two convolution + ReLU + max-pool stages over a one-channel image.
//!
//! Convolutions use stride 1 and SAME zero padding; for an even kernel of
//! size k the extra padding row/column goes after (`(k-1)/2` before,
//! `k-1-(k-1)/2` after). Pooling windows do not overlap and odd trailing
//! rows/columns are dropped. The final maps are flattened row-major over
//! `(row, col, channel)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::{ConvParams, Scalar};

fn kernel_matrix<T: Scalar>(p: &ConvParams<T>) -> ArrayView2<'_, T> {
    let (oc, ic, kr, kc) = p.weight.dim();
    p.weight
        .view()
        .into_shape_with_order((oc, ic * kr * kc))
        .expect("owned kernels are contiguous")
}

fn im2col<T: Scalar>(input: ArrayView3<T>, kr: usize, kc: usize) -> Array2<T> {
    let input = input.as_standard_layout();
    let (c, h, w) = input.dim();
    let (pt, pl) = ((kr - 1) / 2, (kc - 1) / 2);
    let mut cols = Array2::zeros((c * kr * kc, h * w));
    for ci in 0..c {
        for dy in 0..kr {
            for dx in 0..kc {
                let mut row = cols.row_mut((ci * kr + dy) * kc + dx);
                let row = row.as_slice_mut().unwrap();
                // output x reads input column x + dx - pl
                let x0 = pl.saturating_sub(dx);
                let x1 = (w + pl).saturating_sub(dx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < pt || sy - pt >= h {
                        continue;
                    }
                    let src = input.slice(ndarray::s![ci, sy - pt, ..]);
                    let src = src.as_slice().unwrap();
                    let sx0 = x0 + dx - pl;
                    row[y * w + x0..y * w + x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: ArrayView2<T>, shape: (usize, usize, usize), kr: usize, kc: usize) -> Array3<T> {
    let (c, h, w) = shape;
    let (pt, pl) = ((kr - 1) / 2, (kc - 1) / 2);
    let mut out = Array3::zeros(shape);
    for ci in 0..c {
        for dy in 0..kr {
            for dx in 0..kc {
                let row = cols.row((ci * kr + dy) * kc + dx);
                let x0 = pl.saturating_sub(dx);
                let x1 = (w + pl).saturating_sub(dx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < pt || sy - pt >= h {
                        continue;
                    }
                    let mut dst = out.slice_mut(ndarray::s![ci, sy - pt, ..]);
                    for x in x0..x1 {
                        dst[x + dx - pl] += row[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// SAME convolution of a `(channels, rows, cols)` input. Returns the
/// pre-activation output and the im2col matrix for the backward pass.
pub fn conv2d_same<T: Scalar>(input: ArrayView3<T>, p: &ConvParams<T>) -> (Array3<T>, Array2<T>) {
    let (oc, ic, kr, kc) = p.weight.dim();
    let (c, h, w) = input.dim();
    assert_eq!(c, ic, "conv input has {c} channels, kernel expects {ic}");
    let cols = im2col(input, kr, kc);
    let mut out = kernel_matrix(p).dot(&cols);
    for (mut row, &b) in out.outer_iter_mut().zip(p.bias.iter()) {
        row += b;
    }
    let out = out.into_shape_with_order((oc, h, w)).unwrap();
    (out, cols)
}

fn conv2d_same_backward<T: Scalar>(
    d_out: ArrayView3<T>,
    cols: &Array2<T>,
    in_shape: (usize, usize, usize),
    p: &ConvParams<T>,
    grad: &mut ConvParams<T>,
) -> Array3<T> {
    let (oc, ic, kr, kc) = p.weight.dim();
    let d_out = d_out.as_standard_layout();
    let (_, h, w) = d_out.dim();
    let d_mat = d_out.view().into_shape_with_order((oc, h * w)).unwrap();
    {
        let mut gw = grad
            .weight
            .view_mut()
            .into_shape_with_order((oc, ic * kr * kc))
            .unwrap();
        general_mat_mul(T::one(), &d_mat, &cols.t(), T::one(), &mut gw);
    }
    grad.bias += &d_mat.sum_axis(Axis(1));
    let d_cols = kernel_matrix(p).t().dot(&d_mat);
    col2im(d_cols.view(), in_shape, kr, kc)
}

/// Non-overlapping max pooling. Also returns, per output cell, the flat
/// index of the winning input cell (first maximum on ties).
pub fn max_pool<T: Scalar>(input: ArrayView3<T>, pool: (usize, usize)) -> (Array3<T>, Vec<usize>) {
    let (c, h, w) = input.dim();
    let (pr, pc) = pool;
    let (oh, ow) = (h / pr, w / pc);
    let mut out = Array3::zeros((c, oh, ow));
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (T::neg_infinity(), 0);
                for dy in 0..pr {
                    for dx in 0..pc {
                        let (sy, sx) = (y * pr + dy, x * pc + dx);
                        let v = input[[ci, sy, sx]];
                        if v > best.0 {
                            best = (v, (ci * h + sy) * w + sx);
                        }
                    }
                }
                out[[ci, y, x]] = best.0;
                arg.push(best.1);
            }
        }
    }
    (out, arg)
}

fn max_pool_backward<T: Scalar>(d_out: ArrayView3<T>, arg: &[usize], in_shape: (usize, usize, usize)) -> Array3<T> {
    let mut d = Array3::zeros(in_shape);
    let flat = d.as_slice_mut().unwrap();
    for (g, &i) in d_out.iter().zip(arg) {
        flat[i] += *g;
    }
    d
}

fn relu_inplace<T: Scalar>(a: &mut Array3<T>) {
    a.mapv_inplace(|x| if x > T::zero() { x } else { T::zero() });
}

/// Intermediate values kept for [`cnn_backward`].
#[derive(Debug, Clone)]
pub struct CnnTrace<T> {
    input_shape: (usize, usize),
    cols1: Array2<T>,
    act1: Array3<T>,
    arg1: Vec<usize>,
    pooled1: Array3<T>,
    cols2: Array2<T>,
    act2: Array3<T>,
    arg2: Vec<usize>,
    pooled2_shape: (usize, usize, usize),
}

/// Runs both stages on a `rows × cols` image and flattens the result.
pub fn cnn_forward<T: Scalar>(
    image: ArrayView2<T>,
    conv1: &ConvParams<T>,
    conv2: &ConvParams<T>,
    pool: (usize, usize),
) -> (Array1<T>, CnnTrace<T>) {
    let (r, c) = image.dim();
    let input = image.into_shape_with_order((1, r, c)).expect("2-D image");
    let (mut act1, cols1) = conv2d_same(input, conv1);
    relu_inplace(&mut act1);
    let (pooled1, arg1) = max_pool(act1.view(), pool);
    let (mut act2, cols2) = conv2d_same(pooled1.view(), conv2);
    relu_inplace(&mut act2);
    let (pooled2, arg2) = max_pool(act2.view(), pool);

    let (ch, ph, pw) = pooled2.dim();
    let features = pooled2
        .view()
        .permuted_axes([1, 2, 0])
        .iter()
        .copied()
        .collect::<Array1<T>>();
    debug_assert_eq!(features.len(), ch * ph * pw);
    let trace = CnnTrace {
        input_shape: (r, c),
        cols1,
        act1,
        arg1,
        pooled1,
        cols2,
        act2,
        arg2,
        pooled2_shape: (ch, ph, pw),
    };
    (features, trace)
}

/// Gradient w.r.t. the image, accumulating kernel gradients into `g1`/`g2`.
pub(crate) fn cnn_backward<T: Scalar>(
    d_features: ArrayView1<T>,
    trace: &CnnTrace<T>,
    conv1: &ConvParams<T>,
    conv2: &ConvParams<T>,
    g1: &mut ConvParams<T>,
    g2: &mut ConvParams<T>,
) -> Array2<T> {
    let (ch, ph, pw) = trace.pooled2_shape;
    let d_pooled2 = d_features
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((ph, pw, ch))
        .unwrap()
        .permuted_axes([2, 0, 1]);
    let mut d_act2 = max_pool_backward(d_pooled2.view(), &trace.arg2, trace.act2.dim());
    d_act2.zip_mut_with(&trace.act2, |d, &a| {
        if a <= T::zero() {
            *d = T::zero()
        }
    });
    let d_pooled1 = conv2d_same_backward(d_act2.view(), &trace.cols2, trace.pooled1.dim(), conv2, g2);
    let mut d_act1 = max_pool_backward(d_pooled1.view(), &trace.arg1, trace.act1.dim());
    d_act1.zip_mut_with(&trace.act1, |d, &a| {
        if a <= T::zero() {
            *d = T::zero()
        }
    });
    let (r, c) = trace.input_shape;
    let d_img = conv2d_same_backward(d_act1.view(), &trace.cols1, (1, r, c), conv1, g1);
    d_img.into_shape_with_order((r, c)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv(oc: usize, ic: usize, k: (usize, usize), seed: u64) -> ConvParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ConvParams {
            weight: Array4::from_shape_fn((oc, ic, k.0, k.1), |_| rng.random_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(oc, |_| rng.random_range(-0.5..0.5)),
        }
    }

    /// Direct nested-loop SAME convolution.
    fn naive_conv(input: &Array3<f64>, p: &ConvParams<f64>) -> Array3<f64> {
        let (oc, ic, kr, kc) = p.weight.dim();
        let (_, h, w) = input.dim();
        let (pt, pl) = (((kr - 1) / 2) as isize, ((kc - 1) / 2) as isize);
        Array3::from_shape_fn((oc, h, w), |(o, y, x)| {
            let mut acc = p.bias[o];
            for c in 0..ic {
                for dy in 0..kr {
                    for dx in 0..kc {
                        let sy = y as isize + dy as isize - pt;
                        let sx = x as isize + dx as isize - pl;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            acc += p.weight[[o, c, dy, dx]] * input[[c, sy as usize, sx as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    fn naive_pool(input: &Array3<f64>, pr: usize, pc: usize) -> Array3<f64> {
        let (c, h, w) = input.dim();
        Array3::from_shape_fn((c, h / pr, w / pc), |(ci, y, x)| {
            let mut m = f64::NEG_INFINITY;
            for dy in 0..pr {
                for dx in 0..pc {
                    m = m.max(input[[ci, y * pr + dy, x * pc + dx]]);
                }
            }
            m
        })
    }

    #[test]
    fn all_ones_window_sums_to_sixteen() {
        let p = ConvParams {
            weight: Array4::ones((1, 1, 4, 4)),
            bias: Array1::zeros(1),
        };
        let (out, _) = conv2d_same(Array3::<f64>::ones((1, 4, 4)).view(), &p);
        assert_eq!(out[[0, 1, 1]], 16.0);
        // padding sits one before, two after
        assert_eq!(out[[0, 0, 0]], 9.0);
        assert_eq!(out[[0, 3, 3]], 4.0);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (k, ic) in [((4, 4), 1), ((3, 3), 2), ((2, 5), 3), ((1, 1), 2)] {
            let input = Array3::from_shape_fn((ic, 8, 8), |_| rng.random_range(-1.0..1.0));
            let p = conv(2, ic, k, 3);
            let (out, _) = conv2d_same(input.view(), &p);
            let expected = naive_conv(&input, &p);
            assert!(
                out.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12),
                "kernel {k:?}"
            );
        }
    }

    #[test]
    fn cnn_matches_naive_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
        let c1 = conv(2, 1, (4, 4), 1);
        let c2 = conv(2, 2, (4, 4), 2);
        let (feat, _) = cnn_forward(img.view(), &c1, &c2, (2, 2));

        let a1 = naive_conv(&img.clone().into_shape_with_order((1, 8, 8)).unwrap(), &c1).mapv(|x| x.max(0.0));
        let p1 = naive_pool(&a1, 2, 2);
        let a2 = naive_conv(&p1, &c2).mapv(|x| x.max(0.0));
        let p2 = naive_pool(&a2, 2, 2);
        let mut expected = Vec::new();
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..2 {
                    expected.push(p2[[c, y, x]]);
                }
            }
        }
        assert_eq!(feat.len(), 8);
        assert!(feat.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let mut c1 = conv(3, 1, (4, 4), 1);
        let mut c2 = conv(4, 3, (4, 4), 2);
        c1.bias.fill(0.0);
        c2.bias.fill(0.0);
        let (feat, _) = cnn_forward(Array2::<f64>::zeros((10, 12)).view(), &c1, &c2, (2, 2));
        assert_eq!(feat.len(), 2 * 3 * 4);
        assert!(feat.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pool_floors_odd_dims() {
        let input = Array3::from_shape_fn((1, 5, 3), |(_, y, x)| (y * 3 + x) as f64);
        let (out, arg) = max_pool(input.view(), (2, 2));
        assert_eq!(out.dim(), (1, 2, 1));
        assert_eq!(out[[0, 0, 0]], 4.0);
        assert_eq!(out[[0, 1, 0]], 10.0);
        assert_eq!(arg, [4, 10]);
    }
}
