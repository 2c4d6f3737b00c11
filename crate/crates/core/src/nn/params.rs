use ndarray::{Array1, Array2, Array4, ArrayD, ArrayViewD, ArrayViewMut, ArrayViewMutD, Axis, Dimension};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Scalar, CLASSES};

/// Tensor names in checkpoint / optimizer order.
pub const TENSOR_NAMES: [&str; 17] = [
    "embedding",
    "lstm.w_f",
    "lstm.w_i",
    "lstm.w_o",
    "lstm.w_c",
    "lstm.b_f",
    "lstm.b_i",
    "lstm.b_o",
    "lstm.b_c",
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "mlp1.weight",
    "mlp1.bias",
    "mlp2.weight",
    "mlp2.bias",
];

/// LSTM weights with the four gates stacked row-wise in the order
/// forget, input, output, candidate. Each gate block of `w` is
/// `H × (H + E)`: the first `H` columns act on `h_{t-1}`, the rest on `v_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols() - self.hidden()
    }
}

/// `weight` is `(out_channels, in_channels, rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Array4<T>,
    pub bias: Array1<T>,
}

/// `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Every learnable tensor. Row 0 of `embedding` belongs to PAD and stays zero.
///
/// Tensors unused by the configured variant (the convolutions for
/// `lstm_only`, the LSTM for `cnn_only`) are still allocated so every
/// checkpoint has the same layout; they receive zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embedding: Array2<T>,
    pub lstm: LstmParams<T>,
    pub conv1: ConvParams<T>,
    pub conv2: ConvParams<T>,
    pub mlp1: DenseParams<T>,
    pub mlp2: DenseParams<T>,
}

fn split4<'a, T, D: Dimension + ndarray::RemoveAxis>(
    v: ArrayViewMut<'a, T, D>,
    h: usize,
) -> [ArrayViewMut<'a, T, D>; 4] {
    let (a, rest) = v.split_at(Axis(0), h);
    let (b, rest) = rest.split_at(Axis(0), h);
    let (c, d) = rest.split_at(Axis(0), h);
    [a, b, c, d]
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters for `vocab_len` dictionary entries.
    pub fn zeros(config: &ModelConfig, vocab_len: usize) -> Self {
        let shapes = Self::shapes(config, vocab_len);
        let z2 = |s: &[usize]| Array2::zeros((s[0], s[1]));
        let z1 = |s: &[usize]| Array1::zeros(s[0]);
        let z4 = |s: &[usize]| Array4::zeros((s[0], s[1], s[2], s[3]));
        let h = config.lstm_hidden;
        let e = config.embed_dim;
        Self {
            embedding: z2(&shapes[0]),
            lstm: LstmParams {
                w: Array2::zeros((4 * h, h + e)),
                b: Array1::zeros(4 * h),
            },
            conv1: ConvParams {
                weight: z4(&shapes[9]),
                bias: z1(&shapes[10]),
            },
            conv2: ConvParams {
                weight: z4(&shapes[11]),
                bias: z1(&shapes[12]),
            },
            mlp1: DenseParams {
                weight: z2(&shapes[13]),
                bias: z1(&shapes[14]),
            },
            mlp2: DenseParams {
                weight: z2(&shapes[15]),
                bias: z1(&shapes[16]),
            },
        }
    }

    /// Expected shape of every tensor, in [`TENSOR_NAMES`] order.
    pub fn shapes(config: &ModelConfig, vocab_len: usize) -> Vec<Vec<usize>> {
        let (h, e) = (config.lstm_hidden, config.embed_dim);
        let (kr, kc) = config.filter_size;
        let mut s = vec![vec![vocab_len + 1, e]];
        s.extend(std::iter::repeat_n(vec![h, h + e], 4));
        s.extend(std::iter::repeat_n(vec![h], 4));
        s.push(vec![config.conv1_filters, 1, kr, kc]);
        s.push(vec![config.conv1_filters]);
        s.push(vec![config.conv2_filters, config.conv1_filters, kr, kc]);
        s.push(vec![config.conv2_filters]);
        s.push(vec![config.mlp_hidden, config.feature_len()]);
        s.push(vec![config.mlp_hidden]);
        s.push(vec![CLASSES, config.mlp_hidden]);
        s.push(vec![CLASSES]);
        s
    }

    /// Uniform `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))` per weight
    /// tensor, zero biases except the forget gate (1.0), PAD row zero.
    pub fn init(config: &ModelConfig, vocab_len: usize, seed: u64) -> Self {
        let mut p = Self::zeros(config, vocab_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (kr, kc) = config.filter_size;
        let h = config.lstm_hidden;
        let fans = |name: &str, shape: &[usize]| -> Option<(usize, usize)> {
            match name {
                "embedding" => Some((shape[0], shape[1])),
                "lstm.w_f" | "lstm.w_i" | "lstm.w_o" | "lstm.w_c" => Some((shape[1], shape[0])),
                "conv1.weight" | "conv2.weight" => Some((shape[1] * kr * kc, shape[0] * kr * kc)),
                "mlp1.weight" | "mlp2.weight" => Some((shape[1], shape[0])),
                _ => None,
            }
        };
        for (name, mut t) in p.tensors_mut() {
            if let Some((fan_in, fan_out)) = fans(name, t.shape()) {
                let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-r, r).expect("finite range");
                t.iter_mut().for_each(|x| *x = T::lit(dist.sample(&mut rng)));
            }
        }
        p.lstm.b.slice_mut(ndarray::s![..h]).fill(T::one());
        p.embedding.row_mut(0).fill(T::zero());
        p
    }

    pub fn vocab_len(&self) -> usize {
        self.embedding.nrows() - 1
    }

    /// Verifies every tensor against `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = Self::shapes(config, self.vocab_len());
        for ((name, t), exp) in self.tensors().into_iter().zip(expected) {
            if t.shape() != exp.as_slice() {
                return Err(ModelError::Shape {
                    tensor: name.to_string(),
                    expected: exp,
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Views of every tensor in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, T>)> {
        let h = self.lstm.hidden();
        let w = |g: usize| self.lstm.w.slice(ndarray::s![g * h..(g + 1) * h, ..]).into_dyn();
        let b = |g: usize| self.lstm.b.slice(ndarray::s![g * h..(g + 1) * h]).into_dyn();
        let views = vec![
            self.embedding.view().into_dyn(),
            w(0),
            w(1),
            w(2),
            w(3),
            b(0),
            b(1),
            b(2),
            b(3),
            self.conv1.weight.view().into_dyn(),
            self.conv1.bias.view().into_dyn(),
            self.conv2.weight.view().into_dyn(),
            self.conv2.bias.view().into_dyn(),
            self.mlp1.weight.view().into_dyn(),
            self.mlp1.bias.view().into_dyn(),
            self.mlp2.weight.view().into_dyn(),
            self.mlp2.bias.view().into_dyn(),
        ];
        TENSOR_NAMES.into_iter().zip(views).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, T>)> {
        let h = self.lstm.hidden();
        let [wf, wi, wo, wc] = split4(self.lstm.w.view_mut(), h);
        let [bf, bi, bo, bc] = split4(self.lstm.b.view_mut(), h);
        let views = vec![
            self.embedding.view_mut().into_dyn(),
            wf.into_dyn(),
            wi.into_dyn(),
            wo.into_dyn(),
            wc.into_dyn(),
            bf.into_dyn(),
            bi.into_dyn(),
            bo.into_dyn(),
            bc.into_dyn(),
            self.conv1.weight.view_mut().into_dyn(),
            self.conv1.bias.view_mut().into_dyn(),
            self.conv2.weight.view_mut().into_dyn(),
            self.conv2.bias.view_mut().into_dyn(),
            self.mlp1.weight.view_mut().into_dyn(),
            self.mlp1.bias.view_mut().into_dyn(),
            self.mlp2.weight.view_mut().into_dyn(),
            self.mlp2.bias.view_mut().into_dyn(),
        ];
        TENSOR_NAMES.into_iter().zip(views).collect()
    }

    /// Rebuilds parameters from tensors given in [`TENSOR_NAMES`] order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<ArrayD<T>>) -> Result<Self, ModelError> {
        let vocab_len = tensors
            .first()
            .and_then(|t| t.shape().first().copied())
            .and_then(|r| r.checked_sub(1))
            .ok_or_else(|| ModelError::Checkpoint("missing embedding".into()))?;
        if tensors.len() != TENSOR_NAMES.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                TENSOR_NAMES.len(),
                tensors.len()
            )));
        }
        let mut p = Self::zeros(config, vocab_len);
        let expected = Self::shapes(config, vocab_len);
        for (((name, mut dst), src), exp) in p.tensors_mut().into_iter().zip(&tensors).zip(expected) {
            if src.shape() != exp.as_slice() {
                return Err(ModelError::Shape {
                    tensor: name.into(),
                    expected: exp,
                    found: src.shape().to_vec(),
                });
            }
            dst.assign(src);
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::zero())
    }

    /// Element-wise map to another scalar type (e.g. `f32` → `f64`).
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> ModelParams<U> {
        ModelParams {
            embedding: self.embedding.mapv(f),
            lstm: LstmParams {
                w: self.lstm.w.mapv(f),
                b: self.lstm.b.mapv(f),
            },
            conv1: ConvParams {
                weight: self.conv1.weight.mapv(f),
                bias: self.conv1.bias.mapv(f),
            },
            conv2: ConvParams {
                weight: self.conv2.weight.mapv(f),
                bias: self.conv2.bias.mapv(f),
            },
            mlp1: DenseParams {
                weight: self.mlp1.weight.mapv(f),
                bias: self.mlp1.bias.mapv(f),
            },
            mlp2: DenseParams {
                weight: self.mlp2.weight.mapv(f),
                bias: self.mlp2.bias.mapv(f),
            },
        }
    }

    /// `self += alpha * other`
    pub fn scaled_add(&mut self, alpha: T, other: &Self) {
        self.embedding.scaled_add(alpha, &other.embedding);
        self.lstm.w.scaled_add(alpha, &other.lstm.w);
        self.lstm.b.scaled_add(alpha, &other.lstm.b);
        self.conv1.weight.scaled_add(alpha, &other.conv1.weight);
        self.conv1.bias.scaled_add(alpha, &other.conv1.bias);
        self.conv2.weight.scaled_add(alpha, &other.conv2.weight);
        self.conv2.bias.scaled_add(alpha, &other.conv2.bias);
        self.mlp1.weight.scaled_add(alpha, &other.mlp1.weight);
        self.mlp1.bias.scaled_add(alpha, &other.mlp1.bias);
        self.mlp2.weight.scaled_add(alpha, &other.mlp2.weight);
        self.mlp2.bias.scaled_add(alpha, &other.mlp2.bias);
    }

    pub fn scale(&mut self, alpha: T) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * alpha);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Flattened copy in tensor order.
    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }
}
