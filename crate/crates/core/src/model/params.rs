use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform initialization half-width.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub src_vocab_size: usize,
    pub trg_vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab_size", self.src_vocab_size),
            ("trg_vocab_size", self.trg_vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.trg_vocab_size <= crate::corpus::EOS {
            return Err(Error::Config(
                "target vocabulary must contain the special symbols".into(),
            ));
        }
        Ok(())
    }
}

/// Dense row-major matrix. Vectors are stored with `cols == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self[row_range] * x`
    #[inline]
    pub(crate) fn matvec_rows_into(&self, row0: usize, nrows: usize, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate().take(nrows) {
            *o += dot(self.row(row0 + i), x);
        }
    }

    /// `out += self[row_range]^T * g`
    #[inline]
    pub(crate) fn matvec_t_rows_into(&self, row0: usize, g: &[f64], out: &mut [f64]) {
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                axpy(gi, self.row(row0 + i), out);
            }
        }
    }

    /// `self[row_range] += g x^T`
    #[inline]
    pub(crate) fn add_outer_rows(&mut self, row0: usize, g: &[f64], x: &[f64]) {
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                axpy(gi, x, self.row_mut(row0 + i));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// All trainable tensors. GRU blocks stack the update, reset and candidate
/// gates in that order along the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub src_emb: Tensor,
    pub trg_emb: Tensor,
    pub enc_w: Tensor,
    pub enc_u: Tensor,
    pub enc_b: Tensor,
    pub dec_w: Tensor,
    pub dec_u: Tensor,
    pub dec_b: Tensor,
    pub att_w: Tensor,
    pub att_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

pub const TENSOR_NAMES: [&str; 12] = [
    "src_emb", "trg_emb", "enc_w", "enc_u", "enc_b", "dec_w", "dec_u", "dec_b", "att_w", "att_b",
    "out_w", "out_b",
];

impl ModelParams {
    /// Seeded uniform initialization; biases start at zero.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let (vs, vt) = (config.src_vocab_size, config.trg_vocab_size);
        Ok(ModelParams {
            src_emb: Tensor::uniform(vs, e, &mut rng),
            trg_emb: Tensor::uniform(vt, e, &mut rng),
            enc_w: Tensor::uniform(3 * h, e, &mut rng),
            enc_u: Tensor::uniform(3 * h, h, &mut rng),
            enc_b: Tensor::zeros(3 * h, 1),
            dec_w: Tensor::uniform(3 * h, e, &mut rng),
            dec_u: Tensor::uniform(3 * h, h, &mut rng),
            dec_b: Tensor::zeros(3 * h, 1),
            att_w: Tensor::uniform(h, 2 * h, &mut rng),
            att_b: Tensor::zeros(h, 1),
            out_w: Tensor::uniform(vt, h, &mut rng),
            out_b: Tensor::zeros(vt, 1),
            config,
        })
    }

    /// A zero tensor set with the same shapes, used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.src_emb,
            &self.trg_emb,
            &self.enc_w,
            &self.enc_u,
            &self.enc_b,
            &self.dec_w,
            &self.dec_u,
            &self.dec_b,
            &self.att_w,
            &self.att_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.src_emb,
            &mut self.trg_emb,
            &mut self.enc_w,
            &mut self.enc_u,
            &mut self.enc_b,
            &mut self.dec_w,
            &mut self.dec_u,
            &mut self.dec_b,
            &mut self.att_w,
            &mut self.att_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Checks every tensor shape against the config.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let (e, h, vs, vt) = (
            c.embed_dim,
            c.hidden_dim,
            c.src_vocab_size,
            c.trg_vocab_size,
        );
        let expected = [
            (vs, e),
            (vt, e),
            (3 * h, e),
            (3 * h, h),
            (3 * h, 1),
            (3 * h, e),
            (3 * h, h),
            (3 * h, 1),
            (h, 2 * h),
            (h, 1),
            (vt, h),
            (vt, 1),
        ];
        for ((name, t), (r, k)) in TENSOR_NAMES.iter().zip(self.tensors()).zip(expected) {
            if t.rows != r || t.cols != k || t.data.len() != r * k {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {}x{}, expected {r}x{k}",
                    t.rows, t.cols
                )));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(alpha, &b.data, &mut a.data);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}
