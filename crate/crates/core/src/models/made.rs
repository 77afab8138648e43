//! Masked autoregressive Bernoulli decoder conditioned on a latent code.
//!
//! Logit `i` sees `x_j` only for `j < i`, through one masked hidden layer and
//! a strictly lower-triangular direct connection. The code `z` feeds both
//! layers unmasked.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamSet, Tensor, Var};
use crate::distributions::AutoregressiveLogits;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Made {
    pub prefix: String,
    pub data_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
}

impl Made {
    pub fn new(prefix: impl Into<String>, data_dim: usize, hidden: usize, latent_dim: usize) -> Result<Self> {
        if data_dim == 0 || hidden == 0 || latent_dim == 0 {
            return Err(Error::invalid("made dimensions must be positive"));
        }
        Ok(Self {
            prefix: prefix.into(),
            data_dim,
            hidden,
            latent_dim,
        })
    }

    fn name(&self, s: &str) -> String {
        format!("{}{s}", self.prefix)
    }

    /// Degree of hidden unit `k`, in `1..=max(1, N-1)`.
    fn degree(&self, k: usize) -> usize {
        if self.data_dim <= 1 {
            1
        } else {
            k % (self.data_dim - 1) + 1
        }
    }

    /// `[N, H]`: input `j` reaches hidden `k` iff `j + 1 <= m_k`.
    pub fn input_mask(&self) -> Tensor {
        let (n, h) = (self.data_dim, self.hidden);
        let data = (0..n)
            .flat_map(|j| (0..h).map(move |k| (j, k)))
            .map(|(j, k)| f64::from(u8::from(j < self.degree(k))))
            .collect();
        Tensor::from_parts(vec![n, h], data)
    }

    /// `[H, N]`: hidden `k` reaches output `i` iff `i + 1 > m_k`.
    pub fn output_mask(&self) -> Tensor {
        let (n, h) = (self.data_dim, self.hidden);
        let data = (0..h)
            .flat_map(|k| (0..n).map(move |i| (k, i)))
            .map(|(k, i)| f64::from(u8::from(i >= self.degree(k))))
            .collect();
        Tensor::from_parts(vec![h, n], data)
    }

    /// `[N, N]` strictly lower: `x_j` reaches logit `i` iff `j < i`.
    pub fn direct_mask(&self) -> Tensor {
        let n = self.data_dim;
        let data = (0..n * n).map(|k| f64::from(u8::from(k / n < k % n))).collect();
        Tensor::from_parts(vec![n, n], data)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        let (n, h, d) = (self.data_dim, self.hidden, self.latent_dim);
        params.init_weight(&self.name("w_in"), n, h, rng);
        params.init_weight(&self.name("w_zh"), d, h, rng);
        params.insert(self.name("b_h"), Tensor::zeros(vec![h]));
        params.init_weight(&self.name("w_out"), h, n, rng);
        params.init_weight(&self.name("w_zo"), d, n, rng);
        params.insert(self.name("w_dir"), Tensor::zeros(vec![n, n]));
        params.insert(self.name("b_out"), Tensor::zeros(vec![n]));
    }

    /// `[B, N]` logits for data `x` `[B, N]` and codes `z` `[B, d]`.
    pub fn logits<'t>(&self, params: &Bound<'t>, x: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let tape = params.tape()?;
        let masked = |w: &str, mask: Tensor| -> Result<Var<'t>> {
            params.get(&self.name(w))?.mul(&tape.constant(mask))
        };
        let h = x
            .matmul(&masked("w_in", self.input_mask())?)?
            .add(&z.matmul(&params.get(&self.name("w_zh"))?)?)?
            .add(&params.get(&self.name("b_h"))?)?
            .tanh()?;
        h.matmul(&masked("w_out", self.output_mask())?)?
            .add(&x.matmul(&masked("w_dir", self.direct_mask())?)?)?
            .add(&z.matmul(&params.get(&self.name("w_zo"))?)?)?
            .add(&params.get(&self.name("b_out"))?)
    }

    /// Binds `z` so the network can drive [`AutoregressiveBernoulli`](crate::distributions::AutoregressiveBernoulli).
    pub fn conditional<'a, 't>(&'a self, params: &'a Bound<'t>, z: Var<'t>) -> MadeConditional<'a, 't> {
        MadeConditional { made: self, params, z }
    }
}

pub struct MadeConditional<'a, 't> {
    made: &'a Made,
    params: &'a Bound<'t>,
    z: Var<'t>,
}

impl<'t> AutoregressiveLogits<'t> for MadeConditional<'_, 't> {
    fn dim(&self) -> usize {
        self.made.data_dim
    }

    fn logits(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.made.logits(self.params, x, self.z)
    }
}
