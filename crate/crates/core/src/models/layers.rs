use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
    Sigmoid,
}

impl Activation {
    pub fn apply<'t>(self, v: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Softplus => v.softplus(),
            Activation::Sigmoid => v.sigmoid(),
        }
    }
}

/// Dense feed-forward net. Parameters live in a [`ParamSet`] under
/// `{prefix}w{k}` / `{prefix}b{k}`; the last layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("mlp sizes must have >= 2 positive entries, got {sizes:?}")));
        }
        Ok(Self {
            prefix: prefix.into(),
            sizes,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn weight_name(&self, k: usize) -> String {
        format!("{}w{k}", self.prefix)
    }

    pub fn bias_name(&self, k: usize) -> String {
        format!("{}b{k}", self.prefix)
    }

    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        for (k, pair) in self.sizes.windows(2).enumerate() {
            params.init_weight(&self.weight_name(k), pair[0], pair[1], rng);
            params.insert(self.bias_name(k), Tensor::zeros(vec![pair[1]]));
        }
    }

    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let layers = self.sizes.len() - 1;
        let mut h = x;
        for k in 0..layers {
            h = h.matmul(&params.get(&self.weight_name(k))?)?.add(&params.get(&self.bias_name(k))?)?;
            if k + 1 < layers {
                h = self.activation.apply(h)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::rng::seeded;

    #[test]
    fn linear_layer_is_affine() {
        let mlp = Mlp::new("l.", vec![2, 1], Activation::Tanh).unwrap();
        let mut ps = ParamSet::new();
        ps.insert("l.w0", Tensor::matrix(2, 1, vec![2.0, -1.0]).unwrap());
        ps.insert("l.b0", Tensor::vector(vec![0.5]).unwrap());
        let tape = Tape::new();
        let b = ps.bind(&tape);
        let x = tape.constant(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        assert_eq!(mlp.forward(&b, x).unwrap().item().unwrap(), 2.5);
    }

    #[test]
    fn init_shapes() {
        let mlp = Mlp::new("e.", vec![4, 8, 3], Activation::Tanh).unwrap();
        let mut ps = ParamSet::new();
        mlp.init(&mut ps, &mut seeded(0));
        assert_eq!(ps.require("e.w1").unwrap().shape(), &[8, 3]);
        assert_eq!(ps.require("e.b0").unwrap().data(), &[0.0; 8]);
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(Mlp::new("x", vec![3], Activation::Tanh).is_err());
        assert!(Mlp::new("x", vec![3, 0], Activation::Tanh).is_err());
    }
}
