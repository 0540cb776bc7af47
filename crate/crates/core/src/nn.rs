//! Dense multilayer perceptrons expressed over the autodiff graph, with a
//! matching graph-free inference path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_uniform, Graph, NodeId, ParamId, ParamSet, Tensor};
use crate::error::{LsboError, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Hidden layers use `activation`; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
    activation: Activation,
}

impl Mlp {
    /// Allocate Glorot-uniform weights and zero biases under `prefix`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wid = params.push(format!("{prefix}.{i}.w"), glorot_uniform(rng, w[0], w[1]));
                let bid = params.push(format!("{prefix}.{i}.b"), Tensor::zeros(&[1, w[1]]));
                (wid, bid)
            })
            .collect();
        Mlp {
            sizes: sizes.to_vec(),
            layers,
            activation,
        }
    }

    /// Re-attach to tensors already present in `params` (e.g. after loading).
    pub fn bind(
        params: &ParamSet,
        prefix: &str,
        sizes: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            let find = |suffix: &str, shape: [usize; 2]| -> Result<ParamId> {
                let name = format!("{prefix}.{i}.{suffix}");
                let id = params
                    .find(&name)
                    .ok_or_else(|| LsboError::invalid(format!("missing parameter {name}")))?;
                if params.get(id).shape() != shape {
                    return Err(LsboError::Shape {
                        op: "mlp_bind",
                        detail: format!("{name} has shape {:?}, expected {shape:?}", params.get(id).shape()),
                    });
                }
                Ok(id)
            };
            layers.push((find("w", [w[0], w[1]])?, find("b", [1, w[1]])?));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
            activation,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Append this network's ops to `g`, returning the linear output node.
    pub fn build(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wn = g.param(w);
            let bn = g.param(b);
            let xw = g.matmul(h, wn);
            h = g.add(xw, bn);
            if i < last {
                h = match self.activation {
                    Activation::Tanh => g.tanh(h),
                    Activation::Relu => g.relu(h),
                };
            }
        }
        h
    }

    /// Graph-free evaluation on a batch of rows. Bitwise identical to
    /// evaluating [`Mlp::build`]'s nodes.
    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(LsboError::Shape {
                op: "mlp_forward",
                detail: format!("input has {} columns, network expects {}", x.cols(), self.input_dim()),
            });
        }
        let rows = x.rows();
        let mut h = x.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            let mut out = vec![0.0; rows * fan_out];
            linalg::matmul(&h, params.get(w).data(), rows, fan_in, fan_out, &mut out);
            let bias = params.get(b).data();
            for r in 0..rows {
                for (o, bv) in out[r * fan_out..(r + 1) * fan_out].iter_mut().zip(bias) {
                    *o += bv;
                }
            }
            if i < last {
                let act = self.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = out;
        }
        Ok(Tensor::matrix(rows, self.output_dim(), h))
    }
}
