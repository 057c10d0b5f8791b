//! Dense feed-forward feature map: batched forward pass and reverse-mode
//! gradients, including gradients with respect to the inputs so an outer
//! objective can push its sensitivity through the whole map.
//!
//! Convention: batches are row-major — one observation per row — so a layer
//! computes `tau(Z * W^T + 1 b^T)` with `W` stored as `output x input`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise nonlinearity applied after each affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation value.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "unknown activation {other:?}; expected tanh, relu, or identity"
            ))),
        }
    }
}

/// Requested width and nonlinearity for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// One affine layer plus its nonlinearity. `weight` is `output x input`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

/// A whole feature map. An empty layer list is the identity map, which is
/// occasionally useful for wiring the downstream model directly to raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    input_dim: usize,
    pub layers: Vec<Layer>,
}

/// Intermediate values saved by `forward` and consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch_rows: usize,
    layer_inputs: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
}

/// Gradients with the same shapes as the parameters they belong to.
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl NetworkParams {
    /// Identity feature map on `input_dim` coordinates.
    pub fn identity(input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("network input width must be at least 1".into()));
        }
        Ok(NetworkParams { input_dim, layers: Vec::new() })
    }

    /// Fresh network with weights drawn N(0, 1/fan_in) from a seeded stream
    /// and zero biases.
    pub fn init(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("network input width must be at least 1".into()));
        }
        for (l, spec) in specs.iter().enumerate() {
            if spec.width == 0 {
                return Err(Error::Config(format!("layer {l} has width 0")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        for spec in specs {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let weight = DMatrix::from_fn(spec.width, fan_in, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            });
            layers.push(Layer {
                weight,
                bias: DVector::zeros(spec.width),
                activation: spec.activation,
            });
            fan_in = spec.width;
        }
        Ok(NetworkParams { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Width of the final output (the latent dimension of the feature map).
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.weight.nrows())
    }

    /// Run the batch through every layer. Rows are observations.
    pub fn forward(&self, inputs: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        if inputs.ncols() != self.input_dim {
            return Err(Error::Input(format!(
                "batch has {} columns but the network expects {}",
                inputs.ncols(),
                self.input_dim
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("batch contains a non-finite value".into()));
        }
        let mut cache = ForwardCache {
            batch_rows: inputs.nrows(),
            layer_inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut z = inputs.clone();
        for layer in &self.layers {
            let mut pre = &z * layer.weight.transpose();
            for j in 0..pre.ncols() {
                pre.column_mut(j).add_scalar_mut(layer.bias[j]);
            }
            let post = pre.map(|v| layer.activation.apply(v));
            cache.layer_inputs.push(z);
            cache.pre_activations.push(pre);
            z = post;
        }
        Ok((z, cache))
    }

    /// Reverse-mode pass. `grad_output` holds the objective's sensitivity to
    /// each output entry; returns parameter gradients plus the sensitivity to
    /// the original inputs.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &DMatrix<f64>,
    ) -> Result<(NetworkGrads, DMatrix<f64>)> {
        if cache.layer_inputs.len() != self.layers.len() {
            return Err(Error::Input(
                "forward cache does not match this network's layer count".into(),
            ));
        }
        if grad_output.nrows() != cache.batch_rows || grad_output.ncols() != self.output_dim() {
            return Err(Error::Input(format!(
                "output gradient is {}x{} but the forward batch produced {}x{}",
                grad_output.nrows(),
                grad_output.ncols(),
                cache.batch_rows,
                self.output_dim()
            )));
        }
        let mut grad = grad_output.clone();
        let mut layer_grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[l];
            let grad_pre = DMatrix::from_fn(grad.nrows(), grad.ncols(), |i, j| {
                grad[(i, j)] * layer.activation.derivative(pre[(i, j)])
            });
            let grad_weight = grad_pre.transpose() * &cache.layer_inputs[l];
            let grad_bias = DVector::from_fn(grad_pre.ncols(), |j, _| grad_pre.column(j).sum());
            grad = &grad_pre * &layer.weight;
            layer_grads[l] = (grad_weight, grad_bias);
        }
        Ok((NetworkGrads { layers: layer_grads }, grad))
    }

    /// Gradient-ascent step: `params += step * grads`, in place.
    pub fn ascend(&mut self, grads: &NetworkGrads, step: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weight += gw * step;
            layer.bias += gb * step;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_network_reproduces_inputs() {
        let net = NetworkParams::identity(3).unwrap();
        let batch = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 1.0, 2.0, -3.0]);
        let (out, _) = net.forward(&batch).unwrap();
        assert_eq!(out, batch);
        assert_eq!(net.output_dim(), 3);
    }

    #[test]
    fn single_layer_matches_hand_computation() {
        let mut net = NetworkParams::init(
            1,
            &[LayerSpec { width: 2, activation: Activation::Tanh }],
            0,
        )
        .unwrap();
        net.layers[0].weight = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        net.layers[0].bias = DVector::from_row_slice(&[0.5, 0.0]);
        let (out, _) = net.forward(&DMatrix::from_row_slice(1, 1, &[0.3])).unwrap();
        assert_relative_eq!(out[(0, 0)], 0.8004990217606297, max_relative = 1e-15);
        assert_relative_eq!(out[(0, 1)], -0.2913126124515909, max_relative = 1e-15);
    }

    #[test]
    fn empty_batch_flows_through() {
        let net = NetworkParams::init(
            2,
            &[LayerSpec { width: 4, activation: Activation::Relu }],
            7,
        )
        .unwrap();
        let (out, cache) = net.forward(&DMatrix::zeros(0, 2)).unwrap();
        assert_eq!(out.nrows(), 0);
        assert_eq!(out.ncols(), 4);
        let (grads, grad_in) = net.backward(&cache, &DMatrix::zeros(0, 4)).unwrap();
        assert_eq!(grads.layers[0].0, DMatrix::zeros(4, 2));
        assert_eq!(grad_in.nrows(), 0);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = [
            LayerSpec { width: 5, activation: Activation::Tanh },
            LayerSpec { width: 2, activation: Activation::Identity },
        ];
        let a = NetworkParams::init(3, &spec, 42).unwrap();
        let b = NetworkParams::init(3, &spec, 42).unwrap();
        let c = NetworkParams::init(3, &spec, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let net = NetworkParams::init(
            2,
            &[LayerSpec { width: 3, activation: Activation::Tanh }],
            1,
        )
        .unwrap();
        assert!(net.forward(&DMatrix::zeros(4, 5)).is_err());
        let nan = DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]);
        assert!(net.forward(&nan).is_err());
        assert!(NetworkParams::init(2, &[LayerSpec { width: 0, activation: Activation::Tanh }], 1)
            .is_err());
    }
}
