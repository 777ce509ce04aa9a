use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const SELU_LAMBDA: f64 = 1.0507009873554805;
const SELU_ALPHA: f64 = 1.6732632423543772;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Elu,
    Selu,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at input `x`, given the forward output `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Elu => "elu",
            Activation::Selu => "selu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "identity" => Activation::Identity,
            "elu" => Activation::Elu,
            "selu" => Activation::Selu,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            _ => return None,
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Affine layer `y = x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Feed-forward network. The hidden activation follows every layer but the
/// last; the last layer is followed by the optional output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Linear>,
    activation: Activation,
    output_activation: Option<Activation>,
}

pub struct MlpForward {
    pub output: Var,
    /// Parameter leaves in the order of [`Mlp::params`].
    pub params: Vec<Var>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        output_activation: Option<Activation>,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!(
                "an MLP needs at least two positive widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Linear {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("sized above"),
                    bias: Tensor::zeros(&[1, fan_out]),
                }
            })
            .collect();
        Ok(Mlp {
            widths: widths.to_vec(),
            layers,
            activation,
            output_activation,
        })
    }

    pub fn from_layers(
        layers: Vec<Linear>,
        activation: Activation,
        output_activation: Option<Activation>,
    ) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("an MLP needs at least one layer"))?;
        let mut widths = vec![first.weight.rows()];
        for (i, l) in layers.iter().enumerate() {
            let (fi, fo) = (l.weight.rows(), l.weight.cols());
            if l.weight.shape().len() != 2 || fi != *widths.last().unwrap() {
                return Err(Error::shape(
                    "Mlp::from_layers",
                    format!("layer {i} weight {:?} does not follow width {}", l.weight.shape(), widths.last().unwrap()),
                ));
            }
            if l.bias.shape() != [1, fo] {
                return Err(Error::shape(
                    "Mlp::from_layers",
                    format!("layer {i} bias {:?}, expected [1, {fo}]", l.bias.shape()),
                ));
            }
            widths.push(fo);
        }
        Ok(Mlp {
            widths,
            layers,
            activation,
            output_activation,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_activation(&self) -> Option<Activation> {
        self.output_activation
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != 2 || input.cols() != self.input_width() {
            return Err(Error::shape(
                "Mlp::forward",
                format!(
                    "input {:?} does not match input width {}",
                    input.shape(),
                    self.input_width()
                ),
            ));
        }
        Ok(())
    }

    /// Record the forward pass on `tape`, with parameters as differentiable leaves.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<MlpForward> {
        let params = self.leaves(tape);
        let output = self.forward_on(tape, input, &params)?;
        Ok(MlpForward { output, params })
    }

    /// Forward pass whose parameters are tape constants; only the input can
    /// receive gradients.
    pub fn forward_frozen(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let params: Vec<Var> = self.params().into_iter().map(|p| tape.constant(p.clone())).collect();
        self.forward_on(tape, input, &params)
    }

    /// Push the parameters onto `tape` as leaves, in the order of [`Mlp::params`].
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Forward pass reusing parameter nodes already on the tape, so several
    /// passes can share one set of leaves.
    pub fn forward_on(&self, tape: &mut Tape, input: Var, params: &[Var]) -> Result<Var> {
        self.check_input(tape.value(input))?;
        if params.len() != 2 * self.layers.len() {
            return Err(Error::shape(
                "Mlp::forward_on",
                format!("{} parameter nodes for {} layers", params.len(), self.layers.len()),
            ));
        }
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, wb) in params.chunks(2).enumerate() {
            let z = tape.matmul(h, wb[0])?;
            let z = tape.add_bias(z, wb[1])?;
            h = if i < last {
                tape.activate(z, self.activation)
            } else {
                match self.output_activation {
                    Some(act) => tape.activate(z, act),
                    None => z,
                }
            };
        }
        Ok(h)
    }

    /// Tape-free forward pass; bit-identical to [`Mlp::forward`].
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let n = input.rows();
        let mut h = input.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (fi, fo) = (layer.weight.rows(), layer.weight.cols());
            let mut z = vec![0.0; n * fo];
            gemm(&h, n, fi, false, layer.weight.data(), fi, fo, false, &mut z, false);
            let act = if i < last {
                Some(self.activation)
            } else {
                self.output_activation
            };
            for row in z.chunks_mut(fo) {
                for (v, b) in row.iter_mut().zip(layer.bias.data()) {
                    *v += b;
                    if let Some(a) = act {
                        *v = a.apply(*v);
                    }
                }
            }
            h = z;
        }
        Tensor::matrix(n, self.output_width(), h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Linear {
            weight: Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            bias: Tensor::zeros(&[1, 2]),
        };
        let net = Mlp::from_layers(vec![layer], Activation::Identity, None).unwrap();
        let x = Tensor::from_rows(&[[0.3, -2.0]]).unwrap();
        assert_eq!(net.eval(&x).unwrap(), x);
    }

    #[test]
    fn elu_of_minus_one() {
        assert!((Activation::Elu.apply(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn elu_is_c1_at_zero() {
        // both branch formulas give the same slope at the joint
        assert_eq!(0f64.exp(), Activation::Elu.derivative(1e-300, 1e-300));
        // and the slope gap at +-h shrinks linearly with h
        for h in [1e-4, 1e-6, 1e-8] {
            let left = Activation::Elu.derivative(-h, Activation::Elu.apply(-h));
            let right = Activation::Elu.derivative(h, Activation::Elu.apply(h));
            assert!((left - right).abs() <= 1.01 * h, "h={h}");
        }
    }

    #[test]
    fn selu_uses_standard_constants() {
        assert_eq!(Activation::Selu.apply(1.0), 1.0507009873554805);
        let neg = Activation::Selu.apply(-1e3);
        assert!((neg + 1.0507009873554805 * 1.6732632423543772).abs() < 1e-12);
    }

    #[test]
    fn input_width_mismatch_is_rejected() {
        let net = Mlp::new(&[3, 4, 1], Activation::Tanh, None, &mut seeded(0)).unwrap();
        let bad = Tensor::zeros(&[2, 2]);
        assert!(net.eval(&bad).is_err());
        let mut tape = Tape::new();
        let x = tape.constant(bad);
        assert!(net.forward(&mut tape, x).is_err());
    }

    #[test]
    fn tape_and_eval_agree_bitwise() {
        let net = Mlp::new(&[3, 5, 5, 2], Activation::Elu, Some(Activation::Sigmoid), &mut seeded(1)).unwrap();
        let x = Tensor::from_rows(&[[0.1, -0.4, 2.0], [1.0, 0.0, -3.0]]).unwrap();
        let mut tape = Tape::new();
        let xin = tape.constant(x.clone());
        let out = net.forward(&mut tape, xin).unwrap().output;
        assert_eq!(tape.value(out), &net.eval(&x).unwrap());
    }

    #[test]
    fn glorot_bounds_hold() {
        let net = Mlp::new(&[10, 20], Activation::Relu, None, &mut seeded(3)).unwrap();
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(net.layers()[0].weight.data().iter().all(|w| w.abs() < bound));
        assert_eq!(net.num_params(), 10 * 20 + 20);
    }
}
