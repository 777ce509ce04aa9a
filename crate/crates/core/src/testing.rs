use rand::Rng;

use crate::interpolants::AliGenerator;
use crate::nd::{Activation, Linear, Mlp, Tensor};
use crate::rng::seeded;

/// Generator whose correction is the constant `c` (zero last layer, bias `c`).
pub fn constant_generator(c: &[f64]) -> AliGenerator {
    let d = c.len();
    let mut rng = seeded(3);
    let net = Mlp::new(&[2 * d + 1, 8, d], Activation::Elu, None, &mut rng).unwrap();
    let mut layers = net.layers().to_vec();
    layers[1] = Linear {
        weight: Tensor::zeros(&[8, d]),
        bias: Tensor::row_vector(c),
    };
    AliGenerator::from_net(Mlp::from_layers(layers, Activation::Elu, None).unwrap(), 0.0).unwrap()
}

pub fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}
