use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{check_pair_shapes, PairInterpolant, TimeEmbedding};
use crate::error::{Error, Result};
use crate::nd::checkpoint::{Checkpoint, Entry};
use crate::nd::{Activation, Mlp, Tape, Tensor, Var};

/// `G(x0, x1, t) = (1 - t) x0 + t x1 + t (1 - t) f(x0, x1, t)` with `f` an MLP
/// on `x0 ⊕ x1 ⊕ e(t)`, `e` a [`TimeEmbedding`].
#[derive(Clone, Debug, PartialEq)]
pub struct AliGenerator {
    net: Mlp,
    time_noise_std: f64,
    embedding: TimeEmbedding,
}

/// Generator output recorded on a tape.
pub struct AliRecord {
    pub output: Var,
    /// The raw network output `f`.
    pub correction: Var,
    /// `t (1 - t) f`, the deviation from the straight line.
    pub gated: Var,
}

impl AliGenerator {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        time_noise_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        AliGenerator::with_embedding(dim, hidden, activation, time_noise_std, TimeEmbedding::RAW, rng)
    }

    pub fn with_embedding<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        time_noise_std: f64,
        embedding: TimeEmbedding,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(2 * dim + embedding.width());
        widths.extend_from_slice(hidden);
        widths.push(dim);
        AliGenerator::from_parts(Mlp::new(&widths, activation, None, rng)?, time_noise_std, embedding)
    }

    /// Wrap a network on the raw time input.
    pub fn from_net(net: Mlp, time_noise_std: f64) -> Result<Self> {
        AliGenerator::from_parts(net, time_noise_std, TimeEmbedding::RAW)
    }

    pub fn from_parts(net: Mlp, time_noise_std: f64, embedding: TimeEmbedding) -> Result<Self> {
        if net.input_width() != 2 * net.output_width() + embedding.width() {
            return Err(Error::shape(
                "AliGenerator",
                format!(
                    "network maps {} -> {}, expected 2d+{} -> d",
                    net.input_width(),
                    net.output_width(),
                    embedding.width()
                ),
            ));
        }
        if !(time_noise_std >= 0.0) || !time_noise_std.is_finite() {
            return Err(Error::invalid(format!("time noise std must be >= 0, got {time_noise_std}")));
        }
        Ok(AliGenerator { net, time_noise_std, embedding })
    }

    pub fn save(&self, ck: &mut Checkpoint, key: &str) {
        ck.insert(key, Entry::Mlp(self.net.clone()));
        ck.insert(format!("{key}.time_noise_std"), Entry::F64(self.time_noise_std));
        ck.insert(format!("{key}.time_frequencies"), Entry::U64(self.embedding.frequencies as u64));
    }

    pub fn load(ck: &Checkpoint, key: &str) -> Result<Self> {
        let frequencies = ck.u64(&format!("{key}.time_frequencies"))?;
        AliGenerator::from_parts(
            ck.mlp(key)?.clone(),
            ck.f64(&format!("{key}.time_noise_std"))?,
            TimeEmbedding::new(frequencies as usize),
        )
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn into_net(self) -> Mlp {
        self.net
    }

    pub fn dim(&self) -> usize {
        self.net.output_width()
    }

    pub fn time_noise_std(&self) -> f64 {
        self.time_noise_std
    }

    pub fn set_time_noise_std(&mut self, std: f64) {
        self.time_noise_std = std.max(0.0);
    }

    fn net_input(&self, x0: &Tensor, x1: &Tensor, t_input: &[f64]) -> Result<Tensor> {
        Tensor::concat_cols(&[x0, x1, &self.embedding.features(t_input)])
    }

    /// Raw network output `f(x0, x1, t_input)`.
    pub fn correction(&self, x0: &Tensor, x1: &Tensor, t_input: &[f64]) -> Result<Tensor> {
        check_pair_shapes("AliGenerator::correction", x0, x1, t_input.len())?;
        self.net.eval(&self.net_input(x0, x1, t_input)?)
    }

    fn assemble(x0: &Tensor, x1: &Tensor, t: &[f64], f: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(x0.shape());
        for (r, &tr) in t.iter().enumerate() {
            let gate = tr * (1.0 - tr);
            let (a, b, c) = (x0.row(r), x1.row(r), f.row(r));
            for (k, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = ((1.0 - tr) * a[k] + tr * b[k]) + c[k] * gate;
            }
        }
        out
    }

    /// Noiseless evaluation, one time per row.
    pub fn eval(&self, x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
        let f = self.correction(x0, x1, t)?;
        Ok(Self::assemble(x0, x1, t, &f))
    }

    pub fn eval_point(&self, x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
        let a = Tensor::row_vector(x0);
        let b = Tensor::row_vector(x1);
        Ok(self.eval(&a, &b, &[t])?.into_data())
    }

    /// Times fed to `f` during training: `t + N(0, std²)`. The skeleton and
    /// the `t (1 - t)` gate keep the noiseless `t`.
    pub fn noisy_times<R: Rng + ?Sized>(&self, t: &[f64], rng: &mut R) -> Vec<f64> {
        if self.time_noise_std == 0.0 {
            return t.to_vec();
        }
        let normal = Normal::new(0.0, self.time_noise_std).expect("std validated");
        t.iter().map(|&x| x + normal.sample(rng)).collect()
    }

    /// Evaluation with training-time noise on the network's time input.
    pub fn eval_train<R: Rng + ?Sized>(
        &self,
        x0: &Tensor,
        x1: &Tensor,
        t: &[f64],
        rng: &mut R,
    ) -> Result<Tensor> {
        let t_in = self.noisy_times(t, rng);
        let f = self.correction(x0, x1, &t_in)?;
        Ok(Self::assemble(x0, x1, t, &f))
    }

    /// Parameter leaves for [`AliGenerator::record`].
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.net.leaves(tape)
    }

    /// Record `G` on `tape`. `t` drives the skeleton and gate, `t_input` is
    /// what the network sees. With `params == None` the weights are constants.
    pub fn record(
        &self,
        tape: &mut Tape,
        params: Option<&[Var]>,
        x0: &Tensor,
        x1: &Tensor,
        t: &[f64],
        t_input: &[f64],
    ) -> Result<AliRecord> {
        check_pair_shapes("AliGenerator::record", x0, x1, t.len())?;
        if t_input.len() != t.len() {
            return Err(Error::shape("AliGenerator::record", "time input length".to_string()));
        }
        let input = tape.constant(self.net_input(x0, x1, t_input)?);
        let f = match params {
            Some(p) => self.net.forward_on(tape, input, p)?,
            None => self.net.forward_frozen(tape, input)?,
        };
        let gates = t.iter().map(|&x| x * (1.0 - x)).collect();
        let gated = tape.mul_rows(f, gates)?;
        let skeleton = tape.constant(super::linear_ref_rows(x0, x1, t)?);
        let output = tape.add(skeleton, gated)?;
        Ok(AliRecord { output, correction: f, gated })
    }

    /// Noiseless `G` and its analytic time derivative
    /// `x1 - x0 + t (1 - t) df/dt + (1 - 2t) f`, with `df/dt` from reverse
    /// mode with respect to the time features, chained through `e'(t)`.
    pub fn position_and_velocity_impl(
        &self,
        x0: &Tensor,
        x1: &Tensor,
        t: &[f64],
    ) -> Result<(Tensor, Tensor)> {
        check_pair_shapes("AliGenerator::velocity", x0, x1, t.len())?;
        let n = t.len();
        let d = self.dim();
        let mut tape = Tape::new();
        let a = tape.constant(x0.clone());
        let b = tape.constant(x1.clone());
        let tv = tape.leaf(self.embedding.features(t));
        let input = tape.concat_cols(&[a, b, tv])?;
        let de = self.embedding.derivative(t);
        let f_var = self.net.forward_frozen(&mut tape, input)?;
        let f = tape.value(f_var).clone();
        let mut dfdt = Tensor::zeros(&[n, d]);
        for j in 0..d {
            let mut seed = Tensor::zeros(&[n, d]);
            for r in 0..n {
                seed.row_mut(r)[j] = 1.0;
            }
            let grads = tape.backward_seeded(f_var, seed)?;
            let g = grads.get_or_zeros(tv, tape.value(tv));
            for r in 0..n {
                dfdt.row_mut(r)[j] = g.row(r).iter().zip(de.row(r)).map(|(a, b)| a * b).sum();
            }
        }
        let pos = Self::assemble(x0, x1, t, &f);
        let mut vel = Tensor::zeros(&[n, d]);
        for (r, &tr) in t.iter().enumerate() {
            let (p, q, fr, gr) = (x0.row(r), x1.row(r), f.row(r), dfdt.row(r));
            for (k, v) in vel.row_mut(r).iter_mut().enumerate() {
                *v = (q[k] - p[k]) + tr * (1.0 - tr) * gr[k] + (1.0 - 2.0 * tr) * fr[k];
            }
        }
        Ok((pos, vel))
    }

    pub fn velocity(&self, x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
        Ok(self.position_and_velocity_impl(x0, x1, t)?.1)
    }
}

impl PairInterpolant for AliGenerator {
    fn dim(&self) -> usize {
        AliGenerator::dim(self)
    }

    fn position(&self, x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
        self.eval(x0, x1, t)
    }

    fn position_and_velocity(&self, x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<(Tensor, Tensor)> {
        self.position_and_velocity_impl(x0, x1, t)
    }
}
