//! MLP encoder/head and the AdamW optimizer.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `in_dim x out_dim`
    pub weight: Tensor,
    /// `1 x out_dim`
    pub bias: Tensor,
}

/// Fully connected stack. The activation is applied after every layer but
/// the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(dims: &[usize], activation: Activation, seed: u64) -> Result<Mlp> {
    if dims.len() < 2 {
        return Err(Error::invalid(format!("an MLP needs at least 2 dims, got {dims:?}")));
    }
    if dims.contains(&0) {
        return Err(Error::invalid(format!("non-positive layer dim in {dims:?}")));
    }
    let mut rng = rng::rng(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            Layer {
                weight: Tensor::matrix(fan_in, fan_out, data).expect("dims are positive"),
                bias: Tensor::zeros(&[1, fan_out]),
            }
        })
        .collect();
    Ok(Mlp { layers, activation })
}

impl Mlp {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weight.rows()];
        d.extend(self.layers.iter().map(|l| l.weight.cols()));
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }

    /// Parameters in declaration order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    /// Records the forward pass; `vars` are this network's parameter leaves.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (_, cols) = tape.dims(x);
        if cols != self.in_dim() {
            return Err(Error::shape(format!(
                "input has {cols} columns, network expects {}",
                self.in_dim()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, pair) in vars.chunks_exact(2).enumerate() {
            h = tape.matmul(h, pair[0])?;
            h = tape.add_row(h, pair[1])?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p)).collect()
    }
}

/// Encoder followed by a regression head on the unit-normalized representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: Mlp,
    pub head: Mlp,
}

/// Parameter leaves of a [`Model`] on one tape.
pub struct ModelVars {
    pub encoder: Vec<Var>,
    pub head: Vec<Var>,
}

impl ModelVars {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.encoder.iter().chain(&self.head).copied()
    }
}

impl Model {
    pub fn new(encoder_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let encoder = init_mlp(encoder_dims, activation, rng::derive(seed, 0))?;
        let rep = *encoder_dims.last().expect("checked by init_mlp");
        let head = init_mlp(&[rep, 1], activation, rng::derive(seed, 1))?;
        Ok(Model { encoder, head })
    }

    pub fn rep_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn leaves(&self, tape: &mut Tape) -> ModelVars {
        ModelVars { encoder: self.encoder.leaves(tape), head: self.head.leaves(tape) }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    /// Unit-norm representations on the tape.
    pub fn encode_on(&self, tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Var> {
        let h = self.encoder.forward(tape, &vars.encoder, x)?;
        tape.l2_normalize(h)
    }

    pub fn regress_on(&self, tape: &mut Tape, vars: &ModelVars, z: Var) -> Result<Var> {
        self.head.forward(tape, &vars.head, z)
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        encode(&self.encoder, x)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        regress(&self.head, &self.encode(x)?)
    }
}

/// Unit-norm representations of each row of `x`.
pub fn encode(encoder: &Mlp, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = encoder.params().into_iter().map(|p| tape.constant(p)).collect();
    let xv = tape.constant(x);
    let h = encoder.forward(&mut tape, &vars, xv)?;
    let z = tape.l2_normalize(h)?;
    Ok(tape.tensor(z))
}

/// One scalar prediction per row of `z`.
pub fn regress(head: &Mlp, z: &Tensor) -> Result<Vec<f64>> {
    if head.out_dim() != 1 {
        return Err(Error::shape(format!("head emits {} outputs, expected 1", head.out_dim())));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = head.params().into_iter().map(|p| tape.constant(p)).collect();
    let zv = tape.constant(z);
    let out = head.forward(&mut tape, &vars, zv)?;
    Ok(tape.value(out).to_vec())
}

/// Mean squared error between a column of predictions and targets.
pub fn mse_on(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    let t = tape.constant(&Tensor::matrix(target.len(), 1, target.to_vec())?);
    let d = tape.sub(pred, t)?;
    let s = tape.square(d)?;
    tape.mean(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamWState {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamWState { config, v: m.clone(), m, step: 0 }
    }
}

/// One AdamW update with decoupled weight decay.
pub fn adamw_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamWState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adamw: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(format!(
                "adamw tensor {i}: param {:?}, grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for tensor {i}")));
        }
    }

    let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let decay = 1.0 - lr * weight_decay;
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
