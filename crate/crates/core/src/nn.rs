//! MLP building blocks, momentum SGD and the training-progress schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Sigmoid,
    Softmax,
}

/// Layer widths from input to output; hidden layers use ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub head: Head,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, head: Head, seed: u64) -> Result<Self> {
        let spec = MlpSpec { widths, head, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Contract(
                "an MLP needs an input and at least one layer".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::Contract("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`
    pub weight: Array,
    /// `1 x fan_out`
    pub bias: Array,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// Tape handles for one bound copy of an MLP's parameters.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Parameter handles in the same order as [`Mlp::params_mut`].
    pub fn params(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

/// Uniform fan-based initialization, zero biases, reproducible from the seed.
pub fn init_mlp(spec: &MlpSpec) -> Result<Mlp> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layers = spec
        .widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Layer {
                weight: Array::new(fan_in, fan_out, data).expect("finite init"),
                bias: Array::zeros(1, fan_out),
            }
        })
        .collect();
    Ok(Mlp {
        spec: spec.clone(),
        layers,
    })
}

impl Mlp {
    pub fn params(&self) -> Vec<&Array> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Register the parameters as leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(tape.leaf(l.weight.clone()));
            biases.push(tape.leaf(l.bias.clone()));
        }
        MlpVars { weights, biases }
    }

    /// Output of the last affine layer, before the head.
    pub fn forward_logits(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.spec.input_width() {
            return Err(Error::Dimension(format!(
                "batch width {width}, network expects {}",
                self.spec.input_width()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (&w, &b)) in vars.weights.iter().zip(&vars.biases).enumerate() {
            let a = tape.matmul(h, w)?;
            h = tape.add(a, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn apply_head(&self, tape: &mut Tape, logits: Var) -> Var {
        match self.spec.head {
            Head::Linear => logits,
            Head::Sigmoid => tape.sigmoid(logits),
            Head::Softmax => tape.softmax_rows(logits),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        let logits = self.forward_logits(tape, vars, x)?;
        Ok(self.apply_head(tape, logits))
    }

    /// Tape-free forward pass for evaluation.
    pub fn predict(&self, x: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let input = tape.leaf(x.clone());
        let out = self.forward(&mut tape, &vars, input)?;
        Ok(tape.value(out).clone())
    }
}

/// Momentum buffers for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Array>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(shapes: &[[usize; 2]], base_lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            velocity: shapes.iter().map(|s| Array::zeros(s[0], s[1])).collect(),
            base_lr,
            momentum,
            weight_decay,
        }
    }

    pub fn for_mlp(mlp: &Mlp, base_lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let shapes: Vec<[usize; 2]> = mlp.params().iter().map(|p| p.shape()).collect();
        OptimizerState::new(&shapes, base_lr, momentum, weight_decay)
    }
}

/// `v <- m*v + grad + wd*param; param <- param - lr*v`. Nothing is modified
/// when any gradient entry is non-finite.
pub fn sgd_step(
    state: &mut OptimizerState,
    params: &mut [&mut Array],
    grads: &[&Array],
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Dimension(format!(
            "{} params, {} grads, {} buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Dimension(format!(
                "parameter {i}: {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::PoisonedUpdate { param: i });
        }
    }
    let (m, wd) = (state.momentum, state.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = m * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

fn check_progress(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Contract(format!("progress {p} outside [0, 1]")))
    }
}

/// Adversarial trade-off `2 / (1 + exp(-gamma p)) - 1`; the usual gamma is 10.
pub fn lambda_schedule(p: f64, gamma: f64) -> Result<f64> {
    check_progress(p)?;
    Ok(2.0 / (1.0 + (-gamma * p).exp()) - 1.0)
}

/// Weight relaxation temperature, starting at `tau_max` and decaying toward
/// `tau_min`: `tau_min + 2 (tau_max - tau_min) / (1 + exp(alpha p))`.
pub fn tau_schedule(p: f64, tau_max: f64, tau_min: f64, alpha: f64) -> Result<f64> {
    check_progress(p)?;
    if !(tau_max >= tau_min && tau_min >= 1.0) {
        return Err(Error::Contract(format!(
            "need tau_max >= tau_min >= 1, got {tau_max}, {tau_min}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::Contract(format!("alpha must be > 0, got {alpha}")));
    }
    Ok(tau_min + 2.0 * (tau_max - tau_min) / (1.0 + (alpha * p).exp()))
}

pub fn lr_schedule(p: f64, lr0: f64) -> f64 {
    lr0 / (1.0 + 10.0 * p).powf(0.75)
}

/// Constants of every training-progress schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSet {
    pub lambda_gamma: f64,
    /// Multiplies lambda; 0 pins the adversarial trade-off off.
    pub lambda_scale: f64,
    pub tau_max: f64,
    pub tau_min: f64,
    pub alpha: f64,
    pub lr0: f64,
}

impl Default for ScheduleSet {
    fn default() -> Self {
        ScheduleSet {
            lambda_gamma: 10.0,
            lambda_scale: 1.0,
            tau_max: 5.0,
            tau_min: 1.0,
            alpha: 5.0,
            lr0: 0.02,
        }
    }
}

impl ScheduleSet {
    pub fn validate(&self) -> Result<()> {
        tau_schedule(0.0, self.tau_max, self.tau_min, self.alpha)?;
        if !(self.lr0 > 0.0) || !(self.lambda_scale >= 0.0) || !(self.lambda_gamma > 0.0) {
            return Err(Error::Contract(
                "lr0 and lambda_gamma must be > 0, lambda_scale >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn lambda(&self, p: f64) -> Result<f64> {
        Ok(self.lambda_scale * lambda_schedule(p, self.lambda_gamma)?)
    }

    pub fn tau(&self, p: f64) -> Result<f64> {
        tau_schedule(p, self.tau_max, self.tau_min, self.alpha)
    }

    pub fn lr(&self, p: f64) -> f64 {
        lr_schedule(p, self.lr0)
    }
}
