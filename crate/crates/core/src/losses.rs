//! Training losses, discriminator-derived importance weights, the entropy
//! regularizer and the multilinear conditioning map used by the CDAN baseline.
//!
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
//! Importance weights are plain `f64` slices: they enter the graph as
//! constants, so no gradient reaches the discriminator that produced them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightKind {
    Uniform,
    Discriminator,
    Relaxed { tau: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightingMode {
    pub kind: WeightKind,
    pub renormalize: bool,
}

impl WeightingMode {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            WeightKind::Relaxed { tau } if !(tau >= 1.0) => {
                Err(Error::Contract(format!("relaxation tau {tau} < 1")))
            }
            _ => Ok(()),
        }
    }

    /// Per-sample source weights given the domain discriminator's logits.
    pub fn weights(&self, logits: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let raw = match self.kind {
            WeightKind::Uniform => vec![1.0; logits.len()],
            WeightKind::Discriminator => weights_from_discriminator(logits, 1.0)?,
            WeightKind::Relaxed { tau } => weights_from_discriminator(logits, tau)?,
        };
        if self.renormalize {
            renormalize_weights(&raw)
        } else {
            Ok(raw)
        }
    }
}

/// `(1 - s) / s` with `s = sigmoid(logit / tau)`, which simplifies to
/// `exp(-logit / tau)`.
pub fn weights_from_discriminator(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 1.0) {
        return Err(Error::Contract(format!("relaxation tau {tau} < 1")));
    }
    Ok(logits.iter().map(|&l| (-l / tau).exp()).collect())
}

/// Rescale to mean exactly one.
pub fn renormalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateBatch(format!("weight sum {total}")));
    }
    let n = weights.len() as f64;
    Ok(weights.iter().map(|w| w * n / total).collect())
}

/// Summary of one iteration's losses and batch weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLosses {
    pub classification: f64,
    pub invariance: f64,
    pub transferability: f64,
    pub weight_mean: f64,
    pub weight_min: f64,
    pub weight_max: f64,
}

impl BatchLosses {
    pub fn set_weights(&mut self, w: &[f64]) {
        let n = w.len().max(1) as f64;
        self.weight_mean = w.iter().sum::<f64>() / n;
        self.weight_min = w.iter().copied().fold(f64::INFINITY, f64::min);
        self.weight_max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }

    pub fn is_finite(&self) -> bool {
        [
            self.classification,
            self.invariance,
            self.transferability,
            self.weight_mean,
            self.weight_min,
            self.weight_max,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn clamped_log(tape: &mut Tape, p: Var) -> Result<Var> {
    let c = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    tape.log(c)
}

fn clamped_log_complement(tape: &mut Tape, p: Var) -> Result<Var> {
    let c = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let q = tape.affine(c, -1.0, 1.0);
    tape.log(q)
}

/// Constant `n x cols` matrix whose row `i` is `w[i]`.
fn row_weights(w: &[f64], cols: usize) -> Array {
    let data = w
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, cols))
        .collect();
    Array::new(w.len(), cols, data).expect("finite weights")
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Dimension(format!(
            "{} weights for {n} rows",
            w.len()
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Contract("weights must be finite and >= 0".into()));
    }
    Ok(())
}

/// `-(1/n_S) sum w_i log d(z_S,i) - (1/n_T) sum log(1 - d(z_T,j))`.
/// `None` weights mean all ones.
pub fn loss_inv_weighted(
    tape: &mut Tape,
    d_src: Var,
    d_tgt: Var,
    weights: Option<&[f64]>,
) -> Result<Var> {
    for v in [d_src, d_tgt] {
        if tape.value(v).cols() != 1 {
            return Err(Error::Dimension(
                "discriminator output must be n x 1".into(),
            ));
        }
    }
    let n_s = tape.value(d_src).rows();
    let n_t = tape.value(d_tgt).rows() as f64;
    let log_s = clamped_log(tape, d_src)?;
    let src_terms = match weights {
        Some(w) => {
            check_weights(w, n_s)?;
            let wv = tape.leaf(row_weights(w, 1));
            tape.mul(log_s, wv)?
        }
        None => log_s,
    };
    let src_sum = tape.sum(src_terms);
    let src = tape.scale(src_sum, -1.0 / n_s as f64);
    let log_t = clamped_log_complement(tape, d_tgt)?;
    let tgt_sum = tape.sum(log_t);
    let tgt = tape.scale(tgt_sum, -1.0 / n_t);
    tape.add(src, tgt)
}

pub fn loss_inv(tape: &mut Tape, d_src: Var, d_tgt: Var) -> Result<Var> {
    loss_inv_weighted(tape, d_src, d_tgt, None)
}

/// Transferability loss of the label-domain discriminator:
/// `(1/n_S) sum -w_i g_S,i . log dd_S,i + (1/n_T) sum -g_T,j . log(1 - dd_T,j)`.
/// The classifier outputs are detached: they act as soft labels.
pub fn loss_tsf(
    tape: &mut Tape,
    dd_src: Var,
    dd_tgt: Var,
    g_src: Var,
    g_tgt: Var,
    weights: &[f64],
) -> Result<Var> {
    let (ss, st) = (tape.value(dd_src).shape(), tape.value(dd_tgt).shape());
    if ss != tape.value(g_src).shape() || st != tape.value(g_tgt).shape() || ss[1] != st[1] {
        return Err(Error::Dimension(format!(
            "label-domain discriminator {ss:?}/{st:?} vs classifier {:?}/{:?}",
            tape.value(g_src).shape(),
            tape.value(g_tgt).shape()
        )));
    }
    check_weights(weights, ss[0])?;
    let mut soft_src = tape.value(g_src).clone();
    for (v, w) in soft_src
        .data_mut()
        .iter_mut()
        .zip(row_weights(weights, ss[1]).data())
    {
        *v *= w;
    }
    let soft_src = tape.leaf(soft_src);
    let soft_tgt = tape.detach(g_tgt);

    let log_s = clamped_log(tape, dd_src)?;
    let src_terms = tape.mul(log_s, soft_src)?;
    let src_sum = tape.sum(src_terms);
    let src = tape.scale(src_sum, -1.0 / ss[0] as f64);

    let log_t = clamped_log_complement(tape, dd_tgt)?;
    let tgt_terms = tape.mul(log_t, soft_tgt)?;
    let tgt_sum = tape.sum(tgt_terms);
    let tgt = tape.scale(tgt_sum, -1.0 / st[0] as f64);
    tape.add(src, tgt)
}

/// Weighted cross-entropy `(1/n) sum -w_i y_i . log g_i`.
pub fn loss_cls(tape: &mut Tape, g_out: Var, labels: &Array, weights: &[f64]) -> Result<Var> {
    let shape = tape.value(g_out).shape();
    if labels.shape() != shape {
        return Err(Error::Dimension(format!(
            "labels {:?} vs predictions {shape:?}",
            labels.shape()
        )));
    }
    check_weights(weights, shape[0])?;
    let mut target = labels.clone();
    for (v, w) in target
        .data_mut()
        .iter_mut()
        .zip(row_weights(weights, shape[1]).data())
    {
        *v *= w;
    }
    let target = tape.leaf(target);
    let log_g = clamped_log(tape, g_out)?;
    let terms = tape.mul(log_g, target)?;
    let total = tape.sum(terms);
    Ok(tape.scale(total, -1.0 / shape[0] as f64))
}

/// Mean prediction entropy `-(1/n) sum_i g_i . log g_i` over a target batch.
pub fn entropy_regularizer(tape: &mut Tape, g_tgt: Var) -> Result<Var> {
    let n = tape.value(g_tgt).rows() as f64;
    let log_g = clamped_log(tape, g_tgt)?;
    let terms = tape.mul(log_g, g_tgt)?;
    let total = tape.sum(terms);
    Ok(tape.scale(total, -1.0 / n))
}

/// Row `i` is the flattened outer product `g_i ⊗ z_i`, class-major.
pub fn cdan_feature(tape: &mut Tape, g_out: Var, z: Var) -> Result<Var> {
    tape.row_outer(g_out, z)
}
