//! Finite-difference audit of the tape over random small training graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Array, Tape, Var};
use crate::datasets::one_hot;
use crate::error::Result;
use crate::losses::{entropy_regularizer, loss_cls, loss_inv_weighted, loss_tsf};
use crate::nn::{init_mlp, Head, Mlp, MlpSpec};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients that are zero up to
/// rounding do not blow the ratio up.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Classifier,
    Marginal,
    LabelDomain,
    Conditional,
    Entropy,
}

const KINDS: [GraphKind; 5] = [
    GraphKind::Classifier,
    GraphKind::Marginal,
    GraphKind::LabelDomain,
    GraphKind::Conditional,
    GraphKind::Entropy,
];

/// Feature map, classifier and one discriminator on fixed inputs.
#[derive(Clone, Debug)]
pub struct GraphCase {
    pub kind: GraphKind,
    nets: Vec<Mlp>,
    xs: Array,
    xt: Array,
    ys: Array,
    /// Fixed target soft labels; the transferability loss treats its label
    /// inputs as constants, so the audit feeds constants too.
    soft_t: Array,
    weights: Vec<f64>,
    strength: f64,
}

fn uniform_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Array::new(rows, cols, data).expect("finite draws")
}

impl GraphCase {
    pub fn random(kind: GraphKind, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (n, input) = (rng.random_range(2..5), rng.random_range(2..5));
        let (hidden, zdim, classes) = (
            rng.random_range(2..6),
            rng.random_range(2..5),
            rng.random_range(2..4),
        );
        let mut spec = |widths: Vec<usize>, head| MlpSpec::new(widths, head, rng.random());
        let phi = spec(vec![input, hidden, zdim], Head::Linear)?;
        let g = spec(vec![zdim, classes], Head::Softmax)?;
        let disc = match kind {
            GraphKind::Marginal => spec(vec![zdim, hidden, 1], Head::Sigmoid)?,
            GraphKind::LabelDomain => spec(vec![zdim, hidden, classes], Head::Sigmoid)?,
            GraphKind::Conditional => spec(vec![zdim * classes, hidden, 1], Head::Sigmoid)?,
            GraphKind::Classifier | GraphKind::Entropy => spec(vec![zdim, 1], Head::Sigmoid)?,
        };
        let mut nets = vec![init_mlp(&phi)?, init_mlp(&g)?, init_mlp(&disc)?];
        // nonzero biases so every parameter carries gradient
        for net in &mut nets {
            for p in net.params_mut() {
                for v in p.data_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut soft_t = uniform_array(rng, n, classes, 1.0).map(f64::exp);
        for r in 0..n {
            let total: f64 = soft_t.row(r).iter().sum();
            for c in 0..classes {
                soft_t.data_mut()[r * classes + c] /= total;
            }
        }
        Ok(GraphCase {
            kind,
            nets,
            xs: uniform_array(rng, n, input, 1.0),
            xt: uniform_array(rng, n, input, 1.0),
            ys: one_hot(&labels, classes),
            soft_t,
            weights: (0..n).map(|_| rng.random_range(0.2..2.0)).collect(),
            strength: rng.random_range(0.1..2.0),
        })
    }

    pub fn params(&self) -> Vec<&Array> {
        self.nets.iter().flat_map(|n| n.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array> {
        self.nets.iter_mut().flat_map(|n| n.params_mut()).collect()
    }

    /// Whether every path from network `net` (0 = features, 1 = classifier,
    /// 2 = discriminator) into the extra term crosses a reversal.
    pub fn reversed(&self, net: usize) -> bool {
        match self.kind {
            GraphKind::Marginal | GraphKind::LabelDomain => net == 0,
            GraphKind::Conditional => net <= 1,
            GraphKind::Classifier | GraphKind::Entropy => false,
        }
    }

    /// Build the graph: tape, classification term, extra term (if any), total
    /// loss and parameter leaves in `params()` order.
    pub fn build(&self) -> Result<Built> {
        let mut tape = Tape::new();
        let [phi, g, disc] = [&self.nets[0], &self.nets[1], &self.nets[2]];
        let (pv, gv, dv) = (phi.bind(&mut tape), g.bind(&mut tape), disc.bind(&mut tape));
        let params: Vec<Var> = [&pv, &gv, &dv].iter().flat_map(|v| v.params()).collect();
        let xs = tape.leaf(self.xs.clone());
        let xt = tape.leaf(self.xt.clone());
        let zs = phi.forward(&mut tape, &pv, xs)?;
        let zt = phi.forward(&mut tape, &pv, xt)?;
        let gs = g.forward(&mut tape, &gv, zs)?;
        let cls = loss_cls(&mut tape, gs, &self.ys, &self.weights)?;
        let extra = match self.kind {
            GraphKind::Classifier => {
                return Ok(Built {
                    tape,
                    cls,
                    extra: None,
                    loss: cls,
                    params,
                })
            }
            GraphKind::Entropy => {
                let gt = g.forward(&mut tape, &gv, zt)?;
                entropy_regularizer(&mut tape, gt)?
            }
            GraphKind::Marginal => {
                let rs = tape.gradient_reversal(zs, self.strength)?;
                let rt = tape.gradient_reversal(zt, self.strength)?;
                let os = disc.forward(&mut tape, &dv, rs)?;
                let ot = disc.forward(&mut tape, &dv, rt)?;
                loss_inv_weighted(&mut tape, os, ot, Some(&self.weights))?
            }
            GraphKind::LabelDomain => {
                let ls = tape.leaf(self.ys.clone());
                let lt = tape.leaf(self.soft_t.clone());
                let rs = tape.gradient_reversal(zs, self.strength)?;
                let rt = tape.gradient_reversal(zt, self.strength)?;
                let os = disc.forward(&mut tape, &dv, rs)?;
                let ot = disc.forward(&mut tape, &dv, rt)?;
                loss_tsf(&mut tape, os, ot, ls, lt, &self.weights)?
            }
            GraphKind::Conditional => {
                let gt = g.forward(&mut tape, &gv, zt)?;
                let fs = tape.row_outer(gs, zs)?;
                let ft = tape.row_outer(gt, zt)?;
                let rs = tape.gradient_reversal(fs, self.strength)?;
                let rt = tape.gradient_reversal(ft, self.strength)?;
                let os = disc.forward(&mut tape, &dv, rs)?;
                let ot = disc.forward(&mut tape, &dv, rt)?;
                loss_inv_weighted(&mut tape, os, ot, None)?
            }
        };
        let loss = tape.add(cls, extra)?;
        Ok(Built {
            tape,
            cls,
            extra: Some(extra),
            loss,
            params,
        })
    }
}

pub struct Built {
    pub tape: Tape,
    pub cls: Var,
    pub extra: Option<Var>,
    pub loss: Var,
    pub params: Vec<Var>,
}

impl Built {
    fn parts(&self) -> (f64, f64) {
        let extra = self.extra.map_or(0.0, |e| self.tape.value(e).item());
        (self.tape.value(self.cls).item(), extra)
    }
}

/// Relative error with the denominator floored at [`REL_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CaseResult {
    pub checked: usize,
    /// Entries whose finite-difference stencil crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Compare every parameter gradient with central differences. Behind a
/// reversal of strength `s` the tape reports `dL_c - s dL_extra`, so the two
/// terms are differenced separately and recombined the same way.
pub fn check_case(case: &GraphCase) -> Result<CaseResult> {
    compare(case, true)
}

fn compare(case: &GraphCase, honor_reversal: bool) -> Result<CaseResult> {
    let mut built = case.build()?;
    built.tape.backward(built.loss)?;
    let analytic: Vec<Array> = built
        .params
        .iter()
        .map(|&p| built.tape.grad(p).clone())
        .collect();
    let base_sig = built.tape.kink_signature();
    let owner: Vec<usize> = case
        .nets
        .iter()
        .enumerate()
        .flat_map(|(i, n)| std::iter::repeat_n(i, n.params().len()))
        .collect();

    let mut out = CaseResult::default();
    let mut probe = case.clone();
    for (pi, grad) in analytic.iter().enumerate() {
        let factor = if honor_reversal && case.reversed(owner[pi]) {
            -case.strength
        } else {
            1.0
        };
        for k in 0..grad.len() {
            let orig = probe.params()[pi].data()[k];
            let mut eval = |delta: f64| -> Result<((f64, f64), Vec<bool>)> {
                probe.params_mut()[pi].data_mut()[k] = orig + delta;
                let b = probe.build()?;
                Ok((b.parts(), b.tape.kink_signature()))
            };
            let ((cls_up, extra_up), sig_up) = eval(FD_STEP)?;
            let ((cls_down, extra_down), sig_down) = eval(-FD_STEP)?;
            probe.params_mut()[pi].data_mut()[k] = orig;
            if sig_up != base_sig || sig_down != base_sig {
                out.skipped += 1;
                continue;
            }
            let h2 = 2.0 * FD_STEP;
            let numeric = (cls_up - cls_down) / h2 + factor * (extra_up - extra_down) / h2;
            out.checked += 1;
            out.max_rel_error = out
                .max_rel_error
                .max(relative_error(grad.data()[k], numeric));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub graphs: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

pub fn grad_check(seed: u64, graphs: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        seed,
        graphs,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
    };
    for i in 0..graphs {
        let case = GraphCase::random(KINDS[i % KINDS.len()], &mut rng)?;
        let r = check_case(&case)?;
        report.checked += r.checked;
        report.skipped += r.skipped;
        report.max_rel_error = report.max_rel_error.max(r.max_rel_error);
    }
    Ok(report)
}
