//! Adversarial training loop, baselines, evaluation and run reports.
//!
//! Every iteration updates, in order, the domain discriminator `d`, the
//! method's adversary (label-domain discriminator for RUDA, conditional
//! discriminator for CDAN), the feature map `phi` and the classifier `g`.
//! Each update uses a fresh tape over the current parameters.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Array, Tape, Var};
use crate::datasets::{
    gen_two_moons, idx_to_dataset, read_idx, subsample_label_shift, BatchIterator, Domain,
    DomainDataset, ShiftSpec, TwoMoonsSpec,
};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::losses::{
    loss_cls, loss_inv_weighted, loss_tsf, BatchLosses, WeightKind, WeightingMode,
};
use crate::nn::{init_mlp, sgd_step, Head, Mlp, MlpSpec, MlpVars, OptimizerState, ScheduleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    SourceOnly,
    #[serde(rename = "DANN")]
    Dann,
    #[serde(rename = "CDAN")]
    Cdan,
    #[serde(rename = "CDAN_W")]
    CdanW,
    #[serde(rename = "RUDA")]
    Ruda,
    #[serde(rename = "RUDA_W")]
    RudaW,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::SourceOnly,
        MethodKind::Dann,
        MethodKind::Cdan,
        MethodKind::CdanW,
        MethodKind::Ruda,
        MethodKind::RudaW,
    ];

    pub fn is_weighted(self) -> bool {
        matches!(self, MethodKind::CdanW | MethodKind::RudaW)
    }

    /// Trains the marginal discriminator `d`, either as the adversary or as
    /// the weight estimator.
    pub fn uses_domain_discriminator(self) -> bool {
        !matches!(self, MethodKind::SourceOnly | MethodKind::Cdan)
    }

    pub fn is_cdan(self) -> bool {
        matches!(self, MethodKind::Cdan | MethodKind::CdanW)
    }

    pub fn is_ruda(self) -> bool {
        matches!(self, MethodKind::Ruda | MethodKind::RudaW)
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::SourceOnly => "SourceOnly",
            MethodKind::Dann => "DANN",
            MethodKind::Cdan => "CDAN",
            MethodKind::CdanW => "CDAN_W",
            MethodKind::Ruda => "RUDA",
            MethodKind::RudaW => "RUDA_W",
        }
    }
}

/// Where the two domains come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    TwoMoons(TwoMoonsSpec),
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        target_labels: PathBuf,
        num_classes: usize,
        #[serde(default = "default_pool")]
        pool: usize,
        /// Seeds the label-shift subsampling.
        #[serde(default)]
        seed: u64,
    },
}

fn default_pool() -> usize {
    1
}

/// Hidden widths of every network. The feature map ends in a linear layer of
/// width `feature_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            feature_hidden: vec![32],
            feature_dim: 32,
            classifier_hidden: vec![],
            discriminator_hidden: vec![32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: MethodKind,
    pub data: DataSpec,
    /// Subsample source classes after loading.
    #[serde(default)]
    pub source_shift: Option<ShiftSpec>,
    #[serde(default)]
    pub architecture: Architecture,
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub schedules: ScheduleSet,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
    /// Also push the marginal discriminator's reversed loss into `phi` for
    /// the RUDA methods.
    #[serde(default)]
    pub reverse_inv_into_phi: bool,
    #[serde(default)]
    pub exec: Exec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_batch() -> usize {
    64
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_log_interval() -> usize {
    50
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Contract("iterations must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Contract("seeds must be non-empty".into()));
        }
        if self.log_interval == 0 || self.batch_size == 0 {
            return Err(Error::Contract(
                "log_interval and batch_size must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Contract(
                "momentum must be in [0, 1), weight_decay >= 0".into(),
            ));
        }
        if self.architecture.feature_dim == 0 {
            return Err(Error::Contract("feature_dim must be >= 1".into()));
        }
        self.schedules.validate()
    }

    /// SHA-256 of the canonical JSON serialization, ignoring the fields that
    /// cannot change results (`exec`, `output`).
    pub fn hash(&self) -> String {
        let mut key = self.clone();
        key.exec = Exec::default();
        key.output = None;
        let canonical = serde_json::to_vec(&key).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Build both domains of `cfg`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(DomainDataset, DomainDataset)> {
    build_domains(&cfg.data, cfg.source_shift.as_ref())
}

/// Build both domains, then subsample the source if `shift` is given.
pub fn build_domains(
    data: &DataSpec,
    shift: Option<&ShiftSpec>,
) -> Result<(DomainDataset, DomainDataset)> {
    let (src, tgt, shift_seed) = match data {
        DataSpec::TwoMoons(spec) => {
            let (s, t) = gen_two_moons(spec)?;
            (s, t, spec.seed)
        }
        DataSpec::Idx {
            source_images,
            source_labels,
            target_images,
            target_labels,
            num_classes,
            pool,
            seed,
        } => {
            let load = |img: &Path, lab: &Path, domain| {
                idx_to_dataset(
                    &read_idx(img)?,
                    &read_idx(lab)?,
                    *num_classes,
                    *pool,
                    domain,
                    &format!("idx {}", img.display()),
                )
            };
            (
                load(source_images, source_labels, Domain::Source)?,
                load(target_images, target_labels, Domain::Target)?,
                *seed,
            )
        }
    };
    let src = match shift {
        Some(shift) => subsample_label_shift(&src, shift, shift_seed)?,
        None => src,
    };
    Ok((src, tgt))
}

/// Independent sub-seed `tag` of a run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

const TAG_PHI: u64 = 1;
const TAG_G: u64 = 2;
const TAG_D: u64 = 3;
const TAG_DD: u64 = 4;
const TAG_CDAN: u64 = 5;
const TAG_SRC_BATCH: u64 = 6;
const TAG_TGT_BATCH: u64 = 7;

/// A network with its momentum buffers.
#[derive(Clone, Debug)]
struct Trained {
    net: Mlp,
    opt: OptimizerState,
}

impl Trained {
    fn new(widths: Vec<usize>, head: Head, seed: u64, cfg: &ExperimentConfig) -> Result<Self> {
        let net = init_mlp(&MlpSpec::new(widths, head, seed)?)?;
        let opt = OptimizerState::for_mlp(&net, cfg.schedules.lr0, cfg.momentum, cfg.weight_decay);
        Ok(Trained { net, opt })
    }

    fn step(&mut self, tape: &Tape, vars: &MlpVars, lr: f64) -> Result<()> {
        let grads: Vec<&Array> = vars.params().iter().map(|&v| tape.grad(v)).collect();
        let mut params = self.net.params_mut();
        sgd_step(&mut self.opt, &mut params, &grads, lr)
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Feature map and classifier after training.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub phi: Mlp,
    pub g: Mlp,
}

impl Model {
    pub fn predict(&self, x: &Array) -> Result<Array> {
        self.g.predict(&self.phi.predict(x)?)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose predicted class matches the label.
pub fn evaluate(model: &Model, ds: &DomainDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::DegenerateDataset(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let probs = model.predict(&ds.features)?;
    let hits = (0..ds.len())
        .filter(|&i| argmax(probs.row(i)) == ds.labels[i])
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

/// One logged step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub tau: f64,
    pub loss_c: f64,
    pub loss_inv: f64,
    pub loss_tsf: f64,
    pub w_mean: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub acc_src: f64,
    pub acc_tgt: f64,
}

pub const CSV_HEADER: [&str; 11] = [
    "iteration",
    "lambda",
    "tau",
    "loss_c",
    "loss_inv",
    "loss_tsf",
    "w_mean",
    "w_min",
    "w_max",
    "acc_src",
    "acc_tgt",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFinal {
    pub seed: u64,
    pub acc_src: f64,
    pub acc_tgt: f64,
}

/// Outcome of a single seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub final_acc: SeedFinal,
    pub model: Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub method: MethodKind,
    pub per_seed: Vec<SeedFinal>,
    /// Mean and sample standard deviation of final target accuracy.
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    /// Records of every seed, concatenated in seed order.
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

struct Batch {
    xs: Var,
    xt: Var,
}

fn bind_inputs(tape: &mut Tape, xs: &Array, xt: &Array) -> Batch {
    Batch {
        xs: tape.leaf(xs.clone()),
        xt: tape.leaf(xt.clone()),
    }
}

/// Train one seed on prepared data.
pub fn train_seed(
    cfg: &ExperimentConfig,
    src: &DomainDataset,
    tgt: &DomainDataset,
    seed: u64,
) -> Result<SeedRun> {
    cfg.validate()?;
    if src.dim() != tgt.dim() || src.num_classes != tgt.num_classes {
        return Err(Error::Dimension(format!(
            "source is {}-d with {} classes, target {}-d with {}",
            src.dim(),
            src.num_classes,
            tgt.dim(),
            tgt.num_classes
        )));
    }
    let method = cfg.method;
    let arch = &cfg.architecture;
    let (classes, zdim) = (src.num_classes, arch.feature_dim);
    let mut phi = Trained::new(
        widths(src.dim(), &arch.feature_hidden, zdim),
        Head::Linear,
        derive_seed(seed, TAG_PHI),
        cfg,
    )?;
    let mut g = Trained::new(
        widths(zdim, &arch.classifier_hidden, classes),
        Head::Softmax,
        derive_seed(seed, TAG_G),
        cfg,
    )?;
    let disc = |input, out, tag| {
        Trained::new(
            widths(input, &arch.discriminator_hidden, out),
            Head::Sigmoid,
            derive_seed(seed, tag),
            cfg,
        )
    };
    let mut d = if method.uses_domain_discriminator() {
        Some(disc(zdim, 1, TAG_D)?)
    } else {
        None
    };
    let mut dd = if method.is_ruda() {
        Some(disc(zdim, classes, TAG_DD)?)
    } else {
        None
    };
    let mut dc = if method.is_cdan() {
        Some(disc(classes * zdim, 1, TAG_CDAN)?)
    } else {
        None
    };

    let mut src_batches = BatchIterator::new(
        src.len(),
        cfg.batch_size,
        derive_seed(seed, TAG_SRC_BATCH),
        None,
    )?;
    let mut tgt_batches = BatchIterator::new(
        tgt.len(),
        cfg.batch_size,
        derive_seed(seed, TAG_TGT_BATCH),
        None,
    )?;
    let mut records = Vec::with_capacity(cfg.iterations / cfg.log_interval);
    let sched = &cfg.schedules;
    let total = cfg.iterations as f64;

    for t in 1..=cfg.iterations {
        let p = t as f64 / total;
        let (lambda, tau, lr) = (sched.lambda(p)?, sched.tau(p)?, sched.lr(p));
        let (xs, ys) = src.batch(&src_batches.next().expect("endless batches"));
        let (xt, _) = tgt.batch(&tgt_batches.next().expect("endless batches"));
        let mut losses = BatchLosses::default();

        // representations under the current phi, as constants
        let zs = phi.net.predict(&xs)?;
        let zt = phi.net.predict(&xt)?;

        // 1. marginal discriminator on L_INV
        if let Some(d) = d.as_mut() {
            let mut tape = Tape::new();
            let vars = d.net.bind(&mut tape);
            let (s, t_) = (tape.leaf(zs.clone()), tape.leaf(zt.clone()));
            let ds = d.net.forward(&mut tape, &vars, s)?;
            let dt = d.net.forward(&mut tape, &vars, t_)?;
            let loss = loss_inv_weighted(&mut tape, ds, dt, None)?;
            losses.invariance = tape.value(loss).item();
            tape.backward(loss)?;
            d.step(&tape, &vars, lr)?;
        }

        // importance weights from the updated d
        let weights = match (&d, method.is_weighted()) {
            (Some(d), true) => {
                let mut tape = Tape::new();
                let vars = d.net.bind(&mut tape);
                let s = tape.leaf(zs.clone());
                let logits = d.net.forward_logits(&mut tape, &vars, s)?;
                let mode = WeightingMode {
                    kind: WeightKind::Relaxed { tau },
                    renormalize: true,
                };
                mode.weights(tape.value(logits).data())?
            }
            _ => vec![1.0; zs.rows()],
        };
        losses.set_weights(&weights);

        let gs = g.net.predict(&zs)?;
        let gt = g.net.predict(&zt)?;

        // 2. the method's own adversary
        if let Some(dd) = dd.as_mut() {
            let mut tape = Tape::new();
            let vars = dd.net.bind(&mut tape);
            let (s, t_) = (tape.leaf(zs.clone()), tape.leaf(zt.clone()));
            let (gsv, gtv) = (tape.leaf(gs.clone()), tape.leaf(gt.clone()));
            let out_s = dd.net.forward(&mut tape, &vars, s)?;
            let out_t = dd.net.forward(&mut tape, &vars, t_)?;
            let loss = loss_tsf(&mut tape, out_s, out_t, gsv, gtv, &weights)?;
            losses.transferability = tape.value(loss).item();
            tape.backward(loss)?;
            dd.step(&tape, &vars, lr)?;
        }
        if let Some(dc) = dc.as_mut() {
            let mut tape = Tape::new();
            let vars = dc.net.bind(&mut tape);
            let hs = tape.leaf(gs.clone());
            let s = tape.leaf(zs.clone());
            let fs = tape.row_outer(hs, s)?;
            let ht = tape.leaf(gt.clone());
            let t_ = tape.leaf(zt.clone());
            let ft = tape.row_outer(ht, t_)?;
            let out_s = dc.net.forward(&mut tape, &vars, fs)?;
            let out_t = dc.net.forward(&mut tape, &vars, ft)?;
            let loss = loss_inv_weighted(&mut tape, out_s, out_t, Some(&weights))?;
            losses.invariance = tape.value(loss).item();
            tape.backward(loss)?;
            dc.step(&tape, &vars, lr)?;
        }

        // 3. feature map: L_c plus the reversed adversarial loss
        {
            let mut tape = Tape::new();
            let phi_vars = phi.net.bind(&mut tape);
            let g_vars = g.net.bind(&mut tape);
            let b = bind_inputs(&mut tape, &xs, &xt);
            let zs_v = phi.net.forward(&mut tape, &phi_vars, b.xs)?;
            let gs_v = g.net.forward(&mut tape, &g_vars, zs_v)?;
            let cls = loss_cls(&mut tape, gs_v, &ys, &weights)?;
            losses.classification = tape.value(cls).item();
            let mut total_loss = cls;
            if method != MethodKind::SourceOnly {
                let zt_v = phi.net.forward(&mut tape, &phi_vars, b.xt)?;
                let rs = tape.gradient_reversal(zs_v, lambda)?;
                let rt = tape.gradient_reversal(zt_v, lambda)?;
                let mut adversarial = Vec::new();
                if method == MethodKind::Dann || (method.is_ruda() && cfg.reverse_inv_into_phi) {
                    let d = d.as_ref().expect("d exists for DANN and RUDA");
                    let vars = d.net.bind(&mut tape);
                    let os = d.net.forward(&mut tape, &vars, rs)?;
                    let ot = d.net.forward(&mut tape, &vars, rt)?;
                    adversarial.push(loss_inv_weighted(&mut tape, os, ot, None)?);
                }
                if let Some(dd) = &dd {
                    let gt_v = g.net.forward(&mut tape, &g_vars, zt_v)?;
                    let vars = dd.net.bind(&mut tape);
                    let os = dd.net.forward(&mut tape, &vars, rs)?;
                    let ot = dd.net.forward(&mut tape, &vars, rt)?;
                    adversarial.push(loss_tsf(&mut tape, os, ot, gs_v, gt_v, &weights)?);
                }
                if let Some(dc) = &dc {
                    let gt_v = g.net.forward(&mut tape, &g_vars, zt_v)?;
                    let hs = tape.detach(gs_v);
                    let ht = tape.detach(gt_v);
                    let fs = tape.row_outer(hs, rs)?;
                    let ft = tape.row_outer(ht, rt)?;
                    let vars = dc.net.bind(&mut tape);
                    let os = dc.net.forward(&mut tape, &vars, fs)?;
                    let ot = dc.net.forward(&mut tape, &vars, ft)?;
                    adversarial.push(loss_inv_weighted(&mut tape, os, ot, Some(&weights))?);
                }
                for a in adversarial {
                    total_loss = tape.add(total_loss, a)?;
                }
            }
            if !losses.is_finite() || !tape.value(total_loss).item().is_finite() {
                return Err(non_finite(&losses, t, seed));
            }
            tape.backward(total_loss)?;
            phi.step(&tape, &phi_vars, lr)?;
        }

        // 4. classifier on L_c with the updated features
        {
            let zs_new = phi.net.predict(&xs)?;
            let mut tape = Tape::new();
            let vars = g.net.bind(&mut tape);
            let z = tape.leaf(zs_new);
            let out = g.net.forward(&mut tape, &vars, z)?;
            let cls = loss_cls(&mut tape, out, &ys, &weights)?;
            tape.backward(cls)?;
            g.step(&tape, &vars, lr)?;
        }

        if t % cfg.log_interval == 0 {
            let model = Model {
                phi: phi.net.clone(),
                g: g.net.clone(),
            };
            records.push(StepRecord {
                iteration: t,
                lambda,
                tau,
                loss_c: losses.classification,
                loss_inv: losses.invariance,
                loss_tsf: losses.transferability,
                w_mean: losses.weight_mean,
                w_min: losses.weight_min,
                w_max: losses.weight_max,
                acc_src: evaluate(&model, src)?,
                acc_tgt: evaluate(&model, tgt)?,
            });
        }
    }

    let model = Model {
        phi: phi.net,
        g: g.net,
    };
    let final_acc = SeedFinal {
        seed,
        acc_src: evaluate(&model, src)?,
        acc_tgt: evaluate(&model, tgt)?,
    };
    Ok(SeedRun {
        seed,
        records,
        final_acc,
        model,
    })
}

fn non_finite(losses: &BatchLosses, iteration: usize, seed: u64) -> Error {
    let loss = if !losses.classification.is_finite() {
        "classification"
    } else if !losses.invariance.is_finite() {
        "invariance"
    } else if !losses.transferability.is_finite() {
        "transferability"
    } else if !losses.weight_mean.is_finite() {
        "weights"
    } else {
        "feature objective"
    };
    Error::NonFiniteLoss {
        loss,
        iteration,
        seed,
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// All seeds of `cfg`, run per `cfg.exec`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let (src, tgt) = load_data(cfg)?;
    let runs = map_indexed(cfg.seeds.len(), cfg.exec, |i| {
        train_seed(cfg, &src, &tgt, cfg.seeds[i])
    });
    let runs = runs.into_iter().collect::<Result<Vec<SeedRun>>>()?;
    Ok(assemble(cfg, runs))
}

fn assemble(cfg: &ExperimentConfig, runs: Vec<SeedRun>) -> RunReport {
    let finals: Vec<f64> = runs.iter().map(|r| r.final_acc.acc_tgt).collect();
    let (mean, sd) = mean_sd(&finals);
    let per_seed = runs.iter().map(|r| r.final_acc.clone()).collect();
    RunReport {
        records: runs.into_iter().flat_map(|r| r.records).collect(),
        summary: Summary {
            config_hash: cfg.hash(),
            method: cfg.method,
            per_seed,
            mean,
            sd,
        },
    }
}

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Write `records.csv` and `summary.json` into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(RECORDS_FILE);
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &report.records {
        w.serialize(r)?;
    }
    if report.records.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let json_path = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&report.summary)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

pub fn read_records(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<StepRecord>, _>>()?)
}
