//! Exact bound terms on finite representation spaces.
//!
//! A [`DiscreteInstance`] holds source and target joint tables `p(y, z)` over
//! `C` classes and `m` representation cells. With critics bounded by
//! `b_scalar` (scalar family) and `b_vec` (per coordinate, vector family), every
//! supremum below is a linear program over a box, so its optimum sits at a
//! sign pattern and has an L1 closed form.

mod checks;
pub mod sample;
pub mod sweep;

pub use checks::*;

use serde::{Deserialize, Serialize};

use crate::datasets::Domain;
use crate::error::{Error, Result};

/// Tolerance for every exactness claim in this module.
pub const EXACT_TOL: f64 = 1e-12;

/// Source and target joint tables, class-major: entry `c * m + z`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteInstance {
    classes: usize,
    cells: usize,
    source: Vec<f64>,
    target: Vec<f64>,
}

/// JSON form: `{"p_s": [[..m..] x C], "p_t": [[..m..] x C]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceTables {
    pub p_s: Vec<Vec<f64>>,
    pub p_t: Vec<Vec<f64>>,
}

fn flatten_table(rows: &[Vec<f64>], name: &str) -> Result<(usize, usize, Vec<f64>)> {
    let c = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if c == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension(format!(
            "{name} must be a non-empty C x m table"
        )));
    }
    Ok((c, m, rows.concat()))
}

impl DiscreteInstance {
    pub fn new(classes: usize, cells: usize, source: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        if classes == 0 || cells == 0 {
            return Err(Error::Dimension(
                "need at least one class and one cell".into(),
            ));
        }
        for (name, t) in [("p_s", &source), ("p_t", &target)] {
            if t.len() != classes * cells {
                return Err(Error::Dimension(format!(
                    "{name} has {} entries, expected {}",
                    t.len(),
                    classes * cells
                )));
            }
            if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Contract(format!(
                    "{name} has a negative or non-finite entry"
                )));
            }
            let total: f64 = t.iter().sum();
            if (total - 1.0).abs() > EXACT_TOL {
                return Err(Error::Contract(format!("{name} sums to {total}, not 1")));
            }
        }
        Ok(DiscreteInstance {
            classes,
            cells,
            source,
            target,
        })
    }

    pub fn from_tables(tables: &InstanceTables) -> Result<Self> {
        let (c, m, s) = flatten_table(&tables.p_s, "p_s")?;
        let (ct, mt, t) = flatten_table(&tables.p_t, "p_t")?;
        if (c, m) != (ct, mt) {
            return Err(Error::Dimension("p_s and p_t shapes differ".into()));
        }
        DiscreteInstance::new(c, m, s, t)
    }

    pub fn tables(&self) -> InstanceTables {
        let rows = |t: &[f64]| t.chunks(self.cells).map(<[f64]>::to_vec).collect();
        InstanceTables {
            p_s: rows(&self.source),
            p_t: rows(&self.target),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn joint(&self, domain: Domain) -> &[f64] {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    pub fn p(&self, domain: Domain, class: usize, cell: usize) -> f64 {
        self.joint(domain)[class * self.cells + cell]
    }

    /// Representation marginal `p_D(z)`.
    pub fn marginal(&self, domain: Domain) -> Vec<f64> {
        (0..self.cells)
            .map(|z| (0..self.classes).map(|c| self.p(domain, c, z)).sum())
            .collect()
    }

    /// Label marginal `p_D(y)`.
    pub fn label_marginal(&self, domain: Domain) -> Vec<f64> {
        self.joint(domain)
            .chunks(self.cells)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Push both tables through a cell map `z -> psi[z]` onto `cells` cells.
    pub fn coarsen(&self, psi: &[usize], cells: usize) -> Result<DiscreteInstance> {
        check_partition(psi, self.cells, cells)?;
        let push = |t: &[f64]| {
            let mut out = vec![0.0; self.classes * cells];
            for c in 0..self.classes {
                for z in 0..self.cells {
                    out[c * cells + psi[z]] += t[c * self.cells + z];
                }
            }
            out
        };
        Ok(DiscreteInstance {
            classes: self.classes,
            cells,
            source: push(&self.source),
            target: push(&self.target),
        })
    }
}

pub(crate) fn check_partition(psi: &[usize], fine: usize, coarse: usize) -> Result<()> {
    if psi.len() != fine {
        return Err(Error::Dimension(format!(
            "partition has {} entries for {fine} cells",
            psi.len()
        )));
    }
    let mut hit = vec![false; coarse];
    for &k in psi {
        if k >= coarse {
            return Err(Error::Contract(format!("partition cell {k} >= {coarse}")));
        }
        hit[k] = true;
    }
    if coarse > fine || hit.contains(&false) {
        return Err(Error::Contract(
            "partition must be onto a set no larger than Z".into(),
        ));
    }
    Ok(())
}

/// Critic bounds: scalar critics map into `[-b_scalar, b_scalar]`, vector
/// critics into `[-b_vec, b_vec]^C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticFamily {
    pub b_scalar: f64,
    pub b_vec: f64,
}

impl CriticFamily {
    pub fn new(b_scalar: f64, b_vec: f64) -> Result<Self> {
        if !(b_scalar > 0.0 && b_vec > 0.0) {
            return Err(Error::Contract("critic bounds must be > 0".into()));
        }
        Ok(CriticFamily { b_scalar, b_vec })
    }

    /// `b_vec = 1`, `b_scalar = C`: squared norms of vector critics are then
    /// scalar critics.
    pub fn for_classes(classes: usize) -> Self {
        CriticFamily {
            b_scalar: classes as f64,
            b_vec: 1.0,
        }
    }

    pub fn unit() -> Self {
        CriticFamily {
            b_scalar: 1.0,
            b_vec: 1.0,
        }
    }
}

/// Importance weights over cells, normalized under the source marginal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTable(Vec<f64>);

impl WeightTable {
    pub fn new(inst: &DiscreteInstance, w: Vec<f64>) -> Result<Self> {
        if w.len() != inst.cells {
            return Err(Error::Dimension(format!(
                "{} weights for {} cells",
                w.len(),
                inst.cells
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Contract("weights must be finite and >= 0".into()));
        }
        let mean: f64 = w
            .iter()
            .zip(inst.marginal(Domain::Source))
            .map(|(a, b)| a * b)
            .sum();
        if (mean - 1.0).abs() > EXACT_TOL {
            return Err(Error::Contract(format!(
                "source expectation of weights is {mean}"
            )));
        }
        Ok(WeightTable(w))
    }

    pub fn uniform(inst: &DiscreteInstance) -> Self {
        WeightTable(vec![1.0; inst.cells])
    }

    /// Rescale positive weights so their source expectation is one.
    pub fn normalized(inst: &DiscreteInstance, raw: Vec<f64>) -> Result<Self> {
        let mean: f64 = raw
            .iter()
            .zip(inst.marginal(Domain::Source))
            .map(|(a, b)| a * b)
            .sum();
        if !(mean > 0.0) {
            return Err(Error::Contract(
                "weights vanish on the source support".into(),
            ));
        }
        WeightTable::new(inst, raw.iter().map(|w| w / mean).collect())
    }

    /// Density ratio `p_T(z) / p_S(z)`; zero off both supports.
    pub fn optimal(inst: &DiscreteInstance) -> Result<Self> {
        let ps = inst.marginal(Domain::Source);
        let pt = inst.marginal(Domain::Target);
        let w = ps
            .iter()
            .zip(&pt)
            .enumerate()
            .map(|(z, (&s, &t))| match (s > 0.0, t > 0.0) {
                (true, _) => Ok(t / s),
                (false, false) => Ok(0.0),
                (false, true) => Err(Error::UnboundedWeight(format!(
                    "cell {z} has target mass {t} but no source mass"
                ))),
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(WeightTable(w))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A `C x m` table whose columns are probability vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    classes: usize,
    cells: usize,
    table: Vec<f64>,
}

impl Predictions {
    pub fn new(classes: usize, cells: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != classes * cells {
            return Err(Error::Dimension(format!(
                "{} entries for a {classes} x {cells} table",
                table.len()
            )));
        }
        if table.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Contract(
                "predictions must be finite and >= 0".into(),
            ));
        }
        for z in 0..cells {
            let s: f64 = (0..classes).map(|c| table[c * cells + z]).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!("column {z} sums to {s}")));
            }
        }
        Ok(Predictions {
            classes,
            cells,
            table,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let (c, m, t) = flatten_table(rows, "predictions")?;
        Predictions::new(c, m, t)
    }

    pub fn uniform(classes: usize, cells: usize) -> Self {
        Predictions {
            classes,
            cells,
            table: vec![1.0 / classes as f64; classes * cells],
        }
    }

    /// Deterministic classifier `z -> class[z]`.
    pub fn one_hot(classes: usize, class_of: &[usize]) -> Result<Self> {
        let cells = class_of.len();
        let mut table = vec![0.0; classes * cells];
        for (z, &c) in class_of.iter().enumerate() {
            if c >= classes {
                return Err(Error::Contract(format!("class {c} >= {classes}")));
            }
            table[c * cells + z] = 1.0;
        }
        Ok(Predictions {
            classes,
            cells,
            table,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn get(&self, class: usize, cell: usize) -> f64 {
        self.table[class * self.cells + cell]
    }

    pub fn column(&self, cell: usize) -> Vec<f64> {
        (0..self.classes).map(|c| self.get(c, cell)).collect()
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    fn check_shape(&self, inst: &DiscreteInstance) -> Result<()> {
        if (self.classes, self.cells) != (inst.classes, inst.cells) {
            return Err(Error::Dimension(format!(
                "predictions are {} x {}, instance is {} x {}",
                self.classes, self.cells, inst.classes, inst.cells
            )));
        }
        Ok(())
    }
}

/// Conditional label table `E_D[Y | Z = z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Labelling {
    pub table: Predictions,
    /// Cells without mass in the domain; their column is uniform.
    pub zero_mass: Vec<bool>,
}

pub fn labelling_function(inst: &DiscreteInstance, domain: Domain) -> Labelling {
    weighted_labelling(inst, domain, None)
}

/// Labelling of `w . S` (or of the plain domain when `w` is `None`). Since `w`
/// depends on `z` only, it cancels wherever `w(z) p(z) > 0`.
fn weighted_labelling(
    inst: &DiscreteInstance,
    domain: Domain,
    w: Option<&WeightTable>,
) -> Labelling {
    let (c_n, m) = (inst.classes, inst.cells);
    let marg = inst.marginal(domain);
    let mut table = vec![0.0; c_n * m];
    let mut zero_mass = vec![false; m];
    for z in 0..m {
        let scale = w.map_or(1.0, |w| w.0[z]);
        if marg[z] * scale > 0.0 {
            for c in 0..c_n {
                table[c * m + z] = inst.p(domain, c, z) / marg[z];
            }
        } else {
            zero_mass[z] = true;
            for c in 0..c_n {
                table[c * m + z] = 1.0 / c_n as f64;
            }
        }
    }
    Labelling {
        table: Predictions {
            classes: c_n,
            cells: m,
            table,
        },
        zero_mass,
    }
}

/// Bayes predictor of the weighted source `w . S`.
pub fn weighted_source_bayes(inst: &DiscreteInstance, w: &WeightTable) -> Predictions {
    weighted_labelling(inst, Domain::Source, Some(w)).table
}

fn check_weights(inst: &DiscreteInstance, w: &WeightTable) -> Result<()> {
    if w.0.len() != inst.cells {
        return Err(Error::Dimension(format!(
            "{} weights for {} cells",
            w.0.len(),
            inst.cells
        )));
    }
    Ok(())
}

/// `sup_f E_T[f] - E_S[f]` = `b_scalar * sum_z |p_T(z) - p_S(z)|`.
pub fn inv_exact(inst: &DiscreteInstance, fam: &CriticFamily) -> f64 {
    inv_weighted_exact(inst, &WeightTable::uniform(inst), fam).expect("uniform weights fit")
}

/// `sup_f E_T[Y.f] - E_S[Y.f]` = `b_vec * sum_{c,z} |p_T(c,z) - p_S(c,z)|`.
pub fn tsf_exact(inst: &DiscreteInstance, fam: &CriticFamily) -> f64 {
    tsf_weighted_exact(inst, &WeightTable::uniform(inst), fam).expect("uniform weights fit")
}

/// Invariance error against the weighted source `w(z) p_S(z)`.
pub fn inv_weighted_exact(
    inst: &DiscreteInstance,
    w: &WeightTable,
    fam: &CriticFamily,
) -> Result<f64> {
    check_weights(inst, w)?;
    let ps = inst.marginal(Domain::Source);
    let pt = inst.marginal(Domain::Target);
    let l1: f64 = (0..inst.cells)
        .map(|z| (pt[z] - w.0[z] * ps[z]).abs())
        .sum();
    Ok(fam.b_scalar * l1)
}

/// Transferability error against the weighted source joint `w(z) p_S(y, z)`.
pub fn tsf_weighted_exact(
    inst: &DiscreteInstance,
    w: &WeightTable,
    fam: &CriticFamily,
) -> Result<f64> {
    check_weights(inst, w)?;
    let m = inst.cells;
    let l1: f64 = inst
        .target
        .iter()
        .zip(&inst.source)
        .enumerate()
        .map(|(i, (t, s))| (t - w.0[i % m] * s).abs())
        .sum();
    Ok(fam.b_vec * l1)
}

/// Transferability with target labels replaced by predictions `g`:
/// `b_vec * sum_{c,z} |p_T(z) g_c(z) - w(z) p_S(c,z)|`.
pub fn tsf_hat_exact(
    inst: &DiscreteInstance,
    w: &WeightTable,
    g: &Predictions,
    fam: &CriticFamily,
) -> Result<f64> {
    check_weights(inst, w)?;
    g.check_shape(inst)?;
    let pt = inst.marginal(Domain::Target);
    let m = inst.cells;
    let mut l1 = 0.0;
    for c in 0..inst.classes {
        for z in 0..m {
            l1 += (pt[z] * g.get(c, z) - w.0[z] * inst.p(Domain::Source, c, z)).abs();
        }
    }
    Ok(fam.b_vec * l1)
}

/// `sup_{f,f'} |E_S ||f - f'||^2 - E_T ||f - f'||^2|` over vector critics.
/// The squared distance ranges over `[0, 4 C b_vec^2]` independently per cell,
/// so the supremum is `4 C b_vec^2 * TV(p_S(z), p_T(z)) = 2 C b_vec^2 * L1`.
pub fn d_fc_exact(inst: &DiscreteInstance, fam: &CriticFamily) -> f64 {
    let ps = inst.marginal(Domain::Source);
    let pt = inst.marginal(Domain::Target);
    let (mut pos, mut neg) = (0.0, 0.0);
    for (s, t) in ps.iter().zip(&pt) {
        if s > t {
            pos += s - t;
        } else {
            neg += t - s;
        }
    }
    4.0 * inst.classes as f64 * fam.b_vec * fam.b_vec * pos.max(neg)
}

fn squared_gap(g: &Predictions, z: usize, class: usize) -> f64 {
    (0..g.classes)
        .map(|k| {
            let e = if k == class { 1.0 } else { 0.0 };
            (g.get(k, z) - e).powi(2)
        })
        .sum()
}

/// L2 risk `sum_{c,z} p_D(c,z) ||g(z) - e_c||^2`.
pub fn risk_exact(inst: &DiscreteInstance, domain: Domain, g: &Predictions) -> Result<f64> {
    g.check_shape(inst)?;
    let mut r = 0.0;
    for c in 0..inst.classes {
        for z in 0..inst.cells {
            let p = inst.p(domain, c, z);
            if p > 0.0 {
                r += p * squared_gap(g, z, c);
            }
        }
    }
    Ok(r)
}

/// L2 risk under the weighted source `w(z) p_S(c,z)`.
pub fn weighted_source_risk(
    inst: &DiscreteInstance,
    w: &WeightTable,
    g: &Predictions,
) -> Result<f64> {
    check_weights(inst, w)?;
    g.check_shape(inst)?;
    let mut r = 0.0;
    for c in 0..inst.classes {
        for z in 0..inst.cells {
            let p = w.0[z] * inst.p(Domain::Source, c, z);
            if p > 0.0 {
                r += p * squared_gap(g, z, c);
            }
        }
    }
    Ok(r)
}
