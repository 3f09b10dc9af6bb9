use std::collections::BTreeMap;

use serde::Serialize;

use super::*;

/// Outcome of an inequality check. `holds` is `None` when the check's
/// precondition failed on this instance; `note` says why.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub terms: BTreeMap<String, f64>,
}

impl BoundReport {
    fn checked(lhs: f64, rhs: f64, terms: &[(&str, f64)]) -> Self {
        BoundReport {
            lhs,
            rhs,
            holds: Some(lhs <= rhs + EXACT_TOL),
            note: None,
            terms: terms.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn unmet(reason: String, terms: &[(&str, f64)]) -> Self {
        BoundReport {
            lhs: f64::NAN,
            rhs: f64::NAN,
            holds: None,
            note: Some(reason),
            terms: terms.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// `e_T(g) <= e_S(g) + 6 INV + 2 TSF + e_T(f_T)`.
pub fn verify_bound2(
    inst: &DiscreteInstance,
    g: &Predictions,
    fam: &CriticFamily,
) -> Result<BoundReport> {
    verify_bound3(inst, &WeightTable::uniform(inst), g, fam)
}

/// `e_T(g) <= e_{w.S}(g) + 6 INV(w) + 2 TSF(w) + e_T(f_T)`.
pub fn verify_bound3(
    inst: &DiscreteInstance,
    w: &WeightTable,
    g: &Predictions,
    fam: &CriticFamily,
) -> Result<BoundReport> {
    let target = risk_exact(inst, Domain::Target, g)?;
    let source = weighted_source_risk(inst, w, g)?;
    let inv = inv_weighted_exact(inst, w, fam)?;
    let tsf = tsf_weighted_exact(inst, w, fam)?;
    let ideal = risk_exact(
        inst,
        Domain::Target,
        &labelling_function(inst, Domain::Target).table,
    )?;
    let rhs = source + 6.0 * inv + 2.0 * tsf + ideal;
    Ok(BoundReport::checked(
        target,
        rhs,
        &[
            ("target_risk", target),
            ("source_risk", source),
            ("inv", inv),
            ("tsf", tsf),
            ("ideal_risk", ideal),
        ],
    ))
}

/// `e_T(g~) <= rho (e_{w.S}(g_{w.S}) + 6 INV(w) + 2 TSF^(w, g~) + e_T(f_T))`
/// with `rho = beta / (1 - beta)`, checked only when
/// `e_T(g~) <= beta e_T(g_{w.S})` holds on the instance.
pub fn verify_bound4(
    inst: &DiscreteInstance,
    w: &WeightTable,
    g_tilde: &Predictions,
    beta: f64,
    fam: &CriticFamily,
) -> Result<BoundReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Contract(format!(
            "beta must lie in (0, 1), got {beta}"
        )));
    }
    let bayes = weighted_source_bayes(inst, w);
    let target = risk_exact(inst, Domain::Target, g_tilde)?;
    let bayes_target = risk_exact(inst, Domain::Target, &bayes)?;
    let bayes_source = weighted_source_risk(inst, w, &bayes)?;
    let inv = inv_weighted_exact(inst, w, fam)?;
    let tsf_hat = tsf_hat_exact(inst, w, g_tilde, fam)?;
    let ideal = risk_exact(
        inst,
        Domain::Target,
        &labelling_function(inst, Domain::Target).table,
    )?;
    let rho = beta / (1.0 - beta);
    let terms = [
        ("target_risk", target),
        ("bayes_target_risk", bayes_target),
        ("bayes_source_risk", bayes_source),
        ("inv", inv),
        ("tsf_hat", tsf_hat),
        ("ideal_risk", ideal),
        ("rho", rho),
    ];
    if target > beta * bayes_target + EXACT_TOL {
        return Ok(BoundReport::unmet(
            format!(
                "inductive condition fails: e_T(g~) = {target} > beta * e_T(g_wS) = {}",
                beta * bayes_target
            ),
            &terms,
        ));
    }
    let rhs = rho * (bayes_source + 6.0 * inv + 2.0 * tsf_hat + ideal);
    Ok(BoundReport::checked(target, rhs, &terms))
}

/// Mass-weighted gap between two conditional tables at cell `z`.
fn conditional_gap(a: &Predictions, b: &Predictions, z: usize, mass: f64) -> f64 {
    (0..a.classes())
        .map(|c| mass * (a.get(c, z) - b.get(c, z)).abs())
        .sum()
}

fn labellings_agree(inst: &DiscreteInstance) -> bool {
    let fs = labelling_function(inst, Domain::Source).table;
    let ft = labelling_function(inst, Domain::Target).table;
    let pt = inst.marginal(Domain::Target);
    (0..inst.cells()).all(|z| pt[z] == 0.0 || conditional_gap(&fs, &ft, z, pt[z]) <= EXACT_TOL)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TightnessReport {
    pub inv: f64,
    pub tsf: f64,
    pub max_joint_deviation: f64,
    pub joints_equal: bool,
    pub terms_zero: bool,
    /// `terms_zero == joints_equal`.
    pub consistent: bool,
}

pub fn check_tightness(inst: &DiscreteInstance, fam: &CriticFamily) -> TightnessReport {
    let inv = inv_exact(inst, fam);
    let tsf = tsf_exact(inst, fam);
    let dev = inst
        .joint(Domain::Source)
        .iter()
        .zip(inst.joint(Domain::Target))
        .map(|(s, t)| (s - t).abs())
        .fold(0.0, f64::max);
    let joints_equal = dev <= EXACT_TOL;
    let terms_zero = inv <= EXACT_TOL && tsf <= EXACT_TOL;
    TightnessReport {
        inv,
        tsf,
        max_joint_deviation: dev,
        joints_equal,
        terms_zero,
        consistent: joints_equal == terms_zero,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightedTightnessReport {
    pub weights: Vec<f64>,
    pub inv: f64,
    pub tsf: f64,
    /// `w(z) p_S(z) = p_T(z)` for every cell.
    pub weights_optimal: bool,
    /// `f_S = f_T` wherever the target has mass.
    pub conditionals_equal: bool,
    pub terms_zero: bool,
    /// `terms_zero == (weights_optimal && conditionals_equal)`.
    pub consistent: bool,
}

/// Tightness at the density-ratio weights.
pub fn check_tightness_weighted(
    inst: &DiscreteInstance,
    fam: &CriticFamily,
) -> Result<WeightedTightnessReport> {
    let w = WeightTable::optimal(inst)?;
    check_tightness_at(inst, &w, fam)
}

/// Tightness at arbitrary weights, for probing the converse.
pub fn check_tightness_at(
    inst: &DiscreteInstance,
    w: &WeightTable,
    fam: &CriticFamily,
) -> Result<WeightedTightnessReport> {
    let inv = inv_weighted_exact(inst, w, fam)?;
    let tsf = tsf_weighted_exact(inst, w, fam)?;
    let ps = inst.marginal(Domain::Source);
    let pt = inst.marginal(Domain::Target);
    let weights_optimal =
        (0..inst.cells()).all(|z| (w.values()[z] * ps[z] - pt[z]).abs() <= EXACT_TOL);
    let conditionals_equal = labellings_agree(inst);
    let terms_zero = inv <= EXACT_TOL && tsf <= EXACT_TOL;
    Ok(WeightedTightnessReport {
        weights: w.values().to_vec(),
        inv,
        tsf,
        weights_optimal,
        conditionals_equal,
        terms_zero,
        consistent: terms_zero == (weights_optimal && conditionals_equal),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InductiveWeightsReport {
    /// `p_T(k) / p_S(k)` per coarse cell.
    pub cell_weights: Vec<f64>,
    pub inv: f64,
    pub tsf: f64,
    /// Smallest INV over all nonnegative cell-constant weights.
    pub min_inv: f64,
    pub minimizing_weights: Vec<f64>,
    pub within_cell_equal: bool,
    pub labelling_equal_fine: bool,
    pub labelling_equal_coarse: bool,
    pub conditions_hold: bool,
    pub terms_zero: bool,
    /// `terms_zero == conditions_hold`.
    pub consistent: bool,
}

/// Weighted median minimizing `sum_i mass_i |r_i - x|`.
fn weighted_median(mut pts: Vec<(f64, f64)>) -> f64 {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = pts.iter().map(|p| p.1).sum::<f64>() / 2.0;
    let mut acc = 0.0;
    for (r, mass) in &pts {
        acc += mass;
        if acc >= half {
            return *r;
        }
    }
    pts.last().map_or(0.0, |p| p.0)
}

/// Weights constant on the cells of `psi` (a map from `Z` onto `0..coarse`).
pub fn check_inductive_weights(
    inst: &DiscreteInstance,
    psi: &[usize],
    coarse: usize,
    fam: &CriticFamily,
) -> Result<InductiveWeightsReport> {
    let merged = inst.coarsen(psi, coarse)?;
    let cell_weights = WeightTable::optimal(&merged)?.values().to_vec();
    let lifted = WeightTable::new(inst, psi.iter().map(|&k| cell_weights[k]).collect())?;
    let inv = inv_weighted_exact(inst, &lifted, fam)?;
    let tsf = tsf_weighted_exact(inst, &lifted, fam)?;

    let ps = inst.marginal(Domain::Source);
    let pt = inst.marginal(Domain::Target);
    // per cell, INV is sum_z p_S(z) |p_T(z)/p_S(z) - w| plus unreachable target mass
    let mut min_l1 = 0.0;
    let mut minimizing_weights = vec![0.0; coarse];
    for (k, slot) in minimizing_weights.iter_mut().enumerate() {
        let members = (0..inst.cells()).filter(|&z| psi[z] == k);
        let mut pts = Vec::new();
        for z in members {
            if ps[z] > 0.0 {
                pts.push((pt[z] / ps[z], ps[z]));
            } else {
                min_l1 += pt[z];
            }
        }
        if !pts.is_empty() {
            let x = weighted_median(pts.clone());
            *slot = x;
            min_l1 += pts.iter().map(|(r, m)| m * (r - x).abs()).sum::<f64>();
        }
    }

    let within_cell_equal =
        (0..inst.cells()).all(|z| (cell_weights[psi[z]] * ps[z] - pt[z]).abs() <= EXACT_TOL);
    let labelling_equal_fine = labellings_agree(inst);
    let labelling_equal_coarse = labellings_agree(&merged);
    let conditions_hold = within_cell_equal && labelling_equal_fine && labelling_equal_coarse;
    let terms_zero = inv <= EXACT_TOL && tsf <= EXACT_TOL;
    Ok(InductiveWeightsReport {
        cell_weights,
        inv,
        tsf,
        min_inv: fam.b_scalar * min_l1,
        minimizing_weights,
        within_cell_equal,
        labelling_equal_fine,
        labelling_equal_coarse,
        conditions_hold,
        terms_zero,
        consistent: terms_zero == conditions_hold,
    })
}

/// `eta = -1 / log(alpha / (C - 1))`, the critic scale that keeps
/// `-eta log g` inside the unit box for alpha-smooth `g`.
pub fn minent_eta(alpha: f64, classes: usize) -> Result<f64> {
    if classes < 2 {
        return Err(Error::Contract(
            "entropy bound needs at least two classes".into(),
        ));
    }
    let floor = alpha / (classes as f64 - 1.0);
    if !(alpha > 0.0 && floor <= 1.0 - alpha) {
        return Err(Error::Contract(format!(
            "alpha = {alpha} admits no smooth classifier with {classes} classes"
        )));
    }
    Ok(-1.0 / floor.ln())
}

/// `TSF^(w, g) >= eta (H_T(g) - CE_{w.S}(Y, g))` for alpha-smooth `g`.
pub fn check_minent_bound(
    inst: &DiscreteInstance,
    w: &WeightTable,
    g: &Predictions,
    alpha: f64,
    fam: &CriticFamily,
) -> Result<BoundReport> {
    let eta = minent_eta(alpha, inst.classes())?;
    let tsf_hat = tsf_hat_exact(inst, w, g, fam)?;
    let floor = alpha / (inst.classes() as f64 - 1.0);
    let rough = g
        .table()
        .iter()
        .any(|&v| v < floor - EXACT_TOL || v > 1.0 - alpha + EXACT_TOL);
    if rough {
        return Ok(BoundReport::unmet(
            format!("predictions leave [{floor}, {}]", 1.0 - alpha),
            &[("eta", eta), ("tsf_hat", tsf_hat)],
        ));
    }
    if fam.b_vec < 1.0 {
        return Ok(BoundReport::unmet(
            format!("b_vec = {} cannot hold the entropy critic", fam.b_vec),
            &[("eta", eta), ("tsf_hat", tsf_hat)],
        ));
    }
    let pt = inst.marginal(Domain::Target);
    let (mut entropy, mut cross) = (0.0, 0.0);
    for c in 0..inst.classes() {
        for z in 0..inst.cells() {
            let log_g = g.get(c, z).ln();
            entropy -= pt[z] * g.get(c, z) * log_g;
            cross -= w.values()[z] * inst.p(Domain::Source, c, z) * log_g;
        }
    }
    // a lower bound on TSF^, so TSF^ sits on the right
    Ok(BoundReport::checked(
        eta * (entropy - cross),
        tsf_hat,
        &[
            ("eta", eta),
            ("tsf_hat", tsf_hat),
            ("target_entropy", entropy),
            ("source_cross_entropy", cross),
        ],
    ))
}

/// Optimal-discriminator domain loss
/// `-sum_u [p_S(u) log d*(u) + p_T(u) log(1 - d*(u))]`, `d* = p_S / (p_S + p_T)`.
pub fn optimal_discriminator_loss(ps: &[f64], pt: &[f64]) -> f64 {
    ps.iter()
        .zip(pt)
        .map(|(&s, &t)| {
            let total = s + t;
            let mut v = 0.0;
            if s > 0.0 {
                v -= s * (s / total).ln();
            }
            if t > 0.0 {
                v -= t * (t / total).ln();
            }
            v
        })
        .sum()
}

/// Discriminator loss on the joint variable `(k, z)` with
/// `p_D(k, z) = p_D(z) q_D(k | z)`.
pub fn cdan_optimal_loss(
    inst: &DiscreteInstance,
    q_src: &Predictions,
    q_tgt: &Predictions,
) -> Result<f64> {
    q_src.check_shape(inst)?;
    q_tgt.check_shape(inst)?;
    let ps = inst.marginal(Domain::Source);
    let pt = inst.marginal(Domain::Target);
    let (mut js, mut jt) = (Vec::new(), Vec::new());
    for k in 0..inst.classes() {
        for z in 0..inst.cells() {
            js.push(ps[z] * q_src.get(k, z));
            jt.push(pt[z] * q_tgt.get(k, z));
        }
    }
    Ok(optimal_discriminator_loss(&js, &jt))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DannCdanReport {
    pub dann: f64,
    pub cdan: f64,
    pub equal: bool,
}

pub fn check_dann_cdan_equality(
    inst: &DiscreteInstance,
    class_of: &[usize],
) -> Result<DannCdanReport> {
    if class_of.len() != inst.cells() {
        return Err(Error::Dimension(format!(
            "{} predicted classes for {} cells",
            class_of.len(),
            inst.cells()
        )));
    }
    let q = Predictions::one_hot(inst.classes(), class_of)?;
    let dann = optimal_discriminator_loss(
        &inst.marginal(Domain::Source),
        &inst.marginal(Domain::Target),
    );
    let cdan = cdan_optimal_loss(inst, &q, &q)?;
    Ok(DannCdanReport {
        dann,
        cdan,
        equal: (dann - cdan).abs() < 1e-9,
    })
}
