//! Random instances, classifiers and weights for fuzzing the checks.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{DiscreteInstance, Predictions, WeightTable};
use crate::datasets::Domain;

/// Uniform draw from the simplex of dimension `n`. With `sparsity > 0` each
/// entry is zeroed with that probability (at least one entry survives).
pub fn simplex<R: Rng>(rng: &mut R, n: usize, sparsity: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    if sparsity > 0.0 {
        let keep = rng.random_range(0..n);
        for (i, x) in v.iter_mut().enumerate() {
            if i != keep && rng.random_bool(sparsity) {
                *x = 0.0;
            }
        }
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Independent random source and target joints.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    classes: usize,
    cells: usize,
    sparsity: f64,
) -> DiscreteInstance {
    let s = simplex(rng, classes * cells, sparsity);
    let t = simplex(rng, classes * cells, sparsity);
    DiscreteInstance::new(classes, cells, s, t).expect("simplex draws are valid tables")
}

/// Joints `p_D(z) q(y | z)` sharing one conditional table across domains.
pub fn shared_conditionals<R: Rng>(
    rng: &mut R,
    classes: usize,
    cells: usize,
    sparsity: f64,
) -> DiscreteInstance {
    let q = random_predictions(rng, classes, cells);
    let ps = simplex(rng, cells, sparsity);
    let pt = simplex(rng, cells, 0.0);
    // target marginal restricted to the source support keeps ratios finite
    let pt: Vec<f64> = pt
        .iter()
        .zip(&ps)
        .map(|(t, s)| if *s > 0.0 { *t } else { 0.0 })
        .collect();
    let total: f64 = pt.iter().sum();
    let pt: Vec<f64> = pt.iter().map(|t| t / total).collect();
    joint_from(classes, cells, &ps, &pt, &q)
}

/// Assemble joints from marginals and a shared conditional table.
pub fn joint_from(
    classes: usize,
    cells: usize,
    ps: &[f64],
    pt: &[f64],
    q: &Predictions,
) -> DiscreteInstance {
    let build = |marg: &[f64]| {
        let mut out = vec![0.0; classes * cells];
        for c in 0..classes {
            for z in 0..cells {
                out[c * cells + z] = marg[z] * q.get(c, z);
            }
        }
        renormalize(out)
    };
    DiscreteInstance::new(classes, cells, build(ps), build(pt)).expect("products of valid tables")
}

fn renormalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

pub fn random_predictions<R: Rng>(rng: &mut R, classes: usize, cells: usize) -> Predictions {
    let mut table = vec![0.0; classes * cells];
    for z in 0..cells {
        for (c, p) in simplex(rng, classes, 0.0).into_iter().enumerate() {
            table[c * cells + z] = p;
        }
    }
    Predictions::new(classes, cells, table).expect("simplex columns")
}

/// Columns of the form `a + (1 - C a) p` with `a = alpha / (C - 1)`, so every
/// entry lies in `[a, 1 - alpha]`.
pub fn smooth_predictions<R: Rng>(
    rng: &mut R,
    classes: usize,
    cells: usize,
    alpha: f64,
) -> Predictions {
    let a = alpha / (classes as f64 - 1.0);
    let free = 1.0 - classes as f64 * a;
    let raw = random_predictions(rng, classes, cells);
    let table = raw.table().iter().map(|p| a + free * p).collect();
    Predictions::new(classes, cells, table).expect("affine image of the simplex")
}

/// Random positive weights normalized under the source marginal.
pub fn random_weights<R: Rng>(rng: &mut R, inst: &DiscreteInstance) -> WeightTable {
    let raw: Vec<f64> = (0..inst.cells())
        .map(|_| rng.random_range(0.05..3.0))
        .collect();
    WeightTable::normalized(inst, raw).expect("positive weights on a valid instance")
}

/// Nudge `amount` of mass between two entries of one domain's joint.
pub fn perturb<R: Rng>(
    rng: &mut R,
    inst: &DiscreteInstance,
    domain: Domain,
    amount: f64,
) -> DiscreteInstance {
    let (c_n, m) = (inst.classes(), inst.cells());
    let mut t = inst.joint(domain).to_vec();
    let donors: Vec<usize> = (0..t.len()).filter(|&i| t[i] > amount).collect();
    let from = donors[rng.random_range(0..donors.len())];
    let mut to = rng.random_range(0..t.len());
    while to == from {
        to = rng.random_range(0..t.len());
    }
    t[from] -= amount;
    t[to] += amount;
    let t = renormalize(t);
    let (s, tt) = match domain {
        Domain::Source => (t, inst.joint(Domain::Target).to_vec()),
        Domain::Target => (inst.joint(Domain::Source).to_vec(), t),
    };
    DiscreteInstance::new(c_n, m, s, tt).expect("mass moved within the simplex")
}
