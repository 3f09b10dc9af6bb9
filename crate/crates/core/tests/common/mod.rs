//! Independent oracles for the integration tests: every supremum here is
//! taken by enumerating critics, never through the closed forms in the crate.

#![allow(dead_code)]

use udalab::datasets::Domain;
use udalab::oracle::{DiscreteInstance, Predictions};

/// Visit every vector in `levels^n`.
pub fn odometer(n: usize, levels: &[f64], mut visit: impl FnMut(&[f64])) {
    let mut digits = vec![0usize; n];
    let mut v = vec![levels[0]; n];
    loop {
        visit(&v);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            digits[i] += 1;
            if digits[i] < levels.len() {
                v[i] = levels[digits[i]];
                break;
            }
            digits[i] = 0;
            v[i] = levels[0];
            i += 1;
        }
    }
}

pub fn marginal(inst: &DiscreteInstance, domain: Domain) -> Vec<f64> {
    let (c_n, m) = (inst.classes(), inst.cells());
    let joint = inst.joint(domain);
    (0..m)
        .map(|z| (0..c_n).map(|c| joint[c * m + z]).sum())
        .collect()
}

/// `sup_f sum_z (p_T(z) - w(z) p_S(z)) f(z)` over `f : Z -> {-b, 0, b}`.
pub fn brute_inv(inst: &DiscreteInstance, w: &[f64], b: f64) -> f64 {
    let ps = marginal(inst, Domain::Source);
    let pt = marginal(inst, Domain::Target);
    let gap: Vec<f64> = (0..inst.cells()).map(|z| pt[z] - w[z] * ps[z]).collect();
    let mut best = f64::NEG_INFINITY;
    odometer(gap.len(), &[-b, 0.0, b], |f| {
        best = best.max(gap.iter().zip(f).map(|(a, x)| a * x).sum());
    });
    best
}

/// `sup_f sum_{c,z} gap(c, z) f_c(z)` over box critics `Z -> [-b, b]^C`.
/// The objective is linear, so the box vertices suffice.
fn sup_vector(gap: &[f64], b: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    odometer(gap.len(), &[-b, b], |f| {
        best = best.max(gap.iter().zip(f).map(|(a, x)| a * x).sum());
    });
    best
}

pub fn brute_tsf(inst: &DiscreteInstance, w: &[f64], b: f64) -> f64 {
    let m = inst.cells();
    let (s, t) = (inst.joint(Domain::Source), inst.joint(Domain::Target));
    let gap: Vec<f64> = (0..s.len()).map(|i| t[i] - w[i % m] * s[i]).collect();
    sup_vector(&gap, b)
}

/// Transferability with target labels drawn from `g`.
pub fn brute_tsf_hat(inst: &DiscreteInstance, w: &[f64], g: &Predictions, b: f64) -> f64 {
    let m = inst.cells();
    let pt = marginal(inst, Domain::Target);
    let s = inst.joint(Domain::Source);
    let gap: Vec<f64> = (0..s.len())
        .map(|i| pt[i % m] * g.get(i / m, i % m) - w[i % m] * s[i])
        .collect();
    sup_vector(&gap, b)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Squared distances `||f(z) - f'(z)||^2` reachable by one cell's critic pair.
fn reachable_gaps(classes: usize, b: f64) -> Vec<f64> {
    let mut vals = Vec::new();
    odometer(classes, &[-b, 0.0, b], |f| {
        odometer(classes, &[-b, 0.0, b], |g| vals.push(sq_dist(f, g)));
    });
    vals
}

/// `sup_{f,f'} |E_S ||f - f'||^2 - E_T ||f - f'||^2|`. The objective is a sum
/// of per-cell terms, so the supremum over the product is the sum of the
/// per-cell suprema (taken separately for each sign).
pub fn brute_d_fc(inst: &DiscreteInstance, b: f64) -> f64 {
    let ps = marginal(inst, Domain::Source);
    let pt = marginal(inst, Domain::Target);
    let vals = reachable_gaps(inst.classes(), b);
    let (mut up, mut down) = (0.0, 0.0);
    for z in 0..inst.cells() {
        let a = ps[z] - pt[z];
        up += vals.iter().map(|h| a * h).fold(f64::NEG_INFINITY, f64::max);
        down += vals
            .iter()
            .map(|h| -a * h)
            .fold(f64::NEG_INFINITY, f64::max);
    }
    f64::max(up, down)
}

/// Same supremum by enumerating whole critic pairs; only for tiny instances.
pub fn brute_d_fc_full(inst: &DiscreteInstance, b: f64) -> f64 {
    let (c_n, m) = (inst.classes(), inst.cells());
    let ps = marginal(inst, Domain::Source);
    let pt = marginal(inst, Domain::Target);
    let mut best: f64 = 0.0;
    odometer(c_n * m, &[-b, 0.0, b], |f| {
        odometer(c_n * m, &[-b, 0.0, b], |g| {
            let mut v = 0.0;
            for z in 0..m {
                let fz: Vec<f64> = (0..c_n).map(|c| f[c * m + z]).collect();
                let gz: Vec<f64> = (0..c_n).map(|c| g[c * m + z]).collect();
                v += (ps[z] - pt[z]) * sq_dist(&fz, &gz);
            }
            best = best.max(v.abs());
        });
    });
    best
}

/// `sum_{c,z} mass(c,z) ||g(z) - e_c||^2`.
pub fn l2_risk(
    classes: usize,
    cells: usize,
    mass: impl Fn(usize, usize) -> f64,
    g: impl Fn(usize, usize) -> f64,
) -> f64 {
    let mut r = 0.0;
    for c in 0..classes {
        for z in 0..cells {
            let gap: f64 = (0..classes)
                .map(|k| (g(k, z) - if k == c { 1.0 } else { 0.0 }).powi(2))
                .sum();
            r += mass(c, z) * gap;
        }
    }
    r
}

/// `p_D(c | z)`, uniform on empty cells.
pub fn conditional(inst: &DiscreteInstance, domain: Domain) -> Vec<f64> {
    let (c_n, m) = (inst.classes(), inst.cells());
    let joint = inst.joint(domain);
    let marg = marginal(inst, domain);
    (0..c_n * m)
        .map(|i| {
            let z = i % m;
            if marg[z] > 0.0 {
                joint[i] / marg[z]
            } else {
                1.0 / c_n as f64
            }
        })
        .collect()
}

/// Right-hand side and left-hand side of the weighted risk bound, computed
/// from brute-force suprema. `b_s = C`, `b_v = 1`.
pub fn bound3_sides(inst: &DiscreteInstance, w: &[f64], g: &Predictions) -> (f64, f64) {
    let (c_n, m) = (inst.classes(), inst.cells());
    let (s, t) = (inst.joint(Domain::Source), inst.joint(Domain::Target));
    let f_t = conditional(inst, Domain::Target);
    let target = l2_risk(c_n, m, |c, z| t[c * m + z], |k, z| g.get(k, z));
    let source = l2_risk(c_n, m, |c, z| w[z] * s[c * m + z], |k, z| g.get(k, z));
    let ideal = l2_risk(c_n, m, |c, z| t[c * m + z], |k, z| f_t[k * m + z]);
    let rhs = source + 6.0 * brute_inv(inst, w, c_n as f64) + 2.0 * brute_tsf(inst, w, 1.0) + ideal;
    (target, rhs)
}

/// Optimal-discriminator cross-entropy between two unnormalized mass tables.
pub fn disc_loss(ps: &[f64], pt: &[f64]) -> f64 {
    let mut v = 0.0;
    for (&s, &t) in ps.iter().zip(pt) {
        if s > 0.0 {
            v -= s * (s / (s + t)).ln();
        }
        if t > 0.0 {
            v -= t * (t / (s + t)).ln();
        }
    }
    v
}
