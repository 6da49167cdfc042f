//! Random convex QPs and a brute-force active-set enumeration oracle.

use ktopf::convexsolve::ConvexProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// A feasible random QP with at most `max_vars` variables and at most
/// `max_cons` constraints, bounds included. Variables without curvature are
/// always boxed so the optimum exists.
pub fn random_qp<R: Rng>(rng: &mut R, max_vars: usize, max_cons: usize) -> ConvexProgram {
    let n = rng.random_range(1..=max_vars);
    let mut p = ConvexProgram::new();
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut budget = max_cons;
    let mut vars = Vec::new();
    for j in 0..n {
        let flat = rng.random_bool(0.3) && budget >= 2;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        if flat || (budget >= 1 && rng.random_bool(0.3)) {
            lo = x0[j] - rng.random_range(0.0..1.5);
            budget -= 1;
        }
        if flat || (budget >= 1 && rng.random_bool(0.3)) {
            hi = x0[j] + rng.random_range(0.0..1.5);
            budget -= 1;
        }
        let v = p.add_var(format!("x{j}"), lo, hi);
        let q = if flat {
            0.0
        } else {
            rng.random_range(0.05..2.0)
        };
        p.add_objective(v, q, rng.random_range(-3.0..3.0));
        vars.push(v);
    }
    let rows = rng.random_range(0..=budget);
    let mut n_eq = 0;
    for i in 0..rows {
        let mut coefs = Vec::new();
        for &j in &vars {
            if rng.random_bool(0.6) {
                coefs.push((j, rng.random_range(-2.0..2.0)));
            }
        }
        if coefs.is_empty() {
            continue;
        }
        let act: f64 = coefs.iter().map(|&(j, a)| a * x0[j]).sum();
        if n_eq + 1 < n && rng.random_bool(0.25) {
            p.add_eq(format!("e{i}"), coefs, act);
            n_eq += 1;
        } else {
            let slack = if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            };
            p.add_le(format!("g{i}"), coefs, act + slack);
        }
    }
    p
}

struct Con {
    row: Vec<f64>,
    rhs: f64,
}

/// Best objective over all active sets. Each candidate active set is solved
/// as an equality-constrained QP by least squares; only exact KKT solutions
/// that are primal feasible are kept.
pub fn enumerate_qp(p: &ConvexProgram) -> Option<f64> {
    let n = p.n_vars();
    let dense = |coefs: &[(usize, f64)]| {
        let mut r = vec![0.0; n];
        for &(j, a) in coefs {
            r[j] += a;
        }
        r
    };
    let eqs: Vec<Con> = p
        .eq_rows()
        .iter()
        .map(|r| Con {
            row: dense(&r.coefs),
            rhs: r.rhs,
        })
        .collect();
    let mut ineqs: Vec<Con> = p
        .le_rows()
        .iter()
        .map(|r| Con {
            row: dense(&r.coefs),
            rhs: r.rhs,
        })
        .collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        if p.lower()[j].is_finite() {
            e[j] = -1.0;
            ineqs.push(Con {
                row: e.clone(),
                rhs: -p.lower()[j],
            });
        }
        if p.upper()[j].is_finite() {
            e[j] = 1.0;
            ineqs.push(Con {
                row: e,
                rhs: p.upper()[j],
            });
        }
    }
    let m = ineqs.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1u32 << m) {
        let active: Vec<&Con> = eqs
            .iter()
            .chain((0..m).filter(|i| mask & (1 << i) != 0).map(|i| &ineqs[i]))
            .collect();
        if active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
        let mut rhs = DVector::<f64>::zeros(n + k);
        for j in 0..n {
            kkt[(j, j)] = 2.0 * p.quadratic()[j];
            rhs[j] = -p.linear()[j];
        }
        for (i, c) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + i, j)] = c.row[j];
                kkt[(j, n + i)] = c.row[j];
            }
            rhs[n + i] = c.rhs;
        }
        let sol = match kkt.clone().full_piv_lu().solve(&rhs) {
            Some(sol) => sol,
            None => match kkt.clone().svd(true, true).solve(&rhs, 1e-10) {
                Ok(sol) => sol,
                Err(_) => continue,
            },
        };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let x: Vec<f64> = (0..n).map(|j| sol[j]).collect();
        if p.max_violation(&x) > 1e-9 {
            continue;
        }
        let obj = p.objective_value(&x);
        if best.is_none_or(|b| obj < b) {
            best = Some(obj);
        }
    }
    best
}
