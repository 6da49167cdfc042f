//! Convex quadratic programs with a diagonal objective Hessian, solved by a
//! primal-dual interior point method.
//!
//! Programs have the form
//!
//! ```text
//! minimize    Σ q_j x_j² + Σ c_j x_j + k
//! subject to  A x = b,  G x ≤ h,  l ≤ x ≤ u
//! ```
//!
//! with `q_j ≥ 0`. Bounds may be infinite.

mod ipm;
mod ldl;

use std::f64::consts::PI;
use std::fmt::Write as _;

pub use ipm::solve_qp;

/// A sparse linear row `Σ coef·x = rhs` or `Σ coef·x ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub name: String,
    /// Sorted by variable index, without duplicates.
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    fn new(name: String, mut coefs: Vec<(usize, f64)>, rhs: f64) -> Self {
        coefs.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coefs.len());
        for (j, a) in coefs {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        LinearRow {
            name,
            coefs: merged,
            rhs,
        }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvexProgram {
    names: Vec<String>,
    quadratic: Vec<f64>,
    linear: Vec<f64>,
    constant: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    eq: Vec<LinearRow>,
    le: Vec<LinearRow>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with zero objective and returns its index.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.names.push(name.into());
        self.quadratic.push(0.0);
        self.linear.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    /// Adds `quadratic·x² + linear·x` to the objective.
    ///
    /// # Panics
    /// If `quadratic` is negative, which would make the program nonconvex.
    pub fn add_objective(&mut self, var: usize, quadratic: f64, linear: f64) {
        assert!(quadratic >= 0.0, "objective must stay convex");
        self.quadratic[var] += quadratic;
        self.linear[var] += linear;
    }

    pub fn add_constant(&mut self, k: f64) {
        self.constant += k;
    }

    pub fn add_eq(&mut self, name: impl Into<String>, coefs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq.push(LinearRow::new(name.into(), coefs, rhs));
        self.eq.len() - 1
    }

    pub fn add_le(&mut self, name: impl Into<String>, coefs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.le.push(LinearRow::new(name.into(), coefs, rhs));
        self.le.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, var: usize) -> &str {
        &self.names[var]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn quadratic(&self) -> &[f64] {
        &self.quadratic
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn eq_rows(&self) -> &[LinearRow] {
        &self.eq
    }

    pub fn le_rows(&self) -> &[LinearRow] {
        &self.le
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.constant
            + x.iter()
                .enumerate()
                .map(|(j, &v)| self.quadratic[j] * v * v + self.linear[j] * v)
                .sum::<f64>()
    }

    /// Largest violation of any equality, inequality or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &self.eq {
            worst = worst.max((r.activity(x) - r.rhs).abs());
        }
        for r in &self.le {
            worst = worst.max(r.activity(x) - r.rhs);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    /// Plain-text listing in an LP-like syntax, meant for eyeballing a
    /// program while debugging:
    ///
    /// ```text
    /// minimize
    ///   obj: 2 x^2 + 3 x + 1
    /// subject to
    ///   balance: x + y = 1
    ///   cap: x - y <= 0.5
    /// bounds
    ///   0 <= x <= 1
    ///   y free
    /// end
    /// ```
    pub fn to_lp_string(&self) -> String {
        let mut out = String::from("minimize\n  obj:");
        let mut any = false;
        for j in 0..self.n_vars() {
            if self.quadratic[j] != 0.0 {
                push_term(
                    &mut out,
                    self.quadratic[j],
                    &format!("{}^2", self.names[j]),
                    &mut any,
                );
            }
            if self.linear[j] != 0.0 {
                push_term(&mut out, self.linear[j], &self.names[j], &mut any);
            }
        }
        if self.constant != 0.0 || !any {
            if any {
                let _ = write!(
                    out,
                    " {} {}",
                    if self.constant < 0.0 { '-' } else { '+' },
                    self.constant.abs()
                );
            } else {
                let _ = write!(out, " {}", self.constant);
            }
        }
        out.push_str("\nsubject to\n");
        for (rows, op) in [(&self.eq, "="), (&self.le, "<=")] {
            for r in rows.iter() {
                let _ = write!(out, "  {}:", r.name);
                let mut any = false;
                for &(j, a) in &r.coefs {
                    push_term(&mut out, a, &self.names[j], &mut any);
                }
                if !any {
                    out.push_str(" 0");
                }
                let _ = writeln!(out, " {op} {}", r.rhs);
            }
        }
        out.push_str("bounds\n");
        for j in 0..self.n_vars() {
            let (l, u) = (self.lower[j], self.upper[j]);
            let name = &self.names[j];
            let _ = match (l.is_finite(), u.is_finite()) {
                (false, false) => writeln!(out, "  {name} free"),
                (true, false) => writeln!(out, "  {name} >= {l}"),
                (false, true) => writeln!(out, "  {name} <= {u}"),
                (true, true) if l == u => writeln!(out, "  {name} = {l}"),
                (true, true) => writeln!(out, "  {l} <= {name} <= {u}"),
            };
        }
        out.push_str("end\n");
        out
    }
}

fn push_term(out: &mut String, coef: f64, name: &str, any: &mut bool) {
    let sign = if coef < 0.0 { "-" } else { "+" };
    let mag = coef.abs();
    if *any || coef < 0.0 {
        let _ = write!(out, " {sign}");
    }
    if mag == 1.0 {
        let _ = write!(out, " {name}");
    } else {
        let _ = write!(out, " {mag} {name}");
    }
    *any = true;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

/// Result of [`solve_qp`]. Multipliers follow the convention
/// `∇f(x) + Aᵀ·eq_duals + Gᵀ·le_duals − lower_duals + upper_duals = 0`
/// with all inequality and bound multipliers nonnegative.
#[derive(Debug, Clone)]
pub struct ConvexSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub le_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl ConvexSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QpOptions {
    /// Tolerance on primal residual, dual residual and relative gap.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// One half-plane `a_p·p + a_q·q ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub a_p: f64,
    pub a_q: f64,
    pub rhs: f64,
}

impl HalfPlane {
    pub fn admits(&self, p: f64, q: f64) -> bool {
        self.a_p * p + self.a_q * q <= self.rhs
    }
}

/// Inscribed regular polygon approximating the disc `p² + q² ≤ s_max²`.
/// The vertices lie on the circle, so every point the rows admit is inside
/// the disc.
///
/// # Panics
/// If `segments < 4` or `s_max` is not positive.
pub fn polygonize_circle(s_max: f64, segments: usize) -> Vec<HalfPlane> {
    assert!(segments >= 4, "a polygon needs at least 4 segments");
    assert!(s_max > 0.0, "apparent power limit must be positive");
    let rhs = s_max * (PI / segments as f64).cos();
    (0..segments)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / segments as f64;
            HalfPlane {
                a_p: phi.cos(),
                a_q: phi.sin(),
                rhs,
            }
        })
        .collect()
}
