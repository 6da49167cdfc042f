use std::collections::HashMap;

use super::ldl::LdlFactor;
use super::{ConvexProgram, ConvexSolution, QpOptions, SolveStatus};

const STATIC_REG: f64 = 1e-9;
const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 6;

#[derive(Clone, Copy)]
enum EqOrigin {
    Row(usize),
    Fixed(usize),
}

#[derive(Clone, Copy)]
enum IneqOrigin {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

type SparseRow = Vec<(usize, f64)>;

/// The scaled standard form `min ½xᵀQx + cᵀx s.t. Ax = b, Cx ≤ d`.
struct StdForm {
    n: usize,
    q: Vec<f64>,
    c: Vec<f64>,
    a: Vec<SparseRow>,
    b: Vec<f64>,
    a_scale: Vec<f64>,
    a_origin: Vec<EqOrigin>,
    g: Vec<SparseRow>,
    d: Vec<f64>,
    g_scale: Vec<f64>,
    g_origin: Vec<IneqOrigin>,
    obj_scale: f64,
}

fn row_scale(row: &SparseRow) -> f64 {
    let m = row.iter().fold(0.0f64, |m, &(_, a)| m.max(a.abs()));
    if m > 0.0 {
        1.0 / m
    } else {
        1.0
    }
}

/// Builds the scaled standard form, or `None` when the program is trivially
/// infeasible (crossed bounds, or an empty row that cannot hold).
fn standardize(prog: &ConvexProgram, tol: f64) -> Option<StdForm> {
    let n = prog.n_vars();
    let cmax = prog
        .linear()
        .iter()
        .chain(
            prog.quadratic()
                .iter()
                .map(|q| q * 2.0)
                .collect::<Vec<_>>()
                .iter(),
        )
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let obj_scale = 1.0 / cmax;
    let mut f = StdForm {
        n,
        q: prog
            .quadratic()
            .iter()
            .map(|&v| 2.0 * v * obj_scale)
            .collect(),
        c: prog.linear().iter().map(|&v| v * obj_scale).collect(),
        a: Vec::new(),
        b: Vec::new(),
        a_scale: Vec::new(),
        a_origin: Vec::new(),
        g: Vec::new(),
        d: Vec::new(),
        g_scale: Vec::new(),
        g_origin: Vec::new(),
        obj_scale,
    };
    for (i, r) in prog.eq_rows().iter().enumerate() {
        if r.coefs.is_empty() {
            if r.rhs.abs() > tol {
                return None;
            }
            continue;
        }
        let s = row_scale(&r.coefs);
        f.a.push(r.coefs.iter().map(|&(j, a)| (j, a * s)).collect());
        f.b.push(r.rhs * s);
        f.a_scale.push(s);
        f.a_origin.push(EqOrigin::Row(i));
    }
    for (i, r) in prog.le_rows().iter().enumerate() {
        if r.coefs.is_empty() {
            if r.rhs < -tol {
                return None;
            }
            continue;
        }
        let s = row_scale(&r.coefs);
        f.g.push(r.coefs.iter().map(|&(j, a)| (j, a * s)).collect());
        f.d.push(r.rhs * s);
        f.g_scale.push(s);
        f.g_origin.push(IneqOrigin::Row(i));
    }
    for j in 0..n {
        let (l, u) = (prog.lower()[j], prog.upper()[j]);
        if l > u {
            return None;
        }
        if l == u {
            f.a.push(vec![(j, 1.0)]);
            f.b.push(l);
            f.a_scale.push(1.0);
            f.a_origin.push(EqOrigin::Fixed(j));
            continue;
        }
        if l.is_finite() {
            f.g.push(vec![(j, -1.0)]);
            f.d.push(-l);
            f.g_scale.push(1.0);
            f.g_origin.push(IneqOrigin::Lower(j));
        }
        if u.is_finite() {
            f.g.push(vec![(j, 1.0)]);
            f.d.push(u);
            f.g_scale.push(1.0);
            f.g_origin.push(IneqOrigin::Upper(j));
        }
    }
    Some(f)
}

/// Reduced KKT matrix `[Q + GᵀWG + δI, Aᵀ; A, −δI]` with a fixed pattern.
struct Kkt {
    n: usize,
    entries: Vec<(usize, usize)>,
    values: Vec<f64>,
    x_diag: Vec<usize>,
    y_diag: Vec<usize>,
    a_slots: Vec<Vec<usize>>,
    g_pairs: Vec<Vec<(usize, f64)>>,
    factor: LdlFactor,
}

impl Kkt {
    fn new(f: &StdForm) -> Self {
        let n = f.n;
        let me = f.a.len();
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut entries = Vec::new();
        let mut slot = |r: usize, c: usize, entries: &mut Vec<(usize, usize)>| -> usize {
            let key = if r <= c { (r, c) } else { (c, r) };
            *index.entry(key).or_insert_with(|| {
                entries.push(key);
                entries.len() - 1
            })
        };
        let x_diag: Vec<usize> = (0..n).map(|j| slot(j, j, &mut entries)).collect();
        let y_diag: Vec<usize> = (0..me).map(|i| slot(n + i, n + i, &mut entries)).collect();
        let a_slots =
            f.a.iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .map(|&(j, _)| slot(j, n + i, &mut entries))
                        .collect()
                })
                .collect();
        let g_pairs =
            f.g.iter()
                .map(|row| {
                    let mut pairs = Vec::new();
                    for (p, &(j, aj)) in row.iter().enumerate() {
                        for &(k, ak) in &row[p..] {
                            pairs.push((slot(j, k, &mut entries), aj * ak));
                        }
                    }
                    pairs
                })
                .collect();
        let signs: Vec<f64> = (0..n + me)
            .map(|i| if i < n { 1.0 } else { -1.0 })
            .collect();
        let factor = LdlFactor::new(n + me, &entries, &signs);
        Kkt {
            n,
            values: vec![0.0; entries.len()],
            entries,
            x_diag,
            y_diag,
            a_slots,
            g_pairs,
            factor,
        }
    }

    fn assemble(&mut self, f: &StdForm, w: &[f64]) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.n {
            self.values[self.x_diag[j]] = f.q[j];
        }
        for (pairs, &wi) in self.g_pairs.iter().zip(w) {
            for &(s, prod) in pairs {
                self.values[s] += wi * prod;
            }
        }
        for (slots, row) in self.a_slots.iter().zip(&f.a) {
            for (&s, &(_, a)) in slots.iter().zip(row) {
                self.values[s] += a;
            }
        }
        let mut reg = self.values.clone();
        for &s in &self.x_diag {
            reg[s] += STATIC_REG;
        }
        for &s in &self.y_diag {
            reg[s] -= STATIC_REG;
        }
        self.factor.factor(&reg);
    }

    /// Product with the unregularized matrix.
    fn mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (&(r, c), &a) in self.entries.iter().zip(&self.values) {
            out[r] += a * v[c];
            if r != c {
                out[c] += a * v[r];
            }
        }
        out
    }

    /// Solves with the regularized factors, then refines against the exact
    /// matrix.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.factor.solve(&mut x);
        let scale = 1.0 + inf_norm(rhs);
        let mut best = residual_norm(&self.mul(&x), rhs);
        for _ in 0..REFINE_STEPS {
            if best <= 1e-14 * scale {
                break;
            }
            let kx = self.mul(&x);
            let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(b, k)| b - k).collect();
            self.factor.solve(&mut r);
            let cand: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
            let res = residual_norm(&self.mul(&cand), rhs);
            if res < best {
                x = cand;
                best = res;
            } else {
                break;
            }
        }
        x
    }
}

fn residual_norm(kx: &[f64], rhs: &[f64]) -> f64 {
    kx.iter()
        .zip(rhs)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn row_dot(row: &SparseRow, x: &[f64]) -> f64 {
    row.iter().map(|&(j, a)| a * x[j]).sum()
}

/// Adds `Σ rows_i · weights_i` (a transposed product) into `out`.
fn add_transpose(out: &mut [f64], rows: &[SparseRow], weights: &[f64]) {
    for (row, &w) in rows.iter().zip(weights) {
        for &(j, a) in row {
            out[j] += a * w;
        }
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
}

struct Residuals {
    rd: Vec<f64>,
    re: Vec<f64>,
    rc: Vec<f64>,
}

fn newton_direction(
    f: &StdForm,
    kkt: &Kkt,
    s: &[f64],
    w: &[f64],
    res: &Residuals,
    rsz: &[f64],
) -> Direction {
    let n = f.n;
    let me = f.a.len();
    // temp_i = w_i rc_i − rsz_i / s_i
    let temp: Vec<f64> = (0..f.g.len())
        .map(|i| w[i] * res.rc[i] - rsz[i] / s[i])
        .collect();
    let mut rhs = vec![0.0; n + me];
    for j in 0..n {
        rhs[j] = -res.rd[j];
    }
    let mut gt = vec![0.0; n];
    add_transpose(&mut gt, &f.g, &temp);
    for j in 0..n {
        rhs[j] -= gt[j];
    }
    for i in 0..me {
        rhs[n + i] = -res.re[i];
    }
    let sol = kkt.solve(&rhs);
    let dx = sol[..n].to_vec();
    let dy = sol[n..].to_vec();
    let mut dz = Vec::with_capacity(f.g.len());
    let mut ds = Vec::with_capacity(f.g.len());
    for (i, row) in f.g.iter().enumerate() {
        let gdx = row_dot(row, &dx);
        dz.push(w[i] * (gdx + res.rc[i]) - rsz[i] / s[i]);
        ds.push(-res.rc[i] - gdx);
    }
    Direction { dx, dy, dz, ds }
}

/// Mean complementarity after the longest admissible step along `dir`.
fn mean_complementarity(s: &[f64], z: &[f64], dir: &Direction) -> f64 {
    let alpha = 1.0f64.min(STEP_FRACTION * max_step(s, &dir.ds).min(max_step(z, &dir.dz)));
    let total: f64 = (0..s.len())
        .map(|i| (s[i] + alpha * dir.ds[i]) * (z[i] + alpha * dir.dz[i]))
        .sum();
    total / s.len() as f64
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .fold(f64::INFINITY, |a, (&x, &d)| a.min(-x / d))
}

/// Solves a convex QP with a Mehrotra predictor-corrector interior point
/// method on the reduced KKT system.
///
/// The status is `Optimal` only when the primal residual, dual residual and
/// relative complementarity gap are all below `opts.tol`. `Infeasible` is
/// reported when crossed bounds are found up front, when the iterates
/// converge to a Farkas certificate, or when the barrier parameter vanishes
/// while the primal residual stays above 1e-6.
pub fn solve_qp(prog: &ConvexProgram, opts: &QpOptions) -> ConvexSolution {
    let n = prog.n_vars();
    let f = match standardize(prog, opts.tol) {
        Some(f) => f,
        None => return failed(prog, SolveStatus::Infeasible, vec![0.0; n], 0),
    };
    let me = f.a.len();
    let mc = f.g.len();
    let mut kkt = Kkt::new(&f);

    // least squares start: (Q + GᵀG) x + Aᵀy = −c + Gᵀd, Ax = b
    let ones = vec![1.0; mc];
    kkt.assemble(&f, &ones);
    let mut rhs = vec![0.0; n + me];
    for j in 0..n {
        rhs[j] = -f.c[j];
    }
    add_transpose(&mut rhs[..n], &f.g, &f.d);
    rhs[n..].copy_from_slice(&f.b);
    let sol = kkt.solve(&rhs);
    let mut x = sol[..n].to_vec();
    let mut y = sol[n..].to_vec();
    let slack0: Vec<f64> =
        f.g.iter()
            .zip(&f.d)
            .map(|(r, d)| d - row_dot(r, &x))
            .collect();
    let mut s = shift_positive(&slack0);
    let mut z = shift_positive(&slack0.iter().map(|v| -v).collect::<Vec<_>>());

    let b_norm =
        f.a.iter()
            .zip(&f.b)
            .zip(&f.a_scale)
            .map(|((_, b), sc)| (b / sc).abs())
            .chain(
                f.g.iter()
                    .zip(&f.d)
                    .zip(&f.g_scale)
                    .map(|((_, d), sc)| (d / sc).abs()),
            )
            .fold(0.0f64, f64::max);
    let c_norm = inf_norm(&f.c);

    for iter in 0..=opts.max_iter {
        let res = residuals(&f, &x, &y, &z, &s);
        let mu = if mc > 0 { dot(&s, &z) / mc as f64 } else { 0.0 };
        let pres = res
            .re
            .iter()
            .zip(&f.a_scale)
            .map(|(r, sc)| (r / sc).abs())
            .chain(res.rc.iter().zip(&f.g_scale).map(|(r, sc)| (r / sc).abs()))
            .fold(0.0f64, f64::max)
            / (1.0 + b_norm);
        let dres = inf_norm(&res.rd) / (1.0 + c_norm);
        let pobj = 0.5 * (0..n).map(|j| f.q[j] * x[j] * x[j]).sum::<f64>() + dot(&f.c, &x);
        let gap = dot(&s, &z) / (1.0 + pobj.abs());
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            return finish(prog, &f, SolveStatus::Optimal, x, &y, &z, iter);
        }
        if mc > 0 && is_farkas(&f, &y, &z) {
            return finish(prog, &f, SolveStatus::Infeasible, x, &y, &z, iter);
        }
        if mc > 0 && mu < 1e-10 && pres > 1e-6 {
            return finish(prog, &f, SolveStatus::Infeasible, x, &y, &z, iter);
        }
        if iter == opts.max_iter || !x.iter().chain(&y).chain(&z).all(|v| v.is_finite()) {
            return finish(prog, &f, SolveStatus::IterLimit, x, &y, &z, iter);
        }

        let w: Vec<f64> = z.iter().zip(&s).map(|(z, s)| z / s).collect();
        kkt.assemble(&f, &w);

        let rsz: Vec<f64> = s.iter().zip(&z).map(|(s, z)| s * z).collect();
        let aff = newton_direction(&f, &kkt, &s, &w, &res, &rsz);
        let alpha_aff = 1.0f64.min(max_step(&s, &aff.ds)).min(max_step(&z, &aff.dz));
        let dir = if mc > 0 {
            let mu_aff = (0..mc)
                .map(|i| (s[i] + alpha_aff * aff.ds[i]) * (z[i] + alpha_aff * aff.dz[i]))
                .sum::<f64>()
                / mc as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rsz: Vec<f64> = (0..mc)
                .map(|i| s[i] * z[i] + aff.ds[i] * aff.dz[i] - sigma * mu)
                .collect();
            let corrected = newton_direction(&f, &kkt, &s, &w, &res, &rsz);
            // The second-order term can dominate near degenerate vertices and
            // push the iterates off the central path. Drop it whenever the
            // corrected step would not reduce the barrier parameter.
            if mean_complementarity(&s, &z, &corrected) < mu {
                corrected
            } else {
                let sigma = sigma.max(0.1);
                let rsz: Vec<f64> = (0..mc).map(|i| s[i] * z[i] - sigma * mu).collect();
                newton_direction(&f, &kkt, &s, &w, &res, &rsz)
            }
        } else {
            aff
        };
        let alpha = 1.0f64.min(STEP_FRACTION * max_step(&s, &dir.ds).min(max_step(&z, &dir.dz)));
        for j in 0..n {
            x[j] += alpha * dir.dx[j];
        }
        for i in 0..me {
            y[i] += alpha * dir.dy[i];
        }
        for i in 0..mc {
            s[i] += alpha * dir.ds[i];
            z[i] += alpha * dir.dz[i];
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn shift_positive(v: &[f64]) -> Vec<f64> {
    let alpha = -v.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    if alpha < 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x + 1.0 + alpha).collect()
    }
}

fn residuals(f: &StdForm, x: &[f64], y: &[f64], z: &[f64], s: &[f64]) -> Residuals {
    let mut rd: Vec<f64> = (0..f.n).map(|j| f.q[j] * x[j] + f.c[j]).collect();
    add_transpose(&mut rd, &f.a, y);
    add_transpose(&mut rd, &f.g, z);
    let re =
        f.a.iter()
            .zip(&f.b)
            .map(|(r, b)| row_dot(r, x) - b)
            .collect();
    let rc =
        f.g.iter()
            .zip(&f.d)
            .zip(s)
            .map(|((r, d), s)| row_dot(r, x) + s - d)
            .collect();
    Residuals { rd, re, rc }
}

/// A primal infeasibility certificate: `Aᵀy + Gᵀz ≈ 0` with `bᵀy + dᵀz < 0`.
/// Requiring the multipliers to be large rules out well-posed problems whose
/// optimum happens to have `∇f ≈ 0`. Any feasible `x` satisfies
/// `bᵀy + dᵀz ≥ −‖x‖₁ ‖Aᵀy + Gᵀz‖∞`, so the relative threshold only accepts
/// certificates that exclude every point with `‖x‖₁ < 1e6`.
fn is_farkas(f: &StdForm, y: &[f64], z: &[f64]) -> bool {
    let t = dot(&f.b, y) + dot(&f.d, z);
    if t >= 0.0 || inf_norm(y).max(inf_norm(z)) < 1.0 {
        return false;
    }
    let mut r = vec![0.0; f.n];
    add_transpose(&mut r, &f.a, y);
    add_transpose(&mut r, &f.g, z);
    inf_norm(&r) <= 1e-6 * -t
}

fn failed(
    prog: &ConvexProgram,
    status: SolveStatus,
    x: Vec<f64>,
    iterations: usize,
) -> ConvexSolution {
    let n = prog.n_vars();
    ConvexSolution {
        status,
        objective: prog.objective_value(&x),
        x,
        eq_duals: vec![0.0; prog.eq_rows().len()],
        le_duals: vec![0.0; prog.le_rows().len()],
        lower_duals: vec![0.0; n],
        upper_duals: vec![0.0; n],
        iterations,
    }
}

fn finish(
    prog: &ConvexProgram,
    f: &StdForm,
    status: SolveStatus,
    x: Vec<f64>,
    y: &[f64],
    z: &[f64],
    iterations: usize,
) -> ConvexSolution {
    let mut sol = failed(prog, status, x, iterations);
    for (i, origin) in f.a_origin.iter().enumerate() {
        let v = y[i] * f.a_scale[i] / f.obj_scale;
        match *origin {
            EqOrigin::Row(r) => sol.eq_duals[r] = v,
            EqOrigin::Fixed(j) => {
                sol.upper_duals[j] = v.max(0.0);
                sol.lower_duals[j] = (-v).max(0.0);
            }
        }
    }
    for (i, origin) in f.g_origin.iter().enumerate() {
        let v = z[i] * f.g_scale[i] / f.obj_scale;
        match *origin {
            IneqOrigin::Row(r) => sol.le_duals[r] = v,
            IneqOrigin::Lower(j) => sol.lower_duals[j] = v,
            IneqOrigin::Upper(j) => sol.upper_duals[j] = v,
        }
    }
    sol
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn opts() -> QpOptions {
        QpOptions::default()
    }

    #[test]
    fn clipped_unconstrained_minimizer() {
        // (x - 2)^2 = x^2 - 4x + 4
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        p.add_objective(x, 1.0, -4.0);
        p.add_constant(4.0);
        let sol = solve_qp(&p, &opts());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!((sol.objective - 1.0).abs() < 1e-7);
        // ∇f = 2(x-2) = -2 is balanced by the upper bound multiplier
        assert!((sol.upper_duals[0] - 2.0).abs() < 1e-6);
        assert!(sol.lower_duals[0].abs() < 1e-6);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = ConvexProgram::new();
        p.add_var("x", 2.0, 1.0);
        assert_eq!(solve_qp(&p, &opts()).status, SolveStatus::Infeasible);
    }

    #[test]
    fn conflicting_rows_are_infeasible() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", -INF, INF);
        p.add_objective(x, 1.0, 0.0);
        p.add_le("ge2", vec![(x, -1.0)], -2.0);
        p.add_le("le1", vec![(x, 1.0)], 1.0);
        assert_eq!(solve_qp(&p, &opts()).status, SolveStatus::Infeasible);
    }

    #[test]
    fn conflicting_equalities_and_bounds_are_infeasible() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        let y = p.add_var("y", 0.0, 1.0);
        p.add_objective(x, 0.0, 1.0);
        p.add_eq("sum", vec![(x, 1.0), (y, 1.0)], 3.0);
        assert_eq!(solve_qp(&p, &opts()).status, SolveStatus::Infeasible);
    }

    #[test]
    fn symmetric_equality_constrained() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", -INF, INF);
        let y = p.add_var("y", -INF, INF);
        p.add_objective(x, 1.0, 0.0);
        p.add_objective(y, 1.0, 0.0);
        p.add_eq("sum", vec![(x, 1.0), (y, 1.0)], 1.0);
        let sol = solve_qp(&p, &opts());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] - 0.5).abs() < 1e-8);
        // 2x + λ = 0
        assert!((sol.eq_duals[0] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn small_lp_vertex() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0 -> (1.6, 1.2)
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, INF);
        let y = p.add_var("y", 0.0, INF);
        p.add_objective(x, 0.0, -1.0);
        p.add_objective(y, 0.0, -1.0);
        p.add_le("a", vec![(x, 1.0), (y, 2.0)], 4.0);
        p.add_le("b", vec![(x, 3.0), (y, 1.0)], 6.0);
        let sol = solve_qp(&p, &opts());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.6).abs() < 1e-7 && (sol.x[1] - 1.2).abs() < 1e-7);
        assert!((sol.objective + 2.8).abs() < 1e-7);
        assert!((sol.le_duals[0] - 0.4).abs() < 1e-6 && (sol.le_duals[1] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn fixed_variable_dual() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 3.0, 3.0);
        p.add_objective(x, 0.0, 5.0);
        let sol = solve_qp(&p, &opts());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
        assert!((sol.lower_duals[0] - 5.0).abs() < 1e-6 && sol.upper_duals[0] == 0.0);
    }

    #[test]
    fn badly_scaled_costs() {
        let mut p = ConvexProgram::new();
        let a = p.add_var("a", 0.1, 4.0);
        let b = p.add_var("b", 0.0, 4.0);
        p.add_objective(a, 430.0, 2000.0);
        p.add_objective(b, 1000.0, 4000.0);
        p.add_eq("demand", vec![(a, 1.0), (b, 1.0)], 2.59);
        let sol = solve_qp(&p, &opts());
        assert_eq!(sol.status, SolveStatus::Optimal);
        // equal marginal cost: 860a + 2000 = 2000b + 4000, a + b = 2.59
        let a_star = (2000.0 * 2.59 + 2000.0) / 2860.0;
        assert!((sol.x[0] - a_star).abs() < 1e-7, "{}", sol.x[0]);
    }

    #[test]
    fn empty_program() {
        let p = ConvexProgram::new();
        let sol = solve_qp(&p, &opts());
        assert_eq!(sol.status, SolveStatus::Optimal);
    }
}
