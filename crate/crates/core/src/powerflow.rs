//! Nonlinear branch flow evaluation and Newton-Raphson AC power flow.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BranchConstants, DemandProfile, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl OperatingPoint {
    pub fn flat(n: usize) -> Self {
        Self {
            v: vec![1.0; n],
            theta: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchFlows {
    pub p_from: Vec<f64>,
    pub q_from: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
}

/// Flows `(p_from, q_from, p_to, q_to)` of one branch; `theta_nm` is the
/// from-bus angle minus the to-bus angle.
pub fn branch_flow(c: &BranchConstants, vn: f64, vm: f64, theta_nm: f64) -> [f64; 4] {
    let (s, co) = theta_nm.sin_cos();
    let vv = vn * vm;
    // theta_mn = -theta_nm
    [
        vn * vn * c.g_ff + vv * (c.g_ft * co + c.b_ft * s),
        -vn * vn * c.b_ff + vv * (c.g_ft * s - c.b_ft * co),
        vm * vm * c.g_tt + vv * (c.g_tf * co - c.b_tf * s),
        -vm * vm * c.b_tt + vv * (-c.g_tf * s - c.b_tf * co),
    ]
}

pub fn evaluate_branch_flows(net: &Network, point: &OperatingPoint) -> BranchFlows {
    let nl = net.n_branches();
    let mut flows = BranchFlows {
        p_from: Vec::with_capacity(nl),
        q_from: Vec::with_capacity(nl),
        p_to: Vec::with_capacity(nl),
        q_to: Vec::with_capacity(nl),
    };
    for (br, c) in net.branches().iter().zip(net.constants()) {
        let (n, m) = (br.from_bus, br.to_bus);
        let [pf, qf, pt, qt] =
            branch_flow(c, point.v[n], point.v[m], point.theta[n] - point.theta[m]);
        flows.p_from.push(pf);
        flows.q_from.push(qf);
        flows.p_to.push(pt);
        flows.q_to.push(qt);
    }
    flows
}

/// Power leaving each bus through shunts and branches, `(p, q)`.
pub fn bus_withdrawals(
    net: &Network,
    point: &OperatingPoint,
    flows: &BranchFlows,
) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = net
        .buses()
        .iter()
        .zip(&point.v)
        .map(|(b, v)| v * v * b.g_shunt)
        .collect();
    let mut q: Vec<f64> = net
        .buses()
        .iter()
        .zip(&point.v)
        .map(|(b, v)| -v * v * b.b_shunt)
        .collect();
    for (l, br) in net.branches().iter().enumerate() {
        p[br.from_bus] += flows.p_from[l];
        q[br.from_bus] += flows.q_from[l];
        p[br.to_bus] += flows.p_to[l];
        q[br.to_bus] += flows.q_to[l];
    }
    (p, q)
}

/// Nodal balance residuals, laid out as `[p_0..p_n, q_0..q_n]`.
///
/// `injection_p` and `injection_q` hold the generation connected to each
/// bus. A residual is generation minus demand minus shunt absorption minus
/// the flows leaving the bus.
pub fn nodal_residuals(
    net: &Network,
    point: &OperatingPoint,
    demand: &DemandProfile,
    injection_p: &[f64],
    injection_q: &[f64],
) -> Vec<f64> {
    let flows = evaluate_branch_flows(net, point);
    let (wp, wq) = bus_withdrawals(net, point, &flows);
    let n = net.n_buses();
    let mut r = Vec::with_capacity(2 * n);
    r.extend((0..n).map(|i| injection_p[i] - demand.p[i] - wp[i]));
    r.extend((0..n).map(|i| injection_q[i] - demand.q[i] - wq[i]));
    r
}

/// Sums per-generator outputs into per-bus injections.
pub fn gen_injections(net: &Network, per_gen: &[f64]) -> Vec<f64> {
    let mut inj = vec![0.0; net.n_buses()];
    for (g, gen) in net.generators().iter().enumerate() {
        inj[gen.bus] += per_gen[g];
    }
    inj
}

/// Inputs of a power flow: slack bus angle reference, PV buses at every
/// other generator bus, PQ buses elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PfSpec {
    pub demand: DemandProfile,
    /// Active output per generator; the slack generator's entry is ignored.
    pub gen_p: Vec<f64>,
    /// Voltage magnitude per generator bus, in [`Network::gen_buses`] order.
    pub gen_v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub point: OperatingPoint,
    pub flows: BranchFlows,
    /// Active output per generator with the slack generator filled in.
    pub gen_p: Vec<f64>,
    /// Reactive output per generator.
    pub gen_q: Vec<f64>,
    /// Reactive output per generator bus.
    pub bus_q: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error(
        "power flow did not converge after {iterations} iterations (mismatch {final_mismatch:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        final_mismatch: f64,
    },
    #[error("singular power flow jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("power flow input has wrong dimensions: {0}")]
    Dimension(String),
    #[error("network has no slack generator")]
    NoSlackGenerator,
}

/// Splits the reactive output of a bus over its generators so that every
/// unit sits at the same fraction of its reactive range.
pub fn split_reactive(net: &Network, bus_q: &[f64]) -> Vec<f64> {
    let mut gen_q = vec![0.0; net.n_generators()];
    for (slot, &bus) in net.gen_buses().iter().enumerate() {
        let gens = net.gens_at_bus(bus);
        if let [g] = gens {
            gen_q[*g] = bus_q[slot];
            continue;
        }
        let qmin: f64 = gens.iter().map(|&g| net.generators()[g].q_min).sum();
        let range: f64 = gens
            .iter()
            .map(|&g| net.generators()[g].q_max - net.generators()[g].q_min)
            .sum();
        if range.is_finite() && range > 1e-12 {
            let frac = (bus_q[slot] - qmin) / range;
            for &g in gens {
                let gen = &net.generators()[g];
                gen_q[g] = gen.q_min + frac * (gen.q_max - gen.q_min);
            }
        } else {
            for &g in gens {
                gen_q[g] = bus_q[slot] / gens.len() as f64;
            }
        }
    }
    gen_q
}

/// Solves the AC power flow by Newton-Raphson with an analytic jacobian.
///
/// Starts from `start` when given, otherwise from a flat profile. Generator
/// bus magnitudes are always overwritten with the set points.
pub fn solve_power_flow(
    net: &Network,
    spec: &PfSpec,
    opts: &PfOptions,
    start: Option<&OperatingPoint>,
) -> Result<PfSolution, PfError> {
    let n = net.n_buses();
    let slack = net.slack_bus();
    let slack_gen = net.slack_gen().ok_or(PfError::NoSlackGenerator)?;
    if spec.demand.len() != n
        || spec.demand.q.len() != n
        || spec.gen_p.len() != net.n_generators()
        || spec.gen_v.len() != net.gen_buses().len()
    {
        return Err(PfError::Dimension(format!(
            "expected {n} buses, {} generators, {} generator buses",
            net.n_generators(),
            net.gen_buses().len()
        )));
    }

    let mut point = match start {
        Some(p) if p.v.len() == n && p.theta.len() == n => p.clone(),
        _ => OperatingPoint::flat(n),
    };
    point.theta[slack] = 0.0;
    for (slot, &bus) in net.gen_buses().iter().enumerate() {
        point.v[bus] = spec.gen_v[slot];
    }

    // scheduled injections
    let mut sched_p: Vec<f64> = spec.demand.p.iter().map(|d| -d).collect();
    let sched_q: Vec<f64> = spec.demand.q.iter().map(|d| -d).collect();
    for (g, gen) in net.generators().iter().enumerate() {
        if g != slack_gen {
            sched_p[gen.bus] += spec.gen_p[g];
        }
    }

    // unknown layout: angles of all non-slack buses, then magnitudes of PQ buses
    let mut theta_col = vec![usize::MAX; n];
    let mut v_col = vec![usize::MAX; n];
    let mut cols = 0;
    for b in (0..n).filter(|&b| b != slack) {
        theta_col[b] = cols;
        cols += 1;
    }
    for b in (0..n).filter(|&b| net.gen_bus_slot(b).is_none()) {
        v_col[b] = cols;
        cols += 1;
    }
    // equation rows mirror the unknowns: P at non-slack buses, Q at PQ buses
    let p_row = &theta_col;
    let q_row = &v_col;

    let mismatch = |point: &OperatingPoint| -> (DVector<f64>, f64, BranchFlows) {
        let flows = evaluate_branch_flows(net, point);
        let (wp, wq) = bus_withdrawals(net, point, &flows);
        let mut f = DVector::zeros(cols);
        for b in 0..n {
            if p_row[b] != usize::MAX {
                f[p_row[b]] = wp[b] - sched_p[b];
            }
            if q_row[b] != usize::MAX {
                f[q_row[b]] = wq[b] - sched_q[b];
            }
        }
        let norm = f.iter().fold(
            0.0f64,
            |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) },
        );
        (f, norm, flows)
    };

    let (mut f, mut norm, mut flows) = mismatch(&point);
    let mut iterations = 0;
    loop {
        if norm < opts.tol {
            break;
        }
        if iterations >= opts.max_iter || !norm.is_finite() {
            return Err(PfError::NonConvergence {
                iterations,
                final_mismatch: norm,
            });
        }
        let jac = jacobian(net, &point, cols, p_row, q_row, &theta_col, &v_col);
        let step = jac
            .lu()
            .solve(&f)
            .ok_or(PfError::SingularJacobian(iterations))?;
        for b in 0..n {
            if theta_col[b] != usize::MAX {
                point.theta[b] -= step[theta_col[b]];
            }
            if v_col[b] != usize::MAX {
                point.v[b] -= step[v_col[b]];
            }
        }
        iterations += 1;
        if point.v.iter().any(|&v| !(v > 0.0)) {
            return Err(PfError::NonConvergence {
                iterations,
                final_mismatch: f64::INFINITY,
            });
        }
        (f, norm, flows) = mismatch(&point);
    }

    let (wp, wq) = bus_withdrawals(net, &point, &flows);
    let mut gen_p = spec.gen_p.clone();
    let others_at_slack: f64 = net
        .gens_at_bus(slack)
        .iter()
        .filter(|&&g| g != slack_gen)
        .map(|&g| spec.gen_p[g])
        .sum();
    gen_p[slack_gen] = wp[slack] + spec.demand.p[slack] - others_at_slack;
    let bus_q: Vec<f64> = net
        .gen_buses()
        .iter()
        .map(|&b| wq[b] + spec.demand.q[b])
        .collect();
    let gen_q = split_reactive(net, &bus_q);
    Ok(PfSolution {
        point,
        flows,
        gen_p,
        gen_q,
        bus_q,
        iterations,
        max_mismatch: norm,
    })
}

/// Partials of the four branch flows with respect to
/// `(v_from, v_to, theta_from)`; the `theta_to` partial is the negated angle
/// partial.
pub(crate) fn branch_flow_partials(
    c: &BranchConstants,
    vn: f64,
    vm: f64,
    theta_nm: f64,
) -> [[f64; 3]; 4] {
    let (s, co) = theta_nm.sin_cos();
    let vv = vn * vm;
    let a_f = c.g_ft * co + c.b_ft * s;
    let b_f = c.g_ft * s - c.b_ft * co;
    // to-end terms use theta_mn = -theta_nm
    let a_t = c.g_tf * co - c.b_tf * s;
    let b_t = -c.g_tf * s - c.b_tf * co;
    [
        [2.0 * c.g_ff * vn + vm * a_f, vn * a_f, -vv * b_f],
        [-2.0 * c.b_ff * vn + vm * b_f, vn * b_f, vv * a_f],
        // d/dtheta_n of a function of theta_mn flips sign
        [vm * a_t, 2.0 * c.g_tt * vm + vn * a_t, vv * b_t],
        [vm * b_t, -2.0 * c.b_tt * vm + vn * b_t, -vv * a_t],
    ]
}

fn jacobian(
    net: &Network,
    point: &OperatingPoint,
    cols: usize,
    p_row: &[usize],
    q_row: &[usize],
    theta_col: &[usize],
    v_col: &[usize],
) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(cols, cols);
    let mut add = |row: usize, col: usize, val: f64| {
        if row != usize::MAX && col != usize::MAX {
            j[(row, col)] += val;
        }
    };
    for (b, bus) in net.buses().iter().enumerate() {
        add(p_row[b], v_col[b], 2.0 * point.v[b] * bus.g_shunt);
        add(q_row[b], v_col[b], -2.0 * point.v[b] * bus.b_shunt);
    }
    for (br, c) in net.branches().iter().zip(net.constants()) {
        let (n, m) = (br.from_bus, br.to_bus);
        let d = branch_flow_partials(c, point.v[n], point.v[m], point.theta[n] - point.theta[m]);
        for (k, row) in [p_row[n], q_row[n], p_row[m], q_row[m]]
            .into_iter()
            .enumerate()
        {
            add(row, v_col[n], d[k][0]);
            add(row, v_col[m], d[k][1]);
            add(row, theta_col[n], d[k][2]);
            add(row, theta_col[m], -d[k][2]);
        }
    }
    j
}
