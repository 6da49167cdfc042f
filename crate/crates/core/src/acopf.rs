//! Reference AC-OPF solver, norm-1 feasibility projection and the
//! nearest-neighbor + Taylor pipeline.
//!
//! Both solvers share one successive linearization loop. Each iteration
//! anchors KT-AC at the current operating point, solves it inside a box
//! trust region on `(v, θ)`, then runs a power flow with the step's
//! generator outputs and voltage set points so that every accepted iterate
//! satisfies the nonlinear balance equations exactly. Limits that the power
//! flow cannot enforce directly (slack output, reactive outputs, load-bus
//! voltages, branch loadings) enter through an exact penalty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convexsolve::{solve_qp, QpOptions, SolveStatus};
use crate::learn::{knn_predict, LearnError, TrainingSet};
use crate::netmodel::{Branch, Bus, DemandProfile, Generator, Network};
use crate::powerflow::{solve_power_flow, OperatingPoint, PfError, PfOptions, PfSolution, PfSpec};
use crate::taylor::{
    build_dcopf, build_ktac_with, build_ktdc, taylor_coefficients, FlowLimitMode, KtAcOptions,
    TaylorCoefficients,
};

/// Active output per generator and voltage magnitude per generator bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub p: Vec<f64>,
    /// In [`Network::gen_buses`] order.
    pub v: Vec<f64>,
}

impl Dispatch {
    pub fn cost(&self, net: &Network) -> f64 {
        net.total_cost(&self.p)
    }

    pub fn fits(&self, net: &Network) -> bool {
        self.p.len() == net.n_generators()
            && self.v.len() == net.gen_buses().len()
            && self.p.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Power flow input that fixes this dispatch.
    pub fn pf_spec(&self, demand: &DemandProfile) -> PfSpec {
        PfSpec {
            demand: demand.clone(),
            gen_p: self.p.clone(),
            gen_v: self.v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FallbackReason {
    /// The convex program ended with this status instead of an optimum.
    Convex(SolveStatus),
    /// The power flow at the predicted dispatch diverged, so no anchor exists.
    PowerFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub dispatch: Dispatch,
    pub point: OperatingPoint,
    /// Generation cost of `dispatch`, in $/h.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fallback_used: bool,
    pub fallback_reason: Option<FallbackReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub delta_p: Vec<f64>,
    pub delta_v: Vec<f64>,
    pub projected: Dispatch,
    pub projected_cost: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcopfError {
    #[error("no feasible progress after {iterations} iterations (remaining violation {violation:.3e} p.u.)")]
    NoProgress { iterations: usize, violation: f64 },
    #[error("power flow restoration failed: {0}")]
    PfDivergence(#[from] PfError),
    #[error("input does not match the network: {0}")]
    Dimension(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcopfOptions {
    pub pf: PfOptions,
    pub qp: QpOptions,
    pub max_iter: usize,
    /// Largest change of any `v` or `θ` in the final convex step.
    pub step_tol: f64,
    /// Largest bound violation, in p.u., of the returned point.
    pub feas_tol: f64,
    pub initial_radius: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Limits are tightened by this much inside the convex steps so the
    /// returned point is strictly within the original ones.
    pub bound_margin: f64,
    /// Sides of the polygon used for lightly loaded branch ends.
    pub segments: usize,
}

impl Default for AcopfOptions {
    fn default() -> Self {
        AcopfOptions {
            pf: PfOptions::default(),
            qp: QpOptions {
                tol: 1e-10,
                ..QpOptions::default()
            },
            max_iter: 500,
            step_tol: 1e-7,
            feas_tol: 1e-9,
            initial_radius: 0.1,
            min_radius: 1e-8,
            max_radius: 0.5,
            bound_margin: 1e-7,
            segments: 12,
        }
    }
}

/// Largest bound violations of a power flow solution, in p.u., per family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Violations {
    pub p: f64,
    pub q: f64,
    pub v: f64,
    pub s: f64,
    /// Sum of all individual violations.
    pub total: f64,
}

impl Violations {
    pub fn max(&self) -> f64 {
        self.p.max(self.q).max(self.v).max(self.s)
    }
}

fn excess(x: f64, lo: f64, hi: f64) -> f64 {
    (lo - x).max(x - hi).max(0.0)
}

pub fn violations(net: &Network, sol: &PfSolution) -> Violations {
    let mut out = Violations::default();
    for (g, gen) in net.generators().iter().enumerate() {
        let ep = excess(sol.gen_p[g], gen.p_min, gen.p_max);
        let eq = excess(sol.gen_q[g], gen.q_min, gen.q_max);
        out.p = out.p.max(ep);
        out.q = out.q.max(eq);
        out.total += ep + eq;
    }
    for (b, bus) in net.buses().iter().enumerate() {
        let e = excess(sol.point.v[b], bus.v_min, bus.v_max);
        out.v = out.v.max(e);
        out.total += e;
    }
    for (l, br) in net.branches().iter().enumerate() {
        let Some(s_max) = br.s_max else { continue };
        let f = &sol.flows;
        for s in [f.p_from[l].hypot(f.q_from[l]), f.p_to[l].hypot(f.q_to[l])] {
            let e = (s - s_max).max(0.0);
            out.s = out.s.max(e);
            out.total += e;
        }
    }
    out
}

/// Copy of the network with new voltage, generator and branch limits.
fn adjust_limits(
    net: &Network,
    bus_limits: impl Fn(usize, &Bus) -> (f64, f64),
    gen_limits: impl Fn(usize, &Generator) -> ((f64, f64), (f64, f64)),
    branch_limit: impl Fn(usize, f64) -> f64,
) -> Network {
    let buses = net
        .buses()
        .iter()
        .enumerate()
        .map(|(b, bus)| {
            let (v_min, v_max) = bus_limits(b, bus);
            Bus {
                v_min,
                v_max,
                ..bus.clone()
            }
        })
        .collect();
    let generators = net
        .generators()
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            let ((p_min, p_max), (q_min, q_max)) = gen_limits(g, gen);
            Generator {
                p_min,
                p_max,
                q_min,
                q_max,
                ..gen.clone()
            }
        })
        .collect();
    let branches = net
        .branches()
        .iter()
        .enumerate()
        .map(|(l, br)| Branch {
            s_max: br.s_max.map(|s| branch_limit(l, s)),
            ..br.clone()
        })
        .collect();
    Network::new(
        net.name(),
        net.base_mva(),
        buses,
        branches,
        generators,
        net.slack_bus(),
    )
    .expect("same indices")
}

/// Copy of the network with every non-degenerate limit pulled inwards.
fn tightened(net: &Network, margin: f64) -> Network {
    let shrink = |lo: f64, hi: f64| {
        let m = if hi > lo {
            margin.min(0.25 * (hi - lo))
        } else {
            0.0
        };
        (lo + m, hi - m)
    };
    adjust_limits(
        net,
        |_, b| shrink(b.v_min, b.v_max),
        |_, g| (shrink(g.p_min, g.p_max), shrink(g.q_min, g.q_max)),
        |_, s| s - margin.min(0.25 * s),
    )
}

/// What the linearization loop minimizes besides the penalty.
enum Goal<'a> {
    Cost,
    /// `Σ |p_g − p̂_g| + Σ |v_n − v̂_n|` over generators and generator buses.
    Nearest(&'a Dispatch),
}

impl Goal<'_> {
    fn value(&self, net: &Network, sol: &PfSolution) -> f64 {
        match self {
            Goal::Cost => net.total_cost(&sol.gen_p),
            Goal::Nearest(d) => {
                let dp: f64 = sol.gen_p.iter().zip(&d.p).map(|(a, b)| (a - b).abs()).sum();
                let dv: f64 = net
                    .gen_buses()
                    .iter()
                    .zip(&d.v)
                    .map(|(&b, v)| (sol.point.v[b] - v).abs())
                    .sum();
                dp + dv
            }
        }
    }

    /// Typical price of one p.u. of objective change.
    fn scale(&self, net: &Network) -> f64 {
        match self {
            Goal::Cost => net
                .generators()
                .iter()
                .map(|g| {
                    g.marginal_cost(g.p_max)
                        .abs()
                        .max(g.marginal_cost(g.p_min).abs())
                })
                .fold(1.0, f64::max),
            Goal::Nearest(_) => 1.0,
        }
    }
}

struct Iterate {
    sol: PfSolution,
    goal: f64,
    viol: Violations,
}

impl Iterate {
    fn new(net: &Network, goal: &Goal, sol: PfSolution) -> Self {
        Iterate {
            goal: goal.value(net, &sol),
            viol: violations(net, &sol),
            sol,
        }
    }

    fn merit(&self, mu: f64) -> f64 {
        self.goal + mu * self.viol.total
    }
}

fn clamp_dispatch(net: &Network, p: &mut [f64], v: &mut [f64]) {
    for (x, g) in p.iter_mut().zip(net.generators()) {
        *x = x.clamp(g.p_min, g.p_max);
    }
    for (x, &b) in v.iter_mut().zip(net.gen_buses()) {
        let bus = &net.buses()[b];
        *x = x.clamp(bus.v_min, bus.v_max);
    }
}

fn slp(
    net: &Network,
    demand: &DemandProfile,
    goal: Goal,
    start: PfSolution,
    opts: &AcopfOptions,
) -> Result<(Iterate, usize), AcopfError> {
    let inner = tightened(net, opts.bound_margin);
    let scale = goal.scale(net);
    let (mut mu, mu_cap) = match goal {
        Goal::Cost => (10.0 * scale, 1e5 * scale),
        Goal::Nearest(_) => (1e2, 1e6),
    };
    let prox = match goal {
        Goal::Cost => 0.1 * scale,
        Goal::Nearest(_) => 0.1,
    };
    let mut cur = Iterate::new(net, &goal, start);
    let mut rho = opts.initial_radius;
    let no_progress = |iterations: usize, cur: &Iterate| AcopfError::NoProgress {
        iterations,
        violation: cur.viol.max(),
    };

    for it in 1..=opts.max_iter {
        if rho < opts.min_radius {
            return Err(no_progress(it, &cur));
        }
        let coeffs = taylor_coefficients(net, &cur.sol.point);
        let sub = Subproblem {
            net,
            demand,
            goal: &goal,
            coeffs: &coeffs,
            anchor: &cur.sol.point,
            rho,
            mu,
            prox,
            opts,
        };
        let Some(step) = sub.solve(&inner) else {
            rho *= 0.5;
            continue;
        };
        let feasible = cur.viol.max() <= opts.feas_tol;
        if step.size < opts.step_tol && feasible {
            return Ok((cur, it));
        }

        let before = cur.merit(mu);
        let predicted = before - step.model_value;
        // below this the predicted reduction is indistinguishable from the
        // convex solver's own tolerance
        let noise = 10.0 * opts.qp.tol * (1.0 + before.abs());
        let trial = step.restore(net, &inner, demand, &goal, &cur, opts);
        if predicted > noise {
            match trial {
                Some(t) if before - t.merit(mu) >= 0.1 * predicted => {
                    let ratio = (before - t.merit(mu)) / predicted;
                    cur = t;
                    if ratio >= 0.75 {
                        rho = (rho * 1.5).min(opts.max_radius);
                    }
                }
                _ => rho = 0.5 * rho.min(step.size),
            }
        } else if feasible
            || trial
                .as_ref()
                .is_some_and(|t| t.viol.max() <= opts.feas_tol)
        {
            // stationary up to noise: keep any step that does not hurt and
            // close the region so the steps die out
            if let Some(t) = trial.filter(|t| before - t.merit(mu) >= -noise) {
                cur = t;
            }
            rho = 0.5 * rho.min(step.size);
        } else {
            // the penalty is too cheap to remove the remaining violation
            if mu >= mu_cap {
                return Err(no_progress(it, &cur));
            }
            mu *= 10.0;
        }
    }
    Err(no_progress(opts.max_iter, &cur))
}

/// One convex subproblem of the linearization loop.
struct Subproblem<'a> {
    net: &'a Network,
    demand: &'a DemandProfile,
    goal: &'a Goal<'a>,
    coeffs: &'a TaylorCoefficients,
    anchor: &'a OperatingPoint,
    rho: f64,
    mu: f64,
    prox: f64,
    opts: &'a AcopfOptions,
}

struct Step {
    p: Vec<f64>,
    v: Vec<f64>,
    /// Largest change of any `v` or `θ`.
    size: f64,
    /// Goal plus penalty at the step, without the proximal term.
    model_value: f64,
}

impl Subproblem<'_> {
    fn solve(&self, limits: &Network) -> Option<Step> {
        let net = self.net;
        let ktac = KtAcOptions {
            flow_limits: FlowLimitMode::Tangent {
                segments: self.opts.segments,
                threshold: 0.2,
            },
            elastic_penalty: Some(self.mu),
            voltage_prox: self.prox,
            cost_weight: if matches!(self.goal, Goal::Cost) {
                1.0
            } else {
                0.0
            },
        };
        let model = build_ktac_with(limits, self.demand, self.coeffs, &ktac);
        let mut prog = model.program;
        let lay = model.layout;
        let (anchor, rho) = (self.anchor, self.rho);

        for (b, bus) in limits.buses().iter().enumerate() {
            let (mut lo, mut hi) = (anchor.v[b] - rho, anchor.v[b] + rho);
            if net.gen_bus_slot(b).is_some() {
                lo = lo.max(bus.v_min);
                hi = hi.min(bus.v_max);
                if lo > hi {
                    let edge = anchor.v[b].clamp(bus.v_min, bus.v_max);
                    (lo, hi) = (edge, edge);
                }
            }
            prog.set_bounds(lay.v[b], lo, hi);
            if b != net.slack_bus() {
                prog.set_bounds(lay.theta[b], anchor.theta[b] - rho, anchor.theta[b] + rho);
            }
        }
        if let Goal::Nearest(target) = self.goal {
            let mut pairs: Vec<(usize, f64)> = lay
                .p_g
                .iter()
                .copied()
                .zip(target.p.iter().copied())
                .collect();
            pairs.extend(
                net.gen_buses()
                    .iter()
                    .map(|&b| lay.v[b])
                    .zip(target.v.iter().copied()),
            );
            for (k, (j, aim)) in pairs.into_iter().enumerate() {
                let t = prog.add_var(format!("dev{k}"), 0.0, f64::INFINITY);
                prog.add_objective(t, 0.0, 1.0);
                prog.add_le(format!("dev_hi{k}"), vec![(j, 1.0), (t, -1.0)], aim);
                prog.add_le(format!("dev_lo{k}"), vec![(j, -1.0), (t, -1.0)], -aim);
            }
        }

        let qp = solve_qp(&prog, &self.opts.qp);
        if qp.status != SolveStatus::Optimal {
            return None;
        }
        let x = &qp.x;
        let mut size = 0.0f64;
        let mut prox_value = 0.0;
        for b in 0..net.n_buses() {
            let dv = x[lay.v[b]] - anchor.v[b];
            prox_value += self.prox * dv * dv;
            size = size
                .max(dv.abs())
                .max((x[lay.theta[b]] - anchor.theta[b]).abs());
        }
        Some(Step {
            p: lay.p_g.iter().map(|&j| x[j]).collect(),
            v: net.gen_buses().iter().map(|&b| x[lay.v[b]]).collect(),
            size,
            model_value: qp.objective - prox_value,
        })
    }
}

impl Step {
    /// Power flow at the step's generator outputs and voltage set points.
    fn restore(
        &self,
        net: &Network,
        inner: &Network,
        demand: &DemandProfile,
        goal: &Goal,
        cur: &Iterate,
        opts: &AcopfOptions,
    ) -> Option<Iterate> {
        let (mut p, mut v) = (self.p.clone(), self.v.clone());
        clamp_dispatch(inner, &mut p, &mut v);
        let spec = PfSpec {
            demand: demand.clone(),
            gen_p: p,
            gen_v: v,
        };
        let sol = solve_power_flow(net, &spec, &opts.pf, Some(&cur.sol.point)).ok()?;
        Some(Iterate::new(net, goal, sol))
    }
}

/// DC-OPF dispatch with flat voltages at every generator bus.
pub fn dcopf_dispatch(net: &Network, demand: &DemandProfile, qp: &QpOptions) -> Option<Dispatch> {
    let model = build_dcopf(net, demand);
    let sol = solve_qp(&model.program, qp);
    sol.is_optimal().then(|| Dispatch {
        p: model.layout.p_g.iter().map(|&j| sol.x[j]).collect(),
        v: vec![1.0; net.gen_buses().len()],
    })
}

/// Starting power flow for the linearization loop: DC-OPF outputs (or a
/// proportional split if DC-OPF fails) and the case file voltage set points
/// clamped to their limits.
fn initial_flow(
    net: &Network,
    demand: &DemandProfile,
    opts: &AcopfOptions,
) -> Result<PfSolution, PfError> {
    let mut p = match dcopf_dispatch(net, demand, &opts.qp) {
        Some(d) => d.p,
        None => {
            let lo: f64 = net.generators().iter().map(|g| g.p_min).sum();
            let width: f64 = net.generators().iter().map(|g| g.p_max - g.p_min).sum();
            let frac = if width > 0.0 {
                ((demand.total_p() - lo) / width).clamp(0.0, 1.0)
            } else {
                0.0
            };
            net.generators()
                .iter()
                .map(|g| g.p_min + frac * (g.p_max - g.p_min))
                .collect()
        }
    };
    let mut v: Vec<f64> = net
        .gen_buses()
        .iter()
        .map(|&b| net.generators()[net.gens_at_bus(b)[0]].v_setpoint)
        .collect();
    let inner = tightened(net, opts.bound_margin);
    clamp_dispatch(&inner, &mut p, &mut v);
    let spec = PfSpec {
        demand: demand.clone(),
        gen_p: p,
        gen_v: v,
    };
    solve_power_flow(net, &spec, &opts.pf, None).or_else(|e| {
        let mut flat = PfSpec {
            gen_v: vec![1.0; spec.gen_v.len()],
            ..spec.clone()
        };
        clamp_dispatch(&inner, &mut flat.gen_p, &mut flat.gen_v);
        solve_power_flow(net, &flat, &opts.pf, None).map_err(|_| e)
    })
}

fn check_demand(net: &Network, demand: &DemandProfile) -> Result<(), AcopfError> {
    if demand.p.len() != net.n_buses() || demand.q.len() != net.n_buses() {
        return Err(AcopfError::Dimension(format!(
            "demand has {} entries, network has {} buses",
            demand.p.len(),
            net.n_buses()
        )));
    }
    Ok(())
}

fn dispatch_of(net: &Network, sol: &PfSolution) -> Dispatch {
    Dispatch {
        p: sol.gen_p.clone(),
        v: net.gen_buses().iter().map(|&b| sol.point.v[b]).collect(),
    }
}

/// Locally optimal AC-OPF solution.
pub fn solve_acopf(
    net: &Network,
    demand: &DemandProfile,
    opts: &AcopfOptions,
) -> Result<SolveReport, AcopfError> {
    check_demand(net, demand)?;
    let start = initial_flow(net, demand, opts)?;
    let (best, iterations) = slp(net, demand, Goal::Cost, start, opts)?;
    Ok(SolveReport {
        dispatch: dispatch_of(net, &best.sol),
        objective: best.goal,
        point: best.sol.point,
        iterations,
        converged: true,
        fallback_used: false,
        fallback_reason: None,
    })
}

/// AC-feasible dispatch closest to `dispatch` in the norm-1 sense.
pub fn project_feasible(
    net: &Network,
    demand: &DemandProfile,
    dispatch: &Dispatch,
    opts: &AcopfOptions,
) -> Result<ProjectionResult, AcopfError> {
    check_demand(net, demand)?;
    if !dispatch.fits(net) {
        return Err(AcopfError::Dimension(
            "dispatch does not match the generators".into(),
        ));
    }
    let inner = tightened(net, opts.bound_margin);
    let mut start = dispatch.clone();
    clamp_dispatch(&inner, &mut start.p, &mut start.v);
    let first = solve_power_flow(net, &start.pf_spec(demand), &opts.pf, None)
        .or_else(|_| initial_flow(net, demand, opts))
        .map_err(|_| AcopfError::NoProgress {
            iterations: 0,
            violation: f64::INFINITY,
        })?;
    let (best, iterations) = slp(net, demand, Goal::Nearest(dispatch), first, opts)?;
    let target = dispatch_of(net, &best.sol);
    let delta_p: Vec<f64> = target
        .p
        .iter()
        .zip(&dispatch.p)
        .map(|(a, b)| a - b)
        .collect();
    let delta_v: Vec<f64> = target
        .v
        .iter()
        .zip(&dispatch.v)
        .map(|(a, b)| a - b)
        .collect();
    let projected = Dispatch {
        p: dispatch
            .p
            .iter()
            .zip(&delta_p)
            .map(|(a, d)| a + d)
            .collect(),
        v: dispatch
            .v
            .iter()
            .zip(&delta_v)
            .map(|(a, d)| a + d)
            .collect(),
    };
    Ok(ProjectionResult {
        projected_cost: projected.cost(net),
        delta_p,
        delta_v,
        projected,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    KtAc,
    KtDc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub k: usize,
    pub segments: usize,
    pub standardize: bool,
    pub pf: PfOptions,
    pub qp: QpOptions,
    /// Weight of the pull toward the anchor voltages in KT-AC, relative to
    /// the largest marginal cost. Only meant to break ties.
    pub voltage_tiebreak: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            k: 100,
            segments: 12,
            standardize: false,
            pf: PfOptions::default(),
            qp: QpOptions::default(),
            voltage_tiebreak: 1e-3,
        }
    }
}

/// Nearest neighbors, power flow anchor, Taylor model, convex solve, and the
/// KNN dispatch as fallback whenever the model cannot be solved.
pub fn kt_pipeline(
    net: &Network,
    trainset: &TrainingSet,
    demand: &DemandProfile,
    variant: Variant,
    opts: &PipelineOptions,
) -> Result<SolveReport, AcopfError> {
    check_demand(net, demand)?;
    let guess = knn_predict(trainset, demand, opts.k, opts.standardize)?;
    let fallback = |reason: FallbackReason, point: OperatingPoint, iterations: usize| SolveReport {
        objective: guess.cost(net),
        dispatch: guess.clone(),
        point,
        iterations,
        converged: false,
        fallback_used: true,
        fallback_reason: Some(reason),
    };
    let anchor = match solve_power_flow(net, &guess.pf_spec(demand), &opts.pf, None) {
        Ok(sol) => sol.point,
        Err(_) => {
            return Ok(fallback(
                FallbackReason::PowerFlow,
                OperatingPoint::flat(net.n_buses()),
                0,
            ))
        }
    };
    let coeffs = taylor_coefficients(net, &anchor);
    let model = match variant {
        Variant::KtAc => {
            let scale = Goal::Cost.scale(net);
            let ktac = KtAcOptions {
                flow_limits: FlowLimitMode::Polygon {
                    segments: opts.segments,
                },
                voltage_prox: opts.voltage_tiebreak * scale,
                ..KtAcOptions::default()
            };
            build_ktac_with(net, demand, &coeffs, &ktac)
        }
        Variant::KtDc => build_ktdc(net, demand, &coeffs),
    };
    let sol = solve_qp(&model.program, &opts.qp);
    if !sol.is_optimal() {
        return Ok(fallback(
            FallbackReason::Convex(sol.status),
            anchor,
            sol.iterations,
        ));
    }
    let lay = &model.layout;
    let p: Vec<f64> = lay.p_g.iter().map(|&j| sol.x[j]).collect();
    let (v, point) = match variant {
        Variant::KtAc => (
            net.gen_buses().iter().map(|&b| sol.x[lay.v[b]]).collect(),
            OperatingPoint {
                v: lay.v.iter().map(|&j| sol.x[j]).collect(),
                theta: lay.theta.iter().map(|&j| sol.x[j]).collect(),
            },
        ),
        Variant::KtDc => (
            guess.v.clone(),
            OperatingPoint {
                v: anchor.v.clone(),
                theta: lay.theta.iter().map(|&j| sol.x[j]).collect(),
            },
        ),
    };
    let dispatch = Dispatch { p, v };
    Ok(SolveReport {
        objective: dispatch.cost(net),
        dispatch,
        point,
        iterations: sol.iterations,
        converged: true,
        fallback_used: false,
        fallback_reason: None,
    })
}
