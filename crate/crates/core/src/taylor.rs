//! First-order Taylor expansion of the branch flow equations and the three
//! convex OPF programs built on it: DC-OPF, KT-DC and KT-AC.

use serde::{Deserialize, Serialize};

use crate::convexsolve::{polygonize_circle, ConvexProgram};
use crate::netmodel::{DemandProfile, Network};
use crate::powerflow::{branch_flow, OperatingPoint};

/// Partial derivatives of one branch's flows at the anchor point.
///
/// From-end partials are taken with respect to `(v_n, v_m, θ_nm)` and to-end
/// partials with respect to `(v_m, v_n, θ_mn)`, where `n` is the from bus and
/// `m` the to bus.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchPartials {
    pub dpf_dvn: f64,
    pub dpf_dvm: f64,
    pub dpf_dth: f64,
    pub dqf_dvn: f64,
    pub dqf_dvm: f64,
    pub dqf_dth: f64,
    pub dpt_dvm: f64,
    pub dpt_dvn: f64,
    pub dpt_dth: f64,
    pub dqt_dvm: f64,
    pub dqt_dvn: f64,
    pub dqt_dth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorCoefficients {
    pub anchor: OperatingPoint,
    pub partials: Vec<BranchPartials>,
    /// Anchor flows `[p_from, q_from, p_to, q_to]` per branch.
    pub flows: Vec<[f64; 4]>,
}

impl TaylorCoefficients {
    /// Linearized flows `[p_from, q_from, p_to, q_to]` of branch `l` at an
    /// arbitrary point.
    pub fn linear_flows(&self, net: &Network, l: usize, point: &OperatingPoint) -> [f64; 4] {
        let br = &net.branches()[l];
        let (n, m) = (br.from_bus, br.to_bus);
        let a = &self.anchor;
        let dvn = point.v[n] - a.v[n];
        let dvm = point.v[m] - a.v[m];
        let dth = (point.theta[n] - point.theta[m]) - (a.theta[n] - a.theta[m]);
        let d = &self.partials[l];
        let f = &self.flows[l];
        [
            f[0] + d.dpf_dvn * dvn + d.dpf_dvm * dvm + d.dpf_dth * dth,
            f[1] + d.dqf_dvn * dvn + d.dqf_dvm * dvm + d.dqf_dth * dth,
            f[2] + d.dpt_dvn * dvn + d.dpt_dvm * dvm - d.dpt_dth * dth,
            f[3] + d.dqt_dvn * dvn + d.dqt_dvm * dvm - d.dqt_dth * dth,
        ]
    }
}

/// Evaluates the flow partials of every branch at `point`.
pub fn taylor_coefficients(net: &Network, point: &OperatingPoint) -> TaylorCoefficients {
    let mut partials = Vec::with_capacity(net.n_branches());
    let mut flows = Vec::with_capacity(net.n_branches());
    for (br, c) in net.branches().iter().zip(net.constants()) {
        let (n, m) = (br.from_bus, br.to_bus);
        let (vn, vm) = (point.v[n], point.v[m]);
        let th_nm = point.theta[n] - point.theta[m];
        let (s_nm, c_nm) = th_nm.sin_cos();
        // sin θ_mn = −sin θ_nm, cos θ_mn = cos θ_nm
        let (s_mn, c_mn) = (-s_nm, c_nm);
        let vv = vn * vm;
        let af = c.g_ft * c_nm + c.b_ft * s_nm;
        let bf = c.g_ft * s_nm - c.b_ft * c_nm;
        let at = c.g_tf * c_mn + c.b_tf * s_mn;
        let bt = c.g_tf * s_mn - c.b_tf * c_mn;
        partials.push(BranchPartials {
            dpf_dvn: 2.0 * c.g_ff * vn + vm * af,
            dpf_dvm: vn * af,
            dpf_dth: vv * (-c.g_ft * s_nm + c.b_ft * c_nm),
            dqf_dvn: -2.0 * c.b_ff * vn + vm * bf,
            dqf_dvm: vn * bf,
            dqf_dth: vv * af,
            dpt_dvm: 2.0 * c.g_tt * vm + vn * at,
            dpt_dvn: vm * at,
            dpt_dth: vv * (-c.g_tf * s_mn + c.b_tf * c_mn),
            dqt_dvm: -2.0 * c.b_tt * vm + vn * bt,
            dqt_dvn: vm * bt,
            dqt_dth: vv * at,
        });
        flows.push(branch_flow(c, vn, vm, th_nm));
    }
    TaylorCoefficients {
        anchor: point.clone(),
        partials,
        flows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Dc,
    KtDc,
    KtAc,
}

/// Where each family of decision variables lives in the program, plus the
/// nodal balance rows. Families a model does not use are empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    /// Per generator.
    pub p_g: Vec<usize>,
    pub q_g: Vec<usize>,
    /// Per branch.
    pub p_from: Vec<usize>,
    pub q_from: Vec<usize>,
    pub p_to: Vec<usize>,
    pub q_to: Vec<usize>,
    /// Per bus.
    pub v: Vec<usize>,
    pub theta: Vec<usize>,
    /// Penalized bound relaxations, see [`KtAcOptions::elastic_penalty`].
    pub elastic: Vec<usize>,
    /// Equality row index of the active and reactive balance per bus.
    pub balance_p: Vec<usize>,
    pub balance_q: Vec<usize>,
}

impl Layout {
    /// True when every variable index below `n_vars` appears in exactly one
    /// family.
    pub fn covers_exactly(&self, n_vars: usize) -> bool {
        let mut seen = vec![0u8; n_vars];
        for family in [
            &self.p_g,
            &self.q_g,
            &self.p_from,
            &self.q_from,
            &self.p_to,
            &self.q_to,
            &self.v,
            &self.theta,
            &self.elastic,
        ] {
            for &j in family {
                if j >= n_vars {
                    return false;
                }
                seen[j] += 1;
            }
        }
        seen.iter().all(|&c| c == 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifacts {
    pub program: ConvexProgram,
    pub layout: Layout,
    pub kind: ModelKind,
}

/// How apparent-power limits enter KT-AC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FlowLimitMode {
    /// Inscribed regular polygon with the given number of sides.
    Polygon { segments: usize },
    /// First-order expansion of `sqrt(p² + q²) ≤ s̄` at the anchor flow, used
    /// on branch ends loaded to at least `threshold·s̄`; lighter ends get the
    /// polygon.
    Tangent { segments: usize, threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KtAcOptions {
    pub flow_limits: FlowLimitMode,
    /// When set, the slack generator's active limits, all reactive limits,
    /// the voltage limits of buses without generators and the flow limits
    /// become soft, with violations charged at this price per p.u.
    pub elastic_penalty: Option<f64>,
    /// Weight of `Σ (v_n − ṽ_n)²` added to the objective. A small value picks
    /// the solution nearest the anchor when the voltages are otherwise
    /// undetermined.
    pub voltage_prox: f64,
    /// Multiplier on the generation cost. Zero leaves only the penalty and
    /// proximal terms, for callers that add their own objective.
    pub cost_weight: f64,
}

impl Default for KtAcOptions {
    fn default() -> Self {
        KtAcOptions {
            flow_limits: FlowLimitMode::Polygon { segments: 12 },
            elastic_penalty: None,
            voltage_prox: 0.0,
            cost_weight: 1.0,
        }
    }
}

const INF: f64 = f64::INFINITY;

fn add_generators(net: &Network, prog: &mut ConvexProgram, layout: &mut Layout, weight: f64) {
    for (g, gen) in net.generators().iter().enumerate() {
        let j = prog.add_var(format!("p_g{}", g + 1), gen.p_min, gen.p_max);
        prog.add_objective(j, weight * gen.cost_quadratic, weight * gen.cost_linear);
        prog.add_constant(weight * gen.cost_constant);
        layout.p_g.push(j);
    }
}

fn add_angles(net: &Network, prog: &mut ConvexProgram, layout: &mut Layout) {
    for (b, bus) in net.buses().iter().enumerate() {
        let (lo, hi) = if b == net.slack_bus() {
            (0.0, 0.0)
        } else {
            (-INF, INF)
        };
        layout
            .theta
            .push(prog.add_var(format!("theta_{}", bus.id), lo, hi));
    }
}

fn flow_var(
    net: &Network,
    prog: &mut ConvexProgram,
    name: &str,
    l: usize,
    symmetric_limit: bool,
) -> usize {
    let s = net.branches()[l].s_max;
    let (lo, hi) = match (symmetric_limit, s) {
        (true, Some(s)) => (-s, s),
        _ => (-INF, INF),
    };
    prog.add_var(format!("{name}{}", l + 1), lo, hi)
}

/// Classic DC-OPF: `p^f = θ_nm / x`, no losses, no shunts, θ at the slack
/// bus fixed to zero.
pub fn build_dcopf(net: &Network, demand: &DemandProfile) -> ModelArtifacts {
    let mut prog = ConvexProgram::new();
    let mut layout = Layout::default();
    add_generators(net, &mut prog, &mut layout, 1.0);
    for l in 0..net.n_branches() {
        layout.p_from.push(flow_var(net, &mut prog, "pf", l, true));
    }
    add_angles(net, &mut prog, &mut layout);

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_buses()];
    for (g, gen) in net.generators().iter().enumerate() {
        rows[gen.bus].push((layout.p_g[g], 1.0));
    }
    for (l, br) in net.branches().iter().enumerate() {
        rows[br.from_bus].push((layout.p_from[l], -1.0));
        rows[br.to_bus].push((layout.p_from[l], 1.0));
        let inv_x = 1.0 / br.x;
        prog.add_eq(
            format!("flow_p{}", l + 1),
            vec![
                (layout.p_from[l], 1.0),
                (layout.theta[br.from_bus], -inv_x),
                (layout.theta[br.to_bus], inv_x),
            ],
            0.0,
        );
    }
    for (b, row) in rows.into_iter().enumerate() {
        let id = net.buses()[b].id;
        layout
            .balance_p
            .push(prog.add_eq(format!("balance_p{id}"), row, demand.p[b]));
    }
    ModelArtifacts {
        program: prog,
        layout,
        kind: ModelKind::Dc,
    }
}

/// KT-DC: angle-only expansion of the active flows with the anchor losses
/// and shunt consumption frozen.
pub fn build_ktdc(
    net: &Network,
    demand: &DemandProfile,
    coeffs: &TaylorCoefficients,
) -> ModelArtifacts {
    let mut prog = ConvexProgram::new();
    let mut layout = Layout::default();
    add_generators(net, &mut prog, &mut layout, 1.0);
    for l in 0..net.n_branches() {
        layout.p_from.push(flow_var(net, &mut prog, "pf", l, true));
    }
    for l in 0..net.n_branches() {
        layout.p_to.push(flow_var(net, &mut prog, "pt", l, true));
    }
    add_angles(net, &mut prog, &mut layout);
    let a = &coeffs.anchor;

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_buses()];
    for (g, gen) in net.generators().iter().enumerate() {
        rows[gen.bus].push((layout.p_g[g], 1.0));
    }
    for (l, br) in net.branches().iter().enumerate() {
        let (n, m) = (br.from_bus, br.to_bus);
        rows[n].push((layout.p_from[l], -1.0));
        rows[m].push((layout.p_to[l], -1.0));
        let d = &coeffs.partials[l];
        let th_nm = a.theta[n] - a.theta[m];
        let (tn, tm) = (layout.theta[n], layout.theta[m]);
        prog.add_eq(
            format!("flow_pf{}", l + 1),
            vec![(layout.p_from[l], 1.0), (tn, -d.dpf_dth), (tm, d.dpf_dth)],
            coeffs.flows[l][0] - d.dpf_dth * th_nm,
        );
        prog.add_eq(
            format!("flow_pt{}", l + 1),
            vec![(layout.p_to[l], 1.0), (tm, -d.dpt_dth), (tn, d.dpt_dth)],
            coeffs.flows[l][2] + d.dpt_dth * th_nm,
        );
    }
    for (b, row) in rows.into_iter().enumerate() {
        let bus = &net.buses()[b];
        let shunt = a.v[b] * a.v[b] * bus.g_shunt;
        layout.balance_p.push(prog.add_eq(
            format!("balance_p{}", bus.id),
            row,
            demand.p[b] + shunt,
        ));
    }
    ModelArtifacts {
        program: prog,
        layout,
        kind: ModelKind::KtDc,
    }
}

/// KT-AC with the default options: polygonal flow limits with 12 sides.
pub fn build_ktac(
    net: &Network,
    demand: &DemandProfile,
    coeffs: &TaylorCoefficients,
) -> ModelArtifacts {
    build_ktac_with(net, demand, coeffs, &KtAcOptions::default())
}

/// KT-AC: full first-order expansion of all four flows in `(v, θ)` with
/// linearized shunt terms and convexified apparent-power limits.
pub fn build_ktac_with(
    net: &Network,
    demand: &DemandProfile,
    coeffs: &TaylorCoefficients,
    opts: &KtAcOptions,
) -> ModelArtifacts {
    let mut prog = ConvexProgram::new();
    let mut layout = Layout::default();
    let slack_gen = net.slack_gen();
    let a = &coeffs.anchor;
    let mut soft: Vec<(usize, f64, f64)> = Vec::new();

    add_generators(net, &mut prog, &mut layout, opts.cost_weight);
    for (g, gen) in net.generators().iter().enumerate() {
        let j = prog.add_var(format!("q_g{}", g + 1), gen.q_min, gen.q_max);
        layout.q_g.push(j);
        if opts.elastic_penalty.is_some() {
            soft.push((j, gen.q_min, gen.q_max));
        }
    }
    if let (Some(_), Some(g)) = (opts.elastic_penalty, slack_gen) {
        let gen = &net.generators()[g];
        soft.push((layout.p_g[g], gen.p_min, gen.p_max));
    }
    for l in 0..net.n_branches() {
        layout.p_from.push(flow_var(net, &mut prog, "pf", l, false));
        layout.q_from.push(flow_var(net, &mut prog, "qf", l, false));
        layout.p_to.push(flow_var(net, &mut prog, "pt", l, false));
        layout.q_to.push(flow_var(net, &mut prog, "qt", l, false));
    }
    for (b, bus) in net.buses().iter().enumerate() {
        let j = prog.add_var(format!("v_{}", bus.id), bus.v_min, bus.v_max);
        layout.v.push(j);
        if opts.elastic_penalty.is_some() && net.gen_bus_slot(b).is_none() {
            soft.push((j, bus.v_min, bus.v_max));
        }
        if opts.voltage_prox > 0.0 {
            prog.add_objective(j, opts.voltage_prox, -2.0 * opts.voltage_prox * a.v[b]);
            prog.add_constant(opts.voltage_prox * a.v[b] * a.v[b]);
        }
    }
    add_angles(net, &mut prog, &mut layout);

    let mut rows_p: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_buses()];
    let mut rows_q: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_buses()];
    for (g, gen) in net.generators().iter().enumerate() {
        rows_p[gen.bus].push((layout.p_g[g], 1.0));
        rows_q[gen.bus].push((layout.q_g[g], 1.0));
    }
    for (l, br) in net.branches().iter().enumerate() {
        let (n, m) = (br.from_bus, br.to_bus);
        rows_p[n].push((layout.p_from[l], -1.0));
        rows_q[n].push((layout.q_from[l], -1.0));
        rows_p[m].push((layout.p_to[l], -1.0));
        rows_q[m].push((layout.q_to[l], -1.0));

        let d = &coeffs.partials[l];
        let f = coeffs.flows[l];
        let (vn, vm, tn, tm) = (layout.v[n], layout.v[m], layout.theta[n], layout.theta[m]);
        let th_nm = a.theta[n] - a.theta[m];
        // flow − ∂v_n·v_n − ∂v_m·v_m − ∂θ·θ_diff = anchor flow − (same terms at the anchor)
        let families = [
            (
                "flow_pf",
                layout.p_from[l],
                f[0],
                d.dpf_dvn,
                d.dpf_dvm,
                d.dpf_dth,
            ),
            (
                "flow_qf",
                layout.q_from[l],
                f[1],
                d.dqf_dvn,
                d.dqf_dvm,
                d.dqf_dth,
            ),
            (
                "flow_pt",
                layout.p_to[l],
                f[2],
                d.dpt_dvn,
                d.dpt_dvm,
                -d.dpt_dth,
            ),
            (
                "flow_qt",
                layout.q_to[l],
                f[3],
                d.dqt_dvn,
                d.dqt_dvm,
                -d.dqt_dth,
            ),
        ];
        for (name, var, anchor, dn, dm, dth) in families {
            prog.add_eq(
                format!("{name}{}", l + 1),
                vec![(var, 1.0), (vn, -dn), (vm, -dm), (tn, -dth), (tm, dth)],
                anchor - dn * a.v[n] - dm * a.v[m] - dth * th_nm,
            );
        }
    }
    for (b, bus) in net.buses().iter().enumerate() {
        let vt = a.v[b];
        // ṽG(2v − ṽ) moves to the left as −2ṽG·v, leaving +ṽ²G on the right
        let mut rp = std::mem::take(&mut rows_p[b]);
        rp.push((layout.v[b], -2.0 * vt * bus.g_shunt));
        layout.balance_p.push(prog.add_eq(
            format!("balance_p{}", bus.id),
            rp,
            demand.p[b] - vt * vt * bus.g_shunt,
        ));
        let mut rq = std::mem::take(&mut rows_q[b]);
        rq.push((layout.v[b], 2.0 * vt * bus.b_shunt));
        layout.balance_q.push(prog.add_eq(
            format!("balance_q{}", bus.id),
            rq,
            demand.q[b] + vt * vt * bus.b_shunt,
        ));
    }

    for (l, br) in net.branches().iter().enumerate() {
        let Some(s_max) = br.s_max else { continue };
        let ends = [
            (
                "from",
                layout.p_from[l],
                layout.q_from[l],
                coeffs.flows[l][0],
                coeffs.flows[l][1],
            ),
            (
                "to",
                layout.p_to[l],
                layout.q_to[l],
                coeffs.flows[l][2],
                coeffs.flows[l][3],
            ),
        ];
        for (end, pv, qv, p0, q0) in ends {
            let s0 = p0.hypot(q0);
            let rows: Vec<(f64, f64, f64)> = match opts.flow_limits {
                FlowLimitMode::Tangent { threshold, .. } if s0 >= threshold * s_max && s0 > 0.0 => {
                    vec![(p0 / s0, q0 / s0, s_max)]
                }
                FlowLimitMode::Polygon { segments } | FlowLimitMode::Tangent { segments, .. } => {
                    polygonize_circle(s_max, segments)
                        .into_iter()
                        .map(|h| (h.a_p, h.a_q, h.rhs))
                        .collect()
                }
            };
            let elastic = opts.elastic_penalty.map(|price| {
                let e = prog.add_var(format!("e_s{end}{}", l + 1), 0.0, INF);
                prog.add_objective(e, 0.0, price);
                layout.elastic.push(e);
                e
            });
            for (k, (ap, aq, rhs)) in rows.into_iter().enumerate() {
                let mut coefs = vec![(pv, ap), (qv, aq)];
                if let Some(e) = elastic {
                    coefs.push((e, -1.0));
                }
                prog.add_le(format!("smax_{end}{}_{k}", l + 1), coefs, rhs);
            }
        }
    }

    if let Some(price) = opts.elastic_penalty {
        for (j, lo, hi) in soft {
            prog.set_bounds(j, -INF, INF);
            let name = prog.var_name(j).to_string();
            let e = prog.add_var(format!("e_{name}"), 0.0, INF);
            prog.add_objective(e, 0.0, price);
            layout.elastic.push(e);
            if lo.is_finite() {
                prog.add_le(format!("lo_{name}"), vec![(j, -1.0), (e, -1.0)], -lo);
            }
            if hi.is_finite() {
                prog.add_le(format!("hi_{name}"), vec![(j, 1.0), (e, -1.0)], hi);
            }
        }
    }

    ModelArtifacts {
        program: prog,
        layout,
        kind: ModelKind::KtAc,
    }
}
