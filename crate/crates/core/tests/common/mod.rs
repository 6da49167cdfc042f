#![allow(dead_code, clippy::needless_range_loop)]

pub mod qp;

use std::path::PathBuf;

use ktopf::netmodel::{parse_matpower_case, parse_matpower_file, Network};
use ktopf::powerflow::OperatingPoint;
use rand::Rng;

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("cases")
        .join(format!("{name}.m"))
}

pub fn load_case(name: &str) -> Network {
    parse_matpower_file(&case_path(name)).unwrap()
}

/// Random point with magnitudes in [0.9, 1.1] and angles within ±0.5 rad,
/// slack angle zero.
pub fn random_point<R: Rng>(net: &Network, rng: &mut R) -> OperatingPoint {
    let n = net.n_buses();
    let mut p = OperatingPoint {
        v: (0..n).map(|_| rng.random_range(0.9..1.1)).collect(),
        theta: (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
    };
    p.theta[net.slack_bus()] = 0.0;
    p
}

/// Lossless, shuntless, tap-free 5-bus network with quadratic costs and
/// two binding line limits.
pub fn five_bus_lossless() -> Network {
    parse_matpower_case(
        "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0   0  0 0 1 1 0 230 1 1.1 0.9;
  2 1 300 98 0 0 1 1 0 230 1 1.1 0.9;
  3 2 300 98 0 0 1 1 0 230 1 1.1 0.9;
  4 2 400 131 0 0 1 1 0 230 1 1.1 0.9;
  5 2 0   0  0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 40  0 30  -30  1 100 1 170 0;
  3 323 0 390 -390 1 100 1 520 0;
  4 0   0 150 -150 1 100 1 200 0;
  5 466 0 450 -450 1 100 1 600 0;
];
mpc.branch = [
  1 2 0 0.0281 0 400 0 0 0 0 1;
  1 4 0 0.0304 0 240 0 0 0 0 1;
  1 5 0 0.0064 0 400 0 0 0 0 1;
  2 3 0 0.0108 0 400 0 0 0 0 1;
  3 4 0 0.0297 0 400 0 0 0 0 1;
  4 5 0 0.0297 0 240 0 0 0 0 1;
];
mpc.gencost = [
  2 0 0 3 0.01  14 0;
  2 0 0 3 0.02  15 0;
  2 0 0 3 0.015 30 0;
  2 0 0 3 0.005 40 0;
];
",
    )
    .unwrap()
}

/// Looks for a cheaper AC-feasible neighbor of a dispatch by moving one
/// non-slack generator output or one generator bus voltage by `±h` and
/// re-solving the power flow. Returns a description of the first one found.
pub fn cheaper_neighbor(
    net: &Network,
    demand: &ktopf::netmodel::DemandProfile,
    dispatch: &ktopf::acopf::Dispatch,
    h: f64,
) -> Option<String> {
    use ktopf::acopf::violations;
    use ktopf::powerflow::{solve_power_flow, PfOptions};

    let pf = PfOptions::default();
    let base = solve_power_flow(net, &dispatch.pf_spec(demand), &pf, None).ok()?;
    let base_cost = net.total_cost(&base.gen_p);
    let slack = net.slack_gen();
    let n_p = net.n_generators();
    for k in 0..n_p + dispatch.v.len() {
        if Some(k) == slack {
            continue;
        }
        for sign in [-1.0, 1.0] {
            let mut trial = dispatch.clone();
            if k < n_p {
                trial.p[k] += sign * h;
            } else {
                trial.v[k - n_p] += sign * h;
            }
            let Ok(sol) = solve_power_flow(net, &trial.pf_spec(demand), &pf, Some(&base.point))
            else {
                continue;
            };
            if violations(net, &sol).max() > 0.0 {
                continue;
            }
            let cost = net.total_cost(&sol.gen_p);
            if cost < base_cost - 1e-9 * base_cost.abs() {
                let what = if k < n_p { "p" } else { "v" };
                return Some(format!("{what}[{k}] {sign:+}h: cost {cost} < {base_cost}"));
            }
        }
    }
    None
}
