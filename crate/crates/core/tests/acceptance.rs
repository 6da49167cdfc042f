//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its PASS/FAIL line whether or not it holds.

// negated comparisons keep NaN results on the failing side
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::qp::{enumerate_qp, random_qp};
use common::{cheaper_neighbor, five_bus_lossless, load_case, random_point};
use ktopf::acopf::{
    kt_pipeline, project_feasible, AcopfOptions, FallbackReason, PipelineOptions, Variant,
};
use ktopf::convexsolve::{solve_qp, QpOptions, SolveStatus};
use ktopf::learn::{
    generate_dataset, knn_predict, label_dataset, GenConfig, TrainingRecord, TrainingSet,
};
use ktopf::metrics::{
    aggregate, evaluate_dispatch, predict, EvalOptions, Method, Prediction, Reference, SummaryTable,
};
use ktopf::netmodel::Network;
use ktopf::powerflow::{branch_flow, solve_power_flow, OperatingPoint, PfOptions, PfSpec};
use ktopf::taylor::{build_dcopf, build_ktdc, taylor_coefficients};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const TRAIN: usize = 2000;
const SMALL_TRAIN: usize = 500;
const TEST: usize = 200;
const DATA_SEED: u64 = 20250;
const K: usize = 100;

type Outcome = Result<String, String>;

struct Data {
    net: Network,
    train: TrainingSet,
    test: Vec<TrainingRecord>,
    dropped: usize,
    label_time: Duration,
}

impl Data {
    fn build() -> Data {
        let start = Instant::now();
        let net = load_case("case14");
        // a little headroom for profiles the reference solver gives up on
        let cfg = GenConfig {
            count: TRAIN + TEST + 50,
            seed: DATA_SEED,
            ..GenConfig::default()
        };
        let demands = generate_dataset(&net, &cfg).unwrap();
        let out = label_dataset(&net, &demands, &AcopfOptions::default());
        let records = out.set.records();
        assert!(
            records.len() >= TRAIN + TEST,
            "only {} of {} profiles labeled",
            records.len(),
            demands.len()
        );
        Data {
            train: TrainingSet::new(&net, records[..TRAIN].to_vec()).unwrap(),
            test: records[TRAIN..TRAIN + TEST].to_vec(),
            dropped: out.dropped.len(),
            net,
            label_time: start.elapsed(),
        }
    }

    fn evaluate(&self, train: &TrainingSet, methods: &[Method]) -> (SummaryTable, usize) {
        let opts = EvalOptions {
            pipeline: PipelineOptions {
                k: K,
                ..PipelineOptions::default()
            },
            ..EvalOptions::default()
        };
        let records: Vec<_> = self
            .test
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, rec)| {
                methods.iter().map(move |&method| {
                    let (dispatch, fallback_used) =
                        predict(&self.net, train, &rec.demand, method, &opts).unwrap();
                    evaluate_dispatch(
                        &self.net,
                        &rec.demand,
                        i,
                        Prediction {
                            method,
                            dispatch: &dispatch,
                            fallback_used,
                        },
                        Reference {
                            dispatch: &rec.dispatch,
                            cost: rec.objective,
                        },
                        &opts,
                    )
                    .unwrap()
                })
            })
            .collect();
        let fallbacks = records.iter().filter(|r| r.fallback_used).count();
        (aggregate("case14", &records).unwrap(), fallbacks)
    }
}

fn rel_err(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(1.0)
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!(
            "took {:.1} s, limit {limit_s} s",
            elapsed.as_secs_f64()
        ))
    }
}

fn derivatives() -> Outcome {
    let start = Instant::now();
    let net = load_case("case14");
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let point = random_point(&net, &mut rng);
        let coeffs = taylor_coefficients(&net, &point);
        for (l, (br, c)) in net.branches().iter().zip(net.constants()).enumerate() {
            let (vn, vm) = (point.v[br.from_bus], point.v[br.to_bus]);
            let th = point.theta[br.from_bus] - point.theta[br.to_bus];
            let fd = |f: &dyn Fn(f64) -> [f64; 4], k: usize| (f(h)[k] - f(-h)[k]) / (2.0 * h);
            let by_vn = |e: f64| branch_flow(c, vn + e, vm, th);
            let by_vm = |e: f64| branch_flow(c, vn, vm + e, th);
            let by_th = |e: f64| branch_flow(c, vn, vm, th + e);
            let d = coeffs.partials[l];
            let pairs = [
                (d.dpf_dvn, fd(&by_vn, 0)),
                (d.dpf_dvm, fd(&by_vm, 0)),
                (d.dpf_dth, fd(&by_th, 0)),
                (d.dqf_dvn, fd(&by_vn, 1)),
                (d.dqf_dvm, fd(&by_vm, 1)),
                (d.dqf_dth, fd(&by_th, 1)),
                (d.dpt_dvm, fd(&by_vm, 2)),
                (d.dpt_dvn, fd(&by_vn, 2)),
                (d.dpt_dth, -fd(&by_th, 2)),
                (d.dqt_dvm, fd(&by_vm, 3)),
                (d.dqt_dvn, fd(&by_vn, 3)),
                (d.dqt_dth, -fd(&by_th, 3)),
            ];
            for (a, reference) in pairs {
                worst = worst.max(rel_err(a, reference));
            }
        }
    }
    within(start.elapsed(), 10.0)?;
    if worst < 1e-5 {
        Ok(format!("worst relative error {worst:.2e} over 100 points"))
    } else {
        Err(format!("worst relative error {worst:.2e}"))
    }
}

fn first_order() -> Outcome {
    let start = Instant::now();
    let net = load_case("case14");
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let n = net.n_buses();
    let mut ratios = Vec::new();
    for _ in 0..5 {
        let anchor = random_point(&net, &mut rng);
        let coeffs = taylor_coefficients(&net, &anchor);
        let mut dir: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        dir[n + net.slack_bus()] = 0.0;
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        let errors = |h: f64| {
            let p = OperatingPoint {
                v: (0..n).map(|b| anchor.v[b] + h * dir[b]).collect(),
                theta: (0..n).map(|b| anchor.theta[b] + h * dir[n + b]).collect(),
            };
            let mut err = [0.0f64; 4];
            for (l, (br, c)) in net.branches().iter().zip(net.constants()).enumerate() {
                let exact = branch_flow(
                    c,
                    p.v[br.from_bus],
                    p.v[br.to_bus],
                    p.theta[br.from_bus] - p.theta[br.to_bus],
                );
                let lin = coeffs.linear_flows(&net, l, &p);
                for k in 0..4 {
                    err[k] += (exact[k] - lin[k]).powi(2);
                }
            }
            err.map(f64::sqrt)
        };
        let (e1, e2) = (errors(1e-2), errors(5e-3));
        for k in 0..4 {
            ratios.push(e1[k] / e2[k]);
        }
    }
    within(start.elapsed(), 10.0)?;
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    if lo >= 3.5 && hi <= 4.5 {
        Ok(format!("error ratios in [{lo:.3}, {hi:.3}]"))
    } else {
        Err(format!("error ratios in [{lo:.3}, {hi:.3}]"))
    }
}

fn dc_equivalence() -> Outcome {
    let start = Instant::now();
    let net = five_bus_lossless();
    let d = net.nominal_demand();
    let dc = build_dcopf(&net, &d);
    let coeffs = taylor_coefficients(&net, &OperatingPoint::flat(net.n_buses()));
    let kt = build_ktdc(&net, &d, &coeffs);
    let opts = QpOptions::default();
    let (a, b) = (solve_qp(&dc.program, &opts), solve_qp(&kt.program, &opts));
    if !(a.is_optimal() && b.is_optimal()) {
        return Err(format!("statuses {:?} and {:?}", a.status, b.status));
    }
    let gap = (0..net.n_generators())
        .map(|g| (a.x[dc.layout.p_g[g]] - b.x[kt.layout.p_g[g]]).abs())
        .fold(0.0, f64::max);
    within(start.elapsed(), 1.0)?;
    if gap < 1e-8 {
        Ok(format!("largest dispatch gap {gap:.1e} p.u."))
    } else {
        Err(format!("largest dispatch gap {gap:.1e} p.u."))
    }
}

fn power_flow() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for name in ["case14", "case30", "case57", "case118"] {
        let net = load_case(name);
        let spec = PfSpec {
            demand: net.nominal_demand(),
            gen_p: net.generators().iter().map(|g| g.p_setpoint).collect(),
            gen_v: net
                .gen_buses()
                .iter()
                .map(|&b| net.generators()[net.gens_at_bus(b)[0]].v_setpoint)
                .collect(),
        };
        let sol = solve_power_flow(&net, &spec, &PfOptions::default(), None)
            .map_err(|e| format!("{name}: {e}"))?;
        if sol.iterations > 20 || !(sol.max_mismatch < 1e-8) {
            return Err(format!(
                "{name}: {} iterations, mismatch {:.1e}",
                sol.iterations, sol.max_mismatch
            ));
        }
        parts.push(format!("{name} {} it", sol.iterations));
    }
    within(start.elapsed(), 5.0)?;
    Ok(parts.join(", "))
}

fn qp_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let p = random_qp(&mut rng, 10, 10);
        let reference = enumerate_qp(&p).ok_or(format!("case {case}: oracle found no optimum"))?;
        let sol = solve_qp(&p, &QpOptions::default());
        if sol.status != SolveStatus::Optimal {
            return Err(format!("case {case}: {:?}", sol.status));
        }
        worst = worst.max((sol.objective - reference).abs());
    }
    within(start.elapsed(), 30.0)?;
    if worst < 1e-6 {
        Ok(format!(
            "largest objective gap {worst:.1e} over 200 programs"
        ))
    } else {
        Err(format!("largest objective gap {worst:.1e}"))
    }
}

fn ground_truth(data: &Data) -> Outcome {
    let start = Instant::now();
    let records = &data.train.records()[..200];
    let bad: Vec<String> = records
        .par_iter()
        .enumerate()
        .filter_map(|(i, rec)| {
            if !(rec.residual < 1e-6) {
                return Some(format!("record {i}: residual {:.1e}", rec.residual));
            }
            cheaper_neighbor(&data.net, &rec.demand, &rec.dispatch, 1e-3)
                .map(|m| format!("record {i}: {m}"))
        })
        .collect();
    within(start.elapsed(), 120.0)?;
    match bad.first() {
        None => Ok(format!(
            "200 records clean ({} of {} generated profiles dropped while labeling)",
            data.dropped,
            TRAIN + TEST + 50
        )),
        Some(first) => Err(format!("{} records fail, first {first}", bad.len())),
    }
}

fn fmt_row(table: &SummaryTable, m: Method) -> String {
    let r = table.row("case14", m).unwrap();
    let f = |x: Option<f64>| x.map_or("-".to_string(), ktopf::metrics::sci);
    format!(
        "{} ΔC {} VIOL(q) {} MSE(p) {}",
        m.label(),
        f(r.delta_c()),
        f(r.viol_q()),
        f(r.mse_p())
    )
}

fn ordering(data: &Data, full: &SummaryTable, eval_time: Duration) -> Outcome {
    let dc = |m: Method| {
        full.row("case14", m)
            .and_then(|r| r.delta_c())
            .unwrap_or(f64::NAN)
    };
    let vq = |m: Method| {
        full.row("case14", m)
            .and_then(|r| r.viol_q())
            .unwrap_or(f64::NAN)
    };
    let (ac, kd, d) = (dc(Method::KtAc), dc(Method::KtDc), dc(Method::DcOpf));
    let detail = format!(
        "ΔC KT-AC {ac:.3e} %, KT-DC {kd:.3e} %, DC {d:.3e} %; VIOL(q) DC {:.3e} vs KT-AC {:.3e}",
        vq(Method::DcOpf),
        vq(Method::KtAc)
    );
    within(data.label_time + eval_time, 900.0)?;
    let mut failed = Vec::new();
    if !(ac < kd) {
        failed.push("KT-AC < KT-DC");
    }
    if !(kd < d) {
        failed.push("KT-DC < DC-OPF");
    }
    if !(ac < 1.0) {
        failed.push("KT-AC under 1 %");
    }
    if !(vq(Method::DcOpf) >= 10.0 * vq(Method::KtAc)) {
        failed.push("VIOL(q) ratio ≥ 10");
    }
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("violated: {}; {detail}", failed.join(", ")))
    }
}

fn scarcity(full: &SummaryTable, small: &SummaryTable, elapsed: Duration) -> Outcome {
    let get = |t: &SummaryTable, m: Method, f: fn(&ktopf::metrics::SummaryRow) -> Option<f64>| {
        t.row("case14", m).and_then(f).unwrap_or(f64::NAN)
    };
    let (c_full, c_small) = (
        get(full, Method::KtAc, |r| r.delta_c()),
        get(small, Method::KtAc, |r| r.delta_c()),
    );
    let change = (c_small / c_full).max(c_full / c_small);
    let knn = get(small, Method::Knn, |r| r.mse_p()) / get(full, Method::Knn, |r| r.mse_p());
    let ktac = get(small, Method::KtAc, |r| r.mse_p()) / get(full, Method::KtAc, |r| r.mse_p());
    let detail = format!(
        "ΔC(KT-AC) {c_full:.3e} → {c_small:.3e} ({change:.2}×); MSE(p) growth KNN {knn:.2}×, KT-AC {ktac:.2}×"
    );
    within(elapsed, 1200.0)?;
    if change < 2.0 && knn > ktac {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fallback(data: &Data, fallbacks: usize) -> Outcome {
    let start = Instant::now();
    let tight = data.net.with_branch_limits(|_, _| Some(0.05));
    let demand = &data.test[0].demand;
    let opts = PipelineOptions {
        k: K,
        ..PipelineOptions::default()
    };
    let report = kt_pipeline(&tight, &data.train, demand, Variant::KtAc, &opts)
        .map_err(|e| e.to_string())?;
    if report.fallback_reason != Some(FallbackReason::Convex(SolveStatus::Infeasible)) {
        return Err(format!("tight limits gave {:?}", report.fallback_reason));
    }
    if !report.fallback_used
        || report.dispatch != knn_predict(&data.train, demand, K, false).unwrap()
    {
        return Err("fallback did not return the nearest-neighbor dispatch".into());
    }
    within(start.elapsed(), 60.0)?;
    // two Taylor variants per test instance
    let rate = 100.0 * fallbacks as f64 / (2 * TEST) as f64;
    if rate < 5.0 {
        Ok(format!(
            "tight limits fall back as Infeasible; fallback rate {rate:.2} %"
        ))
    } else {
        Err(format!("fallback rate {rate:.2} %"))
    }
}

fn projection(data: &Data) -> Outcome {
    let start = Instant::now();
    let opts = AcopfOptions::default();
    let truth_moves: Vec<f64> = data
        .test
        .par_iter()
        .map(|rec| {
            project_feasible(&data.net, &rec.demand, &rec.dispatch, &opts)
                .map(|r| {
                    r.delta_p
                        .iter()
                        .chain(&r.delta_v)
                        .map(|x| x.abs())
                        .sum::<f64>()
                })
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let dc_moves: Vec<f64> = data
        .test
        .par_iter()
        .map(|rec| {
            let dc = ktopf::acopf::dcopf_dispatch(&data.net, &rec.demand, &opts.qp);
            dc.and_then(|d| project_feasible(&data.net, &rec.demand, &d, &opts).ok())
                .map(|r| r.delta_p.iter().map(|x| x.abs()).sum::<f64>())
                .unwrap_or(0.0)
        })
        .collect();
    within(start.elapsed(), 300.0)?;
    let worst_truth = truth_moves.iter().copied().fold(0.0, f64::max);
    let least_dc = dc_moves.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "ground truth moves at most {worst_truth:.1e}; DC-OPF moves at least {least_dc:.1e} p.u."
    );
    if worst_truth < 1e-6 && least_dc > 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(
    results: &mut Vec<(usize, &'static str, Outcome, Duration)>,
    id: usize,
    name: &'static str,
    f: impl FnOnce() -> Outcome,
) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let (tag, text) = match &outcome {
        Ok(t) => ("PASS", t),
        Err(t) => ("FAIL", t),
    };
    println!(
        "{tag} criterion {id:>2} {name}: {text} [{:.1} s]",
        elapsed.as_secs_f64()
    );
    results.push((id, name, outcome, elapsed));
}

fn main() {
    // libtest flags such as --list or name filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results = Vec::new();
    run(&mut results, 1, "derivatives", derivatives);
    run(&mut results, 2, "first-order accuracy", first_order);
    run(&mut results, 3, "DC equivalence", dc_equivalence);
    run(&mut results, 4, "power flow", power_flow);
    run(&mut results, 5, "QP oracle", qp_oracle);

    let data = catch_unwind(Data::build).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default()
    });
    match data {
        Ok(data) => {
            println!(
                "labeled {} train and {} test records in {:.1} s",
                data.train.len(),
                data.test.len(),
                data.label_time.as_secs_f64()
            );
            run(&mut results, 6, "ground truth", || ground_truth(&data));
            let methods = [Method::DcOpf, Method::Knn, Method::KtDc, Method::KtAc];
            let start = Instant::now();
            let (full, fallbacks) = data.evaluate(&data.train, &methods);
            let full_time = start.elapsed();
            println!(
                "evaluated {} test instances in {:.1} s",
                TEST,
                full_time.as_secs_f64()
            );
            print!("{}", full.to_markdown());
            run(&mut results, 7, "pipeline ordering", || {
                ordering(&data, &full, full_time)
            });
            let start = Instant::now();
            let (small, _) = data.evaluate(
                &data.train.truncated(SMALL_TRAIN),
                &[Method::Knn, Method::KtAc],
            );
            let small_time = start.elapsed();
            println!(
                "with {SMALL_TRAIN} training records ({:.1} s):",
                small_time.as_secs_f64()
            );
            println!("  {}", fmt_row(&small, Method::Knn));
            println!("  {}", fmt_row(&small, Method::KtAc));
            run(&mut results, 8, "data scarcity", || {
                scarcity(&full, &small, data.label_time + full_time + small_time)
            });
            run(&mut results, 9, "fallback", || fallback(&data, fallbacks));
            run(&mut results, 10, "projection", || projection(&data));
        }
        Err(msg) => {
            for (id, name) in [
                (6, "ground truth"),
                (7, "pipeline ordering"),
                (8, "data scarcity"),
                (9, "fallback"),
                (10, "projection"),
            ] {
                run(&mut results, id, name, || Err(format!("no dataset: {msg}")));
            }
        }
    }

    let failed: Vec<_> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0)
        .collect();
    let total: f64 = results.iter().map(|r| r.3.as_secs_f64()).sum();
    println!(
        "acceptance: {} passed, {} failed {:?} in {total:.0} s",
        results.len() - failed.len(),
        failed.len(),
        failed
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
