mod common;

use common::load_case;
use ktopf::acopf::{solve_acopf, AcopfOptions, Dispatch};
use ktopf::metrics::{
    aggregate, evaluate_dispatch, mse_metrics, normalized_violation, redispatch_metrics,
    violation_metrics, EvalOptions, Method, MetricsRecord, Prediction, Reference,
};
use ktopf::powerflow::PfOptions;

fn dispatch(p: &[f64], v: &[f64]) -> Dispatch {
    Dispatch {
        p: p.to_vec(),
        v: v.to_vec(),
    }
}

fn rec(method: Method, delta_c: f64) -> MetricsRecord {
    MetricsRecord {
        instance: 0,
        method,
        mse_p: 1.0,
        mse_v: 2.0,
        viol_p: Some(0.0),
        viol_q: Some(0.5),
        viol_s: Some(0.0),
        viol_v: Some(0.0),
        delta_p: Some(0.1),
        delta_v: Some(0.01),
        delta_c: Some(delta_c),
        fallback_used: false,
        pf_divergent: false,
        projection_failed: false,
        beats_reference: false,
        note: String::new(),
    }
}

#[test]
fn mse_is_the_squared_distance() {
    let truth = dispatch(&[1.0, 1.0], &[1.0, 1.0, 1.0]);
    assert_eq!(mse_metrics(&truth, &truth).unwrap(), (0.0, 0.0));
    let pred = dispatch(&[1.1, 0.9], &[1.01, 0.99, 1.01]);
    let (p, v) = mse_metrics(&pred, &truth).unwrap();
    assert!((p - 0.02).abs() < 1e-12);
    assert!((v - 3e-4).abs() < 1e-12);
    assert!(mse_metrics(&dispatch(&[1.0], &[]), &truth).is_err());
}

#[test]
fn violation_is_relative_to_the_bound_width() {
    assert!((normalized_violation(1.15, 0.9, 1.1) - 25.0).abs() < 1e-9);
    assert!((normalized_violation(0.85, 0.9, 1.1) - 25.0).abs() < 1e-9);
    assert_eq!(normalized_violation(1.0, 0.9, 1.1), 0.0);
    // doubling value and bounds leaves it unchanged
    for (x, lo, hi) in [(1.15, 0.9, 1.1), (-3.0, -2.0, 5.0), (7.5, 0.0, 6.0)] {
        let a = normalized_violation(x, lo, hi);
        let b = normalized_violation(2.0 * x, 2.0 * lo, 2.0 * hi);
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }
}

#[test]
fn optimum_has_no_violations_and_no_redispatch() {
    let net = load_case("case14");
    let demand = net.nominal_demand().scaled(1.05);
    let opts = AcopfOptions::default();
    let report = solve_acopf(&net, &demand, &opts).unwrap();
    let viol = violation_metrics(&net, &demand, &report.dispatch, &PfOptions::default()).unwrap();
    for v in [viol.p, viol.q, viol.s, viol.v] {
        assert!(v < 1e-6, "{viol:?}");
    }
    let red = redispatch_metrics(&net, &demand, &report.dispatch, report.objective, &opts).unwrap();
    assert!(red.delta_p < 1e-7 && red.delta_v < 1e-7, "{red:?}");
    assert!(red.delta_c.abs() < 1e-6, "{red:?}");
}

#[test]
fn cost_change_is_zero_against_its_own_projection() {
    let net = load_case("case14");
    let demand = net.nominal_demand();
    let opts = AcopfOptions::default();
    let guess = ktopf::acopf::dcopf_dispatch(&net, &demand, &opts.qp).unwrap();
    let proj = ktopf::acopf::project_feasible(&net, &demand, &guess, &opts).unwrap();
    let red = redispatch_metrics(&net, &demand, &guess, proj.projected_cost, &opts).unwrap();
    assert_eq!(red.delta_c, 0.0);
    assert!(red.delta_p > 0.0);
}

#[test]
fn flat_voltages_break_reactive_limits() {
    let net = load_case("case14");
    let demand = net.nominal_demand();
    let opts = AcopfOptions::default();
    let dc = ktopf::acopf::dcopf_dispatch(&net, &demand, &opts.qp).unwrap();
    let viol = violation_metrics(&net, &demand, &dc, &PfOptions::default()).unwrap();
    assert!(viol.q > 0.0, "{viol:?}");
}

#[test]
fn divergent_dispatch_is_flagged_not_fatal() {
    let net = load_case("case14");
    let demand = net.nominal_demand();
    let opts = EvalOptions::default();
    let truth = solve_acopf(&net, &demand, &opts.acopf).unwrap();
    let wild = Dispatch {
        p: truth.dispatch.p.clone(),
        v: vec![0.05; truth.dispatch.v.len()],
    };
    let rec = evaluate_dispatch(
        &net,
        &demand,
        3,
        Prediction {
            method: Method::Knn,
            dispatch: &wild,
            fallback_used: false,
        },
        Reference {
            dispatch: &truth.dispatch,
            cost: truth.objective,
        },
        &opts,
    )
    .unwrap();
    assert!(rec.pf_divergent);
    assert!(rec.viol_q.is_none());
    assert!(rec.excluded());
    assert!(!rec.note.is_empty());
}

#[test]
fn aggregate_of_one_record_is_that_record() {
    let r = rec(Method::KtAc, 1.5);
    let t = aggregate("case14", std::slice::from_ref(&r)).unwrap();
    let row = t.row("case14", Method::KtAc).unwrap();
    assert_eq!(row.instances, 1);
    assert_eq!(row.mse_p(), Some(1.0));
    assert_eq!(row.viol_q(), Some(0.5));
    assert_eq!(row.delta_c(), Some(1.5));
}

#[test]
fn aggregate_takes_means() {
    let t = aggregate("case14", &[rec(Method::KtAc, 1.0), rec(Method::KtAc, 3.0)]).unwrap();
    assert_eq!(t.rows[0].delta_c(), Some(2.0));
}

#[test]
fn aggregate_excludes_divergent_records() {
    let mut recs: Vec<_> = (0..10).map(|i| rec(Method::DcOpf, i as f64)).collect();
    recs[9].pf_divergent = true;
    recs[9].viol_p = None;
    let t = aggregate("case14", &recs).unwrap();
    let row = &t.rows[0];
    assert_eq!(row.instances, 10);
    assert_eq!(row.excluded, 1);
    assert_eq!(row.pf_divergent, 1);
    assert_eq!(row.delta_c(), Some(4.0));
}

#[test]
fn aggregate_ignores_order_and_sorts_methods() {
    let recs = vec![
        rec(Method::KtAc, 0.1),
        rec(Method::DcOpf, 6.0),
        rec(Method::Knn, 0.3),
        rec(Method::KtDc, 0.2),
        rec(Method::DcOpf, 7.0),
    ];
    let mut rev = recs.clone();
    rev.reverse();
    let a = aggregate("case14", &recs).unwrap();
    let b = aggregate("case14", &rev).unwrap();
    assert_eq!(a, b);
    let order: Vec<_> = a.rows.iter().map(|r| r.method).collect();
    assert_eq!(
        order,
        vec![Method::DcOpf, Method::Knn, Method::KtDc, Method::KtAc]
    );
    assert!(aggregate("case14", &[]).is_err());
}

#[test]
fn tables_use_the_fixed_column_order() {
    let t = aggregate("case14", &[rec(Method::KtAc, 0.018)]).unwrap();
    let tsv = t.to_tsv();
    let header = tsv.lines().next().unwrap();
    assert!(header.starts_with(
        "System\tMethod\tMSE(p)\tMSE(v)\tVIOL(p)\tVIOL(q)\tVIOL(s)\tVIOL(v)\tΔp\tΔv\tΔC"
    ));
    assert!(tsv.lines().nth(1).unwrap().contains("\t1.8e-02\t"));
    let md = t.to_markdown();
    assert_eq!(md.lines().count(), 3);
    assert!(md.contains("| KT-AC |"));
}
