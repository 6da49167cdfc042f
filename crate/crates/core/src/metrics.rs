//! Evaluation metrics: prediction error, normalized limit violations at the
//! power flow solution of a dispatch, redispatch needed to reach AC
//! feasibility, and the summary tables built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{
    dcopf_dispatch, kt_pipeline, project_feasible, solve_acopf, AcopfError, AcopfOptions, Dispatch,
    PipelineOptions, Variant,
};
use crate::learn::{knn_predict, LearnError, TrainingSet};
use crate::netmodel::{DemandProfile, Network};
use crate::powerflow::{solve_power_flow, PfError, PfOptions};

/// Relative cost change, in percent, below which a projected point counts
/// as cheaper than the reference.
const BEATS_REFERENCE: f64 = -1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("power flow at the dispatch diverged: {0}")]
    PfDivergence(#[from] PfError),
    #[error("feasibility projection failed: {0}")]
    Projection(#[from] AcopfError),
    #[error("no records to aggregate")]
    Empty,
    #[error("{method} produced no dispatch: {reason}")]
    NoDispatch { method: Method, reason: String },
}

/// Dispatch methods in the order the summary tables list them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "dc")]
    DcOpf,
    #[serde(rename = "knn")]
    Knn,
    #[serde(rename = "kt-dc")]
    KtDc,
    #[serde(rename = "kt-ac")]
    KtAc,
    #[serde(rename = "ac")]
    Ac,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::DcOpf,
        Method::Knn,
        Method::KtDc,
        Method::KtAc,
        Method::Ac,
    ];

    /// Short name used on the command line and in files.
    pub fn key(self) -> &'static str {
        match self {
            Method::DcOpf => "dc",
            Method::Knn => "knn",
            Method::KtDc => "kt-dc",
            Method::KtAc => "kt-ac",
            Method::Ac => "ac",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::DcOpf => "DC-OPF",
            Method::Knn => "KNN",
            Method::KtDc => "KT-DC",
            Method::KtAc => "KT-AC",
            Method::Ac => "AC-OPF",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.key() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method `{s}` (expected dc, knn, kt-dc, kt-ac or ac)"))
    }
}

/// Squared euclidean distances between predicted and true generator outputs
/// and generator bus voltages.
pub fn mse_metrics(pred: &Dispatch, truth: &Dispatch) -> Result<(f64, f64), MetricsError> {
    if pred.p.len() != truth.p.len() || pred.v.len() != truth.v.len() {
        return Err(MetricsError::Dimension(format!(
            "prediction has {}+{} entries, truth has {}+{}",
            pred.p.len(),
            pred.v.len(),
            truth.p.len(),
            truth.v.len()
        )));
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    Ok((sq(&pred.p, &truth.p), sq(&pred.v, &truth.v)))
}

/// Violation of `[lo, hi]` by `x` relative to the width of the interval, in
/// percent. Degenerate intervals are measured in absolute terms and
/// unbounded ones never count.
pub fn normalized_violation(x: f64, lo: f64, hi: f64) -> f64 {
    let excess = (x - hi).max(lo - x).max(0.0);
    if excess == 0.0 {
        return 0.0;
    }
    let width = hi - lo;
    let denom = if width > 0.0 { width } else { 1.0 };
    100.0 * excess / denom
}

/// Average normalized violations, in percent, per constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationMetrics {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub v: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs the power flow with the dispatch's outputs and set points, the
/// slack generator balancing, and measures how far the result leaves the
/// limits.
///
/// Generator active limits include the slack unit. Each limited branch
/// contributes both of its ends against `[0, s_max]`.
pub fn violation_metrics(
    net: &Network,
    demand: &DemandProfile,
    dispatch: &Dispatch,
    pf: &PfOptions,
) -> Result<ViolationMetrics, MetricsError> {
    if !dispatch.fits(net) {
        return Err(MetricsError::Dimension(
            "dispatch does not match the generators".into(),
        ));
    }
    let sol = solve_power_flow(net, &dispatch.pf_spec(demand), pf, None)?;
    let gens = net.generators();
    let p = mean(
        gens.iter()
            .enumerate()
            .map(|(g, gen)| normalized_violation(sol.gen_p[g], gen.p_min, gen.p_max)),
    );
    let q = mean(
        gens.iter()
            .enumerate()
            .map(|(g, gen)| normalized_violation(sol.gen_q[g], gen.q_min, gen.q_max)),
    );
    let v = mean(
        net.buses()
            .iter()
            .enumerate()
            .map(|(b, bus)| normalized_violation(sol.point.v[b], bus.v_min, bus.v_max)),
    );
    let f = &sol.flows;
    let s = mean(net.branches().iter().enumerate().flat_map(|(l, br)| {
        let ends = [f.p_from[l].hypot(f.q_from[l]), f.p_to[l].hypot(f.q_to[l])];
        br.s_max
            .into_iter()
            .flat_map(move |s_max| ends.map(|s| normalized_violation(s, 0.0, s_max)))
    }));
    Ok(ViolationMetrics { p, q, s, v })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RedispatchMetrics {
    /// Mean absolute change of generator outputs, p.u.
    pub delta_p: f64,
    /// Mean absolute change of generator bus voltages, p.u.
    pub delta_v: f64,
    /// Cost of the projected point relative to the reference, percent.
    pub delta_c: f64,
}

/// Projects the dispatch onto the AC-feasible set and reports how much it
/// had to move and what the move cost.
pub fn redispatch_metrics(
    net: &Network,
    demand: &DemandProfile,
    dispatch: &Dispatch,
    reference_cost: f64,
    opts: &AcopfOptions,
) -> Result<RedispatchMetrics, MetricsError> {
    let proj = project_feasible(net, demand, dispatch, opts)?;
    let mean_abs = |d: &[f64]| mean(d.iter().map(|x| x.abs()));
    Ok(RedispatchMetrics {
        delta_p: mean_abs(&proj.delta_p),
        delta_v: mean_abs(&proj.delta_v),
        delta_c: 100.0 * (proj.projected_cost - reference_cost) / reference_cost,
    })
}

/// All metrics of one method on one test instance. Missing values mean the
/// corresponding power flow or projection failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub instance: usize,
    pub method: Method,
    pub mse_p: f64,
    pub mse_v: f64,
    pub viol_p: Option<f64>,
    pub viol_q: Option<f64>,
    pub viol_s: Option<f64>,
    pub viol_v: Option<f64>,
    pub delta_p: Option<f64>,
    pub delta_v: Option<f64>,
    pub delta_c: Option<f64>,
    pub fallback_used: bool,
    pub pf_divergent: bool,
    pub projection_failed: bool,
    /// The projected point is cheaper than the reference optimum.
    pub beats_reference: bool,
    /// Human readable reason for any failure above.
    pub note: String,
}

/// Ground truth of one test instance.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub dispatch: &'a Dispatch,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub pf: PfOptions,
    pub acopf: AcopfOptions,
    pub pipeline: PipelineOptions,
}

/// Dispatch of one method for one demand, and whether the Taylor pipeline
/// had to fall back to its nearest-neighbor guess.
pub fn predict(
    net: &Network,
    trainset: &TrainingSet,
    demand: &DemandProfile,
    method: Method,
    opts: &EvalOptions,
) -> Result<(Dispatch, bool), MetricsError> {
    let none = |reason: String| MetricsError::NoDispatch { method, reason };
    match method {
        Method::DcOpf => dcopf_dispatch(net, demand, &opts.pipeline.qp)
            .map(|d| (d, false))
            .ok_or_else(|| none("DC-OPF has no optimal solution".into())),
        Method::Knn => knn_predict(trainset, demand, opts.pipeline.k, opts.pipeline.standardize)
            .map(|d| (d, false))
            .map_err(|e: LearnError| none(e.to_string())),
        Method::KtDc | Method::KtAc => {
            let variant = if method == Method::KtAc {
                Variant::KtAc
            } else {
                Variant::KtDc
            };
            kt_pipeline(net, trainset, demand, variant, &opts.pipeline)
                .map(|r| (r.dispatch, r.fallback_used))
                .map_err(|e| none(e.to_string()))
        }
        Method::Ac => solve_acopf(net, demand, &opts.acopf)
            .map(|r| (r.dispatch, false))
            .map_err(|e| none(e.to_string())),
    }
}

/// A method's answer for one test instance.
#[derive(Debug, Clone, Copy)]
pub struct Prediction<'a> {
    pub method: Method,
    pub dispatch: &'a Dispatch,
    pub fallback_used: bool,
}

/// Computes every metric for a predicted dispatch. Power flow and
/// projection failures are recorded in the flags, never returned.
pub fn evaluate_dispatch(
    net: &Network,
    demand: &DemandProfile,
    instance: usize,
    prediction: Prediction<'_>,
    reference: Reference<'_>,
    opts: &EvalOptions,
) -> Result<MetricsRecord, MetricsError> {
    let pred = prediction.dispatch;
    let (mse_p, mse_v) = mse_metrics(pred, reference.dispatch)?;
    let mut rec = MetricsRecord {
        instance,
        method: prediction.method,
        mse_p,
        mse_v,
        viol_p: None,
        viol_q: None,
        viol_s: None,
        viol_v: None,
        delta_p: None,
        delta_v: None,
        delta_c: None,
        fallback_used: prediction.fallback_used,
        pf_divergent: false,
        projection_failed: false,
        beats_reference: false,
        note: String::new(),
    };
    let mut notes = Vec::new();
    match violation_metrics(net, demand, pred, &opts.pf) {
        Ok(v) => {
            rec.viol_p = Some(v.p);
            rec.viol_q = Some(v.q);
            rec.viol_s = Some(v.s);
            rec.viol_v = Some(v.v);
        }
        Err(MetricsError::PfDivergence(e)) => {
            rec.pf_divergent = true;
            notes.push(e.to_string());
        }
        Err(e) => return Err(e),
    }
    match redispatch_metrics(net, demand, pred, reference.cost, &opts.acopf) {
        Ok(r) => {
            rec.delta_p = Some(r.delta_p);
            rec.delta_v = Some(r.delta_v);
            rec.delta_c = Some(r.delta_c);
            rec.beats_reference = r.delta_c < BEATS_REFERENCE;
        }
        Err(MetricsError::Projection(AcopfError::Dimension(m))) => {
            return Err(MetricsError::Dimension(m))
        }
        Err(e) => {
            rec.projection_failed = true;
            notes.push(e.to_string());
        }
    }
    rec.note = notes.join("; ");
    Ok(rec)
}

impl MetricsRecord {
    /// Records with a diverged power flow or failed projection are left out
    /// of the averages.
    pub fn excluded(&self) -> bool {
        self.pf_divergent || self.projection_failed
    }

    /// Values in summary column order.
    fn values(&self) -> [Option<f64>; 9] {
        [
            Some(self.mse_p),
            Some(self.mse_v),
            self.viol_p,
            self.viol_q,
            self.viol_s,
            self.viol_v,
            self.delta_p,
            self.delta_v,
            self.delta_c,
        ]
    }
}

/// Column titles of the metric part of a summary row.
pub const METRIC_COLUMNS: [&str; 9] = [
    "MSE(p)", "MSE(v)", "VIOL(p)", "VIOL(q)", "VIOL(s)", "VIOL(v)", "Δp", "Δv", "ΔC",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub system: String,
    pub method: Method,
    pub instances: usize,
    pub excluded: usize,
    /// Means over the non-excluded instances in [`METRIC_COLUMNS`] order.
    /// `None` when every instance was excluded.
    pub means: [Option<f64>; 9],
    pub fallbacks: usize,
    pub pf_divergent: usize,
    pub projection_failed: usize,
    pub beats_reference: usize,
}

impl SummaryRow {
    pub fn mse_p(&self) -> Option<f64> {
        self.means[0]
    }
    pub fn mse_v(&self) -> Option<f64> {
        self.means[1]
    }
    pub fn viol_p(&self) -> Option<f64> {
        self.means[2]
    }
    pub fn viol_q(&self) -> Option<f64> {
        self.means[3]
    }
    pub fn viol_s(&self) -> Option<f64> {
        self.means[4]
    }
    pub fn viol_v(&self) -> Option<f64> {
        self.means[5]
    }
    pub fn delta_p(&self) -> Option<f64> {
        self.means[6]
    }
    pub fn delta_v(&self) -> Option<f64> {
        self.means[7]
    }
    pub fn delta_c(&self) -> Option<f64> {
        self.means[8]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

fn summarize(system: &str, method: Method, records: &[&MetricsRecord]) -> SummaryRow {
    let kept: Vec<_> = records.iter().filter(|r| !r.excluded()).collect();
    let mut means = [None; 9];
    if !kept.is_empty() {
        for (c, slot) in means.iter_mut().enumerate() {
            // kept records have every value
            let sum: f64 = kept.iter().map(|r| r.values()[c].unwrap_or(0.0)).sum();
            *slot = Some(sum / kept.len() as f64);
        }
    }
    let count = |f: fn(&MetricsRecord) -> bool| records.iter().filter(|r| f(r)).count();
    SummaryRow {
        system: system.to_string(),
        method,
        instances: records.len(),
        excluded: records.len() - kept.len(),
        means,
        fallbacks: count(|r| r.fallback_used),
        pf_divergent: count(|r| r.pf_divergent),
        projection_failed: count(|r| r.projection_failed),
        beats_reference: count(|r| r.beats_reference),
    }
}

/// Averages the records of one system per method. Rows follow the fixed
/// method order regardless of record order.
pub fn aggregate(system: &str, records: &[MetricsRecord]) -> Result<SummaryTable, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut groups: BTreeMap<Method, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.method).or_default().push(r);
    }
    Ok(SummaryTable {
        rows: groups
            .into_iter()
            .map(|(m, recs)| summarize(system, m, &recs))
            .collect(),
    })
}

/// Scientific notation with a two digit exponent, e.g. `1.8e-02`.
pub fn sci(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{x:.1e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

fn cell(x: Option<f64>) -> String {
    x.map(sci).unwrap_or_else(|| "n/a".into())
}

const TALLY_COLUMNS: [&str; 6] = [
    "N",
    "excluded",
    "fallback",
    "pf-divergent",
    "projection-failed",
    "beats-ref",
];

impl SummaryTable {
    pub fn extend(&mut self, other: SummaryTable) {
        self.rows.extend(other.rows);
    }

    pub fn row(&self, system: &str, method: Method) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.method == method)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["System".to_string(), "Method".to_string()];
        h.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
        h.extend(TALLY_COLUMNS.iter().map(|s| s.to_string()));
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut c = vec![r.system.clone(), r.method.label().to_string()];
                c.extend(r.means.iter().map(|&m| cell(m)));
                c.extend(
                    [
                        r.instances,
                        r.excluded,
                        r.fallbacks,
                        r.pf_divergent,
                        r.projection_failed,
                        r.beats_reference,
                    ]
                    .iter()
                    .map(|n| n.to_string()),
                );
                c
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header().join("\t");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("| {} |\n", header.join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for row in self.cells() {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }
}
