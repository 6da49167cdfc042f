//! Demand dataset generation, labeling with the reference AC-OPF solver,
//! CSV persistence and K-nearest-neighbor regression.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{solve_acopf, AcopfOptions, Dispatch};
use crate::netmodel::{DemandProfile, Network};
use crate::powerflow::{gen_injections, nodal_residuals, solve_power_flow};

/// Records whose balance residual exceeds this are rejected.
pub const MAX_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("K = {k} is outside 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("dataset was built for network {expected}, not {found}")]
    Fingerprint { expected: String, found: String },
    #[error("record {index} has residual {residual:.3e}")]
    Residual { index: usize, residual: f64 },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Clone for LearnError {
    fn clone(&self) -> Self {
        match self {
            LearnError::KOutOfRange { k, len } => LearnError::KOutOfRange { k: *k, len: *len },
            LearnError::Dimension(s) => LearnError::Dimension(s.clone()),
            LearnError::Fingerprint { expected, found } => LearnError::Fingerprint {
                expected: expected.clone(),
                found: found.clone(),
            },
            LearnError::Residual { index, residual } => LearnError::Residual {
                index: *index,
                residual: *residual,
            },
            other => LearnError::Format(other.to_string()),
        }
    }
}

impl PartialEq for LearnError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub count: usize,
    /// Uniform range of the system-wide load multiplier.
    pub global_scale_range: (f64, f64),
    /// Standard deviation of the log of the per-bus multiplier.
    pub per_node_noise: f64,
    /// Largest relative change of each bus's q/p ratio.
    pub power_factor_jitter: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            count: 100,
            global_scale_range: (0.8, 1.2),
            per_node_noise: 0.1,
            power_factor_jitter: 0.05,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let (lo, hi) = self.global_scale_range;
        let ok = self.count >= 1
            && lo.is_finite()
            && hi.is_finite()
            && lo > 0.0
            && hi >= lo
            && self.per_node_noise >= 0.0
            && (0.0..1.0).contains(&self.power_factor_jitter);
        if ok {
            Ok(())
        } else {
            Err(LearnError::Format(format!(
                "invalid generator configuration {self:?}"
            )))
        }
    }
}

/// Random demand profiles around the nominal demand of `net`.
///
/// Each profile scales the nominal demand by one uniform system multiplier
/// and an independent lognormal multiplier per bus. Reactive demand follows
/// the active demand, with its ratio perturbed by at most the jitter.
pub fn generate_dataset(
    net: &Network,
    config: &GenConfig,
) -> Result<Vec<DemandProfile>, LearnError> {
    config.validate()?;
    let nominal = net.nominal_demand();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lo, hi) = config.global_scale_range;
    let mut out = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let scale = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        let mut d = DemandProfile::zeros(net.n_buses());
        for b in 0..net.n_buses() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let u: f64 = rng.random_range(-1.0..=1.0);
            let f = scale * (config.per_node_noise * z).exp();
            d.p[b] = nominal.p[b] * f;
            d.q[b] = nominal.q[b] * f * (1.0 + config.power_factor_jitter * u);
        }
        out.push(d);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub demand: DemandProfile,
    pub dispatch: Dispatch,
    /// Generation cost in $/h.
    pub objective: f64,
    /// Largest nodal balance residual of the labeled point, in p.u.
    pub residual: f64,
}

/// Labeled demand profiles for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    fingerprint: String,
    records: Vec<TrainingRecord>,
}

impl TrainingSet {
    /// # Errors
    /// If a record does not fit the network or its residual is too large.
    pub fn new(net: &Network, records: Vec<TrainingRecord>) -> Result<Self, LearnError> {
        for (index, r) in records.iter().enumerate() {
            if r.demand.p.len() != net.n_buses()
                || r.demand.q.len() != net.n_buses()
                || !r.dispatch.fits(net)
            {
                return Err(LearnError::Dimension(format!(
                    "record {index} does not fit the network"
                )));
            }
            if r.residual.is_nan() || r.residual >= MAX_RESIDUAL {
                return Err(LearnError::Residual {
                    index,
                    residual: r.residual,
                });
            }
        }
        Ok(TrainingSet {
            fingerprint: net.fingerprint(),
            records,
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn records(&self) -> &[TrainingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The first `n` records, for data-scarcity experiments.
    pub fn truncated(&self, n: usize) -> TrainingSet {
        TrainingSet {
            fingerprint: self.fingerprint.clone(),
            records: self.records[..n.min(self.records.len())].to_vec(),
        }
    }

    /// Writes the records as CSV.
    pub fn to_csv(&self, net: &Network) -> Result<String, LearnError> {
        self.check_network(net)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(csv_header(net))?;
        for r in &self.records {
            let row: Vec<String> = r
                .demand
                .p
                .iter()
                .chain(&r.demand.q)
                .chain(&r.dispatch.p)
                .chain(&r.dispatch.v)
                .chain([&r.objective, &r.residual])
                .map(|x| x.to_string())
                .collect();
            w.write_record(&row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| LearnError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| LearnError::Format(e.to_string()))
    }

    pub fn from_csv(net: &Network, text: &str) -> Result<Self, LearnError> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let expected = csv_header(net);
        if header != expected {
            return Err(LearnError::Format(format!(
                "header does not match network {}: expected {} columns starting {:?}",
                net.name(),
                expected.len(),
                expected.first()
            )));
        }
        let (n, g, nb) = (net.n_buses(), net.n_generators(), net.gen_buses().len());
        let mut records = Vec::new();
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let vals: Vec<f64> = row
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| LearnError::Format(format!("row {}: {e}", i + 1)))?;
            if vals.len() != expected.len() {
                return Err(LearnError::Format(format!(
                    "row {} has {} fields",
                    i + 1,
                    vals.len()
                )));
            }
            let mut it = vals.into_iter();
            let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
            let demand = DemandProfile {
                p: take(n),
                q: take(n),
            };
            let dispatch = Dispatch {
                p: take(g),
                v: take(nb),
            };
            let tail = take(2);
            records.push(TrainingRecord {
                demand,
                dispatch,
                objective: tail[0],
                residual: tail[1],
            });
        }
        TrainingSet::new(net, records)
    }

    /// Saves the CSV and, next to it, a manifest carrying the network
    /// fingerprint and `extra` labeling details.
    pub fn save(
        &self,
        net: &Network,
        path: &Path,
        extra: &DatasetManifest,
    ) -> Result<(), LearnError> {
        fs::write(path, self.to_csv(net)?)?;
        let manifest = DatasetManifest {
            fingerprint: self.fingerprint.clone(),
            network: net.name().to_string(),
            records: self.records.len(),
            ..extra.clone()
        };
        fs::write(
            manifest_path(path),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }

    /// Loads a CSV dataset. A manifest next to it, when present, must name the
    /// same network fingerprint.
    pub fn load(net: &Network, path: &Path) -> Result<Self, LearnError> {
        let mpath = manifest_path(path);
        if mpath.exists() {
            let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
            let found = net.fingerprint();
            if manifest.fingerprint != found {
                return Err(LearnError::Fingerprint {
                    expected: manifest.fingerprint,
                    found,
                });
            }
        }
        TrainingSet::from_csv(net, &fs::read_to_string(path)?)
    }

    fn check_network(&self, net: &Network) -> Result<(), LearnError> {
        let found = net.fingerprint();
        if found != self.fingerprint {
            return Err(LearnError::Fingerprint {
                expected: self.fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }
}

pub fn csv_header(net: &Network) -> Vec<String> {
    let ids = || net.buses().iter().map(|b| b.id);
    let mut h: Vec<String> = ids().map(|id| format!("pd_{id}")).collect();
    h.extend(ids().map(|id| format!("qd_{id}")));
    h.extend((1..=net.n_generators()).map(|g| format!("pg_{g}")));
    h.extend(
        net.gen_buses()
            .iter()
            .map(|&b| format!("vg_{}", net.buses()[b].id)),
    );
    h.push("objective".into());
    h.push("residual".into());
    h
}

/// Unlabeled demand profiles as CSV, with the demand columns of the
/// dataset schema only.
pub fn demands_to_csv(net: &Network, demands: &[DemandProfile]) -> Result<String, LearnError> {
    let n = net.n_buses();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&csv_header(net)[..2 * n])?;
    for d in demands {
        if d.len() != n || d.q.len() != n {
            return Err(LearnError::Dimension(format!(
                "profile has {} buses, network has {n}",
                d.len()
            )));
        }
        w.write_record(d.p.iter().chain(&d.q).map(|x| x.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| LearnError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LearnError::Format(e.to_string()))
}

pub fn demands_from_csv(net: &Network, text: &str) -> Result<Vec<DemandProfile>, LearnError> {
    let n = net.n_buses();
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header[..] != csv_header(net)[..2 * n] {
        return Err(LearnError::Format(format!(
            "demand header does not match network {}",
            net.name()
        )));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let vals: Vec<f64> = row?
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| LearnError::Format(format!("row {}: {e}", i + 1)))?;
        if vals.len() != 2 * n {
            return Err(LearnError::Format(format!(
                "row {} has {} fields",
                i + 1,
                vals.len()
            )));
        }
        out.push(DemandProfile::from_features(&vals));
    }
    Ok(out)
}

/// `data/train.csv` → `data/train.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedProfile {
    /// Position in the list handed to [`label_dataset`].
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub fingerprint: String,
    pub network: String,
    pub records: usize,
    pub generator: Option<GenConfig>,
    pub dropped: Vec<DroppedProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOutcome {
    pub set: TrainingSet,
    /// Position of each record in the input list.
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedProfile>,
}

/// Solves every profile with the reference solver in parallel. Profiles the
/// solver cannot handle are dropped and reported with the reason.
pub fn label_dataset(
    net: &Network,
    demands: &[DemandProfile],
    opts: &AcopfOptions,
) -> LabelOutcome {
    let results: Vec<Result<TrainingRecord, String>> = demands
        .par_iter()
        .map(|d| label_one(net, d, opts))
        .collect();
    let mut records = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => {
                records.push(rec);
                kept.push(index);
            }
            Err(reason) => dropped.push(DroppedProfile { index, reason }),
        }
    }
    let set = TrainingSet {
        fingerprint: net.fingerprint(),
        records,
    };
    LabelOutcome { set, kept, dropped }
}

fn label_one(
    net: &Network,
    demand: &DemandProfile,
    opts: &AcopfOptions,
) -> Result<TrainingRecord, String> {
    let report = solve_acopf(net, demand, opts).map_err(|e| e.to_string())?;
    let residual = dispatch_residual(net, demand, &report.dispatch, opts)
        .ok_or("power flow of the label diverged")?;
    if residual.is_nan() || residual >= MAX_RESIDUAL {
        return Err(format!("residual {residual:.3e} too large"));
    }
    Ok(TrainingRecord {
        demand: demand.clone(),
        objective: report.objective,
        dispatch: report.dispatch,
        residual,
    })
}

/// Largest nodal residual when the dispatch is applied through a power flow
/// and the slack output is replaced by the dispatch's own value.
pub fn dispatch_residual(
    net: &Network,
    demand: &DemandProfile,
    dispatch: &Dispatch,
    opts: &AcopfOptions,
) -> Option<f64> {
    let sol = solve_power_flow(net, &dispatch.pf_spec(demand), &opts.pf, None).ok()?;
    let inj_p = gen_injections(net, &dispatch.p);
    let inj_q = gen_injections(net, &sol.gen_q);
    let r = nodal_residuals(net, &sol.point, demand, &inj_p, &inj_q);
    Some(r.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

/// Mean dispatch of the `k` training records nearest to `demand`.
///
/// Distance is Euclidean on the concatenated `(p, q)` demand vector, each
/// feature optionally divided by its standard deviation over the training
/// set. Equal distances go to the lower record index.
pub fn knn_predict(
    set: &TrainingSet,
    demand: &DemandProfile,
    k: usize,
    standardize: bool,
) -> Result<Dispatch, LearnError> {
    if k == 0 || k > set.len() {
        return Err(LearnError::KOutOfRange { k, len: set.len() });
    }
    let query = demand.features();
    let first = &set.records[0];
    if query.len() != 2 * first.demand.len() {
        return Err(LearnError::Dimension(format!(
            "demand has {} features, training set has {}",
            query.len(),
            2 * first.demand.len()
        )));
    }
    let weights: Vec<f64> = if standardize {
        feature_scales(set).iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; query.len()]
    };
    let mut dist: Vec<(f64, usize)> = set
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d: f64 = r
                .demand
                .p
                .iter()
                .chain(&r.demand.q)
                .zip(&query)
                .zip(&weights)
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum();
            (d, i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut p = vec![0.0; first.dispatch.p.len()];
    let mut v = vec![0.0; first.dispatch.v.len()];
    for &(_, i) in &dist[..k] {
        let d = &set.records[i].dispatch;
        p.iter_mut().zip(&d.p).for_each(|(a, b)| *a += b);
        v.iter_mut().zip(&d.v).for_each(|(a, b)| *a += b);
    }
    let kf = k as f64;
    p.iter_mut().for_each(|a| *a /= kf);
    v.iter_mut().for_each(|a| *a /= kf);
    Ok(Dispatch { p, v })
}

/// Standard deviation of each demand feature, with 1 for constant features.
fn feature_scales(set: &TrainingSet) -> Vec<f64> {
    let n = set.len() as f64;
    let dim = 2 * set.records[0].demand.len();
    let mut mean = vec![0.0; dim];
    for r in &set.records {
        for (m, x) in mean.iter_mut().zip(r.demand.p.iter().chain(&r.demand.q)) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in &set.records {
        for ((s, x), m) in var
            .iter_mut()
            .zip(r.demand.p.iter().chain(&r.demand.q))
            .zip(&mean)
        {
            *s += (x - m) * (x - m) / n;
        }
    }
    var.into_iter()
        .map(|s| if s > 0.0 { s.sqrt() } else { 1.0 })
        .collect()
}
