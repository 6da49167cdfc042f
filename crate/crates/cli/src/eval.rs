//! Evaluation runs: configuration, per-instance work and output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ktopf::acopf::{AcopfOptions, PipelineOptions};
use ktopf::convexsolve::QpOptions;
use ktopf::learn::TrainingSet;
use ktopf::metrics::{
    aggregate, evaluate_dispatch, predict, EvalOptions, Method, MetricsRecord, Prediction,
    Reference, SummaryTable,
};
use ktopf::netmodel::{parse_matpower_file, Network};
use ktopf::powerflow::PfOptions;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Settings of an evaluation run as read from a JSON file. Every field is
/// optional so that flags can fill in or override any of them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub case: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub methods: Option<Vec<Method>>,
    pub k: Option<usize>,
    pub segments: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub tol_pf: Option<f64>,
    pub tol_qp: Option<f64>,
}

impl PartialConfig {
    /// Values set in `over` win.
    pub fn merged(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            case: over.case.or(self.case),
            train: over.train.or(self.train),
            test: over.test.or(self.test),
            methods: over.methods.or(self.methods),
            k: over.k.or(self.k),
            segments: over.segments.or(self.segments),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
            workers: over.workers.or(self.workers),
            tol_pf: over.tol_pf.or(self.tol_pf),
            tol_qp: over.tol_qp.or(self.tol_qp),
        }
    }

    /// Reads a config file. A run manifest works too, its `config` entry is
    /// used.
    pub fn from_file(path: &Path) -> Result<PartialConfig> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) => inner.clone(),
            None => value,
        };
        serde_json::from_value(value)
            .with_context(|| format!("invalid config in {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub case: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub methods: Vec<Method>,
    pub k: usize,
    pub segments: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub tol_pf: f64,
    pub tol_qp: f64,
}

impl RunConfig {
    pub fn resolve(p: PartialConfig) -> Result<RunConfig> {
        let need = |v: Option<PathBuf>, flag: &str| v.with_context(|| format!("missing --{flag}"));
        let mut methods = p
            .methods
            .unwrap_or_else(|| vec![Method::DcOpf, Method::Knn, Method::KtDc, Method::KtAc]);
        methods.sort();
        methods.dedup();
        let cfg = RunConfig {
            case: need(p.case, "case")?,
            train: need(p.train, "train")?,
            test: need(p.test, "test")?,
            out: need(p.out, "out")?,
            methods,
            k: p.k.unwrap_or(100),
            segments: p.segments.unwrap_or(12),
            seed: p.seed.unwrap_or(0),
            workers: p.workers.unwrap_or_else(default_workers),
            tol_pf: p.tol_pf.unwrap_or(PfOptions::default().tol),
            tol_qp: p.tol_qp.unwrap_or(QpOptions::default().tol),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for (path, what) in [
            (&self.case, "case"),
            (&self.train, "train"),
            (&self.test, "test"),
        ] {
            if !path.is_file() {
                bail!("{what} file {} does not exist", path.display());
            }
        }
        if self.methods.is_empty() {
            bail!("no methods selected");
        }
        if self.k == 0 {
            bail!("--k must be at least 1");
        }
        if self.segments < 3 {
            bail!("--segments must be at least 3");
        }
        if self.workers == 0 {
            bail!("--workers must be at least 1");
        }
        if !(self.tol_pf > 0.0 && self.tol_qp > 0.0) {
            bail!("tolerances must be positive");
        }
        Ok(())
    }

    pub fn eval_options(&self) -> EvalOptions {
        let pf = PfOptions {
            tol: self.tol_pf,
            ..PfOptions::default()
        };
        let qp = QpOptions {
            tol: self.tol_qp,
            ..QpOptions::default()
        };
        EvalOptions {
            pf,
            acopf: AcopfOptions {
                pf,
                ..AcopfOptions::default()
            },
            pipeline: PipelineOptions {
                k: self.k,
                segments: self.segments,
                pf,
                qp,
                ..PipelineOptions::default()
            },
        }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?)
}

/// A method that produced no dispatch for an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub instance: usize,
    pub method: Method,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: Method,
    /// Summed over instances, prediction only.
    pub predict_seconds: f64,
    /// Summed over instances, prediction plus metrics.
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub network: String,
    pub fingerprint: String,
    pub train_records: usize,
    pub test_records: usize,
    pub instance_files: Vec<String>,
    pub summary_files: Vec<String>,
    pub failures: Vec<Failure>,
    pub timings: Vec<MethodTiming>,
    pub wall_seconds: f64,
}

pub fn load_case(path: &Path) -> Result<Network> {
    parse_matpower_file(path).with_context(|| format!("loading case {}", path.display()))
}

pub fn load_set(net: &Network, path: &Path) -> Result<TrainingSet> {
    TrainingSet::load(net, path).with_context(|| format!("loading dataset {}", path.display()))
}

struct InstanceResult {
    records: Vec<MetricsRecord>,
    failures: Vec<Failure>,
    /// (predict, total) seconds per method in config order.
    seconds: Vec<(f64, f64)>,
}

fn run_instance(
    net: &Network,
    train: &TrainingSet,
    test: &TrainingSet,
    id: usize,
    cfg: &RunConfig,
    opts: &EvalOptions,
) -> InstanceResult {
    let truth = &test.records()[id];
    let mut out = InstanceResult {
        records: Vec::new(),
        failures: Vec::new(),
        seconds: Vec::new(),
    };
    for &method in &cfg.methods {
        let start = Instant::now();
        let predicted = predict(net, train, &truth.demand, method, opts);
        let predict_secs = start.elapsed().as_secs_f64();
        let result = predicted.and_then(|(dispatch, fallback_used)| {
            evaluate_dispatch(
                net,
                &truth.demand,
                id,
                Prediction {
                    method,
                    dispatch: &dispatch,
                    fallback_used,
                },
                Reference {
                    dispatch: &truth.dispatch,
                    cost: truth.objective,
                },
                opts,
            )
        });
        match result {
            Ok(r) => out.records.push(r),
            Err(e) => out.failures.push(Failure {
                instance: id,
                method,
                reason: e.to_string(),
            }),
        }
        out.seconds
            .push((predict_secs, start.elapsed().as_secs_f64()));
    }
    out
}

pub fn instance_file(id: usize) -> String {
    format!("instances/{id}.csv")
}

pub fn records_to_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn records_from_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn write_summary(dir: &Path, table: &SummaryTable) -> Result<Vec<String>> {
    write_atomic(&dir.join("summary.tsv"), &table.to_tsv())?;
    write_atomic(&dir.join("summary.md"), &table.to_markdown())?;
    Ok(vec!["summary.tsv".into(), "summary.md".into()])
}

pub fn run_evaluation(cfg: &RunConfig) -> Result<(RunManifest, SummaryTable)> {
    let started = Instant::now();
    let net = load_case(&cfg.case)?;
    let train = load_set(&net, &cfg.train)?;
    let test = load_set(&net, &cfg.test)?;
    if train.is_empty() || test.is_empty() {
        bail!("training and test sets must not be empty");
    }
    if cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::Knn | Method::KtDc | Method::KtAc))
        && cfg.k > train.len()
    {
        bail!("--k {} exceeds the {} training records", cfg.k, train.len());
    }
    let opts = cfg.eval_options();
    let pool = thread_pool(cfg.workers)?;
    let results: Vec<InstanceResult> = pool.install(|| {
        (0..test.len())
            .into_par_iter()
            .map(|id| run_instance(&net, &train, &test, id, cfg, &opts))
            .collect()
    });

    let dir = &cfg.out;
    fs::create_dir_all(dir.join("instances"))
        .with_context(|| format!("creating {}", dir.display()))?;
    let mut all = Vec::new();
    let mut failures = Vec::new();
    let mut instance_files = Vec::new();
    let mut timings: Vec<MethodTiming> = cfg
        .methods
        .iter()
        .map(|&method| MethodTiming {
            method,
            predict_seconds: 0.0,
            total_seconds: 0.0,
        })
        .collect();
    for (id, res) in results.into_iter().enumerate() {
        let name = instance_file(id);
        write_atomic(&dir.join(&name), &records_to_csv(&res.records)?)?;
        instance_files.push(name);
        for (t, (p, total)) in timings.iter_mut().zip(&res.seconds) {
            t.predict_seconds += p;
            t.total_seconds += total;
        }
        all.extend(res.records);
        failures.extend(res.failures);
    }
    let table = if all.is_empty() {
        SummaryTable::default()
    } else {
        aggregate(net.name(), &all)?
    };
    let summary_files = write_summary(dir, &table)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        network: net.name().into(),
        fingerprint: net.fingerprint(),
        train_records: train.len(),
        test_records: test.len(),
        instance_files,
        summary_files,
        failures,
        timings,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_atomic(
        &dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok((manifest, table))
}

/// Rebuilds the summary of a finished run from its per-instance files.
pub fn render_report(run: &Path) -> Result<SummaryTable> {
    let manifest: RunManifest = serde_json::from_str(
        &fs::read_to_string(run.join("manifest.json"))
            .with_context(|| format!("reading manifest in {}", run.display()))?,
    )?;
    let mut records = Vec::new();
    for name in &manifest.instance_files {
        let text = fs::read_to_string(run.join(name)).with_context(|| format!("reading {name}"))?;
        records.extend(records_from_csv(&text)?);
    }
    if records.is_empty() {
        return Ok(SummaryTable::default());
    }
    Ok(aggregate(&manifest.network, &records)?)
}
