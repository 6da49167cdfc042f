mod eval;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ktopf::acopf::{
    dcopf_dispatch, kt_pipeline, solve_acopf, AcopfOptions, Dispatch, PipelineOptions, Variant,
};
use ktopf::convexsolve::QpOptions;
use ktopf::learn::{
    demands_from_csv, demands_to_csv, generate_dataset, label_dataset, manifest_path,
    DatasetManifest, GenConfig,
};
use ktopf::metrics::Method;
use ktopf::netmodel::{validate_network, Network};
use ktopf::powerflow::{solve_power_flow, PfOptions, PfSpec};
use serde_json::json;

use eval::{
    load_case, load_set, render_report, run_evaluation, thread_pool, write_summary, PartialConfig,
    RunConfig,
};

#[derive(Parser)]
#[command(
    name = "ktopf",
    version,
    about = "Nearest-neighbor anchored Taylor OPF toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect network cases.
    #[command(subcommand)]
    Case(CaseCmd),
    /// Run power flows.
    #[command(subcommand)]
    Pf(PfCmd),
    /// Solve single OPF instances.
    #[command(subcommand)]
    Opf(OpfCmd),
    /// Generate and label demand datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Evaluate methods on a test set.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Render summaries of finished runs.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum CaseCmd {
    /// Parse a case and report structural problems.
    Validate {
        #[arg(long)]
        case: PathBuf,
    },
}

#[derive(Subcommand)]
enum PfCmd {
    /// Power flow at the case file set points.
    Run {
        #[arg(long)]
        case: PathBuf,
        /// Multiplier applied to every nominal demand.
        #[arg(long, default_value_t = 1.0)]
        demand_scale: f64,
        #[arg(long)]
        tol_pf: Option<f64>,
        /// Write the JSON result here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OpfMethod {
    Ac,
    Dc,
    KtAc,
    KtDc,
}

#[derive(Subcommand)]
enum OpfCmd {
    /// Solve the nominal (or scaled) demand of a case.
    Solve {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_enum)]
        method: OpfMethod,
        /// Labeled dataset, needed by the Taylor methods.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 12)]
        segments: usize,
        #[arg(long, default_value_t = 1.0)]
        demand_scale: f64,
        #[arg(long)]
        tol_pf: Option<f64>,
        #[arg(long)]
        tol_qp: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Sample demand profiles around the nominal demand.
    Generate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        scale_min: f64,
        #[arg(long, default_value_t = 1.2)]
        scale_max: f64,
        /// Standard deviation of the log of each bus multiplier.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Largest relative change of each bus's q/p ratio.
        #[arg(long, default_value_t = 0.05)]
        jitter: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve every profile with the reference AC-OPF solver.
    Label {
        #[arg(long)]
        case: PathBuf,
        /// Demand CSV written by `dataset generate`.
        #[arg(long)]
        demands: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        tol_pf: Option<f64>,
    },
}

#[derive(Args)]
struct RunFlags {
    /// JSON file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Comma separated subset of dc, knn, kt-dc, kt-ac, ac.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    tol_pf: Option<f64>,
    #[arg(long)]
    tol_qp: Option<f64>,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Evaluate every method on every test instance.
    Run(RunFlags),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Tsv,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Recompute the summary of a run directory from its instance files.
    Render {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
        /// Also rewrite summary.tsv and summary.md in the run directory.
        #[arg(long)]
        write: bool,
    },
}

fn pf_options(tol: Option<f64>) -> PfOptions {
    PfOptions {
        tol: tol.unwrap_or(PfOptions::default().tol),
        ..PfOptions::default()
    }
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn case_validate(case: &Path) -> Result<ExitCode> {
    let net = load_case(case)?;
    println!(
        "{}: {} buses, {} branches, {} generators, fingerprint {}",
        net.name(),
        net.n_buses(),
        net.n_branches(),
        net.n_generators(),
        net.fingerprint()
    );
    let diags = validate_network(&net);
    for d in &diags {
        println!("{d}");
    }
    if diags.is_empty() {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn setpoint_spec(net: &Network, scale: f64) -> PfSpec {
    PfSpec {
        demand: net.nominal_demand().scaled(scale),
        gen_p: net
            .generators()
            .iter()
            .map(|g| g.p_setpoint * scale)
            .collect(),
        gen_v: net
            .gen_buses()
            .iter()
            .map(|&b| net.generators()[net.gens_at_bus(b)[0]].v_setpoint)
            .collect(),
    }
}

fn pf_run(case: &Path, scale: f64, tol: Option<f64>, out: Option<&Path>) -> Result<ExitCode> {
    let net = load_case(case)?;
    let sol = solve_power_flow(&net, &setpoint_spec(&net, scale), &pf_options(tol), None)?;
    emit(
        out,
        &json!({
            "case": net.name(),
            "iterations": sol.iterations,
            "max_mismatch": sol.max_mismatch,
            "gen_p": sol.gen_p,
            "gen_q": sol.gen_q,
            "v": sol.point.v,
            "theta": sol.point.theta,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn opf_solve(
    case: &Path,
    method: OpfMethod,
    train: Option<&Path>,
    k: usize,
    segments: usize,
    scale: f64,
    tol_pf: Option<f64>,
    tol_qp: Option<f64>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let net = load_case(case)?;
    let demand = net.nominal_demand().scaled(scale);
    let pf = pf_options(tol_pf);
    let qp = QpOptions {
        tol: tol_qp.unwrap_or(QpOptions::default().tol),
        ..QpOptions::default()
    };
    let report = |d: &Dispatch, extra: serde_json::Value| {
        let mut v = json!({
            "case": net.name(),
            "p": d.p,
            "v": d.v,
            "cost": d.cost(&net),
        });
        if let (Some(obj), Some(add)) = (v.as_object_mut(), extra.as_object()) {
            obj.extend(add.clone());
        }
        v
    };
    let value = match method {
        OpfMethod::Ac => {
            let opts = AcopfOptions {
                pf,
                ..AcopfOptions::default()
            };
            let r = solve_acopf(&net, &demand, &opts)?;
            report(
                &r.dispatch,
                json!({ "method": "ac", "iterations": r.iterations }),
            )
        }
        OpfMethod::Dc => {
            let d = dcopf_dispatch(&net, &demand, &qp).context("DC-OPF has no optimal solution")?;
            report(&d, json!({ "method": "dc" }))
        }
        OpfMethod::KtAc | OpfMethod::KtDc => {
            let train = train.context("--train is required for the Taylor methods")?;
            let set = load_set(&net, train)?;
            if k == 0 || k > set.len() {
                bail!("--k {k} is outside 1..={}", set.len());
            }
            let (variant, name) = match method {
                OpfMethod::KtAc => (Variant::KtAc, "kt-ac"),
                _ => (Variant::KtDc, "kt-dc"),
            };
            let opts = PipelineOptions {
                k,
                segments,
                pf,
                qp,
                ..PipelineOptions::default()
            };
            let r = kt_pipeline(&net, &set, &demand, variant, &opts)?;
            report(
                &r.dispatch,
                json!({
                    "method": name,
                    "fallback_used": r.fallback_used,
                    "fallback_reason": r.fallback_reason.map(|x| format!("{x:?}")),
                }),
            )
        }
    };
    emit(out, &value)?;
    Ok(ExitCode::SUCCESS)
}

fn dataset_generate(case: &Path, config: GenConfig, out: &Path) -> Result<ExitCode> {
    let net = load_case(case)?;
    let demands = generate_dataset(&net, &config)?;
    fs::write(out, demands_to_csv(&net, &demands)?)
        .with_context(|| format!("writing {}", out.display()))?;
    let manifest = DatasetManifest {
        fingerprint: net.fingerprint(),
        network: net.name().into(),
        records: demands.len(),
        generator: Some(config),
        dropped: Vec::new(),
    };
    fs::write(
        manifest_path(out),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    println!("wrote {} profiles to {}", demands.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn dataset_label(
    case: &Path,
    demands_path: &Path,
    out: &Path,
    workers: Option<usize>,
    tol_pf: Option<f64>,
) -> Result<ExitCode> {
    let net = load_case(case)?;
    let text = fs::read_to_string(demands_path)
        .with_context(|| format!("reading {}", demands_path.display()))?;
    let demands = demands_from_csv(&net, &text)?;
    if demands.is_empty() {
        bail!("{} has no profiles", demands_path.display());
    }
    let generator = fs::read_to_string(manifest_path(demands_path))
        .ok()
        .and_then(|t| serde_json::from_str::<DatasetManifest>(&t).ok())
        .and_then(|m| m.generator);
    let opts = AcopfOptions {
        pf: pf_options(tol_pf),
        ..AcopfOptions::default()
    };
    let pool = thread_pool(workers.unwrap_or_else(eval::default_workers))?;
    let outcome = pool.install(|| label_dataset(&net, &demands, &opts));
    let manifest = DatasetManifest {
        generator,
        dropped: outcome.dropped.clone(),
        ..DatasetManifest::default()
    };
    outcome.set.save(&net, out, &manifest)?;
    println!(
        "labeled {} of {} profiles ({} dropped) into {}",
        outcome.set.len(),
        demands.len(),
        outcome.dropped.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval_run(flags: RunFlags) -> Result<ExitCode> {
    let base = match &flags.config {
        Some(p) => PartialConfig::from_file(p)?,
        None => PartialConfig::default(),
    };
    let over = PartialConfig {
        case: flags.case,
        train: flags.train,
        test: flags.test,
        methods: flags.methods,
        k: flags.k,
        segments: flags.segments,
        seed: flags.seed,
        out: flags.out,
        workers: flags.workers,
        tol_pf: flags.tol_pf,
        tol_qp: flags.tol_qp,
    };
    let cfg = RunConfig::resolve(base.merged(over))?;
    let (manifest, table) = run_evaluation(&cfg)?;
    print!("{}", table.to_markdown());
    if !manifest.failures.is_empty() {
        println!(
            "{} method runs produced no dispatch, see manifest.json",
            manifest.failures.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn report_render(run: &Path, format: Format, write: bool) -> Result<ExitCode> {
    let table = render_report(run)?;
    if write {
        write_summary(run, &table)?;
    }
    match format {
        Format::Md => print!("{}", table.to_markdown()),
        Format::Tsv => print!("{}", table.to_tsv()),
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Case(CaseCmd::Validate { case }) => case_validate(&case),
        Command::Pf(PfCmd::Run {
            case,
            demand_scale,
            tol_pf,
            out,
        }) => pf_run(&case, demand_scale, tol_pf, out.as_deref()),
        Command::Opf(OpfCmd::Solve {
            case,
            method,
            train,
            k,
            segments,
            demand_scale,
            tol_pf,
            tol_qp,
            out,
        }) => opf_solve(
            &case,
            method,
            train.as_deref(),
            k,
            segments,
            demand_scale,
            tol_pf,
            tol_qp,
            out.as_deref(),
        ),
        Command::Dataset(DatasetCmd::Generate {
            case,
            count,
            seed,
            scale_min,
            scale_max,
            noise,
            jitter,
            out,
        }) => dataset_generate(
            &case,
            GenConfig {
                count,
                global_scale_range: (scale_min, scale_max),
                per_node_noise: noise,
                power_factor_jitter: jitter,
                seed,
            },
            &out,
        ),
        Command::Dataset(DatasetCmd::Label {
            case,
            demands,
            out,
            workers,
            tol_pf,
        }) => dataset_label(&case, &demands, &out, workers, tol_pf),
        Command::Eval(EvalCmd::Run(flags)) => eval_run(flags),
        Command::Report(ReportCmd::Render { run, format, write }) => {
            report_render(&run, format, write)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
