//! Experiment runner: `prune`, `sample`, `eval`, `bench` and `report`.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 on runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::{
    iterative_prune, iterative_prune_rewind, layerwise_rates_of, random_global_mask,
    random_layerwise_mask, MaskMethod, MaskProvenance, SparsityMask,
};
use crate::metrics::{self, MetricsReport};
use crate::nn::{NetworkSpec, ParamVector};
use crate::rng;
use crate::sample::{parallel_chains, ChainGroup, ChainPlan, ParallelConfig, PosteriorEnsemble};
use crate::sparse::{bench, csv_error, synthetic_ensemble};
use crate::store::{load_ensemble, save_ensemble};

pub const ENSEMBLE_FILE: &str = "ensemble.spen";

#[derive(Parser, Debug)]
#[command(name = "sparse-posterior", version, about = "SGHMC inside sparse sub-networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Iterative magnitude pruning (mask.method = ip or ipr); writes one file per stage.
    Prune(CommonArgs),
    /// Run SGHMC chains inside the configured masks; writes ensemble.spen and trace.csv.
    Sample(CommonArgs),
    /// Evaluate an ensemble; writes metrics.csv, chains.csv, acf.csv and cumsum.csv.
    Eval(EvalArgs),
    /// Time dense against sparse ensemble inference; writes bench.csv.
    Bench(BenchArgs),
    /// Join every metrics.csv under a directory into report.csv.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chains run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Validate and print the plan without computing anything.
    #[arg(long)]
    pub dry_run: bool,
    /// FMNIST directory; falls back to data.dir, then $SPARSE_POSTERIOR_DATA.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ensemble file; defaults to <out>/ensemble.spen.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    /// Per-epoch trace; defaults to trace.csv next to the ensemble.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Restrict chain diagnostics to trace epochs a..b (1-based, inclusive).
    #[arg(long)]
    pub window: Option<Window>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Sparse ensembles to time; synthetic ones at bench.sparsities otherwise.
    #[arg(long = "ensemble")]
    pub ensembles: Vec<PathBuf>,
    /// Dense baseline ensemble; synthetic when omitted.
    #[arg(long)]
    pub dense: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory searched for metrics.csv files; defaults to --out.
    pub run_dir: Option<PathBuf>,
}

/// Inclusive 1-based epoch range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub first: usize,
    pub last: usize,
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once("..").ok_or("expected a..b")?;
        let first: usize = a.trim().parse().map_err(|_| format!("bad window start {a:?}"))?;
        let last: usize = b.trim().parse().map_err(|_| format!("bad window end {b:?}"))?;
        if first == 0 || first > last {
            return Err(format!("window {s} must satisfy 1 ≤ a ≤ b"));
        }
        Ok(Window { first, last })
    }
}

/// Parse `args` (program name first), run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prune(a) => cmd_prune(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Resolved config and output directory.
fn resolve(common: &CommonArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if common.jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Usage("no output directory: pass --out or set output".into()))?;
    Ok((cfg, out))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

fn print_plan(title: &str, lines: &[String], cfg: &ExperimentConfig) {
    println!("{title}");
    for l in lines {
        println!("  {l}");
    }
    println!("resolved config:\n{}", cfg.to_toml());
}

pub fn stage_file(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage_{stage}.spen"))
}

#[derive(Serialize)]
struct StageRow {
    stage: usize,
    sparsity: f64,
    active: usize,
    train_seconds: f64,
}

pub fn cmd_prune(args: &CommonArgs) -> Result<()> {
    let (cfg, out) = resolve(args)?;
    let method = cfg.mask.method;
    if !matches!(method, MaskMethod::Ip | MaskMethod::Ipr) {
        return Err(Error::Config(format!(
            "prune needs mask.method = \"ip\" or \"ipr\", got {method}"
        )));
    }
    let schedule = cfg.prune_schedule();
    let (dim, classes) = cfg.data_shape();
    let net = cfg.network(dim, classes)?;
    if args.dry_run {
        let kept = (1.0 - schedule.fraction).powi(schedule.iterations as i32);
        print_plan(
            "prune plan",
            &[
                format!("method {method}, {} iterations of π = {}", schedule.iterations, schedule.fraction),
                format!("{} epochs per iteration, K = {}", schedule.epochs_per_iteration, net.num_params()),
                format!("expected final sparsity ≈ {:.4}", 1.0 - kept),
                format!("output {}", out.display()),
            ],
            &cfg,
        );
        return Ok(());
    }
    let (train, _) = cfg.load_data(args.data_dir.as_deref())?;
    let net = cfg.network(train.dim(), train.num_classes())?;
    let sgd = cfg.sgd_config();
    let run = match method {
        MaskMethod::Ip => iterative_prune(&net, &train, &schedule, &sgd, cfg.seed)?,
        _ => iterative_prune_rewind(&net, &train, &schedule, &sgd, cfg.seed)?,
    };
    create_dir(&out)?;
    let mut rows = Vec::with_capacity(run.stages.len());
    for (i, stage) in run.stages.iter().enumerate() {
        let mut meta = BTreeMap::new();
        meta.insert("kind".into(), "prune-stage".into());
        meta.insert("method".into(), method.to_string());
        meta.insert("stage".into(), i.to_string());
        meta.insert("seed".into(), cfg.seed.to_string());
        let ens = PosteriorEnsemble::new(
            net.clone(),
            vec![ChainGroup {
                mask: stage.mask.clone(),
                provenance: MaskProvenance {
                    method,
                    seed: cfg.seed,
                    source_iterations: Some(i as u32),
                },
                samples: vec![stage.mask.gather(stage.params.values())],
            }],
            meta,
        )?;
        save_ensemble(&ens, &stage_file(&out, i))?;
        rows.push(StageRow {
            stage: i,
            sparsity: stage.mask.sparsity(),
            active: stage.mask.active_count(),
            train_seconds: stage.train_seconds,
        });
    }
    write_rows(&out.join("stages.csv"), &["stage", "sparsity", "active", "train_seconds"], &rows)?;
    let last = run.last();
    println!(
        "{method}: {} stages written to {}; final sparsity {:.4}",
        run.stages.len(),
        out.display(),
        last.mask.sparsity()
    );
    Ok(())
}

/// Highest `stage_{i}.spen` in `dir`.
fn last_stage(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("stage_")?.strip_suffix(".spen")?.parse::<usize>().ok()
        })
        .max()
        .ok_or_else(|| Error::Usage(format!("no stage_*.spen files in {}", dir.display())))
}

/// Mask and parameters of one pruning stage.
pub fn load_stage(path: &Path) -> Result<(NetworkSpec, SparsityMask, MaskProvenance, ParamVector)> {
    let ens = load_ensemble(path)?;
    if ens.num_chains() != 1 || ens.groups()[0].samples.len() != 1 {
        return Err(Error::Consistency(format!(
            "{} is not a single-sample stage file",
            path.display()
        )));
    }
    let params = ens.sample_params(0, 0)?;
    let g = &ens.groups()[0];
    Ok((ens.net().clone(), g.mask.clone(), g.provenance, params))
}

fn stage_path(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.mask.source.as_ref().ok_or_else(|| {
        Error::Config(format!("mask.method = {} needs mask.source (a prune output directory)", cfg.mask.method))
    })?;
    let stage = match cfg.mask.stage {
        Some(s) => s,
        None => last_stage(dir)?,
    };
    Ok(stage_file(dir, stage))
}

/// One plan per chain for the configured mask method.
fn chain_plans(cfg: &ExperimentConfig, net: &NetworkSpec) -> Result<Vec<ChainPlan>> {
    let m = cfg.chains.count;
    let method = cfg.mask.method;
    let seed = cfg.seed;
    let mask_rng = |i: usize| rng::stream(seed, rng::MASK, i as u64);
    let plans = match method {
        MaskMethod::Full => (0..m)
            .map(|_| ChainPlan {
                mask: SparsityMask::full(net),
                provenance: MaskProvenance::new(method, seed),
                warm_start: None,
            })
            .collect(),
        MaskMethod::Rgm => (0..m)
            .map(|i| {
                Ok(ChainPlan {
                    mask: random_global_mask(net, cfg.mask.sparsity, &mut mask_rng(i))?,
                    provenance: MaskProvenance::new(method, seed),
                    warm_start: None,
                })
            })
            .collect::<Result<_>>()?,
        MaskMethod::RlmF => {
            let rates = vec![cfg.mask.sparsity; net.layers().len()];
            (0..m)
                .map(|i| {
                    Ok(ChainPlan {
                        mask: random_layerwise_mask(net, &rates, &mut mask_rng(i))?,
                        provenance: MaskProvenance::new(method, seed),
                        warm_start: None,
                    })
                })
                .collect::<Result<_>>()?
        }
        MaskMethod::Ip | MaskMethod::Ipr | MaskMethod::RlmIp | MaskMethod::RlmIpr => {
            let path = stage_path(cfg)?;
            let (stage_net, mask, prov, params) = load_stage(&path)?;
            if &stage_net != net {
                return Err(Error::Consistency(format!(
                    "{} was pruned on a different network",
                    path.display()
                )));
            }
            let wanted = match method {
                MaskMethod::Ip | MaskMethod::RlmIp => MaskMethod::Ip,
                _ => MaskMethod::Ipr,
            };
            if prov.method != wanted {
                return Err(Error::Config(format!(
                    "mask.method = {method} needs an {wanted} prune run, {} holds {}",
                    path.display(),
                    prov.method
                )));
            }
            if matches!(method, MaskMethod::Ip | MaskMethod::Ipr) {
                (0..m)
                    .map(|_| ChainPlan {
                        mask: mask.clone(),
                        provenance: prov,
                        warm_start: Some(params.clone()),
                    })
                    .collect()
            } else {
                let rates = layerwise_rates_of(&mask);
                (0..m)
                    .map(|i| {
                        Ok(ChainPlan {
                            mask: random_layerwise_mask(net, &rates, &mut mask_rng(i))?,
                            provenance: MaskProvenance {
                                method,
                                seed,
                                source_iterations: prov.source_iterations,
                            },
                            warm_start: None,
                        })
                    })
                    .collect::<Result<_>>()?
            }
        }
    };
    Ok(plans)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub chain: usize,
    /// 1-based epoch.
    pub epoch: usize,
    pub inll: f64,
}

pub fn cmd_sample(args: &CommonArgs) -> Result<()> {
    let (cfg, out) = resolve(args)?;
    let sghmc = cfg.sghmc_config();
    let init = cfg.init_config();
    if args.dry_run {
        if !matches!(cfg.mask.method, MaskMethod::Full | MaskMethod::Rgm | MaskMethod::RlmF) {
            let p = stage_path(&cfg)?;
            if !p.is_file() {
                return Err(Error::Usage(format!("mask source {} does not exist", p.display())));
            }
        }
        let (dim, classes) = cfg.data_shape();
        let net = cfg.network(dim, classes)?;
        print_plan(
            "sample plan",
            &[
                format!("mask {} at sparsity {}", cfg.mask.method, cfg.mask.sparsity),
                format!(
                    "{} chain(s) × {} samples, {} burn-in + {} sampling epochs each",
                    cfg.chains.count,
                    sghmc.num_samples,
                    sghmc.burn_in_epochs,
                    sghmc.total_epochs() - sghmc.burn_in_epochs
                ),
                format!("{} SGD epochs inside each mask before sampling", init.epochs),
                format!("K = {}, jobs = {}", net.num_params(), args.jobs),
                format!("output {}", out.display()),
            ],
            &cfg,
        );
        return Ok(());
    }
    let (train, test) = cfg.load_data(args.data_dir.as_deref())?;
    let net = cfg.network(train.dim(), train.num_classes())?;
    let plans = chain_plans(&cfg, &net)?;
    let par = ParallelConfig {
        sghmc,
        init,
        jobs: args.jobs,
    };
    let result = parallel_chains(&net, &plans, &train, Some(&test), &par, cfg.chains.total_samples)?;
    let mut ensemble = result.ensemble;
    let meta = ensemble.metadata_mut();
    meta.insert("kind".into(), "posterior".into());
    meta.insert("method".into(), cfg.mask.method.to_string());
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("data".into(), train.source().to_string());

    create_dir(&out)?;
    save_ensemble(&ensemble, &out.join(ENSEMBLE_FILE))?;
    let rows: Vec<TraceRow> = result
        .traces
        .iter()
        .enumerate()
        .flat_map(|(c, t)| {
            t.iter().map(move |r| TraceRow {
                chain: c,
                epoch: r.epoch + 1,
                inll: r.inll,
            })
        })
        .collect();
    write_rows(&out.join("trace.csv"), &["chain", "epoch", "inll"], &rows)?;
    println!(
        "{}: {} chain(s), {} samples, mean sparsity {:.4}, written to {}",
        cfg.mask.method,
        ensemble.num_chains(),
        ensemble.num_samples(),
        ensemble.mean_sparsity(),
        out.display()
    );
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

/// Per-chain iNLL series restricted to `window`.
pub fn windowed_series(rows: &[TraceRow], window: Window) -> Vec<Vec<f64>> {
    let mut by_chain: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        if (window.first..=window.last).contains(&r.epoch) {
            by_chain.entry(r.chain).or_default().push((r.epoch, r.inll));
        }
    }
    by_chain
        .into_values()
        .map(|mut v| {
            v.sort_by_key(|&(e, _)| e);
            v.into_iter().map(|(_, x)| x).collect()
        })
        .collect()
}

/// Test-set iNLL of every sample, one series per chain.
pub fn sample_inll_series(ensemble: &PosteriorEnsemble, test: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut series = vec![Vec::new(); ensemble.num_chains()];
    for item in ensemble.iter_params() {
        let (g, params) = item?;
        series[g].push(metrics::inll(ensemble.net(), &params, None, test)?);
    }
    Ok(series)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub sparsity: f64,
    pub chains: usize,
    pub acc: f64,
    pub nll: f64,
    pub ece: f64,
    pub ess_mean: f64,
}

#[derive(Serialize)]
struct ChainRow {
    chain: usize,
    samples: usize,
    sparsity: f64,
    acc: f64,
    nll: f64,
    ece: f64,
}

fn ensemble_method(ens: &PosteriorEnsemble) -> String {
    ens.metadata()
        .get("method")
        .cloned()
        .or_else(|| ens.groups().first().map(|g| g.provenance.method.to_string()))
        .unwrap_or_else(|| "unknown".into())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (cfg, out) = resolve(&args.common)?;
    let path = args.ensemble.clone().unwrap_or_else(|| out.join(ENSEMBLE_FILE));
    let trace_path = args.trace.clone().unwrap_or_else(|| {
        path.parent().unwrap_or(Path::new(".")).join("trace.csv")
    });
    if args.common.dry_run {
        print_plan(
            "eval plan",
            &[
                format!("ensemble {}", path.display()),
                match args.window {
                    Some(w) => format!("diagnostics over epochs {}..{} of {}", w.first, w.last, trace_path.display()),
                    None => "diagnostics over per-sample test iNLL".into(),
                },
                format!("output {}", out.display()),
            ],
            &cfg,
        );
        return Ok(());
    }
    let ensemble = load_ensemble(&path)?;
    let (_, test) = cfg.load_data(args.common.data_dir.as_deref())?;
    if test.dim() != ensemble.net().input_dim() || test.num_classes() != ensemble.net().num_classes() {
        return Err(Error::Dimension(format!(
            "test data ({} features, {} classes) does not fit the ensemble network",
            test.dim(),
            test.num_classes()
        )));
    }
    let series = match args.window {
        Some(w) => {
            let s = windowed_series(&read_trace(&trace_path)?, w);
            if s.is_empty() {
                return Err(Error::Usage(format!(
                    "no trace rows in epochs {}..{} of {}",
                    w.first,
                    w.last,
                    trace_path.display()
                )));
            }
            s
        }
        None => sample_inll_series(&ensemble, &test)?,
    };
    let pred = metrics::posterior_predictive(&ensemble, test.features())?;
    let report = MetricsReport::compute(&pred, test.labels(), &series, cfg.eval.ece_bins, cfg.eval.max_lag)?;
    let row = MetricsRow {
        method: ensemble_method(&ensemble),
        sparsity: ensemble.mean_sparsity(),
        chains: ensemble.num_chains(),
        acc: report.accuracy,
        nll: report.nll,
        ece: report.ece,
        ess_mean: report.ess_mean,
    };

    let mut chain_rows = Vec::with_capacity(ensemble.num_chains());
    for (g, group) in ensemble.groups().iter().enumerate() {
        let single = PosteriorEnsemble::new(ensemble.net().clone(), vec![group.clone()], BTreeMap::new())?;
        let p = metrics::posterior_predictive(&single, test.features())?;
        chain_rows.push(ChainRow {
            chain: g,
            samples: group.samples.len(),
            sparsity: group.mask.sparsity(),
            acc: metrics::accuracy(&p, test.labels())?,
            nll: metrics::nll(&p, test.labels())?,
            ece: metrics::ece(&p, test.labels(), cfg.eval.ece_bins)?,
        });
    }

    create_dir(&out)?;
    write_rows(
        &out.join("metrics.csv"),
        &["method", "sparsity", "chains", "acc", "nll", "ece", "ess_mean"],
        std::slice::from_ref(&row),
    )?;
    write_rows(
        &out.join("chains.csv"),
        &["chain", "samples", "sparsity", "acc", "nll", "ece"],
        &chain_rows,
    )?;
    let acf_rows: Vec<(usize, f64)> = report.acf.iter().copied().enumerate().collect();
    write_rows(&out.join("acf.csv"), &["lag", "rho"], &acf_rows)?;
    let cs_rows: Vec<(usize, f64)> = report.cumsum.iter().copied().enumerate().collect();
    write_rows(&out.join("cumsum.csv"), &["index", "d"], &cs_rows)?;
    println!(
        "{} (sparsity {:.4}, {} chains): acc {:.4}, nll {:.4}, ece {:.4}, ess {:.1}",
        row.method, row.sparsity, row.chains, row.acc, row.nll, row.ece, row.ess_mean
    );
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let (cfg, out) = resolve(&args.common)?;
    let b = &cfg.bench;
    if args.common.dry_run {
        let targets = if args.ensembles.is_empty() {
            format!("synthetic ensembles at sparsities {:?}, {} samples", b.sparsities, b.samples)
        } else {
            format!("{} ensemble file(s)", args.ensembles.len())
        };
        print_plan(
            "bench plan",
            &[
                targets,
                format!("{} inputs, {} repetitions, batch size 1, 1 thread", b.inputs, b.repetitions),
                format!("output {}", out.display()),
            ],
            &cfg,
        );
        return Ok(());
    }
    let mut named: Vec<(String, PosteriorEnsemble)> = Vec::new();
    for p in &args.ensembles {
        let e = load_ensemble(p)?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        named.push((format!("{}:{stem}", ensemble_method(&e)), e));
    }
    let net = match named.first() {
        Some((_, e)) => e.net().clone(),
        None => {
            let (dim, classes) = cfg.data_shape();
            cfg.network(dim, classes)?
        }
    };
    if named.is_empty() {
        for (i, &s) in b.sparsities.iter().enumerate() {
            let e = synthetic_ensemble(&net, s, 1, b.samples, rng::derive_seed(cfg.seed, "bench", i as u64))?;
            named.push((format!("rgm-{s}"), e));
        }
    }
    let dense = match &args.dense {
        Some(p) => load_ensemble(p)?,
        None => {
            let samples = named.first().map_or(b.samples, |(_, e)| e.num_samples());
            synthetic_ensemble(&net, 0.0, 1, samples, rng::derive_seed(cfg.seed, "bench-dense", 0))?
        }
    };
    let mut g = rng::stream(cfg.seed, "bench-inputs", 0);
    let inputs = Array2::from_shape_fn((b.inputs, net.input_dim()), |_| g.random_range(0.0..1.0));
    let refs: Vec<(String, &PosteriorEnsemble)> = named.iter().map(|(n, e)| (n.clone(), e)).collect();
    let report = bench(&dense, &refs, inputs.view(), b.repetitions)?;
    create_dir(&out)?;
    report.write_csv(&out.join("bench.csv"))?;
    println!("hardware: {}", report.hardware);
    for r in &report.rows {
        println!(
            "  {:<24} sparsity {:.4}  S={:<3} {:.3e} s/input  {:.2}×",
            r.method, r.sparsity, r.num_samples, r.latency_s, r.speedup
        );
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub sparsity: f64,
    pub chains: usize,
    pub metric: String,
    pub value: f64,
}

fn find_metrics(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_metrics(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
            found.push(p);
        }
    }
    Ok(())
}

/// Long-format rows from every metrics.csv under `run_dir` (sorted by path)
/// and the number of malformed rows skipped.
pub fn collect_report(run_dir: &Path) -> Result<(Vec<ReportRow>, usize)> {
    let mut files = Vec::new();
    find_metrics(run_dir, &mut files)?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for f in files {
        let mut r = csv::Reader::from_path(&f).map_err(|e| csv_error(&f, e))?;
        for rec in r.deserialize::<MetricsRow>() {
            match rec {
                Ok(m) => {
                    for (metric, value) in [("acc", m.acc), ("nll", m.nll), ("ece", m.ece), ("ess_mean", m.ess_mean)] {
                        rows.push(ReportRow {
                            method: m.method.clone(),
                            sparsity: m.sparsity,
                            chains: m.chains,
                            metric: metric.into(),
                            value,
                        });
                    }
                }
                Err(e) => {
                    log::warn!("{}: skipping malformed row: {e}", f.display());
                    skipped += 1;
                }
            }
        }
    }
    Ok((rows, skipped))
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut common = args.common.clone();
    if common.out.is_none() {
        common.out = args.run_dir.clone();
    }
    let (cfg, out) = resolve(&common)?;
    let run_dir = args.run_dir.clone().unwrap_or_else(|| out.clone());
    if common.dry_run {
        print_plan(
            "report plan",
            &[format!("join metrics.csv files under {} into {}", run_dir.display(), out.join("report.csv").display())],
            &cfg,
        );
        return Ok(());
    }
    let (rows, skipped) = collect_report(&run_dir)?;
    create_dir(&out)?;
    write_rows(&out.join("report.csv"), &["method", "sparsity", "chains", "metric", "value"], &rows)?;
    println!("{} rows written, {skipped} malformed row(s) skipped", rows.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_parsing() {
        assert_eq!("51..100".parse::<Window>().unwrap(), Window { first: 51, last: 100 });
        assert!("0..3".parse::<Window>().is_err());
        assert!("5..3".parse::<Window>().is_err());
        assert!("5-3".parse::<Window>().is_err());
    }

    #[test]
    fn windowed_series_groups_by_chain() {
        let rows: Vec<TraceRow> = (0..2)
            .flat_map(|c| (1..=5).map(move |e| TraceRow { chain: c, epoch: e, inll: (c * 10 + e) as f64 }))
            .collect();
        let s = windowed_series(&rows, Window { first: 2, last: 4 });
        assert_eq!(s, vec![vec![2.0, 3.0, 4.0], vec![12.0, 13.0, 14.0]]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Integrity("x".into())), 2);
        assert_eq!(main_with_args(["sparse-posterior", "frobnicate"]), 1);
        assert_eq!(main_with_args(["sparse-posterior", "--help"]), 0);
    }
}
