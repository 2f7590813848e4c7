//! `uwmmse` command-line front end.
//!
//! Flag values override the config file; the effective configuration is
//! echoed into every artifact.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uwmmse_core::channel::sample_dataset;
use uwmmse_core::neural::MlpParams;
use uwmmse_core::rng::stream;
use uwmmse_core::{SystemConfig, UwmmseWeights};

use crate::campaign::{self, Method};
use crate::config::RunConfig;
use crate::dataset::{perturbed_path, sidecar_path, write_json, Dataset, DatasetManifest, PerturbationSidecar};
use crate::error::{Result, RunError};
use crate::provenance::{version_string, Provenance};
use crate::report::{self, ComparisonTable};
use crate::{svg, weights};

pub const DATASET_FILE: &str = "dataset.uwds";
pub const WEIGHTS_FILE: &str = "uwmmse_weights.json";
pub const MLP_WEIGHTS_FILE: &str = "mlp_weights.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const MLP_LOSS_FILE: &str = "mlp_loss.csv";

#[derive(Debug, Parser)]
#[command(name = "uwmmse", version = version_string(), about = "Unfolded WMMSE power allocation and perturbation-bound campaigns")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct PathArgs {
    /// Dataset file (UWDS).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// UWMMSE weights file.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// MLP weights file.
    #[arg(long)]
    pub mlp_weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Uwmmse,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mlp,
    TrWmmse,
    Wmmse,
    Uwmmse,
}

impl MethodArg {
    fn label(self) -> &'static str {
        match self {
            Self::Mlp => "MLP",
            Self::TrWmmse => "Tr-WMMSE",
            Self::Wmmse => "WMMSE",
            Self::Uwmmse => "UWMMSE",
        }
    }
}

const ALL_METHODS: [MethodArg; 4] = [MethodArg::Mlp, MethodArg::TrWmmse, MethodArg::Wmmse, MethodArg::Uwmmse];

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a channel dataset.
    Generate {
        #[command(flatten)]
        paths: PathArgs,
        /// Number of channel realizations.
        #[arg(long)]
        count: Option<usize>,
        /// Transceiver pairs per network.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        paths: PathArgs,
        #[arg(long, value_enum, default_value = "uwmmse")]
        model: ModelArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Mean clean sum-rate of every available method.
    Eval {
        #[command(flatten)]
        paths: PathArgs,
    },
    /// Bound-validation campaign.
    ValidateBound {
        #[command(flatten)]
        paths: PathArgs,
        /// Perturbation cap.
        #[arg(long)]
        eps: Option<f64>,
        /// Perturbation scale.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Stability and sum-rate comparison on identical perturbations.
    Compare {
        #[command(flatten)]
        paths: PathArgs,
        /// Methods to compare; all when absent.
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Vec<MethodArg>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Re-render a figure from a bound-entries or comparison CSV.
    Plot {
        /// `bound_entries.csv` or `comparison_samples.csv`.
        input: PathBuf,
        /// SVG destination; next to the input when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn effective_config(global: &GlobalArgs, paths: Option<&PathArgs>) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &global.out {
        cfg.paths.out_dir = o.clone();
    }
    if global.jobs.is_some() {
        cfg.campaign.jobs = global.jobs;
    }
    if let Some(p) = paths {
        if p.dataset.is_some() {
            cfg.paths.dataset = p.dataset.clone();
        }
        if p.weights.is_some() {
            cfg.paths.weights = p.weights.clone();
        }
        if p.mlp_weights.is_some() {
            cfg.paths.mlp_weights = p.mlp_weights.clone();
        }
    }
    Ok(cfg)
}

fn dataset_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.dataset.clone().unwrap_or_else(|| cfg.paths.out_dir.join(DATASET_FILE))
}

fn weights_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.weights.clone().unwrap_or_else(|| cfg.paths.out_dir.join(WEIGHTS_FILE))
}

fn mlp_weights_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.mlp_weights.clone().unwrap_or_else(|| cfg.paths.out_dir.join(MLP_WEIGHTS_FILE))
}

/// The dataset's network size takes precedence over `system.m`.
fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, SystemConfig)> {
    let data = Dataset::read(&dataset_path(cfg))?;
    if data.is_empty() {
        return Err(RunError::Data("dataset holds no samples".into()));
    }
    let sys = cfg.system.with_m(data.m);
    Ok((data, sys))
}

fn load_uwmmse(cfg: &RunConfig) -> Result<UwmmseWeights> {
    let path = weights_path(cfg);
    let w = weights::load_uwmmse(&path)?.model;
    if w.k() != cfg.model.layers {
        return Err(RunError::Data(format!(
            "{}: weights have K = {} layers, config says model.layers = {}",
            path.display(),
            w.k(),
            cfg.model.layers
        )));
    }
    Ok(w)
}

fn load_mlp(cfg: &RunConfig, m: usize) -> Result<MlpParams> {
    let path = mlp_weights_path(cfg);
    let p = weights::load_mlp(&path)?.model;
    if p.m != m {
        return Err(RunError::Data(format!(
            "{}: MLP weights are for M = {}, dataset has M = {m}",
            path.display(),
            p.m
        )));
    }
    Ok(p)
}

fn run(cli: Cli) -> Result<()> {
    let Cli { global, command } = cli;
    match command {
        Command::Generate { paths, count, m } => {
            let mut cfg = effective_config(&global, Some(&paths))?;
            if let Some(c) = count {
                cfg.dataset.count = c;
            }
            if let Some(m) = m {
                cfg.system.m = m;
            }
            cfg.validate()?;
            generate(&cfg)
        }
        Command::Train { paths, model, epochs } => {
            let mut cfg = effective_config(&global, Some(&paths))?;
            if let Some(e) = epochs {
                match model {
                    ModelArg::Uwmmse => cfg.train.epochs = e,
                    ModelArg::Mlp => cfg.mlp.epochs = e,
                }
            }
            cfg.validate()?;
            train(&cfg, model)
        }
        Command::Eval { paths } => {
            let cfg = effective_config(&global, Some(&paths))?;
            cfg.validate()?;
            eval(&cfg)
        }
        Command::ValidateBound { paths, eps, tau } => {
            let mut cfg = effective_config(&global, Some(&paths))?;
            if let Some(e) = eps {
                cfg.perturbation.eps = e;
            }
            if let Some(t) = tau {
                cfg.perturbation.tau = t;
            }
            cfg.validate()?;
            validate_bound(&cfg)
        }
        Command::Compare { paths, methods, eps } => {
            let mut cfg = effective_config(&global, Some(&paths))?;
            if let Some(e) = eps {
                cfg.perturbation.eps = e;
            }
            cfg.validate()?;
            let methods = if methods.is_empty() { ALL_METHODS.to_vec() } else { methods };
            compare(&cfg, &methods)
        }
        Command::Plot { input, output } => {
            let cfg = effective_config(&global, None)?;
            cfg.validate()?;
            plot(&cfg, &input, output.as_deref())
        }
    }
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let path = dataset_path(cfg);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        report::ensure_dir(dir)?;
    }
    let prov = Provenance::new(cfg);
    let data = Dataset::new(sample_dataset(&cfg.system, cfg.dataset.count, cfg.seed)?)?;
    data.write(&path)?;
    let manifest = DatasetManifest {
        format: "UWDS".into(),
        format_version: crate::dataset::VERSION,
        m: cfg.system.m,
        count: data.len(),
        seed: cfg.seed,
        system: cfg.system,
        provenance: prov.clone(),
    };
    write_json(&sidecar_path(&path), &manifest)?;
    println!("wrote {} ({} samples, M = {})", path.display(), data.len(), data.m);
    if cfg.dataset.write_perturbed {
        let spec = cfg.perturbation_spec();
        let p_path = perturbed_path(&path);
        data.perturbed(&spec)?.write(&p_path)?;
        let sidecar = PerturbationSidecar {
            tau: spec.tau,
            eps: spec.eps,
            seed: spec.seed,
            source: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            provenance: prov,
        };
        write_json(&sidecar_path(&p_path), &sidecar)?;
        println!("wrote {}", p_path.display());
    }
    Ok(())
}

fn train(cfg: &RunConfig, model: ModelArg) -> Result<()> {
    let (data, sys) = load_dataset(cfg)?;
    let pool = campaign::pool(cfg.jobs())?;
    let prov = Provenance::new(cfg);
    let out = &cfg.paths.out_dir;
    report::ensure_dir(out)?;
    let mut init_rng = stream(cfg.init_seed());
    match model {
        ModelArg::Uwmmse => {
            let m = &cfg.model;
            let init = UwmmseWeights::init(m.layers, m.hidden, m.mode, &mut init_rng);
            let outcome = campaign::train_parallel(&pool, &data.samples, &init, &cfg.train_config(), &sys)?;
            let path = weights_path(cfg);
            weights::save_uwmmse(&path, &outcome.model, &prov)?;
            report::write_loss_csv(&out.join(LOSS_FILE), &prov, &outcome.loss_history)?;
            print_trained(&path, &outcome.loss_history);
        }
        ModelArg::Mlp => {
            let init = MlpParams::init(data.m, &cfg.mlp_widths(), &mut init_rng);
            let outcome = campaign::train_parallel(&pool, &data.samples, &init, &cfg.mlp_train_config(), &sys)?;
            let path = mlp_weights_path(cfg);
            weights::save_mlp(&path, &outcome.model, &prov)?;
            report::write_loss_csv(&out.join(MLP_LOSS_FILE), &prov, &outcome.loss_history)?;
            print_trained(&path, &outcome.loss_history);
        }
    }
    Ok(())
}

fn print_trained(path: &Path, history: &[f64]) {
    match history.last() {
        Some(l) => println!("wrote {} (final epoch mean loss {l:.6})", path.display()),
        None => println!("wrote {} (no epochs run)", path.display()),
    }
}

/// Methods of `wanted`, loading learned weights as needed.
fn build_methods(cfg: &RunConfig, wanted: &[MethodArg], m: usize) -> Result<Vec<(String, Method)>> {
    wanted
        .iter()
        .map(|&w| {
            let method = match w {
                MethodArg::Mlp => Method::Mlp(load_mlp(cfg, m)?),
                MethodArg::TrWmmse => Method::TruncatedWmmse(cfg.model.layers),
                MethodArg::Wmmse => Method::Wmmse { iters: cfg.campaign.wmmse_iters, tol: cfg.campaign.wmmse_tol },
                MethodArg::Uwmmse => Method::Uwmmse(load_uwmmse(cfg)?),
            };
            Ok((w.label().to_string(), method))
        })
        .collect()
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let (data, sys) = load_dataset(cfg)?;
    let mut wanted = vec![MethodArg::TrWmmse, MethodArg::Wmmse];
    if cfg.paths.weights.is_some() || weights_path(cfg).exists() {
        wanted.push(MethodArg::Uwmmse);
    }
    if cfg.paths.mlp_weights.is_some() || mlp_weights_path(cfg).exists() {
        wanted.insert(0, MethodArg::Mlp);
    }
    let methods = build_methods(cfg, &wanted, data.m)?;
    let pool = campaign::pool(cfg.jobs())?;
    let results = campaign::evaluate(&pool, &methods, &data.samples, &sys)?;
    let path = report::write_eval(&cfg.paths.out_dir, &Provenance::new(cfg), &results)?;
    for (name, s) in &results {
        println!("{name}: mean sum-rate {:.4}", s.mean);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn validate_bound(cfg: &RunConfig) -> Result<()> {
    let (data, sys) = load_dataset(cfg)?;
    let w = load_uwmmse(cfg)?;
    if cfg.campaign.surface_sample >= data.len() {
        return Err(RunError::Config(format!(
            "campaign.surface_sample = {} but the dataset has {} samples",
            cfg.campaign.surface_sample,
            data.len()
        )));
    }
    let pool = campaign::pool(cfg.jobs())?;
    let pert = cfg.perturbation_spec();
    let rep = campaign::validate_parallel(&pool, &w, &data.samples, &pert, &sys, &cfg.bound, &cfg.histogram)?;
    let prov = Provenance::new(cfg);
    let arts =
        report::write_bound_outputs(&cfg.paths.out_dir, &prov, &rep, &pert, &cfg.bound, cfg.campaign.surface_sample)?;
    println!(
        "{} entries ({} degenerate): violation rate {:.4}, margin < 0.5: {:.4}, margin > 2: {:.4}",
        rep.total_entries,
        rep.degenerate_entries,
        rep.violation_rate,
        rep.fraction_margin_below_half,
        rep.fraction_margin_above_two
    );
    println!("wrote {}", arts.report.display());
    Ok(())
}

fn compare(cfg: &RunConfig, wanted: &[MethodArg]) -> Result<()> {
    let (data, sys) = load_dataset(cfg)?;
    let methods = build_methods(cfg, wanted, data.m)?;
    let pool = campaign::pool(cfg.jobs())?;
    let pert = cfg.perturbation_spec();
    let rep = campaign::compare(&pool, &methods, &data.samples, &pert, &sys)?;
    report::write_comparison_outputs(&cfg.paths.out_dir, &Provenance::new(cfg), &rep, &pert)?;
    for m in &rep.methods {
        let var = m.variation.map_or(f64::NAN, |v| v.mean);
        println!("{}: mean sum-rate {:.4}, mean normalized variation {var:.6}", m.name, m.sum_rate.mean);
    }
    println!("wrote {}", cfg.paths.out_dir.join(report::COMPARISON_REPORT).display());
    Ok(())
}

fn plot(cfg: &RunConfig, input: &Path, output: Option<&Path>) -> Result<()> {
    let (text, default_name) = match report::read_margins(input) {
        Ok(margins) => (svg::render_histogram(&margins, &cfg.histogram.edges())?, report::MARGIN_HISTOGRAM_SVG),
        Err(_) => (ComparisonTable::read(input)?.render()?, report::COMPARISON_SVG),
    };
    let out = output.map_or_else(|| input.with_file_name(default_name), Path::to_path_buf);
    std::fs::write(&out, text).map_err(RunError::io(&out))?;
    println!("wrote {}", out.display());
    Ok(())
}
