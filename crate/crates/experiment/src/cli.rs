//! The `fstl` command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fstl_core::latency::{
    all_latencies, latency_vs_n_curve, ordering_report, rate_from_bits_per_s, LatencyParams,
};
use fstl_core::protocols::ProtocolKind;

use crate::config::{ExperimentConfig, PretrainSettings};
use crate::error::{Error, Result};
use crate::pretrain::{pretrain, PretrainSpec, SourceTask};
use crate::report::{latency_csv, summarize, write_atomic};
use crate::runner::{self, run_experiment};

#[derive(Parser, Debug)]
#[command(
    name = "fstl",
    version,
    about = "Deterministic simulator for FL, SL, FSL and FSTL over a vehicular fleet with one server, \
             with an analytic per-round latency model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a source-task model and save weights for FSTL initialization
    Pretrain(PretrainArgs),
    /// Run one protocol at one fleet size and write its report files
    Train(TrainArgs),
    /// Evaluate the analytic latency model (optionally from live measurements)
    Latency(LatencyArgs),
    /// Sweep protocols x fleet sizes and write CSVs plus a run manifest
    Sweep(SweepArgs),
    /// Summarize a run directory's manifest
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct CommonConfig {
    /// TOML experiment configuration; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory for report files
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonConfig,

    /// Run seed (also seeds the dataset unless the config pins one)
    #[arg(long, required = true)]
    pub seed: u64,

    /// Source-task scheme: sample-split or class-subset
    #[arg(long)]
    pub scheme: Option<String>,

    /// Fraction of the pool used as the source task (sample-split)
    #[arg(long)]
    pub fraction: Option<f64>,

    /// Source classes (class-subset), e.g. --classes 0,1,2,3,4
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,

    #[arg(long)]
    pub epochs: Option<u32>,

    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonConfig,

    /// Protocol to run: fl, sl, fsl or fstl
    #[arg(long, required = true)]
    pub protocol: String,

    /// Fleet size
    #[arg(long, default_value_t = 4)]
    pub n_vus: u32,

    /// Run seed (mandatory: no silent nondeterminism)
    #[arg(long, required = true)]
    pub seed: u64,

    #[arg(long)]
    pub rounds: Option<u32>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub eta: Option<f64>,

    #[arg(long)]
    pub alpha: Option<f64>,

    /// Cut layer index for split protocols
    #[arg(long)]
    pub cut: Option<usize>,

    #[arg(long)]
    pub local_epochs: Option<u32>,

    /// Stop once the mean training loss reaches this value
    #[arg(long)]
    pub stop_loss: Option<f64>,
}

#[derive(Args, Debug)]
pub struct LatencyArgs {
    #[command(flatten)]
    pub common: CommonConfig,

    /// Measure T, T', T_FedAvg and T_Merge from a live measurement run
    /// instead of taking them from flags
    #[arg(long)]
    pub measure: bool,

    /// Seed for the measurement run
    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    #[arg(long, default_value_t = 10.0)]
    pub t: f64,

    #[arg(long)]
    pub t_prime: Option<f64>,

    #[arg(long, default_value_t = 1.0)]
    pub t_fedavg: f64,

    #[arg(long, default_value_t = 0.5)]
    pub t_merge: f64,

    /// Full-model parameter count
    #[arg(long, default_value_t = 1000)]
    pub p: u64,

    /// Total data size in samples
    #[arg(long, default_value_t = 3000)]
    pub d: u64,

    /// Smashed elements per sample
    #[arg(long, default_value_t = 10)]
    pub h: u64,

    /// Client-side fraction of the model
    #[arg(long, default_value_t = 0.2)]
    pub r: f64,

    /// Link rate in parameters per second
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,

    /// Link rate in bits per second (32 bits per parameter); overrides --rate
    #[arg(long)]
    pub rate_bits: Option<f64>,

    /// Fleet size for the single-point breakdown
    #[arg(long, default_value_t = 20)]
    pub n: u32,

    /// Fleet sizes for the sweep CSV, e.g. --n-list 2,5,10,20
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<u32>>,

    /// Write the sweep as CSV to this path
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonConfig,

    /// Run seed (mandatory unless --replay provides one)
    #[arg(long, required_unless_present = "replay")]
    pub seed: Option<u64>,

    /// Replay a previous run from its manifest
    #[arg(long)]
    pub replay: Option<PathBuf>,

    /// Protocols to sweep, e.g. --protocols fl,fsl,fstl
    #[arg(long, value_delimiter = ',')]
    pub protocols: Option<Vec<String>>,

    /// Fleet sizes to sweep, e.g. --n-list 2,5,10,20
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<u32>>,

    #[arg(long)]
    pub rounds: Option<u32>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directory containing manifest.json
    #[arg(long)]
    pub dir: PathBuf,
}

fn parse_protocols(names: &[String]) -> Result<Vec<ProtocolKind>> {
    names
        .iter()
        .map(|s| s.parse::<ProtocolKind>().map_err(Error::from))
        .collect()
}

fn base_config(common: &CommonConfig, seed: u64, default_out: &str) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_synthetic(seed, PathBuf::from(default_out)),
    };
    cfg.seed = seed;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

impl Cli {
    pub fn execute(self) -> Result<()> {
        match self.command {
            Command::Pretrain(args) => cmd_pretrain(args),
            Command::Train(args) => cmd_train(args),
            Command::Latency(args) => cmd_latency(args),
            Command::Sweep(args) => cmd_sweep(args),
            Command::Report(args) => {
                print!("{}", summarize(&args.dir)?);
                Ok(())
            }
        }
    }
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.common, args.seed, "runs/pretrain")?;
    let mut settings = cfg.pretrain.clone().unwrap_or_default();
    if let Some(scheme) = args.scheme {
        settings.scheme = scheme;
    }
    if let Some(fraction) = args.fraction {
        settings.fraction = fraction;
    }
    if let Some(classes) = args.classes {
        settings.classes = classes;
    }
    if let Some(epochs) = args.epochs {
        settings.epochs = epochs;
    }
    if let Some(eta) = args.eta {
        settings.eta = eta;
    }
    cfg.pretrain = Some(settings.clone());
    cfg.validate()?;

    let bundle = runner::build_datasets(&cfg)?;
    let arch = cfg.net_spec(&bundle.train.sample_shape(), bundle.train.class_count)?;
    let spec = PretrainSpec {
        source: match settings.scheme.as_str() {
            "class-subset" => SourceTask::ClassSubset {
                classes: settings.classes.clone(),
            },
            _ => SourceTask::SampleSplit {
                fraction: settings.fraction,
            },
        },
        epochs: settings.epochs,
        eta: settings.eta,
        batch_size: settings.batch_size,
        seed: settings.seed.unwrap_or(args.seed),
    };
    let out = pretrain(&spec, &arch, &bundle.train)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let weights_path = cfg.out_dir.join("pretrained.fstlw");
    std::fs::write(&weights_path, &out.weights).map_err(|e| Error::io(&weights_path, e))?;
    let mut meta = serde_json::to_string_pretty(&out.metadata).expect("metadata serializes");
    meta.push('\n');
    write_atomic(&cfg.out_dir.join("pretrained.meta.json"), &meta)?;
    println!(
        "pretrained {} epochs on {} source samples; source accuracy {:.4}",
        out.metadata.epochs, out.metadata.source_fit_samples, out.metadata.source_accuracy
    );
    println!("weights: {}", weights_path.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let protocol: ProtocolKind = args.protocol.parse()?;
    let mut cfg = base_config(&args.common, args.seed, "runs/train")?;
    cfg.protocols = vec![protocol];
    cfg.n_vus = vec![args.n_vus];
    if let Some(v) = args.rounds {
        cfg.round.rounds = v;
    }
    if let Some(v) = args.batch_size {
        cfg.round.batch_size = v;
    }
    if let Some(v) = args.eta {
        cfg.round.eta = v;
    }
    if let Some(v) = args.alpha {
        cfg.round.alpha = v;
    }
    if let Some(v) = args.cut {
        cfg.round.cut = Some(v);
    }
    if let Some(v) = args.local_epochs {
        cfg.round.local_epochs = v;
    }
    if let Some(v) = args.stop_loss {
        cfg.round.stop_loss = Some(v);
    }
    if protocol == ProtocolKind::Fstl && cfg.pretrain.is_none() {
        cfg.pretrain = Some(PretrainSettings::default());
    }
    let outputs = run_experiment(&cfg)?;
    for cell in &outputs.manifest.cells {
        println!(
            "{} n={}: {} rounds, final accuracy {}",
            cell.protocol,
            cell.n_vus,
            cell.rounds,
            cell.final_accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "-".into())
        );
    }
    println!("manifest: {}", outputs.manifest_path.display());
    Ok(())
}

fn cmd_latency(args: LatencyArgs) -> Result<()> {
    let params = if args.measure {
        let cfg = base_config(&args.common, args.seed, "runs/latency")?;
        let mut cfg = cfg;
        if cfg.pretrain.is_none() {
            cfg.pretrain = Some(PretrainSettings::default());
        }
        let measured = runner::measure_run(&cfg, args.n, 2)?;
        println!(
            "measured: T={:.6}s T'={:.6}s T_FedAvg={:.6}s T_Merge={:.6}s p={} d={} h={} r={:.4}",
            measured.t,
            measured.t_prime,
            measured.t_fedavg,
            measured.t_merge,
            measured.p,
            measured.d,
            measured.h,
            measured.r
        );
        measured
    } else {
        let rate = match args.rate_bits {
            Some(bits) => rate_from_bits_per_s(bits),
            None => args.rate,
        };
        LatencyParams {
            t: args.t,
            t_prime: args.t_prime.unwrap_or(args.t),
            t_fedavg: args.t_fedavg,
            t_merge: args.t_merge,
            p: args.p,
            d: args.d,
            h: args.h,
            r: args.r,
            rate,
            n: args.n,
        }
    };
    for warning in params.validate().map_err(Error::from)? {
        eprintln!("warning: {warning}");
    }

    println!("per-round latency at N={}:", params.n);
    println!("  method  train+agg_s  comm_s  total_s  comms/vu  total_comms");
    for b in all_latencies(&params).map_err(Error::from)? {
        println!(
            "  {:>6}  {:>11.4}  {:>6.4}  {:>7.4}  {:>8.1}  {:>11.1}",
            b.method.name(),
            b.train_agg_s,
            b.total_comm_s,
            b.total_s,
            b.comms_per_vu,
            b.total_comms
        );
    }
    let report = ordering_report(&params).map_err(Error::from)?;
    let ranked: Vec<String> = report
        .ranked
        .iter()
        .map(|(k, v)| format!("{}({v:.3})", k.name()))
        .collect();
    println!("ranking: {}", ranked.join(" < "));
    if report.full_ordering_holds {
        println!("ordering FSTL < FSL < FL < SL holds for these parameters");
    } else {
        println!("ordering FSTL < FSL < FL < SL does not hold: {}", report.violations.join("; "));
    }

    if let Some(n_list) = args.n_list {
        let mut ns = n_list;
        ns.sort_unstable();
        ns.dedup();
        let rows = latency_vs_n_curve(&params, &ns).map_err(Error::from)?;
        let csv = latency_csv(&rows);
        match &args.csv {
            Some(path) => {
                write_atomic(path, &csv)?;
                println!("sweep csv: {}", path.display());
            }
            None => print!("{csv}"),
        }
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let outputs = if let Some(manifest_path) = &args.replay {
        runner::replay(manifest_path, args.common.out.clone())?
    } else {
        let seed = args.seed.expect("clap enforces seed without --replay");
        let mut cfg = base_config(&args.common, seed, "runs/sweep")?;
        if let Some(protocols) = &args.protocols {
            cfg.protocols = parse_protocols(protocols)?;
        }
        if let Some(n_list) = &args.n_list {
            cfg.n_vus = n_list.clone();
        }
        if let Some(rounds) = args.rounds {
            cfg.round.rounds = rounds;
        }
        if cfg.protocols.contains(&ProtocolKind::Fstl) && cfg.pretrain.is_none() {
            cfg.pretrain = Some(PretrainSettings::default());
        }
        run_experiment(&cfg)?
    };
    for cell in &outputs.manifest.cells {
        println!(
            "{} n={}: {} ({} rounds)",
            cell.protocol, cell.n_vus, cell.status, cell.rounds
        );
    }
    println!("manifest: {}", outputs.manifest_path.display());
    Ok(())
}

/// Parses arguments and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; anything else is a usage /
            // configuration problem.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.execute() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
