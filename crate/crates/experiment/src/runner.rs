//! Experiment execution: dataset assembly, pretraining, the protocol x N
//! sweep, report emission, and the wall-clock measurement mode for the
//! latency model.

use std::path::PathBuf;
use std::time::Instant;

use fstl_core::latency::{
    latency_vs_n_curve, measure_params, LatencyParams, MeasuredRun,
};
use fstl_core::network::{init_network, NetSpec, Network};
use fstl_core::protocols::{train, FleetState, ProtocolKind, RoundConfig, RoundRecord};
use fstl_core::rng::derive_seed;
use fstl_core::split::split_network;
use fstl_core::weights::load_weights;

use crate::config::{DatasetConfig, ExperimentConfig, PretrainSettings};
use crate::dataset::{load_idx, synth_dataset, Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::partition::partition;
use crate::pretrain::{pretrain, verify_disjoint, PretrainOutput, PretrainSpec, SourceTask};
use crate::report::{
    accuracy_csv, cell_csv_name, latency_csv, write_atomic, CellOutcome, Manifest,
};

/// Training pool and test set, both in working precision.
pub struct DataBundle {
    pub train: Dataset<f32>,
    pub test: Dataset<f32>,
}

/// Builds the train/test datasets described by the configuration.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<DataBundle> {
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            seed,
            classes,
            samples_per_class,
            test_per_class,
            input,
            separation,
            noise,
        } => {
            let base = seed.unwrap_or_else(|| derive_seed(cfg.seed, &[0x64617461]));
            let train = synth_dataset(
                base,
                *samples_per_class,
                *classes,
                input,
                *separation,
                *noise,
                SplitTag::Train,
            )?;
            let test = synth_dataset(
                base,
                *test_per_class,
                *classes,
                input,
                *separation,
                *noise,
                SplitTag::Test,
            )?;
            Ok(DataBundle { train, test })
        }
        DatasetConfig::Idx {
            images,
            labels,
            test_images,
            test_labels,
            subset,
        } => {
            let mut train: Dataset<f32> = load_idx(images, labels, SplitTag::Train)?;
            let test: Dataset<f32> = load_idx(test_images, test_labels, SplitTag::Test)?;
            if let Some(k) = subset {
                if *k > train.n() {
                    return Err(Error::Config(format!(
                        "subset {k} exceeds training set size {}",
                        train.n()
                    )));
                }
                let mut stream = fstl_core::rng::SeedStream::new(derive_seed(
                    cfg.seed,
                    &[0x7375_6273_6574],
                ));
                let mut perm = stream.permutation(train.n());
                perm.truncate(*k);
                perm.sort_unstable();
                train = train.subset(&perm);
            }
            Ok(DataBundle { train, test })
        }
    }
}

fn pretrain_spec(settings: &PretrainSettings, run_seed: u64) -> Result<PretrainSpec> {
    let source = match settings.scheme.as_str() {
        "sample-split" => SourceTask::SampleSplit {
            fraction: settings.fraction,
        },
        "class-subset" => SourceTask::ClassSubset {
            classes: settings.classes.clone(),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown pretrain scheme '{other}'"
            )))
        }
    };
    Ok(PretrainSpec {
        source,
        epochs: settings.epochs,
        eta: settings.eta,
        batch_size: settings.batch_size,
        seed: settings.seed.unwrap_or_else(|| derive_seed(run_seed, &[0x707265])),
    })
}

/// Pretraining artifacts plus the target pool every protocol trains on.
pub struct PreparedRun {
    pub bundle: DataBundle,
    pub target: Dataset<f32>,
    pub arch: NetSpec,
    pub pretrained: Option<PretrainOutput>,
}

/// Assembles datasets, the architecture, and (when configured) the
/// pretrained weights with their disjoint target pool.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedRun> {
    cfg.validate()?;
    let bundle = build_datasets(cfg)?;
    let sample_shape = bundle.train.sample_shape();
    let arch = cfg.net_spec(&sample_shape, bundle.train.class_count)?;
    if let Some(cut) = cfg.round.cut {
        fstl_core::split::SplitSpec::new(cut)
            .validate(arch.layers.len())
            .map_err(|e| Error::Config(e.to_string()))?;
    }

    let needs_pretrain = cfg.protocols.contains(&ProtocolKind::Fstl);
    let (pretrained, target) = if needs_pretrain {
        let settings = cfg.pretrain.clone().unwrap_or_default();
        let spec = pretrain_spec(&settings, cfg.seed)?;
        let out = pretrain(&spec, &arch, &bundle.train)?;
        let target = bundle.train.subset(&out.target_indices);
        (Some(out), target)
    } else {
        (None, bundle.train.clone())
    };
    Ok(PreparedRun {
        bundle,
        target,
        arch,
        pretrained,
    })
}

/// Everything `run_experiment` produced.
#[derive(Debug)]
pub struct RunOutputs {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

/// Runs one (protocol, N) cell on a prepared run: partition, initialize,
/// train, and return the round records.
pub fn run_cell(
    cfg: &ExperimentConfig,
    prepared: &PreparedRun,
    protocol: ProtocolKind,
    n_vus: u32,
) -> Result<Vec<RoundRecord>> {
    let sample_shape = prepared.target.sample_shape();
    let round_cfg: RoundConfig = cfg.round_config(protocol, &sample_shape);
    let plan = partition(&prepared.target, n_vus, derive_seed(cfg.seed, &[n_vus as u64]))?;
    plan.check(prepared.target.n())?;
    if let Some(out) = &prepared.pretrained {
        // Map target-pool shard positions back to original pool indices
        // before checking source/target disjointness.
        if matches!(cfg.pretrain.as_ref().map(|p| p.scheme.as_str()), Some("sample-split")) {
            let original: Vec<Vec<usize>> = plan
                .assignments
                .iter()
                .map(|idx| idx.iter().map(|&i| out.target_indices[i]).collect())
                .collect();
            verify_disjoint(&out.source_indices, &original)?;
        }
    }
    let shards = plan.shards(&prepared.target);
    let test = prepared.bundle.test.to_labeled();
    let pretrained_net: Option<Network<f32>> = match (protocol, &prepared.pretrained) {
        (ProtocolKind::Fstl, Some(out)) => Some(load_weights(&out.weights, &prepared.arch)?),
        (ProtocolKind::Fstl, None) => return Err(fstl_core::Error::MissingPretrained.into()),
        _ => None,
    };
    let costs = cfg.latency.cost_params();
    let (records, _state) = train(
        &round_cfg,
        &prepared.arch,
        &shards,
        &test,
        pretrained_net,
        &costs,
    )?;
    Ok(records)
}

/// Structural latency symbols derived from the architecture and cut; no
/// training involved.
pub struct StructuralSymbols {
    pub full_params: u64,
    pub client_params: u64,
    pub smashed_per_sample: u64,
}

pub fn structural_symbols(arch: &NetSpec, cut: usize) -> Result<StructuralSymbols> {
    let net: Network<f32> = init_network(arch, 0)?;
    let full_params = net.param_count();
    let shapes = arch.activation_shapes()?;
    let smashed_per_sample: usize = shapes[cut].iter().product();
    let pair = split_network(net, fstl_core::split::SplitSpec::new(cut))?;
    Ok(StructuralSymbols {
        full_params,
        client_params: pair.client.param_count(),
        smashed_per_sample: smashed_per_sample as u64,
    })
}

/// The analytic latency parameters for the sweep CSV: structural symbols
/// measured from the run's architecture and data, time symbols taken from
/// the configured costs so the CSV replays byte-identically.
pub fn analytic_params(cfg: &ExperimentConfig, prepared: &PreparedRun) -> Result<LatencyParams> {
    let sample_shape = prepared.target.sample_shape();
    let cut = cfg
        .round
        .cut
        .unwrap_or_else(|| cfg.default_cut(&sample_shape));
    let d = prepared.target.n() as u64;
    let sym = structural_symbols(&prepared.arch, cut)?;
    let c = cfg.latency.cost_params();
    let epochs = cfg.round.local_epochs as f64;
    let params = LatencyParams {
        t: c.train_s_per_sample * d as f64 * epochs,
        t_prime: c.pretrained_s_per_sample * d as f64 * epochs,
        t_fedavg: c.fedavg_s,
        t_merge: c.merge_s,
        p: sym.full_params,
        d,
        h: sym.smashed_per_sample,
        r: sym.client_params as f64 / sym.full_params as f64,
        rate: c.rate,
        n: cfg.n_vus[0],
    };
    for w in params.validate()? {
        eprintln!("latency warning: {w}");
    }
    Ok(params)
}

/// Runs the full sweep: for each (protocol, N) cell partition, initialize,
/// train, and write the accuracy CSV; then emit the analytic latency curve
/// and the run manifest. A failing cell is recorded and the sweep
/// continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    let started = Instant::now();
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let mut pretrain_weights = None;
    if let Some(out) = &prepared.pretrained {
        let weights_path = cfg.out_dir.join("pretrained.fstlw");
        std::fs::write(&weights_path, &out.weights).map_err(|e| Error::io(&weights_path, e))?;
        let meta_path = cfg.out_dir.join("pretrained.meta.json");
        let mut meta = serde_json::to_string_pretty(&out.metadata)
            .map_err(|e| Error::Config(e.to_string()))?;
        meta.push('\n');
        write_atomic(&meta_path, &meta)?;
        pretrain_weights = Some("pretrained.fstlw".to_string());
    }

    let mut cells = Vec::new();
    for &n in &cfg.n_vus {
        for &protocol in &cfg.protocols {
            let name = cell_csv_name(protocol, n);
            match run_cell(cfg, &prepared, protocol, n) {
                Ok(records) => {
                    write_atomic(&cfg.out_dir.join(&name), &accuracy_csv(&records))?;
                    cells.push(CellOutcome {
                        protocol,
                        n_vus: n,
                        status: "ok".into(),
                        error: None,
                        csv: Some(name),
                        rounds: records.len(),
                        final_accuracy: records.last().map(|r| r.test_accuracy),
                    });
                }
                Err(e) => {
                    cells.push(CellOutcome {
                        protocol,
                        n_vus: n,
                        status: "failed".into(),
                        error: Some(e.to_string()),
                        csv: None,
                        rounds: 0,
                        final_accuracy: None,
                    });
                }
            }
        }
    }

    // Analytic latency sweep over the configured N values.
    let mut latency_file = None;
    let mut n_sorted: Vec<u32> = cfg.n_vus.clone();
    n_sorted.sort_unstable();
    n_sorted.dedup();
    match analytic_params(cfg, &prepared).and_then(|params| {
        latency_vs_n_curve(&params, &n_sorted).map_err(Error::from)
    }) {
        Ok(rows) => {
            write_atomic(&cfg.out_dir.join("latency_vs_n.csv"), &latency_csv(&rows))?;
            latency_file = Some("latency_vs_n.csv".to_string());
        }
        Err(e) => eprintln!("latency curve skipped: {e}"),
    }

    let manifest = Manifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        cells,
        latency_csv: latency_file,
        pretrain_weights,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let manifest_path = cfg.out_dir.join("manifest.json");
    write_atomic(&manifest_path, &manifest.to_json())?;

    if manifest.any_failed() {
        let failed = manifest.cells.iter().filter(|c| c.status != "ok").count();
        return Err(Error::CellFailures {
            failed,
            total: manifest.cells.len(),
        });
    }
    Ok(RunOutputs {
        manifest_path,
        manifest,
    })
}

/// Replays an experiment from its manifest into a new output directory.
pub fn replay(manifest_path: &std::path::Path, out_dir: Option<PathBuf>) -> Result<RunOutputs> {
    let manifest = Manifest::load(manifest_path)?;
    let mut cfg = manifest.config;
    if let Some(dir) = out_dir {
        cfg.out_dir = dir;
    }
    run_experiment(&cfg)
}

/// Wall-clock measurement of the latency symbols from a live run: T and T'
/// from per-round compute of scratch and pretrained split runs, T_FedAvg
/// and T_Merge from the aggregation segments, structural symbols from the
/// architecture.
pub fn measure_run(cfg: &ExperimentConfig, n_vus: u32, rounds: u32) -> Result<LatencyParams> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let sample_shape = prepared.target.sample_shape();
    let cut = cfg
        .round
        .cut
        .unwrap_or_else(|| cfg.default_cut(&sample_shape));
    let plan = partition(&prepared.target, n_vus, derive_seed(cfg.seed, &[n_vus as u64]))?;
    let shards = plan.shards(&prepared.target);
    let test = prepared.bundle.test.to_labeled();
    let costs = cfg.latency.cost_params();

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let run_rounds = |round_cfg: &RoundConfig,
                      pretrained: Option<Network<f32>>|
     -> Result<(Vec<f64>, Vec<f64>)> {
        let mut state: FleetState<f32> =
            fstl_core::protocols::init_fleet(round_cfg, &prepared.arch, n_vus, pretrained)?;
        let mut compute = Vec::new();
        let mut agg = Vec::new();
        for _ in 0..rounds {
            let rec = match round_cfg.protocol {
                ProtocolKind::Fl => {
                    fstl_core::protocols::run_fl_round(&mut state, &shards, &test, round_cfg, &costs)?
                }
                ProtocolKind::Fsl => {
                    fstl_core::protocols::run_fsl_round(&mut state, &shards, &test, round_cfg, &costs)?
                }
                ProtocolKind::Fstl => fstl_core::protocols::run_fstl_round(
                    &mut state, &shards, &test, round_cfg, &costs,
                )?,
                ProtocolKind::Sl => {
                    fstl_core::protocols::run_sl_round(&mut state, &shards, &test, round_cfg, &costs)?
                }
            };
            compute.push(rec.wall_compute_s);
            agg.push(rec.wall_agg_s);
        }
        Ok((compute, agg))
    };

    let fsl_cfg = cfg.round_config(ProtocolKind::Fsl, &sample_shape);
    let (fsl_compute, fsl_agg) = run_rounds(&fsl_cfg, None)?;

    let fl_cfg = cfg.round_config(ProtocolKind::Fl, &sample_shape);
    let (_fl_compute, fl_agg) = run_rounds(&fl_cfg, None)?;

    let pretrained_out = prepared
        .pretrained
        .as_ref()
        .ok_or_else(|| Error::Config("measurement mode needs a [pretrain] section".into()))?;
    let fstl_cfg = cfg.round_config(ProtocolKind::Fstl, &sample_shape);
    let pretrained_net: Network<f32> = load_weights(&pretrained_out.weights, &prepared.arch)?;
    let (fstl_compute, _) = run_rounds(&fstl_cfg, Some(pretrained_net))?;

    let sym = structural_symbols(&prepared.arch, cut)?;
    let run = MeasuredRun {
        full_params: Some(sym.full_params),
        client_params: Some(sym.client_params),
        smashed_per_sample: Some(sym.smashed_per_sample),
        total_samples: Some(prepared.target.n() as u64),
        n_vus: Some(n_vus),
        rate: Some(costs.rate),
        train_round_s: Some(mean(&fsl_compute)),
        pretrained_round_s: Some(mean(&fstl_compute)),
        fedavg_s: Some(mean(&fl_agg)),
        merge_s: Some(mean(&fsl_agg)),
    };
    measure_params(&run).map_err(Error::from)
}
