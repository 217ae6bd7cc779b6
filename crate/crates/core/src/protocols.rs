//! Round-loop orchestrators for the four distributed-learning protocols,
//! with stopping criteria and per-round metric capture.
//!
//! Execution is sequential in ascending vu_id order even where a protocol
//! is conceptually parallel; parallelism enters only through the latency
//! model, never the numerics. Within a round the split-federated protocols
//! run synchronized minibatch steps: every VU processes its next batch, the
//! per-VU server gradients are averaged and applied, and the clients are
//! re-synchronized by FedAvg plus alpha-blend at the round boundary.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::federation::{
    average_gradients, blend_client_update, fedavg_params, size_weights, ClientWeight,
};
use crate::latency::{round_comm_s, round_compute_s, CostParams};
use crate::network::{init_network, LossTarget, NetSpec, Network};
use crate::rng::{derive_seed, SeedStream};
use crate::scalar::Scalar;
use crate::split::{
    assemble_full, client_backward, client_forward, server_forward_backward, split_network,
    SplitSpec,
};
use crate::tensor::Tensor;

/// The four protocols under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ProtocolKind {
    Fl,
    Sl,
    Fsl,
    Fstl,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [
        ProtocolKind::Fl,
        ProtocolKind::Sl,
        ProtocolKind::Fsl,
        ProtocolKind::Fstl,
    ];

    pub fn is_split(self) -> bool {
        !matches!(self, ProtocolKind::Fl)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Fl => "FL",
            ProtocolKind::Sl => "SL",
            ProtocolKind::Fsl => "FSL",
            ProtocolKind::Fstl => "FSTL",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fl" => Ok(ProtocolKind::Fl),
            "sl" => Ok(ProtocolKind::Sl),
            "fsl" | "splitfed" => Ok(ProtocolKind::Fsl),
            "fstl" => Ok(ProtocolKind::Fstl),
            other => Err(Error::InvalidConfig(format!("unknown protocol '{other}'"))),
        }
    }
}

/// Stopping criterion for a training run. `max_rounds` always caps the run;
/// a loss threshold additionally stops once the mean training loss of a
/// round falls to or below the value.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StopRule {
    MaxRounds,
    LossThreshold { loss: f64 },
}

/// Configuration of one training run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundConfig {
    pub protocol: ProtocolKind,
    pub max_rounds: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub eta: f64,
    pub alpha: f64,
    pub cut: Option<SplitSpec>,
    pub seed: u64,
    pub stop: StopRule,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be >= 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidConfig("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.eta <= 0.0 || !self.eta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eta must be a positive finite scalar, got {}",
                self.eta
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        match (self.protocol.is_split(), self.cut.is_some()) {
            (true, false) => {
                return Err(Error::InvalidConfig(format!(
                    "{} requires a cut layer",
                    self.protocol
                )))
            }
            (false, true) => {
                return Err(Error::InvalidConfig("FL takes no cut layer".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

/// A data shard: features with the batch dimension first, labels as class
/// indices.
#[derive(Debug, Clone)]
pub struct LabeledData<T> {
    pub features: Tensor<T>,
    pub labels: Tensor<T>,
}

impl<T: Scalar> LabeledData<T> {
    pub fn new(features: Tensor<T>, labels: Tensor<T>) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.rows()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.gather_rows(indices),
            labels: self.labels.gather_rows(indices),
        }
    }
}

/// The training order a VU visits its shard in during one round: a seeded
/// permutation derived from (global seed, vu_id, round). Exposed so
/// independent oracles can replay the exact data order.
pub fn shard_order(seed: u64, vu_id: u32, round: u32, len: usize) -> Vec<usize> {
    let mut stream = SeedStream::new(derive_seed(
        seed,
        &[0x0073_6875_6666_6c65, vu_id as u64, round as u64],
    ));
    stream.permutation(len)
}

/// Splits `order` into consecutive batches of at most `batch_size`.
pub fn batch_slices(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    order.chunks(batch_size).collect()
}

/// Per-VU communication tally for one round, in parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VuComms {
    pub vu_id: u32,
    pub uplink_params: u64,
    pub downlink_params: u64,
}

/// Per-round metrics.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: u32,
    pub protocol: ProtocolKind,
    pub n_vus: u32,
    /// Sample-weighted mean training loss over the round.
    pub train_loss: f64,
    /// Post-aggregation accuracy on the held-out test set.
    pub test_accuracy: f64,
    /// Modeled round latency, seconds (configured costs, so deterministic).
    pub latency_s: f64,
    /// Total parameters sent VU -> server this round.
    pub uplink_params: u64,
    /// Total parameters sent server -> VU this round.
    pub downlink_params: u64,
    pub per_vu: Vec<VuComms>,
    /// Wall-clock compute and aggregation time, measurement only; never
    /// written to report files.
    pub wall_compute_s: f64,
    pub wall_agg_s: f64,
}

impl RoundRecord {
    /// Wire bytes, 4 per parameter.
    pub fn uplink_bytes(&self) -> u64 {
        self.uplink_params * 4
    }

    pub fn downlink_bytes(&self) -> u64 {
        self.downlink_params * 4
    }
}

/// Models held by the fleet between rounds.
#[derive(Debug, Clone)]
pub enum FleetState<T> {
    /// FL: every VU trains a full model; the server keeps the global model.
    Federated {
        locals: Vec<Network<T>>,
        global: Network<T>,
        round: u32,
    },
    /// SL / FSL / FSTL: per-VU client submodels plus the shared server
    /// submodel.
    Split {
        clients: Vec<Network<T>>,
        server: Network<T>,
        round: u32,
    },
}

impl<T: Scalar> FleetState<T> {
    pub fn round(&self) -> u32 {
        match self {
            FleetState::Federated { round, .. } | FleetState::Split { round, .. } => *round,
        }
    }

    pub fn n_vus(&self) -> u32 {
        match self {
            FleetState::Federated { locals, .. } => locals.len() as u32,
            FleetState::Split { clients, .. } => clients.len() as u32,
        }
    }

    /// The post-aggregation model evaluated against the test set: the
    /// global model for FL, the relay-final client joined with the server
    /// for SL, and the FedAvg'd client joined with the server for FSL/FSTL.
    pub fn evaluation_model(&self) -> Result<Network<T>> {
        match self {
            FleetState::Federated { global, .. } => Ok(global.clone()),
            FleetState::Split { clients, server, .. } => {
                let client = clients.last().ok_or(Error::EmptyParticipants)?;
                assemble_full(client, server)
            }
        }
    }

    pub fn new_federated(spec: &NetSpec, seed: u64, n_vus: u32) -> Result<Self> {
        let global: Network<T> = init_network(spec, seed)?;
        Ok(FleetState::Federated {
            locals: vec![global.clone(); n_vus as usize],
            global,
            round: 0,
        })
    }

    pub fn new_split(full: Network<T>, cut: SplitSpec, n_vus: u32) -> Result<Self> {
        let pair = split_network(full, cut)?;
        Ok(FleetState::Split {
            clients: vec![pair.client; n_vus as usize],
            server: pair.server,
            round: 0,
        })
    }
}

/// Chunked loss/accuracy evaluation of a head-terminated network.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &LabeledData<T>) -> Result<(f64, f64)> {
    const CHUNK: usize = 256;
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyShard(0));
    }
    let indices: Vec<usize> = (0..n).collect();
    let mut loss_acc = 0.0f64;
    let mut acc_acc = 0.0f64;
    for chunk in indices.chunks(CHUNK) {
        let batch = data.select(chunk);
        let (loss, acc) = net.evaluate_batch(&batch.features, &batch.labels)?;
        loss_acc += loss.to_acc() * chunk.len() as f64;
        acc_acc += acc.to_acc() * chunk.len() as f64;
    }
    Ok((loss_acc / n as f64, acc_acc / n as f64))
}

fn check_shards<T: Scalar>(shards: &[LabeledData<T>], n_vus: u32) -> Result<()> {
    if shards.len() != n_vus as usize {
        return Err(Error::InvalidConfig(format!(
            "{} shards for {} VUs",
            shards.len(),
            n_vus
        )));
    }
    for (i, s) in shards.iter().enumerate() {
        if s.n() == 0 {
            return Err(Error::EmptyShard(i as u32));
        }
    }
    Ok(())
}

struct LossMeter {
    weighted: f64,
    samples: u64,
}

impl LossMeter {
    fn new() -> Self {
        Self { weighted: 0.0, samples: 0 }
    }

    fn add<T: Scalar>(&mut self, loss: T, batch_len: usize) {
        self.weighted += loss.to_acc() * batch_len as f64;
        self.samples += batch_len as u64;
    }

    fn mean(&self) -> f64 {
        self.weighted / self.samples as f64
    }
}

/// One FL round: every VU copies the global model, runs local minibatch
/// SGD, and the server replaces the global model with the weighted FedAvg
/// of the local results.
pub fn run_fl_round<T: Scalar>(
    state: &mut FleetState<T>,
    shards: &[LabeledData<T>],
    test: &LabeledData<T>,
    cfg: &RoundConfig,
    costs: &CostParams,
) -> Result<RoundRecord> {
    let FleetState::Federated { locals, global, round } = state else {
        return Err(Error::InvalidConfig("FL round on a split fleet state".into()));
    };
    check_shards(shards, locals.len() as u32)?;
    let this_round = *round + 1;
    let n = locals.len();
    let p = global.param_count();
    let eta = T::from_acc(cfg.eta);

    let mut meter = LossMeter::new();
    let mut per_vu_times = Vec::with_capacity(n);
    let mut per_vu = Vec::with_capacity(n);
    let compute_start = Instant::now();
    for (i, shard) in shards.iter().enumerate() {
        let mut local = global.clone();
        let order = shard_order(cfg.seed, i as u32, this_round, shard.n());
        for _ in 0..cfg.local_epochs {
            for batch_idx in batch_slices(&order, cfg.batch_size) {
                let batch = shard.select(batch_idx);
                let trace = local.forward(&batch.features)?;
                let (loss, _) =
                    crate::loss::loss_and_accuracy(trace.output(), &batch.labels)?;
                let (grads, _) = local.backward(&trace, LossTarget::Labels(&batch.labels))?;
                local.sgd_step(&grads, eta)?;
                meter.add(loss, batch_idx.len());
            }
        }
        locals[i] = local;
        per_vu_times.push(
            costs.per_sample(false) * (shard.n() as f64) * cfg.local_epochs as f64,
        );
        per_vu.push(VuComms {
            vu_id: i as u32,
            uplink_params: p,
            downlink_params: p,
        });
    }
    let wall_compute_s = compute_start.elapsed().as_secs_f64();

    let agg_start = Instant::now();
    let weights = size_weights(
        &shards
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, s.n()))
            .collect::<Vec<_>>(),
    );
    let param_sets: Vec<_> = locals.iter().map(|l| l.param_set()).collect();
    let set_refs: Vec<&_> = param_sets.iter().collect();
    let averaged = fedavg_params(&set_refs, &weights)?;
    global.set_param_set(&averaged)?;
    let wall_agg_s = agg_start.elapsed().as_secs_f64();

    let (_, test_accuracy) = evaluate(global, test)?;
    *round = this_round;

    let comm_counts: Vec<u64> = per_vu.iter().map(|c| c.uplink_params + c.downlink_params).collect();
    let latency_s = round_compute_s(ProtocolKind::Fl, &per_vu_times, costs)
        + round_comm_s(ProtocolKind::Fl, &comm_counts, costs);
    Ok(RoundRecord {
        round: this_round,
        protocol: ProtocolKind::Fl,
        n_vus: n as u32,
        train_loss: meter.mean(),
        test_accuracy,
        latency_s,
        uplink_params: per_vu.iter().map(|c| c.uplink_params).sum(),
        downlink_params: per_vu.iter().map(|c| c.downlink_params).sum(),
        per_vu,
        wall_compute_s,
        wall_agg_s,
    })
}

/// One SL round: VUs train strictly one after another in ascending vu_id,
/// each starting from the client weights the previous VU left behind; the
/// server part takes an SGD step per batch. No federated averaging occurs.
pub fn run_sl_round<T: Scalar>(
    state: &mut FleetState<T>,
    shards: &[LabeledData<T>],
    test: &LabeledData<T>,
    cfg: &RoundConfig,
    costs: &CostParams,
) -> Result<RoundRecord> {
    let FleetState::Split { clients, server, round } = state else {
        return Err(Error::InvalidConfig("SL round on a federated fleet state".into()));
    };
    check_shards(shards, clients.len() as u32)?;
    let this_round = *round + 1;
    let n = clients.len();
    let client_p = clients[0].param_count();
    let eta = T::from_acc(cfg.eta);

    let mut meter = LossMeter::new();
    let mut per_vu_times = Vec::with_capacity(n);
    let mut per_vu = Vec::with_capacity(n);
    // The relay: VU 0 picks up where the last VU of the previous round
    // stopped.
    let mut working = clients[n - 1].clone();
    let compute_start = Instant::now();
    for (i, shard) in shards.iter().enumerate() {
        let mut smashed_elems = 0u64;
        let order = shard_order(cfg.seed, i as u32, this_round, shard.n());
        for _ in 0..cfg.local_epochs {
            for batch_idx in batch_slices(&order, cfg.batch_size) {
                let batch = shard.select(batch_idx);
                let (smashed, trace) =
                    client_forward(&working, &batch.features, &batch.labels, i as u32)?;
                smashed_elems += smashed.activations.len() as u64;
                let pass = server_forward_backward(server, &smashed)?;
                server.sgd_step(&pass.gradients, eta)?;
                let client_grads = client_backward(&working, &trace, &pass.cut_gradient)?;
                working.sgd_step(&client_grads, eta)?;
                meter.add(pass.loss, batch_idx.len());
            }
        }
        clients[i] = working.clone();
        per_vu_times.push(
            costs.per_sample(false) * (shard.n() as f64) * cfg.local_epochs as f64,
        );
        per_vu.push(VuComms {
            vu_id: i as u32,
            // Client model relay down + up, plus smashed activations up and
            // cut gradients down.
            uplink_params: client_p + smashed_elems,
            downlink_params: client_p + smashed_elems,
        });
    }
    let wall_compute_s = compute_start.elapsed().as_secs_f64();
    *round = this_round;

    let (_, test_accuracy) = evaluate(&state.evaluation_model()?, test)?;
    let comm_counts: Vec<u64> = per_vu.iter().map(|c| c.uplink_params + c.downlink_params).collect();
    let latency_s = round_compute_s(ProtocolKind::Sl, &per_vu_times, costs)
        + round_comm_s(ProtocolKind::Sl, &comm_counts, costs);
    Ok(RoundRecord {
        round: this_round,
        protocol: ProtocolKind::Sl,
        n_vus: n as u32,
        train_loss: meter.mean(),
        test_accuracy,
        latency_s,
        uplink_params: per_vu.iter().map(|c| c.uplink_params).sum(),
        downlink_params: per_vu.iter().map(|c| c.downlink_params).sum(),
        per_vu,
        wall_compute_s,
        wall_agg_s: 0.0,
    })
}

/// Shared body of the FSL and FSTL rounds; `kind` selects the per-sample
/// compute cost and the record's protocol tag.
fn run_split_federated_round<T: Scalar>(
    state: &mut FleetState<T>,
    shards: &[LabeledData<T>],
    test: &LabeledData<T>,
    cfg: &RoundConfig,
    costs: &CostParams,
    kind: ProtocolKind,
) -> Result<RoundRecord> {
    let FleetState::Split { clients, server, round } = state else {
        return Err(Error::InvalidConfig(format!(
            "{kind} round on a federated fleet state"
        )));
    };
    check_shards(shards, clients.len() as u32)?;
    let this_round = *round + 1;
    let n = clients.len();
    let client_p = clients[0].param_count();
    let eta = T::from_acc(cfg.eta);
    let pretrained_cost = kind == ProtocolKind::Fstl;

    // Per-VU batch schedules for this round: the shard order repeated for
    // each local epoch, chunked into batches.
    let orders: Vec<Vec<usize>> = (0..n)
        .map(|i| shard_order(cfg.seed, i as u32, this_round, shards[i].n()))
        .collect();
    let schedules: Vec<Vec<&[usize]>> = orders
        .iter()
        .map(|o| batch_slices(o, cfg.batch_size))
        .collect();
    let steps_per_epoch: Vec<usize> = schedules.iter().map(|s| s.len()).collect();
    let max_steps = steps_per_epoch.iter().max().copied().unwrap_or(0) * cfg.local_epochs as usize;

    let all_weights = size_weights(
        &shards
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, s.n()))
            .collect::<Vec<_>>(),
    );

    let mut meter = LossMeter::new();
    let mut smashed_elems = vec![0u64; n];
    let mut wall_compute_s = 0.0;
    let mut wall_agg_s = 0.0;
    for step in 0..max_steps {
        let compute_start = Instant::now();
        let mut step_grads = Vec::new();
        let mut active_weights: Vec<ClientWeight> = Vec::new();
        for i in 0..n {
            let total_steps = steps_per_epoch[i] * cfg.local_epochs as usize;
            if step >= total_steps {
                continue;
            }
            let batch_idx = schedules[i][step % steps_per_epoch[i]];
            let batch = shards[i].select(batch_idx);
            let (smashed, trace) =
                client_forward(&clients[i], &batch.features, &batch.labels, i as u32)?;
            smashed_elems[i] += smashed.activations.len() as u64;
            let pass = server_forward_backward(server, &smashed)?;
            let client_grads = client_backward(&clients[i], &trace, &pass.cut_gradient)?;
            clients[i].sgd_step(&client_grads, eta)?;
            meter.add(pass.loss, batch_idx.len());
            step_grads.push(pass.gradients);
            active_weights.push(all_weights[i]);
        }
        wall_compute_s += compute_start.elapsed().as_secs_f64();

        // Lines 10-11: aggregate the server gradients of every VU active at
        // this step and apply one server update.
        let agg_start = Instant::now();
        let grad_refs: Vec<&_> = step_grads.iter().collect();
        let g_avg = average_gradients(&grad_refs, &active_weights)?;
        crate::federation::apply_server_update(server, &g_avg, eta)?;
        wall_agg_s += agg_start.elapsed().as_secs_f64();
    }

    // Line 12: FedAvg of the client submodels, then the alpha-blend pulls
    // every client toward the global average.
    let agg_start = Instant::now();
    let param_sets: Vec<_> = clients.iter().map(|c| c.param_set()).collect();
    let set_refs: Vec<&_> = param_sets.iter().collect();
    let global_client = fedavg_params(&set_refs, &all_weights)?;
    for client in clients.iter_mut() {
        let blended = blend_client_update(&client.param_set(), &global_client, cfg.alpha)?;
        client.set_param_set(&blended)?;
    }
    wall_agg_s += agg_start.elapsed().as_secs_f64();
    *round = this_round;

    // Evaluate the aggregated model: global client + server.
    let eval_model = {
        let FleetState::Split { clients, server, .. } = &*state else {
            unreachable!("state kind checked above");
        };
        let mut template = clients[0].clone();
        template.set_param_set(&global_client)?;
        assemble_full(&template, server)?
    };
    let (_, test_accuracy) = evaluate(&eval_model, test)?;

    let per_vu: Vec<VuComms> = (0..n)
        .map(|i| VuComms {
            vu_id: i as u32,
            // Blended client model down at round start, trained client up
            // for FedAvg, plus smashed activations up and cut gradients down.
            uplink_params: client_p + smashed_elems[i],
            downlink_params: client_p + smashed_elems[i],
        })
        .collect();
    let per_vu_times: Vec<f64> = shards
        .iter()
        .map(|s| costs.per_sample(pretrained_cost) * s.n() as f64 * cfg.local_epochs as f64)
        .collect();
    let comm_counts: Vec<u64> = per_vu.iter().map(|c| c.uplink_params + c.downlink_params).collect();
    let latency_s = round_compute_s(kind, &per_vu_times, costs)
        + round_comm_s(kind, &comm_counts, costs);
    Ok(RoundRecord {
        round: this_round,
        protocol: kind,
        n_vus: n as u32,
        train_loss: meter.mean(),
        test_accuracy,
        latency_s,
        uplink_params: per_vu.iter().map(|c| c.uplink_params).sum(),
        downlink_params: per_vu.iter().map(|c| c.downlink_params).sum(),
        per_vu,
        wall_compute_s,
        wall_agg_s,
    })
}

/// One FSL round (Algorithm lines 2-12 from a scratch initialization).
pub fn run_fsl_round<T: Scalar>(
    state: &mut FleetState<T>,
    shards: &[LabeledData<T>],
    test: &LabeledData<T>,
    cfg: &RoundConfig,
    costs: &CostParams,
) -> Result<RoundRecord> {
    run_split_federated_round(state, shards, test, cfg, costs, ProtocolKind::Fsl)
}

/// One FSTL round: the same body as FSL; the distinction is the pre-trained
/// initial state and the pre-trained per-sample compute cost.
pub fn run_fstl_round<T: Scalar>(
    state: &mut FleetState<T>,
    shards: &[LabeledData<T>],
    test: &LabeledData<T>,
    cfg: &RoundConfig,
    costs: &CostParams,
) -> Result<RoundRecord> {
    run_split_federated_round(state, shards, test, cfg, costs, ProtocolKind::Fstl)
}

/// Builds the initial fleet state for a run.
pub fn init_fleet<T: Scalar>(
    cfg: &RoundConfig,
    spec: &NetSpec,
    n_vus: u32,
    pretrained: Option<Network<T>>,
) -> Result<FleetState<T>> {
    cfg.validate()?;
    if n_vus == 0 {
        return Err(Error::InvalidConfig("need at least one VU".into()));
    }
    match (cfg.protocol, pretrained) {
        (ProtocolKind::Fstl, None) => Err(Error::MissingPretrained),
        (ProtocolKind::Fstl, Some(net)) => {
            if net.spec() != *spec {
                return Err(Error::InvalidConfig(
                    "pre-trained weights do not match the architecture".into(),
                ));
            }
            FleetState::new_split(net, cfg.cut.expect("validated"), n_vus)
        }
        (_, Some(_)) => Err(Error::InvalidConfig(format!(
            "{} must not consume a pre-trained weight source",
            cfg.protocol
        ))),
        (ProtocolKind::Fl, None) => FleetState::new_federated(spec, cfg.seed, n_vus),
        (_, None) => {
            let full: Network<T> = init_network(spec, cfg.seed)?;
            FleetState::new_split(full, cfg.cut.expect("validated"), n_vus)
        }
    }
}

fn dispatch_round<T: Scalar>(
    state: &mut FleetState<T>,
    shards: &[LabeledData<T>],
    test: &LabeledData<T>,
    cfg: &RoundConfig,
    costs: &CostParams,
) -> Result<RoundRecord> {
    match cfg.protocol {
        ProtocolKind::Fl => run_fl_round(state, shards, test, cfg, costs),
        ProtocolKind::Sl => run_sl_round(state, shards, test, cfg, costs),
        ProtocolKind::Fsl => run_fsl_round(state, shards, test, cfg, costs),
        ProtocolKind::Fstl => run_fstl_round(state, shards, test, cfg, costs),
    }
}

/// Runs rounds until the stop criterion fires, emitting one record per
/// round. Deterministic for a fixed configuration.
pub fn train<T: Scalar>(
    cfg: &RoundConfig,
    spec: &NetSpec,
    shards: &[LabeledData<T>],
    test: &LabeledData<T>,
    pretrained: Option<Network<T>>,
    costs: &CostParams,
) -> Result<(Vec<RoundRecord>, FleetState<T>)> {
    cfg.validate()?;
    check_shards(shards, shards.len() as u32)?;
    if let Some(cut) = cfg.cut {
        cut.validate(spec.layers.len())?;
    }
    let mut state = init_fleet(cfg, spec, shards.len() as u32, pretrained)?;
    let mut records = Vec::new();
    for _ in 0..cfg.max_rounds {
        let record = dispatch_round(&mut state, shards, test, cfg, costs)?;
        let stop = match cfg.stop {
            StopRule::MaxRounds => false,
            StopRule::LossThreshold { loss } => record.train_loss <= loss,
        };
        records.push(record);
        if stop {
            break;
        }
    }
    Ok((records, state))
}
