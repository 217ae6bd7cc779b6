//! Analytic per-round latency and communication-volume model, plus the
//! cost parameters used to price live training rounds.
//!
//! Symbols: `T` full-model per-round training time, `T'` the same under a
//! pre-trained start, `T_FedAvg`/`T_Merge` full-model and smashed-parameter
//! aggregation times, `p` full-model parameter count, `d` total samples,
//! `h` smashed elements per sample, `r` the client-side fraction of the
//! model, `R` the link rate in parameters per second, and `N` the VU count.
//! Communication counts are parameter counts; times are seconds.

use crate::error::{Error, Result};
use crate::protocols::ProtocolKind;

/// The full symbol set of the per-round latency model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatencyParams {
    /// Per-round training time from scratch, seconds.
    pub t: f64,
    /// Per-round training time under a pre-trained start, seconds.
    pub t_prime: f64,
    /// Full-model aggregation time, seconds.
    pub t_fedavg: f64,
    /// Smashed-parameter aggregation time, seconds.
    pub t_merge: f64,
    /// Full-model parameter count.
    pub p: u64,
    /// Total data size, samples across all VUs.
    pub d: u64,
    /// Smashed-layer size, elements per sample.
    pub h: u64,
    /// Client-submodel fraction of the full model, in (0, 1).
    pub r: f64,
    /// Link rate, parameters per second.
    pub rate: f64,
    /// Number of VUs.
    pub n: u32,
}

impl LatencyParams {
    /// Validates domains. Returns soft warnings for the orderings the
    /// model's headline claim relies on (`T' <= T`, `T_Merge <= T_FedAvg`)
    /// rather than failing on them.
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive = [
            ("T", self.t),
            ("T'", self.t_prime),
            ("T_FedAvg", self.t_fedavg),
            ("T_Merge", self.t_merge),
            ("R", self.rate),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::InvalidLatencyParam(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        for (name, v) in [("p", self.p), ("d", self.d), ("h", self.h)] {
            if v == 0 {
                return Err(Error::InvalidLatencyParam(format!(
                    "{name} must be strictly positive"
                )));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidLatencyParam("N must be strictly positive".into()));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidLatencyParam(format!(
                "r must lie in (0, 1), got {}",
                self.r
            )));
        }
        let mut warnings = Vec::new();
        if self.t_prime > self.t {
            warnings.push(format!("T' = {} exceeds T = {}", self.t_prime, self.t));
        }
        if self.t_merge > self.t_fedavg {
            warnings.push(format!(
                "T_Merge = {} exceeds T_FedAvg = {}",
                self.t_merge, self.t_fedavg
            ));
        }
        Ok(warnings)
    }
}

/// Converts a bit rate to the model's parameters-per-second unit, assuming
/// 32 bits per parameter.
pub fn rate_from_bits_per_s(bits_per_s: f64) -> f64 {
    bits_per_s / 32.0
}

/// One method's row of the latency table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBreakdown {
    pub method: ProtocolKind,
    /// Training plus aggregation time, seconds.
    pub train_agg_s: f64,
    /// Parameters exchanged per VU per round.
    pub comms_per_vu: f64,
    /// Parameters exchanged in total per round.
    pub total_comms: f64,
    /// Total communication time, seconds.
    pub total_comm_s: f64,
    /// Total per-round latency, seconds.
    pub total_s: f64,
}

fn breakdown(
    method: ProtocolKind,
    train_agg_s: f64,
    comms_per_vu: f64,
    total_comms: f64,
    total_comm_s: f64,
) -> LatencyBreakdown {
    LatencyBreakdown {
        method,
        train_agg_s,
        comms_per_vu,
        total_comms,
        total_comm_s,
        total_s: train_agg_s + total_comm_s,
    }
}

/// FL row: train/agg `T + T_FedAvg`, per-VU comms `2p`, total `2Np`,
/// comm time `2p/R`.
pub fn fl_latency(params: &LatencyParams) -> Result<LatencyBreakdown> {
    params.validate()?;
    let p = params.p as f64;
    let n = params.n as f64;
    Ok(breakdown(
        ProtocolKind::Fl,
        params.t + params.t_fedavg,
        2.0 * p,
        2.0 * n * p,
        2.0 * p / params.rate,
    ))
}

/// SL row: train `T`, per-VU comms `2dh/N + 2pr`, total `2dh + 2Npr`,
/// comm time `2dh/R + 2Npr/R` (serial links).
pub fn sl_latency(params: &LatencyParams) -> Result<LatencyBreakdown> {
    params.validate()?;
    let (p, d, h) = (params.p as f64, params.d as f64, params.h as f64);
    let n = params.n as f64;
    let smashed = 2.0 * d * h;
    let model = 2.0 * p * params.r;
    Ok(breakdown(
        ProtocolKind::Sl,
        params.t,
        smashed / n + model,
        smashed + n * model,
        smashed / params.rate + n * model / params.rate,
    ))
}

/// FSL row: train/agg `T + T_Merge`, comms as SL, comm time
/// `2dh/(NR) + 2pr/R` (parallel links).
pub fn fsl_latency(params: &LatencyParams) -> Result<LatencyBreakdown> {
    params.validate()?;
    let (p, d, h) = (params.p as f64, params.d as f64, params.h as f64);
    let n = params.n as f64;
    let smashed = 2.0 * d * h;
    let model = 2.0 * p * params.r;
    Ok(breakdown(
        ProtocolKind::Fsl,
        params.t + params.t_merge,
        smashed / n + model,
        smashed + n * model,
        smashed / (n * params.rate) + model / params.rate,
    ))
}

/// FSTL row: FSL with `T` replaced by `T'`.
pub fn fstl_latency(params: &LatencyParams) -> Result<LatencyBreakdown> {
    let fsl = fsl_latency(params)?;
    let train_agg = params.t_prime + params.t_merge;
    Ok(breakdown(
        ProtocolKind::Fstl,
        train_agg,
        fsl.comms_per_vu,
        fsl.total_comms,
        fsl.total_comm_s,
    ))
}

/// All four rows at once.
pub fn all_latencies(params: &LatencyParams) -> Result<[LatencyBreakdown; 4]> {
    Ok([
        fl_latency(params)?,
        sl_latency(params)?,
        fsl_latency(params)?,
        fstl_latency(params)?,
    ])
}

/// Outcome of evaluating the headline ordering FSTL < FSL < FL < SL.
#[derive(Debug, Clone)]
pub struct OrderingReport {
    /// Methods sorted by ascending total latency.
    pub ranked: Vec<(ProtocolKind, f64)>,
    /// Whether the full chain FSTL < FSL < FL < SL holds.
    pub full_ordering_holds: bool,
    /// The individual inequalities that fail, e.g. "FSL<FL violated".
    pub violations: Vec<String>,
}

/// Evaluates all four totals and reports which of the inequalities in
/// FSTL < FSL < FL < SL hold. The chain is a claim about a parameter
/// regime, not a universal invariant, so it is reported rather than
/// asserted.
pub fn ordering_report(params: &LatencyParams) -> Result<OrderingReport> {
    let rows = all_latencies(params)?;
    let total = |kind: ProtocolKind| {
        rows.iter()
            .find(|b| b.method == kind)
            .map(|b| b.total_s)
            .expect("all four methods present")
    };
    let chain = [
        (ProtocolKind::Fstl, ProtocolKind::Fsl),
        (ProtocolKind::Fsl, ProtocolKind::Fl),
        (ProtocolKind::Fl, ProtocolKind::Sl),
    ];
    let mut violations = Vec::new();
    for (a, b) in chain {
        if total(a) >= total(b) {
            violations.push(format!("{a}<{b} violated"));
        }
    }
    let mut ranked: Vec<(ProtocolKind, f64)> = rows.iter().map(|b| (b.method, b.total_s)).collect();
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite totals"));
    Ok(OrderingReport {
        ranked,
        full_ordering_holds: violations.is_empty(),
        violations,
    })
}

/// One row of the latency-vs-N sweep.
#[derive(Debug, Clone, Copy)]
pub struct CurveRow {
    pub n: u32,
    pub method: ProtocolKind,
    pub train_agg_s: f64,
    pub comm_s: f64,
    pub total_s: f64,
    pub total_comm_params: f64,
}

pub const CURVE_CSV_HEADER: &str = "n,method,train_agg_s,comm_s,total_s,total_comm_params";

impl CurveRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.n, self.method, self.train_agg_s, self.comm_s, self.total_s, self.total_comm_params
        )
    }
}

/// Evaluates all four methods at each N, holding d, p, r and the rates
/// fixed.
pub fn latency_vs_n_curve(base: &LatencyParams, n_values: &[u32]) -> Result<Vec<CurveRow>> {
    if n_values.is_empty() {
        return Err(Error::InvalidLatencyParam("empty N list for sweep".into()));
    }
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidLatencyParam(
            "N values must be strictly ascending".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n_values.len() * 4);
    for &n in n_values {
        let params = LatencyParams { n, ..*base };
        for b in all_latencies(&params)? {
            rows.push(CurveRow {
                n,
                method: b.method,
                train_agg_s: b.train_agg_s,
                comm_s: b.total_comm_s,
                total_s: b.total_s,
                total_comm_params: b.total_comms,
            });
        }
    }
    Ok(rows)
}

/// Raw measurements extracted from run artifacts, used to bind the model's
/// symbols to observed quantities. Structural fields (counts, sizes) are
/// deterministic; the time fields come from wall clocks.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeasuredRun {
    pub full_params: Option<u64>,
    pub client_params: Option<u64>,
    pub smashed_per_sample: Option<u64>,
    pub total_samples: Option<u64>,
    pub n_vus: Option<u32>,
    pub rate: Option<f64>,
    pub train_round_s: Option<f64>,
    pub pretrained_round_s: Option<f64>,
    pub fedavg_s: Option<f64>,
    pub merge_s: Option<f64>,
}

/// Assembles `LatencyParams` from measurements; `r` is the exact client
/// parameter fraction. Fails listing every absent symbol.
pub fn measure_params(run: &MeasuredRun) -> Result<LatencyParams> {
    let mut missing = Vec::new();
    let mut need = |name: &str, present: bool| {
        if !present {
            missing.push(name.to_string());
        }
    };
    need("p", run.full_params.is_some());
    need("r (client params)", run.client_params.is_some());
    need("h", run.smashed_per_sample.is_some());
    need("d", run.total_samples.is_some());
    need("N", run.n_vus.is_some());
    need("R", run.rate.is_some());
    need("T", run.train_round_s.is_some());
    need("T'", run.pretrained_round_s.is_some());
    need("T_FedAvg", run.fedavg_s.is_some());
    need("T_Merge", run.merge_s.is_some());
    if !missing.is_empty() {
        return Err(Error::MissingMeasurement(missing.join(", ")));
    }
    let p = run.full_params.unwrap();
    let params = LatencyParams {
        t: run.train_round_s.unwrap(),
        t_prime: run.pretrained_round_s.unwrap(),
        t_fedavg: run.fedavg_s.unwrap(),
        t_merge: run.merge_s.unwrap(),
        p,
        d: run.total_samples.unwrap(),
        h: run.smashed_per_sample.unwrap(),
        r: run.client_params.unwrap() as f64 / p as f64,
        rate: run.rate.unwrap(),
        n: run.n_vus.unwrap(),
    };
    params.validate()?;
    Ok(params)
}

/// Cost parameters for pricing live training rounds in the round records.
/// These are configured (not wall-clock) values so record streams replay
/// byte-identically.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostParams {
    /// Seconds of compute per sample per pass when training from scratch.
    pub train_s_per_sample: f64,
    /// Seconds of compute per sample per pass under a pre-trained start.
    pub pretrained_s_per_sample: f64,
    /// Full-model aggregation time per round, seconds.
    pub fedavg_s: f64,
    /// Smashed-parameter aggregation time per round, seconds.
    pub merge_s: f64,
    /// Link rate, parameters per second.
    pub rate: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            train_s_per_sample: 1e-3,
            pretrained_s_per_sample: 1e-3,
            fedavg_s: 0.05,
            merge_s: 0.02,
            rate: 1e6,
        }
    }
}

impl CostParams {
    pub fn per_sample(&self, pretrained: bool) -> f64 {
        if pretrained {
            self.pretrained_s_per_sample
        } else {
            self.train_s_per_sample
        }
    }
}

/// Models the compute portion of a round from per-VU training times:
/// serial (sum) for SL, parallel (max) plus the aggregation constant for
/// the federated methods.
pub fn round_compute_s(kind: ProtocolKind, per_vu_s: &[f64], costs: &CostParams) -> f64 {
    let max = per_vu_s.iter().copied().fold(0.0, f64::max);
    match kind {
        ProtocolKind::Sl => per_vu_s.iter().sum(),
        ProtocolKind::Fl => max + costs.fedavg_s,
        ProtocolKind::Fsl | ProtocolKind::Fstl => max + costs.merge_s,
    }
}

/// Models the communication portion of a round from per-VU traffic counts:
/// serial accumulation for SL, the slowest parallel link otherwise.
pub fn round_comm_s(kind: ProtocolKind, per_vu_params: &[u64], costs: &CostParams) -> f64 {
    match kind {
        ProtocolKind::Sl => per_vu_params.iter().sum::<u64>() as f64 / costs.rate,
        _ => per_vu_params.iter().copied().max().unwrap_or(0) as f64 / costs.rate,
    }
}
