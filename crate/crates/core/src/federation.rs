//! Aggregation rules: weighted parameter averaging (FedAvg), weighted
//! gradient averaging, the averaged server update, and the alpha-blend
//! client synchronization.
//!
//! All averages normalize the raw weights first and reduce in the order the
//! participant list is given; callers pass ascending vu_id order whenever
//! bit-exact reproducibility is asserted.

use crate::error::{Error, Result};
use crate::network::{GradientSet, Network, ParamPair, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A participant's aggregation weight (raw; normalized internally).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientWeight {
    pub vu_id: u32,
    pub weight: f64,
}

/// Uniform weights over `n` participants with vu_ids `0..n`.
pub fn uniform_weights(n: u32) -> Vec<ClientWeight> {
    (0..n).map(|vu_id| ClientWeight { vu_id, weight: 1.0 }).collect()
}

/// Weights proportional to shard sizes, the default w_i.
pub fn size_weights(sizes: &[(u32, usize)]) -> Vec<ClientWeight> {
    sizes
        .iter()
        .map(|&(vu_id, n)| ClientWeight {
            vu_id,
            weight: n as f64,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationRule {
    FedavgParams,
    GradAverage,
    AlphaBlend,
}

/// Record of one aggregation event.
#[derive(Debug, Clone)]
pub struct AggregationReport {
    pub participants: Vec<u32>,
    pub bytes_aggregated: u64,
    pub rule: AggregationRule,
}

impl AggregationReport {
    pub fn new(participants: Vec<u32>, bytes_aggregated: u64, rule: AggregationRule) -> Result<Self> {
        if participants.is_empty() {
            return Err(Error::EmptyParticipants);
        }
        Ok(Self {
            participants,
            bytes_aggregated,
            rule,
        })
    }
}

fn normalized(weights: &[ClientWeight], n_sets: usize) -> Result<Vec<f64>> {
    if weights.len() != n_sets {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} participants",
            weights.len(),
            n_sets
        )));
    }
    if weights.iter().any(|w| w.weight < 0.0 || !w.weight.is_finite()) {
        return Err(Error::InvalidWeights("negative or non-finite weight".into()));
    }
    let total: f64 = weights.iter().map(|w| w.weight).sum();
    if total <= 0.0 {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    Ok(weights.iter().map(|w| w.weight / total).collect())
}

/// Element-wise weighted mean over shape-congruent parameter sets, reduced
/// in list order with f64 accumulation.
fn weighted_mean<T: Scalar>(sets: &[&ParamSet<T>], norm: &[f64]) -> Result<ParamSet<T>> {
    let first = sets[0];
    for (i, s) in sets.iter().enumerate().skip(1) {
        if !first.same_shape(s) {
            return Err(Error::ShapeMismatch(format!(
                "participant {i} parameter shapes do not match participant 0"
            )));
        }
    }
    let mut entries = Vec::with_capacity(first.entries.len());
    for e in 0..first.entries.len() {
        match &first.entries[e] {
            None => entries.push(None),
            Some(pair) => {
                let mut w_acc = vec![0.0f64; pair.weight.len()];
                let mut b_acc = vec![0.0f64; pair.bias.len()];
                for (s, &wn) in sets.iter().zip(norm) {
                    let p = s.entries[e].as_ref().expect("congruence checked");
                    for (acc, &v) in w_acc.iter_mut().zip(p.weight.data()) {
                        *acc += wn * v.to_acc();
                    }
                    for (acc, &v) in b_acc.iter_mut().zip(p.bias.data()) {
                        *acc += wn * v.to_acc();
                    }
                }
                entries.push(Some(ParamPair {
                    weight: Tensor::new(
                        pair.weight.shape().to_vec(),
                        w_acc.into_iter().map(T::from_acc).collect(),
                    )?,
                    bias: Tensor::new(
                        pair.bias.shape().to_vec(),
                        b_acc.into_iter().map(T::from_acc).collect(),
                    )?,
                }));
            }
        }
    }
    Ok(ParamSet { entries })
}

/// FedAvg over model parameter collections. With uniform weights this is the
/// plain (1/N) sum.
pub fn fedavg_params<T: Scalar>(
    sets: &[&ParamSet<T>],
    weights: &[ClientWeight],
) -> Result<ParamSet<T>> {
    if sets.is_empty() {
        return Err(Error::EmptyParticipants);
    }
    let norm = normalized(weights, sets.len())?;
    weighted_mean(sets, &norm)
}

/// Weighted average of per-VU server gradients, G_avg.
pub fn average_gradients<T: Scalar>(
    grads: &[&GradientSet<T>],
    weights: &[ClientWeight],
) -> Result<GradientSet<T>> {
    if grads.is_empty() {
        return Err(Error::EmptyParticipants);
    }
    let norm = normalized(weights, grads.len())?;
    weighted_mean(grads, &norm)
}

/// Applies the averaged gradient to the server model: theta_s -= eta * G_avg.
pub fn apply_server_update<T: Scalar>(
    server: &mut Network<T>,
    g_avg: &GradientSet<T>,
    eta: T,
) -> Result<()> {
    server.sgd_step(g_avg, eta)
}

/// Convex combination of a client's own parameters with the globally
/// averaged client parameters: `alpha * global + (1 - alpha) * own`.
///
/// The endpoints return the corresponding operand unchanged, and interior
/// blends are clamped into the element-wise [min, max] envelope so the
/// convexity invariant survives truncation.
pub fn blend_client_update<T: Scalar>(
    own: &ParamSet<T>,
    global: &ParamSet<T>,
    alpha: f64,
) -> Result<ParamSet<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if !own.same_shape(global) {
        return Err(Error::ShapeMismatch(
            "blend operands have different parameter shapes".into(),
        ));
    }
    if alpha == 1.0 {
        return Ok(global.clone());
    }
    if alpha == 0.0 {
        return Ok(own.clone());
    }
    let blend = |a: &Tensor<T>, b: &Tensor<T>| -> Result<Tensor<T>> {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&o, &g)| {
                let (ov, gv) = (o.to_acc(), g.to_acc());
                let v = alpha * gv + (1.0 - alpha) * ov;
                T::from_acc(v.clamp(ov.min(gv), ov.max(gv)))
            })
            .collect();
        Tensor::new(a.shape().to_vec(), data)
    };
    let entries = own
        .entries
        .iter()
        .zip(&global.entries)
        .map(|(o, g)| match (o, g) {
            (Some(o), Some(g)) => Ok(Some(ParamPair {
                weight: blend(&o.weight, &g.weight)?,
                bias: blend(&o.bias, &g.bias)?,
            })),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamSet { entries })
}
