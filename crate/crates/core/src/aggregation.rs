//! Importance-aware model aggregation: loss-probe importance, softmax
//! aggregation weights mixing importance and training-set size, and the
//! convex parameter average.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::learner::{per_sample_losses, LearnerError, ModelParams};
use crate::math::softmax;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregationError {
    #[error("importance and size maps have different senders")]
    KeyMismatch,
    #[error("no models to aggregate")]
    Empty,
    #[error("model shapes differ")]
    ShapeMismatch,
    #[error("aggregation weights sum to {0}, expected 1")]
    NotSimplex(f64),
    #[error("non-finite loss in importance probe")]
    NonFinite,
    #[error("beta must lie in [0,1], got {0}")]
    BadBeta(f64),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// A model received from an in-neighbor (or the server's own model).
#[derive(Debug, Clone, PartialEq)]
pub struct InboundModel {
    pub sender: usize,
    pub params: ModelParams,
    /// Training-set size `|D_k|` of the sender this round.
    pub train_size: usize,
}

/// `B * sqrt(mean(loss^2))` over the probe losses.
pub fn importance_from_losses(losses: &[f64]) -> Result<f64, AggregationError> {
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(AggregationError::NonFinite);
    }
    let b = losses.len() as f64;
    let mean_sq = losses.iter().map(|l| l * l).sum::<f64>() / b;
    Ok(b * libm::sqrt(mean_sq))
}

/// Importance of `model` on the receiver's probe samples.
pub fn approximate_importance(ds: &Dataset, probe: &[usize], model: &ModelParams) -> Result<f64, AggregationError> {
    let losses = per_sample_losses(model, ds, probe)?;
    importance_from_losses(&losses)
}

/// `q = beta * softmax(l) + (1 - beta) * softmax(|D| / max|D|)` per sender.
pub fn assign_aggregation_weights(
    importances: &BTreeMap<usize, f64>,
    sizes: &BTreeMap<usize, usize>,
    beta: f64,
) -> Result<BTreeMap<usize, f64>, AggregationError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(AggregationError::BadBeta(beta));
    }
    if importances.len() != sizes.len() || importances.keys().zip(sizes.keys()).any(|(a, b)| a != b) {
        return Err(AggregationError::KeyMismatch);
    }
    if importances.is_empty() {
        return Err(AggregationError::Empty);
    }
    let l: Vec<f64> = importances.values().copied().collect();
    if l.iter().any(|x| !x.is_finite()) {
        return Err(AggregationError::NonFinite);
    }
    let max_size = sizes.values().copied().max().unwrap_or(0);
    let scaled: Vec<f64> = sizes
        .values()
        .map(|s| if max_size == 0 { 0.0 } else { *s as f64 / max_size as f64 })
        .collect();
    let by_importance = softmax(&l);
    let by_size = softmax(&scaled);
    Ok(importances
        .keys()
        .zip(by_importance.iter().zip(&by_size))
        .map(|(k, (a, b))| (*k, beta * a + (1.0 - beta) * b))
        .collect())
}

/// Coordinatewise convex combination `sum q * m`. Each output coordinate is
/// clamped to the inputs' `[min, max]` envelope to absorb rounding.
pub fn aggregate_models(models: &[(&ModelParams, f64)]) -> Result<ModelParams, AggregationError> {
    let (first, _) = models.first().ok_or(AggregationError::Empty)?;
    let shape = first.shape();
    if models.iter().any(|(m, _)| m.shape() != shape) {
        return Err(AggregationError::ShapeMismatch);
    }
    let total: f64 = models.iter().map(|(_, q)| *q).sum();
    if (total - 1.0).abs() > 1e-9 || models.iter().any(|(_, q)| !(*q >= 0.0)) {
        return Err(AggregationError::NotSimplex(total));
    }
    let mut out = ModelParams::zeros(shape);
    let values = out.values_mut();
    for (c, v) in values.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (m, q) in models {
            let x = m.values()[c];
            acc += q * x;
            lo = lo.min(x);
            hi = hi.max(x);
        }
        *v = acc.clamp(lo, hi);
    }
    Ok(out)
}

/// One row of the aggregation debug log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationRecord {
    pub receiver: usize,
    pub sender: usize,
    /// Loss-probe importance; `None` when the rule does not compute one.
    pub importance: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcmuOutcome {
    pub params: ModelParams,
    pub records: Vec<AggregationRecord>,
}

/// Aggregation step of one server. `probe` holds the receiver's sampled
/// training indices (at most `B`). With no in-neighbors, or an empty probe,
/// the server keeps its own model.
pub fn dcmu_round(
    receiver: usize,
    own: &InboundModel,
    inbound: &[InboundModel],
    ds: &Dataset,
    probe: &[usize],
    beta: f64,
) -> Result<DcmuOutcome, AggregationError> {
    if inbound.is_empty() || probe.is_empty() {
        if !inbound.is_empty() {
            log::debug!("server {receiver}: empty round dataset, keeping own model");
        }
        return Ok(DcmuOutcome {
            params: own.params.clone(),
            records: alloc::vec![AggregationRecord {
                receiver,
                sender: own.sender,
                importance: None,
                weight: 1.0,
            }],
        });
    }
    let participants: Vec<&InboundModel> = core::iter::once(own).chain(inbound.iter()).collect();
    let mut importances = BTreeMap::new();
    let mut sizes = BTreeMap::new();
    for m in &participants {
        importances.insert(m.sender, approximate_importance(ds, probe, &m.params)?);
        sizes.insert(m.sender, m.train_size);
    }
    let q = assign_aggregation_weights(&importances, &sizes, beta)?;
    let weighted: Vec<(&ModelParams, f64)> = participants.iter().map(|m| (&m.params, q[&m.sender])).collect();
    let params = aggregate_models(&weighted)?;
    let records = participants
        .iter()
        .map(|m| AggregationRecord {
            receiver,
            sender: m.sender,
            importance: Some(importances[&m.sender]),
            weight: q[&m.sender],
        })
        .collect();
    Ok(DcmuOutcome { params, records })
}

/// Plain average over the server and its in-neighbors, used by the
/// baseline strategies.
pub fn uniform_average(receiver: usize, own: &InboundModel, inbound: &[InboundModel]) -> Result<DcmuOutcome, AggregationError> {
    let n = 1 + inbound.len();
    let q = 1.0 / n as f64;
    let participants: Vec<&InboundModel> = core::iter::once(own).chain(inbound.iter()).collect();
    let weighted: Vec<(&ModelParams, f64)> = participants.iter().map(|m| (&m.params, q)).collect();
    let params = aggregate_models(&weighted)?;
    let records = participants
        .iter()
        .map(|m| AggregationRecord {
            receiver,
            sender: m.sender,
            importance: None,
            weight: q,
        })
        .collect();
    Ok(DcmuOutcome { params, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::ModelShape;
    use alloc::vec;

    fn params(values: Vec<f64>) -> ModelParams {
        // shape with d=1, L=len/2: W[L x 1] + b[L]
        let l = values.len() / 2;
        ModelParams::from_values(ModelShape::new(1, 0, l), values).unwrap()
    }

    #[test]
    fn importance_examples() {
        assert_eq!(importance_from_losses(&[0.0; 5]).unwrap(), 0.0);
        assert_eq!(importance_from_losses(&[1.0; 4]).unwrap(), 4.0);
        let l = importance_from_losses(&[3.0, 4.0]).unwrap();
        assert!((l - 7.071_067_811_865_476).abs() < 1e-12);
        assert!(importance_from_losses(&[f64::NAN]).is_err());
    }

    #[test]
    fn uniform_weights() {
        let imp: BTreeMap<usize, f64> = (0..4).map(|k| (k, 2.5)).collect();
        let sz: BTreeMap<usize, usize> = (0..4).map(|k| (k, 60)).collect();
        let q = assign_aggregation_weights(&imp, &sz, 0.4).unwrap();
        for v in q.values() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_endpoints() {
        let imp: BTreeMap<usize, f64> = [(0, 1.0), (3, 2.0)].into_iter().collect();
        let sz: BTreeMap<usize, usize> = [(0, 60), (3, 20)].into_iter().collect();
        let q1 = assign_aggregation_weights(&imp, &sz, 1.0).unwrap();
        let s = softmax(&[1.0, 2.0]);
        assert_eq!(q1[&0], s[0]);
        let q0 = assign_aggregation_weights(&imp, &sz, 0.0).unwrap();
        let s = softmax(&[1.0, 20.0 / 60.0]);
        assert_eq!(q0[&0], s[0]);
        assert_eq!(q0[&3], s[1]);
    }

    #[test]
    fn key_mismatch() {
        let imp: BTreeMap<usize, f64> = [(0, 1.0), (1, 2.0)].into_iter().collect();
        let sz: BTreeMap<usize, usize> = [(0, 60), (2, 20)].into_iter().collect();
        assert_eq!(assign_aggregation_weights(&imp, &sz, 0.5), Err(AggregationError::KeyMismatch));
    }

    #[test]
    fn zero_sized_sender_weighs_less() {
        let imp: BTreeMap<usize, f64> = [(0, 1.0), (1, 1.0)].into_iter().collect();
        let sz: BTreeMap<usize, usize> = [(0, 60), (1, 0)].into_iter().collect();
        let q = assign_aggregation_weights(&imp, &sz, 0.0).unwrap();
        assert!(q[&1] < q[&0]);
    }

    #[test]
    fn aggregate_identity_and_symmetry() {
        let v = params(vec![0.5, -1.0, 2.0, 3.0]);
        assert_eq!(aggregate_models(&[(&v, 1.0)]).unwrap(), v);
        let neg = params(vec![-0.5, 1.0, -2.0, -3.0]);
        let z = aggregate_models(&[(&v, 0.5), (&neg, 0.5)]).unwrap();
        assert!(z.values().iter().all(|x| *x == 0.0));
        assert!(matches!(aggregate_models(&[(&v, 0.7)]), Err(AggregationError::NotSimplex(_))));
        let other = params(vec![1.0, 2.0]);
        assert_eq!(
            aggregate_models(&[(&v, 0.5), (&other, 0.5)]),
            Err(AggregationError::ShapeMismatch)
        );
    }

    fn probe_data() -> Dataset {
        Dataset::new(vec![1.0, -1.0, 0.5, 2.0], vec![0, 1, 0, 1], 2, 1).unwrap()
    }

    #[test]
    fn dcmu_without_neighbors_keeps_model() {
        let own = InboundModel {
            sender: 2,
            params: params(vec![0.1, 0.2, 0.3, 0.4]),
            train_size: 60,
        };
        let out = dcmu_round(2, &own, &[], &probe_data(), &[0, 1], 0.4).unwrap();
        assert_eq!(out.params, own.params);
    }

    #[test]
    fn dcmu_fixed_point() {
        let p = params(vec![0.1, -0.2, 0.3, 0.4]);
        let own = InboundModel { sender: 0, params: p.clone(), train_size: 30 };
        let a = InboundModel { sender: 1, params: p.clone(), train_size: 60 };
        let b = InboundModel { sender: 4, params: p.clone(), train_size: 10 };
        let out = dcmu_round(0, &own, &[a, b], &probe_data(), &[0, 1, 2, 3], 0.4).unwrap();
        assert_eq!(out.params, p);
        let total: f64 = out.records.iter().map(|r| r.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(out.records.len(), 3);
    }

    #[test]
    fn dcmu_empty_probe_is_self_only() {
        let own = InboundModel { sender: 0, params: params(vec![1.0, 1.0, 0.0, 0.0]), train_size: 0 };
        let a = InboundModel { sender: 1, params: params(vec![0.0; 4]), train_size: 60 };
        let out = dcmu_round(0, &own, &[a], &probe_data(), &[], 0.4).unwrap();
        assert_eq!(out.params, own.params);
        assert_eq!(out.records[0].weight, 1.0);
    }

    #[test]
    fn higher_loss_raises_weight() {
        // Sender 1 keeps its probe losses fixed while sender 0's grow.
        let sz: BTreeMap<usize, usize> = [(0, 40), (1, 60)].into_iter().collect();
        let mut last = 0.0;
        for scale in [1.0, 1.5, 2.0, 4.0] {
            let l0 = importance_from_losses(&[0.5 * scale, 0.7 * scale]).unwrap();
            let l1 = importance_from_losses(&[0.6, 0.6]).unwrap();
            let imp: BTreeMap<usize, f64> = [(0, l0), (1, l1)].into_iter().collect();
            let q = assign_aggregation_weights(&imp, &sz, 0.4).unwrap();
            assert!(q[&0] >= last);
            last = q[&0];
        }
    }

    #[test]
    fn uniform_average_weights() {
        let own = InboundModel { sender: 0, params: params(vec![0.0, 0.0]), train_size: 1 };
        let a = InboundModel { sender: 1, params: params(vec![1.0, 2.0]), train_size: 1 };
        let out = uniform_average(0, &own, &[a]).unwrap();
        assert_eq!(out.params.values(), &[0.5, 1.0]);
    }
}
