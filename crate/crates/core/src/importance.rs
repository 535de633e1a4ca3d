//! Per-tensor importance: first-order estimate of the training-loss
//! reduction attributable to each tensor's latest weight update.
//!
//! Given a full-model candidate update `dw` and the loss gradient `g` taken
//! at the pre-update weights, the importance of tensor k is
//!
//! ```text
//! I_k = -sum_i g_i * dw_i        (over tensor k's elements)
//! ```
//!
//! negated so that a loss-reducing update scores positive, matching the
//! exact undo measurement `dL_k = L(updated weights with dw_k removed) -
//! L(updated weights)`. The undo oracle is the reference implementation the
//! estimate is validated against; the residual shrinks quadratically with
//! the learning rate.

use crate::engine::{Batch, Mode, Network, TensorId, UpdateSet};
use crate::clock::OpLog;
use crate::error::{Error, Result};
use crate::mask::SelectionMask;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Importance values in depth order (index 0 = depth 1, nearest the loss).
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector<S> {
    pub values: Vec<S>,
    pub epoch_stamp: u64,
    pub batch_seed: u64,
}

impl<S: Scalar> ImportanceVector<S> {
    pub fn values_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64_lossy()).collect()
    }
}

/// Serialization form used by the run log and the CLI `solve` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceDump {
    pub values: Vec<f64>,
    pub epoch_stamp: u64,
    pub batch_seed: u64,
}

impl ImportanceDump {
    pub fn from_vector<S: Scalar>(v: &ImportanceVector<S>) -> Self {
        ImportanceDump {
            values: v.values_f64(),
            epoch_stamp: v.epoch_stamp,
            batch_seed: v.batch_seed,
        }
    }

    pub fn load(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("parsing importance dump", e))
    }

    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("importance serializes")
    }
}

/// Evaluate per-tensor importance.
///
/// The network holds post-update weights `w + dw`; the gradient is taken at
/// the pre-update point (the updates are rolled back, the probe gradient
/// computed, and the weights and BN statistics restored bit-exactly before
/// returning — on error paths too). `updates` must cover every tensor.
pub fn evaluate<S: Scalar>(
    net: &mut Network<S>,
    probe_batch: &Batch<S>,
    updates: &UpdateSet<S>,
    epoch_stamp: u64,
    batch_seed: u64,
) -> Result<ImportanceVector<S>> {
    let mut log = OpLog::new(false);
    evaluate_logged(net, probe_batch, updates, epoch_stamp, batch_seed, &mut log)
}

/// Same as [`evaluate`] but records the executed operations, so the harness
/// can charge the evaluation's cost to its overhead budget.
pub fn evaluate_logged<S: Scalar>(
    net: &mut Network<S>,
    probe_batch: &Batch<S>,
    updates: &UpdateSet<S>,
    epoch_stamp: u64,
    batch_seed: u64,
    log: &mut OpLog,
) -> Result<ImportanceVector<S>> {
    if updates.num_tensors() != net.num_tensors() {
        return Err(Error::BadConfig(
            "update set size does not match the network".into(),
        ));
    }
    if let Some(missing) = updates.first_missing() {
        return Err(Error::MissingUpdate { tensor: missing.0 });
    }

    let n = net.num_tensors();
    let saved: Vec<Vec<S>> = (0..n)
        .map(|i| net.tensor(TensorId(i as u32)).data.clone())
        .collect();
    let bn = net.snapshot_bn();

    // roll back to the pre-update point (c = 0 semantics)
    for i in 0..n {
        let id = TensorId(i as u32);
        let delta = updates.delta(id).expect("checked complete");
        let data = net.tensor_data_mut(id);
        for (w, &d) in data.iter_mut().zip(delta) {
            *w -= d;
        }
    }

    let outcome = (|| {
        let (_, cache) = net.forward_with_ops(probe_batch, Mode::Train, log)?;
        let full = SelectionMask::full(n);
        Ok(net.backward_with_ops(&cache, &full, log))
    })();

    for (i, data) in saved.into_iter().enumerate() {
        *net.tensor_data_mut(TensorId(i as u32)) = data;
    }
    net.restore_bn(bn);
    let grads = outcome?;

    let values = net
        .backward_chain()
        .iter()
        .map(|node| {
            let g = grads.get(node.tensor).expect("full backward");
            let delta = updates.delta(node.tensor).expect("checked complete");
            let mut acc = S::zero();
            for (&gi, &di) in g.iter().zip(delta) {
                acc += gi * di;
            }
            -acc
        })
        .collect();

    Ok(ImportanceVector {
        values,
        epoch_stamp,
        batch_seed,
    })
}

/// Exact importance of one tensor's update: revert it, measure how much the
/// probe loss rises, and restore the network bit-identically.
pub fn undo_oracle<S: Scalar>(
    net: &mut Network<S>,
    probe_batch: &Batch<S>,
    updates: &UpdateSet<S>,
    tensor: TensorId,
) -> Result<S> {
    let delta = updates
        .delta(tensor)
        .ok_or(Error::MissingUpdate { tensor: tensor.0 })?
        .to_vec();

    let loss_at = |net: &mut Network<S>| -> Result<S> {
        let bn = net.snapshot_bn();
        let r = net.forward(probe_batch, Mode::Train).map(|(l, _)| l);
        net.restore_bn(bn);
        r
    };

    let current = loss_at(net)?;
    let saved = net.tensor(tensor).data.clone();
    {
        let data = net.tensor_data_mut(tensor);
        for (w, &d) in data.iter_mut().zip(&delta) {
            *w -= d;
        }
    }
    let undone = loss_at(net);
    *net.tensor_data_mut(tensor) = saved;
    Ok(undone? - current)
}

/// First-order additivity: the joint estimate over a tensor set equals the
/// sum of its per-tensor estimates. Returns `(sum of I_k, joint estimate)`
/// and asserts their equality; both are the same elementwise products,
/// grouped per tensor, so the equality is bit-exact.
pub fn additivity_check<S: Scalar>(
    net: &mut Network<S>,
    probe_batch: &Batch<S>,
    updates: &UpdateSet<S>,
    tensors: &[TensorId],
) -> Result<(S, S)> {
    let imp = evaluate(net, probe_batch, updates, 0, 0)?;
    let chain = net.backward_chain();
    let mut per_tensor_sum = S::zero();
    for node in &chain {
        if tensors.contains(&node.tensor) {
            per_tensor_sum += imp.values[node.depth - 1];
        }
    }

    // joint pass over the same set, recomputed from scratch
    let grads = {
        let n = net.num_tensors();
        let saved: Vec<Vec<S>> = (0..n)
            .map(|i| net.tensor(TensorId(i as u32)).data.clone())
            .collect();
        let bn = net.snapshot_bn();
        for i in 0..n {
            let id = TensorId(i as u32);
            let delta = updates.delta(id).ok_or(Error::MissingUpdate { tensor: id.0 })?;
            let data = net.tensor_data_mut(id);
            for (w, &d) in data.iter_mut().zip(delta) {
                *w -= d;
            }
        }
        let outcome = (|| {
            let (_, cache) = net.forward(probe_batch, Mode::Train)?;
            let full = SelectionMask::full(n);
            Ok(net.backward(&cache, &full))
        })();
        for (i, data) in saved.into_iter().enumerate() {
            *net.tensor_data_mut(TensorId(i as u32)) = data;
        }
        net.restore_bn(bn);
        outcome?
    };

    let mut joint = S::zero();
    for node in &chain {
        if tensors.contains(&node.tensor) {
            let g = grads.get(node.tensor).expect("full backward");
            let delta = updates.delta(node.tensor).expect("checked");
            let mut acc = S::zero();
            for (&gi, &di) in g.iter().zip(delta) {
                acc += gi * di;
            }
            joint += -acc;
        }
    }

    assert!(
        per_tensor_sum == joint,
        "additivity violated: {per_tensor_sum:?} != {joint:?}"
    );
    Ok((per_tensor_sum, joint))
}
