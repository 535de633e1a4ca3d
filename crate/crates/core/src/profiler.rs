//! Tensor-level backward-time model.
//!
//! One instrumented forward + full-backward iteration is converted into a
//! chain of tensors ordered by backward depth (depth 1 = nearest the loss),
//! each carrying two durations:
//!
//! - `t_dw`: time to compute that tensor's weight update
//! - `t_dy`: gradient-propagation time attributed to the tensor's position,
//!   incurred whenever the backward pass reaches or passes that position
//!
//! Aggregation rules per layer type:
//! - dense/conv: kernel-update op -> Kernel.t_dw, bias-update op ->
//!   Bias.t_dw, gradient-to-input op -> Kernel.t_dy, Bias.t_dy = 0
//! - batch norm: the fused backward block -> Beta.t_dy; Gamma and Beta carry
//!   their own update ops; Gamma.t_dy = 0
//! - non-trainable layers: their whole backward time folds into the t_dy of
//!   the Bias/Beta of the adjacent trainable layer on the input side
//!
//! Under the synthetic clock the resulting model is *exact*: for any mask,
//! `predict_time` equals the instrumented duration of the corresponding
//! selective pass, in integer nanoseconds.

use crate::clock::{ClockMode, ClockSpec, OpKind, OpLog};
use crate::engine::{ChainNode, Network, TensorId, TensorRole};
use crate::engine::Batch;
use crate::error::{Error, Result};
use crate::mask::SelectionMask;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// One tensor in the backward chain with its timing attribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorNode {
    pub tensor: TensorId,
    pub role: TensorRole,
    /// 1-based backward depth; 1 is nearest the loss.
    pub depth: usize,
    pub t_dw: u64,
    pub t_dy: u64,
}

/// Immutable timing snapshot of one network under one clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorProfile {
    /// Nodes in depth order (reverse of forward trainable-tensor order).
    pub nodes: Vec<TensorNode>,
    pub t_forward: u64,
    pub t_full: u64,
}

/// Tensors in backward execution order. Within a dense/conv layer the Bias
/// precedes the Kernel; within a BN layer the Beta precedes the Gamma.
pub fn unroll<S: Scalar>(net: &Network<S>) -> Vec<ChainNode> {
    net.backward_chain()
}

/// Run one instrumented forward + full-backward iteration and aggregate the
/// op timings into a tensor profile. BN running statistics are restored
/// afterward, so profiling leaves the network unchanged.
pub fn profile<S: Scalar>(
    net: &mut Network<S>,
    batch: &Batch<S>,
    clock: &ClockSpec,
) -> Result<TensorProfile> {
    let bn = net.snapshot_bn();
    let mut log = OpLog::new(clock.mode == ClockMode::Wall);
    let outcome = (|| {
        let (_, cache) = net.forward_with_ops(batch, crate::engine::Mode::Train, &mut log)?;
        let full = SelectionMask::full(net.num_tensors());
        net.backward_with_ops(&cache, &full, &mut log);
        Ok(())
    })();
    net.restore_bn(bn);
    outcome?;

    let timings = log.timings(clock);
    let mut t_forward = 0u64;
    let mut by_layer_kind: HashMap<(usize, OpKind), u64> = HashMap::new();
    for t in &timings {
        if t.kind == OpKind::ForwardOp {
            t_forward += t.ns;
        } else {
            *by_layer_kind.entry((t.layer, t.kind)).or_insert(0) += t.ns;
        }
    }

    let dur = |layer: usize, kind: OpKind| by_layer_kind.get(&(layer, kind)).copied().unwrap_or(0);

    // Fold non-trainable backward time into the input-side trainable
    // neighbor: walk layers from the loss toward the input, accumulating.
    let n_layers = net.spec().layers.len();
    let mut fold = vec![0u64; n_layers];
    let mut acc = 0u64;
    for layer in (0..n_layers).rev() {
        if net.spec().layers[layer].is_trainable() {
            fold[layer] = acc;
            acc = 0;
        } else {
            acc += dur(layer, OpKind::NonTrainableBackward);
        }
    }
    // `acc` may be nonzero only for non-trainable layers below the deepest
    // trainable layer; those never execute a backward op, so nothing is lost.
    debug_assert_eq!(acc, 0, "unattributed non-trainable backward time");

    let mut nodes = Vec::with_capacity(net.num_tensors());
    for node in net.backward_chain() {
        let (t_dw, t_dy) = match node.role {
            TensorRole::Kernel => (
                dur(node.layer, OpKind::GradToKernel),
                dur(node.layer, OpKind::GradToInput),
            ),
            TensorRole::Bias => (dur(node.layer, OpKind::GradToBias), fold[node.layer]),
            TensorRole::Gamma => (dur(node.layer, OpKind::GradToKernel), 0),
            TensorRole::Beta => (
                dur(node.layer, OpKind::GradToBias),
                dur(node.layer, OpKind::BnBlock) + fold[node.layer],
            ),
        };
        nodes.push(TensorNode {
            tensor: node.tensor,
            role: node.role,
            depth: node.depth,
            t_dw,
            t_dy,
        });
    }

    let backward: u64 = nodes.iter().map(|n| n.t_dw + n.t_dy).sum();
    let profile = TensorProfile {
        nodes,
        t_forward,
        t_full: t_forward + backward,
    };
    // conservation: every op duration lands in exactly one bucket
    debug_assert_eq!(
        profile.t_full,
        timings.iter().map(|t| t.ns).sum::<u64>(),
        "op time lost or double-counted in aggregation"
    );
    Ok(profile)
}

impl TensorProfile {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t_dw(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.t_dw).collect()
    }

    pub fn t_dy(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.t_dy).collect()
    }

    /// Full backward-pass time: sum of every t_dw and t_dy.
    pub fn backward_total(&self) -> u64 {
        self.nodes.iter().map(|n| n.t_dw + n.t_dy).sum()
    }

    /// Backward time of one selection: selected update times plus all
    /// gradient-propagation times down to and including the deepest
    /// selected depth.
    pub fn backward_cost(&self, mask: &SelectionMask) -> u64 {
        assert_eq!(mask.len(), self.nodes.len());
        let Some(deepest) = mask.deepest() else {
            return 0;
        };
        let dw: u64 = self
            .nodes
            .iter()
            .filter(|n| mask.selected_at_depth(n.depth))
            .map(|n| n.t_dw)
            .sum();
        let dy: u64 = self.nodes[..deepest].iter().map(|n| n.t_dy).sum();
        dw + dy
    }

    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn load(text: &str) -> Result<TensorProfile> {
        serde_json::from_str(text).map_err(|e| Error::json("parsing tensor profile", e))
    }
}

/// Derived mask of gradient-propagation positions: every depth from 1 down
/// to the deepest selected depth is marked.
pub fn f_mask(mask: &SelectionMask) -> SelectionMask {
    let n = mask.len();
    match mask.deepest() {
        None => SelectionMask::empty(n),
        Some(d) => {
            let mut bits = vec![false; n];
            for b in bits.iter_mut().take(d) {
                *b = true;
            }
            SelectionMask::from_depth_bits(bits)
        }
    }
}

/// Predicted iteration time of one selection, in nanoseconds.
pub fn predict_time(profile: &TensorProfile, mask: &SelectionMask) -> u64 {
    profile.t_forward + profile.backward_cost(mask)
}

/// Profiling cost as a fraction of one training epoch.
pub fn reprofile_overhead(runs_per_epoch: u64, profile_ns: u64, epoch_ns: u64) -> f64 {
    if runs_per_epoch == 0 {
        return 0.0;
    }
    assert!(epoch_ns > 0, "epoch time must be positive");
    (runs_per_epoch * profile_ns) as f64 / epoch_ns as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_profile(t_dw: &[u64], t_dy: &[u64], t_forward: u64) -> TensorProfile {
        let nodes = t_dw
            .iter()
            .zip(t_dy)
            .enumerate()
            .map(|(i, (&dw, &dy))| TensorNode {
                tensor: TensorId(i as u32),
                role: TensorRole::Kernel,
                depth: i + 1,
                t_dw: dw,
                t_dy: dy,
            })
            .collect::<Vec<_>>();
        let backward: u64 = nodes.iter().map(|n| n.t_dw + n.t_dy).sum();
        TensorProfile {
            nodes,
            t_forward,
            t_full: t_forward + backward,
        }
    }

    #[test]
    fn f_mask_reproduces_the_worked_example() {
        // forward-order [0,0,0,1,1,0,0] -> [0,0,0,1,1,1,1]
        let m = SelectionMask::from_forward_bits(&[
            false, false, false, true, true, false, false,
        ]);
        let f = f_mask(&m);
        assert_eq!(
            f.forward_bits(),
            vec![false, false, false, true, true, true, true]
        );
    }

    #[test]
    fn f_mask_of_empty_is_empty() {
        let m = SelectionMask::empty(6);
        assert!(f_mask(&m).is_empty_selection());
    }

    #[test]
    fn f_mask_depth_one_only() {
        let m = SelectionMask::from_depths(5, &[1]);
        assert_eq!(f_mask(&m).selected_depths(), vec![1]);
    }

    #[test]
    fn predict_time_trivials_and_hand_case() {
        let p = toy_profile(&[2, 3, 1, 4, 2], &[1, 1, 2, 1, 3], 100);
        assert_eq!(predict_time(&p, &SelectionMask::empty(5)), 100);
        assert_eq!(predict_time(&p, &SelectionMask::full(5)), p.t_full);
        // select depth 3 only: 1 + (1 + 1 + 2) = 5
        let m = SelectionMask::from_depths(5, &[3]);
        assert_eq!(predict_time(&p, &m), 105);
    }

    #[test]
    fn decomposition_full_minus_empty_is_backward_total() {
        let p = toy_profile(&[5, 7, 9], &[2, 0, 4], 50);
        let full = predict_time(&p, &SelectionMask::full(3));
        let empty = predict_time(&p, &SelectionMask::empty(3));
        assert_eq!(full - empty, p.backward_total());
    }

    #[test]
    fn profile_round_trip_is_lossless() {
        let p = toy_profile(&[1, u64::MAX / 2, 3], &[0, 9, 123_456_789], 42);
        let text = p.dump();
        assert_eq!(TensorProfile::load(&text).unwrap(), p);
    }

    #[test]
    fn reprofile_overhead_ratios() {
        assert_eq!(reprofile_overhead(0, 1000, 1_000_000), 0.0);
        let f = reprofile_overhead(1, 1000, 300 * 1000);
        assert!((f - 1.0 / 300.0).abs() < 1e-12);
        assert!(f < 0.01);
    }
}
