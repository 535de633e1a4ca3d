//! Minimal reverse-mode training engine over a sequential layer graph.
//!
//! The engine owns the network parameters, runs forward and (selectively
//! masked) backward passes, applies SGDW updates, and reports the flop count
//! of every operation it executes so the clock module can price them. The
//! backward pass stops immediately after the layer holding the deepest
//! selected tensor; no upstream work is executed.

pub mod kernels;
pub mod model;

use crate::clock::{OpKind, OpLog, RateClass};
use crate::error::{Error, Result};
use crate::mask::SelectionMask;
use crate::rng::Rng;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

pub use model::{Activation, LayerSpec, ModelSpec, Shape};

/// Identifier of one trainable tensor. Ids are assigned in forward execution
/// order starting at zero, so an id doubles as an index into the parameter
/// list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TensorId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorRole {
    Kernel,
    Bias,
    Gamma,
    Beta,
}

/// One trainable tensor with its SGDW momentum buffer.
#[derive(Debug, Clone)]
pub struct ParamTensor<S> {
    pub id: TensorId,
    pub role: TensorRole,
    pub layer: usize,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub momentum: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct BnRunning<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// Position of a tensor in the backward chain. Depth 1 is nearest the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainNode {
    pub depth: usize,
    pub tensor: TensorId,
    pub role: TensorRole,
    pub layer: usize,
}

/// A training batch: row-major sample features plus integer class labels.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    pub inputs: Vec<S>,
    pub labels: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for BN; running statistics are updated.
    Train,
    /// Running statistics for BN; no state mutation.
    Eval,
}

/// Per-tensor loss gradients from one backward pass. Entries exist exactly
/// for the tensors selected by the mask.
#[derive(Debug, Clone)]
pub struct GradientSet<S> {
    pub loss: S,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> GradientSet<S> {
    fn new(loss: S, n: usize) -> Self {
        GradientSet {
            loss,
            grads: vec![None; n],
        }
    }

    pub fn get(&self, id: TensorId) -> Option<&[S]> {
        self.grads[id.0 as usize].as_deref()
    }

    pub fn covered(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|_| TensorId(i as u32)))
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-tensor applied weight deltas from one optimizer step. Tensors that
/// were not updated report a zero delta.
#[derive(Debug, Clone)]
pub struct UpdateSet<S> {
    deltas: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> UpdateSet<S> {
    pub fn delta(&self, id: TensorId) -> Option<&[S]> {
        self.deltas[id.0 as usize].as_deref()
    }

    pub fn covers_all(&self) -> bool {
        self.deltas.iter().all(|d| d.is_some())
    }

    pub fn num_tensors(&self) -> usize {
        self.deltas.len()
    }

    pub fn first_missing(&self) -> Option<TensorId> {
        self.deltas
            .iter()
            .position(|d| d.is_none())
            .map(|i| TensorId(i as u32))
    }
}

/// BN running-statistics momentum: `running = 0.99*running + 0.01*batch`.
pub const BN_STAT_MOMENTUM: f64 = 0.99;

/// The trainable network.
#[derive(Debug, Clone)]
pub struct Network<S> {
    spec: ModelSpec,
    boundaries: Vec<Shape>,
    params: Vec<ParamTensor<S>>,
    /// Per layer: tensor ids in forward order (Kernel,Bias) / (Gamma,Beta).
    layer_tensors: Vec<Vec<TensorId>>,
    bn_running: Vec<Option<BnRunning<S>>>,
}

/// Deterministically initialize a network from a model spec and a seed.
/// Kernels get Kaiming fan-in scaling, biases and betas zeros, gammas ones.
pub fn build_network<S: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Network<S>> {
    let boundaries = spec.boundaries()?;
    let mut rng = Rng::new(seed);
    let mut params: Vec<ParamTensor<S>> = Vec::new();
    let mut layer_tensors = vec![Vec::new(); spec.layers.len()];
    let mut bn_running = vec![None; spec.layers.len()];

    let push = |params: &mut Vec<ParamTensor<S>>,
                    layer_tensors: &mut Vec<Vec<TensorId>>,
                    layer: usize,
                    role: TensorRole,
                    shape: Vec<usize>,
                    data: Vec<S>| {
        let id = TensorId(params.len() as u32);
        let len = data.len();
        params.push(ParamTensor {
            id,
            role,
            layer,
            shape,
            data,
            momentum: vec![S::zero(); len],
        });
        layer_tensors[layer].push(id);
    };

    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let scale = (2.0 / inputs as f64).sqrt();
                let kernel: Vec<S> = (0..inputs * outputs)
                    .map(|_| S::from_f64_lit(rng.normal() * scale))
                    .collect();
                push(
                    &mut params,
                    &mut layer_tensors,
                    i,
                    TensorRole::Kernel,
                    vec![inputs, outputs],
                    kernel,
                );
                push(
                    &mut params,
                    &mut layer_tensors,
                    i,
                    TensorRole::Bias,
                    vec![outputs],
                    vec![S::zero(); outputs],
                );
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                let scale = (2.0 / fan_in as f64).sqrt();
                let weights: Vec<S> = (0..out_channels * fan_in)
                    .map(|_| S::from_f64_lit(rng.normal() * scale))
                    .collect();
                push(
                    &mut params,
                    &mut layer_tensors,
                    i,
                    TensorRole::Kernel,
                    vec![out_channels, in_channels, kernel, kernel],
                    weights,
                );
                push(
                    &mut params,
                    &mut layer_tensors,
                    i,
                    TensorRole::Bias,
                    vec![out_channels],
                    vec![S::zero(); out_channels],
                );
            }
            LayerSpec::BatchNorm { features } => {
                push(
                    &mut params,
                    &mut layer_tensors,
                    i,
                    TensorRole::Gamma,
                    vec![features],
                    vec![S::one(); features],
                );
                push(
                    &mut params,
                    &mut layer_tensors,
                    i,
                    TensorRole::Beta,
                    vec![features],
                    vec![S::zero(); features],
                );
                bn_running[i] = Some(BnRunning {
                    mean: vec![S::zero(); features],
                    var: vec![S::one(); features],
                });
            }
            LayerSpec::Activation { .. } | LayerSpec::Pool2d { .. } | LayerSpec::Flatten => {}
        }
    }

    Ok(Network {
        spec: spec.clone(),
        boundaries,
        params,
        layer_tensors,
        bn_running,
    })
}

/// Cosine learning-rate decay: `base * 0.5 * (1 + cos(pi * step / total))`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::BadConfig("cosine schedule needs total_steps > 0".into()));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Cached activations from one forward pass, consumed by `backward`.
#[derive(Debug)]
pub struct ForwardCache<S> {
    batch: usize,
    /// acts[i] = input of layer i; acts[len] = logits.
    acts: Vec<Vec<S>>,
    bn_aux: Vec<Option<BnAux<S>>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
    probs: Vec<S>,
    labels: Vec<usize>,
    pub loss: S,
}

#[derive(Debug)]
struct BnAux<S> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> ForwardCache<S> {
    /// Per-sample argmax class predictions from the cached probabilities.
    pub fn predictions(&self) -> Vec<usize> {
        let classes = self.probs.len() / self.batch;
        (0..self.batch)
            .map(|b| {
                let row = &self.probs[b * classes..(b + 1) * classes];
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    pub fn probabilities(&self) -> &[S] {
        &self.probs
    }
}

fn all_finite<S: Scalar>(xs: &[S]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

impl<S: Scalar> Network<S> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape {
        self.boundaries[0]
    }

    pub fn num_classes(&self) -> usize {
        self.boundaries[self.boundaries.len() - 1].c
    }

    pub fn num_tensors(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[ParamTensor<S>] {
        &self.params
    }

    pub fn tensor(&self, id: TensorId) -> &ParamTensor<S> {
        &self.params[id.0 as usize]
    }

    pub fn tensor_data_mut(&mut self, id: TensorId) -> &mut Vec<S> {
        &mut self.params[id.0 as usize].data
    }

    /// Tensors in backward-chain order: depth 1 (nearest the loss) first.
    /// Within a dense/conv layer the Bias precedes the Kernel; within a BN
    /// layer the Beta precedes the Gamma.
    pub fn backward_chain(&self) -> Vec<ChainNode> {
        let mut chain = Vec::with_capacity(self.params.len());
        for layer in (0..self.spec.layers.len()).rev() {
            // layer_tensors holds forward order; backward order is reversed
            for &id in self.layer_tensors[layer].iter().rev() {
                chain.push(ChainNode {
                    depth: chain.len() + 1,
                    tensor: id,
                    role: self.tensor(id).role,
                    layer,
                });
            }
        }
        chain
    }

    /// Layer index of the final dense (prediction) layer.
    pub fn prediction_layer(&self) -> Option<usize> {
        (0..self.spec.layers.len())
            .rev()
            .find(|&i| matches!(self.spec.layers[i], LayerSpec::Dense { .. }))
    }

    pub fn snapshot_bn(&self) -> Vec<Option<BnRunning<S>>> {
        self.bn_running.clone()
    }

    pub fn restore_bn(&mut self, snapshot: Vec<Option<BnRunning<S>>>) {
        self.bn_running = snapshot;
    }

    fn validate_batch(&self, batch: &Batch<S>) -> Result<usize> {
        let n = batch.labels.len();
        if n == 0 {
            return Err(Error::BadBatch("batch size must be >= 1".into()));
        }
        let sample = self.input_shape().len();
        if batch.inputs.len() != n * sample {
            return Err(Error::BadBatch(format!(
                "expected {} = {}x{} input values, got {}",
                n * sample,
                n,
                sample,
                batch.inputs.len()
            )));
        }
        let classes = self.num_classes();
        if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::BadBatch(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(n)
    }

    /// Forward pass; returns the mean cross-entropy loss and the activation
    /// cache for a subsequent backward pass.
    pub fn forward(&mut self, batch: &Batch<S>, mode: Mode) -> Result<(S, ForwardCache<S>)> {
        let mut log = OpLog::new(false);
        self.forward_with_ops(batch, mode, &mut log)
    }

    /// Forward pass that records one `ForwardOp` per layer (Flatten is a
    /// free reshape and the loss head's forward is metered like any other
    /// op; its backward is not).
    pub fn forward_with_ops(
        &mut self,
        batch: &Batch<S>,
        mode: Mode,
        log: &mut OpLog,
    ) -> Result<(S, ForwardCache<S>)> {
        let b = self.validate_batch(batch)?;
        let n_layers = self.spec.layers.len();
        let mut acts: Vec<Vec<S>> = Vec::with_capacity(n_layers + 1);
        acts.push(batch.inputs.clone());
        let mut bn_aux: Vec<Option<BnAux<S>>> = (0..n_layers).map(|_| None).collect();
        let mut pool_argmax: Vec<Option<Vec<usize>>> = (0..n_layers).map(|_| None).collect();
        let mut probs = Vec::new();
        let mut loss = S::zero();

        for i in 0..n_layers {
            let in_shape = self.boundaries[i];
            let out_shape = self.boundaries[i + 1];
            let mut out = vec![S::zero(); b * out_shape.len()];
            match self.spec.layers[i] {
                LayerSpec::Dense { inputs, outputs } => {
                    let kernel = &self.params[self.layer_tensors[i][0].0 as usize].data;
                    let bias = &self.params[self.layer_tensors[i][1].0 as usize].data;
                    log.start();
                    kernels::dense_forward(&acts[i], kernel, bias, b, inputs, outputs, &mut out);
                    log.finish(
                        i,
                        OpKind::ForwardOp,
                        RateClass::Dense,
                        kernels::dense_forward_flops(b, inputs, outputs),
                    );
                }
                LayerSpec::Conv2d { kernel, stride, .. } => {
                    let weights = &self.params[self.layer_tensors[i][0].0 as usize].data;
                    let bias = &self.params[self.layer_tensors[i][1].0 as usize].data;
                    log.start();
                    kernels::conv_forward(
                        &acts[i], weights, bias, b, in_shape, out_shape, kernel, stride, &mut out,
                    );
                    log.finish(
                        i,
                        OpKind::ForwardOp,
                        RateClass::Conv,
                        kernels::conv_forward_flops(b, out_shape, in_shape.c, kernel),
                    );
                }
                LayerSpec::BatchNorm { .. } => {
                    let gamma = &self.params[self.layer_tensors[i][0].0 as usize].data;
                    let beta = &self.params[self.layer_tensors[i][1].0 as usize].data;
                    let mut xhat = vec![S::zero(); b * out_shape.len()];
                    log.start();
                    let (mean, inv_std, flops) = match mode {
                        Mode::Train => {
                            let (mean, inv_std) = kernels::bn_batch_stats(&acts[i], b, in_shape);
                            (mean, inv_std, kernels::bn_forward_train_flops(b, in_shape))
                        }
                        Mode::Eval => {
                            let running = self.bn_running[i].as_ref().expect("bn state");
                            let eps = S::from_f64_lit(kernels::BN_EPS);
                            let inv_std: Vec<S> = running
                                .var
                                .iter()
                                .map(|&v| S::one() / (v + eps).sqrt())
                                .collect();
                            (
                                running.mean.clone(),
                                inv_std,
                                kernels::bn_forward_eval_flops(b, in_shape),
                            )
                        }
                    };
                    kernels::bn_normalize(
                        &acts[i], &mean, &inv_std, gamma, beta, b, in_shape, &mut xhat, &mut out,
                    );
                    log.finish(i, OpKind::ForwardOp, RateClass::BatchNorm, flops);
                    if mode == Mode::Train {
                        let running = self.bn_running[i].as_mut().expect("bn state");
                        let keep = S::from_f64_lit(BN_STAT_MOMENTUM);
                        let take = S::from_f64_lit(1.0 - BN_STAT_MOMENTUM);
                        for c in 0..in_shape.c {
                            // recover the biased batch variance from inv_std
                            let var = S::one() / (inv_std[c] * inv_std[c])
                                - S::from_f64_lit(kernels::BN_EPS);
                            running.mean[c] = keep * running.mean[c] + take * mean[c];
                            running.var[c] = keep * running.var[c] + take * var;
                        }
                    }
                    bn_aux[i] = Some(BnAux { xhat, inv_std });
                }
                LayerSpec::Activation { kind } => match kind {
                    Activation::Relu => {
                        log.start();
                        kernels::relu_forward(&acts[i], &mut out);
                        log.finish(
                            i,
                            OpKind::ForwardOp,
                            RateClass::Elementwise,
                            kernels::relu_flops(b * in_shape.len()),
                        );
                    }
                    Activation::SoftmaxLoss => {
                        let classes = in_shape.len();
                        probs = vec![S::zero(); b * classes];
                        log.start();
                        loss = kernels::softmax_ce_forward(
                            &acts[i],
                            &batch.labels,
                            b,
                            classes,
                            &mut probs,
                        );
                        log.finish(
                            i,
                            OpKind::ForwardOp,
                            RateClass::Elementwise,
                            kernels::softmax_ce_flops(b, classes),
                        );
                        out.copy_from_slice(&acts[i]);
                    }
                },
                LayerSpec::Pool2d { size } => {
                    let mut argmax = Vec::new();
                    log.start();
                    kernels::pool_forward(&acts[i], b, in_shape, size, &mut out, &mut argmax);
                    log.finish(
                        i,
                        OpKind::ForwardOp,
                        RateClass::Elementwise,
                        kernels::pool_forward_flops(b, out_shape, size),
                    );
                    pool_argmax[i] = Some(argmax);
                }
                LayerSpec::Flatten => {
                    out.copy_from_slice(&acts[i]);
                }
            }
            if !all_finite(&out) || (i + 1 == n_layers && !loss.is_finite()) {
                return Err(Error::NumericFailure {
                    layer: i,
                    stage: "forward",
                });
            }
            acts.push(out);
        }

        Ok((
            loss,
            ForwardCache {
                batch: b,
                acts,
                bn_aux,
                pool_argmax,
                probs,
                labels: batch.labels.clone(),
                loss,
            },
        ))
    }

    /// Selective backward pass. Computes loss gradients for every tensor in
    /// the mask; gradient propagation stops immediately after the layer
    /// holding the deepest selected tensor. An empty mask yields a gradient
    /// set with the loss only and executes no backward work at all.
    pub fn backward(&self, cache: &ForwardCache<S>, mask: &SelectionMask) -> GradientSet<S> {
        let mut log = OpLog::new(false);
        self.backward_with_ops(cache, mask, &mut log)
    }

    pub fn backward_with_ops(
        &self,
        cache: &ForwardCache<S>,
        mask: &SelectionMask,
        log: &mut OpLog,
    ) -> GradientSet<S> {
        let chain = self.backward_chain();
        assert_eq!(mask.len(), chain.len(), "mask length != tensor count");
        let mut grads = GradientSet::new(cache.loss, self.params.len());
        let Some(deepest) = mask.deepest() else {
            return grads;
        };
        let deepest_layer = chain[deepest - 1].layer;
        let b = cache.batch;

        // depth of each tensor, by id
        let mut depth_of = vec![0usize; self.params.len()];
        for node in &chain {
            depth_of[node.tensor.0 as usize] = node.depth;
        }

        let n_layers = self.spec.layers.len();
        // gradient wrt the logits; the loss-head gradient is unmetered
        let classes = self.boundaries[n_layers].len();
        let mut d_cur = vec![S::zero(); b * classes];
        kernels::softmax_ce_backward(&cache.probs, &cache.labels, b, classes, &mut d_cur);

        // walk layers from the one below the loss head down to deepest_layer
        for i in (deepest_layer..n_layers - 1).rev() {
            let in_shape = self.boundaries[i];
            let out_shape = self.boundaries[i + 1];
            match self.spec.layers[i] {
                LayerSpec::Dense { inputs, outputs } => {
                    let kernel_id = self.layer_tensors[i][0];
                    let bias_id = self.layer_tensors[i][1];
                    if mask.selected_at_depth(depth_of[kernel_id.0 as usize]) {
                        let mut dk = vec![S::zero(); inputs * outputs];
                        log.start();
                        kernels::dense_grad_kernel(
                            &cache.acts[i],
                            &d_cur,
                            b,
                            inputs,
                            outputs,
                            &mut dk,
                        );
                        log.finish(
                            i,
                            OpKind::GradToKernel,
                            RateClass::Dense,
                            kernels::dense_grad_kernel_flops(b, inputs, outputs),
                        );
                        grads.grads[kernel_id.0 as usize] = Some(dk);
                    }
                    if mask.selected_at_depth(depth_of[bias_id.0 as usize]) {
                        let mut db = vec![S::zero(); outputs];
                        log.start();
                        kernels::dense_grad_bias(&d_cur, b, outputs, &mut db);
                        log.finish(
                            i,
                            OpKind::GradToBias,
                            RateClass::Dense,
                            kernels::dense_grad_bias_flops(b, outputs),
                        );
                        grads.grads[bias_id.0 as usize] = Some(db);
                    }
                    // the gradient-to-input op runs whenever the chain walk
                    // reaches or passes the kernel's depth (inclusive rule)
                    if deepest >= depth_of[kernel_id.0 as usize] {
                        let mut d_in = vec![S::zero(); b * inputs];
                        log.start();
                        kernels::dense_grad_input(&d_cur, &self.tensor(kernel_id).data, b, inputs, outputs, &mut d_in);
                        log.finish(
                            i,
                            OpKind::GradToInput,
                            RateClass::Dense,
                            kernels::dense_grad_input_flops(b, inputs, outputs),
                        );
                        d_cur = d_in;
                    }
                }
                LayerSpec::Conv2d { kernel, stride, .. } => {
                    let kernel_id = self.layer_tensors[i][0];
                    let bias_id = self.layer_tensors[i][1];
                    if mask.selected_at_depth(depth_of[kernel_id.0 as usize]) {
                        let mut dk = vec![S::zero(); self.tensor(kernel_id).data.len()];
                        log.start();
                        kernels::conv_grad_kernel(
                            &cache.acts[i],
                            &d_cur,
                            b,
                            in_shape,
                            out_shape,
                            kernel,
                            stride,
                            &mut dk,
                        );
                        log.finish(
                            i,
                            OpKind::GradToKernel,
                            RateClass::Conv,
                            kernels::conv_grad_kernel_flops(b, out_shape, in_shape.c, kernel),
                        );
                        grads.grads[kernel_id.0 as usize] = Some(dk);
                    }
                    if mask.selected_at_depth(depth_of[bias_id.0 as usize]) {
                        let mut db = vec![S::zero(); out_shape.c];
                        log.start();
                        kernels::conv_grad_bias(&d_cur, b, out_shape, &mut db);
                        log.finish(
                            i,
                            OpKind::GradToBias,
                            RateClass::Conv,
                            kernels::conv_grad_bias_flops(b, out_shape),
                        );
                        grads.grads[bias_id.0 as usize] = Some(db);
                    }
                    if deepest >= depth_of[kernel_id.0 as usize] {
                        let mut d_in = vec![S::zero(); b * in_shape.len()];
                        log.start();
                        kernels::conv_grad_input(
                            &d_cur,
                            &self.tensor(kernel_id).data,
                            b,
                            in_shape,
                            out_shape,
                            kernel,
                            stride,
                            &mut d_in,
                        );
                        log.finish(
                            i,
                            OpKind::GradToInput,
                            RateClass::Conv,
                            kernels::conv_grad_input_flops(b, out_shape, in_shape.c, kernel),
                        );
                        d_cur = d_in;
                    }
                }
                LayerSpec::BatchNorm { .. } => {
                    let gamma_id = self.layer_tensors[i][0];
                    let beta_id = self.layer_tensors[i][1];
                    let aux = cache.bn_aux[i].as_ref().expect("bn cache");
                    if mask.selected_at_depth(depth_of[gamma_id.0 as usize]) {
                        let mut dg = vec![S::zero(); in_shape.c];
                        log.start();
                        kernels::bn_grad_gamma(&d_cur, &aux.xhat, b, in_shape, &mut dg);
                        log.finish(
                            i,
                            OpKind::GradToKernel,
                            RateClass::BatchNorm,
                            kernels::bn_grad_gamma_flops(b, in_shape),
                        );
                        grads.grads[gamma_id.0 as usize] = Some(dg);
                    }
                    if mask.selected_at_depth(depth_of[beta_id.0 as usize]) {
                        let mut db = vec![S::zero(); in_shape.c];
                        log.start();
                        kernels::bn_grad_beta(&d_cur, b, in_shape, &mut db);
                        log.finish(
                            i,
                            OpKind::GradToBias,
                            RateClass::BatchNorm,
                            kernels::bn_grad_beta_flops(b, in_shape),
                        );
                        grads.grads[beta_id.0 as usize] = Some(db);
                    }
                    // black-box BN rule: once the backward pass reaches this
                    // layer, the whole BN block executes
                    let mut d_in = vec![S::zero(); b * in_shape.len()];
                    log.start();
                    kernels::bn_grad_input(
                        &d_cur,
                        &aux.xhat,
                        &aux.inv_std,
                        &self.tensor(gamma_id).data,
                        b,
                        in_shape,
                        &mut d_in,
                    );
                    log.finish(
                        i,
                        OpKind::BnBlock,
                        RateClass::BatchNorm,
                        kernels::bn_block_flops(b, in_shape),
                    );
                    d_cur = d_in;
                }
                LayerSpec::Activation { kind } => match kind {
                    Activation::Relu => {
                        let mut d_in = vec![S::zero(); b * in_shape.len()];
                        log.start();
                        kernels::relu_backward(&d_cur, &cache.acts[i], &mut d_in);
                        log.finish(
                            i,
                            OpKind::NonTrainableBackward,
                            RateClass::Elementwise,
                            kernels::relu_flops(b * in_shape.len()),
                        );
                        d_cur = d_in;
                    }
                    Activation::SoftmaxLoss => unreachable!("loss head is terminal"),
                },
                LayerSpec::Pool2d { .. } => {
                    let argmax = cache.pool_argmax[i].as_ref().expect("pool cache");
                    let mut d_in = vec![S::zero(); b * in_shape.len()];
                    log.start();
                    kernels::pool_backward(&d_cur, argmax, &mut d_in);
                    log.finish(
                        i,
                        OpKind::NonTrainableBackward,
                        RateClass::Elementwise,
                        kernels::pool_backward_flops(b, out_shape),
                    );
                    d_cur = d_in;
                }
                LayerSpec::Flatten => {
                    // reshape only; free in both directions
                }
            }
        }

        grads
    }

    /// SGDW step: `v = momentum*v + g; dw = -lr*(v + weight_decay*w)`.
    /// Tensors without a gradient entry are untouched (including their
    /// momentum buffers) and report a zero delta.
    pub fn apply_update(
        &mut self,
        grads: &GradientSet<S>,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<UpdateSet<S>> {
        let lr_s = S::from_f64_lit(lr);
        let mom = S::from_f64_lit(momentum);
        let wd = S::from_f64_lit(weight_decay);
        let mut deltas: Vec<Option<Vec<S>>> = vec![None; self.params.len()];
        for (p, slot) in self.params.iter_mut().zip(deltas.iter_mut()) {
            let Some(grad) = grads.grads[p.id.0 as usize].as_ref() else {
                continue;
            };
            debug_assert_eq!(grad.len(), p.data.len());
            let mut delta = vec![S::zero(); p.data.len()];
            for j in 0..p.data.len() {
                p.momentum[j] = mom * p.momentum[j] + grad[j];
                delta[j] = -lr_s * (p.momentum[j] + wd * p.data[j]);
                p.data[j] += delta[j];
            }
            if !all_finite(&p.data) {
                return Err(Error::NumericFailure {
                    layer: p.layer,
                    stage: "update",
                });
            }
            *slot = Some(delta);
        }
        Ok(UpdateSet { deltas })
    }
}
