//! Shared helpers for the integration tests.
#![allow(dead_code)] // each test binary uses its own subset

use elastic_core::clock::ClockSpec;
use elastic_core::engine::{
    Activation, Batch, LayerSpec, ModelSpec, Network, Shape, TensorId, TensorRole,
};
use elastic_core::profiler::{TensorNode, TensorProfile};
use elastic_core::rng::Rng;
use elastic_core::SelectionMask;

pub fn random_batch(net: &Network<f64>, n: usize, seed: u64) -> Batch<f64> {
    let mut rng = Rng::new(seed);
    let sample = net.input_shape().len();
    Batch {
        inputs: (0..n * sample).map(|_| rng.normal()).collect(),
        labels: (0..n)
            .map(|_| rng.next_below(net.num_classes() as u64) as usize)
            .collect(),
    }
}

pub fn random_mask(n: usize, rng: &mut Rng) -> SelectionMask {
    SelectionMask::from_depth_bits((0..n).map(|_| rng.next_below(2) == 1).collect())
}

/// Conv/BN/ReLU/Pool stack with a dense head; exercises all three timing
/// aggregation rules. 14 trainable tensors.
pub fn cnn_spec() -> ModelSpec {
    elastic_core::harness::resolve_model("default-cnn", 100, 4).unwrap()
}

/// Dense-only network: no non-trainable layers between trainable ones.
pub fn mlp_spec(widths: &[usize], classes: usize) -> ModelSpec {
    let mut layers = Vec::new();
    for pair in widths.windows(2) {
        layers.push(LayerSpec::Dense {
            inputs: pair[0],
            outputs: pair[1],
        });
    }
    layers.push(LayerSpec::Dense {
        inputs: *widths.last().unwrap(),
        outputs: classes,
    });
    layers.push(LayerSpec::Activation {
        kind: Activation::SoftmaxLoss,
    });
    ModelSpec {
        input: Shape::flat(widths[0]),
        layers,
    }
}

pub fn conv_relu_dense_spec() -> ModelSpec {
    ModelSpec {
        input: Shape::chw(1, 6, 6),
        layers: vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 3,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Activation {
                kind: Activation::Relu,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 3 * 4 * 4,
                outputs: 2,
            },
            LayerSpec::Activation {
                kind: Activation::SoftmaxLoss,
            },
        ],
    }
}

/// Synthetic profile with explicit timings (depth order), for solver tests.
pub fn toy_profile(t_dw: &[u64], t_dy: &[u64], t_forward: u64) -> TensorProfile {
    assert_eq!(t_dw.len(), t_dy.len());
    let nodes: Vec<TensorNode> = t_dw
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
        .collect();
    let backward: u64 = nodes.iter().map(|n| n.t_dw + n.t_dy).sum();
    TensorProfile {
        nodes,
        t_forward,
        t_full: t_forward + backward,
    }
}

pub fn random_profile(rng: &mut Rng, n: usize, max_t: u64, t_forward: u64) -> TensorProfile {
    let t_dw: Vec<u64> = (0..n).map(|_| rng.next_below(max_t + 1)).collect();
    let t_dy: Vec<u64> = (0..n).map(|_| rng.next_below(max_t + 1)).collect();
    toy_profile(&t_dw, &t_dy, t_forward)
}

/// Importances drawn as multiples of 0.25 in [0, 100]: exactly representable
/// and exactly summable in f64, so solver objectives compare bit-exactly.
pub fn random_importances(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.next_below(401) as f64 * 0.25).collect()
}

pub fn default_clock() -> ClockSpec {
    ClockSpec::default()
}
