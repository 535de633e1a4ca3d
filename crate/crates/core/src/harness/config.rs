//! Run configuration: flat key=value config files plus model resolution.

use crate::clock::{ClockMode, ClockSpec};
use crate::engine::{Activation, LayerSpec, ModelSpec, Shape};
use crate::error::{Error, Result};
use crate::selector::Strategy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// "default-cnn", "linear", or "mlp:h1,h2,..."
    pub model: String,
    /// "synthetic" or "csv:PATH"
    pub dataset: String,
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    pub spread: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub rho: f64,
    pub interval_epochs: u32,
    pub probe_batch: usize,
    pub t_q: u64,
    pub seed: u64,
    pub strategy: Strategy,
    pub clock: ClockSpec,
    /// Deduct amortized probe/solve/profile time from the solver budget so
    /// the rho target is honored end to end.
    pub deduct_overhead: bool,
    /// Optional path to a full-training report used to compute speedup.
    pub reference: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: "default-cnn".into(),
            dataset: "synthetic".into(),
            classes: 4,
            per_class: 150,
            feature_dim: 100,
            spread: 0.8,
            epochs: 12,
            batch_size: 4,
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            rho: 0.5,
            interval_epochs: 3,
            probe_batch: 4,
            t_q: 1000,
            seed: 1,
            strategy: Strategy::Elastic,
            clock: ClockSpec::default(),
            deduct_overhead: true,
            reference: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho must be in (0,1], got {}", self.rho));
        }
        if self.interval_epochs == 0 {
            return bad("interval_epochs must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 || self.probe_batch == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.classes < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.t_q == 0 {
            return bad("t_q must be >= 1".into());
        }
        if self.dataset == "synthetic" {
            if self.per_class < 5 {
                return bad("per_class must be >= 5 for an 80/20 split".into());
            }
            if self.feature_dim == 0 {
                return bad("feature_dim must be >= 1".into());
            }
            if self.spread < 0.0 {
                return bad("spread must be >= 0".into());
            }
        } else if !self.dataset.starts_with("csv:") {
            return bad(format!(
                "dataset must be 'synthetic' or 'csv:<path>', got '{}'",
                self.dataset
            ));
        }
        self.clock.validate().map_err(Error::BadConfig)?;
        Ok(())
    }

    /// Parse a flat key=value config file. Unknown keys are rejected;
    /// '#' starts a comment.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::BadConfig(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::BadConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Apply one key=value pair (also used for CLI overrides).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::BadConfig(format!("bad value '{value}' for {key}")))
        }
        match key {
            "model" => self.model = value.to_string(),
            "dataset" => self.dataset = value.to_string(),
            "classes" => self.classes = num(key, value)?,
            "per_class" => self.per_class = num(key, value)?,
            "feature_dim" => self.feature_dim = num(key, value)?,
            "spread" => self.spread = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "interval_epochs" => self.interval_epochs = num(key, value)?,
            "probe_batch" => self.probe_batch = num(key, value)?,
            "t_q" => self.t_q = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "clock_mode" => {
                self.clock.mode = match value.to_ascii_lowercase().as_str() {
                    "synthetic" => ClockMode::Synthetic,
                    "wall" => ClockMode::Wall,
                    other => {
                        return Err(Error::BadConfig(format!("unknown clock mode '{other}'")))
                    }
                }
            }
            "clock_conv" => self.clock.conv_rate = num(key, value)?,
            "clock_dense" => self.clock.dense_rate = num(key, value)?,
            "clock_bn" => self.clock.bn_rate = num(key, value)?,
            "clock_elementwise" => self.clock.elementwise_rate = num(key, value)?,
            "clock_overhead_ns" => self.clock.overhead_ns = num(key, value)?,
            "deduct_overhead" => self.deduct_overhead = num(key, value)?,
            "reference" => self.reference = Some(value.to_string()),
            other => return Err(Error::BadConfig(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Fields that must agree for two runs to be comparable.
    pub fn comparable_key(&self) -> (String, String, usize, usize, usize, u64, usize, u32) {
        (
            self.model.clone(),
            self.dataset.clone(),
            self.classes,
            self.per_class,
            self.feature_dim,
            self.seed,
            self.batch_size,
            self.epochs,
        )
    }
}

/// Resolve the configured model name into a layer list for the dataset's
/// feature count and class count.
pub fn resolve_model(name: &str, features: usize, classes: usize) -> Result<ModelSpec> {
    if name == "default-cnn" {
        let side = (features as f64).sqrt().round() as usize;
        if side * side != features {
            return Err(Error::BadConfig(format!(
                "default-cnn wants a square feature grid; {features} is not a square"
            )));
        }
        let spec = ModelSpec {
            input: Shape::chw(1, side, side),
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::BatchNorm { features: 8 },
                LayerSpec::Activation {
                    kind: Activation::Relu,
                },
                LayerSpec::Pool2d { size: 2 },
                LayerSpec::Conv2d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::BatchNorm { features: 16 },
                LayerSpec::Activation {
                    kind: Activation::Relu,
                },
                LayerSpec::Pool2d { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 0, // patched below once spatial dims are known
                    outputs: 64,
                },
                LayerSpec::BatchNorm { features: 64 },
                LayerSpec::Activation {
                    kind: Activation::Relu,
                },
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: classes,
                },
                LayerSpec::Activation {
                    kind: Activation::SoftmaxLoss,
                },
            ],
        };
        return patch_dense_inputs(spec);
    }
    if name == "linear" {
        return Ok(ModelSpec {
            input: Shape::flat(features),
            layers: vec![
                LayerSpec::Dense {
                    inputs: features,
                    outputs: classes,
                },
                LayerSpec::Activation {
                    kind: Activation::SoftmaxLoss,
                },
            ],
        });
    }
    if let Some(widths) = name.strip_prefix("mlp:") {
        let hidden: Vec<usize> = widths
            .split(',')
            .map(|w| {
                w.trim()
                    .parse()
                    .map_err(|_| Error::BadConfig(format!("bad mlp width '{w}'")))
            })
            .collect::<Result<_>>()?;
        if hidden.is_empty() {
            return Err(Error::BadConfig("mlp needs at least one hidden width".into()));
        }
        let mut layers = Vec::new();
        let mut prev = features;
        for &h in &hidden {
            layers.push(LayerSpec::Dense {
                inputs: prev,
                outputs: h,
            });
            layers.push(LayerSpec::Activation {
                kind: Activation::Relu,
            });
            prev = h;
        }
        layers.push(LayerSpec::Dense {
            inputs: prev,
            outputs: classes,
        });
        layers.push(LayerSpec::Activation {
            kind: Activation::SoftmaxLoss,
        });
        return Ok(ModelSpec {
            input: Shape::flat(features),
            layers,
        });
    }
    Err(Error::BadConfig(format!("unknown model '{name}'")))
}

/// Fill the flatten->dense input width from the inferred shapes.
fn patch_dense_inputs(mut spec: ModelSpec) -> Result<ModelSpec> {
    // dry-run shape inference with the dense widths unconstrained
    let mut cur = spec.input;
    for i in 0..spec.layers.len() {
        let incoming = cur.len();
        if let LayerSpec::Dense { inputs, .. } = &mut spec.layers[i] {
            if *inputs == 0 {
                *inputs = incoming;
            }
        }
        cur = match spec.layers[i] {
            LayerSpec::Dense { outputs, .. } => Shape::flat(outputs),
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if cur.h < kernel || cur.w < kernel {
                    return Err(Error::BadModelSpec {
                        layer: i,
                        message: format!("input {}x{} too small for the default cnn", cur.h, cur.w),
                    });
                }
                Shape::chw(
                    out_channels,
                    (cur.h - kernel) / stride + 1,
                    (cur.w - kernel) / stride + 1,
                )
            }
            LayerSpec::Pool2d { size } => Shape::chw(cur.c, cur.h / size, cur.w / size),
            LayerSpec::Flatten => Shape::flat(cur.len()),
            _ => cur,
        };
    }
    Ok(spec)
}
