//! Work-to-time conversion.
//!
//! The engine reports what it executed as flop counts per operation. This
//! module turns those counts into durations: either through a deterministic
//! synthetic clock with per-operation-class rates (emulating hardware that
//! accelerates convolutions far more than elementwise work), or through
//! measured wall time for sanity runs. All durations are integer nanoseconds
//! so downstream budget arithmetic is exact.

use serde::{Deserialize, Serialize};
use std::time::Instant;

/// What a backward/forward operation does, independent of the layer type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    /// Any forward-pass operation (one per layer, plus the loss head).
    ForwardOp,
    /// Propagate the error gradient to the layer input.
    GradToInput,
    /// Compute the kernel (or gamma) update from the incoming gradient.
    GradToKernel,
    /// Compute the bias (or beta) update from the incoming gradient.
    GradToBias,
    /// Fused batch-norm backward block (everything but the two update ops).
    BnBlock,
    /// Backward pass of a layer with no trainable tensors.
    NonTrainableBackward,
}

/// Rate bucket an operation is billed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RateClass {
    Conv,
    Dense,
    BatchNorm,
    Elementwise,
}

/// One executed operation: where it ran and how much arithmetic it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpWork {
    pub layer: usize,
    pub kind: OpKind,
    pub class: RateClass,
    pub flops: u64,
}

/// One timed operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpTiming {
    pub layer: usize,
    pub kind: OpKind,
    pub ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClockMode {
    Synthetic,
    Wall,
}

/// Clock configuration. Rates are flops per nanosecond and must be positive.
///
/// The default table makes convolution arithmetic 4-8x cheaper per flop than
/// everything else, so networks dominated by conv flops are *not* dominated
/// by conv time. Tests rely on that divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    pub mode: ClockMode,
    pub conv_rate: f64,
    pub dense_rate: f64,
    pub bn_rate: f64,
    pub elementwise_rate: f64,
    pub overhead_ns: u64,
}

impl Default for ClockSpec {
    fn default() -> Self {
        ClockSpec {
            mode: ClockMode::Synthetic,
            conv_rate: 16.0,
            dense_rate: 4.0,
            bn_rate: 2.0,
            elementwise_rate: 2.0,
            overhead_ns: 500,
        }
    }
}

impl ClockSpec {
    pub fn rate(&self, class: RateClass) -> f64 {
        match class {
            RateClass::Conv => self.conv_rate,
            RateClass::Dense => self.dense_rate,
            RateClass::BatchNorm => self.bn_rate,
            RateClass::Elementwise => self.elementwise_rate,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [
            ("conv_rate", self.conv_rate),
            ("dense_rate", self.dense_rate),
            ("bn_rate", self.bn_rate),
            ("elementwise_rate", self.elementwise_rate),
        ] {
            if r <= 0.0 || !r.is_finite() {
                return Err(format!("{name} must be a positive finite rate, got {r}"));
            }
        }
        Ok(())
    }
}

/// Synthetic duration of one operation: `floor(flops / rate) + overhead`.
pub fn time_op(clock: &ClockSpec, class: RateClass, flops: u64) -> u64 {
    (flops as f64 / clock.rate(class)).floor() as u64 + clock.overhead_ns
}

/// Execution log filled by the engine. In `Wall` mode each operation is also
/// stamped with measured host time; in `Synthetic` mode recording is free.
#[derive(Debug)]
pub struct OpLog {
    records: Vec<OpWork>,
    wall_ns: Vec<u64>,
    measure_wall: bool,
    started: Option<Instant>,
}

impl OpLog {
    pub fn new(measure_wall: bool) -> Self {
        OpLog {
            records: Vec::new(),
            wall_ns: Vec::new(),
            measure_wall,
            started: None,
        }
    }

    /// Mark the start of an op body. Only meaningful in wall mode.
    pub fn start(&mut self) {
        if self.measure_wall {
            self.started = Some(Instant::now());
        }
    }

    /// Record an op that just finished executing.
    pub fn finish(&mut self, layer: usize, kind: OpKind, class: RateClass, flops: u64) {
        if self.measure_wall {
            let elapsed = self
                .started
                .take()
                .map(|t| t.elapsed().as_nanos() as u64)
                .unwrap_or(0);
            self.wall_ns.push(elapsed);
        }
        self.records.push(OpWork {
            layer,
            kind,
            class,
            flops,
        });
    }

    pub fn records(&self) -> &[OpWork] {
        &self.records
    }

    pub fn total_flops(&self) -> u64 {
        self.records.iter().map(|r| r.flops).sum()
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.wall_ns.clear();
        self.started = None;
    }

    /// Convert the log to per-op durations under the given clock.
    pub fn timings(&self, clock: &ClockSpec) -> Vec<OpTiming> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let ns = match clock.mode {
                    ClockMode::Synthetic => time_op(clock, r.class, r.flops),
                    ClockMode::Wall => self.wall_ns.get(i).copied().unwrap_or(0),
                };
                OpTiming {
                    layer: r.layer,
                    kind: r.kind,
                    ns,
                }
            })
            .collect()
    }

    /// Total duration of everything in the log.
    pub fn total_ns(&self, clock: &ClockSpec) -> u64 {
        self.timings(clock).iter().map(|t| t.ns).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_work_costs_only_overhead() {
        let clock = ClockSpec::default();
        assert_eq!(time_op(&clock, RateClass::Conv, 0), 500);
    }

    #[test]
    fn doubling_divisible_work_doubles_net_duration() {
        let clock = ClockSpec::default();
        // dense rate 4: 1000 flops -> 250 ns net of overhead
        let one = time_op(&clock, RateClass::Dense, 1000) - clock.overhead_ns;
        let two = time_op(&clock, RateClass::Dense, 2000) - clock.overhead_ns;
        assert_eq!(one, 250);
        assert_eq!(two, 2 * one);
    }

    #[test]
    fn conv_rate_advantage_shows_in_durations() {
        let clock = ClockSpec::default();
        // conv 16 flops/ns is 4x the dense rate, so equal work runs 4x faster
        let conv = time_op(&clock, RateClass::Conv, 16_000) - clock.overhead_ns;
        let dense = time_op(&clock, RateClass::Dense, 16_000) - clock.overhead_ns;
        assert_eq!(conv, 1000);
        assert_eq!(dense, 4000);
        // and a 10x rate gap yields exactly one tenth the net duration
        let fast = ClockSpec {
            conv_rate: 40.0,
            dense_rate: 4.0,
            ..ClockSpec::default()
        };
        let c = time_op(&fast, RateClass::Conv, 40_000) - fast.overhead_ns;
        let d = time_op(&fast, RateClass::Dense, 40_000) - fast.overhead_ns;
        assert_eq!(c * 10, d);
    }

    #[test]
    fn synthetic_timing_is_reproducible() {
        let clock = ClockSpec::default();
        let mut log = OpLog::new(false);
        for i in 0..20u64 {
            log.start();
            log.finish(0, OpKind::ForwardOp, RateClass::BatchNorm, i * 37 + 5);
        }
        let a = log.total_ns(&clock);
        let b = log.total_ns(&clock);
        assert_eq!(a, b);
        assert_eq!(
            a,
            log.records()
                .iter()
                .map(|r| time_op(&clock, r.class, r.flops))
                .sum::<u64>()
        );
    }

    #[test]
    fn rejects_nonpositive_rates() {
        let bad = ClockSpec {
            bn_rate: 0.0,
            ..ClockSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
