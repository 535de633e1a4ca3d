//! Dataset ingestion: synthetic Gaussian clusters or a small CSV loader.
//! Features are standardized to zero mean / unit variance using train-split
//! statistics.

use crate::engine::Batch;
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Dataset<S> {
    pub features: usize,
    pub classes: usize,
    pub train_x: Vec<S>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<S>,
    pub test_y: Vec<usize>,
}

impl<S: Scalar> Dataset<S> {
    pub fn train_len(&self) -> usize {
        self.train_y.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_y.len()
    }

    pub fn train_batch(&self, indices: &[usize]) -> Batch<S> {
        let mut inputs = Vec::with_capacity(indices.len() * self.features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(&self.train_x[i * self.features..(i + 1) * self.features]);
            labels.push(self.train_y[i]);
        }
        Batch { inputs, labels }
    }

    pub fn test_batch(&self, start: usize, len: usize) -> Batch<S> {
        Batch {
            inputs: self.test_x[start * self.features..(start + len) * self.features].to_vec(),
            labels: self.test_y[start..start + len].to_vec(),
        }
    }
}

/// Build train/test splits from the configured source. Deterministic for a
/// fixed config: the synthetic generator is seeded by `config.seed`, and the
/// CSV split sends every fifth row to the test set.
pub fn make_dataset<S: Scalar>(cfg: &TrainConfig) -> Result<Dataset<S>> {
    let mut ds = if cfg.dataset == "synthetic" {
        synthetic(cfg)
    } else if let Some(path) = cfg.dataset.strip_prefix("csv:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading dataset '{path}'"), e))?;
        from_csv(&text, cfg.classes)
    } else {
        Err(Error::BadDataset(format!(
            "unknown dataset source '{}'",
            cfg.dataset
        )))
    }?;
    if ds.train_y.is_empty() || ds.test_y.is_empty() {
        return Err(Error::BadDataset(
            "dataset too small for an 80/20 train/test split".into(),
        ));
    }
    standardize(&mut ds);
    Ok(ds)
}

/// Gaussian clusters: one standard-normal center per class, samples at
/// `center + spread * noise`. 80/20 train/test split per class.
fn synthetic<S: Scalar>(cfg: &TrainConfig) -> Result<Dataset<S>> {
    let d = cfg.feature_dim;
    let mut rng = Rng::new(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..d).map(|_| rng.normal()).collect())
        .collect();

    let test_per_class = cfg.per_class / 5;
    let train_per_class = cfg.per_class - test_per_class;
    let mut ds = Dataset {
        features: d,
        classes: cfg.classes,
        train_x: Vec::new(),
        train_y: Vec::new(),
        test_x: Vec::new(),
        test_y: Vec::new(),
    };
    for (label, center) in centers.iter().enumerate() {
        for i in 0..cfg.per_class {
            let sample = center
                .iter()
                .map(|&c| S::from_f64_lit(c + cfg.spread * rng.normal()));
            if i < train_per_class {
                ds.train_x.extend(sample);
                ds.train_y.push(label);
            } else {
                ds.test_x.extend(sample);
                ds.test_y.push(label);
            }
        }
    }
    Ok(ds)
}

/// CSV: one header row, numeric feature columns, final integer label column.
fn from_csv<S: Scalar>(text: &str, classes: usize) -> Result<Dataset<S>> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::BadDataset("empty csv".into()));
    };
    let cols = header.split(',').count();
    if cols < 2 {
        return Err(Error::BadDataset(
            "csv needs at least one feature column and a label column".into(),
        ));
    }
    let features = cols - 1;

    let mut rows: Vec<(Vec<S>, usize)> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::BadDataset(format!(
                "line {}: expected {cols} columns, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut x = Vec::with_capacity(features);
        for f in &fields[..features] {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::BadDataset(format!("line {}: bad feature value '{f}'", lineno + 1))
            })?;
            x.push(S::from_f64_lit(v));
        }
        let label: usize = fields[features].trim().parse().map_err(|_| {
            Error::BadDataset(format!(
                "line {}: bad label '{}'",
                lineno + 1,
                fields[features]
            ))
        })?;
        if label >= classes {
            return Err(Error::BadDataset(format!(
                "line {}: label {label} >= {classes} classes",
                lineno + 1
            )));
        }
        rows.push((x, label));
    }
    if rows.is_empty() {
        return Err(Error::BadDataset("csv has no data rows".into()));
    }

    let mut ds = Dataset {
        features,
        classes,
        train_x: Vec::new(),
        train_y: Vec::new(),
        test_x: Vec::new(),
        test_y: Vec::new(),
    };
    for (i, (x, y)) in rows.into_iter().enumerate() {
        if (i + 1) % 5 == 0 {
            ds.test_x.extend(x);
            ds.test_y.push(y);
        } else {
            ds.train_x.extend(x);
            ds.train_y.push(y);
        }
    }
    Ok(ds)
}

fn standardize<S: Scalar>(ds: &mut Dataset<S>) {
    let d = ds.features;
    let n = ds.train_len();
    if n == 0 {
        return;
    }
    let n_s = S::from_f64_lit(n as f64);
    let floor = S::from_f64_lit(1e-9);
    for j in 0..d {
        let mut mean = S::zero();
        for i in 0..n {
            mean += ds.train_x[i * d + j];
        }
        mean /= n_s;
        let mut var = S::zero();
        for i in 0..n {
            let diff = ds.train_x[i * d + j] - mean;
            var += diff * diff;
        }
        let std = (var / n_s).sqrt().max(floor);
        for i in 0..n {
            ds.train_x[i * d + j] = (ds.train_x[i * d + j] - mean) / std;
        }
        for i in 0..ds.test_y.len() {
            ds.test_x[i * d + j] = (ds.test_x[i * d + j] - mean) / std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            classes: 4,
            per_class: 50,
            feature_dim: 6,
            spread: 0.3,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a: Dataset<f64> = make_dataset(&cfg()).unwrap();
        let b: Dataset<f64> = make_dataset(&cfg()).unwrap();
        assert_eq!(a.train_x, b.train_x);
        assert_eq!(a.test_y, b.test_y);
        assert_eq!(a.train_len(), 4 * 40);
        assert_eq!(a.test_len(), 4 * 10);
    }

    #[test]
    fn train_split_is_standardized() {
        let ds: Dataset<f64> = make_dataset(&cfg()).unwrap();
        let n = ds.train_len() as f64;
        for j in 0..ds.features {
            let mean: f64 = (0..ds.train_len())
                .map(|i| ds.train_x[i * ds.features + j])
                .sum::<f64>()
                / n;
            let var: f64 = (0..ds.train_len())
                .map(|i| (ds.train_x[i * ds.features + j] - mean).powi(2))
                .sum::<f64>()
                / n;
            assert!(mean.abs() < 1e-9, "feature {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "feature {j} var {var}");
        }
    }

    #[test]
    fn csv_parses_features_and_labels() {
        let text = "a,b,label\n1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,0\n7.0,8.0,1\n9.0,10.0,0\n";
        let ds: Dataset<f64> = from_csv(text, 2).unwrap();
        assert_eq!(ds.features, 2);
        assert_eq!(ds.train_len(), 4);
        assert_eq!(ds.test_len(), 1); // every fifth row
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let short_row = "a,b,label\n1.0,2.0,0\n3.0,1\n";
        match from_csv::<f64>(short_row, 2) {
            Err(Error::BadDataset(m)) => assert!(m.contains("line 3"), "{m}"),
            other => panic!("expected dataset error, got {other:?}"),
        }
        let bad_label = "a,b,label\n1.0,2.0,7\n";
        match from_csv::<f64>(bad_label, 2) {
            Err(Error::BadDataset(m)) => {
                assert!(m.contains("line 2") && m.contains("label 7"), "{m}")
            }
            other => panic!("expected dataset error, got {other:?}"),
        }
    }
}
