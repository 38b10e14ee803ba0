//! Readout finetuning: trains only the final Dense layer of a frozen network
//! with plain minibatch SGD on cross-entropy. The convolutional stack never
//! changes, so penultimate activations are computed once per image and cached.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{forward, LayerKind, LayerSpec, NetworkModel};
use crate::Tensor;

/// Labeled image set. `items` pairs an image path with a label index into
/// `class_labels`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<(String, usize)>,
    pub class_labels: Vec<String>,
    pub split_seed: u64,
}

impl Dataset {
    /// Reads a `path,label` CSV manifest. The class vocabulary is the sorted
    /// set of unique labels; relative image paths resolve against the
    /// manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>, split_seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "path" || &headers[1] != "label" {
            return Err(Error::InvalidInput(format!(
                "manifest must have header 'path,label', got {headers:?}"
            )));
        }
        let mut raw: Vec<(String, String)> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let img = base.join(&record[0]).to_string_lossy().into_owned();
            raw.push((img, record[1].to_string()));
        }
        let mut class_labels: Vec<String> = raw.iter().map(|(_, l)| l.clone()).collect();
        class_labels.sort();
        class_labels.dedup();
        let items = raw
            .into_iter()
            .map(|(p, l)| {
                let idx = class_labels.binary_search(&l).expect("label in vocabulary");
                (p, idx)
            })
            .collect();
        Ok(Self {
            items,
            class_labels,
            split_seed,
        })
    }
}

/// A dataset with its images decoded into memory.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub class_labels: Vec<String>,
    pub split_seed: u64,
}

impl LoadedDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            learning_rate: 0.01,
            batch_size: 16,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidInput("learning rate must be finite and >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

/// Uniform initialization bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f32).sqrt()
}

/// Replaces the final Dense layer with a fresh `num_classes`-way readout.
/// Weights are drawn from a seeded uniform on `[-r, r]` with the fan-based
/// bound; biases start at zero. Every other parameter is untouched.
pub fn replace_readout(
    model: &NetworkModel,
    num_classes: usize,
    init_seed: u64,
) -> Result<NetworkModel> {
    model.validate()?;
    if num_classes < 2 {
        return Err(Error::InvalidInput(format!(
            "readout needs at least 2 classes, got {num_classes}"
        )));
    }
    let readout = model.readout_name().to_string();
    let in_features = match model.layers[model.layers.len() - 2].kind {
        LayerKind::Dense { in_features, .. } => in_features,
        _ => unreachable!("validated model ends in Dense+Softmax"),
    };
    let r = xavier_bound(in_features, num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let weights: Vec<f32> = (0..num_classes * in_features)
        .map(|_| rng.gen::<f32>() * 2.0 * r - r)
        .collect();

    let mut out = model.clone();
    let n = out.layers.len();
    out.layers[n - 2] = LayerSpec {
        name: readout.clone(),
        kind: LayerKind::Dense {
            in_features,
            out_features: num_classes,
        },
    };
    out.params.insert(
        readout,
        (
            Tensor::new(vec![num_classes, in_features], weights)?,
            Tensor::zeros(vec![num_classes]),
        ),
    );
    out.class_labels = (0..num_classes).map(|i| format!("class_{i}")).collect();
    Ok(out)
}

/// Deterministic 80/20 split: seeded shuffle, then the last `floor(N/5)`
/// shuffled items become validation. Returns (train, val) index lists.
pub fn split_dataset(n_items: usize, split_seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_items < 5 {
        return Err(Error::InvalidInput(format!(
            "split needs at least 5 items, got {n_items}"
        )));
    }
    let mut indices: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    indices.shuffle(&mut rng);
    let val_size = n_items / 5;
    let val = indices.split_off(n_items - val_size);
    Ok((indices, val))
}

fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn readout_logits(w: &[f32], b: &[f32], feature: &[f32], k: usize, n: usize) -> Vec<f64> {
    let mut z = vec![0.0f64; k];
    for c in 0..k {
        let mut acc = b[c] as f64;
        for j in 0..n {
            acc += w[c * n + j] as f64 * feature[j] as f64;
        }
        z[c] = acc;
    }
    z
}

/// Cross-entropy of one example under the current readout parameters.
#[cfg(test)]
pub(crate) fn readout_loss(w: &[f32], b: &[f32], feature: &[f32], label: usize, k: usize, n: usize) -> f64 {
    let p = softmax_f64(&readout_logits(w, b, feature, k, n));
    -p[label].max(1e-300).ln()
}

/// Analytic single-example gradient: `(softmax - one_hot) (x) feature`.
pub(crate) fn readout_gradient(
    w: &[f32],
    b: &[f32],
    feature: &[f32],
    label: usize,
    k: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let p = softmax_f64(&readout_logits(w, b, feature, k, n));
    let mut dw = vec![0.0f64; k * n];
    let mut db = vec![0.0f64; k];
    for c in 0..k {
        let err = p[c] - (c == label) as u8 as f64;
        db[c] = err;
        for j in 0..n {
            dw[c * n + j] = err * feature[j] as f64;
        }
    }
    (dw, db)
}

fn eval_split(
    w: &[f32],
    b: &[f32],
    features: &[Vec<f32>],
    labels: &[usize],
    idx: &[usize],
    k: usize,
    n: usize,
) -> (f64, f64) {
    if idx.is_empty() {
        return (0.0, 0.0);
    }
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for &i in idx {
        let z = readout_logits(w, b, &features[i], k, n);
        let p = softmax_f64(&z);
        // max() would swallow a NaN probability; keep divergence visible.
        let pl = p[labels[i]];
        loss += if pl.is_nan() { f64::NAN } else { -pl.max(1e-300).ln() };
        let mut arg = 0usize;
        for c in 1..k {
            if z[c] > z[arg] {
                arg = c;
            }
        }
        correct += (arg == labels[i]) as usize;
    }
    (loss / idx.len() as f64, correct as f64 / idx.len() as f64)
}

/// Penultimate (readout-input) activations for one image.
pub fn penultimate_features(model: &NetworkModel, image: &Tensor) -> Result<Vec<f32>> {
    let trace = forward(model, image)?;
    let readout_idx = model.layers.len() - 2;
    Ok(trace.steps[readout_idx].input.data().to_vec())
}

/// Trains the readout layer, leaving every other parameter bit-identical.
pub fn finetune_readout(
    model: &NetworkModel,
    data: &LoadedDataset,
    config: &TrainConfig,
) -> Result<(NetworkModel, TrainHistory)> {
    model.validate()?;
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let k = model.num_classes();
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!(
            "label index {bad} out of range for {k} classes"
        )));
    }
    let (train_idx, val_idx) = split_dataset(data.len(), data.split_seed)?;

    let mut history = TrainHistory::default();
    for c in 0..k {
        if !train_idx.iter().any(|&i| data.labels[i] == c) {
            history.warnings.push(format!(
                "class {c} ('{}') absent from training split",
                model.class_labels.get(c).map(String::as_str).unwrap_or("?")
            ));
        }
    }

    // Convolutional stack is frozen: cache penultimate activations once,
    // in dataset order.
    let features: Vec<Vec<f32>> = data
        .images
        .iter()
        .map(|img| penultimate_features(model, img))
        .collect::<Result<_>>()?;
    let n = features[0].len();

    let readout = model.readout_name().to_string();
    let (w0, b0) = model.layer_params(&readout)?;
    let mut w = w0.data().to_vec();
    let mut b = b0.data().to_vec();

    let lr = config.learning_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order = train_idx.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut dw = vec![0.0f64; k * n];
            let mut db = vec![0.0f64; k];
            for &i in batch {
                let (gw, gb) = readout_gradient(&w, &b, &features[i], data.labels[i], k, n);
                for (acc, g) in dw.iter_mut().zip(&gw) {
                    *acc += g;
                }
                for (acc, g) in db.iter_mut().zip(&gb) {
                    *acc += g;
                }
            }
            let scale = lr / batch.len() as f64;
            for (wv, g) in w.iter_mut().zip(&dw) {
                *wv = (*wv as f64 - scale * g) as f32;
            }
            for (bv, g) in b.iter_mut().zip(&db) {
                *bv = (*bv as f64 - scale * g) as f32;
            }
        }
        let (train_loss, train_acc) = eval_split(&w, &b, &features, &data.labels, &train_idx, k, n);
        let (val_loss, val_acc) = eval_split(&w, &b, &features, &data.labels, &val_idx, k, n);
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "NaN training loss at epoch {epoch}; aborting"
            )));
        }
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
    }

    let mut out = model.clone();
    out.params.insert(
        readout,
        (Tensor::new(vec![k, n], w)?, Tensor::new(vec![k], b)?),
    );
    Ok((out, history))
}

/// Renders a training history as the `epoch,train_loss,train_acc,val_loss,val_acc` CSV.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for e in &history.epochs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
        ));
    }
    out
}
