//! Percentile relevance masking, accuracy-vs-masking curves, AUC, the
//! five-bin cross-model generalization sweep, and rank-2 choice analysis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lrp::{relevance_map, CompositeConfig, RelevanceMap};
use crate::net::{forward, NetworkModel};
use crate::Tensor;

/// Ascending masking percentiles; must contain 0 and 100.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskSchedule {
    pub percentiles: Vec<f64>,
}

impl Default for MaskSchedule {
    fn default() -> Self {
        // Log-spaced, including the 31.6% level.
        Self {
            percentiles: vec![0.0, 1.0, 1.78, 3.16, 5.62, 10.0, 17.8, 31.6, 56.2, 100.0],
        }
    }
}

impl MaskSchedule {
    pub fn new(percentiles: Vec<f64>) -> Result<Self> {
        if percentiles.first() != Some(&0.0) || percentiles.last() != Some(&100.0) {
            return Err(Error::InvalidInput(
                "schedule must start at 0 and end at 100".into(),
            ));
        }
        if percentiles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("schedule must be strictly ascending".into()));
        }
        Ok(Self { percentiles })
    }
}

/// Replaces the top `percentile`% of pixels by absolute relevance with
/// `fill_value` in every channel. Exactly `round(percentile/100 * HW)`
/// pixels change; ties in |relevance| break toward the lowest flat index.
pub fn mask_image(
    image: &Tensor,
    map: &RelevanceMap,
    percentile: f64,
    fill_value: f32,
) -> Result<Tensor> {
    if image.rank() != 3 || map.values.rank() != 2 {
        return Err(Error::ShapeMismatch(
            "mask_image expects H x W x C image and H x W map".into(),
        ));
    }
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if map.values.shape() != [h, w] {
        return Err(Error::ShapeMismatch(format!(
            "map shape {:?} != image spatial shape [{h}, {w}]",
            map.values.shape()
        )));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidInput(format!(
            "percentile {percentile} outside [0, 100]"
        )));
    }
    let num_pixels = h * w;
    // Round-half-up pixel count.
    let k = ((percentile / 100.0 * num_pixels as f64) + 0.5).floor() as usize;
    let k = k.min(num_pixels);

    let mut order: Vec<usize> = (0..num_pixels).collect();
    let rel = map.values.data();
    order.sort_by(|&i, &j| {
        rel[j]
            .abs()
            .partial_cmp(&rel[i].abs())
            .unwrap()
            .then(i.cmp(&j))
    });

    let mut data = image.data().to_vec();
    for &pixel in order.iter().take(k) {
        for ci in 0..c {
            data[pixel * c + ci] = fill_value;
        }
    }
    Tensor::new(image.shape().to_vec(), data)
}

/// (percentile, accuracy) samples for one source -> destination transfer.
#[derive(Debug, Clone)]
pub struct MaskingCurve {
    pub points: Vec<(f64, f64)>,
    pub source_model_id: String,
    pub destination_model_id: String,
    pub auc: f64,
}

/// Trapezoidal AUC over the normalized masked fraction `percentile / 100`.
pub fn auc(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("auc needs at least 2 points".into()));
    }
    if points.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::InvalidInput("auc points must be sorted ascending".into()));
    }
    let mut area = 0.0f64;
    for w in points.windows(2) {
        let dx = (w[1].0 - w[0].0) / 100.0;
        area += dx * (w[0].1 + w[1].1) / 2.0;
    }
    Ok(area)
}

/// Accuracy of `destination` over images masked (per image) by `source_maps`,
/// at every percentile in the schedule.
pub fn accuracy_curve(
    destination: &NetworkModel,
    source_maps: &[RelevanceMap],
    images: &[Tensor],
    labels: &[usize],
    schedule: &MaskSchedule,
    fill_value: f32,
) -> Result<MaskingCurve> {
    if source_maps.len() != images.len() || labels.len() != images.len() {
        return Err(Error::InvalidInput(format!(
            "accuracy_curve: {} images, {} maps, {} labels",
            images.len(),
            source_maps.len(),
            labels.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::InvalidInput("accuracy_curve: empty image set".into()));
    }
    let mut points = Vec::with_capacity(schedule.percentiles.len());
    for &p in &schedule.percentiles {
        let mut correct = 0usize;
        for ((image, map), &label) in images.iter().zip(source_maps).zip(labels) {
            let masked = mask_image(image, map, p, fill_value)?;
            let trace = forward(destination, &masked)?;
            correct += (trace.predicted_class == label) as usize;
        }
        points.push((p, correct as f64 / images.len() as f64));
    }
    let area = auc(&points)?;
    Ok(MaskingCurve {
        points,
        source_model_id: source_maps[0].model_id.clone(),
        destination_model_id: String::new(),
        auc: area,
    })
}

/// The three coordinates that distinguish models in the registry.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDescriptor {
    pub pretrain: String,
    pub task: String,
    pub init_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ComparisonBin {
    SameInit,
    SameTrainTaskDiffInit,
    SamePretrainDiffTask,
    DiffPretrainSameTask,
    DiffPretrainDiffTask,
}

impl ComparisonBin {
    pub const ALL: [ComparisonBin; 5] = [
        ComparisonBin::SameInit,
        ComparisonBin::SameTrainTaskDiffInit,
        ComparisonBin::SamePretrainDiffTask,
        ComparisonBin::DiffPretrainSameTask,
        ComparisonBin::DiffPretrainDiffTask,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ComparisonBin::SameInit => "same_init",
            ComparisonBin::SameTrainTaskDiffInit => "same_train_task_diff_init",
            ComparisonBin::SamePretrainDiffTask => "same_pretrain_diff_task",
            ComparisonBin::DiffPretrainSameTask => "diff_pretrain_same_task",
            ComparisonBin::DiffPretrainDiffTask => "diff_pretrain_diff_task",
        }
    }
}

/// The unique bin consistent with a source/destination descriptor pair.
pub fn classify_pair(source: &ModelDescriptor, destination: &ModelDescriptor) -> ComparisonBin {
    let same_pretrain = source.pretrain == destination.pretrain;
    let same_task = source.task == destination.task;
    match (same_pretrain, same_task) {
        (true, true) => {
            if source.init_seed == destination.init_seed {
                ComparisonBin::SameInit
            } else {
                ComparisonBin::SameTrainTaskDiffInit
            }
        }
        (true, false) => ComparisonBin::SamePretrainDiffTask,
        (false, true) => ComparisonBin::DiffPretrainSameTask,
        (false, false) => ComparisonBin::DiffPretrainDiffTask,
    }
}

/// One entry of the model registry JSON.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RegistryEntry {
    pub model_id: String,
    pub pretrain: String,
    pub task: String,
    pub init_seed: u64,
    pub weights_path: String,
}

impl RegistryEntry {
    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            pretrain: self.pretrain.clone(),
            task: self.task.clone(),
            init_seed: self.init_seed,
        }
    }
}

/// A source/destination pairing labeled with its generalization bin.
#[derive(Debug, Clone)]
pub struct ComparisonRecord {
    pub bin: ComparisonBin,
    pub source: ModelDescriptor,
    pub destination: ModelDescriptor,
    pub curve: MaskingCurve,
}

/// Sweep results plus warnings for bins that had no eligible source.
#[derive(Debug)]
pub struct SweepOutput {
    pub records: Vec<ComparisonRecord>,
    pub warnings: Vec<String>,
}

/// The full cross-model experiment. For each destination model and
/// each comparison bin, `samples_per_bin` source models are drawn uniformly
/// with replacement from the bin-eligible set (seeded), and the destination
/// is evaluated on images masked by each source's relevance maps.
///
/// Relevance maps target each image's true label. Curve computation is
/// parallel over the unique (destination, source) pairs; the draw sequence
/// and the output order are independent of thread count.
#[allow(clippy::too_many_arguments)]
pub fn cross_model_sweep(
    entries: &[RegistryEntry],
    models: &[NetworkModel],
    images: &[Tensor],
    labels: &[usize],
    schedule: &MaskSchedule,
    config: &CompositeConfig,
    samples_per_bin: usize,
    rng_seed: u64,
    fill_value: f32,
) -> Result<SweepOutput> {
    if entries.len() != models.len() {
        return Err(Error::InvalidInput(format!(
            "{} registry entries but {} models",
            entries.len(),
            models.len()
        )));
    }
    if entries.is_empty() {
        return Err(Error::InvalidInput("empty registry".into()));
    }

    // Per-(source model, image) relevance maps, targeting the true label.
    let maps: Vec<Vec<RelevanceMap>> = models
        .par_iter()
        .zip(entries.par_iter())
        .map(|(model, entry)| {
            images
                .iter()
                .zip(labels)
                .map(|(image, &label)| {
                    let mut map = relevance_map(model, image, label, config)?;
                    map.model_id = entry.model_id.clone();
                    Ok(map)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // Draw the source sequence deterministically, before any parallel work.
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut warnings = Vec::new();
    // (destination index, bin, source index) in output order.
    let mut draws: Vec<(usize, ComparisonBin, usize)> = Vec::new();
    for (d, dest) in entries.iter().enumerate() {
        let dest_desc = dest.descriptor();
        for bin in ComparisonBin::ALL {
            let eligible: Vec<usize> = entries
                .iter()
                .enumerate()
                .filter(|(_, src)| classify_pair(&src.descriptor(), &dest_desc) == bin)
                .map(|(s, _)| s)
                .collect();
            if eligible.is_empty() {
                warnings.push(format!(
                    "destination '{}': no eligible source for bin {}",
                    dest.model_id,
                    bin.label()
                ));
                continue;
            }
            for _ in 0..samples_per_bin {
                let s = eligible[rng.gen_range(0..eligible.len())];
                draws.push((d, bin, s));
            }
        }
    }

    // Curves depend only on (destination, source); compute each pair once.
    let mut pairs: Vec<(usize, usize)> = draws.iter().map(|&(d, _, s)| (d, s)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let curves: Vec<((usize, usize), MaskingCurve)> = pairs
        .par_iter()
        .map(|&(d, s)| {
            let mut curve =
                accuracy_curve(&models[d], &maps[s], images, labels, schedule, fill_value)?;
            curve.destination_model_id = entries[d].model_id.clone();
            Ok(((d, s), curve))
        })
        .collect::<Result<Vec<_>>>()?;
    let curve_of = |d: usize, s: usize| -> &MaskingCurve {
        let pos = curves.binary_search_by_key(&(d, s), |&(k, _)| k).unwrap();
        &curves[pos].1
    };

    let records = draws
        .iter()
        .map(|&(d, bin, s)| ComparisonRecord {
            bin,
            source: entries[s].descriptor(),
            destination: entries[d].descriptor(),
            curve: curve_of(d, s).clone(),
        })
        .collect();
    Ok(SweepOutput { records, warnings })
}

/// Index of the largest logit excluding `rank1_excluded`; ties to lowest index.
pub fn rank2_choice(logits: &[f32], rank1_excluded: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, &z) in logits.iter().enumerate() {
        if i == rank1_excluded {
            continue;
        }
        match best {
            Some(b) if logits[b] >= z => {}
            _ => best = Some(i),
        }
    }
    best.expect("logits length >= 2")
}

/// Images on which the two models produce differing rank-2 choices.
pub fn rank2_disagreement(
    model_a: &NetworkModel,
    model_b: &NetworkModel,
    images: &[Tensor],
) -> Result<Vec<(usize, usize, usize)>> {
    if model_a.class_labels != model_b.class_labels {
        return Err(Error::InvalidInput(
            "rank2_disagreement: models have different class vocabularies".into(),
        ));
    }
    let mut out = Vec::new();
    for (i, image) in images.iter().enumerate() {
        let ta = forward(model_a, image)?;
        let tb = forward(model_b, image)?;
        let r2a = rank2_choice(ta.logits.data(), ta.predicted_class);
        let r2b = rank2_choice(tb.logits.data(), tb.predicted_class);
        if r2a != r2b {
            out.push((i, r2a, r2b));
        }
    }
    Ok(out)
}
