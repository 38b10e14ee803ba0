//! Composite layer-wise relevance propagation: backpropagates relevance from
//! a chosen class logit to input pixels, producing normalized relevance maps.
//!
//! Relevance is seeded with the raw logit value of the target class (LRP is a
//! decomposition of the logit), then redistributed layer by layer. Dense and
//! convolutional layers use the Zero/Epsilon/Gamma family or the bounded-input
//! ZBox rule; pooling routes winner-take-all through the recorded forward
//! winners; ReLU and Flatten pass relevance through unchanged.
//!
//! All inner accumulations run in `f64`; outputs round back to `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{forward, LayerKind, NetworkModel, Padding};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LrpRule {
    Zero,
    Epsilon { epsilon: f32 },
    Gamma { gamma: f32 },
    ZBox { low: f32, high: f32 },
    WinnerTakeAll,
    PassThrough,
}

/// Depth-dependent rule assignment for a whole model.
///
/// Defaults follow the usual composite recipe: a bounded-input rule at the
/// pixel layer, Gamma on the lower convolutional layers, Epsilon above, and a
/// tiny Epsilon on dense layers.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompositeConfig {
    /// Rule for the first parameterized layer.
    pub input_rule: LrpRule,
    /// Fraction of non-input conv layers that get `lower_conv_rule`.
    pub lower_fraction: f64,
    pub lower_conv_rule: LrpRule,
    pub upper_conv_rule: LrpRule,
    pub dense_rule: LrpRule,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self {
            input_rule: LrpRule::ZBox { low: 0.0, high: 255.0 },
            lower_fraction: 0.5,
            lower_conv_rule: LrpRule::Gamma { gamma: 0.25 },
            upper_conv_rule: LrpRule::Epsilon { epsilon: 0.25 },
            dense_rule: LrpRule::Epsilon { epsilon: 1e-9 },
        }
    }
}

impl CompositeConfig {
    /// Default config with the ZBox bounds set to the theoretical range of
    /// mean-subtracted pixels: `[0 - max(means), 255 - min(means)]`.
    pub fn for_channel_means(means: &[f32]) -> Self {
        let max_m = means.iter().cloned().fold(0.0f32, f32::max);
        let min_m = means.iter().cloned().fold(255.0f32, f32::min).min(0.0);
        Self {
            input_rule: LrpRule::ZBox { low: 0.0 - max_m, high: 255.0 - min_m },
            ..Self::default()
        }
    }

    /// Plain Zero rule everywhere; conserves relevance exactly on bias-free
    /// models, which makes it the reference configuration for conservation
    /// checks.
    pub fn all_zero() -> Self {
        Self {
            input_rule: LrpRule::Zero,
            lower_fraction: 0.5,
            lower_conv_rule: LrpRule::Zero,
            upper_conv_rule: LrpRule::Zero,
            dense_rule: LrpRule::Zero,
        }
    }

    /// Stable hex digest over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Assigns exactly one rule to every layer; a pure function of
/// (layer index, layer kind, config).
pub fn assign_rules(model: &NetworkModel, config: &CompositeConfig) -> Vec<LrpRule> {
    let first_param = model
        .layers
        .iter()
        .position(|l| l.kind.has_params())
        .unwrap_or(usize::MAX);
    let non_input_convs: Vec<usize> = model
        .layers
        .iter()
        .enumerate()
        .filter(|(i, l)| *i != first_param && matches!(l.kind, LayerKind::Conv2d { .. }))
        .map(|(i, _)| i)
        .collect();
    let num_lower = (non_input_convs.len() as f64 * config.lower_fraction).round() as usize;

    model
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match layer.kind {
            LayerKind::Relu | LayerKind::Flatten | LayerKind::Softmax => LrpRule::PassThrough,
            LayerKind::MaxPool2x2 => LrpRule::WinnerTakeAll,
            LayerKind::Conv2d { .. } | LayerKind::Dense { .. } => {
                if i == first_param {
                    config.input_rule
                } else if let Some(pos) = non_input_convs.iter().position(|&c| c == i) {
                    if pos < num_lower {
                        config.lower_conv_rule
                    } else {
                        config.upper_conv_rule
                    }
                } else {
                    config.dense_rule
                }
            }
        })
        .collect()
}

/// Weight transform for the Zero/Epsilon/Gamma family.
#[inline]
fn rho(w: f64, rule: &LrpRule) -> f64 {
    match rule {
        LrpRule::Gamma { gamma } => w + *gamma as f64 * w.max(0.0),
        _ => w,
    }
}

/// Denominator stabilizer: `eps * sign(z)` for Epsilon, 0 otherwise.
#[inline]
fn stabilize(z: f64, rule: &LrpRule) -> f64 {
    match rule {
        LrpRule::Epsilon { epsilon } => z + *epsilon as f64 * z.signum() * (z != 0.0) as u8 as f64,
        _ => z,
    }
}

/// Relevance redistribution through a dense layer under Zero/Epsilon/Gamma.
pub fn lrp_dense(
    r_out: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    input_activations: &Tensor,
    rule: &LrpRule,
) -> Result<Tensor> {
    if weights.rank() != 2 {
        return Err(Error::ShapeMismatch("lrp_dense expects rank-2 weights".into()));
    }
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if r_out.len() != m || input_activations.len() != n || bias.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "lrp_dense: weights {m}x{n} vs R_out {}, a {}, bias {}",
            r_out.len(),
            input_activations.len(),
            bias.len()
        )));
    }
    if !matches!(rule, LrpRule::Zero | LrpRule::Epsilon { .. } | LrpRule::Gamma { .. }) {
        return Err(Error::InvalidInput(format!(
            "lrp_dense does not support rule {rule:?}"
        )));
    }
    let w = weights.data();
    let a = input_activations.data();
    let r = r_out.data();
    let mut r_in = vec![0.0f64; n];
    for k in 0..m {
        let mut z = rho(bias.data()[k] as f64, rule);
        for j in 0..n {
            z += a[j] as f64 * rho(w[k * n + j] as f64, rule);
        }
        let denom = stabilize(z, rule);
        if denom == 0.0 {
            continue;
        }
        let s = r[k] as f64 / denom;
        for j in 0..n {
            r_in[j] += a[j] as f64 * rho(w[k * n + j] as f64, rule) * s;
        }
    }
    Tensor::new(vec![n], r_in.into_iter().map(|x| x as f32).collect())
}

/// ZBox redistribution through a dense layer bounded by `[low, high]`.
pub fn lrp_dense_zbox(
    r_out: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    input_activations: &Tensor,
    low: f32,
    high: f32,
) -> Result<Tensor> {
    if low >= high {
        return Err(Error::InvalidInput(format!("zbox requires low < high, got [{low}, {high}]")));
    }
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if r_out.len() != m || input_activations.len() != n || bias.len() != m {
        return Err(Error::ShapeMismatch("lrp_dense_zbox: inconsistent shapes".into()));
    }
    let w = weights.data();
    let a = input_activations.data();
    let (l, h) = (low as f64, high as f64);
    let mut r_in = vec![0.0f64; n];
    for k in 0..m {
        let mut z = bias.data()[k] as f64;
        for j in 0..n {
            let wj = w[k * n + j] as f64;
            z += a[j] as f64 * wj - l * wj.max(0.0) - h * wj.min(0.0);
        }
        if z == 0.0 {
            continue;
        }
        let s = r_out.data()[k] as f64 / z;
        for j in 0..n {
            let wj = w[k * n + j] as f64;
            r_in[j] += (a[j] as f64 * wj - l * wj.max(0.0) - h * wj.min(0.0)) * s;
        }
    }
    Tensor::new(vec![n], r_in.into_iter().map(|x| x as f32).collect())
}

/// Shared conv-geometry walk for both conv rules. The callback receives the
/// contribution of each (input element, output element) pair plus bias.
#[allow(clippy::too_many_arguments)]
fn conv_redistribute(
    r_out: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    input_activations: &Tensor,
    stride: usize,
    padding: Padding,
    numerator: impl Fn(f64, f64) -> f64, // (a_j, w) -> contribution term
    bias_term: impl Fn(f64) -> f64,
    stabilizer: impl Fn(f64) -> f64,
) -> Result<Tensor> {
    let (in_h, in_w, c_in) = (
        input_activations.shape()[0],
        input_activations.shape()[1],
        input_activations.shape()[2],
    );
    let (kh, kw, _, c_out) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    let (out_h, out_w, pad_top, pad_left) =
        crate::net::layers::conv_geometry(in_h, in_w, kh, kw, stride, padding)?;
    if r_out.shape() != [out_h, out_w, c_out] {
        return Err(Error::InvalidInput(format!(
            "lrp_conv: R_out shape {:?} disagrees with conv geometry {:?}",
            r_out.shape(),
            [out_h, out_w, c_out]
        )));
    }
    let x = input_activations.data();
    let w = weights.data();
    let r = r_out.data();
    let mut r_in = vec![0.0f64; in_h * in_w * c_in];
    for ho in 0..out_h {
        for wo in 0..out_w {
            for co in 0..c_out {
                let mut z = bias_term(bias.data()[co] as f64);
                for ki in 0..kh {
                    let hi = (ho * stride + ki) as isize - pad_top;
                    if hi < 0 || hi >= in_h as isize {
                        continue;
                    }
                    for kj in 0..kw {
                        let wi = (wo * stride + kj) as isize - pad_left;
                        if wi < 0 || wi >= in_w as isize {
                            continue;
                        }
                        let x_base = (hi as usize * in_w + wi as usize) * c_in;
                        let w_base = (ki * kw + kj) * c_in * c_out;
                        for ci in 0..c_in {
                            z += numerator(x[x_base + ci] as f64, w[w_base + ci * c_out + co] as f64);
                        }
                    }
                }
                let denom = stabilizer(z);
                if denom == 0.0 {
                    continue;
                }
                let s = r[(ho * out_w + wo) * c_out + co] as f64 / denom;
                for ki in 0..kh {
                    let hi = (ho * stride + ki) as isize - pad_top;
                    if hi < 0 || hi >= in_h as isize {
                        continue;
                    }
                    for kj in 0..kw {
                        let wi = (wo * stride + kj) as isize - pad_left;
                        if wi < 0 || wi >= in_w as isize {
                            continue;
                        }
                        let x_base = (hi as usize * in_w + wi as usize) * c_in;
                        let w_base = (ki * kw + kj) * c_in * c_out;
                        for ci in 0..c_in {
                            r_in[x_base + ci] += numerator(
                                x[x_base + ci] as f64,
                                w[w_base + ci * c_out + co] as f64,
                            ) * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(
        vec![in_h, in_w, c_in],
        r_in.into_iter().map(|x| x as f32).collect(),
    )
}

/// Relevance redistribution through a convolution, treated as the sparse
/// linear map it is. Matches a materialized-matrix `lrp_dense` call.
pub fn lrp_conv(
    r_out: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    input_activations: &Tensor,
    stride: usize,
    padding: Padding,
    rule: &LrpRule,
) -> Result<Tensor> {
    if input_activations.rank() != 3 || weights.rank() != 4 {
        return Err(Error::ShapeMismatch(
            "lrp_conv expects rank-3 activations and rank-4 weights".into(),
        ));
    }
    match rule {
        LrpRule::Zero | LrpRule::Epsilon { .. } | LrpRule::Gamma { .. } => {
            let rule = *rule;
            conv_redistribute(
                r_out,
                weights,
                bias,
                input_activations,
                stride,
                padding,
                move |a, w| a * rho(w, &rule),
                move |b| rho(b, &rule),
                move |z| stabilize(z, &rule),
            )
        }
        LrpRule::ZBox { low, high } => {
            lrp_conv_zbox(r_out, weights, bias, input_activations, stride, padding, *low, *high)
        }
        _ => Err(Error::InvalidInput(format!(
            "lrp_conv does not support rule {rule:?}"
        ))),
    }
}

/// ZBox redistribution through a convolutional input layer.
#[allow(clippy::too_many_arguments)]
pub fn lrp_conv_zbox(
    r_out: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    input_activations: &Tensor,
    stride: usize,
    padding: Padding,
    low: f32,
    high: f32,
) -> Result<Tensor> {
    if low >= high {
        return Err(Error::InvalidInput(format!("zbox requires low < high, got [{low}, {high}]")));
    }
    let (l, h) = (low as f64, high as f64);
    conv_redistribute(
        r_out,
        weights,
        bias,
        input_activations,
        stride,
        padding,
        move |a, w| a * w - l * w.max(0.0) - h * w.min(0.0),
        |b| b,
        |z| z,
    )
}

/// Winner-take-all routing through a 2x2 max pool: each output cell's
/// relevance goes entirely to the input element that won its window.
pub fn lrp_pool(r_out: &Tensor, winners: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if r_out.len() != winners.len() {
        return Err(Error::Internal(format!(
            "lrp_pool: {} relevance cells but {} winners",
            r_out.len(),
            winners.len()
        )));
    }
    let n: usize = input_shape.iter().product();
    let mut r_in = vec![0.0f32; n];
    for (i, &win) in winners.iter().enumerate() {
        if win >= n {
            return Err(Error::Internal(format!(
                "lrp_pool: winner index {win} out of range for input of {n}"
            )));
        }
        r_in[win] += r_out.data()[i];
    }
    Tensor::new(input_shape.to_vec(), r_in)
}

/// Per-pixel signed relevance for one (model, image, class) triple.
#[derive(Debug, Clone)]
pub struct RelevanceMap {
    /// Rank-2 `H x W` tensor of per-pixel relevance.
    pub values: Tensor,
    pub target_class: usize,
    pub model_id: String,
    pub normalized: bool,
}

/// Propagates relevance from the target logit down to a per-pixel map,
/// without normalizing. Channel relevance at the input is summed per pixel.
pub fn relevance_map_unnormalized(
    model: &NetworkModel,
    image: &Tensor,
    target_class: usize,
    config: &CompositeConfig,
) -> Result<RelevanceMap> {
    model.validate()?;
    if target_class >= model.num_classes() {
        return Err(Error::InvalidInput(format!(
            "target class {target_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    let trace = forward(model, image)?;
    let rules = assign_rules(model, config);

    // Seed at the final Dense output: one-hot(target) * logit[target].
    let mut relevance = Tensor::zeros(vec![model.num_classes()]);
    {
        let mut data = relevance.clone().into_data();
        data[target_class] = trace.logits.data()[target_class];
        relevance = Tensor::new(vec![model.num_classes()], data)?;
    }

    // Walk backwards, skipping the softmax (the seed lives at its input).
    for i in (0..model.layers.len() - 1).rev() {
        let layer = &model.layers[i];
        let step = &trace.steps[i];
        relevance = match (&layer.kind, &rules[i]) {
            (LayerKind::Relu, _) => relevance,
            (LayerKind::Flatten, _) => relevance.reshape(step.input.shape().to_vec())?,
            (LayerKind::MaxPool2x2, _) => lrp_pool(
                &relevance,
                step.winners.as_ref().ok_or_else(|| {
                    Error::Internal(format!("layer '{}': missing pool winners", layer.name))
                })?,
                step.input.shape(),
            )?,
            (LayerKind::Dense { .. }, LrpRule::ZBox { low, high }) => {
                let (w, b) = model.layer_params(&layer.name)?;
                lrp_dense_zbox(&relevance, w, b, &step.input, *low, *high)?
            }
            (LayerKind::Dense { .. }, rule) => {
                let (w, b) = model.layer_params(&layer.name)?;
                lrp_dense(&relevance, w, b, &step.input, rule)?
            }
            (LayerKind::Conv2d { stride, padding, .. }, rule) => {
                let (w, b) = model.layer_params(&layer.name)?;
                lrp_conv(&relevance, w, b, &step.input, *stride, *padding, rule)?
            }
            (LayerKind::Softmax, _) => unreachable!("softmax excluded from the walk"),
        };
        if relevance.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite relevance after layer '{}'",
                layer.name
            )));
        }
    }

    // Sum input channels to one value per pixel.
    let (h, w, c) = model.input_shape;
    let mut pixels = vec![0.0f32; h * w];
    for (i, &v) in relevance.data().iter().enumerate() {
        pixels[i / c] += v;
    }
    Ok(RelevanceMap {
        values: Tensor::new(vec![h, w], pixels)?,
        target_class,
        model_id: String::new(),
        normalized: false,
    })
}

/// Full pipeline: propagate, sum channels, normalize to `[-1, 1]`.
pub fn relevance_map(
    model: &NetworkModel,
    image: &Tensor,
    target_class: usize,
    config: &CompositeConfig,
) -> Result<RelevanceMap> {
    Ok(normalize_map(relevance_map_unnormalized(
        model,
        image,
        target_class,
        config,
    )?))
}

/// Divides by the maximum absolute value; an all-zero map is returned
/// unchanged (with the normalized flag set).
pub fn normalize_map(mut map: RelevanceMap) -> RelevanceMap {
    let max_abs = map.values.data().iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if max_abs > 0.0 {
        let shape = map.values.shape().to_vec();
        let data = map.values.data().iter().map(|&v| v / max_abs).collect();
        map.values = Tensor::new(shape, data).expect("normalize preserves shape");
    }
    map.normalized = true;
    map
}

/// JSON sidecar stored next to a relevance map file.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct MapSidecar {
    pub model_id: String,
    pub image: String,
    pub target_class: usize,
    pub config_digest: String,
    pub normalized: bool,
}

pub fn save_map(
    map: &RelevanceMap,
    image_name: &str,
    config: &CompositeConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, crate::net::nnwb::encode_tensor(&map.values))?;
    let sidecar = MapSidecar {
        model_id: map.model_id.clone(),
        image: image_name.to_string(),
        target_class: map.target_class,
        config_digest: config.digest(),
        normalized: map.normalized,
    };
    let mut json = serde_json::to_string_pretty(&sidecar)?;
    json.push('\n');
    std::fs::write(path.with_extension("json"), json)?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<(RelevanceMap, MapSidecar)> {
    let path = path.as_ref();
    let values = crate::net::nnwb::decode_tensor(&std::fs::read(path)?)?;
    let sidecar: MapSidecar =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    Ok((
        RelevanceMap {
            values,
            target_class: sidecar.target_class,
            model_id: sidecar.model_id.clone(),
            normalized: sidecar.normalized,
        },
        sidecar,
    ))
}

/// Renders a normalized map as grayscale: -1 -> 0, 0 -> 128, +1 -> 255.
pub fn render_map_pgm(map: &RelevanceMap) -> Tensor {
    let (h, w) = (map.values.shape()[0], map.values.shape()[1]);
    let data = map
        .values
        .data()
        .iter()
        .map(|&v| {
            let g = if v < 0.0 { 128.0 + 128.0 * v } else { 128.0 + 127.0 * v };
            g.round().clamp(0.0, 255.0)
        })
        .collect();
    Tensor::new(vec![h, w, 1], data).expect("render preserves pixel count")
}

/// Generic conservation check helper: left-to-right `f64` sum.
pub fn relevance_sum<S: Scalar>(t: &TensorBase<S>) -> f64 {
    t.data().iter().map(|&x| x.to_f64()).sum()
}
