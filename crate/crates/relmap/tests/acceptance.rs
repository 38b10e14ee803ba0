//! Acceptance suite: one test per release criterion, each printing a single
//! PASS/FAIL line. Run with `cargo test --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;

use relmap::finetune::{self, LoadedDataset, TrainConfig};
use relmap::lrp::{self, CompositeConfig, LrpRule};
use relmap::net::{conv2d_forward, LayerKind, LayerSpec, NetworkModel, Padding};
use relmap::occlusion::{self, classify_pair, ComparisonBin, MaskSchedule, ModelDescriptor};
use relmap::stats;
use relmap::Tensor;

fn check(number: usize, name: &str, body: impl FnOnce() -> Result<(), String>) {
    match body() {
        Ok(()) => println!("criterion {number} ({name}): PASS"),
        Err(msg) => {
            println!("criterion {number} ({name}): FAIL — {msg}");
            panic!("criterion {number} ({name}) failed: {msg}");
        }
    }
}

fn lcg(seed: u64) -> impl FnMut() -> f32 {
    let mut s = seed;
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 33) as f32 / (1u64 << 31) as f32) - 0.5
    }
}

/// Builds a small CNN: `conv_blocks` conv(+ReLU, + optional pool) stages
/// followed by flatten, dense, softmax. Biases are zero when `bias_free`.
fn random_cnn(seed: u64, conv_blocks: usize, with_pool: bool, bias_free: bool) -> NetworkModel {
    let mut next = lcg(seed);
    let (mut h, mut w, mut c) = (8usize, 8usize, 1usize);
    let mut layers = Vec::new();
    let mut params = BTreeMap::new();
    for block in 0..conv_blocks {
        let out_c = 2;
        let name = format!("conv{block}");
        layers.push(LayerSpec {
            name: name.clone(),
            kind: LayerKind::Conv2d {
                kernel_h: 3,
                kernel_w: 3,
                in_channels: c,
                out_channels: out_c,
                stride: 1,
                padding: Padding::Valid,
            },
        });
        let wlen = 3 * 3 * c * out_c;
        let weights: Vec<f32> = (0..wlen).map(|_| next()).collect();
        let bias: Vec<f32> = (0..out_c).map(|_| if bias_free { 0.0 } else { next() }).collect();
        params.insert(
            name,
            (
                Tensor::new(vec![3, 3, c, out_c], weights).unwrap(),
                Tensor::new(vec![out_c], bias).unwrap(),
            ),
        );
        layers.push(LayerSpec { name: format!("relu{block}"), kind: LayerKind::Relu });
        h -= 2;
        w -= 2;
        c = out_c;
        if with_pool && block == 0 {
            layers.push(LayerSpec { name: format!("pool{block}"), kind: LayerKind::MaxPool2x2 });
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
    }
    layers.push(LayerSpec { name: "flat".into(), kind: LayerKind::Flatten });
    let features = h * w * c;
    let classes = 3;
    layers.push(LayerSpec {
        name: "fc".into(),
        kind: LayerKind::Dense { in_features: features, out_features: classes },
    });
    let dw: Vec<f32> = (0..classes * features).map(|_| next()).collect();
    let db: Vec<f32> = (0..classes).map(|_| if bias_free { 0.0 } else { next() }).collect();
    params.insert(
        "fc".into(),
        (
            Tensor::new(vec![classes, features], dw).unwrap(),
            Tensor::new(vec![classes], db).unwrap(),
        ),
    );
    layers.push(LayerSpec { name: "probs".into(), kind: LayerKind::Softmax });
    NetworkModel {
        layers,
        params,
        input_shape: (8, 8, 1),
        class_labels: vec!["a".into(), "b".into(), "c".into()],
    }
}

fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Tensor {
    let mut next = lcg(seed);
    Tensor::new(vec![h, w, c], (0..h * w * c).map(|_| next() + 0.5).collect()).unwrap()
}

#[test]
fn criterion_01_conservation() {
    check(1, "relevance conservation", || {
        let config = CompositeConfig::all_zero();
        for trial in 0..100u64 {
            let blocks = 1 + (trial % 2) as usize; // 3 or 5 pre-flatten layers
            let model = random_cnn(trial, blocks, trial % 3 == 0, true);
            let image = random_image(10_000 + trial, 8, 8, 1);
            let target = (trial % 3) as usize;
            let map = lrp::relevance_map_unnormalized(&model, &image, target, &config)
                .map_err(|e| format!("trial {trial}: {e}"))?;
            let trace = relmap::net::forward(&model, &image).map_err(|e| e.to_string())?;
            let logit = trace.logits.data()[target] as f64;
            let sum = lrp::relevance_sum(&map.values);
            let scale = logit.abs().max(1e-6);
            if ((sum - logit) / scale).abs() > 1e-3 {
                return Err(format!(
                    "trial {trial}: relevance sum {sum} vs logit {logit} (relative error > 1e-3)"
                ));
            }
        }
        Ok(())
    });
}

/// A flatten -> dense(bias-free) -> softmax model over an n-pixel image.
fn linear_model(seed: u64, h: usize, w: usize, classes: usize) -> NetworkModel {
    let mut next = lcg(seed);
    let n = h * w;
    let layers = vec![
        LayerSpec { name: "flat".into(), kind: LayerKind::Flatten },
        LayerSpec {
            name: "fc".into(),
            kind: LayerKind::Dense { in_features: n, out_features: classes },
        },
        LayerSpec { name: "probs".into(), kind: LayerKind::Softmax },
    ];
    let mut params = BTreeMap::new();
    params.insert(
        "fc".into(),
        (
            Tensor::new(vec![classes, n], (0..classes * n).map(|_| next()).collect()).unwrap(),
            Tensor::zeros(vec![classes]),
        ),
    );
    NetworkModel {
        layers,
        params,
        input_shape: (h, w, 1),
        class_labels: (0..classes).map(|i| format!("c{i}")).collect(),
    }
}

#[test]
fn criterion_02_linear_equivalence() {
    check(2, "linear models: LRP == gradient x input", || {
        let config = CompositeConfig::all_zero();
        for trial in 0..50u64 {
            let (h, w) = (2 + (trial % 5) as usize, 2 + (trial / 7 % 5) as usize);
            let classes = 2 + (trial % 3) as usize;
            let model = linear_model(trial, h, w, classes);
            let image = random_image(20_000 + trial, h, w, 1);
            let target = (trial % classes as u64) as usize;
            let map = lrp::relevance_map_unnormalized(&model, &image, target, &config)
                .map_err(|e| format!("trial {trial}: {e}"))?;
            // gradient of logit_t w.r.t. pixel j is w[t, j].
            let (weights, _) = model.layer_params("fc").map_err(|e| e.to_string())?;
            let n = h * w;
            for j in 0..n {
                let gxi = weights.data()[target * n + j] * image.data()[j];
                let got = map.values.data()[j];
                if (got - gxi).abs() > 1e-5 {
                    return Err(format!(
                        "trial {trial}, pixel {j}: LRP {got} vs gradient x input {gxi}"
                    ));
                }
            }
        }
        Ok(())
    });
}

/// Materializes a convolution as a dense matrix over flattened tensors.
fn materialize_conv(
    input_shape: &[usize],
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> (Tensor, Tensor, Vec<usize>) {
    let (h, w, cin) = (input_shape[0], input_shape[1], input_shape[2]);
    let n = h * w * cin;
    // Output geometry via a probe forward pass.
    let probe = conv2d_forward(&Tensor::zeros(vec![h, w, cin]), weights, bias, stride, padding).unwrap();
    let out_shape = probe.shape().to_vec();
    let m: usize = out_shape.iter().product();
    let mut matrix = vec![0.0f32; m * n];
    for j in 0..n {
        let mut basis = vec![0.0f32; n];
        basis[j] = 1.0;
        let col = conv2d_forward(
            &Tensor::new(vec![h, w, cin], basis).unwrap(),
            weights,
            &Tensor::zeros(vec![bias.len()]),
            stride,
            padding,
        )
        .unwrap();
        for k in 0..m {
            matrix[k * n + j] = col.data()[k];
        }
    }
    let (out_h, out_w, cout) = (out_shape[0], out_shape[1], out_shape[2]);
    let mut bias_flat = vec![0.0f32; m];
    for oh in 0..out_h {
        for ow in 0..out_w {
            for oc in 0..cout {
                bias_flat[(oh * out_w + ow) * cout + oc] = bias.data()[oc];
            }
        }
    }
    (
        Tensor::new(vec![m, n], matrix).unwrap(),
        Tensor::new(vec![m], bias_flat).unwrap(),
        out_shape,
    )
}

#[test]
fn criterion_03_conv_vs_matrix() {
    check(3, "lrp_conv matches materialized-matrix lrp_dense", || {
        for trial in 0..20u64 {
            let mut next = lcg(30_000 + trial);
            let h = 4 + (trial % 3) as usize;
            let w = 4 + (trial / 3 % 3) as usize;
            let cin = 1 + (trial % 2) as usize;
            let cout = 1 + (trial / 2 % 2) as usize;
            let kh = 2 + (trial % 2) as usize;
            let kw = 2 + (trial / 5 % 2) as usize;
            let stride = 1 + (trial % 2) as usize;
            let padding = if trial % 3 == 0 { Padding::Same } else { Padding::Valid };
            let rule = match trial % 3 {
                0 => LrpRule::Zero,
                1 => LrpRule::Epsilon { epsilon: 0.1 },
                _ => LrpRule::Gamma { gamma: 0.25 },
            };
            let weights = Tensor::new(
                vec![kh, kw, cin, cout],
                (0..kh * kw * cin * cout).map(|_| next()).collect(),
            )
            .unwrap();
            let bias = Tensor::new(vec![cout], (0..cout).map(|_| next()).collect()).unwrap();
            let input = Tensor::new(vec![h, w, cin], (0..h * w * cin).map(|_| next()).collect()).unwrap();
            let (matrix, bias_flat, out_shape) =
                materialize_conv(&[h, w, cin], &weights, &bias, stride, padding);
            let m: usize = out_shape.iter().product();
            let r_out = Tensor::new(vec![m], (0..m).map(|_| next()).collect()).unwrap();

            let via_conv = lrp::lrp_conv(
                &r_out.reshape(out_shape.clone()).unwrap(),
                &weights,
                &bias,
                &input,
                stride,
                padding,
                &rule,
            )
            .map_err(|e| format!("trial {trial}: {e}"))?;
            let flat_input = input.reshape(vec![h * w * cin]).unwrap();
            let via_dense = lrp::lrp_dense(&r_out, &matrix, &bias_flat, &flat_input, &rule)
                .map_err(|e| format!("trial {trial}: {e}"))?;
            for (i, (&a, &b)) in via_conv.data().iter().zip(via_dense.data()).enumerate() {
                if (a - b).abs() > 1e-4 {
                    return Err(format!("trial {trial}, element {i}: conv {a} vs matrix {b}"));
                }
            }
        }
        Ok(())
    });
}

/// 4-class toy task: one bright quadrant per class in an 8x8 image.
fn quadrant_dataset(n_per_class: usize, seed: u64) -> LoadedDataset {
    let mut next = lcg(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for class in 0..4usize {
        let (qr, qc) = (class / 2, class % 2);
        for _ in 0..n_per_class {
            let mut data = vec![0.0f32; 64];
            for r in 0..8 {
                for c in 0..8 {
                    let in_quadrant = (r / 4 == qr) && (c / 4 == qc);
                    let base = if in_quadrant { 1.0 } else { 0.0 };
                    data[r * 8 + c] = base + 0.1 * next();
                }
            }
            images.push(Tensor::new(vec![8, 8, 1], data).unwrap());
            labels.push(class);
        }
    }
    LoadedDataset {
        images,
        labels,
        class_labels: (0..4).map(|i| format!("q{i}")).collect(),
        split_seed: seed,
    }
}

/// Frozen random conv stack + fresh 4-way readout, finetuned on the toy task.
fn finetuned_quadrant_model(init_seed: u64, data: &LoadedDataset) -> Result<NetworkModel, String> {
    let base = random_cnn(999, 1, true, false);
    let model = finetune::replace_readout(&base, 4, init_seed).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 30,
        learning_rate: 0.5,
        batch_size: 16,
        shuffle_seed: init_seed,
    };
    let (trained, history) = finetune::finetune_readout(&model, data, &config).map_err(|e| e.to_string())?;
    let last = history.epochs.last().unwrap();
    if last.val_acc < 0.98 {
        return Err(format!(
            "finetuning (seed {init_seed}) reached val accuracy {} < 0.98",
            last.val_acc
        ));
    }
    Ok(trained)
}

fn quadrant_config() -> CompositeConfig {
    // ZBox bounds covering the toy task's pixel range.
    CompositeConfig {
        input_rule: LrpRule::ZBox { low: -0.1, high: 1.1 },
        ..CompositeConfig::default()
    }
}

#[test]
fn criterion_04_masking_efficacy() {
    check(4, "masking drives accuracy to chance; relevance beats random", || {
        let data = quadrant_dataset(20, 77);
        let model = finetuned_quadrant_model(0, &data)?;
        let schedule = MaskSchedule::default();
        let config = quadrant_config();

        let maps: Vec<_> = data
            .images
            .iter()
            .zip(&data.labels)
            .map(|(image, &label)| lrp::relevance_map(&model, image, label, &config))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let curve = occlusion::accuracy_curve(&model, &maps, &data.images, &data.labels, &schedule, 0.0)
            .map_err(|e| e.to_string())?;

        // Fully masked images are constant, so accuracy must be chance +/- 5pp.
        let full = curve.points.last().unwrap().1;
        if (full - 0.25).abs() > 0.05 {
            return Err(format!("accuracy at 100% masking is {full}, not chance +/- 0.05"));
        }

        // Random-mask baseline over 20 seeds.
        let mut random_aucs = Vec::new();
        for seed in 0..20u64 {
            let mut next = lcg(40_000 + seed);
            let random_maps: Vec<_> = (0..data.images.len())
                .map(|_| lrp::RelevanceMap {
                    values: Tensor::new(vec![8, 8], (0..64).map(|_| next()).collect()).unwrap(),
                    target_class: 0,
                    model_id: "random".into(),
                    normalized: false,
                })
                .collect();
            let rc = occlusion::accuracy_curve(
                &model,
                &random_maps,
                &data.images,
                &data.labels,
                &schedule,
                0.0,
            )
            .map_err(|e| e.to_string())?;
            random_aucs.push(rc.auc);
        }
        let random_mean = random_aucs.iter().sum::<f64>() / random_aucs.len() as f64;
        if curve.auc > random_mean - 0.05 {
            return Err(format!(
                "SameInit AUC {} is not at least 0.05 below random-mask AUC {random_mean}",
                curve.auc
            ));
        }
        Ok(())
    });
}

#[test]
fn criterion_05_init_stability() {
    check(5, "AUC stable across readout seeds", || {
        let data = quadrant_dataset(20, 77);
        let config = quadrant_config();
        let schedule = MaskSchedule::default();
        let models: Vec<NetworkModel> = (0..5u64)
            .map(|seed| finetuned_quadrant_model(seed, &data))
            .collect::<Result<Vec<_>, _>>()?;
        let maps: Vec<Vec<_>> = models
            .iter()
            .map(|m| {
                data.images
                    .iter()
                    .zip(&data.labels)
                    .map(|(image, &label)| lrp::relevance_map(m, image, label, &config))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;

        let mut gaps = Vec::new();
        for (d, dest) in models.iter().enumerate() {
            let same = occlusion::accuracy_curve(dest, &maps[d], &data.images, &data.labels, &schedule, 0.0)
                .map_err(|e| e.to_string())?
                .auc;
            let mut cross = Vec::new();
            for (s, source_maps) in maps.iter().enumerate() {
                if s == d {
                    continue;
                }
                cross.push(
                    occlusion::accuracy_curve(dest, source_maps, &data.images, &data.labels, &schedule, 0.0)
                        .map_err(|e| e.to_string())?
                        .auc,
                );
            }
            let diff_init = cross.iter().sum::<f64>() / cross.len() as f64;
            gaps.push((same - diff_init).abs());
        }
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        if mean_gap >= 0.05 {
            return Err(format!(
                "mean |AUC(SameInit) - AUC(SameTrainTaskDiffInit)| = {mean_gap} >= 0.05"
            ));
        }
        Ok(())
    });
}

/// Samples with an exact mean and standard deviation.
fn samples_with(mean: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut next = lcg(seed);
    let raw: Vec<f64> = (0..n).map(|_| next() as f64).collect();
    let m = raw.iter().sum::<f64>() / n as f64;
    let s = (raw.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    raw.into_iter().map(|x| (x - m) / s * sd + mean).collect()
}

#[test]
fn criterion_06_statistics_arithmetic() {
    check(6, "reference summary statistics reproduce", || {
        // n=46, mean 0.518, sem 0.0077 -> sd = sem * sqrt(46).
        let n = 46usize;
        let sd = 0.0077 * (n as f64).sqrt();
        let samples = samples_with(0.518, sd, n, 60_001);
        let result = stats::t_test_one_sample(&samples, 0.5).map_err(|e| e.to_string())?;
        if (result.statistic - 2.34).abs() > 0.02 {
            return Err(format!("t = {}, expected 2.34 +/- 0.02", result.statistic));
        }
        if (result.p_value - 0.023).abs() > 0.002 {
            return Err(format!("p = {}, expected 0.023 +/- 0.002", result.p_value));
        }
        if result.df != vec![45.0] {
            return Err(format!("df = {:?}, expected [45]", result.df));
        }

        // 2 x 2 x 5 two-way table: effect df 1, error df 16.
        let values = samples_with(0.6, 0.1, 20, 60_002);
        let table = stats::AnovaTable::new(2, 2, 5, values).map_err(|e| e.to_string())?;
        let [a, b, ab] = stats::anova_two_way(&table).map_err(|e| e.to_string())?;
        for (name, r) in [("A", &a), ("B", &b)] {
            if r.df != vec![1.0, 16.0] {
                return Err(format!("factor {name} df = {:?}, expected [1, 16]", r.df));
            }
        }
        if ab.df != vec![1.0, 16.0] {
            return Err(format!("interaction df = {:?}, expected [1, 16]", ab.df));
        }

        // 4 groups x 5 replicates one-way: dfs (3, 16).
        let groups: Vec<Vec<f64>> = (0..4)
            .map(|g| samples_with(0.5 + 0.05 * g as f64, 0.08, 5, 60_010 + g as u64))
            .collect();
        let one_way = stats::anova_one_way(&groups).map_err(|e| e.to_string())?;
        if one_way.df != vec![3.0, 16.0] {
            return Err(format!("one-way df = {:?}, expected [3, 16]", one_way.df));
        }
        Ok(())
    });
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, eps: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
    }
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = (a + b) / 2.0;
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, eps / 2.0, depth - 1)
                + recurse(f, m, b, right, eps / 2.0, depth - 1)
        }
    }
    recurse(f, lo, hi, simpson(f, lo, hi), eps, 60)
}

#[test]
fn criterion_07_special_functions() {
    check(7, "incomplete beta oracle and F == t^2", || {
        let mut next = lcg(70_000);
        for trial in 0..1000 {
            let a = (next().abs() * 10.0 + 1.0) as f64;
            let b = (next().abs() * 10.0 + 1.0) as f64;
            let x = (next().abs() * 0.9 + 0.05) as f64;
            let got: f64 = stats::regularized_incomplete_beta(a, b, x).map_err(|e| e.to_string())?;
            let ln_b = stats::ln_gamma(a) + stats::ln_gamma(b) - stats::ln_gamma(a + b);
            let dens = move |t: f64| {
                if t <= 0.0 || t >= 1.0 {
                    0.0
                } else {
                    ((a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln() - ln_b).exp()
                }
            };
            let oracle = adaptive_simpson(&dens, 0.0, x, 1e-12);
            if (got - oracle).abs() > 1e-8 {
                return Err(format!(
                    "trial {trial}: I_{x}({a},{b}) = {got} vs quadrature {oracle}"
                ));
            }
        }
        for trial in 0..200 {
            let mut next = lcg(71_000 + trial);
            let t = (next().abs() * 6.0 + 0.01) as f64;
            let df = (next().abs() * 60.0 + 2.0).round() as f64;
            let p_t = stats::t_two_sided_p(t, df).map_err(|e| e.to_string())?;
            let p_f = stats::f_upper_p(t * t, 1.0, df).map_err(|e| e.to_string())?;
            if (p_t - p_f).abs() > 1e-8 {
                return Err(format!("trial {trial}: t p {p_t} vs F p {p_f} (t={t}, df={df})"));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_08_bin_combinatorics() {
    check(8, "registry grid bin counts", || {
        let mut grid = Vec::new();
        for pretrain in ["imagenet", "vggface"] {
            for task in ["identity", "gender"] {
                for seed in 0..5u64 {
                    grid.push(ModelDescriptor {
                        pretrain: pretrain.into(),
                        task: task.into(),
                        init_seed: seed,
                    });
                }
            }
        }
        let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
        for a in &grid {
            for b in &grid {
                *counts.entry(classify_pair(a, b).label()).or_default() += 1;
            }
        }
        let expected = [
            (ComparisonBin::SameInit.label(), 20),
            (ComparisonBin::SameTrainTaskDiffInit.label(), 80),
            (ComparisonBin::SamePretrainDiffTask.label(), 100),
            (ComparisonBin::DiffPretrainSameTask.label(), 100),
            (ComparisonBin::DiffPretrainDiffTask.label(), 100),
        ];
        for (label, want) in expected {
            let got = counts.get(label).copied().unwrap_or(0);
            if got != want {
                return Err(format!("bin {label}: {got} pairs, expected {want}"));
            }
        }
        Ok(())
    });
}

/// Writes a toy registry (4 models), a PGM dataset, and a manifest CSV.
fn write_sweep_fixture(dir: &Path) -> Result<(), String> {
    let err = |e: relmap::Error| e.to_string();
    let mut entries = Vec::new();
    let mut idx = 0u64;
    for pretrain in ["p0", "p1"] {
        for seed in 0..2u64 {
            let model = random_cnn(5000 + idx, 1, true, false);
            let name = format!("model_{pretrain}_{seed}.nnwb");
            relmap::net::nnwb::save_weights(&model, dir.join(&name)).map_err(err)?;
            entries.push(serde_json::json!({
                "model_id": format!("{pretrain}-s{seed}"),
                "pretrain": pretrain,
                "task": "toy",
                "init_seed": seed,
                "weights_path": name,
            }));
            idx += 1;
        }
    }
    std::fs::write(
        dir.join("registry.json"),
        serde_json::to_string_pretty(&entries).unwrap(),
    )
    .map_err(|e| e.to_string())?;

    let mut manifest = String::from("path,label\n");
    let mut next = lcg(6000);
    for i in 0..6 {
        let data: Vec<f32> = (0..64).map(|_| ((next() + 0.5) * 255.0).clamp(0.0, 255.0).round()).collect();
        let image = Tensor::new(vec![8, 8, 1], data).unwrap();
        let name = format!("img{i}.pgm");
        relmap::net::pgm::save_image_pgm(&image, dir.join(&name)).map_err(err)?;
        manifest.push_str(&format!("{name},{}\n", ["a", "b", "c"][i % 3]));
    }
    std::fs::write(dir.join("data.csv"), manifest).map_err(|e| e.to_string())?;
    Ok(())
}

fn run_sweep(fixture: &Path, out: &Path, threads: usize) -> Result<(), String> {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_relmap"))
        .args([
            "--threads",
            &threads.to_string(),
            "sweep",
            "--registry",
        ])
        .arg(fixture.join("registry.json"))
        .arg("--manifest")
        .arg(fixture.join("data.csv"))
        .args(["--samples-per-bin", "3", "--seed", "11", "--channel-means", "128"])
        .arg("--out-dir")
        .arg(out)
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("sweep exited with {status}"));
    }
    Ok(())
}

#[test]
fn criterion_09_sweep_determinism() {
    check(9, "sweep reproducibility across runs and thread counts", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let fixture = dir.path();
        write_sweep_fixture(fixture)?;
        let outs = ["run1", "run2", "run_t1", "run_t8"];
        run_sweep(fixture, &fixture.join(outs[0]), 0)?;
        run_sweep(fixture, &fixture.join(outs[1]), 0)?;
        run_sweep(fixture, &fixture.join(outs[2]), 1)?;
        run_sweep(fixture, &fixture.join(outs[3]), 8)?;
        for file in ["sweep.csv", "auc_summary.csv"] {
            let bytes: Vec<Vec<u8>> = outs
                .iter()
                .map(|o| std::fs::read(fixture.join(o).join(file)).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            if bytes[0] != bytes[1] {
                return Err(format!("{file}: two same-seed runs differ"));
            }
            if bytes[2] != bytes[3] {
                return Err(format!("{file}: --threads 1 differs from --threads 8"));
            }
            if bytes[0] != bytes[2] {
                return Err(format!("{file}: default threads differ from --threads 1"));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_10_format_round_trips() {
    check(10, "NNWB and PGM round trips are bit-exact", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        for trial in 0..50u64 {
            // NNWB: save -> load -> save must reproduce the bytes.
            let model = random_cnn(90_000 + trial, 1 + (trial % 2) as usize, trial % 2 == 0, false);
            let p1 = dir.path().join(format!("m{trial}.nnwb"));
            let p2 = dir.path().join(format!("m{trial}b.nnwb"));
            relmap::net::nnwb::save_weights(&model, &p1).map_err(|e| e.to_string())?;
            let loaded = relmap::net::nnwb::load_weights(&p1).map_err(|e| e.to_string())?;
            relmap::net::nnwb::save_weights(&loaded, &p2).map_err(|e| e.to_string())?;
            if std::fs::read(&p1).unwrap() != std::fs::read(&p2).unwrap() {
                return Err(format!("NNWB trial {trial}: bytes differ after round trip"));
            }
            if loaded != model {
                return Err(format!("NNWB trial {trial}: model differs after load"));
            }

            // PGM: integral pixel values survive save -> load -> save.
            let mut next = lcg(95_000 + trial);
            let (h, w) = (3 + (trial % 6) as usize, 3 + (trial / 6 % 6) as usize);
            let data: Vec<f32> = (0..h * w).map(|_| ((next() + 0.5) * 255.0).clamp(0.0, 255.0).round()).collect();
            let image = Tensor::new(vec![h, w, 1], data).unwrap();
            let g1 = dir.path().join(format!("i{trial}.pgm"));
            let g2 = dir.path().join(format!("i{trial}b.pgm"));
            relmap::net::pgm::save_image_pgm(&image, &g1).map_err(|e| e.to_string())?;
            let back = relmap::net::pgm::load_image_pgm(&g1).map_err(|e| e.to_string())?;
            relmap::net::pgm::save_image_pgm(&back, &g2).map_err(|e| e.to_string())?;
            if std::fs::read(&g1).unwrap() != std::fs::read(&g2).unwrap() {
                return Err(format!("PGM trial {trial}: bytes differ after round trip"));
            }
            if back.data() != image.data() {
                return Err(format!("PGM trial {trial}: pixels differ after load"));
            }
        }
        Ok(())
    });
}
