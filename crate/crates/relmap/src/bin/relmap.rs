//! Command-line entry point: forward inference, relevance maps, readout
//! finetuning, the cross-model masking sweep, map similarity, rank-2
//! analysis, and standalone statistical tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use relmap::error::{Error, Result};
use relmap::finetune::{self, Dataset, LoadedDataset, TrainConfig};
use relmap::lrp::{self, CompositeConfig};
use relmap::net::{self, nnwb, pgm, NetworkModel};
use relmap::occlusion::{self, MaskSchedule, RegistryEntry};
use relmap::report::{self, RunManifest};
use relmap::stats::{self, AnovaTable};
use relmap::Tensor;

#[derive(Parser)]
#[command(name = "relmap", version, about = "CNN inference, LRP relevance maps, and cross-model occlusion experiments")]
struct Cli {
    /// Worker threads (0 = automatic). Results are identical for any N.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonIo {
    /// Output directory; created if missing.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Classify one image and print logits/probabilities as JSON.
    Forward {
        /// Model weights (.nnwb).
        #[arg(long)]
        weights: PathBuf,
        /// Input image (PGM, P5).
        #[arg(long)]
        image: PathBuf,
        /// Per-channel means subtracted before inference ("m" or "m1,m2,..").
        #[arg(long)]
        channel_means: Option<String>,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Compute a relevance map for one (model, image, class) triple.
    Relevance {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Target class index; defaults to the predicted class.
        #[arg(long)]
        class: Option<usize>,
        /// Composite-rule configuration JSON; defaults from channel means.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        channel_means: Option<String>,
        /// Also write a grayscale PGM rendering of the map.
        #[arg(long)]
        render: bool,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Finetune the readout layer on a manifest dataset.
    Finetune {
        #[arg(long)]
        weights: PathBuf,
        /// Dataset manifest CSV with header `path,label`.
        #[arg(long)]
        manifest: PathBuf,
        /// Training configuration JSON (epochs, learning_rate, batch_size).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        channel_means: Option<String>,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Run the cross-model masking sweep over a model registry.
    Sweep {
        /// Registry JSON: list of {model_id, pretrain, task, init_seed, weights_path}.
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Masking percentiles, comma-separated, ascending from 0 to 100.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long, default_value_t = 100)]
        samples_per_bin: usize,
        /// Occlusion fill value in preprocessed space.
        #[arg(long, default_value_t = 0.0)]
        fill: f32,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        channel_means: Option<String>,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Pairwise Pearson similarity of relevance maps across a registry.
    Similarity {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        channel_means: Option<String>,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Rank-2 disagreement between two models, optionally with human choices.
    Rank2 {
        #[arg(long)]
        weights_a: PathBuf,
        #[arg(long)]
        weights_b: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Human-choice CSV with header `subject,image,choice` (choice in {A, B}).
        #[arg(long)]
        human: Option<PathBuf>,
        #[arg(long)]
        channel_means: Option<String>,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Standalone statistical tests on CSV inputs.
    Stats {
        #[command(subcommand)]
        test: StatsCommand,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// One-sample t-test on a single-column CSV (header `value`).
    Ttest {
        #[arg(long)]
        input: PathBuf,
        /// Null-hypothesis mean.
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
    },
    /// Two-way ANOVA with interaction on CSV `factorA,factorB,replicate,value`.
    Anova {
        #[arg(long)]
        input: PathBuf,
    },
    /// One-way ANOVA on CSV `group,value`.
    AnovaOneWay {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .expect("thread pool");
    let outcome = pool.install(|| run(cli.command));
    if let Err(err) = outcome {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn parse_means(arg: &Option<String>) -> Result<Vec<f32>> {
    match arg {
        None => Ok(vec![0.0]),
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f32>()
                    .map_err(|e| Error::InvalidInput(format!("bad channel mean '{t}': {e}")))
            })
            .collect(),
    }
}

fn means_tensor(means: &[f32], channels: usize) -> Result<Tensor> {
    let v = if means.len() == 1 {
        vec![means[0]; channels]
    } else if means.len() == channels {
        means.to_vec()
    } else {
        return Err(Error::InvalidInput(format!(
            "{} channel means for {channels} channels",
            means.len()
        )));
    };
    Tensor::new(vec![channels], v)
}

fn load_config(path: &Option<PathBuf>, means: &[f32]) -> Result<CompositeConfig> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(CompositeConfig::for_channel_means(means)),
    }
}

fn load_preprocessed_image(path: &Path, means: &[f32]) -> Result<Tensor> {
    let raw = pgm::load_image_pgm(path)?;
    let channels = raw.shape()[2];
    net::preprocess(&raw, &means_tensor(means, channels)?)
}

/// Loads the manifest and every image it references, preprocessed.
fn load_dataset(manifest: &Path, means: &[f32], split_seed: u64) -> Result<LoadedDataset> {
    let dataset = Dataset::from_manifest(manifest, split_seed)?;
    let mut images = Vec::with_capacity(dataset.items.len());
    let mut labels = Vec::with_capacity(dataset.items.len());
    for (path, label) in &dataset.items {
        images.push(load_preprocessed_image(Path::new(path), means)?);
        labels.push(*label);
    }
    Ok(LoadedDataset {
        images,
        labels,
        class_labels: dataset.class_labels,
        split_seed,
    })
}

fn out_dir(io: &CommonIo) -> Result<Option<PathBuf>> {
    if let Some(dir) = &io.out_dir {
        std::fs::create_dir_all(dir)?;
        return Ok(Some(dir.clone()));
    }
    Ok(None)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    print!("{text}");
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn manifest_for(command_parts: &[&str], seed: u64, config: serde_json::Value) -> RunManifest {
    RunManifest::new(command_parts.iter().map(|s| s.to_string()).collect(), seed, config)
}

fn test_result_json(name: &str, r: &stats::TestResult) -> serde_json::Value {
    serde_json::json!({
        "test": name,
        "effect": r.effect,
        "statistic": r.statistic,
        "df": r.df,
        "p_value": r.p_value,
        "degenerate": r.degenerate,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Forward { weights, image, channel_means, io } => {
            cmd_forward(&weights, &image, &channel_means, &io)
        }
        Command::Relevance { weights, image, class, config, channel_means, render, io } => {
            cmd_relevance(&weights, &image, class, &config, &channel_means, render, &io)
        }
        Command::Finetune { weights, manifest, config, channel_means, io } => {
            cmd_finetune(&weights, &manifest, &config, &channel_means, &io)
        }
        Command::Sweep { registry, manifest, schedule, samples_per_bin, fill, config, channel_means, io } => {
            cmd_sweep(&registry, &manifest, &schedule, samples_per_bin, fill, &config, &channel_means, &io)
        }
        Command::Similarity { registry, manifest, config, channel_means, io } => {
            cmd_similarity(&registry, &manifest, &config, &channel_means, &io)
        }
        Command::Rank2 { weights_a, weights_b, manifest, human, channel_means, io } => {
            cmd_rank2(&weights_a, &weights_b, &manifest, &human, &channel_means, &io)
        }
        Command::Stats { test } => cmd_stats(test),
    }
}

fn cmd_forward(
    weights: &Path,
    image: &Path,
    channel_means: &Option<String>,
    io: &CommonIo,
) -> Result<()> {
    let model = nnwb::load_weights(weights)?;
    let means = parse_means(channel_means)?;
    let input = load_preprocessed_image(image, &means)?;
    let trace = net::forward(&model, &input)?;
    let probs = trace.steps.last().expect("nonempty model").output.clone();
    let prediction = serde_json::json!({
        "logits": trace.logits.data(),
        "probabilities": probs.data(),
        "predicted_class": trace.predicted_class,
        "predicted_label": model.class_labels[trace.predicted_class],
    });
    print_json(&prediction)?;
    if let Some(dir) = out_dir(io)? {
        write_json(&dir.join("prediction.json"), &prediction)?;
        let mut manifest = manifest_for(&["forward"], io.seed, serde_json::json!({"channel_means": means}));
        manifest.record_input(weights)?;
        manifest.record_input(image)?;
        manifest.save(&dir.join("manifest.json"))?;
    }
    Ok(())
}

fn cmd_relevance(
    weights: &Path,
    image: &Path,
    class: Option<usize>,
    config_path: &Option<PathBuf>,
    channel_means: &Option<String>,
    render: bool,
    io: &CommonIo,
) -> Result<()> {
    let model = nnwb::load_weights(weights)?;
    let means = parse_means(channel_means)?;
    let config = load_config(config_path, &means)?;
    let input = load_preprocessed_image(image, &means)?;
    let target = match class {
        Some(c) => c,
        None => net::forward(&model, &input)?.predicted_class,
    };
    let mut map = lrp::relevance_map(&model, &input, target, &config)?;
    map.model_id = weights
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let dir = out_dir(io)?.ok_or_else(|| Error::InvalidInput("relevance requires --out-dir".into()))?;
    let image_name = image.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    lrp::save_map(&map, &image_name, &config, dir.join("map.nnwb"))?;
    if render {
        pgm::save_image_pgm(&lrp::render_map_pgm(&map), dir.join("map.pgm"))?;
    }
    let mut manifest = manifest_for(&["relevance"], io.seed, serde_json::to_value(&config)?);
    manifest.record_input(weights)?;
    manifest.record_input(image)?;
    if let Some(p) = config_path {
        manifest.record_input(p)?;
    }
    manifest.save(&dir.join("manifest.json"))?;
    Ok(())
}

fn cmd_finetune(
    weights: &Path,
    manifest_path: &Path,
    config_path: &Option<PathBuf>,
    channel_means: &Option<String>,
    io: &CommonIo,
) -> Result<()> {
    let base = nnwb::load_weights(weights)?;
    let means = parse_means(channel_means)?;
    let config: TrainConfig = match config_path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    let data = load_dataset(manifest_path, &means, io.seed)?;
    let mut model = finetune::replace_readout(&base, data.class_labels.len(), io.seed)?;
    model.class_labels = data.class_labels.clone();
    let (trained, history) = finetune::finetune_readout(&model, &data, &config)?;
    for warning in &history.warnings {
        eprintln!("warning: {warning}");
    }

    let dir = out_dir(io)?.ok_or_else(|| Error::InvalidInput("finetune requires --out-dir".into()))?;
    nnwb::save_weights(&trained, dir.join("finetuned.nnwb"))?;
    std::fs::write(dir.join("history.csv"), finetune::history_csv(&history))?;
    let mut run_manifest = manifest_for(&["finetune"], io.seed, serde_json::to_value(&config)?);
    run_manifest.record_input(weights)?;
    run_manifest.record_input(manifest_path)?;
    run_manifest.save(&dir.join("manifest.json"))?;
    let last = history.epochs.last().expect("epochs >= 1");
    println!(
        "finetuned {} epochs: train_acc {:.4}, val_acc {:.4}",
        history.epochs.len(),
        last.train_acc,
        last.val_acc
    );
    Ok(())
}

fn load_registry(path: &Path) -> Result<(Vec<RegistryEntry>, Vec<NetworkModel>)> {
    let entries: Vec<RegistryEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if entries.is_empty() {
        return Err(Error::InvalidInput("registry is empty".into()));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let models = entries
        .iter()
        .map(|e| nnwb::load_weights(base.join(&e.weights_path)))
        .collect::<Result<Vec<_>>>()?;
    Ok((entries, models))
}

/// Formats a float the same way everywhere so output files are stable.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    registry_path: &Path,
    manifest_path: &Path,
    schedule_arg: &Option<String>,
    samples_per_bin: usize,
    fill: f32,
    config_path: &Option<PathBuf>,
    channel_means: &Option<String>,
    io: &CommonIo,
) -> Result<()> {
    let (entries, models) = load_registry(registry_path)?;
    let means = parse_means(channel_means)?;
    let config = load_config(config_path, &means)?;
    let schedule = match schedule_arg {
        Some(s) => MaskSchedule::new(
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad percentile '{t}': {e}")))
                })
                .collect::<Result<Vec<_>>>()?,
        )?,
        None => MaskSchedule::default(),
    };
    let data = load_dataset(manifest_path, &means, io.seed)?;

    let output = occlusion::cross_model_sweep(
        &entries,
        &models,
        &data.images,
        &data.labels,
        &schedule,
        &config,
        samples_per_bin,
        io.seed,
        fill,
    )?;
    for warning in &output.warnings {
        eprintln!("warning: {warning}");
    }

    let dir = out_dir(io)?.ok_or_else(|| Error::InvalidInput("sweep requires --out-dir".into()))?;
    let mut sweep_csv = String::from("destination,source,bin,percentile,accuracy\n");
    let mut auc_csv = String::from("destination,source,bin,auc\n");
    for rec in &output.records {
        let dest = &rec.curve.destination_model_id;
        let src = &rec.curve.source_model_id;
        for &(p, acc) in &rec.curve.points {
            sweep_csv.push_str(&format!("{dest},{src},{},{},{}\n", rec.bin.label(), fmt_f64(p), fmt_f64(acc)));
        }
        auc_csv.push_str(&format!("{dest},{src},{},{}\n", rec.bin.label(), fmt_f64(rec.curve.auc)));
    }
    std::fs::write(dir.join("sweep.csv"), sweep_csv)?;
    std::fs::write(dir.join("auc_summary.csv"), auc_csv)?;

    // One curve chart per destination model.
    for entry in &entries {
        let records: Vec<_> = output
            .records
            .iter()
            .filter(|r| r.curve.destination_model_id == entry.model_id)
            .cloned()
            .collect();
        if records.is_empty() {
            continue;
        }
        let svg = report::masking_curve_svg(&entry.model_id, &records)?;
        std::fs::write(dir.join(format!("curves_{}.svg", entry.model_id)), svg)?;
    }

    let mut run_manifest = manifest_for(
        &["sweep"],
        io.seed,
        serde_json::json!({
            "schedule": schedule.percentiles,
            "samples_per_bin": samples_per_bin,
            "fill": fill,
            "channel_means": means,
            "lrp": serde_json::to_value(&config)?,
        }),
    );
    run_manifest.record_input(registry_path)?;
    run_manifest.record_input(manifest_path)?;
    if let Some(p) = config_path {
        run_manifest.record_input(p)?;
    }
    run_manifest.save(&dir.join("manifest.json"))?;
    Ok(())
}

fn cmd_similarity(
    registry_path: &Path,
    manifest_path: &Path,
    config_path: &Option<PathBuf>,
    channel_means: &Option<String>,
    io: &CommonIo,
) -> Result<()> {
    let (entries, models) = load_registry(registry_path)?;
    let means = parse_means(channel_means)?;
    let config = load_config(config_path, &means)?;
    let data = load_dataset(manifest_path, &means, io.seed)?;
    let maps = models
        .iter()
        .map(|model| {
            data.images
                .iter()
                .zip(&data.labels)
                .map(|(image, &label)| lrp::relevance_map(model, image, label, &config))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = entries.iter().map(|e| e.model_id.clone()).collect();
    let matrix = stats::similarity_matrix(&ids, &maps)?;

    let dir = out_dir(io)?.ok_or_else(|| Error::InvalidInput("similarity requires --out-dir".into()))?;
    let n = ids.len();
    let mut csv_text = String::from("model_a,model_b,similarity\n");
    for i in 0..n {
        for j in 0..n {
            csv_text.push_str(&format!("{},{},{}\n", ids[i], ids[j], fmt_f64(matrix.values[i * n + j])));
        }
    }
    std::fs::write(dir.join("similarity.csv"), csv_text)?;
    std::fs::write(
        dir.join("similarity.svg"),
        report::similarity_heatmap_svg("relevance map similarity", &matrix)?,
    )?;
    let mut run_manifest = manifest_for(&["similarity"], io.seed, serde_json::to_value(&config)?);
    run_manifest.record_input(registry_path)?;
    run_manifest.record_input(manifest_path)?;
    run_manifest.save(&dir.join("manifest.json"))?;
    Ok(())
}

fn cmd_rank2(
    weights_a: &Path,
    weights_b: &Path,
    manifest_path: &Path,
    human: &Option<PathBuf>,
    channel_means: &Option<String>,
    io: &CommonIo,
) -> Result<()> {
    let model_a = nnwb::load_weights(weights_a)?;
    let model_b = nnwb::load_weights(weights_b)?;
    let means = parse_means(channel_means)?;
    let dataset = Dataset::from_manifest(manifest_path, io.seed)?;
    let images = dataset
        .items
        .iter()
        .map(|(p, _)| load_preprocessed_image(Path::new(p), &means))
        .collect::<Result<Vec<_>>>()?;
    let disagreements = occlusion::rank2_disagreement(&model_a, &model_b, &images)?;

    let dir = out_dir(io)?.ok_or_else(|| Error::InvalidInput("rank2 requires --out-dir".into()))?;
    let mut csv_text = String::from("image,rank2_a,rank2_b\n");
    for &(idx, ra, rb) in &disagreements {
        csv_text.push_str(&format!("{},{},{}\n", dataset.items[idx].0, ra, rb));
    }
    std::fs::write(dir.join("disagreements.csv"), csv_text)?;
    if disagreements.is_empty() {
        println!("the two models agree on the rank-2 choice for every image");
    } else {
        println!("{} of {} images have differing rank-2 choices", disagreements.len(), images.len());
    }

    if let Some(human_path) = human {
        let result = human_preference_ttest(human_path)?;
        write_json(&dir.join("human_preference.json"), &result)?;
        print_json(&result)?;
    }
    let mut run_manifest = manifest_for(&["rank2"], io.seed, serde_json::Value::Null);
    run_manifest.record_input(weights_a)?;
    run_manifest.record_input(weights_b)?;
    run_manifest.record_input(manifest_path)?;
    if let Some(p) = human {
        run_manifest.record_input(p)?;
    }
    run_manifest.save(&dir.join("manifest.json"))?;
    Ok(())
}

/// Per-subject preference rate for model A's choice, tested against 0.5.
fn human_preference_ttest(path: &Path) -> Result<serde_json::Value> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "subject" || &headers[1] != "image" || &headers[2] != "choice" {
        return Err(Error::InvalidInput(format!(
            "human CSV must have header 'subject,image,choice', got {headers:?}"
        )));
    }
    let mut per_subject: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let counts = per_subject.entry(record[0].to_string()).or_insert((0, 0));
        match &record[2] {
            "A" => counts.0 += 1,
            "B" => {}
            other => {
                return Err(Error::InvalidInput(format!(
                    "choice must be 'A' or 'B', got '{other}'"
                )))
            }
        }
        counts.1 += 1;
    }
    let rates: Vec<f64> = per_subject
        .values()
        .map(|&(a, total)| a as f64 / total as f64)
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    // Unanimous subjects leave the t-test undefined; still report the rate.
    match stats::t_test_one_sample(&rates, 0.5) {
        Ok(test) => Ok(serde_json::json!({
            "n_subjects": rates.len(),
            "mean_preference_for_a": mean,
            "t": test.statistic,
            "df": test.df,
            "p_value": test.p_value,
        })),
        Err(Error::Numeric(_)) => Ok(serde_json::json!({
            "n_subjects": rates.len(),
            "mean_preference_for_a": mean,
            "t": serde_json::Value::Null,
            "df": serde_json::Value::Null,
            "p_value": serde_json::Value::Null,
            "note": "zero variance across subjects; t-test undefined",
        })),
        Err(e) => Err(e),
    }
}

fn cmd_stats(test: StatsCommand) -> Result<()> {
    match test {
        StatsCommand::Ttest { input, mu } => {
            let mut reader = csv::Reader::from_path(&input)?;
            let mut values = Vec::new();
            for record in reader.records() {
                let record = record?;
                values.push(record[record.len() - 1].parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("bad value '{}': {e}", &record[record.len() - 1]))
                })?);
            }
            let result = stats::t_test_one_sample(&values, mu)?;
            print_json(&test_result_json("one_sample_t", &result))
        }
        StatsCommand::Anova { input } => {
            let table = read_anova_table(&input)?;
            let [a, b, ab] = stats::anova_two_way(&table)?;
            print_json(&serde_json::json!({
                "factor_a": test_result_json("anova_two_way", &a),
                "factor_b": test_result_json("anova_two_way", &b),
                "interaction": test_result_json("anova_two_way", &ab),
            }))
        }
        StatsCommand::AnovaOneWay { input } => {
            let mut reader = csv::Reader::from_path(&input)?;
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for record in reader.records() {
                let record = record?;
                let value = record[1]
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad value '{}': {e}", &record[1])))?;
                groups.entry(record[0].to_string()).or_default().push(value);
            }
            let vectors: Vec<Vec<f64>> = groups.into_values().collect();
            let result = stats::anova_one_way(&vectors)?;
            print_json(&test_result_json("anova_one_way", &result))
        }
    }
}

/// Reads `factorA,factorB,replicate,value` into a balanced ANOVA table.
fn read_anova_table(path: &Path) -> Result<AnovaTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut cells: BTreeMap<(String, String), Vec<(String, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        if record.len() < 4 {
            return Err(Error::InvalidInput("ANOVA CSV needs 4 columns".into()));
        }
        let value = record[3]
            .parse::<f64>()
            .map_err(|e| Error::InvalidInput(format!("bad value '{}': {e}", &record[3])))?;
        cells
            .entry((record[0].to_string(), record[1].to_string()))
            .or_default()
            .push((record[2].to_string(), value));
    }
    let mut levels_a: Vec<String> = cells.keys().map(|(a, _)| a.clone()).collect();
    levels_a.dedup();
    let mut levels_b: Vec<String> = cells.keys().map(|(_, b)| b.clone()).collect();
    levels_b.sort();
    levels_b.dedup();
    let replicates = cells.values().next().map(|v| v.len()).unwrap_or(0);
    let mut values = Vec::with_capacity(levels_a.len() * levels_b.len() * replicates);
    for a in &levels_a {
        for b in &levels_b {
            let mut cell = cells
                .remove(&(a.clone(), b.clone()))
                .ok_or_else(|| Error::InvalidInput(format!("missing cell ({a}, {b})")))?;
            cell.sort_by(|x, y| x.0.cmp(&y.0));
            if cell.len() != replicates {
                return Err(Error::InvalidInput(format!(
                    "cell ({a}, {b}) has {} replicates, expected {replicates}",
                    cell.len()
                )));
            }
            values.extend(cell.into_iter().map(|(_, v)| v));
        }
    }
    AnovaTable::new(levels_a.len(), levels_b.len(), replicates, values)
}
