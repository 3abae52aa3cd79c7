//! `entrocam` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use entrocam::io::cifar::{load_batches, read_cifar10_batch, train_files, TEST_FILE};
use entrocam::io::{read_npy, read_pgm, write_pgm};
use entrocam::nn::{load_spec_from_dir, train, Precision};
use entrocam::profile::{render_heatmap, write_profile_csv};
use entrocam::prune::{greedy_prune_with, PruneConfig};
use entrocam::{
    aura_matrix_entropy, dataset_profile, gradcam, resolve_class, spatial_disorder_entropy, synth, univariate_entropy,
    ClassPolicy, Dataset, HeatmapPalette, NetworkSpec, SdeCap, Tensor, TrainConfig, Weights,
};

use config::{ConfigFile, UsageError};

#[derive(Parser, Debug)]
#[command(name = "entrocam", version, about = "Grad-CAM saliency entropy and entropy-guided layer pruning")]
struct Cli {
    /// JSON file whose keys mirror the long flag names; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-image profiling.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on CIFAR-10 binary batches.
    Train(TrainArgs),
    /// Render the Grad-CAM map of one layer for one image.
    Saliency(SaliencyArgs),
    /// Per-layer entropy profile of a trained network over the test batch.
    Profile(ProfileArgs),
    /// Greedy entropy-guided removal of conv layers.
    Prune(PruneArgs),
    /// H(0), AME and optionally SDE of a PGM image.
    ImageEntropy(ImageEntropyArgs),
    /// Write a synthetic two-class dataset in CIFAR-10 binary format.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Directory with data_batch_*.bin and test_batch.bin.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Keep only these CIFAR classes, relabelled 0, 1, ... in the given order.
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<usize>>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TrainingArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 (default) or f64.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Output directory for weights, spec.json and train_log.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SaliencyArgs {
    /// Defaults to the spec.json stored with the weights.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// PGM or NPY input image.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    layer: Option<String>,
    /// Class index, or `auto` for the top prediction.
    #[arg(long)]
    class: Option<String>,
    /// plasma or gray.
    #[arg(long)]
    palette: Option<String>,
    #[arg(long)]
    scale: Option<usize>,
    /// `.ppm` for a colour heatmap, `.pgm` for the raw 8-bit map.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// truth, auto, or a class index.
    #[arg(long)]
    classes: Option<String>,
    /// Also compute the spatial disorder entropy.
    #[arg(long)]
    sde: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_removals: Option<usize>,
    #[arg(long)]
    protect: Option<usize>,
    #[arg(long)]
    flat_threshold: Option<f64>,
    /// Profile only the first N test images each round.
    #[arg(long)]
    profile_limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ImageEntropyArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    sde: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("run `entrocam --help` for usage");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(UsageError("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Saliency(a) => cmd_saliency(a, &cfg),
        Command::Profile(a) => cmd_profile(a, &cfg),
        Command::Prune(a) => cmd_prune(a, &cfg),
        Command::ImageEntropy(a) => cmd_image_entropy(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
    }
}

fn read_spec(path: &Path) -> anyhow::Result<NetworkSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    NetworkSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn spec_or_weights_dir(spec: Option<PathBuf>, weights: &Path) -> anyhow::Result<NetworkSpec> {
    match spec {
        Some(path) => read_spec(&path),
        None => load_spec_from_dir(weights).with_context(|| format!("reading spec.json from {}", weights.display())),
    }
}

fn train_config(t: TrainingArgs, cfg: &ConfigFile) -> anyhow::Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let precision = match cfg.pick(t.precision, "precision")?.as_deref() {
        None | Some("f32") => Precision::F32,
        Some("f64") => Precision::F64,
        Some(other) => bail!(UsageError(format!("--precision must be f32 or f64, got {other}"))),
    };
    let config = TrainConfig {
        learning_rate: cfg.pick(t.lr, "lr")?.unwrap_or(defaults.learning_rate),
        epochs: cfg.pick(t.epochs, "epochs")?.unwrap_or(defaults.epochs),
        batch_size: cfg.pick(t.batch, "batch")?.unwrap_or(defaults.batch_size),
        seed: cfg.pick(t.seed, "seed")?.unwrap_or(defaults.seed),
        precision,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(config)
}

struct Splits {
    train: Option<Dataset>,
    test: Dataset,
}

fn load_data(d: DataArgs, cfg: &ConfigFile, need_train: bool) -> anyhow::Result<Splits> {
    let dir: PathBuf = cfg.require(d.data, "data")?;
    let subset: Option<Vec<usize>> = cfg.pick(d.subset, "subset")?;
    let train_limit: Option<usize> = cfg.pick(d.train_limit, "train-limit")?;
    let test_limit: Option<usize> = cfg.pick(d.test_limit, "test-limit")?;
    let narrow = |ds: Dataset, limit: Option<usize>| -> anyhow::Result<Dataset> {
        let ds = match &subset {
            Some(classes) => ds.class_subset(classes, limit)?,
            None => match limit {
                Some(n) if n < ds.len() => ds.select(&(0..n).collect::<Vec<_>>())?,
                _ => ds,
            },
        };
        Ok(ds)
    };
    let train = if need_train {
        let files = train_files(&dir);
        if files.is_empty() {
            bail!("no data_batch_*.bin files in {}", dir.display());
        }
        Some(narrow(load_batches(&files)?, train_limit)?)
    } else {
        None
    };
    let test_path = dir.join(TEST_FILE);
    let bytes = std::fs::read(&test_path).with_context(|| format!("reading {}", test_path.display()))?;
    let test = narrow(read_cifar10_batch(&bytes)?, test_limit)?;
    Ok(Splits { train, test })
}

fn cmd_train(a: TrainArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let spec_path: PathBuf = cfg.require(a.spec, "spec")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let config = train_config(a.training, cfg)?;
    let spec = read_spec(&spec_path)?;
    let data = load_data(a.data, cfg, true)?;
    let train_set = data.train.expect("training split loaded");
    let outcome = train(&spec, &train_set, &data.test, &config)?;
    outcome.weights.save_dir(&spec, &out)?;
    std::fs::write(out.join("train_log.json"), serde_json::to_string_pretty(&outcome.log)? + "\n")?;
    if let Some(last) = outcome.log.last() {
        println!("epochs={} loss={:.6} test_accuracy={:.4}", last.epoch, last.train_loss, last.test_accuracy);
    }
    Ok(())
}

fn parse_class(text: &str) -> anyhow::Result<Option<usize>> {
    match text {
        "auto" => Ok(None),
        n => n
            .parse()
            .map(Some)
            .map_err(|_| UsageError(format!("--class must be `auto` or a class index, got {n}")).into()),
    }
}

/// Loads a PGM (replicated across input channels) or an NPY tensor.
fn load_image(path: &Path, spec: &NetworkSpec) -> anyhow::Result<Tensor<f32>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let [c, h, w] = spec.input_shape;
    let is_npy = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy"));
    let image = if is_npy {
        let t = read_npy(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        if t.shape() == [h, w] && c == 1 {
            t.reshape(vec![1, h, w])?
        } else {
            t
        }
    } else {
        let map = read_pgm(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        let plane: Vec<f32> = map.pixels().iter().map(|&p| p as f32 / 255.0).collect();
        let data = (0..c).flat_map(|_| plane.iter().copied()).collect();
        Tensor::new(vec![c, map.height(), map.width()], data)?
    };
    Ok(image)
}

fn cmd_saliency(a: SaliencyArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let weights_dir: PathBuf = cfg.require(a.weights, "weights")?;
    let image_path: PathBuf = cfg.require(a.image, "image")?;
    let layer: String = cfg.require(a.layer, "layer")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let class = parse_class(&cfg.pick(a.class, "class")?.unwrap_or_else(|| "auto".into()))?;
    let palette_name: String = cfg.pick(a.palette, "palette")?.unwrap_or_else(|| "plasma".into());
    let palette = HeatmapPalette::by_name(&palette_name)
        .ok_or_else(|| UsageError(format!("--palette must be plasma or gray, got {palette_name}")))?;
    let scale: usize = cfg.pick(a.scale, "scale")?.unwrap_or(1);
    if scale == 0 {
        bail!(UsageError("--scale must be at least 1".into()));
    }
    let spec_path: Option<PathBuf> = cfg.pick(a.spec, "spec")?;

    let spec = spec_or_weights_dir(spec_path, &weights_dir)?;
    let weights = Weights::load_dir(&spec, &weights_dir)?;
    let image = load_image(&image_path, &spec)?;
    let class = match class {
        Some(c) => c,
        None => {
            let (logits, _) = entrocam::nn::forward(&spec, &weights, &image)?;
            resolve_class(ClassPolicy::Predicted, None, &logits)
        }
    };
    let sal = gradcam(&spec, &weights, &image, class, &layer)?;
    let is_pgm = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm {
        write_pgm(&sal.map)
    } else {
        render_heatmap(&sal.map, &palette, scale)?
    };
    std::fs::write(&out, bytes).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "layer={} class={} size={}x{} raw_min={:.6} raw_max={:.6}",
        sal.layer_name,
        sal.class_index,
        sal.map.width(),
        sal.map.height(),
        sal.raw_min,
        sal.raw_max
    );
    Ok(())
}

fn parse_policy(text: &str) -> anyhow::Result<ClassPolicy> {
    match text {
        "truth" => Ok(ClassPolicy::GroundTruth),
        "auto" => Ok(ClassPolicy::Predicted),
        n => n
            .parse()
            .map(ClassPolicy::Fixed)
            .map_err(|_| UsageError(format!("--classes must be truth, auto or a class index, got {n}")).into()),
    }
}

fn cmd_profile(a: ProfileArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let weights_dir: PathBuf = cfg.require(a.weights, "weights")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let policy = parse_policy(&cfg.pick(a.classes, "classes")?.unwrap_or_else(|| "truth".into()))?;
    let sde = a.sde || cfg.pick(None, "sde")?.unwrap_or(false);
    let spec_path: Option<PathBuf> = cfg.pick(a.spec, "spec")?;

    let spec = spec_or_weights_dir(spec_path, &weights_dir)?;
    let weights = Weights::load_dir(&spec, &weights_dir)?;
    let data = load_data(a.data, cfg, false)?;
    let profile = dataset_profile(&spec, &weights, &data.test, policy, sde.then(SdeCap::default))?;
    std::fs::write(&out, write_profile_csv(&profile)).with_context(|| format!("writing {}", out.display()))?;
    for row in &profile.rows {
        println!("{:<12} h0={:.4} ame={:.4}", row.layer_name, row.mean_h0, row.mean_ame);
    }
    Ok(())
}

fn cmd_prune(a: PruneArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let spec_path: PathBuf = cfg.require(a.spec, "spec")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let defaults = PruneConfig::default();
    let config = PruneConfig {
        accuracy_tolerance: cfg.pick(a.tolerance, "tolerance")?.unwrap_or(defaults.accuracy_tolerance),
        max_removals: cfg.pick(a.max_removals, "max-removals")?.unwrap_or(defaults.max_removals),
        protected_prefix: cfg.pick(a.protect, "protect")?.unwrap_or(defaults.protected_prefix),
        flat_threshold: cfg.pick(a.flat_threshold, "flat-threshold")?.unwrap_or(defaults.flat_threshold),
        train: train_config(a.training, cfg)?,
        profile_limit: cfg.pick(a.profile_limit, "profile-limit")?,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let spec = read_spec(&spec_path)?;
    let data = load_data(a.data, cfg, true)?;
    let train_set = data.train.expect("training split loaded");
    let report = greedy_prune_with(&spec, &train_set, &data.test, &config, |it| {
        eprintln!(
            "round {}: removed {} accuracy {:.4} params {} -> {}{}",
            it.round,
            it.removed_layer,
            it.accuracy_after,
            it.params_before,
            it.params_after,
            if it.accepted { "" } else { " (rolled back)" }
        );
    })?;
    std::fs::write(&out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "baseline={:.4} final={:.4} params={}->{} stop={}",
        report.baseline_accuracy,
        report.final_accuracy,
        report.baseline_params,
        report.final_params,
        serde_json::to_value(report.stop_reason)?.as_str().unwrap_or_default()
    );
    Ok(())
}

fn cmd_image_entropy(a: ImageEntropyArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let path: PathBuf = cfg.require(a.image, "image")?;
    let sde = a.sde || cfg.pick(None, "sde")?.unwrap_or(false);
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let map = read_pgm(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    let mut line = format!("h0={:.6} ame={:.6}", univariate_entropy(&map), aura_matrix_entropy(&map)?);
    if sde {
        line.push_str(&format!(" sde={:.6}", spatial_disorder_entropy(&map, SdeCap::default())?));
    }
    println!("{line}");
    Ok(())
}

fn cmd_synth(a: SynthArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let out: PathBuf = cfg.require(a.out, "out")?;
    let train_count = cfg.pick(a.train, "train")?.unwrap_or(2000);
    let test_count = cfg.pick(a.test, "test")?.unwrap_or(400);
    let seed = cfg.pick(a.seed, "seed")?.unwrap_or(1);
    if train_count == 0 || test_count == 0 {
        bail!(UsageError("--train and --test must be positive".into()));
    }
    synth::write_synth_dir(&out, train_count, test_count, seed)?;
    Ok(())
}
