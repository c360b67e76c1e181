//! `visattn` command-line interface: gaze preprocessing, teacher and
//! student training, evaluation, and batch prediction.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use visattn::checkpoint;
use visattn::config::{load_config, RunConfig};
use visattn::data::{load_gaze, load_manifest, Dataset, Manifest};
use visattn::gaze::{accumulate, gaussian_filter, hva_pipeline, quantize, HvaConfig};
use visattn::metrics::{accuracy, auc, f1, precision, recall, Averaging, EvalRecord};
use visattn::rng::Rng;
use visattn::system::StudentTeacher;
use visattn::train::{train, Stage, TrainOptions};

#[derive(Parser)]
#[command(
    name = "visattn",
    version,
    about = "Gaze-guided global-focal transformer: preprocessing, training, inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert raw gaze CSV into per-image attention-region CSV.
    PreprocessGaze(PreprocessGazeArgs),
    /// Pre-train the teacher on images, labels, and gaze attention regions.
    TrainTeacher(TrainArgs),
    /// Train the student against a pre-trained teacher checkpoint.
    TrainStudent(TrainStudentArgs),
    /// Compute classification metrics from a checkpoint or stored predictions.
    Evaluate(EvaluateArgs),
    /// Emit per-image class probabilities and attention regions as JSON lines.
    Predict(PredictArgs),
}

#[derive(Args)]
struct PreprocessGazeArgs {
    /// Gaze CSV with header image_id,x,y[,timestamp].
    #[arg(long)]
    gaze: PathBuf,
    /// Output CSV of per-image regions.
    #[arg(long)]
    out: PathBuf,
    /// Optional config supplying image_size and the pipeline parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image width in pixels (overrides config image_size).
    #[arg(long)]
    width: Option<usize>,
    /// Image height in pixels (overrides config image_size).
    #[arg(long)]
    height: Option<usize>,
    /// Directory for optional quantized heatmap PNGs.
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Manifest CSV with header image_path,label[,cx,cy,h,w][,split].
    #[arg(long)]
    manifest: PathBuf,
    /// Root directory for relative image paths.
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch JSON-lines training log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainStudentArgs {
    #[command(flatten)]
    common: TrainArgs,
    /// Pre-trained teacher checkpoint (required).
    #[arg(long)]
    teacher_checkpoint: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Manifest CSV providing the true labels.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Trained system checkpoint to run.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Stored predictions JSONL (one {"image_path", "probs"} per line)
    /// instead of running a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Metrics JSON output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Predictions JSONL output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PreprocessGaze(args) => preprocess_gaze(args),
        Command::TrainTeacher(args) => train_teacher(args),
        Command::TrainStudent(args) => train_student(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Predict(args) => predict(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn preprocess_gaze(args: PreprocessGazeArgs) -> Result<()> {
    let (mut size, hva_cfg) = match &args.config {
        Some(path) => {
            let cfg = load_config(path)?;
            (cfg.image_size, cfg.hva)
        }
        None => (256, HvaConfig::default()),
    };
    if let Some(w) = args.width {
        size = w;
    }
    let width = size;
    let height = args.height.unwrap_or(width);

    let groups = load_gaze(&args.gaze)?;
    if groups.is_empty() {
        bail!("{} contains no gaze samples", args.gaze.display());
    }
    if let Some(dir) = &args.heatmap_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut writer = csv::Writer::from_path(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    writer.write_record(["image_id", "cx", "cy", "h", "w"])?;
    for (image_id, points) in &groups {
        let region = hva_pipeline(points, height, width, &hva_cfg)
            .with_context(|| format!("image {image_id}"))?;
        writer.write_record([
            image_id.clone(),
            format!("{:.6}", region.cx),
            format!("{:.6}", region.cy),
            format!("{:.6}", region.h),
            format!("{:.6}", region.w),
        ])?;
        if let Some(dir) = &args.heatmap_dir {
            let counts = accumulate(points, height, width)?;
            let blurred = gaussian_filter(&counts, hva_cfg.sigma)?;
            let q = quantize(&blurred);
            let img = image::GrayImage::from_raw(width as u32, height as u32, q.values)
                .expect("heatmap buffer matches dimensions");
            img.save(dir.join(format!("{image_id}.png")))
                .with_context(|| format!("writing heatmap for {image_id}"))?;
        }
    }
    writer.flush()?;
    eprintln!("wrote {} regions to {}", groups.len(), args.out.display());
    Ok(())
}

/// Decode the manifest into train/validation datasets. Falls back to
/// validating on the training rows when the split leaves validation empty.
fn load_datasets(
    manifest: &Manifest,
    image_root: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(Dataset, Dataset)> {
    let (train_rows, val_rows) = manifest.split();
    if train_rows.is_empty() {
        bail!("manifest has no training rows after the split");
    }
    let train_set = Dataset::load(&train_rows, image_root, cfg.image_size, cfg.in_channels)?;
    let val_set = if val_rows.is_empty() {
        eprintln!("warning: no validation rows; validating on the training set");
        train_set.clone()
    } else {
        Dataset::load(&val_rows, image_root, cfg.image_size, cfg.in_channels)?
    };
    Ok((train_set, val_set))
}

fn build_system(cfg: &RunConfig) -> Result<StudentTeacher<f32>> {
    let sys_cfg = cfg.system_config();
    Ok(StudentTeacher::new(sys_cfg, &mut Rng::new(cfg.seed))?)
}

fn check_class_count(cfg: &RunConfig, manifest: &Manifest) -> Result<()> {
    if manifest.n_classes() > cfg.n_classes {
        bail!(
            "manifest has {} classes but the configuration allows {}",
            manifest.n_classes(),
            cfg.n_classes
        );
    }
    Ok(())
}

fn run_training(args: &TrainArgs, stage: Stage, system: &mut StudentTeacher<f32>, cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    check_class_count(cfg, &manifest)?;
    if stage == Stage::Teacher && manifest.rows.iter().any(|r| r.region.is_none()) {
        bail!("teacher training needs cx,cy,h,w attention-region columns on every manifest row");
    }
    let (train_set, val_set) = load_datasets(&manifest, args.image_root.as_deref(), cfg)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        patience: cfg.early_stop_patience,
        schedule: cfg.lr,
        seed: cfg.seed,
    };
    let mut log_file = match &args.log {
        Some(path) => Some(
            std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?,
        ),
        None => None,
    };
    let log: Option<&mut dyn Write> = log_file.as_mut().map(|f| f as &mut dyn Write);
    let summary = train(system, stage, &train_set, &val_set, &opts, log)?;
    eprintln!(
        "finished after {} epochs; best validation loss {:.6} at epoch {}",
        summary.epochs_run, summary.best_val_loss, summary.best_epoch
    );
    Ok(())
}

fn train_teacher(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut system = build_system(&cfg)?;
    run_training(&args, Stage::Teacher, &mut system, &cfg)?;
    checkpoint::save_system(&args.out, &mut system, &cfg, "teacher", None)?;
    eprintln!("saved teacher checkpoint to {}", args.out.display());
    Ok(())
}

fn train_student(args: TrainStudentArgs) -> Result<()> {
    let cfg = load_config(&args.common.config)?;
    let mut system = build_system(&cfg)?;
    let teacher = checkpoint::load(&args.teacher_checkpoint)
        .with_context(|| format!("loading teacher checkpoint {}", args.teacher_checkpoint.display()))?;
    checkpoint::apply_to_system(&teacher, &mut system, "teacher", None)
        .context("teacher checkpoint does not match the configured architecture")?;
    run_training(&args.common, Stage::Student, &mut system, &cfg)?;
    checkpoint::save_system(&args.common.out, &mut system, &cfg, "system", None)?;
    eprintln!("saved system checkpoint to {}", args.common.out.display());
    Ok(())
}

/// Load a full-system checkpoint and rebuild the model it describes.
fn restore_system(path: &Path) -> Result<(StudentTeacher<f32>, RunConfig)> {
    let ckpt = checkpoint::load(path)?;
    if ckpt.meta.kind != "system" {
        bail!(
            "{} is a {:?} checkpoint; a full system checkpoint is required",
            path.display(),
            ckpt.meta.kind
        );
    }
    let cfg = ckpt.meta.config.clone();
    let mut system = build_system(&cfg)?;
    checkpoint::apply_to_system(&ckpt, &mut system, "system", None)?;
    Ok((system, cfg))
}

/// Run the model over every manifest row, in manifest order.
fn predict_rows(
    system: &mut StudentTeacher<f32>,
    cfg: &RunConfig,
    manifest: &Manifest,
    image_root: Option<&Path>,
) -> Result<Vec<serde_json::Value>> {
    let rows: Vec<_> = manifest.rows.iter().collect();
    let ds = Dataset::load(&rows, image_root, cfg.image_size, cfg.in_channels)?;
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in indices.chunks(cfg.batch_size.max(1)) {
        let batch = ds.gather_batch(chunk);
        let (probs, regions) = system.predict(&batch.raw_tensor())?;
        let n = probs.shape()[1];
        for (j, &i) in chunk.iter().enumerate() {
            let p: Vec<f64> = probs.data()[j * n..(j + 1) * n].iter().map(|&v| v as f64).collect();
            let predicted = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            out.push(serde_json::json!({
                "image_path": ds.paths[i],
                "true_label": ds.labels[i],
                "probs": p,
                "predicted": predicted,
                "region": regions[j],
            }));
        }
    }
    Ok(out)
}

fn write_output(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, contents)
            .with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{contents}");
            Ok(())
        }
    }
}

fn predict(args: PredictArgs) -> Result<()> {
    let (mut system, cfg) = restore_system(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    check_class_count(&cfg, &manifest)?;
    let rows = predict_rows(&mut system, &cfg, &manifest, args.image_root.as_deref())?;
    let body: String = rows.iter().map(|r| format!("{r}\n")).collect();
    write_output(args.out.as_deref(), body.trim_end())?;
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let n_classes = manifest.n_classes();
    let records: Vec<EvalRecord> = if let Some(pred_path) = &args.predictions {
        stored_prediction_records(pred_path, &manifest)?
    } else {
        let ckpt = args.checkpoint.as_deref().expect("clap enforces checkpoint XOR predictions");
        let (mut system, cfg) = restore_system(ckpt)?;
        check_class_count(&cfg, &manifest)?;
        predict_rows(&mut system, &cfg, &manifest, args.image_root.as_deref())?
            .into_iter()
            .map(|v| EvalRecord {
                true_label: v["true_label"].as_u64().unwrap() as usize,
                probs: v["probs"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| p.as_f64().unwrap())
                    .collect(),
            })
            .collect()
    };
    for r in &records {
        if r.probs.len() < n_classes {
            bail!(
                "prediction rows carry {} probabilities but the manifest has {n_classes} classes",
                r.probs.len()
            );
        }
    }

    let f1_none = f1(&records, Averaging::None)?;
    let report = serde_json::json!({
        "accuracy": accuracy(&records)?,
        "auc": auc(&records)?.value,
        "f1_per_class": f1_none.per_class,
        "f1_macro": f1(&records, Averaging::Macro)?.value,
        "f1_micro": f1(&records, Averaging::Micro)?.value,
        "precision": precision(&records, Averaging::Macro)?.value,
        "recall": recall(&records, Averaging::Macro)?.value,
    });
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

/// Join stored predictions with manifest labels by image path.
fn stored_prediction_records(path: &Path, manifest: &Manifest) -> Result<Vec<EvalRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut by_path: HashMap<String, Vec<f64>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        let image_path = v["image_path"]
            .as_str()
            .with_context(|| format!("{} line {} is missing image_path", path.display(), i + 1))?
            .to_string();
        let probs = v["probs"]
            .as_array()
            .with_context(|| format!("{} line {} is missing probs", path.display(), i + 1))?
            .iter()
            .map(|p| p.as_f64().context("non-numeric probability"))
            .collect::<Result<Vec<f64>>>()?;
        by_path.insert(image_path, probs);
    }
    manifest
        .rows
        .iter()
        .map(|row| {
            let probs = by_path.get(&row.image_path).cloned().with_context(|| {
                format!("no stored prediction for {}", row.image_path)
            })?;
            Ok(EvalRecord { true_label: row.label, probs })
        })
        .collect()
}
