//! Argument parsing and command dispatch for the `dva` binary.
//!
//! Five subcommands: `train`, `predict`, `eval`, `gradcheck` and `synth`.
//! Errors map onto exit codes by kind: bad configuration or arguments exit 2,
//! unusable files or data exit 3, numerical failures (including a failed
//! gradient check) exit 4. Everything a command writes is deterministic for a
//! fixed seed except the run log under `logs/`, which is the only place
//! timestamps appear.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{
    load_manifest, prepare_image, resize_tensor, synth_dataset, write_saliency, DataConfig,
    SaliencyDepth, Split, SynthConfig,
};
use crate::gradcheck::{self, check_all};
use crate::metrics::{
    evaluate_dataset, format_sig6, write_scores_csv, EvalOptions, ImageScores, Metric,
    DEFAULT_AUC_SPLITS, DEFAULT_EMD_RES,
};
use crate::network::{build, forward, NetworkGrads, NetworkState};
use crate::train::{items_for_split, train, TrainSinks};
use crate::weights::{load_checkpoint, load_weights, save_weights};
use crate::{Error, Result};

/// Saliency prediction and fixation evaluation.
#[derive(Debug, Parser)]
#[command(name = "dva", version, about = "Saliency prediction and fixation evaluation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and score it on the validation split.
    Train(TrainCmd),
    /// Predict saliency maps for an image or a directory of images.
    Predict(PredictCmd),
    /// Score predicted maps against a manifest's fixations.
    Eval(EvalCmd),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckCmd),
    /// Generate a deterministic synthetic blob dataset.
    Synth(SynthCmd),
}

/// Parses `std::env::args`, runs the selected command and reports its exit
/// status. The binary's `main` is just this.
pub fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Exit code for an error: 2 for configuration and argument problems, 3 for
/// unusable files or data, 4 for numerical failures.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::Shape(_) | Error::Metric(_) => 2,
        Error::Io { .. }
        | Error::BadImage { .. }
        | Error::WeightFormat { .. }
        | Error::WeightShape { .. }
        | Error::Data(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(cmd) => run_train(cmd),
        Command::Predict(cmd) => run_predict(cmd),
        Command::Eval(cmd) => run_eval(cmd),
        Command::Gradcheck(cmd) => run_gradcheck(cmd),
        Command::Synth(cmd) => run_synth(cmd),
    }
}

#[derive(Debug, Args)]
struct TrainCmd {
    /// Run configuration file of `key = value` lines; defaults apply without
    /// one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue a run from its checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Load encoder weights from a weight file before training.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Cap gradient workers, overriding `train.threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// Config overrides as `key=value`, applied after the file in order.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Appends timestamped lines to the run log. Nothing else in a run directory
/// carries wall-clock time, so reruns stay byte-comparable outside `logs/`.
struct RunLog {
    file: std::fs::File,
    path: PathBuf,
}

impl RunLog {
    fn open(path: &Path) -> Result<RunLog> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RunLog {
            file,
            path: path.to_path_buf(),
        })
    }

    fn line(&mut self, msg: &str) -> Result<()> {
        let t = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or(Duration::ZERO);
        writeln!(self.file, "[{}.{:03}] {msg}", t.as_secs(), t.subsec_millis())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn absolutize(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mean_of(scores: &[ImageScores], metric: Metric) -> Option<f64> {
    let vals: Vec<f64> = scores.iter().filter_map(|s| s.report.get(metric)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn run_train(cmd: TrainCmd) -> Result<()> {
    if cmd.resume.is_some() && cmd.pretrained.is_some() {
        return Err(Error::Config(
            "--resume already carries weights; drop --pretrained".into(),
        ));
    }
    let mut cfg = match &cmd.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cmd.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(t) = cmd.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        cfg.train.threads = t;
    }
    cfg.validate()?;
    let manifest_path = cfg.manifest.clone().ok_or_else(|| {
        Error::Config(
            "training needs a dataset; set data.manifest in the config or pass \
             data.manifest=PATH"
                .into(),
        )
    })?;
    cfg.manifest = Some(absolutize(&manifest_path)?);
    cfg.out_dir = absolutize(&cfg.out_dir)?;

    let out = cfg.out_dir.clone();
    let weights_dir = out.join("weights");
    let maps_dir = out.join("maps");
    let logs_dir = out.join("logs");
    for dir in [&out, &weights_dir, &maps_dir, &logs_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.as_path(), e))?;
    }
    write_text(&out.join("resolved.config"), &cfg.serialize())?;

    let mut log = RunLog::open(&logs_dir.join("train.log"))?;
    log.line(&format!("run starts in {}", out.display()))?;

    let records = load_manifest(cfg.manifest.as_ref().expect("set above"))?;
    let data_cfg = cfg.data_config();
    let items = items_for_split(&records, Split::Train, &data_cfg)?;
    let val_items = items_for_split(&records, Split::Val, &data_cfg)?;
    log.line(&format!(
        "dataset: {} train items, {} val items",
        items.len(),
        val_items.len()
    ))?;

    let spec = cfg.network_spec()?;
    let train_cfg = cfg.train_config();
    let (mut state, mut velocity, start_iter) = match &cmd.resume {
        Some(path) => {
            let (state, velocity, iter) = load_checkpoint(&spec, path)?;
            log.line(&format!(
                "resumed from {} after iteration {iter}",
                path.display()
            ))?;
            (state, velocity, iter as usize)
        }
        None => {
            let state = build(&spec, cfg.seed, cmd.pretrained.as_deref())?;
            let velocity = NetworkGrads::zeros_like(&state);
            (state, velocity, 0)
        }
    };
    if start_iter > train_cfg.iterations {
        return Err(Error::Config(format!(
            "checkpoint is at iteration {start_iter} but train.iterations is {}",
            train_cfg.iterations
        )))?;
    }

    let sinks = TrainSinks {
        loss_csv: Some(out.join("loss.csv")),
        checkpoint: Some(weights_dir.join("checkpoint.dvaw")),
    };
    let iter_logs = train(
        &mut state,
        &mut velocity,
        start_iter,
        &items,
        &val_items,
        &train_cfg,
        &sinks,
    )?;
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".into(), format_sig6);
    for l in &iter_logs {
        if let Some((nss, cc)) = l.val {
            log.line(&format!(
                "iter {}: combined {} val_nss {} val_cc {}",
                l.iter,
                format_sig6(l.loss.combined),
                fmt_opt(nss),
                fmt_opt(cc)
            ))?;
        }
    }
    let final_weights = weights_dir.join("final.dvaw");
    save_weights(&state, &final_weights)?;
    match (iter_logs.first(), iter_logs.last()) {
        (Some(first), Some(last)) => println!(
            "trained iterations {}..={}; combined loss {} -> {}",
            first.iter,
            last.iter,
            format_sig6(first.loss.combined),
            format_sig6(last.loss.combined)
        ),
        _ => println!("checkpoint already at iteration {start_iter}; nothing to train"),
    }
    println!("weights {}", final_weights.display());

    // Score the validation split at original resolution with the full suite.
    let val_records: Vec<_> = records
        .iter()
        .filter(|r| r.split == Split::Val)
        .cloned()
        .collect();
    if val_records.is_empty() {
        log.line("no val records; skipping maps/ and metrics.csv")?;
        println!("no val records; skipped maps/ and metrics.csv");
        return Ok(());
    }
    for record in &val_records {
        predict_one(&state, &record.image, &data_cfg, &maps_dir, false)?;
    }
    let opts = EvalOptions {
        seed: cfg.seed,
        ..EvalOptions::default()
    };
    let scores = evaluate_dataset(&val_records, &maps_dir, &opts)?;
    let metrics_csv = out.join("metrics.csv");
    write_scores_csv(&scores, &Metric::ALL, &metrics_csv)?;
    for metric in Metric::ALL {
        if let Some(mean) = mean_of(&scores, metric) {
            println!("val {} {}", metric.name(), format_sig6(mean));
        }
    }
    println!("scores {}", metrics_csv.display());
    log.line("run complete")?;
    Ok(())
}

#[derive(Debug, Args)]
struct PredictCmd {
    /// Weight file produced by `train`.
    weights: PathBuf,
    /// Image file or directory of images.
    input: PathBuf,
    /// Output directory for `<stem>_sal.png` maps.
    out_dir: PathBuf,
    /// Run configuration describing the weights; `net.*` and `data.*` keys
    /// matter here.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write per-branch maps as `<stem>_branch<i>.png`.
    #[arg(long)]
    emit_branches: bool,
    /// Config overrides as `key=value`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

const IMAGE_EXTS: [&str; 7] = ["png", "jpg", "jpeg", "bmp", "pgm", "ppm", "pnm"];

fn collect_images(input: &Path) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(input).map_err(|e| Error::io(input, e))?;
    if meta.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(input, e))?.path();
        let is_image = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()));
        if is_image {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no images ({}) in {}",
            IMAGE_EXTS.join("/"),
            input.display()
        )));
    }
    Ok(files)
}

/// Runs one image through the network and writes the fused map, resized back
/// to the image's original resolution, as `<stem>_sal.png`.
fn predict_one(
    state: &NetworkState,
    image: &Path,
    data_cfg: &DataConfig,
    out_dir: &Path,
    emit_branches: bool,
) -> Result<PathBuf> {
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| {
            Error::Config(format!(
                "cannot derive an output name from {}",
                image.display()
            ))
        })?
        .to_owned();
    let (tensor, (orig_h, orig_w)) = prepare_image(image, data_cfg)?;
    let trace = forward(state, &tensor)?;
    let fused = resize_tensor(&trace.fused_map.map_unary(|v| v.clamp(0.0, 1.0)), orig_h, orig_w)?;
    let out = out_dir.join(format!("{stem}_sal.png"));
    write_saliency(&fused, &out, SaliencyDepth::Sixteen)?;
    if emit_branches {
        for (i, map) in trace.branch_maps.iter().enumerate() {
            let up = resize_tensor(&map.map_unary(|v| v.clamp(0.0, 1.0)), orig_h, orig_w)?;
            let path = out_dir.join(format!("{stem}_branch{}.png", i + 1));
            write_saliency(&up, &path, SaliencyDepth::Sixteen)?;
        }
    }
    Ok(out)
}

fn run_predict(cmd: PredictCmd) -> Result<()> {
    let mut cfg = match &cmd.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cmd.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    let spec = cfg.network_spec()?;
    let state = load_weights(&spec, &cmd.weights)?;
    let data_cfg = cfg.data_config();
    let inputs = collect_images(&cmd.input)?;
    std::fs::create_dir_all(&cmd.out_dir).map_err(|e| Error::io(cmd.out_dir.as_path(), e))?;
    for image in &inputs {
        let out = predict_one(&state, image, &data_cfg, &cmd.out_dir, cmd.emit_branches)?;
        println!("{}", out.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
struct EvalCmd {
    /// Directory holding `<stem>_sal.png` predictions.
    pred_dir: PathBuf,
    /// Dataset manifest naming images and fixations.
    manifest: PathBuf,
    /// Comma-separated metric subset; the CSV gets exactly these columns.
    /// Default: all seven.
    #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
    metrics: Vec<Metric>,
    /// Restrict scoring to one manifest split.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    /// Patch grid resolution cap for the earth mover's distance.
    #[arg(long, default_value_t = DEFAULT_EMD_RES)]
    emd_res: usize,
    /// Random split count for AUC-Borji and shuffled AUC.
    #[arg(long, default_value_t = DEFAULT_AUC_SPLITS)]
    sauc_splits: usize,
    /// Seed for the sampled metrics.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Where to write the per-image CSV.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    s.parse::<Metric>().map_err(|e| e.to_string())
}

fn run_eval(cmd: EvalCmd) -> Result<()> {
    if cmd.emd_res == 0 {
        return Err(Error::Config("--emd-res must be positive".into()));
    }
    if cmd.sauc_splits == 0 {
        return Err(Error::Config("--sauc-splits must be positive".into()));
    }
    let mut records = load_manifest(&cmd.manifest)?;
    if let Some(split) = match cmd.split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    } {
        records.retain(|r| r.split == split);
        if records.is_empty() {
            return Err(Error::Data(format!(
                "manifest {} has no records in the requested split",
                cmd.manifest.display()
            )));
        }
    }
    // Dedup while keeping the order the columns were asked for in.
    let mut metrics: Vec<Metric> = Vec::new();
    for m in &cmd.metrics {
        if !metrics.contains(m) {
            metrics.push(*m);
        }
    }
    if metrics.is_empty() {
        metrics = Metric::ALL.to_vec();
    }
    let opts = EvalOptions {
        metrics: metrics.clone(),
        auc_splits: cmd.sauc_splits,
        emd_res: cmd.emd_res,
        seed: cmd.seed,
    };
    let scores = evaluate_dataset(&records, &cmd.pred_dir, &opts)?;
    write_scores_csv(&scores, &metrics, &cmd.out)?;
    println!("scored {} images", scores.len());
    for metric in &metrics {
        if let Some(mean) = mean_of(&scores, *metric) {
            println!("mean {} {}", metric.name(), format_sig6(mean));
        }
    }
    println!("csv {}", cmd.out.display());
    Ok(())
}

#[derive(Debug, Args)]
struct GradcheckCmd {
    /// Seed for the audited shapes and data.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Scale one component's analytic gradient by a factor
    /// (`component:factor`); the audit must then fail. Exists to prove the
    /// harness can fail.
    #[arg(long, hide = true, value_name = "COMPONENT:FACTOR")]
    perturb: Option<String>,
}

fn run_gradcheck(cmd: GradcheckCmd) -> Result<()> {
    let perturb = match &cmd.perturb {
        Some(raw) => {
            let (name, factor) = raw.split_once(':').ok_or_else(|| {
                Error::Config(format!("--perturb wants COMPONENT:FACTOR, got {raw:?}"))
            })?;
            if !gradcheck::COMPONENTS.contains(&name) {
                return Err(Error::Config(format!(
                    "unknown component {name:?}; expected one of {}",
                    gradcheck::COMPONENTS.join(", ")
                )));
            }
            let factor: f64 = factor
                .parse()
                .map_err(|_| Error::Config(format!("bad perturb factor {factor:?}")))?;
            Some((name, factor))
        }
        None => None,
    };
    let reports = check_all(cmd.seed, perturb)?;
    let mut failing = Vec::new();
    for report in &reports {
        let verdict = if report.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<8} max rel err {:>12.6e}  {verdict}",
            report.name, report.max_err
        );
        if !report.passed() {
            failing.push(format!("{} ({:.3e})", report.name, report.max_err));
        }
    }
    if !failing.is_empty() {
        return Err(Error::Numeric(format!(
            "gradient check failed: {}",
            failing.join(", ")
        )));
    }
    println!(
        "all {} components pass (threshold {:e})",
        reports.len(),
        gradcheck::THRESHOLD
    );
    Ok(())
}

#[derive(Debug, Args)]
struct SynthCmd {
    /// Directory to create the dataset in.
    out_dir: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Image size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_dims)]
    dims: (usize, usize),
    /// Gaussian blobs per image.
    #[arg(long, default_value_t = 3)]
    blobs: usize,
    /// Fraction of images assigned to the val split.
    #[arg(long, default_value_t = 0.25)]
    val_fraction: f64,
    /// Generator seed; same seed, same bytes.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad dimension {v:?} in {s:?}"))
    };
    Ok((parse(h)?, parse(w)?))
}

fn run_synth(cmd: SynthCmd) -> Result<()> {
    if !(0.0..=1.0).contains(&cmd.val_fraction) {
        return Err(Error::Config(format!(
            "--val-fraction must be in [0, 1], got {}",
            cmd.val_fraction
        )));
    }
    let cfg = SynthConfig {
        count: cmd.count,
        dims: cmd.dims,
        blobs_per_image: cmd.blobs,
        val_fraction: cmd.val_fraction,
        seed: cmd.seed,
    };
    let manifest = synth_dataset(&cmd.out_dir, &cfg)?;
    println!("{}", manifest.display());
    Ok(())
}
