use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use upseg_core::checkpoint::{load_checkpoint, save_checkpoint};
use upseg_core::complexity::{profile, upscale_overhead, ComplexityReport};
use upseg_core::data::DatasetSpec;
use upseg_core::graph::{build_unet, build_upscale_stack, UpscaleStackConfig};
use upseg_core::loss::LossConfig;
use upseg_core::metrics::{Evaluation, MetricsReport};
use upseg_core::resample::power_of_two_ratio;
use upseg_core::train::{evaluate_model, train, EpochLog, TrainReport};
use upseg_core::{Dataset64, Error, Model64};

use crate::config::{ConfigError, DataSource, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.utsr";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const PROFILE_FILE: &str = "profile.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const DATASET_FILE: &str = "dataset.utsr";
pub const SWEEP_HEADER: &str = "resolution,gmacs,params,mean_dice,mean_jaccard,variant";

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(Error),
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 config, 3 divergence, 4 artifact mismatch, 5 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Usage(_) | Error::Shape(_) | Error::Domain(_) => 2,
                Error::NonFinite(_) => 3,
                Error::Mismatch(_) => 4,
                Error::Format { .. } | Error::Io { .. } => 5,
            },
            CliError::Io { .. } => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Core(Error::NonFinite(what)) => write!(f, "diverged: non-finite value in {what}"),
            CliError::Core(e) => e.fmt(f),
            CliError::Io { path, source } => write!(f, "cannot write {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Applies a `--seed` override to both weight init and batch shuffling.
pub fn apply_seed(cfg: &mut RunConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.model_seed = s;
    }
}

pub fn load_data(cfg: &RunConfig) -> CliResult<Dataset64> {
    let data = match &cfg.data {
        DataSource::Synthetic(spec) => Dataset64::generate(spec)?,
        DataSource::File(path) => Dataset64::load(path)?,
    };
    if data.num_classes != cfg.backbone.num_classes {
        return Err(Error::Config(format!(
            "data has {} classes but model.num_classes = {}",
            data.num_classes, cfg.backbone.num_classes
        ))
        .into());
    }
    Ok(data)
}

pub fn build_model(cfg: &RunConfig) -> CliResult<Model64> {
    let base = build_unet(&cfg.backbone, cfg.model_seed)?;
    Ok(build_upscale_stack(&base, &cfg.stack, cfg.model_seed.wrapping_add(1))?)
}

pub fn train_log_csv(history: &[EpochLog]) -> String {
    let mut s = String::from(EpochLog::CSV_HEADER);
    s.push('\n');
    for e in history {
        s.push_str(&e.to_csv_row());
        s.push('\n');
    }
    s
}

pub struct TrainOutcome {
    pub report: TrainReport<f64>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

fn train_config(cfg: &RunConfig, data: &Dataset64, progress: &mut dyn Write) -> CliResult<TrainReport<f64>> {
    let (tr, va) = data.split(cfg.train_fraction)?;
    let model = build_model(cfg)?;
    let report = train(model, &tr, &va, &cfg.loss, &cfg.train, |e| {
        let _ = writeln!(
            progress,
            "epoch {:>3}  loss {:.5}  val dice {:.4}  val jaccard {:.4}",
            e.epoch, e.train_loss, e.val_dice, e.val_jaccard
        );
    })?;
    Ok(report)
}

/// Trains, then writes the best checkpoint and the per-epoch log into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, progress: &mut dyn Write) -> CliResult<TrainOutcome> {
    let data = load_data(cfg)?;
    let report = train_config(cfg, &data, progress)?;
    ensure_dir(out)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let log = out.join(TRAIN_LOG_FILE);
    save_checkpoint(&report.model, &checkpoint)?;
    write_file(&log, &train_log_csv(&report.history))?;
    Ok(TrainOutcome {
        report,
        checkpoint,
        log,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Val,
    All,
}

impl std::str::FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            "all" => Ok(EvalSplit::All),
            other => Err(format!("unknown split {other:?} (train, val, all)")),
        }
    }
}

pub fn eval_csv(ev: &Evaluation, num_classes: usize) -> String {
    let macro_row = MetricsReport {
        dice: ev.macro_dice.clone(),
        jaccard: ev.macro_jaccard.clone(),
        mean_dice: ev.macro_mean_dice,
        mean_jaccard: ev.macro_mean_jaccard,
        counts: ev.pooled.counts.clone(),
    };
    format!(
        "scope,images,{}\nmacro,{},{}\npooled,{},{}\n",
        MetricsReport::csv_header(num_classes),
        ev.images,
        macro_row.to_csv_row(),
        ev.images,
        ev.pooled.to_csv_row()
    )
}

/// Scores a stored checkpoint on one split of the configured data, with
/// predictions stretched to ground-truth resolution.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: EvalSplit, report: &Path) -> CliResult<Evaluation> {
    let mut model = build_model(cfg)?;
    load_checkpoint(&mut model, checkpoint).map_err(|e| match e {
        Error::Format { .. } | Error::Io { .. } => e,
        other => Error::Mismatch(other.to_string()),
    })?;
    let data = load_data(cfg)?;
    let data = match split {
        EvalSplit::All => data,
        EvalSplit::Train => data.split(cfg.train_fraction)?.0,
        EvalSplit::Val => data.split(cfg.train_fraction)?.1,
    };
    let ev = evaluate_model(&model, &data, cfg.train.batch_size)?;
    write_file(report, &eval_csv(&ev, ev.pooled.dice.len()))?;
    Ok(ev)
}

fn input_res(cfg: &RunConfig) -> CliResult<usize> {
    match &cfg.data {
        DataSource::Synthetic(spec) => Ok(spec.input_res),
        DataSource::File(_) => Ok(load_data(cfg)?.input_res()),
    }
}

pub struct ProfileOutcome {
    pub report: ComplexityReport,
    pub baseline: ComplexityReport,
}

/// Per-layer cost of the configured model, plus the stack's overhead over
/// the bare backbone when the model has up-scaling stages.
pub fn cmd_profile(cfg: &RunConfig, out: &Path, stdout: &mut dyn Write) -> CliResult<ProfileOutcome> {
    let res = input_res(cfg)?;
    let model = build_model(cfg)?;
    let report = profile(&model, (res, res))?;
    let base = build_unet::<f64>(&cfg.backbone, cfg.model_seed)?;
    let baseline = profile(&base, (res, res))?;
    write_file(&out.join(PROFILE_FILE), &report.to_csv())?;
    let _ = write!(stdout, "{}", report.to_table());
    if model.num_stages() > 0 {
        let o = upscale_overhead(&baseline, &report)?;
        let _ = writeln!(
            stdout,
            "up-scale overhead: +{} params ({:+.3}%), +{} MACs ({:+.3}%), +{} activation bytes ({:+.3}%)",
            o.params,
            100.0 * o.relative_params,
            o.macs,
            100.0 * o.relative_macs,
            o.activation_bytes,
            100.0 * o.relative_activation_bytes
        );
    }
    Ok(ProfileOutcome { report, baseline })
}

/// Writes the configured synthetic dataset to `out/dataset.utsr`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    let DataSource::Synthetic(_) = &cfg.data else {
        return Err(Error::Config("generate needs a synthetic data section, not data.path".into()).into());
    };
    let data = load_data(cfg)?;
    ensure_dir(out)?;
    let path = out.join(DATASET_FILE);
    data.save(&path)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Plain backbone trained on ground truth brought down to input size.
    Baseline,
    /// Backbone plus up-scaling stack trained on full-size ground truth.
    Extended,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Extended => "extended",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub resolution: usize,
    pub gmacs: f64,
    pub params: u64,
    pub mean_dice: f64,
    pub mean_jaccard: f64,
    pub variant: Variant,
}

impl SweepRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.6},{},{:.6},{:.6},{}",
            self.resolution,
            self.gmacs,
            self.params,
            self.mean_dice,
            self.mean_jaccard,
            self.variant.name()
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

/// The run configuration for one sweep cell.
pub fn sweep_run_config(cfg: &RunConfig, resolution: usize, variant: Variant) -> CliResult<RunConfig> {
    let DataSource::Synthetic(spec) = &cfg.data else {
        return Err(Error::Config("sweep regenerates data per resolution and needs a synthetic data section".into()).into());
    };
    let spec = DatasetSpec {
        input_res: resolution,
        ..spec.clone()
    };
    spec.validate()?;
    let m = match variant {
        Variant::Baseline => 0,
        Variant::Extended => power_of_two_ratio(spec.gt_res, resolution)? as usize,
    };
    let mut stack = UpscaleStackConfig::new(m, cfg.backbone.num_classes);
    stack.use_skips = cfg.stack.use_skips;
    stack.skip_exempt_stages = cfg.stack.skip_exempt_stages.clone();
    stack.stage_relu = cfg.stack.stage_relu;
    Ok(RunConfig {
        stack,
        loss: LossConfig::uniform(m),
        data: DataSource::Synthetic(spec),
        ..cfg.clone()
    })
}

fn sweep_cell(cfg: &RunConfig, resolution: usize, variant: Variant) -> CliResult<SweepRow> {
    let run = sweep_run_config(cfg, resolution, variant)?;
    let data = load_data(&run)?;
    let report = train_config(&run, &data, &mut std::io::sink())?;
    let cost = profile(&report.model, (resolution, resolution))?;
    let best = &report.history[report.best_epoch - 1];
    Ok(SweepRow {
        resolution,
        gmacs: cost.gmacs(),
        params: cost.total_params,
        mean_dice: best.val_dice,
        mean_jaccard: best.val_jaccard,
        variant,
    })
}

/// Trains the baseline and the extended variant at every resolution and
/// writes one CSV row per pair. With `threads > 1` cells run concurrently;
/// every cell is seeded independently, so the rows do not depend on it.
pub fn cmd_sweep(
    cfg: &RunConfig,
    resolutions: &[usize],
    threads: usize,
    out: &Path,
    progress: &mut dyn Write,
) -> CliResult<Vec<SweepRow>> {
    if resolutions.is_empty() {
        return Err(Error::Config("no resolutions to sweep".into()).into());
    }
    let cells: Vec<(usize, Variant)> = resolutions
        .iter()
        .flat_map(|&r| [(r, Variant::Baseline), (r, Variant::Extended)])
        .collect();
    // Validate every cell before spending time on training.
    for &(r, v) in &cells {
        sweep_run_config(cfg, r, v)?;
    }
    let mut results: Vec<Option<CliResult<SweepRow>>> = (0..cells.len()).map(|_| None).collect();
    let threads = threads.clamp(1, cells.len());
    for (batch, slots) in cells.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&(r, v)| s.spawn(move || sweep_cell(cfg, r, v)))
                .collect();
            for (slot, h) in slots.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("sweep worker panicked"));
            }
        });
        for (&(r, v), slot) in batch.iter().zip(slots.iter()) {
            if let Some(Ok(row)) = slot {
                let _ = writeln!(
                    progress,
                    "{r:>4} {:<8} gmacs {:.4}  jaccard {:.4}",
                    v.name(),
                    row.gmacs,
                    row.mean_jaccard
                );
            }
        }
    }
    let rows = results
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<CliResult<Vec<_>>>()?;
    write_file(&out.join(SWEEP_FILE), &sweep_csv(&rows))?;
    Ok(rows)
}

/// Worker cap from `UPSEG_THREADS`; unset means the machine's parallelism.
pub fn thread_cap(var: Option<&str>) -> CliResult<usize> {
    match var {
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("UPSEG_THREADS must be a positive integer, got {v:?}")).into()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cases = [
            (CliError::Core(Error::Config("x".into())), 2),
            (CliError::Core(Error::NonFinite("loss")), 3),
            (CliError::Core(Error::Mismatch("x".into())), 4),
            (
                CliError::Core(Error::Format {
                    record: None,
                    msg: "x".into(),
                }),
                5,
            ),
        ];
        for (err, code) in cases {
            assert_eq!(err.exit_code(), code, "{err}");
        }
    }

    #[test]
    fn thread_cap_parsing() {
        assert_eq!(thread_cap(Some("3")).unwrap(), 3);
        assert!(thread_cap(None).unwrap() >= 1);
        assert_eq!(thread_cap(Some("0")).unwrap_err().exit_code(), 2);
        assert_eq!(thread_cap(Some("many")).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn sweep_cells_pick_stage_counts() {
        let cfg = RunConfig::parse("data.input_res = 16\ndata.gt_res = 64").unwrap();
        let ext = sweep_run_config(&cfg, 16, Variant::Extended).unwrap();
        assert_eq!(ext.stack.num_stages, 2);
        assert_eq!(ext.loss.stage_weights.len(), 3);
        let base = sweep_run_config(&cfg, 32, Variant::Baseline).unwrap();
        assert_eq!(base.stack.num_stages, 0);
        assert!(sweep_run_config(&cfg, 128, Variant::Extended).is_err());
    }
}
