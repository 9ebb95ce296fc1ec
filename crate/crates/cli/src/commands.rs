//! The five commands behind the `mlcld` binary.
//!
//! Each command resolves a [`RunConfig`], runs the requested phase, and
//! writes its artifacts into the run directory: `resolved.conf`, loss
//! logs, checkpoints, and the metrics report. Failures map onto three
//! exit-code categories via [`CliError`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use mlcld_core::checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta, Phase,
};
use mlcld_core::dataio::{load_mulan_pair, DataError, MulanDataset, Standardizer};
use mlcld_core::matrix::NumError;
use mlcld_core::memory::MemoryError;
use mlcld_core::metrics::{evaluate_all, MetricsReport};
use mlcld_core::model::{EncoderConfig, ModelPair};
use mlcld_core::objectives::{Hyper, LossOptions};
use mlcld_core::rng::Rng;
use mlcld_core::train::{
    self, predict_scores, seeds, EpochLoss, FinetuneEpochLoss, FinetuneSettings,
    PretrainSettings, StepInfo, TrainError,
};
use sha2::{Digest, Sha256};

use crate::config::{apply_overrides, load_config, ConfigError, RunConfig};
use crate::datagen;

/// Command failure, bucketed by exit code: config errors exit 1, data
/// errors 2, numerical failures 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// Short category tag used in sweep error rows.
    fn status(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config-error",
            CliError::Data(_) => "data-error",
            CliError::Numeric(_) => "numeric-error",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Setup(m) => CliError::Config(m),
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            // Degenerate values inside the loop come from the optimization
            // state (for example a saturated or overflowed encoder emitting
            // a zero embedding row), not from the dataset. The same holds
            // for queue value validation at enqueue time.
            TrainError::Num(NumError::Degenerate { .. }) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Memory(
                MemoryError::NotUnit { .. } | MemoryError::NotDistribution { .. },
            ) => CliError::Numeric(e.to_string()),
            TrainError::Num(n) => CliError::from(n),
            TrainError::Memory(m) => CliError::Data(m.to_string()),
        }
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn require_key(key: &str, value: &str) -> Result<(), CliError> {
    if value.is_empty() {
        Err(CliError::Config(format!("key '{key}' must be set")))
    } else {
        Ok(())
    }
}

/// Hex SHA-256 of the run-defining config keys (everything except
/// `run.dir`). Two runs with equal fingerprints and seeds are replicas.
pub fn config_fingerprint(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.fingerprint_text().as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Training features: raw, or standardized by their own statistics.
fn load_train(cfg: &RunConfig) -> Result<MulanDataset, CliError> {
    let mut ds = load_mulan_pair(Path::new(&cfg.train_arff), Path::new(&cfg.labels_xml))?;
    if cfg.standardize {
        let s = Standardizer::fit(&ds.features);
        ds.features = s.apply(&ds.features);
    }
    Ok(ds)
}

/// Test features, standardized by the training-set statistics when
/// standardization is on (the train path must then be set).
fn load_test(cfg: &RunConfig) -> Result<MulanDataset, CliError> {
    let mut ds = load_mulan_pair(Path::new(&cfg.test_arff), Path::new(&cfg.labels_xml))?;
    if cfg.standardize {
        if cfg.train_arff.is_empty() {
            return Err(CliError::Config(
                "key 'data.train_arff' must be set: standardization statistics \
                 come from the training set"
                    .to_string(),
            ));
        }
        let train = load_mulan_pair(Path::new(&cfg.train_arff), Path::new(&cfg.labels_xml))?;
        let s = Standardizer::fit(&train.features);
        ds.features = s.apply(&ds.features);
    }
    Ok(ds)
}

fn init_model(cfg: &RunConfig, ds: &MulanDataset) -> Result<ModelPair, CliError> {
    let enc = EncoderConfig {
        input_dim: ds.num_features(),
        hidden_dim: cfg.hidden_dim,
        embed_dim: cfg.embed_dim,
        num_labels: ds.num_labels(),
    };
    let mut rng = Rng::new(cfg.seed, seeds::MODEL_INIT);
    Ok(ModelPair::init(enc, cfg.dropout, cfg.dist_head_input, &mut rng)?)
}

fn pretrain_settings(cfg: &RunConfig) -> PretrainSettings {
    PretrainSettings {
        epochs: cfg.pretrain_epochs,
        batch_size: cfg.pretrain_batch_size,
        lr: cfg.pretrain_lr,
        weight_decay: cfg.pretrain_weight_decay,
        momentum: cfg.momentum,
        hyper: Hyper {
            tau: cfg.tau,
            sigma: cfg.sigma,
            alpha: cfg.alpha,
            beta: cfg.beta,
        },
        queue_size: cfg.queue_size,
        mask_rate: cfg.pretrain_mask_rate,
        t0: cfg.pretrain_t0,
        t_mult: cfg.pretrain_t_mult,
        eta_min: cfg.pretrain_eta_min,
        loss_mode: cfg.loss_mode,
        loss_options: LossOptions {
            positive_mode: cfg.positive_mode,
            cld_raw_log_weight: cfg.cld_raw_log_weight,
            w_penalty_per_anchor: cfg.w_penalty_per_anchor,
        },
        batch_mean: cfg.batch_mean,
    }
}

fn finetune_settings(cfg: &RunConfig) -> FinetuneSettings {
    FinetuneSettings {
        epochs: cfg.finetune_epochs,
        batch_size: cfg.pretrain_batch_size,
        lr: cfg.finetune_lr,
        weight_decay: cfg.finetune_weight_decay,
        mask_rate: cfg.finetune_mask_rate,
        t0: cfg.finetune_t0,
        t_mult: cfg.finetune_t_mult,
        eta_min: cfg.finetune_eta_min,
    }
}

fn pretrain_loss_csv(log: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,total,contrastive,g,h,w_penalty\n");
    for e in log {
        let c = e.components;
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch + 1,
            c.total,
            c.contrastive,
            c.g,
            c.h,
            c.w_penalty
        ));
    }
    s
}

fn finetune_loss_csv(log: &[FinetuneEpochLoss]) -> String {
    let mut s = String::from("epoch,bce\n");
    for e in log {
        s.push_str(&format!("{},{}\n", e.epoch + 1, e.bce));
    }
    s
}

pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
}

/// Contrastive pretraining into the config's run directory. Writes
/// `resolved.conf`, `pretrain_loss.csv`, and `pretrain.ckpt`.
pub fn run_pretrain(cfg: &RunConfig, verbose: bool) -> Result<RunArtifacts, CliError> {
    require_key("data.train_arff", &cfg.train_arff)?;
    require_key("data.labels_xml", &cfg.labels_xml)?;
    let ds = load_train(cfg)?;
    let mut model = init_model(cfg, &ds)?;
    let run_dir = PathBuf::from(&cfg.run_dir);
    ensure_dir(&run_dir)?;
    write_file(&run_dir.join("resolved.conf"), &cfg.resolved_text())?;

    let settings = pretrain_settings(cfg);
    let total_epochs = settings.epochs;
    let mut last_seen = u32::MAX;
    let mut hook = |info: &StepInfo| {
        if verbose && info.epoch != last_seen {
            last_seen = info.epoch;
            println!(
                "pretrain epoch {}/{} lr {:.6e}",
                info.epoch + 1,
                total_epochs,
                info.lr
            );
        }
    };
    let log = train::pretrain(&mut model, &ds, &settings, cfg.seed, Some(&mut hook))?;
    write_file(&run_dir.join("pretrain_loss.csv"), &pretrain_loss_csv(&log))?;

    let checkpoint = run_dir.join("pretrain.ckpt");
    let meta = CheckpointMeta {
        label_names: ds.label_names.clone(),
        phase: Phase::Pretrained,
        seed: cfg.seed,
    };
    save_checkpoint(&model, &meta, &checkpoint)?;
    if verbose {
        if let Some(last) = log.last() {
            println!("pretrain done, final epoch mean total {}", last.components.total);
        }
        println!("wrote {}", checkpoint.display());
    }
    Ok(RunArtifacts { run_dir, checkpoint })
}

/// BCE fine-tuning of a pretrained checkpoint. Writes
/// `finetune_loss.csv` and `finetune.ckpt` next to `resolved.conf`.
pub fn run_finetune(cfg: &RunConfig, from: &Path, verbose: bool) -> Result<RunArtifacts, CliError> {
    require_key("data.train_arff", &cfg.train_arff)?;
    require_key("data.labels_xml", &cfg.labels_xml)?;
    let ck = load_checkpoint(from)?;
    if ck.meta.phase == Phase::Finetuned {
        eprintln!(
            "warning: {} is already finetuned; finetuning it again",
            from.display()
        );
    }
    let ds = load_train(cfg)?;
    let mut model = ModelPair::from_checkpoint(ck, cfg.dropout, cfg.dist_head_input);
    let run_dir = PathBuf::from(&cfg.run_dir);
    ensure_dir(&run_dir)?;
    write_file(&run_dir.join("resolved.conf"), &cfg.resolved_text())?;

    let settings = finetune_settings(cfg);
    let log = train::finetune(&mut model, &ds, &settings, cfg.seed)?;
    if verbose {
        for e in &log {
            println!("finetune epoch {}/{} bce {}", e.epoch + 1, settings.epochs, e.bce);
        }
    }
    write_file(&run_dir.join("finetune_loss.csv"), &finetune_loss_csv(&log))?;

    let checkpoint = run_dir.join("finetune.ckpt");
    let meta = CheckpointMeta {
        label_names: ds.label_names.clone(),
        phase: Phase::Finetuned,
        seed: cfg.seed,
    };
    save_checkpoint(&model, &meta, &checkpoint)?;
    if verbose {
        println!("wrote {}", checkpoint.display());
    }
    Ok(RunArtifacts { run_dir, checkpoint })
}

/// Evaluation of a checkpoint on the config's test set. Writes
/// `metrics.csv` (fixed header) and a human-readable `report.txt`.
pub fn run_evaluate(cfg: &RunConfig, from: &Path, verbose: bool) -> Result<MetricsReport, CliError> {
    require_key("data.test_arff", &cfg.test_arff)?;
    require_key("data.labels_xml", &cfg.labels_xml)?;
    let ck = load_checkpoint(from)?;
    if ck.meta.phase == Phase::Pretrained {
        eprintln!(
            "warning: {} has not been finetuned; scores come from the raw head",
            from.display()
        );
    }
    let phase = ck.meta.phase;
    let seed = ck.meta.seed;
    let model = ModelPair::from_checkpoint(ck, cfg.dropout, cfg.dist_head_input);
    let test = load_test(cfg)?;
    if test.num_features() != model.config.input_dim {
        return Err(CliError::Config(format!(
            "test set has {} features, checkpoint expects {}",
            test.num_features(),
            model.config.input_dim
        )));
    }
    if test.num_labels() != model.config.num_labels {
        return Err(CliError::Config(format!(
            "test set has {} labels, checkpoint expects {}",
            test.num_labels(),
            model.config.num_labels
        )));
    }

    let scores = predict_scores(&model, &test.features, cfg.head_activation)?;
    let report = evaluate_all(&scores, cfg.threshold, &test.labels)?;

    let run_dir = PathBuf::from(&cfg.run_dir);
    ensure_dir(&run_dir)?;
    let metrics_csv = format!("{}\n{}\n", MetricsReport::csv_header(), report.csv_row());
    write_file(&run_dir.join("metrics.csv"), &metrics_csv)?;
    write_file(
        &run_dir.join("report.txt"),
        &report_text(cfg, from, phase, seed, &test, &report),
    )?;
    if verbose {
        print!("{}", report_text(cfg, from, phase, seed, &test, &report));
    }
    Ok(report)
}

fn report_text(
    cfg: &RunConfig,
    from: &Path,
    phase: Phase,
    seed: u64,
    test: &MulanDataset,
    report: &MetricsReport,
) -> String {
    let phase_name = match phase {
        Phase::Pretrained => "pretrained",
        Phase::Finetuned => "finetuned",
    };
    let activation = match cfg.head_activation {
        train::ScoreActivation::Sigmoid => "sigmoid",
        train::ScoreActivation::Softmax => "softmax",
    };
    let mut s = String::new();
    s.push_str(&format!("checkpoint: {}\n", from.display()));
    s.push_str(&format!("phase: {phase_name}\n"));
    s.push_str(&format!("seed: {seed}\n"));
    s.push_str(&format!("config fingerprint: {}\n", config_fingerprint(cfg)));
    s.push_str(&format!("threshold: {}\n", cfg.threshold));
    s.push_str(&format!("activation: {activation}\n"));
    s.push_str(&format!("samples: {}\n", test.n()));
    s.push_str(&format!("labels: {}\n\n", test.num_labels()));
    let [ha, ebf1, mif1, maf1, p_at_1, map] = report.values();
    for (name, v) in [
        ("ha", ha),
        ("ebf1", ebf1),
        ("mif1", mif1),
        ("maf1", maf1),
        ("p_at_1", p_at_1),
        ("map", map),
    ] {
        s.push_str(&format!("{name:<8}{v:.6}\n"));
    }
    s
}

/// `pretrain --config <path> [--seed N] [--set k=v] [--out dir]`.
pub fn pretrain(
    config_path: &Path,
    seed: Option<u64>,
    sets: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = resolve_config(Some(config_path), seed, sets, out)?;
    run_pretrain(&cfg, true)?;
    Ok(())
}

/// `finetune --config <path> --from <ckpt> [--seed N] [--set k=v] [--out dir]`.
pub fn finetune(
    config_path: &Path,
    from: &Path,
    seed: Option<u64>,
    sets: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = resolve_config(Some(config_path), seed, sets, out)?;
    run_finetune(&cfg, from, true)?;
    Ok(())
}

/// `evaluate --from <ckpt> [--test arff] [--labels xml] [--threshold T]
/// [--config path] [--set k=v] [--out dir]`. The config supplies the
/// training set for standardization statistics plus threshold and
/// activation defaults; explicit flags override it.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    from: &Path,
    test: Option<&Path>,
    labels: Option<&Path>,
    threshold: Option<f64>,
    config_path: Option<&Path>,
    sets: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfg = resolve_config(config_path, None, sets, out)?;
    if let Some(t) = test {
        cfg.test_arff = t.display().to_string();
    }
    if let Some(l) = labels {
        cfg.labels_xml = l.display().to_string();
    }
    if let Some(th) = threshold {
        cfg.threshold = th;
        cfg.validate()?;
    }
    run_evaluate(&cfg, from, true)?;
    Ok(())
}

/// `sweep --config <path> --alpha <list> --beta <list> --seeds <list>`:
/// the full pretrain + finetune + evaluate pipeline per (α, β, seed)
/// cell, one CSV row each. Cell failures become error rows and the
/// sweep continues.
pub fn sweep(
    config_path: &Path,
    alpha: &str,
    beta: &str,
    seed_list: &str,
    sets: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = resolve_config(Some(config_path), None, sets, out)?;
    cfg.require_datasets().map_err(CliError::from)?;
    let alphas = parse_f64_list("--alpha", alpha)?;
    let betas = parse_f64_list("--beta", beta)?;
    let seeds_v = parse_u64_list("--seeds", seed_list)?;
    for &a in &alphas {
        if !(a.is_finite() && a >= 0.0) {
            return Err(CliError::Config(format!("--alpha value {a} must be >= 0")));
        }
    }
    for &b in &betas {
        if !(b.is_finite() && b >= 0.0) {
            return Err(CliError::Config(format!("--beta value {b} must be >= 0")));
        }
    }

    let sweep_dir = PathBuf::from(&cfg.run_dir);
    ensure_dir(&sweep_dir)?;
    let train = load_train(&cfg)?;
    let test = load_test(&cfg)?;

    let mut csv = String::from("alpha,beta,seed,status,ha,ebf1,mif1,maf1,p_at_1,map\n");
    let csv_path = sweep_dir.join("sweep.csv");
    for &a in &alphas {
        for &b in &betas {
            for &s in &seeds_v {
                let mut cell = cfg.clone();
                cell.alpha = a;
                cell.beta = b;
                cell.seed = s;
                cell.run_dir = sweep_dir
                    .join(format!("a{a}_b{b}_s{s}"))
                    .display()
                    .to_string();
                println!("sweep cell alpha={a} beta={b} seed={s}");
                match run_cell(&cell, &train, &test) {
                    Ok(r) => csv.push_str(&format!("{a},{b},{s},ok,{}\n", r.csv_row())),
                    Err(e) => {
                        eprintln!("cell alpha={a} beta={b} seed={s} failed: {e}");
                        csv.push_str(&format!("{a},{b},{s},{},,,,,,\n", e.status()));
                    }
                }
                write_file(&csv_path, &csv)?;
            }
        }
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// One sweep cell, sharing the already-loaded datasets. Runs the whole
/// pipeline in memory and writes the same artifacts as the standalone
/// commands into the cell's run directory.
fn run_cell(
    cfg: &RunConfig,
    train: &MulanDataset,
    test: &MulanDataset,
) -> Result<MetricsReport, CliError> {
    let run_dir = PathBuf::from(&cfg.run_dir);
    ensure_dir(&run_dir)?;
    write_file(&run_dir.join("resolved.conf"), &cfg.resolved_text())?;

    let mut model = init_model(cfg, train)?;
    let settings = pretrain_settings(cfg);
    let log = train::pretrain(&mut model, train, &settings, cfg.seed, None)?;
    write_file(&run_dir.join("pretrain_loss.csv"), &pretrain_loss_csv(&log))?;
    let meta = CheckpointMeta {
        label_names: train.label_names.clone(),
        phase: Phase::Pretrained,
        seed: cfg.seed,
    };
    save_checkpoint(&model, &meta, &run_dir.join("pretrain.ckpt"))?;

    let fsettings = finetune_settings(cfg);
    let flog = train::finetune(&mut model, train, &fsettings, cfg.seed)?;
    write_file(&run_dir.join("finetune_loss.csv"), &finetune_loss_csv(&flog))?;
    let meta = CheckpointMeta {
        label_names: train.label_names.clone(),
        phase: Phase::Finetuned,
        seed: cfg.seed,
    };
    let ckpt = run_dir.join("finetune.ckpt");
    save_checkpoint(&model, &meta, &ckpt)?;

    let scores = predict_scores(&model, &test.features, cfg.head_activation)?;
    let report = evaluate_all(&scores, cfg.threshold, &test.labels)?;
    let metrics_csv = format!("{}\n{}\n", MetricsReport::csv_header(), report.csv_row());
    write_file(&run_dir.join("metrics.csv"), &metrics_csv)?;
    write_file(
        &run_dir.join("report.txt"),
        &report_text(cfg, &ckpt, Phase::Finetuned, cfg.seed, test, &report),
    )?;
    Ok(report)
}

/// `gen-data --out <dir> [--dataset yeast|scene|all]`: writes the
/// bundled synthetic benchmark datasets.
pub fn gen_data(out: &Path, dataset: &str) -> Result<(), CliError> {
    let specs = match dataset {
        "yeast" => vec![datagen::yeast_spec()],
        "scene" => vec![datagen::scene_spec()],
        "all" => vec![datagen::yeast_spec(), datagen::scene_spec()],
        other => {
            return Err(CliError::Config(format!(
                "unknown dataset '{other}' (expected yeast, scene, or all)"
            )))
        }
    };
    for spec in specs {
        let generated = datagen::generate(&spec);
        let written = datagen::write_dataset(out, &spec, &generated)
            .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        println!(
            "wrote {} ({} train / {} test samples, {} labels)",
            written.train_arff.display(),
            generated.train.n(),
            generated.test.n(),
            generated.train.num_labels()
        );
        println!("wrote {}", written.test_arff.display());
        println!("wrote {}", written.labels_xml.display());
    }
    Ok(())
}

/// Shared config resolution: file (or defaults), then `--set` overrides,
/// then the dedicated flags. Validation runs on the final state.
fn resolve_config(
    config_path: Option<&Path>,
    seed: Option<u64>,
    sets: &[String],
    out: Option<&Path>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match config_path {
        Some(p) => load_config(p, sets)?,
        None => {
            let mut c = RunConfig::default();
            apply_overrides(&mut c, sets)?;
            c
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.run_dir = o.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_f64_list(flag: &str, text: &str) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let v: f64 = part
            .parse()
            .map_err(|_| CliError::Config(format!("{flag} value '{part}' is not a number")))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{flag} list is empty")));
    }
    Ok(out)
}

fn parse_u64_list(flag: &str, text: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let v: u64 = part.parse().map_err(|_| {
            CliError::Config(format!("{flag} value '{part}' is not a non-negative integer"))
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{flag} list is empty")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, write_dataset, SyntheticSpec};

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            name: "tiny",
            label_names: vec!["A".into(), "B".into(), "C".into()],
            num_features: 6,
            n_train: 24,
            n_test: 12,
            total_train: 40,
            total_test: 20,
            primary_decay: 0.8,
            window: 1,
            p_near: 0.3,
            p_far: 0.1,
            noise: 0.5,
            seed: 42,
        }
    }

    fn write_tiny(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let spec = tiny_spec();
        let g = generate(&spec);
        let w = write_dataset(dir, &spec, &g).unwrap();
        (w.train_arff, w.test_arff, w.labels_xml)
    }

    fn tiny_config(dir: &Path) -> RunConfig {
        let (train, test, labels) = write_tiny(dir);
        let mut cfg = RunConfig::default();
        cfg.train_arff = train.display().to_string();
        cfg.test_arff = test.display().to_string();
        cfg.labels_xml = labels.display().to_string();
        cfg.hidden_dim = 16;
        cfg.embed_dim = 8;
        cfg.pretrain_epochs = 2;
        cfg.pretrain_batch_size = 8;
        cfg.queue_size = 16;
        cfg.finetune_epochs = 2;
        cfg.run_dir = dir.join("run").display().to_string();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn pipeline_writes_every_artifact() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        let pre = run_pretrain(&cfg, false).unwrap();
        let fine = run_finetune(&cfg, &pre.checkpoint, false).unwrap();
        run_evaluate(&cfg, &fine.checkpoint, false).unwrap();
        let dir = PathBuf::from(&cfg.run_dir);
        for name in [
            "resolved.conf",
            "pretrain_loss.csv",
            "pretrain.ckpt",
            "finetune_loss.csv",
            "finetune.ckpt",
            "metrics.csv",
            "report.txt",
        ] {
            assert!(dir.join(name).exists(), "missing {name}");
        }
        let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("ha,ebf1,mif1,maf1,p_at_1,map\n"));
        assert_eq!(metrics.lines().count(), 2);
        let loss = fs::read_to_string(dir.join("pretrain_loss.csv")).unwrap();
        assert!(loss.starts_with("epoch,total,contrastive,g,h,w_penalty\n"));
        assert_eq!(loss.lines().count(), 3);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(tmp.path());
        let mut bytes = Vec::new();
        for pass in 0..2 {
            cfg.run_dir = tmp.path().join(format!("run{pass}")).display().to_string();
            let pre = run_pretrain(&cfg, false).unwrap();
            let fine = run_finetune(&cfg, &pre.checkpoint, false).unwrap();
            run_evaluate(&cfg, &fine.checkpoint, false).unwrap();
            let dir = PathBuf::from(&cfg.run_dir);
            bytes.push((
                fs::read(dir.join("pretrain.ckpt")).unwrap(),
                fs::read(dir.join("finetune.ckpt")).unwrap(),
                fs::read(dir.join("metrics.csv")).unwrap(),
            ));
        }
        assert_eq!(bytes[0].0, bytes[1].0);
        assert_eq!(bytes[0].1, bytes[1].1);
        assert_eq!(bytes[0].2, bytes[1].2);
    }

    #[test]
    fn finetune_zero_epochs_only_changes_the_phase_tag() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(tmp.path());
        cfg.finetune_epochs = 0;
        let pre = run_pretrain(&cfg, false).unwrap();
        let fine = run_finetune(&cfg, &pre.checkpoint, false).unwrap();
        let a = load_checkpoint(&pre.checkpoint).unwrap();
        let b = load_checkpoint(&fine.checkpoint).unwrap();
        assert_eq!(a.meta.phase, Phase::Pretrained);
        assert_eq!(b.meta.phase, Phase::Finetuned);
        assert_eq!(a.query.w1.value.data(), b.query.w1.value.data());
        assert_eq!(a.dist_w.data(), b.dist_w.data());
        assert_eq!(a.key.w1.value.data(), b.key.w1.value.data());
    }

    #[test]
    fn sweep_writes_one_row_per_cell() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        let conf_path = tmp.path().join("tiny.conf");
        fs::write(&conf_path, cfg.resolved_text()).unwrap();
        let dir = tmp.path().join("sweeps");
        sweep(&conf_path, "0,0.1", "0.01", "1", &[], Some(&dir)).unwrap();
        let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha,beta,seed,status,ha,ebf1,mif1,maf1,p_at_1,map");
        assert_eq!(lines.len(), 3);
        for line in &lines[1..] {
            assert!(line.contains(",ok,"), "unexpected row: {line}");
        }
        assert!(dir.join("a0_b0.01_s1/metrics.csv").exists());
        assert!(dir.join("a0.1_b0.01_s1/finetune.ckpt").exists());
    }

    #[test]
    fn sweep_records_cell_failures_and_continues() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        let conf_path = tmp.path().join("tiny.conf");
        fs::write(&conf_path, cfg.resolved_text()).unwrap();
        let dir = tmp.path().join("sweeps");
        fs::create_dir_all(&dir).unwrap();
        // A file squatting on the first cell's directory makes that cell
        // fail while the second still runs.
        fs::write(dir.join("a0.1_b0.01_s1"), "blocked").unwrap();
        sweep(&conf_path, "0.1", "0.01", "1,2", &[], Some(&dir)).unwrap();
        let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.1,0.01,1,data-error,"), "row: {}", lines[1]);
        assert!(lines[1].ends_with(",,,,,"), "row: {}", lines[1]);
        assert!(lines[2].contains(",ok,"), "row: {}", lines[2]);
        assert!(dir.join("a0.1_b0.01_s2/metrics.csv").exists());
    }

    #[test]
    fn evaluating_twice_gives_identical_reports() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        let pre = run_pretrain(&cfg, false).unwrap();
        let fine = run_finetune(&cfg, &pre.checkpoint, false).unwrap();
        let a = run_evaluate(&cfg, &fine.checkpoint, false).unwrap();
        let first = fs::read(PathBuf::from(&cfg.run_dir).join("metrics.csv")).unwrap();
        let b = run_evaluate(&cfg, &fine.checkpoint, false).unwrap();
        let second = fs::read(PathBuf::from(&cfg.run_dir).join("metrics.csv")).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(first, second);
    }

    #[test]
    fn gen_data_rejects_unknown_dataset_names() {
        let tmp = tempfile::tempdir().unwrap();
        let err = gen_data(tmp.path(), "emotions").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn degenerate_numerics_during_training_exit_as_numeric_failure() {
        let degenerate =
            TrainError::Num(NumError::degenerate("row_l2_normalize", "row 0 has norm 0"));
        assert_eq!(CliError::from(degenerate).exit_code(), 3);
        let enqueue = TrainError::Memory(MemoryError::NotUnit { row: 0, norm: 0.0 });
        assert_eq!(CliError::from(enqueue).exit_code(), 3);
        let shape = TrainError::Num(NumError::dim("matmul", "128x103 vs 256x104"));
        assert_eq!(CliError::from(shape).exit_code(), 2);
        let capacity = TrainError::Memory(MemoryError::BatchTooLarge { batch: 512, capacity: 256 });
        assert_eq!(CliError::from(capacity).exit_code(), 2);
    }
}
