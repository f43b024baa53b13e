use crate::error::{CliError, CliResult};
use crate::files::{create_dir, read_text, sha256_file, write_json, write_text};
use crate::gen_data::{TEST_FILE, TRAIN_FILE};
use detdiv_core::arch::{save_checkpoint, InputShape, ModelFamily};
use detdiv_core::config::ExperimentConfig;
use detdiv_core::data::{load_dataset, Split};
use detdiv_core::diversity::Gamma;
use detdiv_core::train::{pooled_lengths, EpochRecord, Trainer};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.dvrg";

#[derive(Clone, Debug, Serialize)]
pub struct ResolvedGamma {
    pub spatial: f64,
    pub channel: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetDigest {
    pub train_sha256: String,
    pub test_sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub model_family: ModelFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub gamma_resolved: ResolvedGamma,
    pub dataset: DatasetDigest,
    #[serde(rename = "final")]
    pub final_metrics: EpochRecord,
    pub wall_time_seconds: f64,
}

/// Reads an experiment config and applies command-line overrides.
pub fn load_experiment(path: &Path, seed: Option<u64>, out: Option<&Path>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&read_text(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out.to_path_buf();
    }
    Ok(cfg)
}

pub fn load_split(dir: &Path) -> CliResult<(Split, DatasetDigest)> {
    let train_path = dir.join(TRAIN_FILE);
    let test_path = dir.join(TEST_FILE);
    let split = Split {
        train: load_dataset(&train_path).map_err(|e| CliError::read(&train_path, e))?,
        test: load_dataset(&test_path).map_err(|e| CliError::read(&test_path, e))?,
    };
    let digest = DatasetDigest { train_sha256: sha256_file(&train_path)?, test_sha256: sha256_file(&test_path)? };
    Ok((split, digest))
}

pub fn metrics_csv(cfg: &ExperimentConfig, records: &[EpochRecord]) -> String {
    let mut text = format!("# config: {}\n{}\n", cfg.to_json(), EpochRecord::CSV_HEADER);
    for r in records {
        writeln!(text, "{}", r.csv_row()).expect("writing to a string");
    }
    text
}

/// Trains one configuration and writes its metrics, summary and checkpoint to
/// `cfg.output_dir`.
pub fn train_run(cfg: &ExperimentConfig, quiet: bool) -> CliResult<RunSummary> {
    let start = Instant::now();
    let (split, dataset) = load_split(&cfg.dataset_path)?;
    if split.train.class_count() != cfg.class_count {
        return Err(CliError::Config(format!(
            "class_count is {} but the dataset has {} classes",
            cfg.class_count,
            split.train.class_count()
        )));
    }
    let input = InputShape { channels: 1, height: split.train.height(), width: split.train.width() };
    let model = cfg.build_model(input)?;
    let lengths = pooled_lengths(&model)?;
    let gamma = |p: usize| cfg.gamma.resolve(p);
    let gamma_resolved =
        ResolvedGamma { spatial: gamma(lengths.spatial), channel: gamma(lengths.channel), branch: lengths.branch.map(gamma) };
    if !quiet {
        if cfg.gamma == Gamma::Auto {
            eprintln!("gamma auto: spatial {} channel {}", gamma_resolved.spatial, gamma_resolved.channel);
        }
        eprintln!("{}", EpochRecord::CSV_HEADER);
    }

    create_dir(&cfg.output_dir)?;
    let outcome = Trainer::new(model, &split, cfg.train_config())?.fit_with(|r| {
        if !quiet {
            eprintln!("{}", r.csv_row());
        }
    });
    let outcome = outcome?;
    write_text(&cfg.output_dir.join(METRICS_FILE), &metrics_csv(cfg, &outcome.records))?;
    let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&outcome.model, &ckpt).map_err(|e| CliError::read(&ckpt, e))?;

    let summary = RunSummary {
        config: cfg.clone(),
        seed: cfg.seed,
        model_family: cfg.model_family,
        lambda: (cfg.model_family == ModelFamily::DualBranch).then(|| cfg.lambda()),
        gamma_resolved,
        dataset,
        final_metrics: outcome.records.last().expect("at least one epoch").clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&cfg.output_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
