use crate::error::{CliError, CliResult};
use crate::gen_data::TEST_FILE;
use crate::files::write_json;
use detdiv_core::arch::{load_checkpoint, ModelFamily};
use detdiv_core::data::load_dataset;
use detdiv_core::train::{evaluate, EvalReport};
use detdiv_core::Error;
use std::path::{Path, PathBuf};

pub const EVAL_FILE: &str = "eval.json";

/// `dataset` is a DVDS file or a directory holding `test.dvds`.
pub fn eval(checkpoint: &Path, dataset: &Path, family: Option<ModelFamily>, out: Option<&Path>) -> CliResult<EvalReport> {
    let model = load_checkpoint(checkpoint).map_err(|e| CliError::read(checkpoint, e))?;
    if let Some(expected) = family {
        if model.family() != expected {
            return Err(Error::FamilyMismatch(format!(
                "checkpoint holds a {:?} model, config expects {expected:?}",
                model.family()
            ))
            .into());
        }
    }
    let path: PathBuf = if dataset.is_dir() { dataset.join(TEST_FILE) } else { dataset.to_path_buf() };
    let data = load_dataset(&path).map_err(|e| CliError::read(&path, e))?;
    let report = evaluate(&model, &data)?;
    if let Some(out) = out {
        crate::files::create_dir(out)?;
        write_json(&out.join(EVAL_FILE), &report)?;
    }
    Ok(report)
}

pub fn format_report(report: &EvalReport) -> String {
    let mut lines = vec![format!("accuracy {:.4} ({} samples)", report.accuracy, report.samples)];
    for (k, acc) in report.per_class.iter().enumerate() {
        lines.push(format!("class {k} {acc:.4}"));
    }
    if let Some(branches) = &report.branch_accuracy {
        for (b, acc) in branches.iter().enumerate() {
            lines.push(format!("branch {b} {acc:.4}"));
        }
    }
    if let Some(vote) = report.vote_accuracy {
        lines.push(format!("vote {vote:.4}"));
    }
    lines.join("\n")
}
