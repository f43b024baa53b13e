use crate::error::CliResult;
use crate::files::{create_dir, write_text};
use crate::train::train_run;
use detdiv_core::config::ExperimentConfig;
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TABLE: &str = "ablation.txt";
pub const ROW_FILE: &str = "row.csv";

const HEADER: &str = "cell,attention,diversity_spatial,diversity_channel,test_acc,d_sp,d_ch,d_branch,dataset_train_sha256";

/// One grid cell: attention on/off × {no diversity, spatial, spatial + channel}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub attention: bool,
    pub spatial: bool,
    pub channel: bool,
}

impl Cell {
    pub fn name(&self) -> String {
        let div = match (self.spatial, self.channel) {
            (false, false) => "none",
            (true, false) => "spatial",
            (false, true) => "channel",
            (true, true) => "spatial_channel",
        };
        format!("attn_{}_{div}", if self.attention { "on" } else { "off" })
    }
}

pub fn grid() -> Vec<Cell> {
    let mut cells = Vec::new();
    for attention in [false, true] {
        for (spatial, channel) in [(false, false), (true, false), (true, true)] {
            cells.push(Cell { attention, spatial, channel });
        }
    }
    cells
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    pub test_acc: f64,
    pub d_sp: Option<f64>,
    pub d_ch: Option<f64>,
    pub d_branch: Option<f64>,
    pub dataset_train_sha256: String,
}

impl CellResult {
    fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.cell.name(),
            self.cell.attention,
            self.cell.spatial,
            self.cell.channel,
            self.test_acc,
            opt(self.d_sp),
            opt(self.d_ch),
            opt(self.d_branch),
            self.dataset_train_sha256
        )
    }
}

/// Runs the grid concurrently; each cell writes into `<out>/<cell name>/` as it finishes.
pub fn ablate(base: &ExperimentConfig, quiet: bool) -> CliResult<Vec<CellResult>> {
    let out = base.output_dir.clone();
    create_dir(&out)?;
    let results = grid()
        .into_par_iter()
        .map(|cell| run_cell(base, cell, &out, quiet))
        .collect::<CliResult<Vec<_>>>()?;

    let mut csv = format!("# config: {}\n{HEADER}\n", base.to_json());
    for r in &results {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&out.join(ABLATION_CSV), &csv)?;
    write_text(&out.join(ABLATION_TABLE), &table(&results))?;
    Ok(results)
}

fn run_cell(base: &ExperimentConfig, cell: Cell, out: &Path, quiet: bool) -> CliResult<CellResult> {
    let cfg = ExperimentConfig {
        attention_enabled: cell.attention,
        diversity_spatial: cell.spatial,
        diversity_channel: cell.channel,
        output_dir: out.join(cell.name()),
        ..base.clone()
    };
    let summary = train_run(&cfg, true)?;
    let f = &summary.final_metrics;
    let result = CellResult {
        cell,
        test_acc: f.test_acc,
        d_sp: f.d_sp,
        d_ch: f.d_ch,
        d_branch: f.d_branch,
        dataset_train_sha256: summary.dataset.train_sha256,
    };
    write_text(&cfg.output_dir.join(ROW_FILE), &format!("{HEADER}\n{}\n", result.csv_row()))?;
    if !quiet {
        eprintln!("{} done: test_acc {:.4}", cell.name(), result.test_acc);
    }
    Ok(result)
}

pub fn table(results: &[CellResult]) -> String {
    let tick = |b: bool| if b { "yes" } else { "-" };
    let num = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    let mut text = format!(
        "{:<10} {:<8} {:<8} {:>9} {:>8} {:>8}\n",
        "attention", "spatial", "channel", "test_acc", "d_sp", "d_ch"
    );
    for r in results {
        text.push_str(&format!(
            "{:<10} {:<8} {:<8} {:>9.4} {:>8} {:>8}\n",
            tick(r.cell.attention),
            tick(r.cell.spatial),
            tick(r.cell.channel),
            r.test_acc,
            num(r.d_sp),
            num(r.d_ch)
        ));
    }
    text
}
