//! CSV writers. All numbers are formatted with Rust's shortest-round-trip
//! `Display`, so outputs are byte-identical across reruns of the same
//! deterministic computation.

use crate::{io_err, LabError};
use sat_core::landscape::{LandscapeGrid, SweepResult};
use sat_core::train::{AblationTable, MetricsLog};
use std::fmt::Write as _;
use std::path::Path;

pub fn render_metrics(log: &MetricsLog) -> String {
    let mut out = String::from("epoch,lr,train_loss,clean_acc,robust_acc\n");
    for row in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.epoch, row.lr, row.train_loss, row.clean_acc, row.robust_acc
        )
        .unwrap();
    }
    out
}

pub fn render_sweep(sweep: &SweepResult, seed: u64) -> String {
    let mut out = format!("# axis={} seed={seed}\nsetting,robust_acc\n", sweep.axis);
    for (setting, acc) in &sweep.points {
        writeln!(out, "{setting},{acc}").unwrap();
    }
    out
}

pub fn render_landscape(grid: &LandscapeGrid) -> String {
    let mut out = format!(
        "# seed={} epsilon={} n={} d1={} d2={}\na,b,loss\n",
        grid.seed, grid.epsilon, grid.n, grid.d1_label, grid.d2_label
    );
    for (i, &a) in grid.coefficients.iter().enumerate() {
        for (j, &b) in grid.coefficients.iter().enumerate() {
            writeln!(out, "{a},{b},{}", grid.loss_at(i, j)).unwrap();
        }
    }
    out
}

pub fn render_ablation(table: &AblationTable) -> String {
    let mut out = format!("# seed={}\ncell,clean_acc,robust_acc\n", table.seed);
    for cell in &table.cells {
        writeln!(out, "{},{},{}", cell.label, cell.clean_acc, cell.robust_acc).unwrap();
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), LabError> {
    std::fs::write(path, text).map_err(io_err(path))
}
