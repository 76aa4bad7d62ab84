//! Command drivers behind the CLI: each returns the single-line JSON summary
//! printed on stdout, writing its artifacts under the output directory.

use crate::config::{self, Loaded};
use crate::{ckpt, csvout, gradcheck, io_err, LabError};
use sat_core::checkpoint::Checkpoint;
use sat_core::landscape;
use sat_core::model::{self, ModelSpec};
use sat_core::train::{adversarial_train, run_ablation};
use sat_core::{attack, rng};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// Resolve the configuration from exactly one of `--config` / `--preset`,
/// with `--seed` overriding the config's training seed.
pub fn resolve_config(
    config_path: Option<&Path>,
    preset: Option<&str>,
    seed_override: Option<u64>,
) -> Result<Loaded, LabError> {
    let mut loaded = match (config_path, preset) {
        (Some(path), None) => config::load_config(path)?,
        (None, Some(name)) => {
            let json = config::preset_json(name).ok_or_else(|| LabError::Config {
                path: "--preset".into(),
                message: format!(
                    "unknown preset {name:?}; available: {}",
                    config::preset_names().join(", ")
                ),
            })?;
            config::parse_config(json)?
        }
        (Some(_), Some(_)) => {
            return Err(LabError::Config {
                path: "--config/--preset".into(),
                message: "pass either --config or --preset, not both".into(),
            });
        }
        (None, None) => {
            return Err(LabError::Config {
                path: "--config/--preset".into(),
                message: "one of --config or --preset is required".into(),
            });
        }
    };
    if let Some(seed) = seed_override {
        loaded.train.seed = seed;
        loaded.raw.train.seed = seed;
    }
    Ok(loaded)
}

fn ensure_out(out: &Path) -> Result<(), LabError> {
    std::fs::create_dir_all(out).map_err(io_err(out))
}

fn load_matching_checkpoint(path: &Path, spec: &ModelSpec) -> Result<Checkpoint, LabError> {
    let loaded = ckpt::load_checkpoint(path)?;
    if loaded.spec != *spec {
        return Err(LabError::SpecMismatch {
            why: format!(
                "checkpoint was trained as {:?} with activation {}, config describes {:?} with \
                 activation {}",
                loaded.spec.layers,
                loaded.spec.activation.forward,
                spec.layers,
                spec.activation.forward
            ),
        });
    }
    Ok(loaded)
}

/// Train per the config; writes `checkpoint.satckpt` and `metrics.csv`.
pub fn cmd_train(loaded: &Loaded, out: &Path) -> Result<Value, LabError> {
    ensure_out(out)?;
    let (train_data, val_data) = loaded.raw.data.load()?;
    let (checkpoint, log) = adversarial_train(&loaded.train, &loaded.spec, &train_data, &val_data)?;
    for row in &log {
        eprintln!(
            "epoch {:>3}: lr {:.5}  train_loss {:.4}  clean {:.4}  robust {:.4}",
            row.epoch, row.lr, row.train_loss, row.clean_acc, row.robust_acc
        );
    }
    let ckpt_path = out.join("checkpoint.satckpt");
    ckpt::save_checkpoint(&checkpoint, &ckpt_path)?;
    let metrics_path = out.join("metrics.csv");
    csvout::write_text(&metrics_path, &csvout::render_metrics(&log))?;
    let last = log.last().expect("at least one epoch");
    Ok(json!({
        "command": "train",
        "checkpoint": ckpt_path,
        "metrics": metrics_path,
        "epochs": log.len(),
        "seed": loaded.train.seed,
        "final_train_loss": last.train_loss,
        "final_clean_acc": last.clean_acc,
        "final_robust_acc": last.robust_acc,
    }))
}

/// Evaluate robustness under the config's attack; writes `attack.csv`.
pub fn cmd_attack(loaded: &Loaded, ckpt_path: &Path, out: &Path) -> Result<Value, LabError> {
    ensure_out(out)?;
    let checkpoint = load_matching_checkpoint(ckpt_path, &loaded.spec)?;
    let (_, val_data) = loaded.raw.data.load()?;
    let cfg = &loaded.train.attack;
    let clean = model::clean_accuracy(&checkpoint.params, &checkpoint.spec, &val_data)?;
    let seed = rng::derive_seed(loaded.train.seed, rng::stream::EVAL, 0xA77);
    let robust = attack::robust_accuracy(&checkpoint.params, &checkpoint.spec, &val_data, cfg, seed)?;
    let csv = format!(
        "epsilon,step,iterations,random_init,clean_acc,robust_acc\n{},{},{},{},{clean},{robust}\n",
        cfg.epsilon, cfg.step, cfg.iterations, cfg.random_init
    );
    let csv_path = out.join("attack.csv");
    csvout::write_text(&csv_path, &csv)?;
    Ok(json!({
        "command": "attack",
        "csv": csv_path,
        "epsilon": cfg.epsilon,
        "iterations": cfg.iterations,
        "clean_acc": clean,
        "robust_acc": robust,
    }))
}

/// Robustness sweeps over attack iterations and ε; writes two sweep CSVs.
pub fn cmd_eval(loaded: &Loaded, ckpt_path: &Path, out: &Path) -> Result<Value, LabError> {
    ensure_out(out)?;
    let checkpoint = load_matching_checkpoint(ckpt_path, &loaded.spec)?;
    let (_, val_data) = loaded.raw.data.load()?;
    let eval = loaded.raw.eval.clone().unwrap_or_default();
    let data = match eval.subset {
        Some(n) => val_data.take(n, "eval-subset"),
        None => val_data,
    };
    let seed = rng::derive_seed(loaded.train.seed, rng::stream::EVAL, 0xE7A1);
    let epsilon = loaded.train.attack.epsilon;

    let clean = model::clean_accuracy(&checkpoint.params, &checkpoint.spec, &data)?;
    let by_k = landscape::sweep_iterations(
        &checkpoint.params,
        &checkpoint.spec,
        &data,
        epsilon,
        &eval.iteration_ks,
        seed,
    )?;
    let eps_values: Vec<f64> = eval.epsilons_px.iter().map(|px| px / 255.0).collect();
    let by_eps = landscape::sweep_epsilon(
        &checkpoint.params,
        &checkpoint.spec,
        &data,
        &eps_values,
        eval.sweep_k,
        seed,
    )?;

    let k_path = out.join("sweep_iterations.csv");
    csvout::write_text(&k_path, &csvout::render_sweep(&by_k, seed))?;
    let e_path = out.join("sweep_epsilon.csv");
    csvout::write_text(&e_path, &csvout::render_sweep(&by_eps, seed))?;
    Ok(json!({
        "command": "eval",
        "sweep_iterations": k_path,
        "sweep_epsilon": e_path,
        "clean_acc": clean,
        "epsilon": epsilon,
        "iterations": by_k.points,
        "epsilons": by_eps.points,
    }))
}

/// Sample the 2-D adversarial loss surface around one validation sample.
pub fn cmd_landscape(loaded: &Loaded, ckpt_path: &Path, out: &Path) -> Result<Value, LabError> {
    ensure_out(out)?;
    let checkpoint = load_matching_checkpoint(ckpt_path, &loaded.spec)?;
    let (_, val_data) = loaded.raw.data.load()?;
    let dto = loaded.raw.landscape.clone().unwrap_or_default();
    if dto.sample_index >= val_data.len() {
        return Err(LabError::Config {
            path: "landscape.sample_index".into(),
            message: format!(
                "index {} out of range for {} validation samples",
                dto.sample_index,
                val_data.len()
            ),
        });
    }
    let (x, label) = val_data.sample(dto.sample_index);
    let epsilon = dto
        .epsilon_px
        .map(|px| px / 255.0)
        .unwrap_or(loaded.train.attack.epsilon);
    let grid = landscape::loss_landscape(
        &checkpoint.params,
        &checkpoint.spec,
        &x,
        label,
        epsilon,
        dto.n,
        loaded.train.seed,
    )?;
    let path = out.join("landscape.csv");
    csvout::write_text(&path, &csvout::render_landscape(&grid))?;
    Ok(json!({
        "command": "landscape",
        "csv": path,
        "n": grid.n,
        "epsilon": grid.epsilon,
        "sample_index": dto.sample_index,
        "error_cells": grid.error_cells.len(),
        "mean_abs_laplacian": grid.mean_abs_laplacian(),
    }))
}

/// Train the four Table-1-style cells; writes `ablation.csv`.
pub fn cmd_ablation(loaded: &Loaded, out: &Path) -> Result<Value, LabError> {
    ensure_out(out)?;
    let (train_data, val_data) = loaded.raw.data.load()?;
    let table = run_ablation(
        &loaded.train,
        &loaded.spec,
        &train_data,
        &val_data,
        &loaded.eval_attack,
    )?;
    for cell in &table.cells {
        eprintln!(
            "cell {:<24} clean {:.4}  robust {:.4}",
            cell.label, cell.clean_acc, cell.robust_acc
        );
    }
    let path = out.join("ablation.csv");
    csvout::write_text(&path, &csvout::render_ablation(&table))?;
    Ok(json!({
        "command": "ablation",
        "csv": path,
        "seed": table.seed,
        "cells": table.cells.iter().map(|c| {
            json!({"cell": c.label, "clean_acc": c.clean_acc, "robust_acc": c.robust_acc})
        }).collect::<Vec<_>>(),
    }))
}

/// Run the derivative verification suite; the report text goes to stderr.
pub fn cmd_gradcheck(inject_fault: bool) -> (Value, bool) {
    let report = gradcheck::run(inject_fault);
    eprint!("{}", report.render());
    let passed = report.passed();
    let jumps: Vec<Value> = report
        .jumps
        .iter()
        .map(|j| json!({"kind": j.kind.to_string(), "jump": j.jump}))
        .collect();
    let summary = json!({
        "command": "gradcheck",
        "passed": passed,
        "jumps": jumps,
        "worst_failure": report.worst_failure(),
    });
    (summary, passed)
}

/// Output directory helper shared by the binary.
pub fn default_out() -> PathBuf {
    PathBuf::from("out")
}
