//! On-disk formats: CSV datasets, network checkpoints with a parameter
//! sidecar, and JSON/CSV reports.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use holdpp_core::attack::AttackReport;
use holdpp_core::data::Dataset;
use holdpp_core::privacy::PrivacyReport;
use holdpp_core::{HoldParams, ScoreModel, ScoreNetwork};
use serde::Serialize;

/// Column names `x0, x1, …` for a `d`-dimensional dataset.
pub fn column_names(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(column_names(data.dim()))?;
    for p in data.iter() {
        w.write_record(p.iter().map(|v| format_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV with a one-line header; the header fixes the dimension.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let dim = r.headers()?.len();
    if dim == 0 {
        bail!("{}: empty header", path.display());
    }
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        if rec.len() != dim {
            bail!("{}: row {} has {} fields, expected {dim}", path.display(), line + 2, rec.len());
        }
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{}: row {}: bad number {field:?}", path.display(), line + 2))?;
            values.push(v);
        }
    }
    Ok(Dataset::new(dim, values)?)
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, net: &ScoreNetwork) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, net.to_checkpoint_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn load_checkpoint(path: &Path, expected_state_len: Option<usize>) -> Result<ScoreNetwork> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ScoreNetwork::from_checkpoint_bytes(&bytes, expected_state_len).with_context(|| format!("loading {}", path.display()))
}

/// `model.ckpt` → `model.params.json`
pub fn params_sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("params.json")
}

/// Writes the network checkpoint and the process parameters next to it.
pub fn save_model(path: &Path, model: &ScoreModel) -> Result<()> {
    save_checkpoint(path, model.net())?;
    write_json(&params_sidecar(path), model.params())
}

pub fn load_model(path: &Path) -> Result<ScoreModel> {
    let sidecar = params_sidecar(path);
    let text = fs::read_to_string(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let params: HoldParams = serde_json::from_str(&text).with_context(|| format!("parsing {}", sidecar.display()))?;
    let net = load_checkpoint(path, Some(params.state_len()))?;
    Ok(ScoreModel::new(net, params)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv(path: &Path, report: &AttackReport) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fpr", "tpr"])?;
    for (f, t) in &report.roc {
        w.write_record([format_f64(*f), format_f64(*t)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_privacy_csv(path: &Path, report: &PrivacyReport) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "delta_f", "epsilon"])?;
    for (t, df) in report.t_grid.iter().zip(&report.delta_f) {
        w.write_record([format_f64(*t), format_f64(*df), format_f64(report.alpha * df / 2.0)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format_f64(*l)])?;
    }
    w.flush()?;
    Ok(())
}
