//! Run artifacts: the run manifest, atomic file writers, full-precision
//! float formatting, and the exact CSV layouts shared by the command-line
//! tools (kept here so the column contracts are unit-testable).

use crate::config::ExperimentConfig;
use crate::diagnostics::{ModeDiagnostics, RidgeSweepReport, SpectrumReport};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// 17 significant digits — enough to round-trip any f64, so artifacts from
/// identical runs compare byte for byte.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Everything needed to reproduce and audit one tool invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// argv of the run, starting at the subcommand.
    pub invocation: Vec<String>,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    /// File names (relative to the output directory) written by the run.
    pub outputs: Vec<String>,
    /// Key scalar results, full precision, keyed by quantity name.
    pub results: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(invocation: Vec<String>, config: ExperimentConfig, threads: usize) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            seed: config.seed,
            config,
            threads,
            wall_clock_seconds: 0.0,
            outputs: Vec::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        let v = serde_json::to_value(value)
            .map_err(|e| Error::validation(format!("unserializable result {key}: {e}")))?;
        self.results.insert(key.to_string(), v);
        Ok(())
    }

    pub fn add_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json_atomic(&dir.join("manifest.json"), self)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("manifest {}: {e}", path.display())))
    }
}

/// Write-then-rename so readers never observe a half-written artifact.
pub fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(".").to_path_buf());
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::validation(format!("serialization: {e}")))?;
    text.push('\n');
    write_text_atomic(path, &text)
}

/// Per-mode CSV.
pub fn modes_csv(diag: &ModeDiagnostics) -> String {
    let mut out = String::from("mode_index,lambda_U,a_i,b_i,alpha_i,label,fracBmem\n");
    for i in 0..diag.lambda_u.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i,
            fmt_float(diag.lambda_u[i]),
            fmt_float(diag.a[i]),
            fmt_float(diag.b[i]),
            fmt_float(diag.alpha[i]),
            diag.labels[i].as_str(),
            fmt_float(diag.frac_bmem[i]),
        ));
    }
    out
}

/// Ridge-sweep CSV.
pub fn ridge_sweep_csv(report: &RidgeSweepReport) -> String {
    let mut out = String::from("gamma,median_fracBmem_gen\n");
    for (g, m) in report.grid.iter().zip(report.medians.iter()) {
        out.push_str(&format!("{},{}\n", fmt_float(*g), fmt_float(*m)));
    }
    out
}

/// Binned-density CSV (atoms are reported separately in JSON).
pub fn spectrum_csv(report: &SpectrumReport) -> String {
    let mut out = String::from("bin_left,bin_right,density\n");
    for (i, dens) in report.densities.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_float(report.bin_edges[i]),
            fmt_float(report.bin_edges[i + 1]),
            fmt_float(*dens),
        ));
    }
    out
}

/// One sample-ratio point of the overparameterization sweep.
#[derive(Debug, Clone, Serialize)]
pub struct PsiSweepRow {
    pub psi_n: f64,
    pub frac_gen_alpha_pos: f64,
    /// Undefined (no positive-α Gen mass and no Mem mass) stays undefined
    /// rather than becoming NaN.
    pub share_mem_plus: Option<f64>,
}

pub fn psi_sweep_csv(rows: &[PsiSweepRow]) -> String {
    let mut out = String::from("psi_n,frac_gen_alpha_pos,share_mem_plus\n");
    for r in rows {
        let share = match r.share_mem_plus {
            Some(v) => fmt_float(v),
            None => "undefined".to_string(),
        };
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_float(r.psi_n),
            fmt_float(r.frac_gen_alpha_pos),
            share
        ));
    }
    out
}

/// One flow-time point of the student dynamics.
#[derive(Debug, Clone, Serialize)]
pub struct DynamicsRow {
    pub tau: f64,
    pub loss_direct: f64,
    pub loss_eigen_sum: f64,
    pub total_energy: f64,
}

pub fn dynamics_csv(rows: &[DynamicsRow]) -> String {
    let mut out = String::from("tau,loss_direct,loss_eigen_sum,total_energy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(r.tau),
            fmt_float(r.loss_direct),
            fmt_float(r.loss_eigen_sum),
            fmt_float(r.total_energy),
        ));
    }
    out
}
