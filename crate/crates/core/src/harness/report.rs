//! Report files. Every number is written with 6 significant digits and
//! every file is written to a temporary name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::run::{BenchSnapshot, ExperimentOutcome, ExperimentReport};
use crate::error::{FedPaeError, Result};
use crate::network::codec::{decode_frame, decode_predictions, encode_message, encode_predictions, PredictionsPayload};
use crate::network::{Message, MessageType};
use crate::scalar::{round_sig, Scalar};
use crate::selection::{ModelDescriptor, PredictionMatrix};

pub const RESULTS_JSON: &str = "results.json";

/// Writes `bytes` to `path` via a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| FedPaeError::input(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| FedPaeError::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        FedPaeError::io(path.display().to_string(), e)
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FedPaeError::io(dir.display().to_string(), e))
}

/// Rounds every non-integer number in `v` to 6 significant digits.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

pub fn report_json(report: &ExperimentReport) -> String {
    let mut v = serde_json::to_value(report).expect("report serializes");
    round_json(&mut v);
    serde_json::to_string_pretty(&v).expect("json value serializes") + "\n"
}

fn num(x: f64) -> String {
    format!("{}", round_sig(x))
}

/// Method x alpha grid of mean test accuracy and its interval.
pub fn results_csv(reports: &[&ExperimentReport]) -> String {
    let mut out = String::from("method,alpha,master_seed,n_clients,mean,ci95,sd\n");
    for r in reports {
        for m in &r.methods {
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                m.method.name(),
                num(r.alpha),
                r.master_seed,
                m.summary.n,
                num(m.summary.mean),
                num(m.summary.ci95),
                num(m.summary.sd)
            );
        }
    }
    out
}

pub fn relative_change_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("client,method,relative_change\n");
    for row in &report.relative_change {
        let v = row.relative_change.map(num).unwrap_or_default();
        out += &format!("{},{},{}\n", row.client, row.method.name(), v);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub client: usize,
    pub n_classes: usize,
    pub labels: Vec<usize>,
    pub models: Vec<ModelDescriptor>,
    pub chosen_mask: String,
    pub val_accuracy: f64,
}

pub const BENCH_MANIFEST: &str = "bench.json";
pub const BENCH_PREDICTIONS: &str = "predictions.bin";

/// Writes `bench.json` plus one PREDICTIONS frame per model.
pub fn write_bench_dir<T: Scalar>(dir: &Path, bench: &BenchSnapshot<T>) -> Result<()> {
    create_dir(dir)?;
    let manifest = BenchManifest {
        client: bench.client,
        n_classes: bench.matrix.n_classes(),
        labels: bench.matrix.labels().to_vec(),
        models: bench.descriptors.clone(),
        chosen_mask: bench.chosen_mask.to_string(),
        val_accuracy: bench.val_accuracy,
    };
    let mut v = serde_json::to_value(&manifest).expect("manifest serializes");
    round_json(&mut v);
    write_atomic(
        &dir.join(BENCH_MANIFEST),
        (serde_json::to_string_pretty(&v).expect("json") + "\n").as_bytes(),
    )?;
    let mut frames = Vec::new();
    for (j, d) in bench.descriptors.iter().enumerate() {
        let payload = encode_predictions(&PredictionsPayload {
            id: d.id,
            architecture: d.architecture.clone(),
            n_classes: bench.matrix.n_classes(),
            column: bench.matrix.column(j).to_vec(),
        })?;
        let m = Message::new(
            MessageType::Predictions,
            d.id.origin_client,
            bench.client as u32,
            payload,
        );
        frames.extend(encode_message(&m)?);
    }
    write_atomic(&dir.join(BENCH_PREDICTIONS), &frames)
}

pub fn read_bench_dir<T: Scalar>(dir: &Path) -> Result<(BenchManifest, PredictionMatrix<T>)> {
    let path = dir.join(BENCH_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| FedPaeError::io(path.display().to_string(), e))?;
    let manifest: BenchManifest =
        serde_json::from_str(&text).map_err(|e| FedPaeError::input(format!("{}: {e}", path.display())))?;
    let path = dir.join(BENCH_PREDICTIONS);
    let bytes = fs::read(&path).map_err(|e| FedPaeError::io(path.display().to_string(), e))?;
    let mut at = 0;
    let mut columns = Vec::with_capacity(manifest.models.len());
    for d in &manifest.models {
        let (m, used) = decode_frame(&bytes[at..]).map_err(|e| e.context(path.display().to_string()))?;
        at += used;
        let p: PredictionsPayload<T> = decode_predictions(&m.payload)?;
        if p.id != d.id {
            return Err(FedPaeError::Integrity {
                model_id: d.id.to_string(),
                reason: format!("predictions file holds {} at this position", p.id),
            });
        }
        columns.push(p.column);
    }
    if at != bytes.len() {
        return Err(FedPaeError::input(format!("{}: trailing bytes", path.display())));
    }
    let matrix = PredictionMatrix::from_columns(columns, manifest.labels.clone(), manifest.n_classes)?;
    Ok((manifest, matrix))
}

/// Writes all artifacts of one run into `dir`.
pub fn emit_report<T: Scalar>(outcome: &ExperimentOutcome<T>, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let report = &outcome.report;
    write_atomic(&dir.join(RESULTS_JSON), report_json(report).as_bytes())?;
    write_atomic(&dir.join("results.csv"), results_csv(&[report]).as_bytes())?;
    write_atomic(&dir.join("relative_change.csv"), relative_change_csv(report).as_bytes())?;
    write_atomic(&dir.join("trace.jsonl"), outcome.trace_jsonl.as_bytes())?;
    let pareto = dir.join("pareto");
    create_dir(&pareto)?;
    for (c, lines) in outcome.pareto_jsonl.iter().enumerate() {
        write_atomic(&pareto.join(format!("client_{c}.jsonl")), lines.as_bytes())?;
    }
    for bench in &outcome.benches {
        write_bench_dir(&dir.join(format!("client_{}", bench.client)), bench)?;
    }
    let timing = format!("{{\"runtime_seconds\": {}}}\n", num(outcome.runtime_seconds));
    write_atomic(&dir.join("timing.json"), timing.as_bytes())
}

/// Writes each run into its own subdirectory and a combined grid at the top.
pub fn emit_sweep<T: Scalar>(outcomes: &[(String, ExperimentOutcome<T>)], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (name, outcome) in outcomes {
        emit_report(outcome, &dir.join(name))?;
    }
    let reports: Vec<&ExperimentReport> = outcomes.iter().map(|(_, o)| &o.report).collect();
    write_atomic(&dir.join("results.csv"), results_csv(&reports).as_bytes())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| FedPaeError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| FedPaeError::input(format!("{}: {e}", path.display())))
}

/// `results.json` in `dir`, or in each immediate subdirectory, sorted.
pub fn find_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    let direct = dir.join(RESULTS_JSON);
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let entries = fs::read_dir(dir).map_err(|e| FedPaeError::io(dir.display().to_string(), e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join(RESULTS_JSON))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(FedPaeError::input(format!("no {RESULTS_JSON} under {}", dir.display())));
    }
    Ok(found)
}
