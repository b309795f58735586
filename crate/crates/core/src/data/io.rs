use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClientShard, Dataset};
use crate::error::{FedPaeError, Result};
use crate::scalar::Scalar;

pub fn write_csv<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for j in 0..dataset.n_features() {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for (row, label) in dataset.rows() {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    fs::write(path, out).map_err(|e| FedPaeError::io(path.display().to_string(), e))
}

/// Reads a CSV with header `f0,..,f{d-1},label`. The class count is the
/// largest label plus one (at least two).
pub fn read_csv<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let text = fs::read_to_string(path).map_err(|e| FedPaeError::io(path.display().to_string(), e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| FedPaeError::input("CSV file is empty"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let n_features = columns.len().saturating_sub(1);
    let expected: Vec<String> = (0..n_features).map(|j| format!("f{j}")).collect();
    if columns.last() != Some(&"label") || columns[..n_features] != expected[..] {
        return Err(FedPaeError::input(format!(
            "CSV header must be f0..f{{d-1}},label; got `{header}`"
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_features + 1 {
            return Err(FedPaeError::input(format!(
                "CSV row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                n_features + 1
            )));
        }
        for f in &fields[..n_features] {
            let v: f64 = f
                .parse()
                .map_err(|_| FedPaeError::input(format!("bad number `{f}` on row {}", lineno + 2)))?;
            features.push(T::lit(v));
        }
        let label: usize = fields[n_features]
            .parse()
            .map_err(|_| FedPaeError::input(format!("bad label on row {}", lineno + 2)))?;
        labels.push(label);
    }
    let n_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, labels, n_features, n_classes)
}

/// Binary cache: little-endian `u32 n_samples, u32 n_features, u32 n_classes`,
/// row-major `f32` features, then `u16` labels.
pub fn encode_dataset_cache<T: Scalar>(dataset: &Dataset<T>) -> Result<Vec<u8>> {
    if dataset.n_classes() > usize::from(u16::MAX) + 1 {
        return Err(FedPaeError::input("too many classes for u16 labels"));
    }
    let mut out = Vec::with_capacity(12 + dataset.features().len() * 4 + dataset.len() * 2);
    for n in [dataset.len(), dataset.n_features(), dataset.n_classes()] {
        let n = u32::try_from(n).map_err(|_| FedPaeError::input("dataset too large for cache"))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    for v in dataset.features() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    for &l in dataset.labels() {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset_cache<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(i * 4..i * 4 + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| FedPaeError::input("dataset cache truncated in header"))
    };
    let (n, d, c) = (word(0)?, word(1)?, word(2)?);
    let feat_end = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(12))
        .ok_or_else(|| FedPaeError::input("dataset cache header overflows"))?;
    let end = feat_end + n * 2;
    if bytes.len() != end {
        return Err(FedPaeError::input(format!(
            "dataset cache has {} bytes, header implies {end}",
            bytes.len()
        )));
    }
    let features = bytes[12..feat_end]
        .chunks_exact(4)
        .map(|b| T::lit(f64::from(f32::from_le_bytes(b.try_into().unwrap()))))
        .collect();
    let labels = bytes[feat_end..]
        .chunks_exact(2)
        .map(|b| usize::from(u16::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Dataset::new(features, labels, d, c)
}

pub fn write_dataset_cache<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> Result<()> {
    let bytes = encode_dataset_cache(dataset)?;
    fs::write(path, bytes).map_err(|e| FedPaeError::io(path.display().to_string(), e))
}

pub fn read_dataset_cache<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let bytes = fs::read(path).map_err(|e| FedPaeError::io(path.display().to_string(), e))?;
    decode_dataset_cache(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFileClient {
    pub id: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// JSON partition document: `{"alpha", "seed", "clients": [{"id", "train", "val", "test"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub alpha: f64,
    pub seed: u64,
    pub clients: Vec<PartitionFileClient>,
}

impl PartitionFile {
    pub fn from_shards(alpha: f64, seed: u64, shards: &[ClientShard]) -> Self {
        PartitionFile {
            alpha,
            seed,
            clients: shards
                .iter()
                .map(|s| PartitionFileClient {
                    id: s.client_id,
                    train: s.train.clone(),
                    val: s.val.clone(),
                    test: s.test.clone(),
                })
                .collect(),
        }
    }

    pub fn shards(&self) -> Vec<ClientShard> {
        self.clients
            .iter()
            .map(|c| ClientShard {
                client_id: c.id,
                train: c.train.clone(),
                val: c.val.clone(),
                test: c.test.clone(),
            })
            .collect()
    }
}

pub fn write_partition_json(file: &PartitionFile, path: &Path) -> Result<()> {
    let mut text =
        serde_json::to_string(file).map_err(|e| FedPaeError::input(format!("serializing partition: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FedPaeError::io(path.display().to_string(), e))
}

pub fn read_partition_json(path: &Path) -> Result<PartitionFile> {
    let text = fs::read_to_string(path).map_err(|e| FedPaeError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| FedPaeError::input(format!("partition JSON: {e}")))
}
