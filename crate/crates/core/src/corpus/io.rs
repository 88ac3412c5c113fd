//! File ingestion: corpus records from CSV or JSON-lines, pair records and
//! embedding vectors from JSON-lines.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{CorpusError, CorpusRecord, PairRecord, Source};

fn io_err(e: impl std::fmt::Display) -> CorpusError {
    CorpusError::Io(e.to_string())
}

#[derive(Debug, Deserialize)]
struct RawCorpusRecord {
    helm: String,
    source: String,
    #[serde(default)]
    log_papp: Option<f64>,
    #[serde(default)]
    labels: BTreeMap<String, f64>,
}

fn finish_record(raw: RawCorpusRecord, line: usize) -> Result<CorpusRecord, CorpusError> {
    let source = Source::parse(&raw.source)
        .ok_or_else(|| CorpusError::Format(format!("line {line}: unknown source {}", raw.source)))?;
    let mut record = CorpusRecord::from_helm(raw.helm, source)?;
    record.labels = raw.labels;
    if let Some(v) = raw.log_papp {
        record.labels.insert("log_papp".to_string(), v);
    }
    Ok(record)
}

/// Read corpus records from JSON-lines, one object per line:
/// `{"helm": ..., "source": ..., "log_papp"?: ..., "labels"?: {...}}`.
pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCorpusRecord = serde_json::from_str(line)
            .map_err(|e| CorpusError::Format(format!("line {}: {e}", i + 1)))?;
        records.push(finish_record(raw, i + 1)?);
    }
    Ok(records)
}

/// Read corpus records from CSV with a header containing at least
/// `helm,source` and optionally `log_papp`.
pub fn read_corpus_csv(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut reader = csv::Reader::from_path(path).map_err(io_err)?;
    let headers = reader.headers().map_err(io_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let helm_col = col("helm")
        .ok_or_else(|| CorpusError::Format("missing `helm` column".to_string()))?;
    let source_col = col("source")
        .ok_or_else(|| CorpusError::Format("missing `source` column".to_string()))?;
    let papp_col = col("log_papp");

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(io_err)?;
        let mut raw = RawCorpusRecord {
            helm: row
                .get(helm_col)
                .ok_or_else(|| CorpusError::Format(format!("row {}: missing helm", i + 1)))?
                .to_string(),
            source: row.get(source_col).unwrap_or("").to_string(),
            log_papp: None,
            labels: BTreeMap::new(),
        };
        if let Some(c) = papp_col {
            if let Some(cell) = row.get(c) {
                if !cell.is_empty() {
                    raw.log_papp = Some(cell.parse().map_err(|_| {
                        CorpusError::Format(format!("row {}: bad log_papp `{cell}`", i + 1))
                    })?);
                }
            }
        }
        records.push(finish_record(raw, i + 1)?);
    }
    Ok(records)
}

/// Dispatch on extension: `.csv` vs JSON-lines otherwise.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_corpus_csv(path),
        _ => read_corpus_jsonl(path),
    }
}

/// Plain text, one HELM string per line.
pub fn read_helm_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err)?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

#[derive(Debug, Deserialize)]
struct RawPair {
    peptide_helm: String,
    protein_id: String,
    label: u8,
    #[serde(default)]
    acsm: Option<Vec<f64>>,
}

/// Read pairs from JSON-lines:
/// `{"peptide_helm": ..., "protein_id": ..., "label": 0|1, "acsm"?: [...]}`.
/// Peptide keys are canonicalized from the HELM string.
pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<PairRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPair = serde_json::from_str(line)
            .map_err(|e| CorpusError::Format(format!("line {}: {e}", i + 1)))?;
        let seq = crate::helm::parse_helm(&raw.peptide_helm)?;
        pairs.push(PairRecord {
            peptide_key: crate::helm::canonical_key(&seq),
            protein_id: raw.protein_id,
            label: raw.label != 0,
            acsm: raw.acsm,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Deserialize)]
struct RawEmbedding {
    id: String,
    vector: Vec<f64>,
}

/// Read id -> vector maps (protein or baseline embeddings) from JSON-lines.
pub fn read_embeddings_jsonl(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEmbedding = serde_json::from_str(line)
            .map_err(|e| CorpusError::Format(format!("line {}: {e}", i + 1)))?;
        if out.insert(raw.id.clone(), raw.vector).is_some() {
            return Err(CorpusError::DuplicateId(raw.id));
        }
    }
    Ok(out)
}
