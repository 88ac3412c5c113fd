//! Corpus curation: ingestion, priority deduplication, outlier filtering,
//! span masking, fold construction and negative sampling.

pub mod io;
pub mod kmeans;
pub mod masking;
pub mod pca;
pub mod splits;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::helm::HelmError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("record {key} is missing label {label}")]
    MissingLabel { key: String, label: String },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("duplicate pair ({peptide}, {protein})")]
    DuplicatePair { peptide: String, protein: String },
    #[error("fold count {k} exceeds record count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("cluster count {k} exceeds point count {n}")]
    TooManyClusters { k: usize, n: usize },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("pair at index {0} has no cluster label")]
    MissingClusterLabel(usize),
    #[error(transparent)]
    Helm(#[from] HelmError),
    #[error("{0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Origin of a corpus record. Order encodes deduplication priority:
/// measured permeability data wins over structural data over bioactivity
/// data; synthetic corpora rank last.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Source {
    CycPeptMPDB,
    Propedia,
    ChEMBL,
    Synthetic,
}

impl Source {
    pub fn priority(self) -> u8 {
        match self {
            Source::CycPeptMPDB => 0,
            Source::Propedia => 1,
            Source::ChEMBL => 2,
            Source::Synthetic => 3,
        }
    }

    pub fn parse(text: &str) -> Option<Source> {
        match text {
            "CycPeptMPDB" => Some(Source::CycPeptMPDB),
            "Propedia" => Some(Source::Propedia),
            "ChEMBL" => Some(Source::ChEMBL),
            "Synthetic" => Some(Source::Synthetic),
            _ => None,
        }
    }
}

/// One curated peptide record keyed by its canonical HELM form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub key: String,
    pub helm: String,
    pub source: Source,
    #[serde(default)]
    pub labels: BTreeMap<String, f64>,
}

impl CorpusRecord {
    /// Parse the HELM string and derive the canonical key.
    pub fn from_helm(helm: impl Into<String>, source: Source) -> Result<Self, CorpusError> {
        let helm = helm.into();
        let seq = crate::helm::parse_helm(&helm)?;
        Ok(CorpusRecord {
            key: crate::helm::canonical_key(&seq),
            helm,
            source,
            labels: BTreeMap::new(),
        })
    }

    pub fn with_label(mut self, name: impl Into<String>, value: f64) -> Self {
        self.labels.insert(name.into(), value);
        self
    }
}

/// A peptide-protein pair with an optional structural signature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub peptide_key: String,
    pub protein_id: String,
    pub label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acsm: Option<Vec<f64>>,
}

impl PairRecord {
    /// Stable identifier used in split manifests.
    pub fn id(&self) -> String {
        format!("{}~{}", self.protein_id, self.peptide_key)
    }
}

/// One record per canonical key: within-source duplicates keep the first
/// occurrence, cross-source duplicates keep the highest-priority source.
/// Output preserves the input order of the surviving records. Idempotent.
pub fn deduplicate(records: &[CorpusRecord]) -> Vec<CorpusRecord> {
    let mut best: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        match best.get(r.key.as_str()) {
            None => {
                best.insert(&r.key, i);
            }
            Some(&j) => {
                // Strictly higher priority replaces; ties keep the first seen.
                if r.source.priority() < records[j].source.priority() {
                    best.insert(&r.key, i);
                }
            }
        }
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| records[i].clone()).collect()
}

/// Remove records whose `log_papp` label is at or below `threshold`
/// (inclusive). Every record must carry the label.
pub fn filter_outliers(
    records: &[CorpusRecord],
    threshold: f64,
) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let value = r
            .labels
            .get("log_papp")
            .copied()
            .ok_or_else(|| CorpusError::MissingLabel {
                key: r.key.clone(),
                label: "log_papp".to_string(),
            })?;
        if value > threshold {
            kept.push(r.clone());
        }
    }
    Ok(kept)
}

pub const OUTLIER_THRESHOLD_LOG_PAPP: f64 = -10.0;

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(helm: &str, source: Source) -> CorpusRecord {
        CorpusRecord::from_helm(helm, source).unwrap()
    }

    #[test]
    fn key_is_canonical() {
        let a = rec("PEPTIDE2{A.G}$$$$", Source::ChEMBL);
        let b = rec("PEPTIDE1{A.G}$$$$", Source::Propedia);
        assert_eq!(a.key, b.key);
    }

    #[test]
    fn cross_source_priority_wins() {
        let records = vec![
            rec("PEPTIDE1{A.G}$$$$", Source::ChEMBL),
            rec("PEPTIDE1{A.G}$$$$", Source::CycPeptMPDB),
        ];
        let out = deduplicate(&records);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, Source::CycPeptMPDB);
    }

    #[test]
    fn within_source_keeps_first_occurrence() {
        let records = vec![
            rec("PEPTIDE1{A.G}$$$$", Source::ChEMBL).with_label("tag", 1.0),
            rec("PEPTIDE1{A.G}$$$$", Source::ChEMBL).with_label("tag", 2.0),
        ];
        let out = deduplicate(&records);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].labels["tag"], 1.0);
    }

    #[test]
    fn dedup_is_idempotent() {
        let records = vec![
            rec("PEPTIDE1{A.G}$$$$", Source::ChEMBL),
            rec("PEPTIDE1{G.A}$$$$", Source::Propedia),
            rec("PEPTIDE2{A.G}$$$$", Source::CycPeptMPDB),
            rec("PEPTIDE1{C}$$$$", Source::Synthetic),
        ];
        let once = deduplicate(&records);
        let twice = deduplicate(&once);
        assert_eq!(once, twice);
        assert_eq!(once.len(), 3); // A.G collapses across numbering
    }

    #[test]
    fn outlier_threshold_is_inclusive() {
        let records = vec![
            rec("PEPTIDE1{A}$$$$", Source::CycPeptMPDB).with_label("log_papp", -10.0),
            rec("PEPTIDE1{G}$$$$", Source::CycPeptMPDB).with_label("log_papp", -9.99),
            rec("PEPTIDE1{C}$$$$", Source::CycPeptMPDB).with_label("log_papp", -4.5),
        ];
        let out = filter_outliers(&records, OUTLIER_THRESHOLD_LOG_PAPP).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|r| r.labels["log_papp"] > -10.0));
    }

    #[test]
    fn missing_label_is_an_error() {
        let records = vec![rec("PEPTIDE1{A}$$$$", Source::CycPeptMPDB)];
        assert!(matches!(
            filter_outliers(&records, -10.0),
            Err(CorpusError::MissingLabel { .. })
        ));
    }
}
