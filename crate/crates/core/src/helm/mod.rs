//! HELM line-notation support: parsing, serialization, canonicalization and
//! topology classification.
//!
//! The accepted grammar subset covers simple PEPTIDE/CHEM polymers plus an
//! explicit connection table:
//!
//! ```text
//! SimplePolymer ('|' SimplePolymer)* '$' ConnectionList '$' Groups '$' Annotations '$' [Version]
//! SimplePolymer = ID '{' Monomer ('.' Monomer)* '}'
//! Monomer       = uppercase letter | '[' code ']'
//! Connection    = srcId ',' dstId ',' srcIdx ':' Rk '-' dstIdx ':' Rk
//! ```
//!
//! Group and annotation sections are preserved verbatim but not interpreted.

mod parse;

pub use parse::parse_helm;

use std::fmt;

/// Errors produced while parsing or validating HELM strings.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HelmError {
    #[error("syntax error at byte {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error("dangling connection: {detail}")]
    DanglingConnection { detail: String },
    #[error("duplicate polymer id {id}")]
    DuplicatePolymerId { id: String },
    #[error("duplicate connection between {a} and {b}")]
    DuplicateConnection { a: String, b: String },
}

/// A single monomer unit. Natural amino acids are single uppercase letters;
/// modified residues carry a bracketed multi-character code such as `meA`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomer {
    pub symbol: String,
    pub bracketed: bool,
}

impl Monomer {
    pub fn natural(letter: char) -> Self {
        Monomer {
            symbol: letter.to_string(),
            bracketed: false,
        }
    }

    pub fn coded(symbol: impl Into<String>) -> Self {
        Monomer {
            symbol: symbol.into(),
            bracketed: true,
        }
    }
}

impl fmt::Display for Monomer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bracketed {
            write!(f, "[{}]", self.symbol)
        } else {
            f.write_str(&self.symbol)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolymerKind {
    Peptide,
    Chem,
}

impl PolymerKind {
    pub fn prefix(self) -> &'static str {
        match self {
            PolymerKind::Peptide => "PEPTIDE",
            PolymerKind::Chem => "CHEM",
        }
    }
}

/// A simple polymer: a kind, a 1-based number and an ordered monomer list.
/// The polymer id is the kind prefix followed by the number, e.g. `PEPTIDE1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Polymer {
    pub kind: PolymerKind,
    pub number: u32,
    pub monomers: Vec<Monomer>,
}

impl Polymer {
    pub fn id(&self) -> String {
        format!("{}{}", self.kind.prefix(), self.number)
    }
}

/// Monomer attachment points. R1/R2 are backbone termini, R3 a side chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RGroup {
    R1,
    R2,
    R3,
}

impl RGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            RGroup::R1 => "R1",
            RGroup::R2 => "R2",
            RGroup::R3 => "R3",
        }
    }
}

/// One entry of the connection table. Indices are 1-based monomer positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Connection {
    pub source_polymer: String,
    pub target_polymer: String,
    pub source_index: usize,
    pub source_rgroup: RGroup,
    pub target_index: usize,
    pub target_rgroup: RGroup,
}

impl Connection {
    /// Endpoint pair with the lexicographically smaller endpoint first.
    fn unordered_key(&self) -> ((String, usize, RGroup), (String, usize, RGroup)) {
        let a = (
            self.source_polymer.clone(),
            self.source_index,
            self.source_rgroup,
        );
        let b = (
            self.target_polymer.clone(),
            self.target_index,
            self.target_rgroup,
        );
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn is_intramolecular(&self) -> bool {
        self.source_polymer == self.target_polymer
    }
}

impl fmt::Display for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{}:{}-{}:{}",
            self.source_polymer,
            self.target_polymer,
            self.source_index,
            self.source_rgroup.as_str(),
            self.target_index,
            self.target_rgroup.as_str()
        )
    }
}

/// A parsed HELM string: polymer list, connection table and the verbatim
/// trailing sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelmSequence {
    pub polymers: Vec<Polymer>,
    pub connections: Vec<Connection>,
    /// Polymer-group section, preserved verbatim.
    pub groups: String,
    /// Annotation section, preserved verbatim.
    pub annotations: String,
    pub version_tag: Option<String>,
}

impl HelmSequence {
    pub fn polymer(&self, id: &str) -> Option<&Polymer> {
        self.polymers.iter().find(|p| p.id() == id)
    }

    pub fn n_monomers(&self) -> usize {
        self.polymers.iter().map(|p| p.monomers.len()).sum()
    }
}

/// Topology class of a sequence per its intramolecular connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureType {
    Cyclic,
    Lariat,
    Linear,
}

impl fmt::Display for StructureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StructureType::Cyclic => "cyclic",
            StructureType::Lariat => "lariat",
            StructureType::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructureSummary {
    pub structure_type: StructureType,
    /// Count of intramolecular connection pairs.
    pub n_rings: usize,
}

/// Serialize a sequence in the accepted grammar subset. Parsing the result
/// reproduces the input value exactly.
pub fn serialize_helm(seq: &HelmSequence) -> String {
    let polymers = seq
        .polymers
        .iter()
        .map(|p| {
            let monomers = p
                .monomers
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(".");
            format!("{}{{{}}}", p.id(), monomers)
        })
        .collect::<Vec<_>>()
        .join("|");
    let connections = seq
        .connections
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("|");
    format!(
        "{}${}${}${}${}",
        polymers,
        connections,
        seq.groups,
        seq.annotations,
        seq.version_tag.as_deref().unwrap_or("")
    )
}

/// Number of intramolecular connections and the cyclic/lariat/linear class:
/// linear when there is none, lariat when any intramolecular connection uses
/// R3 at either endpoint, cyclic otherwise.
pub fn classify_structure(seq: &HelmSequence) -> StructureSummary {
    let intra: Vec<&Connection> = seq
        .connections
        .iter()
        .filter(|c| c.is_intramolecular())
        .collect();
    let n_rings = intra.len();
    let structure_type = if n_rings == 0 {
        StructureType::Linear
    } else if intra
        .iter()
        .any(|c| c.source_rgroup == RGroup::R3 || c.target_rgroup == RGroup::R3)
    {
        StructureType::Lariat
    } else {
        StructureType::Cyclic
    };
    StructureSummary {
        structure_type,
        n_rings,
    }
}

/// Canonical form: polymers renumbered by first appearance (per kind), each
/// connection's endpoints ordered with the lexicographically smaller endpoint
/// as source, and the connection list sorted.
pub fn canonicalize(seq: &HelmSequence) -> HelmSequence {
    let mut peptide_count = 0u32;
    let mut chem_count = 0u32;
    let mut id_map: Vec<(String, String)> = Vec::with_capacity(seq.polymers.len());
    let polymers: Vec<Polymer> = seq
        .polymers
        .iter()
        .map(|p| {
            let number = match p.kind {
                PolymerKind::Peptide => {
                    peptide_count += 1;
                    peptide_count
                }
                PolymerKind::Chem => {
                    chem_count += 1;
                    chem_count
                }
            };
            let renumbered = Polymer {
                kind: p.kind,
                number,
                monomers: p.monomers.clone(),
            };
            id_map.push((p.id(), renumbered.id()));
            renumbered
        })
        .collect();

    let rename = |id: &str| -> String {
        id_map
            .iter()
            .find(|(old, _)| old == id)
            .map(|(_, new)| new.clone())
            .expect("connection validated against polymer list")
    };

    let mut connections: Vec<Connection> = seq
        .connections
        .iter()
        .map(|c| {
            let mapped = Connection {
                source_polymer: rename(&c.source_polymer),
                target_polymer: rename(&c.target_polymer),
                ..c.clone()
            };
            let src = (
                mapped.source_polymer.clone(),
                mapped.source_index,
                mapped.source_rgroup,
            );
            let dst = (
                mapped.target_polymer.clone(),
                mapped.target_index,
                mapped.target_rgroup,
            );
            if src <= dst {
                mapped
            } else {
                Connection {
                    source_polymer: mapped.target_polymer,
                    source_index: mapped.target_index,
                    source_rgroup: mapped.target_rgroup,
                    target_polymer: mapped.source_polymer,
                    target_index: mapped.source_index,
                    target_rgroup: mapped.source_rgroup,
                }
            }
        })
        .collect();
    let sort_key = |c: &Connection| {
        (
            c.source_polymer.clone(),
            c.source_index,
            c.target_polymer.clone(),
            c.target_index,
            c.source_rgroup,
            c.target_rgroup,
        )
    };
    connections.sort_by_key(sort_key);

    HelmSequence {
        polymers,
        connections,
        groups: seq.groups.clone(),
        annotations: seq.annotations.clone(),
        version_tag: seq.version_tag.clone(),
    }
}

/// Deduplication key: the serialization of the canonical form. Invariant
/// under polymer renumbering and connection-list ordering.
pub fn canonical_key(seq: &HelmSequence) -> String {
    serialize_helm(&canonicalize(seq))
}

/// True if the list contains two connections with the same unordered endpoint
/// pair.
pub fn has_duplicate_connection(connections: &[Connection]) -> bool {
    find_duplicate_connection(connections).is_some()
}

pub(crate) fn find_duplicate_connection(
    connections: &[Connection],
) -> Option<(&Connection, &Connection)> {
    for (i, a) in connections.iter().enumerate() {
        for b in &connections[i + 1..] {
            if a.unordered_key() == b.unordered_key() {
                return Some((a, b));
            }
        }
    }
    None
}
