//! Synthetic HELM corpora drawn from the accepted grammar.
//!
//! Used for desk-scale pre-training runs and randomized round-trip checks.

use crate::helm::{Connection, HelmSequence, Monomer, Polymer, PolymerKind, RGroup};
use crate::rng::Rng;

const NATURAL: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";
const CODED: &[&str] = &["meA", "meG", "meF", "dA", "dL", "Nle", "Aib", "Sar", "hyp"];

/// Knobs for the random-sequence generator.
#[derive(Debug, Clone)]
pub struct SyntheticParams {
    pub max_polymers: usize,
    pub max_monomers: usize,
    pub coded_monomer_prob: f64,
    pub connection_prob: f64,
    pub version_prob: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            max_polymers: 3,
            max_monomers: 8,
            coded_monomer_prob: 0.25,
            connection_prob: 0.7,
            version_prob: 0.5,
        }
    }
}

fn random_monomer(rng: &mut Rng, params: &SyntheticParams) -> Monomer {
    if rng.bernoulli(params.coded_monomer_prob) {
        Monomer::coded(CODED[rng.below(CODED.len())])
    } else {
        Monomer::natural(NATURAL[rng.below(NATURAL.len())] as char)
    }
}

fn random_rgroup(rng: &mut Rng) -> RGroup {
    match rng.below(3) {
        0 => RGroup::R1,
        1 => RGroup::R2,
        _ => RGroup::R3,
    }
}

/// Draw a random valid `HelmSequence`: 1..=max_polymers peptide/chem polymers
/// and a connection table free of duplicates and dangling references.
pub fn random_sequence(rng: &mut Rng, params: &SyntheticParams) -> HelmSequence {
    let n_polymers = 1 + rng.below(params.max_polymers);
    let mut peptide_no = 0;
    let mut chem_no = 0;
    let polymers: Vec<Polymer> = (0..n_polymers)
        .map(|_| {
            // Chem polymers are rare and single-monomer.
            let kind = if rng.bernoulli(0.15) {
                PolymerKind::Chem
            } else {
                PolymerKind::Peptide
            };
            let (number, len) = match kind {
                PolymerKind::Peptide => {
                    peptide_no += 1;
                    (peptide_no, 1 + rng.below(params.max_monomers))
                }
                PolymerKind::Chem => {
                    chem_no += 1;
                    (chem_no, 1)
                }
            };
            Polymer {
                kind,
                number,
                monomers: (0..len).map(|_| random_monomer(rng, params)).collect(),
            }
        })
        .collect();

    let mut connections: Vec<Connection> = Vec::new();
    let mut attempts = 0;
    while rng.bernoulli(params.connection_prob) && attempts < 8 {
        attempts += 1;
        let sp = &polymers[rng.below(polymers.len())];
        let tp = &polymers[rng.below(polymers.len())];
        let candidate = Connection {
            source_polymer: sp.id(),
            target_polymer: tp.id(),
            source_index: 1 + rng.below(sp.monomers.len()),
            source_rgroup: random_rgroup(rng),
            target_index: 1 + rng.below(tp.monomers.len()),
            target_rgroup: random_rgroup(rng),
        };
        connections.push(candidate);
        if crate::helm::has_duplicate_connection(&connections) {
            connections.pop();
        }
    }

    let version_tag = if rng.bernoulli(params.version_prob) {
        Some("V2.0".to_string())
    } else {
        None
    };

    HelmSequence {
        polymers,
        connections,
        groups: String::new(),
        annotations: String::new(),
        version_tag,
    }
}

/// A corpus of `n` random serialized HELM strings.
pub fn random_corpus(seed: u64, n: usize, params: &SyntheticParams) -> Vec<String> {
    let mut rng = Rng::seed_from(seed);
    (0..n)
        .map(|_| crate::helm::serialize_helm(&random_sequence(&mut rng, params)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::helm::parse_helm;

    #[test]
    fn generated_sequences_parse_and_round_trip() {
        let mut rng = Rng::seed_from(99);
        let params = SyntheticParams::default();
        for _ in 0..100 {
            let seq = random_sequence(&mut rng, &params);
            let text = crate::helm::serialize_helm(&seq);
            let parsed = parse_helm(&text).expect("generator output must parse");
            assert_eq!(parsed, seq);
        }
    }
}
