//! Dataset fold construction: k-fold with held-out validation, pair-grouped
//! random splitting, constrained cluster-based splitting and negative
//! sampling for pair classification.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::kmeans::constrained_group;
use super::{CorpusError, PairRecord};
use crate::linalg::Mat;
use crate::rng::Rng;

/// Role assignment of one cross-validation fold. Ids are canonical record
/// keys (or `protein~peptide` pair ids); `dropped` lists pairs removed to
/// satisfy overlap guarantees.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldRoles {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub fold_count: usize,
    pub folds: Vec<FoldRoles>,
    /// Union of per-fold drops.
    pub dropped: Vec<String>,
}

impl DatasetSplit {
    fn from_folds(folds: Vec<FoldRoles>) -> Self {
        let mut dropped: Vec<String> = folds.iter().flat_map(|f| f.dropped.clone()).collect();
        dropped.sort();
        dropped.dedup();
        DatasetSplit {
            fold_count: folds.len(),
            folds,
            dropped,
        }
    }
}

/// Extra diagnostics for the cluster-based split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSplitReport {
    /// Pair weight of each fold's test cluster group (before drops).
    pub fold_weights: Vec<f64>,
    /// Max |weight - mean| / mean over folds.
    pub max_weight_deviation: f64,
    /// True when the constrained assignment failed and the greedy
    /// largest-first balancing fallback was used.
    pub constrained_fallback: bool,
    pub dropped_per_fold: Vec<usize>,
}

fn unique_ids(ids: &[String]) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(CorpusError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// Deterministic base partition: ids sorted, then shuffled by seed, then
/// dealt round-robin into k test chunks.
fn test_chunks(ids: &[String], k: usize, rng: &mut Rng) -> Vec<Vec<String>> {
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    rng.shuffle(&mut sorted);
    let mut chunks = vec![Vec::new(); k];
    for (i, id) in sorted.into_iter().enumerate() {
        chunks[i % k].push(id);
    }
    chunks
}

/// k-fold split: each fold holds out 1/k of the records for testing and
/// splits the remainder so validation is `val_fraction` of the total.
/// Records are sorted by id before the seeded shuffle, so input order never
/// changes the outcome.
pub fn make_kfold_splits(
    ids: &[String],
    k: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let n = ids.len();
    if k == 0 || k > n {
        return Err(CorpusError::KTooLarge { k, n });
    }
    unique_ids(ids)?;
    let mut rng = Rng::seed_from(seed);
    let chunks = test_chunks(ids, k, &mut rng);
    let n_val = ((val_fraction * n as f64).round() as usize).min(n);

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test = chunks[f].clone();
        let mut rest: Vec<String> = (0..k)
            .filter(|&g| g != f)
            .flat_map(|g| chunks[g].iter().cloned())
            .collect();
        let mut fold_rng = rng.derive(f as u64 + 1);
        fold_rng.shuffle(&mut rest);
        let n_val = n_val.min(rest.len());
        let val: Vec<String> = rest[..n_val].to_vec();
        let train: Vec<String> = rest[n_val..].to_vec();
        folds.push(FoldRoles {
            train,
            val,
            test,
            dropped: Vec::new(),
        });
    }
    Ok(DatasetSplit::from_folds(folds))
}

/// Pair-grouped random split: identical mechanics to `make_kfold_splits`
/// over pair ids, guaranteeing zero pair overlap across fold test sets.
pub fn make_random_pair_split(
    pairs: &[PairRecord],
    k: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    check_unique_pairs(pairs)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.id()).collect();
    make_kfold_splits(&ids, k, val_fraction, seed)
}

fn check_unique_pairs(pairs: &[PairRecord]) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    for p in pairs {
        if !seen.insert((p.peptide_key.as_str(), p.protein_id.as_str())) {
            return Err(CorpusError::DuplicatePair {
                peptide: p.peptide_key.clone(),
                protein: p.protein_id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSample {
    pub negatives: Vec<PairRecord>,
    /// True when the candidate space ran out before reaching the ratio.
    pub saturated: bool,
}

/// Sample `ratio * |positives|` negative pairs by random pairing over the
/// given peptide/protein pools, excluding known positives and duplicates.
/// When the pool saturates, every remaining candidate is returned and the
/// result is flagged.
pub fn sample_negatives_with_pools(
    positives: &[PairRecord],
    peptides: &[String],
    proteins: &[String],
    ratio: usize,
    seed: u64,
) -> NegativeSample {
    let mut peptides: Vec<String> = peptides.to_vec();
    peptides.sort();
    peptides.dedup();
    let mut proteins: Vec<String> = proteins.to_vec();
    proteins.sort();
    proteins.dedup();

    let positive_set: BTreeSet<(String, String)> = positives
        .iter()
        .map(|p| (p.peptide_key.clone(), p.protein_id.clone()))
        .collect();
    let in_pool = |pair: &(String, String)| {
        peptides.binary_search(&pair.0).is_ok() && proteins.binary_search(&pair.1).is_ok()
    };
    let excluded = positive_set.iter().filter(|p| in_pool(p)).count();
    let universe = peptides.len() * proteins.len();
    let available = universe.saturating_sub(excluded);
    let target = ratio * positives.len();
    let want = target.min(available);

    let mut rng = Rng::seed_from(seed);
    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut order: Vec<(usize, usize)> = Vec::with_capacity(want);
    if want * 2 >= available {
        // Dense regime: enumerate candidates and take a shuffled prefix.
        let mut candidates: Vec<(usize, usize)> = Vec::with_capacity(available);
        for (i, pep) in peptides.iter().enumerate() {
            for (j, prot) in proteins.iter().enumerate() {
                if !positive_set.contains(&(pep.clone(), prot.clone())) {
                    candidates.push((i, j));
                }
            }
        }
        rng.shuffle(&mut candidates);
        order.extend(candidates.into_iter().take(want));
    } else {
        while order.len() < want {
            let cell = (rng.below(peptides.len()), rng.below(proteins.len()));
            if chosen.contains(&cell) {
                continue;
            }
            let pair = (peptides[cell.0].clone(), proteins[cell.1].clone());
            if positive_set.contains(&pair) {
                continue;
            }
            chosen.insert(cell);
            order.push(cell);
        }
    }

    let negatives = order
        .into_iter()
        .map(|(i, j)| PairRecord {
            peptide_key: peptides[i].clone(),
            protein_id: proteins[j].clone(),
            label: false,
            acsm: None,
        })
        .collect();
    NegativeSample {
        negatives,
        saturated: target > available,
    }
}

/// Negative sampling over the peptides and proteins observed in the positive
/// set.
pub fn sample_negatives(positives: &[PairRecord], ratio: usize, seed: u64) -> NegativeSample {
    let peptides: Vec<String> = positives.iter().map(|p| p.peptide_key.clone()).collect();
    let proteins: Vec<String> = positives.iter().map(|p| p.protein_id.clone()).collect();
    sample_negatives_with_pools(positives, &peptides, &proteins, ratio, seed)
}

/// Cluster-based split:
/// 1. the clusters (size-weighted centroid points) are grouped into k folds
///    by constrained assignment keeping fold weights within `max_dev` of the
///    mean (greedy largest-first fallback when infeasible, flagged);
/// 2. per fold, the fold's clusters are the test set and the remaining
///    clusters are split into validation (about `val_fraction` of all pairs)
///    and training;
/// 3. every protein appearing in more than one role is reassigned to its
///    majority role (ties prefer test over val over train) and pairs left in
///    other roles are dropped, so no protein spans two roles of one fold.
///
/// Cluster labels are per pair (one signature per complex). Pairs without a
/// label (e.g. sampled negatives, which have no structure) follow their
/// protein's role; they are dropped only when their protein carries no
/// labeled pair at all.
pub fn make_cluster_split(
    pairs: &[PairRecord],
    cluster_labels: &[Option<usize>],
    centroids: &Mat,
    k: usize,
    max_dev: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<(DatasetSplit, ClusterSplitReport), CorpusError> {
    if pairs.len() != cluster_labels.len() {
        return Err(CorpusError::Format(format!(
            "{} pairs but {} cluster labels",
            pairs.len(),
            cluster_labels.len()
        )));
    }
    check_unique_pairs(pairs)?;
    let n_clusters = centroids.rows;
    if let Some(bad) = cluster_labels
        .iter()
        .position(|&c| c.is_some_and(|c| c >= n_clusters))
    {
        return Err(CorpusError::MissingClusterLabel(bad));
    }
    if k == 0 || k > n_clusters {
        return Err(CorpusError::KTooLarge { k, n: n_clusters });
    }
    // Every pair's protein must be resolvable to a cluster through at least
    // one labeled pair.
    let labeled_proteins: BTreeSet<&str> = pairs
        .iter()
        .zip(cluster_labels)
        .filter(|(_, c)| c.is_some())
        .map(|(p, _)| p.protein_id.as_str())
        .collect();

    // Pair weight per cluster (labeled pairs only).
    let mut weights = vec![0.0f64; n_clusters];
    for c in cluster_labels.iter().flatten() {
        weights[*c] += 1.0;
    }
    let total: f64 = weights.iter().sum();

    let grouping = constrained_group(centroids, &weights, k, max_dev, seed);

    let mut fold_weights = vec![0.0f64; k];
    for (c, &g) in grouping.group_of.iter().enumerate() {
        fold_weights[g] += weights[c];
    }
    let mean_w = total / k as f64;
    let max_weight_deviation = fold_weights
        .iter()
        .map(|w| (w - mean_w).abs() / mean_w)
        .fold(0.0, f64::max);

    let rng = Rng::seed_from(seed);
    let mut folds = Vec::with_capacity(k);
    let mut dropped_per_fold = Vec::with_capacity(k);
    for f in 0..k {
        // Cluster roles: test = this fold's group; validation filled from a
        // shuffled list of the remaining clusters up to the target weight.
        let mut role_of_cluster = vec![Role::Train; n_clusters];
        for c in 0..n_clusters {
            if grouping.group_of[c] == f {
                role_of_cluster[c] = Role::Test;
            }
        }
        let mut rest: Vec<usize> = (0..n_clusters)
            .filter(|&c| grouping.group_of[c] != f)
            .collect();
        let mut fold_rng = rng.derive(f as u64 + 101);
        fold_rng.shuffle(&mut rest);
        let val_target = val_fraction * total;
        let mut val_weight = 0.0;
        for &c in &rest {
            if val_weight >= val_target {
                break;
            }
            role_of_cluster[c] = Role::Val;
            val_weight += weights[c];
        }

        // Majority role per protein over its labeled pairs, ties preferring
        // test > val > train.
        let mut per_protein: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
        for (p, c) in pairs.iter().zip(cluster_labels) {
            if let Some(c) = c {
                per_protein.entry(&p.protein_id).or_default()
                    [role_of_cluster[*c] as usize] += 1;
            }
        }
        let protein_role: BTreeMap<&str, Role> = per_protein
            .into_iter()
            .map(|(prot, counts)| {
                let best = [Role::Test, Role::Val, Role::Train]
                    .into_iter()
                    .max_by_key(|&r| (counts[r as usize], std::cmp::Reverse(r as usize)))
                    .expect("non-empty role list");
                (prot, best)
            })
            .collect();

        let mut fold = FoldRoles::default();
        for (p, c) in pairs.iter().zip(cluster_labels) {
            if !labeled_proteins.contains(p.protein_id.as_str()) {
                fold.dropped.push(p.id());
                continue;
            }
            let assigned = protein_role[p.protein_id.as_str()];
            // Labeled pairs keep their own cluster role only when it agrees
            // with the protein's; unlabeled pairs follow the protein.
            let effective = match c {
                Some(c) => {
                    let own = role_of_cluster[*c];
                    if own == assigned {
                        Some(own)
                    } else {
                        None
                    }
                }
                None => Some(assigned),
            };
            match effective {
                Some(Role::Test) => fold.test.push(p.id()),
                Some(Role::Val) => fold.val.push(p.id()),
                Some(Role::Train) => fold.train.push(p.id()),
                None => fold.dropped.push(p.id()),
            }
        }
        dropped_per_fold.push(fold.dropped.len());
        folds.push(fold);
    }

    let split = DatasetSplit::from_folds(folds);
    let report = ClusterSplitReport {
        fold_weights,
        max_weight_deviation,
        constrained_fallback: grouping.fallback,
        dropped_per_fold,
    };
    Ok((split, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Test = 0,
    Val = 1,
    Train = 2,
}
