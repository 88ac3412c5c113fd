//! Span masking for the MLM objective.
//!
//! 15% of maskable tokens per sequence are covered by contiguous spans whose
//! lengths follow a geometric distribution (p = 0.2) clipped to [1, 5]; each
//! span is replaced by the 80-10-10 rule decided once per span.

use crate::rng::Rng;
use crate::tokenizer::{TokenSequence, Vocabulary};

pub const MASK_FRACTION: f64 = 0.15;
pub const SPAN_GEOMETRIC_P: f64 = 0.2;
pub const SPAN_MAX_LEN: usize = 5;

/// One masked training row before batching.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRow {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
    /// Span lengths as drawn from the clipped geometric sampler, before any
    /// budget truncation. Diagnostic for distribution checks.
    pub sampled_span_lengths: Vec<usize>,
}

/// A padded batch: row-major matrices plus masks. `loss_mask` is true only at
/// positions to predict; `attention_mask` is false at PAD.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub input_ids: Vec<Vec<u32>>,
    pub target_ids: Vec<Vec<u32>>,
    pub loss_mask: Vec<Vec<bool>>,
    pub attention_mask: Vec<Vec<bool>>,
}

impl MaskedBatch {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }
}

/// Span length ~ Geometric(p = 0.2) with support {1, 2, ...}, clipped to
/// [1, 5]: P(l) = 0.8^(l-1) * 0.2 for l < 5 and P(5) = 0.8^4.
pub fn sample_span_length(rng: &mut Rng) -> usize {
    let mut len = 1;
    while len < SPAN_MAX_LEN && rng.bernoulli(1.0 - SPAN_GEOMETRIC_P) {
        len += 1;
    }
    len
}

/// Probability mass of the clipped geometric span-length distribution.
pub fn span_length_pmf() -> [f64; SPAN_MAX_LEN] {
    let q = 1.0 - SPAN_GEOMETRIC_P;
    let mut pmf = [0.0; SPAN_MAX_LEN];
    for (i, slot) in pmf.iter_mut().enumerate().take(SPAN_MAX_LEN - 1) {
        *slot = q.powi(i as i32) * SPAN_GEOMETRIC_P;
    }
    pmf[SPAN_MAX_LEN - 1] = q.powi(SPAN_MAX_LEN as i32 - 1);
    pmf
}

fn masked_budget(maskable: usize) -> usize {
    (MASK_FRACTION * maskable as f64).floor() as usize
}

#[derive(Clone, Copy, PartialEq)]
enum SpanReplacement {
    Mask,
    Random,
    Unchanged,
}

/// Draw the 80-10-10 replacement decision once for a whole span.
fn sample_replacement(rng: &mut Rng) -> SpanReplacement {
    let u = rng.uniform();
    if u < 0.8 {
        SpanReplacement::Mask
    } else if u < 0.9 {
        SpanReplacement::Random
    } else {
        SpanReplacement::Unchanged
    }
}

fn apply_replacement(
    row: &mut MaskedRow,
    positions: &[usize],
    replacement: SpanReplacement,
    vocab: &Vocabulary,
    rng: &mut Rng,
) {
    let regular = vocab.regular_ids();
    for &p in positions {
        row.loss_mask[p] = true;
        match replacement {
            SpanReplacement::Mask => row.input_ids[p] = vocab.special.mask,
            SpanReplacement::Random => {
                row.input_ids[p] = regular[rng.below(regular.len())];
            }
            SpanReplacement::Unchanged => {}
        }
    }
}

/// Mask exactly floor(0.15 * maskable) positions of one sequence with
/// geometric spans at uniform non-overlapping starts; overflowing spans are
/// truncated to the remaining budget and any shortfall after 10x budget
/// rejection attempts is filled left-to-right.
pub fn apply_span_mask(tokens: &TokenSequence, vocab: &Vocabulary, seed: u64) -> MaskedRow {
    let mut rng = Rng::seed_from(seed);
    let n = tokens.len();
    let maskable: Vec<bool> = tokens.ids.iter().map(|&id| !vocab.is_special(id)).collect();
    let budget = masked_budget(maskable.iter().filter(|&&m| m).count());

    let mut row = MaskedRow {
        input_ids: tokens.ids.clone(),
        target_ids: tokens.ids.clone(),
        loss_mask: vec![false; n],
        sampled_span_lengths: Vec::new(),
    };
    if budget == 0 {
        return row;
    }

    let mut covered = vec![false; n];
    let mut remaining = budget;
    let mut attempts = 0usize;
    let max_attempts = 10 * budget;
    while remaining > 0 && attempts < max_attempts {
        attempts += 1;
        let sampled = sample_span_length(&mut rng);
        row.sampled_span_lengths.push(sampled);
        let len = sampled.min(remaining);
        if len > n {
            continue;
        }
        let start = rng.below(n - len + 1);
        let span: Vec<usize> = (start..start + len).collect();
        if span.iter().any(|&p| covered[p] || !maskable[p]) {
            continue;
        }
        for &p in &span {
            covered[p] = true;
        }
        let replacement = sample_replacement(&mut rng);
        apply_replacement(&mut row, &span, replacement, vocab, &mut rng);
        remaining -= len;
    }
    // Deterministic left-to-right fill for whatever the rejection loop left.
    if remaining > 0 {
        let mut fill = Vec::new();
        for p in 0..n {
            if remaining == 0 {
                break;
            }
            if maskable[p] && !covered[p] {
                covered[p] = true;
                fill.push(p);
                remaining -= 1;
            }
        }
        let replacement = sample_replacement(&mut rng);
        apply_replacement(&mut row, &fill, replacement, vocab, &mut rng);
    }
    row
}

/// Token-level MLM used by the span-masking ablation: the same budget spread
/// over independently chosen single positions, 80-10-10 decided per token.
pub fn apply_token_mask(tokens: &TokenSequence, vocab: &Vocabulary, seed: u64) -> MaskedRow {
    let mut rng = Rng::seed_from(seed);
    let n = tokens.len();
    let maskable: Vec<usize> = (0..n)
        .filter(|&p| !vocab.is_special(tokens.ids[p]))
        .collect();
    let budget = masked_budget(maskable.len());
    let mut row = MaskedRow {
        input_ids: tokens.ids.clone(),
        target_ids: tokens.ids.clone(),
        loss_mask: vec![false; n],
        sampled_span_lengths: Vec::new(),
    };
    if budget == 0 {
        return row;
    }
    let chosen = rng.sample_indices(maskable.len(), budget);
    for idx in chosen {
        let p = maskable[idx];
        let replacement = sample_replacement(&mut rng);
        apply_replacement(&mut row, &[p], replacement, vocab, &mut rng);
    }
    row
}

/// Pad rows to a common length and stack them into a batch.
pub fn collate(rows: &[MaskedRow], vocab: &Vocabulary) -> MaskedBatch {
    let width = rows.iter().map(|r| r.input_ids.len()).max().unwrap_or(0);
    let pad = vocab.special.pad;
    let mut batch = MaskedBatch {
        input_ids: Vec::with_capacity(rows.len()),
        target_ids: Vec::with_capacity(rows.len()),
        loss_mask: Vec::with_capacity(rows.len()),
        attention_mask: Vec::with_capacity(rows.len()),
    };
    for r in rows {
        let n = r.input_ids.len();
        let mut input = r.input_ids.clone();
        let mut target = r.target_ids.clone();
        let mut loss = r.loss_mask.clone();
        let mut attn = vec![true; n];
        input.resize(width, pad);
        target.resize(width, pad);
        loss.resize(width, false);
        attn.resize(width, false);
        batch.input_ids.push(input);
        batch.target_ids.push(target);
        batch.loss_mask.push(loss);
        batch.attention_mask.push(attn);
    }
    batch
}
