//! Acceptance suite: one test per release criterion, each printing a
//! `[criterion NN] PASS` line (run with `--nocapture` to see them). Criteria
//! cover the parser, tokenizer, masking statistics, attention algebra,
//! gradient correctness, memorization, ablation wiring, split guarantees,
//! the comparison statistics and the probing stack. The final criterion is
//! dataset-dependent and runs only when `HELM_LM_DATA_DIR` is set.

use std::time::Instant;

use helm_lm_core::corpus::kmeans::kmeans_cluster;
use helm_lm_core::corpus::masking::{apply_span_mask, span_length_pmf, SPAN_MAX_LEN};
use helm_lm_core::corpus::splits::{
    make_cluster_split, make_kfold_splits, make_random_pair_split,
};
use helm_lm_core::corpus::{deduplicate, filter_outliers, PairRecord, Source};
use helm_lm_core::encoder::{
    disentangled_attention_layer, forward_mlm, EncoderError, EncoderWeights, Mode, ModelConfig,
    Session,
};
use helm_lm_core::eval::{clustering_indices, knn_classify, linear_probe_cv, ProbeTarget};
use helm_lm_core::helm::{
    classify_structure, parse_helm, serialize_helm, HelmSequence, RGroup, StructureType,
};
use helm_lm_core::linalg::Mat;
use helm_lm_core::rng::Rng;
use helm_lm_core::stats::{bh_fdr, cohens_d, corrected_resampled_ttest, EffectMagnitude};
use helm_lm_core::synthetic::{random_corpus, random_sequence, SyntheticParams};
use helm_lm_core::tensor::{grad_check, Tensor, Var};
use helm_lm_core::tokenizer::{CompressionMap, TokenSequence, Vocabulary};
use helm_lm_core::training::{pretrain, PretrainConfig};

fn pass(criterion: u32, detail: &str) {
    println!("[criterion {criterion:02}] PASS - {detail}");
}

// ---------------------------------------------------------------------------
// 1. Parser round-trip on 200 grammar-randomized strings, under one second.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_parser_round_trip() {
    let started = Instant::now();
    let mut rng = Rng::seed_from(1001);
    let params = SyntheticParams::default();
    for i in 0..200 {
        let seq = random_sequence(&mut rng, &params);
        let text = serialize_helm(&seq);
        let parsed = parse_helm(&text).unwrap_or_else(|e| panic!("case {i}: {e}"));
        assert_eq!(parsed, seq, "case {i}: structures differ after round trip");
        let text2 = serialize_helm(&parsed);
        assert_eq!(text, text2, "case {i}: serialization not stable");
        assert_eq!(parse_helm(&text2).unwrap(), parsed);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(1, &format!("200/200 round trips in {elapsed:?}"));
}

// ---------------------------------------------------------------------------
// 2. Topology classification matches an independent connection walk.
// ---------------------------------------------------------------------------

/// Independent oracle: walk the connection list, count intramolecular pairs
/// and look for side-chain attachment points.
fn brute_force_classify(seq: &HelmSequence) -> (StructureType, usize) {
    let mut intramolecular = 0usize;
    let mut saw_side_chain = false;
    for c in &seq.connections {
        if c.source_polymer == c.target_polymer {
            intramolecular += 1;
            if c.source_rgroup == RGroup::R3 || c.target_rgroup == RGroup::R3 {
                saw_side_chain = true;
            }
        }
    }
    let class = if intramolecular == 0 {
        StructureType::Linear
    } else if saw_side_chain {
        StructureType::Lariat
    } else {
        StructureType::Cyclic
    };
    (class, intramolecular)
}

#[test]
fn acceptance_02_topology_oracle() {
    let mut rng = Rng::seed_from(1002);
    let params = SyntheticParams::default();
    let mut seen = [0usize; 3];
    for i in 0..200 {
        let seq = random_sequence(&mut rng, &params);
        let got = classify_structure(&seq);
        let (expect_class, expect_rings) = brute_force_classify(&seq);
        assert_eq!(got.structure_type, expect_class, "case {i}");
        assert_eq!(got.n_rings, expect_rings, "case {i}");
        seen[match got.structure_type {
            StructureType::Cyclic => 0,
            StructureType::Lariat => 1,
            StructureType::Linear => 2,
        }] += 1;
    }
    assert!(
        seen.iter().all(|&c| c > 0),
        "all three classes must occur, got cyclic/lariat/linear = {seen:?}"
    );
    pass(
        2,
        &format!(
            "200/200 agree with the brute-force walk (cyclic {} / lariat {} / linear {})",
            seen[0], seen[1], seen[2]
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Tokenizer round-trip on 10,000 randomized strings.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_03_tokenizer_round_trip() {
    let corpus = random_corpus(1003, 10_000, &SyntheticParams::default());
    let vocab = Vocabulary::build(&corpus, &CompressionMap::default_paper()).unwrap();
    for (i, text) in corpus.iter().enumerate() {
        let tokens = vocab.encode(text);
        assert!(
            tokens.len() <= text.chars().count(),
            "case {i}: compression lengthened the input"
        );
        let decoded = vocab.decode(&tokens).unwrap_or_else(|e| panic!("case {i}: {e}"));
        assert_eq!(&decoded, text, "case {i}: round trip failed");
    }
    pass(3, "10000/10000 decode(encode(s)) = s, compression never lengthens");
}

// ---------------------------------------------------------------------------
// 4. Masking statistics: exact budget and the clipped-geometric span law.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_04_masking_statistics() {
    let corpus = random_corpus(44, 64, &SyntheticParams::default());
    let vocab = Vocabulary::build(&corpus, &CompressionMap::default_paper()).unwrap();
    let regular = vocab.regular_ids();
    let sequence = TokenSequence {
        ids: (0..100).map(|i| regular[i % regular.len()]).collect(),
    };

    let mut masked_fraction_sum = 0.0;
    let mut span_counts = [0u64; SPAN_MAX_LEN];
    for seed in 0..10_000u64 {
        let row = apply_span_mask(&sequence, &vocab, 0x5eed_0000 + seed);
        let masked = row.loss_mask.iter().filter(|&&m| m).count();
        masked_fraction_sum += masked as f64 / sequence.len() as f64;
        for &len in &row.sampled_span_lengths {
            span_counts[len - 1] += 1;
        }
    }
    let mean_fraction = masked_fraction_sum / 10_000.0;
    assert!(
        (0.145..=0.155).contains(&mean_fraction),
        "mean masked fraction {mean_fraction}"
    );

    // Chi-square against P(1) = 0.2, ..., P(5) = 0.4096 at alpha = 0.01
    // (4 degrees of freedom).
    let pmf = span_length_pmf();
    assert!((pmf[0] - 0.2).abs() < 1e-12 && (pmf[4] - 0.4096).abs() < 1e-12);
    let total: u64 = span_counts.iter().sum();
    let chi2: f64 = span_counts
        .iter()
        .zip(pmf)
        .map(|(&obs, p)| {
            let expected = p * total as f64;
            let diff = obs as f64 - expected;
            diff * diff / expected
        })
        .sum();
    const CHI2_CRIT_4DF_001: f64 = 13.2767;
    assert!(
        chi2 < CHI2_CRIT_4DF_001,
        "chi-square {chi2} over {total} spans exceeds {CHI2_CRIT_4DF_001}"
    );
    pass(
        4,
        &format!("mean fraction {mean_fraction:.4}, chi-square {chi2:.2} < {CHI2_CRIT_4DF_001} over {total} spans"),
    );
}

// ---------------------------------------------------------------------------
// 5. Zeroed relative tables reduce disentangled attention to content-only
//    attention at the 1/sqrt(3 d_h) scale.
// ---------------------------------------------------------------------------

fn reference_content_attention(
    weights: &EncoderWeights<f64>,
    layer: usize,
    x: &Tensor<f64>,
    scale: f64,
) -> Tensor<f64> {
    let cfg = &weights.config;
    let (n, h, dh) = (x.rows(), cfg.hidden, cfg.head_dim());
    let l = &weights.layers[layer];
    let project = |w: &Tensor<f64>, b: &Tensor<f64>| {
        let mut out = x.matmul(w).unwrap();
        for i in 0..n {
            for (o, bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        out
    };
    let q = project(&l.q.weight, &l.q.bias);
    let k = project(&l.k.weight, &l.k.bias);
    let v = project(&l.v.weight, &l.v.bias);
    let mut merged = Tensor::zeros(vec![n, h]);
    for a in 0..cfg.heads {
        for i in 0..n {
            let mut scores = vec![0.0f64; n];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += q.get2(i, a * dh + c) * k.get2(j, a * dh + c);
                }
                *s = dot * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..dh {
                let mut acc = 0.0;
                for (j, &e) in exps.iter().enumerate() {
                    acc += e / z * v.get2(j, a * dh + c);
                }
                merged.set2(i, a * dh + c, acc);
            }
        }
    }
    let mut out = merged.matmul(&l.out.weight).unwrap();
    for i in 0..n {
        for (o, bv) in out.row_mut(i).iter_mut().zip(l.out.bias.data()) {
            *o += bv;
        }
    }
    out
}

#[test]
fn acceptance_05_attention_reduction() {
    let mut rng = Rng::seed_from(1005);
    for case in 0..20 {
        let heads = [1usize, 2, 4][rng.below(3)];
        let dh = [2usize, 4][rng.below(2)];
        let hidden = heads * dh;
        let n = 2 + rng.below(6);
        let kappa = 1 + rng.below(6);
        let mut cfg = ModelConfig::new(11, hidden, 2, heads);
        cfg.max_relative_distance = kappa;
        cfg.max_len = 32;
        let mut weights = EncoderWeights::<f64>::init(&cfg, 5000 + case).unwrap();
        weights
            .rel_embedding
            .as_mut()
            .expect("disentangled config")
            .fill(0.0);

        let layer = rng.below(cfg.n_layers);
        let x_data: Vec<f64> = (0..n * hidden).map(|_| rng.normal()).collect();
        let x = Tensor::from_vec(vec![n, hidden], x_data);
        let mask = vec![true; n];

        let mut session = Session::new();
        let xv = Var::constant(x.clone());
        let got = disentangled_attention_layer(
            &mut session,
            &weights,
            layer,
            &xv,
            &xv,
            &mask,
            &mut Mode::Eval,
        )
        .unwrap();
        let scale = 1.0 / (3.0 * dh as f64).sqrt();
        let expect = reference_content_attention(&weights, layer, &x, scale);
        for (g, e) in got.value().data().iter().zip(expect.data()) {
            assert!(
                (g - e).abs() < 1e-10,
                "case {case}: {g} vs {e} (diff {})",
                (g - e).abs()
            );
        }
    }
    pass(5, "20/20 random configurations match content-only attention within 1e-10");
}

// ---------------------------------------------------------------------------
// 6. Finite-difference check of the full encoder (hybrid first layer,
//    disentangled attention, mask decoder, MLM head).
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_full_encoder_gradients() {
    let started = Instant::now();
    let mut cfg = ModelConfig::new(13, 8, 3, 2);
    cfg.max_relative_distance = 4;
    cfg.max_len = 8;
    let weights = EncoderWeights::<f64>::init(&cfg, 42).unwrap();
    let batch = helm_lm_core::corpus::masking::MaskedBatch {
        input_ids: vec![vec![11, 2, 3, 4, 5]],
        target_ids: vec![vec![1, 2, 3, 4, 5]],
        loss_mask: vec![vec![true, false, true, false, true]],
        attention_mask: vec![vec![true; 5]],
    };
    let named: Vec<(String, Tensor<f64>)> = weights
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let params: Vec<Tensor<f64>> = named.iter().map(|(_, t)| t.clone()).collect();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let n_params: usize = params.iter().map(|t| t.len()).sum();
    let err = grad_check(
        &params,
        |leaves| {
            let mut session = Session::new();
            for (name, leaf) in names.iter().zip(leaves) {
                session.bind_var(name, leaf.clone());
            }
            let out = forward_mlm(&mut session, &weights, &batch, &mut Mode::Eval).map_err(
                |e| match e {
                    EncoderError::Tensor(t) => t,
                    other => panic!("{other}"),
                },
            )?;
            Ok(out.loss)
        },
        1e-5,
    )
    .unwrap();
    let elapsed = started.elapsed();
    assert!(err < 1e-4, "max relative error {err}");
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    pass(
        6,
        &format!("max relative error {err:.2e} over {n_params} parameters in {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 7. Mask-decoder weight tying: perturbing the final layer moves the output
//    and the manifest holds no decoder-only tensors.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_emd_weight_tying() {
    let mut cfg = ModelConfig::new(13, 8, 3, 2);
    cfg.max_relative_distance = 4;
    cfg.max_len = 16;
    let mut weights = EncoderWeights::<f64>::init(&cfg, 1007).unwrap();
    let ids = [1u32, 5, 3, 8, 2];
    let mask = [true; 5];

    let eval = |w: &EncoderWeights<f64>| -> Tensor<f64> {
        let mut session = Session::new();
        helm_lm_core::encoder::forward_hidden(&mut session, w, &ids, &mask, &mut Mode::Eval)
            .unwrap()
            .value()
            .clone()
    };
    let base = eval(&weights);
    let last = weights.layers.len() - 1;
    weights.layers[last].out.weight.data_mut()[10] += 0.01;
    let bumped = eval(&weights);
    let max_diff = base
        .data()
        .iter()
        .zip(bumped.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        max_diff > 1e-9,
        "perturbing the tied layer must change the decoder output"
    );

    // No independent decoder parameters: every tensor belongs to the
    // embedding tables, the layer stack, the conv branch or the MLM head.
    let names: Vec<String> = weights
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    for name in &names {
        assert!(
            name.starts_with("token_embedding")
                || name.starts_with("abs_position")
                || name.starts_with("rel_embedding")
                || name.starts_with("conv.")
                || name.starts_with("layers.")
                || name.starts_with("mlm_head."),
            "unexpected tensor family: {name}"
        );
    }
    let layer_count = cfg.n_layers;
    for i in 0..layer_count {
        assert!(names.iter().any(|n| n.starts_with(&format!("layers.{i}."))));
    }
    pass(
        7,
        &format!("output moved by {max_diff:.2e} under a tied-layer perturbation; manifest has no decoder-only tensors"),
    );
}

// ---------------------------------------------------------------------------
// 8. Memorization benchmark: 32 synthetic sequences, H = 64, L = 2, A = 4.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_memorization() {
    let started = Instant::now();
    let params = SyntheticParams {
        max_polymers: 1,
        max_monomers: 4,
        coded_monomer_prob: 0.25,
        connection_prob: 0.25,
        version_prob: 0.4,
    };
    let corpus = random_corpus(2024, 32, &params);
    let vocab = Vocabulary::build(&corpus, &CompressionMap::default_paper()).unwrap();
    let sequences: Vec<_> = corpus.iter().map(|s| vocab.encode(s)).collect();
    let mut cfg = ModelConfig::new(vocab.size(), 64, 2, 4);
    cfg.max_relative_distance = 8;
    cfg.max_len = 128;
    cfg.dropout_rate = 0.0;
    let train = PretrainConfig {
        batch_size: 32,
        max_epochs: 2000,
        patience: 2000,
        base_lr: 5e-3,
        min_lr: 2e-4,
        val_fraction: 0.0,
        seed: 7,
        stop_at_train_loss: Some(0.05),
        ..PretrainConfig::default()
    };
    let out = pretrain::<f32>(&sequences, &vocab, &cfg, &train).unwrap();
    let elapsed = started.elapsed();

    let ln_v = (vocab.size() as f64).ln();
    assert!(
        (out.initial_loss - ln_v).abs() / ln_v < 0.10,
        "initial loss {} vs ln(V) {ln_v}",
        out.initial_loss
    );
    let final_loss = out.history.last().unwrap().train_loss;
    assert!(final_loss < 0.05, "final training loss {final_loss}");
    assert!(out.steps_run <= 2000, "{} steps", out.steps_run);
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    pass(
        8,
        &format!(
            "loss {final_loss:.4} after {} steps in {elapsed:?}; initial {:.4} vs ln(V) {ln_v:.4}",
            out.steps_run, out.initial_loss
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Ablation wiring: the five variants exist as flag combinations and the
//    all-off variant has input-layer positions and no relative table.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_09_ablation_wiring() {
    let base = {
        let mut cfg = ModelConfig::new(13, 8, 2, 2);
        cfg.max_relative_distance = 4;
        cfg
    };
    let variants: Vec<(&str, ModelConfig)> = vec![
        ("full", base.clone()),
        ("w/o disentangled attention", {
            let mut c = base.clone();
            c.use_disentangled = false;
            c
        }),
        ("w/o convolution branch", {
            let mut c = base.clone();
            c.use_ngie = false;
            c
        }),
        ("w/o mask decoder", {
            let mut c = base.clone();
            c.use_emd = false;
            c
        }),
        ("w/o span masking", {
            let mut c = base.clone();
            c.use_span_mask = false;
            c
        }),
        ("vanilla", base.clone().vanilla()),
    ];
    for (name, cfg) in &variants {
        let weights = EncoderWeights::<f32>::init(cfg, 9).unwrap();
        let names: Vec<String> = weights
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let has_rel = names.iter().any(|n| n.contains("rel"));
        let has_conv = names.iter().any(|n| n.contains("conv"));
        assert_eq!(has_rel, cfg.use_disentangled, "{name}: relative tensors");
        assert_eq!(has_conv, cfg.use_ngie, "{name}: conv tensors");
        assert!(names.contains(&"abs_position".to_string()), "{name}");

        // The forward pass runs for every variant.
        let mut session = Session::new();
        let hidden = helm_lm_core::encoder::forward_hidden(
            &mut session,
            &weights,
            &[1, 2, 3],
            &[true, true, true],
            &mut Mode::Eval,
        )
        .unwrap();
        assert_eq!(hidden.shape(), &[3, cfg.hidden], "{name}");
    }

    // Vanilla specifically: no relative table anywhere, and absolute
    // positions act at the input layer (moving a used P_abs row changes the
    // output even though the mask decoder is off).
    let vanilla = base.vanilla();
    let mut weights = EncoderWeights::<f32>::init(&vanilla, 10).unwrap();
    assert!(weights.rel_embedding.is_none());
    assert!(weights.conv.is_none());
    let run = |w: &EncoderWeights<f32>| {
        let mut session = Session::new();
        helm_lm_core::encoder::forward_hidden(
            &mut session,
            w,
            &[1, 2, 3],
            &[true, true, true],
            &mut Mode::Eval,
        )
        .unwrap()
        .value()
        .clone()
    };
    let before = run(&weights);
    weights.abs_position.data_mut()[2] += 1.0;
    let after = run(&weights);
    assert!(
        before
            .data()
            .iter()
            .zip(after.data())
            .any(|(a, b)| (a - b).abs() > 1e-6),
        "input-layer positions must affect the vanilla output"
    );
    pass(9, "six flag combinations constructible; vanilla has no relative table and input-layer positions");
}

// ---------------------------------------------------------------------------
// 10. Split guarantees.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_split_invariants() {
    // k-fold: test sets partition the data exactly.
    let ids: Vec<String> = (0..103).map(|i| format!("rec{i:03}")).collect();
    let split = make_kfold_splits(&ids, 10, 0.1, 77).unwrap();
    let mut test_union: Vec<String> = split
        .folds
        .iter()
        .flat_map(|f| f.test.iter().cloned())
        .collect();
    let total_test = test_union.len();
    test_union.sort();
    test_union.dedup();
    assert_eq!(test_union.len(), total_test, "k-fold test sets overlap");
    let mut expected = ids.clone();
    expected.sort();
    assert_eq!(test_union, expected, "k-fold test sets must cover the data");

    // Random pair split: zero pair overlap across fold test sets.
    let pairs: Vec<PairRecord> = (0..100)
        .map(|t| PairRecord {
            peptide_key: format!("pep{}", t % 10),
            protein_id: format!("prot{}", t / 10),
            label: true,
            acsm: None,
        })
        .collect();
    let pair_split = make_random_pair_split(&pairs, 5, 0.1, 78).unwrap();
    let mut pair_union: Vec<String> = pair_split
        .folds
        .iter()
        .flat_map(|f| f.test.iter().cloned())
        .collect();
    let pair_total = pair_union.len();
    pair_union.sort();
    pair_union.dedup();
    assert_eq!(pair_union.len(), pair_total, "pair test sets overlap");
    assert_eq!(pair_union.len(), pairs.len());
    for fold in &pair_split.folds {
        let n = fold.train.len() + fold.val.len() + fold.test.len();
        assert_eq!(n, pairs.len(), "pair roles must partition every fold");
    }

    // Cluster-based split: balanced fold weights and zero protein overlap
    // within every fold.
    let mut rng = Rng::seed_from(79);
    let n_proteins = 40;
    let mut cluster_pairs = Vec::new();
    let mut points = Vec::new();
    for prot in 0..n_proteins {
        let center = [
            (prot % 8) as f64 * 6.0,
            (prot / 8) as f64 * 6.0,
        ];
        for rep in 0..10 {
            cluster_pairs.push(PairRecord {
                peptide_key: format!("pep{prot:02}_{rep}"),
                protein_id: format!("prot{prot:02}"),
                label: rep % 5 != 0,
                acsm: None,
            });
            points.push(vec![
                center[0] + 0.3 * rng.normal(),
                center[1] + 0.3 * rng.normal(),
            ]);
        }
    }
    let mat = Mat::from_rows(&points);
    let km = kmeans_cluster(&mat, 20, 80).unwrap();
    let labels: Vec<Option<usize>> = km.labels.iter().map(|&l| Some(l)).collect();
    let (cluster_split, report) =
        make_cluster_split(&cluster_pairs, &labels, &km.centroids, 5, 0.15, 0.1, 81).unwrap();
    assert!(
        !report.constrained_fallback,
        "balanced synthetic weights must satisfy the constraint"
    );
    assert!(
        report.max_weight_deviation <= 0.15 + 1e-9,
        "fold weight deviation {} exceeds 15%",
        report.max_weight_deviation
    );
    for (f, fold) in cluster_split.folds.iter().enumerate() {
        let mut role_of: std::collections::BTreeMap<&str, &str> = Default::default();
        for (role, ids) in [("train", &fold.train), ("val", &fold.val), ("test", &fold.test)] {
            for id in ids {
                let protein = id.split('~').next().unwrap();
                let previous = role_of.insert(protein, role);
                assert!(
                    previous.is_none() || previous == Some(role),
                    "fold {f}: protein {protein} appears in {role} and {}",
                    previous.unwrap()
                );
            }
        }
        let n = fold.train.len() + fold.val.len() + fold.test.len() + fold.dropped.len();
        assert_eq!(n, cluster_pairs.len(), "fold {f} must account for every pair");
    }
    pass(
        10,
        &format!(
            "k-fold partitions exactly; pair split has zero overlap; cluster split deviation {:.3} with zero protein overlap",
            report.max_weight_deviation
        ),
    );
}

// ---------------------------------------------------------------------------
// 11. Statistics oracles.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_11_statistics_oracles() {
    // Corrected t-test vs a by-hand evaluation of the formula.
    let mut rng = Rng::seed_from(1011);
    for case in 0..100 {
        let k = 3 + rng.below(12);
        let diffs: Vec<f64> = (0..k).map(|_| rng.normal() * 0.3 + 0.1).collect();
        let n_train = 40 + rng.below(200);
        let n_test = 5 + rng.below(60);
        let mean: f64 = diffs.iter().sum::<f64>() / k as f64;
        let var: f64 =
            diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (k as f64 - 1.0);
        if var == 0.0 {
            continue;
        }
        let by_hand = mean / ((1.0 / k as f64 + n_test as f64 / n_train as f64) * var).sqrt();
        let got = corrected_resampled_ttest(&diffs, n_train, n_test).unwrap();
        assert!(
            (got.t - by_hand).abs() <= 1e-12 * by_hand.abs().max(1.0),
            "case {case}: {} vs {by_hand}",
            got.t
        );
    }

    // Benjamini-Hochberg worked example.
    let fdr = bh_fdr(&[0.01, 0.02, 0.04, 0.06], 0.05).unwrap();
    assert_eq!(fdr.reject, vec![true, true, false, false]);
    let expected = [0.04, 0.04, 0.04 * 4.0 / 3.0, 0.06];
    for (got, want) in fdr.adjusted.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    // Effect-size boundaries, exactly at the thresholds.
    assert_eq!(EffectMagnitude::from_d(0.199), EffectMagnitude::Negligible);
    assert_eq!(EffectMagnitude::from_d(0.2), EffectMagnitude::Small);
    assert_eq!(EffectMagnitude::from_d(0.499), EffectMagnitude::Small);
    assert_eq!(EffectMagnitude::from_d(0.5), EffectMagnitude::Medium);
    assert_eq!(EffectMagnitude::from_d(0.799), EffectMagnitude::Medium);
    assert_eq!(EffectMagnitude::from_d(0.8), EffectMagnitude::Large);
    assert_eq!(EffectMagnitude::from_d(-0.2), EffectMagnitude::Small);
    assert_eq!(EffectMagnitude::from_d(-0.8), EffectMagnitude::Large);
    let d = cohens_d(&[0.0, 2.0]).unwrap();
    assert!((d - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
    assert_eq!(EffectMagnitude::from_d(d), EffectMagnitude::Medium);

    pass(11, "t statistic matches the hand formula to 1e-12 on 100 inputs; BH and effect-size boundaries exact");
}

// ---------------------------------------------------------------------------
// 12. Probing sanity: exact linear targets, separated clusters and the
//     hand-computed silhouette example.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_12_probing_sanity() {
    // Linear probe recovers an exact linear map.
    let mut rng = Rng::seed_from(1012);
    let n = 150;
    let d = 8;
    let w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        y.push(helm_lm_core::linalg::dot(&x, &w) - 0.4);
        rows.push(x);
    }
    let x = Mat::from_rows(&rows);
    let report = linear_probe_cv(&x, &ProbeTarget::Numeric(y), 5, &[], 3).unwrap();
    let r2 = report.metrics["r2"].mean;
    assert!(r2 >= 0.999, "probe r2 {r2}");

    // Three separated Gaussian clusters.
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in [[0.0, 0.0], [12.0, 0.0], [0.0, 12.0]].iter().enumerate() {
        for _ in 0..50 {
            rows.push(vec![
                center[0] + 0.4 * rng.normal(),
                center[1] + 0.4 * rng.normal(),
            ]);
            labels.push(c);
        }
    }
    let blobs = Mat::from_rows(&rows);
    let knn = knn_classify(&blobs, &labels, 3).unwrap();
    assert_eq!(knn, 1.0, "knn accuracy {knn}");
    let indices = clustering_indices(&blobs, &labels).unwrap();
    assert!(indices.silhouette > 0.9, "silhouette {}", indices.silhouette);

    // Hand-computed two-cluster silhouette: points (0,0),(0,1) vs
    // (10,10),(10,11); a(i) = 1 everywhere, b(i) by explicit distances.
    let tiny = Mat::from_rows(&[
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![10.0, 10.0],
        vec![10.0, 11.0],
    ]);
    let got = clustering_indices(&tiny, &[0, 0, 1, 1]).unwrap().silhouette;
    let b_outer = (200.0f64.sqrt() + 221.0f64.sqrt()) / 2.0;
    let b_inner = (181.0f64.sqrt() + 200.0f64.sqrt()) / 2.0;
    let expected = ((1.0 - 1.0 / b_outer) + (1.0 - 1.0 / b_inner)) / 2.0;
    assert!(
        (got - expected).abs() < 1e-6,
        "silhouette {got} vs hand value {expected}"
    );

    pass(
        12,
        &format!("probe r2 {r2:.5}; knn 1.0; silhouette {:.3}; hand example matches to 1e-6", indices.silhouette),
    );
}

// ---------------------------------------------------------------------------
// 13. Dataset-dependent smoke check (optional): reproduce the published
//     corpus counts when the licensed files are provided.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_13_dataset_dependent_counts() {
    let Ok(dir) = std::env::var("HELM_LM_DATA_DIR") else {
        pass(13, "SKIPPED - set HELM_LM_DATA_DIR to a directory with corpus.jsonl to run");
        return;
    };
    let path = std::path::Path::new(&dir).join("corpus.jsonl");
    let records = helm_lm_core::corpus::io::read_corpus(&path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    let deduped = deduplicate(&records);
    assert_eq!(deduped.len(), 39_079, "total unique records");
    let count = |s: Source| deduped.iter().filter(|r| r.source == s).count();
    assert_eq!(count(Source::ChEMBL), 21_879);
    assert_eq!(count(Source::Propedia), 9_212);
    assert_eq!(count(Source::CycPeptMPDB), 7_988);
    let permeability: Vec<_> = deduped
        .into_iter()
        .filter(|r| r.source == Source::CycPeptMPDB)
        .collect();
    let kept = filter_outliers(&permeability, -10.0).unwrap();
    assert_eq!(kept.len(), 7_715, "post-outlier permeability records");
    pass(13, "published corpus counts reproduced");
}
