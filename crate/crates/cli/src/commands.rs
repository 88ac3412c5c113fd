//! Subcommand implementations. Each delegates to the library, writes its
//! outputs (JSON-lines or CSV) and a run manifest next to them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use helm_lm_core::corpus::masking::{apply_span_mask, apply_token_mask};
use helm_lm_core::corpus::splits::{
    make_cluster_split, make_kfold_splits, make_random_pair_split, sample_negatives, DatasetSplit,
};
use helm_lm_core::corpus::{self, io as corpus_io, CorpusRecord, PairRecord};
use helm_lm_core::encoder::ModelConfig;
use helm_lm_core::eval::{linear_probe_cv, MetricReport, ProbeTarget};
use helm_lm_core::helm::{canonical_key, classify_structure, parse_helm};
use helm_lm_core::linalg::Mat;
use helm_lm_core::stats::{compare_metric_sets, MetricVectors};
use helm_lm_core::tokenizer::{CompressionMap, Vocabulary};
use helm_lm_core::training::{
    finetune_binary_vectors_at, finetune_regression_sequences, finetune_regression_vectors_at,
    load_checkpoint, pooled_embeddings, pretrain, save_checkpoint, FinetuneConfig, FinetuneOutput,
    HeadKind, PretrainConfig, Protocol,
};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, ManifestBuilder};
use crate::{CliError, Ctx};

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn write_lines(path: Option<&Path>, lines: &[String]) -> Result<(), CliError> {
    let body = if lines.is_empty() {
        String::new()
    } else {
        format!("{}\n", lines.join("\n"))
    };
    match path {
        Some(p) => write_atomic(p, body.as_bytes()).map_err(data_err),
        None => {
            std::io::stdout()
                .write_all(body.as_bytes())
                .map_err(data_err)?;
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(data_err)?;
    write_atomic(path, format!("{json}\n").as_bytes()).map_err(data_err)
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FeatureRow {
    key: String,
    structure_type: helm_lm_core::helm::StructureType,
    n_rings: usize,
    n_monomers: usize,
}

/// Accepts plain HELM lines or corpus CSV/JSONL with a `helm` column.
fn load_helm_strings(path: &Path) -> Result<Vec<String>, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("jsonl") | Some("json") => Ok(corpus_io::read_corpus(path)
            .map_err(data_err)?
            .into_iter()
            .map(|r| r.helm)
            .collect()),
        _ => corpus_io::read_helm_lines(path).map_err(data_err),
    }
}

pub fn cmd_parse(ctx: &Ctx, file: &Path, features_out: Option<&Path>) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("parse");
    manifest.add_input(file).map_err(data_err)?;
    manifest.report_stale_inputs();

    let mut lines = Vec::new();
    for (i, helm) in load_helm_strings(file)?.iter().enumerate() {
        let seq = parse_helm(helm).map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
        let summary = classify_structure(&seq);
        let row = FeatureRow {
            key: canonical_key(&seq),
            structure_type: summary.structure_type,
            n_rings: summary.n_rings,
            n_monomers: seq.n_monomers(),
        };
        lines.push(serde_json::to_string(&row).map_err(data_err)?);
    }
    write_lines(features_out, &lines)?;
    if let Some(p) = features_out {
        manifest.add_output(p);
    }
    manifest.finish().map_err(data_err)
}

// ---------------------------------------------------------------------------
// tokenize
// ---------------------------------------------------------------------------

fn compression_from_config(config: &RunConfig) -> Result<CompressionMap, CliError> {
    let mut map = CompressionMap::default_paper();
    if let Some(extra) = config.get("compression_extra") {
        for entry in extra.split(',').filter(|s| !s.trim().is_empty()) {
            let (motif, marker) = entry
                .trim()
                .rsplit_once(':')
                .ok_or_else(|| CliError::Usage(format!("bad compression entry `{entry}`")))?;
            let mut chars = marker.chars();
            let (Some(m), None) = (chars.next(), chars.next()) else {
                return Err(CliError::Usage(format!(
                    "marker must be one character in `{entry}`"
                )));
            };
            map.push(motif.to_string(), m).map_err(data_err)?;
        }
    }
    Ok(map)
}

#[derive(Serialize)]
struct TokenRow<'a> {
    ids: &'a [u32],
}

pub fn cmd_tokenize(
    ctx: &Ctx,
    file: &Path,
    vocab_path: &Path,
    build: bool,
    tokens_out: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("tokenize");
    manifest.add_input(file).map_err(data_err)?;
    manifest.report_stale_inputs();
    let texts = load_helm_strings(file)?;

    let vocab = if build {
        let map = compression_from_config(&ctx.config)?;
        let vocab = Vocabulary::build(&texts, &map).map_err(data_err)?;
        vocab.save(vocab_path).map_err(data_err)?;
        manifest.add_output(vocab_path);
        vocab
    } else {
        Vocabulary::load(vocab_path).map_err(data_err)?
    };

    let mut lines = Vec::with_capacity(texts.len());
    for text in &texts {
        let tokens = vocab.encode(text);
        lines.push(serde_json::to_string(&TokenRow { ids: &tokens.ids }).map_err(data_err)?);
    }
    write_lines(tokens_out, &lines)?;
    if let Some(p) = tokens_out {
        manifest.add_output(p);
    }
    manifest.finish().map_err(data_err)
}

// ---------------------------------------------------------------------------
// dedup
// ---------------------------------------------------------------------------

pub fn cmd_dedup(ctx: &Ctx, input: &Path, out_file: Option<&Path>) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("dedup");
    manifest.add_input(input).map_err(data_err)?;
    manifest.report_stale_inputs();
    let records = corpus_io::read_corpus(input).map_err(data_err)?;
    let deduped = corpus::deduplicate(&records);

    let mut per_source: BTreeMap<String, usize> = BTreeMap::new();
    for r in &deduped {
        *per_source.entry(format!("{:?}", r.source)).or_insert(0) += 1;
    }
    eprintln!(
        "dedup: {} records -> {} unique ({})",
        records.len(),
        deduped.len(),
        per_source
            .iter()
            .map(|(s, n)| format!("{s}: {n}"))
            .collect::<Vec<_>>()
            .join(", ")
    );

    let default = ctx.out_dir.join("deduped.jsonl");
    let path = out_file.unwrap_or(&default);
    let lines: Vec<String> = deduped
        .iter()
        .map(|r| serde_json::to_string(r).map_err(data_err))
        .collect::<Result<_, _>>()?;
    write_lines(Some(path), &lines)?;
    manifest.add_output(path);
    manifest.finish().map_err(data_err)
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Strategy {
    Kfold,
    RandomPair,
    Cluster,
}

pub struct SplitArgs<'a> {
    pub strategy: Strategy,
    pub input: &'a Path,
    pub k: Option<usize>,
    pub val_fraction: Option<f64>,
    pub negatives: Option<usize>,
    pub clusters: usize,
    pub pca_dims: usize,
    pub max_dev: f64,
    pub split_out: Option<&'a Path>,
    pub pairs_out: Option<&'a Path>,
}

fn load_pairs_with_negatives(
    args: &SplitArgs<'_>,
    seed: u64,
) -> Result<Vec<PairRecord>, CliError> {
    let mut pairs = corpus_io::read_pairs_jsonl(args.input).map_err(data_err)?;
    if let Some(ratio) = args.negatives {
        let positives: Vec<PairRecord> = pairs.iter().filter(|p| p.label).cloned().collect();
        let sample = sample_negatives(&positives, ratio, seed ^ 0xbead);
        if sample.saturated {
            eprintln!(
                "note: negative sampling saturated at {} of {} requested",
                sample.negatives.len(),
                ratio * positives.len()
            );
        }
        pairs.extend(sample.negatives);
    }
    Ok(pairs)
}

pub fn cmd_split(ctx: &Ctx, args: &SplitArgs<'_>) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("split");
    manifest.add_input(args.input).map_err(data_err)?;
    manifest.report_stale_inputs();

    let default_out = ctx.out_dir.join("split.json");
    let split_path = args.split_out.unwrap_or(&default_out);

    let split: DatasetSplit = match args.strategy {
        Strategy::Kfold => {
            let records = corpus_io::read_corpus(args.input).map_err(data_err)?;
            let ids: Vec<String> = records.iter().map(|r| r.key.clone()).collect();
            make_kfold_splits(
                &ids,
                args.k.unwrap_or(10),
                args.val_fraction.unwrap_or(0.1),
                ctx.seed,
            )
            .map_err(data_err)?
        }
        Strategy::RandomPair => {
            let pairs = load_pairs_with_negatives(args, ctx.seed)?;
            write_pairs_out(args, &pairs, &mut manifest)?;
            make_random_pair_split(
                &pairs,
                args.k.unwrap_or(5),
                args.val_fraction.unwrap_or(0.1),
                ctx.seed,
            )
            .map_err(data_err)?
        }
        Strategy::Cluster => {
            let pairs = load_pairs_with_negatives(args, ctx.seed)?;
            write_pairs_out(args, &pairs, &mut manifest)?;
            // Complex signatures exist only for structure-backed pairs;
            // sampled negatives follow their protein's assignment.
            let signature_idx: Vec<usize> = (0..pairs.len())
                .filter(|&i| pairs[i].acsm.is_some())
                .collect();
            if signature_idx.is_empty() {
                return Err(CliError::Data(
                    "cluster strategy needs acsm vectors on the input pairs".to_string(),
                ));
            }
            let vectors: Vec<Vec<f64>> = signature_idx
                .iter()
                .map(|&i| pairs[i].acsm.clone().expect("filtered above"))
                .collect();
            let mat = Mat::from_rows(&vectors);
            let dims = args.pca_dims.min(mat.cols).min(mat.rows);
            let fit = helm_lm_core::corpus::pca::pca_reduce(&mat, dims).map_err(data_err)?;
            let km = helm_lm_core::corpus::kmeans::kmeans_cluster(
                &fit.projected,
                args.clusters.min(signature_idx.len()),
                ctx.seed ^ 0xc1,
            )
            .map_err(data_err)?;
            let mut labels: Vec<Option<usize>> = vec![None; pairs.len()];
            for (pos, &i) in signature_idx.iter().enumerate() {
                labels[i] = Some(km.labels[pos]);
            }
            let (split, report) = make_cluster_split(
                &pairs,
                &labels,
                &km.centroids,
                args.k.unwrap_or(5),
                args.max_dev,
                args.val_fraction.unwrap_or(0.1),
                ctx.seed,
            )
            .map_err(data_err)?;
            if report.constrained_fallback {
                eprintln!("note: constrained grouping infeasible, used greedy balancing");
            }
            let report_path = ctx.out_dir.join("cluster_split_report.json");
            write_json(&report_path, &report)?;
            manifest.add_output(&report_path);
            split
        }
    };

    write_json(split_path, &split)?;
    manifest.add_output(split_path);
    manifest.finish().map_err(data_err)
}

fn write_pairs_out(
    args: &SplitArgs<'_>,
    pairs: &[PairRecord],
    manifest: &mut ManifestBuilder,
) -> Result<(), CliError> {
    if let Some(path) = args.pairs_out {
        let lines: Vec<String> = pairs
            .iter()
            .map(|p| serde_json::to_string(p).map_err(data_err))
            .collect::<Result<_, _>>()?;
        write_lines(Some(path), &lines)?;
        manifest.add_output(path);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

fn model_config_from(config: &RunConfig, vocab: &Vocabulary) -> Result<ModelConfig, CliError> {
    let hidden = config.usize_or("hidden", 64).map_err(CliError::Usage)?;
    let layers = config.usize_or("layers", 2).map_err(CliError::Usage)?;
    let heads = config.usize_or("heads", 4).map_err(CliError::Usage)?;
    let mut cfg = ModelConfig::new(vocab.size(), hidden, layers, heads);
    cfg.ffn_dim = config
        .usize_or("ffn_dim", 4 * hidden)
        .map_err(CliError::Usage)?;
    cfg.max_len = config.usize_or("max_len", 512).map_err(CliError::Usage)?;
    cfg.max_relative_distance = config.usize_or("kappa", 8).map_err(CliError::Usage)?;
    cfg.dropout_rate = config.f64_or("dropout", 0.1).map_err(CliError::Usage)?;
    cfg.use_disentangled = config
        .bool_or("use_disentangled", true)
        .map_err(CliError::Usage)?;
    cfg.use_ngie = config.bool_or("use_ngie", true).map_err(CliError::Usage)?;
    cfg.use_emd = config.bool_or("use_emd", true).map_err(CliError::Usage)?;
    cfg.use_span_mask = config
        .bool_or("use_span_mask", true)
        .map_err(CliError::Usage)?;
    Ok(cfg)
}

fn pretrain_config_from(config: &RunConfig, seed: u64) -> Result<PretrainConfig, CliError> {
    Ok(PretrainConfig {
        batch_size: config.usize_or("batch_size", 32).map_err(CliError::Usage)?,
        max_epochs: config.usize_or("max_epochs", 50).map_err(CliError::Usage)?,
        patience: config.usize_or("patience", 20).map_err(CliError::Usage)?,
        base_lr: config.f64_or("base_lr", 1e-4).map_err(CliError::Usage)?,
        min_lr: config.f64_or("min_lr", 0.0).map_err(CliError::Usage)?,
        weight_decay: config
            .f64_or("weight_decay", 0.01)
            .map_err(CliError::Usage)?,
        grad_clip: config.f64_or("grad_clip", 1.0).map_err(CliError::Usage)?,
        val_fraction: config
            .f64_or("val_fraction", 0.05)
            .map_err(CliError::Usage)?,
        seed,
        stop_at_train_loss: config
            .get_parsed("stop_at_train_loss")
            .map_err(CliError::Usage)?,
    })
}

pub fn cmd_pretrain(
    ctx: &Ctx,
    input: &Path,
    vocab_path: &Path,
    checkpoint_out: Option<&Path>,
    history_out: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("pretrain");
    manifest.add_input(input).map_err(data_err)?;
    manifest.add_input(vocab_path).map_err(data_err)?;
    manifest.report_stale_inputs();

    let vocab = Vocabulary::load(vocab_path).map_err(data_err)?;
    let texts = load_helm_strings(input)?;
    let model_cfg = model_config_from(&ctx.config, &vocab)?;
    // Overlong sequences are rejected at ingestion, not truncated.
    let mut sequences = Vec::with_capacity(texts.len());
    let mut rejected = 0usize;
    for text in &texts {
        let seq = vocab.encode(text);
        if seq.len() > model_cfg.max_len {
            rejected += 1;
        } else {
            sequences.push(seq);
        }
    }
    if rejected > 0 {
        eprintln!("note: rejected {rejected} sequences longer than max_len");
    }
    let train_cfg = pretrain_config_from(&ctx.config, ctx.seed)?;

    let default_ckpt = ctx.out_dir.join("model.ckpt");
    let ckpt_path = checkpoint_out.unwrap_or(&default_ckpt);
    let default_history = ctx.out_dir.join("history.jsonl");
    let history_path = history_out.unwrap_or(&default_history);

    let history = match ctx.precision_f64 {
        false => {
            let out =
                pretrain::<f32>(&sequences, &vocab, &model_cfg, &train_cfg).map_err(data_err)?;
            save_checkpoint(&out.weights, None, ckpt_path).map_err(data_err)?;
            out.history
        }
        true => {
            let out =
                pretrain::<f64>(&sequences, &vocab, &model_cfg, &train_cfg).map_err(data_err)?;
            save_checkpoint(&out.weights.cast::<f32>(), None, ckpt_path).map_err(data_err)?;
            out.history
        }
    };
    let lines: Vec<String> = history
        .iter()
        .map(|h| serde_json::to_string(h).map_err(data_err))
        .collect::<Result<_, _>>()?;
    write_lines(Some(history_path), &lines)?;
    manifest.add_output(ckpt_path);
    manifest.add_output(history_path);
    manifest.finish().map_err(data_err)
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

pub fn cmd_embed(
    ctx: &Ctx,
    checkpoint: &Path,
    input: &Path,
    vocab_path: &Path,
    out_file: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("embed");
    manifest.add_input(checkpoint).map_err(data_err)?;
    manifest.add_input(input).map_err(data_err)?;
    manifest.add_input(vocab_path).map_err(data_err)?;
    manifest.report_stale_inputs();

    let vocab = Vocabulary::load(vocab_path).map_err(data_err)?;
    let contents = load_checkpoint(checkpoint).map_err(data_err)?;
    let texts = load_helm_strings(input)?;
    let keys: Vec<String> = texts
        .iter()
        .map(|t| parse_helm(t).map(|s| canonical_key(&s)))
        .collect::<Result<_, _>>()
        .map_err(data_err)?;
    let sequences: Vec<_> = texts.iter().map(|t| vocab.encode(t)).collect();

    let mat = if ctx.precision_f64 {
        let weights = contents.weights.cast::<f64>();
        pooled_embeddings(&weights, &sequences, vocab.special.pad).map_err(data_err)?
    } else {
        pooled_embeddings(&contents.weights, &sequences, vocab.special.pad).map_err(data_err)?
    };

    let lines: Vec<String> = keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            serde_json::to_string(&EmbeddingRow {
                id: key.clone(),
                vector: mat.row(i).to_vec(),
            })
            .map_err(data_err)
        })
        .collect::<Result<_, _>>()?;
    let default = ctx.out_dir.join("embeddings.jsonl");
    let path = out_file.unwrap_or(&default);
    write_lines(Some(path), &lines)?;
    manifest.add_output(path);
    manifest.finish().map_err(data_err)
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskArg {
    Regression,
    Binary,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProtocolArg {
    Full,
    Head,
    Linear,
}

impl ProtocolArg {
    fn to_protocol(self) -> Protocol {
        match self {
            ProtocolArg::Full => Protocol::FullFinetune,
            ProtocolArg::Head => Protocol::HeadFinetune,
            ProtocolArg::Linear => Protocol::LinearProbe,
        }
    }
}

pub struct FinetuneArgs<'a> {
    pub task: TaskArg,
    pub protocol: ProtocolArg,
    pub input: &'a Path,
    pub split: &'a Path,
    pub checkpoint: Option<&'a Path>,
    pub vocab: Option<&'a Path>,
    pub embeddings: Option<&'a Path>,
    pub protein_embeddings: Option<&'a Path>,
    pub fold: Option<usize>,
    pub metrics_out: Option<&'a Path>,
    pub predictions_out: Option<&'a Path>,
}

fn finetune_config_from(
    config: &RunConfig,
    protocol: Protocol,
    seed: u64,
) -> Result<FinetuneConfig, CliError> {
    let mut cfg = FinetuneConfig::new(protocol);
    cfg.encoder_lr = config
        .f64_or("encoder_lr", cfg.encoder_lr)
        .map_err(CliError::Usage)?;
    cfg.head_lr = config
        .f64_or("head_lr", cfg.head_lr)
        .map_err(CliError::Usage)?;
    cfg.batch_size = config
        .usize_or("batch_size", cfg.batch_size)
        .map_err(CliError::Usage)?;
    cfg.max_epochs = config
        .usize_or("max_epochs", cfg.max_epochs)
        .map_err(CliError::Usage)?;
    cfg.patience = config
        .usize_or("patience", cfg.patience)
        .map_err(CliError::Usage)?;
    cfg.pos_weight = config
        .f64_or("pos_weight", cfg.pos_weight)
        .map_err(CliError::Usage)?;
    cfg.weight_decay = config
        .f64_or("weight_decay", cfg.weight_decay)
        .map_err(CliError::Usage)?;
    if let Some(kind) = config.get("head_kind") {
        cfg.head_kind = match kind {
            "residual_mlp_3layer" => HeadKind::ResidualMlp3,
            "official_mlp_3layer" => HeadKind::OfficialMlp3,
            "mlp_2layer_tanh" => HeadKind::Mlp2Tanh,
            "single_linear" => HeadKind::SingleLinear,
            "unified_ppi_residual_mlp" => HeadKind::UnifiedPpiResidualMlp,
            other => return Err(CliError::Usage(format!("unknown head_kind `{other}`"))),
        };
    }
    cfg.seed = seed;
    Ok(cfg)
}

fn restrict_fold(split: DatasetSplit, fold: Option<usize>) -> Result<DatasetSplit, CliError> {
    match fold {
        None => Ok(split),
        Some(f) => {
            if f >= split.folds.len() {
                return Err(CliError::Usage(format!(
                    "--fold {f} out of range ({} folds)",
                    split.folds.len()
                )));
            }
            Ok(DatasetSplit {
                fold_count: 1,
                folds: vec![split.folds[f].clone()],
                dropped: split.dropped,
            })
        }
    }
}

fn load_split(path: &Path) -> Result<DatasetSplit, CliError> {
    let text = std::fs::read_to_string(path).map_err(data_err)?;
    serde_json::from_str(&text).map_err(data_err)
}

pub fn cmd_finetune(ctx: &Ctx, args: &FinetuneArgs<'_>) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("finetune");
    manifest.add_input(args.input).map_err(data_err)?;
    manifest.add_input(args.split).map_err(data_err)?;
    manifest.report_stale_inputs();

    let protocol = args.protocol.to_protocol();
    let config = finetune_config_from(&ctx.config, protocol, ctx.seed)?;
    let split = restrict_fold(load_split(args.split)?, args.fold)?;

    let output: FinetuneOutput = match args.task {
        TaskArg::Regression => run_regression(ctx, args, &config, &split, &mut manifest)?,
        TaskArg::Binary => run_binary(ctx, args, &config, &split, &mut manifest)?,
    };

    let default_metrics = ctx.out_dir.join("metrics.json");
    let metrics_path = args.metrics_out.unwrap_or(&default_metrics);
    write_json(metrics_path, &output.report)?;
    manifest.add_output(metrics_path);

    // One JSON line per (fold, epoch) with the validation loss.
    let log_path = ctx.out_dir.join("training_log.jsonl");
    let mut log_lines = Vec::new();
    for (fold, curve) in output.validation_curves.iter().enumerate() {
        for (epoch, val_loss) in curve.iter().enumerate() {
            log_lines.push(format!(
                "{{\"fold\":{fold},\"epoch\":{epoch},\"val_loss\":{val_loss}}}"
            ));
        }
    }
    write_lines(Some(&log_path), &log_lines)?;
    manifest.add_output(&log_path);

    let default_preds = ctx.out_dir.join("predictions.csv");
    let preds_path = args.predictions_out.unwrap_or(&default_preds);
    let mut csv = String::from("id,y_true,y_pred\n");
    for (fold, rows) in output.fold_predictions.iter().enumerate() {
        for row in rows {
            // The id column carries the fold for downstream grouping.
            csv.push_str(&format!(
                "{},{},{}\n",
                csv_quote(&format!("fold{fold}:{}", row.id)),
                row.y_true,
                row.y_pred
            ));
        }
    }
    write_atomic(preds_path, csv.as_bytes()).map_err(data_err)?;
    manifest.add_output(preds_path);
    manifest.finish().map_err(data_err)
}

fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn run_regression(
    ctx: &Ctx,
    args: &FinetuneArgs<'_>,
    config: &FinetuneConfig,
    split: &DatasetSplit,
    manifest: &mut ManifestBuilder,
) -> Result<FinetuneOutput, CliError> {
    let records: Vec<CorpusRecord> = corpus_io::read_corpus(args.input).map_err(data_err)?;
    let ids: Vec<String> = records.iter().map(|r| r.key.clone()).collect();
    let y: Vec<f64> = records
        .iter()
        .map(|r| {
            r.labels.get("log_papp").copied().ok_or_else(|| {
                CliError::Data(format!("record {} lacks a log_papp label", r.key))
            })
        })
        .collect::<Result<_, _>>()?;

    if let Some(emb_path) = args.embeddings {
        // Frozen-encoder protocols over precomputed vectors.
        manifest.add_input(emb_path).map_err(data_err)?;
        let table = corpus_io::read_embeddings_jsonl(emb_path).map_err(data_err)?;
        let rows: Vec<Vec<f64>> = ids
            .iter()
            .map(|id| {
                table
                    .get(id)
                    .cloned()
                    .ok_or_else(|| CliError::Data(format!("no embedding for {id}")))
            })
            .collect::<Result<_, _>>()?;
        let x = Mat::from_rows(&rows);
        let run = if ctx.precision_f64 {
            finetune_regression_vectors_at::<f64>("regression", &x, &ids, &y, split, config)
        } else {
            finetune_regression_vectors_at::<f32>("regression", &x, &ids, &y, split, config)
        };
        return run.map_err(data_err);
    }

    let (Some(ckpt), Some(vocab_path)) = (args.checkpoint, args.vocab) else {
        return Err(CliError::Usage(
            "regression without --embeddings needs --checkpoint and --vocab".to_string(),
        ));
    };
    manifest.add_input(ckpt).map_err(data_err)?;
    manifest.add_input(vocab_path).map_err(data_err)?;
    let vocab = Vocabulary::load(vocab_path).map_err(data_err)?;
    let contents = load_checkpoint(ckpt).map_err(data_err)?;
    let sequences: Vec<_> = records.iter().map(|r| vocab.encode(&r.helm)).collect();
    let run = if ctx.precision_f64 {
        finetune_regression_sequences(
            "regression",
            &contents.weights.cast::<f64>(),
            &sequences,
            &ids,
            &y,
            vocab.special.pad,
            split,
            config,
        )
    } else {
        finetune_regression_sequences(
            "regression",
            &contents.weights,
            &sequences,
            &ids,
            &y,
            vocab.special.pad,
            split,
            config,
        )
    };
    run.map_err(|e| match e {
        helm_lm_core::training::TrainError::NonFiniteGradient(_) => {
            CliError::Numeric(e.to_string())
        }
        other => CliError::Data(other.to_string()),
    })
}

fn run_binary(
    ctx: &Ctx,
    args: &FinetuneArgs<'_>,
    config: &FinetuneConfig,
    split: &DatasetSplit,
    manifest: &mut ManifestBuilder,
) -> Result<FinetuneOutput, CliError> {
    if args.protocol == ProtocolArg::Full {
        return Err(CliError::Usage(
            "binary pair task supports head and linear protocols only".to_string(),
        ));
    }
    let pairs = corpus_io::read_pairs_jsonl(args.input).map_err(data_err)?;
    let (Some(pep_path), Some(prot_path)) = (args.embeddings, args.protein_embeddings) else {
        return Err(CliError::Usage(
            "binary task needs --embeddings (peptide) and --protein-embeddings".to_string(),
        ));
    };
    manifest.add_input(pep_path).map_err(data_err)?;
    manifest.add_input(prot_path).map_err(data_err)?;
    let pep = corpus_io::read_embeddings_jsonl(pep_path).map_err(data_err)?;
    let prot = corpus_io::read_embeddings_jsonl(prot_path).map_err(data_err)?;

    let mut rows = Vec::with_capacity(pairs.len());
    let mut ids = Vec::with_capacity(pairs.len());
    let mut y = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let pv = pep
            .get(&p.peptide_key)
            .ok_or_else(|| CliError::Data(format!("no peptide embedding for {}", p.peptide_key)))?;
        let rv = prot.get(&p.protein_id).ok_or_else(|| {
            CliError::Data(format!("missing protein vector for {}", p.protein_id))
        })?;
        let mut row = pv.clone();
        row.extend_from_slice(rv);
        rows.push(row);
        ids.push(p.id());
        y.push(p.label);
    }
    let x = Mat::from_rows(&rows);
    let run = if ctx.precision_f64 {
        finetune_binary_vectors_at::<f64>("pair_classification", &x, &ids, &y, split, config)
    } else {
        finetune_binary_vectors_at::<f32>("pair_classification", &x, &ids, &y, split, config)
    };
    run.map_err(data_err)
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProbeTaskArg {
    Regression,
    Classification,
}

pub fn cmd_probe(
    ctx: &Ctx,
    embeddings: &Path,
    targets: &Path,
    task: ProbeTaskArg,
    folds: usize,
    report_out: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("probe");
    manifest.add_input(embeddings).map_err(data_err)?;
    manifest.add_input(targets).map_err(data_err)?;
    manifest.report_stale_inputs();

    let emb = corpus_io::read_embeddings_jsonl(embeddings).map_err(data_err)?;
    let target_map = read_targets(targets)?;
    // Join on id, sorted for determinism.
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (id, vector) in &emb {
        let Some(&v) = target_map.get(id) else {
            return Err(CliError::Data(format!("no target for embedding id {id}")));
        };
        rows.push(vector.clone());
        values.push(v);
    }
    let x = Mat::from_rows(&rows);
    let target = match task {
        ProbeTaskArg::Regression => ProbeTarget::Numeric(values),
        ProbeTaskArg::Classification => {
            let labels: Vec<usize> = values
                .iter()
                .map(|&v| {
                    if v < 0.0 || v.fract() != 0.0 {
                        Err(CliError::Data(format!(
                            "classification target {v} is not a class index"
                        )))
                    } else {
                        Ok(v as usize)
                    }
                })
                .collect::<Result<_, _>>()?;
            ProbeTarget::Class(labels)
        }
    };
    let report: MetricReport =
        linear_probe_cv(&x, &target, folds, &[], ctx.seed).map_err(data_err)?;
    let default = ctx.out_dir.join("probe_report.json");
    let path = report_out.unwrap_or(&default);
    write_json(path, &report)?;
    manifest.add_output(path);
    manifest.finish().map_err(data_err)
}

fn read_targets(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    #[derive(serde::Deserialize)]
    struct Row {
        id: String,
        value: f64,
    }
    let text = std::fs::read_to_string(path).map_err(data_err)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("targets line {}: {e}", i + 1)))?;
        if out.insert(row.id.clone(), row.value).is_some() {
            return Err(CliError::Data(format!("duplicate target id {}", row.id)));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// stats compare
// ---------------------------------------------------------------------------

pub fn cmd_stats_compare(
    ctx: &Ctx,
    a: &Path,
    b: &Path,
    n_train: usize,
    n_test: usize,
    fdr_q: f64,
    report_out: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("stats");
    manifest.add_input(a).map_err(data_err)?;
    manifest.add_input(b).map_err(data_err)?;
    manifest.report_stale_inputs();

    let va = read_metric_vectors(a)?;
    let vb = read_metric_vectors(b)?;
    let report =
        compare_metric_sets(&va, &vb, n_train, n_test, fdr_q).map_err(|e| match e {
            helm_lm_core::stats::StatsError::PValueOutOfRange(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        })?;
    let default = ctx.out_dir.join("comparison.json");
    let path = report_out.unwrap_or(&default);
    write_json(path, &report)?;
    manifest.add_output(path);
    manifest.finish().map_err(data_err)
}

/// Accepts either a MetricReport (from finetune/probe) or bare MetricVectors.
fn read_metric_vectors(path: &Path) -> Result<MetricVectors, CliError> {
    let text = std::fs::read_to_string(path).map_err(data_err)?;
    if let Ok(report) = serde_json::from_str::<MetricReport>(&text) {
        return Ok(report.to_vectors());
    }
    serde_json::from_str::<MetricVectors>(&text).map_err(data_err)
}

// ---------------------------------------------------------------------------
// mask (diagnostics; exposes the masking machinery for inspection)
// ---------------------------------------------------------------------------

pub fn cmd_mask(
    ctx: &Ctx,
    input: &Path,
    vocab_path: &Path,
    out_file: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("mask");
    manifest.add_input(input).map_err(data_err)?;
    manifest.add_input(vocab_path).map_err(data_err)?;
    manifest.report_stale_inputs();
    let vocab = Vocabulary::load(vocab_path).map_err(data_err)?;
    let texts = load_helm_strings(input)?;
    let use_span = ctx
        .config
        .bool_or("use_span_mask", true)
        .map_err(CliError::Usage)?;
    #[derive(Serialize)]
    struct MaskRow {
        input_ids: Vec<u32>,
        target_ids: Vec<u32>,
        loss_mask: Vec<bool>,
    }
    let mut lines = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let tokens = vocab.encode(text);
        let seed = ctx.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let row = if use_span {
            apply_span_mask(&tokens, &vocab, seed)
        } else {
            apply_token_mask(&tokens, &vocab, seed)
        };
        lines.push(
            serde_json::to_string(&MaskRow {
                input_ids: row.input_ids,
                target_ids: row.target_ids,
                loss_mask: row.loss_mask,
            })
            .map_err(data_err)?,
        );
    }
    write_lines(out_file, &lines)?;
    if let Some(p) = out_file {
        manifest.add_output(p);
    }
    manifest.finish().map_err(data_err)
}

pub fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(data_err)
}
