#!/usr/bin/env python3
"""Smoke test for the helm_lm_py extension module.

Builds nothing itself: run `cargo build -p helm-lm-py` (or --release) first.
The script locates the compiled cdylib under target/, copies it next to a
temp directory as an importable module, and exercises the main surfaces.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libhelm_lm_py.so",
        REPO / "target" / "debug" / "libhelm_lm_py.so",
        REPO / "target" / "release" / "libhelm_lm_py.dylib",
        REPO / "target" / "debug" / "libhelm_lm_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the extension first: cargo build -p helm-lm-py")
    stage = Path(tempfile.mkdtemp(prefix="helm_lm_py_"))
    suffix = ".so" if built.suffix == ".so" else ".so"  # CPython loads .so on mac too
    shutil.copy2(built, stage / f"helm_lm_py{suffix}")
    sys.path.insert(0, str(stage))
    import helm_lm_py

    return helm_lm_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    m = load_module()

    # --- HELM parsing and topology -------------------------------------
    feats = m.parse_features("PEPTIDE1{A.G.C}$PEPTIDE1,PEPTIDE1,3:R2-1:R1$$$V2.0")
    assert feats["structure_type"] == "cyclic" and feats["n_rings"] == 1, feats
    assert m.parse_features("PEPTIDE1{A.G.C}$$$$V2.0")["structure_type"] == "linear"
    lariat = m.parse_features("PEPTIDE1{A.G.C.D.E}$PEPTIDE1,PEPTIDE1,2:R3-5:R1$$$")
    assert lariat["structure_type"] == "lariat", lariat

    # Canonical keys ignore polymer numbering.
    assert m.canonical_key("PEPTIDE2{A.G}$$$$") == m.canonical_key("PEPTIDE1{A.G}$$$$")
    assert m.canonical_key("PEPTIDE1{A.G}$$$$") != m.canonical_key("PEPTIDE1{G.A}$$$$")

    text = "PEPTIDE1{[meA].G.C}$$$$V2.0"
    assert m.round_trip(text) == text

    try:
        m.parse_features("PEPTIDE1{A.G")
        raise AssertionError("expected a parse error")
    except ValueError:
        pass

    # --- Tokenizer ------------------------------------------------------
    corpus = [
        "PEPTIDE1{A.G.C.D.E}$$$$V2.0",
        "PEPTIDE1{[meA].G.F.K}$$$$",
        "PEPTIDE1{A.G.C}$PEPTIDE1,PEPTIDE1,3:R2-1:R1$$$V2.0",
    ]
    vocab = m.Vocabulary.build(corpus)
    for s in corpus:
        ids = vocab.encode(s)
        assert len(ids) <= len(s), "compression must never lengthen"
        assert vocab.decode(ids) == s
    specials = vocab.special_ids()
    assert len({specials["unk"], specials["mask"], specials["pad"]}) == 3

    # --- Span masking ---------------------------------------------------
    ids = vocab.encode(corpus[0] * 3)
    masked_in, targets, loss_mask = m.apply_span_mask(ids, vocab, seed=7)
    budget = math.floor(0.15 * len(ids))
    assert sum(loss_mask) == budget, (sum(loss_mask), budget)
    assert targets == ids
    again = m.apply_span_mask(ids, vocab, seed=7)
    assert again == (masked_in, targets, loss_mask), "masking must be seed-deterministic"

    # --- Encoder --------------------------------------------------------
    enc = m.Encoder.init(vocab, hidden=16, layers=2, heads=2, kappa=4, seed=1)
    emb = enc.embed(vocab.encode(corpus[0]))
    assert len(emb) == 16
    manifest = enc.manifest()
    assert "rel_embedding" in manifest and "conv.kernel" in manifest
    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "model.ckpt")
        enc.save(path)
        reloaded = m.Encoder.load(path, vocab)
        approx_list = reloaded.embed(vocab.encode(corpus[0]))
        assert approx_list == emb, "checkpoint round trip changed the embedding"

    # --- Statistics -----------------------------------------------------
    reject, adjusted = m.bh_fdr([0.01, 0.02, 0.04, 0.06], q=0.05)
    assert reject == [True, True, False, False]
    expected = [0.04, 0.04, 0.04 * 4 / 3, 0.06]
    for got, want in zip(adjusted, expected):
        approx(got, want, 1e-12)

    t, p = m.corrected_resampled_ttest([0.1, 0.12, 0.08, 0.11, 0.09], 80, 10)
    assert t > 0 and 0 < p < 0.05

    d = m.cohens_d([0.0, 2.0])
    approx(d, 1 / math.sqrt(2), 1e-12)
    assert m.effect_magnitude(d) == "medium"
    assert m.effect_magnitude(0.2) == "small"
    assert m.effect_magnitude(0.05) == "negligible"

    # --- Metrics ----------------------------------------------------------
    rm = m.regression_metrics([0.0, 1.0, 2.0], [0.0, 1.0, 1.0])
    approx(rm["mae"], 1 / 3, 1e-12)
    approx(rm["r2"], 0.5, 1e-12)
    cm = m.classification_metrics([True, False, True, False], [0.9, 0.8, 0.7, 0.1])
    approx(cm["roc_auc"], 0.75, 1e-12)

    # --- Clustering -------------------------------------------------------
    blobs = []
    labels = []
    for c, (cx, cy) in enumerate([(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]):
        for i in range(20):
            blobs.append([cx + 0.01 * i, cy - 0.01 * i])
            labels.append(c)
    km_labels, inertia = m.kmeans(blobs, 3, seed=5)
    assert len(set(km_labels)) == 3 and inertia < 1.0
    assert m.knn_accuracy(blobs, labels, k=3) == 1.0
    idx = m.clustering_indices(blobs, labels)
    assert idx["silhouette"] > 0.9

    projected = m.pca(blobs, 2)
    assert len(projected) == len(blobs) and len(projected[0]) == 2

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
