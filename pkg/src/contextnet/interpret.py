"""Interpretability: per-field weight scores, corpus-level feature importance,
and per-block field-correlation matrices.

The prediction head is a logistic regression over the last block's output,
so each field's signed contribution to the logit is the dot product of its
final embedding with the matching slice of the head weights; those
contributions plus the intercept reconstruct the logit exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from contextnet.data import (
    Batch,
    EncodedDataset,
    EncodedInstance,
    FieldSchema,
    NUMERICAL,
    Vocabulary,
)
from contextnet.model import ModelConfig, Parameters, instance_batch, predict

IMPORTANCE_SUM = "sum"
IMPORTANCE_NORM = "norm"


@dataclass
class FeatureWeightReport:
    field_names: list[str]
    weights: np.ndarray  # [f] signed contributions to the logit
    intercept: float
    logit: float
    score: float


@dataclass
class ImportanceRow:
    field: str
    token: str
    count: int  # instances containing the feature value
    score: float


def _field_weights(final: np.ndarray, params: Parameters, config: ModelConfig):
    """Signed per-field logit contributions for a batch: [B, f]."""
    w = params.head_w.reshape(config.n_fields, config.embed_dim)
    return np.einsum("bfk,fk->bf", final, w)


def instance_feature_weights(
    params: Parameters,
    config: ModelConfig,
    instance: EncodedInstance,
    field_names: list[str] | None = None,
) -> FeatureWeightReport:
    """Per-field contributions for one instance; they sum (with the
    intercept) to the prediction logit."""
    scores, tape = predict(instance_batch(instance), params, config)
    fw = _field_weights(tape.final, params, config)[0]
    names = field_names or [f"field_{i}" for i in range(config.n_fields)]
    return FeatureWeightReport(
        field_names=list(names),
        weights=fw,
        intercept=float(params.head_b[0]),
        logit=float(tape.logits[0]),
        score=float(scores[0]),
    )


def corpus_feature_importance(
    params: Parameters,
    config: ModelConfig,
    dataset: EncodedDataset,
    schema: list[FieldSchema] | None = None,
    vocab: Vocabulary | None = None,
    mode: str = IMPORTANCE_NORM,
    alpha: float = 10.0,
    chunk: int = 4096,
    include_absent: bool = False,
) -> list[ImportanceRow]:
    """Aggregate |per-field weight| per feature value over a dataset.

    sum mode totals the absolute contributions; norm mode divides by
    (n + alpha) where n counts the instances containing the feature value,
    damping rare features. Numerical fields aggregate under one per-field
    key. Rows are sorted by descending score; feature values absent from
    the dataset (score 0, n 0) are listed only when include_absent is set.
    """
    if mode not in (IMPORTANCE_SUM, IMPORTANCE_NORM):
        raise ValueError(f"unknown importance mode {mode!r}")
    n_fields = config.n_fields
    cards = [t.shape[0] for t in params.embed]
    sums = [np.zeros(c) for c in cards]
    counts = [np.zeros(c, dtype=np.int64) for c in cards]
    for start in range(0, len(dataset), chunk):
        stop = min(start + chunk, len(dataset))
        batch = Batch(
            dataset.labels[start:stop],
            dataset.indices[start:stop],
            dataset.values[start:stop],
        )
        _, tape = predict(batch, params, config)
        fw_abs = np.abs(_field_weights(tape.final, params, config))
        for i in range(n_fields):
            np.add.at(sums[i], batch.indices[:, i], fw_abs[:, i])
            np.add.at(counts[i], batch.indices[:, i], 1)

    rows = []
    for i in range(n_fields):
        fname = schema[i].name if schema else f"field_{i}"
        numeric = schema[i].kind == NUMERICAL if schema else cards[i] == 1
        if numeric:
            total = float(sums[i].sum())
            n = int(counts[i].sum())
            score = total if mode == IMPORTANCE_SUM else total / (n + alpha)
            rows.append(ImportanceRow(fname, "<numeric>", n, score))
            continue
        for idx in range(cards[i]):
            n = int(counts[i][idx])
            if n == 0 and not include_absent:
                continue
            total = float(sums[i][idx])
            score = total if mode == IMPORTANCE_SUM else total / (n + alpha)
            token = vocab.token_of(fname, idx) if vocab else f"#{idx}"
            rows.append(ImportanceRow(fname, token, n, score))
    rows.sort(key=lambda r: (-r.score, r.field, r.token))
    return rows


def block_dot_products(
    params: Parameters, config: ModelConfig, instance: EncodedInstance
) -> list[np.ndarray]:
    """Pairwise dot products between field embeddings at every stage.

    Returns n_blocks + 1 symmetric [f, f] matrices; level 0 is the embedding
    layer and level l the l-th block's output.
    """
    _, tape = predict(instance_batch(instance), params, config)
    stages = [tape.embed_out[0]] + [out[0] for out in _block_outputs(tape)]
    matrices = []
    for e in stages:
        g = e @ e.T
        g = np.triu(g) + np.triu(g, 1).T  # exactly symmetric by construction
        matrices.append(g)
    return matrices


def _block_outputs(tape):
    n = len(tape.block_in)
    return [tape.block_in[i + 1] if i + 1 < n else tape.final for i in range(n)]
