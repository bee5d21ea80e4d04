"""Model: embeddings, contextual embedding (TCE), refinement blocks, head.

The forward pass keeps every intermediate needed by the hand-written
backward pass in a TapeCache. Parameter sharing across blocks is realized
by storing shared tensors once and resolving block -> storage slot, so
gradients of shared tensors accumulate additively.

Shapes follow the row-vector convention: a field embedding is a length-k
row, a block maps [B, f, k] -> [B, f, k], and the prediction head is a
logistic regression over the flattened [B, f*k] output of the last block.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from contextnet.data import Batch, EncodedInstance
from contextnet.ops import (
    LayerNormCache,
    Rng,
    ShapeError,
    col_sums,
    layer_norm,
    layer_norm_backward,
    logit,
    mix_seed,
    relu,
    sigmoid,
)

PFFN = "pffn"
SFFN = "sffn"

SHARE_NOTHING = "none"
SHARE_AGG = "agg"
SHARE_AGG_PROJ = "agg-proj"

LN_EPS = 1e-5
_INIT_SALT = 0x1217

# log-argument clamp for the cross-entropy loss
_P_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    n_blocks = 0 degenerates to logistic regression over the embeddings.
    The no_* flags remove one component each: the contextual-embedding merge,
    the feed-forward map, the layer norm, or the residual connection (the
    residual exists only in the pffn variant).
    """

    n_fields: int
    embed_dim: int = 10
    agg_width: int = 20
    n_blocks: int = 3
    variant: str = SFFN
    sharing: str = SHARE_NOTHING
    no_tce: bool = False
    no_ffn: bool = False
    no_ln: bool = False
    no_rc: bool = False
    l2: float = 0.0

    def __post_init__(self):
        if self.n_fields < 1:
            raise ValueError("n_fields must be >= 1")
        if self.embed_dim < 1 or self.agg_width < 1:
            raise ValueError("embed_dim and agg_width must be >= 1")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        if self.variant not in (PFFN, SFFN):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.sharing not in (SHARE_NOTHING, SHARE_AGG, SHARE_AGG_PROJ):
            raise ValueError(f"unknown sharing strategy {self.sharing!r}")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")

    @property
    def flat_dim(self) -> int:
        return self.n_fields * self.embed_dim

    @property
    def has_tce(self) -> bool:
        return self.n_blocks >= 1 and not self.no_tce

    @property
    def has_ffn(self) -> bool:
        return self.n_blocks >= 1 and not self.no_ffn

    @property
    def has_ln(self) -> bool:
        return self.has_ffn and not self.no_ln

    @property
    def n_agg_slots(self) -> int:
        if not self.has_tce:
            return 0
        return 1 if self.sharing in (SHARE_AGG, SHARE_AGG_PROJ) else self.n_blocks

    @property
    def n_proj_slots(self) -> int:
        if not self.has_tce:
            return 0
        return 1 if self.sharing == SHARE_AGG_PROJ else self.n_blocks

    def agg_slot(self, block: int) -> int:
        return 0 if self.n_agg_slots == 1 else block

    def proj_slot(self, block: int) -> int:
        return 0 if self.n_proj_slots == 1 else block


@dataclass
class Parameters:
    """All learnable tensors.

    embed[i] is [cardinality_i, k]; numerical fields use a single row scaled
    by the standardized value. agg/proj lists hold one entry per storage
    slot (1 when shared across blocks, n_blocks otherwise). Biases exist
    only where the architecture carries them: the sffn map has none.
    """

    embed: list[np.ndarray]
    agg_w: list[np.ndarray] = field(default_factory=list)  # [t, m]
    agg_b: list[np.ndarray] = field(default_factory=list)  # [t]
    proj_w: list[np.ndarray] = field(default_factory=list)  # [f, k, t]
    proj_b: list[np.ndarray] = field(default_factory=list)  # [f, k]
    ffn_w1: list[np.ndarray] = field(default_factory=list)  # [k, k]
    ffn_b1: list[np.ndarray] = field(default_factory=list)  # [k] (pffn)
    ffn_w2: list[np.ndarray] = field(default_factory=list)  # [k, k] (pffn)
    ffn_b2: list[np.ndarray] = field(default_factory=list)  # [k] (pffn)
    ln_gain: list[np.ndarray] = field(default_factory=list)  # [k]
    ln_bias: list[np.ndarray] = field(default_factory=list)  # [k]
    head_w: np.ndarray = None  # [f*k]
    head_b: np.ndarray = None  # [1]

    _GROUPS = (
        "embed",
        "agg_w",
        "agg_b",
        "proj_w",
        "proj_b",
        "ffn_w1",
        "ffn_b1",
        "ffn_w2",
        "ffn_b2",
        "ln_gain",
        "ln_bias",
    )
    # tensors entering the L2 penalty: weights only, no biases or LN affine
    _REGULARIZED = ("embed", "agg_w", "proj_w", "ffn_w1", "ffn_w2", "head_w")

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Canonical (name, array) declaration order used by the optimizer,
        checkpoints, and gradient checks."""
        out = []
        for group in self._GROUPS:
            for i, arr in enumerate(getattr(self, group)):
                out.append((f"{group}.{i}", arr))
        out.append(("head_w", self.head_w))
        out.append(("head_b", self.head_b))
        return out

    def zeros_like(self) -> "Parameters":
        return Parameters(
            embed=[np.zeros_like(a) for a in self.embed],
            agg_w=[np.zeros_like(a) for a in self.agg_w],
            agg_b=[np.zeros_like(a) for a in self.agg_b],
            proj_w=[np.zeros_like(a) for a in self.proj_w],
            proj_b=[np.zeros_like(a) for a in self.proj_b],
            ffn_w1=[np.zeros_like(a) for a in self.ffn_w1],
            ffn_b1=[np.zeros_like(a) for a in self.ffn_b1],
            ffn_w2=[np.zeros_like(a) for a in self.ffn_w2],
            ffn_b2=[np.zeros_like(a) for a in self.ffn_b2],
            ln_gain=[np.zeros_like(a) for a in self.ln_gain],
            ln_bias=[np.zeros_like(a) for a in self.ln_bias],
            head_w=np.zeros_like(self.head_w),
            head_b=np.zeros_like(self.head_b),
        )

    def copy(self) -> "Parameters":
        c = self.zeros_like()
        for (_, dst), (_, src) in zip(c.named_tensors(), self.named_tensors()):
            dst[...] = src
        return c

    def size(self) -> int:
        return sum(a.size for _, a in self.named_tensors())

    def regularized_tensors(self) -> list[tuple[str, np.ndarray]]:
        return [
            (name, arr)
            for name, arr in self.named_tensors()
            if name.split(".")[0] in self._REGULARIZED
        ]


def init_params(
    config: ModelConfig,
    cardinalities: list[int],
    seed: int,
    pos_rate: float | None = None,
) -> Parameters:
    """Allocate and initialize every tensor the configuration calls for.

    Embeddings start small (Normal, std 0.01), fully connected weights use
    the uniform fan-based bound sqrt(6 / (fan_in + fan_out)), biases start
    at zero, and the head starts as the prior: w = 0 and w0 = logit of the
    training positive rate when known, so the initial predictions are
    calibrated to the base rate.
    """
    if len(cardinalities) != config.n_fields:
        raise ShapeError(
            f"{len(cardinalities)} cardinalities for {config.n_fields} fields"
        )
    rng = Rng(mix_seed(seed, _INIT_SALT))
    k = config.embed_dim
    t = config.agg_width
    f = config.n_fields
    m = config.flat_dim

    def glorot(shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, shape)

    params = Parameters(
        embed=[rng.normal((card, k), scale=0.01) for card in cardinalities]
    )
    for _ in range(config.n_agg_slots):
        params.agg_w.append(glorot((t, m), m, t))
        params.agg_b.append(np.zeros(t))
    for _ in range(config.n_proj_slots):
        params.proj_w.append(glorot((f, k, t), t, k))
        params.proj_b.append(np.zeros((f, k)))
    if config.has_ffn:
        for _ in range(config.n_blocks):
            params.ffn_w1.append(glorot((k, k), k, k))
            if config.variant == PFFN:
                params.ffn_b1.append(np.zeros(k))
                params.ffn_w2.append(glorot((k, k), k, k))
                params.ffn_b2.append(np.zeros(k))
    if config.has_ln:
        for _ in range(config.n_blocks):
            params.ln_gain.append(np.ones(k))
            params.ln_bias.append(np.zeros(k))
    params.head_w = np.zeros(m)
    bias = 0.0
    if pos_rate is not None:
        bias = logit(min(max(pos_rate, 1e-6), 1.0 - 1e-6))
    params.head_b = np.array([bias])
    return params


@dataclass
class TapeCache:
    """Forward intermediates consumed by the backward pass (one per batch)."""

    batch: Batch
    embed_out: np.ndarray  # [B, f, k]
    embed_flat: np.ndarray  # [B, m]; also the TCE input for every block
    tce_inputs: list  # per block: the embed_flat object itself
    agg_pre: list  # per block: [B, t] pre-activation (None when merged out)
    agg_act: list  # per block: [B, t]
    context: list  # per block: [B, f, k] contextual embeddings
    block_in: list  # per block: [B, f, k] input embeddings
    merged: list  # per block: [B, f, k] Hadamard-merged embeddings
    ffn_pre: list  # per block: pffn pre-activation, else None
    ffn_hidden: list  # per block: pffn hidden, else None
    ffn_out: list  # per block: [B, f, k] pre-LN output
    ln: list  # per block: LayerNormCache or None
    final: np.ndarray  # [B, f, k]
    final_flat: np.ndarray  # [B, m]
    logits: np.ndarray  # [B]
    scores: np.ndarray  # [B]


def embed(batch: Batch, params: Parameters, config: ModelConfig) -> np.ndarray:
    """Look up and scale per-field embeddings; returns [B, f, k]."""
    B = len(batch)
    out = np.empty((B, config.n_fields, config.embed_dim))
    for i, table in enumerate(params.embed):
        idx = batch.indices[:, i]
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise IndexError(
                f"field {i}: index out of range for table of {table.shape[0]} rows"
            )
        out[:, i, :] = table[idx] * batch.values[:, i, None]
    return out


def _context_embeddings(
    embed_flat: np.ndarray, block: int, params: Parameters, config: ModelConfig
):
    """TCE for one block: aggregation over the whole embedding layer, then a
    per-field projection back to embedding size. Input must be the
    embedding-layer output, never a refined block output."""
    sa = config.agg_slot(block)
    sp = config.proj_slot(block)
    agg_pre = embed_flat @ params.agg_w[sa].T + params.agg_b[sa]  # [B, t]
    agg_act = relu(agg_pre)
    proj = params.proj_w[sp]  # [f, k, t]
    f, k, t = proj.shape
    ce = (agg_act @ proj.reshape(f * k, t).T).reshape(-1, f, k) + params.proj_b[sp]
    return agg_pre, agg_act, ce


def tce_forward(
    embed_flat: np.ndarray, block: int, fld: int, params: Parameters, config: ModelConfig
) -> np.ndarray:
    """Contextual embedding of one field for one block.

    Accepts a single flattened embedding layer [m] or a batch [B, m].
    """
    single = embed_flat.ndim == 1
    flat = embed_flat[None, :] if single else embed_flat
    _, _, ce = _context_embeddings(flat, block, params, config)
    out = ce[:, fld, :]
    return out[0] if single else out


def block_forward(
    e_prev: np.ndarray,
    context: np.ndarray | None,
    block: int,
    params: Parameters,
    config: ModelConfig,
) -> np.ndarray:
    """One refinement block: Hadamard merge with the contextual embedding,
    then the variant's feed-forward map. Accepts [f, k] or [B, f, k]."""
    single = e_prev.ndim == 2
    e = e_prev[None] if single else e_prev
    ce = None if context is None else (context[None] if single else context)
    _, _, _, _, out, _ = _block_apply(e, ce, block, params, config)
    return out[0] if single else out


def _block_apply(
    e_prev: np.ndarray,
    context: np.ndarray | None,
    block: int,
    params: Parameters,
    config: ModelConfig,
):
    """Shared forward body; returns (merged, ffn_pre, ffn_hidden, ffn_out,
    e_next, ln_cache)."""
    if config.has_tce:
        if context is None:
            raise ValueError("block requires contextual embeddings")
        merged = e_prev * context
    else:
        merged = e_prev
    if not config.has_ffn:
        return merged, None, None, None, merged, None

    k = config.embed_dim
    flat = merged.reshape(-1, k)
    if config.variant == PFFN:
        pre = (flat @ params.ffn_w1[block] + params.ffn_b1[block]).reshape(merged.shape)
        hidden = relu(pre)
        out = (
            hidden.reshape(-1, k) @ params.ffn_w2[block] + params.ffn_b2[block]
        ).reshape(merged.shape)
        if not config.no_rc:
            out = out + merged
    else:
        pre = None
        hidden = None
        out = (flat @ params.ffn_w1[block]).reshape(merged.shape)
    if config.has_ln:
        e_next, ln_cache = layer_norm(
            out, params.ln_gain[block], params.ln_bias[block], LN_EPS
        )
    else:
        e_next, ln_cache = out, None
    return merged, pre, hidden, out, e_next, ln_cache


def predict(
    batch: Batch, params: Parameters, config: ModelConfig
) -> tuple[np.ndarray, TapeCache]:
    """Full forward pass; returns scores in (0, 1) and the tape for backward."""
    B = len(batch)
    e0 = embed(batch, params, config)
    e0_flat = e0.reshape(B, config.flat_dim)
    tape = TapeCache(
        batch=batch,
        embed_out=e0,
        embed_flat=e0_flat,
        tce_inputs=[],
        agg_pre=[],
        agg_act=[],
        context=[],
        block_in=[],
        merged=[],
        ffn_pre=[],
        ffn_hidden=[],
        ffn_out=[],
        ln=[],
        final=None,
        final_flat=None,
        logits=None,
        scores=None,
    )
    e_cur = e0
    for block in range(config.n_blocks):
        if config.has_tce:
            tape.tce_inputs.append(e0_flat)
            agg_pre, agg_act, ce = _context_embeddings(e0_flat, block, params, config)
        else:
            tape.tce_inputs.append(None)
            agg_pre = agg_act = ce = None
        merged, pre, hidden, out, e_next, ln_cache = _block_apply(
            e_cur, ce, block, params, config
        )
        tape.agg_pre.append(agg_pre)
        tape.agg_act.append(agg_act)
        tape.context.append(ce)
        tape.block_in.append(e_cur)
        tape.merged.append(merged)
        tape.ffn_pre.append(pre)
        tape.ffn_hidden.append(hidden)
        tape.ffn_out.append(out)
        tape.ln.append(ln_cache)
        e_cur = e_next
    tape.final = e_cur
    tape.final_flat = e_cur.reshape(B, config.flat_dim)
    tape.logits = tape.final_flat @ params.head_w + params.head_b[0]
    tape.scores = sigmoid(tape.logits)
    return tape.scores, tape


def predict_scores(
    dataset, params: Parameters, config: ModelConfig, chunk: int = 8192
) -> np.ndarray:
    """Score a dataset in fixed-order chunks (no tape retained)."""
    out = np.empty(len(dataset))
    for start in range(0, len(dataset), chunk):
        stop = min(start + chunk, len(dataset))
        b = Batch(
            dataset.labels[start:stop],
            dataset.indices[start:stop],
            dataset.values[start:stop],
        )
        out[start:stop] = predict(b, params, config)[0]
    return out


def bce_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean clamped cross-entropy over a batch."""
    p = np.clip(scores, _P_FLOOR, 1.0 - _P_FLOOR)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def l2_norm(params: Parameters) -> float:
    """Sum of squares over the regularized tensors (weights, not biases)."""
    return float(sum(np.sum(a * a) for _, a in params.regularized_tensors()))


def loss_and_grads(
    batch: Batch, params: Parameters, config: ModelConfig
) -> tuple[float, Parameters]:
    """Mean cross-entropy plus l2 penalty and its exact gradients.

    The reverse pass mirrors the forward tape: head -> blocks -> contextual
    embeddings -> embedding tables. Gradients of tensors shared across
    blocks accumulate additively. With l2 > 0 each regularized weight w
    additionally receives 2 * l2 * w.
    """
    scores, tape = predict(batch, params, config)
    loss = bce_loss(scores, tape.batch.labels)
    objective = loss
    grads = params.zeros_like()
    B = len(batch)
    k = config.embed_dim

    dlogits = (scores - tape.batch.labels) / B
    grads.head_w[...] = tape.final_flat.T @ dlogits
    grads.head_b[0] = dlogits.sum()
    d_cur = np.outer(dlogits, params.head_w).reshape(B, config.n_fields, k)
    d_e0_flat = np.zeros_like(tape.embed_flat)

    for block in reversed(range(config.n_blocks)):
        merged = tape.merged[block]
        if not config.has_ffn:
            d_merged = d_cur
        else:
            if config.has_ln:
                d_out, dgain, dbias = layer_norm_backward(tape.ln[block], d_cur)
                grads.ln_gain[block] += dgain
                grads.ln_bias[block] += dbias
            else:
                d_out = d_cur
            d_out_flat = d_out.reshape(-1, k)
            if config.variant == PFFN:
                hidden_flat = tape.ffn_hidden[block].reshape(-1, k)
                grads.ffn_w2[block] += hidden_flat.T @ d_out_flat
                grads.ffn_b2[block] += col_sums(d_out_flat)
                d_hidden = (d_out_flat @ params.ffn_w2[block].T).reshape(merged.shape)
                d_pre = np.where(tape.ffn_pre[block] > 0.0, d_hidden, 0.0)
                d_pre_flat = d_pre.reshape(-1, k)
                grads.ffn_w1[block] += merged.reshape(-1, k).T @ d_pre_flat
                grads.ffn_b1[block] += col_sums(d_pre_flat)
                d_merged = (d_pre_flat @ params.ffn_w1[block].T).reshape(merged.shape)
                if not config.no_rc:
                    d_merged = d_merged + d_out
            else:
                grads.ffn_w1[block] += merged.reshape(-1, k).T @ d_out_flat
                d_merged = (d_out_flat @ params.ffn_w1[block].T).reshape(merged.shape)

        if config.has_tce:
            ce = tape.context[block]
            d_prev = d_merged * ce
            d_ce = d_merged * tape.block_in[block]
            sa = config.agg_slot(block)
            sp = config.proj_slot(block)
            proj = params.proj_w[sp]
            d_ce_flat = d_ce.reshape(B, -1)  # [B, f*k]
            grads.proj_w[sp] += (d_ce_flat.T @ tape.agg_act[block]).reshape(proj.shape)
            grads.proj_b[sp] += col_sums(d_ce_flat).reshape(grads.proj_b[sp].shape)
            d_act = d_ce_flat @ proj.reshape(d_ce_flat.shape[1], -1)
            d_agg_pre = np.where(tape.agg_pre[block] > 0.0, d_act, 0.0)
            grads.agg_w[sa] += d_agg_pre.T @ tape.embed_flat
            grads.agg_b[sa] += col_sums(d_agg_pre)
            d_e0_flat += d_agg_pre @ params.agg_w[sa]
        else:
            d_prev = d_merged
        d_cur = d_prev

    d_e0 = d_cur + d_e0_flat.reshape(B, config.n_fields, k)
    for i, table in enumerate(params.embed):
        contrib = d_e0[:, i, :] * tape.batch.values[:, i, None]
        np.add.at(grads.embed[i], tape.batch.indices[:, i], contrib)

    if config.l2 > 0.0:
        objective = loss + config.l2 * l2_norm(params)
        for (_, g), (_, w) in zip(
            grads.regularized_tensors(), params.regularized_tensors()
        ):
            g += 2.0 * config.l2 * w
    return objective, grads


def param_count(config: ModelConfig, cardinalities: list[int]) -> int:
    """Closed-form number of learnable scalars for the configuration."""
    k = config.embed_dim
    t = config.agg_width
    f = config.n_fields
    m = config.flat_dim
    total = sum(cardinalities) * k + m + 1
    if config.has_tce:
        total += config.n_agg_slots * (t * m + t)
        total += config.n_proj_slots * f * (k * t + k)
    if config.has_ffn:
        if config.variant == PFFN:
            total += config.n_blocks * (2 * k * k + 2 * k)
        else:
            total += config.n_blocks * k * k
    if config.has_ln:
        total += config.n_blocks * 2 * k
    return total


def instance_batch(instance: EncodedInstance) -> Batch:
    """Wrap one encoded instance as a batch of size 1."""
    return Batch(
        np.array([float(instance.label)]),
        instance.indices[None, :],
        instance.values[None, :],
    )


def config_with(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, **changes)
