"""Dense math kernels with paired forward/backward forms, plus a seedable RNG.

Everything on the training path is float64 so that analytic gradients can be
checked sharply against central finite differences. Kernels are pure
functions over explicit arrays; the only stateful object is :class:`Rng`.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested kernel."""


def _all_finite(a: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(a)))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-major matrix product accumulated in ascending inner-index order.

    The explicit accumulation order makes results reproducible down to the
    last bit against a naive triple-loop reference (BLAS reorders sums).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dims differ")
    out = np.zeros((a.shape[0], b.shape[1]))
    for inner in range(a.shape[1]):
        out += a[:, inner, None] * b[inner, :]
    assert _all_finite(out), "matmul produced non-finite values"
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient of relu; the subgradient at exactly 0 is taken as 0."""
    x = np.asarray(x)
    dy = np.asarray(dy)
    if x.shape != dy.shape:
        raise ShapeError(f"relu_backward shapes differ: {x.shape} vs {dy.shape}")
    return np.where(x > 0.0, dy, 0.0)


class LayerNormCache(NamedTuple):
    x_hat: np.ndarray
    inv_std: np.ndarray
    gain: np.ndarray


def row_sums(x2d: np.ndarray) -> np.ndarray:
    """Sum over the last axis of a 2-d array via BLAS (fast for short rows)."""
    return x2d @ np.ones(x2d.shape[1])


def col_sums(x2d: np.ndarray) -> np.ndarray:
    """Sum over the first axis of a 2-d array via BLAS."""
    return np.ones(x2d.shape[0]) @ x2d


def layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5
) -> tuple[np.ndarray, LayerNormCache]:
    """Normalize the last axis (biased variance), then apply gain and bias.

    Works on any leading batch shape; returns the cache needed by
    :func:`layer_norm_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    k = x.shape[-1]
    x2 = x.reshape(-1, k)
    mean = (row_sums(x2) / k)[:, None]
    centered = x2 - mean
    var = (row_sums(centered * centered) / k)[:, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    gain = np.asarray(gain, dtype=np.float64)
    y = np.multiply(x_hat, gain.reshape(-1))
    y += np.asarray(bias).reshape(-1)
    y = y.reshape(x.shape)
    assert _all_finite(y), "layer_norm produced non-finite values"
    return y, LayerNormCache(
        x_hat.reshape(x.shape), inv_std.reshape(x.shape[:-1] + (1,)), gain
    )


def layer_norm_backward(
    cache: LayerNormCache, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of layer_norm: returns (dx, dgain, dbias).

    dgain/dbias are reduced over all leading axes, matching a gain/bias
    shared across every normalized vector in the batch.
    """
    x_hat, inv_std, gain = cache
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != x_hat.shape:
        raise ShapeError(f"layer_norm_backward shapes differ: {dy.shape} vs {x_hat.shape}")
    k = x_hat.shape[-1]
    dy2 = dy.reshape(-1, k)
    xh2 = x_hat.reshape(-1, k)
    is2 = inv_std.reshape(-1, 1)
    dbias = col_sums(dy2)
    dgain = col_sums(dy2 * xh2)
    d_hat = dy2 * gain.reshape(-1)
    dx = (is2 / k) * (
        k * d_hat
        - row_sums(d_hat)[:, None]
        - xh2 * row_sums(d_hat * xh2)[:, None]
    )
    return dx.reshape(dy.shape), dgain, dbias


def sigmoid(z):
    """Numerically stable logistic function; saturates cleanly at +/-inf."""
    scalar = np.isscalar(z) or getattr(z, "ndim", None) == 0
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out[0]) if scalar else out


def logit(p: float) -> float:
    """Inverse of sigmoid for p in (0, 1)."""
    return float(np.log(p) - np.log1p(-p))


_U64 = np.uint64
_MASK = 0xFFFFFFFFFFFFFFFF


def _splitmix64(seed: int, n: int) -> np.ndarray:
    """Expand one 64-bit seed into n well-mixed words (state seeding only)."""
    out = np.empty(n, dtype=np.uint64)
    s = seed & _MASK
    for i in range(n):
        s = (s + 0x9E3779B97F4A7C15) & _MASK
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        out[i] = z ^ (z >> 31)
    return out


def mix_seed(*parts: int) -> int:
    """Fold several integers into one 64-bit seed (order-sensitive)."""
    acc = 0x243F6A8885A308D3
    for p in parts:
        acc = (acc ^ (int(p) & _MASK)) & _MASK
        acc = (acc + 0x9E3779B97F4A7C15) & _MASK
        acc = ((acc ^ (acc >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        acc = ((acc ^ (acc >> 27)) * 0x94D049BB133111EB) & _MASK
        acc = acc ^ (acc >> 31)
    return acc


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


class Rng:
    """Deterministic xoshiro256** generator, vectorized over 1024 lanes.

    The draw sequence is a pure function of the seed: uint64 arithmetic with
    explicit masking, so two runs with the same seed agree bit-for-bit on any
    platform. The lane count is part of the stream definition and must not
    change. Not safe to share between concurrent callers.
    """

    _LANES = 1024

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        words = _splitmix64(self.seed, 4 * self._LANES)
        self._s = [words[i :: 4].copy() for i in range(4)]
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0

    def _block(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        out = _rotl(s1 * _U64(5), 7) * _U64(9)
        t = s1 << _U64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out

    def uint64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit draws (lane-interleaved blocks of 1024)."""
        have = self._buf.size - self._pos
        if have >= n:
            out = self._buf[self._pos : self._pos + n]
            self._pos += n
            return out.copy()
        blocks = [self._buf[self._pos :]]
        need = n - have
        while need > 0:
            blocks.append(self._block())
            need -= self._LANES
        flat = np.concatenate(blocks)
        out = flat[:n].copy()
        self._buf = flat
        self._pos = n
        return out

    def random(self, size=None):
        """Uniform float64 draws in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.uint64(n) >> _U64(11)).astype(np.float64) * (2.0 ** -53)
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def uniform(self, low: float, high: float, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        """Gaussian draws via Box-Muller (deterministic, platform-stable)."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        # u1 in (0, 1] so the log is finite
        u1 = ((self.uint64(pairs) >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        u2 = (self.uint64(pairs) >> _U64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = loc + scale * z
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high). Bias is O(span/2^53), negligible here."""
        u = self.random(size if size is not None else 1)
        out = (low + np.floor(np.atleast_1d(u) * (high - low))).astype(np.int64)
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting raw 64-bit keys."""
        keys = self.uint64(n)
        return np.argsort(keys, kind="stable")
