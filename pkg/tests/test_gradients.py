"""Hand-written backward pass vs central finite differences.

The full variant x sharing x ablation sweep runs in the acceptance suite;
here a representative subset guards day-to-day changes.
"""
import numpy as np
import pytest

from contextnet.data import Batch
from contextnet.model import ModelConfig, init_params, loss_and_grads
from contextnet.ops import Rng

FD_STEP = 1e-5
REL_TOL = 1e-4


def randomized_model(config, cards, seed):
    """Parameters with O(0.3) magnitudes so every gradient path carries signal."""
    rng = Rng(seed)
    params = init_params(config, cards, seed)
    for _, tensor in params.named_tensors():
        tensor[...] = rng.normal(tensor.shape, scale=0.4)
    idx = np.stack([rng.integers(0, c, (6,)) for c in cards], axis=1)
    batch = Batch(
        (rng.random((6,)) < 0.5).astype(float), idx, np.ones((6, len(cards)))
    )
    return params, batch


def max_rel_error(config, cards, seed=0):
    params, batch = randomized_model(config, cards, seed)
    _, grads = loss_and_grads(batch, params, config)
    worst = 0.0
    for (name, tensor), (_, grad) in zip(params.named_tensors(), grads.named_tensors()):
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            up = loss_and_grads(batch, params, config)[0]
            flat[i] = orig - FD_STEP
            down = loss_and_grads(batch, params, config)[0]
            flat[i] = orig
            fd = (up - down) / (2 * FD_STEP)
            rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


CARDS = [5, 4, 3]


@pytest.mark.parametrize("variant", ["pffn", "sffn"])
def test_default_sharing_gradients(variant):
    config = ModelConfig(
        n_fields=3, embed_dim=4, agg_width=5, n_blocks=2, variant=variant
    )
    assert max_rel_error(config, CARDS) < REL_TOL


def test_shared_aggregation_gradients_accumulate():
    config = ModelConfig(
        n_fields=3, embed_dim=4, agg_width=5, n_blocks=2, variant="pffn", sharing="agg"
    )
    assert max_rel_error(config, CARDS) < REL_TOL


def test_l0_gradients():
    config = ModelConfig(n_fields=3, embed_dim=4, n_blocks=0)
    assert max_rel_error(config, CARDS) < REL_TOL


def test_no_tensor_is_detached():
    """Every allocated tensor receives a nonzero gradient on random data."""
    config = ModelConfig(
        n_fields=3, embed_dim=4, agg_width=5, n_blocks=2, variant="pffn"
    )
    params, batch = randomized_model(config, CARDS, seed=3)
    _, grads = loss_and_grads(batch, params, config)
    for name, grad in grads.named_tensors():
        if name.startswith("embed"):
            continue  # rows for unseen tokens legitimately stay zero
        assert np.abs(grad).max() > 0.0, f"{name} received no gradient"


def test_l2_adds_two_lambda_theta():
    base = ModelConfig(n_fields=3, embed_dim=4, agg_width=5, n_blocks=2, variant="pffn")
    with_l2 = ModelConfig(
        n_fields=3, embed_dim=4, agg_width=5, n_blocks=2, variant="pffn", l2=0.03
    )
    params, batch = randomized_model(base, CARDS, seed=4)
    _, g0 = loss_and_grads(batch, params, base)
    _, g1 = loss_and_grads(batch, params, with_l2)
    regularized = {"embed", "agg_w", "proj_w", "ffn_w1", "ffn_w2", "head_w"}
    for (name, a), (_, b), (_, w) in zip(
        g0.named_tensors(), g1.named_tensors(), params.named_tensors()
    ):
        diff = b - a
        if name.split(".")[0] in regularized:
            assert np.allclose(diff, 2 * 0.03 * w, atol=1e-13), name
        else:
            assert np.allclose(diff, 0.0, atol=1e-13), name
