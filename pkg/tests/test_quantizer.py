"""Quantizer contracts: nearest-neighbor oracle, ties, straight-through,
codebook/commitment regularizers."""

import numpy as np
import pytest

from svq import autodiff as ad
from svq.errors import ConfigurationError, NumericError
from svq.quantizer import (Codebook, LatentGrid, nearest_indices, quantize,
                           straight_through, vq_regularizers)


def brute_force_nearest(vectors, entries):
    """Independent oracle: explicit distance loop with lowest-index ties."""
    flat = vectors.reshape(-1, vectors.shape[-1])
    out = np.empty(flat.shape[0], dtype=np.int64)
    for i, z in enumerate(flat):
        best, best_d = 0, None
        for k in range(entries.shape[0]):
            d = float(np.sum((z - entries[k]) ** 2))
            if best_d is None or d < best_d:
                best, best_d = k, d
        out[i] = best
    return out.reshape(vectors.shape[:-1])


def test_nearest_by_inspection():
    rng = np.random.Generator(np.random.PCG64(0))
    cb = Codebook(2, 2, rng, dtype=np.float64, entries=[[0.0, 0.0], [1.0, 1.0]])
    grid, q = quantize(np.array([[[0.1, 0.2]]]), cb)
    assert grid.indices[0, 0] == 0
    np.testing.assert_array_equal(q.data[0, 0], [0.0, 0.0])


def test_exact_row_maps_to_itself():
    rng = np.random.Generator(np.random.PCG64(1))
    cb = Codebook(5, 3, rng, dtype=np.float64)
    j = 3
    pre = np.tile(cb.entries.data[j], (2, 2, 1))
    grid, q = quantize(pre, cb)
    assert (grid.indices == j).all()
    np.testing.assert_array_equal(q.data, pre)


def test_random_instances_match_brute_force():
    rng = np.random.Generator(np.random.PCG64(2))
    for _ in range(50):
        cb = Codebook(32, 8, rng, dtype=np.float64,
                      entries=rng.standard_normal((32, 8)))
        pre = rng.standard_normal((4, 4, 8))
        grid, _ = quantize(pre, cb)
        np.testing.assert_array_equal(grid.indices, brute_force_nearest(pre, cb.entries.data))


def test_tie_breaks_to_lowest_index():
    row = np.array([0.5, -0.25])
    entries = np.stack([row + 1.0, row, row + 2.0, row])  # rows 1 and 3 tie
    cb = Codebook(4, 2, dtype=np.float64, entries=entries)
    grid, _ = quantize(row[None, None], cb)
    assert grid.indices[0, 0] == 1
    cb32 = Codebook(4, 2, dtype=np.float32, entries=entries)
    grid32, _ = quantize(row[None, None].astype(np.float32), cb32)
    assert grid32.indices[0, 0] == 1


def test_quantize_is_idempotent():
    rng = np.random.Generator(np.random.PCG64(3))
    cb = Codebook(16, 4, rng, dtype=np.float64, entries=rng.standard_normal((16, 4)))
    pre = rng.standard_normal((5, 3, 4))
    grid1, q1 = quantize(pre, cb)
    grid2, q2 = quantize(q1.data, cb)
    np.testing.assert_array_equal(grid1.indices, grid2.indices)
    np.testing.assert_array_equal(q1.data, q2.data)


def test_usage_counts_accumulate_and_reset():
    rng = np.random.Generator(np.random.PCG64(4))
    cb = Codebook(8, 2, rng)
    quantize(rng.standard_normal((3, 3, 2)).astype(np.float32), cb)
    quantize(rng.standard_normal((2, 2, 2)).astype(np.float32), cb)
    assert cb.usage_counts.sum() == 9 + 4
    assert (cb.usage_counts >= 0).all()
    cb.reset_usage()
    assert cb.usage_counts.sum() == 0


def test_quantize_errors():
    rng = np.random.Generator(np.random.PCG64(5))
    cb = Codebook(4, 3, rng)
    with pytest.raises(ConfigurationError):
        quantize(np.zeros((2, 2, 5)), cb)
    with pytest.raises(NumericError):
        quantize(np.full((2, 2, 3), np.nan), cb)
    with pytest.raises(ConfigurationError):
        Codebook(1, 3, rng)
    with pytest.raises(ConfigurationError):
        straight_through(np.zeros((2, 3)), np.zeros((3, 2)))


def test_straight_through_forward_is_bitwise_quantized():
    rng = np.random.Generator(np.random.PCG64(6))
    cb = Codebook(8, 4, rng, dtype=np.float64)
    pre = ad.Tensor(rng.standard_normal((3, 3, 4)), requires_grad=True)
    _, q = quantize(pre, cb)
    out = straight_through(pre, q)
    assert np.array_equal(out.data, q.data)


def test_straight_through_backward_is_identity():
    rng = np.random.Generator(np.random.PCG64(7))
    cb = Codebook(8, 4, rng, dtype=np.float64)
    pre = ad.Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    _, q = quantize(pre, cb)
    out = straight_through(pre, q)
    g = rng.standard_normal(out.shape)
    out.backward(g)
    assert np.array_equal(pre.grad, g)


def test_straight_through_finite_differences():
    """d/dz of L(straight_through(z, q(z))) with q frozen, rel err < 1e-4."""
    rng = np.random.Generator(np.random.PCG64(8))
    cb = Codebook(6, 3, rng, dtype=np.float64)
    pre = ad.Tensor(rng.standard_normal((2, 2, 3)), requires_grad=True)
    w = rng.standard_normal((2, 2, 3))

    def build():
        _, q = quantize(pre, cb)
        st = straight_through(pre, q)
        return ad.tsum(st * st * ad.Tensor(w))

    tape = ad.freeze_tape("record")
    with tape:
        loss = build()
    loss.backward()
    analytic = pre.grad.copy()
    flat = pre.data.reshape(-1)
    h = 1e-6
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with ad.freeze_tape("replay", tape.values):
            up = build().item()
        flat[i] = orig - h
        with ad.freeze_tape("replay", tape.values):
            down = build().item()
        flat[i] = orig
        fd[i] = (up - down) / (2 * h)
    rel = np.abs(fd - analytic.reshape(-1)) / np.maximum(np.abs(fd), 1e-8)
    assert rel.max() < 1e-4


def test_regularizers_zero_when_on_codebook():
    rng = np.random.Generator(np.random.PCG64(9))
    cb = Codebook(5, 3, rng, dtype=np.float64)
    pre = np.stack([cb.entries.data[1], cb.entries.data[4]])[None]
    cb_loss, commit = vq_regularizers(pre, cb)
    assert cb_loss.item() == 0.0
    assert commit.item() == 0.0


def test_regularizers_hand_computed():
    cb = Codebook(2, 2, dtype=np.float64, entries=[[0.0, 0.0], [5.0, 5.0]])
    cb_loss, commit = vq_regularizers(np.array([[[1.0, 0.0]]]), cb)
    assert cb_loss.item() == pytest.approx(1.0)
    assert commit.item() == pytest.approx(1.0)


def test_regularizer_gradient_structure():
    rng = np.random.Generator(np.random.PCG64(10))
    cb = Codebook(6, 3, rng, dtype=np.float64)
    pre = ad.Tensor(rng.standard_normal((2, 2, 3)), requires_grad=True)

    cb_loss, commit = vq_regularizers(pre, cb)
    cb_loss.backward()
    assert pre.grad is None  # codebook loss never reaches the encoder
    assert cb.entries.grad is not None

    cb.entries.grad = None
    pre.grad = None
    cb_loss2, commit2 = vq_regularizers(pre, cb)
    commit2.backward()
    assert cb.entries.grad is None  # commitment never reaches the codebook
    assert pre.grad is not None
    np.testing.assert_allclose(pre.grad, commit_grad_expected(pre.data, cb), rtol=1e-12)


def commit_grad_expected(pre, cb):
    idx = nearest_indices(pre, cb)
    rows = cb.entries.data[idx]
    return 2.0 * (pre - rows) / (pre.shape[0] * pre.shape[1])


def test_latent_grid_round_trip():
    grid = LatentGrid(np.arange(6).reshape(2, 3), "image")
    tokens = grid.flatten()
    back = LatentGrid.from_tokens(tokens, (2, 3), "image")
    np.testing.assert_array_equal(back.indices, grid.indices)
