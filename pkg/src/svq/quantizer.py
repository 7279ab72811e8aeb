"""Discrete bottleneck: codebook storage and nearest-vector quantization.

The quantizer snaps encoder outputs to their nearest codebook row
(Euclidean distance, ties to the lowest index), passes gradients straight
through the assignment, and provides the codebook/commitment regularizers
shared by every VQ variant in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DataError, NumericError


@dataclass
class LatentGrid:
    """2-D grid of codebook indices; flattens row-major to a token grid."""

    indices: np.ndarray
    source_codebook_id: str = ""

    def __post_init__(self):
        self.indices = np.asarray(self.indices)
        if self.indices.ndim != 2:
            raise ConfigurationError(f"LatentGrid must be 2-D, got {self.indices.ndim}-D")

    @property
    def shape(self):
        return self.indices.shape

    def flatten(self):
        return self.indices.reshape(-1)

    @classmethod
    def from_tokens(cls, tokens, shape, source_codebook_id=""):
        tokens = np.asarray(tokens)
        h, w = shape
        if tokens.size != h * w:
            raise DataError(f"cannot reshape {tokens.size} tokens to {h}x{w}")
        return cls(tokens.reshape(h, w).copy(), source_codebook_id)

    def validate(self, codebook):
        if self.indices.min(initial=0) < 0 or self.indices.max(initial=0) >= codebook.K:
            raise DataError(
                f"indices outside codebook range [0, {codebook.K}) for {self.source_codebook_id!r}"
            )


class Codebook:
    """Learned K x D embedding table with usage diagnostics."""

    def __init__(self, num_entries, dim, rng=None, dtype=np.float32,
                 entries=None, codebook_id="codebook"):
        if num_entries < 2 or dim < 1:
            raise ConfigurationError(f"need K >= 2 and D >= 1, got K={num_entries}, D={dim}")
        if entries is None:
            if rng is None:
                raise ConfigurationError("Codebook needs an rng when entries are not given")
            # uniform in [-1/K, 1/K], the usual flat low-magnitude start
            bound = 1.0 / num_entries
            entries = rng.uniform(-bound, bound, size=(num_entries, dim))
        entries = np.ascontiguousarray(np.asarray(entries, dtype=dtype))
        if entries.shape != (num_entries, dim):
            raise ConfigurationError(f"entries shape {entries.shape} != ({num_entries}, {dim})")
        if not np.isfinite(entries).all():
            raise NumericError("codebook entries must be finite")
        self.entries = Tensor(entries, requires_grad=True)
        self.usage_counts = np.zeros(num_entries, dtype=np.int64)
        self.codebook_id = codebook_id

    @property
    def K(self):
        return self.entries.data.shape[0]

    @property
    def D(self):
        return self.entries.data.shape[1]

    def reset_usage(self):
        self.usage_counts[:] = 0


def nearest_indices(vectors, codebook):
    """Argmin over squared Euclidean distance to every codebook row.

    Expanded-form distances (|z|^2 - 2 z.c + |c|^2) so the K comparisons run
    as one matmul; np.argmin takes the first minimum, which is the required
    lowest-index tie rule. Routed through the freeze tape so gradient-check
    replays keep base-point assignments.
    """
    flat = vectors.reshape(-1, vectors.shape[-1])
    c = codebook.entries.data
    d2 = (flat * flat).sum(axis=1)[:, None] - 2.0 * (flat @ c.T) + (c * c).sum(axis=1)[None, :]
    idx = np.argmin(d2, axis=1)
    idx = ad.frozen_value(idx)
    return idx.reshape(vectors.shape[:-1])


def quantize(pre_latents, codebook):
    """Snap each D-vector to its nearest codebook row.

    Accepts (H, W, D) or (B, H, W, D) arrays/Tensors; returns the index
    grid(s) plus the quantized Tensor (differentiable w.r.t. the codebook
    through the row gather). Updates codebook.usage_counts.
    """
    t = ad.as_tensor(pre_latents)
    if t.data.shape[-1] != codebook.D:
        raise ConfigurationError(
            f"pre-latent dim {t.data.shape[-1]} != codebook dim {codebook.D}"
        )
    if t.ndim not in (3, 4):
        raise ConfigurationError(f"expected (H, W, D) or (B, H, W, D), got {t.data.shape}")
    if not np.isfinite(t.data).all():
        raise NumericError("pre-latents must be finite")
    idx = nearest_indices(t.data, codebook)
    np.add.at(codebook.usage_counts, idx.reshape(-1), 1)
    quantized = ad.embedding(codebook.entries, idx)
    if t.ndim == 3:
        grid = LatentGrid(idx, codebook.codebook_id)
    else:
        grid = [LatentGrid(g, codebook.codebook_id) for g in idx]
    return grid, quantized


def straight_through(pre_latents, quantized):
    """Forward the quantized values bitwise, backprop as identity into pre_latents.

    Equivalent to z + sg[q - z] except that the forward value is exactly q
    (the sum form re-rounds). Under finite-difference replay the frozen
    residual is re-added to the perturbed z, so FD sees the identity
    dependence the straight-through backward claims.
    """
    z = ad.as_tensor(pre_latents)
    q = ad.as_tensor(quantized)
    if z.data.shape != q.data.shape:
        raise ConfigurationError(f"shape mismatch {z.data.shape} vs {q.data.shape}")
    residual = ad.frozen_value(q.data - z.data)
    out = z.data + residual if ad.replaying() else q.data
    return ad.custom_op(out, (z,), lambda g: (g,))


def vq_regularizers(pre_latents, codebook, indices=None):
    """Codebook and commitment losses for one latent branch.

    codebook_loss = mean |sg[z_e] - c_idx|^2 trains rows toward encoder
    outputs; commitment_loss = mean |z_e - sg[c_idx]|^2 pins the encoder to
    its assigned rows. Both are means over cells (squared L2 per cell).
    The commitment weight is applied by the caller.
    """
    z = ad.as_tensor(pre_latents)
    if z.data.shape[-1] != codebook.D:
        raise ConfigurationError(
            f"pre-latent dim {z.data.shape[-1]} != codebook dim {codebook.D}"
        )
    if not np.isfinite(z.data).all():
        raise NumericError("pre-latents must be finite")
    if indices is None:
        indices = nearest_indices(z.data, codebook)
    rows = ad.embedding(codebook.entries, indices)
    n_cells = int(np.prod(z.data.shape[:-1]))
    diff_cb = rows - ad.detach(z)
    codebook_loss = ad.tsum(diff_cb * diff_cb) / n_cells
    diff_cm = z - ad.detach(rows)
    commitment_loss = ad.tsum(diff_cm * diff_cm) / n_cells
    return codebook_loss, commitment_loss
