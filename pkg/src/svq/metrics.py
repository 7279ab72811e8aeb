"""Evaluation metrics: SSIM, mIOU, and a Frechet feature distance (FD-r).

FD-r replaces the usual pretrained-network embedding with a fixed, seeded,
untrained conv feature extractor, so scores are deterministic and
comparable across models in this repo, but NOT comparable to published FID
numbers. Reports must label the metric "FD-r".
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
FDR_FEATURE_DIM = 64
FDR_SEED_NAME = "fdr-features-v1"


@dataclass
class MetricsReport:
    """Aggregates for one evaluated split."""

    ssim_mean: float
    frechet_distance: float
    miou_percent: float
    n_samples: int
    per_class_iou: np.ndarray

    def __post_init__(self):
        if not -1.0 <= self.ssim_mean <= 1.0 + 1e-12:
            raise ConfigurationError(f"ssim_mean {self.ssim_mean} outside [-1, 1]")
        if self.frechet_distance < 0.0:
            raise ConfigurationError("frechet_distance must be >= 0")
        if not 0.0 <= self.miou_percent <= 100.0 + 1e-9:
            raise ConfigurationError(f"miou_percent {self.miou_percent} outside [0, 100]")

    def to_tsv(self):
        header = "metric\tvalue\n"
        rows = [
            f"ssim_mean\t{self.ssim_mean:.6f}",
            f"fd_r\t{self.frechet_distance:.6f}",
            f"miou_percent\t{self.miou_percent:.4f}",
            f"n_samples\t{self.n_samples}",
        ]
        return header + "\n".join(rows) + "\n"


def _gaussian_kernel_1d(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(x, kernel):
    """Separable 2-D correlation, valid region of a symmetric-padded input."""
    half = kernel.size // 2
    x = np.pad(x, half, mode="symmetric")
    win = np.lib.stride_tricks.sliding_window_view(x, kernel.size, axis=1)
    x = win @ kernel
    win = np.lib.stride_tricks.sliding_window_view(x, kernel.size, axis=0)
    return win @ kernel


def ssim(a, b):
    """Windowed SSIM averaged over windows and channels.

    Constants C1=(0.01 L)^2, C2=(0.03 L)^2 with L=1; 11x11 Gaussian window,
    sigma 1.5, mirror padding. Inputs (H, W) or (H, W, C) in [0, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.ndim != 3:
        raise DataError(f"expected (H, W) or (H, W, C), got shape {a.shape}")
    kernel = _gaussian_kernel_1d()
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        var_x = _filter_valid(x * x, kernel) - mu_x * mu_x
        var_y = _filter_valid(y * y, kernel) - mu_y * mu_y
        cov = _filter_valid(x * y, kernel) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def miou(pred, gt, num_classes):
    """(mIOU percent, per-class IoU percent) between two class maps.

    Classes absent from both maps are excluded from the mean and reported
    as NaN in the per-class vector.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.min() < 0 or pred.max() >= num_classes or gt.min() < 0 or gt.max() >= num_classes:
        raise DataError(f"class id outside [0, {num_classes})")
    conf = np.bincount(gt.reshape(-1) * num_classes + pred.reshape(-1),
                       minlength=num_classes * num_classes)
    conf = conf.reshape(num_classes, num_classes)
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    per_class = np.full(num_classes, np.nan)
    present = union > 0
    per_class[present] = 100.0 * inter[present] / union[present]
    return float(np.mean(per_class[present])), per_class


class RandomFeatureExtractor:
    """Fixed 3-layer conv embedding with seeded untrained weights.

    Weights derive from a named seed hashed with SHA-256, so the embedding
    is identical on every platform. Global average pool to 64 dims.
    """

    CHANNELS = (16, 32, FDR_FEATURE_DIM)

    def __init__(self, seed_name=FDR_SEED_NAME):
        seed = int.from_bytes(hashlib.sha256(seed_name.encode()).digest()[:8], "little")
        rng = np.random.Generator(np.random.PCG64(seed))
        self.weights = []
        c_in = 3
        for c_out in self.CHANNELS:
            w = rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / (c_in * 9))
            self.weights.append(w)
            c_in = c_out

    @staticmethod
    def _conv_s2(x, w):
        n, c, h, wd = x.shape
        x = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        oh, ow = (h + 1) // 2, (wd + 1) // 2
        f = w.shape[0]
        out = np.zeros((n, f, oh, ow))
        for i in range(3):
            for j in range(3):
                patch = x[:, :, i:i + 2 * oh - 1:2, j:j + 2 * ow - 1:2]
                out += np.einsum("nchw,fc->nfhw", patch, w[:, :, i, j], optimize=True)
        return out

    def __call__(self, images):
        """images (N, H, W, 3) in [0,1] -> features (N, 64)."""
        x = np.asarray(images, dtype=np.float64)
        if x.ndim != 4 or x.shape[-1] != 3:
            raise DataError(f"expected (N, H, W, 3), got {x.shape}")
        x = x.transpose(0, 3, 1, 2) - 0.5
        for w in self.weights:
            x = np.tanh(self._conv_s2(x, w))
        return x.mean(axis=(2, 3))


_EXTRACTOR = None


def _extractor():
    global _EXTRACTOR
    if _EXTRACTOR is None:
        _EXTRACTOR = RandomFeatureExtractor()
    return _EXTRACTOR


def _sqrt_psd_eigvals(m):
    vals = np.linalg.eigvalsh(m)
    return np.sqrt(np.clip(vals, 0.0, None))


def frechet_from_features(feats_a, feats_b, eps=1e-6):
    """Frechet distance between Gaussian fits of two feature sets.

    |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}); the square root is taken
    through a symmetric eigendecomposition with negative eigenvalues
    clamped to 0, and eps*I is added to both covariances first. Clamped at
    0 from below.
    """
    fa = np.asarray(feats_a, dtype=np.float64)
    fb = np.asarray(feats_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise DataError(f"feature shapes {fa.shape} / {fb.shape} incompatible")
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise DataError("need at least 2 samples per set")
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False).reshape(fa.shape[1], fa.shape[1])
    cov_b = np.cov(fb, rowvar=False).reshape(fb.shape[1], fb.shape[1])
    eye = eps * np.eye(fa.shape[1])
    cov_a = cov_a + eye
    cov_b = cov_b + eye

    # Tr sqrt(S1 S2) = Tr sqrt(sqrt(S1) S2 sqrt(S1)), which is symmetric PSD
    vals_a, vecs_a = np.linalg.eigh(cov_a)
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = root_a @ cov_b @ root_a
    tr_sqrt = _sqrt_psd_eigvals((inner + inner.T) / 2.0).sum()

    diff = mu_a - mu_b
    dist = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt
    return float(max(dist, 0.0))


def frechet_distance(images_a, images_b, eps=1e-6):
    """FD-r between two image sets via the fixed random feature embedding."""
    emb = _extractor()
    return frechet_from_features(emb(images_a), emb(images_b), eps=eps)
