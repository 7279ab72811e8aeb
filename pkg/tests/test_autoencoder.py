"""Coupled autoencoder and decoupled baseline contracts."""

import numpy as np
import pytest

from svq import autodiff as ad
from svq.autoencoder import (CoupledAutoencoder, DecoupledBaseline, baseline_forward,
                             baseline_losses, decode_image, decode_semantic,
                             encode_joint, svq_loss)
from svq.data import PairedSample, generate_dataset
from svq.errors import ConfigurationError, DataError
from svq.quantizer import LatentGrid


def micro_model(seed=0, lam=0.7, dtype=np.float64):
    rng = np.random.Generator(np.random.PCG64(seed))
    return CoupledAutoencoder(image_size=8, num_classes=4, latent_dim=6,
                              k_image=12, k_semantic=7, channels=(6, 8, 10),
                              lam=lam, rng=rng, dtype=dtype)


def micro_sample(seed=1, size=8, classes=4):
    rng = np.random.Generator(np.random.PCG64(seed))
    return PairedSample(rng.random((size, size, 3)), rng.integers(0, classes, (size, size)))


def test_encode_joint_shapes_and_ranges():
    model = micro_model()
    z_x, z_s, pre_x, pre_s = encode_joint(model, micro_sample())
    assert z_x.shape == (2, 2) and z_s.shape == (2, 2)
    assert pre_x.shape == (1, 2, 2, 6) and pre_s.shape == (1, 2, 2, 6)
    assert 0 <= z_x.indices.min() and z_x.indices.max() < 12
    assert 0 <= z_s.indices.min() and z_s.indices.max() < 7
    assert z_x.source_codebook_id == "image"
    assert z_s.source_codebook_id == "semantic"


def test_desk_scale_latent_grid_is_8x8():
    rng = np.random.Generator(np.random.PCG64(0))
    model = CoupledAutoencoder(rng=rng)
    sample = generate_dataset(1, seed=0)[0]
    z_x, z_s, _, _ = encode_joint(model, sample)
    assert z_x.shape == (8, 8) and z_s.shape == (8, 8)


def test_encode_rejects_bad_class_ids():
    model = micro_model()
    bad = PairedSample(np.zeros((8, 8, 3)), np.full((8, 8), 3))
    encode_joint(model, bad)  # 3 < num_classes = 4
    worse = PairedSample(np.zeros((8, 8, 3)), np.full((8, 8), 5))
    with pytest.raises(DataError):
        encode_joint(model, worse)


def test_decode_image_bounded_and_shaped():
    model = micro_model()
    z_x, z_s, _, _ = encode_joint(model, micro_sample())
    img = decode_image(model, z_x, z_s)
    assert img.shape == (8, 8, 3)
    assert img.data.min() >= 0.0 and img.data.max() <= 1.0


def test_image_loss_never_reaches_semantic_branch():
    model = micro_model()
    z_x, z_s, _, _ = encode_joint(model, micro_sample())
    img = decode_image(model, z_x, z_s)
    ad.mean(img * img).backward()
    assert model.semantic_codebook.entries.grad is None
    for t in model.semantic_decoder.named_parameters().values():
        assert t.grad is None
    # ...but the image codebook is trainable through this path
    assert model.image_codebook.entries.grad is not None
    assert np.abs(model.image_codebook.entries.grad).max() > 0


def test_image_codebook_gradient_matches_fd_spot_check():
    model = micro_model()
    z_x, z_s, _, _ = encode_joint(model, micro_sample())
    w = np.random.default_rng(3).random((8, 8, 3))

    def build():
        return ad.tsum(decode_image(model, z_x, z_s) * ad.Tensor(w))

    loss = build()
    model.image_codebook.entries.grad = None
    loss.backward()
    row, col = int(z_x.indices[0, 0]), 2
    analytic = model.image_codebook.entries.grad[row, col]
    h = 1e-6
    flat = model.image_codebook.entries.data
    orig = flat[row, col]
    flat[row, col] = orig + h
    up = build().item()
    flat[row, col] = orig - h
    down = build().item()
    flat[row, col] = orig
    fd = (up - down) / (2 * h)
    assert abs(fd - analytic) / max(abs(fd), 1e-8) < 1e-5


def test_decode_semantic_contract():
    model = micro_model()
    sample = micro_sample()
    z_x, z_s, _, _ = encode_joint(model, sample)
    logits = decode_semantic(model, z_s)
    assert logits.shape == (8, 8, 4)
    other_x = LatentGrid((z_x.indices + 1) % 12, "image")
    logits_again = decode_semantic(model, z_s)
    np.testing.assert_array_equal(logits.data, logits_again.data)  # z_x has no path
    changed = decode_semantic(model, LatentGrid((z_s.indices + 1) % 7, "semantic"))
    assert not np.array_equal(changed.data, logits.data)


def test_decode_validates_grid_range():
    model = micro_model()
    bad = LatentGrid(np.full((2, 2), 99), "image")
    z_x, z_s, _, _ = encode_joint(model, micro_sample())
    with pytest.raises(DataError):
        decode_image(model, bad, z_s)


def test_svq_loss_lambda_zero_is_image_branch():
    model = micro_model(lam=0.0)
    sample = micro_sample()
    total, parts = svq_loss(model, sample)
    image_branch = parts["image_recon"] + parts["codebook_x"] + 0.25 * parts["commit_x"]
    assert total.item() == pytest.approx(image_branch, rel=1e-12)


def test_svq_loss_affine_in_lambda():
    model = micro_model()
    sample = micro_sample()
    at0, _ = svq_loss(model, sample, lam=0.0)
    at1, _ = svq_loss(model, sample, lam=1.0)
    predicted = at0.item() + 0.1 * (at1.item() - at0.item())
    actual, _ = svq_loss(model, sample, lam=0.1)
    assert actual.item() == pytest.approx(predicted, abs=1e-9)


def test_svq_loss_supported_sweep_values():
    model = micro_model()
    sample = micro_sample()
    values = [svq_loss(model, sample, lam=lam)[0].item() for lam in (0.01, 0.1, 1.0)]
    assert all(np.isfinite(values))
    assert values == sorted(values)  # larger lambda adds more semantic weight


def test_svq_loss_rejects_negative_lambda():
    with pytest.raises(ConfigurationError):
        micro_model(lam=-0.5)
    model = micro_model()
    with pytest.raises(ConfigurationError):
        svq_loss(model, micro_sample(), lam=-1.0)


def test_loss_parts_nonnegative():
    model = micro_model()
    _, parts = svq_loss(model, micro_sample())
    for name, value in parts.items():
        assert value >= 0.0, name


def test_one_gradient_step_decreases_loss():
    model = micro_model()
    sample = micro_sample()
    total, _ = svq_loss(model, sample)
    base = total.item()
    for p in model.parameters():
        p.grad = None
    total.backward()
    grads = {id(p): p.grad for p in model.parameters() if p.grad is not None}
    for alpha in (1e-2, 1e-3, 1e-4, 1e-5):
        for p in model.parameters():
            if id(p) in grads:
                p.data = p.data - alpha * grads[id(p)]
        new, _ = svq_loss(model, sample)
        improved = new.item() < base
        for p in model.parameters():
            if id(p) in grads:
                p.data = p.data + alpha * grads[id(p)]
        if improved:
            return
    raise AssertionError("no step size in the line search decreased the loss")


def micro_baseline(seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    return DecoupledBaseline(image_size=8, num_classes=4, latent_dim=6,
                             k_image=12, k_semantic=7, channels=(6, 8, 10),
                             rng=rng, dtype=np.float64)


def test_baseline_losses_are_independent():
    baseline = micro_baseline()
    sample = micro_sample()
    img_before, _, _ = baseline_losses(baseline, sample)
    for t in baseline.semantic_vq.named_parameters().values():
        t.data = t.data + 0.37
    img_after, sem_after, _ = baseline_losses(baseline, sample)
    assert img_before.item() == img_after.item()  # bitwise unaffected
    sem_grad_probe = sem_after
    for t in baseline.image_vq.named_parameters().values():
        t.data = t.data + 0.11
    _, sem_after2, _ = baseline_losses(baseline, sample)
    assert sem_grad_probe.item() == sem_after2.item()


def test_baseline_perfect_reconstruction_zero_residual(monkeypatch):
    baseline = micro_baseline()
    sample = micro_sample()
    images = np.transpose(sample.image, (2, 0, 1))[None].astype(np.float64)

    original = baseline.image_vq.vq_parts

    def perfect(x_nchw):
        recon, cb, com, grids, pre = original(x_nchw)
        return ad.Tensor(images), cb, com, grids, pre

    monkeypatch.setattr(baseline.image_vq, "vq_parts", perfect)
    _, _, parts = baseline_losses(baseline, sample)
    assert parts["image_recon"] == 0.0


def test_baseline_semantic_loss_cross_entropy_scale():
    baseline = micro_baseline()
    _, sem_loss, parts = baseline_losses(baseline, micro_sample())
    assert parts["semantic_ce"] > 0.0
    assert sem_loss.item() >= parts["semantic_ce"]
