"""Acceptance suite: one test per criterion, one printed line each.

Criteria 1-5, 9, 10 are fast (seconds). Criteria 6-8 train real models on
2 CPU cores: roughly 6 min (overfit), 30 min (desk-scale reconstruction),
and 15 min (4-variant comparison matrix); about 50 minutes total.
Run just this file with:  pytest -v -s tests/test_acceptance.py
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from svq import autodiff as ad
from svq import gradcheck, pipeline
from svq.autoencoder import (CoupledAutoencoder, decode_image, decode_semantic,
                             encode_joint, svq_loss)
from svq.data import (NUM_CLASSES, PairedSample, generate_dataset, read_image_ppm,
                      read_semantics_pgm, save_dataset, write_image_ppm,
                      write_semantics_pgm)
from svq.metrics import frechet_distance, frechet_from_features, miou, ssim
from svq.nn import Adam
from svq.pipeline import RunConfig
from svq.quantizer import Codebook, quantize
from svq.transformer import TransformerModel, conditional_nll, sample

PASS_LINE = "ACCEPTANCE {:>2} {}: PASS"


def report(number, name):
    print(PASS_LINE.format(number, name))


def test_c01_quantizer_matches_exhaustive_oracle():
    """1000 random instances, exact index equality with lowest-index ties."""
    rng = np.random.Generator(np.random.PCG64(101))
    t0 = time.time()
    for _ in range(1000):
        k = int(rng.integers(4, 33))
        d = int(rng.integers(2, 9))
        h, w = (int(rng.integers(2, 5)) for _ in range(2))
        entries = rng.standard_normal((k, d))
        cb = Codebook(k, d, entries=entries, dtype=np.float64)
        pre = rng.standard_normal((h, w, d))
        grid, _ = quantize(pre, cb)
        flat = pre.reshape(-1, d)
        oracle = np.empty(flat.shape[0], dtype=np.int64)
        for i, z in enumerate(flat):
            best, best_d = 0, None
            for row in range(k):
                dist = float(np.sum((z - entries[row]) ** 2))
                if best_d is None or dist < best_d:
                    best, best_d = row, dist
            oracle[i] = best
        assert np.array_equal(grid.indices, oracle.reshape(h, w))
    # duplicated rows: ties must go to the lowest index in both precisions
    for dtype in (np.float64, np.float32):
        entries = np.array([[2.0, 2.0], [0.5, -0.5], [3.0, 1.0], [0.5, -0.5]])
        cb = Codebook(4, 2, entries=entries, dtype=dtype)
        grid, _ = quantize(np.array([[[0.5, -0.5]]], dtype=dtype), cb)
        assert grid.indices[0, 0] == 1
    elapsed = time.time() - t0
    assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"
    report(1, "quantizer vs exhaustive nearest-neighbor oracle")


def test_c02_gradient_suite():
    """Straight-through exact; codebook form < 1e-4; end-to-end < 1e-3."""
    t0 = time.time()
    results = {r.name: r for r in gradcheck.run_all(seed=0)}
    st = results["straight-through identity (exact)"]
    assert st.max_rel_err == 0.0
    form = results["codebook loss closed-form gradient"]
    assert form.max_rel_err < 1e-12
    fd_form = results["codebook loss gradient 2(c - z_e)/N vs finite differences"]
    assert fd_form.max_rel_err < 1e-4
    for name in ("full sVQ loss end-to-end", "full sVQ loss end-to-end (adversarial variant)",
                 "decoupled baseline losses end-to-end", "transformer conditional NLL"):
        assert results[name].max_rel_err < 1e-3, name
    assert all(r.passed for r in results.values())
    elapsed = time.time() - t0
    assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s"
    report(2, "gradient suite (straight-through, codebook form, end-to-end FD)")


def micro_coupled(seed=0, lam=0.7):
    rng = np.random.Generator(np.random.PCG64(seed))
    return CoupledAutoencoder(image_size=8, num_classes=4, latent_dim=6,
                              k_image=12, k_semantic=7, channels=(6, 8, 10),
                              lam=lam, rng=rng, dtype=np.float64)


def micro_pair(seed=1):
    rng = np.random.Generator(np.random.PCG64(seed))
    return PairedSample(rng.random((8, 8, 3)), rng.integers(0, 4, (8, 8)))


def test_c03_stop_gradient_structure():
    """Cross-branch gradients are exactly zero, not merely small."""
    model = micro_coupled()
    sample_ = micro_pair()
    from svq.autoencoder import svq_forward, _pixel_cross_entropy, batch_arrays

    total, _, aux = svq_forward(model, sample_)
    for p in model.parameters():
        p.grad = None
    target = np.transpose(sample_.image, (2, 0, 1))[None]
    image_loss = ad.mean((aux["x_hat"] - ad.Tensor(target)) ** 2.0)
    image_loss.backward()
    assert model.semantic_codebook.entries.grad is None
    for name, t in model.semantic_decoder.named_parameters().items():
        assert t.grad is None, name

    for p in model.parameters():
        p.grad = None
    _, _, aux = svq_forward(model, sample_)
    _, sems = batch_arrays(sample_, model.num_classes, model.dtype)
    semantic_loss = _pixel_cross_entropy(aux["logits"], sems, model.num_classes)
    semantic_loss.backward()
    assert model.image_codebook.entries.grad is None
    for name, t in model.image_decoder.named_parameters().items():
        assert t.grad is None, name
    report(3, "stop-gradient dependency structure (exact zeros)")


def test_c04_loss_affine_in_lambda():
    model = micro_coupled()
    sample_ = micro_pair()
    at0, _ = svq_loss(model, sample_, lam=0.0)
    at1, _ = svq_loss(model, sample_, lam=1.0)
    predicted = at0.item() + 0.1 * (at1.item() - at0.item())
    actual, _ = svq_loss(model, sample_, lam=0.1)
    assert abs(actual.item() - predicted) < 1e-9
    report(4, "loss affine in lambda (two-point interpolation, 1e-9 at 64-bit)")


def test_c05_transformer_causality_and_normalization():
    rng = np.random.Generator(np.random.PCG64(55))
    model = TransformerModel(k_semantic=6, k_image=9, sem_shape=(2, 2), img_shape=(2, 2),
                             width=32, blocks=2, heads=2,
                             rng=np.random.Generator(np.random.PCG64(5)),
                             dtype=np.float32)
    n_total, k_s, k_x = model.n_total, model.k_semantic, model.k_image
    for _ in range(100):
        sem = rng.integers(0, k_s, (1, model.n_semantic))
        img = rng.integers(0, k_x, (1, model.n_image)) + k_s
        tokens = np.concatenate([sem, img], axis=1)
        base = model(tokens).data
        i = int(rng.integers(0, n_total - 1))
        for j in range(i + 1, n_total):
            perturbed = tokens.copy()
            lo, hi = (0, k_s) if j < model.n_semantic else (k_s, k_s + k_x)
            perturbed[0, j] = lo + (perturbed[0, j] - lo + 1) % (hi - lo)
            out = model(perturbed).data
            assert np.array_equal(out[0, :i + 1], base[0, :i + 1])

    tokens = np.concatenate([rng.integers(0, k_s, (16, 4)),
                             k_s + rng.integers(0, k_x, (16, 4))], axis=1)
    probs = np.exp(ad.log_softmax(model(tokens), axis=-1).data)
    assert np.abs(probs.sum(axis=-1) - 1.0).max() < 1e-6

    model.head.w.data[:] = 0.0
    model.head.b.data[:] = 0.0
    nll = conditional_nll(model, tokens).item()
    assert abs(nll - np.log(k_x)) < 1e-6
    report(5, "transformer causality bitwise; softmax normalized; uniform NLL = ln K_x")


def test_c09_metric_oracles():
    rng = np.random.Generator(np.random.PCG64(9))
    x = rng.random((24, 24, 3))
    assert abs(ssim(x, x) - 1.0) < 1e-9

    gt = np.array([[0, 0], [1, 1]])
    pred = np.array([[0, 1], [1, 1]])
    value, _ = miou(pred, gt, 2)
    assert abs(value - 58.33) < 0.01

    gauss = np.random.Generator(np.random.PCG64(4))
    a = gauss.normal(0.0, 1.0, (10_000, 1))
    b = gauss.normal(1.0, 1.5, (10_000, 1))
    closed = 1.0 + 0.25
    assert abs(frechet_from_features(a, b) - closed) / closed < 0.02

    imgs = rng.random((12, 16, 16, 3))
    assert frechet_distance(imgs, imgs) < 1e-6
    report(9, "metric oracles (SSIM identity, hand mIOU, 1-D Frechet, identical sets)")


def test_c10_determinism_and_formats(tmp_path):
    data_a = generate_dataset(32, seed=7)
    data_b = generate_dataset(32, seed=7)
    save_dataset(data_a, tmp_path / "da")
    save_dataset(data_b, tmp_path / "db")
    import os
    for name in sorted(os.listdir(tmp_path / "da")):
        assert (tmp_path / "da" / name).read_bytes() == (tmp_path / "db" / name).read_bytes()

    img = data_a[0].image
    blob = write_image_ppm(img)
    assert write_image_ppm(read_image_ppm(blob)) == blob
    sem_blob = write_semantics_pgm(data_a[0].semantics)
    assert write_semantics_pgm(read_semantics_pgm(sem_blob)) == sem_blob

    cfg = RunConfig(n_train=8, n_heldout=2, k_image=32, k_semantic=16, latent_dim=8,
                    channels=(6, 10, 12), tf_blocks=2, tf_width=32, tf_heads=2,
                    batch_size=8, steps_stage1=10, steps_stage2=10, top_k=8)
    ck_a = pipeline.train_stage1(cfg, data_a[:8], out_dir=tmp_path / "ra")
    ck_b = pipeline.train_stage1(cfg, data_a[:8], out_dir=tmp_path / "rb")
    bytes_a = (tmp_path / "ra" / "stage1.svqc").read_bytes()
    assert bytes_a == (tmp_path / "rb" / "stage1.svqc").read_bytes()

    loaded = pipeline.load_checkpoint(tmp_path / "ra" / "stage1.svqc")
    again = pipeline.save_checkpoint(loaded, tmp_path / "roundtrip.svqc")
    assert again.read_bytes() == bytes_a

    ck2 = pipeline.train_stage2(cfg, ck_a, data_a[:8], out_dir=tmp_path / "ra")
    pipeline.synthesize(ck_a, ck2, data_a[8:10], out_dir=tmp_path / "s1")
    pipeline.synthesize(ck_a, ck2, data_a[8:10], out_dir=tmp_path / "s2")
    assert (tmp_path / "s1" / "metrics.tsv").read_bytes() == \
           (tmp_path / "s2" / "metrics.tsv").read_bytes()
    assert (tmp_path / "s1" / "generations.ppm").read_bytes() == \
           (tmp_path / "s2" / "generations.ppm").read_bytes()
    report(10, "determinism and formats (datasets, checkpoints, reports, round trips)")


# ---- model-training criteria (minutes each) ----------------------------------


OVERFIT_CFG = dict(variant="svqvae", n_train=8, batch_size=8, lr=1e-3,
                   steps_stage1=500, tf_blocks=2, tf_width=96, tf_heads=4,
                   top_k=1)


def test_c06_overfit_convergence(tmp_path):
    """8 samples: stage-1 MSE < 0.01 and mIOU = 100 within 500 steps; stage-2
    NLL < 0.1 within 2000 steps; greedy sampling reproduces all 8 grids."""
    t0 = time.time()
    cfg = RunConfig(**OVERFIT_CFG)
    data = generate_dataset(8, seed=42)
    ck1 = pipeline.train_stage1(cfg, data, out_dir=None)
    assert ck1.step <= 500
    model, _ = pipeline.load_stage1(ck1)
    with ad.no_grad():
        z_x, z_s, _, _ = encode_joint(model, data)
        recon = decode_image(model, z_x, z_s).data
        logits = decode_semantic(model, z_s).data
    gt = np.stack([s.image for s in data])
    mse = float(np.mean((recon - gt) ** 2))
    assert mse < 0.01, f"overfit MSE {mse:.5f}"
    pred = np.argmax(logits, axis=-1)
    maps = np.stack([s.semantics for s in data])
    value, _ = miou(pred.reshape(-1), maps.reshape(-1), NUM_CLASSES)
    assert value == 100.0, f"overfit mIOU {value:.2f}"

    # two samples differing only in semantics get different semantic latents
    with ad.no_grad():
        alt = PairedSample(data[0].image, data[1].semantics)
        _, z_s_alt, _, _ = encode_joint(model, alt)
        _, z_s_orig, _, _ = encode_joint(model, data[0])
    assert not np.array_equal(z_s_alt.indices, z_s_orig.indices)

    tokens = pipeline.encode_dataset_tokens(model, cfg, data)
    tf_model = pipeline.build_transformer(cfg)
    opt = Adam(tf_model.parameters(), lr=1e-3, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    grids_s = [encode_joint(model, s)[1] for s in data]
    grids_x = [encode_joint(model, s)[0] for s in data]
    steps_used = None
    for step in range(1, 2001):
        loss = conditional_nll(tf_model, tokens)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 100 == 0 and loss.item() < 0.1:
            with ad.no_grad():
                reproduced = all(
                    np.array_equal(sample(tf_model, zs, top_k=1, seed=0).indices, zx.indices)
                    for zs, zx in zip(grids_s, grids_x))
            if reproduced:
                steps_used = step
                break
    assert steps_used is not None and steps_used <= 2000, \
        f"stage 2 failed to memorize within 2000 steps (last NLL {loss.item():.4f})"
    assert loss.item() < 0.1
    elapsed = time.time() - t0
    assert elapsed < 600.0, f"overfit run took {elapsed:.0f}s"
    report(6, f"overfit convergence (stage2 memorized at step {steps_used}, {elapsed:.0f}s)")


def test_c07_desk_scale_reconstruction():
    """Default config on 2000 samples: held-out mIOU >= 95%, SSIM >= 0.7."""
    t0 = time.time()
    cfg = RunConfig()
    data = generate_dataset(cfg.n_train + cfg.n_heldout, cfg.data_seed, cfg.image_size)
    ck1 = pipeline.train_stage1(cfg, data[:cfg.n_train], out_dir=None)
    held = pipeline.evaluate_reconstruction(ck1, data[cfg.n_train:])
    elapsed = time.time() - t0
    assert held.miou_percent >= 95.0, f"held-out mIOU {held.miou_percent:.2f}"
    assert held.ssim_mean >= 0.7, f"held-out SSIM {held.ssim_mean:.4f}"
    assert elapsed < 3600.0, f"desk-scale run took {elapsed:.0f}s"
    report(7, f"desk-scale reconstruction (mIOU {held.miou_percent:.2f}, "
              f"SSIM {held.ssim_mean:.3f}, {elapsed:.0f}s)")


QUICK_COMPARE = dict(n_train=80, n_heldout=16, k_image=128, k_semantic=64,
                     latent_dim=32, channels=(12, 20, 28), tf_blocks=2,
                     tf_width=64, tf_heads=4, batch_size=16, steps_stage1=250,
                     steps_stage2=300, top_k=32, samples_per_condition=3)


def test_c08_comparison_harness(tmp_path):
    """4-variant matrix over 3 seeds: 12 finite cells, coupled NLL within or
    below the baseline's NLL +/- std; directional claim logged softly."""
    cfg = RunConfig(**QUICK_COMPARE)
    out = pipeline.compare(cfg, tmp_path, seeds=(0, 1, 2))
    tsv = (tmp_path / "compare.tsv").read_text(encoding="utf-8")
    lines = tsv.strip().splitlines()
    assert lines[0].split("\t") == ["variant", "FD-r", "SSIM", "mIOU"]
    labels = [ln.split("\t")[0] for ln in lines[1:]]
    assert labels == ["VQVAE-T", "sVQVAE-T", "VQGAN-T", "sVQGAN-T"]
    cells = [float(v) for ln in lines[1:] for v in ln.split("\t")[1:]]
    assert len(cells) == 12 and all(np.isfinite(cells))

    for pair, stats in out["nll_summary"].items():
        assert stats["coupled_mean"] <= stats["baseline_mean"] + stats["baseline_std"], \
            f"{pair}: coupled NLL {stats['coupled_mean']:.4f} vs baseline " \
            f"{stats['baseline_mean']:.4f} +/- {stats['baseline_std']:.4f}"
        direction = "improves on" if stats["coupled_mean"] < stats["baseline_mean"] \
            else "does not improve on"
        print(f"  soft directional log: coupled {pair} {direction} its baseline "
              f"({stats['coupled_mean']:.4f} vs {stats['baseline_mean']:.4f})")
    report(8, "comparison harness (4 variants x 3 seeds, NLL within tolerance)")
