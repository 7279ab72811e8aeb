"""The coupled-vs-decoupled comparison harness at toy scale.

Runs all four variants (VQVAE-T, sVQVAE-T, VQGAN-T, sVQGAN-T) over a shared
tiny dataset and one seed, then prints the emitted report. A real desk-scale
run uses the default config and `svq compare --out DIR`. Takes a few
minutes. Run:

    python demos/06_compare_matrix.py
"""

from pathlib import Path

from svq import pipeline

cfg = pipeline.RunConfig(n_train=32, n_heldout=8, k_image=64, k_semantic=32,
                         latent_dim=16, channels=(12, 20, 28), tf_blocks=2,
                         tf_width=48, tf_heads=4, batch_size=16,
                         steps_stage1=120, steps_stage2=150, top_k=16)

out = Path("demo_out/compare")
result = pipeline.compare(cfg, out, seeds=(0,))

print((out / "compare.tsv").read_text(encoding="utf-8"))
print((out / "nll_summary.tsv").read_text(encoding="utf-8"))
print("per-run artifacts under:", out)
