"""Analytic cost model vs an instrumented forward pass.

Plots (as text) the per-token-count cost curve, the break-even point where
merging starts to pay for the cluster-MLP overhead, and verifies that the
closed-form model matches a counter hooked into every matmul.

Run: python3 demos/04_flops_profile.py
"""

import numpy as np

from clustvit.flops import (FlopCounter, break_even_tokens, model_flops,
                            vanilla_flops)
from clustvit.model import ClustViT
from clustvit.vit import EncoderConfig

cfg = EncoderConfig()
base = vanilla_flops(cfg)
be = break_even_tokens(cfg)
print(f"vanilla encoder: {base / 1e6:.1f} MFLOPs per image")
print(f"break-even: merging pays below {be} tokens after the injection point\n")

n_full = 1 + cfg.num_patches
for t in range(5, n_full + 1, 10):
    total, _ = model_flops(cfg, t)
    bar = "#" * int(40 * total / base)
    marker = " <- vanilla" if total >= base else ""
    print(f"t={t:3d}  {total / 1e6:7.1f} MFLOPs  {bar}{marker}")

# Exact agreement with an instrumented pass: every matmul in the model
# self-reports 2*m*p*n FLOPs into the active counter.
model = ClustViT(cfg, seed=0)
image = np.random.default_rng(0).random((*cfg.image_size, 3))
with FlopCounter() as fc:
    result = model.forward(image)
analytic, breakdown = model_flops(cfg, result.tokens_after_ip,
                                  k_active=result.k_active)
print(f"\ninstrumented: {fc.total} FLOPs")
print(f"analytic:     {analytic} FLOPs")
assert fc.total == analytic
print("exact integer match")
for name in breakdown:
    assert fc.sections.get(name, 0) == breakdown[name]
print("per-section match:", ", ".join(breakdown))
