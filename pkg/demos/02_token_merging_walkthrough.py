"""Follow one image through the full pipeline: patch embedding, the prefix
blocks, token merging, the shortened suffix, regeneration, and the head.

Run: python3 demos/02_token_merging_walkthrough.py
"""

import numpy as np

from clustvit.data import generate_sample, preset_spec
from clustvit.flops import model_flops, vanilla_flops
from clustvit.model import ClustViT
from clustvit.pseudo import pseudo_clusters
from clustvit.tensor import no_grad
from clustvit.vit import EncoderConfig

cfg = EncoderConfig()  # 64x64 image, 8x8 patches, D=96, 8 layers, ip=4, k=3
model = ClustViT(cfg, seed=0)

sample = generate_sample(preset_spec("sparse", seed=4), 0)
print(f"scene {sample.id}: classes present {sorted(np.unique(sample.mask))}")

with no_grad():
    result = model.forward(sample.image)

n = cfg.num_patches
print(f"patch tokens: {n} (+1 CLS)")
print(f"tokens entering the suffix blocks: {result.tokens_after_ip}")
print(f"active clusters: {result.k_active}")
print(f"unclustered patches: {(result.assignment == 0).sum()}")

# The pseudo-cluster labels are what the merge MLP is trained toward:
# pure patches of the k most frequent classes, everything else kept.
pcm = pseudo_clusters(sample.mask, cfg.patch_size, cfg.clusters)
agree = float((result.assignment == pcm.labels).mean())
print(f"untrained assignment vs pseudo labels: {agree:.0%} agreement")

total, breakdown = model_flops(cfg, result.tokens_after_ip,
                               k_active=result.k_active)
base = vanilla_flops(cfg)
print(f"\nanalytic cost: {total / 1e6:.1f} MFLOPs "
      f"(vanilla {base / 1e6:.1f}, {1 - total / base:.1%} saved)")
for name, value in breakdown.items():
    print(f"  {name:12s} {value / 1e6:8.2f} MFLOPs")

# The head always sees the restored full-length sequence.
assert len(result.final_tokens) == 1 + n
print(f"\nregenerated length: {len(result.final_tokens)} (restored)")
