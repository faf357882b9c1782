"""Train a small model on the sparse synthetic preset and evaluate it.

Uses a reduced width/depth so the whole script finishes in about a minute;
the full desk-scale recipe is the `clustvit train` default.

Run: python3 demos/03_train_eval_sparse.py
"""

import tempfile

import numpy as np

from clustvit.data import preset_spec, read_manifest, write_dataset
from clustvit.train import RunConfig, evaluate, train
from clustvit.vit import EncoderConfig

root = tempfile.mkdtemp(prefix="clustvit_demo_")
write_dataset(root, preset_spec("sparse", seed=0),
              {"train": 32, "val": 8}, patch_size=8, k=3)
print(f"dataset at {root}")

cfg = RunConfig(
    encoder=EncoderConfig(embed_dim=32, num_layers=4, num_heads=2,
                          clusters=3, injection_point=2),
    data_root=root,
    out_dir=f"{root}/run",
    total_iters=300,
    batch_size=4,
    log_every=50,
    checkpoint_every=0,
    seed=0,
)
model, rows = train(cfg)

val = [e for e in read_manifest(root) if e.split == "val"]
result = evaluate(model, val)
tokens = result["cost"].tokens_after_ip
print(f"\nval mIoU        {result['miou']:.3f}")
print(f"cluster acc     {result['cluster_acc']:.3f}")
print(f"flops per image {result['cost'].mean / 1e6:.2f} "
      f"± {result['cost'].std / 1e6:.2f} MFLOPs")
print(f"tokens after ip {np.mean(tokens):.1f} "
      f"(range {min(tokens)}..{max(tokens)} of {1 + cfg.encoder.num_patches})")
