"""Full segmentation model: encoder + token merging + regeneration + head.

With ``clusters == 0`` the model degenerates to a plain ViT (no merging
modules are even constructed), which is the baseline for accuracy and
cost comparisons.
"""

from dataclasses import dataclass

import numpy as np

from . import flops
from .checkpoint import load_checkpoint, restore_params, save_checkpoint
from .cluster import ClusterModule, aggregate, assign, reduce
from .regenerator import RegeneratorModule
from .tensor import Tensor
from .vit import Encoder, EncoderConfig


@dataclass
class ForwardResult:
    seg_logits: Tensor            # (H*W) x C, row-major pixels
    cluster_logits: Tensor        # N x (k+1), or None in vanilla mode
    assignment: np.ndarray        # (N,) ints, or None
    index: object                 # AssignmentIndex, or None
    tokens_after_ip: int          # reduced sequence length incl. CLS
    k_active: int
    final_tokens: object          # full-length TokenSequence fed to the head


class ClustViT:
    def __init__(self, config: EncoderConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.params = []
        self.encoder = Encoder(config, rng, params=self.params)
        if config.clusters > 0:
            self.cluster = ClusterModule(config, rng, self.params)
            self.regenerator = RegeneratorModule(config, rng, self.params)
        else:
            self.cluster = None
            self.regenerator = None

    def forward(self, image, forced_assignment=None):
        """Run one image through the pipeline.

        forced_assignment overrides the predicted per-patch assignment
        (used for teacher forcing and for pass-through tests); the cluster
        MLP still runs so its logits stay available to the loss.
        """
        cfg = self.config
        with flops.section("embed"):
            seq = self.encoder.patchify_embed(image)
        with flops.section("prefix"):
            pre = self.encoder.encode_prefix(seq)
        if self.cluster is None:
            with flops.section("suffix"):
                out = self.encoder.encode_suffix(pre)
            with flops.section("head"):
                seg = self.encoder.seg_head(out)
            return ForwardResult(seg, None, None, None, len(pre), 0, out)
        with flops.section("cluster_mlp"):
            logits = self.cluster.cluster_logits(pre)
        assignment = assign(logits) if forced_assignment is None else \
            np.asarray(forced_assignment, dtype=np.int64)
        reps, index = aggregate(pre, assignment)
        reduced = reduce(pre, reps, index)
        with flops.section("suffix"):
            out = self.encoder.encode_suffix(reduced)
        with flops.section("regenerator"):
            full = self.regenerator.regenerate(out, index)
        with flops.section("head"):
            seg = self.encoder.seg_head(full)
        return ForwardResult(seg, logits, assignment, index, len(reduced),
                             index.k_active, full)

    def predict_mask(self, image):
        """Class-index map (H x W, values in [0, C)) for one image."""
        result = self.forward(image)
        h, w = self.config.image_size
        return result.seg_logits.data.reshape(h, w, self.config.num_classes).argmax(axis=2)

    # -- persistence -----------------------------------------------------
    def save(self, path):
        save_checkpoint(path, self.params)

    def load(self, path):
        restore_params(self.params, load_checkpoint(path))
