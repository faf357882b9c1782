"""Trainable token-merging module.

A two-layer MLP scores each patch token into one of k clusters or the
"keep" category 0. Tokens sharing a cluster id are averaged into a single
representative; kept tokens pass through untouched. The hard argmax is
treated as a constant during backward -- the MLP learns only from its own
cross-entropy against pseudo-cluster labels.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .optim import make_param
from .tensor import Tensor
from .vit import TokenSequence


@dataclass
class AssignmentIndex:
    """Bookkeeping for one image's merge: which original patch positions
    were kept, which belong to which cluster, and the pre-merge values of
    the merged tokens (row order matches concatenated cluster members)."""

    assignment: np.ndarray          # (N,) ints in {0..k}
    kept_positions: np.ndarray      # original indices assigned 0, in order
    cluster_ids: list               # active cluster ids (subset of 1..k)
    cluster_members: list           # per active cluster: original indices
    residuals: Tensor               # (N_clustered, D) pre-merge tokens

    @property
    def n_clustered(self):
        return sum(len(m) for m in self.cluster_members)

    @property
    def k_active(self):
        return len(self.cluster_ids)

    @property
    def clustered_positions(self):
        if not self.cluster_members:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.cluster_members)

    @property
    def member_cluster_index(self):
        """For each clustered position (in residual row order) the index of
        its cluster within the active-cluster list."""
        sizes = [len(m) for m in self.cluster_members]
        return np.repeat(np.arange(len(sizes)), sizes)

    @property
    def reduced_length(self):
        return 1 + len(self.kept_positions) + self.k_active


class ClusterModule:
    """MLP head predicting per-patch cluster logits (width k+1)."""

    def __init__(self, config, rng, params):
        d = config.embed_dim
        h = config.cluster_hidden
        self.k = config.clusters
        self.w1 = make_param(params, rng, "cluster.w1", (d, h))
        self.b1 = make_param(params, rng, "cluster.b1", (h,), zero=True)
        self.w2 = make_param(params, rng, "cluster.w2", (h, self.k + 1))
        self.b2 = make_param(params, rng, "cluster.b2", (self.k + 1,), zero=True)

    def cluster_logits(self, seq):
        """Logits for every patch token; CLS (row 0) is excluded."""
        n = len(seq) - 1
        patch_tokens = T.gather_rows(seq.tokens, np.arange(1, 1 + n))
        hidden = T.relu(T.matmul(patch_tokens, self.w1) + self.b1)
        return T.matmul(hidden, self.w2) + self.b2


def assign(logits):
    """Per-token argmax over cluster logits; ties go to the LOWEST class
    index, so a perfect tie leaves the token unclustered."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=1).astype(np.int64)


def aggregate(seq, assignment):
    """Average each cluster's member tokens into one representative.

    Empty clusters are skipped, so the representative matrix has k_active
    rows. Gradients flow from a representative back to each member as
    1/|cluster|. Returns (representatives, AssignmentIndex).
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    n = len(seq) - 1
    if assignment.shape != (n,):
        raise ValueError(f"assignment length {assignment.shape} vs {n} patch tokens")
    patch_tokens = T.gather_rows(seq.tokens, np.arange(1, 1 + n))
    kept = np.flatnonzero(assignment == 0)
    cluster_ids, cluster_members = [], []
    rep_rows = []
    k = int(assignment.max(initial=0))
    for cid in range(1, k + 1):
        members = np.flatnonzero(assignment == cid)
        if members.size == 0:
            continue
        cluster_ids.append(cid)
        cluster_members.append(members)
        rep_rows.append(T.rows_mean(T.gather_rows(patch_tokens, members)))
    d = seq.tokens.data.shape[1]
    if rep_rows:
        representatives = T.concat_rows(rep_rows)
        residuals = T.gather_rows(patch_tokens, np.concatenate(cluster_members))
    else:
        representatives = Tensor(np.empty((0, d)))
        residuals = Tensor(np.empty((0, d)))
    index = AssignmentIndex(assignment, kept, cluster_ids, cluster_members, residuals)
    return representatives, index


def reduce(seq, representatives, index):
    """Build the shortened sequence: [CLS; kept tokens in original order;
    representatives in cluster-id order]. With nothing clustered the input
    sequence is returned unchanged."""
    if index.n_clustered == 0:
        return seq
    keep_rows = np.concatenate([[0], index.kept_positions + 1])
    kept = T.gather_rows(seq.tokens, keep_rows)
    tokens = T.concat_rows([kept, representatives])
    return TokenSequence(tokens, seq.grid)


PALETTE = np.array([
    (0, 0, 0),        # 0: unclustered / mixed
    (230, 25, 75),    # 1
    (60, 180, 75),    # 2
    (255, 225, 25),   # 3
    (0, 130, 200),    # 4
    (245, 130, 48),   # 5
    (145, 30, 180),   # 6
    (70, 240, 240),   # 7
    (240, 50, 230),   # 8
], dtype=np.uint8)


def assignment_image(labels, grid, patch_size):
    """Indexed-color visualization of per-patch labels at pixel resolution."""
    labels = np.asarray(labels, dtype=np.int64)
    rows, cols = grid
    if labels.size != rows * cols:
        raise ValueError(f"{labels.size} labels for a {rows}x{cols} grid")
    colors = PALETTE[labels.reshape(rows, cols) % len(PALETTE)]
    return np.repeat(np.repeat(colors, patch_size, axis=0), patch_size, axis=1)
