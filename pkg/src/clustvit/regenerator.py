"""Restores the full-length token sequence after the shortened blocks.

Updated representatives are copied back to every member position, refined
against each token's pre-merge residual by a small MLP, and scattered back
into original order with the untouched (but suffix-updated) kept tokens.
When nothing was merged the module forwards its input unchanged, with no
arithmetic at all.
"""

import numpy as np

from . import tensor as T
from .optim import make_param
from .vit import TokenSequence


class RegeneratorModule:
    """Refining MLP: concat(residual, expanded representative) -> token."""

    def __init__(self, config, rng, params):
        d = config.embed_dim
        self.refine_skip = config.refine_skip
        self.w1 = make_param(params, rng, "regen.w1", (2 * d, d))
        self.b1 = make_param(params, rng, "regen.b1", (d,), zero=True)
        self.w2 = make_param(params, rng, "regen.w2", (d, d))
        self.b2 = make_param(params, rng, "regen.b2", (d,), zero=True)

    def refine(self, residuals, expanded):
        if residuals.data.shape[0] != expanded.data.shape[0]:
            raise ValueError(
                f"refine: {residuals.data.shape[0]} residual rows vs "
                f"{expanded.data.shape[0]} expanded rows")
        if residuals.data.shape[0] == 0:
            return residuals
        x = T.concat_cols([residuals, expanded])
        out = T.matmul(T.gelu(T.matmul(x, self.w1) + self.b1), self.w2) + self.b2
        if self.refine_skip:
            out = out + expanded
        return out

    def regenerate(self, seq_out, index):
        if index.n_clustered == 0:
            return seq_out
        cls, unclustered, reprs = split(seq_out, index)
        expanded = expand(reprs, index)
        refined = self.refine(index.residuals, expanded)
        return reassemble(cls, unclustered, refined, index, seq_out.grid)


def split(seq_out, index):
    """Positional inverse of the reduce() concatenation order."""
    n_kept = len(index.kept_positions)
    expected = 1 + n_kept + index.k_active
    if len(seq_out) != expected:
        raise ValueError(
            f"index/sequence disagreement: sequence length {len(seq_out)}, "
            f"index expects {expected}")
    tokens = seq_out.tokens
    cls = T.gather_rows(tokens, np.array([0]))
    unclustered = T.gather_rows(tokens, np.arange(1, 1 + n_kept))
    reprs = T.gather_rows(tokens, np.arange(1 + n_kept, expected))
    return cls, unclustered, reprs


def expand(reprs, index):
    """Copy each updated representative to all of its member rows; backward
    sums the copies' gradients back into the representative."""
    return T.gather_rows(reprs, index.member_cluster_index)


def reassemble(cls, unclustered, refined, index, grid):
    """Scatter kept and refined tokens back to original patch order and
    reattach CLS at row 0."""
    positions = np.concatenate([index.kept_positions, index.clustered_positions])
    n = positions.size
    counts = np.bincount(positions, minlength=n)
    if positions.size and (counts.max() > 1 or counts.min() == 0):
        raise RuntimeError(
            "internal invariant violation: kept/clustered positions do not "
            "partition the patch indices")
    inverse = np.empty(n, dtype=np.int64)
    inverse[positions] = np.arange(n)
    body = T.concat_rows([unclustered, refined])
    tokens = T.concat_rows([cls, T.gather_rows(body, inverse)])
    return TokenSequence(tokens, grid)
