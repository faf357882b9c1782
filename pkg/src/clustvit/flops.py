"""Analytic FLOPs accounting and wall-clock throughput.

Counting rule: 1 MAC = 2 FLOPs; only matrix products are counted.
Element-wise ops, normalization, softmax, and fixed bilinear resampling
are excluded. The same rule drives both the closed-form model and the
instrumented counter (every recorded matmul self-reports 2*m*p*n FLOPs),
so the two agree with exact integer equality.
"""

import os
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

_ACTIVE = None


class FlopCounter:
    """Observes every matmul while active, attributing cost to the
    innermost named section."""

    def __init__(self):
        self.sections = defaultdict(int)
        self._stack = []
        self._old_hook = None

    def _on_matmul(self, m, p, n):
        name = self._stack[-1] if self._stack else "other"
        self.sections[name] += 2 * m * p * n

    def __enter__(self):
        global _ACTIVE
        self._old_hook = T.set_matmul_hook(self._on_matmul)
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        T.set_matmul_hook(self._old_hook)
        _ACTIVE = None

    @property
    def total(self):
        return sum(self.sections.values())


@contextmanager
def section(name):
    """Attribute matmuls inside the block to ``name`` (no-op when no
    counter is active)."""
    if _ACTIVE is None:
        yield
        return
    _ACTIVE._stack.append(name)
    try:
        yield
    finally:
        _ACTIVE._stack.pop()


# -- closed-form model ---------------------------------------------------

def block_macs(n, d):
    """MACs for one Transformer block on n tokens of width d:
    QKV + output projection 4nd^2, attention scores and mixing 2n^2 d,
    FFN (d -> 4d -> d) 8nd^2."""
    return 12 * n * d * d + 2 * n * n * d


def block_flops(n, d, h=None):
    """FLOPs for one block; head count h does not change the MAC total
    (heads partition the same products) and is accepted for symmetry."""
    return 2 * block_macs(n, d)


def _embed_macs(cfg):
    return cfg.num_patches * (cfg.patch_size * cfg.patch_size * 3) * cfg.embed_dim


def _cluster_mlp_macs(cfg):
    h = cfg.cluster_hidden
    return cfg.num_patches * (cfg.embed_dim * h + h * (cfg.clusters + 1))


def _regen_macs(cfg, n_clustered):
    return n_clustered * 3 * cfg.embed_dim * cfg.embed_dim


def _head_macs(cfg):
    return cfg.num_patches * cfg.embed_dim * cfg.num_classes


def model_flops(cfg, tokens_after_ip, k_active=None):
    """Total analytic FLOPs for one image plus a per-component breakdown.

    tokens_after_ip is the reduced sequence length (CLS included). For a
    merging model, k_active defaults to cfg.clusters whenever any token was
    merged; pass the true active-cluster count for exact accounting.
    """
    n_full = 1 + cfg.num_patches
    if not 1 <= tokens_after_ip <= n_full:
        raise ValueError(f"tokens_after_ip {tokens_after_ip} outside [1, {n_full}]")
    ip, layers = cfg.injection_point, cfg.num_layers
    breakdown = {
        "embed": 2 * _embed_macs(cfg),
        "prefix": ip * 2 * block_macs(n_full, cfg.embed_dim),
        "cluster_mlp": 0,
        "suffix": (layers - ip) * 2 * block_macs(tokens_after_ip, cfg.embed_dim),
        "regenerator": 0,
        "head": 2 * _head_macs(cfg),
    }
    if cfg.clusters > 0:
        breakdown["cluster_mlp"] = 2 * _cluster_mlp_macs(cfg)
        if k_active is None:
            k_active = cfg.clusters if tokens_after_ip < n_full else 0
        n_clustered = cfg.num_patches - (tokens_after_ip - 1 - k_active)
        breakdown["regenerator"] = 2 * _regen_macs(cfg, n_clustered)
    return sum(breakdown.values()), breakdown


def vanilla_flops(cfg):
    """Cost of the plain encoder (no merging) on a full-length sequence."""
    n_full = 1 + cfg.num_patches
    total = 2 * _embed_macs(cfg)
    total += cfg.num_layers * 2 * block_macs(n_full, cfg.embed_dim)
    total += 2 * _head_macs(cfg)
    return total


def break_even_tokens(cfg):
    """Largest reduced length whose total still beats the vanilla encoder
    (amortizing the cluster-MLP overhead), or None if merging never pays.
    Assumes all k clusters are active when anything merges."""
    if cfg.clusters == 0:
        return None
    base = vanilla_flops(cfg)
    for t in range(cfg.num_patches, 0, -1):
        total, _ = model_flops(cfg, t, k_active=min(cfg.clusters, t - 1))
        if total < base:
            return t
    return None


# -- dataset-level accounting --------------------------------------------

@dataclass
class CostReport:
    per_image_flops: list = field(default_factory=list)
    breakdowns: list = field(default_factory=list)
    tokens_after_ip: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.per_image_flops))

    @property
    def std(self):
        # population std, matching the "mean +- std" convention
        return float(np.std(self.per_image_flops))

    def breakdown_means(self):
        keys = self.breakdowns[0].keys()
        return {k: float(np.mean([b[k] for b in self.breakdowns])) for k in keys}


def dataset_cost(model, samples):
    """Run inference per image and record analytic FLOPs and token counts."""
    samples = list(samples)
    if not samples:
        raise ValueError("empty dataset")
    report = CostReport()
    for sample in samples:
        with T.no_grad():
            result = model.forward(sample.image)
        total, breakdown = model_flops(
            model.config, result.tokens_after_ip, k_active=result.k_active)
        report.per_image_flops.append(total)
        report.breakdowns.append(breakdown)
        report.tokens_after_ip.append(result.tokens_after_ip)
    return report


def token_histogram(tokens_after_ip, bins=16):
    """Integer-edged histogram rows (bin_low, bin_high, count); bin_high
    is inclusive."""
    values = np.asarray(tokens_after_ip)
    lo, hi = int(values.min()), int(values.max())
    width = max(1, -(-(hi - lo + 1) // bins))
    rows = []
    b = lo
    while b <= hi:
        top = b + width - 1
        rows.append((b, top, int(((values >= b) & (values <= top)).sum())))
        b += width
    return rows


def throughput(model, images, warmup=10, iters=100):
    """Single-image inference rate (img/s) on a monotonic clock; warmup
    iterations are discarded. Deliberately single-threaded."""
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    images = list(images)
    with T.no_grad():
        for i in range(warmup):
            model.forward(images[i % len(images)])
        start = time.perf_counter()
        for i in range(iters):
            model.forward(images[i % len(images)])
        elapsed = time.perf_counter() - start
    return iters / elapsed


def max_workers(default=1):
    """Parallelism cap from CLUSTVIT_THREADS (timing paths stay serial)."""
    try:
        return max(1, int(os.environ.get("CLUSTVIT_THREADS", default)))
    except ValueError:
        return default
