"""Per-patch supervision labels derived from a ground-truth mask.

A patch whose pixels all share one semantic class gets that class; mixed
patches get 0. Among pure patches, only the k most frequent classes keep a
label, renumbered 1..k from most to least frequent. Class id 0 is reserved
in input masks (it denotes "mixed/keep" in the label space).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PseudoClusterMask:
    labels: np.ndarray                 # (N,) ints in {0..k}, row-major patches
    class_of_label: dict = field(default_factory=dict)  # label -> source class id


def patch_labels(mask, patch_size):
    """Per-patch class id for pure patches, 0 for mixed ones."""
    mask = np.asarray(mask)
    h, w = mask.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"mask {h}x{w} not divisible by patch size {p}")
    if (mask <= 0).any():
        raise ValueError("mask contains reserved class id 0 (classes must start at 1)")
    patches = mask.reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3).reshape(-1, p * p)
    pure = (patches == patches[:, :1]).all(axis=1)
    return np.where(pure, patches[:, 0], 0).astype(np.int64)


def topk_relabel(patch_classes, k):
    """Keep the k most frequent pure-patch classes, relabeled 1..k by
    descending frequency (ties to the lower class id); the rest become 0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    patch_classes = np.asarray(patch_classes, dtype=np.int64)
    classes, counts = np.unique(patch_classes[patch_classes > 0], return_counts=True)
    order = np.lexsort((classes, -counts))[:k]
    labels = np.zeros_like(patch_classes)
    class_of_label = {}
    for rank, idx in enumerate(order, start=1):
        labels[patch_classes == classes[idx]] = rank
        class_of_label[rank] = int(classes[idx])
    return PseudoClusterMask(labels, class_of_label)


def pseudo_clusters(mask, patch_size, k):
    """Full pipeline: purity test then top-k frequency relabeling."""
    return topk_relabel(patch_labels(mask, patch_size), k)


def cluster_accuracy(predicted, pseudo):
    """Fraction of patches whose predicted label matches the pseudo label."""
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = pseudo.labels if isinstance(pseudo, PseudoClusterMask) else np.asarray(pseudo)
    if predicted.shape != labels.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {labels.shape}")
    return float((predicted == labels).mean())
