"""Combined training objective and segmentation metrics.

Total loss = pixel cross-entropy + lambda * patch-level clustering
cross-entropy. Metrics: confusion-matrix accumulation and mean IoU.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .pseudo import PseudoClusterMask


@dataclass
class LossReport:
    seg_loss: float
    clust_loss: float
    total: float
    lam: float


def combined_loss(seg_logits, gt_mask, cluster_logits, pseudo, lam):
    """Differentiable total loss plus a float report.

    seg_logits: (H*W) x C tensor in row-major pixel order.
    gt_mask: H x W integer class ids starting at 1.
    cluster_logits: N x (k+1) tensor or None (vanilla mode).
    pseudo: PseudoClusterMask (or raw label array) or None.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    gt_mask = np.asarray(gt_mask)
    targets = gt_mask.ravel().astype(np.int64) - 1
    seg = T.cross_entropy(seg_logits, targets)
    if cluster_logits is None or pseudo is None:
        return seg, LossReport(seg.item(), 0.0, seg.item(), lam)
    labels = pseudo.labels if isinstance(pseudo, PseudoClusterMask) else np.asarray(pseudo)
    clust = T.cross_entropy(cluster_logits, labels.astype(np.int64))
    if lam == 0.0:
        total = seg
    else:
        total = seg + T.mul(clust, lam)
    return total, LossReport(seg.item(), clust.item(), total.item(), lam)


# -- metrics -------------------------------------------------------------

def new_confusion(num_classes):
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate(conf, gt, pred):
    """Add one count per pixel; rows are ground truth, columns prediction.
    Class values must already be contiguous indices in [0, C)."""
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    c = conf.shape[0]
    bad = (gt < 0) | (gt >= c) | (pred < 0) | (pred >= c)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"class id out of range at pixel {i}: gt={gt[i]}, pred={pred[i]}, C={c}")
    np.add.at(conf, (gt, pred), 1)
    return conf


def miou(conf):
    """Mean IoU over classes present in ground truth or prediction.

    Classes absent from both are excluded from the mean (avoids 0/0).
    Returns (miou, per-class IoU array with NaN for excluded classes).
    """
    conf = np.asarray(conf)
    if conf.size == 0 or conf.sum() == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = tp + fp + fn
    ious = np.full(conf.shape[0], np.nan)
    present = denom > 0
    ious[present] = tp[present] / denom[present]
    return float(np.nanmean(ious)), ious
