"""Training and evaluation loops around the combined objective."""

import csv
import json
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from . import flops
from .data import load_entry, read_manifest
from .losses import accumulate, combined_loss, miou, new_confusion
from .model import ClustViT
from .optim import LrSchedule, sgd_step
from .pseudo import cluster_accuracy, pseudo_clusters
from .tensor import backward
from .vit import EncoderConfig


class NumericError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lam: float = 0.1
    base_lr: float = 0.001
    min_lr: float = 0.0001
    power: float = 0.9
    total_iters: int = 2000
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 8
    seed: int = 0
    data_root: str = "data"
    teacher_forcing: bool = False
    out_dir: str = "runs/run"
    log_every: int = 50
    checkpoint_every: int = 500

    def schedule(self):
        return LrSchedule(self.base_lr, self.min_lr, self.power, self.total_iters)

    def to_json(self):
        d = asdict(self)
        d["encoder"]["image_size"] = list(self.encoder.image_size)
        return json.dumps(d, indent=2)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        enc = dict(d.pop("encoder", {}))
        if "image_size" in enc:
            enc["image_size"] = tuple(enc["image_size"])
        return cls(encoder=EncoderConfig(**enc), **d)


METRIC_COLUMNS = ["iter", "seg_loss", "clust_loss", "total", "cluster_acc",
                  "miou", "tokens_after_ip"]


def _labels_for(entry, sample, labels, encoder):
    """Cached pseudo-cluster labels, recomputed from the mask when the
    cache was built for a different (k, patch_size) than the model's."""
    if encoder.clusters == 0:
        return labels
    m = re.search(r"\.pc_k(\d+)_p(\d+)\.txt$", entry.pc_path)
    if m and (int(m.group(1)), int(m.group(2))) == (encoder.clusters, encoder.patch_size):
        return labels
    return pseudo_clusters(sample.mask, encoder.patch_size, encoder.clusters).labels


def _train_step(model, batch, lam, teacher_forcing):
    """Forward/backward over one batch (gradients accumulate across the
    loop; the caller applies the optimizer step). Returns summary floats."""
    n = len(batch)
    seg_sum = clust_sum = total_sum = acc_sum = 0.0
    tokens = []
    conf = new_confusion(model.config.num_classes)
    for sample, labels in batch:
        forced = labels if (teacher_forcing and model.cluster is not None) else None
        result = model.forward(sample.image, forced_assignment=forced)
        total, report = combined_loss(
            result.seg_logits, sample.mask, result.cluster_logits, labels, lam)
        if not np.isfinite(report.total):
            raise NumericError("non-finite loss")
        backward(total * (1.0 / n))
        seg_sum += report.seg_loss
        clust_sum += report.clust_loss
        total_sum += report.total
        if result.assignment is not None:
            acc_sum += cluster_accuracy(result.assignment, labels)
        tokens.append(result.tokens_after_ip)
        pred = np.argmax(
            result.seg_logits.data.reshape(*model.config.image_size, -1), axis=2)
        accumulate(conf, sample.mask - 1, pred)
    batch_miou, _ = miou(conf)
    return {
        "seg_loss": seg_sum / n,
        "clust_loss": clust_sum / n,
        "total": total_sum / n,
        "cluster_acc": acc_sum / n if model.cluster is not None else 1.0,
        "miou": batch_miou,
        "tokens_after_ip": float(np.mean(tokens)),
    }


def train(cfg: RunConfig, entries=None, quiet=False):
    """Train a model from scratch; returns (model, metric rows)."""
    if entries is None:
        entries = [e for e in read_manifest(cfg.data_root) if e.split == "train"]
    if not entries:
        raise FileNotFoundError(f"no training entries under {cfg.data_root}")
    dataset = []
    for e in entries:
        sample, labels = load_entry(e)
        dataset.append((sample, _labels_for(e, sample, labels, cfg.encoder)))
    model = ClustViT(cfg.encoder, seed=cfg.seed)
    schedule = cfg.schedule()
    rng = np.random.default_rng(np.random.PCG64(cfg.seed + 17))
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.json"), "w") as f:
        f.write(cfg.to_json())
    rows = []
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_COLUMNS)
        for it in range(cfg.total_iters):
            idx = rng.integers(0, len(dataset), size=cfg.batch_size)
            batch = [dataset[i] for i in idx]
            try:
                stats = _train_step(model, batch, cfg.lam, cfg.teacher_forcing)
            except NumericError as exc:
                raise NumericError(
                    f"non-finite loss at iteration {it} (lr={schedule.lr(it):.6g})"
                ) from exc
            lr = sgd_step(model.params, schedule, it,
                          momentum=cfg.momentum, weight_decay=cfg.weight_decay)
            if it % cfg.log_every == 0 or it == cfg.total_iters - 1:
                row = [it] + [stats[c] for c in METRIC_COLUMNS[1:]]
                writer.writerow(row)
                rows.append(row)
                if not quiet:
                    print(f"iter {it:5d} lr {lr:.6f} total {stats['total']:.4f} "
                          f"miou {stats['miou']:.3f} "
                          f"clust_acc {stats['cluster_acc']:.3f} "
                          f"tokens {stats['tokens_after_ip']:.1f}")
            if cfg.checkpoint_every and it and it % cfg.checkpoint_every == 0:
                model.save(os.path.join(cfg.out_dir, f"checkpoint_{it:06d}.cvt"))
    model.save(os.path.join(cfg.out_dir, "checkpoint.cvt"))
    return model, rows


def evaluate(model, entries):
    """Per-image inference over a split: confusion/mIoU plus cost report."""
    if not entries:
        raise ValueError("no entries to evaluate")
    from .tensor import no_grad

    conf = new_confusion(model.config.num_classes)
    cost = flops.CostReport()
    samples = []
    accs = []
    for entry in entries:
        sample, labels = load_entry(entry)
        labels = _labels_for(entry, sample, labels, model.config)
        samples.append(sample)
        with no_grad():
            result = model.forward(sample.image)
        pred = np.argmax(
            result.seg_logits.data.reshape(*model.config.image_size, -1), axis=2)
        accumulate(conf, sample.mask - 1, pred)
        if model.cluster is not None:
            accs.append(cluster_accuracy(result.assignment, labels))
        total, breakdown = flops.model_flops(
            model.config, result.tokens_after_ip, k_active=result.k_active)
        cost.per_image_flops.append(total)
        cost.breakdowns.append(breakdown)
        cost.tokens_after_ip.append(result.tokens_after_ip)
    val_miou, per_class = miou(conf)
    return {
        "miou": val_miou,
        "per_class_iou": per_class,
        "confusion": conf,
        "cluster_acc": float(np.mean(accs)) if accs else None,
        "cost": cost,
        "samples": samples,
    }
