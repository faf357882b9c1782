from types import SimpleNamespace

import numpy as np
import pytest

from clustvit.flops import (CostReport, FlopCounter, block_flops, block_macs,
                            break_even_tokens, dataset_cost, max_workers,
                            model_flops, throughput, token_histogram,
                            vanilla_flops)
from clustvit.model import ClustViT
from clustvit.vit import EncoderConfig


def tiny_config(**kw):
    base = dict(image_size=(16, 16), patch_size=4, embed_dim=8, num_layers=3,
                num_heads=2, num_classes=3, clusters=2, injection_point=2)
    base.update(kw)
    return EncoderConfig(**base)


class TestClosedForm:
    def test_single_token_hand_value(self):
        # n=1, d=2: 12*1*4 + 2*1*2 = 52 MACs = 104 FLOPs
        assert block_macs(1, 2) == 52
        assert block_flops(1, 2) == 104

    def test_quadratic_term_scales_by_four(self):
        d = 8
        # isolate the n^2 attention term by subtracting the linear part
        q = lambda m: block_macs(m, d) - 12 * m * d * d
        for n in (3, 10, 50):
            assert q(2 * n) == 4 * q(n)

    def test_head_count_is_cost_neutral(self):
        assert block_flops(7, 16, h=1) == block_flops(7, 16, h=4)

    def test_monotone_in_tokens(self):
        cfg = tiny_config()
        totals = [model_flops(cfg, t)[0] for t in range(1, cfg.num_patches + 2)]
        assert all(a < b for a, b in zip(totals, totals[1:]))

    def test_out_of_range_tokens(self):
        cfg = tiny_config()
        with pytest.raises(ValueError, match="tokens_after_ip"):
            model_flops(cfg, 0)
        with pytest.raises(ValueError, match="tokens_after_ip"):
            model_flops(cfg, cfg.num_patches + 2)

    def test_vanilla_equals_model_without_clusters(self):
        cfg = tiny_config(clusters=0)
        total, breakdown = model_flops(cfg, 1 + cfg.num_patches)
        assert total == vanilla_flops(cfg)
        assert breakdown["cluster_mlp"] == 0 and breakdown["regenerator"] == 0

    def test_full_length_merge_model_adds_only_mlp(self):
        # nothing merged: same encoder cost plus the scoring MLP overhead
        cfg = tiny_config(clusters=2)
        total, breakdown = model_flops(cfg, 1 + cfg.num_patches, k_active=0)
        assert total == vanilla_flops(cfg) + breakdown["cluster_mlp"]
        assert breakdown["regenerator"] == 0

    def test_suffix_vanishes_at_last_layer(self):
        cfg = tiny_config(injection_point=3)
        _, breakdown = model_flops(cfg, 5)
        assert breakdown["suffix"] == 0

    def test_break_even_boundary(self):
        cfg = tiny_config()
        t = break_even_tokens(cfg)
        assert t is not None
        base = vanilla_flops(cfg)
        assert model_flops(cfg, t, k_active=min(cfg.clusters, t - 1))[0] < base
        if t < cfg.num_patches:
            above = model_flops(cfg, t + 1, k_active=min(cfg.clusters, t))[0]
            assert above >= base

    def test_break_even_none_for_vanilla(self):
        assert break_even_tokens(tiny_config(clusters=0)) is None


class TestInstrumented:
    """The counted cost of a real forward pass must equal the closed-form
    model with exact integer arithmetic."""

    def test_vanilla_exact(self, rng):
        cfg = tiny_config(clusters=0)
        model = ClustViT(cfg, seed=0)
        with FlopCounter() as fc:
            model.forward(rng.random((16, 16, 3)))
        assert fc.total == vanilla_flops(cfg)

    @pytest.mark.parametrize("ip", [1, 2, 3])
    def test_merge_model_exact_per_section(self, rng, ip):
        cfg = tiny_config(injection_point=ip)
        model = ClustViT(cfg, seed=1)
        img = rng.random((16, 16, 3))
        with FlopCounter() as fc:
            result = model.forward(img)
        total, breakdown = model_flops(cfg, result.tokens_after_ip,
                                       k_active=result.k_active)
        assert fc.total == total
        for name, expect in breakdown.items():
            assert fc.sections.get(name, 0) == expect, name

    def test_forced_assignments_sweep(self, rng):
        cfg = tiny_config(clusters=3)
        model = ClustViT(cfg, seed=2)
        img = rng.random((16, 16, 3))
        for _ in range(20):
            forced = rng.integers(0, 4, size=cfg.num_patches)
            with FlopCounter() as fc:
                result = model.forward(img, forced_assignment=forced)
            total, _ = model_flops(cfg, result.tokens_after_ip,
                                   k_active=result.k_active)
            assert fc.total == total

    def test_counter_restores_previous_hook(self, rng):
        model = ClustViT(tiny_config(clusters=0), seed=0)
        img = rng.random((16, 16, 3))
        with FlopCounter() as outer:
            with FlopCounter() as inner:
                model.forward(img)
            model.forward(img)
        assert inner.total == vanilla_flops(model.config)
        assert outer.total == vanilla_flops(model.config)


class TestDatasetCost:
    def _samples(self, rng, n=4):
        return [SimpleNamespace(image=rng.random((16, 16, 3))) for _ in range(n)]

    def test_vanilla_has_zero_std(self, rng):
        model = ClustViT(tiny_config(clusters=0), seed=0)
        report = dataset_cost(model, self._samples(rng))
        assert report.std == 0.0
        assert report.mean == vanilla_flops(model.config)
        assert set(report.tokens_after_ip) == {1 + model.config.num_patches}

    def test_merge_model_report_consistency(self, rng):
        model = ClustViT(tiny_config(), seed=3)
        report = dataset_cost(model, self._samples(rng, 6))
        assert len(report.per_image_flops) == 6
        means = report.breakdown_means()
        np.testing.assert_allclose(sum(means.values()), report.mean)

    def test_empty_dataset(self, rng):
        with pytest.raises(ValueError, match="empty dataset"):
            dataset_cost(ClustViT(tiny_config(), seed=0), [])


class TestHistogramThroughput:
    def test_histogram_counts_partition(self):
        values = [10, 10, 11, 25, 17, 17, 17, 30]
        rows = token_histogram(values, bins=4)
        assert sum(r[2] for r in rows) == len(values)
        for lo, hi, _ in rows:
            assert lo <= hi
        # inclusive upper edges: every value falls in exactly one bin
        for v in values:
            assert sum(1 for lo, hi, _ in rows if lo <= v <= hi) == 1

    def test_histogram_single_value(self):
        rows = token_histogram([7, 7, 7])
        assert rows == [(7, 7, 3)]

    def test_throughput_smoke(self, rng):
        model = ClustViT(tiny_config(), seed=0)
        images = [rng.random((16, 16, 3))]
        rate = throughput(model, images, warmup=1, iters=3)
        assert rate > 0

    def test_throughput_requires_warmup(self, rng):
        with pytest.raises(ValueError, match="warmup"):
            throughput(ClustViT(tiny_config(), seed=0), [rng.random((16, 16, 3))],
                       warmup=0, iters=1)


def test_max_workers_env(monkeypatch):
    monkeypatch.delenv("CLUSTVIT_THREADS", raising=False)
    assert max_workers() == 1
    monkeypatch.setenv("CLUSTVIT_THREADS", "4")
    assert max_workers() == 4
    monkeypatch.setenv("CLUSTVIT_THREADS", "0")
    assert max_workers() == 1
    monkeypatch.setenv("CLUSTVIT_THREADS", "oops")
    assert max_workers(default=2) == 2
