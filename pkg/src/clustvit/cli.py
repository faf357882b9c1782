"""Command-line entry point.

Verbs: gen (synthetic dataset), train, eval, ablate (k/ip sweep), profile
(analytic cost model). All configuration lives in a JSON file; any field
can be overridden with --set key=value (dotted keys reach nested fields).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data as D
from . import flops
from .cluster import assignment_image
from .model import ClustViT
from .pseudo import pseudo_clusters
from .train import NumericError, RunConfig, evaluate, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(d, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = d
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(value)
    return d


def load_run_config(path, overrides):
    d = {}
    if path:
        with open(path) as f:
            d = json.load(f)
    _apply_overrides(d, overrides)
    return RunConfig.from_dict(d)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# -- verbs ---------------------------------------------------------------

def cmd_gen(args):
    spec = D.preset_spec(args.preset, seed=args.seed)
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise UsageError(f"output directory {args.out} is not empty (use --force)")
    os.makedirs(args.out, exist_ok=True)
    splits = {"train": args.count, "val": args.val_count, "test": args.test_count}
    D.write_dataset(args.out, spec, splits, args.patch_size, args.clusters)
    n = sum(v for v in splits.values() if v > 0)
    print(f"wrote {n} samples to {args.out}")


def cmd_train(args):
    cfg = load_run_config(args.config, args.set)
    model, rows = train(cfg, quiet=args.quiet)
    print(f"trained {cfg.total_iters} iters -> {cfg.out_dir}/checkpoint.cvt")
    return model


def _load_model(checkpoint, config_path, overrides):
    if config_path is None:
        candidate = os.path.join(os.path.dirname(checkpoint) or ".", "config.json")
        if not os.path.exists(candidate):
            raise UsageError(f"no --config given and {candidate} not found")
        config_path = candidate
    cfg = load_run_config(config_path, overrides)
    model = ClustViT(cfg.encoder, seed=cfg.seed)
    model.load(checkpoint)
    return model, cfg


def _write_cost_reports(out_dir, cost, sample_ids):
    _write_csv(os.path.join(out_dir, "cost.csv"),
               ["image_id", "tokens_after_ip", "flops"],
               list(zip(sample_ids, cost.tokens_after_ip, cost.per_image_flops)))
    means = cost.breakdown_means()
    _write_csv(os.path.join(out_dir, "cost_summary.csv"),
               ["mean", "std"] + list(means),
               [[cost.mean, cost.std] + list(means.values())])
    _write_csv(os.path.join(out_dir, "token_histogram.csv"),
               ["bin_low", "bin_high", "count"],
               flops.token_histogram(cost.tokens_after_ip))


def cmd_eval(args):
    model, cfg = _load_model(args.checkpoint, args.config, args.set)
    entries = [e for e in D.read_manifest(args.data) if e.split == args.split]
    if not entries:
        raise FileNotFoundError(f"no {args.split!r} entries under {args.data}")
    out_dir = args.out or os.path.dirname(args.checkpoint) or "."
    os.makedirs(out_dir, exist_ok=True)
    result = evaluate(model, entries)
    rate = flops.throughput(model, [s.image for s in result["samples"][:8]],
                            warmup=args.warmup, iters=args.iters)
    _write_csv(os.path.join(out_dir, "eval.csv"),
               ["split", "miou", "cluster_acc", "img_s", "flops_mean", "flops_std"],
               [[args.split, result["miou"], result["cluster_acc"], rate,
                 result["cost"].mean, result["cost"].std]])
    _write_cost_reports(out_dir, result["cost"], [e.id for e in entries])
    if args.viz:
        viz_dir = os.path.join(out_dir, "viz")
        os.makedirs(viz_dir, exist_ok=True)
        p = model.config.patch_size
        for entry, sample in zip(entries, result["samples"]):
            pred = model.predict_mask(sample.image) + 1
            D.write_pgm(os.path.join(viz_dir, f"{entry.id}.pred.pgm"), pred)
            pcm = pseudo_clusters(sample.mask, p, max(model.config.clusters, 1))
            D.write_ppm(os.path.join(viz_dir, f"{entry.id}.pseudo.ppm"),
                        assignment_image(pcm.labels, model.config.grid, p) / 255.0)
            if model.cluster is not None:
                from .tensor import no_grad
                with no_grad():
                    fwd = model.forward(sample.image)
                D.write_ppm(os.path.join(viz_dir, f"{entry.id}.clusters.ppm"),
                            assignment_image(fwd.assignment, model.config.grid, p) / 255.0)
    print(f"miou {result['miou']:.4f}  flops {result['cost'].mean / 1e9:.3f} "
          f"± {result['cost'].std / 1e9:.3f} GFLOPs  {rate:.2f} img/s")


def cmd_ablate(args):
    k_list = [int(v) for v in args.k_list.split(",")]
    ip_list = [int(v) for v in args.ip_list.split(",")]
    if not k_list or not ip_list:
        raise UsageError("k-list and ip-list must be nonempty")
    base = load_run_config(args.config, args.set)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for k in k_list:
        for ip in ip_list:
            cell_dir = os.path.join(args.out, f"k{k}_ip{ip}")
            d = json.loads(base.to_json())
            d["encoder"]["clusters"] = k
            d["encoder"]["injection_point"] = ip
            d["out_dir"] = cell_dir
            try:
                cfg = RunConfig.from_dict(d)
                model, _ = train(cfg, quiet=True)
                entries = [e for e in D.read_manifest(cfg.data_root)
                           if e.split == args.split]
                result = evaluate(model, entries)
                rate = flops.throughput(
                    model, [s.image for s in result["samples"][:8]],
                    warmup=args.warmup, iters=args.iters)
                rows.append([k, ip, result["miou"], rate,
                             result["cost"].mean, result["cost"].std, ""])
                print(f"k={k} ip={ip}: miou {result['miou']:.4f} "
                      f"flops {result['cost'].mean / 1e9:.3f} GFLOPs")
            except Exception as exc:  # record the failure, keep sweeping
                rows.append([k, ip, "", "", "", "", f"{type(exc).__name__}: {exc}"])
                print(f"k={k} ip={ip}: FAILED ({exc})", file=sys.stderr)
    _write_csv(os.path.join(args.out, "sweep.csv"),
               ["k", "ip", "miou", "img_s", "flops_mean", "flops_std", "error"],
               rows)


def cmd_profile(args):
    cfg = load_run_config(args.config, args.set)
    enc = cfg.encoder
    base = flops.vanilla_flops(enc)
    rows = []
    for t in range(1, 2 + enc.num_patches):
        total, _ = flops.model_flops(enc, t)
        rows.append([t, total, base])
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "profile.csv"),
               ["tokens_after_ip", "flops", "vanilla_flops"], rows)
    be = flops.break_even_tokens(enc)
    print(f"vanilla: {base / 1e9:.4f} GFLOPs; "
          f"break-even at <= {be} tokens after the injection point"
          if be is not None else
          f"vanilla: {base / 1e9:.4f} GFLOPs; merging never pays at this scale")


def build_parser():
    parser = _Parser(prog="clustvit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--preset", default="sparse", choices=sorted(D.DATA_PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--val-count", type=int, default=16)
    p.add_argument("--test-count", type=int, default=16)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--viz", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="k/ip sweep: retrain and evaluate each cell")
    p.add_argument("--config")
    p.add_argument("--k-list", required=True)
    p.add_argument("--ip-list", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("profile", help="analytic cost model for a config")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
