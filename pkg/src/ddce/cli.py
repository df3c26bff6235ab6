"""Command-line entry point.

Subcommands cover the full surface: synthetic data generation, outlier
injection, base-model training, single-model clustering, the full
ensemble, the K-means baseline, scoring, and the three sweep harnesses.
All randomness flows from one --seed; outputs land under --out and are
written atomically. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, corpus, embed, metrics, optics, pipeline
from .errors import DdceError
from .util import atomic_write_text, substream


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=False) + "\n"


def _load_config(args) -> pipeline.PipelineConfig:
    obj = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DdceError(f"{args.config}: invalid JSON: {exc}") from exc
    cfg = pipeline.config_from_dict(obj)
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    return cfg


def _write_manifest(args, cfg_seed: int, extra_inputs: list[str]) -> None:
    """Record what is about to run, before any computation."""
    manifest = {
        "tool_version": __version__,
        "command": args.command,
        "config_path": getattr(args, "config", None),
        "input_paths": [p for p in extra_inputs if p],
        "output_dir": args.out,
        "master_seed": cfg_seed,
    }
    atomic_write_text(os.path.join(args.out, "manifest.json"), _json_dumps(manifest))


def _load_labeled(args, cfg) -> corpus.LabeledDataset:
    cap = args.max_per_intent if args.max_per_intent > 0 else None
    rng = substream(cfg.master_seed, "cap") if cap else None
    return corpus.load_labeled_jsonl(args.labeled, max_per_intent=cap, rng=rng)


def _maybe_embeddings(args) -> embed.EmbeddingMatrix | None:
    path = getattr(args, "embeddings", None)
    return embed.load_precomputed(path) if path else None


def _cmd_synth(args) -> int:
    _write_manifest(args, args.seed, [])
    dataset, oracle = corpus.generate_synthetic(
        n_intents=args.intents,
        rows_per_intent=args.per_intent,
        dim=args.dim,
        blob_sigma=args.sigma,
        rng=substream(args.seed, "synth"),
        label_prefix=args.prefix,
    )
    corpus.save_jsonl(dataset, os.path.join(args.out, "labeled.jsonl"))
    embed.save_embeddings(oracle, os.path.join(args.out, "oracle.emb1"))
    print(f"wrote {dataset.N} rows across {dataset.O} intents to {args.out}")
    return 0


def _cmd_inject(args) -> int:
    _write_manifest(args, args.seed, [args.data, args.source])
    target = corpus.load_unlabeled_jsonl(args.data)
    source = corpus.load_unlabeled_jsonl(args.source)
    injected = corpus.inject_outliers(target, source, args.ratio, substream(args.seed, "inject"))
    corpus.save_jsonl(injected, os.path.join(args.out, "injected.jsonl"))
    print(f"injected {injected.M - target.M} outliers into {target.M} rows")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    _write_manifest(args, cfg.master_seed, [args.labeled, args.outlier_source, args.embeddings])
    d_l = _load_labeled(args, cfg)
    source = corpus.load_unlabeled_jsonl(args.outlier_source)
    artifacts = pipeline.train_base_models(d_l, source, cfg, embeddings=_maybe_embeddings(args))
    payload = {
        "tool_version": __version__,
        "config": pipeline.config_to_dict(cfg),
        "models": [pipeline.artifact_to_dict(a) for a in artifacts],
    }
    atomic_write_text(os.path.join(args.out, "artifacts.json"), _json_dumps(payload))
    recalls = [round(a.val_scores.score_c, 4) for a in artifacts]
    print(f"trained {len(artifacts)} base models; validation recalls {recalls}")
    return 0


def _cmd_cluster(args) -> int:
    _write_manifest(args, 0, [args.embeddings])
    matrix = embed.load_precomputed(args.embeddings)
    params = optics.OpticsParams(max_eps=args.max_eps, xi=args.xi, min_samples=args.min_samples)
    part = optics.cluster(matrix, params, args.s_min, args.metric)
    optics.save_partition_jsonl(part, os.path.join(args.out, "partition.jsonl"))
    n_out = int((np.asarray(part.labels) == -1).sum())
    print(f"{part.cluster_count()} clusters, {n_out} outliers over {part.n} samples")
    return 0


def _cmd_ensemble(args) -> int:
    cfg = _load_config(args)
    _write_manifest(args, cfg.master_seed, [args.labeled, args.unlabeled, args.outlier_source,
                                            args.embeddings])
    d_l = _load_labeled(args, cfg)
    d_ul = corpus.load_unlabeled_jsonl(args.unlabeled)
    source = corpus.load_unlabeled_jsonl(args.outlier_source)
    t0 = time.perf_counter()
    report = pipeline.run_ddce(d_l, d_ul, source, cfg, embeddings=_maybe_embeddings(args))
    partition_path = os.path.join(args.out, "partition.jsonl")
    optics.save_partition_jsonl(report.consensus_partition, partition_path)
    payload = pipeline.report_to_dict(report, cfg)
    payload["partition_path"] = "partition.jsonl"
    atomic_write_text(os.path.join(args.out, "report.json"), _json_dumps(payload))
    print(f"ensemble finished in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    if report.consensus_test_scores is not None:
        print(report.consensus_test_scores.to_json())
    else:
        print(f"{report.consensus_partition.cluster_count()} consensus clusters")
    return 0


def _cmd_baseline(args) -> int:
    cfg = _load_config(args)
    _write_manifest(args, cfg.master_seed, [args.labeled, args.unlabeled, args.embeddings])
    d_l = _load_labeled(args, cfg)
    d_ul = corpus.load_unlabeled_jsonl(args.unlabeled)
    part = pipeline.kmeans_baseline(d_l, d_ul, cfg, embeddings=_maybe_embeddings(args))
    optics.save_partition_jsonl(part, os.path.join(args.out, "partition.jsonl"))
    if pipeline.has_ground_truth(d_ul):
        scores = metrics.score(d_ul, part)
        atomic_write_text(os.path.join(args.out, "scores.json"), scores.to_json() + "\n")
        print(scores.to_json())
    else:
        print(f"{part.cluster_count()} clusters over {part.n} samples")
    return 0


def _cmd_evaluate(args) -> int:
    truth = corpus.load_unlabeled_jsonl(args.truth)
    pred = optics.load_partition_jsonl(args.pred)
    print(metrics.score(truth, pred).to_json())
    return 0


def _sweep_common(args):
    cfg = _load_config(args)
    _write_manifest(args, cfg.master_seed, [args.labeled, args.unlabeled, args.outlier_source])
    d_l = _load_labeled(args, cfg)
    d_ul = corpus.load_unlabeled_jsonl(args.unlabeled)
    source = corpus.load_unlabeled_jsonl(args.outlier_source)
    return cfg, d_l, d_ul, source


def _cmd_sweep_alpha(args) -> int:
    cfg, d_l, d_ul, source = _sweep_common(args)
    alphas = [float(v) for v in args.alphas.split(",")]
    _, csv_text = pipeline.sweep_alpha(d_l, d_ul, source, cfg, alphas, args.reps)
    pipeline.save_csv(csv_text, os.path.join(args.out, "alpha_sweep.csv"))
    print(csv_text, end="")
    return 0


def _cmd_sweep_outliers(args) -> int:
    cfg, d_l, d_ul, source = _sweep_common(args)
    ratios = [float(v) for v in args.ratios.split(",")]
    _, csv_text = pipeline.sweep_outlier_ratio(d_l, d_ul, source, cfg, ratios)
    pipeline.save_csv(csv_text, os.path.join(args.out, "outlier_sweep.csv"))
    print(csv_text, end="")
    return 0


def _cmd_sweep_size(args) -> int:
    cfg, d_l, d_ul, source = _sweep_common(args)
    o_values = [int(v) for v in args.o_values.split(",")]
    _, csv_text = pipeline.sweep_training_size(d_l, d_ul, source, cfg, o_values, args.reps)
    pipeline.save_csv(csv_text, os.path.join(args.out, "size_sweep.csv"))
    print(csv_text, end="")
    return 0


def _add_common(sub, *, config=True, seed=True, out=True, embeddings=False, labeled_cap=False):
    if config:
        sub.add_argument("--config", help="JSON config mirroring the pipeline settings")
    if seed:
        sub.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    if out:
        sub.add_argument("--out", required=True, help="output directory")
    if embeddings:
        sub.add_argument("--embeddings", help="EMB1 file of precomputed vectors "
                                              "(bypasses the built-in encoder)")
    if labeled_cap:
        sub.add_argument("--max-per-intent", type=int, default=50,
                         help="cap rows per intent at load time; 0 disables (default 50)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddce",
        description="Density-based deep clustering ensemble for intent induction",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--intents", type=int, required=True)
    p.add_argument("--per-intent", type=int, required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--prefix", default="intent")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = subs.add_parser("inject", help="inject outliers from a source dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inject, config=None)

    p = subs.add_parser("train", help="train the K base clustering models")
    p.add_argument("--labeled", required=True)
    p.add_argument("--outlier-source", required=True)
    _add_common(p, embeddings=True, labeled_cap=True)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("cluster", help="single-model density clustering of an EMB1 file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--max-eps", type=float, required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--min-samples", type=int, required=True)
    p.add_argument("--s-min", type=int, default=2)
    p.add_argument("--metric", choices=list(optics.METRICS), default="cosine")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = subs.add_parser("ensemble", help="full pipeline: train, cluster, consensus")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--outlier-source", required=True)
    _add_common(p, embeddings=True, labeled_cap=True)
    p.set_defaults(func=_cmd_ensemble)

    p = subs.add_parser("baseline-kmeans", help="centroid baseline with inflated cluster count")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    _add_common(p, embeddings=True, labeled_cap=True)
    p.set_defaults(func=_cmd_baseline)

    p = subs.add_parser("evaluate", help="score a partition against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = subs.add_parser("sweep-alpha", help="score vs split ratio for a single base model")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--outlier-source", required=True)
    p.add_argument("--alphas", required=True, help="comma-separated ratios")
    p.add_argument("--reps", type=int, default=3)
    _add_common(p, labeled_cap=True)
    p.set_defaults(func=_cmd_sweep_alpha)

    p = subs.add_parser("sweep-outliers", help="ensemble vs base scores across outlier ratios")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True, help="test set without injected outliers")
    p.add_argument("--outlier-source", required=True)
    p.add_argument("--ratios", required=True, help="comma-separated ratios")
    _add_common(p, labeled_cap=True)
    p.set_defaults(func=_cmd_sweep_outliers)

    p = subs.add_parser("sweep-size", help="relative ensemble improvement vs labeled intent count")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--outlier-source", required=True)
    p.add_argument("--o-values", required=True, help="comma-separated intent counts")
    p.add_argument("--reps", type=int, default=5)
    _add_common(p, labeled_cap=True)
    p.set_defaults(func=_cmd_sweep_size)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except DdceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
