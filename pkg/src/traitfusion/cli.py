"""Command-line surface: synthesis, encoding, training, evaluation, ablation.

All randomness flows from --seed; every subcommand is deterministic given its
inputs and that seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .behaviour import write_confidence_csv
from .config import ModelConfig
from .data import (
    gen_synthetic_dataset,
    load_keypoints,
    load_manifest,
    save_dataset,
    synth_spec_from_json,
)
from .errors import TraitFusionError
from .model import _config_from_json, load_checkpoint, save_checkpoint
from .reports import emit_reports
from .training import (
    ABLATION_CONFIGS,
    TrainConfig,
    ablate,
    mean_accuracy,
    predict_matrix,
    split_samples,
    targets_matrix,
    train,
)


def _read_json(path):
    return json.loads(Path(path).read_text())


def _train_config_from_json(doc: dict, seed_override=None) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    kwargs = {k: v for k, v in doc.items() if k in fields}
    if "disabled" in kwargs:
        kwargs["disabled"] = tuple(kwargs["disabled"])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return TrainConfig(**kwargs)


def _resolve_model_cfg(config_doc: dict, manifest_cfg) -> ModelConfig:
    if "model" in config_doc:
        return _config_from_json(config_doc["model"])
    if manifest_cfg is not None:
        return manifest_cfg
    return ModelConfig()


def cmd_gen_synth(args) -> int:
    doc = _read_json(args.spec)
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = synth_spec_from_json(doc)
    samples = gen_synthetic_dataset(spec)
    manifest_path = save_dataset(samples, args.out, model_cfg=spec.model)
    counts = {}
    for s in samples:
        counts[s.split] = counts.get(s.split, 0) + 1
    print(json.dumps({"manifest": str(manifest_path),
                      "videos": len(samples), "splits": counts}))
    return 0


def cmd_encode_behaviours(args) -> int:
    stream = load_keypoints(args.keypoints)
    write_confidence_csv(stream, args.out)
    print(json.dumps({"frames": len(stream), "out": str(args.out)}))
    return 0


def cmd_train(args) -> int:
    manifest, manifest_cfg = load_manifest(args.manifest)
    config_doc = _read_json(args.config) if args.config else {}
    cfg = _train_config_from_json(config_doc, args.seed)
    model_cfg = _resolve_model_cfg(config_doc, manifest_cfg)
    samples = manifest.load_samples()

    params, report = train(samples, cfg, model_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    effective_cfg = model_cfg.with_disabled(set(cfg.disabled)) if cfg.disabled \
        else model_cfg
    save_checkpoint(out / "checkpoint", params, effective_cfg)
    report.write_csv(out / "train_log.csv")
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    print(json.dumps(report.summary()))
    return 0


def cmd_eval(args) -> int:
    manifest, _ = load_manifest(args.manifest)
    params, model_cfg = load_checkpoint(args.checkpoint)
    samples = split_samples(manifest.load_samples())[args.split]
    if not samples:
        print(f"no samples in split {args.split!r}", file=sys.stderr)
        return 1
    preds = predict_matrix(samples, params, model_cfg)
    per_trait, mean = mean_accuracy(preds, targets_matrix(samples))
    print(json.dumps({
        "split": args.split,
        "count": len(samples),
        "per_trait_accuracy": {
            k: float(v) for k, v in zip(("O", "C", "E", "A", "N"), per_trait)
        },
        "mean_accuracy": mean,
    }))
    return 0


def cmd_ablate(args) -> int:
    manifest, manifest_cfg = load_manifest(args.manifest)
    config_doc = _read_json(args.config) if args.config else {}
    cfg = _train_config_from_json(config_doc, args.seed)
    model_cfg = _resolve_model_cfg(config_doc, manifest_cfg)
    samples = manifest.load_samples()

    if args.disable:
        wanted = [d.strip() for d in args.disable.split(",") if d.strip()]
        configs = [("full", ())] + [(f"no_{d}", (d,)) for d in wanted]
    else:
        configs = list(ABLATION_CONFIGS)

    if args.threads > 1:
        # configs own disjoint parameter sets and seeds, so they can run
        # concurrently; first_config_index keeps seeds identical to a
        # sequential run
        def run_one(i, c):
            return ablate(samples, cfg, model_cfg, configs=[c],
                          first_config_index=i)[0]

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            futures = [pool.submit(run_one, i, c) for i, c in enumerate(configs)]
            reports = [f.result() for f in futures]
    else:
        reports = ablate(samples, cfg, model_cfg, configs=configs)

    written = emit_reports(reports, args.out)
    print(json.dumps({
        "out": str(args.out),
        "configurations": {r.name: r.mean_accuracy for r in reports},
        "files": {k: str(v) for k, v in written.items()},
    }))
    return 0


def cmd_grad_check(args) -> int:
    from .verify import run_all

    results = run_all(seed=args.seed if args.seed is not None else 0)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        print(f"{status} {r.name:28s} max_rel_err={r.max_rel_error:.3e} "
              f"tol={r.tolerance:.0e} ({r.seconds:.2f}s)")
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traitfusion",
        description="Multimodal personality-trait regression harness")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the seed of the spec/config in use")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent ablation runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("encode-behaviours",
                       help="behaviour confidences for a keypoint stream")
    p.add_argument("--keypoints", required=True, help="keypoint JSONL file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_encode_behaviours)

    p = sub.add_parser("train", help="train on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="TrainConfig JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="per-trait and mean accuracy of a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare ablated configurations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--disable", default=None,
                   help="comma-separated inputs to ablate one at a time "
                        "(behaviour,transcript,metadata,lstm)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("grad-check",
                       help="run the finite-difference verification suite")
    p.set_defaults(fn=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except TraitFusionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
