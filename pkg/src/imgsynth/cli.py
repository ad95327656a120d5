"""Command-line front end for the synthesis modes."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import parse_config
from .exceptions import ConfigError, DivergenceError, LoadError
from .images import save_image
from .pipeline import SynthesisJob, SynthesisResult, job_manifest, synthesize, validate_job

_SUBCOMMAND_MODE = {
    "synth": "standard",
    "position": "position",
    "shape": "shape",
    "style": "style",
    "counterfactual": "counterfactual",
    "baseline-deepinversion": "deepinversion-baseline",
    "ablate": "standard",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imgsynth",
        description="Synthesize variations of a target image by classifier inversion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="job config file; flags override its values")
        p.add_argument("--target", help="target image path")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--job-id", help="output file prefix")
        p.add_argument("--samples", type=int, help="number of samples to synthesize")
        p.add_argument("--seed", type=int)
        p.add_argument("--iters-stage1", type=int)
        p.add_argument("--iters-stage2", type=int)
        p.add_argument("--size", type=int)
        p.add_argument("--class", dest="target_class", type=int,
                       help="override the target class index")
        p.add_argument("--arch", help="architecture id")
        p.add_argument("--weights-source", help="weights path or 'registry'")
        p.add_argument("--layers", help="comma list overriding the matching layer set")
        p.add_argument("--parallel", type=int, default=1,
                       help="run up to N samples concurrently")

    for name in _SUBCOMMAND_MODE:
        p = sub.add_parser(name)
        add_common(p)
        if name == "position":
            p.add_argument("--blob-center", help="row,col of the target blob")
            p.add_argument("--blob-sigma", type=float)
        if name == "shape":
            p.add_argument("--clipart", help="shape-source image path")
        if name == "style":
            p.add_argument("--style", help="style-source image path")
        if name == "counterfactual":
            p.add_argument("--query", help="query image path")
            p.add_argument("--mask-query", help="query-region mask (white = outside)")
            p.add_argument("--mask-cf", help="counterfactual-region mask")
            p.add_argument("--counterfactual-image",
                           help="counterfactual-class image (defaults to target)")

    pv = sub.add_parser("validate-config")
    pv.add_argument("--config", required=True)
    return parser


def _job_from_args(args) -> SynthesisJob:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config '{args.config}': {e}") from e
        job = parse_config(text)
    else:
        if not args.target:
            raise ConfigError("missing required flag --target (or --config)")
        job = SynthesisJob(target=args.target)

    updates = {"mode": _SUBCOMMAND_MODE[args.command]}
    if args.command == "ablate" and not args.layers:
        raise ConfigError("ablate requires --layers")

    flag_map = {
        "target": "target",
        "samples": "sample_count",
        "seed": "seed",
        "iters_stage1": "stage1_iterations",
        "iters_stage2": "stage2_iterations",
        "size": "size",
        "target_class": "target_class",
        "arch": "architecture",
        "weights_source": "weights_source",
        "blob_sigma": "blob_sigma",
        "clipart": "clipart",
        "style": "style",
        "query": "query",
        "mask_query": "mask_query",
        "mask_cf": "mask_cf",
        "counterfactual_image": "counterfactual",
    }
    for flag, field in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates[field] = value
    if getattr(args, "layers", None):
        updates["phi"] = tuple(p.strip() for p in args.layers.split(",") if p.strip())
    if getattr(args, "blob_center", None):
        parts = args.blob_center.split(",")
        if len(parts) != 2:
            raise ConfigError(f"bad value for key 'blob_center': {args.blob_center!r}")
        try:
            updates["blob_center"] = (int(parts[0]), int(parts[1]))
        except ValueError as e:
            raise ConfigError(f"bad value for key 'blob_center': {args.blob_center!r}") from e

    job = replace(job, **updates)
    validate_job(job)
    return job


def _default_job_id(job: SynthesisJob) -> str:
    target = job.target
    stem = Path(str(target)).stem if not hasattr(target, "shape") else "memory"
    return f"{job.mode}-{stem}-s{job.seed}"


def write_outputs(result: SynthesisResult, out_dir, job_id: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (image, trace) in enumerate(zip(result.images, result.traces)):
        img_path = out / f"{job_id}_{i}.png"
        save_image(image, img_path)
        written.append(img_path)
        trace_path = out / f"{job_id}_{i}_trace.csv"
        with trace_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "stage", "term", "value"])
            writer.writerows(trace)
        written.append(trace_path)
    manifest_path = out / f"{job_id}_manifest.json"
    manifest_path.write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    written.append(manifest_path)
    return written


def _run_samples(job: SynthesisJob, parallel: int) -> SynthesisResult:
    if parallel <= 1 or job.sample_count <= 1:
        return synthesize(job)
    # independent samples share no mutable state; merge per-sample runs
    single_jobs = [replace(job, sample_count=1, seed=job.seed + s)
                   for s in range(job.sample_count)]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        results = list(pool.map(synthesize, single_jobs))
    merged = results[0]
    merged.manifest["sample_count"] = job.sample_count
    merged.manifest["seed"] = job.seed
    for r in results[1:]:
        merged.images += r.images
        merged.traces += r.traces
        merged.attribution_maps += r.attribution_maps
    return merged


def run(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate-config":
            job = parse_config(Path(args.config).read_text())
            print(json.dumps(job_manifest(job), indent=2, sort_keys=True))
            return 0
        job = _job_from_args(args)
        result = _run_samples(job, args.parallel)
        job_id = args.job_id or _default_job_id(job)
        for path in write_outputs(result, args.out_dir, job_id):
            print(path)
        return 0
    except (ConfigError, LoadError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
