"""Command line front end: generate, train, evaluate.

Each command reads one YAML run file, writes its products into --out, and
drops a manifest-<command>.json recording the config snapshot, input and
output hashes, the effective seed, and wall-clock time.  Timestamps live
only in manifests; datasets, checkpoints, and CSVs stay byte-reproducible.

Exit codes: 0 success, 2 configuration error, 3 data error (missing or
corrupted dataset/checkpoint), 4 numerical abort during training.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone

import torch

from . import __version__
from .configio import ConfigError, RunConfig, load_config
from .dataset import (
    DatasetIOError,
    DegenerateSampleError,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .evaluation import (
    check_model_compat,
    evaluate,
    write_plot_csvs,
    write_results_csv,
    write_traces,
)
from .model import CheckpointError, build_model, load_backbone_npz, load_checkpoint
from .training import TrainingAborted, train, write_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, command, run_cfg: RunConfig, inputs, outputs, seed, t0):
    manifest = {
        "command": command,
        "package": {"name": "fluidport", "version": __version__},
        "config": {
            "scenario": asdict(run_cfg.scenario),
            "net": asdict(run_cfg.net),
            "train": asdict(run_cfg.train),
            "eval": asdict(run_cfg.eval),
        },
        "inputs": inputs,
        "outputs": {os.path.basename(p): _sha256_file(p) for p in sorted(outputs)},
        "seed": seed,
        "wall_seconds": round(time.monotonic() - t0, 3),
        "finished_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = os.path.join(out_dir, f"manifest-{command}.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_run(args) -> RunConfig:
    run_cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        run_cfg = RunConfig(
            scenario=replace(run_cfg.scenario, seed=args.seed),
            net=run_cfg.net,
            train=replace(run_cfg.train, seed=args.seed),
            eval=replace(run_cfg.eval, seed=args.seed),
        )
    return run_cfg


def cmd_generate(args) -> int:
    t0 = time.monotonic()
    run_cfg = _load_run(args)
    scenario = run_cfg.scenario
    ds = generate_dataset(scenario)
    sidecar_path = save_dataset(ds, args.out)
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    outputs = [sidecar_path] + [
        os.path.join(args.out, entry["file"]) for entry in sidecar["blobs"].values()
    ]
    _write_manifest(
        args.out,
        "generate",
        run_cfg,
        inputs={"config_path": str(args.config)},
        outputs=outputs,
        seed=scenario.seed,
        t0=t0,
    )
    counts = sidecar["counts"]
    print(
        f"dataset: {counts['samples']} windows "
        f"({counts['train']} train / {counts['test']} test)"
    )
    print(f"content hash: {sidecar['content_hash'][:16]}")
    print(f"wrote {sidecar_path}")
    return EXIT_OK


def _check_dataset_shape(ds, run_cfg: RunConfig):
    want = (
        run_cfg.scenario.history_len,
        run_cfg.scenario.grid_n,
        run_cfg.scenario.grid_m,
    )
    got = ds.history.shape[1:]
    horizon = ds.future.shape[1]
    if got != want or horizon != run_cfg.scenario.horizon:
        raise DatasetIOError(
            f"dataset windows are {got} with horizon {horizon}, but the run "
            f"config expects {want} with horizon {run_cfg.scenario.horizon}; "
            "was this dataset generated from a different scenario?"
        )


def cmd_train(args) -> int:
    t0 = time.monotonic()
    run_cfg = _load_run(args)
    ds, sidecar = load_dataset(args.data)
    _check_dataset_shape(ds, run_cfg)
    os.makedirs(args.out, exist_ok=True)

    train_cfg = run_cfg.train
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    model = build_model(run_cfg.net, seed=train_cfg.seed)
    if args.backbone:
        try:
            load_backbone_npz(model, args.backbone)
        except (OSError, KeyError, ValueError) as exc:
            raise CheckpointError(f"cannot load backbone weights: {exc}") from exc

    result = train(model, ds, train_cfg, out_dir=args.out)
    metrics_path = os.path.join(args.out, "metrics.csv")
    write_metrics_csv(metrics_path, result.metrics)
    outputs = [metrics_path, result.final_path]
    if os.path.exists(result.best_path):
        outputs.append(result.best_path)
    inputs = {
        "config_path": str(args.config),
        "dataset": str(args.data),
        "dataset_hash": sidecar["content_hash"],
    }
    if args.backbone:
        inputs["backbone"] = _sha256_file(args.backbone)
    _write_manifest(
        args.out, "train", run_cfg, inputs, outputs, train_cfg.seed, t0
    )
    last = result.metrics[-1]
    print(f"trained {train_cfg.epochs} epochs ({last[1]} steps)")
    print(f"final train NMSE: {last[3]:.3f} dB, best val: {result.best_val_db:.3f} dB")
    print(f"wrote {result.final_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    t0 = time.monotonic()
    run_cfg = _load_run(args)
    eval_cfg = run_cfg.eval
    if args.baselines_only:
        kept = tuple(b for b in eval_cfg.baselines if b != "port_llm")
        if not kept:
            raise ConfigError(
                "--baselines-only removed every baseline; add a model-free one"
            )
        eval_cfg = replace(eval_cfg, baselines=kept)

    model = None
    inputs = {"config_path": str(args.config)}
    if "port_llm" in eval_cfg.baselines:
        if not args.checkpoint:
            raise ConfigError(
                "the port_llm baseline needs --checkpoint "
                "(or pass --baselines-only)"
            )
        model, header, _ = load_checkpoint(args.checkpoint)
        try:
            check_model_compat(model, run_cfg.scenario)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        inputs["checkpoint"] = _sha256_file(args.checkpoint)
        inputs["checkpoint_epoch"] = header.get("extra", {}).get("epoch")

    os.makedirs(args.out, exist_ok=True)
    run = evaluate(run_cfg.scenario, eval_cfg, model)
    results_path = os.path.join(args.out, "results.csv")
    write_results_csv(results_path, run)
    outputs = [results_path]
    if args.plot_data:
        outputs.extend(write_plot_csvs(args.out, run))
    outputs.extend(write_traces(args.out, run))
    _write_manifest(args.out, "evaluate", run_cfg, inputs, outputs, eval_cfg.seed, t0)
    print(
        f"evaluated {len(eval_cfg.baselines)} baselines over "
        f"{len(eval_cfg.speeds_kmh)} speeds x {len(eval_cfg.bs_arrays)} arrays "
        f"x {len(eval_cfg.snr_db)} SNR points"
    )
    print(f"wrote {results_path} ({len(run.rows)} rows)")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluidport",
        description="Fluid-antenna port prediction pipeline",
    )
    parser.add_argument("--version", action="version", version=f"fluidport {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="synthesize a channel-table dataset")
    gen.add_argument("--config", required=True, help="YAML run file")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--seed", type=int, help="override every seed in the run file")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="fit the forecaster on a dataset")
    tr.add_argument("--config", required=True, help="YAML run file")
    tr.add_argument("--data", required=True, help="dataset directory or sidecar")
    tr.add_argument("--out", required=True, help="directory for checkpoints/metrics")
    tr.add_argument("--seed", type=int, help="override every seed in the run file")
    tr.add_argument("--epochs", type=int, help="override train.epochs")
    tr.add_argument("--backbone", help="optional .npz with pretrained backbone weights")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="run the baseline sweep")
    ev.add_argument("--config", required=True, help="YAML run file")
    ev.add_argument("--out", required=True, help="directory for result CSVs")
    ev.add_argument("--checkpoint", help="trained model for the port_llm baseline")
    ev.add_argument("--seed", type=int, help="override every seed in the run file")
    ev.add_argument(
        "--baselines-only",
        action="store_true",
        help="skip the model baseline; no checkpoint needed",
    )
    ev.add_argument(
        "--plot-data",
        action="store_true",
        help="also write nmse_vs_step.csv and se_vs_snr.csv",
    )
    ev.set_defaults(func=cmd_evaluate)
    return parser


def _apply_thread_limit():
    raw = os.environ.get("FLUIDPORT_THREADS")
    if not raw:
        return
    try:
        threads = int(raw)
        if threads < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"FLUIDPORT_THREADS must be a positive integer, got {raw!r}")
    torch.set_num_threads(threads)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_thread_limit()
        return args.func(args)
    except ConfigError as exc:
        print(f"fluidport: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetIOError, CheckpointError, FileNotFoundError) as exc:
        print(f"fluidport: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DegenerateSampleError as exc:
        print(f"fluidport: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as exc:
        print(f"fluidport: training aborted: {exc}", file=sys.stderr)
        if exc.checkpoint:
            print(f"fluidport: last good checkpoint: {exc.checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"fluidport: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
