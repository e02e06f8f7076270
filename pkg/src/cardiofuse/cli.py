"""Command-line surface.

Every command prints exactly one JSON document to stdout,
``{"manifest": ..., "result": ...}``, and sends log lines to stderr.  The
manifest echoes the fully resolved configuration, so a run can be repeated
without the original config file.  Failures print
``{"error": {"type": ..., "message": ...}}`` and exit nonzero.

``CARDIOFUSE_THREADS`` (optional) caps the per-seed process fan-out of
``reproduce-ordering``; the default of 1 runs everything in-process.
Artifact files are bit-identical either way.
"""

from __future__ import annotations

import argparse
import logging
import os
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Optional

from . import __version__
from .configfile import (
    load_config_file,
    resolve_bundle_config,
    resolve_generator_config,
    resolve_train_config,
    resolved_echo,
    stage_order,
)
from .errors import CardiofuseError
from .evaluation import evaluate, explain, to_json
from .gradcheck import run_all as run_gradcheck
from .models import init_bundle
from .pipeline import (
    REFERENCE_FULL_SCALE,
    bundle_from_checkpoint,
    load_checkpoint,
    run_baseline,
    run_stage1_pretrain,
    run_stage2_classification,
    run_stage3_reconstruction,
)
from .synthdata import generate_dataset, load_dataset, save_dataset

log = logging.getLogger("cardiofuse")


def version_string() -> str:
    """Package version, extended git-describe style when a repo is at hand."""
    base = f"cardiofuse-{__version__}"
    try:
        proc = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True,
            text=True,
            timeout=5,
        )
        if proc.returncode == 0 and proc.stdout.strip():
            return f"{base}+g{proc.stdout.strip()}"
    except OSError:
        pass
    return base


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # JSON-friendly instead of argparse's usage dump
        raise CardiofuseError(f"argument error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="cardiofuse")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="stage 1: joint-embedding pre-training")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_pretrain)

    p = sub.add_parser("finetune", help="stages 2-3: supervised fine-tuning")
    p.add_argument("--stage", choices=("cls", "recon"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True, help="checkpoint to start from")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_finetune)

    p = sub.add_parser("baseline", help="comparison models")
    p.add_argument("--kind", choices=("signal-only", "late-fusion"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("explain", help="paired diagnosis/lab prediction for one record")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--top-k", type=int, default=3)
    p.set_defaults(handler=_cmd_explain)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=20)
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser(
        "reproduce-ordering",
        help="run signal-only, JE+reconstruction and late-fusion end to end",
    )
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--workdir", default=None)
    p.set_defaults(handler=_cmd_reproduce_ordering)

    return parser


# -- handlers (each returns result dict + manifest info dict) ----------------


def _info(entries, seed, inputs, outputs, stage, overrides: Optional[dict] = None) -> dict:
    echo = resolved_echo(entries)
    if overrides:
        echo.update(overrides)
    return {
        "resolved_config": echo,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "stage": stage,
    }


def _cmd_gen_data(args):
    entries = load_config_file(args.config)
    cfg = resolve_generator_config(entries)
    log.info("generating dataset (seed %d)", cfg.seed)
    dataset = generate_dataset(cfg)
    save_dataset(args.out, dataset)
    result = {
        "path": str(args.out),
        "n_train": cfg.n_train,
        "n_val": cfg.n_val,
        "n_test": cfg.n_test,
    }
    return result, _info(entries, cfg.seed, [], [args.out], None)


def _stage_result_doc(result) -> dict:
    return {
        "checkpoint": result.checkpoint_path,
        "train_losses": result.train_losses,
        "val_metrics": result.val_metrics,
        "best_epoch": result.best_epoch,
        **({"extra": result.extra} if result.extra else {}),
    }


def _cmd_pretrain(args):
    entries = load_config_file(args.config)
    dataset = load_dataset(args.data)
    bundle_cfg = resolve_bundle_config(entries, dataset.config)
    cfg = resolve_train_config(entries, "pretrain_je", args.seed)
    bundle = init_bundle(bundle_cfg, cfg.seed)
    log.info("stage 1 pre-training (seed %d, %d epochs)", cfg.seed, cfg.epochs)
    result = run_stage1_pretrain(dataset, bundle, cfg, out_path=args.out)
    info = _info(entries, cfg.seed, [args.data], [args.out], cfg.stage,
                 {"train.seed": cfg.seed})
    return _stage_result_doc(result), info


def _cmd_finetune(args):
    entries = load_config_file(args.config)
    dataset = load_dataset(args.data)
    loaded = load_checkpoint(args.init)
    bundle = bundle_from_checkpoint(loaded)
    stage = "finetune_cls" if args.stage == "cls" else "finetune_recon"
    cfg = resolve_train_config(entries, stage, args.seed)
    trained_head = "diagnosis_head" if args.stage == "cls" else "lab_head"
    carry = tuple(
        n for n in loaded.meta["nets"] if n not in ("signal_encoder", trained_head)
    )
    log.info("%s fine-tuning (seed %d, %d epochs)", args.stage, cfg.seed, cfg.epochs)
    if stage == "finetune_cls":
        result = run_stage2_classification(
            dataset, bundle, cfg, out_path=args.out, carry_nets=carry
        )
    else:
        result = run_stage3_reconstruction(
            dataset, bundle, cfg, out_path=args.out, carry_nets=carry
        )
    info = _info(entries, cfg.seed, [args.data, args.init], [args.out], cfg.stage,
                 {"train.seed": cfg.seed})
    return _stage_result_doc(result), info


def _cmd_baseline(args):
    entries = load_config_file(args.config)
    dataset = load_dataset(args.data)
    stage = (
        "baseline_signal_only" if args.kind == "signal-only" else "baseline_late_fusion"
    )
    cfg = resolve_train_config(entries, stage, args.seed)
    log.info("baseline %s (seed %d, %d epochs)", args.kind, cfg.seed, cfg.epochs)
    result = run_baseline(dataset, cfg, out_path=args.out)
    info = _info(entries, cfg.seed, [args.data], [args.out], cfg.stage,
                 {"train.seed": cfg.seed})
    return _stage_result_doc(result), info


def _cmd_eval(args):
    dataset = load_dataset(args.data)
    report = evaluate(args.ckpt, dataset, args.split)
    doc = report.to_dict()
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(to_json(doc))
        fh.write("\n")
    return doc, _info({}, None, [args.ckpt, args.data], [args.out], None)


def _cmd_explain(args):
    dataset = load_dataset(args.data)
    encounters = dataset.splits[args.split]
    if not 0 <= args.index < len(encounters):
        raise CardiofuseError(
            f"index {args.index} out of range for split {args.split!r} "
            f"({len(encounters)} records)"
        )
    entry = explain(args.ckpt, encounters[args.index], args.top_k)
    entry = {"split": args.split, "index": args.index, **entry}
    return entry, _info({}, None, [args.ckpt, args.data], [], None)


def _cmd_gradcheck(args):
    entries = load_config_file(args.config)
    bundle_cfg = resolve_bundle_config(entries, resolve_generator_config(entries))
    result = run_gradcheck(seed=args.seed, probes=args.probes, bundle_cfg=bundle_cfg)
    info = _info(entries, args.seed, [], [], None)
    info["exit_code"] = 0 if result["passed"] else 3
    return result, info


def _ordering_seed_job(payload: dict) -> dict:
    """One seed's three tracks; module-level so process pools can import it."""
    dataset = load_dataset(payload["data"])
    entries = payload["entries"]
    seed = payload["seed"]
    workdir = Path(payload["workdir"])
    order = payload["order"]
    bundle_cfg = resolve_bundle_config(entries, dataset.config)

    so_path = workdir / f"seed{seed}_signal_only.ckpt"
    run_baseline(dataset, resolve_train_config(entries, "baseline_signal_only", seed), so_path)
    so = evaluate(load_checkpoint(so_path), dataset, "test")

    stage1_path = workdir / f"seed{seed}_stage1.ckpt"
    bundle = init_bundle(bundle_cfg, seed)
    run_stage1_pretrain(
        dataset, bundle, resolve_train_config(entries, "pretrain_je", seed), stage1_path
    )
    current = stage1_path
    stage_sequence = ("cls", "recon") if order == "cls_first" else ("recon", "cls")
    for short in stage_sequence:
        loaded = load_checkpoint(current)
        bundle = bundle_from_checkpoint(loaded)
        trained_head = "diagnosis_head" if short == "cls" else "lab_head"
        carry = tuple(
            n for n in loaded.meta["nets"] if n not in ("signal_encoder", trained_head)
        )
        out = workdir / f"seed{seed}_stage_{short}.ckpt"
        if short == "cls":
            run_stage2_classification(
                dataset,
                bundle,
                resolve_train_config(entries, "finetune_cls", seed),
                out,
                carry_nets=carry,
            )
        else:
            run_stage3_reconstruction(
                dataset,
                bundle,
                resolve_train_config(entries, "finetune_recon", seed),
                out,
                carry_nets=carry,
            )
        current = out
    je = evaluate(load_checkpoint(current), dataset, "test")

    lf_path = workdir / f"seed{seed}_late_fusion.ckpt"
    run_baseline(dataset, resolve_train_config(entries, "baseline_late_fusion", seed), lf_path)
    lf = evaluate(load_checkpoint(lf_path), dataset, "test")

    return {
        "seed": seed,
        "signal_only_diagnoses": so.diagnoses.macro_auroc,
        "je_recon_diagnoses": je.diagnoses.macro_auroc,
        "je_recon_labs": je.labs.macro_auroc,
        "late_fusion_diagnoses": lf.diagnoses.macro_auroc,
    }


def _thread_cap() -> int:
    raw = os.environ.get("CARDIOFUSE_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise CardiofuseError(f"CARDIOFUSE_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise CardiofuseError(f"CARDIOFUSE_THREADS must be >= 1, got {cap}")
    return cap


def reproduce_ordering_table(entries: Dict[str, str], n_seeds: int, workdir: Path) -> dict:
    gen_cfg = resolve_generator_config(entries)
    dataset = generate_dataset(gen_cfg)
    data_path = workdir / "dataset.cmds"
    save_dataset(data_path, dataset)
    order = stage_order(entries)
    seeds = list(range(1, n_seeds + 1))
    payloads = [
        {
            "data": str(data_path),
            "entries": entries,
            "seed": seed,
            "workdir": str(workdir),
            "order": order,
        }
        for seed in seeds
    ]
    cap = _thread_cap()
    if cap > 1:
        with ProcessPoolExecutor(max_workers=min(cap, len(payloads))) as pool:
            rows = list(pool.map(_ordering_seed_job, payloads))
    else:
        rows = []
        for payload in payloads:
            log.info("ordering run, seed %d of %d", payload["seed"], n_seeds)
            rows.append(_ordering_seed_job(payload))

    def mean(key: str) -> float:
        return sum(r[key] for r in rows) / len(rows)

    means = {
        key: mean(key)
        for key in (
            "signal_only_diagnoses",
            "je_recon_diagnoses",
            "je_recon_labs",
            "late_fusion_diagnoses",
        )
    }
    je_gain = means["je_recon_diagnoses"] - means["signal_only_diagnoses"]
    lf_margin = means["late_fusion_diagnoses"] - means["je_recon_diagnoses"]
    return {
        "seeds": seeds,
        "stage_order": order,
        "per_seed": rows,
        "mean": means,
        "ordering": {
            "je_minus_signal_only": je_gain,
            "late_fusion_minus_je": lf_margin,
            "je_above_signal_only": bool(je_gain >= 0.01),
            "je_within_late_fusion_margin": bool(
                means["je_recon_diagnoses"] <= means["late_fusion_diagnoses"] + 0.02
            ),
            "satisfied": bool(
                je_gain >= 0.01
                and means["je_recon_diagnoses"]
                <= means["late_fusion_diagnoses"] + 0.02
            ),
        },
        "reference_full_scale": {
            **REFERENCE_FULL_SCALE,
            "note": (
                "Macro AUROCs reported by the original full-scale study on "
                "credentialed clinical data with a state-space backbone. They are "
                "context only and are not reproducible at this synthetic desk "
                "scale; the claim checked here is the ordering between models."
            ),
        },
    }


def _cmd_reproduce_ordering(args):
    entries = load_config_file(args.config)
    if args.seeds < 1:
        raise CardiofuseError(f"--seeds must be >= 1, got {args.seeds}")
    if args.workdir is not None:
        workdir = Path(args.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        table = reproduce_ordering_table(entries, args.seeds, workdir)
    else:
        with tempfile.TemporaryDirectory(prefix="cardiofuse-ordering-") as tmp:
            table = reproduce_ordering_table(entries, args.seeds, Path(tmp))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(to_json(table))
        fh.write("\n")
    gen_seed = resolve_generator_config(entries).seed
    return table, _info(entries, gen_seed, [], [args.out], None)


# -- entry point -------------------------------------------------------------


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = _build_parser()
    start = time.time()
    try:
        args = parser.parse_args(argv)
        result, info = args.handler(args)
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    except CardiofuseError as exc:
        print(to_json({"error": {"type": type(exc).__name__, "message": str(exc)}}))
        return 2 if "argument error" in str(exc) else 1
    except OSError as exc:
        print(to_json({"error": {"type": type(exc).__name__, "message": str(exc)}}))
        return 1
    manifest = {
        "command": args.command,
        "config_path": getattr(args, "config", None),
        "resolved_config": info["resolved_config"],
        "seed": info["seed"],
        "inputs": info["inputs"],
        "outputs": info["outputs"],
        "stage": info["stage"],
        "version": version_string(),
        "duration_seconds": time.time() - start,
    }
    print(to_json({"manifest": manifest, "result": result}))
    for out in info["outputs"]:
        manifest_path = Path(str(out) + ".manifest.json")
        with open(manifest_path, "w", encoding="utf-8") as fh:
            fh.write(to_json(manifest))
            fh.write("\n")
    return info.get("exit_code", 0)


if __name__ == "__main__":
    sys.exit(main())
