"""Benchmark command line: prepare-data | train | eval | gradcheck | report.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure. Every
command is deterministic given identical inputs and --seed (wall-time
fields aside). FSPC_OUT_DIR sets the default output root.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from .backbones import BackboneConfig
from .data import (SYNTHETIC_CLASS_SPECS, build_synthetic_pool, load_examples,
                   load_manifest, make_manifest, save_manifest, validate_split,
                   write_examples)
from .errors import DataError, NumericError
from .training import (PROFILES, TrainConfig, OptimizerConfig, cross_validate,
                       evaluate, fit, grad_check, tiny_gradcheck_setup, build_model)
from .episodes import episode_seed, sample_episode
from .checkpoint import load_checkpoint

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 2, 3, 4


class UsageError(Exception):
    pass


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("FSPC_OUT_DIR", "runs"))


# ---------------------------------------------------------------------------
# Config resolution: profile defaults < config file < flags < --set overrides


def _flatten(d, prefix=""):
    flat = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def _coerce(key, raw, current):
    if isinstance(current, bool):
        if str(raw).lower() in ("1", "true", "on", "yes"):
            return True
        if str(raw).lower() in ("0", "false", "off", "no"):
            return False
        raise UsageError(f"override {key}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError as err:
            raise UsageError(f"override {key}: expected an int, got {raw!r}") from err
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError as err:
            raise UsageError(f"override {key}: expected a float, got {raw!r}") from err
    if isinstance(current, (list, tuple)):
        try:
            val = json.loads(raw)
        except json.JSONDecodeError as err:
            raise UsageError(f"override {key}: expected a JSON list, got {raw!r}") from err
        if not isinstance(val, list):
            raise UsageError(f"override {key}: expected a JSON list, got {raw!r}")
        return val
    return str(raw)


def resolve_train_config(args) -> TrainConfig:
    if args.profile not in PROFILES:
        raise UsageError(f"unknown profile {args.profile!r}")
    flat = _flatten(PROFILES[args.profile]().to_dict())

    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise DataError(f"config file {path} is not valid JSON: {err}") from err
        file_cfg.pop("schema_version", None)
        for key, val in _flatten(file_cfg).items():
            if key not in flat:
                raise UsageError(f"unknown config key {key!r} in {path}")
            flat[key] = _coerce(key, val, flat[key]) if isinstance(val, str) else val

    flag_map = {
        "n_way": args.way, "k_shot": args.shot, "q_query": args.query,
        "seed": args.seed, "backbone.kind": args.backbone,
        "k1": args.k1, "k2": args.k2,
    }
    if args.sci is not None:
        flag_map["sci"] = args.sci == "on"
    if args.cif is not None:
        flag_map["cif"] = args.cif == "on"
    for key, val in flag_map.items():
        if val is not None:
            flat[key] = val

    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in flat:
            raise UsageError(f"unknown config key {key!r}")
        flat[key] = _coerce(key, raw, flat[key])

    nested = {}
    for key, val in flat.items():
        parts = key.split(".")
        node = nested
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    nested["backbone"] = BackboneConfig(**nested["backbone"])
    nested["optimizer"] = OptimizerConfig(**nested["optimizer"])
    try:
        return TrainConfig(**nested)
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid configuration: {err}") from err


# ---------------------------------------------------------------------------
# prepare-data


def cmd_prepare_data(args) -> int:
    m = re.fullmatch(r"(\d+)x(\d+)", args.synthetic or "")
    if not m:
        raise UsageError("--synthetic expects CLASSESxEXAMPLES, e.g. 8x40")
    n_classes, per_class = int(m.group(1)), int(m.group(2))
    if not 1 <= n_classes <= len(SYNTHETIC_CLASS_SPECS):
        raise UsageError(f"--synthetic supports 1..{len(SYNTHETIC_CLASS_SPECS)} classes")
    if per_class < 1:
        raise UsageError("--synthetic needs at least one example per class")
    if args.points < 8:
        raise UsageError("--points must be >= 8")
    if not 1 <= args.novel < n_classes:
        raise UsageError("--novel must leave at least one base class")
    out = _out_root(args)
    pool = build_synthetic_pool(n_classes, per_class, args.points, seed=args.seed)
    write_examples(out, pool)
    base = {c: per_class for c in range(n_classes - args.novel)}
    novel = {c: per_class for c in range(n_classes - args.novel, n_classes)}
    manifest = make_manifest(base, novel)
    save_manifest(manifest, out / "manifest.json")
    report = validate_split(manifest, pool)
    print(f"wrote {len(pool)} examples to {out}")
    print(f"manifest: {report.n_base_classes} base / {report.n_novel_classes} novel "
          f"classes, {report.base_examples}+{report.novel_examples} examples")
    return 0


# ---------------------------------------------------------------------------
# train / eval


def _load_pools(args):
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise UsageError(f"dataset path does not exist: {data_dir}")
    manifest_path = Path(args.manifest) if args.manifest else data_dir / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)
    validate_split(manifest)
    base = load_examples(data_dir, manifest, "base")
    novel = load_examples(data_dir, manifest, "novel")
    return base, novel, manifest


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    base, novel, _ = _load_pools(args)
    run_dir = _run_dir(args, cfg)
    folds = args.folds if args.folds is not None else 1
    if folds > 1:
        reports, aggregate = cross_validate(cfg, base, novel, out_dir=run_dir)
        for f, rep in enumerate(reports):
            print(f"fold {f}: acc {rep.mean_accuracy:.4f} "
                  f"+/- {rep.ci95_halfwidth:.4f}")
        print(f"aggregate over {len(reports)} folds: {aggregate['mean_of_folds']:.4f}")
    else:
        report = fit(cfg, base, novel, out_dir=run_dir)
        print(f"test accuracy {report.mean_accuracy:.4f} "
              f"+/- {report.ci95_halfwidth:.4f} over "
              f"{len(report.per_episode_accuracies)} episodes")
    print(f"run directory: {run_dir}")
    return 0


def _run_dir(args, cfg: TrainConfig) -> Path:
    root = _out_root(args)
    if args.out:
        return root
    slug = (f"{cfg.profile}-{cfg.backbone.kind}-{cfg.n_way}w{cfg.k_shot}s"
            f"{cfg.q_query}q-sci{int(cfg.sci)}-cif{int(cfg.cif)}-seed{cfg.seed}")
    return root / slug


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    ckpt = run_dir / "checkpoints" / "best.bin"
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    tensors, cfg_dict = load_checkpoint(ckpt)
    cfg_dict.pop("schema_version", None)
    cfg_dict["backbone"] = BackboneConfig(**cfg_dict["backbone"])
    cfg_dict["optimizer"] = OptimizerConfig(**cfg_dict["optimizer"])
    cfg = TrainConfig(**cfg_dict)
    if args.seed is not None:
        cfg.seed = args.seed
    _, novel, _ = _load_pools(args)
    model = build_model(cfg, with_cia=cfg.sci or cfg.cif)
    model.load_state(tensors)
    episodes = [sample_episode(novel, cfg.episode_spec, episode_seed(cfg.seed, (2, i)))
                for i in range(args.episodes or cfg.test_episodes)]
    report = evaluate(model, episodes, cfg.n_points,
                      seed=episode_seed(cfg.seed, (2,)),
                      config={"schema_version": 1, **cfg.to_dict()})
    print(f"accuracy {report.mean_accuracy:.4f} +/- {report.ci95_halfwidth:.4f} "
          f"over {len(report.per_episode_accuracies)} episodes")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        print(f"wrote {out / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    kinds = ("pointnet", "dgcnn") if args.backbone in (None, "both") else (args.backbone,)
    worst = 0.0
    for kind in kinds:
        model, episode, cfg = tiny_gradcheck_setup(kind)
        err = grad_check(model, episode, cfg.n_points, step=args.step)
        worst = max(worst, err)
        status = "PASS" if err < args.tolerance else "FAIL"
        print(f"{kind}+cia: max relative error {err:.3e}  [{status}]")
    if worst >= args.tolerance:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {args.tolerance}")
    return 0


# ---------------------------------------------------------------------------
# report


_ABLATION_ORDER = {(False, False): 0, (True, False): 1, (False, True): 2, (True, True): 3}
_ABLATION_NAME = {0: "base", 1: "+SCI", 2: "+CIF", 3: "+CIA"}


def _read_run(run_dir: Path):
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise DataError(f"missing report.json under {run_dir}")
    try:
        report = json.loads(report_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataError(f"corrupt report.json under {run_dir}: {err}") from err
    cfg = report.get("config", {})
    key = _ABLATION_ORDER.get((bool(cfg.get("sci")), bool(cfg.get("cif"))), 4)
    return {
        "name": run_dir.name,
        "setting": _ABLATION_NAME.get(key, "other"),
        "order": key,
        "mean": report["mean_accuracy"],
        "ci95": report["ci95_halfwidth"],
        "dir": run_dir,
    }


def _plot_history(run_dir: Path, out_png: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    hist = run_dir / "history.csv"
    if not hist.exists():
        return False
    epochs, loss, tacc, vacc = [], [], [], []
    with open(hist, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            epochs.append(int(row["epoch"]))
            loss.append(float(row["train_loss"]))
            tacc.append(float(row["train_acc"]))
            vacc.append(float(row["val_acc"]) if row["val_acc"] else np.nan)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, loss, marker="o")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.plot(epochs, tacc, marker="o", label="train")
    if not all(np.isnan(v) for v in vacc):
        ax2.plot(epochs, vacc, marker="s", label="val")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.legend()
    fig.suptitle(run_dir.name)
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return True


def cmd_report(args) -> int:
    runs = [Path(r) for r in args.runs]
    if not runs:
        raise UsageError("report needs at least one run directory")
    rows = sorted((_read_run(r) for r in runs), key=lambda r: (r["order"], r["name"]))
    out = _out_root(args)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "run", "mean_accuracy", "ci95"])
        for r in rows:
            writer.writerow([r["setting"], r["name"], f"{r['mean']:.2f}", f"{r['ci95']:.2f}"])
    name_w = max(len(r["name"]) for r in rows)
    lines = [f"{'setting':<8} {'run':<{name_w}} {'accuracy':>9} {'ci95':>6}"]
    for r in rows:
        lines.append(f"{r['setting']:<8} {r['name']:<{name_w}} "
                     f"{r['mean']:>9.2f} {r['ci95']:>6.2f}")
    table_txt = "\n".join(lines) + "\n"
    (out / "table.txt").write_text(table_txt, encoding="utf-8")
    sys.stdout.write(table_txt)
    for r in rows:
        _plot_history(r["dir"], out / f"curves_{r['name']}.png")
    print(f"report written to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory (default: $FSPC_OUT_DIR)")
    common.add_argument("--profile", choices=("paper", "desk"), default="desk")
    common.add_argument("--way", type=int, default=None)
    common.add_argument("--shot", type=int, default=None)
    common.add_argument("--query", type=int, default=None)
    common.add_argument("--backbone", choices=("pointnet", "dgcnn"), default=None)
    common.add_argument("--sci", choices=("on", "off"), default=None)
    common.add_argument("--cif", choices=("on", "off"), default=None)
    common.add_argument("--k1", type=int, default=None)
    common.add_argument("--k2", type=int, default=None)
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted config override, e.g. optimizer.lr0=0.001")

    parser = argparse.ArgumentParser(prog="fspc",
                                     description="few-shot point cloud benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", parents=[common],
                       help="generate a synthetic dataset with a split manifest")
    p.add_argument("--synthetic", metavar="CxE", help="classes x examples, e.g. 8x40")
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--novel", type=int, default=2, help="novel classes held out")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", parents=[common], help="meta-train and meta-test")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--manifest", help="manifest path (default: DATA/manifest.json)")
    p.add_argument("--folds", type=int, default=None,
                   help="cross-validation folds (default: single run)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained run")
    p.add_argument("--run", required=True, help="run directory with checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of all gradients")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", parents=[common],
                       help="tables and curves from run directories")
    p.add_argument("--runs", nargs="+", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_EXIT if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_EXIT
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return DATA_EXIT
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
