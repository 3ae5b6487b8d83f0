"""Command-line entry point: gen, train, eval, ablate, fid, project.

Exit codes: 0 success, 2 validation/usage/I-O problems, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .data import PATTERNS, MSQParseError, NormStats, load_dir, save_msq, synth_generate
from .diffcore import ContractError, DimensionError, NumericError
from .metrics import (HorizonError, InsufficientDataError, fid, pca_project_2d, read_feature_csv,
                      write_feature_csv, write_points_csv)
from .model import ConfigError, load_into, load_tdw, model_arrays, save_tdw
from .training import (ablation_run, evaluate_model, fid_features, format_ablation_table, prepare_data,
                       run_training, write_epochs_csv)

log = logging.getLogger("td2ip")

EXIT_USAGE = 2
EXIT_NUMERIC = 3

WEIGHTS_FILE = "weights.tdw"
CONFIG_ECHO = "config.used.json"


class UsageError(Exception):
    pass


def positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def positive_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {s!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _fresh_dir(path: Path, force: bool) -> Path:
    if path.exists():
        if not force:
            raise UsageError(f"{path} already exists; pass --force to replace it")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True)
    return path


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    if not Path(path).is_file():
        raise UsageError(f"config file {path} not found")
    return RunConfig.load(path)


def _load_data(directory: str, cfg: RunConfig):
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"data directory {d} not found")
    seqs = load_dir(d)
    if not seqs:
        raise UsageError(f"no .msq files in {d}")
    joints = {s.n_joints for s in seqs}
    if joints != {cfg.joints}:
        raise UsageError(f"data has joint count(s) {sorted(joints)} but config joints = {cfg.joints}")
    rates = {s.fps for s in seqs}
    if rates != {float(cfg.fps)}:
        raise UsageError(f"data frame rate(s) {sorted(rates)} differ from config fps = {cfg.fps}")
    return prepare_data(seqs, cfg.t_p, cfg.t_f, cfg.window_stride, cfg.normalize, cfg.val_fraction)


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    out = _fresh_dir(Path(args.out), args.force)
    seqs = synth_generate(args.seed, args.sequences, args.frames, args.joints, args.fps, args.pattern)
    files = []
    for i, seq in enumerate(seqs):
        name = f"seq_{i:04d}.msq"
        save_msq(seq, out / name)
        files.append(name)
    manifest = {
        "generator": "synth", "seed": args.seed, "sequences": args.sequences, "frames": args.frames,
        "joints": args.joints, "fps": args.fps, "pattern": args.pattern, "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(files)} sequences to {out}")
    return 0


def _save_weights(model, stats: NormStats, path: Path) -> None:
    arrays = model_arrays(model)
    arrays["norm.mean"] = stats.mean
    arrays["norm.std"] = stats.std
    save_tdw(arrays, path)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    data = _load_data(args.data, cfg)
    out = _fresh_dir(Path(args.out), args.force)
    cfg.dump(out / CONFIG_ECHO)

    def progress(e):
        log.info("epoch %3d  L=%.6f  val_mpjpe=%.3f mm", e.epoch, e.loss_total, e.val_mpjpe)

    model, logs = run_training(data, cfg.model_config(), cfg.train_config(), cfg.horizon_spec(),
                               cfg.average_over, on_epoch=progress)
    _save_weights(model, data.stats, out / WEIGHTS_FILE)
    write_epochs_csv(logs, out / "epochs.csv")
    report = evaluate_model(model, data, cfg.horizon_spec(), cfg.average_over, cfg.compute_fid)
    report.dump(out / "report.json")
    print(f"final val MPJPE {report.mpjpe_average:.3f} mm -> {out}")
    return 0


def cmd_eval(args) -> int:
    weights = Path(args.weights)
    if not weights.is_file():
        raise UsageError(f"weights file {weights} not found")
    cfg_path = args.config or weights.parent / CONFIG_ECHO
    cfg = _load_config(str(cfg_path))
    arrays = load_tdw(weights)
    try:
        model = load_into(cfg.model_config(), arrays)
    except DimensionError as exc:
        raise UsageError(f"weights {weights} do not fit config {cfg_path}: {exc}") from None
    data = _load_data(args.data, cfg)
    if "norm.mean" in arrays:
        data = _restat(data, NormStats(arrays["norm.mean"], arrays["norm.std"]))
    report = evaluate_model(model, data, cfg.horizon_spec(), cfg.average_over, cfg.compute_fid)
    report.dump(args.report)
    if args.export_dir:
        export = Path(args.export_dir)
        export.mkdir(parents=True, exist_ok=True)
        feat_pred, feat_gt = fid_features(model, data)
        write_feature_csv(feat_pred, export / "features_pred.csv")
        write_feature_csv(feat_gt, export / "features_gt.csv")
        write_points_csv(pca_project_2d(np.vstack([feat_pred, feat_gt])), export / "projection.csv")
    print(json.dumps(report.to_json()))
    return 0


def _restat(data, stats: NormStats):
    """Re-express the validation split with the statistics stored alongside the weights."""
    from .data import normalize_batch

    data.stats = stats
    data.val = normalize_batch(data.val_raw, stats)
    return data


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    data = _load_data(args.data, cfg)
    seeds = args.seeds or cfg.ablation_seeds or [cfg.seed]
    out = _fresh_dir(Path(args.out), args.force)
    cfg.dump(out / CONFIG_ECHO)

    def save_logs(variant, seed, logs):
        d = out / variant.name.replace("+", "_") / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_epochs_csv(logs, d / "epochs.csv")
        log.info("%s seed %d: val MPJPE %.3f mm", variant.name, seed, logs[-1].val_mpjpe)

    rows = ablation_run(data, cfg.model_config(), cfg.train_config(), cfg.horizon_spec(), seeds,
                        cfg.average_over, on_variant=save_logs)
    table = format_ablation_table(rows)
    (out / "ablation.txt").write_text(table)
    payload = {"seeds": seeds, "horizons_ms": cfg.horizons_ms, "rows": [r.to_json() for r in rows]}
    (out / "ablation.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(table, end="")
    return 0


def cmd_fid(args) -> int:
    a = read_feature_csv(args.features_a)
    b = read_feature_csv(args.features_b)
    print(f"{fid(a, b):.6f}")
    return 0


def cmd_project(args) -> int:
    pts = pca_project_2d(read_feature_csv(args.features))
    write_points_csv(pts, args.out)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="td2ip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write synthetic MSQ sequences")
    g.add_argument("--out", required=True)
    g.add_argument("--sequences", type=positive_int, default=200)
    g.add_argument("--frames", type=positive_int, default=40)
    g.add_argument("--joints", type=positive_int, default=8)
    g.add_argument("--fps", type=positive_float, default=25.0)
    g.add_argument("--pattern", choices=PATTERNS, default="mixed")
    g.add_argument("--seed", type=nonneg_int, default=7)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train one model into a run directory")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--force", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate saved weights on the validation split")
    e.add_argument("--weights", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--config", help=f"defaults to {CONFIG_ECHO} next to the weights")
    e.add_argument("--export-dir", help="also write feature CSVs and a 2-D projection here")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="train the five ablation variants")
    a.add_argument("--config")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=nonneg_int, nargs="+")
    a.add_argument("--force", action="store_true")
    a.set_defaults(fn=cmd_ablate)

    f = sub.add_parser("fid", help="Frechet distance between two feature CSVs")
    f.add_argument("--features-a", required=True)
    f.add_argument("--features-b", required=True)
    f.set_defaults(fn=cmd_fid)

    pr = sub.add_parser("project", help="2-D PCA projection of a feature CSV")
    pr.add_argument("--features", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(fn=cmd_project)
    return p


USAGE_ERRORS = (UsageError, ConfigError, DimensionError, HorizonError, MSQParseError, ContractError,
                InsufficientDataError, ValueError, OSError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"td2ip {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except USAGE_ERRORS as exc:
        print(f"td2ip {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
