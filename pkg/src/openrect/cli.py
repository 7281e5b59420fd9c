"""Command-line entry point.

Exit codes: 0 success, 1 invalid configuration or input, 2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .classifiers import ClassifierError
from .dataset import CsvParseError, CsvStructureError, DataError, EmptyInputError, load_csv, save_csv
from .experiments import (
    ENGINES,
    REPORT_FIELDS,
    THEOREM_FIELDS,
    ConfigError,
    ExperimentConfig,
    IdxFormatError,
    convert_idx_to_csv,
    export_boundary,
    load_families,
    pca_project,
    run_experiment,
    sweep,
    verify_theorems,
    write_csv,
    write_sweep,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

CONFIG_HELP = """\
config keys (JSON object):
  dataset              {"csv": path, "label_column": -1, "header": false, "pca_components": n}
                       or {"synthetic": {"benchmark": "ring", ...params}, "n_per_component": 200}
                       or {"synthetic": {"components": [...]}}         (required)
  uu_classes           class ids held out of training                  (required)
  split_fraction       train share of each class, default 0.5
  classifier           {"kind": gda|svm|knn|tree|mlp, ...params}, default {"kind": "gda"}
  rtscv                {"c": 0.08, "k": 3, "seed": 0, "mode": "kfold"|"holdout",
                        "holdout_fraction": 0.3, "restrict_uu_to_sample": true}
  engine               rtscv | csi | pre, default rtscv
  auroc                report AUROC, default true
  out_dir              default "out"
  seed                 default 0; overrides rtscv.seed and classifier seeds
  sweep                {"axis": sample_rate|folds|separability, "levels": [...],
                        "replicates": 10, "metric": "macro_f",
                        "separability_mode": known|uu, "separability_axis": mean-spread|covariance}
  boundary_resolution  grid cells per side for export-boundary, default 200
"""


class _Invalid(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config", "required for this command")
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "engine", None):
        cfg = replace(cfg, engine=args.engine)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    elif cfg.rtscv.seed != cfg.seed:
        cfg = cfg.with_seed(cfg.seed)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    res = run_experiment(cfg)
    _say(args, ",".join(REPORT_FIELDS))
    _say(args, ",".join("" if res.row[k] is None else str(res.row[k]) for k in REPORT_FIELDS))
    _say(args, f"wrote {res.paths['report']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    levels = [float(v) if "." in v else int(v) for v in args.levels.split(",")] if args.levels else None
    curve, raw = sweep(cfg, args.axis, levels, args.replicates)
    paths = write_sweep(curve, raw, cfg.out_dir)
    for row in curve:
        mean = row.get("mean")
        _say(args, f"{row['level']}\t{'nan' if mean is None else f'{mean:.4f}'}\tn={row['n_ok']}/{row['replicates']}")
    _say(args, f"wrote {paths['curve']}")
    return EXIT_OK


def cmd_verify(args) -> int:
    fams = load_families(args.spec_family)
    rows = verify_theorems(fams, args.mc_samples, args.seed or 0)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "theorems.csv", THEOREM_FIELDS, rows)
    bad = sum(1 for r in rows if not r["agrees"])
    sat = sum(1 for r in rows if r["condition"])
    _say(args, f"{len(fams)} families, {len(rows)} checks, {sat} conditions satisfied, {bad} violations")
    return EXIT_OK


def cmd_boundary(args) -> int:
    cfg = _load_config(args)
    res = args.resolution
    if res is not None:
        res = tuple(int(v) for v in res.split("x")) if "x" in res else int(res)
    grid, paths = export_boundary(cfg, resolution=res, padding=args.padding)
    _say(args, f"grid {grid.resolution[0]}x{grid.resolution[1]}, wrote {paths['grid']} and {paths['png']}")
    return EXIT_OK


def cmd_convert(args) -> int:
    try:
        rows, cols = convert_idx_to_csv(args.images, args.labels, args.output)
    except OSError as exc:
        raise _Invalid(f"{exc.filename}: {exc.strerror}") from None
    _say(args, f"wrote {rows} rows x {cols} columns to {args.output}")
    return EXIT_OK


def cmd_pca(args) -> int:
    try:
        data, _ = load_csv(args.input, args.label_column, args.header)
    except OSError as exc:
        raise _Invalid(f"{exc.filename}: {exc.strerror}") from None
    if not 1 <= args.n_components <= data.dim:
        raise _Invalid(f"--n-components: must be in [1, {data.dim}], got {args.n_components}")
    projected, res = pca_project(data, args.n_components, seed=args.seed or 0)
    save_csv(projected, args.output)
    ratios = ",".join(f"{r:.6f}" for r in res.explained_variance_ratio)
    _say(args, f"explained variance ratio: {ratios}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(
        prog="openrect",
        description="Rectify classifiers against unknown-unknown classes and run the accompanying experiments.",
        epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="one experiment: report.csv, outcome.json, model.json")
    r.add_argument("--engine", choices=ENGINES, help="override the config engine")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="curve over sample rate, folds or separability")
    s.add_argument("--engine", choices=ENGINES)
    s.add_argument("--axis", choices=("sample_rate", "folds", "separability"))
    s.add_argument("--levels", help="comma-separated levels (overrides sweep.levels)")
    s.add_argument("--replicates", type=int, default=None, help="seed replicates per level (default 10)")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify-theorems", parents=[common], help="condition verdicts vs Monte-Carlo conclusions")
    v.add_argument("spec_family", help="JSON file with a 'families' list")
    v.add_argument("--mc-samples", type=int, default=1_000_000)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("export-boundary", parents=[common], help="decision regions of the augmented-set fit (2-D)")
    b.add_argument("--resolution", help="cells per side, or WxH")
    b.add_argument("--padding", type=float, default=1.0)
    b.set_defaults(func=cmd_boundary)

    c = sub.add_parser("convert-idx", parents=[common], help="IDX image + label files to CSV")
    c.add_argument("images")
    c.add_argument("labels")
    c.add_argument("output")
    c.set_defaults(func=cmd_convert)

    q = sub.add_parser("pca", parents=[common], help="project a CSV onto its top principal components")
    q.add_argument("input")
    q.add_argument("output")
    q.add_argument("--n-components", type=int, required=True)
    q.add_argument("--label-column", type=int, default=-1)
    q.add_argument("--header", action="store_true")
    q.set_defaults(func=cmd_pca)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, _Invalid, IdxFormatError, CsvParseError, CsvStructureError, EmptyInputError) as exc:
        print(json.dumps({"error": "invalid", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INVALID
    except (DataError, ClassifierError, ValueError, OSError) as exc:
        print(json.dumps({"error": "runtime", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
