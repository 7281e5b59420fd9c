"""Experiment harness: config parsing, single runs, sweeps, theorem tables, boundary grids."""

from __future__ import annotations

import colorsys
import csv
import inspect
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import benchmarks
from ._parallel import parallel_map
from .classifiers import _REGISTRY, Classifier, ClassifierError, make_classifier, save_model
from .csi import csi_rectify
from .dataset import (
    DataError,
    Dataset,
    GaussianMixtureSpec,
    format_number,
    generate_gaussian,
    load_csv,
    make_scenario,
    sample_indices,
)
from .metrics import EvalReport
from .rtscv import RtscvConfig, _draw_sample, evaluate_model, evaluate_rectified, rectify
from .separability import MODES, SingularScatterError, scaled_spec, scatter_from_data
from .theory import SpecFamily, verify_family

ENGINES = ("rtscv", "csi", "pre")
SWEEP_AXES = ("sample_rate", "folds", "separability")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSettings:
    axis: str = "sample_rate"
    levels: tuple = ()
    replicates: int = 10
    metric: str = "macro_f"
    separability_mode: str = "known"
    separability_axis: str = "mean-spread"


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment; ``dataset`` holds either ``csv`` or ``synthetic``.

    ``dataset.synthetic`` is ``{"benchmark": name, **params}`` or a mixture
    spec dict (``{"components": [...]}``). Synthetic data is regenerated per
    run with the run seed, so replicates differ in data as well as sampling.
    """

    dataset: dict
    uu_classes: tuple[int, ...]
    split_fraction: float = 0.5
    classifier: dict = field(default_factory=lambda: {"kind": "gda"})
    rtscv: RtscvConfig = field(default_factory=RtscvConfig)
    engine: str = "rtscv"
    auroc: bool = True
    out_dir: str = "out"
    seed: int = 0
    name: str = "experiment"
    sweep: SweepSettings | None = None
    boundary_resolution: int = 200

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        d = dict(d)
        if "dataset" not in d:
            raise ConfigError("dataset", "required")
        if "uu_classes" not in d:
            raise ConfigError("uu_classes", "required")
        d["uu_classes"] = tuple(int(c) for c in d["uu_classes"])
        rt = d.get("rtscv", {})
        if not isinstance(rt, RtscvConfig):
            bad = sorted(set(rt) - {f.name for f in fields(RtscvConfig)})
            if bad:
                raise ConfigError(f"rtscv.{bad[0]}", "unknown field")
            try:
                rt = RtscvConfig(**rt)
            except DataError as exc:
                name = str(exc).split(" ", 1)[0]
                raise ConfigError(f"rtscv.{name}", str(exc)) from None
        d["rtscv"] = rt
        sw = d.get("sweep")
        if sw is not None and not isinstance(sw, SweepSettings):
            bad = sorted(set(sw) - {f.name for f in fields(SweepSettings)})
            if bad:
                raise ConfigError(f"sweep.{bad[0]}", "unknown field")
            sw = dict(sw)
            sw["levels"] = tuple(sw.get("levels", ()))
            d["sweep"] = SweepSettings(**sw)
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
        # relative csv paths resolve against the config file's directory
        ds = raw.get("dataset")
        if isinstance(ds, dict) and isinstance(ds.get("csv"), str) and not Path(ds["csv"]).is_absolute():
            raw = dict(raw, dataset=dict(ds, csv=str((Path(path).parent / ds["csv"]).resolve())))
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["uu_classes"] = list(self.uu_classes)
        if self.sweep is not None:
            d["sweep"]["levels"] = list(self.sweep.levels)
        return d

    def validate(self) -> None:
        ds = self.dataset
        if not isinstance(ds, dict) or ("csv" in ds) == ("synthetic" in ds):
            raise ConfigError("dataset", "give exactly one of 'csv' or 'synthetic'")
        if "csv" in ds and not Path(ds["csv"]).is_file():
            raise ConfigError("dataset.csv", f"file not found: {ds['csv']}")
        if "synthetic" in ds:
            syn = ds["synthetic"]
            if "benchmark" in syn:
                if not hasattr(benchmarks, f"{syn['benchmark']}_benchmark"):
                    raise ConfigError("dataset.synthetic.benchmark", f"unknown benchmark {syn['benchmark']!r}")
            else:
                try:
                    GaussianMixtureSpec.from_dict(syn)
                except (DataError, KeyError, TypeError) as exc:
                    raise ConfigError("dataset.synthetic", str(exc)) from None
        if not self.uu_classes:
            raise ConfigError("uu_classes", "need at least one u.u. class")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction", f"must be in (0, 1), got {self.split_fraction}")
        if self.engine not in ENGINES:
            raise ConfigError("engine", f"must be one of {ENGINES}, got {self.engine!r}")
        if "kind" not in self.classifier or self.classifier["kind"] not in _REGISTRY:
            raise ConfigError("classifier.kind", f"unknown classifier {self.classifier.get('kind')!r}")
        try:
            self.factory()
        except (ClassifierError, TypeError) as exc:
            raise ConfigError("classifier", str(exc)) from None
        if self.boundary_resolution < 1:
            raise ConfigError("boundary_resolution", "must be >= 1")
        sw = self.sweep
        if sw is not None:
            if sw.axis not in SWEEP_AXES:
                raise ConfigError("sweep.axis", f"must be one of {SWEEP_AXES}, got {sw.axis!r}")
            if sw.replicates < 1:
                raise ConfigError("sweep.replicates", "must be >= 1")
            if sw.metric not in EvalReport.CSV_FIELDS:
                raise ConfigError("sweep.metric", f"must be one of {EvalReport.CSV_FIELDS}")
            if sw.separability_mode not in MODES:
                raise ConfigError("sweep.separability_mode", f"must be one of {MODES}")
            if sw.separability_axis not in ("mean-spread", "covariance"):
                raise ConfigError("sweep.separability_axis", "must be 'mean-spread' or 'covariance'")
            if sw.axis == "separability" and "synthetic" not in ds:
                raise ConfigError("sweep.axis", "separability sweeps need a synthetic dataset")

    def factory(self, seed: int | None = None):
        params = {k: v for k, v in self.classifier.items() if k != "kind"}
        cls = _REGISTRY[self.classifier["kind"]]
        if seed is not None and "seed" in inspect.signature(cls.__init__).parameters:
            params["seed"] = seed
        return make_classifier(self.classifier["kind"], **params)

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, seed=seed, rtscv=replace(self.rtscv, seed=seed))


def synthetic_spec(cfg: ExperimentConfig, seed: int) -> GaussianMixtureSpec:
    syn = dict(cfg.dataset["synthetic"])
    if "benchmark" in syn:
        name = syn.pop("benchmark")
        syn.pop("n_per_component", None)
        return getattr(benchmarks, f"{name}_benchmark")(seed=seed, **syn)
    return replace(GaussianMixtureSpec.from_dict(syn), seed=seed)


def load_dataset(cfg: ExperimentConfig, seed: int, spec: GaussianMixtureSpec | None = None) -> Dataset:
    ds = cfg.dataset
    if "csv" in ds:
        data, _ = load_csv(ds["csv"], ds.get("label_column", -1), ds.get("header", False), ds.get("ignore_columns", ()))
        n = ds.get("pca_components")
        if n:
            data, _ = pca_project(data, int(n))
        return data
    spec = synthetic_spec(cfg, seed) if spec is None else spec
    return generate_gaussian(spec, ds["synthetic"].get("n_per_component", ds.get("n_per_component", 200)))


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------

REPORT_FIELDS = ("name", "engine", "seed", "n_known", "n_eval", "n_sample", "n_uu") + EvalReport.CSV_FIELDS


@dataclass
class RunResult:
    report: EvalReport
    row: dict
    outcome: object
    scenario: object
    model: Classifier | None = None
    paths: dict = field(default_factory=dict)


def run_once(cfg: ExperimentConfig, data: Dataset | None = None) -> RunResult:
    """Split, rectify (or not) and evaluate on the test rows outside the sample."""
    seed = cfg.seed
    data = load_dataset(cfg, seed) if data is None else data
    scen = make_scenario(data, cfg.uu_classes, cfg.split_fraction, seed)
    factory = cfg.factory(seed)
    rt = cfg.rtscv
    openness_value = scen.openness_target_is_train
    if cfg.engine == "pre":
        model = factory().fit(scen.train)
        # evaluate on the same rows the rectified engines would be scored on
        sample = sample_indices(len(scen.test), rt.c, rt.seed)
        rows = np.setdiff1d(np.arange(len(scen.test)), sample)
        report = evaluate_model(model, scen.test, scen.n_known, rows, openness_value)
        outcome = None
        n_sample, n_uu = 0, 0
    else:
        engine = rectify if cfg.engine == "rtscv" else csi_rectify
        outcome = engine(scen.train, scen.test, factory, rt)
        report = evaluate_rectified(outcome, scen.test, openness_value)
        rows = np.setdiff1d(np.arange(len(scen.test)), outcome.sample_index)
        model = outcome.rectified_model
        n_sample, n_uu = int(outcome.sample_index.size), int(outcome.diagnostics["n_uu"])
    if not cfg.auroc:
        report.auroc = None
    row = dict(
        name=cfg.name,
        engine=cfg.engine,
        seed=seed,
        n_known=scen.n_known,
        n_eval=int(rows.size),
        n_sample=n_sample,
        n_uu=n_uu,
        **report.row(),
    )
    return RunResult(report, row, outcome, scen, model)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return format_number(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r.get(h)) for h in header])


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Run once and write ``report.csv``, ``outcome.json`` and ``model.json`` under ``out_dir``."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = run_once(cfg)
    paths = {"report": out / "report.csv", "outcome": out / "outcome.json", "model": out / "model.json"}
    write_csv(paths["report"], REPORT_FIELDS, [res.row])
    save_model(res.model, paths["model"])
    doc = {"config": {k: v for k, v in cfg.to_dict().items() if k != "out_dir"}, "report": res.row, "confusion": res.report.confusion}
    if res.outcome is not None:
        doc["outcome"] = res.outcome.to_json("model.json")
    else:
        doc["outcome"] = {"engine": "pre", "model": "model.json"}
    _dump_json(doc, paths["outcome"])
    res.paths = {k: str(v) for k, v in paths.items()}
    return res


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

CURVE_FIELDS = ("axis", "level", "replicates", "n_ok", "mean", "sd", "ci_low", "ci_high", "j1_mean")
RAW_FIELDS = ("axis", "level", "replicate", "seed", "j1") + EvalReport.CSV_FIELDS + ("error",)

_RUN_ERRORS = (DataError, ClassifierError, SingularScatterError, ValueError)


def _level_config(cfg: ExperimentConfig, axis: str, level) -> ExperimentConfig:
    if axis == "sample_rate":
        return replace(cfg, rtscv=replace(cfg.rtscv, c=float(level)))
    if axis == "folds":
        return replace(cfg, rtscv=replace(cfg.rtscv, k=int(level), mode="kfold"))
    return cfg


def _sweep_task(cfg: ExperimentConfig, axis: str, level, replicate: int) -> dict:
    seed = cfg.seed + replicate
    row = {"axis": axis, "level": level, "replicate": replicate, "seed": seed}
    try:
        run_cfg = _level_config(cfg, axis, level).with_seed(seed)
        data = None
        if axis == "separability":
            sw = cfg.sweep
            uu = set(cfg.uu_classes)
            spec = scaled_spec(synthetic_spec(cfg, seed), uu, sw.separability_mode, sw.separability_axis, float(level))
            data = load_dataset(cfg, seed, spec)
            row["j1"] = scatter_from_data(data, uu, sw.separability_mode).j1
        row.update(run_once(run_cfg, data).report.row())
    except _RUN_ERRORS as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _summarize(axis: str, level, rows: list[dict], metric: str) -> dict:
    vals = np.array([r[metric] for r in rows if not r.get("error") and r.get(metric) is not None], dtype=float)
    out = {"axis": axis, "level": level, "replicates": len(rows), "n_ok": int(vals.size)}
    if vals.size:
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        half = 1.959963984540054 * sd / math.sqrt(vals.size)
        out.update(mean=mean, sd=sd, ci_low=mean - half, ci_high=mean + half)
    j1s = [r["j1"] for r in rows if r.get("j1") is not None]
    if j1s:
        out["j1_mean"] = float(np.mean(j1s))
    return out


def sweep(cfg: ExperimentConfig, axis: str | None = None, levels=None, replicates: int | None = None):
    """Repeat runs over (level, replicate); returns ``(curve_rows, raw_rows)``.

    Replicate ``r`` uses seed ``cfg.seed + r``. Failed runs keep a row with an
    ``error`` message and are left out of the curve statistics.
    """
    sw = cfg.sweep or SweepSettings()
    axis = axis or sw.axis
    levels = list(sw.levels if levels is None else levels)
    replicates = sw.replicates if replicates is None else replicates
    if axis not in SWEEP_AXES:
        raise ConfigError("sweep.axis", f"must be one of {SWEEP_AXES}, got {axis!r}")
    if not levels:
        raise ConfigError("sweep.levels", "need at least one level")
    if replicates < 1:
        raise ConfigError("sweep.replicates", "must be >= 1")
    if axis == "separability" and "synthetic" not in cfg.dataset:
        raise ConfigError("sweep.axis", "separability sweeps need a synthetic dataset")
    cfg = replace(cfg, sweep=replace(sw, axis=axis, levels=tuple(levels), replicates=replicates))
    tasks = [(lv, r) for lv in levels for r in range(replicates)]
    raw = parallel_map(lambda t: _sweep_task(cfg, axis, t[0], t[1]), tasks)
    raw.sort(key=lambda r: (levels.index(r["level"]), r["replicate"]))
    curve = [_summarize(axis, lv, [r for r in raw if r["level"] == lv], sw.metric) for lv in levels]
    return curve, raw


def write_sweep(curve, raw, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"curve": out / "curve.csv", "raw": out / "raw.csv"}
    write_csv(paths["curve"], CURVE_FIELDS, curve)
    write_csv(paths["raw"], RAW_FIELDS, raw)
    return {k: str(v) for k, v in paths.items()}


# ---------------------------------------------------------------------------
# Theorem verification table
# ---------------------------------------------------------------------------

THEOREM_FIELDS = (
    "family",
    "name",
    "dim",
    "theorem",
    "case",
    "k",
    "lhs",
    "rhs",
    "margin",
    "vacuous",
    "condition",
    "mc_diff",
    "mc_se",
    "exact_diff",
    "conclusion",
    "agrees",
)


def load_families(path) -> list[SpecFamily]:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("spec_family", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("spec_family", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    items = raw.get("families", []) if isinstance(raw, dict) else raw
    if not isinstance(items, list):
        raise ConfigError("spec_family", "expected a list of families")
    try:
        return [SpecFamily.from_dict(f) for f in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("spec_family", f"invalid family: {exc}") from None


def verify_theorems(families, mc_samples: int = 1_000_000, seed: int = 0) -> list[dict]:
    """One row per (family, theorem, case, focal class); family ``i`` uses seed ``seed + i``."""

    def one(item):
        i, fam = item
        rows = []
        for chk in verify_family(fam, mc_samples, seed + i):
            v = chk.verdict
            rows.append(
                dict(
                    family=i,
                    name=fam.name,
                    dim=fam.dim,
                    theorem=chk.theorem,
                    case=chk.case,
                    k=chk.k,
                    lhs=v.lhs,
                    rhs=v.rhs,
                    margin=v.margin,
                    vacuous=v.vacuous,
                    condition=v.satisfied,
                    mc_diff=chk.mc_diff,
                    mc_se=chk.mc_se,
                    exact_diff=chk.exact_diff,
                    conclusion=chk.conclusion_holds,
                    agrees=chk.agrees,
                )
            )
        return rows

    return [r for rows in parallel_map(one, list(enumerate(families))) for r in rows]


# ---------------------------------------------------------------------------
# Decision-boundary grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryGrid:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    resolution: tuple[int, int]
    labels: np.ndarray
    points: np.ndarray
    point_labels: np.ndarray
    from_sample: np.ndarray
    dummy_label: int

    def cell_centers(self):
        nx, ny = self.resolution
        return _centers(*self.x_range, nx), _centers(*self.y_range, ny)


def _centers(lo: float, hi: float, n: int) -> np.ndarray:
    step = (hi - lo) / n
    return lo + step * (np.arange(n) + 0.5)


def boundary_grid(model: Classifier, aug, resolution, padding: float = 1.0) -> BoundaryGrid:
    """Evaluate ``model`` on a regular grid covering the augmented points plus ``padding``."""
    x = aug.data.features
    if x.shape[1] != 2:
        raise DataError(f"decision boundaries need 2-D data, got d={x.shape[1]}")
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    if nx < 1 or ny < 1:
        raise DataError("resolution must be >= 1")
    lo = x.min(axis=0) - padding
    hi = x.max(axis=0) + padding
    gx, gy = _centers(lo[0], hi[0], nx), _centers(lo[1], hi[1], ny)
    xx, yy = np.meshgrid(gx, gy)
    labels = model.predict(np.column_stack([xx.ravel(), yy.ravel()])).reshape(ny, nx)
    return BoundaryGrid(
        (float(lo[0]), float(hi[0])),
        (float(lo[1]), float(hi[1])),
        (int(nx), int(ny)),
        labels,
        x,
        aug.data.labels,
        aug.from_sample,
        aug.dummy_label,
    )


def export_boundary(cfg: ExperimentConfig, out_dir=None, resolution=None, padding: float = 1.0) -> tuple[BoundaryGrid, dict]:
    """Fit the base classifier on the augmented set (training rows plus the dummy-labelled sample)."""
    data = load_dataset(cfg, cfg.seed)
    if data.dim != 2:
        raise DataError(f"decision boundaries need 2-D data, got d={data.dim}")
    scen = make_scenario(data, cfg.uu_classes, cfg.split_fraction, cfg.seed)
    _, aug = _draw_sample(scen.train, scen.test, cfg.rtscv)
    model = cfg.factory(cfg.seed)().fit(aug.data)
    grid = boundary_grid(model, aug, cfg.boundary_resolution if resolution is None else resolution, padding)
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"grid": out / "grid.csv", "points": out / "points.csv", "png": out / "boundary.png"}
    gx, gy = grid.cell_centers()
    nx, ny = grid.resolution
    grid_rows = [
        {"ix": i, "iy": j, "x": gx[i], "y": gy[j], "label": int(grid.labels[j, i])} for j in range(ny) for i in range(nx)
    ]
    write_csv(paths["grid"], ("ix", "iy", "x", "y", "label"), grid_rows)
    pt_rows = [
        {"x": p[0], "y": p[1], "from_sample": bool(s), "label": int(lab)}
        for p, s, lab in zip(grid.points, grid.from_sample, grid.point_labels)
    ]
    write_csv(paths["points"], ("x", "y", "from_sample", "label"), pt_rows)
    write_png(paths["png"], render_boundary(grid))
    return grid, {k: str(v) for k, v in paths.items()}


def _palette(n: int) -> np.ndarray:
    # evenly spaced pastel hues; the dummy class is drawn black separately
    rgb = [colorsys.hsv_to_rgb(i / max(n, 1), 0.45, 0.95) for i in range(n)]
    return (np.array(rgb, dtype=float).reshape(-1, 3) * 255).round().astype(np.uint8)


_TRIANGLE = [(dx, dy) for dy in range(-3, 3) for dx in range(-3, 4) if abs(dx) <= (dy + 3) // 2]
_DOT = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def render_boundary(grid: BoundaryGrid, max_side: int = 512) -> np.ndarray:
    """RGB raster: region colours, dummy region black, training points as dots and sample points as triangles."""
    nx, ny = grid.resolution
    scale = max(1, max_side // max(nx, ny))
    colors = _palette(grid.dummy_label)
    colors = np.vstack([colors, [[0, 0, 0]]])
    img = colors[grid.labels[::-1]]  # row 0 at the top
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    h, w = img.shape[:2]
    (x0, x1), (y0, y1) = grid.x_range, grid.y_range
    for p, s in zip(grid.points, grid.from_sample):
        cx = int((p[0] - x0) / (x1 - x0) * w)
        cy = int((y1 - p[1]) / (y1 - y0) * h)
        shape, color = (_TRIANGLE, (255, 255, 255)) if s else (_DOT, (60, 60, 60))
        for dx, dy in shape:
            if 0 <= cx + dx < w and 0 <= cy + dy < h:
                img[cy + dy, cx + dx] = color
    return img


def write_png(path, rgb: np.ndarray) -> None:
    """8-bit RGB PNG with a single zlib-compressed IDAT chunk."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    raw = b"".join(b"\x00" + rgb[r].tobytes() for r in range(h))

    def chunk(tag: bytes, body: bytes) -> bytes:
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    data = b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")
    Path(path).write_bytes(data)


# ---------------------------------------------------------------------------
# IDX conversion and PCA
# ---------------------------------------------------------------------------


class IdxFormatError(DataError):
    pass


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file (gzip accepted when the name ends in ``.gz``)."""
    import gzip

    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise IdxFormatError(f"{path}: too short for an IDX header")
    zero, dtype, ndim = struct.unpack(">HBB", buf[:4])
    if zero != 0 or dtype != 0x08 or ndim < 1:
        raise IdxFormatError(f"{path}: bad magic number {buf[:4].hex()}")
    if len(buf) < 4 + 4 * ndim:
        raise IdxFormatError(f"{path}: truncated header")
    shape = struct.unpack(f">{ndim}I", buf[4 : 4 + 4 * ndim])
    body = buf[4 + 4 * ndim :]
    need = int(np.prod(shape))
    if len(body) != need:
        raise IdxFormatError(f"{path}: expected {need} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(shape)


_PIXEL_TEXT = [format_number(v / 255.0) if v else "0" for v in range(256)]


def convert_idx_to_csv(images_path, labels_path, out_path) -> tuple[int, int]:
    """Write one row per image: pixels scaled to [0, 1], then the label. Returns (rows, columns)."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim < 2:
        raise IdxFormatError("image file must have at least two dimensions")
    if labels.ndim != 1:
        raise IdxFormatError("label file must be one-dimensional")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        for row, lab in zip(flat, labels):
            fh.write(",".join(_PIXEL_TEXT[v] for v in row))
            fh.write(f",{int(lab)}\n")
    return flat.shape[0], flat.shape[1] + 1


@dataclass(frozen=True)
class PcaResult:
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    iterations: tuple[int, ...]


def pca_project(data: Dataset, n_components: int, max_iter: int = 5000, tol: float = 1e-14, seed: int = 0):
    """Project onto the top principal components found by power iteration with deflation.

    Each vector is re-orthogonalized against the ones already found, so the
    basis stays orthonormal even where nearly equal eigenvalues slow
    convergence. Returns ``(projected Dataset, PcaResult)``.
    """
    d = data.dim
    if not 1 <= n_components <= d:
        raise DataError(f"n_components must be in [1, {d}], got {n_components}")
    mean = data.features.mean(axis=0)
    xc = data.features - mean
    cov = xc.T @ xc / max(len(data), 1)
    total = float(np.trace(cov))
    rng = np.random.default_rng(seed)
    comps, vals, iters = [], [], []
    work = cov.copy()
    for _ in range(n_components):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        it = 0
        for it in range(1, max_iter + 1):
            w = work @ v
            for u in comps:
                w -= (u @ w) * u
            norm = np.linalg.norm(w)
            if norm == 0:
                break
            w /= norm
            done = min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol ** 0.5 * 1e-3
            v = w
            if done:
                break
        if np.linalg.norm(v) == 0 or not np.isfinite(v).all():
            v = np.eye(d)[len(comps)]
        for u in comps:
            v -= (u @ v) * u
        v /= np.linalg.norm(v)
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        lam = float(v @ cov @ v)
        comps.append(v)
        vals.append(lam)
        iters.append(it)
        work = work - lam * np.outer(v, v)
    comps = np.array(comps)
    vals = np.array(vals)
    ratio = vals / total if total > 0 else np.zeros_like(vals)
    projected = Dataset(xc @ comps.T, data.labels, data.n_classes, data.label_names)
    return projected, PcaResult(mean, comps, vals, ratio, tuple(iters))
