import gzip
import json
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from openrect.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from openrect.dataset import Dataset, load_csv, save_csv
from openrect.experiments import (
    ConfigError,
    ExperimentConfig,
    IdxFormatError,
    pca_project,
    read_idx,
    write_png,
)
from openrect.theory import GaussianClassSpec, SpecFamily

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def small_config(tmp_path, **over):
    cfg = {
        "name": "t",
        "dataset": {"synthetic": {"benchmark": "ring", "n_known": 4}, "n_per_component": 60},
        "uu_classes": [4],
        "classifier": {"kind": "gda"},
        "rtscv": {"c": 0.1, "k": 3},
        "seed": 3,
    }
    cfg.update(over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# -- run -------------------------------------------------------------------------


def test_run_writes_artifacts(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    out = tmp_path / "o"
    assert {p.name for p in out.iterdir()} == {"report.csv", "outcome.json", "model.json"}
    doc = json.loads((out / "outcome.json").read_text())
    assert doc["outcome"]["engine"] == "rtscv"
    assert doc["config"]["seed"] == 3


def test_run_is_byte_deterministic(tmp_path):
    cfg = small_config(tmp_path)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d), "--quiet"]) == EXIT_OK
    for name in ("report.csv", "outcome.json", "model.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_changes_run(tmp_path):
    cfg = small_config(tmp_path)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--quiet"])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "4", "--quiet"])
    a = (tmp_path / "a" / "report.csv").read_text().splitlines()[1].split(",")
    b = (tmp_path / "b" / "report.csv").read_text().splitlines()[1].split(",")
    assert a[2] == "3" and b[2] == "4"


@pytest.mark.parametrize("engine", ["pre", "csi"])
def test_run_engines(tmp_path, engine):
    cfg = small_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--engine", engine, "--out", str(tmp_path / engine), "--quiet"]) == 0
    d, _ = load_csv(tmp_path / engine / "report.csv", label_column="engine", header=True, ignore_columns=["name"])
    assert d.n_samples == 1


def test_pre_and_rtscv_score_the_same_rows(tmp_path):
    cfg = small_config(tmp_path)
    rows = {}
    for e in ("pre", "rtscv"):
        main(["run", "--config", str(cfg), "--engine", e, "--out", str(tmp_path / e), "--quiet"])
        header, row = (tmp_path / e / "report.csv").read_text().splitlines()
        rows[e] = dict(zip(header.split(","), row.split(",")))
    assert rows["pre"]["n_eval"] == rows["rtscv"]["n_eval"]
    assert float(rows["pre"]["detection_acc"]) == 0.0


def test_invalid_c_names_field(tmp_path, capsys):
    cfg = small_config(tmp_path, rtscv={"c": 0})
    assert main(["run", "--config", str(cfg), "--quiet"]) == EXIT_INVALID
    err = error_of(capsys)
    assert err["error"] == "invalid" and err["message"].startswith("rtscv.c")


@pytest.mark.parametrize(
    "over,field",
    [
        ({"uu_classes": []}, "uu_classes"),
        ({"split_fraction": 1.0}, "split_fraction"),
        ({"engine": "magic"}, "engine"),
        ({"classifier": {"kind": "forest"}}, "classifier.kind"),
        ({"classifier": {"kind": "knn", "k": 0}}, "classifier"),
        ({"dataset": {"csv": "nope.csv"}}, "dataset.csv"),
        ({"bogus": 1}, "bogus"),
        ({"rtscv": {"c": 0.1, "kk": 2}}, "rtscv.kk"),
        ({"sweep": {"axis": "nope"}}, "sweep.axis"),
    ],
)
def test_config_validation(tmp_path, capsys, over, field):
    cfg = small_config(tmp_path, **over)
    assert main(["run", "--config", str(cfg), "--quiet"]) == EXIT_INVALID
    assert error_of(capsys)["message"].startswith(field)


def test_missing_and_malformed_config(tmp_path, capsys):
    assert main(["run", "--quiet"]) == EXIT_INVALID
    assert main(["run", "--config", str(tmp_path / "none.json"), "--quiet"]) == EXIT_INVALID
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--quiet"]) == EXIT_INVALID
    assert "invalid JSON" in error_of(capsys)["message"]


def test_runtime_error_exit_code(tmp_path, capsys):
    # u.u. id outside the data: validation passes, the split fails at run time
    cfg = small_config(tmp_path, uu_classes=[9])
    assert main(["run", "--config", str(cfg), "--quiet"]) == EXIT_RUNTIME
    assert error_of(capsys)["error"] == "runtime"


def test_config_relative_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(m, 0.3, (30, 2)) for m in ((0, 0), (4, 0), (0, 4))])
    (tmp_path / "data").mkdir()
    save_csv(Dataset(x, np.repeat([0, 1, 2], 30), 3), tmp_path / "data" / "d.csv", header=False)
    sub = tmp_path / "cfgs"
    sub.mkdir()
    (sub / "c.json").write_text(json.dumps({"dataset": {"csv": "../data/d.csv"}, "uu_classes": [2]}))
    cfg = ExperimentConfig.load(sub / "c.json")
    assert Path(cfg.dataset["csv"]).is_file()


def test_config_roundtrip():
    cfg = ExperimentConfig.load(CONFIGS / "sample_rate_sweep.json")
    again = ExperimentConfig.from_dict({k: v for k, v in cfg.to_dict().items()})
    assert again == cfg


def test_every_shipped_config_validates():
    for p in CONFIGS.glob("*.json"):
        if p.name == "theorem_family.json":
            continue
        ExperimentConfig.load(p)


def test_config_error_message():
    assert str(ConfigError("a.b", "bad")) == "a.b: bad"


# -- sweep -----------------------------------------------------------------------


def test_sweep_single_level(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--axis", "sample_rate", "--levels", "0.1", "--replicates", "2",
                 "--out", str(tmp_path / "s"), "--quiet"]) == EXIT_OK
    curve = (tmp_path / "s" / "curve.csv").read_text().splitlines()
    raw = (tmp_path / "s" / "raw.csv").read_text().splitlines()
    assert len(curve) == 2 and len(raw) == 3
    head = curve[0].split(",")
    row = dict(zip(head, curve[1].split(",")))
    assert row["replicates"] == "2" and row["n_ok"] == "2"
    assert float(row["ci_low"]) <= float(row["mean"]) <= float(row["ci_high"])


def test_sweep_records_failures_as_gaps(tmp_path):
    # k = 1 is rejected for its level only
    cfg = small_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--axis", "folds", "--levels", "1,3", "--replicates", "1",
                 "--out", str(tmp_path / "s"), "--quiet"]) == EXIT_OK
    raw = (tmp_path / "s" / "raw.csv").read_text().splitlines()
    head = raw[0].split(",")
    first = dict(zip(head, raw[1].split(",")))
    assert "k must be" in first["error"]
    curve = _grid_rows(tmp_path / "s" / "curve.csv")
    assert curve[0]["n_ok"] == "0" and curve[0]["mean"] == ""
    assert curve[1]["n_ok"] == "1"


def test_sweep_deterministic_and_loadable(tmp_path):
    cfg = small_config(tmp_path)
    for d in ("a", "b"):
        main(["sweep", "--config", str(cfg), "--axis", "folds", "--levels", "2,3", "--replicates", "2",
              "--out", str(tmp_path / d), "--quiet"])
    for name in ("curve.csv", "raw.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # gap cells are empty, so columns that can hold them are skipped when reloading
    d, _ = load_csv(tmp_path / "a" / "curve.csv", label_column="level", header=True, ignore_columns=["axis", "j1_mean"])
    assert d.n_samples == 2
    raw, _ = load_csv(tmp_path / "a" / "raw.csv", label_column="level", header=True,
                      ignore_columns=["axis", "j1", "error"])
    assert raw.n_samples == 4


def test_sweep_separability_records_j1(tmp_path):
    cfg = small_config(tmp_path, sweep={"axis": "separability", "levels": [0.5, 1.0], "replicates": 1,
                                        "metric": "overall_acc"})
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--quiet"]) == EXIT_OK
    lines = (tmp_path / "s" / "curve.csv").read_text().splitlines()
    head = lines[0].split(",")
    j1 = [float(dict(zip(head, r.split(",")))["j1_mean"]) for r in lines[1:]]
    assert j1[0] < j1[1]


# -- verify-theorems -------------------------------------------------------------


def test_verify_empty_family(tmp_path):
    p = tmp_path / "fam.json"
    p.write_text(json.dumps({"families": []}))
    assert main(["verify-theorems", str(p), "--out", str(tmp_path / "v"), "--quiet"]) == EXIT_OK
    lines = (tmp_path / "v" / "theorems.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("family,")


def test_verify_equal_variance_family(tmp_path):
    known = [GaussianClassSpec([float(i), 0.0], 1.0, 0.3, 0.4) for i in range(2)]
    fam = SpecFamily(known, GaussianClassSpec([5.0, 5.0], 1.0, 0.4), 0.2, "eq")
    p = tmp_path / "fam.json"
    p.write_text(json.dumps([fam.to_dict()]))
    assert main(["verify-theorems", str(p), "--mc-samples", "20000", "--out", str(tmp_path / "v"), "--quiet"]) == 0
    lines = (tmp_path / "v" / "theorems.csv").read_text().splitlines()
    head = lines[0].split(",")
    rows = [dict(zip(head, r.split(","))) for r in lines[1:]]
    mle_known = [r for r in rows if r["theorem"] == "mle" and r["case"] == "known"]
    assert len(mle_known) == 2
    assert all(float(r["rhs"]) == 0.0 and r["condition"] == "1" for r in mle_known)
    assert all(r["agrees"] == "1" for r in rows)


def test_verify_bad_family(tmp_path, capsys):
    p = tmp_path / "fam.json"
    p.write_text(json.dumps({"families": [{"known": []}]}))
    assert main(["verify-theorems", str(p), "--quiet"]) == EXIT_INVALID


# -- export-boundary -------------------------------------------------------------


def read_png(path):
    data = Path(path).read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    pos, idat, size = 8, b"", None
    while pos < len(data):
        (n,) = struct.unpack(">I", data[pos : pos + 4])
        tag, body = data[pos + 4 : pos + 8], data[pos + 8 : pos + 8 + n]
        (crc,) = struct.unpack(">I", data[pos + 8 + n : pos + 12 + n])
        assert crc == zlib.crc32(tag + body) & 0xFFFFFFFF
        if tag == b"IHDR":
            size = struct.unpack(">II", body[:8])
        elif tag == b"IDAT":
            idat += body
        pos += 12 + n
    w, h = size
    raw = np.frombuffer(zlib.decompress(idat), dtype=np.uint8).reshape(h, 1 + 3 * w)
    assert np.all(raw[:, 0] == 0)
    return raw[:, 1:].reshape(h, w, 3)


def test_png_writer_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (7, 5, 3)).astype(np.uint8)
    write_png(tmp_path / "x.png", img)
    assert np.array_equal(read_png(tmp_path / "x.png"), img)


def _grid_rows(path):
    lines = Path(path).read_text().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, r.split(","))) for r in lines[1:]]


def _dummy_is_connected(labels, dummy):
    from scipy import ndimage

    mask = labels == dummy
    _, n = ndimage.label(mask)
    return mask.any(), n


@pytest.mark.parametrize("kind", [{"kind": "gda"}, {"kind": "knn", "k": 5}, {"kind": "tree", "max_depth": 8}, {"kind": "svm"}])
def test_boundary_grid_has_dummy_region(tmp_path, kind):
    cfg = small_config(tmp_path, classifier=kind, rtscv={"c": 0.2, "k": 3})
    out = tmp_path / "b"
    assert main(["export-boundary", "--config", str(cfg), "--resolution", "40x30", "--out", str(out), "--quiet"]) == 0
    rows = _grid_rows(out / "grid.csv")
    assert len(rows) == 40 * 30
    labels = np.zeros((30, 40), int)
    for r in rows:
        labels[int(r["iy"]), int(r["ix"])] = int(r["label"])
    assert labels.max() <= 4
    has_dummy, _ = _dummy_is_connected(labels, 4)
    assert has_dummy
    img = read_png(out / "boundary.png")
    assert img.shape[2] == 3 and (img == 0).all(axis=2).any()  # black dummy region drawn
    pts = _grid_rows(out / "points.csv")
    assert {p["from_sample"] for p in pts} == {"0", "1"}


def test_boundary_ring_gda_contiguous_dummy(tmp_path):
    cfg = small_config(tmp_path, dataset={"synthetic": {"benchmark": "ring"}, "n_per_component": 100},
                       uu_classes=[10], rtscv={"c": 0.1, "k": 3})
    out = tmp_path / "b"
    assert main(["export-boundary", "--config", str(cfg), "--resolution", "60", "--out", str(out), "--quiet"]) == 0
    labels = np.zeros((60, 60), int)
    for r in _grid_rows(out / "grid.csv"):
        labels[int(r["iy"]), int(r["ix"])] = int(r["label"])
    has_dummy, n = _dummy_is_connected(labels, 10)
    assert has_dummy and n >= 1


def test_boundary_single_cell(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["export-boundary", "--config", str(cfg), "--resolution", "1", "--out", str(tmp_path / "b"), "--quiet"]) == 0
    assert len(_grid_rows(tmp_path / "b" / "grid.csv")) == 1


def test_boundary_needs_2d(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(m, 0.3, (30, 3)) for m in (0, 4, 8)])
    save_csv(Dataset(x, np.repeat([0, 1, 2], 30), 3), tmp_path / "d.csv", header=False)
    cfg = small_config(tmp_path, dataset={"csv": str(tmp_path / "d.csv")}, uu_classes=[2])
    assert main(["export-boundary", "--config", str(cfg), "--out", str(tmp_path / "b"), "--quiet"]) == EXIT_RUNTIME
    assert "2-D" in error_of(capsys)["message"]


# -- convert-idx -----------------------------------------------------------------


def idx_bytes(arr: np.ndarray) -> bytes:
    return struct.pack(">HBB", 0, 8, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.astype(np.uint8).tobytes()


def test_convert_idx(tmp_path):
    imgs = np.zeros((3, 2, 2), np.uint8)
    imgs[0, 0, 0] = 255
    imgs[1, 1, 1] = 51
    (tmp_path / "i.idx").write_bytes(idx_bytes(imgs))
    with gzip.open(tmp_path / "l.idx.gz", "wb") as fh:
        fh.write(idx_bytes(np.array([7, 0, 3])))
    out = tmp_path / "o.csv"
    assert main(["convert-idx", str(tmp_path / "i.idx"), str(tmp_path / "l.idx.gz"), str(out), "--quiet"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "1.0,0,0,0,7"
    assert lines[1] == "0,0,0,0.2,0"
    d, mapping = load_csv(out)
    assert (d.n_samples, d.dim) == (3, 4)
    assert d.features.max() == 1.0


@pytest.mark.parametrize(
    "blob,msg",
    [
        (b"\x00\x00\x08", "too short"),
        (b"\x00\x01\x08\x01\x00\x00\x00\x01\x00", "magic"),
        (b"\x00\x00\x08\x03\x00\x00\x00\x02", "truncated header"),
        (b"\x00\x00\x08\x01\x00\x00\x00\x05\x01\x02", "expected 5 data bytes"),
    ],
)
def test_idx_format_errors(tmp_path, blob, msg):
    (tmp_path / "x.idx").write_bytes(blob)
    with pytest.raises(IdxFormatError, match=msg):
        read_idx(tmp_path / "x.idx")


def test_convert_idx_cli_errors(tmp_path, capsys):
    (tmp_path / "i.idx").write_bytes(idx_bytes(np.zeros((2, 2, 2))))
    (tmp_path / "l.idx").write_bytes(idx_bytes(np.zeros(3)))
    assert main(["convert-idx", str(tmp_path / "i.idx"), str(tmp_path / "l.idx"), str(tmp_path / "o.csv")]) == 1
    assert "2 images but 3 labels" in error_of(capsys)["message"]
    assert main(["convert-idx", str(tmp_path / "none"), str(tmp_path / "l.idx"), str(tmp_path / "o.csv")]) == 1


# -- pca -------------------------------------------------------------------------


def test_pca_rank_one_exact():
    t = np.linspace(-3, 3, 40)
    x = np.column_stack([2 * t + 1, -t + 4])
    proj, res = pca_project(Dataset(x, np.zeros(40, int), 1), 1)
    recon = proj.features @ res.components + res.mean
    assert np.allclose(recon, x, atol=1e-10)
    assert res.explained_variance_ratio[0] == pytest.approx(1.0)


def test_pca_full_rank_preserves_distances(rng):
    x = rng.normal(size=(30, 6)) @ rng.normal(size=(6, 6))
    proj, _ = pca_project(Dataset(x, np.zeros(30, int), 1), 6)
    d0 = np.linalg.norm(x[:, None] - x[None], axis=2)
    d1 = np.linalg.norm(proj.features[:, None] - proj.features[None], axis=2)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_pca_matches_eigh_subspace(rng):
    x = rng.normal(size=(200, 16)) * np.linspace(3, 0.2, 16)
    _, res = pca_project(Dataset(x, np.zeros(200, int), 1), 5)
    cov = np.cov(x.T, bias=True)
    w, v = np.linalg.eigh(cov)
    top = v[:, np.argsort(w)[::-1][:5]]
    cosines = np.linalg.svd(top.T @ res.components.T, compute_uv=False)
    angles = np.arccos(np.clip(cosines, -1, 1))
    assert angles.max() < 1e-6
    assert np.allclose(res.eigenvalues, np.sort(w)[::-1][:5], rtol=1e-8)
    assert np.allclose(res.components @ res.components.T, np.eye(5), atol=1e-12)


def test_pca_cli(tmp_path, capsys):
    rng = np.random.default_rng(1)
    save_csv(Dataset(rng.normal(size=(50, 4)), rng.integers(0, 3, 50), 3), tmp_path / "d.csv", header=True)
    out = tmp_path / "p.csv"
    assert main(["pca", str(tmp_path / "d.csv"), str(out), "--n-components", "2", "--header"]) == EXIT_OK
    assert "explained variance ratio" in capsys.readouterr().out
    d, _ = load_csv(out, label_column="label", header=True)
    assert d.dim == 2 and d.n_samples == 50
    assert main(["pca", str(tmp_path / "d.csv"), str(out), "--n-components", "5", "--header"]) == EXIT_INVALID
    assert "--n-components" in error_of(capsys)["message"]
