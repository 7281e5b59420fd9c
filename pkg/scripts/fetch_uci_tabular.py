"""Extract the UCI Pendigits and Letter Recognition tables into data/*.csv.

The UCI archive is not always reachable, so this pulls the copies bundled in
the ``keel-ds`` wheel (KEEL "penbased" and "letter", both full, unsplit UCI
tables) from PyPI and rewrites them as plain headerless CSV with the label in
the last column.

    python scripts/fetch_uci_tabular.py [--wheel path/to/keel_ds.whl]
"""

import argparse
import pathlib
import subprocess
import sys
import tempfile
import zipfile

MEMBERS = {
    "pendigits.csv": "keel_ds/data/balanced/raw/penbased.dat",
    "letter.csv": "keel_ds/data/balanced/raw/letter.dat",
}


def _download_wheel(dest: pathlib.Path) -> pathlib.Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(dest), "keel-ds==0.2.5"],
        check=True,
    )
    return next(dest.glob("keel_ds-*.whl"))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--wheel", type=pathlib.Path, default=None)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path(__file__).parents[1] / "data")
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or _download_wheel(pathlib.Path(tmp))
        args.out.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(wheel) as zf:
            for name, member in MEMBERS.items():
                rows = []
                for line in zf.read(member).decode().splitlines():
                    line = line.strip()
                    if line and not line.startswith("@"):
                        rows.append(",".join(cell.strip() for cell in line.split(",")))
                (args.out / name).write_text("\n".join(rows) + "\n")
                print(f"{name}: {len(rows)} rows")


if __name__ == "__main__":
    main()
