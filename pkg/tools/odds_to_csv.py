"""Convert ODDS-style ``.mat`` files (arrays ``X`` and ``y``) to CSV + schema.

Usage:
    python tools/odds_to_csv.py thyroid.mat cardio.mat --out datasets/

Writes ``<out>/<name>.csv`` (header ``f0..f{d-1},label``) and
``<out>/<name>.schema.json`` for each input. MATLAB v7.3 files are HDF5;
those are read with ``h5py`` when it is installed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from scipy.io import loadmat


def read_mat(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        mat = loadmat(path)
        X, y = mat["X"], mat["y"]
    except NotImplementedError:
        import h5py  # v7.3 files

        with h5py.File(path, "r") as fh:
            # HDF5 stores MATLAB arrays transposed
            X, y = np.array(fh["X"]).T, np.array(fh["y"]).T
    return np.asarray(X, dtype=np.float64), np.asarray(y).ravel().astype(np.int64)


def convert(path: Path, out: Path) -> Path:
    X, y = read_mat(path)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{path}: X has {X.shape[0]} rows, y has {y.shape[0]}")
    name = path.stem.lower()
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    schema = {"name": name, "label_column": "label", "anomaly_value": 1, "normal_value": 0}
    (out / f"{name}.schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    return csv_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("files", nargs="+", type=Path)
    parser.add_argument("--out", type=Path, default=Path("datasets"))
    args = parser.parse_args(argv)
    for f in args.files:
        print(convert(f, args.out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
