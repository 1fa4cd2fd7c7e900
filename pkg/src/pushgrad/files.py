"""CSV formats: client datasets, checkpoints and result tables.

Every file starts with a ``# pushgrad <kind> v<version>`` comment followed by
a header row. Floats are written with ``repr`` so that values round-trip
exactly and identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .synthdata import ClientData

SCHEMA_VERSION = 1


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return "" if value is None else str(value)


def write_table(path, kind: str, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# pushgrad {kind} v{SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(c) for c in columns]
        writer.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_table(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, list(reader)


def write_dataset(path, X, y) -> None:
    d = X.shape[1]
    columns = [f"x{a + 1}" for a in range(d)] + ["label"]
    rows = [list(xr) + [int(t)] for xr, t in zip(X, y)]
    write_table(path, "client dataset", columns, rows)


def read_dataset(path):
    header, rows = read_table(path)
    if header[-1] != "label":
        raise ValueError(f"{path}: last column must be 'label'")
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return arr[:, :-1], arr[:, -1]


def save_federation(directory, clients) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, c in enumerate(clients):
        for split, X, y in (("train", c.train_X, c.train_y), ("val", c.val_X, c.val_y)):
            path = directory / f"client_{i}_{split}.csv"
            write_dataset(path, X, y)
            written.append(path)
    return written


def load_federation(directory) -> list[ClientData]:
    directory = Path(directory)
    clients = []
    i = 0
    while (directory / f"client_{i}_train.csv").exists():
        train_X, train_y = read_dataset(directory / f"client_{i}_train.csv")
        val_path = directory / f"client_{i}_val.csv"
        if not val_path.exists():
            raise FileNotFoundError(val_path)
        val_X, val_y = read_dataset(val_path)
        clients.append(ClientData(train_X, train_y, val_X, val_y))
        i += 1
    if not clients:
        raise FileNotFoundError(f"no client_0_train.csv in {directory}")
    return clients


def write_checkpoint(path, x) -> None:
    x = np.atleast_2d(x)
    columns = ["client"] + [f"x{a + 1}" for a in range(x.shape[1])]
    write_table(path, "checkpoint", columns, [[i] + list(row) for i, row in enumerate(x)])


def read_checkpoint(path) -> np.ndarray:
    header, rows = read_table(path)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    order = np.argsort(arr[:, 0])
    return arr[order, 1:]


def write_hgp_trace(path, trace, u_norms, reference=None) -> None:
    """Per-(m, client) rows: l2 error against ``reference`` when given, |u|, |v|."""
    rows = []
    for m, (vs, un) in enumerate(zip(trace, u_norms)):
        for i, v in enumerate(vs):
            err = None if reference is None else float(np.linalg.norm(v - reference[i]))
            rows.append([m, i, err, float(un[i]), float(np.linalg.norm(v))])
    write_table(path, "hgp trace", ["m", "client", "error_l2", "norm_u", "norm_v"], rows)
