"""Reading trace files back and writing tidy per-metric tables for plotting."""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

TRACE_HEADER = "# mpe-trace v1"

TABLES = ("trajectories", "distances", "values", "margins", "weight_norms")


class TraceSchemaError(ValueError):
    """The file is not a well-formed versioned trace."""


def read_trace(path):
    """Returns ``(meta, columns, data)``; ``data`` has one float row per step."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != TRACE_HEADER:
        raise TraceSchemaError(f"{path}: missing '{TRACE_HEADER}' header")
    meta, k = {}, 1
    while k < len(lines) and lines[k].startswith("#"):
        for item in lines[k][1:].split():
            if "=" in item:
                key, val = item.split("=", 1)
                meta[key] = val
        k += 1
    if k >= len(lines):
        raise TraceSchemaError(f"{path}: no column header")
    cols = next(csv.reader([lines[k]]))
    if cols[:2] != ["step", "time"]:
        raise TraceSchemaError(f"{path}: first columns must be step,time")
    rows = []
    for lineno, row in enumerate(csv.reader(lines[k + 1 :]), start=k + 2):
        if not row:
            continue
        if len(row) != len(cols):
            raise TraceSchemaError(f"{path}:{lineno}: {len(row)} fields, header has {len(cols)}")
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise TraceSchemaError(f"{path}:{lineno}: {exc}") from exc
    data = np.array(rows, float).reshape(-1, len(cols))
    return meta, cols, data


def _shape(meta):
    m = re.fullmatch(r"(\d+)v(\d+)", meta.get("shape", ""))
    if not m or "n" not in meta:
        raise TraceSchemaError("trace metadata lacks shape/n")
    return int(m.group(1)), int(m.group(2)), int(meta["n"])


def _position_indices(meta, n):
    pos = meta.get("position", "all")
    return list(range(n)) if pos == "all" else [int(i) for i in pos.split(",")]


def export_tables(trace_path, out_dir) -> dict:
    """Write every tidy table; returns ``{name: path}``."""
    meta, cols, data = read_trace(trace_path)
    n_p, n_e, n = _shape(meta)
    pos = _position_indices(meta, n)
    idx = {c: i for i, c in enumerate(cols)}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agents = [f"p{i}" for i in range(n_p)] + [f"e{j}" for j in range(n_e)]

    def col(name):
        if name not in idx:
            raise TraceSchemaError(f"trace lacks column {name}")
        return data[:, idx[name]]

    step, time = data[:, 0], data[:, 1]
    paths = {}

    def table(name, header, records):
        p = out_dir / f"{name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in records:
                w.writerow([r[0], r[1]] + [v if isinstance(v, str) else format(float(v), ".17g") for v in r[2:]])
        paths[name] = p

    def traj():
        for k in range(len(data)):
            for a in agents:
                for c in range(n):
                    yield int(step[k]), format(time[k], ".17g"), a, str(c), col(f"x_{a}_{c}")[k]

    table("trajectories", ["step", "time", "agent", "component", "value"], traj())

    def dist():
        xp = {i: np.stack([col(f"x_p{i}_{c}") for c in pos], 1) for i in range(n_p)}
        xe = {j: np.stack([col(f"x_e{j}_{c}") for c in pos], 1) for j in range(n_e)}
        for k in range(len(data)):
            for i in range(n_p):
                for j in range(n_e):
                    yield int(step[k]), format(time[k], ".17g"), f"p{i}", f"e{j}", np.linalg.norm(xp[i][k] - xe[j][k])

    table("distances", ["step", "time", "pursuer", "evader", "distance"], dist() if len(data) else [])
    table("values", ["step", "time", "agent", "value"],
          ((int(step[k]), format(time[k], ".17g"), a, col(f"value_{a}")[k]) for k in range(len(data)) for a in agents))
    table("margins", ["step", "time", "pursuer", "margin"],
          ((int(step[k]), format(time[k], ".17g"), f"p{i}", col(f"margin_p{i}")[k]) for k in range(len(data)) for i in range(n_p)))
    table("weight_norms", ["step", "time", "agent", "layer", "norm"],
          ((int(step[k]), format(time[k], ".17g"), a, layer, col(f"{layer}_norm_{a}")[k])
           for k in range(len(data)) for a in agents for layer in ("critic", "actor")))
    return paths
