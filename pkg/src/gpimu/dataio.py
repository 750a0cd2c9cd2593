"""CSV interchange for trajectories, measurements, estimates and metrics.

Every file has a one-line header and a fixed column order. Floats are written
with 17 significant digits, so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .blocktri import BlockTriDiag
from .errors import GpImuError
from .estimators import EstimateResult, Method
from .gp_traj import MeasurementStream
from .sim import ACC_ROW, POS_ROW, SimTrajectory

TRAJ_HEADER = ["traj_id", "t", "p", "v", "a"]
MEAS_HEADER = ["traj_id", "t", "channel", "y"]
METRIC_HEADER = ["traj_id", "method", "metric", "value"]
SUMMARY_HEADER = ["method", "metric", "mean", "median", "q1", "q3", "w_lo", "w_hi", "n_outliers"]
_STATE = ("p", "v", "a")


class MissingInput(GpImuError, FileNotFoundError):
    pass


class DataFormatError(GpImuError, ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_rows(path: Path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_rows(path: Path, header=None) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"missing input file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if header is not None and reader.fieldnames[:len(header)] != list(header):
            raise DataFormatError(f"{path}: expected columns {header}, got {reader.fieldnames}")
        return list(reader)


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------ trajectories


def write_trajectories(path, trajs) -> None:
    def rows():
        for i, tr in enumerate(trajs):
            for t, x in zip(tr.times, tr.states):
                yield (i, t, *x[:3])
    write_rows(path, TRAJ_HEADER, rows())


def write_measurements(path, trajs) -> None:
    def rows():
        for i, tr in enumerate(trajs):
            for name, meas in (("pos", tr.pos_meas), ("acc", tr.acc_meas)):
                for t, y in zip(meas.times, meas.y[:, 0]):
                    yield (i, t, name, y)
    write_rows(path, MEAS_HEADER, rows())


def _float(row, key, path):
    try:
        return float(row[key])
    except (TypeError, ValueError):
        raise DataFormatError(f"{path}: bad value {row.get(key)!r} in column {key}") from None


def read_dataset(traj_path, meas_path, r_pos: float = 1.0, r_acc: float = 1.0) -> list[SimTrajectory]:
    """Trajectories with their measurement streams, ordered by traj_id."""
    states = defaultdict(list)
    for row in read_rows(traj_path, TRAJ_HEADER):
        states[int(row["traj_id"])].append([_float(row, k, traj_path) for k in ("t", *_STATE)])
    meas = defaultdict(lambda: {"pos": [], "acc": []})
    for row in read_rows(meas_path, MEAS_HEADER):
        ch = row["channel"]
        if ch not in ("pos", "acc"):
            raise DataFormatError(f"{meas_path}: unknown channel {ch!r}")
        meas[int(row["traj_id"])][ch].append((_float(row, "t", meas_path), _float(row, "y", meas_path)))
    ids = sorted(states)
    if ids != list(range(len(ids))):
        raise DataFormatError(f"{traj_path}: trajectory ids must be 0..N-1")
    out = []
    for i in ids:
        arr = np.array(states[i])
        m = meas[i]
        pos = np.array(m["pos"]).reshape(-1, 2)
        acc = np.array(m["acc"]).reshape(-1, 2)
        out.append(SimTrajectory(arr[:, 0], arr[:, 1:],
                                 MeasurementStream.scalar(pos[:, 0], pos[:, 1], POS_ROW, r_pos),
                                 MeasurementStream.scalar(acc[:, 0], acc[:, 1], ACC_ROW, r_acc)))
    return out


# --------------------------------------------------------------- estimates


def _cov_names(d):
    return [f"cov_{_STATE[i]}{_STATE[j]}" for i in range(d) for j in range(d)]


def estimate_header(d: int):
    return ["traj_id", "t", *_STATE[:d], *_cov_names(d)]


def info_header(d: int):
    return ["traj_id", "block", "k", *[f"m{i}{j}" for i in range(d) for j in range(d)]]


def write_estimates(est_path, info_path, results) -> None:
    d = results[0].state_dim if results else 2

    def est_rows():
        for i, r in enumerate(results):
            for t, m, c in zip(r.times, r.means, r.covs):
                yield (i, t, *m, *c.ravel())

    def info_rows():
        for i, r in enumerate(results):
            for k, b in enumerate(r.info.diag):
                yield (i, "diag", k, *b.ravel())
            for k, b in enumerate(r.info.off):
                yield (i, "off", k, *b.ravel())

    write_rows(est_path, estimate_header(d), est_rows())
    write_rows(info_path, info_header(d), info_rows())


def read_estimates(est_path, info_path, method: Method) -> list[EstimateResult]:
    rows = read_rows(est_path)
    if not rows:
        read_rows(info_path)
        return []
    names = list(rows[0].keys())
    d = sum(1 for s in _STATE if s in names)
    if names != estimate_header(d):
        raise DataFormatError(f"{est_path}: unexpected columns {names}")
    est = defaultdict(list)
    for row in rows:
        est[int(row["traj_id"])].append([_float(row, k, est_path) for k in names[1:]])
    blocks = defaultdict(lambda: {"diag": {}, "off": {}})
    for row in read_rows(info_path, info_header(d)):
        vals = np.array([_float(row, k, info_path) for k in info_header(d)[3:]]).reshape(d, d)
        blocks[int(row["traj_id"])][row["block"]][int(row["k"])] = vals
    out = []
    for i in sorted(est):
        arr = np.array(est[i])
        b = blocks[i]
        diag = np.array([b["diag"][k] for k in sorted(b["diag"])])
        off = np.array([b["off"][k] for k in sorted(b["off"])]).reshape(-1, d, d)
        if diag.shape[0] != arr.shape[0]:
            raise DataFormatError(f"{info_path}: information blocks do not match estimates of trajectory {i}")
        out.append(EstimateResult(arr[:, 0], arr[:, 1:1 + d], arr[:, 1 + d:].reshape(-1, d, d),
                                  BlockTriDiag(diag, off), Method(method)))
    return out


def write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"missing input file: {path}")
    return json.loads(path.read_text())
