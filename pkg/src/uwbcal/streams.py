"""CSV stream formats shared by the command-line tools.

Every file has a mandatory header row, uses a decimal point and stores
floats with ``repr`` so that write -> read -> write reproduces the bytes.

==================  ======================================================
file                columns
==================  ======================================================
imu.csv             t,ax,ay,az,wx,wy,wz
ranges.csv          t,anchor_id,range
anchors.csv         anchor_id,x,y,z
truth.csv           t,px,py,pz,q0,qx,qy,qz
calib_trace.csv     t,pux,puy,puz,td,3sig_pux,3sig_puy,3sig_puz,3sig_td
estimate.csv        t,px,py,pz,q0,qx,qy,qz,vx,vy,vz,td
==================  ======================================================
"""

from __future__ import annotations

import csv

import numpy as np

from .models import ImuSample, RangeSample

IMU_HEADER = ["t", "ax", "ay", "az", "wx", "wy", "wz"]
RANGES_HEADER = ["t", "anchor_id", "range"]
ANCHORS_HEADER = ["anchor_id", "x", "y", "z"]
TRUTH_HEADER = ["t", "px", "py", "pz", "q0", "qx", "qy", "qz"]
CALIB_HEADER = ["t", "pux", "puy", "puz", "td", "3sig_pux", "3sig_puy", "3sig_puz", "3sig_td"]
ESTIMATE_HEADER = ["t", "px", "py", "pz", "q0", "qx", "qy", "qz", "vx", "vy", "vz", "td"]


class StreamFormatError(ValueError):
    """Malformed stream file; the message carries ``path:line``."""


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def parse_id(s: str):
    s = s.strip()
    return int(s) if s.lstrip("-").isdigit() else s


def write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(c if isinstance(c, str) else fmt(c) for c in r) + "\n")


def _read(path, header, id_cols=()):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        first = next(rd, None)
        if first is None or [h.strip() for h in first] != header:
            raise StreamFormatError(f"{path}:1: expected header {','.join(header)!r}, got {first!r}")
        for ln, row in enumerate(rd, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise StreamFormatError(f"{path}:{ln}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for k, c in enumerate(row):
                if k in id_cols:
                    vals.append(parse_id(c))
                    continue
                try:
                    v = float(c)
                except ValueError:
                    raise StreamFormatError(f"{path}:{ln}: column {header[k]!r}: cannot parse {c!r}") from None
                if not np.isfinite(v):
                    raise StreamFormatError(f"{path}:{ln}: column {header[k]!r}: non-finite value")
                vals.append(v)
            out.append((ln, vals))
    return out


def _check_increasing(path, rows, col=0):
    for (ln0, a), (ln1, b) in zip(rows, rows[1:]):
        if not b[col] > a[col]:
            raise StreamFormatError(f"{path}:{ln1}: time {b[col]!r} not after {a[col]!r} (line {ln0})")


def read_imu(path):
    rows = _read(path, IMU_HEADER)
    _check_increasing(path, rows)
    return [ImuSample(v[0], np.array(v[1:4]), np.array(v[4:7])) for _, v in rows]


def write_imu(path, imu):
    write_table(path, IMU_HEADER, ([u.t, *u.a_m, *u.w_m] for u in imu))


def read_ranges(path):
    rows = _read(path, RANGES_HEADER, id_cols=(1,))
    _check_increasing(path, rows)
    return [RangeSample(v[0], v[1], v[2]) for _, v in rows]


def write_ranges(path, ranges):
    write_table(path, RANGES_HEADER, ([z.t_r, str(z.anchor_id), z.r] for z in ranges))


def read_anchors(path):
    rows = _read(path, ANCHORS_HEADER, id_cols=(0,))
    out = {}
    for ln, v in rows:
        if v[0] in out:
            raise StreamFormatError(f"{path}:{ln}: duplicate anchor id {v[0]!r}")
        out[v[0]] = np.array(v[1:4])
    if not out:
        raise StreamFormatError(f"{path}: no anchors")
    return out


def write_anchors(path, anchors):
    ids = sorted(anchors, key=lambda a: (isinstance(a, str), str(a) if isinstance(a, str) else a))
    write_table(path, ANCHORS_HEADER, ([str(a), *np.asarray(anchors[a], dtype=float)] for a in ids))


def read_truth(path):
    """Returns ``(t, p, q)`` arrays."""
    rows = _read(path, TRUTH_HEADER)
    _check_increasing(path, rows)
    A = np.array([v for _, v in rows]).reshape(-1, 8)
    return A[:, 0], A[:, 1:4], A[:, 4:8]


def write_truth(path, t, p, q):
    write_table(path, TRUTH_HEADER, np.column_stack([t, p, q]))


def read_matrix(path, header):
    rows = _read(path, header)
    return np.array([v for _, v in rows]).reshape(-1, len(header))
