"""Anchor self-calibration from inter-anchor distances.

Anchor positions are recovered up to a rigid motion by classical
multidimensional scaling, refined with nonlinear least squares and expressed
in a gauge frame chosen from three anchors:

- the origin anchor sits at the origin,
- the x-axis anchor lies on the positive x axis,
- the plane anchor lies in the x-y plane with y > 0,
- the sign of z is fixed by a convention on the first remaining anchor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import least_squares


class IncompleteTableError(ValueError):
    pass


class DegenerateConstellationError(ValueError):
    pass


@dataclass
class InterAnchorRanges:
    """Symmetric table of averaged inter-anchor distances.

    ``D[i, j]`` is the mean distance between ``ids[i]`` and ``ids[j]`` (NaN
    when the pair was never measured), ``sigma`` its standard error and
    ``count`` the number of samples averaged.
    """

    ids: list
    D: np.ndarray
    sigma: np.ndarray
    count: np.ndarray

    @classmethod
    def from_samples(cls, samples):
        """Build from ``(i, j, d, sigma)`` rows; repeated pairs are averaged
        with inverse-variance weights (unit weights when sigma is zero)."""
        samples = list(samples)
        ids = sorted({s[0] for s in samples} | {s[1] for s in samples}, key=_id_key)
        idx = {a: k for k, a in enumerate(ids)}
        n = len(ids)
        acc = {}
        for i, j, d, sg in samples:
            if i == j:
                if float(d) != 0.0:
                    raise ValueError(f"self-distance for anchor {i} must be zero")
                continue
            key = (min(idx[i], idx[j]), max(idx[i], idx[j]))
            acc.setdefault(key, []).append((float(d), float(sg)))
        D = np.full((n, n), np.nan)
        S = np.full((n, n), np.nan)
        C = np.zeros((n, n), dtype=int)
        np.fill_diagonal(D, 0.0)
        np.fill_diagonal(S, 0.0)
        for (a, b), rows in acc.items():
            d = np.array([r[0] for r in rows])
            s = np.array([r[1] for r in rows])
            if len(rows) == 1:
                dm, sm = d[0], s[0]
            elif np.all(s > 0):
                w = 1.0 / s**2
                dm, sm = float(np.sum(w * d) / np.sum(w)), float(1.0 / np.sqrt(np.sum(w)))
            else:
                dm, sm = float(np.mean(d)), float(np.max(s) / np.sqrt(len(d)))
            D[a, b] = D[b, a] = dm
            S[a, b] = S[b, a] = sm
            C[a, b] = C[b, a] = len(rows)
        return cls(ids, D, S, C)

    @classmethod
    def from_positions(cls, anchors, sigma=0.0, n_samples=1, rng=None):
        """Simulated table: true distances plus Gaussian noise of std ``sigma``."""
        rng = np.random.default_rng(rng)
        ids = sorted(anchors, key=_id_key)
        rows = []
        for i, j in combinations(ids, 2):
            d = float(np.linalg.norm(np.asarray(anchors[i], float) - np.asarray(anchors[j], float)))
            for _ in range(n_samples):
                rows.append((i, j, d + sigma * rng.standard_normal() if sigma > 0 else d, sigma))
        return cls.from_samples(rows)

    @property
    def complete(self) -> bool:
        return bool(np.all(np.isfinite(self.D)))

    def missing_pairs(self):
        n = len(self.ids)
        return [(self.ids[a], self.ids[b]) for a in range(n) for b in range(a + 1, n) if not np.isfinite(self.D[a, b])]

    def triangle_violations(self, k=3.0):
        """Triples whose triangle inequality fails by more than ``k`` combined sigmas."""
        bad = []
        for a, b, c in combinations(range(len(self.ids)), 3):
            for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
                lhs = self.D[x, y]
                rhs = self.D[y, z] + self.D[x, z]
                s = np.sqrt(self.sigma[x, y] ** 2 + self.sigma[y, z] ** 2 + self.sigma[x, z] ** 2)
                if np.isfinite(lhs) and np.isfinite(rhs) and lhs - rhs > k * s + 1e-12:
                    bad.append((self.ids[a], self.ids[b], self.ids[c]))
                    break
        return bad

    def rows(self):
        n = len(self.ids)
        return [
            (self.ids[a], self.ids[b], float(self.D[a, b]), float(self.sigma[a, b]))
            for a in range(n)
            for b in range(a + 1, n)
            if np.isfinite(self.D[a, b])
        ]


def _id_key(a):
    s = str(a)
    return (0, int(s), s) if s.lstrip("-").isdigit() else (1, 0, s)


def read_distance_csv(path) -> InterAnchorRanges:
    """Read an ``i,j,d,sigma`` CSV (header required)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or [h.strip() for h in header] != ["i", "j", "d", "sigma"]:
            raise ValueError(f"{path}: expected header 'i,j,d,sigma', got {header}")
        for ln, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{ln}: expected 4 fields, got {len(row)}")
            try:
                rows.append((row[0].strip(), row[1].strip(), float(row[2]), float(row[3])))
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: {exc}") from None
    return InterAnchorRanges.from_samples(rows)


def write_distance_csv(path, table: InterAnchorRanges):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("i,j,d,sigma\n")
        for i, j, d, s in table.rows():
            fh.write(f"{i},{j},{d!r},{s!r}\n")


@dataclass(frozen=True)
class Gauge:
    origin_id: object
    x_axis_id: object
    plane_id: object
    z_sign: int = 1

    def __post_init__(self):
        if len({str(self.origin_id), str(self.x_axis_id), str(self.plane_id)}) != 3:
            raise ValueError("gauge anchors must be distinct")
        if self.z_sign not in (1, -1):
            raise ValueError("z_sign must be +1 or -1")

    @classmethod
    def default(cls, ids):
        ids = sorted(ids, key=_id_key)
        return cls(ids[0], ids[1], ids[2])


def gauge_frame(anchors, gauge: Gauge, tol=1e-9):
    """Express an anchor map in the gauge frame (see module docstring).

    The z-sign convention makes the first non-gauge anchor (in id order) that
    is off the x-y plane by more than ``tol`` times the constellation size
    have ``sign(z) == gauge.z_sign``.
    """
    ids = sorted(anchors, key=_id_key)
    P = {a: np.asarray(anchors[a], dtype=float) for a in ids}
    o, px, pp = P[gauge.origin_id], P[gauge.x_axis_id], P[gauge.plane_id]
    ex = px - o
    scale = max(np.linalg.norm(ex), 1e-300)
    ex = ex / scale
    w = pp - o
    ey = w - (w @ ex) * ex
    if np.linalg.norm(ey) <= 1e-9 * max(np.linalg.norm(w), scale):
        raise DegenerateConstellationError("gauge anchors are collinear")
    ey = ey / np.linalg.norm(ey)
    ez = np.cross(ex, ey)
    R = np.vstack([ex, ey, ez])
    out = {a: R @ (P[a] - o) for a in ids}
    size = max(np.linalg.norm(v) for v in out.values())
    gauge_ids = {gauge.origin_id, gauge.x_axis_id, gauge.plane_id}
    for a in ids:
        if a in gauge_ids:
            continue
        if abs(out[a][2]) > tol * size:
            if np.sign(out[a][2]) != gauge.z_sign:
                for b in ids:
                    out[b] = out[b] * np.array([1.0, 1.0, -1.0])
            break
    # coordinates fixed by the gauge are zero by definition, not by round-off
    out[gauge.origin_id] = np.zeros(3)
    out[gauge.x_axis_id][1:] = 0.0
    out[gauge.plane_id][2] = 0.0
    for b in ids:
        out[b] = out[b] + 0.0  # normalise -0.0
    return out


@dataclass
class ConstellationSolution:
    anchors: dict
    residuals: dict
    chi2: float
    dof: int
    coplanar: bool
    mds_eigenvalues: np.ndarray
    gauge: Gauge
    z_ambiguous: bool
    info: dict = field(default_factory=dict)

    @property
    def max_abs_residual(self) -> float:
        return max((abs(r) for r in self.residuals.values()), default=0.0)

    def residuals_within(self, table: InterAnchorRanges, k=3.0) -> bool:
        """All pair residuals within ``k`` input sigmas (exact tables: 1e-9 m)."""
        idx = {a: n for n, a in enumerate(table.ids)}
        for (i, j), r in self.residuals.items():
            s = table.sigma[idx[i], idx[j]]
            if abs(r) > max(k * s, 1e-9):
                return False
        return True


def classical_mds(D, dim=3):
    """Classical MDS coordinates (n, dim) and all eigenvalues (descending)."""
    n = len(D)
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (D**2) @ J
    evals, evecs = np.linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    X = evecs[:, :dim] * np.sqrt(np.maximum(evals[:dim], 0.0))
    return X, evals


def solve_constellation(table: InterAnchorRanges, gauge: Gauge | None = None, coplanar_tol=None,
                        refine=True) -> ConstellationSolution:
    """Anchor positions from a complete inter-anchor distance table.

    Parameters
    ----------
    table : InterAnchorRanges
        Needs at least 4 anchors and every pair measured.
    gauge : Gauge, optional
        Defaults to the first three anchors in id order.
    coplanar_tol : float, optional
        Out-of-plane RMS (m) below which the layout is treated as planar.
        Defaults to three times the RMS input sigma, floored at 1e-6 times
        the largest MDS spread.
    refine : bool
        Run the weighted least-squares refinement after MDS.

    Raises
    ------
    IncompleteTableError
        Missing pairs or fewer than 4 anchors.
    DegenerateConstellationError
        Collinear anchors or collinear gauge anchors.
    """
    ids = list(table.ids)
    n = len(ids)
    if n < 4:
        raise IncompleteTableError(f"need at least 4 anchors for a 3-D solution, got {n}")
    if not table.complete:
        raise IncompleteTableError(f"missing pairs: {table.missing_pairs()}")
    gauge = Gauge.default(ids) if gauge is None else gauge
    for a in (gauge.origin_id, gauge.x_axis_id, gauge.plane_id):
        if a not in ids:
            raise ValueError(f"gauge anchor {a!r} not in table")
    iu = np.triu_indices(n, 1)
    sig = table.sigma[iu]
    s_rms = float(np.sqrt(np.mean(sig**2))) if np.all(np.isfinite(sig)) else 0.0
    X, evals = classical_mds(table.D)
    spread = np.sqrt(np.maximum(evals[:3], 0.0) / n)
    # spreads are square roots of eigenvalues, so round-off on exact tables
    # shows up near sqrt(machine eps) times the constellation size
    tol = max(3.0 * s_rms, 1e-6 * spread[0]) if coplanar_tol is None else coplanar_tol
    if spread[1] <= tol:
        raise DegenerateConstellationError(f"anchors are collinear (MDS spreads {spread})")
    coplanar = bool(spread[2] <= tol)
    if coplanar:
        X[:, 2] = 0.0
    pos = gauge_frame(dict(zip(ids, X)), gauge)

    if refine:
        pos = _refine(table, ids, pos, gauge, coplanar)
        pos = gauge_frame(pos, gauge)

    P = np.array([pos[a] for a in ids])
    dist = np.linalg.norm(P[iu[0]] - P[iu[1]], axis=1)
    r = dist - table.D[iu]
    residuals = {(ids[a], ids[b]): float(r[k]) for k, (a, b) in enumerate(zip(*iu))}
    w = np.where(sig > 0, 1.0 / np.where(sig > 0, sig, 1.0), 0.0)
    chi2 = float(np.sum((r * w) ** 2)) if np.any(sig > 0) else float("nan")
    n_par = 2 * n - 3 if coplanar else 3 * n - 6
    return ConstellationSolution(
        anchors=pos,
        residuals=residuals,
        chi2=chi2,
        dof=len(r) - n_par,
        coplanar=coplanar,
        mds_eigenvalues=evals,
        gauge=gauge,
        z_ambiguous=coplanar,
        info={"spread": spread, "coplanar_tol": tol},
    )


def _refine(table, ids, pos, gauge, coplanar):
    """Weighted least squares over the coordinates the gauge leaves free."""
    n = len(ids)
    free = np.ones((n, 3), bool)
    k_o, k_x, k_p = ids.index(gauge.origin_id), ids.index(gauge.x_axis_id), ids.index(gauge.plane_id)
    free[k_o] = False
    free[k_x, 1:] = False
    free[k_p, 2] = False
    if coplanar:
        free[:, 2] = False
    P0 = np.array([pos[a] for a in ids])
    iu = np.triu_indices(n, 1)
    d = table.D[iu]
    s = table.sigma[iu]
    w = 1.0 / s if np.all(s > 0) else np.ones_like(d)

    def unpack(theta):
        P = P0.copy()
        P[free] = theta
        return P

    def fun(theta):
        P = unpack(theta)
        return (np.linalg.norm(P[iu[0]] - P[iu[1]], axis=1) - d) * w

    def jac(theta):
        P = unpack(theta)
        diff = P[iu[0]] - P[iu[1]]
        nrm = np.maximum(np.linalg.norm(diff, axis=1), 1e-300)
        u = diff / nrm[:, None] * w[:, None]
        J = np.zeros((len(d), n, 3))
        rows = np.arange(len(d))
        J[rows, iu[0]] = u
        J[rows, iu[1]] = -u
        return J.reshape(len(d), -1)[:, free.ravel()]

    theta0 = P0[free]
    method = "lm" if len(d) >= theta0.size else "trf"
    sol = least_squares(fun, theta0, jac=jac, method=method, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return dict(zip(ids, unpack(sol.x)))


def procrustes_rms(est, truth):
    """RMS position error after the best rigid (rotation + translation) fit."""
    ids = sorted(truth, key=_id_key)
    A = np.array([est[a] for a in ids], float)
    B = np.array([truth[a] for a in ids], float)
    ca, cb = A.mean(0), B.mean(0)
    U, _, Vt = np.linalg.svd((A - ca).T @ (B - cb))
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = (U @ S @ Vt).T
    E = (A - ca) @ R.T + cb - B
    return float(np.sqrt(np.mean(np.sum(E**2, axis=1))))


def gauge_rms(est, truth, gauge: Gauge):
    """RMS position error with the truth expressed in the same gauge frame."""
    tg = gauge_frame(truth, gauge)
    ids = sorted(truth, key=_id_key)
    E = np.array([np.asarray(est[a]) - tg[a] for a in ids])
    return float(np.sqrt(np.mean(np.sum(E**2, axis=1))))
