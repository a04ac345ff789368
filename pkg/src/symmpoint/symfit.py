"""Recover a mirror plane from geometry alone.

The plane is found by minimising the symmetry residual (Chamfer distance
between a cloud and its reflection) over unit normals. Each restart descends
in a local spherical chart centred on its seed normal, using central finite
differences and a step that doubles on success and halves on failure. Only
improving steps are accepted, so the residual trace never goes up.

By default the plane is pinned to the centroid (``d = -n . centroid``); set
``fit_offset`` to also optimise ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCloud
from .geometry import SymmetryPlane, as_cloud, reflect_cloud
from .symloss import symmetry_residual

N_PCA_SEEDS = 3
_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 8
    max_iters: int = 300
    step_init: float = 0.1
    tol: float = 1e-8
    fit_offset: bool = False
    mode: str = "squared"
    fd_step: float = 1e-5
    pca_seeds: bool = True
    screen_points: int = 256
    screen_tol: float = 1e-3
    refine_top: int = 2

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.pca_seeds and self.restarts < N_PCA_SEEDS:
            raise ValueError(f"restarts must be >= {N_PCA_SEEDS} when PCA seeding is on")
        for name in ("max_iters", "step_init", "tol", "fd_step", "screen_tol", "refine_top"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mode not in ("squared", "euclidean"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class FitResult:
    plane: SymmetryPlane
    residual: float
    iterations: int
    trace: list[tuple[int, float]]
    seed_id: int
    converged: bool = True
    restarts: list[tuple[int, float, bool]] = field(default_factory=list)


def _covariance(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = P.mean(axis=0)
    X = P - c
    return c, X.T @ X / len(P)


def principal_axes(P) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid, eigenvalues (descending) and eigenvectors (columns) of the covariance."""
    P = as_cloud(P)
    c, S = _covariance(P)
    w, V = np.linalg.eigh(S)
    return c, w[::-1], V[:, ::-1]


def pca_seed_planes(P) -> list[SymmetryPlane]:
    P = as_cloud(P)
    if len(P) < 3:
        raise DegenerateCloud(f"need at least 3 points, got {len(P)}")
    c, w, V = principal_axes(P)
    if w[0] <= 0 or not np.isfinite(w).all():
        raise DegenerateCloud("all points coincide")
    return [SymmetryPlane(V[:, k], -float(V[:, k] @ c)) for k in range(3)]


def fibonacci_normals(n: int) -> np.ndarray:
    """``n`` well-spread unit vectors on the upper hemisphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5**0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _chart(n0: np.ndarray) -> np.ndarray:
    n0 = n0 / np.linalg.norm(n0)
    a = np.eye(3)[np.argmin(np.abs(n0))]
    u = np.cross(n0, a)
    u /= np.linalg.norm(u)
    v = np.cross(n0, u)
    return np.stack([n0, u, v])


def _normal(basis: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.cos(b) * (np.cos(a) * basis[0] + np.sin(a) * basis[1]) + np.sin(b) * basis[2]


class _Objective:
    # Reflection is an isometry, so both Chamfer directions between P and
    # its mirror reduce to querying the mirrored points against one tree on P.
    # ``subset`` restricts which mirrored points are queried; the tree always
    # holds the full cloud, so the true plane still scores exactly zero.
    def __init__(self, P: np.ndarray, mode: str, tree=None, subset=None):
        self.centroid = P.mean(axis=0)
        self.tree = cKDTree(P) if tree is None else tree
        self.P = P if subset is None else P[subset]
        self.mode = mode
        self.evals = 0

    def plane(self, basis, x, fit_offset):
        n = _normal(basis, x[0], x[1])
        d = x[2] if fit_offset else -float(n @ self.centroid)
        return n, d

    def __call__(self, basis, x, fit_offset) -> float:
        self.evals += 1
        n, d = self.plane(basis, x, fit_offset)
        s = self.P @ n + d
        M = self.P - 2.0 * s[:, None] * n
        dist, _ = self.tree.query(M, k=1)
        if self.mode == "squared":
            return 2.0 * float(np.mean(dist * dist))
        return 2.0 * float(np.mean(dist))


def _descend(obj: _Objective, basis, x0, cfg: FitConfig, step: float, tol: float):
    x = np.array(x0, dtype=np.float64)
    f = obj(basis, x, cfg.fit_offset)
    trace = [(0, f)]
    h = cfg.fd_step

    def grad(x):
        g = np.empty_like(x)
        for k in range(len(x)):
            e = np.zeros_like(x)
            e[k] = h
            g[k] = (obj(basis, x + e, cfg.fit_offset) - obj(basis, x - e, cfg.fit_offset)) / (2 * h)
        return g

    g = grad(x)
    converged = False
    it = 0
    while it < cfg.max_iters:
        if f == 0.0 or step < tol:
            converged = True
            break
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            converged = True
            break
        it += 1
        trial = x - step * g / gn
        ft = obj(basis, trial, cfg.fit_offset)
        if ft < f:
            x, f = trial, ft
            trace.append((it, f))
            step = min(2.0 * step, 1.0)
            g = grad(x)
        else:
            step *= 0.5
    else:
        converged = f == 0.0 or step < tol
    return x, f, it, trace, converged


def _seed_normals(P: np.ndarray, cfg: FitConfig) -> np.ndarray:
    seeds = []
    if cfg.pca_seeds:
        seeds.extend(p.normal for p in pca_seed_planes(P))
    extra = cfg.restarts - len(seeds)
    if extra > 0:
        seeds.extend(fibonacci_normals(extra))
    return np.asarray(seeds[: cfg.restarts], dtype=np.float64)


def fit_plane(P, config: FitConfig | None = None, seeds=None) -> FitResult:
    """Multi-start search for the plane minimising the symmetry residual.

    Every restart first descends on a fixed subsample of ``screen_points``
    mirrored points (queried against the full cloud) down to step
    ``screen_tol``; the ``refine_top`` best then continue on the full cloud
    down to ``tol``. Clouds no larger than ``screen_points`` skip screening.

    ``seeds`` overrides the starting normals (one restart each). The best
    restart wins on residual, ties going to the lower seed id. A result with
    ``converged=False`` is the best plane found when every restart ran out of
    iterations.
    """
    cfg = config or FitConfig()
    P = as_cloud(P)
    if len(P) < 4:
        raise DegenerateCloud(f"need at least 4 points, got {len(P)}")
    _, w, _ = principal_axes(P)
    if w[0] <= 0 or w[1] <= _RANK_RTOL * w[0]:
        raise DegenerateCloud("points are coincident or collinear")

    seed_normals = _seed_normals(P, cfg) if seeds is None else np.asarray(seeds, dtype=np.float64)
    full = _Objective(P, cfg.mode)
    screening = 0 < cfg.screen_points < len(P)
    if screening:
        subset = np.sort(np.random.default_rng(0).permutation(len(P))[: cfg.screen_points])
        coarse = _Objective(P, cfg.mode, tree=full.tree, subset=subset)

    starts = []
    for sid, n0 in enumerate(seed_normals):
        basis = _chart(n0)
        x0 = [0.0, 0.0]
        if cfg.fit_offset:
            x0.append(-float(basis[0] @ full.centroid))
        if screening:
            x, f, it, _, _ = _descend(coarse, basis, x0, cfg, cfg.step_init, cfg.screen_tol)
            starts.append((f, sid, basis, x, it))
        else:
            starts.append((0.0, sid, basis, np.asarray(x0), 0))

    if screening:
        starts = sorted(starts, key=lambda r: (r[0], r[1]))[: cfg.refine_top]
        step0 = 4 * cfg.screen_tol
    else:
        step0 = cfg.step_init

    runs = []
    for _, sid, basis, x0, it0 in starts:
        x, f, it, trace, conv = _descend(full, basis, x0, cfg, step0, cfg.tol)
        n, d = full.plane(basis, x, cfg.fit_offset)
        trace = [(it0 + k, r) for k, r in trace]
        runs.append((f, sid, SymmetryPlane(n, d), it0 + it, trace, conv))

    f, sid, plane, it, trace, _ = min(runs, key=lambda r: (r[0], r[1]))
    return FitResult(
        plane=plane,
        residual=symmetry_residual(P, plane, cfg.mode),
        iterations=it,
        trace=trace,
        seed_id=sid,
        converged=any(r[5] for r in runs),
        restarts=[(r[1], r[0], r[5]) for r in runs],
    )


def _side_spacing(P: np.ndarray, k: int = 4) -> float:
    if len(P) < 2:
        return np.inf
    k = min(k, len(P) - 1)
    dist, _ = cKDTree(P).query(P, k=k + 1)
    return float(np.mean(dist[:, k]))


def symmetrize(P, plane: SymmetryPlane, strategy: str = "union") -> np.ndarray:
    """Complete ``P`` with mirror images across ``plane``.

    ``union`` appends the full reflection (2N points). ``replace_worse_half``
    keeps the denser side, drops the other and mirrors the kept side over it;
    points on the plane are kept once. The denser side has more points, with
    ties going to the one with smaller mean k-NN spacing, so the output size
    is between N and 2N.
    """
    P = as_cloud(P)
    if strategy == "union":
        return np.concatenate([P, reflect_cloud(plane, P)])
    if strategy != "replace_worse_half":
        raise ValueError(f"unknown strategy {strategy!r}")
    s = P @ plane.normal + plane.offset
    on = P[s == 0]
    pos = P[s > 0]
    neg = P[s < 0]
    if len(pos) != len(neg):
        keep = pos if len(pos) > len(neg) else neg
    else:
        keep = pos if _side_spacing(pos) <= _side_spacing(neg) else neg
    parts = [on, keep]
    if len(keep):
        parts.append(reflect_cloud(plane, keep))
    return np.concatenate(parts)
