"""Chamfer distance, Earth Mover's distance and F-Score between point clouds.

Every metric has a brute-force path and an accelerated path:

* ``chamfer`` enumerates all pairs; ``chamfer_accel`` asks a KD-tree for
  candidates and then re-measures them with the same arithmetic, so both give
  bit-identical answers.
* ``emd_exact`` solves the assignment problem exactly (capped at 512 points);
  ``emd_approx`` runs an epsilon-scaled auction whose mean cost is at most
  ``epsilon`` above the optimum.

Conventions: Chamfer is the sum of the two directed mean nearest-neighbour
terms, each squared Euclidean by default. EMD is the *mean* matched-pair
Euclidean distance. Report display scales CD by 1e3 and EMD by 1e2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import NonConvergence, NonPositiveThreshold, SizeMismatch, TooLarge
from .geometry import as_cloud

MODES = ("squared", "euclidean")
DEFAULT_THRESHOLD = 0.01
EXACT_EMD_CAP = 512
DEFAULT_EMD_EPSILON = 1e-3

# pairs processed per block by the brute-force paths (rows * cols)
_BLOCK = 1 << 22
# relative gap below which two KD-tree candidates count as a possible tie
_TIE_RTOL = 1e-9


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _sq(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # Single source of per-pair arithmetic; brute and accelerated paths both
    # call this so their distances agree bit for bit.
    dx = A[..., 0] - B[..., 0]
    dy = A[..., 1] - B[..., 1]
    dz = A[..., 2] - B[..., 2]
    return dx * dx + dy * dy + dz * dz


def pairwise_sqdist(P, Q) -> np.ndarray:
    P = as_cloud(P)
    Q = as_cloud(Q)
    return _sq(P[:, None, :], Q[None, :, :])


def nearest_brute(P, Q) -> tuple[np.ndarray, np.ndarray]:
    """For each point of ``P``, index of and squared distance to its nearest point in ``Q``.

    Ties go to the lowest index in ``Q``.
    """
    P = as_cloud(P, name="P")
    Q = as_cloud(Q, name="Q")
    idx = np.empty(len(P), dtype=np.intp)
    sqd = np.empty(len(P))
    rows = max(1, _BLOCK // len(Q))
    for s in range(0, len(P), rows):
        D = _sq(P[s : s + rows, None, :], Q[None, :, :])
        j = np.argmin(D, axis=1)
        idx[s : s + rows] = j
        sqd[s : s + rows] = D[np.arange(len(j)), j]
    return idx, sqd


class NearestIndex:
    """KD-tree over a fixed cloud answering exact nearest-neighbour queries.

    Results match :func:`nearest_brute` exactly, including lowest-index tie
    breaking: rows whose two best candidates are within a relative ``1e-9`` of
    each other are re-resolved by brute force.
    """

    def __init__(self, Q):
        self.points = as_cloud(Q, name="Q")
        self._tree = cKDTree(self.points)

    def query(self, P) -> tuple[np.ndarray, np.ndarray]:
        P = as_cloud(P, name="P")
        Q = self.points
        if len(Q) == 1:
            idx = np.zeros(len(P), dtype=np.intp)
            return idx, _sq(P, Q[idx])
        _, cand = self._tree.query(P, k=2)
        d0 = _sq(P, Q[cand[:, 0]])
        d1 = _sq(P, Q[cand[:, 1]])
        idx = np.where(d1 < d0, cand[:, 1], cand[:, 0])
        sqd = np.minimum(d0, d1)
        close = np.abs(d1 - d0) <= _TIE_RTOL * np.maximum(d0, d1) + 1e-300
        if close.any():
            rows = np.flatnonzero(close)
            bi, bd = nearest_brute(P[rows], Q)
            idx[rows] = bi
            sqd[rows] = bd
        return idx, sqd


def nearest_accel(P, Q) -> tuple[np.ndarray, np.ndarray]:
    return NearestIndex(Q).query(P)


def _directed_mean(sqd: np.ndarray, mode: str) -> float:
    if mode == "euclidean":
        return float(np.mean(np.sqrt(sqd)))
    return float(np.mean(sqd))


def chamfer(P, Q, mode: str = "squared") -> float:
    """Brute-force bidirectional Chamfer distance."""
    _check_mode(mode)
    _, a = nearest_brute(P, Q)
    _, b = nearest_brute(Q, P)
    return _directed_mean(a, mode) + _directed_mean(b, mode)


def chamfer_accel(P, Q, mode: str = "squared") -> float:
    """KD-tree Chamfer distance; equal to :func:`chamfer`."""
    _check_mode(mode)
    _, a = nearest_accel(P, Q)
    _, b = nearest_accel(Q, P)
    return _directed_mean(a, mode) + _directed_mean(b, mode)


@dataclass(frozen=True)
class AssignmentPlan:
    """``permutation[i]`` is the gt index matched to pred point ``i``."""

    permutation: np.ndarray
    total_cost: float


def _same_size(P: np.ndarray, Q: np.ndarray) -> None:
    if len(P) != len(Q):
        raise SizeMismatch(f"EMD needs equal sizes, got {len(P)} and {len(Q)}")


def matching_cost(P, Q, permutation) -> float:
    """Correctly rounded sum of ``|P[i] - Q[permutation[i]]|``."""
    P = as_cloud(P)
    Q = as_cloud(Q)
    perm = np.asarray(permutation, dtype=np.intp)
    return math.fsum(np.sqrt(_sq(P, Q[perm])))


def emd_exact(P, Q, cap: int = EXACT_EMD_CAP) -> tuple[float, AssignmentPlan]:
    P = as_cloud(P, name="P")
    Q = as_cloud(Q, name="Q")
    _same_size(P, Q)
    n = len(P)
    if n > cap:
        raise TooLarge(f"{n} points exceeds exact EMD cap {cap}; use emd_approx")
    C = np.sqrt(pairwise_sqdist(P, Q))
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(n, dtype=np.intp)
    perm[rows] = cols
    total = matching_cost(P, Q, perm)
    return total / n, AssignmentPlan(perm, total)


def _multiset_equal(P: np.ndarray, Q: np.ndarray) -> bool:
    a = P[np.lexsort(P.T[::-1])]
    b = Q[np.lexsort(Q.T[::-1])]
    return bool(np.array_equal(a, b))


def _auction_phase(C, prices, eps, max_rounds):
    """Jacobi auction at fixed ``eps``; mutates ``prices``."""
    n = C.shape[0]
    owner = np.full(n, -1, dtype=np.intp)  # object -> bidder
    assigned = np.full(n, -1, dtype=np.intp)  # bidder -> object
    unassigned = np.arange(n)
    rounds = 0
    while unassigned.size:
        rounds += 1
        if rounds > max_rounds:
            raise NonConvergence(f"auction did not finish in {max_rounds} rounds at eps={eps:g}")
        vals = -C[unassigned] - prices
        r = np.arange(unassigned.size)
        j1 = np.argmax(vals, axis=1)
        v1 = vals[r, j1]
        vals[r, j1] = -np.inf
        v2 = vals.max(axis=1)
        bids = prices[j1] + (v1 - v2) + eps
        # highest bid per object wins; equal bids go to the lowest bidder
        order = np.lexsort((unassigned, -bids, j1))
        j_sorted = j1[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = j_sorted[1:] != j_sorted[:-1]
        win = order[first]
        objs = j1[win]
        bidders = unassigned[win]
        losers = owner[objs]
        losers = losers[losers >= 0]
        assigned[losers] = -1
        owner[objs] = bidders
        assigned[bidders] = objs
        prices[objs] = bids[win]
        unassigned = np.flatnonzero(assigned < 0)
    return assigned, rounds


def auction_assignment(C, epsilon: float, *, scale_factor: float = 5.0, max_rounds: int = 200_000):
    """Minimum-cost assignment by epsilon-scaled auction.

    Returns ``(permutation, rounds)``. The total cost of the returned
    permutation is within ``n * epsilon`` of the optimum.
    """
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if n == 1:
        return np.zeros(1, dtype=np.intp), 0
    prices = np.zeros(n)
    eps = max(float(C.max()) / 2.0, epsilon)
    total_rounds = 0
    while True:
        perm, rounds = _auction_phase(C, prices, eps, max_rounds - total_rounds)
        total_rounds += rounds
        if eps <= epsilon:
            return perm, total_rounds
        eps = max(eps / scale_factor, epsilon)


def emd_approx(P, Q, epsilon: float = DEFAULT_EMD_EPSILON, *, max_rounds: int = 200_000) -> float:
    """Approximate EMD with additive error at most ``epsilon`` on the mean."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    P = as_cloud(P, name="P")
    Q = as_cloud(Q, name="Q")
    _same_size(P, Q)
    if _multiset_equal(P, Q):
        return 0.0
    C = np.sqrt(pairwise_sqdist(P, Q))
    perm, _ = auction_assignment(C, epsilon, max_rounds=max_rounds)
    return matching_cost(P, Q, perm) / len(P)


def emd(P, Q, method: str = "auto", epsilon: float = DEFAULT_EMD_EPSILON,
        cap: int = EXACT_EMD_CAP) -> tuple[float, float, str]:
    """EMD with automatic solver choice. Returns ``(value, bound, method_used)``.

    ``method="skip"`` returns NaN without touching the clouds, for pairs whose
    sizes differ.
    """
    if method == "skip":
        return float("nan"), 0.0, "skip"
    n = len(as_cloud(P))
    if method == "auto":
        method = "exact" if n <= cap else "approx"
    if method == "exact":
        return emd_exact(P, Q, cap=cap)[0], 0.0, "exact"
    if method == "approx":
        return emd_approx(P, Q, epsilon), epsilon, "approx"
    raise ValueError(f"unknown EMD method {method!r}")


def _precision(P, Q, threshold: float) -> float:
    _, sqd = nearest_accel(P, Q)
    return float(np.count_nonzero(np.sqrt(sqd) <= threshold)) / len(sqd)


def fscore(P, Q, threshold: float = DEFAULT_THRESHOLD) -> float:
    """F-Score at ``threshold``; a point counts when its nearest neighbour is within ``threshold`` (inclusive)."""
    if not threshold > 0:
        raise NonPositiveThreshold(f"threshold must be positive, got {threshold}")
    precision = _precision(P, Q, threshold)
    recall = _precision(Q, P, threshold)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricReport:
    cd: float
    emd: float
    fscore: float
    threshold: float
    n_pred: int
    n_gt: int
    cd_mode: str = "squared"
    emd_method: str = "exact"
    emd_bound: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def cd_x1e3(self) -> float:
        return self.cd * 1e3

    @property
    def emd_x1e2(self) -> float:
        return self.emd * 1e2

    def display(self) -> tuple[str, str, str]:
        """Table-scaled values as printed: CD x 1e3, EMD x 1e2, F-Score, two decimals."""
        return (fmt2(self.cd_x1e3), fmt2(self.emd_x1e2), fmt2(self.fscore))


def fmt2(x: float) -> str:
    if x != x:
        return "n/a"
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def report(P, Q, threshold: float = DEFAULT_THRESHOLD, *, cd_mode: str = "squared",
           emd_method: str = "auto", epsilon: float = DEFAULT_EMD_EPSILON,
           cap: int = EXACT_EMD_CAP) -> MetricReport:
    P = as_cloud(P, name="pred")
    Q = as_cloud(Q, name="gt")
    f = fscore(P, Q, threshold)
    cd = chamfer_accel(P, Q, cd_mode)
    e, bound, used = emd(P, Q, emd_method, epsilon, cap)
    return MetricReport(cd=cd, emd=e, fscore=f, threshold=float(threshold),
                        n_pred=len(P), n_gt=len(Q), cd_mode=cd_mode,
                        emd_method=used, emd_bound=bound)


__all__ = [
    "AssignmentPlan", "MetricReport", "NearestIndex", "chamfer", "chamfer_accel",
    "emd", "emd_approx", "emd_exact", "fscore", "matching_cost", "nearest_accel",
    "nearest_brute", "pairwise_sqdist", "report", "auction_assignment",
]
