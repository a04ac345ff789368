"""Mirror planes and the reflections they induce.

A plane is ``n . x + d = 0`` with ``n`` a unit vector. Reflection about it is
the affine map ``p -> p - 2 (n . p + d) n``, whose linear part is
``R = I - 2 n n^T`` and whose translation is ``-2 d n``. The affine form is
what every function here evaluates; ``R`` alone is only the whole story when
the plane passes through the origin.

Point clouds are plain ``(N, 3)`` float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud, NonFinite, ZeroNormal

_ZERO_NORM = 1e-12
# components below this magnitude are ignored when choosing the normal's sign
_SIGN_EPS = 1e-12


def as_cloud(points, *, name: str = "cloud") -> np.ndarray:
    """Validate and coerce ``points`` to a read-only ``(N, 3)`` float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptyCloud(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


def _as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"point must have 3 components, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFinite("point contains NaN or Inf")
    return arr


def _canonical_sign(n: np.ndarray) -> float:
    for c in n:
        if abs(c) > _SIGN_EPS:
            return 1.0 if c > 0 else -1.0
    return 1.0


@dataclass(frozen=True, eq=False)
class SymmetryPlane:
    """Plane ``normal . x + offset = 0``.

    The constructor rescales ``(normal, offset)`` so that ``normal`` has unit
    length and flips both so that the first nonzero normal component is
    positive. The geometric plane is unchanged by either step.
    """

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.normal, dtype=np.float64).reshape(-1)
        if v.shape != (3,):
            raise ValueError(f"normal must have 3 components, got {v.shape}")
        d = float(self.offset)
        if not (np.isfinite(v).all() and np.isfinite(d)):
            raise NonFinite("plane parameters contain NaN or Inf")
        norm = float(np.linalg.norm(v))
        if norm < _ZERO_NORM:
            raise ZeroNormal(f"normal has norm {norm:.3g}")
        n = v / norm
        d = d / norm
        s = _canonical_sign(n)
        n = s * n
        d = s * d
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", d + 0.0)  # +0.0 folds -0.0

    def signed_distance(self, points) -> np.ndarray:
        return as_cloud(points) @ self.normal + self.offset

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (*map(float, self.normal), self.offset)

    def __eq__(self, other):
        if not isinstance(other, SymmetryPlane):
            return NotImplemented
        return bool(np.array_equal(self.normal, other.normal)) and self.offset == other.offset

    def __hash__(self):
        return hash(self.as_tuple())

    def __repr__(self):
        nx, ny, nz, d = self.as_tuple()
        return f"SymmetryPlane(normal=({nx:.6g}, {ny:.6g}, {nz:.6g}), offset={d:.6g})"


@dataclass(frozen=True, eq=False)
class ReflectionTransform:
    """Affine mirror map ``p -> linear @ p + translation``."""

    linear: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        P = as_cloud(points)
        return P @ self.linear.T + self.translation


def make_plane(normal, offset: float = 0.0) -> SymmetryPlane:
    return SymmetryPlane(normal, offset)


def plane_through(normal, point) -> SymmetryPlane:
    """Plane with the given normal containing ``point``."""
    n = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm < _ZERO_NORM:
        raise ZeroNormal(f"normal has norm {norm:.3g}")
    n = n / norm
    return SymmetryPlane(n, -float(n @ _as_point(point)))


def reflection_matrix(plane: SymmetryPlane) -> ReflectionTransform:
    n = plane.normal
    R = np.eye(3) - 2.0 * np.outer(n, n)
    t = -2.0 * plane.offset * n
    R.flags.writeable = False
    t.flags.writeable = False
    return ReflectionTransform(R, t)


def reflect_point(plane: SymmetryPlane, p) -> np.ndarray:
    p = _as_point(p)
    n = plane.normal
    return p - 2.0 * (n @ p + plane.offset) * n


def reflect_cloud(plane: SymmetryPlane, P) -> np.ndarray:
    """Reflect every point of ``P``; row ``i`` of the result mirrors row ``i``."""
    P = as_cloud(P)
    n = plane.normal
    s = P @ n + plane.offset
    return P - 2.0 * s[:, None] * n


def angle_between(n1, n2) -> float:
    """Angle in degrees between two plane normals, ignoring orientation."""
    a = np.asarray(n1, dtype=np.float64)
    b = np.asarray(n2, dtype=np.float64)
    c = abs(float(a @ b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(min(1.0, c))))
