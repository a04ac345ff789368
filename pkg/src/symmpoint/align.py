"""Feature alignment arithmetic: cosine similarity, dense correspondences,
and the channel-reduction rule.

Feature grids are ``(H, W, D)`` float arrays. On disk they use a small binary
container: four little-endian uint32 (magic, H, W, D) followed by ``H*W*D``
little-endian float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonFinite, NonPositive, ParseError, ZeroVector

GRID_MAGIC = 0x31474653  # b"SFG1" read as little-endian uint32
_HEADER = struct.Struct("<4I")


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatch(f"lengths differ: {a.size} vs {b.size}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NonFinite("feature vector contains NaN or Inf")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def _as_grid(G, name):
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 3:
        raise DimensionMismatch(f"{name} must be (H, W, D), got shape {G.shape}")
    if not np.isfinite(G).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return G


def correspondence_map(A, B) -> tuple[np.ndarray, np.ndarray]:
    """Match every cell of ``A`` to its most similar cell of ``B``.

    Returns ``(index, similarity)``, both shaped ``(H_A, W_A)``; ``index``
    holds flat row-major indices into ``B``. Ties go to the lowest index.
    Zero vectors cannot be normalized and raise :class:`ZeroVector`.
    """
    A = _as_grid(A, "A")
    B = _as_grid(B, "B")
    if A.shape[2] != B.shape[2]:
        raise DimensionMismatch(f"feature sizes differ: {A.shape[2]} vs {B.shape[2]}")
    a = A.reshape(-1, A.shape[2])
    b = B.reshape(-1, B.shape[2])
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if (na == 0).any() or (nb == 0).any():
        raise ZeroVector("feature grid contains a zero vector")
    S = np.clip((a / na[:, None]) @ (b / nb[:, None]).T, -1.0, 1.0)
    idx = np.argmax(S, axis=1)
    sim = S[np.arange(len(idx)), idx]
    return idx.reshape(A.shape[:2]), sim.reshape(A.shape[:2])


def channel_reduction(in_channels: int, factor: int) -> int:
    if in_channels < 1 or factor < 1:
        raise NonPositive(f"need in_channels >= 1 and factor >= 1, got {in_channels}, {factor}")
    return max(1, in_channels // factor)


def save_feature_grid(G, path) -> None:
    G = np.asarray(G)
    if G.ndim != 3:
        raise DimensionMismatch(f"grid must be (H, W, D), got shape {G.shape}")
    H, W, D = G.shape
    body = np.ascontiguousarray(G, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(GRID_MAGIC, H, W, D) + body)


def load_feature_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError("file shorter than header", f"byte {len(data)}")
    magic, H, W, D = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise ParseError(f"bad magic 0x{magic:08x}", "byte 0")
    need = _HEADER.size + 4 * H * W * D
    if len(data) != need:
        raise ParseError(f"expected {need} bytes, found {len(data)}", f"byte {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(H, W, D).astype(np.float32)
