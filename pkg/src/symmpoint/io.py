"""Point cloud and mesh files, surface sampling, normalization, report CSVs.

Supported formats:

* ``xyz``: one ``x y z`` triple per line; ``#`` starts a comment.
* ``ply``: ascii or binary little-endian; ``x``/``y``/``z`` are read from the
  ``vertex`` element and everything else is skipped. Faces are read from
  ``vertex_indices`` / ``vertex_index`` lists when loading meshes.
* ``obj``: ``v`` lines (and ``f`` lines for meshes); everything else ignored.

Ascii output uses Python's shortest round-trip float repr, so ascii files
round-trip exactly as well.
"""

from __future__ import annotations

import csv
import io as _io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateCloud, EmptyCloud, NoSurface, ParseError, UnsupportedFormat
from .geometry import as_cloud

FORMATS = ("xyz", "ply", "obj")
REPORT_HEADER = ["id", "category", "cd_raw", "cd_x1e3", "emd_raw", "emd_x1e2",
                 "fscore", "threshold", "n_points"]

_EXT = {".xyz": "xyz", ".txt": "xyz", ".pts": "xyz", ".ply": "ply", ".obj": "obj"}

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def detect_format(path, fmt: str | None = None) -> str:
    if fmt is not None:
        if fmt == "obj_vertices":
            return "obj"
        if fmt not in FORMATS:
            raise UnsupportedFormat(f"unknown format {fmt!r}")
        return fmt
    ext = Path(path).suffix.lower()
    if ext not in _EXT:
        raise UnsupportedFormat(f"cannot infer format from extension {ext!r}")
    return _EXT[ext]


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        F = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("face index out of range")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "faces", F)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


# --- parsing -----------------------------------------------------------------

def _parse_xyz(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 3:
            raise ParseError("expected 3 coordinates", f"line {lineno}")
        try:
            rows.append([float(v) for v in parts[:3]])
        except ValueError:
            raise ParseError(f"bad number in {line!r}", f"line {lineno}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _parse_obj(text: str) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    k = int(tok.split("/")[0])
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                if len(idx) < 3:
                    raise ValueError
                # fan-triangulate polygons
                faces.extend([idx[0], idx[i], idx[i + 1]] for i in range(1, len(idx) - 1))
        except ValueError:
            raise ParseError(f"malformed {parts[0]!r} line", f"line {lineno}") from None
    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    F = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return V, F


def _ply_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("missing ply magic or end_header", "byte 0")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements = []  # (name, count, [(prop, dtype) | (prop, ("list", count_t, item_t))])
    for lineno, raw in enumerate(data[:end].decode("ascii", "replace").splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        try:
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        except (IndexError, KeyError, ValueError):
            raise ParseError(f"bad header line {raw!r}", f"line {lineno}") from None
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormat(f"unsupported PLY format {fmt!r}")
    return fmt, elements, body_start


def _parse_ply(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    fmt, elements, pos = _ply_header(data)
    verts = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    if fmt == "ascii":
        lines = data[pos:].decode("ascii", "replace").splitlines()
        li = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                while li < len(lines) and not lines[li].strip():
                    li += 1
                if li >= len(lines):
                    raise ParseError(f"unexpected end of {name} data", f"body line {li + 1}")
                toks = lines[li].split()
                li += 1
                rec, t = {}, 0
                try:
                    for pname, ptype in props:
                        if isinstance(ptype, tuple):
                            k = int(toks[t])
                            rec[pname] = [int(float(v)) for v in toks[t + 1 : t + 1 + k]]
                            t += 1 + k
                        else:
                            rec[pname] = float(toks[t])
                            t += 1
                except (IndexError, ValueError):
                    raise ParseError(f"malformed {name} record", f"body line {li}") from None
                rows.append(rec)
            verts, faces = _collect(name, rows, verts, faces, li)
        return verts, faces

    for name, count, props in elements:
        if all(not isinstance(t, tuple) for _, t in props):
            dt = np.dtype([(p, "<" + t) for p, t in props])
            need = dt.itemsize * count
            if pos + need > len(data):
                raise ParseError(f"truncated {name} data", f"byte {pos}")
            arr = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            pos += need
            if name == "vertex":
                verts = _xyz_from(arr, pos)
            continue
        rows = []
        for _ in range(count):
            rec = {}
            for pname, ptype in props:
                try:
                    if isinstance(ptype, tuple):
                        _, ct, it = ptype
                        k = int(np.frombuffer(data, "<" + ct, 1, pos)[0])
                        pos += np.dtype(ct).itemsize
                        rec[pname] = np.frombuffer(data, "<" + it, k, pos).astype(np.int64).tolist()
                        pos += k * np.dtype(it).itemsize
                    else:
                        rec[pname] = float(np.frombuffer(data, "<" + ptype, 1, pos)[0])
                        pos += np.dtype(ptype).itemsize
                except ValueError:
                    raise ParseError(f"truncated {name} data", f"byte {pos}") from None
            rows.append(rec)
        verts, faces = _collect(name, rows, verts, faces, pos)
    return verts, faces


def _xyz_from(arr, where) -> np.ndarray:
    names = arr.dtype.names or ()
    if not all(c in names for c in "xyz"):
        raise ParseError("vertex element lacks x/y/z", f"byte {where}")
    return np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)


def _collect(name, rows, verts, faces, where):
    if name == "vertex":
        try:
            verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64).reshape(-1, 3)
        except KeyError:
            raise ParseError("vertex element lacks x/y/z", str(where)) from None
    elif name == "face":
        tri = []
        for r in rows:
            idx = r.get("vertex_indices", r.get("vertex_index"))
            if idx is None:
                raise ParseError("face element lacks vertex_indices", str(where))
            tri.extend([idx[0], idx[i], idx[i + 1]] for i in range(1, len(idx) - 1))
        faces = np.array(tri, dtype=np.int64).reshape(-1, 3)
    return verts, faces


def _read(path, fmt):
    fmt = detect_format(path, fmt)
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc
    if fmt == "ply":
        return _parse_ply(data)
    text = data.decode("utf-8", "replace")
    if fmt == "obj":
        return _parse_obj(text)
    return _parse_xyz(text), np.zeros((0, 3), dtype=np.int64)


def load_cloud(path, format: str | None = None) -> np.ndarray:
    """Points of a cloud file in file order. ``format`` defaults to the extension."""
    V, _ = _read(path, format)
    if len(V) == 0:
        raise EmptyCloud(f"{path} contains no points")
    return as_cloud(V, name=str(path))


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    V, F = _read(path, format)
    return TriangleMesh(V, F)


# --- writing -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_cloud(P, path, format: str | None = None, *, binary: bool = True) -> None:
    """Write a cloud. PLY is binary little-endian unless ``binary=False``."""
    P = as_cloud(P)
    fmt = detect_format(path, format)
    if fmt == "ply":
        head = (f"ply\nformat {'binary_little_endian' if binary else 'ascii'} 1.0\n"
                f"element vertex {len(P)}\nproperty double x\nproperty double y\n"
                "property double z\nend_header\n").encode("ascii")
        if binary:
            body = np.ascontiguousarray(P, dtype="<f8").tobytes()
        else:
            body = "".join(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in P).encode("ascii")
        Path(path).write_bytes(head + body)
        return
    prefix = "v " if fmt == "obj" else ""
    text = "".join(f"{prefix}{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in P)
    Path(path).write_text(text)


def save_mesh_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# --- sampling and normalization -------------------------------------------------

def sample_mesh(mesh: TriangleMesh, n: int = 2048, seed: int = 0) -> np.ndarray:
    """``n`` points uniform over the surface area of ``mesh``.

    Faces are drawn with replacement, proportional to area; a point inside a
    face uses ``(1 - sqrt(r1), sqrt(r1)(1 - r2), sqrt(r1) r2)`` barycentrics.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    areas = mesh.face_areas()
    total = float(areas.sum()) if len(areas) else 0.0
    if not total > 0:
        raise NoSurface("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (mesh.vertices[mesh.faces[face, k]] for k in range(3))
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c


@dataclass(frozen=True)
class NormalizationRecord:
    center: np.ndarray
    scale: float
    convention: str

    def apply(self, P) -> np.ndarray:
        return (as_cloud(P) - self.center) / self.scale

    def invert(self, P) -> np.ndarray:
        return as_cloud(P) * self.scale + self.center


def normalize(P, convention: str = "unit_cube") -> tuple[np.ndarray, NormalizationRecord]:
    """Center and scale ``P``.

    ``unit_cube``: bounding box centred at the origin, longest side 1.
    ``unit_sphere``: centroid at the origin, farthest point at radius 1.
    A cloud with zero extent under ``unit_cube`` keeps scale 1.
    """
    P = as_cloud(P)
    if convention == "unit_cube":
        lo, hi = P.min(axis=0), P.max(axis=0)
        center = (lo + hi) / 2
        extent = float((hi - lo).max())
        scale = extent if extent > 0 else 1.0
    elif convention == "unit_sphere":
        center = P.mean(axis=0)
        scale = float(np.linalg.norm(P - center, axis=1).max())
        if not scale > 0:
            raise DegenerateCloud("all points coincide")
    else:
        raise ValueError(f"unknown convention {convention!r}")
    rec = NormalizationRecord(center, scale, convention)
    return rec.apply(P), rec


# --- reports -------------------------------------------------------------------

def report_row(report, id: str = "", category: str = "") -> dict:
    from .metrics import fmt2
    return {
        "id": id,
        "category": category,
        "cd_raw": _fmt(report.cd),
        "cd_x1e3": fmt2(report.cd_x1e3),
        "emd_raw": _fmt(report.emd),
        "emd_x1e2": fmt2(report.emd_x1e2),
        "fscore": _fmt(report.fscore),
        "threshold": _fmt(report.threshold),
        "n_points": str(report.n_pred),
    }


def format_report_csv(rows, *, extra_columns=()) -> str:
    """CSV text for ``rows`` (dicts keyed by the report header)."""
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_HEADER + list(extra_columns),
                       lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def save_report(reports, path, *, extra_columns=()) -> None:
    """Write report rows as CSV.

    ``reports`` holds ``MetricReport`` objects, ``(id, category, report)``
    triples, or ready-made row dicts.
    """
    rows = []
    for i, r in enumerate(reports):
        if isinstance(r, dict):
            rows.append(r)
        elif isinstance(r, tuple):
            rows.append(report_row(r[2], r[0], r[1]))
        else:
            rows.append(report_row(r, str(i)))
    text = format_report_csv(rows, extra_columns=extra_columns)
    with open(os.fspath(path), "w", newline="") as fh:
        fh.write(text)
