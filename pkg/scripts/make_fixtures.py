"""Regenerate the small fixture corpus under tests/data.

    python scripts/make_fixtures.py

Everything is seeded, so rerunning reproduces the committed files.
"""

from pathlib import Path

import numpy as np

from symmpoint.geometry import make_plane, reflect_cloud
from symmpoint.io import TriangleMesh, save_cloud, save_mesh_obj

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"


def cube_corners():
    return np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])


def mirrored(n_half=512, seed=7):
    rng = np.random.default_rng(seed)
    H = rng.random((n_half, 3)) * [0.5, 1.0, 0.6] + [0.0, -0.5, -0.3]
    return np.concatenate([H, reflect_cloud(make_plane([1, 0, 0], 0), H)])


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    C = cube_corners()
    save_cloud(C, DATA / "cube.xyz")
    save_cloud(C[C[:, 0] > 0], DATA / "half_cube.xyz")
    save_cloud(mirrored(), DATA / "mirrored.xyz")
    save_cloud(C[:3], DATA / "three.xyz")

    # unit square in z = 0 as two triangles
    square = TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    save_mesh_obj(square, DATA / "square.obj")

    # hand-checkable pair: squared CD 0.0009, EMD 0.015, F-Score 0.5 at 0.01
    save_cloud([[0, 0, 0], [1, 0, 0]], DATA / "golden_pred.xyz")
    save_cloud([[0.03, 0, 0], [1, 0, 0]], DATA / "golden_gt.xyz")

    rng = np.random.default_rng(11)
    batch = DATA / "batch"
    (batch / "pred").mkdir(parents=True, exist_ok=True)
    (batch / "gt").mkdir(parents=True, exist_ok=True)
    rows = ["id,category,pred,gt"]
    for cat in ("chair", "table"):
        for k in range(2):
            ident = f"{cat}_{k}"
            gt = rng.random((64, 3)) - 0.5
            pred = gt + rng.normal(scale=0.02, size=gt.shape)
            save_cloud(pred, batch / "pred" / f"{ident}.xyz")
            save_cloud(gt, batch / "gt" / f"{ident}.xyz")
            rows.append(f"{ident},{cat},{ident}.xyz,{ident}.xyz")
    (batch / "pairs.csv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
