"""Command-line entry point.

Exit codes: 0 success, 2 parse/IO error, 3 metric or geometry precondition
failure, 4 plane fit did not converge (best plane still printed).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EmptyCloud, ParseError, SymmPointError, UnsupportedFormat
from .geometry import SymmetryPlane
from .io import (
    REPORT_HEADER, format_report_csv, load_mesh, normalize, report_row, sample_mesh, save_cloud,
)
from .metrics import DEFAULT_EMD_EPSILON, DEFAULT_THRESHOLD, fmt2, report
from .symfit import FitConfig, fit_plane, symmetrize
from .symloss import symmetry_residual

REPORT_TAG = "# symmpoint-report v1"
DEFAULT_SAMPLE_N = 2048

EXIT_OK, EXIT_IO, EXIT_PRECONDITION, EXIT_UNCONVERGED = 0, 2, 3, 4


class InputError(Exception):
    """Wraps load failures so they exit with the IO code."""


@dataclass
class RunManifest:
    command: str
    inputs: list[str]
    config_hash: str
    seed: int | None
    version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    config: dict = field(default_factory=dict)


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(out_path, command, inputs, config, seed=None) -> Path:
    m = RunManifest(command, [str(p) for p in inputs], _config_hash(config), seed, config=config)
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(asdict(m), indent=2, sort_keys=True) + "\n")
    return path


def load_points(path, n: int = DEFAULT_SAMPLE_N, seed: int = 0) -> np.ndarray:
    """Cloud from ``path``; files carrying faces are surface-sampled to ``n`` points."""
    try:
        mesh = load_mesh(path)
    except (ParseError, UnsupportedFormat, OSError) as exc:
        raise InputError(str(exc)) from exc
    if len(mesh.faces):
        return sample_mesh(mesh, n, seed)
    if len(mesh.vertices) == 0:
        raise InputError(str(EmptyCloud(f"{path} contains no points")))
    return mesh.vertices


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- metrics -------------------------------------------------------------------

def compute_pair(pred, gt, *, threshold, cd_mode, emd_method, epsilon, normalize_mode):
    if normalize_mode != "none":
        gt, rec = normalize(gt, normalize_mode)
        pred = rec.apply(pred)
    return report(pred, gt, threshold, cd_mode=cd_mode, emd_method=emd_method, epsilon=epsilon)


def _metric_opts(p):
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--cd-mode", choices=("squared", "euclidean"), default="squared")
    p.add_argument("--emd", choices=("auto", "exact", "approx", "skip"), default="auto",
                   help="skip omits EMD, e.g. for clouds of different sizes")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EMD_EPSILON,
                   help="auction epsilon for approximate EMD")
    p.add_argument("--normalize", choices=("unit_cube", "unit_sphere", "none"), default="unit_cube",
                   help="normalize gt and apply the same map to pred")
    p.add_argument("--n", type=int, default=DEFAULT_SAMPLE_N, help="points sampled from mesh inputs")
    p.add_argument("--seed", type=int, default=0)


def format_metrics_text(rep, pred_path, gt_path, normalize_mode) -> str:
    cd, emd, f = rep.display()
    lines = [
        REPORT_TAG,
        f"# cd: bidirectional mean nearest-neighbour distance ({rep.cd_mode}), table value x1e3",
        f"# emd: mean matched-pair distance ({rep.emd_method}, bound {rep.emd_bound!r}), table value x1e2",
        f"# normalize: {normalize_mode}",
        f"pred: {pred_path} ({rep.n_pred} points)",
        f"gt: {gt_path} ({rep.n_gt} points)",
        f"cd_raw: {rep.cd!r}",
        f"emd_raw: {rep.emd!r}",
        f"fscore_raw: {rep.fscore!r}",
        f"threshold: {rep.threshold!r}",
        f"CD(x1e3) EMD(x1e2) F-Score: {cd} {emd} {f}",
    ]
    return "\n".join(lines) + "\n"


def cmd_metrics(args) -> int:
    pred = load_points(args.pred, args.n, args.seed)
    gt = load_points(args.gt, args.n, args.seed)
    rep = compute_pair(pred, gt, threshold=args.threshold, cd_mode=args.cd_mode,
                       emd_method=args.emd, epsilon=args.epsilon, normalize_mode=args.normalize)
    if args.json:
        cd, emd, f = rep.display()
        payload = {
            "format": REPORT_TAG[2:],
            "pred": args.pred, "gt": args.gt,
            "cd_raw": rep.cd, "emd_raw": None if rep.emd_method == "skip" else rep.emd,
            "fscore": rep.fscore,
            "cd_x1e3": cd, "emd_x1e2": emd, "fscore_display": f,
            "threshold": rep.threshold, "cd_mode": rep.cd_mode,
            "emd_method": rep.emd_method, "emd_bound": rep.emd_bound,
            "normalize": args.normalize, "n_pred": rep.n_pred, "n_gt": rep.n_gt,
        }
        text = json.dumps(payload, indent=2) + "\n"
    elif args.csv:
        text = REPORT_TAG + "\n" + format_report_csv([report_row(rep, Path(args.pred).stem, "")])
    else:
        text = format_metrics_text(rep, args.pred, args.gt, args.normalize)
    _emit(text, args.out)
    return EXIT_OK


# --- fit-plane / symmetrize ------------------------------------------------------

def _fit_config(args) -> FitConfig:
    return FitConfig(restarts=args.restarts, fit_offset=args.fit_offset,
                     max_iters=args.max_iters, mode=args.mode)


def cmd_fit_plane(args) -> int:
    P = load_points(args.cloud)
    res = fit_plane(P, _fit_config(args))
    nx, ny, nz, d = res.plane.as_tuple()
    if args.trace_out:
        rows = "".join(f"{i},{r!r}\n" for i, r in res.trace)
        Path(args.trace_out).write_text("iteration,residual\n" + rows)
    if args.json:
        text = json.dumps({
            "format": REPORT_TAG[2:], "normal": [nx, ny, nz], "offset": d,
            "residual": res.residual, "converged": res.converged,
            "iterations": res.iterations, "seed_id": res.seed_id,
        }, indent=2) + "\n"
    else:
        text = (f"{REPORT_TAG}\nnormal: {nx!r} {ny!r} {nz!r}\noffset: {d!r}\n"
                f"residual: {res.residual!r}\nconverged: {str(res.converged).lower()}\n"
                f"iterations: {res.iterations}\nseed_id: {res.seed_id}\n")
    sys.stdout.write(text)
    return EXIT_OK if res.converged else EXIT_UNCONVERGED


def _parse_plane(text: str) -> SymmetryPlane:
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad plane {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError('plane needs four numbers "nx ny nz d"')
    return SymmetryPlane(vals[:3], vals[3])


def cmd_symmetrize(args) -> int:
    P = load_points(args.cloud)
    status = EXIT_OK
    if args.plane is not None:
        plane = _parse_plane(args.plane)
    else:
        res = fit_plane(P, _fit_config(args))
        plane = res.plane
        if not res.converged:
            status = EXIT_UNCONVERGED
    before = symmetry_residual(P, plane, args.mode)
    out = symmetrize(P, plane, args.strategy)
    after = symmetry_residual(out, plane, args.mode)
    try:
        save_cloud(out, args.out)
    except (UnsupportedFormat, OSError) as exc:
        raise InputError(str(exc)) from exc
    nx, ny, nz, d = plane.as_tuple()
    sys.stdout.write(
        f"{REPORT_TAG}\nplane: {nx!r} {ny!r} {nz!r} {d!r}\nstrategy: {args.strategy}\n"
        f"points: {len(P)} -> {len(out)}\nresidual_before: {before!r}\nresidual_after: {after!r}\n"
    )
    return status


# --- eval-batch ------------------------------------------------------------------

def _threads() -> int:
    raw = os.environ.get("SYMM_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def read_pairs(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(str(exc)) from exc
    for lineno, r in enumerate(rows, 2):
        if not all(r.get(k) for k in ("id", "pred", "gt")):
            raise InputError(str(ParseError("manifest row needs id, pred and gt", f"line {lineno}")))
        r.setdefault("category", "")
        r["category"] = r["category"] or ""
    return rows


def _mean_row(ident, category, reps) -> dict:
    cd = float(np.mean([r.cd for r in reps]))
    emd = float(np.mean([r.emd for r in reps]))
    f = float(np.mean([r.fscore for r in reps]))
    return {
        "id": ident, "category": category,
        "cd_raw": repr(cd), "cd_x1e3": fmt2(cd * 1e3),
        "emd_raw": repr(emd), "emd_x1e2": fmt2(emd * 1e2),
        "fscore": repr(f), "threshold": repr(reps[0].threshold), "n_points": "",
    }


def eval_batch(pred_dir, gt_dir, pairs, *, threshold=DEFAULT_THRESHOLD, cd_mode="squared",
               emd_method="auto", epsilon=DEFAULT_EMD_EPSILON, normalize_mode="unit_cube",
               n=DEFAULT_SAMPLE_N, seed=0, per_category=False, threads=1):
    """Evaluate manifest ``pairs``; returns ``(rows, n_ok)`` in output order."""

    def one(r):
        try:
            pred = load_points(Path(pred_dir) / r["pred"], n, seed)
            gt = load_points(Path(gt_dir) / r["gt"], n, seed)
            return compute_pair(pred, gt, threshold=threshold, cd_mode=cd_mode,
                                emd_method=emd_method, epsilon=epsilon,
                                normalize_mode=normalize_mode), ""
        except (InputError, SymmPointError, ValueError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(r) for r in pairs]

    rows = []
    for r, (rep, err) in zip(pairs, results):
        if rep is None:
            rows.append({"id": r["id"], "category": r["category"], "threshold": repr(float(threshold)),
                         "error": err})
        else:
            row = report_row(rep, r["id"], r["category"])
            row["error"] = ""
            rows.append(row)
    ok = [(r["category"], rep) for r, (rep, _) in zip(pairs, results) if rep is not None]
    if per_category:
        cats = list(dict.fromkeys(c for c, _ in ok))
        for c in cats:
            rows.append(_mean_row("mean", c, [rep for cc, rep in ok if cc == c]))
    if ok:
        rows.append(_mean_row("mean", "Average", [rep for _, rep in ok]))
    return rows, len(ok)


def cmd_eval_batch(args) -> int:
    pairs = read_pairs(args.pairs)
    config = {k: getattr(args, k) for k in ("threshold", "cd_mode", "emd", "epsilon",
                                            "normalize", "n", "seed", "per_category")}
    rows, n_ok = eval_batch(args.pred_dir, args.gt_dir, pairs, threshold=args.threshold,
                            cd_mode=args.cd_mode, emd_method=args.emd, epsilon=args.epsilon,
                            normalize_mode=args.normalize, n=args.n, seed=args.seed,
                            per_category=args.per_category, threads=_threads())
    text = format_report_csv(rows, extra_columns=["error"])
    if args.out:
        Path(args.out).write_text(text)
        write_manifest(args.out, "eval-batch", [args.pred_dir, args.gt_dir, args.pairs],
                       config, args.seed)
    else:
        sys.stdout.write(text)
    return EXIT_OK if n_ok or not pairs else EXIT_PRECONDITION


# --- sample --------------------------------------------------------------------------

def cmd_sample(args) -> int:
    try:
        mesh = load_mesh(args.mesh)
    except (ParseError, UnsupportedFormat, OSError) as exc:
        raise InputError(str(exc)) from exc
    P = sample_mesh(mesh, args.n, args.seed)
    try:
        save_cloud(P, args.out)
    except (UnsupportedFormat, OSError) as exc:
        raise InputError(str(exc)) from exc
    write_manifest(args.out, "sample", [args.mesh], {"n": args.n, "seed": args.seed}, args.seed)
    sys.stdout.write(f"{REPORT_TAG}\nwrote {len(P)} points to {args.out} (seed {args.seed})\n")
    return EXIT_OK


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symmpoint", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"symmpoint {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="CD / EMD / F-Score between two clouds")
    p.add_argument("pred")
    p.add_argument("gt")
    _metric_opts(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--json", action="store_true")
    g.add_argument("--csv", action="store_true")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_metrics)

    def fit_opts(p):
        p.add_argument("--restarts", type=int, default=8)
        p.add_argument("--max-iters", type=int, default=300)
        p.add_argument("--fit-offset", action="store_true")
        p.add_argument("--mode", choices=("squared", "euclidean"), default="squared")

    p = sub.add_parser("fit-plane", help="estimate a mirror plane")
    p.add_argument("cloud")
    fit_opts(p)
    p.add_argument("--trace-out", help="CSV of (iteration, residual)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_fit_plane)

    p = sub.add_parser("symmetrize", help="complete a cloud with its mirror image")
    p.add_argument("cloud")
    p.add_argument("out")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--plane", help='"nx ny nz d"')
    g.add_argument("--auto", action="store_true", help="fit the plane first")
    p.add_argument("--strategy", choices=("union", "replace_worse_half"), default="union")
    fit_opts(p)
    p.set_defaults(func=cmd_symmetrize)

    p = sub.add_parser("eval-batch", help="evaluate a manifest of pred/gt pairs")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--pairs", required=True, help="CSV with columns id,category,pred,gt")
    p.add_argument("--out", help="report CSV path (stdout if omitted)")
    p.add_argument("--per-category", action="store_true")
    _metric_opts(p)
    p.set_defaults(func=cmd_eval_batch)

    p = sub.add_parser("sample", help="area-uniform surface sampling of a mesh")
    p.add_argument("mesh")
    p.add_argument("out")
    p.add_argument("--n", type=int, default=DEFAULT_SAMPLE_N)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "symmetrize" and args.plane is not None:
            try:
                _parse_plane(args.plane)
            except argparse.ArgumentTypeError as exc:
                parser.error(str(exc))
        return args.func(args)
    except InputError as exc:
        print(f"symmpoint: {exc}", file=sys.stderr)
        return EXIT_IO
    except SymmPointError as exc:
        print(f"symmpoint: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as exc:
        print(f"symmpoint: {exc}", file=sys.stderr)
        return EXIT_IO


__all__ = ["main", "build_parser", "eval_batch", "RunManifest", "REPORT_HEADER"]
