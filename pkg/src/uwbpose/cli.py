"""Command-line front end.

Exit codes: 0 ok, 2 bad input, 3 solver did not converge, 4 degenerate
geometry, 5 deployment target infeasible or linear model rejected.
All files use meters and radians.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import (DegenerateLayout, DidNotConverge, LowCorrelation, NotARotation,
                     RankDeficient, TargetInfeasible, UwbPoseError)
from .estimator import SolverConfig, check_layout, initial_guess, solve_pose
from .fim import analytic_floors, assemble_jacobian, crlb, orientation_bound
from .geometry import Pose, exp_so3, regular_layout
from .planner import fit_linear, plan_deployment
from .ranging import RangeSet, SensorLayout, add_noise, anchor_plane, range_vector
from .simlab import SWEEP_AXES, SweepTable, TrialConfig, sweep

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_DEGENERATE, EXIT_INFEASIBLE = 0, 2, 3, 4, 5

log = logging.getLogger("uwbpose")


class InputError(Exception):
    pass


TOP_KEYS = {"schema_version", "layout", "pose", "init", "trial", "solver", "sweep", "plan"}
PLAN_KEYS = {"d_max", "E_t_target", "E_phi_target", "L_a_grid", "L_t_grid", "margin",
             "min_r", "confirm", "diagnose", "sweep_translation_csv", "sweep_orientation_csv"}


def _reject_unknown(mapping: dict, allowed, where: str):
    if not isinstance(mapping, dict):
        raise InputError(f"{where} must be a JSON object")
    extra = sorted(set(mapping) - set(allowed))
    if extra:
        raise InputError(f"unknown field(s) in {where}: {', '.join(extra)}")


def load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    _reject_unknown(cfg, TOP_KEYS, "config")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"schema_version must be {SCHEMA_VERSION}")
    return cfg


def _dataclass_from(cls, mapping: dict, where: str, skip=()):
    allowed = {f.name for f in fields(cls)} - set(skip)
    _reject_unknown(mapping, allowed, where)
    try:
        return cls(**mapping)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid {where}: {exc}") from exc


def solver_config(cfg: dict) -> SolverConfig:
    return _dataclass_from(SolverConfig, cfg.get("solver", {}), "solver")


def trial_config(cfg: dict, seed: int | None = None) -> TrialConfig:
    trial = dict(cfg.get("trial", {}))
    if seed is not None:
        trial["seed"] = seed
    if "azimuths" in trial:
        trial["azimuths"] = tuple(trial["azimuths"])
    tc = _dataclass_from(TrialConfig, trial, "trial", skip=("solver",))
    return TrialConfig(**{**{f.name: getattr(tc, f.name) for f in fields(TrialConfig)},
                          "solver": solver_config(cfg)})


def parse_layout(cfg: dict) -> SensorLayout:
    entry = cfg.get("layout")
    if entry is None:
        return trial_config(cfg).layout()
    if "anchors" in entry or "tags" in entry:
        _reject_unknown(entry, {"anchors", "tags"}, "layout")
        try:
            return SensorLayout(entry["anchors"], entry["tags"])
        except (KeyError, ValueError) as exc:
            raise InputError(f"invalid layout: {exc}") from exc
    _reject_unknown(entry, {"L_a", "L_t"}, "layout")
    try:
        return SensorLayout(regular_layout("tetrahedron", entry["L_a"]).vertices,
                            regular_layout("triangle", entry["L_t"]).vertices)
    except (KeyError, ValueError) as exc:
        raise InputError(f"invalid layout: {exc}") from exc


def parse_pose(entry: dict, where: str = "pose") -> Pose:
    _reject_unknown(entry, {"rotation", "phi", "translation"}, where)
    try:
        t = np.asarray(entry["translation"], dtype=float).reshape(3)
        if "rotation" in entry:
            r = np.asarray(entry["rotation"], dtype=float).reshape(3, 3)
        else:
            r = exp_so3(entry.get("phi", [0.0, 0.0, 0.0]))
        return Pose(r, t)
    except (KeyError, ValueError, NotARotation) as exc:
        raise InputError(f"invalid {where}: {exc}") from exc


def pose_json(pose: Pose) -> dict:
    return {"rotation": [float(v) for v in pose.rotation.ravel()],
            "translation": [float(v) for v in pose.translation]}


def read_ranges_csv(text: str, layout: SensorLayout) -> RangeSet:
    reader = csv.DictReader(io.StringIO(text))
    want = ["tag_index", "anchor_index", "distance_m"]
    if reader.fieldnames != want:
        raise InputError(f"ranges CSV header must be {','.join(want)}")
    rows = list(reader)
    if len(rows) != layout.size:
        raise InputError(f"ranges CSV has {len(rows)} rows but the layout needs "
                         f"m*n = {layout.n_tags}*{layout.n_anchors} = {layout.size}")
    values = np.full(layout.size, np.nan)
    for k, rec in enumerate(rows, start=2):
        try:
            i, j, dist = int(rec["tag_index"]), int(rec["anchor_index"]), float(rec["distance_m"])
        except (TypeError, ValueError) as exc:
            raise InputError(f"ranges CSV line {k}: {exc}") from exc
        if not (0 <= i < layout.n_tags and 0 <= j < layout.n_anchors):
            raise InputError(f"ranges CSV line {k}: index ({i}, {j}) out of range")
        if not np.isnan(values[i * layout.n_anchors + j]):
            raise InputError(f"ranges CSV line {k}: duplicate pair ({i}, {j})")
        values[i * layout.n_anchors + j] = dist
    return RangeSet(values)


def write_ranges_csv(ranges: RangeSet, layout: SensorLayout) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tag_index", "anchor_index", "distance_m"])
    for k, v in enumerate(ranges.values):
        w.writerow([k // layout.n_anchors, k % layout.n_anchors, repr(float(v))])
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _require_json(args):
    if args.format != "json":
        raise InputError(f"{args.command} only writes JSON")


def cmd_ranges(args) -> int:
    """Generate a ranges CSV from the config pose (noisy if trial.sigma_d > 0)."""
    cfg = load_config(args.config)
    layout = parse_layout(cfg)
    if "pose" not in cfg:
        raise InputError("config needs a pose")
    tc = trial_config(cfg, args.seed)
    ranges = add_noise(range_vector(parse_pose(cfg["pose"]), layout), tc.sigma_d, tc.seed)
    _emit(write_ranges_csv(ranges, layout), args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    _require_json(args)
    cfg = load_config(args.config)
    layout = parse_layout(cfg)
    solver = solver_config(cfg)
    try:
        text = Path(args.ranges).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read ranges: {exc}") from exc
    ranges = read_ranges_csv(text, layout)
    init = parse_pose(cfg["init"], "init") if "init" in cfg else initial_guess(layout, ranges, solver)
    code = EXIT_OK
    try:
        est = solve_pose(layout, ranges, init, solver)
    except DidNotConverge as exc:
        est, code = exc.estimate, EXIT_NONCONVERGED
        log.error("%s", exc)
    out = {**pose_json(est.pose), "converged": est.converged, "iterations": est.iterations,
           "final_cost": est.final_cost, "gradient_norm": est.gradient_norm}
    _emit(_dump(out), args.out)
    return code


def cmd_crlb(args) -> int:
    _require_json(args)
    cfg = load_config(args.config)
    layout = parse_layout(cfg)
    if "pose" not in cfg:
        raise InputError("config needs a pose")
    pose = parse_pose(cfg["pose"])
    sigma = trial_config(cfg).sigma_d
    plane = anchor_plane(layout.anchors) if layout.n_anchors >= 3 else None
    if plane is not None:
        normal = np.round(plane[1], 6).tolist()
        raise RankDeficient("anchors are coplanar: the pose is ambiguous under reflection "
                            f"through the anchor plane (normal {normal})")
    try:
        check_layout(layout)
    except DegenerateLayout as exc:
        raise RankDeficient(str(exc)) from exc
    jac = assemble_jacobian(pose, layout)
    rep = crlb(jac, sigma, layout, pose)
    out = {
        "sigma_d": sigma,
        "singular_values": rep.singular_values.tolist(),
        "crlb_diagonal": np.diag(rep.crlb).tolist(),
        "translation_std": rep.translation_std,
        "orientation_std": rep.orientation_std,
        "j3_norm": rep.j3_norm,
        "lambda3_H_phi": rep.lambda3_h_phi,
    }
    if layout.n_tags == 3:
        out["orientation_ceiling"] = orientation_bound(jac, layout, pose).ceiling
    if layout.n_anchors == 4 and layout.n_tags == 3:
        f = analytic_floors(pose, layout)
        out["analytic"] = {
            "z_a": f.z_a, "h1": f.h1, "distance": f.distance,
            "translation_floor": _finite(f.translation_floor),
            "translation_floor_far_field": f.far_field_translation,
            "j3_tag1_sq": f.j3_tag1_sq, "j3_tag1_sq_far_field": f.far_field_j3_tag1_sq,
            "note": f.note,
        }
    _emit(_dump(out), args.out)
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad grid {text!r}: {exc}") from exc


def _summary(table: SweepTable) -> str:
    parts = []
    x_t = table.column("d") / table.column("z_a")
    x_phi = x_t / table.column("h1")
    for name, x, y in (("E_t~d/z_a", x_t, table.column("E_t_rmse")),
                       ("E_phi~d/(z_a*h1)", x_phi, table.column("E_phi_rmse"))):
        if len(x) >= 3 and np.ptp(x) > 0:
            parts.append(f"pearson_r({name})={fit_linear(x, y).pearson_r:.4f}")
    return f"rows={len(table)} " + " ".join(parts)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    entry = cfg.get("sweep", {})
    _reject_unknown(entry, {"axis", "grid"}, "sweep")
    axis = args.axis or entry.get("axis")
    grid = _parse_grid(args.grid) if args.grid is not None else entry.get("grid", [])
    if axis not in SWEEP_AXES:
        raise InputError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}")
    if not grid:
        raise InputError("sweep grid is empty")
    try:
        table = sweep(axis, grid, trial_config(cfg, args.seed), workers=args.workers)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit(table.to_csv() if args.format == "csv" else table.to_json(), args.out)
    if not args.quiet:
        print(_summary(table), file=sys.stderr)
    return EXIT_OK


def _load_table(path: str | None) -> SweepTable | None:
    if path is None:
        return None
    try:
        text = Path(path).read_text(encoding="utf-8")
        return SweepTable.from_json(text) if path.endswith(".json") else SweepTable.from_csv(text)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read sweep table {path}: {exc}") from exc


def cmd_plan(args) -> int:
    _require_json(args)
    cfg = load_config(args.config)
    entry = dict(cfg.get("plan", {}))
    _reject_unknown(entry, PLAN_KEYS, "plan")
    if args.targets:
        e_t, e_phi = _parse_grid(args.targets)[:2]
        entry.update(E_t_target=e_t, E_phi_target=e_phi)
    base = trial_config(cfg, args.seed)
    try:
        plan = plan_deployment(
            float(entry.get("d_max", base.d)), float(entry["E_t_target"]),
            float(entry["E_phi_target"]), base.sigma_d, entry["L_a_grid"], entry["L_t_grid"], base,
            margin=float(entry.get("margin", 1.05)), min_r=float(entry.get("min_r", 0.95)),
            confirm=bool(entry.get("confirm", True)), diagnose=bool(entry.get("diagnose", True)),
            sweep_translation=_load_table(entry.get("sweep_translation_csv")),
            sweep_orientation=_load_table(entry.get("sweep_orientation_csv")))
    except KeyError as exc:
        raise InputError(f"plan config is missing {exc}") from exc
    _emit(plan.to_json(), args.out)
    if not args.quiet:
        print(f"L_a_min={plan.L_a_min:.4g} L_t_min={plan.L_t_min:.4g} "
              f"pearson_r(E_t)={plan.fit_translation.pearson_r:.4f} "
              f"pearson_r(E_phi)={plan.fit_orientation.pearson_r:.4f} "
              f"validated={plan.validated}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    common.add_argument("--seed", type=int, help="overrides trial.seed")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="uwbpose", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", parents=[common], help="estimate a pose from a ranges CSV")
    p.add_argument("--ranges", required=True)
    p.set_defaults(func=cmd_solve, default_format="json")
    p = sub.add_parser("crlb", parents=[common], help="Fisher information / CRLB report")
    p.set_defaults(func=cmd_crlb, default_format="json")
    p = sub.add_parser("sweep", parents=[common], help="Monte-Carlo sweep over one parameter")
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--grid", help="comma-separated ascending values")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep, default_format="csv")
    p = sub.add_parser("plan", parents=[common], help="two-step anchor/tag sizing")
    p.add_argument("--targets", help="E_t,E_phi targets (m, rad)")
    p.set_defaults(func=cmd_plan, default_format="json")
    p = sub.add_parser("ranges", parents=[common], help="simulate a ranges CSV")
    p.set_defaults(func=cmd_ranges, default_format="csv")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    args.format = args.format or args.default_format
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RankDeficient, DegenerateLayout) as exc:
        print(f"degenerate geometry: {exc}", file=sys.stderr)
        direction = getattr(exc, "direction", None)
        if direction is not None:
            print(f"null direction (dt, dphi): {np.round(direction, 6).tolist()}", file=sys.stderr)
        return EXIT_DEGENERATE
    except DidNotConverge as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (TargetInfeasible, LowCorrelation) as exc:
        best = getattr(exc, "best", None)
        if best is None:
            best = getattr(exc, "pearson_r", None)
        print(f"infeasible: {exc} (best achievable: {best})", file=sys.stderr)
        return EXIT_INFEASIBLE
    except UwbPoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
