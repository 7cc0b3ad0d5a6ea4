"""Monte-Carlo RMSE experiments: single pose, max over a pose grid, and sweeps.

Randomness: trial ``k`` at pose-grid index ``p`` draws its noise from
``SeedSequence([seed, p, k])`` feeding PCG64, so every number depends only on
the config and not on evaluation order or worker count. Sweep rows share the
base seed (common random numbers across the grid).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import DidNotConverge, TooManyFailures
from .estimator import SolverConfig, initial_guess, solve_pose
from .geometry import (Pose, orientation_error, quaternion_to_matrix, regular_altitude,
                       regular_layout, translation_error)
from .ranging import SensorLayout, add_noise, range_vector

log = logging.getLogger(__name__)

DEFAULT_AZIMUTHS = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)
SWEEP_AXES = ("d", "z", "L_a", "L_t")


@dataclass(frozen=True)
class TrialConfig:
    """Parameters of one Monte-Carlo experiment.

    ``L_a`` and ``L_t`` are circumradii of the regular anchor tetrahedron and
    tag triangle, so ``z_a = 4/3 L_a`` and ``h1 = 3/2 L_t``.
    """

    L_a: float = 1.5
    L_t: float = 1.5
    d: float = 10.0
    z: float = 0.0
    sigma_d: float = 0.05
    trials: int = 50
    seed: int = 0
    orientation_samples: int = 16
    azimuths: tuple = DEFAULT_AZIMUTHS
    max_failure_fraction: float = 0.2
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sigma_d < 0:
            raise ValueError("sigma_d must be >= 0")
        if min(self.L_a, self.L_t, self.d) <= 0:
            raise ValueError("L_a, L_t and d must be positive")
        if self.orientation_samples < 1 or len(self.azimuths) < 1:
            raise ValueError("the pose grid must be non-empty")
        object.__setattr__(self, "azimuths", tuple(float(a) for a in self.azimuths))

    @property
    def z_a(self) -> float:
        return regular_altitude("tetrahedron", self.L_a)

    @property
    def h1(self) -> float:
        return regular_altitude("triangle", self.L_t)

    def layout(self) -> SensorLayout:
        return SensorLayout(regular_layout("tetrahedron", self.L_a).vertices,
                            regular_layout("triangle", self.L_t).vertices)


@dataclass(frozen=True)
class TrialResult:
    e_t_rmse: float
    e_phi_rmse: float
    trials: int
    failures: int
    e_t: np.ndarray = field(repr=False, compare=False, default=None)
    e_phi: np.ndarray = field(repr=False, compare=False, default=None)


def run_pose_trials(pose: Pose, cfg: TrialConfig, layout: SensorLayout | None = None,
                    pose_index: int = 0) -> TrialResult:
    """RMSE of translation and orientation over ``cfg.trials`` noisy solves.

    Trials that fail to converge are excluded from the RMSE and counted.
    """
    layout = layout or cfg.layout()
    clean = range_vector(pose, layout)
    e_t, e_phi = [], []
    failures = 0
    for k in range(cfg.trials):
        noisy = add_noise(clean, cfg.sigma_d, (cfg.seed, pose_index, k))
        try:
            est = solve_pose(layout, noisy, initial_guess(layout, noisy, cfg.solver), cfg.solver)
        except DidNotConverge:
            failures += 1
            continue
        e_t.append(translation_error(pose, est.pose))
        e_phi.append(orientation_error(pose, est.pose))
    if failures > cfg.max_failure_fraction * cfg.trials:
        raise TooManyFailures(f"{failures}/{cfg.trials} trials failed to converge")
    e_t, e_phi = np.array(e_t), np.array(e_phi)
    return TrialResult(float(np.sqrt(np.mean(e_t ** 2))), float(np.sqrt(np.mean(e_phi ** 2))),
                       cfg.trials, failures, e_t, e_phi)


def orientation_grid(count: int) -> np.ndarray:
    """Identity followed by unscrambled-Halton points mapped to unit quaternions."""
    out = [np.eye(3)]
    if count > 1:
        u = qmc.Halton(d=3, scramble=False).random(count)[1:]
        for u1, u2, u3 in u:
            a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
            q = (b * math.cos(2 * math.pi * u3), a * math.sin(2 * math.pi * u2),
                 a * math.cos(2 * math.pi * u2), b * math.sin(2 * math.pi * u3))
            out.append(quaternion_to_matrix(q))
    return np.array(out)


def pose_grid(cfg: TrialConfig) -> list[Pose]:
    """Tracked-node poses at horizontal distance ``d`` and altitude ``z``; azimuth-major."""
    rots = orientation_grid(cfg.orientation_samples)
    poses = []
    for az in cfg.azimuths:
        t = np.array([cfg.d * math.cos(az), cfg.d * math.sin(az), cfg.z])
        poses.extend(Pose(r, t) for r in rots)
    return poses


@dataclass(frozen=True)
class MaxErrorResult:
    e_t_max: float
    e_phi_max: float
    failures: int
    per_pose: tuple = field(repr=False, default=())

    @property
    def e_t_mean(self) -> float:
        return float(np.mean([r.e_t_rmse for r in self.per_pose]))

    @property
    def e_phi_mean(self) -> float:
        return float(np.mean([r.e_phi_rmse for r in self.per_pose]))


def _pose_task(args):
    pose, cfg, index = args
    return run_pose_trials(pose, cfg, pose_index=index)


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("UWBPOSE_THREADS")
    n = requested if requested is not None else (int(cap) if cap else 1)
    if cap:
        n = min(n, int(cap))
    return max(1, n)


def _evaluate(tasks: list, workers: int) -> list[TrialResult]:
    if workers <= 1 or len(tasks) <= 1:
        return [_pose_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_pose_task, tasks))


def _reduce(results: Sequence[TrialResult]) -> MaxErrorResult:
    return MaxErrorResult(max(r.e_t_rmse for r in results), max(r.e_phi_rmse for r in results),
                          sum(r.failures for r in results), tuple(results))


def max_error_over_poses(cfg: TrialConfig, workers: int | None = None) -> MaxErrorResult:
    """Largest per-pose RMSE over the azimuth x orientation grid."""
    tasks = [(p, cfg, i) for i, p in enumerate(pose_grid(cfg))]
    return _reduce(_evaluate(tasks, worker_count(workers)))


CSV_COLUMNS = ("d", "z", "L_a", "L_t", "z_a", "h1", "E_t_rmse", "E_phi_rmse",
               "trials", "failures", "seed")


@dataclass(frozen=True)
class SweepRow:
    d: float
    z: float
    L_a: float
    L_t: float
    z_a: float
    h1: float
    E_t_rmse: float
    E_phi_rmse: float
    trials: int
    failures: int
    seed: int


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class SweepTable:
    """Max-over-pose RMSE per grid point. Layout convention: circumradius."""

    rows: tuple

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SweepTable":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"sweep CSV header must be {','.join(CSV_COLUMNS)}")
        return cls(tuple(_row_from_mapping(rec) for rec in reader))

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.rows], indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SweepTable":
        return cls(tuple(_row_from_mapping(rec) for rec in json.loads(text)))


def _row_from_mapping(rec) -> SweepRow:
    kw = {}
    for f in fields(SweepRow):
        kw[f.name] = int(rec[f.name]) if f.type in ("int", int) else float(rec[f.name])
    return SweepRow(**kw)


def sweep(axis: str, grid: Iterable[float], base: TrialConfig,
          workers: int | None = None) -> SweepTable:
    """One max-over-pose row per grid value of ``axis``; everything else from ``base``."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    grid = [float(v) for v in grid]
    if not grid:
        raise ValueError("sweep grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("sweep grid must be strictly ascending")
    cfgs = [replace(base, **{axis: v}) for v in grid]
    tasks, spans = [], []
    for c in cfgs:
        start = len(tasks)
        tasks.extend((p, c, i) for i, p in enumerate(pose_grid(c)))
        spans.append((start, len(tasks)))
    results = _evaluate(tasks, worker_count(workers))
    rows = []
    for c, (a, b) in zip(cfgs, spans):
        m = _reduce(results[a:b])
        rows.append(SweepRow(c.d, c.z, c.L_a, c.L_t, c.z_a, c.h1, m.e_t_max, m.e_phi_max,
                             c.trials, m.failures, c.seed))
        log.info("sweep %s=%g: E_t=%.4g E_phi=%.4g", axis, getattr(c, axis), m.e_t_max, m.e_phi_max)
    return SweepTable(tuple(rows))
