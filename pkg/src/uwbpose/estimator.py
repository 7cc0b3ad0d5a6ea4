"""Levenberg-Marquardt solvers for point trilateration and 6-DOF relative pose."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (CollinearPoints, DegenerateGeometry, DegenerateLayout,
                     DidNotConverge)
from .geometry import Pose, best_fit_plane, exp_so3, hat, reflect_points, rigid_fit
from .ranging import RangeSet, SensorLayout, tag_positions

DEGENERACY_RATIO = 1e-6
MAX_DAMPING = 1e16


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    second_order: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("gradient_tolerance", "step_tolerance", "initial_damping",
                     "damping_up", "damping_down"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class _LMResult:
    state: object
    cost: float
    jacobian: np.ndarray
    gradient_norm: float
    iterations: int
    converged: bool
    costs: list


def levenberg_marquardt(state, residual_and_jacobian: Callable, retract: Callable,
                        cfg: SolverConfig, residual_change: Callable | None = None,
                        curvature: Callable | None = None) -> _LMResult:
    """Minimise ``sum(r**2)`` with Marquardt-scaled damping.

    ``residual_and_jacobian(state) -> (r, J)``; ``retract(state, delta)`` applies
    an increment. Damping is multiplied by ``damping_up`` on a rejected step and
    ``damping_down`` on an accepted one.

    ``residual_change(state, delta, candidate)``, if given, returns the residual
    increment computed without cancellation. Near the optimum the cost
    decrease is far below the rounding error of ``sum(r**2)`` when ranges are
    large compared with residuals, and a plain comparison stalls.

    ``curvature(state, r)`` returns ``sum_k r_k Hess(r_k)``; when given (and
    ``cfg.second_order``) it is added to ``J^T J``. Range residuals of a few
    centimetres on a lever arm of metres make the Gauss-Newton model too
    optimistic and plain L-M then converges only linearly.
    """
    r, jac = residual_and_jacobian(state)
    cost = float(r @ r)
    lam = cfg.initial_damping
    costs = [cost]
    it = 0
    while it < cfg.max_iterations:
        g = jac.T @ r
        if np.max(np.abs(g)) < cfg.gradient_tolerance:
            break
        it += 1
        a = jac.T @ jac
        diag = np.maximum(np.diag(a), 1e-12 * max(np.max(np.diag(a)), 1e-300))
        if curvature is not None and cfg.second_order:
            a = a + curvature(state, r)
        try:
            delta = np.linalg.solve(a + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            delta = None
        if delta is None or g @ delta >= 0:
            # indefinite damped Hessian: not a descent direction
            lam *= cfg.damping_up
            if lam > MAX_DAMPING:
                break
            continue
        candidate = retract(state, delta)
        r_new, jac_new = residual_and_jacobian(candidate)
        cost_new = float(r_new @ r_new)
        if residual_change is not None:
            dr = residual_change(state, delta, candidate)
            decrease = -float(dr @ (2.0 * r + dr))
        else:
            decrease = cost - cost_new
        if decrease > 0:
            state, r, jac, cost = candidate, r_new, jac_new, cost_new
            costs.append(cost)
            lam = max(lam * cfg.damping_down, 1e-15)
            if np.linalg.norm(delta) < cfg.step_tolerance:
                break
        else:
            lam *= cfg.damping_up
            if lam > MAX_DAMPING:
                break
    gnorm = float(np.max(np.abs(jac.T @ r)))
    return _LMResult(state, cost, jac, gnorm, it, gnorm < cfg.gradient_tolerance, costs)


def _singular_ratio(points) -> np.ndarray:
    _, _, s = best_fit_plane(points)
    return s / s[0] if s[0] > 0 else np.zeros(3)


@dataclass(frozen=True)
class PointEstimate:
    point: np.ndarray
    residuals: np.ndarray
    cost: float
    iterations: int


def _point_problem(anchors, distances):
    def fn(p):
        diff = p - anchors
        dist = np.linalg.norm(diff, axis=1)
        return dist - distances, diff / dist[:, None]
    return fn


def _point_curvature(p, anchors, r):
    diff = p - anchors
    dist = np.linalg.norm(diff, axis=1)
    u = diff / dist[:, None]
    c = r / dist
    return c.sum() * np.eye(3) - np.einsum("k,ki,kj->ij", c, u, u)


def _distance_change(q_old: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """|q_old + dq| - |q_old| without cancellation; rows are vectors."""
    q_new = q_old + dq
    return (np.einsum("...i,...i->...", dq, q_old + q_new)
            / (np.linalg.norm(q_old, axis=-1) + np.linalg.norm(q_new, axis=-1)))


def trilaterate(anchors, distances, init, cfg: SolverConfig | None = None) -> PointEstimate:
    """Local least-squares fit of a point to ranges from known anchors."""
    cfg = cfg or SolverConfig()
    anchors = np.asarray(anchors, dtype=float)
    distances = np.asarray(distances, dtype=float).reshape(-1)
    if len(anchors) < 3 or len(anchors) != len(distances):
        raise ValueError("need >= 3 anchors and one distance per anchor")
    if _singular_ratio(anchors)[1] < DEGENERACY_RATIO:
        raise DegenerateGeometry("anchors are collinear")
    fn = _point_problem(anchors, distances)
    res = levenberg_marquardt(np.asarray(init, dtype=float).copy(), fn,
                              lambda p, dp: p + dp, cfg,
                              lambda p, dp, _: _distance_change(p - anchors, dp),
                              lambda p, r: _point_curvature(p, anchors, r))
    out = PointEstimate(res.state, fn(res.state)[0], res.cost, res.iterations)
    if not res.converged:
        raise DidNotConverge(f"trilateration stopped with gradient {res.gradient_norm:.3g}", out)
    return out


def linear_multilateration(anchors, distances) -> np.ndarray:
    """Closed-form point from range differences (needs non-coplanar anchors)."""
    anchors = np.asarray(anchors, dtype=float)
    d = np.asarray(distances, dtype=float)
    a = 2.0 * (anchors[1:] - anchors[0])
    b = (d[0] ** 2 - d[1:] ** 2) + np.sum(anchors[1:] ** 2, axis=1) - anchors[0] @ anchors[0]
    return np.linalg.lstsq(a, b, rcond=None)[0]


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    converged: bool
    iterations: int
    final_cost: float
    jacobian_at_solution: np.ndarray
    gradient_norm: float = 0.0


def pose_residuals(pose: Pose, layout: SensorLayout, measured: np.ndarray):
    """Residual ``f(theta) - d_hat`` and its Jacobian w.r.t. (dt, dphi).

    The rotation column block uses the right perturbation C <- C exp(dphi^),
    for which d(C p)/d(dphi) = -C p^.
    """
    cp = layout.tags @ pose.rotation.T
    diff = (cp + pose.translation)[:, None, :] - layout.anchors[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    u = diff / dist[..., None]
    # u^T (-C p^) = p x (C^T u)
    j_phi = np.cross(layout.tags[:, None, :], u @ pose.rotation)
    jac = np.concatenate([u.reshape(-1, 3), j_phi.reshape(-1, 3)], axis=1)
    return dist.ravel() - measured, jac


def check_layout(layout: SensorLayout):
    if layout.size < 6:
        raise DegenerateLayout("fewer than 6 range measurements")
    if layout.n_tags < 3 or _singular_ratio(layout.tags)[1] < DEGENERACY_RATIO:
        raise DegenerateLayout("need at least 3 non-collinear tags")
    if layout.n_anchors < 4 or _singular_ratio(layout.anchors)[2] < DEGENERACY_RATIO:
        raise DegenerateLayout("need at least 4 non-coplanar anchors")


def _pose_curvature(layout: SensorLayout, pose: Pose, r: np.ndarray) -> np.ndarray:
    """``sum_k r_k Hess(range_k)`` in (dt, dphi), symmetrised."""
    c_mat = pose.rotation
    tags = np.repeat(layout.tags, layout.n_anchors, axis=0)
    q = tags @ c_mat.T + pose.translation - np.tile(layout.anchors, (layout.n_tags, 1))
    dist = np.linalg.norm(q, axis=1)
    u = q / dist[:, None]
    c = r / dist
    m = c[:, None, None] * (np.eye(3) - u[:, :, None] * u[:, None, :])
    b = -np.einsum("ij,rjk->rik", c_mat, np.stack([hat(p) for p in tags]))
    w = u @ c_mat
    h_tt = m.sum(axis=0)
    h_tp = np.einsum("rij,rjk->ik", m, b)
    wp = np.einsum("r,ri,rj->ij", r, w, tags)
    h_pp = (np.einsum("rji,rjk,rkl->il", b, m, b) + 0.5 * (wp + wp.T)
            - np.einsum("r,ri,ri->", r, w, tags) * np.eye(3))
    return np.block([[h_tt, h_tp], [h_tp.T, h_pp]])


def _pose_range_change(layout: SensorLayout, pose: Pose, delta: np.ndarray, _=None):
    k = hat(delta[3:])
    theta = np.linalg.norm(delta[3:])
    if theta < 1e-6:
        expm1 = k + 0.5 * (k @ k)
    else:
        expm1 = np.sin(theta) / theta * k + (1 - np.cos(theta)) / theta ** 2 * (k @ k)
    cp = layout.tags @ pose.rotation.T
    q_old = (cp + pose.translation)[:, None, :] - layout.anchors[None, :, :]
    dq = layout.tags @ (pose.rotation @ expm1).T + delta[:3]
    return _distance_change(q_old, np.broadcast_to(dq[:, None, :], q_old.shape)).ravel()


def _retract_pose(pose: Pose, delta: np.ndarray) -> Pose:
    # skip Pose validation in the inner loop; exp_so3 output is orthonormal
    r = pose.rotation @ exp_so3(delta[3:])
    out = object.__new__(Pose)
    object.__setattr__(out, "rotation", r)
    object.__setattr__(out, "translation", pose.translation + delta[:3])
    return out


def solve_pose(layout: SensorLayout, ranges: RangeSet, init: Pose,
               cfg: SolverConfig | None = None, check: bool = True) -> PoseEstimate:
    """Fit (t, phi) to the stacked ranges by Levenberg-Marquardt.

    Set ``check=False`` to bypass the degenerate-layout guard, e.g. to study
    the coplanar-anchor ambiguity.
    """
    cfg = cfg or SolverConfig()
    if len(ranges) != layout.size:
        raise ValueError(f"expected {layout.size} ranges, got {len(ranges)}")
    if check:
        check_layout(layout)
    measured = ranges.values
    res = levenberg_marquardt(init, lambda p: pose_residuals(p, layout, measured),
                              _retract_pose, cfg,
                              lambda p, delta, _: _pose_range_change(layout, p, delta),
                              lambda p, r: _pose_curvature(layout, p, r))
    pose = Pose(res.state.rotation, res.state.translation)
    est = PoseEstimate(pose, res.converged, res.iterations, res.cost, res.jacobian,
                       res.gradient_norm)
    if not res.converged:
        raise DidNotConverge(f"pose solve stopped with gradient {res.gradient_norm:.3g} "
                             f"after {res.iterations} iterations", est)
    return est


def pose_from_correspondences(points_b, points_g) -> Pose:
    """Rigid transform best aligning body-frame points to host-frame points."""
    a = np.asarray(points_b, dtype=float)
    b = np.asarray(points_g, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3 or len(a) < 3:
        raise ValueError("need two matching (k, 3) point sets with k >= 3")
    if _singular_ratio(a)[1] < DEGENERACY_RATIO or _singular_ratio(b)[1] < DEGENERACY_RATIO:
        raise CollinearPoints("points are collinear; rotation about their line is free")
    return rigid_fit(a, b)


def initial_guess(layout: SensorLayout, ranges: RangeSet,
                  cfg: SolverConfig | None = None) -> Pose:
    """Trilaterate every tag in the host frame, then align the tag sets.

    Each tag is solved from the linear multilateration point and from its
    reflection through the anchors' best-fit plane; the lower-cost result wins.
    """
    cfg = cfg or SolverConfig()
    if layout.n_tags < 3:
        raise DegenerateLayout("at least 3 non-collinear tags are needed for a unique pose")
    if layout.n_anchors < 4 or _singular_ratio(layout.anchors)[2] < DEGENERACY_RATIO:
        raise DegenerateLayout("need at least 4 non-coplanar anchors")
    centre, normal, _ = best_fit_plane(layout.anchors)
    rows = ranges.as_matrix(layout.n_anchors)
    points = []
    for d in rows:
        start = linear_multilateration(layout.anchors, d)
        best, failure = None, None
        for p0 in (start, reflect_points(start[None], centre, normal)[0]):
            try:
                est = trilaterate(layout.anchors, d, p0, cfg)
            except DidNotConverge as exc:
                failure = exc
                continue
            if best is None or est.cost < best.cost:
                best = est
        if best is None:
            raise failure
        points.append(best.point)
    return pose_from_correspondences(layout.tags, np.array(points))


def estimate_pose(layout: SensorLayout, ranges: RangeSet,
                  cfg: SolverConfig | None = None) -> PoseEstimate:
    """initial_guess followed by solve_pose."""
    return solve_pose(layout, ranges, initial_guess(layout, ranges, cfg), cfg)


__all__ = [
    "SolverConfig", "PointEstimate", "PoseEstimate", "trilaterate", "solve_pose",
    "pose_from_correspondences", "initial_guess", "estimate_pose", "pose_residuals",
    "levenberg_marquardt", "linear_multilateration", "check_layout", "tag_positions",
]
