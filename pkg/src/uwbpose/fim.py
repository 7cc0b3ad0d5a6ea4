"""Jacobian, Cramer-Rao bound and the altitude-based error analysis.

Throughout, rows are ordered tag-major (tag i, anchor j) like ``RangeSet``,
and the rotation parameter is the right perturbation ``C <- C exp(dphi^)``.
For the closed-form tag-height analysis, per-tag horizontal distance vectors
list the base anchors first and the apex anchor last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolated, RankDeficient, ZeroRange
from .estimator import pose_from_correspondences
from .geometry import Pose, Simplex, hat, simplex_metrics
from .ranging import SensorLayout, tag_positions

SQRT3 = math.sqrt(3.0)
RANK_TOL = 1e-10


@dataclass(frozen=True)
class PoseJacobian:
    j_t: np.ndarray
    j_phi: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return np.hstack([self.j_t, self.j_phi])


def assemble_jacobian(pose: Pose, layout: SensorLayout) -> PoseJacobian:
    p = tag_positions(pose, layout)
    diff = p[:, None, :] - layout.anchors[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    if np.min(dist) <= 1e-9:
        raise ZeroRange("a tag coincides with an anchor")
    u = (diff / dist[..., None]).reshape(-1, 3)
    tag_of_row = np.repeat(np.arange(layout.n_tags), layout.n_anchors)
    # d(C p)/d(dphi) = -C p^ for the right perturbation
    blocks = np.stack([-pose.rotation @ hat(t) for t in layout.tags])
    j_phi = np.einsum("ri,rij->rj", u, blocks[tag_of_row])
    return PoseJacobian(u, j_phi)


def orientation_information(jac: PoseJacobian) -> np.ndarray:
    """Schur complement ``J_phi^T (I - P_t) J_phi`` of the Fisher information."""
    q, _ = np.linalg.qr(jac.j_t)
    perp = jac.j_phi - q @ (q.T @ jac.j_phi)
    return perp.T @ perp


@dataclass(frozen=True)
class FimReport:
    singular_values: np.ndarray
    crlb: np.ndarray
    j3_norm: float
    h_phi: np.ndarray
    lambda3_h_phi: float
    bound_h1: float = math.nan

    @property
    def translation_std(self) -> float:
        """sqrt(trace) of the translation block."""
        return math.sqrt(np.trace(self.crlb[:3, :3]))

    @property
    def orientation_std(self) -> float:
        return math.sqrt(np.trace(self.crlb[3:, 3:]))


def crlb(jac: PoseJacobian, sigma_d: float, layout: SensorLayout | None = None,
         pose: Pose | None = None) -> FimReport:
    """CRLB ``sigma_d^2 (J^T J)^-1``; its eigenvalues are ``sigma_d^2 / s_j^2``.

    When ``layout`` and ``pose`` are given and there are 3 tags, the
    orientation ceiling of :func:`orientation_bound` is filled in too.
    """
    full = jac.full
    _, s, vt = np.linalg.svd(full, full_matrices=False)
    if s[-1] <= max(RANK_TOL, 1e-12 * s[0]):
        raise RankDeficient(f"Jacobian is rank deficient (smallest singular value {s[-1]:.3g})",
                            direction=vt[-1])
    cov = sigma_d ** 2 * (vt.T / s ** 2) @ vt
    cov = 0.5 * (cov + cov.T)
    h = orientation_information(jac)
    lam3 = float(np.linalg.eigvalsh(h)[0])
    bound = math.nan
    if layout is not None and pose is not None and layout.n_tags == 3:
        bound = orientation_bound(jac, layout, pose).ceiling
    return FimReport(s, cov, float(np.linalg.norm(jac.j_t[:, 2])), h, lam3, bound)


def fim_report(pose: Pose, layout: SensorLayout, sigma_d: float) -> FimReport:
    return crlb(assemble_jacobian(pose, layout), sigma_d, layout, pose)


@dataclass(frozen=True)
class CanonicalFrame:
    """Rigid transform into a canonical frame plus the chosen vertex order."""

    transform: Pose
    altitude: float
    order: tuple


def canonical_anchor_frame(anchors) -> CanonicalFrame:
    """Frame with the shortest-altitude anchor at (., ., z_a) and the rest in z=0."""
    anchors = np.asarray(anchors, dtype=float)
    if len(anchors) != 4:
        raise ValueError("canonical anchor frame needs exactly 4 anchors")
    h = simplex_metrics(Simplex(anchors)).altitudes
    # ties (regular tetrahedron) go to the last anchor
    apex = int(np.flatnonzero(h <= h.min() * (1 + 1e-9))[-1])
    base = [i for i in range(4) if i != apex]
    b0, b1, b2 = anchors[base]
    x = (b1 - b0) / np.linalg.norm(b1 - b0)
    n = np.cross(b1 - b0, b2 - b0)
    n /= np.linalg.norm(n)
    if (anchors[apex] - b0) @ n < 0:
        n = -n
    y = np.cross(n, x)
    order = base + [apex]
    local = (anchors[order] - b0) @ np.stack([x, y, n]).T
    return CanonicalFrame(pose_from_correspondences(anchors[order], local), float(h[apex]),
                          tuple(order))


def canonical_tag_frame(tags) -> CanonicalFrame:
    """Frame with tags in z=0, tags 2 and 3 on the x axis, tag 1 at y = h_1 > 0.

    Tag 1 is the vertex with the shortest altitude.
    """
    tags = np.asarray(tags, dtype=float)
    if len(tags) != 3:
        raise ValueError("canonical tag frame needs exactly 3 tags")
    h = simplex_metrics(Simplex(tags)).altitudes
    first = int(np.flatnonzero(h <= h.min() * (1 + 1e-9))[0])
    order = [first] + [i for i in range(3) if i != first]
    p1, p2, p3 = tags[order]
    x = (p3 - p2) / np.linalg.norm(p3 - p2)
    n = np.cross(p3 - p2, p1 - p2)
    n /= np.linalg.norm(n)
    y = np.cross(n, x)
    local = (tags[order] - p2) @ np.stack([x, y, n]).T
    return CanonicalFrame(pose_from_correspondences(tags[order], local), float(h[first]),
                          tuple(order))


@dataclass(frozen=True)
class OrientationBound:
    lambda3: float
    ceiling: float
    h1: float
    j3_tag1_sq: float


def orientation_bound(jac: PoseJacobian, layout: SensorLayout, pose: Pose) -> OrientationBound:
    """Smallest eigenvalue of H_phi and its altitude ceiling ``h_1^2 sum_j (n . u_1j)^2``.

    ``n`` is the tag-plane normal in the host frame and ``u_1j`` the unit
    vectors of the shortest-altitude tag. When the tag plane is level with
    the anchor base this ceiling is ``h_1^2 ||J_3^{1:n}||^2``, which is
    reported separately as ``j3_tag1_sq`` (z measured along the
    shortest-altitude direction of the anchor tetrahedron when there are 4
    anchors).
    """
    frame = canonical_tag_frame(layout.tags)
    lam3 = float(np.linalg.eigvalsh(orientation_information(jac))[0])
    normal = pose.rotation @ frame.transform.rotation.T @ np.array([0.0, 0.0, 1.0])
    n = layout.n_anchors
    first = frame.order[0]
    u1 = jac.j_t[first * n:(first + 1) * n]
    ceiling = frame.altitude ** 2 * float(np.sum((u1 @ normal) ** 2))
    vertical = np.array([0.0, 0.0, 1.0])
    if n == 4:
        vertical = canonical_anchor_frame(layout.anchors).transform.rotation.T @ vertical
    j3 = float(np.sum((u1 @ vertical) ** 2))
    if lam3 > ceiling * (1 + 1e-9) + 1e-9:
        raise ArithmeticError(f"lambda3 {lam3:.6g} exceeds its ceiling {ceiling:.6g}")
    return OrientationBound(lam3, ceiling, frame.altitude, j3)


def _validate(z_a: float, rho, k: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if z_a <= 0:
        raise AssumptionViolated("z_a must be positive")
    if rho.shape[-1] < 2:
        raise ValueError("need at least one base anchor and the apex anchor")
    if np.any(rho <= k * z_a):
        raise AssumptionViolated(
            f"horizontal distances must exceed {k:.4g} * z_a = {k * z_a:.4g} m "
            f"(min is {rho.min():.4g} m)")
    return rho


def height_stationarity(z: float, z_a: float, rho) -> float:
    """Derivative (up to a factor 2) of one tag's ||J_3||^2 w.r.t. its height."""
    rho = np.asarray(rho, dtype=float)
    base, apex = rho[:-1] ** 2, rho[-1] ** 2
    dz = z - z_a
    return float(apex * dz / (apex + dz * dz) ** 2 + np.sum(base * z / (base + z * z) ** 2))


def j3_sq_tag(z: float, z_a: float, rho) -> float:
    """One tag's contribution to ||J_3||^2 at height ``z``."""
    rho = np.asarray(rho, dtype=float)
    base, apex = rho[:-1] ** 2, rho[-1] ** 2
    dz = z - z_a
    return float(dz * dz / (apex + dz * dz) + np.sum(z * z / (base + z * z)))


@dataclass(frozen=True)
class TagHeight:
    z_opt: float
    j_contrib: float


def solve_tag_height(z_a: float, rho, k: float = SQRT3) -> TagHeight:
    """Height in (0, z_a) minimising one tag's ||J_3||^2, by bisection."""
    rho = _validate(z_a, rho, k)
    lo, hi = 1e-15, z_a - 1e-15
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if height_stationarity(mid, z_a, rho) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * z_a:
            break
    z = 0.5 * (lo + hi)
    return TagHeight(z, j3_sq_tag(z, z_a, rho))


def translation_floor(z_a: float, rho_matrix, k: float = SQRT3) -> float:
    """Minimum over tag heights of ||J_3||, evaluated in closed form at the roots."""
    rho = np.atleast_2d(_validate(z_a, rho_matrix, k))
    total = 0.0
    for row in rho:
        z = solve_tag_height(z_a, row, k).z_opt
        d2 = np.append(row[:-1] ** 2 + z * z, row[-1] ** 2 + (z - z_a) ** 2)
        a = row ** 2 / d2 ** 2
        base_sum = a[:-1].sum()
        total += (z_a / a.sum()) ** 2 * (base_sum ** 2 / d2[-1] + a[-1] ** 2 * np.sum(1.0 / d2[:-1]))
    return math.sqrt(total)


def dfdz(z_a: float, rho, k: float = SQRT3) -> float:
    """Sensitivity of the optimal tag height to z_a (implicit function theorem)."""
    rho = _validate(z_a, rho, k)
    f = solve_tag_height(z_a, rho, k).z_opt
    base, apex = rho[:-1] ** 2, rho[-1] ** 2
    d_apex = apex + (f - z_a) ** 2
    d_base = base + f * f
    num = apex - 3.0 * (f - z_a) ** 2
    denom = num + np.sum(base * d_apex ** 3 / (apex * d_base ** 3) * (base - 3.0 * f * f))
    out = float(num / denom)
    if not 0.0 < out < 1.0:
        raise ArithmeticError(f"df/dz_a = {out} outside (0, 1)")
    return out


@dataclass(frozen=True)
class ErrorModel:
    """``E = c * sigma_d * x + d`` for a regressor ``x``."""

    c: float
    d: float


@dataclass(frozen=True)
class ErrorPrediction:
    e_t: float
    e_phi: float
    valid: bool


def error_models(d: float, z_a: float, h1: float, sigma_d: float, model_t: ErrorModel,
                 model_phi: ErrorModel, validity_threshold: float = 0.5) -> ErrorPrediction:
    """Linear error predictions in ``d/z_a`` (translation) and ``d/(z_a h1)`` (orientation).

    ``valid`` is False when the predicted orientation error exceeds
    ``validity_threshold`` radians, where the small-perturbation model breaks.
    """
    e_t = model_t.c * sigma_d * d / z_a + model_t.d
    e_phi = model_phi.c * sigma_d * d / (z_a * h1) + model_phi.d
    return ErrorPrediction(e_t, e_phi, e_phi <= validity_threshold)


@dataclass(frozen=True)
class AnalyticFloors:
    z_a: float
    h1: float
    distance: float
    translation_floor: float | None
    far_field_translation: float
    j3_tag1_sq: float
    far_field_j3_tag1_sq: float
    note: str = ""


def analytic_floors(pose: Pose, layout: SensorLayout, k: float = SQRT3) -> AnalyticFloors:
    """Altitude-based floors for a 4-anchor, 3-tag layout at the given pose.

    ``distance`` is the mean anchor-tag distance; the ``far_field_*`` fields are
    the far-field approximations 3 z_a / (2d) and 3 z_a^2 / (4 d^2).
    """
    frame = canonical_anchor_frame(layout.anchors)
    tag_h = canonical_tag_frame(layout.tags).altitude
    anchors_c = frame.transform.apply(layout.anchors[list(frame.order)])
    tags_c = frame.transform.apply(tag_positions(pose, layout))
    rho = np.linalg.norm(tags_c[:, None, :2] - anchors_c[None, :, :2], axis=-1)
    dist = float(np.mean(np.linalg.norm(tags_c[:, None, :] - anchors_c[None, :, :], axis=-1)))
    z_a = frame.altitude
    note = ""
    try:
        floor = translation_floor(z_a, rho, k)
    except AssumptionViolated as exc:
        floor, note = None, str(exc)
    jac = assemble_jacobian(pose, layout)
    j3 = orientation_bound(jac, layout, pose).j3_tag1_sq if layout.n_tags == 3 else math.nan
    return AnalyticFloors(z_a, tag_h, dist, floor, 1.5 * z_a / dist, j3,
                          0.75 * z_a ** 2 / dist ** 2, note)
