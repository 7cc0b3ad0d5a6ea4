"""Rigid-body transforms, so(3) maps and triangle/tetrahedron geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateSimplex, NonSkewInput, NotARotation

ROTATION_TOL = 1e-9
SMALL_ANGLE = 1e-6
NEAR_PI = 1e-6
DEGENERATE_CONTENT = 1e-12


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix such that ``hat(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m, tol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`hat`."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or np.max(np.abs(m + m.T)) > tol:
        raise NonSkewInput("matrix is not skew-symmetric")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def is_rotation(r, tol: float = ROTATION_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return (np.max(np.abs(r.T @ r - np.eye(3))) <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol)


def exp_so3(phi) -> np.ndarray:
    """Rodrigues formula; second-order Taylor series below ``SMALL_ANGLE``."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = math.sqrt(phi @ phi)
    k = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def _canonical_sign(axis: np.ndarray) -> np.ndarray:
    for c in axis:
        if abs(c) > 1e-12:
            return axis if c > 0 else -axis
    return axis


def log_so3(r) -> np.ndarray:
    """Principal-branch logarithm, returned as the rotation vector (norm <= pi).

    At exactly pi the axis sign is ambiguous; the axis is then chosen with its
    first nonzero component positive.
    """
    r = np.asarray(r, dtype=float)
    if not is_rotation(r):
        raise NotARotation("matrix is not a proper rotation")
    skew_part = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_t = 0.5 * np.linalg.norm(skew_part)
    cos_t = 0.5 * (np.trace(r) - 1.0)
    theta = math.atan2(sin_t, cos_t)
    if theta < SMALL_ANGLE:
        return 0.5 * skew_part * (1.0 + theta * theta / 6.0)
    if math.pi - theta > NEAR_PI:
        return skew_part * (theta / (2.0 * sin_t))
    # near pi: the symmetric part is (1 - cos) a a^T + cos I
    sym = 0.5 * (r + r.T) - cos_t * np.eye(3)
    w, v = np.linalg.eigh(sym)
    axis = v[:, np.argmax(w)]
    if np.linalg.norm(skew_part) > 1e-12:
        axis = axis if axis @ skew_part >= 0 else -axis
    else:
        axis = _canonical_sign(axis)
    return theta * axis


def rotation_angle(r) -> float:
    return float(np.linalg.norm(log_so3(r)))


@dataclass(frozen=True)
class AxisAngle:
    """An so(3) element stored as a rotation vector in radians."""

    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.phi))

    def to_matrix(self) -> np.ndarray:
        return exp_so3(self.phi)

    @classmethod
    def from_matrix(cls, r) -> "AxisAngle":
        return cls(log_so3(r))


@dataclass(frozen=True)
class Pose:
    """Transform taking body-frame coordinates to the host frame.

    ``x_G = rotation @ x_B + translation``
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not is_rotation(r):
            raise NotARotation("pose rotation must be orthogonal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_vector(cls, translation, phi) -> "Pose":
        return cls(exp_so3(phi), translation)

    @property
    def phi(self) -> np.ndarray:
        return log_so3(self.rotation)

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def retract(self, delta) -> "Pose":
        """Additive translation, right-multiplicative rotation update."""
        delta = np.asarray(delta, dtype=float)
        return Pose(self.rotation @ exp_so3(delta[3:]), self.translation + delta[:3])


def translation_error(truth: Pose, estimate: Pose) -> float:
    return float(np.linalg.norm(truth.translation - estimate.translation))


def orientation_error(truth: Pose, estimate: Pose) -> float:
    """Norm of the rotation vector of ``C^T C_hat``."""
    return rotation_angle(truth.rotation.T @ estimate.rotation)


def rigid_fit(points_b, points_g) -> Pose:
    """Least-squares proper rigid transform mapping ``points_b`` onto ``points_g``."""
    a = np.asarray(points_b, dtype=float)
    b = np.asarray(points_g, dtype=float)
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, _, vt = np.linalg.svd(h)
    s = np.diag([1.0, 1.0, np.sign(np.linalg.det(vt.T @ u.T)) or 1.0])
    r = vt.T @ s @ u.T
    # re-orthonormalize against SVD round-off
    uu, _, vv = np.linalg.svd(r)
    r = uu @ vv
    return Pose(r, cb - r @ ca)


def best_fit_plane(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (centroid, unit normal, singular values of the centered points)."""
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c)
    s = np.concatenate([s, np.zeros(3 - len(s))])
    return c, vt[-1], s


def reflect_points(points, origin, normal) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    n = np.asarray(normal, dtype=float) / np.linalg.norm(normal)
    return pts - 2.0 * np.outer((pts - origin) @ n, n)


@dataclass(frozen=True)
class Simplex:
    """A triangle (3 vertices) or tetrahedron (4 vertices) in 3-space."""

    vertices: np.ndarray
    eps_degenerate: float = DEGENERATE_CONTENT

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] not in (3, 4):
            raise ValueError("a simplex needs 3 or 4 vertices in R^3")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if abs(self._scaled_content()) <= self.eps_degenerate:
            kind = "collinear" if len(v) == 3 else "coplanar"
            raise DegenerateSimplex(f"vertices are {kind}")

    @property
    def kind(self) -> str:
        return "triangle" if len(self.vertices) == 3 else "tetrahedron"

    def _scaled_content(self) -> float:
        # 2S for a triangle, 6V for a tetrahedron
        v = self.vertices
        if len(v) == 3:
            return float(np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])))
        return float(np.linalg.det(np.stack([v[1] - v[0], v[2] - v[0], v[3] - v[0]])))


@dataclass(frozen=True)
class SimplexMetrics:
    altitudes: np.ndarray
    circumradius: float
    content: float


def _triangle_area(a, b, c) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))


def simplex_metrics(s: Simplex) -> SimplexMetrics:
    v = s.vertices
    if len(v) == 3:
        area = _triangle_area(*v)
        edges = np.array([np.linalg.norm(v[(i + 2) % 3] - v[(i + 1) % 3]) for i in range(3)])
        return SimplexMetrics(2.0 * area / edges, float(np.prod(edges) / (4.0 * area)), area)
    volume = abs(s._scaled_content()) / 6.0
    faces = np.array([_triangle_area(*np.delete(v, i, axis=0)) for i in range(4)])
    # circumcenter c: 2 (v_k - v_0) . c = |v_k|^2 - |v_0|^2
    a = 2.0 * (v[1:] - v[0])
    b = np.sum(v[1:] ** 2, axis=1) - v[0] @ v[0]
    centre = np.linalg.solve(a, b)
    return SimplexMetrics(3.0 * volume / faces, float(np.linalg.norm(v[0] - centre)), volume)


@dataclass(frozen=True)
class OptimalitySlack:
    """Slack of the altitude inequalities; both are zero only for regular simplexes."""

    sum_h_sq_slack: float
    content_slack: float


def check_simplex_optimality(s: Simplex) -> OptimalitySlack:
    m = simplex_metrics(s)
    h, r = m.altitudes, m.circumradius
    if s.kind == "tetrahedron":
        return OptimalitySlack(64.0 / 9.0 * r * r - float(h @ h),
                               m.content - math.sqrt(3.0) / 8.0 * float(np.prod(h)) ** 0.75)
    return OptimalitySlack(27.0 / 4.0 * r * r - float(h @ h),
                           math.sqrt(3.0) * m.content - float(np.prod(h)) ** (2.0 / 3.0))


def regular_layout(kind: Literal["triangle", "tetrahedron"], circumradius: float) -> Simplex:
    """Regular simplex centred on its circumcenter at the origin.

    Triangle: z=0 plane, first vertex on +y. Tetrahedron: base face in the
    plane z = -R/3 and vertex 4 (the apex) on +z.
    """
    if circumradius <= 0:
        raise ValueError("circumradius must be positive")
    r = float(circumradius)
    if kind == "triangle":
        ang = math.pi / 2 + np.arange(3) * 2 * math.pi / 3
        return Simplex(np.column_stack([r * np.cos(ang), r * np.sin(ang), np.zeros(3)]))
    if kind == "tetrahedron":
        rb = r * 2.0 * math.sqrt(2.0) / 3.0
        ang = np.arange(3) * 2 * math.pi / 3
        base = np.column_stack([rb * np.cos(ang), rb * np.sin(ang), np.full(3, -r / 3.0)])
        return Simplex(np.vstack([base, [0.0, 0.0, r]]))
    raise ValueError(f"unknown simplex kind {kind!r}")


def regular_altitude(kind: str, circumradius: float) -> float:
    """Altitude of a regular simplex: 4R/3 (tetrahedron), 3R/2 (triangle)."""
    return (4.0 / 3.0 if kind == "tetrahedron" else 1.5) * circumradius


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return quaternion_to_matrix(q)


def quaternion_to_matrix(q: Sequence[float]) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
