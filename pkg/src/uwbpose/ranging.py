"""Range measurement model between tags on the tracked node and host anchors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import NoCoplanarPlane, NoMirrorPose
from .geometry import Pose, best_fit_plane, reflect_points, rigid_fit

COINCIDENT_TOL = 1e-6
COPLANAR_RATIO = 1e-9

Seed = Union[int, Sequence[int]]


def make_rng(seed: Seed) -> np.random.Generator:
    """PCG64 generator keyed through ``numpy.random.SeedSequence``.

    A tuple seed such as ``(base_seed, pose_index, trial_index)`` is hashed by
    SeedSequence, which gives independent, platform-stable streams per trial.
    """
    entropy = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _min_pairwise(points: np.ndarray) -> float:
    if len(points) < 2:
        return np.inf
    diff = points[:, None, :] - points[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    return float(dist[np.triu_indices(len(points), 1)].min())


@dataclass(frozen=True)
class SensorLayout:
    """Anchors in the host frame and tags in the tracked body frame, meters."""

    anchors: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        a = np.array(self.anchors, dtype=float).reshape(-1, 3)
        t = np.array(self.tags, dtype=float).reshape(-1, 3)
        if len(a) < 1 or len(t) < 1:
            raise ValueError("layout needs at least one anchor and one tag")
        if _min_pairwise(a) <= COINCIDENT_TOL:
            raise ValueError("two anchors coincide")
        if _min_pairwise(t) <= COINCIDENT_TOL:
            raise ValueError("two tags coincide")
        a.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "tags", t)

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    @property
    def size(self) -> int:
        return self.n_anchors * self.n_tags


@dataclass(frozen=True)
class RangeSet:
    """Stacked ranges, row-major by tag then anchor."""

    values: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    def as_matrix(self, n_anchors: int) -> np.ndarray:
        return self.values.reshape(-1, n_anchors)


def tag_positions(pose: Pose, layout: SensorLayout) -> np.ndarray:
    return layout.tags @ pose.rotation.T + pose.translation


def range_vector(pose: Pose, layout: SensorLayout) -> RangeSet:
    p = tag_positions(pose, layout)
    d = np.linalg.norm(p[:, None, :] - layout.anchors[None, :, :], axis=-1)
    return RangeSet(d.ravel(), 0.0)


def add_noise(ranges: RangeSet, sigma: float, seed: Seed) -> RangeSet:
    """Add i.i.d. N(0, sigma^2) noise. Values are not clamped at zero."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return RangeSet(ranges.values, 0.0)
    rng = make_rng(seed)
    return RangeSet(ranges.values + sigma * rng.standard_normal(len(ranges)), float(sigma))


def anchor_plane(anchors) -> tuple[np.ndarray, np.ndarray] | None:
    """Best-fit plane (centroid, normal) if the anchors are coplanar, else None."""
    anchors = np.asarray(anchors, dtype=float)
    if len(anchors) < 3:
        raise ValueError("a unique anchor plane needs at least 3 anchors")
    c, n, s = best_fit_plane(anchors)
    if s[2] < COPLANAR_RATIO * s[0]:
        return c, n
    return None


def mirror_pose(pose: Pose, layout: SensorLayout) -> Pose:
    """Pose whose tags are the reflection of ``pose``'s tags through the anchor plane.

    Raises NoCoplanarPlane when the anchors do not lie in a common plane, and
    NoMirrorPose when the tags themselves are not coplanar (a reflected
    non-planar tag set cannot be reached by a proper rotation).
    """
    plane = anchor_plane(layout.anchors)
    if plane is None:
        raise NoCoplanarPlane("anchors are not coplanar; the mirror ambiguity does not exist")
    mirrored = reflect_points(tag_positions(pose, layout), *plane)
    out = rigid_fit(layout.tags, mirrored)
    if np.max(np.abs(out.apply(layout.tags) - mirrored)) > 1e-9 * max(1.0, np.abs(mirrored).max()):
        raise NoMirrorPose("tags are not coplanar; their mirror image is not a rigid motion")
    return out
