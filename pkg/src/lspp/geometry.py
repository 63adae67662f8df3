"""Geometric collision oracle: capsule arm model against upright cylinders.

The arm is approximated by eight capsules (base column, six inter-joint
links, flange link).  Cylinders stand on the table: the solid
``{(u, v, w): (u-x)^2 + (v-y)^2 <= r^2, 0 <= w <= h}``.  The table is the
half-space ``z <= 0``.  A signed distance of exactly zero counts as contact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kinematics import N_FRAMES, RobotConfig, _robot, frame_origins

N_CAPSULES = N_FRAMES - 1
TERNARY_ITERS = 48  # (2/3)^48 ~ 4e-9 of the segment length


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    h: float
    r: float

    def __post_init__(self):
        if not (self.h > 0 and self.r > 0):
            raise ValueError(f"obstacle needs h > 0 and r > 0, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.h, self.r], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Obstacle":
        x, y, h, r = (float(v) for v in arr)
        return cls(x, y, h, r)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "h": self.h, "r": self.r}


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")


@dataclass(frozen=True)
class CollisionReport:
    self_collision: bool
    table: bool
    obstacle_hits: tuple[bool, ...]

    @property
    def any(self) -> bool:
        return self.self_collision or self.table or any(self.obstacle_hits)

    @property
    def obstacle(self) -> bool:
        return any(self.obstacle_hits)


def obstacles_array(obstacles) -> np.ndarray:
    """Stack obstacles (Obstacle objects or length-4 rows) into an ``(n, 4)`` array."""
    rows = [o.as_array() if isinstance(o, Obstacle) else np.asarray(o, dtype=float) for o in obstacles]
    if not rows:
        return np.zeros((0, 4))
    return np.stack(rows).reshape(-1, 4)


def point_cylinder_distance(p, obs) -> np.ndarray:
    """Unsigned distance from points ``(..., 3)`` to solid cylinders ``(..., 4)`` (0 inside)."""
    p = np.asarray(p, dtype=float)
    obs = np.asarray(obs, dtype=float)
    dx = p[..., 0] - obs[..., 0]
    dy = p[..., 1] - obs[..., 1]
    radial = np.maximum(np.hypot(dx, dy) - obs[..., 3], 0.0)
    w = p[..., 2]
    vertical = np.maximum(np.maximum(-w, w - obs[..., 2]), 0.0)
    return np.hypot(radial, vertical)


def _canonical(p0: np.ndarray, p1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # fixed endpoint order makes the search independent of how the segment was given
    swap = np.zeros(p0.shape[:-1], dtype=bool)
    undecided = np.ones_like(swap)
    for k in range(3):
        gt = p0[..., k] > p1[..., k]
        lt = p0[..., k] < p1[..., k]
        swap |= undecided & gt
        undecided &= ~(gt | lt)
    s = swap[..., None]
    return np.where(s, p1, p0), np.where(s, p0, p1)


def capsule_cylinder_distance_batch(p0, p1, radius, obs) -> np.ndarray:
    """Signed capsule-to-cylinder distance, broadcasting over leading dims.

    Minimises point-to-cylinder distance along the capsule axis by ternary
    search (the distance to a convex solid is convex along a line), then
    subtracts the capsule radius.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    obs = np.asarray(obs, dtype=float)
    shape = np.broadcast_shapes(p0.shape[:-1], p1.shape[:-1], obs.shape[:-1], np.shape(radius))
    p0 = np.broadcast_to(p0, shape + (3,))
    p1 = np.broadcast_to(p1, shape + (3,))
    obs = np.broadcast_to(obs, shape + (4,))
    a, b = _canonical(p0, p1)
    d = b - a

    def f(t):
        return point_cylinder_distance(a + t[..., None] * d, obs)

    lo = np.zeros(shape)
    hi = np.ones(shape)
    for _ in range(TERNARY_ITERS):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        left = f(m1) <= f(m2)
        hi = np.where(left, m2, hi)
        lo = np.where(left, lo, m1)
    best = np.minimum(f(0.5 * (lo + hi)), np.minimum(f(np.zeros(shape)), f(np.ones(shape))))
    return best - radius


def capsule_cylinder_distance(c: Capsule, o: Obstacle) -> float:
    return float(capsule_cylinder_distance_batch(c.p0, c.p1, c.radius, o.as_array()))


def segment_segment_distance(p0, p1, q0, q1) -> np.ndarray:
    """Closest distance between segments ``[p0, p1]`` and ``[q0, q1]`` (batched, degenerate-safe)."""
    p0, p1, q0, q1 = (np.asarray(v, dtype=float) for v in (p0, p1, q0, q1))
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    eps = 1e-14

    def safe(x, ok):
        return np.where(ok, x, 1.0)

    denom = a * e - b * b
    ok_denom = denom > eps * np.maximum(a * e, eps)
    s = np.where(ok_denom, np.clip((b * f - c * e) / safe(denom, ok_denom), 0.0, 1.0), 0.0)
    t = np.where(e > eps, (b * s + f) / safe(e, e > eps), 0.0)
    recompute = (t < 0.0) | (t > 1.0) | (e <= eps)
    t = np.clip(t, 0.0, 1.0)
    s = np.where(recompute, np.where(a > eps, np.clip((t * b - c) / safe(a, a > eps), 0.0, 1.0), 0.0), s)
    # degenerate first segment: project its point onto the second
    t = np.where(a <= eps, np.where(e > eps, np.clip(f / safe(e, e > eps), 0.0, 1.0), 0.0), t)
    s = np.where(a <= eps, 0.0, s)
    cp = p0 + s[..., None] * d1
    cq = q0 + t[..., None] * d2
    return np.linalg.norm(cp - cq, axis=-1)


@dataclass(frozen=True)
class ArmShapeModel:
    """Capsule radii and self-collision exclusions for the arm."""

    radii: tuple[float, ...]
    exclude: frozenset[tuple[int, int]]

    def __post_init__(self):
        if len(self.radii) != N_CAPSULES or min(self.radii) <= 0:
            raise ValueError(f"need {N_CAPSULES} positive radii")
        norm = frozenset((min(i, j), max(i, j)) for i, j in self.exclude)
        object.__setattr__(self, "exclude", norm)

    @classmethod
    def from_robot(cls, robot: RobotConfig | None = None) -> "ArmShapeModel":
        robot = _robot(robot)
        return cls(tuple(robot.capsule_radii), robot.self_exclude)

    def excluded(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.exclude

    @property
    def check_pairs(self) -> list[tuple[int, int]]:
        return [
            (i, j)
            for i in range(N_CAPSULES)
            for j in range(i + 1, N_CAPSULES)
            if abs(i - j) > 1 and not self.excluded(i, j)
        ]


def arm_capsules(q, robot: RobotConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Capsule endpoints ``(..., 8, 3)`` twice: starts and ends."""
    origins = frame_origins(q, robot)
    return origins[..., :-1, :], origins[..., 1:, :]


class CollisionChecker:
    """Batched collision queries for one robot description."""

    def __init__(self, robot: RobotConfig | None = None, model: ArmShapeModel | None = None):
        self.robot = _robot(robot)
        self.model = model if model is not None else ArmShapeModel.from_robot(self.robot)
        self.radii = np.array(self.model.radii)
        pairs = self.model.check_pairs
        self._pi = np.array([p[0] for p in pairs], dtype=int)
        self._pj = np.array([p[1] for p in pairs], dtype=int)

    def capsules(self, q):
        return arm_capsules(q, self.robot)

    def self_collision(self, q) -> np.ndarray:
        a, b = self.capsules(q)
        return self._self_from_capsules(a, b)

    def _self_from_capsules(self, a, b):
        if self._pi.size == 0:
            return np.zeros(a.shape[:-2], dtype=bool)
        dist = segment_segment_distance(a[..., self._pi, :], b[..., self._pi, :], a[..., self._pj, :], b[..., self._pj, :])
        return np.any(dist < self.radii[self._pi] + self.radii[self._pj], axis=-1)

    def _table_from_capsules(self, a, b):
        zmin = np.minimum(a[..., 1:, 2], b[..., 1:, 2])
        return np.any(zmin < self.radii[1:], axis=-1)

    def obstacle_distances(self, q, obstacles) -> np.ndarray:
        """Signed clearance per (config, obstacle, capsule): shape ``(..., n_obs, 8)``."""
        obs = obstacles_array(obstacles)
        a, b = self.capsules(q)
        return self._obs_from_capsules(a, b, obs)

    def _obs_from_capsules(self, a, b, obs):
        if obs.shape[0] == 0:
            return np.zeros(a.shape[:-2] + (0, N_CAPSULES))
        return capsule_cylinder_distance_batch(
            a[..., None, :, :], b[..., None, :, :], self.radii, obs[:, None, :]
        )

    def flags(self, q, obstacles=()) -> dict[str, np.ndarray]:
        """Vectorised collision flags: self, table, per-obstacle hits ``(..., n_obs)``."""
        obs = obstacles_array(obstacles)
        a, b = self.capsules(q)
        hits = self._obs_from_capsules(a, b, obs).min(axis=-1, initial=np.inf) <= 0.0
        return {
            "self": self._self_from_capsules(a, b),
            "table": self._table_from_capsules(a, b),
            "obstacles": hits,
        }

    def in_collision(self, q, obstacles=(), include_self_table: bool = True) -> np.ndarray:
        fl = self.flags(q, obstacles)
        hit = np.any(fl["obstacles"], axis=-1)
        if include_self_table:
            hit = hit | fl["self"] | fl["table"]
        return hit

    def arm_in_collision(self, q, obstacles=()) -> CollisionReport:
        q = np.asarray(q, dtype=float).reshape(-1)
        fl = self.flags(q, obstacles)
        return CollisionReport(
            self_collision=bool(fl["self"]),
            table=bool(fl["table"]),
            obstacle_hits=tuple(bool(v) for v in np.atleast_1d(fl["obstacles"])),
        )

    def clearance(self, q, obstacles) -> np.ndarray:
        """Minimum signed clearance over capsules and obstacles, ``inf`` if none."""
        d = self.obstacle_distances(q, obstacles)
        return d.min(axis=(-1, -2), initial=np.inf)

    def path_in_collision(
        self, path, obstacles=(), resolution: float = 0.02, include_self_table: bool = True, chunk: int = 4096
    ) -> bool:
        configs = interpolate_path(path, resolution)
        for start in range(0, len(configs), chunk):
            if np.any(self.in_collision(configs[start : start + chunk], obstacles, include_self_table)):
                return True
        return False


def interpolate_path(path, resolution: float = 0.02) -> np.ndarray:
    """Dyadic joint-space densification: consecutive configs differ by <= resolution (max-norm).

    Each segment is split into 2^k equal parts, so a finer resolution always
    checks a superset of the configurations checked at a coarser one.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    if len(path) == 0:
        raise ValueError("path must be non-empty")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    out = [path[:1]]
    for prev, nxt in zip(path[:-1], path[1:]):
        span = np.max(np.abs(nxt - prev))
        n = 1
        while span / n > resolution:
            n *= 2
        t = np.arange(1, n + 1, dtype=float)[:, None] / n
        out.append(prev + t * (nxt - prev))
    return np.concatenate(out)


_CHECKERS: dict[int, CollisionChecker] = {}


def _checker(robot: RobotConfig | None, model: ArmShapeModel | None) -> CollisionChecker:
    if model is not None:
        return CollisionChecker(robot, model)
    key = id(robot)
    if key not in _CHECKERS:
        _CHECKERS[key] = CollisionChecker(robot)
    return _CHECKERS[key]


def arm_in_collision(q, obstacles: Sequence[Obstacle] = (), model: ArmShapeModel | None = None,
                     robot: RobotConfig | None = None) -> CollisionReport:
    return _checker(robot, model).arm_in_collision(q, obstacles)


def path_in_collision(path, obstacles: Sequence[Obstacle] = (), model: ArmShapeModel | None = None,
                      resolution: float = 0.02, robot: RobotConfig | None = None,
                      include_self_table: bool = True) -> bool:
    return _checker(robot, model).path_in_collision(path, obstacles, resolution, include_self_table)
