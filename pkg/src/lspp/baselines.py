"""Calibration planners that work directly in joint space.

* A potential field that maps a task-space attraction and per-control-point
  repulsions through damped Jacobian pseudo-inverses.  It reads obstacle
  geometry directly.
* RRT-Connect with the goal tree rooted at the scenario's hidden target
  configuration.  That configuration is privileged information, so results
  are labelled ``oracle-goal``.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .datagen import Scenario
from .geometry import CollisionChecker
from .kinematics import N_FRAMES, clamp_to_limits, frame_jacobians, link_frames, sample_uniform
from .planner import PlanResult, joint_path_result

DAMPING = 1e-4


@dataclass(frozen=True)
class PotentialFieldConfig:
    step: float = 0.02
    attractive_gain: float = 5.0
    v_max: float = 1.0
    rho: float = 0.1
    alpha_rep: float = 6.0
    max_iters: int = 1000
    gamma: float = 0.01
    stall_window: int = 100
    stall_tol: float = 1e-4

    def __post_init__(self):
        if min(self.step, self.attractive_gain, self.rho, self.alpha_rep, self.gamma) <= 0 or self.v_max < 0:
            raise ValueError("potential-field parameters must be positive")
        if self.max_iters < 0 or self.stall_window < 1:
            raise ValueError("bad iteration budget")


@dataclass(frozen=True)
class RrtConnectConfig:
    max_samples: int = 5000
    step: float = 0.2
    resolution: float = 0.02
    goal_tolerance: float = 1e-9

    def __post_init__(self):
        if self.max_samples < 1 or self.step <= 0 or self.resolution <= 0:
            raise ValueError("RRT-Connect parameters must be positive")
        if self.resolution > self.step:
            raise ValueError("edge-check resolution must not exceed the step size")


def damped_pinv(J: np.ndarray, damping: float = DAMPING) -> np.ndarray:
    """``J^T (J J^T + damping I)^-1`` for a batch of ``(m, n)`` matrices."""
    J = np.asarray(J, dtype=float)
    m = J.shape[-2]
    JJt = J @ np.swapaxes(J, -1, -2) + damping * np.eye(m)
    return np.swapaxes(np.linalg.solve(JJt, J), -1, -2)


def repulsive_magnitude(d, v_max: float, rho: float, alpha_rep: float) -> np.ndarray:
    """Sigmoid fall-off: ``v_max / (1 + exp((2 d / rho - 1) alpha_rep))``."""
    x = np.clip((2.0 * np.asarray(d, dtype=float) / rho - 1.0) * alpha_rep, -700.0, 700.0)
    return v_max / (1.0 + np.exp(x))


def _control_radii(checker: CollisionChecker) -> np.ndarray:
    """Radius at each frame origin: the larger of the two capsules meeting there."""
    r = checker.radii
    out = np.empty(N_FRAMES)
    out[0] = r[0]
    out[-1] = r[-1]
    out[1:-1] = np.maximum(r[:-1], r[1:])
    return out


def _point_cylinder_push(p: np.ndarray, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance and unit escape direction from points ``(P, 3)`` to cylinders ``(O, 4)``.

    Returns shapes ``(P, O)`` and ``(P, O, 3)``.  Points inside get distance 0
    and a radial escape direction.
    """
    rel = p[:, None, :2] - obs[None, :, :2]
    rho = np.linalg.norm(rel, axis=-1)
    radial = np.where(rho[..., None] > 1e-12, rel / np.maximum(rho, 1e-12)[..., None], np.array([1.0, 0.0]))
    z = p[:, None, 2]
    h = obs[None, :, 2]
    r = obs[None, :, 3]
    dr = np.maximum(rho - r, 0.0)
    dz = np.maximum(z - h, 0.0)  # table-resting cylinders; below-zero points are table hits anyway
    vec = np.concatenate([radial * dr[..., None], dz[..., None]], axis=-1)
    dist = np.hypot(dr, dz)
    inside = dist <= 1e-12
    unit = np.where(inside[..., None], np.concatenate([radial, np.zeros_like(dz)[..., None]], axis=-1),
                    vec / np.maximum(dist, 1e-12)[..., None])
    return dist, unit


class PotentialFieldPlanner:
    name = "pf"

    def __init__(self, config: PotentialFieldConfig | None = None, checker: CollisionChecker | None = None):
        self.config = config if config is not None else PotentialFieldConfig()
        self.checker = checker if checker is not None else CollisionChecker()
        self._radii = _control_radii(self.checker)

    def direction(self, q: np.ndarray, target: np.ndarray, obstacles: np.ndarray) -> tuple[np.ndarray, float]:
        """Unscaled joint-space direction and the current end-effector distance."""
        cfg = self.config
        frames = link_frames(q, self.checker.robot)
        points = frames[:, :3, 3]
        err = target - points[-1]
        jac = frame_jacobians(q, self.checker.robot)
        dq = damped_pinv(jac[-1]) @ (cfg.attractive_gain * err)
        if len(obstacles) and cfg.v_max > 0:
            dist, unit = _point_cylinder_push(points, obstacles)
            clearance = dist - self._radii[:, None]
            mag = repulsive_magnitude(clearance, cfg.v_max, cfg.rho, cfg.alpha_rep)
            v_rep = np.sum(mag[..., None] * unit, axis=1)  # (9, 3)
            active = np.linalg.norm(v_rep, axis=1) > 1e-12
            active[0] = False  # the base never moves
            if np.any(active):
                dq = dq + np.einsum("pij,pj->i", damped_pinv(jac[active]), v_rep[active])
        return dq, float(np.linalg.norm(err))

    def plan(self, scenario: Scenario, seed: int = 0) -> PlanResult:
        del seed  # deterministic
        cfg = self.config
        t0 = time.perf_counter()
        limits = self.checker.robot.limits
        target = np.asarray(scenario.target_e, dtype=float)
        obstacles = scenario.obstacle_array
        q = np.asarray(scenario.start_q, dtype=float).copy()
        path = [q.copy()]
        best = np.inf
        best_at = 0
        status = "max-steps"
        for it in range(cfg.max_iters + 1):
            dq, dist = self.direction(q, target, obstacles)
            if dist < cfg.gamma:
                status = "reached"
                break
            if dist < best - cfg.stall_tol:
                best, best_at = dist, it
            elif it - best_at >= cfg.stall_window:
                status = "stalled"
                break
            if it == cfg.max_iters:
                break
            if not np.all(np.isfinite(dq)):
                status = "non-finite"
                break
            scale = max(1.0, float(np.max(np.abs(dq))))
            q = clamp_to_limits(q + cfg.step * dq / scale, limits)
            path.append(q.copy())
        return joint_path_result(self.name, path, target, status, time.perf_counter() - t0,
                                 {"config": cfg.__dict__.copy()})


def plan_potential_field(scenario: Scenario, config: PotentialFieldConfig | None = None,
                         checker: CollisionChecker | None = None) -> PlanResult:
    return PotentialFieldPlanner(config, checker).plan(scenario)


def sweep_potential_field(scenarios: Sequence[Scenario], grid: dict[str, Iterable] | None = None,
                          base: PotentialFieldConfig | None = None, threshold: float = 0.01,
                          checker: CollisionChecker | None = None) -> tuple[PotentialFieldConfig, list[dict]]:
    """Coarse grid search; returns the config with the most collision-free reaches and all rows."""
    base = base if base is not None else PotentialFieldConfig()
    checker = checker if checker is not None else CollisionChecker()
    grid = grid if grid is not None else {"v_max": (0.5, 1.0, 2.0), "rho": (0.05, 0.1, 0.2), "alpha_rep": (3.0, 6.0)}
    keys = sorted(grid)
    rows = []
    best_cfg, best_score = base, -1
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(base, **dict(zip(keys, values)))
        planner = PotentialFieldPlanner(cfg, checker)
        wins = 0
        for sc in scenarios:
            res = planner.plan(sc)
            ok = res.target_loss[-1] < threshold and not checker.path_in_collision(
                res.joint_path, sc.obstacle_array, include_self_table=False)
            wins += int(ok)
        rows.append({**dict(zip(keys, values)), "successes": wins, "n": len(scenarios)})
        if wins > best_score:
            best_cfg, best_score = cfg, wins
    return best_cfg, rows


class RrtConnectPlanner:
    """Bidirectional RRT with greedy connection; the goal tree grows from the hidden target config."""

    name = "rrtc"

    def __init__(self, config: RrtConnectConfig | None = None, checker: CollisionChecker | None = None):
        self.config = config if config is not None else RrtConnectConfig()
        self.checker = checker if checker is not None else CollisionChecker()

    def _edge_free(self, a, b, obstacles) -> bool:
        return not self.checker.path_in_collision(np.stack([a, b]), obstacles, self.config.resolution)

    def _steer(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = b - a
        span = float(np.max(np.abs(d)))
        if span <= self.config.step:
            return b.copy()
        return a + d * (self.config.step / span)

    def plan(self, scenario: Scenario, seed: int = 0) -> PlanResult:
        cfg = self.config
        t0 = time.perf_counter()
        rng = np.random.default_rng(seed)
        obstacles = scenario.obstacle_array
        limits = self.checker.robot.limits
        start = np.asarray(scenario.start_q, dtype=float)
        goal = np.asarray(scenario.target_q_hidden, dtype=float)
        info = {"oracle_goal": True, "config": cfg.__dict__.copy(), "seed": seed}

        def done(path, status):
            info["samples"] = samples
            return joint_path_result(self.name, path, scenario.target_e, status, time.perf_counter() - t0, info)

        samples = 0
        if np.max(np.abs(start - goal)) <= cfg.goal_tolerance:
            return done([start], "reached")

        cap = cfg.max_samples + 2
        nodes = [np.empty((cap, 7)), np.empty((cap, 7))]
        parents = [np.full(cap, -1, dtype=int), np.full(cap, -1, dtype=int)]
        count = [1, 1]
        nodes[0][0], nodes[1][0] = start, goal

        def add(t, q, parent):
            nodes[t][count[t]] = q
            parents[t][count[t]] = parent
            count[t] += 1
            return count[t] - 1

        def nearest(t, q):
            d = nodes[t][: count[t]] - q
            return int(np.argmin(np.einsum("ij,ij->i", d, d)))

        def extend(t, q):
            i = nearest(t, q)
            new = self._steer(nodes[t][i], q)
            if not self._edge_free(nodes[t][i], new, obstacles):
                return None, False
            j = add(t, new, i)
            return j, bool(np.max(np.abs(new - q)) <= cfg.goal_tolerance)

        def branch(t, i):
            out = []
            while i >= 0:
                out.append(nodes[t][i])
                i = parents[t][i]
            return out

        a = 0
        while samples < cfg.max_samples:
            samples += 1
            q_rand = sample_uniform(rng, limits)
            j, _ = extend(a, q_rand)
            if j is not None:
                target = nodes[a][j].copy()
                b = 1 - a
                while count[b] < cap:
                    k, reached = extend(b, target)
                    if k is None:
                        break
                    if reached:
                        pa, pb = branch(a, j), branch(b, k)
                        if a == 0:
                            path = pa[::-1] + pb[1:]
                        else:
                            path = pb[::-1] + pa[1:]
                        return done(path, "reached")
            if count[0] >= cap or count[1] >= cap:
                break
            a = 1 - a
        return done([start], "budget")


def plan_rrt_connect(scenario: Scenario, config: RrtConnectConfig | None = None, seed: int = 0,
                     checker: CollisionChecker | None = None) -> PlanResult:
    return RrtConnectPlanner(config, checker).plan(scenario, seed)
