"""Metrics and benchmark reports.

Success is judged on the ground-truth forward kinematics of the final joint
configuration, never on a decoder's end-effector estimate, and requires a
path free of obstacle contact.  Self and table contact of the path is
reported in its own column.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .datagen import Scenario
from .geometry import CollisionChecker
from .kinematics import JointLimits, forward_kinematics, within_limits
from .planner import PlanResult

Z_95 = 1.96
DEGENERATE_LENGTH = 1e-6
REPORT_HEADER = [
    "planner", "k", "scenario", "seed", "success", "final_distance", "collided", "self_table_collision",
    "steps", "status", "wall_time", "path_length", "path_length_valid", "final_delta",
]


# -- per-plan metrics --------------------------------------------------------------


@dataclass(frozen=True)
class Judgment:
    success: bool
    final_distance: float
    collided: bool
    self_table_collision: bool


def judge_success(plan: PlanResult, scenario: Scenario, threshold: float = 0.01,
                  checker: CollisionChecker | None = None, resolution: float = 0.02) -> Judgment:
    checker = checker if checker is not None else CollisionChecker()
    path = plan.joint_path
    final = float(np.linalg.norm(forward_kinematics(path[-1], checker.robot) - np.asarray(scenario.target_e)))
    collided = checker.path_in_collision(path, scenario.obstacle_array, resolution, include_self_table=False)
    self_table = checker.path_in_collision(path, (), resolution, include_self_table=True)
    return Judgment(bool(final < threshold and not collided), final, bool(collided), bool(self_table))


def wilson_interval(successes: int, n: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= successes <= n:
        raise ValueError("need 0 <= successes <= n")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1.0 - p) / n + z2 / (4 * n * n))
    low = 0.0 if successes == 0 else max(0.0, center - half)
    high = 1.0 if successes == n else min(1.0, center + half)
    return low, high


def path_length(points) -> float:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def normalized_path_length(plan: PlanResult, scenario: Scenario) -> tuple[float, bool]:
    """Cartesian FK path length over the start-to-target distance; second item is validity."""
    e = forward_kinematics(plan.joint_path)
    straight = float(np.linalg.norm(forward_kinematics(scenario.start_q) - np.asarray(scenario.target_e)))
    if straight < DEGENERATE_LENGTH:
        return float("nan"), False
    return path_length(e) / straight, True


def consistency_error(states) -> np.ndarray:
    """``||e_hat - FK(q_hat)||`` per decoded state row ``(q_hat, e_hat)``."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    return np.linalg.norm(x[:, 7:10] - forward_kinematics(x[:, :7]), axis=1)


@dataclass
class ConsistencySummary:
    delta: np.ndarray
    median: float
    p95: float
    frac_below_1cm: float
    mean: float

    def histogram(self, bins: int = 50, upper: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        hi = upper if upper is not None else max(float(self.delta.max()), 1e-9)
        counts, edges = np.histogram(self.delta, bins=bins, range=(0.0, hi))
        return counts, edges

    def as_dict(self) -> dict[str, float]:
        return {"n": int(len(self.delta)), "median": self.median, "p95": self.p95,
                "frac_below_1cm": self.frac_below_1cm, "mean": self.mean}


def summarize_delta(delta) -> ConsistencySummary:
    d = np.asarray(delta, dtype=float)
    return ConsistencySummary(d, float(np.median(d)), float(np.percentile(d, 95)), float(np.mean(d < 0.01)),
                              float(d.mean()))


def sample_consistency(vae, n: int = 10_000, seed: int = 0) -> ConsistencySummary:
    """Decode ``n`` prior samples and measure their kinematic consistency."""
    _, states = vae.sample_prior(n, seed)
    return summarize_delta(consistency_error(states))


@dataclass(frozen=True)
class DynamicLimits:
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray

    def __post_init__(self):
        for name in ("velocity", "acceleration", "jerk"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(arr > 0):
                raise ValueError(f"{name} limits must be positive")
            object.__setattr__(self, name, arr)

    @classmethod
    def from_joint_limits(cls, limits: JointLimits) -> "DynamicLimits":
        return cls(limits.velocity, limits.acceleration, limits.jerk)


@dataclass
class FeasibilityReport:
    max_velocity: np.ndarray
    max_acceleration: np.ndarray | None
    max_jerk: np.ndarray | None
    velocity_violation: bool
    acceleration_violation: bool
    jerk_violation: bool
    position_violation: bool

    @property
    def any_violation(self) -> bool:
        return self.velocity_violation or self.acceleration_violation or self.jerk_violation or self.position_violation


def dynamic_feasibility(path, limits: DynamicLimits, frequency: float = 50.0,
                        joint_limits: JointLimits | None = None) -> FeasibilityReport:
    """Finite-difference derivatives of a path executed one state per control period."""
    q = np.atleast_2d(np.asarray(path, dtype=float))
    if frequency <= 0:
        raise ValueError("frequency must be positive")
    if len(q) < 2:
        raise ValueError("need at least two states")
    dt = 1.0 / frequency
    v = np.diff(q, axis=0) / dt
    a = np.diff(v, axis=0) / dt if len(q) >= 3 else None
    j = np.diff(a, axis=0) / dt if len(q) >= 4 else None
    vmax = np.abs(v).max(axis=0)
    amax = np.abs(a).max(axis=0) if a is not None else None
    jmax = np.abs(j).max(axis=0) if j is not None else None
    pos_bad = bool(joint_limits is not None and not np.all(within_limits(q, joint_limits)))
    return FeasibilityReport(
        vmax, amax, jmax,
        bool(np.any(vmax > limits.velocity)),
        bool(amax is not None and np.any(amax > limits.acceleration)),
        bool(jmax is not None and np.any(jmax > limits.jerk)),
        pos_bad,
    )


# -- latent analysis ----------------------------------------------------------------


@dataclass
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray  # (2, d)
    variances: np.ndarray  # (2,)
    train_2d: np.ndarray
    trajectories_2d: list[np.ndarray] = field(default_factory=list)

    def project(self, z) -> np.ndarray:
        return (np.asarray(z, dtype=float) - self.mean) @ self.components.T


def pca_projection(train_latents, trajectories: Sequence = (), n_components: int = 2) -> PcaProjection:
    z = np.asarray(train_latents, dtype=float)
    mean = z.mean(axis=0)
    centered = z - mean
    cov = centered.T @ centered / max(len(z) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    comps = evecs[:, order].T
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    proj = PcaProjection(mean, comps, evals[order], centered @ comps.T)
    proj.trajectories_2d = [proj.project(t) for t in trajectories]
    return proj


# -- benchmark ----------------------------------------------------------------------


@dataclass
class EvalRow:
    planner: str
    k: int
    scenario: int
    seed: int
    success: bool
    final_distance: float
    collided: bool
    self_table_collision: bool
    steps: int
    status: str
    wall_time: float
    path_length: float
    path_length_valid: bool
    final_delta: float

    def csv_row(self) -> list[str]:
        out = []
        for name in REPORT_HEADER:
            v = getattr(self, name)
            if isinstance(v, bool):
                out.append("1" if v else "0")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


@dataclass
class EvalReport:
    rows: list[EvalRow]
    threshold: float
    meta: dict[str, Any] = field(default_factory=dict)
    plans: list[PlanResult] = field(default_factory=list, repr=False)

    def aggregates(self) -> list[dict[str, Any]]:
        return aggregate(self.rows)

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(out / "report.csv", self.rows)
        summary = {"threshold": self.threshold, "aggregates": self.aggregates(), **self.meta}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def aggregate(rows: Sequence[EvalRow]) -> list[dict[str, Any]]:
    """Per (planner, k) counts, success rate with Wilson interval and path-length stats."""
    groups: dict[tuple[str, int], list[EvalRow]] = {}
    for r in rows:
        groups.setdefault((r.planner, r.k), []).append(r)
    out = []
    for (name, k), rs in sorted(groups.items()):
        n = len(rs)
        wins = sum(r.success for r in rs)
        low, high = wilson_interval(wins, n)
        lengths = np.array([r.path_length for r in rs if r.success and r.path_length_valid])
        times = np.array([r.wall_time for r in rs])
        out.append({
            "planner": name, "k": k, "n": n, "successes": wins, "success_rate": wins / n,
            "wilson_low": low, "wilson_high": high,
            "collisions": sum(r.collided for r in rs),
            "self_table_collisions": sum(r.self_table_collision for r in rs),
            "path_length_mean": float(lengths.mean()) if len(lengths) else None,
            "path_length_std": float(lengths.std()) if len(lengths) else None,
            "time_mean": float(times.mean()), "time_std": float(times.std()),
        })
    return out


def write_report_csv(path: str | Path, rows: Sequence[EvalRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow(r.csv_row())


def read_report_csv(path: str | Path) -> list[EvalRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(EvalRow(
                rec["planner"], int(rec["k"]), int(rec["scenario"]), int(rec["seed"]), rec["success"] == "1",
                float(rec["final_distance"]), rec["collided"] == "1", rec["self_table_collision"] == "1",
                int(rec["steps"]), rec["status"], float(rec["wall_time"]), float(rec["path_length"]),
                rec["path_length_valid"] == "1", float(rec["final_delta"]),
            ))
    return rows


def _evaluate_one(args) -> tuple[EvalRow, PlanResult]:
    planner, name, k, index, scenario, threshold, resolution = args
    plan = planner.plan(scenario, seed=scenario.seed)
    checker = getattr(planner, "checker", None)
    j = judge_success(plan, scenario, threshold, checker, resolution)
    length, valid = normalized_path_length(plan, scenario)
    delta = float(consistency_error(plan.states[-1])[0])
    row = EvalRow(name, k, index, scenario.seed, j.success, j.final_distance, j.collided, j.self_table_collision,
                  plan.steps, plan.status, plan.planning_time, length, valid, delta)
    return row, plan


def run_benchmark(planners: Mapping[str, Any], suites: Mapping[int, Sequence[Scenario]], threshold: float = 0.01,
                  resolution: float = 0.02, jobs: int = 1, meta: dict[str, Any] | None = None,
                  keep_plans: bool = False) -> EvalReport:
    """Run every planner on every scenario; rows are ordered by planner, k, scenario index."""
    tasks = []
    for name, planner in planners.items():
        for k in sorted(suites):
            for i, sc in enumerate(suites[k]):
                tasks.append((planner, name, k, i, sc, threshold, resolution))
    t0 = time.perf_counter()
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_one, tasks, chunksize=4))
    else:
        results = [_evaluate_one(t) for t in tasks]
    info = dict(meta or {})
    info.setdefault("timing_note", "wall_time covers the planning call only; model loading and IO excluded")
    info["total_seconds"] = time.perf_counter() - t0
    return EvalReport([r for r, _ in results], threshold, info, [p for _, p in results] if keep_plans else [])


# -- CSV emitters -------------------------------------------------------------------


def write_hist_csv(path: str | Path, summary: ConsistencySummary, bins: int = 50) -> None:
    counts, edges = summary.histogram(bins)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def write_pca_csv(path: str | Path, proj: PcaProjection) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "index", "t", "pc1", "pc2"])
        for i, p in enumerate(proj.train_2d):
            w.writerow(["train", i, 0, repr(float(p[0])), repr(float(p[1]))])
        for ti, traj in enumerate(proj.trajectories_2d):
            for t, p in enumerate(traj):
                w.writerow(["trajectory", ti, t, repr(float(p[0])), repr(float(p[1]))])


def write_dyn_feas_csv(path: str | Path, labels: Sequence[str], reports: Sequence[FeasibilityReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["plan"] + [f"{kind}{i}" for kind in ("v", "a", "j") for i in range(1, 8)] + ["violation"]
        w.writerow(head)
        for label, rep in zip(labels, reports):
            vals = [rep.max_velocity,
                    rep.max_acceleration if rep.max_acceleration is not None else np.full(7, np.nan),
                    rep.max_jerk if rep.max_jerk is not None else np.full(7, np.nan)]
            w.writerow([label] + [repr(float(x)) for arr in vals for x in arr] + ["1" if rep.any_violation else "0"])


def write_scatter_csv(path: str | Path, rows: Sequence[EvalRow]) -> None:
    """Final FK distance against final sample-consistency error, one line per plan."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["planner", "k", "scenario", "final_distance", "final_delta"])
        for r in rows:
            w.writerow([r.planner, r.k, r.scenario, repr(r.final_distance), repr(r.final_delta)])


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(obj: Any) -> str:
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()
