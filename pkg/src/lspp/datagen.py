"""Training datasets and evaluation scenarios.

States are joint configurations drawn uniformly within the limits and
rejected when the arm hits itself or the table.  Obstacles are upright
cylinders placed at a uniformly random bearing and distance from the base.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import CollisionChecker, Obstacle, capsule_cylinder_distance_batch, obstacles_array
from .kinematics import N_JOINTS, forward_kinematics, sample_uniform
from .nn import DimensionError

STATE_HEADER = [f"q{i}" for i in range(1, 8)] + ["e1", "e2", "e3"]
COLLISION_HEADER = STATE_HEADER + ["ox", "oy", "oh", "orad", "label"]
CHUNK = 1024


class BudgetExhausted(RuntimeError):
    """A rejection sampler ran out of tries."""


@dataclass(frozen=True)
class ObstacleRanges:
    dist: tuple[float, float] = (0.2, 0.9)
    height: tuple[float, float] = (0.1, 0.8)
    radius: tuple[float, float] = (0.03, 0.15)
    jitter: float = 0.1
    interp: tuple[float, float] = (0.25, 0.75)


@dataclass
class Scenario:
    seed: int
    start_q: np.ndarray
    target_e: np.ndarray
    target_q_hidden: np.ndarray
    obstacles: list[Obstacle] = field(default_factory=list)

    @property
    def obstacle_array(self) -> np.ndarray:
        return obstacles_array(self.obstacles)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "start_q": [float(v) for v in self.start_q],
            "target_e": [float(v) for v in self.target_e],
            "target_q_hidden": [float(v) for v in self.target_q_hidden],
            "obstacles": [o.to_dict() for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            seed=int(d["seed"]),
            start_q=np.array(d["start_q"], dtype=float),
            target_e=np.array(d["target_e"], dtype=float),
            target_q_hidden=np.array(d["target_q_hidden"], dtype=float),
            obstacles=[Obstacle(o["x"], o["y"], o["h"], o["r"]) for o in d["obstacles"]],
        )


def state_vector(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.concatenate([q, forward_kinematics(q)], axis=-1)


class DataGenerator:
    def __init__(self, checker: CollisionChecker | None = None, ranges: ObstacleRanges | None = None):
        self.checker = checker if checker is not None else CollisionChecker()
        self.robot = self.checker.robot
        self.limits = self.robot.limits
        self.ranges = ranges if ranges is not None else ObstacleRanges()

    # -- single draws ---------------------------------------------------------

    def sample_state(self, rng: np.random.Generator, budget: int = 10_000) -> np.ndarray:
        """One collision-free joint configuration (no obstacles)."""
        for _ in range(budget):
            q = sample_uniform(rng, self.limits)
            if not self.checker.in_collision(q):
                return q
        raise BudgetExhausted(f"no self/table collision-free state in {budget} tries")

    def sample_obstacle(self, rng: np.random.Generator) -> Obstacle:
        rg = self.ranges
        theta = rng.uniform(0.0, 2 * np.pi)
        dist = rng.uniform(*rg.dist)
        h = rng.uniform(*rg.height)
        r = rng.uniform(*rg.radius)
        return Obstacle(dist * np.cos(theta), dist * np.sin(theta), h, r)

    def sample_obstacles(self, rng: np.random.Generator, n: int) -> np.ndarray:
        rg = self.ranges
        theta = rng.uniform(0.0, 2 * np.pi, n)
        dist = rng.uniform(*rg.dist, n)
        h = rng.uniform(*rg.height, n)
        r = rng.uniform(*rg.radius, n)
        return np.stack([dist * np.cos(theta), dist * np.sin(theta), h, r], axis=1)

    # -- datasets ---------------------------------------------------------------

    def _state_chunk(self, seed_seq: np.random.SeedSequence, n: int) -> np.ndarray:
        rng = np.random.default_rng(seed_seq)
        out = []
        have = 0
        tries = 0
        while have < n:
            q = sample_uniform(rng, self.limits, max(2 * (n - have), 16))
            q = q[~self.checker.in_collision(q)]
            out.append(q)
            have += len(q)
            tries += 1
            if tries > 10_000:
                raise BudgetExhausted("state sampler could not fill a chunk")
        return np.concatenate(out)[:n]

    def sample_states(self, n: int, seed: int) -> np.ndarray:
        """``n`` collision-free states ``(n, 10)``; chunks use independent seed streams."""
        root = np.random.SeedSequence(seed)
        n_chunks = -(-n // CHUNK)
        streams = root.spawn(n_chunks)
        qs = [self._state_chunk(s, min(CHUNK, n - i * CHUNK)) for i, s in enumerate(streams)]
        q = np.concatenate(qs) if qs else np.zeros((0, N_JOINTS))
        return state_vector(q)

    def acceptance_rate(self, n: int, seed: int) -> float:
        rng = np.random.default_rng(seed)
        q = sample_uniform(rng, self.limits, n)
        return float(np.mean(~self.checker.in_collision(q)))

    def generate_collision_dataset(self, n: int, seed: int, max_draws: int | None = None
                                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Balanced ``(states, obstacles, labels)``: ``n/2`` colliding, ``n/2`` free.

        Rows alternate between draws from the two classes in order of
        discovery, so any prefix is roughly balanced.
        """
        if n % 2:
            raise ValueError("n must be even")
        half = n // 2
        max_draws = max_draws if max_draws is not None else 400 * max(n, 1)
        root = np.random.SeedSequence([seed, 1])
        pos_s, pos_o, neg_s, neg_o = [], [], [], []
        n_pos = n_neg = draws = 0
        while n_pos < half or n_neg < half:
            if draws >= max_draws:
                raise BudgetExhausted(
                    f"collision dataset: {n_pos}/{half} positive, {n_neg}/{half} negative after {draws} draws "
                    f"(positive rate {n_pos / max(draws, 1):.4f})"
                )
            (stream,) = root.spawn(1)
            rng = np.random.default_rng(stream)
            states = self.sample_states(CHUNK, int(rng.integers(2**32)))
            obs = self.sample_obstacles(rng, CHUNK)
            hits = self._obstacle_hits(states[:, :N_JOINTS], obs)
            draws += CHUNK
            if n_pos < half:
                pos_s.append(states[hits]); pos_o.append(obs[hits]); n_pos += int(hits.sum())
            if n_neg < half:
                neg_s.append(states[~hits]); neg_o.append(obs[~hits]); n_neg += int((~hits).sum())
        ps, po = np.concatenate(pos_s)[:half], np.concatenate(pos_o)[:half]
        ns, no = np.concatenate(neg_s)[:half], np.concatenate(neg_o)[:half]
        states = np.empty((n, 10))
        obs = np.empty((n, 4))
        labels = np.empty(n)
        states[0::2], obs[0::2], labels[0::2] = ps, po, 1.0
        states[1::2], obs[1::2], labels[1::2] = ns, no, 0.0
        return states, obs, labels

    def _obstacle_hits(self, q: np.ndarray, obs: np.ndarray) -> np.ndarray:
        # row i of q is paired with row i of obs
        a, b = self.checker.capsules(q)
        d = capsule_cylinder_distance_batch(a, b, self.checker.radii, obs[:, None, :])
        return d.min(axis=1) <= 0.0

    def label(self, states: np.ndarray, obs: np.ndarray) -> np.ndarray:
        return self._obstacle_hits(np.asarray(states)[:, :N_JOINTS], np.asarray(obs)).astype(float)

    # -- scenarios ----------------------------------------------------------------

    def _segment_obstacle(self, rng, e0, e1) -> Obstacle:
        rg = self.ranges
        u = rng.uniform(*rg.interp)
        p = e0 + u * (e1 - e0)
        ang = rng.uniform(0.0, 2 * np.pi)
        rad = rg.jitter * np.sqrt(rng.uniform())
        h = rng.uniform(*rg.height)
        r = rng.uniform(*rg.radius)
        return Obstacle(p[0] + rad * np.cos(ang), p[1] + rad * np.sin(ang), h, r)

    def generate_scenario(self, k: int, seed: int, budget: int = 1000) -> Scenario:
        """Start/target pair with ``k`` obstacles that leave both start and hidden target free."""
        if k < 0:
            raise ValueError("k must be >= 0")
        rng = np.random.default_rng(seed)
        q0 = self.sample_state(rng)
        q_star = self.sample_state(rng)
        e0 = forward_kinematics(q0, self.robot)
        e_star = forward_kinematics(q_star, self.robot)
        both = np.stack([q0, q_star])
        obstacles: list[Obstacle] = []
        for i in range(k):
            for _ in range(budget):
                if i == 0 or rng.uniform() < 0.5:
                    o = self._segment_obstacle(rng, e0, e_star)
                else:
                    o = self.sample_obstacle(rng)
                if not np.any(self.checker.in_collision(both, [o], include_self_table=False)):
                    obstacles.append(o)
                    break
            else:
                raise BudgetExhausted(f"scenario seed {seed}: could not place obstacle {i + 1}/{k}")
        return Scenario(seed, q0, e_star, q_star, obstacles)

    def generate_scenarios(self, k: int, seeds: Iterable[int]) -> list[Scenario]:
        return [self.generate_scenario(k, s) for s in seeds]


def filter_am_relevant(scenarios: Sequence[Scenario], collides: Callable[[Scenario], bool]) -> list[Scenario]:
    """Keep, in order, the scenarios for which ``collides`` (a planner without obstacle loss) is true."""
    return [s for s in scenarios if collides(s)]


def scenario_seed(base: int, k: int, index: int) -> int:
    """Deterministic seed of scenario ``index`` in the ``k``-obstacle suite."""
    return int(np.random.SeedSequence([base, k, index]).generate_state(1)[0])


def make_manifest(base_seed: int, counts: Iterable[int], n: int) -> dict[str, list[int]]:
    return {str(k): [scenario_seed(base_seed, k, i) for i in range(n)] for k in counts}


# -- file formats ----------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_states_csv(path: str | Path, states: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATE_HEADER)
        for row in states:
            w.writerow([_fmt(v) for v in row])


def read_states_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if len(header) != len(STATE_HEADER):
            raise DimensionError(f"{path}: expected {len(STATE_HEADER)} state columns, got {len(header)}")
        if header != STATE_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[float(v) for v in row] for row in r]
    return np.array(rows, dtype=float).reshape(-1, 10)


def write_collision_csv(path: str | Path, states, obstacles, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLLISION_HEADER)
        for s, o, l in zip(states, obstacles, labels):
            w.writerow([_fmt(v) for v in s] + [_fmt(v) for v in o] + [str(int(l))])


def read_collision_csv(path: str | Path, verify_with: DataGenerator | None = None
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != COLLISION_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = np.array([[float(v) for v in row] for row in r], dtype=float).reshape(-1, 15)
    states, obs, labels = rows[:, :10], rows[:, 10:14], rows[:, 14]
    if verify_with is not None:
        relabel = verify_with.label(states, obs)
        bad = np.flatnonzero(relabel != labels)
        if bad.size:
            raise ValueError(f"{path}: {bad.size} labels disagree with the geometry oracle (first row {bad[0]})")
    return states, obs, labels


def write_scenarios(path: str | Path, scenarios: Sequence[Scenario]) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in scenarios], indent=1) + "\n", encoding="utf-8")


def read_scenarios(path: str | Path) -> list[Scenario]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = [data]
    return [Scenario.from_dict(d) for d in data]


def write_manifest(path: str | Path, manifest: dict[str, list[int]]) -> None:
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> dict[int, list[int]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {int(k): [int(s) for s in v] for k, v in data.items()}


def ranges_dict(r: ObstacleRanges) -> dict:
    return asdict(r)
