"""Latent-space path planning by activation maximisation.

The latent of the start state is pushed by gradient steps on

    ||e_hat(z) - e_target|| + lam_prior * 0.5 ||z||^2 + lam_obs * sum_i -log(1 - p_i(z))

where both multipliers follow the GECO update of :mod:`lspp.geco`.  Every
iterate is decoded; the decoded joint sequence is the path.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import CollisionClassifier
from .datagen import Scenario, state_vector
from .geco import GecoState, geco_update
from .geometry import CollisionChecker
from .nn import Adam, DimensionError
from .vae import VaeModel

TRACE_HEADER = (
    ["t"] + [f"q{i}" for i in range(1, 8)] + ["e1", "e2", "e3"]
    + ["target_loss", "prior_loss", "obstacle_loss", "lambda_prior", "lambda_obs"]
)


@dataclass(frozen=True)
class PlannerConfig:
    lr: float = 0.03
    max_steps: int = 300
    gamma: float = 0.01
    prior_target: float = 0.9
    prior_alpha_ma: float = 0.95
    obstacle_target: float = 0.7
    obstacle_alpha_ma: float = 0.4
    alpha_geco: float = 0.01
    lambda_prior_init: float = 1.0
    lambda_obs_init: float = 1.0
    enable_prior_loss: bool = True
    enable_obstacle_loss: bool = True
    optimizer: str = "adam"
    sample_start: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.alpha_geco <= 0 or self.gamma <= 0:
            raise ValueError("learning rates and gamma must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown latent optimiser {self.optimizer!r}")

    @classmethod
    def desk(cls) -> "PlannerConfig":
        # grid-searched on validation scenarios for the 4x256 VAE, whose latents spread wider
        return cls(prior_target=3.0)

    def ablate(self, what: str | None) -> "PlannerConfig":
        from dataclasses import replace

        if what in (None, "", "none"):
            return self
        if what == "prior":
            return replace(self, enable_prior_loss=False)
        if what == "obstacle":
            return replace(self, enable_obstacle_loss=False)
        raise ValueError(f"unknown ablation {what!r}")


@dataclass
class PlanResult:
    """Trace of one planning call.  ``states`` rows are decoded ``(q_hat, e_hat)``."""

    planner: str
    latents: np.ndarray
    states: np.ndarray
    target_loss: np.ndarray
    prior_loss: np.ndarray
    obstacle_loss: np.ndarray
    lambda_prior: np.ndarray
    lambda_obs: np.ndarray
    status: str
    planning_time: float
    info: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def joint_path(self) -> np.ndarray:
        return self.states[:, :7]

    @property
    def ee_path(self) -> np.ndarray:
        return self.states[:, 7:10]

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for t in range(len(self.states)):
                row = [str(t)] + [repr(float(v)) for v in self.states[t]]
                row += [repr(float(a[t])) for a in (self.target_loss, self.prior_loss, self.obstacle_loss,
                                                    self.lambda_prior, self.lambda_obs)]
                w.writerow(row)


def read_trace(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = np.array([[float(v) for v in row] for row in r], dtype=float)
    rows = rows.reshape(-1, len(header))
    return {name: rows[:, i] for i, name in enumerate(header)}


def prior_loss(z) -> float:
    """Negative log prior density without the Gaussian normaliser: ``0.5 ||z||^2``."""
    z = np.asarray(z, dtype=float)
    return 0.5 * float(z @ z)


def prior_loss_grad(z) -> np.ndarray:
    return np.array(z, dtype=float)


def obstacle_loss(classifier: CollisionClassifier | None, z, obstacles) -> tuple[float, np.ndarray]:
    obs = np.asarray(obstacles, dtype=float).reshape(-1, 4)
    if classifier is None or len(obs) == 0:
        return 0.0, np.zeros_like(np.asarray(z, dtype=float))
    return classifier.obstacle_loss(z, obs)


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class LatentPlanner:
    """Holds frozen models; :meth:`plan` is re-entrant."""

    name = "lspp"

    def __init__(self, vae: VaeModel, classifier: CollisionClassifier | None, config: PlannerConfig | None = None,
                 checker: CollisionChecker | None = None):
        if classifier is not None and classifier.latent_dim != vae.latent_dim:
            raise DimensionError(f"classifier expects {classifier.latent_dim}-d latents, VAE has {vae.latent_dim}")
        self.vae = vae
        self.classifier = classifier
        self.config = config if config is not None else PlannerConfig()
        self.checker = checker if checker is not None else CollisionChecker()

    def initial_latent(self, q0, seed: int = 0) -> np.ndarray:
        post = self.vae.encode(state_vector(q0))
        if self.config.sample_start:
            rng = np.random.default_rng(seed)
            return post.mu + post.sigma * rng.standard_normal(post.mu.shape)
        return post.mu.copy()

    def plan(self, scenario: Scenario, seed: int = 0, config: PlannerConfig | None = None) -> PlanResult:
        cfg = config if config is not None else self.config
        t_start = time.perf_counter()
        target = np.asarray(scenario.target_e, dtype=float)
        obstacles = scenario.obstacle_array
        use_obs = cfg.enable_obstacle_loss and len(obstacles) > 0 and self.classifier is not None

        z = self.initial_latent(scenario.start_q, seed)
        opt = Adam(lr=cfg.lr) if cfg.optimizer == "adam" else _Sgd(cfg.lr)
        g_prior = GecoState(tau=cfg.prior_target, alpha_ma=cfg.prior_alpha_ma, alpha_geco=cfg.alpha_geco,
                            lam=cfg.lambda_prior_init)
        g_obs = GecoState(tau=cfg.obstacle_target, alpha_ma=cfg.obstacle_alpha_ma, alpha_geco=cfg.alpha_geco,
                          lam=cfg.lambda_obs_init)

        latents, states = [], []
        losses: dict[str, list[float]] = {k: [] for k in ("target", "prior", "obstacle", "lp", "lo")}
        status = "max-steps"
        for t in range(cfg.max_steps + 1):
            x_hat, cache = self.vae.decode_with_cache(z)
            latents.append(z.copy())
            states.append(x_hat)
            diff = x_hat[7:10] - target
            dist = float(np.linalg.norm(diff))
            l_prior = prior_loss(z)
            l_obs, g_obs_z = obstacle_loss(self.classifier, z, obstacles) if use_obs else (0.0, None)
            losses["target"].append(dist)
            losses["prior"].append(l_prior)
            losses["obstacle"].append(l_obs)
            if not all(math.isfinite(v) for v in (dist, l_prior, l_obs)) or not np.all(np.isfinite(z)):
                status = "non-finite"
                losses["lp"].append(g_prior.lam)
                losses["lo"].append(g_obs.lam)
                break
            if dist < cfg.gamma:
                status = "reached"
                losses["lp"].append(g_prior.lam)
                losses["lo"].append(g_obs.lam)
                break
            if t == cfg.max_steps:
                losses["lp"].append(g_prior.lam)
                losses["lo"].append(g_obs.lam)
                break
            if cfg.enable_prior_loss:
                g_prior = geco_update(g_prior, l_prior)
            if use_obs:
                g_obs = geco_update(g_obs, l_obs)
            losses["lp"].append(g_prior.lam)
            losses["lo"].append(g_obs.lam)

            grad_x = np.zeros(10)
            grad_x[7:10] = diff / max(dist, 1e-12)
            grad = self.vae.decode_backward(cache, grad_x)
            if cfg.enable_prior_loss:
                grad = grad + g_prior.lam * prior_loss_grad(z)
            if use_obs:
                grad = grad + g_obs.lam * g_obs_z
            z = z.copy()
            opt.step([z], [grad])

        elapsed = time.perf_counter() - t_start
        return PlanResult(
            planner=self.name,
            latents=np.array(latents),
            states=np.array(states),
            target_loss=np.array(losses["target"]),
            prior_loss=np.array(losses["prior"]),
            obstacle_loss=np.array(losses["obstacle"]),
            lambda_prior=np.array(losses["lp"]),
            lambda_obs=np.array(losses["lo"]),
            status=status,
            planning_time=elapsed,
            info={"config": asdict(cfg), "seed": seed},
        )


def plan(vae: VaeModel, classifier: CollisionClassifier | None, scenario: Scenario,
         config: PlannerConfig | None = None, seed: int = 0) -> PlanResult:
    return LatentPlanner(vae, classifier, config).plan(scenario, seed)


def joint_path_result(name: str, path: Sequence, target: np.ndarray, status: str, elapsed: float,
                      info: dict | None = None) -> PlanResult:
    """Wrap a joint-space path from a baseline planner in the common result schema."""
    from .kinematics import forward_kinematics

    q = np.atleast_2d(np.asarray(path, dtype=float))
    e = forward_kinematics(q)
    states = np.concatenate([q, e], axis=1)
    n = len(q)
    dist = np.linalg.norm(e - np.asarray(target), axis=1)
    zeros = np.zeros(n)
    return PlanResult(name, np.zeros((n, 0)), states, dist, zeros, zeros.copy(), zeros.copy(), zeros.copy(),
                      status, elapsed, info or {})
