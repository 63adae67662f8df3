"""Multiplicative Lagrange-multiplier update shared by VAE training and planning.

Given a loss ``l`` and a target ``tau`` the violation is ``C = l - tau``.  Its
moving average starts at ``C`` on the first update and then follows
``C_ma <- a_ma * C_ma + (1 - a_ma) * C``.  The multiplier is scaled by
``kappa = exp(a_geco * C_ma)`` and clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e6


@dataclass(frozen=True)
class GecoState:
    tau: float
    alpha_ma: float
    alpha_geco: float
    lam: float = 1.0
    c_ma: float = 0.0
    kappa: float = 1.0
    steps: int = 0
    lam_min: float = LAMBDA_MIN
    lam_max: float = LAMBDA_MAX

    def __post_init__(self):
        if not (0.0 <= self.alpha_ma <= 1.0):
            raise ValueError("alpha_ma must lie in [0, 1]")
        if self.alpha_geco <= 0:
            raise ValueError("alpha_geco must be positive")
        if not (self.lam_min <= self.lam <= self.lam_max):
            raise ValueError(f"lambda {self.lam} outside [{self.lam_min}, {self.lam_max}]")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "alpha_ma": self.alpha_ma, "alpha_geco": self.alpha_geco,
            "lam": self.lam, "c_ma": self.c_ma, "kappa": self.kappa, "steps": self.steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GecoState":
        return cls(**{k: d[k] for k in ("tau", "alpha_ma", "alpha_geco", "lam", "c_ma", "kappa", "steps")})


def geco_update(state: GecoState, loss: float, first_step: bool | None = None) -> GecoState:
    """Return the state after observing ``loss``.

    ``first_step`` defaults to ``state.steps == 0``.
    """
    if not math.isfinite(loss):
        raise ValueError(f"non-finite loss {loss!r} in multiplier update")
    if first_step is None:
        first_step = state.steps == 0
    c = loss - state.tau
    c_ma = c if first_step else state.alpha_ma * state.c_ma + (1.0 - state.alpha_ma) * c
    kappa = math.exp(min(state.alpha_geco * c_ma, 700.0))
    lam = min(max(state.lam * kappa, state.lam_min), state.lam_max)
    return replace(state, lam=lam, c_ma=c_ma, kappa=kappa, steps=state.steps + 1)
