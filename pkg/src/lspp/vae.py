"""Variational autoencoder over robot states ``x = (q, e)`` trained with GECO.

The encoder maps a standardised 10-vector to ``(mu, log sigma)`` of a
diagonal Gaussian posterior over a 7-d latent; the decoder maps a latent
back to a standardised 10-vector.  Training minimises
``KL + lambda * mean(||x - x_hat||_2 - tau)`` with ``lambda`` following the
multiplicative update in :mod:`lspp.geco`.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .geco import GecoState, geco_update
from .nn import Adam, ContractError, DenseNet, DimensionError, Standardizer, load_checkpoint, mlp_sizes, save_checkpoint

log = logging.getLogger(__name__)

LATENT_DIM = 7
STATE_DIM = 10
LOG_SIGMA_MIN = -20.0
LOG_SIGMA_MAX = 5.0


@dataclass
class VaeConfig:
    hidden: int = 256
    layers: int = 4
    latent_dim: int = LATENT_DIM
    tau: float = 0.01
    lr: float = 1e-3
    lr_final: float = 1e-4
    alpha_ma: float = 0.95
    alpha_geco: float = 0.005
    lambda_init: float = 1.0
    batch_size: int = 256
    epochs: int = 400
    seed: int = 0

    @classmethod
    def paper(cls) -> "VaeConfig":
        return cls(hidden=2048, layers=4, tau=0.0008, lr=1e-4, lr_final=1e-4, alpha_geco=0.005, epochs=16000)

    @classmethod
    def desk(cls) -> "VaeConfig":
        # at 4x256 the reconstruction floor sits far above tau = 0.01, so lambda would grow without
        # bound; a reachable tau, a warm lambda and a slow multiplier keep the KL term in play
        return cls(tau=0.16, alpha_geco=1e-4, lambda_init=30.0, epochs=4200)


@dataclass(frozen=True)
class Posterior:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def log_sigma(self) -> np.ndarray:
        return np.log(self.sigma)


class VaeModel:
    def __init__(self, encoder: DenseNet, decoder: DenseNet, standardizer: Standardizer):
        if encoder.in_dim != STATE_DIM or decoder.out_dim != STATE_DIM:
            raise DimensionError("VAE nets must read/write 10-d states")
        if encoder.out_dim != 2 * decoder.in_dim:
            raise DimensionError("encoder must emit (mu, log sigma) of the decoder's latent size")
        self.encoder = encoder
        self.decoder = decoder
        self.standardizer = standardizer

    @property
    def latent_dim(self) -> int:
        return self.decoder.in_dim

    @classmethod
    def init(cls, config: VaeConfig, standardizer: Standardizer, rng: np.random.Generator) -> "VaeModel":
        enc = DenseNet.init(mlp_sizes(STATE_DIM, 2 * config.latent_dim, config.hidden, config.layers), rng)
        dec = DenseNet.init(mlp_sizes(config.latent_dim, STATE_DIM, config.hidden, config.layers), rng)
        return cls(enc, dec, standardizer)

    # -- inference -------------------------------------------------------

    def _encode_std(self, xs: np.ndarray):
        out, cache = self.encoder.forward(xs)
        d = self.latent_dim
        mu = out[..., :d]
        log_sigma = np.clip(out[..., d:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return mu, log_sigma, cache

    def encode(self, x) -> Posterior:
        """Posterior parameters for raw (unstandardised) states ``(..., 10)``."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ContractError("encode needs finite states")
        mu, log_sigma, _ = self._encode_std(self.standardizer.standardize(x))
        return Posterior(mu, np.exp(log_sigma))

    def decode(self, z) -> np.ndarray:
        """Raw reconstructed states ``(..., 10)``; joints are not clamped to limits."""
        return self.standardizer.destandardize(self.decoder(np.asarray(z, dtype=float)))

    def decode_with_cache(self, z):
        xs, cache = self.decoder.forward(np.asarray(z, dtype=float))
        return self.standardizer.destandardize(xs), cache

    def decode_backward(self, cache, grad_x) -> np.ndarray:
        """Gradient w.r.t. ``z`` given dL/d(raw decoded state)."""
        _, gz = self.decoder.backward(cache, np.asarray(grad_x) * self.standardizer.std, param_grads=False)
        return gz

    def sample_prior(self, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Decode ``n`` draws from N(0, I); returns ``(z, decoded states)``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.latent_dim))
        return z, self.decode(z)

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path, extra: dict[str, Any] | None = None) -> None:
        header = {"model_kind": "vae", "standardizer": self.standardizer.to_dict(), "latent_dim": self.latent_dim,
                  "architecture": {"encoder": list(self.encoder.sizes), "decoder": list(self.decoder.sizes)}}
        header.update(extra or {})
        save_checkpoint(path, header, {"encoder": self.encoder, "decoder": self.decoder})

    @classmethod
    def load(cls, path: str | Path) -> tuple["VaeModel", dict[str, Any]]:
        header, nets = load_checkpoint(path, expect_kind="vae")
        model = cls(nets["encoder"], nets["decoder"], Standardizer.from_dict(header["standardizer"]))
        return model, header


def split_state(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x)
    return x[..., :7], x[..., 7:10]


def reparameterise(p: Posterior, noise) -> np.ndarray:
    return p.mu + p.sigma * np.asarray(noise, dtype=float)


def kl_divergence(p: Posterior) -> np.ndarray | float:
    """KL(N(mu, sigma^2) || N(0, I)), summed over latent dims."""
    mu, sigma = np.asarray(p.mu), np.asarray(p.sigma)
    if np.any(sigma <= 0):
        raise ContractError("sigma must be positive")
    kl = 0.5 * np.sum(mu ** 2 + sigma ** 2 - 1.0 - 2.0 * np.log(sigma), axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


@dataclass
class TrainMetrics:
    loss: float
    kl: float
    recon: float
    constraint: float
    lam: float


class VaeTrainer:
    """Owns the optimiser and GECO state for one training run."""

    def __init__(self, model: VaeModel, config: VaeConfig, rng: np.random.Generator):
        self.model = model
        self.config = config
        self.rng = rng
        self.adam = Adam(lr=config.lr)
        self.geco = GecoState(tau=config.tau, alpha_ma=config.alpha_ma, alpha_geco=config.alpha_geco,
                              lam=config.lambda_init)
        self.history: list[dict[str, float]] = []

    def _params(self) -> list[np.ndarray]:
        return self.model.encoder.params() + self.model.decoder.params()

    def step(self, xs: np.ndarray, noise: np.ndarray | None = None) -> TrainMetrics:
        """One GECO step on a standardised batch ``xs``."""
        if len(xs) == 0:
            raise ContractError("empty batch")
        m = self.model
        n = len(xs)
        mu, log_sigma, enc_cache = m._encode_std(xs)
        sigma = np.exp(log_sigma)
        if noise is None:
            noise = self.rng.standard_normal(mu.shape)
        z = mu + sigma * noise
        xh, dec_cache = m.decoder.forward(z)
        diff = xh - xs
        r = np.sqrt(np.sum(diff * diff, axis=1))
        recon = float(r.mean())
        kl_per = 0.5 * np.sum(mu ** 2 + sigma ** 2 - 1.0 - 2.0 * log_sigma, axis=1)
        kl = float(kl_per.mean())
        constraint = recon - self.config.tau
        self.geco = geco_update(self.geco, recon)
        lam = self.geco.lam
        loss = kl + lam * constraint
        if not math.isfinite(loss):
            raise FloatingPointError(
                f"non-finite VAE loss: kl={kl} recon={recon} lambda={lam} step={self.adam.step_count}"
            )
        g_xh = (lam / n) * diff / np.maximum(r, 1e-12)[:, None]
        dec_grads, g_z = m.decoder.backward(dec_cache, g_xh)
        g_mu = g_z + mu / n
        g_ls = g_z * sigma * noise + (sigma ** 2 - 1.0) / n
        # clipped log-sigma outputs pass no gradient
        raw_ls = enc_cache.pre[-1][:, self.model.latent_dim:]
        g_ls = np.where((raw_ls > LOG_SIGMA_MIN) & (raw_ls < LOG_SIGMA_MAX), g_ls, 0.0)
        enc_grads, _ = m.encoder.backward(enc_cache, np.concatenate([g_mu, g_ls], axis=1), input_grad=False)
        self.adam.step(self._params(), enc_grads + dec_grads)
        m.encoder.mark_updated()
        m.decoder.mark_updated()
        return TrainMetrics(loss, kl, recon, constraint, lam)

    def fit(self, states: np.ndarray, epochs: int | None = None,
            callback: Callable[[int, dict[str, float]], None] | None = None) -> list[dict[str, float]]:
        cfg = self.config
        epochs = cfg.epochs if epochs is None else epochs
        xs_all = self.model.standardizer.standardize(states)
        n = len(xs_all)
        for epoch in range(epochs):
            frac = epoch / max(epochs - 1, 1)
            # geometric decay from lr to lr_final
            self.adam.lr = cfg.lr * (cfg.lr_final / cfg.lr) ** frac
            order = self.rng.permutation(n)
            t0 = time.perf_counter()
            sums = np.zeros(4)
            batches = 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                mt = self.step(xs_all[idx])
                sums += (mt.loss, mt.kl, mt.recon, mt.constraint)
                batches += 1
            sums /= batches
            rec = {"epoch": epoch, "loss": sums[0], "kl": sums[1], "recon": sums[2], "constraint": sums[3],
                   "lambda": self.geco.lam, "c_ma": self.geco.c_ma, "lr": self.adam.lr,
                   "seconds": time.perf_counter() - t0}
            self.history.append(rec)
            if callback is not None:
                callback(epoch, rec)
        return self.history


def geco_train_step(model: VaeModel, trainer: VaeTrainer, batch) -> TrainMetrics:
    """Single training step on a raw (unstandardised) batch."""
    return trainer.step(model.standardizer.standardize(np.asarray(batch, dtype=float)))


def train_vae(states: np.ndarray, config: VaeConfig,
              callback: Callable[[int, dict[str, float]], None] | None = None) -> tuple[VaeModel, VaeTrainer]:
    rng = np.random.default_rng(config.seed)
    model = VaeModel.init(config, Standardizer.fit(states), rng)
    trainer = VaeTrainer(model, config, rng)
    trainer.fit(states, callback=callback)
    return model, trainer


def checkpoint_extra(config: VaeConfig, trainer: VaeTrainer | None) -> dict[str, Any]:
    extra: dict[str, Any] = {"seed": config.seed, "train_config": asdict(config)}
    if trainer is not None:
        extra["geco"] = trainer.geco.to_dict()
        # wall-clock timings live in the timing json so checkpoints stay reproducible
        extra["history_tail"] = [{k: v for k, v in h.items() if k != "seconds"} for h in trainer.history[-5:]]
    return extra
