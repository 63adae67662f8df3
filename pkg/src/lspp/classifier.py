"""Latent-space obstacle collision classifier.

Input is ``concat(z, standardised o)`` with ``o = (x, y, h, r)``; the single
output is a logit.  Training encodes each state with the frozen VAE and
draws one posterior sample per presentation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .nn import Adam, ContractError, DenseNet, DimensionError, Standardizer, load_checkpoint, mlp_sizes, save_checkpoint
from .vae import VaeModel

log = logging.getLogger(__name__)

P_MIN = 1e-7
P_MAX = 1.0 - 1e-7


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass
class ClassifierConfig:
    hidden: int = 256
    layers: int = 4
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 60
    posterior_sample: bool = True
    seed: int = 0

    @classmethod
    def paper(cls) -> "ClassifierConfig":
        return cls(hidden=2048, epochs=16000)

    @classmethod
    def desk(cls) -> "ClassifierConfig":
        return cls()


class CollisionClassifier:
    def __init__(self, net: DenseNet, obstacle_std: Standardizer, latent_dim: int = 7):
        if net.in_dim != latent_dim + 4 or net.out_dim != 1:
            raise DimensionError(f"classifier net must map {latent_dim + 4} -> 1")
        self.net = net
        self.obstacle_std = obstacle_std
        self.latent_dim = latent_dim

    @classmethod
    def init(cls, config: ClassifierConfig, obstacle_std: Standardizer, rng: np.random.Generator,
             latent_dim: int = 7) -> "CollisionClassifier":
        net = DenseNet.init(mlp_sizes(latent_dim + 4, 1, config.hidden, config.layers), rng)
        return cls(net, obstacle_std, latent_dim)

    def _inputs(self, z, o) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        o = np.atleast_2d(np.asarray(o, dtype=float))
        n = max(len(z), len(o))
        z = np.broadcast_to(z, (n, z.shape[1]))
        o = np.broadcast_to(self.obstacle_std.standardize(o), (n, 4))
        return np.concatenate([z, o], axis=1)

    def logits(self, z, o) -> np.ndarray:
        return self.net(self._inputs(z, o))[:, 0]

    def predict_collision_prob(self, z, o) -> np.ndarray:
        """Clamped collision probabilities for every broadcast (z, o) row."""
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise ContractError("z must be finite")
        return np.clip(sigmoid(self.logits(z, o)), P_MIN, P_MAX)

    def obstacle_loss(self, z, obstacles) -> tuple[float, np.ndarray]:
        """``sum_i -log(1 - p_i)`` for one latent ``z`` and its gradient w.r.t. ``z``.

        The value uses clamped probabilities; the gradient is that of the
        unclamped ``softplus(logit)``, so saturated predictions still push.
        """
        z = np.asarray(z, dtype=float)
        obs = np.asarray(obstacles, dtype=float).reshape(-1, 4)
        if len(obs) == 0:
            return 0.0, np.zeros_like(z)
        inputs = self._inputs(z, obs)
        out, cache = self.net.forward(inputs)
        logit = out[:, 0]
        p = np.clip(sigmoid(logit), P_MIN, P_MAX)
        loss = float(np.sum(-np.log1p(-p)))
        _, g_in = self.net.backward(cache, sigmoid(logit)[:, None], param_grads=False)
        return loss, g_in[:, : self.latent_dim].sum(axis=0)

    def save(self, path: str | Path, extra: dict[str, Any] | None = None) -> None:
        header = {"model_kind": "collision_classifier", "obstacle_standardizer": self.obstacle_std.to_dict(),
                  "latent_dim": self.latent_dim, "architecture": list(self.net.sizes)}
        header.update(extra or {})
        save_checkpoint(path, header, {"classifier": self.net})

    @classmethod
    def load(cls, path: str | Path) -> tuple["CollisionClassifier", dict[str, Any]]:
        header, nets = load_checkpoint(path, expect_kind="collision_classifier")
        clf = cls(nets["classifier"], Standardizer.from_dict(header["obstacle_standardizer"]), header["latent_dim"])
        return clf, header


def bce_with_logits(logit: np.ndarray, label: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample BCE and its derivative w.r.t. the logit."""
    return softplus(logit) - label * logit, sigmoid(logit) - label


def train_classifier(vae: VaeModel, states: np.ndarray, obstacles: np.ndarray, labels: np.ndarray,
                     config: ClassifierConfig,
                     callback: Callable[[int, dict[str, float]], None] | None = None,
                     ) -> tuple[CollisionClassifier, list[dict[str, float]]]:
    """Train on ``(state, obstacle, label)`` rows with the VAE frozen."""
    labels = np.asarray(labels, dtype=float)
    balance = labels.mean() if len(labels) else 0.0
    if abs(balance - 0.5) > 0.05:
        log.warning("collision dataset is unbalanced: %.3f positive", balance)
    rng = np.random.default_rng(config.seed)
    clf = CollisionClassifier.init(config, Standardizer.fit(obstacles), rng, vae.latent_dim)
    post = vae.encode(states)
    o_std = clf.obstacle_std.standardize(obstacles)
    adam = Adam(lr=config.lr)
    n = len(states)
    history: list[dict[str, float]] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        if config.posterior_sample:
            z_all = post.mu + post.sigma * rng.standard_normal(post.mu.shape)
        else:
            z_all = post.mu
        tot_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            inp = np.concatenate([z_all[idx], o_std[idx]], axis=1)
            out, cache = clf.net.forward(inp)
            loss, g = bce_with_logits(out[:, 0], labels[idx])
            grads, _ = clf.net.backward(cache, g[:, None] / len(idx), input_grad=False)
            adam.step(clf.net.params(), grads)
            clf.net.mark_updated()
            tot_loss += float(loss.sum())
            correct += int(np.sum((out[:, 0] > 0) == (labels[idx] > 0.5)))
        rec = {"epoch": epoch, "loss": tot_loss / n, "accuracy": correct / n, "seconds": time.perf_counter() - t0}
        history.append(rec)
        if callback is not None:
            callback(epoch, rec)
    return clf, history


def classification_report(clf: CollisionClassifier, vae: VaeModel, states, obstacles, labels,
                          bins: int = 10) -> dict[str, Any]:
    """Accuracy figures on posterior-mean latents plus reliability bins."""
    z = vae.encode(states).mu
    p = clf.predict_collision_prob(z, obstacles)
    y = np.asarray(labels) > 0.5
    pred = p > 0.5
    tp = int(np.sum(pred & y))
    tn = int(np.sum(~pred & ~y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tpr = tp / max(tp + fn, 1)
    tnr = tn / max(tn + fp, 1)
    edges = np.linspace(0.0, 1.0, bins + 1)
    which = np.clip(np.digitize(p, edges) - 1, 0, bins - 1)
    calib = []
    for b in range(bins):
        m = which == b
        calib.append({
            "lo": float(edges[b]), "hi": float(edges[b + 1]), "count": int(m.sum()),
            "mean_prob": float(p[m].mean()) if m.any() else float("nan"),
            "positive_rate": float(y[m].mean()) if m.any() else float("nan"),
        })
    return {
        "n": int(len(y)), "accuracy": float(np.mean(pred == y)), "balanced_accuracy": 0.5 * (tpr + tnr),
        "precision": tp / max(tp + fp, 1), "recall": tpr, "specificity": tnr,
        "tp": tp, "tn": tn, "fp": fp, "fn": fn, "calibration": calib,
    }


def checkpoint_extra(config: ClassifierConfig, history: list[dict[str, float]]) -> dict[str, Any]:
    return {"seed": config.seed, "train_config": asdict(config), "history_tail": [{k: v for k, v in h.items() if k != "seconds"} for h in history[-5:]]}
