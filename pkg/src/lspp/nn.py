"""A small dense-network engine in float64 numpy.

Fully connected layers with ELU hidden activations and an identity output
layer, exact reverse-mode gradients with respect to both parameters and
inputs, an Adam optimiser and a per-dimension standardiser.  Inputs are
batched row-wise: ``(batch, features)``; a 1-D input is treated as a batch
of one and the output is squeezed back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class ContractError(RuntimeError):
    """Raised when an operation is called with inputs that break its contract."""


class DimensionError(ContractError, ValueError):
    """Array or model sizes do not fit together."""


def elu(x: np.ndarray) -> np.ndarray:
    # expm1(x) >= x everywhere, so the max picks the right branch
    out = np.minimum(x, 0.0)
    np.expm1(out, out=out)
    return np.maximum(x, out, out=out)


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def elu_grad_from_output(h: np.ndarray) -> np.ndarray:
    """ELU derivative expressed through the activation value ``h = elu(x)``."""
    out = np.minimum(h, 0.0)
    out += 1.0
    return out


@dataclass
class ForwardCache:
    pre: list[np.ndarray]
    inputs: list[np.ndarray]
    squeeze: bool
    version: int
    net_id: int


class DenseNet:
    """Multi-layer perceptron: affine + ELU per hidden layer, affine output."""

    def __init__(self, sizes: Sequence[int], weights=None, biases=None, activations=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least an input and an output size")
        n = len(self.sizes) - 1
        self.activations = tuple(activations) if activations is not None else ("elu",) * (n - 1) + ("identity",)
        if len(self.activations) != n or any(a not in ("elu", "identity") for a in self.activations):
            raise ValueError(f"bad activations {self.activations}")
        if weights is None:
            weights = [np.zeros((self.sizes[i], self.sizes[i + 1])) for i in range(n)]
        if biases is None:
            biases = [np.zeros(self.sizes[i + 1]) for i in range(n)]
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i}: incompatible parameter shapes {w.shape}, {b.shape}")
        self.version = 0

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, activations=None) -> "DenseNet":
        """He-scaled Gaussian weights, zero biases."""
        sizes = tuple(int(s) for s in sizes)
        weights = [rng.normal(0.0, np.sqrt(2.0 / sizes[i]), size=(sizes[i], sizes[i + 1])) for i in range(len(sizes) - 1)]
        return cls(sizes, weights=weights, activations=activations)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def mark_updated(self) -> None:
        self.version += 1

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise DimensionError(f"expected input with {self.in_dim} features, got shape {x.shape}")
        pre, inputs = [], []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            a = h @ w
            a += b
            pre.append(a)
            h = elu(a) if act == "elu" else a
        inputs.append(h)
        cache = ForwardCache(pre, inputs, squeeze, self.version, id(self))
        return (h[0] if squeeze else h), cache

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, grad_out, param_grads: bool = True, input_grad: bool = True):
        """Back-propagate ``grad_out`` (dL/d output).

        Returns ``(grads, grad_input)`` where ``grads`` is a list aligned with
        :meth:`params` (or ``None`` when ``param_grads`` is false) and
        ``grad_input`` is ``None`` when ``input_grad`` is false.
        """
        if cache.net_id != id(self) or cache.version != self.version:
            raise ContractError("stale forward cache: parameters changed since the forward pass")
        g = np.asarray(grad_out, dtype=float)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.pre[-1].shape:
            raise DimensionError(f"output gradient shape {g.shape} != {cache.pre[-1].shape}")
        n = len(self.weights)
        grads: list[np.ndarray] | None = [None] * (2 * n) if param_grads else None  # type: ignore[list-item]
        for i in range(n - 1, -1, -1):
            if self.activations[i] == "elu":
                g = g * elu_grad_from_output(cache.inputs[i + 1])
            if grads is not None:
                grads[2 * i] = cache.inputs[i].T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            if i > 0 or input_grad:
                g = g @ self.weights[i].T
        if not input_grad:
            return grads, None
        return grads, (g[0] if cache.squeeze else g)

    def copy(self) -> "DenseNet":
        return DenseNet(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activations)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DenseNet":
        return cls(d["sizes"], d["weights"], d["biases"], d["activations"])


def mlp_sizes(in_dim: int, out_dim: int, hidden: int, layers: int) -> tuple[int, ...]:
    return (in_dim,) + (hidden,) * layers + (out_dim,)


@dataclass
class Adam:
    """Adam with bias correction; one instance owns the moments of one parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ContractError("gradient shapes do not match parameters")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        step = self.lr / bc1
        root_bc2 = np.sqrt(bc2)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v)
            denom /= root_bc2
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= step
            p -= denom

    def state_dict(self) -> dict[str, Any]:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step_count": self.step_count,
        }


def adam_step(state: Adam, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    state.step(params, grads)
    return params


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std shape mismatch")
        if not np.all(self.std > 0):
            raise ValueError("standard deviations must be positive")

    @classmethod
    def fit(cls, data, min_std: float = 1e-12) -> "Standardizer":
        data = np.asarray(data, dtype=float)
        return cls(data.mean(axis=0), np.maximum(data.std(axis=0), min_std))

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def standardize(self, v) -> np.ndarray:
        return (np.asarray(v, dtype=float) - self.mean) / self.std

    def destandardize(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict[str, list[float]]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.array(d["mean"]), np.array(d["std"]))


def standardize(s: Standardizer, v) -> np.ndarray:
    return s.standardize(v)


def destandardize(s: Standardizer, v) -> np.ndarray:
    return s.destandardize(v)


# -- checkpoints -------------------------------------------------------------
#
# A checkpoint is a text file: the first line is a JSON header object, the
# rest is one JSON object holding the named parameter arrays as nested lists.


def save_checkpoint(path: str | Path, header: dict[str, Any], nets: dict[str, DenseNet]) -> None:
    header = dict(header)
    header.setdefault("version", CHECKPOINT_VERSION)
    if "model_kind" not in header:
        raise ValueError("checkpoint header needs a model_kind")
    body = {name: net.to_dict() for name, net in nets.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.write(json.dumps(body, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> tuple[dict[str, Any], dict[str, DenseNet]]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        body = json.loads(fh.readline())
    if "version" not in header:
        raise ContractError(f"{path}: checkpoint header lacks a version field")
    if header["version"] != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {header['version']}")
    if expect_kind is not None and header.get("model_kind") != expect_kind:
        raise ContractError(f"{path}: expected model_kind {expect_kind!r}, got {header.get('model_kind')!r}")
    return header, {name: DenseNet.from_dict(d) for name, d in body.items()}
