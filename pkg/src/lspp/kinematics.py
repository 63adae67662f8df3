"""Forward kinematics and positional Jacobian of a serial arm in modified DH form.

All functions accept a single configuration of shape ``(7,)`` or a batch of
shape ``(..., 7)`` and broadcast over leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .kvfile import ConfigFormatError, floats, parse_kv, read_kv

N_JOINTS = 7
ROBOT_FILE_VERSION = 1
N_FRAMES = N_JOINTS + 2  # base, joints 1..7, flange


@dataclass(frozen=True)
class DhTable:
    """Modified-DH rows ``(a, d, alpha, theta_offset)`` for the joints plus a fixed flange row."""

    rows: np.ndarray  # (7, 4)
    flange: np.ndarray  # (4,)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float).reshape(N_JOINTS, 4)
        flange = np.array(self.flange, dtype=float).reshape(4)
        rows.setflags(write=False)
        flange.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "flange", flange)


@dataclass(frozen=True)
class JointLimits:
    lower: np.ndarray
    upper: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray

    def __post_init__(self):
        for name in ("lower", "upper", "velocity", "acceleration", "jerk"):
            arr = np.array(getattr(self, name), dtype=float).reshape(N_JOINTS)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(self.lower < self.upper):
            raise ValueError("joint limits need lower < upper")
        for name in ("velocity", "acceleration", "jerk"):
            if not np.all(getattr(self, name) > 0):
                raise ValueError(f"{name} limits must be positive")

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class RobotConfig:
    """Everything the rest of the package needs to know about the arm."""

    dh: DhTable
    limits: JointLimits
    reach: float = 1.3
    capsule_radii: tuple[float, ...] = (0.09, 0.09, 0.06, 0.06, 0.06, 0.06, 0.06, 0.06)
    self_exclude: frozenset[tuple[int, int]] = field(default_factory=frozenset)
    name: str = "panda"
    version: int = 1

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "RobotConfig":
        kv = parse_kv(text, source)
        return cls._from_kv(kv, source)

    @classmethod
    def from_file(cls, path: str | Path) -> "RobotConfig":
        return cls._from_kv(read_kv(path), str(path))

    @classmethod
    def _from_kv(cls, kv: dict[str, str], source: str) -> "RobotConfig":
        version = kv.get("version", str(ROBOT_FILE_VERSION))
        if version != str(ROBOT_FILE_VERSION):
            raise ConfigFormatError(f"{source}: unsupported robot file version {version!r}")
        try:
            rows = [floats(kv[f"dh.{i}"]) for i in range(1, N_JOINTS + 1)]
            flange = floats(kv["flange"])
            limits = JointLimits(
                lower=floats(kv["limits.lower"]),
                upper=floats(kv["limits.upper"]),
                velocity=floats(kv["limits.velocity"]),
                acceleration=floats(kv["limits.acceleration"]),
                jerk=floats(kv["limits.jerk"]),
            )
            radii = tuple(floats(kv["shape.radii"]))
            exclude = _parse_pairs(kv.get("shape.exclude", ""))
        except KeyError as exc:
            raise ConfigFormatError(f"{source}: missing key {exc.args[0]!r}") from exc
        except ValueError as exc:
            raise ConfigFormatError(f"{source}: {exc}") from exc
        if any(len(r) != 4 for r in rows) or len(flange) != 4:
            raise ConfigFormatError(f"{source}: DH rows need 4 columns")
        if len(radii) != N_FRAMES - 1 or min(radii) <= 0:
            raise ConfigFormatError(f"{source}: need {N_FRAMES - 1} positive capsule radii")
        return cls(
            dh=DhTable(np.array(rows), np.array(flange)),
            limits=limits,
            reach=float(kv.get("reach", "1.3")),
            capsule_radii=radii,
            self_exclude=exclude,
            name=kv.get("name", "robot"),
            version=ROBOT_FILE_VERSION,
        )

    def to_text(self) -> str:
        lines = [f"version = {self.version}", f"name = {self.name}"]
        for i, row in enumerate(self.dh.rows, start=1):
            lines.append(f"dh.{i} = " + " ".join(repr(float(v)) for v in row))
        lines.append("flange = " + " ".join(repr(float(v)) for v in self.dh.flange))
        for name in ("lower", "upper", "velocity", "acceleration", "jerk"):
            vals = getattr(self.limits, name)
            lines.append(f"limits.{name} = " + " ".join(repr(float(v)) for v in vals))
        lines.append(f"reach = {self.reach!r}")
        lines.append("shape.radii = " + " ".join(repr(float(r)) for r in self.capsule_radii))
        lines.append("shape.exclude = " + " ".join(f"{i}-{j}" for i, j in sorted(self.self_exclude)))
        return "\n".join(lines) + "\n"


def _parse_pairs(value: str) -> frozenset[tuple[int, int]]:
    pairs = set()
    for tok in value.split():
        i, j = (int(v) for v in tok.split("-"))
        pairs.add((min(i, j), max(i, j)))
    return frozenset(pairs)


def default_robot() -> RobotConfig:
    text = resources.files("lspp").joinpath("data/panda.cfg").read_text(encoding="utf-8")
    return RobotConfig.from_text(text, source="panda.cfg")


_DEFAULT: RobotConfig | None = None


def _robot(robot: RobotConfig | None) -> RobotConfig:
    global _DEFAULT
    if robot is not None:
        return robot
    if _DEFAULT is None:
        _DEFAULT = default_robot()
    return _DEFAULT


def _mdh(a: float, d: float, alpha: float, theta: np.ndarray) -> np.ndarray:
    """RotX(alpha) TransX(a) RotZ(theta) TransZ(d) for a batch of angles."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    T = np.zeros(theta.shape + (4, 4))
    T[..., 0, 0] = ct
    T[..., 0, 1] = -st
    T[..., 0, 3] = a
    T[..., 1, 0] = st * ca
    T[..., 1, 1] = ct * ca
    T[..., 1, 2] = -sa
    T[..., 1, 3] = -sa * d
    T[..., 2, 0] = st * sa
    T[..., 2, 1] = ct * sa
    T[..., 2, 2] = ca
    T[..., 2, 3] = ca * d
    T[..., 3, 3] = 1.0
    return T


def link_frames(q, robot: RobotConfig | None = None) -> np.ndarray:
    """World transforms of base, the seven joint frames and the flange.

    Returns an array of shape ``(..., 9, 4, 4)``.
    """
    robot = _robot(robot)
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != N_JOINTS:
        raise ValueError(f"expected {N_JOINTS} joint angles, got shape {q.shape}")
    batch = q.shape[:-1]
    frames = np.empty(batch + (N_FRAMES, 4, 4))
    frames[..., 0, :, :] = np.eye(4)
    current = frames[..., 0, :, :]
    for i in range(N_JOINTS):
        a, d, alpha, offset = robot.dh.rows[i]
        current = current @ _mdh(a, d, alpha, q[..., i] + offset)
        frames[..., i + 1, :, :] = current
    a, d, alpha, offset = robot.dh.flange
    frames[..., N_FRAMES - 1, :, :] = current @ _mdh(a, d, alpha, np.full(batch, offset))
    return frames


def frame_origins(q, robot: RobotConfig | None = None) -> np.ndarray:
    """Positions of the nine frames, shape ``(..., 9, 3)``."""
    return link_frames(q, robot)[..., :3, 3]


def forward_kinematics(q, robot: RobotConfig | None = None) -> np.ndarray:
    """Flange position in the base frame, shape ``(..., 3)``."""
    return link_frames(q, robot)[..., -1, :3, 3]


def positional_jacobian(q, robot: RobotConfig | None = None) -> np.ndarray:
    """3x7 Jacobian of the flange position: column i is ``z_i x (p_e - p_i)``."""
    frames = link_frames(q, robot)
    p_e = frames[..., -1, :3, 3]
    z = frames[..., 1 : N_JOINTS + 1, :3, 2]
    p = frames[..., 1 : N_JOINTS + 1, :3, 3]
    cols = np.cross(z, p_e[..., None, :] - p)  # (..., 7, 3)
    return np.swapaxes(cols, -1, -2)


def frame_jacobians(q, robot: RobotConfig | None = None) -> np.ndarray:
    """Positional Jacobians of all nine frame origins, shape ``(..., 9, 3, 7)``.

    Joint ``j`` moves frame ``i`` only when ``j <= i``; other columns are zero.
    """
    frames = link_frames(q, robot)
    p_all = frames[..., :3, 3]
    z = frames[..., 1 : N_JOINTS + 1, :3, 2]
    p = frames[..., 1 : N_JOINTS + 1, :3, 3]
    cols = np.cross(z[..., None, :, :], p_all[..., :, None, :] - p[..., None, :, :])  # (..., 9, 7, 3)
    mask = np.arange(N_FRAMES)[:, None] >= np.arange(1, N_JOINTS + 1)[None, :]
    cols = cols * mask[..., None]
    return np.swapaxes(cols, -1, -2)


def within_limits(q, limits: JointLimits) -> np.ndarray | bool:
    """Closed-interval joint limit test; batched input gives a boolean array."""
    q = np.asarray(q, dtype=float)
    ok = np.all((q >= limits.lower) & (q <= limits.upper), axis=-1)
    return bool(ok) if ok.ndim == 0 else ok


def clamp_to_limits(q, limits: JointLimits) -> np.ndarray:
    return np.clip(q, limits.lower, limits.upper)


def sample_uniform(rng: np.random.Generator, limits: JointLimits, n: int | None = None) -> np.ndarray:
    size = (N_JOINTS,) if n is None else (n, N_JOINTS)
    return rng.uniform(limits.lower, limits.upper, size=size)


READY_POSE = np.array([0.0, -np.pi / 4, 0.0, -3 * np.pi / 4, 0.0, np.pi / 2, np.pi / 4])
