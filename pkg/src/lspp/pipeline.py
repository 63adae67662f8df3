"""End-to-end artifact construction shared by the CLI and the test-suite.

Each stage writes into an output directory and can be skipped when its
artifact already exists with a matching configuration hash.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import classifier as clf_mod
from . import vae as vae_mod
from .baselines import PotentialFieldPlanner, RrtConnectPlanner
from .config import RunConfig
from .datagen import (
    DataGenerator,
    Scenario,
    read_collision_csv,
    read_states_csv,
    write_collision_csv,
    write_states_csv,
)
from .evaluation import config_hash
from .geometry import CollisionChecker
from .kinematics import RobotConfig, default_robot
from .planner import LatentPlanner

log = logging.getLogger(__name__)


def load_robot(path: str | Path | None) -> RobotConfig:
    return RobotConfig.from_file(path) if path else default_robot()


def generator_for(cfg: RunConfig) -> DataGenerator:
    return DataGenerator(CollisionChecker(load_robot(cfg.robot_config or None)))


def _stamp_ok(stamp: Path, key: str) -> bool:
    return stamp.exists() and stamp.read_text(encoding="utf-8").strip() == key


def _write_stamp(stamp: Path, key: str) -> None:
    stamp.write_text(key + "\n", encoding="utf-8")


def build_states(cfg: RunConfig, out: Path) -> np.ndarray:
    out.mkdir(parents=True, exist_ok=True)
    path, stamp = out / "states.csv", out / "states.key"
    key = config_hash({"n": cfg.data.n_states, "seed": cfg.seed, "robot": cfg.robot_config})
    if path.exists() and _stamp_ok(stamp, key):
        return read_states_csv(path)
    states = generator_for(cfg).sample_states(cfg.data.n_states, cfg.seed)
    write_states_csv(path, states)
    _write_stamp(stamp, key)
    return states


def build_collision_data(cfg: RunConfig, out: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    out.mkdir(parents=True, exist_ok=True)
    path, stamp = out / "collision.csv", out / "collision.key"
    key = config_hash({"n": cfg.data.n_collision, "seed": cfg.seed, "robot": cfg.robot_config})
    if path.exists() and _stamp_ok(stamp, key):
        return read_collision_csv(path)
    s, o, l = generator_for(cfg).generate_collision_dataset(cfg.data.n_collision, cfg.seed)
    write_collision_csv(path, s, o, l)
    _write_stamp(stamp, key)
    return s, o, l


def build_vae(cfg: RunConfig, out: Path, states: np.ndarray | None = None,
              callback: Callable[[int, dict], None] | None = None) -> vae_mod.VaeModel:
    out.mkdir(parents=True, exist_ok=True)
    path, stamp = out / "vae.ckpt", out / "vae.key"
    vcfg = replace(cfg.vae, seed=cfg.seed)
    key = config_hash({"vae": asdict(vcfg), "data": cfg.data.n_states, "robot": cfg.robot_config})
    if path.exists() and _stamp_ok(stamp, key):
        return vae_mod.VaeModel.load(path)[0]
    if states is None:
        states = build_states(cfg, out)
    model, trainer = vae_mod.train_vae(states, vcfg, callback)
    model.save(path, vae_mod.checkpoint_extra(vcfg, trainer))
    write_history(out / "vae_history.csv", trainer.history)
    write_timing(out / "vae_timing.json", trainer.history)
    _write_stamp(stamp, key)
    return model


def split_holdout(n: int, frac: float) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous split keeps the alternating label pattern balanced on both sides."""
    n_hold = int(round(n * frac))
    n_hold -= n_hold % 2
    idx = np.arange(n)
    return idx[: n - n_hold], idx[n - n_hold :]


def build_classifier(cfg: RunConfig, out: Path, vae: vae_mod.VaeModel,
                     data: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
                     callback: Callable[[int, dict], None] | None = None) -> clf_mod.CollisionClassifier:
    out.mkdir(parents=True, exist_ok=True)
    path, stamp = out / "classifier.ckpt", out / "classifier.key"
    ccfg = replace(cfg.classifier, seed=cfg.seed)
    vae_key = (out / "vae.key").read_text(encoding="utf-8").strip() if (out / "vae.key").exists() else "external"
    key = config_hash({"clf": asdict(ccfg), "data": cfg.data.n_collision, "holdout": cfg.data.collision_holdout,
                       "vae": vae_key, "robot": cfg.robot_config})
    if path.exists() and _stamp_ok(stamp, key):
        return clf_mod.CollisionClassifier.load(path)[0]
    if data is None:
        data = build_collision_data(cfg, out)
    s, o, l = data
    train, hold = split_holdout(len(l), cfg.data.collision_holdout)
    model, history = clf_mod.train_classifier(vae, s[train], o[train], l[train], ccfg, callback)
    model.save(path, clf_mod.checkpoint_extra(ccfg, history))
    write_history(out / "classifier_history.csv", history)
    write_timing(out / "classifier_timing.json", history)
    if len(hold):
        rep = clf_mod.classification_report(model, vae, s[hold], o[hold], l[hold])
        (out / "classifier_report.json").write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    _write_stamp(stamp, key)
    return model


def write_timing(path: Path, history: list[dict]) -> None:
    """Wall-clock per epoch, kept apart from the reproducible history file."""
    secs = [float(h["seconds"]) for h in history]
    path.write_text(json.dumps({"epochs": len(secs), "total_seconds": sum(secs), "epoch_seconds": secs}) + "\n",
                    encoding="utf-8")


def write_history(path: Path, history: list[dict]) -> None:
    if not history:
        path.write_text("", encoding="utf-8")
        return
    keys = [k for k in history[0] if k != "seconds"]
    lines = [",".join(keys)] + [",".join(repr(float(h[k])) for k in keys) for h in history]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_planner(name: str, cfg: RunConfig, vae=None, classifier=None, ablate: str | None = None):
    checker = CollisionChecker(load_robot(cfg.robot_config or None))
    if name == "lspp":
        if vae is None:
            raise ValueError("the latent planner needs a VAE checkpoint")
        return LatentPlanner(vae, classifier, cfg.planner.ablate(ablate), checker)
    if name == "pf":
        return PotentialFieldPlanner(cfg.pf, checker)
    if name == "rrtc":
        return RrtConnectPlanner(cfg.rrtc, checker)
    raise ValueError(f"unknown planner {name!r}")


def scenarios_from_seeds(gen: DataGenerator, k: int, seeds) -> list[Scenario]:
    return [gen.generate_scenario(k, int(s)) for s in seeds]


def am_relevant(scenarios: list[Scenario], vae, cfg: RunConfig, resolution: float | None = None) -> list[Scenario]:
    """Scenarios where planning without the obstacle loss yields an obstacle-colliding path."""
    planner = LatentPlanner(vae, None, cfg.planner.ablate("obstacle"))
    checker = CollisionChecker(load_robot(cfg.robot_config or None))
    res = cfg.eval.resolution if resolution is None else resolution

    def collides(sc: Scenario) -> bool:
        plan = planner.plan(sc)
        return checker.path_in_collision(plan.joint_path, sc.obstacle_array, res, include_self_table=False)

    return [s for s in scenarios if collides(s)]
