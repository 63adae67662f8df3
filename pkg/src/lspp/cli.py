"""Command-line entry point: ``lspp <subcommand> [options]``.

Subcommands: gen-data, gen-scenarios, train-vae, train-classifier, plan,
bench, analyze.  Every run writes ``config.txt`` (the fully resolved
configuration) into its output directory.  Failures print one JSON line
``{"error": ..., "code": ...}`` on stderr and exit with a code that names the
failure class.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

# training must be single-threaded for byte-identical checkpoints
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np

from . import evaluation as ev
from .classifier import CollisionClassifier
from .config import PROFILES, RunConfig
from .datagen import (
    BudgetExhausted,
    make_manifest,
    read_manifest,
    read_scenarios,
    read_states_csv,
    write_manifest,
    write_scenarios,
)
from .kvfile import ConfigFormatError
from .nn import ContractError, DimensionError
from .pipeline import (
    am_relevant,
    build_classifier,
    build_collision_data,
    build_states,
    build_vae,
    generator_for,
    load_robot,
    make_planner,
    scenarios_from_seeds,
)
from .vae import VaeModel

log = logging.getLogger("lspp")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_DIMENSION = 5
EXIT_BUDGET = 6


class CliError(Exception):
    def __init__(self, message: str, code: int, kind: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _out_dir(args) -> Path:
    root = args.out or os.environ.get("LSPP_OUT_DIR") or "lspp_out"
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path: str | None, what: str) -> Path:
    if not path:
        raise CliError(f"missing required {what}", EXIT_USAGE, "usage")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}", EXIT_MISSING, "missing-file")
    return p


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_file(_need(args.config, "config file"), profile=args.profile)
    else:
        cfg = RunConfig.for_profile(args.profile or "desk")
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}", EXIT_FORMAT, "bad-config")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.robot_config:
        _need(args.robot_config, "robot config")
        overrides["robot_config"] = args.robot_config
    if overrides:
        cfg = cfg.with_overrides(overrides)
    load_robot(cfg.robot_config or None)  # fail early on a bad robot file
    return cfg


def _in_out(path: str | None, args, name: str) -> str | None:
    """Explicit path, else ``name`` inside the output directory when it exists."""
    if path:
        return path
    root = args.out or os.environ.get("LSPP_OUT_DIR") or "lspp_out"
    cand = Path(root) / name
    return str(cand) if cand.exists() else None


def _load_vae(path: str | None) -> VaeModel:
    return VaeModel.load(_need(path, "VAE checkpoint (--vae)"))[0]


def _load_classifier(path: str | None) -> CollisionClassifier | None:
    if not path:
        return None
    return CollisionClassifier.load(_need(path, "classifier checkpoint"))[0]


def _echo(cfg: RunConfig, out: Path) -> None:
    cfg.write(out / "config.txt")


# -- subcommands --------------------------------------------------------------------


def cmd_gen_data(args, cfg: RunConfig) -> dict:
    if args.n is not None:
        cfg = cfg.with_overrides({"data.n_states": str(args.n), "data.n_collision": str(args.n + args.n % 2)})
    out = _out_dir(args)
    _echo(cfg, out)
    written = []
    if args.kind in ("states", "both"):
        build_states(cfg, out)
        written.append("states.csv")
    if args.kind in ("collision", "both"):
        build_collision_data(cfg, out)
        written.append("collision.csv")
    return {"written": written}


def cmd_gen_scenarios(args, cfg: RunConfig) -> dict:
    out = _out_dir(args)
    n = args.n if args.n is not None else cfg.data.n_scenarios
    counts = [args.obstacles] if args.obstacles is not None else list(cfg.data.obstacle_counts)
    manifest = make_manifest(cfg.seed, counts, n)
    gen = generator_for(cfg)
    vae = _load_vae(args.vae) if args.am_relevant else None
    result = {}
    for k in counts:
        scs = scenarios_from_seeds(gen, k, manifest[str(k)])
        if vae is not None and k > 0:
            scs = am_relevant(scs, vae, cfg)
            manifest[str(k)] = [s.seed for s in scs]
        write_scenarios(out / f"scenarios_k{k}.json", scs)
        result[str(k)] = len(scs)
    write_manifest(out / "manifest.json", manifest)
    _echo(cfg, out)
    return {"scenarios": result}


def cmd_train_vae(args, cfg: RunConfig) -> dict:
    if args.epochs is not None:
        cfg = cfg.with_overrides({"vae.epochs": str(args.epochs)})
    out = _out_dir(args)
    _echo(cfg, out)
    states = read_states_csv(_need(args.data, "state dataset (--data)")) if args.data else None
    model = build_vae(cfg, out, states, _progress("vae") if args.verbose else None)
    summ = ev.sample_consistency(model, min(cfg.eval.consistency_samples, 10_000), cfg.seed)
    return {"checkpoint": str(out / "vae.ckpt"), "consistency": summ.as_dict()}


def cmd_train_classifier(args, cfg: RunConfig) -> dict:
    if args.epochs is not None:
        cfg = cfg.with_overrides({"classifier.epochs": str(args.epochs)})
    out = _out_dir(args)
    _echo(cfg, out)
    vae = _load_vae(args.vae)
    data = None
    if args.data:
        from .datagen import read_collision_csv

        data = read_collision_csv(_need(args.data, "collision dataset"))
    build_classifier(cfg, out, vae, data, _progress("classifier") if args.verbose else None)
    report_path = out / "classifier_report.json"
    rep = json.loads(report_path.read_text()) if report_path.exists() else {}
    return {"checkpoint": str(out / "classifier.ckpt"), "balanced_accuracy": rep.get("balanced_accuracy")}


def _scenarios_for(args, cfg: RunConfig) -> dict[int, list]:
    if args.scenarios:
        scs = read_scenarios(_need(args.scenarios, "scenario file"))
        groups: dict[int, list] = {}
        for s in scs:
            groups.setdefault(len(s.obstacles), []).append(s)
        if args.obstacles is not None:
            groups = {args.obstacles: groups.get(args.obstacles, [])}
        return groups
    if args.manifest:
        manifest = read_manifest(_need(args.manifest, "manifest"))
        gen = generator_for(cfg)
        ks = [args.obstacles] if args.obstacles is not None else sorted(manifest)
        return {k: scenarios_from_seeds(gen, k, manifest.get(k, [])) for k in ks}
    raise CliError("need --scenarios or --manifest", EXIT_USAGE, "usage")


def cmd_plan(args, cfg: RunConfig) -> dict:
    out = _out_dir(args)
    _echo(cfg, out)
    scs = read_scenarios(_need(args.scenarios, "scenario file (--scenarios)"))
    if not 0 <= args.index < len(scs):
        raise CliError(f"scenario index {args.index} out of range (0..{len(scs) - 1})", EXIT_USAGE, "usage")
    sc = scs[args.index]
    vae = _load_vae(args.vae) if args.planner == "lspp" else None
    planner = make_planner(args.planner, cfg, vae, _load_classifier(args.classifier), args.ablate)
    plan = planner.plan(sc, seed=cfg.seed)
    plan.write_trace(out / "trace.csv")
    j = ev.judge_success(plan, sc, cfg.eval.threshold, planner.checker, cfg.eval.resolution)
    res = {"planner": args.planner, "status": plan.status, "steps": plan.steps, "success": j.success,
           "final_distance": j.final_distance, "collided": j.collided}
    (out / "result.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return res


def cmd_bench(args, cfg: RunConfig) -> dict:
    out = _out_dir(args)
    _echo(cfg, out)
    suites = _scenarios_for(args, cfg)
    vae = _load_vae(args.vae) if args.planner == "lspp" else None
    clf = _load_classifier(args.classifier)
    planner = make_planner(args.planner, cfg, vae, clf, args.ablate)
    name = args.planner if not args.ablate else f"{args.planner}-no-{args.ablate}"
    meta = {"profile": cfg.profile, "config_sha256": ev.config_hash(cfg.items()), "oracle_goal": args.planner == "rrtc"}
    for label, path in (("vae", args.vae), ("classifier", args.classifier)):
        if path:
            meta[f"{label}_sha256"] = ev.file_sha256(path)
    report = ev.run_benchmark({name: planner}, suites, cfg.eval.threshold, cfg.eval.resolution, args.jobs, meta,
                              keep_plans=True)
    report.write(out)
    ev.write_scatter_csv(out / "scatter.csv", report.rows)
    limits = load_robot(cfg.robot_config or None).limits
    dyn = ev.DynamicLimits.from_joint_limits(limits)
    labels, reps = [], []
    for row, plan in zip(report.rows, report.plans):
        if row.success and len(plan.joint_path) >= 2:
            labels.append(f"{row.planner}/k{row.k}/{row.scenario}")
            reps.append(ev.dynamic_feasibility(plan.joint_path, dyn, cfg.eval.frequency, limits))
    ev.write_dyn_feas_csv(out / "dyn_feas.csv", labels, reps)
    return {"aggregates": report.aggregates()}


def cmd_analyze(args, cfg: RunConfig) -> dict:
    out = _out_dir(args)
    _echo(cfg, out)
    if args.what == "sample-consistency":
        vae = _load_vae(args.vae)
        summ = ev.sample_consistency(vae, args.n or cfg.eval.consistency_samples, cfg.seed)
        ev.write_hist_csv(out / "hist_delta.csv", summ, cfg.eval.histogram_bins)
        (out / "consistency.json").write_text(json.dumps(summ.as_dict(), indent=2) + "\n", encoding="utf-8")
        return summ.as_dict()
    if args.what == "pca":
        vae = _load_vae(args.vae)
        states = read_states_csv(_need(args.data, "state dataset (--data)"))
        trajs = []
        for t in args.trace or []:
            from .planner import read_trace

            tr = read_trace(_need(t, "trace"))
            x = np.stack([tr[f"q{i}"] for i in range(1, 8)] + [tr["e1"], tr["e2"], tr["e3"]], axis=1)
            trajs.append(vae.encode(x).mu)
        proj = ev.pca_projection(vae.encode(states).mu, trajs)
        ev.write_pca_csv(out / "pca.csv", proj)
        return {"variances": proj.variances.tolist()}
    if args.what == "report":
        rows = ev.read_report_csv(_need(args.report, "report (--report)"))
        agg = ev.aggregate(rows)
        (out / "recomputed_summary.json").write_text(json.dumps(agg, indent=2) + "\n", encoding="utf-8")
        return {"aggregates": agg}
    raise CliError(f"unknown analysis {args.what!r}", EXIT_USAGE, "usage")


def _progress(label: str):
    def cb(epoch: int, rec: dict) -> None:
        print(json.dumps({"stage": label, **{k: (float(v) if isinstance(v, (int, float, np.floating)) else v)
                                               for k, v in rec.items()}}), file=sys.stderr, flush=True)
    return cb


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", choices=PROFILES, default=None)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    common.add_argument("--seed", type=int)
    common.add_argument("--robot-config", dest="robot_config")
    common.add_argument("--out", help="output directory (default: $LSPP_OUT_DIR or ./lspp_out)")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lspp", description="Latent-space path planning pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="sample robot states and collision data")
    g.add_argument("--n", type=int)
    g.add_argument("--kind", choices=("states", "collision", "both"), default="states")

    g = sub.add_parser("gen-scenarios", parents=[common], help="sample planning scenarios and a manifest")
    g.add_argument("--n", type=int)
    g.add_argument("--obstacles", type=int, choices=range(0, 6))
    g.add_argument("--am-relevant", action="store_true", help="keep scenarios where planning without obstacle loss collides")
    g.add_argument("--vae")

    g = sub.add_parser("train-vae", parents=[common], help="train the state VAE")
    g.add_argument("--data")
    g.add_argument("--epochs", type=int)

    g = sub.add_parser("train-classifier", parents=[common], help="train the latent collision classifier")
    g.add_argument("--vae")
    g.add_argument("--data")
    g.add_argument("--epochs", type=int)

    for name, helptext in (("plan", "plan one scenario"), ("bench", "benchmark a planner over scenario suites")):
        g = sub.add_parser(name, parents=[common], help=helptext)
        g.add_argument("--planner", choices=("lspp", "pf", "rrtc"), default="lspp")
        g.add_argument("--vae")
        g.add_argument("--classifier")
        g.add_argument("--scenarios")
        g.add_argument("--ablate", choices=("prior", "obstacle"))
        g.add_argument("--obstacles", type=int, choices=range(0, 6))
        if name == "plan":
            g.add_argument("--index", type=int, default=0)
        else:
            g.add_argument("--manifest")

    g = sub.add_parser("analyze", parents=[common], help="latent-space and report analyses")
    g.add_argument("what", choices=("sample-consistency", "pca", "report"))
    g.add_argument("--vae")
    g.add_argument("--data")
    g.add_argument("--trace", action="append")
    g.add_argument("--report")
    g.add_argument("--n", type=int)
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "gen-scenarios": cmd_gen_scenarios,
    "train-vae": cmd_train_vae,
    "train-classifier": cmd_train_classifier,
    "plan": cmd_plan,
    "bench": cmd_bench,
    "analyze": cmd_analyze,
}


def _fail(message: str, code: int, kind: str) -> int:
    print(json.dumps({"error": message, "kind": kind, "code": code}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve_config(args)
        if hasattr(args, "vae"):
            args.vae = _in_out(args.vae, args, "vae.ckpt")
        if hasattr(args, "classifier"):
            args.classifier = _in_out(args.classifier, args, "classifier.ckpt")
        result = COMMANDS[args.command](args, cfg)
    except CliError as exc:
        return _fail(str(exc), exc.code, exc.kind)
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_MISSING, "missing-file")
    except ConfigFormatError as exc:
        return _fail(str(exc), EXIT_FORMAT, "bad-config")
    except DimensionError as exc:
        return _fail(str(exc), EXIT_DIMENSION, "dimension")
    except (ContractError, ValueError) as exc:
        return _fail(str(exc), EXIT_FORMAT, "bad-input")
    except BudgetExhausted as exc:
        return _fail(str(exc), EXIT_BUDGET, "budget")
    print(json.dumps({"command": args.command, **result}, default=float, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
