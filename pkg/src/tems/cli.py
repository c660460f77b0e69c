"""Command-line entry point.

    tems synth       --config cfg.json [--out DIR]
    tems simulate    --config cfg.json --steps 30 --seed 7 [--out DIR]
    tems volume      --config cfg.json --tube general --nr 1 --samples 10000
    tems timing      --config cfg.json [--out DIR]
    tems paper-suite --out results/ [--samples 10000]

Configs are JSON; command-line flags override file fields. The effective
configuration is echoed to <out>/effective_config.json so a run can be
reproduced bit-identically from its output directory. The built-in CSTR
dataset is used when the config gives "model": "cstr" (or omits the model).
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import controller as ctl
from . import cstr_bench
from . import lp_core
from . import report
from . import scenario_tree as st
from . import simulator as sim
from .errors import ConfigError, TemsError
from .offline_synth import (Gains, gains_from_dict, low_complexity_tube_matrix,
                            model_from_dict, offline_from_json, offline_to_json,
                            retube, synth_gain_lqr, synthesize)

TUBE_NAMES = {
    "general": ctl.TUBE_GENERAL,
    "homothetic": ctl.TUBE_HOMOTHETIC,
    "low": ctl.TUBE_LOW,
    "pure": ctl.TUBE_PURE,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tems",
                                description="tube-enhanced multi-stage MPC toolkit")
    p.add_argument("experiment",
                   choices=["synth", "simulate", "volume", "timing", "paper-suite"])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--tube", choices=sorted(TUBE_NAMES),
                   help="tube kind (overrides config)")
    p.add_argument("--nr", type=int, help="robust horizon")
    p.add_argument("--np", type=int, dest="n_p", help="prediction horizon")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--runs", type=int, help="closed-loop run count")
    p.add_argument("--out", help="output directory")
    p.add_argument("--offline", help="reuse offline data from this JSON file")
    p.add_argument("--dump-lp", action="store_true",
                   help="write the controller LP next to the outputs")
    return p


DEFAULTS = {
    "model": "cstr",
    "gains": "reference",
    "lambda": cstr_bench.LAMBDA_REF,
    "spec": {"tube_kind": "general", "N_p": cstr_bench.N_P_REF, "N_r": 1,
             "Q": None, "R": None, "weights": "uniform"},
    "seed": 2024,
    "samples": 10_000,
    "steps": 30,
    "runs": 100,
    "output_dir": "tems_out",
}


def load_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))  # deep copy
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON ({args.config}:{exc.lineno}: "
                              f"{exc.msg})") from exc
        for key, val in user.items():
            if key == "spec" and isinstance(val, dict):
                cfg["spec"].update(val)
            else:
                cfg[key] = val
    if args.tube:
        cfg["spec"]["tube_kind"] = args.tube
    if args.nr is not None:
        cfg["spec"]["N_r"] = args.nr
    if args.n_p is not None:
        cfg["spec"]["N_p"] = args.n_p
    for field in ("seed", "samples", "steps", "runs"):
        val = getattr(args, field)
        if val is not None:
            cfg[field] = val
    if args.out:
        cfg["output_dir"] = args.out
    cfg["experiment"] = args.experiment
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict):
    spec = cfg["spec"]
    if spec["tube_kind"] not in TUBE_NAMES and spec["tube_kind"] not in TUBE_NAMES.values():
        raise ConfigError(f"spec.tube_kind: unknown tube kind {spec['tube_kind']!r}")
    for field in ("N_p", "N_r"):
        if not isinstance(spec[field], int) or spec[field] < 0:
            raise ConfigError(f"spec.{field}: need a nonnegative integer")
    if spec["N_r"] > spec["N_p"] or spec["N_p"] < 1:
        raise ConfigError("spec: need N_p >= 1 and 0 <= N_r <= N_p")
    for field in ("seed", "samples", "steps", "runs"):
        if not isinstance(cfg[field], int) or cfg[field] < 0:
            raise ConfigError(f"{field}: need a nonnegative integer")


def _resolve_model(cfg: dict):
    if cfg["model"] == "cstr" or cfg["model"] is None:
        model, gains, defaults = cstr_bench.load_cstr()
    elif cfg["model"] == "cstr-unsplit":
        model, gains, defaults = cstr_bench.load_cstr_unsplit()
    elif isinstance(cfg["model"], str):
        with open(cfg["model"]) as fh:
            model = model_from_dict(json.load(fh))
        gains, defaults = None, {"Q": np.eye(model.n_x),
                                 "R": np.eye(model.n_u), "lambda": cfg["lambda"]}
    else:
        model = model_from_dict(cfg["model"])
        gains, defaults = None, {"Q": np.eye(model.n_x),
                                 "R": np.eye(model.n_u), "lambda": cfg["lambda"]}
    if cfg["gains"] == "lqr" or (gains is None and cfg["gains"] == "reference"):
        K = synth_gain_lqr(model, np.eye(model.n_x), np.eye(model.n_u))
        gains = Gains.uniform(K)
    elif isinstance(cfg["gains"], dict):
        gains = gains_from_dict(cfg["gains"])
    return model, gains, defaults


def _resolve_spec(cfg: dict, model, defaults) -> ctl.ControllerSpec:
    s = cfg["spec"]
    kind = TUBE_NAMES.get(s["tube_kind"], s["tube_kind"])
    Q = np.asarray(s["Q"], dtype=float) if s.get("Q") else defaults.get("Q", np.eye(model.n_x))
    R = np.asarray(s["R"], dtype=float) if s.get("R") else defaults.get("R", np.eye(model.n_u))
    N_p, N_r = s["N_p"], s["N_r"]
    if kind == ctl.TUBE_PURE:
        N_r = N_p
    return ctl.ControllerSpec(kind, N_p, N_r, Q, R)


def _offline_for(cfg, model, gains, spec, out_dir):
    if cfg.get("offline"):
        with open(cfg["offline"]) as fh:
            return offline_from_json(fh.read())
    tube_matrix = None
    if spec.tube_kind == ctl.TUBE_LOW:
        tube_matrix = (spec.low_complexity_T if spec.low_complexity_T is not None
                       else low_complexity_tube_matrix(model, gains.K_pred))
    return synthesize(model, gains, cfg["lambda"], Q=spec.Q, tube_matrix=tube_matrix)


def _echo_config(cfg: dict, out_dir: str):
    report.ensure_dir(out_dir)
    with open(os.path.join(out_dir, "effective_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = cfg["output_dir"]
    try:
        _echo_config(cfg, out_dir)
        if cfg["experiment"] == "paper-suite":
            summary = cstr_bench.run_paper_suite(
                out_dir, samples=cfg["samples"], runs=cfg["runs"],
                steps=cfg["steps"], seed=cfg["seed"])
            ok = summary.get("all_checks_pass", False)
            print(f"paper suite: {'all checks pass' if ok else 'CHECK FAILURES'} "
                  f"(details in {out_dir}/summary.json)")
            return 0

        model, gains, defaults = _resolve_model(cfg)
        spec = _resolve_spec(cfg, model, defaults)
        cfg["lambda"] = cfg.get("lambda", defaults.get("lambda", 0.68))
        offline = _offline_for(cfg, model, gains, spec, out_dir)
        tree = st.build_tree(model.n_p, model.n_w_bar, spec.N_p, spec.N_r)

        if cfg["experiment"] == "synth":
            path = os.path.join(out_dir, "offline.json")
            with open(path, "w") as fh:
                fh.write(offline_to_json(offline))
            lo, hi = offline.S.bounding_box()
            print(f"offline data -> {path}")
            print(f"invariant tube S bounding box: {np.round(hi, 4).tolist()}")
            print(f"tube shape rows: {offline.n_r}, vertices: {offline.n_v}")
            return 0

        if cfg["experiment"] == "simulate":
            x0s = cstr_bench.sample_feasible_states(spec, offline, tree,
                                                    cfg["runs"], cfg["seed"])
            prep = ctl.prepare(spec, offline, tree)
            logs = []
            for i, x0 in enumerate(x0s):
                sampler = sim.UncertaintySampler(seed=cfg["seed"] + 1000 + i)
                logs.append(sim.run_closed_loop(spec, offline, tree, x0,
                                                cfg["steps"], sampler, prepared=prep))
            path = os.path.join(out_dir, "trajectories.csv")
            report.write_trajectories_csv(path, logs)
            report.fig_trajectories(os.path.join(out_dir, "trajectories.png"), logs)
            bad = sum(1 for log in logs for s in log.statuses if s != lp_core.OPTIMAL)
            print(f"{len(logs)} runs x {cfg['steps']} steps -> {path} "
                  f"({bad} infeasible steps)")
            return 0 if bad == 0 else 1

        if cfg["experiment"] == "volume":
            vol, err = sim.estimate_feasible_volume(
                spec, offline, tree, model.X, cfg["samples"], cfg["seed"])
            row = {"spec": f"cli_{spec.tube_kind}", "tube_kind": spec.tube_kind,
                   "N_r": spec.N_r, "volume": vol, "stderr": err,
                   "samples": cfg["samples"]}
            path = os.path.join(out_dir, "volume.csv")
            report.write_volume_csv(path, [row])
            print(f"feasible-domain volume: {vol:.1f} +- {err:.1f} "
                  f"({cfg['samples']} samples) -> {path}")
            return 0

        if cfg["experiment"] == "timing":
            x_pool = cstr_bench.sample_feasible_states(spec, offline, tree, 8,
                                                       cfg["seed"])
            rows = sim.benchmark_timing([spec], [offline], [tree], x_pool)
            path = os.path.join(out_dir, "timing.csv")
            report.write_timing_csv(path, rows)
            r = rows[0]
            print(f"median solve {1e3 * r['median_s']:.1f} ms over {r['solves']} "
                  f"states ({r['num_rows']} rows) -> {path}")
            return 0
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TemsError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
