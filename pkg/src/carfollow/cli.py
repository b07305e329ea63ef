"""Command-line interface: generate data, estimate parameters, run benchmarks.

Subcommands:

* ``synth``      – roll out a synthetic platoon with known driver parameters.
* ``estimate``   – run the per-vehicle parameter filter over a canonical trace.
* ``benchmark``  – forward-simulate competing driver models against recorded
  ground truth and score them (RMSE, collisions, hard brakes).

Exit codes: 0 success (possibly with warnings), 2 for input/usage errors,
1 for unexpected internal failures. Every run writes a ``manifest.json``
recording the resolved configuration, seeds, input digests, and runtime.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import data as data_mod
from . import metrics as metrics_mod
from .errors import CarfollowError, ConfigError, DegeneracyError, TraceError
from .manifest import write_manifest
from .models import (
    CONST_ACCEL_DEFAULT,
    ConstantAcceleration,
    ConstantVelocity,
    DeterministicIdm,
    StochasticIdm,
    StochasticParams,
    idm_params_from_config,
    preset,
)
from .particle_filter import FilterConfig, mean_particle, run_filter
from .seeding import derive_rng, derive_seed
from .sim import NONTARGET_MODES, RolloutConfig, rollout

MODEL_NAMES = ("estimated", "default", "nonlinear_fit", "const_vel", "const_acc")

_FILTER_KEYS = {
    "particle_count",
    "v_des_range",
    "v_des_step",
    "sigma_range",
    "sigma_step",
    "dither_fraction",
    "v_des_dither",
    "sigma_dither",
    "proposal_mode",
    "noise_model",
    "accel_only_dynamics",
}


def _load_config_file(path) -> dict:
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config file must hold a JSON object")
    return cfg


def _make_filter_config(file_cfg: dict, args) -> FilterConfig:
    section = dict(file_cfg.get("filter", {}))
    unknown = set(section) - _FILTER_KEYS
    if unknown:
        raise ConfigError(f"unknown filter config keys {sorted(unknown)}")
    for key in ("v_des_range", "sigma_range", "v_des_dither", "sigma_dither"):
        if key in section:
            section[key] = tuple(section[key])
    if "idm" in file_cfg:
        section["base_params"] = idm_params_from_config(file_cfg["idm"])
    if getattr(args, "particles", None) is not None:
        section["particle_count"] = args.particles
    if getattr(args, "proposal", None) is not None:
        section["proposal_mode"] = args.proposal
    if getattr(args, "noise", None) is not None:
        section["noise_model"] = args.noise
    return FilterConfig(**section)


def _filter_config_dict(cfg: FilterConfig) -> dict:
    d = asdict(cfg)
    for key in ("v_des_range", "sigma_range", "v_des_dither", "sigma_dither"):
        d[key] = list(d[key])
    return d


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        n = args.threads
    else:
        n = int(os.environ.get("CARFOLLOW_THREADS", "1"))
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n!r}")
    return n


def _estimate_vehicles(sid, scenes, traj, cfg, root_seed, vehicle_ids, threads) -> list:
    """Run the filter for each vehicle; one result dict per vehicle, in order."""

    def work(vid):
        obs = data_mod.extract_observations(scenes, vid)
        row = {"scenario_id": sid, "vehicle_id": vid, "steps": len(obs)}
        if not obs:
            row.update(status="skipped", v_des=np.nan, sigma_idm=np.nan)
            return row
        try:
            particles, trace = run_filter(obs, traj.dt, cfg, seed=derive_seed(root_seed, sid, vid))
        except DegeneracyError as exc:
            warnings.warn(f"vehicle {vid!r} in scenario {sid!r}: {exc}")
            row.update(status="degenerate", v_des=np.nan, sigma_idm=np.nan)
            return row
        mp = mean_particle(particles)
        row.update(
            status="ok",
            v_des=mp.v_des,
            sigma_idm=mp.sigma_idm,
            convergence=trace.tolist(),
            particles=particles.values().tolist(),
        )
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, vehicle_ids))
    return [work(vid) for vid in vehicle_ids]


def cmd_synth(args, caught) -> int:
    t_start = time.perf_counter()
    spec = data_mod.SynthSpec.from_json(args.spec) if args.spec else data_mod.SynthSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace, truth = data_mod.generate_synthetic(spec)
    data_mod.write_canonical(trace, out / "trace.csv")
    truth.to_csv(out / "truth_params.csv", index=False, lineterminator="\n")
    inputs = {"spec": args.spec} if args.spec else {}
    write_manifest(
        out,
        "synth",
        spec.to_dict(),
        spec.seed,
        inputs,
        time.perf_counter() - t_start,
        len(caught),
    )
    n_rows = len(trace.frame)
    print(f"wrote {spec.n_vehicles} vehicles / {n_rows} rows to {out / 'trace.csv'}")
    return 0


def cmd_estimate(args, caught) -> int:
    t_start = time.perf_counter()
    file_cfg = _load_config_file(args.config) if args.config else {}
    cfg = _make_filter_config(file_cfg, args)
    threads = _threads(args)
    scenarios = data_mod.load_scenarios(args.trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for sid, (scenes, traj) in scenarios.items():
        vids = sorted(traj.ids())
        rows.extend(_estimate_vehicles(sid, scenes, traj, cfg, args.seed, vids, threads))

    table = pd.DataFrame(
        [
            {k: r[k] for k in ("scenario_id", "vehicle_id", "status", "v_des", "sigma_idm", "steps")}
            for r in rows
        ]
    )
    table.to_csv(out / "mean_particles.csv", index=False, lineterminator="\n")
    conv = [
        {"scenario_id": r["scenario_id"], "vehicle_id": r["vehicle_id"], "iteration": i, "rms_distance": d}
        for r in rows
        if r["status"] == "ok"
        for i, d in enumerate(r["convergence"])
    ]
    pd.DataFrame(conv, columns=["scenario_id", "vehicle_id", "iteration", "rms_distance"]).to_csv(
        out / "convergence.csv", index=False, lineterminator="\n"
    )
    parts = [
        {
            "scenario_id": r["scenario_id"],
            "vehicle_id": r["vehicle_id"],
            "slot": i,
            "v_des": p[0],
            "sigma_idm": p[1],
        }
        for r in rows
        if r["status"] == "ok"
        for i, p in enumerate(r["particles"])
    ]
    pd.DataFrame(parts, columns=["scenario_id", "vehicle_id", "slot", "v_des", "sigma_idm"]).to_csv(
        out / "particles.csv", index=False, lineterminator="\n"
    )
    posterior = {
        "config": _filter_config_dict(cfg),
        "root_seed": args.seed,
        "vehicles": rows,
    }
    (out / "posterior.json").write_text(json.dumps(posterior, indent=2) + "\n")

    runtime = time.perf_counter() - t_start
    write_manifest(
        out,
        "estimate",
        {"filter": _filter_config_dict(cfg), "threads": threads},
        args.seed,
        {"trace": args.trace},
        runtime,
        len(caught),
    )
    n_ok = sum(r["status"] == "ok" for r in rows)
    print(
        f"estimated {n_ok}/{len(rows)} vehicles across {len(scenarios)} scenario(s) "
        f"in {runtime:.2f} s"
    )
    return 0


def _pick_targets(args, sid, scene0, traj, steps, root_seed) -> list:
    candidates = []
    for vid in scene0.ids():
        first, last = traj.series[vid].finite_window()
        if first == 0 and last >= steps:
            candidates.append(vid)
    candidates.sort()
    if args.targets:
        wanted = [v.strip() for v in args.targets.split(",") if v.strip()]
        bad = [v for v in wanted if v not in candidates]
        if bad:
            raise ConfigError(
                f"scenario {sid!r}: targets {bad!r} are absent or do not cover the horizon"
            )
        return wanted
    if args.target_count is not None:
        if args.target_count < 1:
            raise ConfigError("--target-count must be >= 1")
        rng = derive_rng(root_seed, sid, "targets")
        k = min(args.target_count, len(candidates))
        return sorted(rng.choice(candidates, size=k, replace=False).tolist())
    return candidates


def cmd_benchmark(args, caught) -> int:
    t_start = time.perf_counter()
    file_cfg = _load_config_file(args.config) if args.config else {}
    fcfg = _make_filter_config(file_cfg, args)
    threads = _threads(args)
    model_names = [m.strip() for m in args.models.split(",") if m.strip()]
    if not model_names:
        raise ConfigError("--models must name at least one model")
    unknown = [m for m in model_names if m not in MODEL_NAMES]
    if unknown:
        raise ConfigError(f"unknown model(s) {unknown!r}; available: {list(MODEL_NAMES)}")
    const_accel = float(file_cfg.get("const_accel", CONST_ACCEL_DEFAULT))

    scenarios = data_mod.load_scenarios(args.trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scores = []
    rmse_rows = []
    event_rows = []
    estimate_rows = []
    targets_by_sid = {}
    for sid, (scenes, traj) in scenarios.items():
        dt = traj.dt
        n_steps = args.horizon / dt
        if abs(n_steps - round(n_steps)) > 1e-9:
            raise ConfigError(f"scenario {sid!r}: dt {dt!r} does not divide horizon {args.horizon!r}")
        steps = round(n_steps)
        if traj.length < steps + 1:
            raise TraceError(
                f"scenario {sid!r} has {traj.length} samples but a {args.horizon} s horizon needs {steps + 1}"
            )
        scene0 = scenes[0]
        truth = traj.window(0, steps + 1)
        targets = _pick_targets(args, sid, scene0, traj, steps, args.seed)
        if not targets:
            raise TraceError(f"scenario {sid!r}: no vehicle covers the prediction horizon")
        targets_by_sid[sid] = targets

        est_by_vid = {}
        if "estimated" in model_names:
            for row in _estimate_vehicles(sid, scenes, traj, fcfg, args.seed, targets, threads):
                est_by_vid[row["vehicle_id"]] = row
                estimate_rows.append(
                    {k: row[k] for k in ("scenario_id", "vehicle_id", "status", "v_des", "sigma_idm", "steps")}
                )

        for name in model_names:
            target_models = {}
            for vid in targets:
                if name == "estimated":
                    row = est_by_vid[vid]
                    if row["status"] == "ok":
                        params = replace(fcfg.base_params, v_des=row["v_des"])
                        target_models[vid] = StochasticIdm(StochasticParams(params, row["sigma_idm"]))
                    else:
                        target_models[vid] = DeterministicIdm(fcfg.base_params)
                elif name == "default":
                    target_models[vid] = DeterministicIdm(preset("default"))
                elif name == "nonlinear_fit":
                    target_models[vid] = DeterministicIdm(preset("nonlinear_fit"))
                elif name == "const_vel":
                    target_models[vid] = ConstantVelocity()
                else:
                    target_models[vid] = ConstantAcceleration(const_accel)
            rcfg = RolloutConfig(
                horizon=args.horizon,
                dt=dt,
                target_models=target_models,
                nontarget_mode=args.nontarget,
                mean_only=args.mean_only,
                seed=args.seed,
            )
            pred = rollout(scene0, traj, rcfg)
            series = metrics_mod.rmse_series(pred, truth, targets)
            events = metrics_mod.count_events(pred, scene0, args.brake_threshold)
            scores.append(
                metrics_mod.ScenarioScore(
                    scenario_id=sid,
                    model=name,
                    position_rmse=float(series.position[-1]),
                    velocity_rmse=float(series.velocity[-1]),
                    collisions=events.collisions,
                    hard_brakes=events.hard_brakes,
                )
            )
            for i in range(len(series.t)):
                rmse_rows.append(
                    {
                        "scenario_id": sid,
                        "model": name,
                        "t": float(series.t[i]),
                        "position_rmse": float(series.position[i]),
                        "velocity_rmse": float(series.velocity[i]),
                    }
                )
                event_rows.append(
                    {
                        "scenario_id": sid,
                        "model": name,
                        "t": float(series.t[i]),
                        "collisions_cum": float(events.collision_cum[i]),
                        "hard_brakes_cum": float(events.hard_brake_cum[i]),
                    }
                )

    aggregates = [
        metrics_mod.aggregate([s for s in scores if s.model == name]) for name in model_names
    ]
    metrics_mod.scores_frame(scores).to_csv(out / "report.csv", index=False, lineterminator="\n")
    metrics_mod.aggregate_frame(aggregates).to_csv(out / "summary.csv", index=False, lineterminator="\n")
    pd.DataFrame(rmse_rows).to_csv(out / "rmse_series.csv", index=False, lineterminator="\n")
    pd.DataFrame(event_rows).to_csv(out / "events.csv", index=False, lineterminator="\n")
    if estimate_rows:
        pd.DataFrame(estimate_rows).to_csv(out / "estimates.csv", index=False, lineterminator="\n")
    report = {
        "root_seed": args.seed,
        "horizon": args.horizon,
        "models": model_names,
        "nontarget_mode": args.nontarget,
        "mean_only": args.mean_only,
        "brake_threshold": args.brake_threshold,
        "targets": targets_by_sid,
        "scores": [vars(s) for s in scores],
        "aggregates": [vars(a) for a in aggregates],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")

    runtime = time.perf_counter() - t_start
    write_manifest(
        out,
        "benchmark",
        {
            "filter": _filter_config_dict(fcfg),
            "horizon": args.horizon,
            "models": model_names,
            "nontarget_mode": args.nontarget,
            "mean_only": args.mean_only,
            "brake_threshold": args.brake_threshold,
            "threads": threads,
        },
        args.seed,
        {"trace": args.trace},
        runtime,
        len(caught),
    )
    for agg in aggregates:
        print(
            f"{agg.model}: position RMSE {agg.position_rmse_mean:.3f} ± {agg.position_rmse_std:.3f} m, "
            f"collisions {agg.collisions_mean:.2f} ± {agg.collisions_std:.2f} "
            f"over {agg.n_scenarios} scenario(s)"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carfollow",
        description="Car-following driver models: synthetic data, parameter estimation, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic platoon trace")
    p_synth.add_argument("--spec", help="JSON file describing the platoon (defaults used when omitted)")
    p_synth.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_est = sub.add_parser("estimate", help="estimate per-vehicle parameters from a trace")
    p_est.add_argument("--trace", required=True, help="canonical trajectory CSV")
    p_est.add_argument("--out", required=True, help="output directory")
    p_est.add_argument("--config", help="JSON config file (filter/idm sections)")
    p_est.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p_est.add_argument("--particles", type=int, default=None, help="particles per vehicle")
    p_est.add_argument("--proposal", choices=("literal", "sweep"), default=None)
    p_est.add_argument("--noise", choices=("accel", "position"), default=None, help="noise model")
    p_est.add_argument("--threads", type=int, default=None, help="worker threads (or CARFOLLOW_THREADS)")
    p_est.set_defaults(func=cmd_estimate)

    p_bench = sub.add_parser("benchmark", help="score driver models against recorded ground truth")
    p_bench.add_argument("--trace", required=True, help="canonical trajectory CSV")
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.add_argument("--models", default="estimated,default", help=f"comma list from {MODEL_NAMES}")
    p_bench.add_argument("--horizon", type=float, default=5.0, help="prediction horizon in seconds")
    p_bench.add_argument("--config", help="JSON config file (filter/idm sections, const_accel)")
    p_bench.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p_bench.add_argument("--targets", default=None, help="comma list of target vehicle ids")
    p_bench.add_argument("--target-count", type=int, default=None, help="sample this many targets per scenario")
    p_bench.add_argument("--nontarget", choices=NONTARGET_MODES, default="replay")
    p_bench.add_argument("--mean-only", action="store_true", help="strip acceleration noise from estimated models")
    p_bench.add_argument("--brake-threshold", type=float, default=metrics_mod.HARD_BRAKE_THRESHOLD)
    p_bench.add_argument("--particles", type=int, default=None, help="particles per vehicle")
    p_bench.add_argument("--proposal", choices=("literal", "sweep"), default=None)
    p_bench.add_argument("--noise", choices=("accel", "position"), default=None, help="noise model")
    p_bench.add_argument("--threads", type=int, default=None, help="worker threads (or CARFOLLOW_THREADS)")
    p_bench.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = args.func(args, caught)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return code
    except (ConfigError, TraceError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CarfollowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
