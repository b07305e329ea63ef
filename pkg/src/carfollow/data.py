"""Canonical trajectory tables, dataset adapters, and a synthetic generator.

The canonical format is a long CSV with one row per (vehicle, frame):

    scenario_id,frame,time,vehicle_id,lane,position,velocity,length

positions are front bumpers in meters increasing along the travel direction,
sampled on a uniform grid of ``dt`` seconds recorded in a JSON sidecar next to
the CSV. The velocity column may be empty; speeds are then derived from
positions by central differences (one-sided at the ends).

Adapters normalize public highway datasets into this shape (unit scaling,
per-vehicle trimming to the maximal contiguous frame window). The synthetic
generator rolls out a platoon of stochastic car-following drivers with known
per-vehicle parameters and returns the ground-truth table alongside.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, TraceError
from .models import StochasticIdm, StochasticParams, VehicleState, preset
from .particle_filter import StepObservation
from .seeding import derive_rng
from .sim import (
    RolloutConfig,
    Scene,
    TrajectorySet,
    VehicleSeries,
    ego_observation,
    rollout,
)

__all__ = [
    "CANONICAL_COLUMNS",
    "CanonicalTrace",
    "read_canonical",
    "write_canonical",
    "load_canonical",
    "load_scenarios",
    "build_scenes",
    "extract_observations",
    "adapt_ngsim",
    "adapt_highd",
    "SynthSpec",
    "generate_synthetic",
]

CANONICAL_COLUMNS = [
    "scenario_id",
    "frame",
    "time",
    "vehicle_id",
    "lane",
    "position",
    "velocity",
    "length",
]

NGSIM_DEFAULT_MAP = {
    "scenario_id": "ngsim",
    "dt": 0.1,
    "columns": {
        "vehicle_id": "Vehicle_ID",
        "frame": "Frame_ID",
        "lane": "Lane_ID",
        "position": "Local_Y",
        "velocity": "v_Vel",
        "length": "v_Length",
    },
    # source units are feet
    "unit_scale": {"position": 0.3048, "velocity": 0.3048, "length": 0.3048},
}

HIGHD_DEFAULT_MAP = {
    "scenario_id": "highd",
    "dt": 0.04,
    "columns": {
        "vehicle_id": "id",
        "frame": "frame",
        "lane": "laneId",
        "position": "x",
        "velocity": "xVelocity",
        "length": "width",
    },
    "unit_scale": {},
    # one carriageway drives toward decreasing x; mirror it onto the canonical axis
    "flip_negative_direction": True,
}


@dataclass
class CanonicalTrace:
    """A validated canonical trajectory table plus its sampling interval."""

    frame: pd.DataFrame
    dt: float

    def __post_init__(self):
        self.validate()

    def scenarios(self) -> list:
        return list(dict.fromkeys(self.frame["scenario_id"]))

    def restrict(self, scenario_id: str) -> "CanonicalTrace":
        sub = self.frame[self.frame["scenario_id"] == scenario_id]
        if sub.empty:
            raise TraceError(
                f"scenario {scenario_id!r} not found; available: {self.scenarios()}"
            )
        return CanonicalTrace(sub.reset_index(drop=True), self.dt)

    def validate(self) -> None:
        df = self.frame
        missing = [c for c in CANONICAL_COLUMNS if c not in df.columns]
        if missing:
            raise TraceError(f"canonical table is missing columns {missing}")
        if not (self.dt > 0.0) or not math.isfinite(self.dt):
            raise TraceError(f"dt must be strictly positive, got {self.dt!r}")
        if df.empty:
            return
        for col in ("frame", "time", "position", "length"):
            bad = np.flatnonzero(~np.isfinite(pd.to_numeric(df[col], errors="coerce")))
            if bad.size:
                raise TraceError(f"non-numeric {col!r} at file row {bad[0] + 2}")
        vel = pd.to_numeric(df["velocity"], errors="coerce")
        neg = np.flatnonzero(vel.to_numpy() < 0.0)
        if neg.size:
            raise TraceError(f"negative velocity at file row {neg[0] + 2}")
        dup = df.duplicated(subset=["scenario_id", "vehicle_id", "frame"])
        if dup.any():
            raise TraceError(
                f"duplicate (vehicle, frame) row at file row {int(np.flatnonzero(dup)[0]) + 2}"
            )
        for sid, scen in df.groupby("scenario_id", sort=False):
            times = scen.groupby("frame")["time"].nunique()
            if (times > 1).any():
                raise TraceError(f"scenario {sid!r}: a frame maps to more than one time")
            for vid, veh in scen.groupby("vehicle_id", sort=False):
                frames = veh["frame"].to_numpy()
                order = np.argsort(frames)
                frames = frames[order]
                gaps = np.flatnonzero(np.diff(frames) != 1)
                if gaps.size:
                    raise TraceError(
                        f"vehicle {vid!r} in scenario {sid!r} is missing frame "
                        f"{int(frames[gaps[0]]) + 1}"
                    )
                t = veh["time"].to_numpy()[order]
                expect = t[0] + (frames - frames[0]) * self.dt
                if np.max(np.abs(t - expect), initial=0.0) > 1e-6:
                    raise TraceError(
                        f"vehicle {vid!r} in scenario {sid!r}: time column is not uniform at dt={self.dt}"
                    )
                x = veh["position"].to_numpy()[order]
                drop = np.flatnonzero(np.diff(x) < -1e-9)
                if drop.size:
                    raise TraceError(
                        f"vehicle {vid!r} in scenario {sid!r}: position decreases at frame "
                        f"{int(frames[drop[0] + 1])}"
                    )
                if veh["length"].nunique() > 1:
                    raise TraceError(
                        f"vehicle {vid!r} in scenario {sid!r} has a varying length"
                    )


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".meta.json")


def write_canonical(trace: CanonicalTrace, path) -> None:
    """Write the CSV and its JSON sidecar (dt, scenario list).

    Floats keep full precision, so a read back reproduces values bit-exactly.
    """
    path = Path(path)
    df = trace.frame.loc[:, CANONICAL_COLUMNS]
    df.to_csv(path, index=False, lineterminator="\n")
    meta = {"dt": trace.dt, "columns": CANONICAL_COLUMNS, "scenarios": trace.scenarios()}
    _sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _infer_dt(df: pd.DataFrame) -> float:
    deltas = []
    for _, veh in df.groupby(["scenario_id", "vehicle_id"], sort=False):
        veh = veh.sort_values("frame")
        dt_vals = np.diff(veh["time"].to_numpy()) / np.diff(veh["frame"].to_numpy())
        deltas.extend(dt_vals.tolist())
    deltas = [d for d in deltas if math.isfinite(d) and d > 0.0]
    if not deltas:
        raise TraceError("cannot infer dt: no sidecar and no consecutive frames")
    return float(np.median(deltas))


def read_canonical(path) -> CanonicalTrace:
    """Read a canonical CSV (+ sidecar when present) into a validated trace."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace file {path} does not exist")
    df = pd.read_csv(
        path,
        dtype={"scenario_id": str, "vehicle_id": str, "lane": str},
        float_precision="round_trip",
    )
    missing = [c for c in CANONICAL_COLUMNS if c not in df.columns]
    if missing:
        raise TraceError(f"{path}: missing columns {missing}")
    if not df.empty:
        frames = pd.to_numeric(df["frame"], errors="coerce")
        bad = np.flatnonzero(~np.isfinite(frames) | (frames != np.round(frames)))
        if bad.size:
            raise TraceError(f"{path}: non-integer frame at file row {bad[0] + 2}")
        df["frame"] = frames.astype(np.int64)
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        dt = float(meta["dt"])
    else:
        dt = _infer_dt(df)
        warnings.warn(f"{path}: no sidecar {sidecar.name}; inferred dt={dt}")
    if df.empty:
        warnings.warn(f"{path}: trace is empty")
    return CanonicalTrace(df, dt)


def _derived_velocity(x: np.ndarray, dt: float) -> np.ndarray:
    n = len(x)
    if n == 1:
        return np.zeros(1)
    v = np.empty(n)
    v[0] = (x[1] - x[0]) / dt
    v[-1] = (x[-1] - x[-2]) / dt
    if n > 2:
        v[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    return v


def build_scenes(trace: CanonicalTrace) -> tuple[list, TrajectorySet]:
    """Turn a single-scenario trace into per-frame scenes plus aligned series.

    Scenes carry one VehicleState per row of each frame; vehicle series are
    NaN-padded to the scenario's global frame range. Velocities missing from
    the table are derived from positions (central differences).
    """
    df = trace.frame
    sids = list(dict.fromkeys(df["scenario_id"]))
    if len(sids) != 1:
        raise TraceError(f"expected exactly one scenario, found {sids}")
    if df.empty:
        raise TraceError("cannot build scenes from an empty trace")
    dt = trace.dt
    f_lo = int(df["frame"].min())
    f_hi = int(df["frame"].max())
    n = f_hi - f_lo + 1
    present = np.zeros(n, dtype=bool)
    present[df["frame"].to_numpy() - f_lo] = True
    if not present.all():
        raise TraceError(
            f"frames are not contiguous across the scenario (no rows at frame {f_lo + int(np.flatnonzero(~present)[0])})"
        )
    t0 = float(df.loc[df["frame"] == f_lo, "time"].iloc[0])

    series = {}
    vel_by_vid = {}
    for vid, veh in df.groupby("vehicle_id", sort=False):
        veh = veh.sort_values("frame")
        frames = veh["frame"].to_numpy() - f_lo
        x = veh["position"].to_numpy(dtype=float)
        v = veh["velocity"].to_numpy(dtype=float)
        if np.any(~np.isfinite(v)):
            v = _derived_velocity(x, dt)
        pos = np.full(n, np.nan)
        vel = np.full(n, np.nan)
        acc = np.full(n, np.nan)
        pos[frames] = x
        vel[frames] = v
        if len(frames) > 1:
            acc[frames[:-1]] = np.diff(v) / dt
        series[str(vid)] = VehicleSeries(pos, vel, acc)
        vel_by_vid[vid] = dict(zip(veh["frame"].to_numpy(), v))

    scenes = []
    for f, rows in df.groupby("frame", sort=True):
        states = []
        for row in rows.itertuples(index=False):
            states.append(
                VehicleState(
                    id=str(row.vehicle_id),
                    position=float(row.position),
                    velocity=float(vel_by_vid[row.vehicle_id][row.frame]),
                    length=float(row.length),
                    lane=str(row.lane),
                )
            )
        states.sort(key=lambda s: (s.position, s.id))
        scenes.append(Scene(timestamp=t0 + (int(f) - f_lo) * dt, vehicles=tuple(states)))
    return scenes, TrajectorySet(dt, t0, series)


def load_canonical(path, scenario_id=None) -> tuple[list, TrajectorySet]:
    """Read a canonical CSV holding one scenario (or pick one by id)."""
    trace = read_canonical(path)
    sids = trace.scenarios()
    if scenario_id is None:
        if len(sids) != 1:
            raise TraceError(f"{path} holds scenarios {sids}; pick one explicitly")
        scenario_id = sids[0]
    return build_scenes(trace.restrict(scenario_id))


def load_scenarios(path) -> dict:
    """Read a canonical CSV into {scenario_id: (scenes, trajectories)}."""
    trace = read_canonical(path)
    return {sid: build_scenes(trace.restrict(sid)) for sid in trace.scenarios()}


def extract_observations(scenes: list, vehicle_id) -> list:
    """Per-step filter observations for one vehicle across consecutive scenes."""
    out = []
    for cur, nxt in zip(scenes, scenes[1:]):
        if vehicle_id not in cur._by_id or vehicle_id not in nxt._by_id:
            continue
        ego = ego_observation(cur, vehicle_id)
        out.append(
            StepObservation(
                ego=ego,
                x=cur.vehicle(vehicle_id).position,
                v=cur.vehicle(vehicle_id).velocity,
                x_next=nxt.vehicle(vehicle_id).position,
            )
        )
    return out


def _load_map(column_map, defaults: dict) -> dict:
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in defaults.items()}
    if column_map is None:
        return merged
    if isinstance(column_map, (str, Path)):
        column_map = json.loads(Path(column_map).read_text())
    if not isinstance(column_map, dict):
        raise ConfigError("column map must be a mapping or a path to a JSON mapping")
    for key, value in column_map.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def _adapt(df: pd.DataFrame, mapping: dict, source: str) -> CanonicalTrace:
    columns = mapping["columns"]
    required = ("vehicle_id", "frame", "lane", "position", "length")
    for name in required:
        if name not in columns:
            raise ConfigError(f"column map for {source} lacks a source column for {name!r}")
        if columns[name] not in df.columns and not df.empty:
            raise ConfigError(
                f"{source}: mapped column {columns[name]!r} (for {name!r}) not in the file"
            )
    dt = float(mapping["dt"])
    if df.empty:
        warnings.warn(f"{source}: input table is empty")
        empty = pd.DataFrame({c: pd.Series(dtype=object) for c in CANONICAL_COLUMNS})
        return CanonicalTrace(empty, dt)

    out = pd.DataFrame(
        {
            "vehicle_id": df[columns["vehicle_id"]].astype(str),
            "frame": pd.to_numeric(df[columns["frame"]]).astype(np.int64),
            "lane": df[columns["lane"]].astype(str),
            "position": pd.to_numeric(df[columns["position"]], errors="coerce").astype(float),
            "length": pd.to_numeric(df[columns["length"]], errors="coerce").astype(float),
        }
    )
    if "velocity" in columns and columns["velocity"] in df.columns:
        out["velocity"] = pd.to_numeric(df[columns["velocity"]], errors="coerce").astype(float)
    else:
        out["velocity"] = np.nan
    scale = mapping.get("unit_scale", {})
    for name, factor in scale.items():
        if name not in ("position", "velocity", "length"):
            raise ConfigError(f"unit_scale key {name!r} is not a scalable column")
        out[name] = out[name] * float(factor)

    dup = out.duplicated(subset=["vehicle_id", "frame"])
    if dup.any():
        warnings.warn(f"{source}: dropped {int(dup.sum())} duplicate (vehicle, frame) rows")
        out = out[~dup]

    if mapping.get("flip_negative_direction"):
        pivot = float(out["position"].max())
        for vid, veh in out.groupby("vehicle_id", sort=False):
            veh = veh.sort_values("frame")
            xs = veh["position"].to_numpy()
            backwards = xs[-1] < xs[0] if len(xs) > 1 else (
                np.nanmean(veh["velocity"].to_numpy()) < 0
            )
            if backwards:
                out.loc[veh.index, "position"] = pivot - out.loc[veh.index, "position"]
                out.loc[veh.index, "velocity"] = -out.loc[veh.index, "velocity"]
                out.loc[veh.index, "lane"] = "-" + out.loc[veh.index, "lane"]

    trimmed = 0
    keep_parts = []
    for vid, veh in out.groupby("vehicle_id", sort=False):
        veh = veh.sort_values("frame")
        frames = veh["frame"].to_numpy()
        breaks = np.flatnonzero(np.diff(frames) != 1)
        if breaks.size == 0:
            keep_parts.append(veh)
            continue
        trimmed += 1
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks + 1, [len(frames)]])
        runs = ends - starts
        best = int(np.argmax(runs))
        keep_parts.append(veh.iloc[starts[best] : ends[best]])
    if trimmed:
        warnings.warn(
            f"{source}: trimmed {trimmed} vehicles to their longest contiguous frame window"
        )
    out = pd.concat(keep_parts, ignore_index=True)

    f0 = int(out["frame"].min())
    out["time"] = (out["frame"] - f0) * dt
    out["scenario_id"] = str(mapping.get("scenario_id", source))
    out = out.sort_values(["frame", "vehicle_id"], kind="stable").reset_index(drop=True)
    return CanonicalTrace(out.loc[:, CANONICAL_COLUMNS], dt)


def adapt_ngsim(path, column_map=None) -> CanonicalTrace:
    """Normalize an NGSIM trajectory export (feet, 10 Hz) to canonical form.

    ``column_map`` (mapping or JSON path) can override source column names,
    unit scales, dt, and the scenario id; defaults follow the published
    column layout.
    """
    mapping = _load_map(column_map, NGSIM_DEFAULT_MAP)
    df = pd.read_csv(path)
    return _adapt(df, mapping, source=str(path))


def adapt_highd(path, column_map=None, recording_meta=None) -> CanonicalTrace:
    """Normalize a highD tracks CSV (meters, 25 Hz) to canonical form.

    When ``recording_meta`` (the per-recording metadata CSV) is given, dt is
    taken from its frameRate column; otherwise from the column map.
    """
    mapping = _load_map(column_map, HIGHD_DEFAULT_MAP)
    if recording_meta is not None:
        meta = pd.read_csv(recording_meta)
        if "frameRate" not in meta.columns or meta.empty:
            raise ConfigError(f"{recording_meta}: expected a frameRate column")
        mapping["dt"] = 1.0 / float(meta["frameRate"].iloc[0])
    df = pd.read_csv(path)
    return _adapt(df, mapping, source=str(path))


def _snap_grid(lo: float, hi: float, step: float, name: str) -> np.ndarray:
    if hi < lo:
        raise ConfigError(f"{name} range must have lo <= hi, got ({lo!r}, {hi!r})")
    if step <= 0.0:
        raise ConfigError(f"{name} step must be strictly positive, got {step!r}")
    n_float = (hi - lo) / step
    n = round(n_float)
    if abs(n_float - n) > 1e-9:
        raise ConfigError(f"{name} step {step!r} must divide the range width {hi - lo!r}")
    return lo + step * np.arange(n + 1)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic platoon with known per-driver parameters.

    Each of ``n_vehicles`` modeled vehicles draws its true desired speed and
    acceleration-noise variance uniformly from the given grids, starts a few
    m/s under its desired speed (unless ``initial_speed`` pins it), and is
    placed behind its predecessor with a uniform random gap from ``spacing``.
    An optional scripted lead vehicle drives a constant or stop-and-go speed
    profile ahead of the platoon.
    """

    n_vehicles: int = 20
    horizon: float = 5.0
    dt: float = 0.1
    seed: int = 0
    scenario_id: str = "synth"
    lane: str = "1"
    vehicle_length: float = 5.0
    spacing: tuple[float, float] = (30.0, 60.0)
    v_des_range: tuple[float, float] = (15.0, 35.0)
    v_des_step: float = 0.5
    sigma_range: tuple[float, float] = (0.1, 1.0)
    sigma_step: float = 0.1
    initial_speed: float | None = None
    idm_preset: str = "default"
    leader: dict | None = None

    def __post_init__(self):
        if self.n_vehicles < 1:
            raise ConfigError(f"n_vehicles must be >= 1, got {self.n_vehicles!r}")
        if self.dt <= 0.0 or self.horizon <= 0.0:
            raise ConfigError("dt and horizon must be strictly positive")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"dt {self.dt!r} must divide the horizon {self.horizon!r}")
        if not (0.0 < self.spacing[0] <= self.spacing[1]):
            raise ConfigError(f"spacing must satisfy 0 < lo <= hi, got {self.spacing!r}")
        if self.sigma_range[0] < 0.0:
            raise ConfigError("sigma range must be non-negative")
        if self.v_des_range[0] <= 0.0:
            raise ConfigError("v_des range must be strictly positive")
        _snap_grid(*self.v_des_range, self.v_des_step, "v_des")
        _snap_grid(*self.sigma_range, self.sigma_step, "sigma")
        if self.leader is not None:
            profile = self.leader.get("profile")
            if profile not in ("constant", "stop_and_go"):
                raise ConfigError(
                    f"leader profile must be 'constant' or 'stop_and_go', got {profile!r}"
                )

    @property
    def steps(self) -> int:
        return round(self.horizon / self.dt)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for key in ("spacing", "v_des_range", "sigma_range"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        unknown = set(d) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown synthetic-spec keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("spacing", "v_des_range", "sigma_range"):
            d[key] = list(d[key])
        return d


def _leader_series(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Speed/position profile of the scripted lead vehicle (front bumper at 0)."""
    cfg = spec.leader
    steps = spec.steps
    if cfg["profile"] == "constant":
        v = np.full(steps + 1, float(cfg.get("speed", 25.0)))
    else:
        v_high = float(cfg.get("v_high", 25.0))
        v_low = float(cfg.get("v_low", 5.0))
        period = float(cfg.get("period", 20.0))
        ramp = float(cfg.get("ramp", 2.0))  # m/s^2 toward the segment target
        v = np.empty(steps + 1)
        v[0] = v_high
        for k in range(steps):
            target = v_high if (k * spec.dt) % period < period / 2.0 else v_low
            dv = np.clip(target - v[k], -ramp * spec.dt, ramp * spec.dt)
            v[k + 1] = max(0.0, v[k] + dv)
    x = np.empty(steps + 1)
    x[0] = 0.0
    # trapezoidal displacement matches constant-acceleration kinematics per step
    x[1:] = np.cumsum(0.5 * (v[:-1] + v[1:]) * spec.dt)
    return x, v


def generate_synthetic(spec: SynthSpec) -> tuple[CanonicalTrace, pd.DataFrame]:
    """Roll out the platoon described by ``spec``.

    Returns the canonical trace together with the ground-truth parameter
    table (vehicle_id, v_des, sigma_idm). Deterministic given ``spec.seed``.
    """
    rng = derive_rng(spec.seed, "synth-params")
    v_grid = _snap_grid(*spec.v_des_range, spec.v_des_step, "v_des")
    s_grid = _snap_grid(*spec.sigma_range, spec.sigma_step, "sigma")
    n = spec.n_vehicles
    v_des_true = rng.choice(v_grid, size=n)
    sigma_true = rng.choice(s_grid, size=n)
    gaps = rng.uniform(spec.spacing[0], spec.spacing[1], size=n)

    width = max(2, len(str(n)))
    ids = [f"v{i + 1:0{width}d}" for i in range(n)]
    base = preset(spec.idm_preset)

    states = []
    data = None
    front = 0.0  # rear bumper of the vehicle ahead
    if spec.leader is not None:
        lead_x, lead_v = _leader_series(spec)
        acc = np.full(spec.steps + 1, np.nan)
        acc[:-1] = np.diff(lead_v) / spec.dt
        data = TrajectorySet(
            spec.dt, 0.0, {"lead": VehicleSeries(lead_x, lead_v, acc)}
        )
        states.append(
            VehicleState("lead", 0.0, float(lead_v[0]), spec.vehicle_length, spec.lane)
        )
        front = 0.0 - spec.vehicle_length

    target_models = {}
    truth_rows = []
    for i, vid in enumerate(ids):
        x = front - gaps[i] if (spec.leader is not None or i > 0) else 0.0
        v0 = spec.initial_speed if spec.initial_speed is not None else max(0.0, v_des_true[i] - 3.0)
        states.append(VehicleState(vid, x, float(v0), spec.vehicle_length, spec.lane))
        front = x - spec.vehicle_length
        params = StochasticParams(replace(base, v_des=float(v_des_true[i])), float(sigma_true[i]))
        target_models[vid] = StochasticIdm(params)
        truth_rows.append({"vehicle_id": vid, "v_des": float(v_des_true[i]), "sigma_idm": float(sigma_true[i])})

    scene = Scene(0.0, tuple(sorted(states, key=lambda s: s.position)))
    roll_cfg = RolloutConfig(
        horizon=spec.horizon,
        dt=spec.dt,
        target_models=target_models,
        nontarget_mode="replay",
        seed=spec.seed,
    )
    traj = rollout(scene, data, roll_cfg)

    rows = []
    for k in range(spec.steps + 1):
        for state in scene.vehicles:
            s = traj.series[state.id]
            rows.append(
                {
                    "scenario_id": spec.scenario_id,
                    "frame": k,
                    "time": k * spec.dt,
                    "vehicle_id": state.id,
                    "lane": spec.lane,
                    "position": float(s.position[k]),
                    "velocity": float(s.velocity[k]),
                    "length": spec.vehicle_length,
                }
            )
    df = pd.DataFrame(rows, columns=CANONICAL_COLUMNS)
    df = df.sort_values(["frame", "vehicle_id"], kind="stable").reset_index(drop=True)
    truth = pd.DataFrame(truth_rows, columns=["vehicle_id", "v_des", "sigma_idm"])
    return CanonicalTrace(df, spec.dt), truth
