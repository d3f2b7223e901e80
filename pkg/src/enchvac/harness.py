"""Closed-loop experiments: configuration, orchestration, metrics and the CLI.

A run wires the four-room plant to the trained actor through the event
trigger.  Each step the client senses the plant, the trigger decides whether
to transmit, and on a transmission the normalised state is encrypted, sent
to the cloud, pushed through the actor's linear/tanh/linear layers, returned
and decrypted.  The client finishes the output sigmoid, clamps and actuates.
Between transmissions the actuator holds the last control.

Backends:
    plain      exact activations, plaintext messages
    poly       polynomial activations, plaintext messages
    reference  HE semantics without lattice arithmetic
    rlwe       the real RLWE scheme
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy
from scipy.stats import spearmanr

from . import __version__, he
from .building import (
    N_ROOMS,
    BuildingEnv,
    PlantConfig,
    PlantState,
    default_schedule,
    load_occupancy,
    load_weather,
    synth_weather,
)
from .enc_nn import forward_levels, get_activation
from .grhdp import (
    ControllerWeights,
    GrhdpConfig,
    actor_forward,
    client_actuation,
    cloud_actor,
    train_controller,
    write_log,
)
from .trigger import (
    TriggerConfig,
    TriggerPolicyWeights,
    always,
    reinforce_train,
    run_episode,
    write_episode_log,
    write_training_log,
)

log = logging.getLogger(__name__)

BACKENDS = ("plain", "poly", "reference", "rlwe")
ENCRYPTED = ("reference", "rlwe")
METRIC_FIELDS = ("beta", "comm_rate", "temp_violation_pct", "co2_violation_pct", "max_temp_dev_c",
                 "max_co2_dev_ppm", "bytes_up", "bytes_down", "wall_s_per_step")
DEFAULT_GRID = (0.0, 1.0, 3.0, 6.9, 12.0)

DEFAULT_CONFIG = {
    "seed": 0,
    "backend": "poly",
    "trigger": "event",
    "beta": 6.9,
    "he_preset": "deep-6",
    "activations": ["tanh", "sigmoid", "sigmoid"],
    "eval_days": 30,
    "start_state": {"temp_c": 24.0, "co2_ppm": 500.0},
    "x_ref": {"temp_c": 23.5, "co2_ppm": 800.0},
    "x_scale": {"temp_c": 1.5, "co2_ppm": 400.0},
    "comfort": {"temp_low": 22.0, "temp_high": 25.0, "co2_high": 800.0},
    "weather": {"train_path": None, "eval_path": None, "train_seed": 101, "eval_seed": 7,
                "train_days": 35},
    "occupancy": None,
    "plant": {},
    "controller": {"epochs": 300, "hidden": 16, "lr_actor": 0.05, "lr_critic": 0.1, "alpha": 0.8,
                   "gamma": 0.5, "warmup": 20, "d_temp": 0.25, "d_co2": 0.05, "m": 0.05,
                   "episodes": 4, "episode_len": 96, "critic_iters": 100, "actor_iters": 20,
                   "explore": 0.1, "epsilon": 0.1},
    "trigger_training": {"T_s": 8, "episodes": 3000, "batch": 8, "lr": 0.03, "hidden": 16,
                         "horizon": 96, "discount": 0.9, "restarts": 3, "val_episodes": 16,
                         "init_logit": 3.0, "q_temp": 12.0, "q_co2": 12.0, "r": 1.2},
    "checkpoints": {"controller": None, "trigger": None},
    "sweep": {"betas": list(DEFAULT_GRID), "workers": None},
}


class ConfigError(ValueError):
    """Invalid configuration, flags or inputs (CLI exit code 1)."""


def config_schema() -> dict:
    return json.loads(resources.files("enchvac").joinpath("config.schema.json").read_text("utf-8"))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def make_config(overrides: dict | None = None, base_dir: Path | None = None) -> dict:
    """Defaults merged with ``overrides``, schema-checked and resolved."""
    overrides = overrides or {}
    try:
        jsonschema.validate(overrides, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    cfg = _merge(DEFAULT_CONFIG, overrides)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    for section, key in (("weather", "train_path"), ("weather", "eval_path"),
                         ("checkpoints", "controller"), ("checkpoints", "trigger")):
        p = cfg[section][key]
        if p is not None:
            cfg[section][key] = str((base_dir / p).resolve())
    if cfg["occupancy"] is not None:
        cfg["occupancy"] = str((base_dir / cfg["occupancy"]).resolve())
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        he.get_preset(cfg["he_preset"])
    except he.InvalidParams as exc:
        raise ConfigError(str(exc)) from None
    for name in cfg["activations"]:
        try:
            get_activation(name)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"unknown activation preset {name!r}") from exc
    paths = [cfg["weather"]["train_path"], cfg["weather"]["eval_path"], cfg["occupancy"],
             cfg["checkpoints"]["controller"], cfg["checkpoints"]["trigger"]]
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")
    try:
        PlantConfig(**cfg["plant"])
    except ValueError as exc:
        raise ConfigError(f"plant: {exc}") from None
    if cfg["backend"] in ENCRYPTED:
        check_depth(cfg["he_preset"])
    c = cfg["comfort"]
    if not c["temp_low"] < c["temp_high"]:
        raise ConfigError("comfort band needs temp_low < temp_high")


def check_depth(preset: str) -> None:
    """The cloud evaluates the actor up to its output logits."""
    need, have = forward_levels(), he.get_preset(preset).depth
    if have < need:
        raise ConfigError(f"HE preset {preset!r} has depth {have}; the encrypted actor needs {need}")


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not valid UTF-8 JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return make_config(doc, base_dir=path.parent)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _ref(cfg, key):
    d = cfg[key]
    return np.array([d["temp_c"]] * N_ROOMS + [d["co2_ppm"]] * N_ROOMS)


def plant_config(cfg) -> PlantConfig:
    return PlantConfig(**cfg["plant"])


def schedule(cfg):
    if cfg["occupancy"] is None:
        return default_schedule()
    return load_occupancy(cfg["occupancy"])


def weather(cfg, split: str):
    w = cfg["weather"]
    path = w[f"{split}_path"]
    if path is not None:
        return load_weather(path)
    days = w["train_days"] if split == "train" else cfg["eval_days"] + 1
    return synth_weather(days, seed=w[f"{split}_seed"], dt=plant_config(cfg).dt)


def make_env(cfg, split: str, episode_len: int | None = None) -> BuildingEnv:
    pc = plant_config(cfg)
    if episode_len is None:
        episode_len = cfg["controller"]["episode_len"]
    return BuildingEnv(pc, weather(cfg, split), schedule(cfg), x_ref=_ref(cfg, "x_ref"),
                       scale=_ref(cfg, "x_scale"), episode_len=episode_len)


def grhdp_config(cfg) -> GrhdpConfig:
    c = cfg["controller"]
    D = np.diag([c["d_temp"]] * N_ROOMS + [c["d_co2"]] * N_ROOMS)
    keep = {"epochs", "hidden", "lr_actor", "lr_critic", "alpha", "gamma", "warmup", "episodes",
            "episode_len", "critic_iters", "actor_iters", "explore", "epsilon"}
    return GrhdpConfig(D=D, M=np.eye(N_ROOMS) * c["m"], seed=cfg["seed"],
                       acts=tuple(cfg["activations"]), **{k: c[k] for k in keep})


def trigger_config(cfg, beta: float, horizon: int | None = None) -> TriggerConfig:
    t = cfg["trigger_training"]
    u_max = plant_config(cfg).u_max
    # the trigger works on the controller's observation, whose reference is 0
    Q = np.diag([t["q_temp"]] * N_ROOMS + [t["q_co2"]] * N_ROOMS)
    R = np.diag(t["r"] / u_max ** 2)
    seed = int(np.random.SeedSequence([cfg["seed"], int(round(beta * 1000))]).generate_state(1)[0])
    return TriggerConfig(Q=Q, R=R, x_r=np.zeros(2 * N_ROOMS), beta=float(beta), T_s=t["T_s"],
                         H=t["horizon"] if horizon is None else horizon, hidden=t["hidden"],
                         lr=t["lr"], episodes=t["episodes"], batch=t["batch"], seed=seed,
                         init_logit=t["init_logit"], discount=t["discount"],
                         restarts=t["restarts"], val_episodes=t["val_episodes"])


def make_keys(cfg, backend: str | None = None):
    backend = backend or cfg["backend"]
    if backend not in ENCRYPTED:
        return None
    return he.keygen(he.get_preset(cfg["he_preset"]), seed=cfg["seed"], backend=backend)


def fit_controller(cfg):
    """Train the GrHDP actor/critics on the training weather."""
    return train_controller(make_env(cfg, "train"), grhdp_config(cfg))


def fit_trigger(cfg, w: ControllerWeights, beta: float):
    """REINFORCE the trigger against the frozen actor (polynomial activations)."""
    tc = trigger_config(cfg, beta)
    env = make_env(cfg, "train", episode_len=tc.H)
    acts = tuple(cfg["activations"])
    return reinforce_train(lambda x: actor_forward(x, w, "poly", acts=acts), env, tc)


def load_controller(cfg, out_dir: Path | None = None) -> ControllerWeights:
    p = cfg["checkpoints"]["controller"]
    if p is None and out_dir is not None and (Path(out_dir) / "controller.bin").is_file():
        p = Path(out_dir) / "controller.bin"
    if p is None:
        raise ConfigError("no controller checkpoint: run train-controller or set checkpoints.controller")
    w = ControllerWeights.load(p)
    if (w.n, w.m) != (2 * N_ROOMS, N_ROOMS):
        raise ConfigError(f"{p}: checkpoint is {w.n}x{w.m}, the plant needs {2 * N_ROOMS}x{N_ROOMS}")
    return w


def trigger_name(beta: float) -> str:
    return f"trigger_beta{beta:g}.bin"


def load_trigger(cfg, beta: float, out_dir: Path | None = None) -> TriggerPolicyWeights:
    p = cfg["checkpoints"]["trigger"]
    if p is None and out_dir is not None and (Path(out_dir) / trigger_name(beta)).is_file():
        p = Path(out_dir) / trigger_name(beta)
    if p is None:
        raise ConfigError(f"no trigger checkpoint for beta={beta:g}: run train-trigger or set checkpoints.trigger")
    tw = TriggerPolicyWeights.load(p)
    if tw.W1.shape[1] != 4 * N_ROOMS + 1:
        raise ConfigError(f"{p}: trigger input width {tw.W1.shape[1]} does not match the plant")
    return tw


# ---------------------------------------------------------------------------
# trajectories and metrics
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    temps: np.ndarray       # H x rooms, after each step
    co2: np.ndarray         # H x rooms
    controls: np.ndarray    # H x m, applied
    actions: np.ndarray     # H
    bytes_up: np.ndarray    # H
    bytes_down: np.ndarray  # H
    wall_s: np.ndarray      # H, wall time of each step

    def __len__(self):
        return len(self.actions)

    def write_csv(self, path) -> None:
        r, m = self.temps.shape[1], self.controls.shape[1]
        head = (["step", "a"] + [f"u{i}" for i in range(m)] + [f"temp{i}" for i in range(r)]
                + [f"co2_{i}" for i in range(r)] + ["bytes_up", "bytes_down", "wall_s"])
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(head)
            for k in range(len(self)):
                wr.writerow([k, int(self.actions[k])] + [repr(float(v)) for v in self.controls[k]]
                            + [repr(float(v)) for v in self.temps[k]] + [repr(float(v)) for v in self.co2[k]]
                            + [int(self.bytes_up[k]), int(self.bytes_down[k]), repr(float(self.wall_s[k]))])

    @classmethod
    def read_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: empty trajectory")
        head = rows[0]

        def cols(prefix):
            return [i for i, h in enumerate(head) if h.startswith(prefix)]

        try:
            data = np.array([[float(v) for v in r] for r in rows[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: malformed trajectory row ({exc})") from None
        ix = {h: i for i, h in enumerate(head)}
        return cls(data[:, cols("temp")], data[:, cols("co2_")], data[:, cols("u")],
                   data[:, ix["a"]].astype(int), data[:, ix["bytes_up"]], data[:, ix["bytes_down"]],
                   data[:, ix["wall_s"]])


@dataclass
class EpisodeMetrics:
    beta: float
    comm_rate: float
    temp_violation_pct: float
    co2_violation_pct: float
    max_temp_dev_c: float
    max_co2_dev_ppm: float
    bytes_up: int
    bytes_down: int
    wall_s_per_step: float

    @property
    def total_bytes(self) -> int:
        return self.bytes_up + self.bytes_down

    def row(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def compute_metrics(temps, co2=None, actions=None, comfort=None, beta: float = 0.0,
                    bytes_up=0, bytes_down=0, wall_s=None) -> EpisodeMetrics:
    """Violation percentages, maximum band excursions, comm rate and traffic.

    A step violates the temperature band when any room leaves
    [temp_low, temp_high], and the CO2 limit when any room exceeds co2_high.
    Deviations are distances outside the band, so a compliant run has 0.
    """
    comfort = comfort or DEFAULT_CONFIG["comfort"]
    T = np.atleast_2d(np.asarray(temps, dtype=float))
    if T.size == 0:
        raise ValueError("empty trajectory")
    if T.shape[0] == 1 and np.ndim(temps) == 1:
        T = T.T
    H = T.shape[0]
    C = np.full_like(T, -np.inf) if co2 is None else np.asarray(co2, dtype=float).reshape(H, -1)
    lo, hi, cmax = comfort["temp_low"], comfort["temp_high"], comfort["co2_high"]
    t_dev = np.maximum(lo - T, 0.0) + np.maximum(T - hi, 0.0)
    c_dev = np.maximum(C - cmax, 0.0)
    a = np.ones(H) if actions is None else np.asarray(actions, dtype=float)
    if a.size != H:
        raise ValueError(f"{a.size} trigger decisions for {H} steps")
    wall = 0.0 if wall_s is None else float(np.mean(wall_s))
    return EpisodeMetrics(
        beta=float(beta),
        comm_rate=float(a.mean()),
        temp_violation_pct=100.0 * float(np.mean(np.any(t_dev > 0, axis=1))),
        co2_violation_pct=100.0 * float(np.mean(np.any(c_dev > 0, axis=1))),
        max_temp_dev_c=float(t_dev.max()),
        max_co2_dev_ppm=float(c_dev.max()),
        bytes_up=int(np.sum(bytes_up)),
        bytes_down=int(np.sum(bytes_down)),
        wall_s_per_step=wall,
    )


def metrics_of(traj: Trajectory, cfg, beta: float) -> EpisodeMetrics:
    return compute_metrics(traj.temps, traj.co2, traj.actions, cfg["comfort"], beta,
                           traj.bytes_up, traj.bytes_down, traj.wall_s)


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(METRIC_FIELDS)
        for m in rows:
            wr.writerow([repr(float(m.beta)), repr(m.comm_rate), repr(m.temp_violation_pct),
                         repr(m.co2_violation_pct), repr(m.max_temp_dev_c), repr(m.max_co2_dev_ppm),
                         m.bytes_up, m.bytes_down, f"{m.wall_s_per_step:.6g}"])


def read_metrics(path) -> list[EpisodeMetrics]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != METRIC_FIELDS:
            raise ValueError(f"{path}: unexpected metrics header")
        out = []
        for r in rd:
            vals = {k: (int(r[k]) if k.startswith("bytes") else float(r[k])) for k in METRIC_FIELDS}
            out.append(EpisodeMetrics(**vals))
    return out


# ---------------------------------------------------------------------------
# the closed loop
# ---------------------------------------------------------------------------

class CloudLink:
    """Client/cloud exchange of one state for one control, with byte counts.

    Plaintext backends count raw float64 message sizes.  Encrypted backends
    count the serialized size of a ciphertext at its level, which is what the
    RLWE backend puts on the wire.
    """

    def __init__(self, w: ControllerWeights, backend: str, keys=None, acts=("tanh", "sigmoid", "sigmoid")):
        if backend not in BACKENDS:
            raise ConfigError(f"unknown backend {backend!r}; known: {BACKENDS}")
        if backend in ENCRYPTED and keys is None:
            raise ConfigError(f"backend {backend!r} needs a key set")
        self.w, self.backend, self.keys, self.acts = w, backend, keys, tuple(acts)
        self.up = 8 * w.n
        self.down = 8 * w.m
        self.cloud_s = 0.0

    def __call__(self, x_hat) -> np.ndarray:
        if self.backend not in ENCRYPTED:
            return actor_forward(x_hat, self.w, self.backend, acts=self.acts)
        keys = self.keys
        ct = he.encrypt(x_hat, keys)
        up = he.serialize(ct)
        t0 = time.perf_counter()
        res = cloud_actor(he.deserialize(up, keys), self.w, keys, self.acts)
        out = he.serialize(res)
        self.cloud_s += time.perf_counter() - t0
        # wire size of a real ciphertext; the reference backend's blobs are compact
        self.up, self.down = he.byte_size(ct), he.byte_size(res)
        logits = he.decrypt(he.deserialize(out, keys), keys)
        return client_actuation(logits[: self.w.m], self.w, self.acts)


def run_closed_loop(cfg, w: ControllerWeights, policy=None, keys=None, days: float | None = None,
                    backend: str | None = None, episode_log=None):
    """Simulate the evaluation period and return (Trajectory, EpisodeMetrics).

    ``policy`` is the trained trigger; None (or cfg trigger 'periodic')
    transmits every step.  Event-triggered runs evaluate the policy greedily
    so encrypted and plaintext runs see the same decisions.
    """
    backend = backend or cfg["backend"]
    if backend in ENCRYPTED:
        check_depth(cfg["he_preset"])
        if keys is None:
            keys = make_keys(cfg, backend)
    days = cfg["eval_days"] if days is None else days
    H = int(round(days * 86400 / plant_config(cfg).dt))
    if H < 1:
        raise ConfigError("evaluation period shorter than one step")
    periodic = policy is None or cfg["trigger"] == "periodic"
    tc = trigger_config(cfg, 0.0 if periodic else cfg["beta"], horizon=H)
    env = make_env(cfg, "eval", episode_len=H)
    if len(env.weather) < H:
        raise ConfigError(f"evaluation weather has {len(env.weather)} samples, {H} needed")
    s0 = cfg["start_state"]
    x0 = env.reset(start=0, state=PlantState([s0["temp_c"]] * N_ROOMS, [s0["co2_ppm"]] * N_ROOMS))
    link = CloudLink(w, backend, keys, cfg["activations"])
    temps, co2, up, down, wall = [], [], [], [], []
    clock = [time.perf_counter()]

    def on_step(k, rec):
        temps.append(env.state.temps.copy())
        co2.append(env.state.co2.copy())
        up.append(link.up if rec.a else 0)
        down.append(link.down if rec.a else 0)
        now = time.perf_counter()
        wall.append(now - clock[0])
        clock[0] = now

    ep = run_episode(always if periodic else policy, link, env, tc, np.random.default_rng(cfg["seed"]),
                     x0=x0, H=H, on_step=on_step, greedy=True)
    traj = Trajectory(np.array(temps), np.array(co2), np.array([r.u for r in ep.steps]), ep.actions,
                      np.array(up), np.array(down), np.array(wall))
    if episode_log is not None:
        write_episode_log(ep, episode_log)
    return traj, metrics_of(traj, cfg, tc.beta)


# ---------------------------------------------------------------------------
# sweeps and timing
# ---------------------------------------------------------------------------

def _sweep_point(args):
    cfg, w_path, beta, out_dir = args
    w = ControllerWeights.load(w_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / trigger_name(beta)
    if ckpt.is_file():
        tw = TriggerPolicyWeights.load(ckpt)
    else:
        tw, rows = fit_trigger(cfg, w, beta)
        tw.save(ckpt)
        write_training_log(rows, out / "trigger_log.csv")
    run_cfg = _merge(cfg, {"beta": beta, "trigger": "event"})
    traj, m = run_closed_loop(run_cfg, w, tw, episode_log=out / "episode.csv")
    traj.write_csv(out / "trajectory.csv")
    return m


@dataclass
class SweepResult:
    rows: list
    spearman: float

    def monotone_violations(self) -> dict:
        """Whether each violation percentage is nonincreasing in comm_rate."""
        order = sorted(self.rows, key=lambda m: -m.comm_rate)
        out = {}
        for key in ("temp_violation_pct", "co2_violation_pct"):
            ok = True
            for hi, lo in zip(order, order[1:]):
                if lo.comm_rate < hi.comm_rate and getattr(lo, key) < getattr(hi, key):
                    ok = False
            out[key] = ok
        return out


def sweep_beta(cfg, grid, w: ControllerWeights, out_dir, workers: int | None = None) -> SweepResult:
    """Train (or load) a trigger per beta, run the closed loop, merge one table.

    Points run in separate processes with isolated plants, RNG streams and
    output directories; this process is the only writer of sweep.csv.
    """
    grid = [float(b) for b in grid]
    if not grid:
        raise ConfigError("beta grid is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w_path = out / "controller.bin"
    w.save(w_path)
    jobs = [(cfg, str(w_path), b, str(out / f"beta_{b:g}")) for b in grid]
    workers = workers or cfg["sweep"]["workers"] or min(len(grid), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    write_metrics(rows, out / "sweep.csv")
    rho = float("nan")
    if len(grid) > 1:
        with warnings.catch_warnings():
            # a constant comm_rate column has no rank correlation; report NaN
            warnings.simplefilter("ignore")
            rho = float(spearmanr(grid, [m.comm_rate for m in rows]).statistic)
    res = SweepResult(rows, rho)
    (out / "sweep_summary.json").write_text(json.dumps(
        {"spearman_beta_comm": None if np.isnan(rho) else rho, "violations_nonincreasing_in_comm": res.monotone_violations()},
        indent=2, sort_keys=True) + "\n")
    return res


def _median_time(fn, iterations: int) -> float:
    fn()  # warm-up
    ts = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def bench_timing(cfg, w: ControllerWeights, iterations: int = 5) -> list[dict]:
    """Median wall times per exchange, plus ciphertext sizes.

    The actor needs five levels, so the depth-3 preset is timed on one
    ciphertext multiplication and on encryption only.
    """
    rng = np.random.default_rng(cfg["seed"])
    x = rng.uniform(-1, 1, w.n)
    acts = tuple(cfg["activations"])
    rows = []

    def add(op, backend, preset, secs, nbytes=""):
        rows.append({"op": op, "backend": backend, "preset": preset, "median_s": secs, "bytes": nbytes})

    add("actor_forward", "plain", "", _median_time(lambda: actor_forward(x, w, "plain", acts=acts), iterations * 20),
        8 * (w.n + w.m))
    add("actor_forward", "poly", "", _median_time(lambda: actor_forward(x, w, "poly", acts=acts), iterations * 20),
        8 * (w.n + w.m))
    for backend in ENCRYPTED:
        keys = he.keygen(he.get_preset(cfg["he_preset"]), cfg["seed"], backend)
        link = CloudLink(w, backend, keys, acts)
        add("exchange", backend, cfg["he_preset"], _median_time(lambda: link(x), iterations),
            link.up + link.down)
        ct = he.encrypt(x, keys)
        add("cloud_forward", backend, cfg["he_preset"],
            _median_time(lambda: cloud_actor(ct, w, keys, acts), iterations))
        add("serialize+deserialize", backend, cfg["he_preset"],
            _median_time(lambda: he.deserialize(he.serialize(ct), keys), iterations), he.byte_size(ct))
    keys = he.keygen(he.get_preset("paper-2024"), cfg["seed"], "rlwe")
    ct = he.encrypt(x, keys)
    add("encrypt", "rlwe", "paper-2024", _median_time(lambda: he.encrypt(x, keys), iterations),
        he.byte_size(ct))
    add("mul+relin+rescale", "rlwe", "paper-2024", _median_time(lambda: he.mul(ct, ct, keys), iterations))
    return rows


BENCH_FIELDS = ("op", "backend", "preset", "median_s", "bytes")


def write_bench(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        wr.writeheader()
        for r in rows:
            wr.writerow({**r, "median_s": f"{r['median_s']:.6g}"})


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _betas(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid beta list {text!r}") from None
    if not vals or any(v < 0 or not np.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError("betas must be finite and nonnegative")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="enchvac", description="Encrypted event-triggered HVAC control experiments.")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--backend", choices=BACKENDS, help="override the configured backend")
    common.add_argument("--beta", type=_betas, help="communication penalty, or a comma list for sweep")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("keygen", parents=[common], help="derive and check a key set")
    sub.add_parser("train-controller", parents=[common], help="train the GrHDP controller")
    sub.add_parser("train-trigger", parents=[common], help="train the event trigger for --beta")
    sim = sub.add_parser("simulate", parents=[common], help="run the closed loop")
    sim.add_argument("--days", type=float, help="override the evaluation length")
    sim.add_argument("--periodic", action="store_true", help="transmit every step")
    sw = sub.add_parser("sweep", parents=[common], help="beta sweep")
    sw.add_argument("--workers", type=int)
    b = sub.add_parser("bench", parents=[common], help="timing table")
    b.add_argument("--iterations", type=int, default=5)
    m = sub.add_parser("metrics", parents=[common], help="recompute metrics from a trajectory CSV")
    m.add_argument("trajectory")
    return p


def _versions() -> dict:
    return {"enchvac": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "jsonschema": metadata.version("jsonschema"),
            "platform": platform.platform()}


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_seeds(cfg: dict) -> dict:
    w = cfg["weather"]
    return {"run": cfg["seed"], "train_weather": w["train_seed"], "eval_weather": w["eval_seed"],
            "trigger": trigger_config(cfg, cfg["beta"]).seed, "he_keys": cfg["seed"]}


def write_manifest(out: Path, command: str, cfg: dict, argv, outputs, extra=None) -> Path:
    doc = {"command": command, "argv": list(argv), "config": cfg, "config_hash": config_hash(cfg),
           "seeds": run_seeds(cfg), "versions": _versions(),
           "outputs": {str(p.relative_to(out)): _sha(p) for p in outputs if p.is_file()}}
    if extra:
        doc.update(extra)
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _resolve(args) -> dict:
    cfg = load_config(args.config) if args.config else make_config()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg["seed"] = args.seed
    if args.backend is not None:
        cfg["backend"] = args.backend
        validate_config(cfg)
    if args.beta is not None and args.command != "sweep":
        if len(args.beta) != 1:
            raise ConfigError("--beta takes one value outside sweep")
        cfg["beta"] = args.beta[0]
    if getattr(args, "periodic", False):
        cfg["trigger"] = "periodic"
    return cfg


def _run(args, argv) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    extra = {}
    cmd = args.command
    if cmd == "keygen":
        t0 = time.perf_counter()
        keys = make_keys(cfg, cfg["backend"] if cfg["backend"] in ENCRYPTED else "rlwe")
        eps = keys.backend.measure_epsilon(keys, trials=10)
        extra["keys"] = {"preset": cfg["he_preset"], "backend": keys.backend.__class__.__name__,
                         "key_id": keys.key_id, "seed": keys.seed, "depth": keys.depth,
                         "keygen_s": time.perf_counter() - t0, "roundtrip_error": float(eps)}
        print(json.dumps(extra["keys"], indent=2))
    elif cmd == "train-controller":
        w, rows = fit_controller(cfg)
        w.save(out / "controller.bin")
        write_log(rows, out / "controller_log.csv")
        outputs += [out / "controller.bin", out / "controller_log.csv"]
        print(f"trained {len(rows)} epochs -> {out / 'controller.bin'}")
    elif cmd == "train-trigger":
        w = load_controller(cfg, out)
        tw, rows = fit_trigger(cfg, w, cfg["beta"])
        tw.save(out / trigger_name(cfg["beta"]))
        write_training_log(rows, out / f"trigger_log_beta{cfg['beta']:g}.csv")
        outputs += [out / trigger_name(cfg["beta"]), out / f"trigger_log_beta{cfg['beta']:g}.csv"]
        print(f"trained trigger for beta={cfg['beta']:g} -> {out / trigger_name(cfg['beta'])}")
    elif cmd == "simulate":
        w = load_controller(cfg, out)
        tw = None if cfg["trigger"] == "periodic" else load_trigger(cfg, cfg["beta"], out)
        traj, m = run_closed_loop(cfg, w, tw, days=args.days, episode_log=out / "episode.csv")
        traj.write_csv(out / "trajectory.csv")
        write_metrics([m], out / "metrics.csv")
        outputs += [out / "trajectory.csv", out / "metrics.csv", out / "episode.csv"]
        print(json.dumps(m.row(), indent=2))
    elif cmd == "sweep":
        w = load_controller(cfg, out)
        grid = args.beta if args.beta is not None else cfg["sweep"]["betas"]
        res = sweep_beta(cfg, grid, w, out, workers=args.workers)
        outputs += [out / "sweep.csv", out / "sweep_summary.json"]
        extra["spearman_beta_comm"] = None if np.isnan(res.spearman) else res.spearman
        extra["trigger_seeds"] = {f"{b:g}": trigger_config(cfg, b).seed for b in grid}
        print(f"{len(res.rows)} points, Spearman(beta, comm_rate) = {res.spearman:.3f}")
    elif cmd == "bench":
        w = load_controller(cfg, out)
        rows = bench_timing(cfg, w, args.iterations)
        write_bench(rows, out / "bench.csv")
        outputs.append(out / "bench.csv")
        for r in rows:
            print(f"{r['op']:>22} {r['backend']:>9} {r['preset']:>10} {r['median_s']:.4g} s {r['bytes']}")
    elif cmd == "metrics":
        try:
            traj = Trajectory.read_csv(args.trajectory)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{args.trajectory}: not a trajectory CSV ({exc})") from None
        m = metrics_of(traj, cfg, cfg["beta"])
        write_metrics([m], out / "metrics.csv")
        outputs.append(out / "metrics.csv")
        print(json.dumps(m.row(), indent=2))
    write_manifest(out, cmd, cfg, argv, outputs, extra)
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _run(args, argv)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"enchvac: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"enchvac: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
