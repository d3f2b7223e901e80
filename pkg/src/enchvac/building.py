"""Four-room thermal / CO2 plant.

Rooms sit in a 2x2 layout (1-2 on top, 3-4 below) and exchange heat through
shared walls.  Each room has one supply-air mass flow u_i at fixed supply
temperature and CO2 concentration.  The update is an explicit first-order
RC step:

    T_i+ = T_i + dt/C_i [(T_amb - T_i)/R_i + sum_j (T_j - T_i)/R_ij + u_i c_p (T_sup - T_i)]
    c_i+ = c_i + dt/V_i [g occ_i - (u_i/rho) (c_i - c_sup)]
"""
from __future__ import annotations

import csv
import datetime as dt_
from dataclasses import dataclass, field

import numpy as np

N_ROOMS = 4
# shared walls of the 2x2 layout (0-based room indices)
ADJACENCY = ((0, 1), (0, 2), (1, 3), (2, 3))
DEFAULT_START = dt_.datetime(2016, 7, 4)  # a Monday


class PlantConfigError(ValueError):
    pass


def _vec(x, n=N_ROOMS):
    return np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()


@dataclass
class PlantConfig:
    capacitance: np.ndarray = field(default_factory=lambda: _vec(1.5e6))  # J/K
    r_env: np.ndarray = field(default_factory=lambda: _vec(1.0 / 80.0))  # K/W
    r_wall: float | dict = 1.0 / 40.0  # K/W, scalar or {(i, j): R}
    volume: np.ndarray = field(default_factory=lambda: _vec(240.0))  # m^3
    t_supply: float = 18.0
    co2_supply: float = 400.0
    co2_gen: float = 5.2  # ppm m^3/s per occupant
    u_max: np.ndarray = field(default_factory=lambda: _vec(0.3))  # kg/s
    dt: float = 900.0
    cp_air: float = 1005.0
    rho_air: float = 1.2
    comfort_check: tuple[float, float] = (38.0, 23.5)  # (peak ambient, max steady temp at u_max)

    def __post_init__(self):
        self.capacitance = _vec(self.capacitance)
        self.r_env = _vec(self.r_env)
        self.volume = _vec(self.volume)
        self.u_max = _vec(self.u_max)
        self.validate()

    @property
    def wall_conductance(self) -> np.ndarray:
        """Symmetric matrix of inter-room conductances (W/K)."""
        G = np.zeros((N_ROOMS, N_ROOMS))
        for i, j in ADJACENCY:
            if isinstance(self.r_wall, dict):
                r = self.r_wall.get((i, j), self.r_wall.get((j, i)))
                if r is None:
                    raise PlantConfigError(f"missing wall resistance for rooms {i + 1}-{j + 1}")
            else:
                r = self.r_wall
            if not r > 0:
                raise PlantConfigError("wall resistances must be positive")
            G[i, j] = G[j, i] = 1.0 / r
        return G

    def thermal_matrix(self, u) -> np.ndarray:
        """A with T+ = A T + (forcing terms) for a fixed flow u."""
        G = self.wall_conductance
        loss = 1.0 / self.r_env + G.sum(axis=1) + _vec(u) * self.cp_air
        return np.eye(N_ROOMS) + (self.dt / self.capacitance)[:, None] * (G - np.diag(loss))

    def validate(self) -> None:
        for name in ("capacitance", "r_env", "volume", "u_max"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise PlantConfigError(f"{name} must be positive and finite")
        if not self.dt > 0:
            raise PlantConfigError("dt must be positive")
        for u in (np.zeros(N_ROOMS), self.u_max):
            rho = max(abs(np.linalg.eigvals(self.thermal_matrix(u))))
            if rho >= 1.0:
                raise PlantConfigError(f"thermal update unstable (spectral radius {rho:.3f})")
        co2_factor = 1.0 - self.dt * self.u_max / (self.rho_air * self.volume)
        if np.any(np.abs(co2_factor) >= 1.0):
            raise PlantConfigError("CO2 update unstable at u_max; reduce dt or u_max")
        peak, limit = self.comfort_check
        t_ss = steady_state(self, self.u_max, peak, np.zeros(N_ROOMS)).temps
        if t_ss.max() > limit:
            raise PlantConfigError(
                f"u_max cannot hold {limit} C against {peak} C ambient (steady {t_ss.max():.2f} C)")

    def time_constants_h(self) -> np.ndarray:
        """Open-loop (u=0) thermal time constants in hours."""
        G = self.wall_conductance
        Acont = (G - np.diag(1.0 / self.r_env + G.sum(axis=1))) / self.capacitance[:, None]
        return -1.0 / np.real(np.linalg.eigvals(Acont)) / 3600.0


@dataclass
class PlantState:
    temps: np.ndarray
    co2: np.ndarray

    def __post_init__(self):
        self.temps = _vec(self.temps)
        self.co2 = _vec(self.co2)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.temps, self.co2])

    @classmethod
    def from_vector(cls, x) -> "PlantState":
        x = np.asarray(x, dtype=float)
        return cls(x[:N_ROOMS], x[N_ROOMS:])


def plant_step(s: PlantState, u, ambient: float, occupants, cfg: PlantConfig) -> PlantState:
    u = np.asarray(u, dtype=float)
    if u.shape != (N_ROOMS,):
        raise ValueError(f"control must have shape ({N_ROOMS},), got {u.shape}")
    if np.any(u < -1e-12) or np.any(u > cfg.u_max + 1e-12) or not np.all(np.isfinite(u)):
        raise ValueError(f"control {u} outside [0, u_max]")
    T, c = s.temps, s.co2
    occ = np.asarray(occupants, dtype=float)
    G = cfg.wall_conductance
    q = (ambient - T) / cfg.r_env + G @ T - G.sum(axis=1) * T + u * cfg.cp_air * (cfg.t_supply - T)
    T_next = T + cfg.dt / cfg.capacitance * q
    c_next = c + cfg.dt / cfg.volume * (cfg.co2_gen * occ - u / cfg.rho_air * (c - cfg.co2_supply))
    if not (np.all(np.isfinite(T_next)) and np.all(np.isfinite(c_next))):
        raise FloatingPointError("plant state became non-finite; check the configuration")
    return PlantState(T_next, c_next)


def steady_state(cfg: PlantConfig, u, ambient: float, occupants) -> PlantState:
    """Fixed point of plant_step for constant inputs (direct linear solve)."""
    u = _vec(u)
    G = cfg.wall_conductance
    M = np.diag(1.0 / cfg.r_env + G.sum(axis=1) + u * cfg.cp_air) - G
    rhs = ambient / cfg.r_env + u * cfg.cp_air * cfg.t_supply
    T = np.linalg.solve(M, rhs)
    flow = u / cfg.rho_air
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(flow > 0, cfg.co2_supply + cfg.co2_gen * _vec(occupants) / flow, np.nan)
    return PlantState(T, c)


# ---------------------------------------------------------------------------
# occupancy
# ---------------------------------------------------------------------------

_WEEKDAY_PROFILE = np.array(
    [0, 0, 0, 0, 0, 0, 0, 2, 3, 4, 4, 4, 6, 6, 8, 8, 8, 6, 4, 4, 2, 2, 0, 0], dtype=float)
_WEEKEND_PROFILE = np.array(
    [0] * 10 + [3] * 9 + [0] * 5, dtype=float)
ROOM_FACTORS = np.array([1.0, 0.75, 0.5, 1.0])


@dataclass
class OccupancySchedule:
    weekday: np.ndarray  # (24, 4)
    weekend: np.ndarray  # (24, 4)
    weekend_active: tuple[bool, ...] = (True, False, True, False, True)
    start: dt_.datetime = DEFAULT_START

    def __post_init__(self):
        self.weekday = np.asarray(self.weekday, dtype=float)
        self.weekend = np.asarray(self.weekend, dtype=float)
        for name in ("weekday", "weekend"):
            tab = getattr(self, name)
            if tab.shape != (24, N_ROOMS):
                raise ValueError(f"{name} table must be 24x{N_ROOMS}, got {tab.shape}")
            if np.any(tab < 0) or np.any(tab > 8):
                raise ValueError(f"{name} counts must lie in [0, 8]")
        self.weekend_active = tuple(bool(v) for v in self.weekend_active)
        if not self.weekend_active:
            raise ValueError("need at least one calendar week")

    @property
    def end(self) -> dt_.datetime:
        week0 = self.start - dt_.timedelta(days=self.start.weekday())
        return week0 + dt_.timedelta(weeks=len(self.weekend_active))


def default_schedule(weekend_active=(True, False, True, False, True),
                     start: dt_.datetime = DEFAULT_START) -> OccupancySchedule:
    weekday = np.rint(_WEEKDAY_PROFILE[:, None] * ROOM_FACTORS[None, :])
    weekend = np.rint(_WEEKEND_PROFILE[:, None] * ROOM_FACTORS[None, :])
    return OccupancySchedule(weekday, weekend, tuple(weekend_active), start)


def occupancy_at(t: dt_.datetime, sched: OccupancySchedule) -> np.ndarray:
    if t < sched.start or t >= sched.end:
        raise ValueError(f"{t.isoformat()} outside the schedule horizon "
                         f"[{sched.start.isoformat()}, {sched.end.isoformat()})")
    if t.weekday() < 5:
        return sched.weekday[t.hour].copy()
    week0 = sched.start - dt_.timedelta(days=sched.start.weekday())
    week = (t - week0).days // 7
    if not sched.weekend_active[week]:
        return np.zeros(N_ROOMS)
    return sched.weekend[t.hour].copy()


def load_occupancy(path, weekend_active=(True, False, True, False, True),
                   start: dt_.datetime = DEFAULT_START) -> OccupancySchedule:
    """Read ``daytype,hour,room1..room4`` rows (daytype: weekday | weekend)."""
    tables = {"weekday": np.full((24, N_ROOMS), np.nan), "weekend": np.full((24, N_ROOMS), np.nan)}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().lower() == "daytype":
                continue
            try:
                kind = row[0].strip().lower()
                hour = int(row[1])
                counts = [float(v) for v in row[2:2 + N_ROOMS]]
                if kind not in tables or not 0 <= hour < 24 or len(counts) != N_ROOMS:
                    raise ValueError
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed occupancy row {row!r}") from None
            tables[kind][hour] = counts
    for kind, tab in tables.items():
        if np.isnan(tab).any():
            missing = sorted(set(np.where(np.isnan(tab))[0]))
            raise ValueError(f"{path}: {kind} table missing hours {missing}")
    return OccupancySchedule(tables["weekday"], tables["weekend"], tuple(weekend_active), start)


# ---------------------------------------------------------------------------
# weather
# ---------------------------------------------------------------------------

@dataclass
class WeatherTrace:
    start: dt_.datetime
    dt: float
    ambient: np.ndarray

    def __post_init__(self):
        self.ambient = np.asarray(self.ambient, dtype=float)
        if not self.dt > 0:
            raise ValueError("sampling interval must be positive")
        if not np.all(np.isfinite(self.ambient)):
            raise ValueError("weather trace contains non-finite values")

    def __len__(self):
        return self.ambient.size

    def time(self, k: int) -> dt_.datetime:
        return self.start + dt_.timedelta(seconds=k * self.dt)

    def at(self, k: int) -> float:
        if not 0 <= k < self.ambient.size:
            raise IndexError(f"step {k} outside the weather trace ({self.ambient.size} samples)")
        return float(self.ambient[k])

    def covers(self, steps: int) -> bool:
        return self.ambient.size >= steps


def synth_weather(days: float, seed: int, dt: float = 900.0, mean: float = 30.0, amplitude: float = 8.0,
                  noise: float = 0.5, peak_hour: float = 16.5,
                  start: dt_.datetime = DEFAULT_START) -> WeatherTrace:
    """Daily sinusoid peaking at ``peak_hour`` plus seeded Gaussian noise."""
    n = int(round(days * 86400 / dt))
    hours = (np.arange(n) * dt / 3600.0 + start.hour + start.minute / 60.0) % 24.0
    base = mean + amplitude * np.sin(2 * np.pi * (hours - peak_hour + 6.0) / 24.0)
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise, n) if noise > 0 else np.zeros(n)
    return WeatherTrace(start, dt, base + eps)


def load_weather(path) -> WeatherTrace:
    """Read ``timestamp_iso8601,ambient_c`` rows; sampling must be uniform."""
    times, vals = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0].strip().lower().startswith("timestamp")):
                continue
            try:
                t = dt_.datetime.fromisoformat(row[0].strip())
                v = float(row[1])
                if len(row) != 2 or not np.isfinite(v):
                    raise ValueError
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed weather row {row!r}") from None
            if times and t <= times[-1]:
                raise ValueError(f"{path}:{lineno}: timestamp {t.isoformat()} is not increasing")
            times.append(t)
            vals.append(v)
    if len(times) < 2:
        raise ValueError(f"{path}: need at least two samples")
    step = times[1] - times[0]
    for a, b in zip(times, times[1:]):
        if b - a != step:
            raise ValueError(f"{path}: sampling gap at {b.isoformat()} "
                             f"(previous sample {a.isoformat()}, expected step {step})")
    return WeatherTrace(times[0], step.total_seconds(), np.array(vals))


def save_weather(trace: WeatherTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_iso8601", "ambient_c"])
        for k, v in enumerate(trace.ambient):
            w.writerow([trace.time(k).isoformat(), f"{v:.6f}"])


# ---------------------------------------------------------------------------
# step-only environment in normalised deviation coordinates
# ---------------------------------------------------------------------------

X_REF = np.array([23.5] * N_ROOMS + [800.0] * N_ROOMS)
X_SCALE = np.array([1.5] * N_ROOMS + [400.0] * N_ROOMS)


class BuildingEnv:
    """Plant + weather + occupancy behind a reset/step interface.

    Observations are x_hat = clip((x - x_ref) / scale, -clip, clip).  The
    controller never sees the plant coefficients.
    """

    n = 2 * N_ROOMS
    m = N_ROOMS

    def __init__(self, cfg: PlantConfig, weather: WeatherTrace, schedule: OccupancySchedule,
                 x_ref=X_REF, scale=X_SCALE, clip: float = 2.0, episode_len: int = 96,
                 init_temps=(22.0, 27.0), init_co2=(400.0, 900.0)):
        if weather.dt != cfg.dt:
            raise ValueError(f"weather sampling {weather.dt}s differs from plant dt {cfg.dt}s")
        self.cfg = cfg
        self.weather = weather
        self.schedule = schedule
        self.x_ref = np.asarray(x_ref, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.clip = clip
        self.episode_len = episode_len
        self.init_temps = init_temps
        self.init_co2 = init_co2
        self.u_max = cfg.u_max.copy()
        self.k = 0
        self.state = PlantState(self.x_ref[:N_ROOMS], self.x_ref[N_ROOMS:])

    def normalize(self, x) -> np.ndarray:
        return np.clip((np.asarray(x, dtype=float) - self.x_ref) / self.scale, -self.clip, self.clip)

    def observe(self) -> np.ndarray:
        return self.normalize(self.state.as_vector())

    def inputs(self, k: int):
        """(ambient, occupants) at step k."""
        return self.weather.at(k), occupancy_at(self.weather.time(k), self.schedule)

    def reset(self, rng=None, start: int | None = None, state: PlantState | None = None) -> np.ndarray:
        span = len(self.weather) - self.episode_len
        if span < 1:
            raise ValueError("weather trace shorter than one episode")
        if start is None:
            start = int(rng.integers(0, span))
        if state is None:
            state = PlantState(rng.uniform(*self.init_temps, N_ROOMS), rng.uniform(*self.init_co2, N_ROOMS))
        self.k = start
        self.state = state
        return self.observe()

    def step(self, u) -> np.ndarray:
        ambient, occ = self.inputs(self.k)
        try:
            self.state = plant_step(self.state, u, ambient, occ, self.cfg)
        except (ValueError, FloatingPointError) as exc:
            raise type(exc)(f"step {self.k}: {exc}") from exc
        self.k += 1
        return self.observe()
