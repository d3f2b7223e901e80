"""Goal-representation HDP controller: one actor and two critics.

Critic 1 learns the internal reinforcement signal G, critic 2 the value W
and the actor minimises 1/2 W^2 through the frozen critic 2.  Every network
has two affine layers:

    actor:   u = u_max * sig(A2 tanh(A1 x + a1) + a2)
    critic:  S = C2 sig(C1 [x, u / u_max] + c1) + c2

States are deviation coordinates supplied by the plant wrapper.  Controls
enter the critics divided by u_max so every critic input is O(1).

Three evaluation modes share the same weights:

* ``plain``      exact tanh / sigmoid
* ``poly``       the degree-5 polynomial activations, in the clear
* ``encrypted``  the same polynomials evaluated under HE by the cloud

In ``poly`` and ``encrypted`` mode the actor's output sigmoid runs on the
client after decryption, followed by a clamp to [0, u_max].
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
from scipy.special import expit

from . import he
from .enc_nn import DimensionMismatch, concat_cts, enc_two_layer_forward, get_activation

log = logging.getLogger(__name__)

MODES = ("plain", "poly", "encrypted")
DEFAULT_ACTS = ("tanh", "sigmoid", "sigmoid")  # actor hidden, critic hidden, actor output
_MAGIC = b"GRW2"


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, log_rows=None):
        super().__init__(msg)
        self.log_rows = log_rows or []


def _is_pd(M) -> bool:
    M = np.asarray(M, dtype=float)
    return (M.ndim == 2 and M.shape[0] == M.shape[1] and np.allclose(M, M.T)
            and bool(np.all(np.linalg.eigvalsh(M) > 0)))


# ---------------------------------------------------------------------------
# weights and config
# ---------------------------------------------------------------------------

_MATS = ("a1", "a2", "c1g", "c2g", "c1w", "c2w")
_BIASES = ("ba1", "ba2", "bc1g", "bc2g", "bc1w", "bc2w")


@dataclass
class ControllerWeights:
    a1: np.ndarray   # d x n
    a2: np.ndarray   # m x d
    c1g: np.ndarray  # d x (n+m)
    c2g: np.ndarray  # 1 x d
    c1w: np.ndarray  # d x (n+m)
    c2w: np.ndarray  # 1 x d
    u_max: np.ndarray
    ba1: np.ndarray | None = None
    ba2: np.ndarray | None = None
    bc1g: np.ndarray | None = None
    bc2g: np.ndarray | None = None
    bc1w: np.ndarray | None = None
    bc2w: np.ndarray | None = None

    PARAMS = _MATS + _BIASES

    def __post_init__(self):
        for k in _MATS:
            setattr(self, k, np.array(getattr(self, k), dtype=float, ndmin=2))
        for k, mat in zip(_BIASES, _MATS):
            b = getattr(self, k)
            rows = getattr(self, mat).shape[0]
            setattr(self, k, np.zeros(rows) if b is None else np.array(b, dtype=float).ravel())
        self.u_max = np.atleast_1d(np.asarray(self.u_max, dtype=float)).copy()
        d, n = self.a1.shape
        m = self.a2.shape[0]
        shapes = {"a2": (m, d), "c1g": (d, n + m), "c2g": (1, d), "c1w": (d, n + m), "c2w": (1, d),
                  "ba1": (d,), "ba2": (m,), "bc1g": (d,), "bc2g": (1,), "bc1w": (d,), "bc2w": (1,)}
        for k, shp in shapes.items():
            if getattr(self, k).shape != shp:
                raise DimensionMismatch(f"{k} has shape {getattr(self, k).shape}, expected {shp}")
        if self.u_max.shape != (m,):
            raise DimensionMismatch(f"u_max must have {m} entries")
        if not np.all(self.u_max > 0):
            raise ValueError("u_max must be positive")
        if not all(np.all(np.isfinite(getattr(self, k))) for k in self.PARAMS):
            raise ValueError("weights must be finite")

    @property
    def n(self) -> int:
        return self.a1.shape[1]

    @property
    def m(self) -> int:
        return self.a2.shape[0]

    @property
    def hidden(self) -> int:
        return self.a1.shape[0]

    @classmethod
    def init(cls, n: int, m: int, hidden: int, u_max, rng) -> "ControllerWeights":
        """Matrices uniform in +-1/sqrt(fan_in), biases zero."""
        def U(rows, cols):
            b = 1.0 / np.sqrt(cols)
            return rng.uniform(-b, b, size=(rows, cols))

        return cls(U(hidden, n), U(m, hidden), U(hidden, n + m), U(1, hidden),
                   U(hidden, n + m), U(1, hidden), np.broadcast_to(u_max, (m,)))

    def copy(self) -> "ControllerWeights":
        return ControllerWeights(**{k: getattr(self, k).copy() for k in self.PARAMS + ("u_max",)})

    def critic(self, which: str):
        """(C1, c1, C2, c2) of critic 'G' or 'W'."""
        if which not in ("G", "W"):
            raise ValueError(f"critic must be 'G' or 'W', not {which!r}")
        s = which.lower()
        return (getattr(self, "c1" + s), getattr(self, "bc1" + s),
                getattr(self, "c2" + s), getattr(self, "bc2" + s))

    def allclose(self, other: "ControllerWeights", atol=0.0) -> bool:
        return all(np.allclose(getattr(self, k), getattr(other, k), rtol=0, atol=atol)
                   for k in self.PARAMS + ("u_max",))

    def save(self, path) -> None:
        """Header (magic, n, m, d) then every array as little-endian f8."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<III", self.n, self.m, self.hidden))
            for k in self.PARAMS + ("u_max",):
                fh.write(np.ascontiguousarray(getattr(self, k), dtype="<f8").tobytes())

    @staticmethod
    def _layout(n, m, d):
        return [(d, n), (m, d), (d, n + m), (1, d), (d, n + m), (1, d),
                (d,), (m,), (d,), (1,), (d,), (1,), (m,)]

    @classmethod
    def load(cls, path) -> "ControllerWeights":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 16 or blob[:4] != _MAGIC:
            raise ValueError(f"{path}: not a controller checkpoint")
        n, m, d = struct.unpack("<III", blob[4:16])
        shapes = cls._layout(n, m, d)
        if len(blob) != 16 + 8 * sum(int(np.prod(s)) for s in shapes):
            raise ValueError(f"{path}: checkpoint size does not match header ({n}, {m}, {d})")
        flat = np.frombuffer(blob, dtype="<f8", offset=16)
        parts, i = [], 0
        for shp in shapes:
            sz = int(np.prod(shp))
            parts.append(flat[i:i + sz].reshape(shp).copy())
            i += sz
        return cls(**dict(zip(cls.PARAMS + ("u_max",), parts)))


@dataclass
class GrhdpConfig:
    D: np.ndarray
    M: np.ndarray
    alpha: float = 0.8
    gamma: float = 0.5
    lr_actor: float = 0.01
    lr_critic: float = 0.1
    epochs: int = 200
    hidden: int = 16
    seed: int = 0
    episodes: int = 4           # fresh rollouts per epoch
    episode_len: int = 96
    critic_iters: int = 100     # gradient steps per stage and epoch
    actor_iters: int = 20
    warmup: int = 0             # epochs that train the critics only
    explore: float = 0.1        # Gaussian noise std as a fraction of u_max
    epsilon: float = 0.1        # probability of a uniformly random control
    actor_mode: str = "poly"    # activations of the actor during training
    critic_mode: str = "plain"  # critics are training-only, exact by default
    acts: tuple = DEFAULT_ACTS
    range_margin: float = 0.95  # pre-activations kept within margin * fit interval
    max_retries: int = 5
    patience: int = 10
    tol: float = 1e-4

    def __post_init__(self):
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.acts = tuple(self.acts)
        self.validate()

    def validate(self) -> None:
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.gamma <= 1.0):
            raise ValueError("alpha and gamma must lie in [0, 1]")
        if not (self.lr_actor >= 0 and self.lr_critic >= 0):
            raise ValueError("learning rates must be nonnegative")
        if not _is_pd(self.D) or not _is_pd(self.M):
            raise ValueError("D and M must be symmetric positive definite")
        if self.epochs < 0 or self.hidden < 1 or self.episodes < 1 or self.episode_len < 1:
            raise ValueError("epochs, hidden width, episodes and episode length must be positive")
        if not 0.0 <= self.epsilon <= 1.0 or self.explore < 0:
            raise ValueError("exploration settings out of range")
        if self.actor_mode not in ("plain", "poly") or self.critic_mode not in ("plain", "poly"):
            raise ValueError("training runs in 'plain' or 'poly' mode")
        for name in self.acts:
            get_activation(name)

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def m(self) -> int:
        return self.M.shape[0]


# ---------------------------------------------------------------------------
# activations and batched forward passes
# ---------------------------------------------------------------------------

class _Act:
    """Value / derivative pair for one activation in one mode."""

    def __init__(self, name: str, mode: str):
        self.poly = get_activation(name)
        self.exact = mode == "plain"

    def __call__(self, y):
        return self.poly.reference(y) if self.exact else self.poly(y)

    def grad(self, y):
        if not self.exact:
            return self.poly.derivative(y)
        if self.poly.func == "tanh":
            return 1.0 - np.tanh(y) ** 2
        s = expit(y)
        return s * (1.0 - s)


def _acts(names, mode):
    if isinstance(names, GrhdpConfig):
        cfg = names
        return (_Act(cfg.acts[0], cfg.actor_mode), _Act(cfg.acts[1], cfg.critic_mode),
                _Act(cfg.acts[2], cfg.actor_mode))
    return tuple(_Act(n, mode) for n in names)


def _actor_batch(X, w: ControllerWeights, acts, mode, clamp=True):
    """Returns (U, cache) for a batch of states (B x n).

    Training losses use ``clamp=False``: the polynomial output sigmoid then
    stays differentiable everywhere and the clamp acts only on actuation.
    """
    P1 = X @ w.a1.T + w.ba1
    R = acts[0](P1)
    P2 = R @ w.a2.T + w.ba2
    U = w.u_max * acts[2](P2)
    if clamp and mode != "plain":
        U = np.clip(U, 0.0, w.u_max)
    return U, (P1, R, P2)


def _critic_batch(X, U, which, w: ControllerWeights, acts):
    C1, c1, C2, c2 = w.critic(which)
    Z = np.concatenate([X, U / w.u_max], axis=1)
    H1 = Z @ C1.T + c1
    H = acts[1](H1)
    return (H @ C2.T)[:, 0] + c2[0], (Z, H1, H)


def external_reward(x, u, cfg: GrhdpConfig) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (cfg.n,) or u.shape != (cfg.m,):
        raise DimensionMismatch(f"reward expects x of size {cfg.n} and u of size {cfg.m}")
    return float(x @ cfg.D @ x + u @ cfg.M @ u)


def batch_reward(X, U, cfg: GrhdpConfig) -> np.ndarray:
    return np.einsum("bi,ij,bj->b", X, cfg.D, X) + np.einsum("bi,ij,bj->b", U, cfg.M, U)


def _check_x(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise DimensionMismatch(f"state must have {n} entries, got shape {x.shape}")
    return x


def _check_mode(mode, keys):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "encrypted" and keys is None:
        raise ValueError("encrypted mode needs a key set")


def actor_forward(x, w: ControllerWeights, mode: str = "plain", keys=None,
                  acts=DEFAULT_ACTS) -> np.ndarray:
    x = _check_x(x, w.n)
    _check_mode(mode, keys)
    if isinstance(acts, GrhdpConfig):
        acts = acts.acts
    if mode != "encrypted":
        return _actor_batch(x[None, :], w, _acts(acts, mode), mode)[0][0]
    logits = he.decrypt(cloud_actor(he.encrypt(x, keys), w, keys, acts), keys)
    return client_actuation(logits, w, acts)


def cloud_actor(ct, w: ControllerWeights, keys, acts=DEFAULT_ACTS):
    """Server side of the actor: encrypted logits A2 tanh(A1 x + a1) + a2."""
    return enc_two_layer_forward(w.a1, w.a2, get_activation(acts[0]), ct, None, keys,
                                 b1=w.ba1, b2=w.ba2)


def client_actuation(logits, w: ControllerWeights, acts=DEFAULT_ACTS) -> np.ndarray:
    """Client side of the actor: polynomial sigmoid, scale and clamp."""
    out = get_activation(acts[2])
    return np.clip(w.u_max * out(np.asarray(logits, dtype=float)), 0.0, w.u_max)


def critic_forward(x, u, which: str, w: ControllerWeights, mode: str = "plain", keys=None,
                   acts=DEFAULT_ACTS) -> float:
    x = _check_x(x, w.n)
    u = np.asarray(u, dtype=float)
    if u.shape != (w.m,):
        raise DimensionMismatch(f"control must have {w.m} entries, got shape {u.shape}")
    _check_mode(mode, keys)
    if isinstance(acts, GrhdpConfig):
        acts = acts.acts
    if mode != "encrypted":
        return float(_critic_batch(x[None, :], u[None, :], which, w, _acts(acts, mode))[0][0])
    C1, c1, C2, c2 = w.critic(which)
    z = concat_cts(he.encrypt(x, keys), he.encrypt(u / w.u_max, keys), keys)
    s = enc_two_layer_forward(C1, C2, get_activation(acts[1]), z, None, keys, b1=c1, b2=c2)
    return float(he.decrypt(s, keys)[0])


def critic1_target(x, u, x_next, u_next, w: ControllerWeights, cfg: GrhdpConfig,
                   mode: str = "plain") -> float:
    t = external_reward(x, u, cfg)
    if cfg.alpha:
        t += cfg.alpha * critic_forward(x_next, u_next, "G", w, mode, acts=cfg)
    return t


def critic2_target(x, u, x_next, u_next, w: ControllerWeights, cfg: GrhdpConfig,
                   mode: str = "plain") -> float:
    t = critic1_target(x, u, x_next, u_next, w, cfg, mode)
    if cfg.gamma:
        t += cfg.gamma * critic_forward(x_next, u_next, "W", w, mode, acts=cfg)
    return t


# ---------------------------------------------------------------------------
# batched targets, losses and gradients
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    x: np.ndarray       # B x n
    u: np.ndarray       # B x m (applied, including exploration)
    x_next: np.ndarray  # B x n

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.x_next = np.atleast_2d(np.asarray(self.x_next, dtype=float))
        if not (len(self.x) == len(self.u) == len(self.x_next)) or len(self.x) == 0:
            raise ValueError("batch must be nonempty with matching rows")

    def __len__(self):
        return len(self.x)


def batch_targets(which: str, batch: Batch, w: ControllerWeights, cfg: GrhdpConfig) -> np.ndarray:
    """Frozen TD targets for critic ``which``; u_next is the greedy actor output."""
    if which not in ("G", "W"):
        raise ValueError(f"critic must be 'G' or 'W', not {which!r}")
    acts = _acts(cfg, None)
    u_next = _actor_batch(batch.x_next, w, acts, cfg.actor_mode)[0]
    t = batch_reward(batch.x, batch.u, cfg)
    if cfg.alpha:
        t = t + cfg.alpha * _critic_batch(batch.x_next, u_next, "G", w, acts)[0]
    if which == "W" and cfg.gamma:
        t = t + cfg.gamma * _critic_batch(batch.x_next, u_next, "W", w, acts)[0]
    return t


def critic_loss_grad(which: str, batch: Batch, targets, w: ControllerWeights, cfg: GrhdpConfig):
    """Mean 1/2 (target - S)^2 and its gradient as a dict keyed by parameter name."""
    acts = _acts(cfg, None)
    C1, c1, C2, c2 = w.critic(which)
    s, (Z, H1, H) = _critic_batch(batch.x, batch.u, which, w, acts)
    e = s - targets
    B = len(e)
    loss = 0.5 * float(e @ e) / B
    dH1 = (e[:, None] * C2) * acts[1].grad(H1) / B
    k = which.lower()
    return loss, {"c1" + k: dH1.T @ Z, "bc1" + k: dH1.sum(axis=0),
                  "c2" + k: (e @ H)[None, :] / B, "bc2" + k: np.array([e.sum() / B])}


def actor_loss_grad(X, w: ControllerWeights, cfg: GrhdpConfig):
    """Mean 1/2 W(x, actor(x))^2 and its gradient w.r.t. the actor, critic 2 frozen."""
    acts = _acts(cfg, None)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U, (P1, R, P2) = _actor_batch(X, w, acts, cfg.actor_mode, clamp=False)
    W, (Z, H1, H) = _critic_batch(X, U, "W", w, acts)
    B = len(W)
    loss = 0.5 * float(W @ W) / B
    dZ = (w.c2w * acts[1].grad(H1)) @ w.c1w  # dW/dZ, B x (n+m)
    dP2 = (W[:, None] * dZ[:, w.n:]) / B * acts[2].grad(P2)
    dP1 = (dP2 @ w.a2) * acts[0].grad(P1)
    return loss, {"a1": dP1.T @ X, "ba1": dP1.sum(axis=0), "a2": dP2.T @ R, "ba2": dP2.sum(axis=0)}


def _apply(w: ControllerWeights, grads: dict, lr: float) -> ControllerWeights:
    out = w.copy()
    for k, g in grads.items():
        setattr(out, k, getattr(w, k) - lr * g)
    return out


def _shrink(Wm, b, pre, limit):
    """Scale rows whose largest observed pre-activation exceeds ``limit``."""
    peak = np.abs(pre).max(axis=0)
    f = np.where(peak > limit, limit / np.maximum(peak, 1e-300), 1.0)
    return Wm * f[:, None], b * f


def keep_in_range(w: ControllerWeights, X, U, cfg: GrhdpConfig) -> ControllerWeights:
    """Keep every polynomial input inside its fit interval on the batch.

    The polynomial activations are only faithful on their fit interval, so
    after each step any row that drives the batch outside ``range_margin``
    of the interval is scaled down together with its bias.
    """
    acts = _acts(cfg, None)
    lim = [cfg.range_margin * min(-a.poly.interval[0], a.poly.interval[1]) for a in acts]
    out = w.copy()
    out.a1, out.ba1 = _shrink(out.a1, out.ba1, X @ out.a1.T + out.ba1, lim[0])
    P2 = acts[0](X @ out.a1.T + out.ba1) @ out.a2.T + out.ba2
    out.a2, out.ba2 = _shrink(out.a2, out.ba2, P2, lim[2])
    if cfg.critic_mode == "plain":
        return out
    Z = np.concatenate([X, U / w.u_max], axis=1)
    for k in ("g", "w"):
        C1, c1 = getattr(out, "c1" + k), getattr(out, "bc1" + k)
        C1, c1 = _shrink(C1, c1, Z @ C1.T + c1, lim[1])
        setattr(out, "c1" + k, C1)
        setattr(out, "bc1" + k, c1)
    return out


def update_critic(which: str, batch: Batch, w: ControllerWeights, cfg: GrhdpConfig, targets=None):
    """One gradient step on critic ``which``; returns (new weights, loss before the step)."""
    if targets is None:
        targets = batch_targets(which, batch, w, cfg)
    loss, grads = critic_loss_grad(which, batch, targets, w, cfg)
    if not np.isfinite(loss):
        raise FloatingPointError(f"critic {which} loss is not finite")
    return _apply(w, grads, cfg.lr_critic), loss


def update_actor(X, w: ControllerWeights, cfg: GrhdpConfig):
    """One gradient step on 1/2 W^2 through the frozen critic 2."""
    loss, grads = actor_loss_grad(X, w, cfg)
    if not np.isfinite(loss):
        raise FloatingPointError("actor loss is not finite")
    return _apply(w, grads, cfg.lr_actor), loss


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class Plant(Protocol):
    """Step-only plant interface in deviation coordinates."""

    n: int
    m: int
    u_max: np.ndarray

    def reset(self, rng) -> np.ndarray: ...

    def step(self, u) -> np.ndarray: ...


@dataclass
class ToyPlant:
    """x+ = a x + b u with scalar state and control."""

    a: float = 0.9
    b: float = 1.0
    u_max: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    x0_range: tuple[float, float] = (-2.0, 2.0)
    n: int = 1
    m: int = 1

    def reset(self, rng) -> np.ndarray:
        self.x = np.array([rng.uniform(*self.x0_range)])
        return self.x.copy()

    def step(self, u) -> np.ndarray:
        self.x = self.a * self.x + self.b * np.asarray(u, dtype=float)
        return self.x.copy()


def collect(plant: Plant, w: ControllerWeights, cfg: GrhdpConfig, rng) -> Batch:
    """Fresh on-policy rollouts with Gaussian and epsilon-uniform exploration."""
    acts = _acts(cfg, None)
    xs, us, xn = [], [], []
    for _ in range(cfg.episodes):
        x = plant.reset(rng)
        for _ in range(cfg.episode_len):
            if rng.random() < cfg.epsilon:
                u = rng.uniform(0.0, 1.0, size=w.m) * w.u_max
            else:
                u = _actor_batch(x[None, :], w, acts, cfg.actor_mode)[0][0]
                u = np.clip(u + rng.normal(0.0, cfg.explore, size=w.m) * w.u_max, 0.0, w.u_max)
            x_next = plant.step(u)
            xs.append(x)
            us.append(u)
            xn.append(x_next)
            x = x_next
    return Batch(np.array(xs), np.array(us), np.array(xn))


def rollout(plant: Plant, w: ControllerWeights | None, steps: int, rng, mode="plain",
            acts=DEFAULT_ACTS):
    """Closed-loop (or u=0 when ``w`` is None) trajectory of states."""
    x = plant.reset(rng)
    out = [x]
    for _ in range(steps):
        u = np.zeros(plant.m) if w is None else actor_forward(x, w, mode, acts=acts)
        x = plant.step(u)
        out.append(x)
    return np.array(out)


LOG_FIELDS = ("epoch", "L_c1", "L_c2", "L_o", "mean_reward")


def _epoch(plant, w, cfg, rng, train_actor):
    batch = collect(plant, w, cfg, rng)
    reward = float(batch_reward(batch.x, batch.u, cfg).mean())
    X_all = np.concatenate([batch.x, batch.x_next])
    U_all = np.concatenate([batch.u, _actor_batch(batch.x_next, w, _acts(cfg, None),
                                                  cfg.actor_mode)[0]])
    losses = {}
    for which, key in (("G", "L_c1"), ("W", "L_c2")):
        targets = batch_targets(which, batch, w, cfg)
        for _ in range(cfg.critic_iters):
            w, _ = update_critic(which, batch, w, cfg, targets)
            w = keep_in_range(w, X_all, U_all, cfg)
        losses[key] = critic_loss_grad(which, batch, targets, w, cfg)[0]
    if train_actor:
        for _ in range(cfg.actor_iters):
            w, _ = update_actor(batch.x, w, cfg)
            w = keep_in_range(w, X_all, U_all, cfg)
    losses["L_o"] = actor_loss_grad(batch.x, w, cfg)[0]
    vals = [losses["L_c1"], losses["L_c2"], losses["L_o"], reward]
    if not all(np.isfinite(vals)):
        raise FloatingPointError("non-finite epoch loss")
    return w, dict(zip(LOG_FIELDS[1:], vals))


def train_controller(plant: Plant, cfg: GrhdpConfig, init: ControllerWeights | None = None):
    """Staged training (critic 1, critic 2, actor) on fresh rollouts each epoch.

    Returns (weights, log) where log is a list of dicts with LOG_FIELDS.
    Stops early when the summed epoch loss changes by less than ``cfg.tol``
    (relative) for ``cfg.patience`` consecutive epochs.  A non-finite loss
    rolls the epoch back and halves both learning rates, at most
    ``cfg.max_retries`` times.
    """
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        init = ControllerWeights.init(plant.n, plant.m, cfg.hidden, plant.u_max, rng)
    w = init.copy()
    if (w.n, w.m) != (cfg.n, cfg.m) or (plant.n, plant.m) != (cfg.n, cfg.m):
        raise DimensionMismatch("plant, weights and reward matrices disagree on n, m")
    rows: list[dict] = []
    lr_c, lr_a = cfg.lr_critic, cfg.lr_actor
    retries, calm, prev = 0, 0, None
    for epoch in range(cfg.epochs):
        state = rng.bit_generator.state
        while True:
            run_cfg = replace(cfg, lr_critic=lr_c, lr_actor=lr_a)
            try:
                with np.errstate(over="raise", invalid="raise"):
                    w_new, row = _epoch(plant, w, run_cfg, rng, epoch >= cfg.warmup)
                break
            except FloatingPointError as exc:
                retries += 1
                if retries > cfg.max_retries:
                    raise TrainingDiverged(f"diverged at epoch {epoch}: {exc}", rows) from exc
                lr_c, lr_a = lr_c / 2, lr_a / 2
                log.warning("epoch %d diverged (%s); halving learning rates to %g / %g",
                            epoch, exc, lr_c, lr_a)
                rng.bit_generator.state = state
        w = w_new
        rows.append({"epoch": epoch, **row})
        total = row["L_c1"] + row["L_c2"] + row["L_o"]
        if prev is not None and abs(total - prev) <= cfg.tol * max(abs(prev), 1e-12):
            calm += 1
            if calm >= cfg.patience:
                break
        else:
            calm = 0
        prev = total
    return w, rows


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (r[k] if k == "epoch" else f"{r[k]:.10g}") for k in LOG_FIELDS})
