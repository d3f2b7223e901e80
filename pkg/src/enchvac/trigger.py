"""Model-free event-triggering unit.

The trigger runs on the client, in the clear.  At every step it sees the
augmented information state (x, z, N): the current state, the last state
sent to the cloud and the number of steps since that transmission.  It
decides a in {0, 1}; on a=1 the cloud controller recomputes u from x, on
a=0 the actuator holds the last control u*.

A transmission is forced once N reaches T_s - 1, so consecutive
transmissions are never more than T_s steps apart and the communication
rate is at least 1/T_s.  Episodes start with N = T_s - 1, i.e. the first
step always transmits.
"""
from __future__ import annotations

import csv
import itertools
import struct
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.special import expit

from .enc_nn import DimensionMismatch

_MAGIC = b"TRG1"


def _is_pd(M) -> bool:
    M = np.asarray(M, dtype=float)
    return (M.ndim == 2 and M.shape[0] == M.shape[1] and np.allclose(M, M.T)
            and bool(np.all(np.linalg.eigvalsh(M) > 0)))


@dataclass
class AugmentedInfoState:
    x: np.ndarray
    z: np.ndarray
    N: int
    u_star: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        self.u_star = np.atleast_1d(np.asarray(self.u_star, dtype=float))
        if self.x.shape != self.z.shape:
            raise DimensionMismatch("x and z must have the same shape")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError("N must be a nonnegative integer")
        self.N = int(self.N)


def info_update(s: AugmentedInfoState, a: int, x_next, u=None) -> AugmentedInfoState:
    """z' = (1-a) z + a x,  N' = (1-a)(N+1),  x' = x_next.

    ``u`` is the control computed on a transmission; it becomes u*.
    """
    if a not in (0, 1):
        raise ValueError("a must be 0 or 1")
    z = s.x.copy() if a else s.z.copy()
    N = 0 if a else s.N + 1
    u_star = s.u_star.copy() if (not a or u is None) else np.atleast_1d(np.asarray(u, dtype=float))
    return AugmentedInfoState(np.asarray(x_next, dtype=float).copy(), z, N, u_star)


@dataclass
class TriggerConfig:
    Q: np.ndarray
    R: np.ndarray
    x_r: np.ndarray
    beta: float = 6.9
    T_s: int = 8
    H: int = 96
    hidden: int = 16
    lr: float = 0.01
    episodes: int = 600
    batch: int = 8              # episodes per policy update
    baseline_decay: float = 0.9
    seed: int = 0
    max_retries: int = 5
    init_logit: float = 3.0     # start near the periodic (always-send) policy
    discount: float = 1.0       # on the cost-to-go inside the gradient estimate only
    restarts: int = 1
    val_episodes: int = 16

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.x_r = np.atleast_1d(np.asarray(self.x_r, dtype=float))
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if self.T_s < 1 or self.H < 1:
            raise ValueError("T_s and H must be at least 1")
        if not _is_pd(self.Q) or not _is_pd(self.R):
            raise ValueError("Q and R must be symmetric positive definite")
        if self.x_r.shape != (self.Q.shape[0],):
            raise DimensionMismatch("x_r must match Q")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.restarts < 1 or self.val_episodes < 1:
            raise ValueError("restarts and val_episodes must be positive")
        if self.episodes < 0 or self.batch < 1 or self.hidden < 1:
            raise ValueError("episodes, batch and hidden width must be positive")

    @property
    def n(self) -> int:
        return self.Q.shape[0]


def forced(N: int, cfg: TriggerConfig) -> bool:
    return N >= cfg.T_s - 1


def stage_cost(s: AugmentedInfoState, a: int, u_candidate, cfg: TriggerConfig) -> float:
    """(x-x_r)'Q(x-x_r) + (1-a) u*'R u* + a u'R u + beta a."""
    e = s.x - cfg.x_r
    if e.shape != (cfg.n,):
        raise DimensionMismatch(f"state has {e.size} entries, Q is {cfg.n}x{cfg.n}")
    u = np.atleast_1d(np.asarray(u_candidate if a else s.u_star, dtype=float))
    if u.shape != (cfg.R.shape[0],):
        raise DimensionMismatch(f"control has {u.size} entries, R is {cfg.R.shape[0]}x{cfg.R.shape[0]}")
    return float(e @ cfg.Q @ e + u @ cfg.R @ u + cfg.beta * a)


def terminal_cost(x, cfg: TriggerConfig) -> float:
    e = np.atleast_1d(np.asarray(x, dtype=float)) - cfg.x_r
    if e.shape != (cfg.n,):
        raise DimensionMismatch(f"state has {e.size} entries, Q is {cfg.n}x{cfg.n}")
    return float(e @ cfg.Q @ e)


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------

@dataclass
class TriggerPolicyWeights:
    """p(a=1) = sig(w2 . tanh(W1 f + b1) + b2) on normalised features f."""

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    mean: np.ndarray       # feature normalisation (running statistics)
    var: np.ndarray
    count: float = 0.0

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        self.b1 = np.asarray(self.b1, dtype=float).ravel()
        self.w2 = np.asarray(self.w2, dtype=float).ravel()
        self.b2 = float(self.b2)
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.var = np.asarray(self.var, dtype=float).ravel()
        d, f = self.W1.shape
        if self.b1.shape != (d,) or self.w2.shape != (d,) or self.mean.shape != (f,) \
                or self.var.shape != (f,):
            raise DimensionMismatch("inconsistent trigger policy shapes")

    @classmethod
    def init(cls, n: int, hidden: int, rng, logit: float = 0.0) -> "TriggerPolicyWeights":
        f = 2 * n + 1
        b = 1.0 / np.sqrt(f)
        return cls(rng.uniform(-b, b, (hidden, f)), np.zeros(hidden),
                   rng.uniform(-1, 1, hidden) / np.sqrt(hidden), logit, np.zeros(f), np.ones(f))

    @classmethod
    def constant(cls, n: int, logit: float, hidden: int = 1) -> "TriggerPolicyWeights":
        """A state-independent policy (always / never trigger for large |logit|)."""
        f = 2 * n + 1
        return cls(np.zeros((hidden, f)), np.zeros(hidden), np.zeros(hidden), logit,
                   np.zeros(f), np.ones(f))

    def copy(self) -> "TriggerPolicyWeights":
        return TriggerPolicyWeights(self.W1.copy(), self.b1.copy(), self.w2.copy(), self.b2,
                                    self.mean.copy(), self.var.copy(), self.count)

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.w2, np.array([self.b2])]

    def set_params(self, ps) -> None:
        self.W1, self.b1, self.w2 = ps[0], ps[1], ps[2]
        self.b2 = float(ps[3][0])

    def observe(self, F) -> None:
        """Fold a batch of raw feature rows into the running mean / variance."""
        F = np.atleast_2d(F)
        n_b = F.shape[0]
        tot = self.count + n_b
        d = F.mean(axis=0) - self.mean
        m2 = self.var * self.count + F.var(axis=0) * n_b + d ** 2 * self.count * n_b / tot
        self.mean = self.mean + d * n_b / tot
        self.var = m2 / tot
        self.count = tot

    def normalise(self, F):
        return (F - self.mean) / np.sqrt(self.var + 1e-8)

    def logits(self, F):
        H = np.tanh(self.normalise(F) @ self.W1.T + self.b1)
        return H @ self.w2 + self.b2

    def prob(self, F):
        return expit(self.logits(F))

    def save(self, path) -> None:
        d, f = self.W1.shape
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<II", d, f))
            for arr in (self.W1, self.b1, self.w2, [self.b2], self.mean, self.var, [self.count]):
                fh.write(np.asarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TriggerPolicyWeights":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _MAGIC or len(blob) < 12:
            raise ValueError(f"{path}: not a trigger policy checkpoint")
        d, f = struct.unpack("<II", blob[4:12])
        sizes = [d * f, d, d, 1, f, f, 1]
        if len(blob) != 12 + 8 * sum(sizes):
            raise ValueError(f"{path}: checkpoint size does not match header")
        flat = np.frombuffer(blob, dtype="<f8", offset=12)
        out, i = [], 0
        for sz in sizes:
            out.append(flat[i:i + sz].copy())
            i += sz
        return cls(out[0].reshape(d, f), out[1], out[2], out[3][0], out[4], out[5], out[6][0])


def features(s: AugmentedInfoState, cfg: TriggerConfig) -> np.ndarray:
    return np.concatenate([s.x - cfg.x_r, s.z - cfg.x_r, [s.N / cfg.T_s]])


def policy_action(s: AugmentedInfoState, w: TriggerPolicyWeights, cfg: TriggerConfig, rng,
                  greedy: bool = False):
    """Sample a ~ Bernoulli(p(s)), or a = [p > 1/2] when greedy.

    Returns (a, log-prob, forced flag).  A forced transmission has log-prob 0
    and is excluded from the policy gradient.
    """
    if forced(s.N, cfg):
        return 1, 0.0, True
    p = float(w.prob(features(s, cfg)[None, :])[0])
    a = int(p > 0.5) if greedy else int(rng.random() < p)
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return a, float(np.log(p if a else 1.0 - p)), False


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

class TriggerPlant(Protocol):
    def reset(self, rng) -> np.ndarray: ...

    def step(self, u) -> np.ndarray: ...


@dataclass
class StepRecord:
    k: int
    a: int
    forced: bool
    cost: float
    x: np.ndarray
    z: np.ndarray
    N: int
    u: np.ndarray
    logp: float
    feat: np.ndarray


@dataclass
class Episode:
    steps: list[StepRecord]
    terminal: float
    x_final: np.ndarray

    @property
    def total_cost(self) -> float:
        return float(sum(r.cost for r in self.steps) + self.terminal)

    @property
    def actions(self) -> np.ndarray:
        return np.array([r.a for r in self.steps], dtype=int)

    @property
    def comm_rate(self) -> float:
        return float(self.actions.mean())

    def max_gap(self) -> int:
        idx = np.flatnonzero(self.actions)
        return int(np.diff(idx).max()) if idx.size > 1 else 0


def run_episode(policy, controller: Callable, plant: TriggerPlant, cfg: TriggerConfig, rng,
                x0=None, H: int | None = None, on_step=None, greedy: bool = False) -> Episode:
    """Simulate H steps with a frozen controller.

    ``policy`` is TriggerPolicyWeights or a callable (state, rng) -> a.
    ``controller`` maps a transmitted state to a control.  ``on_step`` is
    called as on_step(k, record) after every step.  ``greedy`` evaluates a
    learned policy deterministically.
    """
    H = cfg.H if H is None else H
    x = plant.reset(rng) if x0 is None else np.asarray(x0, dtype=float)
    s = AugmentedInfoState(x, np.zeros_like(x), cfg.T_s - 1, np.zeros(cfg.R.shape[0]))
    steps = []
    for k in range(H):
        if isinstance(policy, TriggerPolicyWeights):
            a, logp, was_forced = policy_action(s, policy, cfg, rng, greedy)
        else:
            was_forced = forced(s.N, cfg)
            a, logp = (1 if was_forced else int(policy(s, rng))), 0.0
        u = np.atleast_1d(np.asarray(controller(s.x), dtype=float)) if a else s.u_star
        c = stage_cost(s, a, u, cfg)
        rec = StepRecord(k, a, was_forced, c, s.x.copy(), s.z.copy(), s.N, u.copy(), logp,
                         features(s, cfg))
        steps.append(rec)
        try:
            x_next = plant.step(u)
        except (ValueError, FloatingPointError) as exc:
            raise type(exc)(f"plant fault at episode step {k}: {exc}") from exc
        s = info_update(s, a, x_next, u)
        if on_step is not None:
            on_step(k, rec)
    return Episode(steps, terminal_cost(s.x, cfg), s.x.copy())


def always(s, rng) -> int:
    return 1


def never(s, rng) -> int:
    return 0


# ---------------------------------------------------------------------------
# REINFORCE
# ---------------------------------------------------------------------------

def _logp_grads(w: TriggerPolicyWeights, F, A):
    """Gradient of sum_k coef_k log pi(a_k | f_k) pieces; returns per-row d logp / d logit."""
    Fn = w.normalise(F)
    Hh = np.tanh(Fn @ w.W1.T + w.b1)
    p = expit(Hh @ w.w2 + w.b2)
    return Fn, Hh, A - p  # d log pi / d logit


def policy_gradient(w: TriggerPolicyWeights, F, A, coef):
    """Gradient of mean_k coef_k log pi(a_k|f_k) w.r.t. (W1, b1, w2, b2)."""
    Fn, Hh, g = _logp_grads(w, F, A)
    g = g * coef
    dH = np.outer(g, w.w2) * (1.0 - Hh ** 2)
    B = max(len(g), 1)
    return [dH.T @ Fn / B, dH.sum(axis=0) / B, Hh.T @ g / B, np.array([g.sum() / B])]


@dataclass
class _Adam:
    lr: float
    b1: float = 0.9
    b2: float = 0.999
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mh = self.m[i] / (1 - self.b1 ** self.t)
            vh = self.v[i] / (1 - self.b2 ** self.t)
            out.append(p - self.lr * mh / (np.sqrt(vh) + 1e-8))
        return out


LOG_FIELDS = ("episode", "cost", "comm_rate")


def reinforce_train(controller: Callable, plant: TriggerPlant, cfg: TriggerConfig,
                    init: TriggerPolicyWeights | None = None):
    """REINFORCE with a per-step moving-average baseline on the cost-to-go.

    Returns (weights, log rows).  Each update averages ``cfg.batch``
    episodes; forced steps carry no gradient.  With ``cfg.restarts`` > 1,
    independent runs are scored by greedy cost on ``cfg.val_episodes``
    common validation episodes and the cheapest is kept.  Deterministic
    per seed.
    """
    rng = np.random.default_rng(cfg.seed)
    best = None
    for r in range(cfg.restarts):
        w0 = TriggerPolicyWeights.init(cfg.n, cfg.hidden, rng, cfg.init_logit) if init is None else init.copy()
        run_seed = rng.integers(2 ** 63)
        lr = cfg.lr
        for _ in range(cfg.max_retries + 1):
            try:
                w, rows = _reinforce(controller, plant, cfg, w0.copy(), lr, np.random.default_rng(run_seed))
                break
            except FloatingPointError:
                lr /= 2
        else:
            raise RuntimeError(f"trigger training diverged after {cfg.max_retries} learning-rate halvings")
        if cfg.restarts == 1:
            return w, rows
        score = validation_cost(w, controller, plant, cfg)
        for row in rows:
            row["restart"] = r
        if best is None or score < best[0]:
            best = (score, w, rows)
    return best[1], best[2]


def validation_cost(w, controller, plant, cfg: TriggerConfig) -> float:
    """Mean greedy episode cost over a fixed set of episodes (seeded by cfg.seed)."""
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    return float(np.mean([run_episode(w, controller, plant, cfg, rng, greedy=True).total_cost
                          for _ in range(cfg.val_episodes)]))


def _reinforce(controller, plant, cfg, w, lr, rng):
    opt = _Adam(lr)
    baseline = None
    rows = []
    done = 0
    while done < cfg.episodes:
        eps = []
        for _ in range(min(cfg.batch, cfg.episodes - done)):
            ep = run_episode(w, controller, plant, cfg, rng)
            eps.append(ep)
            rows.append({"episode": done, "cost": ep.total_cost, "comm_rate": ep.comm_rate})
            done += 1
        F = np.array([r.feat for ep in eps for r in ep.steps])
        w.observe(F)
        togo = []
        for ep in eps:
            c = np.array([r.cost for r in ep.steps])
            c[-1] += ep.terminal
            g = np.empty_like(c)
            acc = 0.0
            for k in range(len(c) - 1, -1, -1):
                acc = c[k] + cfg.discount * acc
                g[k] = acc
            togo.append(g)
        togo = np.array(togo)
        mean_togo = togo.mean(axis=0)
        baseline = mean_togo if baseline is None else (
            cfg.baseline_decay * baseline + (1 - cfg.baseline_decay) * mean_togo)
        adv = togo - baseline
        scale = adv.std() + 1e-8
        Fs, As, Cs = [], [], []
        for ep, ad in zip(eps, adv):
            for r, a_k in zip(ep.steps, ad):
                if not r.forced:
                    Fs.append(r.feat)
                    As.append(r.a)
                    Cs.append(a_k / scale)
        if Fs:
            # minimise cost: ascend on -advantage
            grads = policy_gradient(w, np.array(Fs), np.array(As, dtype=float), -np.array(Cs))
            grads = [-g for g in grads]
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise FloatingPointError("non-finite policy gradient")
            w.set_params(opt.step(w.params(), grads))
    return w, rows


def write_episode_log(ep: Episode, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        n = ep.steps[0].x.size if ep.steps else 0
        wr.writerow(["step", "a", "comm_rate_to_date", "stage_cost"]
                    + [f"x{i}" for i in range(n)] + [f"z{i}" for i in range(n)] + ["N"])
        sent = 0
        for r in ep.steps:
            sent += r.a
            wr.writerow([r.k, r.a, f"{sent / (r.k + 1):.6f}", f"{r.cost:.10g}"]
                        + [f"{v:.10g}" for v in r.x] + [f"{v:.10g}" for v in r.z] + [r.N])


def write_training_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        wr.writeheader()
        for r in rows:
            wr.writerow({"episode": r["episode"], "cost": f"{r['cost']:.10g}",
                         "comm_rate": f"{r['comm_rate']:.6f}"})


# ---------------------------------------------------------------------------
# exact finite-horizon oracle for tiny discrete instances
# ---------------------------------------------------------------------------

@dataclass
class DiscreteInstance:
    """Finite MDP for the oracle: states and controls are small integer sets.

    ``trans[x][u]`` is a probability vector over next states; ``controller``
    maps a state index to a control index; ``u_values`` gives the numeric
    control used in the R-term.
    """

    x_values: np.ndarray
    u_values: np.ndarray
    trans: np.ndarray                 # (|X|, |U|, |X|)
    controller: np.ndarray            # state index -> control index
    x0: int = 0

    def __post_init__(self):
        self.x_values = np.asarray(self.x_values, dtype=float).reshape(len(self.x_values), -1)
        self.u_values = np.asarray(self.u_values, dtype=float).reshape(len(self.u_values), -1)
        self.trans = np.asarray(self.trans, dtype=float)
        self.controller = np.asarray(self.controller, dtype=int)
        nx, nu = len(self.x_values), len(self.u_values)
        if self.trans.shape != (nx, nu, nx) or not np.allclose(self.trans.sum(axis=2), 1.0):
            raise ValueError("transition table must be (|X|, |U|, |X|) stochastic")


def _stage(inst, cfg, xi, zi, a):
    e = inst.x_values[xi] - cfg.x_r
    ui = inst.controller[xi] if a else inst.controller[zi]
    u = inst.u_values[ui]
    return float(e @ cfg.Q @ e + u @ cfg.R @ u + cfg.beta * a), ui


def _terminal(inst, cfg, xi):
    e = inst.x_values[xi] - cfg.x_r
    return float(e @ cfg.Q @ e)


def value_recursion_oracle(inst: DiscreteInstance, cfg: TriggerConfig, max_states: int = 10_000):
    """Exact V_k(x, z, N) by backward induction over the augmented state.

    Returns (V, policy) with V[k][x, z, N] for k = 0..H (V[H] terminal) and
    policy[k][x, z, N] in {0, 1}.  Ties go to a=0.
    """
    nx = len(inst.x_values)
    nN = cfg.T_s
    if nx * nx * nN > max_states:
        raise ValueError(f"instance too large: {nx * nx * nN} augmented states > {max_states}")
    H = cfg.H
    V = np.zeros((H + 1, nx, nx, nN))
    pol = np.zeros((H, nx, nx, nN), dtype=int)
    for xi in range(nx):
        V[H, xi] = _terminal(inst, cfg, xi)
    for k in range(H - 1, -1, -1):
        for xi, zi, N in itertools.product(range(nx), range(nx), range(nN)):
            best, arg = np.inf, 0
            for a in ((1,) if forced(N, cfg) else (0, 1)):
                c, ui = _stage(inst, cfg, xi, zi, a)
                z2 = xi if a else zi
                N2 = 0 if a else N + 1
                c += inst.trans[xi, ui] @ V[k + 1, :, z2, N2]
                if c < best - 1e-12:
                    best, arg = c, a
            V[k, xi, zi, N] = best
            pol[k, xi, zi, N] = arg
    return V, pol


def start_value(V, inst: DiscreteInstance, cfg: TriggerConfig) -> float:
    """Optimal expected cost from the episode start (x0, z=0, N=T_s-1)."""
    return float(V[0, inst.x0, 0, cfg.T_s - 1])


def evaluate_policy(inst: DiscreteInstance, cfg: TriggerConfig, prob) -> float:
    """Exact expected cost of a (possibly time-varying) randomised policy.

    ``prob(k, xi, zi, N)`` returns P(a=1); forced steps ignore it.
    """
    nx = len(inst.x_values)
    H = cfg.H
    V = np.zeros((nx, nx, cfg.T_s))
    for xi in range(nx):
        V[xi] = _terminal(inst, cfg, xi)
    for k in range(H - 1, -1, -1):
        Vk = np.zeros_like(V)
        for xi, zi, N in itertools.product(range(nx), range(nx), range(cfg.T_s)):
            p1 = 1.0 if forced(N, cfg) else float(prob(k, xi, zi, N))
            tot = 0.0
            for a, pa in ((0, 1.0 - p1), (1, p1)):
                if pa == 0.0:
                    continue
                c, ui = _stage(inst, cfg, xi, zi, a)
                z2 = xi if a else zi
                N2 = 0 if a else N + 1
                tot += pa * (c + inst.trans[xi, ui] @ V[:, z2, N2])
            Vk[xi, zi, N] = tot
        V = Vk
    return float(V[inst.x0, 0, cfg.T_s - 1])


class DiscretePlant:
    """Sampling wrapper so run_episode / reinforce_train can drive an instance."""

    def __init__(self, inst: DiscreteInstance):
        self.inst = inst
        self.rng = None
        self.xi = inst.x0

    def reset(self, rng) -> np.ndarray:
        self.rng = rng
        self.xi = self.inst.x0
        return self.inst.x_values[self.xi].copy()

    def index(self, x) -> int:
        return int(np.argmin(np.abs(self.inst.x_values - np.atleast_1d(x)).sum(axis=1)))

    def control(self, x) -> np.ndarray:
        return self.inst.u_values[self.inst.controller[self.index(x)]].copy()

    def step(self, u) -> np.ndarray:
        ui = int(np.argmin(np.abs(self.inst.u_values - np.atleast_1d(u)).sum(axis=1)))
        self.xi = int(self.rng.choice(len(self.inst.x_values), p=self.inst.trans[self.xi, ui]))
        return self.inst.x_values[self.xi].copy()


def toy_instance() -> tuple[DiscreteInstance, TriggerConfig]:
    """Two states, two controls, u = x; H = 6, T_s = 3."""
    # P(x'=1 | x, u)
    p1 = np.array([[0.3, 0.1], [0.9, 0.2]])
    trans = np.stack([1.0 - p1, p1], axis=2)
    inst = DiscreteInstance([0.0, 1.0], [0.0, 1.0], trans, controller=[0, 1], x0=1)
    cfg = TriggerConfig(Q=[[1.0]], R=[[0.1]], x_r=[0.0], beta=0.5, T_s=3, H=6, hidden=8,
                        lr=0.05, episodes=4000, batch=16, init_logit=0.0)
    return inst, cfg
