"""Packed encrypted neural-network kernels.

Matrix-vector products use the diagonal method: with W zero-padded to a
square n' x n' matrix, diagonal j holds ``W[i, (i + j) mod n']`` and

    W x = sum_j diag_j * rot(x, j)

which costs n' rotations (hoisted into one key-switch decomposition) and n'
plaintext products, but only a single level.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import he
from .he import Ciphertext, DepthExhausted, KeySet, MissingGaloisKey, SlotMismatch

ACT_LEVELS = 3
LINEAR_LEVELS = 1
FORWARD_LEVELS = LINEAR_LEVELS + ACT_LEVELS + LINEAR_LEVELS
# beyond this ratio a3/a5 the factored activation loses too much precision
_MAX_FACTOR = 1e3


class DimensionMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# packed matrices
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PackedMatrix:
    """Generalized diagonals of a d x n weight matrix (zero-padded to square)."""

    weights: np.ndarray
    diagonals: np.ndarray
    _plain_cache: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def n(self) -> int:
        return self.weights.shape[1]

    @property
    def n_pad(self) -> int:
        return self.diagonals.shape[0]

    def unpack(self) -> np.ndarray:
        n = self.n_pad
        full = np.zeros((n, n))
        rows = np.arange(n)
        for j in range(n):
            full[rows, (rows + j) % n] = self.diagonals[j]
        return full[: self.d, : self.n]

    def diagonals_for(self, npad: int) -> np.ndarray:
        """Diagonals of W zero-padded to an npad x npad square."""
        if npad == self.n_pad:
            return self.diagonals
        return _diagonals(self.weights, npad)

    def plaintexts(self, keys: KeySet, level: int, npad: int | None = None) -> dict:
        npad = self.n_pad if npad is None else npad
        tag = (keys.backend.name, keys.key_id, level, npad)
        if tag not in self._plain_cache:
            diags = self.diagonals_for(npad)
            idx = [j for j in range(npad) if np.any(diags[j])] or [0]
            self._plain_cache[tag] = {
                j: he.encode(diags[j], keys, level=level, period=npad) for j in idx
            }
        return self._plain_cache[tag]

    def scaled_rows(self, gain) -> "PackedMatrix":
        """Matrix diag(gain) @ W, e.g. to fold an output gain into the last layer."""
        g = np.broadcast_to(np.asarray(gain, dtype=float), (self.d,))
        return pack_diagonals(g[:, None] * self.weights)

    def save(self, path) -> None:
        save_weights(self.weights, path)


def pack_diagonals(W) -> PackedMatrix:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.size == 0:
        raise DimensionMismatch(f"need a non-empty 2-D matrix, got shape {W.shape}")
    return PackedMatrix(W.copy(), _diagonals(W, max(W.shape)))


def _diagonals(W: np.ndarray, npad: int) -> np.ndarray:
    d, n = W.shape
    full = np.zeros((npad, npad))
    full[:d, :n] = W
    rows = np.arange(npad)
    return np.stack([full[rows, (rows + j) % npad] for j in range(npad)])


def save_weights(W, path) -> None:
    """Dims header (two u32) followed by row-major little-endian float64."""
    W = np.asarray(W, dtype="<f8")
    Path(path).write_bytes(struct.pack("<II", *W.shape) + W.tobytes(order="C"))


def load_weights(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated weight file")
    d, n = struct.unpack_from("<II", raw)
    if len(raw) != 8 + 8 * d * n:
        raise ValueError(f"{path}: expected {d}x{n} matrix, got {len(raw) - 8} payload bytes")
    return np.frombuffer(raw[8:], dtype="<f8").reshape(d, n).astype(np.float64)


def diag_matvec(pm: PackedMatrix, x: Ciphertext, keys: KeySet) -> Ciphertext:
    if x.length != pm.n:
        raise DimensionMismatch(f"matrix expects length {pm.n}, ciphertext has {x.length}")
    if x.level < 1:
        raise DepthExhausted("matrix-vector product needs level >= 1")
    backend = keys.backend
    if x.period < pm.n:
        raise SlotMismatch(f"period {x.period} shorter than the input length {pm.n}")
    # pad to the square size, or the next multiple of the input period
    npad = x.period * -(-pm.n_pad // x.period)
    if npad > x.slot_count:
        raise SlotMismatch(f"padded dimension {npad} exceeds {x.slot_count} slots")
    x = backend.with_period(x, npad)
    plains = pm.plaintexts(keys, x.level, npad)
    have = set(keys.galois_keys) | {0}
    rest = list(plains)
    out, y, offset = None, x, 0
    # steps without a key of their own are hoisted from a pre-rotated copy
    while rest:
        now = [j for j in rest if j >= offset and j - offset in have]
        if now:
            part = backend.rotate_dot_plain(y, [j - offset for j in now], [plains[j] for j in now], keys)
            out = part if out is None else backend.add(out, part)
            rest = [j for j in rest if j not in now]
        if rest:
            base = max(keys.galois_keys, default=0)
            if base == 0 or offset + base >= npad:
                raise MissingGaloisKey(f"rotation keys cannot reach diagonal steps {rest}")
            y = backend.rotate(y, base, keys)
            offset += base
    out.length = pm.d
    return out


def _rotate_composed(ct: Ciphertext, j: int, keys: KeySet) -> Ciphertext:
    """Rotate by ``j`` over the period using only the available key steps."""
    r = j % ct.period
    if r == 0 or r in keys.galois_keys:
        return keys.backend.rotate(ct, r, keys)
    avail = sorted((s for s in keys.galois_keys if 0 < s < r), reverse=True)
    for s in avail:
        while r >= s:
            ct = keys.backend.rotate(ct, s, keys)
            r -= s
    if r:
        raise MissingGaloisKey(f"no rotation keys compose a step of {j % ct.period}")
    return ct


def concat_cts(a: Ciphertext, b: Ciphertext | None, keys: KeySet, period: int | None = None) -> Ciphertext:
    """Ciphertext holding [a; b]; masks both operands, consumes one level."""
    backend = keys.backend
    n = a.length
    m = 0 if b is None else b.length
    base = a.period if b is None else math.lcm(a.period, b.period)
    P = base * max(1, -(-(n + m) // base))
    if period is not None:
        if period % base or period < n + m:
            raise SlotMismatch(f"period {period} must be a multiple of {base} and >= {n + m}")
        P = period
    if P > a.slot_count:
        raise SlotMismatch(f"concatenation needs {P} slots, only {a.slot_count} available")
    if min(a.level, b.level if b is not None else a.level) < 1:
        raise DepthExhausted("concatenation needs level >= 1")
    mask_a = np.zeros(P)
    mask_a[:n] = 1.0
    out = backend.mul_plain(backend.with_period(a, P), mask_a, keys)
    if b is not None and m:
        mask_b = np.zeros(P)
        mask_b[n:n + m] = 1.0
        shifted = _rotate_composed(backend.with_period(b, P), -n, keys)
        out = backend.add(out, backend.mul_plain(shifted, mask_b, keys))
    out.length = n + m
    return out


# ---------------------------------------------------------------------------
# polynomial activations
# ---------------------------------------------------------------------------

_FUNCS = {"sigmoid": expit, "tanh": np.tanh}


@dataclass(frozen=True)
class ActivationPoly:
    coeffs: tuple[float, ...]
    interval: tuple[float, float] = (-4.0, 4.0)
    func: str = "sigmoid"
    name: str = ""
    max_error: float = float("nan")

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if len(c) > 6:
            if any(c[6:]):
                raise ValueError("activation degree must be <= 5")
            c = c[:6]
        object.__setattr__(self, "coeffs", c + (0.0,) * (6 - len(c)))
        lo, hi = self.interval
        if not lo < hi:
            raise ValueError(f"empty interval {self.interval}")
        if self.func not in _FUNCS:
            raise ValueError(f"unknown activation function {self.func!r}")

    def __call__(self, y):
        return np.polynomial.polynomial.polyval(np.asarray(y, dtype=float), self.coeffs)

    def derivative(self, y):
        return np.polynomial.polynomial.polyval(
            np.asarray(y, dtype=float), np.polynomial.polynomial.polyder(self.coeffs))

    def reference(self, y):
        return _FUNCS[self.func](np.asarray(y, dtype=float))

    def grid_error(self, n_grid: int = 2001) -> float:
        g = np.linspace(*self.interval, n_grid)
        return float(np.abs(self(g) - self.reference(g)).max())


def fit_activation_coeffs(func: str, interval=(-4.0, 4.0), degree: int = 5, n_grid: int = 2001,
                          symmetric: bool | None = None) -> ActivationPoly:
    """Least-squares polynomial fit on a dense uniform grid.

    With ``symmetric`` (default for intervals centred on zero) tanh is fitted
    on odd powers only and sigmoid as 0.5 plus odd powers, matching the
    symmetry of the target.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError(f"degenerate interval [{lo}, {hi}]")
    if func not in _FUNCS:
        raise ValueError(f"unknown activation function {func!r}")
    if not 1 <= degree <= 5:
        raise ValueError("degree must be between 1 and 5")
    if n_grid < 1001:
        raise ValueError("use at least 1001 grid points")
    g = np.linspace(lo, hi, n_grid)
    target = _FUNCS[func](g)
    if symmetric is None:
        symmetric = math.isclose(lo, -hi)
    coeffs = np.zeros(6)
    if symmetric:
        offset = 0.5 if func == "sigmoid" else 0.0
        powers = list(range(1, degree + 1, 2))
        V = np.stack([g ** k for k in powers], axis=1)
        sol, *_ = np.linalg.lstsq(V, target - offset, rcond=None)
        coeffs[0] = offset
        coeffs[powers] = sol
    else:
        V = np.polynomial.polynomial.polyvander(g, degree)
        sol, *_ = np.linalg.lstsq(V, target, rcond=None)
        coeffs[: degree + 1] = sol
    err = float(np.abs(np.polynomial.polynomial.polyval(g, coeffs) - target).max())
    return ActivationPoly(tuple(coeffs), (lo, hi), func, f"fit-{func}", err)


def _fixed_presets() -> dict[str, ActivationPoly]:
    sig = ActivationPoly((0.5, -1.53, 0.0, 2.35, 0.0, -1.35), (-4.0, 4.0), "sigmoid", "paper-sigmoid")
    tanh = ActivationPoly((0.024, 0.0, -0.212, 0.0, 0.958, -0.002), (-4.0, 4.0), "tanh", "paper-tanh")
    return {"paper-sigmoid": sig, "paper-tanh": tanh}


ACTIVATION_PRESETS: dict[str, ActivationPoly] = {
    "sigmoid": fit_activation_coeffs("sigmoid"),
    "tanh": fit_activation_coeffs("tanh"),
    **_fixed_presets(),
}


def get_activation(name: str) -> ActivationPoly:
    try:
        return ACTIVATION_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; known: {sorted(ACTIVATION_PRESETS)}") from None


def _centre_shift(c: float, interval) -> float:
    lo, hi = interval
    y = np.linspace(lo, hi, 401)
    y2 = y * y
    q = y2 * y2 + c * y2
    return -0.5 * float(q.max() + q.min())


def poly_activation(x: Ciphertext, p: ActivationPoly, keys: KeySet) -> Ciphertext:
    """Evaluate the degree-5 polynomial; consumes exactly three levels.

    y2 = y*y and y4 = y2*y2, then one combining product
    (a5*y + a4) * (y4 + c*y2) with c = a3/a5 supplies the y^5, y^4 and y^3
    terms; the remaining low powers only need constant multiplications.
    """
    if x.level < ACT_LEVELS:
        raise DepthExhausted(f"activation needs level >= {ACT_LEVELS}, ciphertext has {x.level}")
    b = keys.backend
    a0, a1, a2, a3, a4, a5 = p.coeffs
    target = x.level - ACT_LEVELS
    y2 = b.mul(x, x, keys)
    y4 = b.mul(y2, y2, keys)
    terms = []
    if a5 != 0.0 and abs(a3 / a5) <= _MAX_FACTOR:
        c = a3 / a5
        # Shift y4 + c*y2 by e so it is centred on the fit interval: the
        # rescale noise of a5*y gets multiplied by |P4|, so keep it small.
        e = _centre_shift(c, p.interval)
        p4 = y4 if c == 0.0 else b.add(y4, b.mul_const(y2, c))
        if e != 0.0:
            p4 = b.add_const(p4, e)
        p1 = b.mul_const(x, a5)
        if a4 != 0.0:
            p1 = b.add_const(p1, a4)
        terms.append(b.mul(p1, p4, keys))
        a2 -= a4 * c
        a1 -= a5 * e
        a0 -= a4 * e
    else:
        # a5 == 0 or a3 dominates: one extra product, same level budget
        if a5 != 0.0:
            terms.append(b.mul(b.mul_const(x, a5), y4, keys))
        if a3 != 0.0:
            terms.append(b.mul(b.mul_const(x, a3), y2, keys))
        if a4 != 0.0:
            terms.append(b.mul_const(y4, a4))
    if a2 != 0.0:
        terms.append(b.mul_const(y2, a2))
    if a1 != 0.0:
        terms.append(b.mul_const(x, a1))
    if terms:
        out = b.drop_to(terms[0], target)
        for t in terms[1:]:
            out = b.add(out, b.drop_to(t, target))
    else:
        out = b.mul_const(b.drop_to(x, target + 1), 0.0)
    if a0 != 0.0:
        out = b.add_const(out, a0)
    out.length = x.length
    return out


# ---------------------------------------------------------------------------
# two-layer network
# ---------------------------------------------------------------------------

def forward_levels(final_act: ActivationPoly | None = None) -> int:
    return FORWARD_LEVELS + (ACT_LEVELS if final_act is not None else 0)


def _as_packed(W) -> PackedMatrix:
    return W if isinstance(W, PackedMatrix) else pack_diagonals(W)


def enc_two_layer_forward(W1, W2, act: ActivationPoly, x: Ciphertext, out_gain, keys: KeySet,
                          final_act: ActivationPoly | None = None, b1=None, b2=None) -> Ciphertext:
    """Encrypted ``out_gain * (W2 act(W1 x + b1) + b2)`` (optionally through ``final_act`` first).

    Biases are plaintext additions and cost no level.
    """
    P1, P2 = _as_packed(W1), _as_packed(W2)
    if P1.d != P2.n:
        raise DimensionMismatch(f"hidden width mismatch: {P1.d} vs {P2.n}")
    need = forward_levels(final_act)
    if x.level < need:
        raise DepthExhausted(f"forward needs {need} levels, ciphertext has {x.level}")
    if final_act is None:
        # gain folds into the rows of W2 at no level cost
        if out_gain is not None and not np.all(np.asarray(out_gain) == 1.0):
            P2 = P2.scaled_rows(out_gain)
        if b2 is not None and out_gain is not None:
            b2 = np.asarray(out_gain, dtype=float) * np.asarray(b2, dtype=float)
    elif out_gain is not None:
        g = np.unique(np.asarray(out_gain, dtype=float))
        if g.size != 1:
            raise ValueError("with a final activation the output gain must be uniform")
        final_act = ActivationPoly(tuple(g[0] * c for c in final_act.coeffs), final_act.interval,
                                   final_act.func, final_act.name)
    backend = keys.backend
    z = diag_matvec(P1, x, keys)
    if b1 is not None:
        z = backend.add_plain(z, _bias(b1, P1.d), keys)
    h = poly_activation(z, act, keys)
    y = diag_matvec(P2, h, keys)
    if b2 is not None:
        y = backend.add_plain(y, _bias(b2, P2.d), keys)
    if final_act is not None:
        y = poly_activation(y, final_act, keys)
    return y


def _bias(b, d: int) -> np.ndarray:
    b = np.asarray(b, dtype=float).ravel()
    if b.size != d:
        raise DimensionMismatch(f"bias has {b.size} entries, layer has {d} outputs")
    return b


def plain_two_layer_forward(W1, W2, act: ActivationPoly, x, out_gain=None,
                            final_act: ActivationPoly | None = None, b1=None, b2=None) -> np.ndarray:
    W1 = W1.weights if isinstance(W1, PackedMatrix) else np.asarray(W1)
    W2 = W2.weights if isinstance(W2, PackedMatrix) else np.asarray(W2)
    z = W1 @ np.asarray(x, dtype=float)
    if b1 is not None:
        z = z + _bias(b1, W1.shape[0])
    y = W2 @ act(z)
    if b2 is not None:
        y = y + _bias(b2, W2.shape[0])
    if final_act is not None:
        y = final_act(y)
    if out_gain is not None:
        y = np.asarray(out_gain) * y
    return y
