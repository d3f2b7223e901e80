"""Backend-independent ciphertext types, packing layout and the backend contract.

Packing layout: a logical vector of ``length`` values is zero-padded to
``period`` entries and that block is tiled across the slots.  Rotations are
cyclic over the period, which is what the diagonal matrix-vector method
needs; a fresh encryption uses ``period == length`` so rotating
``[A, B, C]`` by one gives ``[B, C, A]``.
"""
from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .params import (
    DepthExhausted,
    HeParams,
    KeyMismatch,
    MissingGaloisKey,
    SerializationError,
    SlotMismatch,
)

MAGIC = b"ENC1"
VERSION = 1
# magic, version, ring_degree, level, scale_bits, components, length, period, key id
HEADER = struct.Struct("<4sHIBBBHHI")


@dataclass(slots=True, eq=False)
class Ciphertext:
    data: Any
    level: int
    length: int
    period: int
    params: HeParams
    backend: "Backend"
    key_id: int
    size: int = 2

    @property
    def scale(self) -> float:
        return self.params.level_scales[self.level]

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    def replace(self, data, level: int | None = None, **kw) -> "Ciphertext":
        out = Ciphertext(data, self.level if level is None else level, self.length, self.period,
                         self.params, self.backend, self.key_id, self.size)
        for k, v in kw.items():
            setattr(out, k, v)
        return out

    def __repr__(self):
        return (f"Ciphertext({self.backend.name}, level={self.level}, length={self.length}, "
                f"period={self.period})")


@dataclass(slots=True, eq=False)
class Plaintext:
    data: Any
    level: int
    length: int
    period: int
    params: HeParams
    ntt: Any = None

    @property
    def scale(self) -> float:
        return self.params.level_scales[self.level]

    @property
    def slot_count(self) -> int:
        return self.params.slot_count


@dataclass(eq=False)
class KeySet:
    params: HeParams
    backend: "Backend"
    seed: int
    key_id: int
    secret_key: Any
    public_key: Any
    relin_key: Any
    galois_keys: dict[int, Any]
    rng: np.random.Generator = field(repr=False)

    @property
    def depth(self) -> int:
        return self.params.depth


def layout(values, length: int, period: int, slots: int) -> np.ndarray:
    """Full slot vector for ``values`` tiled with the given period."""
    block = np.zeros(period)
    block[:length] = values
    reps = slots // period
    out = np.zeros(slots)
    out[: reps * period] = np.tile(block, reps)
    return out


def key_id_for(params: HeParams, seed: int) -> int:
    h = hash((params.ring_degree, params.modulus_bits, params.scale_bits, int(seed)))
    return h & 0xFFFFFFFF


class Backend(ABC):
    """Contract shared by the reference and RLWE implementations."""

    name = "abstract"

    # -- keys & encoding -------------------------------------------------
    @abstractmethod
    def keygen(self, params: HeParams, seed: int) -> KeySet: ...

    @abstractmethod
    def _encode(self, block: np.ndarray, length: int, period: int, level: int, keys: KeySet) -> Plaintext: ...

    @abstractmethod
    def _encrypt(self, pt: Plaintext, keys: KeySet, rng) -> Ciphertext: ...

    @abstractmethod
    def _decrypt_block(self, ct: Ciphertext, keys: KeySet) -> np.ndarray: ...

    # -- primitive homomorphic ops (operands already aligned) -------------
    @abstractmethod
    def _add(self, a: Ciphertext, b: Ciphertext, negate_b: bool) -> Ciphertext: ...

    @abstractmethod
    def _add_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext: ...

    @abstractmethod
    def _add_const(self, a: Ciphertext, c: float) -> Ciphertext: ...

    @abstractmethod
    def _mul(self, a: Ciphertext, b: Ciphertext, keys: KeySet) -> Ciphertext: ...

    @abstractmethod
    def _mul_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext: ...

    @abstractmethod
    def _mul_const(self, a: Ciphertext, c: float) -> Ciphertext: ...

    @abstractmethod
    def _mul_int(self, a: Ciphertext, k: int) -> Ciphertext: ...

    @abstractmethod
    def _rotate_many(self, a: Ciphertext, steps: list[int], keys: KeySet) -> list[Ciphertext]: ...

    @abstractmethod
    def _drop(self, a: Ciphertext, level: int) -> Ciphertext: ...

    @abstractmethod
    def _payload_bytes(self, ct: Ciphertext) -> bytes: ...

    @abstractmethod
    def _payload_from(self, raw: memoryview, level: int, size: int, length: int, period: int,
                      keys: KeySet) -> Any: ...

    # -- public API --------------------------------------------------------
    def max_abs_value(self, params: HeParams) -> float:
        """Largest magnitude that survives decryption at the base level."""
        return 2.0 ** (params.modulus_bits[0] - params.scale_bits - 3)

    def encode(self, values, keys: KeySet, level: int | None = None, period: int | None = None) -> Plaintext:
        v = np.asarray(values, dtype=np.float64).ravel()
        params = keys.params
        if v.size > params.slot_count:
            raise SlotMismatch(f"{v.size} values exceed {params.slot_count} slots")
        period = v.size if period is None else int(period)
        if period < max(v.size, 1) or period > params.slot_count:
            raise SlotMismatch(f"period {period} incompatible with length {v.size}")
        level = params.depth if level is None else int(level)
        if not 0 <= level <= params.depth:
            raise DepthExhausted(f"level {level} outside [0, {params.depth}]")
        block = np.zeros(period)
        block[: v.size] = v
        return self._encode(block, v.size, period, level, keys)

    def encrypt(self, values, keys: KeySet, level: int | None = None, period: int | None = None,
                rng=None) -> Ciphertext:
        v = np.asarray(values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("cannot encrypt non-finite values")
        bound = self.max_abs_value(keys.params)
        if v.size and np.abs(v).max() > bound:
            raise ValueError(f"value magnitude exceeds the configured bound {bound:g}")
        pt = self.encode(v, keys, level, period)
        return self._encrypt(pt, keys, keys.rng if rng is None else rng)

    def decrypt(self, ct: Ciphertext, keys: KeySet) -> np.ndarray:
        if ct.key_id != keys.key_id or ct.backend is not keys.backend:
            raise KeyMismatch("ciphertext was not produced under this key set")
        return self._decrypt_block(ct, keys)[: ct.length].copy()

    def _check_pair(self, a: Ciphertext, b) -> None:
        if a.slot_count != b.slot_count or a.period != b.period:
            raise SlotMismatch(
                f"operands differ in layout (period {a.period} vs {b.period}, "
                f"slots {a.slot_count} vs {b.slot_count})")

    def align(self, a: Ciphertext, b: Ciphertext) -> tuple[Ciphertext, Ciphertext]:
        if a.level > b.level:
            a = self._drop(a, b.level)
        elif b.level > a.level:
            b = self._drop(b, a.level)
        return a, b

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        a, b = self.align(a, b)
        return self._add(a, b, False)

    def sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        a, b = self.align(a, b)
        return self._add(a, b, True)

    def _as_plain(self, a: Ciphertext, p, keys: KeySet | None) -> Plaintext:
        if isinstance(p, Plaintext):
            if p.level != a.level:
                raise DepthExhausted(f"plaintext at level {p.level}, ciphertext at {a.level}")
            self._check_pair(a, p)
            return p
        if keys is None:
            raise ValueError("raw vectors need the key set for encoding")
        return self.encode(p, keys, level=a.level, period=a.period)

    def add_plain(self, a: Ciphertext, p, keys: KeySet | None = None) -> Ciphertext:
        return self._add_plain(a, self._as_plain(a, p, keys))

    def add_const(self, a: Ciphertext, c: float) -> Ciphertext:
        return self._add_const(a, float(c))

    def mul(self, a: Ciphertext, b: Ciphertext, keys: KeySet) -> Ciphertext:
        self._check_pair(a, b)
        if min(a.level, b.level) < 1:
            raise DepthExhausted("multiplication needs operands at level >= 1")
        a, b = self.align(a, b)
        return self._mul(a, b, keys)

    def square(self, a: Ciphertext, keys: KeySet) -> Ciphertext:
        return self.mul(a, a, keys)

    def mul_plain(self, a: Ciphertext, p, keys: KeySet | None = None) -> Ciphertext:
        if a.level < 1:
            raise DepthExhausted("plaintext multiplication needs level >= 1")
        return self._mul_plain(a, self._as_plain(a, p, keys))

    def mul_const(self, a: Ciphertext, c: float) -> Ciphertext:
        """Multiply by a real constant; consumes one level."""
        if a.level < 1:
            raise DepthExhausted("constant multiplication needs level >= 1")
        return self._mul_const(a, float(c))

    def mul_int(self, a: Ciphertext, k: int) -> Ciphertext:
        """Multiply by a small integer; no level is consumed."""
        return self._mul_int(a, int(k))

    def _galois_step(self, a: Ciphertext, j: int, keys: KeySet) -> int:
        r = j % a.period
        if r and r not in keys.galois_keys:
            raise MissingGaloisKey(f"no rotation key for step {r}")
        return r

    def rotate(self, a: Ciphertext, j: int, keys: KeySet) -> Ciphertext:
        return self.rotate_many(a, [j], keys)[0]

    def rotate_many(self, a: Ciphertext, steps, keys: KeySet) -> list[Ciphertext]:
        rs = [self._galois_step(a, j, keys) for j in steps]
        return self._rotate_many(a, rs, keys)

    def rotate_dot_plain(self, a: Ciphertext, steps, plains, keys: KeySet) -> Ciphertext:
        """sum_j rot(a, steps[j]) * plains[j] with a single rescale (one level)."""
        if a.level < 1:
            raise DepthExhausted("plaintext multiplication needs level >= 1")
        rs = [self._galois_step(a, j, keys) for j in steps]
        plains = [self._as_plain(a, p, keys) for p in plains]
        if not rs:
            raise ValueError("need at least one term")
        return self._rotate_dot_plain(a, rs, plains, keys)

    def _rotate_dot_plain(self, a, steps, plains, keys):
        rots = self._rotate_many(a, steps, keys)
        acc = None
        for ct, p in zip(rots, plains):
            term = self._mul_plain(ct, p)
            acc = term if acc is None else self._add(acc, term, False)
        return acc

    def drop_to(self, a: Ciphertext, level: int) -> Ciphertext:
        if level > a.level or level < 0:
            raise DepthExhausted(f"cannot move from level {a.level} to {level}")
        return a if level == a.level else self._drop(a, level)

    def with_period(self, a: Ciphertext, period: int) -> Ciphertext:
        """Reinterpret the tiling with a larger period (must be a multiple)."""
        if period == a.period:
            return a
        if period % a.period or period > a.slot_count:
            raise SlotMismatch(f"period {period} is not a multiple of {a.period}")
        return self._reperiod(a, period)

    def _reperiod(self, a: Ciphertext, period: int) -> Ciphertext:
        return a.replace(a.data, period=period)

    # -- wire format -------------------------------------------------------
    def byte_size(self, ct: Ciphertext) -> int:
        return HEADER.size + 8 * ct.size * (ct.level + 1) * 2 * ct.slot_count

    def serialize(self, ct: Ciphertext) -> bytes:
        params_n = 2 * ct.slot_count
        head = HEADER.pack(MAGIC, VERSION, params_n, ct.level, self._scale_bits(ct), ct.size,
                           ct.length, ct.period, ct.key_id)
        return head + self._payload_bytes(ct)

    def _scale_bits(self, ct: Ciphertext) -> int:
        return ct.params.scale_bits

    def deserialize(self, blob: bytes, keys: "KeySet | HeParams") -> Ciphertext:
        if len(blob) < HEADER.size:
            raise SerializationError("truncated header")
        magic, version, n, level, _sb, size, length, period, key_id = HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise SerializationError(f"bad magic {magic!r}")
        if version != VERSION:
            raise SerializationError(f"unsupported version {version}")
        params = keys.params if isinstance(keys, KeySet) else keys
        if n != params.ring_degree:
            raise SerializationError(f"ring degree {n} does not match parameters ({params.ring_degree})")
        if level > params.depth:
            raise SerializationError(f"level {level} exceeds depth {params.depth}")
        raw = memoryview(blob)[HEADER.size:]
        data = self._payload_from(raw, level, size, length, period, keys)
        return Ciphertext(data, level, length, period, params, self, key_id, size)

    # -- precision ---------------------------------------------------------
    def measure_epsilon(self, keys: KeySet, trials: int = 100, width: int = 8,
                        bound: float = 10.0, seed: int = 0) -> float:
        """Measured worst-case encrypt/decrypt roundtrip error on random vectors."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            v = rng.uniform(-bound, bound, width)
            worst = max(worst, float(np.abs(self.decrypt(self.encrypt(v, keys), keys) - v).max()))
        return worst
