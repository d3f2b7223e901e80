"""Encryption parameters, modulus-chain construction and named presets."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

from sympy import isprime


class HeError(Exception):
    """Base class for homomorphic-encryption errors."""


class InvalidParams(HeError):
    pass


class DepthExhausted(HeError):
    pass


class SlotMismatch(HeError):
    pass


class MissingGaloisKey(HeError):
    pass


class KeyMismatch(HeError):
    pass


class SerializationError(HeError):
    pass


DEFAULT_ROTATIONS = frozenset(range(1, 16))


@dataclass(frozen=True)
class HeParams:
    """Leveled CKKS parameters.

    ``modulus_bits`` follows the SEAL convention: the first prime is the
    decryption base, the last one is the special key-switching prime and
    everything in between is consumed by rescaling.  So the multiplicative
    depth is ``len(modulus_bits) - 2``.
    """

    ring_degree: int
    modulus_bits: tuple[int, ...]
    scale_bits: int
    rotation_steps: frozenset[int] = field(default=DEFAULT_ROTATIONS)

    def __post_init__(self):
        n = self.ring_degree
        if not isinstance(n, int) or n < 8 or n & (n - 1):
            raise InvalidParams(f"ring_degree must be a power of two >= 8, got {n!r}")
        bits = tuple(int(b) for b in self.modulus_bits)
        object.__setattr__(self, "modulus_bits", bits)
        object.__setattr__(self, "rotation_steps", frozenset(int(s) for s in self.rotation_steps))
        if len(bits) < 2:
            raise InvalidParams("modulus_bits needs at least two primes")
        if any(b < 10 or b > 50 for b in bits):
            raise InvalidParams("prime sizes must lie in [10, 50] bits")
        interior = bits[1:-1]
        if interior and self.scale_bits > min(interior):
            raise InvalidParams("scale_bits exceeds the smallest interior prime")
        if self.scale_bits >= bits[0]:
            raise InvalidParams("scale_bits must be below the base prime size")

    @property
    def slot_count(self) -> int:
        return self.ring_degree // 2

    @property
    def depth(self) -> int:
        return len(self.modulus_bits) - 2

    @cached_property
    def primes(self) -> tuple[int, ...]:
        """Data primes q_0..q_L followed by the special prime P."""
        return _build_chain(self)

    @property
    def special_prime(self) -> int:
        return self.primes[-1]

    @cached_property
    def level_scales(self) -> tuple[float, ...]:
        """Canonical scale of a ciphertext at each level (index = level).

        Rescaling a level-l product of two level-l operands divides by q_l,
        so scale_{l-1} = scale_l**2 / q_l.  Every ciphertext at level l
        carries exactly scale_l, which keeps binary operations aligned.
        """
        top = float(2 ** self.scale_bits)
        scales = [0.0] * (self.depth + 1)
        scales[self.depth] = top
        for lvl in range(self.depth, 0, -1):
            scales[lvl - 1] = scales[lvl] * scales[lvl] / self.primes[lvl]
        return tuple(scales)

    def with_rotations(self, steps) -> "HeParams":
        return HeParams(self.ring_degree, self.modulus_bits, self.scale_bits, frozenset(steps))


def _ntt_primes_near(target: float, bits: int, modulus: int, taken: set[int]):
    """Yield primes p = 1 mod ``modulus`` of exactly ``bits`` bits, nearest to target first."""
    lo, hi = 1 << (bits - 1), 1 << bits
    start = int(round((target - 1) / modulus)) * modulus + 1
    start = min(max(start, lo + 1), hi - modulus + 1)
    for k in range(0, (hi - lo) // modulus + 2):
        for cand in (start - k * modulus, start + k * modulus) if k else (start,):
            if lo <= cand < hi and cand not in taken and isprime(cand):
                yield cand


def _build_chain(params: HeParams) -> tuple[int, ...]:
    m = 2 * params.ring_degree
    bits = params.modulus_bits
    taken: set[int] = set()
    depth = len(bits) - 2

    def pick(target, b):
        p = next(_ntt_primes_near(target, b, m, taken), None)
        if p is None:
            raise InvalidParams(f"no NTT-friendly {b}-bit prime for ring degree {params.ring_degree}")
        taken.add(p)
        return p

    base = pick(2.0 ** bits[0], bits[0])
    special = pick(2.0 ** bits[-1], bits[-1])
    chain = [base] + [0] * depth
    # Choose each rescaling prime close to the scale it will divide so the
    # per-level scales stay near 2**scale_bits.
    scale = float(2 ** params.scale_bits)
    for lvl in range(depth, 0, -1):
        chain[lvl] = pick(scale, bits[lvl])
        scale = scale * scale / chain[lvl]
    return tuple(chain) + (special,)


PRESETS: dict[str, HeParams] = {
    "paper-2024": HeParams(8192, (40, 26, 26, 26, 40), 26),
    "deep-6": HeParams(8192, (40, 26, 26, 26, 26, 26, 26, 40), 26),
    "toy": HeParams(8, (30, 20, 30), 20, frozenset({1, 2, 3})),
}


def get_preset(name: str) -> HeParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidParams(f"unknown HE preset {name!r}; known: {sorted(PRESETS)}") from None
