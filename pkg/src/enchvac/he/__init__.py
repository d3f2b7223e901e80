"""Leveled CKKS-style homomorphic encryption over packed real vectors.

Two interchangeable backends share one contract: ``reference`` keeps values
in the clear with faithful level and layout semantics, ``rlwe`` is the real
lattice scheme.  The module-level functions dispatch on the key set or the
ciphertext, so circuits are written once.
"""
from __future__ import annotations

from .core import Backend, Ciphertext, KeySet, Plaintext
from .params import (
    DEFAULT_ROTATIONS,
    PRESETS,
    DepthExhausted,
    HeError,
    HeParams,
    InvalidParams,
    KeyMismatch,
    MissingGaloisKey,
    SerializationError,
    SlotMismatch,
    get_preset,
)
from .reference import ReferenceBackend
from .rlwe import RlweBackend

BACKENDS: dict[str, Backend] = {"reference": ReferenceBackend(), "rlwe": RlweBackend()}


def get_backend(name: str) -> Backend:
    try:
        return BACKENDS[name]
    except KeyError:
        raise InvalidParams(f"unknown HE backend {name!r}; known: {sorted(BACKENDS)}") from None


def keygen(params: HeParams, seed: int, backend: str = "rlwe") -> KeySet:
    return get_backend(backend).keygen(params, seed)


def encrypt(v, keys: KeySet, level: int | None = None, period: int | None = None) -> Ciphertext:
    return keys.backend.encrypt(v, keys, level=level, period=period)


def decrypt(ct: Ciphertext, keys: KeySet):
    return keys.backend.decrypt(ct, keys)


def encode(v, keys: KeySet, level: int | None = None, period: int | None = None) -> Plaintext:
    return keys.backend.encode(v, keys, level=level, period=period)


def add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return a.backend.add(a, b)


def sub(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return a.backend.sub(a, b)


def add_plain(a: Ciphertext, p, keys: KeySet | None = None) -> Ciphertext:
    return a.backend.add_plain(a, p, keys)


def add_const(a: Ciphertext, c: float) -> Ciphertext:
    return a.backend.add_const(a, c)


def mul(a: Ciphertext, b: Ciphertext, keys: KeySet) -> Ciphertext:
    return a.backend.mul(a, b, keys)


def mul_plain(a: Ciphertext, p, keys: KeySet | None = None) -> Ciphertext:
    return a.backend.mul_plain(a, p, keys)


def mul_const(a: Ciphertext, c: float) -> Ciphertext:
    return a.backend.mul_const(a, c)


def rotate(a: Ciphertext, j: int, keys: KeySet) -> Ciphertext:
    return a.backend.rotate(a, j, keys)


def drop_to(a: Ciphertext, level: int) -> Ciphertext:
    return a.backend.drop_to(a, level)


def serialize(ct: Ciphertext) -> bytes:
    return ct.backend.serialize(ct)


def deserialize(blob: bytes, keys: KeySet) -> Ciphertext:
    return keys.backend.deserialize(blob, keys)


def byte_size(ct: Ciphertext) -> int:
    return ct.backend.byte_size(ct)


__all__ = [
    "BACKENDS", "DEFAULT_ROTATIONS", "PRESETS", "Backend", "Ciphertext", "DepthExhausted",
    "HeError", "HeParams", "InvalidParams", "KeyMismatch", "KeySet", "MissingGaloisKey",
    "Plaintext", "SerializationError", "SlotMismatch", "add", "add_const", "add_plain",
    "byte_size", "decrypt", "deserialize", "drop_to", "encode", "encrypt", "get_backend",
    "get_preset", "keygen", "mul", "mul_const", "mul_plain", "rotate", "serialize", "sub",
]
