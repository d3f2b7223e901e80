"""Float64 stand-in with the same level, layout and key semantics as RLWE.

Values are kept in the clear (one period per ciphertext) so this backend is
fast enough for training and sweeps.  Encryption adds tiny Gaussian noise so
code that silently relies on exactness is caught.
"""
from __future__ import annotations

import struct

import numpy as np

from .core import Backend, Ciphertext, KeySet, Plaintext, key_id_for
from .params import HeParams, SerializationError

NOISE_STD = 1e-12


class ReferenceBackend(Backend):
    name = "reference"

    def keygen(self, params: HeParams, seed: int) -> KeySet:
        galois = {int(s) % params.slot_count: True for s in params.rotation_steps}
        galois.pop(0, None)
        return KeySet(params, self, int(seed), key_id_for(params, seed), None, None, True, galois,
                      np.random.default_rng(seed))

    def _encode(self, block, length, period, level, keys):
        return Plaintext(block, level, length, period, keys.params)

    def _encrypt(self, pt, keys, rng):
        noise = rng.normal(0.0, NOISE_STD, pt.period)
        return Ciphertext(pt.data + noise, pt.level, pt.length, pt.period, keys.params, self,
                          keys.key_id)

    def _decrypt_block(self, ct, keys):
        return ct.data

    def _add(self, a, b, negate_b):
        data = a.data - b.data if negate_b else a.data + b.data
        return a.replace(data, length=max(a.length, b.length))

    def _add_plain(self, a, p):
        return a.replace(a.data + p.data)

    def _add_const(self, a, c):
        return a.replace(a.data + c)

    def _mul(self, a, b, keys):
        return a.replace(a.data * b.data, a.level - 1, length=max(a.length, b.length))

    def _mul_plain(self, a, p):
        return a.replace(a.data * p.data, a.level - 1)

    def _mul_const(self, a, c):
        return a.replace(a.data * c, a.level - 1)

    def _mul_int(self, a, k):
        return a.replace(a.data * k)

    def _rotate_many(self, a, steps, keys):
        return [a.replace(np.roll(a.data, -r)) for r in steps]

    def _drop(self, a, level):
        return a.replace(a.data, level)

    def _reperiod(self, a, period):
        return a.replace(np.tile(a.data, period // a.period), period=period)

    def _payload_bytes(self, ct):
        return struct.pack("<I", ct.data.size) + np.asarray(ct.data, "<f8").tobytes()

    def _payload_from(self, raw, level, size, length, period, keys):
        if len(raw) < 4:
            raise SerializationError("truncated payload")
        (count,) = struct.unpack_from("<I", raw)
        if count != period or len(raw) != 4 + 8 * count:
            raise SerializationError("payload length does not match header")
        return np.frombuffer(raw[4:], dtype="<f8").astype(np.float64)
