"""Full RLWE (CKKS) backend.

Ciphertexts hold uint64 coefficient-domain data of shape (size, level+1, N)
over the data primes q_0..q_level.  Key switching is the hybrid RNS variant
with one special prime P: digit i is the centred residue of the input modulo
q_i, and switching keys carry P*s' in limb i only, which is the CRT
idempotent form and therefore valid at every level.
"""
from __future__ import annotations

import numpy as np

from .core import Backend, Ciphertext, KeySet, Plaintext, key_id_for, layout
from .params import HeParams, SerializationError
from .ring import U64, RingContext, addmod as addmod_arr, mulmod

ERROR_STD = 3.2
# Sparse ternary secret as in the original CKKS/HEAAN parameterisation; the
# rescale and key-switch rounding noise scales with sqrt(hamming weight).
SECRET_HAMMING_WEIGHT = 64


class _Encoder:
    """Canonical-embedding encoder for real slot vectors."""

    def __init__(self, n: int):
        self.n = n
        slots = n // 2
        rot = np.array([pow(5, j, 2 * n) for j in range(slots)], dtype=np.int64)
        self.t = (rot - 1) // 2
        k = np.arange(n)
        self.twist = np.exp(1j * np.pi * k / n)

    def to_coeffs(self, z: np.ndarray, scale: float) -> np.ndarray:
        v = np.zeros(self.n, dtype=complex)
        v[self.t] = z
        v[self.n - 1 - self.t] = np.conj(z)
        m = np.fft.fft(v) / self.n
        coeffs = np.real(m * np.conj(self.twist)) * scale
        if np.abs(coeffs).max(initial=0.0) >= 2.0 ** 62:
            raise ValueError("encoded coefficients overflow 64 bits")
        return np.rint(coeffs).astype(np.int64)

    def to_slots(self, m: np.ndarray, scale: float) -> np.ndarray:
        v = np.fft.ifft(m.astype(np.float64) * self.twist) * self.n
        return np.real(v[self.t]) / scale


def _ternary(rng, n):
    return rng.integers(-1, 2, n).astype(np.int64)


def _sparse_ternary(rng, n, h):
    s = np.zeros(n, dtype=np.int64)
    idx = rng.choice(n, size=min(h, n), replace=False)
    s[idx] = rng.choice(np.array([-1, 1]), size=idx.size)
    return s


def _gauss(rng, n):
    return np.rint(rng.normal(0.0, ERROR_STD, n)).astype(np.int64)


def _uniform(rng, primes, n):
    return np.stack([rng.integers(0, p, n, dtype=np.uint64) for p in primes])


def _centered(a: np.ndarray, q: int) -> np.ndarray:
    v = a.view(np.int64)
    return np.where(v > q // 2, v - q, v)


class RlweBackend(Backend):
    name = "rlwe"

    def __init__(self):
        self._ctx: dict[tuple, RingContext] = {}
        self._enc: dict[int, _Encoder] = {}

    # -- contexts ------------------------------------------------------------
    def ring(self, params: HeParams) -> RingContext:
        key = (params.ring_degree, params.primes)
        if key not in self._ctx:
            self._ctx[key] = RingContext(params.ring_degree, params.primes)
        return self._ctx[key]

    def encoder(self, n: int) -> _Encoder:
        if n not in self._enc:
            self._enc[n] = _Encoder(n)
        return self._enc[n]

    @staticmethod
    def _ext(params: HeParams, level: int) -> list[int]:
        return list(range(level + 1)) + [params.depth + 1]

    # -- keys ----------------------------------------------------------------
    def _switch_key(self, ctx, params, s_ntt, target, rng):
        """Switching key from ``target`` (NTT, all limbs) to the secret s."""
        n, L = params.ring_degree, params.depth
        allp = list(range(L + 2))
        p_mod = np.array([params.special_prime % q for q in params.primes], dtype=U64)
        key = np.empty((L + 1, 2, L + 2, n), dtype=U64)
        for i in range(L + 1):
            a = _uniform(rng, params.primes, n)
            e = ctx.ntt(ctx.reduce_signed(_gauss(rng, n), allp), allp)
            b = ctx.sub(e, ctx.mul(a, s_ntt, allp), allp)
            gadget = mulmod(target[i], p_mod[i], ctx.q[i], ctx.qf[i])
            b[i] = ctx.add(b[i:i + 1], gadget[None], [i])[0]
            key[i, 0], key[i, 1] = b, a
        return key

    def keygen(self, params: HeParams, seed: int) -> KeySet:
        ctx = self.ring(params)
        n, L = params.ring_degree, params.depth
        allp = list(range(L + 2))
        rng = np.random.default_rng(seed)
        s = _sparse_ternary(rng, n, SECRET_HAMMING_WEIGHT)
        s_ntt = ctx.ntt(ctx.reduce_signed(s, allp), allp)
        a = _uniform(rng, params.primes, n)
        e = ctx.ntt(ctx.reduce_signed(_gauss(rng, n), allp), allp)
        pk = np.stack([ctx.sub(e, ctx.mul(a, s_ntt, allp), allp), a])
        relin = self._switch_key(ctx, params, s_ntt, ctx.mul(s_ntt, s_ntt, allp), rng)
        galois = {}
        for step in sorted(params.rotation_steps):
            r = step % params.slot_count
            if r == 0 or r in galois:
                continue
            g = pow(5, r, 2 * n)
            s_rot = ctx.automorphism(ctx.reduce_signed(s, allp), g, allp)
            galois[r] = self._switch_key(ctx, params, s_ntt, ctx.ntt(s_rot, allp), rng)
        keys = KeySet(params, self, int(seed), key_id_for(params, seed),
                      {"coeffs": s, "ntt": s_ntt}, pk, relin, galois, rng)
        return keys

    # -- encoding / encryption --------------------------------------------------
    def _encode(self, block, length, period, level, keys):
        params = keys.params
        z = layout(block, period, period, params.slot_count)
        m = self.encoder(params.ring_degree).to_coeffs(z, params.level_scales[level])
        return Plaintext(m, level, length, period, params)

    def _plain_ntt(self, p: Plaintext, extended: bool = False) -> np.ndarray:
        if p.ntt is None:
            p.ntt = {}
        if extended not in p.ntt:
            ctx = self.ring(p.params)
            limbs = self._ext(p.params, p.level) if extended else list(range(p.level + 1))
            p.ntt[extended] = ctx.ntt(ctx.reduce_signed(p.data, limbs), limbs)
        return p.ntt[extended]

    def _encrypt(self, pt, keys, rng):
        # Encrypt P*m under the extended modulus Q*P and divide by P, so the
        # fresh noise is the public-key noise shrunk by P plus rounding.
        params = keys.params
        ctx = self.ring(params)
        n = params.ring_degree
        ext = self._ext(params, pt.level)
        u = ctx.ntt(ctx.reduce_signed(_ternary(rng, n), ext), ext)
        pk = keys.public_key[:, ext]
        c = ctx.intt(ctx.mul(pk, u[None], ext), ext)
        errs = np.stack([_gauss(rng, n), _gauss(rng, n)])
        c = ctx.add(c, ctx.reduce_signed(errs, ext), ext)
        p_mod = np.array([params.special_prime % params.primes[j] for j in ext], dtype=U64)
        pm = ctx.mul_scalar(ctx.reduce_signed(pt.data, ext), p_mod, ext)
        c[0] = ctx.add(c[0], pm, ext)
        data = ctx.divide_round_last(c, ext)
        return Ciphertext(data, pt.level, pt.length, pt.period, params, self, keys.key_id)

    def _decrypt_block(self, ct, keys):
        params = ct.params
        ctx = self.ring(params)
        c1 = ctx.ntt(ct.data[1, :1], [0])
        m = ctx.add(ct.data[0, :1], ctx.intt(ctx.mul(c1, keys.secret_key["ntt"][:1], [0]), [0]), [0])
        coeffs = _centered(m[0], params.primes[0])
        z = self.encoder(params.ring_degree).to_slots(coeffs, ct.scale)
        return z[: ct.period]

    # -- arithmetic -------------------------------------------------------------
    @staticmethod
    def _limbs(ct):
        return list(range(ct.level + 1))

    def _add(self, a, b, negate_b):
        ctx = self.ring(a.params)
        limbs = self._limbs(a)
        op = ctx.sub if negate_b else ctx.add
        return a.replace(op(a.data, b.data, limbs), length=max(a.length, b.length))

    def _add_plain(self, a, p):
        ctx = self.ring(a.params)
        limbs = self._limbs(a)
        data = a.data.copy()
        data[0] = ctx.add(data[0], ctx.reduce_signed(p.data, limbs), limbs)
        return a.replace(data)

    def _add_const(self, a, c):
        ctx = self.ring(a.params)
        limbs = self._limbs(a)
        k = int(round(c * a.scale))
        data = a.data.copy()
        add = np.array([k % a.params.primes[j] for j in limbs], dtype=U64)
        data[0, :, 0] = ctx.add(data[0, :, 0:1], add[:, None], limbs)[:, 0]
        return a.replace(data)

    def _rescale(self, ct, data):
        ctx = self.ring(ct.params)
        return ct.replace(ctx.divide_round_last(data, self._limbs(ct)), ct.level - 1)

    def _int_scalars(self, params, k: int, limbs):
        return np.array([k % params.primes[j] for j in limbs], dtype=U64)

    def _mul_int(self, a, k):
        ctx = self.ring(a.params)
        limbs = self._limbs(a)
        return a.replace(ctx.mul_scalar(a.data, self._int_scalars(a.params, k, limbs), limbs))

    def _mul_const(self, a, c):
        k = int(round(c * a.scale))
        ctx = self.ring(a.params)
        limbs = self._limbs(a)
        return self._rescale(a, ctx.mul_scalar(a.data, self._int_scalars(a.params, k, limbs), limbs))

    def _mul_plain(self, a, p):
        ctx = self.ring(a.params)
        limbs = self._limbs(a)
        prod = ctx.mul(ctx.ntt(a.data, limbs), self._plain_ntt(p)[None], limbs)
        return self._rescale(a, ctx.intt(prod, limbs))

    def _mul(self, a, b, keys):
        ctx = self.ring(a.params)
        limbs = self._limbs(a)
        fa = ctx.ntt(a.data, limbs)
        fb = fa if b is a else ctx.ntt(b.data, limbs)
        d0 = ctx.mul(fa[0], fb[0], limbs)
        d1 = ctx.add(ctx.mul(fa[0], fb[1], limbs), ctx.mul(fa[1], fb[0], limbs), limbs)
        d2 = ctx.mul(fa[1], fb[1], limbs)
        base = ctx.intt(np.stack([d0, d1]), limbs)
        digits = self._digits(a.params, a.level, ctx.intt(d2, limbs))
        ks = self._key_switch(a.params, a.level, digits, self._level_key(keys, "relin", a.level))
        out = a.replace(ctx.add(base, ks, limbs), length=max(a.length, b.length))
        return self._rescale(out, out.data)

    # -- key switching -----------------------------------------------------------
    def _level_key(self, keys: KeySet, which, level: int):
        cache = keys.__dict__.setdefault("_level_keys", {})
        tag = (which, level)
        if tag not in cache:
            full = keys.relin_key if which == "relin" else keys.galois_keys[which]
            ext = self._ext(keys.params, level)
            cache[tag] = np.ascontiguousarray(full[: level + 1][:, :, ext])
        return cache[tag]

    def _digits(self, params, level, c: np.ndarray) -> np.ndarray:
        """NTT of the centred per-prime digits of ``c`` over the extended basis."""
        ctx = self.ring(params)
        ext = self._ext(params, level)
        cent = np.stack([_centered(c[i], params.primes[i]) for i in range(level + 1)])
        return ctx.ntt(ctx.reduce_signed(cent, ext), ext)

    def _key_switch_ext(self, params, level, digits_ntt, key) -> np.ndarray:
        """Inner product of digits with a switching key, NTT domain, modulus Q*P."""
        ctx = self.ring(params)
        q, qf = ctx._mods(self._ext(params, level), 1)
        prod = mulmod(digits_ntt[:, None], key, q, qf)
        return prod.sum(axis=0) % q

    def _key_switch(self, params, level, digits_ntt, key) -> np.ndarray:
        ctx = self.ring(params)
        ext = self._ext(params, level)
        acc = self._key_switch_ext(params, level, digits_ntt, key)
        return ctx.divide_round_last(ctx.intt(acc, ext), ext)

    def _rotate_dot_plain(self, a, steps, plains, keys):
        # Hoisted rotations with lazy mod-down: every rotated ciphertext stays
        # in NTT form over Q*P (c0 lifted as P*c0), is multiplied by its
        # diagonal and accumulated; one mod-down and one rescale at the end.
        params = a.params
        ctx = self.ring(params)
        ext = self._ext(params, a.level)
        q, qf = ctx._mods(ext, 1)
        p_mod = np.array([params.special_prime % params.primes[j] for j in ext], dtype=U64)
        c0 = ctx.mul_scalar(ctx.ntt(a.data[0], self._limbs(a)), p_mod[:-1], self._limbs(a))
        c0 = np.concatenate([c0, np.zeros((1, params.ring_degree), dtype=U64)])
        c1 = None
        digits = None
        acc = np.zeros((2, len(ext), params.ring_degree), dtype=U64)
        for r, p in zip(steps, plains):
            pt = self._plain_ntt(p, extended=True)
            if r == 0:
                if c1 is None:
                    c1 = ctx.mul_scalar(ctx.ntt(a.data[1], self._limbs(a)), p_mod[:-1], self._limbs(a))
                    c1 = np.concatenate([c1, np.zeros((1, params.ring_degree), dtype=U64)])
                term = np.stack([c0, c1])
            else:
                if digits is None:
                    digits = self._digits(params, a.level, a.data[1])
                g = pow(5, r, 2 * params.ring_degree)
                term = self._key_switch_ext(params, a.level, ctx.automorphism_ntt(digits, g),
                                            self._level_key(keys, r, a.level))
                term[0] = addmod_arr(term[0], ctx.automorphism_ntt(c0, g), q)
            acc = addmod_arr(acc, mulmod(term, pt[None], q, qf), q)
        data = ctx.divide_round_last(ctx.intt(acc, ext), ext)
        return self._rescale(a, data)

    def _rotate_many(self, a, steps, keys):
        params = a.params
        ctx = self.ring(params)
        limbs = self._limbs(a)
        digits = None
        out = []
        for r in steps:
            if r == 0:
                out.append(a.replace(a.data.copy()))
                continue
            if digits is None:
                digits = self._digits(params, a.level, a.data[1])
            g = pow(5, r, 2 * params.ring_degree)
            ks = self._key_switch(params, a.level, ctx.automorphism_ntt(digits, g),
                                  self._level_key(keys, r, a.level))
            ks[0] = ctx.add(ks[0], ctx.automorphism(a.data[0], g, limbs), limbs)
            out.append(a.replace(ks))
        return out

    def _drop(self, a, level):
        # Keep limbs 0..level+1, multiply by an integer that lands the scale on
        # the canonical one for ``level`` after dividing by q_{level+1}.
        params = a.params
        ctx = self.ring(params)
        keep = list(range(level + 2))
        corr = int(round(params.level_scales[level] * params.primes[level + 1] / a.scale))
        data = ctx.mul_scalar(a.data[:, : level + 2], self._int_scalars(params, corr, keep), keep)
        return a.replace(ctx.divide_round_last(data, keep), level)

    # -- wire format ------------------------------------------------------------
    def _payload_bytes(self, ct):
        return np.ascontiguousarray(ct.data, dtype="<u8").tobytes()

    def _payload_from(self, raw, level, size, length, period, keys):
        params = keys.params if isinstance(keys, KeySet) else keys
        n = params.ring_degree
        want = 8 * size * (level + 1) * n
        if len(raw) != want:
            raise SerializationError(f"payload has {len(raw)} bytes, expected {want}")
        data = np.frombuffer(raw, dtype="<u8").astype(U64).reshape(size, level + 1, n)
        if np.any(data >= np.array(params.primes[: level + 1], dtype=U64)[None, :, None]):
            raise SerializationError("limb value out of range")
        return data

