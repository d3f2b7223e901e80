"""RNS polynomial arithmetic in Z_q[X]/(X^N + 1), vectorised over limbs.

Polynomials are uint64 arrays whose second-to-last axis indexes RNS limbs
and last axis indexes coefficients (or NTT evaluations).  All primes are
below 2**50, so products are reduced with a float64 quotient estimate
followed by an exact wrapping correction.
"""
from __future__ import annotations

import numpy as np

U64 = np.uint64


def mulmod(a, b, q, qf):
    """(a * b) mod q elementwise for a, b < q < 2**50.

    ``q`` (uint64) and ``qf`` (float64) must broadcast against a and b.
    """
    quot = np.floor(a.astype(np.float64) * b.astype(np.float64) / qf).astype(U64)
    r = (a * b - quot * q).view(np.int64)
    qi = q.view(np.int64) if isinstance(q, np.ndarray) else np.int64(q)
    r = np.where(r < 0, r + qi, r)
    r = np.where(r >= qi, r - qi, r)
    return r.view(U64)


def addmod(a, b, q):
    s = a + b
    return np.where(s >= q, s - q, s)


def submod(a, b, q):
    return np.where(a >= b, a - b, a + q - b)


def _bit_reverse(n_bits: int) -> np.ndarray:
    idx = np.arange(1 << n_bits)
    rev = np.zeros_like(idx)
    for b in range(n_bits):
        rev |= ((idx >> b) & 1) << (n_bits - 1 - b)
    return rev


def _primitive_root_2n(q: int, n: int) -> int:
    """Smallest-generator primitive 2n-th root of unity modulo prime q."""
    order = 2 * n
    cofactor = (q - 1) // order
    for g in range(2, q):
        psi = pow(g, cofactor, q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ValueError(f"no primitive {order}-th root mod {q}")


class RingContext:
    """Precomputed NTT tables for a list of NTT-friendly primes."""

    def __init__(self, n: int, primes):
        self.n = n
        self.log_n = n.bit_length() - 1
        self.primes = tuple(int(p) for p in primes)
        k = len(self.primes)
        self.q = np.array(self.primes, dtype=U64)
        self.qf = self.q.astype(np.float64)
        rev = _bit_reverse(self.log_n)
        self.psi_rev = np.zeros((k, n), dtype=U64)
        self.psi_inv_rev = np.zeros((k, n), dtype=U64)
        self.n_inv = np.zeros(k, dtype=U64)
        for i, q in enumerate(self.primes):
            psi = _primitive_root_2n(q, n)
            psi_inv = pow(psi, q - 2, q)
            pw = np.array([pow(psi, int(e), q) for e in range(n)], dtype=U64)
            pw_inv = np.array([pow(psi_inv, int(e), q) for e in range(n)], dtype=U64)
            self.psi_rev[i] = pw[rev]
            self.psi_inv_rev[i] = pw_inv[rev]
            self.n_inv[i] = pow(n, q - 2, q)
        # NTT output slot j holds the evaluation at psi^(2*rev(j)+1).
        self.eval_exponent = 2 * rev + 1
        self._exp_to_slot = np.zeros(2 * n, dtype=np.int64)
        self._exp_to_slot[self.eval_exponent] = np.arange(n)
        self._perm_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    # -- helpers -----------------------------------------------------------
    def _mods(self, limbs, extra_dims: int):
        idx = np.asarray(limbs)
        shape = (len(idx),) + (1,) * extra_dims
        return self.q[idx].reshape(shape), self.qf[idx].reshape(shape)

    def reduce_signed(self, values: np.ndarray, limbs) -> np.ndarray:
        """Map int64 coefficients (shape (..., N)) into every limb."""
        q, _ = self._mods(limbs, 1)
        v = values.astype(np.int64)[..., None, :]
        return np.mod(v, q.view(np.int64)).astype(U64)

    # -- transforms --------------------------------------------------------
    def ntt(self, a: np.ndarray, limbs) -> np.ndarray:
        """Forward negacyclic NTT of ``a`` with shape (..., len(limbs), N)."""
        a = np.array(a, dtype=U64, copy=True)
        lead = a.shape[:-2]
        k = a.shape[-2]
        n = self.n
        idx = np.asarray(limbs)
        q = self.q[idx].reshape((k, 1, 1))
        qf = self.qf[idx].reshape((k, 1, 1))
        psi = self.psi_rev[idx]
        t, m = n, 1
        while m < n:
            t //= 2
            v = a.reshape(lead + (k, m, 2 * t))
            u_half = v[..., :t]
            w = psi[:, m:2 * m].reshape((k, m, 1))
            vt = mulmod(v[..., t:], w, q, qf)
            lo = addmod(u_half, vt, q)
            hi = submod(u_half, vt, q)
            v[..., :t] = lo
            v[..., t:] = hi
            m *= 2
        return a

    def intt(self, a: np.ndarray, limbs) -> np.ndarray:
        a = np.array(a, dtype=U64, copy=True)
        lead = a.shape[:-2]
        k = a.shape[-2]
        n = self.n
        idx = np.asarray(limbs)
        q = self.q[idx].reshape((k, 1, 1))
        qf = self.qf[idx].reshape((k, 1, 1))
        psi = self.psi_inv_rev[idx]
        t, m = 1, n
        while m > 1:
            h = m // 2
            v = a.reshape(lead + (k, h, 2 * t))
            x = v[..., :t].copy()
            y = v[..., t:]
            w = psi[:, h:2 * h].reshape((k, h, 1))
            v[..., :t] = addmod(x, y, q)
            v[..., t:] = mulmod(submod(x, y, q), w, q, qf)
            t *= 2
            m = h
        q2 = self.q[idx].reshape((k, 1))
        return mulmod(a, self.n_inv[idx].reshape((k, 1)), q2, q2.astype(np.float64))

    # -- pointwise ---------------------------------------------------------
    def mul(self, a, b, limbs):
        q, qf = self._mods(limbs, 1)
        return mulmod(a, b, q, qf)

    def add(self, a, b, limbs):
        q, _ = self._mods(limbs, 1)
        return addmod(a, b, q)

    def sub(self, a, b, limbs):
        q, _ = self._mods(limbs, 1)
        return submod(a, b, q)

    def neg(self, a, limbs):
        q, _ = self._mods(limbs, 1)
        return np.where(a == 0, a, q - a)

    def mul_scalar(self, a, scalars, limbs):
        """Multiply each limb by its own integer (already reduced) scalar."""
        q, qf = self._mods(limbs, 1)
        s = np.asarray(scalars, dtype=U64).reshape(q.shape)
        return mulmod(a, s, q, qf)

    # -- automorphisms -----------------------------------------------------
    def _perm(self, g: int):
        g %= 2 * self.n
        if g not in self._perm_cache:
            n = self.n
            i = np.arange(n)
            e = (i * g) % (2 * n)
            dest = e % n
            neg = e >= n
            # NTT domain: slot with exponent e reads old slot with exponent e*g.
            src_eval = self._exp_to_slot[(self.eval_exponent * g) % (2 * n)]
            self._perm_cache[g] = (dest, neg, src_eval)
        return self._perm_cache[g]

    def automorphism(self, a, g: int, limbs):
        """Apply X -> X^g in the coefficient domain."""
        dest, neg, _ = self._perm(g)
        q, _ = self._mods(limbs, 1)
        vals = np.where(neg, np.where(a == 0, a, q - a), a)
        out = np.empty_like(a)
        out[..., dest] = vals
        return out

    def automorphism_ntt(self, a, g: int):
        """Apply X -> X^g to NTT-domain data (a pure slot permutation)."""
        return a[..., self._perm(g)[2]]

    # -- rounding division by the last limb ---------------------------------
    def divide_round_last(self, a: np.ndarray, limbs) -> np.ndarray:
        """Coefficient-domain exact-rounding division by the prime of the last limb.

        ``a`` has shape (..., k, N) over ``limbs``; returns (..., k-1, N).
        """
        limbs = list(limbs)
        last = limbs[-1]
        p = self.primes[last]
        top = a[..., -1, :].view(np.int64)
        centered = np.where(top > p // 2, top - p, top)
        rest = limbs[:-1]
        q, qf = self._mods(rest, 1)
        corr = np.mod(centered[..., None, :], q.view(np.int64)).astype(U64)
        diff = submod(a[..., :-1, :], corr, q)
        inv = np.array([pow(p, self.primes[j] - 2, self.primes[j]) for j in rest], dtype=U64)
        return mulmod(diff, inv.reshape(q.shape), q, qf)
