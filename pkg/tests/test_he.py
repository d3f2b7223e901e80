import numpy as np
import pytest

from enchvac import he
from enchvac.he.core import HEADER

P2024 = he.get_preset("paper-2024")
TOY = he.HeParams(8, (30, 20, 30), 20, frozenset({1, 2, 3}))


@pytest.fixture(scope="module")
def keys2024():
    return he.keygen(P2024, 7)


@pytest.fixture(scope="module")
def ref_keys():
    return he.keygen(P2024, 7, backend="reference")


@pytest.fixture(params=["reference", "rlwe"])
def any_keys(request, keys2024, ref_keys):
    return keys2024 if request.param == "rlwe" else ref_keys


def close(ct, keys, expected, tol):
    got = he.decrypt(ct, keys)
    np.testing.assert_allclose(got, expected, atol=tol, rtol=0)


# -- params ------------------------------------------------------------------

def test_param_validation():
    with pytest.raises(he.InvalidParams):
        he.HeParams(12, (30, 20, 30), 20)
    with pytest.raises(he.InvalidParams):
        he.HeParams(4, (30, 20, 30), 20)
    with pytest.raises(he.InvalidParams):
        he.HeParams(8, (), 20)
    with pytest.raises(he.InvalidParams):
        he.HeParams(8, (30, 20, 30), 25)


def test_depths_and_chain():
    assert P2024.depth == 3
    assert TOY.depth == 1
    assert he.get_preset("deep-6").depth == 6
    primes = P2024.primes
    assert len(primes) == 5
    for p, bits in zip(primes, P2024.modulus_bits):
        assert p.bit_length() == bits
        assert p % (2 * P2024.ring_degree) == 1
    # canonical scales stay close to 2**scale_bits
    for s in P2024.level_scales:
        assert abs(np.log2(s) - P2024.scale_bits) < 0.2


def test_keygen_deterministic():
    k1 = he.keygen(TOY, 3)
    k2 = he.keygen(TOY, 3)
    assert np.array_equal(k1.public_key, k2.public_key)
    assert np.array_equal(k1.relin_key, k2.relin_key)
    assert all(np.array_equal(k1.galois_keys[s], k2.galois_keys[s]) for s in k1.galois_keys)
    c1 = he.serialize(he.encrypt([1.0, 2.0], k1))
    c2 = he.serialize(he.encrypt([1.0, 2.0], k2))
    assert c1 == c2
    assert set(k1.galois_keys) == {1, 2, 3}


def test_toy_single_multiplication():
    keys = he.keygen(TOY, 1)
    a = he.encrypt([1.5, -2.0], keys)
    b = he.mul(a, a, keys)
    assert b.level == 0
    close(b, keys, [2.25, 4.0], 1e-2)
    with pytest.raises(he.DepthExhausted):
        he.mul(b, b, keys)


# -- encrypt / decrypt -----------------------------------------------------------

def test_roundtrip_2024(keys2024):
    close(he.encrypt([1.0, 2.0, 3.0], keys2024), keys2024, [1.0, 2.0, 3.0], 1e-3)


def test_zero_roundtrip(any_keys):
    eps = any_keys.backend.measure_epsilon(any_keys, trials=5)
    close(he.encrypt(np.zeros(6), any_keys), any_keys, np.zeros(6), max(eps, 1e-9) * 2)


def test_reference_noise_tiny(ref_keys):
    got = he.decrypt(he.encrypt([0.5], ref_keys), ref_keys)
    assert abs(got[0] - 0.5) < 1e-9


def test_measured_epsilon(keys2024):
    eps = keys2024.backend.measure_epsilon(keys2024, trials=30)
    assert 0 < eps <= 1e-3


def test_encrypt_errors(any_keys):
    with pytest.raises(he.SlotMismatch):
        he.encrypt(np.zeros(P2024.slot_count + 1), any_keys)
    with pytest.raises(ValueError):
        he.encrypt([1e9], any_keys)
    with pytest.raises(ValueError):
        he.encrypt([np.nan], any_keys)


def test_mismatched_key(keys2024):
    other = he.keygen(P2024, 8)
    ct = he.encrypt([1.0], keys2024)
    with pytest.raises(he.KeyMismatch):
        he.decrypt(ct, other)


# -- arithmetic ------------------------------------------------------------------

def test_add_and_identity(any_keys):
    a = he.encrypt([1, 2], any_keys)
    b = he.encrypt([3, 4], any_keys)
    close(he.add(a, b), any_keys, [4, 6], 1e-3)
    close(he.add(a, he.encrypt([0, 0], any_keys)), any_keys, [1, 2], 1e-3)
    close(he.sub(a, b), any_keys, [-2, -2], 1e-3)


def test_level_alignment(any_keys):
    a = he.encrypt([1.0], any_keys, level=3)
    b = he.encrypt([1.0], any_keys, level=2)
    s = he.add(a, b)
    assert s.level == 2
    close(s, any_keys, [2.0], 1e-3)


def test_mul(any_keys):
    a = he.encrypt([2, -1], any_keys)
    b = he.encrypt([3, 5], any_keys)
    c = he.mul(a, b, any_keys)
    assert c.level == a.level - 1
    close(c, any_keys, [6, -5], 1e-2)
    v = [0.3, -4.0, 7.5]
    close(he.mul(he.encrypt(v, any_keys), he.encrypt(np.ones(3), any_keys), any_keys), any_keys, v, 1e-2)


def test_mul_chain_depth(any_keys):
    x = he.encrypt([1.1, -0.9], any_keys)
    acc = x
    for _ in range(3):
        acc = he.mul(acc, x, any_keys)
    assert acc.level == 0
    close(acc, any_keys, np.array([1.1, -0.9]) ** 4, 1e-2)
    with pytest.raises(he.DepthExhausted):
        he.mul(acc, x, any_keys)


def test_mul_plain(any_keys):
    a = he.encrypt([1, 2], any_keys)
    c = he.mul_plain(a, [10, 10], any_keys)
    assert c.level == a.level - 1
    close(c, any_keys, [10, 20], 1e-2)
    close(he.mul_plain(a, [0, 0], any_keys), any_keys, [0, 0], 1e-3)
    close(he.mul_plain(a, [1, 0], any_keys), any_keys, [1, 0], 1e-3)


def test_constants(any_keys):
    a = he.encrypt([1.0, -2.0], any_keys)
    c = he.mul_const(a, -0.25)
    assert c.level == a.level - 1
    close(c, any_keys, [-0.25, 0.5], 1e-3)
    close(he.add_const(a, 1.5), any_keys, [2.5, -0.5], 1e-3)


def test_rotate(any_keys):
    a = he.encrypt([1.0, 2.0, 3.0], any_keys)
    r = he.rotate(a, 1, any_keys)
    assert r.level == a.level
    close(r, any_keys, [2.0, 3.0, 1.0], 1e-3)
    close(he.rotate(a, 0, any_keys), any_keys, [1, 2, 3], 1e-3)
    close(he.rotate(r, 2, any_keys), any_keys, [1, 2, 3], 1e-3)
    close(he.rotate(a, -1, any_keys), any_keys, [3, 1, 2], 1e-3)


def test_rotate_missing_key(any_keys):
    a = he.encrypt(np.arange(40.0), any_keys)
    with pytest.raises(he.MissingGaloisKey):
        he.rotate(a, 17, any_keys)


def test_rotate_many_matches_single(keys2024):
    v = np.arange(8.0)
    a = he.encrypt(v, keys2024)
    many = keys2024.backend.rotate_many(a, [1, 3, 5], keys2024)
    for j, ct in zip([1, 3, 5], many):
        close(ct, keys2024, np.roll(v, -j), 1e-3)


def test_period_change(any_keys):
    a = he.encrypt([1.0, 2.0], any_keys)
    b = any_keys.backend.with_period(a, 4)
    close(he.rotate(b, 1, any_keys), any_keys, [2.0, 1.0], 1e-3)
    with pytest.raises(he.SlotMismatch):
        any_keys.backend.with_period(a, 3)
    with pytest.raises(he.SlotMismatch):
        he.add(a, b)


# -- serialization ---------------------------------------------------------------

def test_byte_size_formula(keys2024):
    ct = he.encrypt([1.0, 2.0], keys2024)
    assert HEADER.size == 21
    assert he.byte_size(ct) == 21 + 2 * 8192 * 4 * 8
    assert len(he.serialize(ct)) == he.byte_size(ct)
    low = he.drop_to(ct, 1)
    assert he.byte_size(low) < he.byte_size(he.drop_to(ct, 2))


def test_serialize_roundtrip(any_keys):
    ct = he.mul(he.encrypt([1.5, -2.5], any_keys), he.encrypt([2.0, 2.0], any_keys), any_keys)
    back = he.deserialize(he.serialize(ct), any_keys)
    assert back.level == ct.level and back.period == ct.period
    np.testing.assert_array_equal(he.decrypt(back, any_keys), he.decrypt(ct, any_keys))


def test_serialize_errors(keys2024):
    blob = he.serialize(he.encrypt([1.0], keys2024))
    with pytest.raises(he.SerializationError):
        he.deserialize(b"XXXX" + blob[4:], keys2024)
    with pytest.raises(he.SerializationError):
        he.deserialize(blob[:-8], keys2024)
    with pytest.raises(he.SerializationError):
        he.deserialize(blob[:10], keys2024)
    bad_version = blob[:4] + (99).to_bytes(2, "little") + blob[6:]
    with pytest.raises(he.SerializationError):
        he.deserialize(bad_version, keys2024)


# -- properties ------------------------------------------------------------------

def _random_program(rng, n_inputs=3, n_ops=6, bound=60.0):
    """Ops over registers whose clear values stay within ``bound``."""
    vals = [rng.uniform(-10, 10, 8) for _ in range(n_inputs)]
    levels = [3] * n_inputs
    prog = []
    for _ in range(n_ops):
        kind = rng.choice(["add", "sub", "mul", "mul_plain", "rotate", "add_const"])
        i, j = rng.integers(len(vals), size=2)
        if kind in ("add", "sub"):
            v = vals[i] + vals[j] if kind == "add" else vals[i] - vals[j]
            lvl = min(levels[i], levels[j])
            arg = None
        elif kind == "mul":
            v = vals[i] * vals[j]
            lvl = min(levels[i], levels[j]) - 1
            arg = None
        elif kind == "mul_plain":
            arg = rng.uniform(-1, 1, 8)
            v = vals[i] * arg
            lvl = levels[i] - 1
        elif kind == "rotate":
            arg = int(rng.integers(1, 8))
            v = np.roll(vals[i], -arg)
            lvl = levels[i]
        else:
            arg = float(rng.uniform(-5, 5))
            v = vals[i] + arg
            lvl = levels[i]
        if lvl < 0 or np.abs(v).max() > bound:
            continue
        prog.append((kind, int(i), int(j), arg))
        vals.append(v)
        levels.append(lvl)
    return vals[:n_inputs], prog, vals[-1]


def _run(prog, inputs, keys):
    regs = [he.encrypt(v, keys) for v in inputs]
    for kind, i, j, arg in prog:
        a, b = regs[i], regs[j]
        if kind == "add":
            regs.append(he.add(a, b))
        elif kind == "sub":
            regs.append(he.sub(a, b))
        elif kind == "mul":
            regs.append(he.mul(a, b, keys))
        elif kind == "mul_plain":
            regs.append(he.mul_plain(a, arg, keys))
        elif kind == "rotate":
            regs.append(he.rotate(a, arg, keys))
        else:
            regs.append(he.add_const(a, arg))
    return he.decrypt(regs[-1], keys)


def test_backend_equivalence_and_homomorphism(keys2024, ref_keys):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        inputs, prog, expected = _random_program(rng)
        got_rlwe = _run(prog, inputs, keys2024)
        got_ref = _run(prog, inputs, ref_keys)
        worst = max(worst, np.abs(got_rlwe - got_ref).max(), np.abs(got_rlwe - expected).max())
    assert worst <= 1e-2, worst


def test_level_ledger(any_keys):
    a = he.encrypt([1.0, 2.0], any_keys)
    assert he.add(a, a).level == a.level
    assert he.rotate(a, 1, any_keys).level == a.level
    assert he.mul(a, a, any_keys).level == a.level - 1
    assert he.mul_plain(a, [1, 1], any_keys).level == a.level - 1
