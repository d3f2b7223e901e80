import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from enchvac import he
from enchvac.enc_nn import (
    ActivationPoly,
    DimensionMismatch,
    concat_cts,
    diag_matvec,
    enc_two_layer_forward,
    fit_activation_coeffs,
    forward_levels,
    get_activation,
    load_weights,
    pack_diagonals,
    plain_two_layer_forward,
    poly_activation,
    save_weights,
)

# Frozen from an independent oracle: numpy Polynomial.fit on the full
# degree-5 basis over 2001 points in [-4, 4].
ORACLE_SIGMOID_ERR = 0.01052804477542486
ORACLE_TANH_ERR = 0.1215055593814327
ORACLE_SIGMOID_COEFFS = [0.5, 2.39521351e-01, 0.0, -1.32857932e-02, 0.0, 3.75729680e-04]
ORACLE_TANH_COEFFS = [0.0, 7.65018815e-01, 0.0, -7.34615814e-02, 0.0, 2.69755938e-03]


@pytest.fixture(scope="module")
def deep_keys():
    return he.keygen(he.get_preset("deep-6"), 11)


@pytest.fixture(scope="module")
def deep_ref():
    return he.keygen(he.get_preset("deep-6"), 11, backend="reference")


@pytest.fixture(params=["reference", "rlwe"])
def keys(request, deep_keys, deep_ref):
    return deep_keys if request.param == "rlwe" else deep_ref


# -- packing -----------------------------------------------------------------

def test_pack_examples():
    pm = pack_diagonals([[1, 2], [3, 4]])
    np.testing.assert_array_equal(pm.diagonals, [[1, 4], [2, 3]])
    pm = pack_diagonals(np.eye(3))
    np.testing.assert_array_equal(pm.diagonals, [[1, 1, 1], [0, 0, 0], [0, 0, 0]])
    with pytest.raises(DimensionMismatch):
        pack_diagonals(np.zeros((0, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.data())
def test_pack_unpack_bijection(d, n, data):
    W = data.draw(arrays(np.float64, (d, n), elements=st.floats(-1e6, 1e6)))
    pm = pack_diagonals(W)
    assert pm.n_pad == max(d, n)
    np.testing.assert_array_equal(pm.unpack(), W)


def test_weight_file_roundtrip(tmp_path):
    W = np.random.default_rng(0).normal(size=(3, 5))
    save_weights(W, tmp_path / "w.bin")
    np.testing.assert_array_equal(load_weights(tmp_path / "w.bin"), W)
    (tmp_path / "bad.bin").write_bytes(b"\x01\x00")
    with pytest.raises(ValueError):
        load_weights(tmp_path / "bad.bin")


# -- matvec --------------------------------------------------------------------

def test_matvec_examples(keys):
    ct = he.encrypt([5, 6], keys)
    y = diag_matvec(pack_diagonals([[1, 2], [3, 4]]), ct, keys)
    assert y.level == ct.level - 1
    np.testing.assert_allclose(he.decrypt(y, keys), [17, 39], atol=1e-2)
    ct = he.encrypt([7, 8, 9], keys)
    np.testing.assert_allclose(he.decrypt(diag_matvec(pack_diagonals(np.eye(3)), ct, keys), keys),
                               [7, 8, 9], atol=1e-2)


@pytest.mark.parametrize("shape", [(8, 8), (16, 8), (4, 16), (1, 16), (5, 3), (16, 9), (5, 15), (16, 13)])
def test_matvec_random(keys, shape):
    rng = np.random.default_rng(sum(shape))
    W = rng.uniform(-1, 1, shape)
    x = rng.uniform(-2, 2, shape[1])
    y = diag_matvec(pack_diagonals(W), he.encrypt(x, keys), keys)
    assert y.length == shape[0]
    np.testing.assert_allclose(he.decrypt(y, keys), W @ x, atol=1e-2)


def test_matvec_linearity(deep_keys):
    rng = np.random.default_rng(5)
    W = rng.uniform(-1, 1, (8, 8))
    a, b = rng.uniform(-2, 2, (2, 8))
    pm = pack_diagonals(W)
    ca, cb = he.encrypt(a, deep_keys), he.encrypt(b, deep_keys)
    single = np.abs(he.decrypt(diag_matvec(pm, ca, deep_keys), deep_keys) - W @ a).max()
    both = he.decrypt(diag_matvec(pm, he.add(ca, cb), deep_keys), deep_keys)
    tol = max(2 * single, 1e-6)
    assert np.abs(both - (W @ a + W @ b)).max() <= max(tol, 1e-2)


def test_matvec_errors(keys):
    pm = pack_diagonals(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        diag_matvec(pm, he.encrypt([1.0, 2.0], keys), keys)
    low = he.drop_to(he.encrypt([1.0, 2.0, 3.0], keys), 0)
    with pytest.raises(he.DepthExhausted):
        diag_matvec(pm, low, keys)


# -- concat ---------------------------------------------------------------------

def test_concat_examples(keys):
    out = concat_cts(he.encrypt([1, 2], keys), he.encrypt([3], keys), keys)
    assert out.length == 3
    np.testing.assert_allclose(he.decrypt(out, keys), [1, 2, 3], atol=1e-2)
    out = concat_cts(he.encrypt([4, 5], keys), None, keys)
    np.testing.assert_allclose(he.decrypt(out, keys), [4, 5], atol=1e-2)


def test_concat_random(keys):
    rng = np.random.default_rng(3)
    a, b = rng.uniform(-5, 5, 8), rng.uniform(-5, 5, 4)
    ca, cb = he.encrypt(a, keys), he.encrypt(b, keys)
    out = concat_cts(ca, cb, keys)
    assert out.level == ca.level - 1
    assert out.period == 16
    np.testing.assert_allclose(he.decrypt(out, keys), np.concatenate([a, b]), atol=1e-2)
    # the result feeds straight into a padded layer
    W = rng.uniform(-1, 1, (16, 12))
    y = diag_matvec(pack_diagonals(W), out, keys)
    np.testing.assert_allclose(he.decrypt(y, keys), W @ np.concatenate([a, b]), atol=1e-2)


def test_concat_odd_lengths(keys):
    # periods like 21 need shifts beyond the single-step rotation keys
    rng = np.random.default_rng(4)
    for n, m in [(3, 7), (8, 5), (7, 8), (5, 6)]:
        a, b = rng.uniform(-5, 5, n), rng.uniform(-5, 5, m)
        out = concat_cts(he.encrypt(a, keys), he.encrypt(b, keys), keys)
        assert out.length == n + m
        np.testing.assert_allclose(he.decrypt(out, keys), np.concatenate([a, b]), atol=1e-2)


def test_concat_overflow(keys):
    big = he.encrypt(np.ones(3000), keys)
    with pytest.raises(he.SlotMismatch):
        concat_cts(big, he.encrypt(np.ones(7), keys), keys)


# -- activations ------------------------------------------------------------------

def test_fit_matches_oracle():
    sig = fit_activation_coeffs("sigmoid", (-4, 4), 5)
    tanh = fit_activation_coeffs("tanh", (-4, 4), 5)
    assert sig.max_error == pytest.approx(ORACLE_SIGMOID_ERR, abs=1e-9)
    assert tanh.max_error == pytest.approx(ORACLE_TANH_ERR, abs=1e-9)
    np.testing.assert_allclose(sig.coeffs, ORACLE_SIGMOID_COEFFS, atol=1e-9)
    np.testing.assert_allclose(tanh.coeffs, ORACLE_TANH_COEFFS, atol=1e-9)
    assert tanh.coeffs[0] == tanh.coeffs[2] == tanh.coeffs[4] == 0.0
    assert sig.max_error <= 0.05


def test_fit_unconstrained_matches_symmetric():
    free = fit_activation_coeffs("tanh", (-4, 4), 5, symmetric=False)
    assert max(abs(free.coeffs[k]) for k in (0, 2, 4)) < 1e-10
    assert free.max_error == pytest.approx(ORACLE_TANH_ERR, abs=1e-9)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_activation_coeffs("sigmoid", (1, 1))
    with pytest.raises(ValueError):
        fit_activation_coeffs("relu")
    with pytest.raises(ValueError):
        fit_activation_coeffs("tanh", degree=6)


def test_fit_error_on_coarse_grid():
    sig = get_activation("sigmoid")
    g = np.linspace(-4, 4, 101)
    assert np.abs(sig(g) - sig.reference(g)).max() == pytest.approx(sig.max_error, abs=1e-6)


def test_fixed_coefficient_presets():
    ps = get_activation("paper-sigmoid")
    assert ps(0.0) == 0.5
    assert ps(1.0) == pytest.approx(-0.03, abs=1e-12)
    assert get_activation("paper-tanh")(1.0) == pytest.approx(0.768, abs=1e-12)
    with pytest.raises(ValueError):
        ActivationPoly((1, 2, 3, 4, 5, 6, 7))


@pytest.mark.parametrize("name", ["sigmoid", "tanh", "paper-sigmoid", "paper-tanh"])
def test_poly_activation(keys, name):
    act = get_activation(name)
    v = np.random.default_rng(1).uniform(-4, 4, 16)
    v[0] = 0.0
    ct = he.encrypt(v, keys)
    out = poly_activation(ct, act, keys)
    assert out.level == ct.level - 3
    got = he.decrypt(out, keys)
    np.testing.assert_allclose(got, act(v), atol=1e-2)


def test_poly_activation_degenerate_coeffs(keys):
    # a5 = 0 and pure constants both keep the 3-level ledger
    for coeffs in [(0.1, 0.2, 0.3, 0.4, 0.5, 0.0), (2.0,), (0.0, 1.0)]:
        act = ActivationPoly(coeffs, func="tanh")
        v = np.linspace(-1, 1, 5)
        ct = he.encrypt(v, keys)
        out = poly_activation(ct, act, keys)
        assert out.level == ct.level - 3
        np.testing.assert_allclose(he.decrypt(out, keys), act(v), atol=1e-2)


def test_poly_activation_depth(deep_keys):
    ct = he.encrypt([0.5], deep_keys, level=2)
    with pytest.raises(he.DepthExhausted):
        poly_activation(ct, get_activation("sigmoid"), deep_keys)


# -- forward ----------------------------------------------------------------------

def test_forward_levels_and_equivalence(keys):
    rng = np.random.default_rng(8)
    W1 = rng.uniform(-0.5, 0.5, (16, 8))
    W2 = rng.uniform(-0.5, 0.5, (4, 16))
    x = rng.uniform(-1, 1, 8)
    gain = np.full(4, 1.2)
    ct = he.encrypt(x, keys)
    out = enc_two_layer_forward(W1, W2, get_activation("tanh"), ct, gain, keys)
    assert ct.level - out.level == forward_levels() == 5
    ref = plain_two_layer_forward(W1, W2, get_activation("tanh"), x, gain)
    np.testing.assert_allclose(he.decrypt(out, keys), ref, atol=5e-2)


def test_forward_zero_input(keys):
    out = enc_two_layer_forward(np.eye(4), np.eye(4), get_activation("tanh"), he.encrypt(np.zeros(4), keys),
                                None, keys)
    np.testing.assert_allclose(he.decrypt(out, keys), np.zeros(4), atol=1e-2)


def test_forward_depth3_preset():
    keys = he.keygen(he.get_preset("paper-2024"), 1, backend="reference")
    with pytest.raises(he.DepthExhausted):
        enc_two_layer_forward(np.eye(2), np.eye(2), get_activation("tanh"), he.encrypt([0.1, 0.2], keys),
                              None, keys)


def test_forward_dimension_mismatch(deep_ref):
    with pytest.raises(DimensionMismatch):
        enc_two_layer_forward(np.ones((3, 2)), np.ones((1, 4)), get_activation("tanh"),
                              he.encrypt([0.1, 0.2], deep_ref), None, deep_ref)


def test_final_sigmoid_range():
    # plaintext scan: fitted sigmoid stays within [-0.1, 1.1] on its interval
    sig = get_activation("sigmoid")
    g = np.linspace(-4, 4, 4001)
    u_max = 1.2
    vals = u_max * sig(g)
    assert vals.min() >= -0.1 * u_max and vals.max() <= 1.1 * u_max
    rng = np.random.default_rng(2)
    W1, W2 = rng.uniform(-0.3, 0.3, (16, 8)), rng.uniform(-0.3, 0.3, (4, 16))
    for _ in range(20):
        out = plain_two_layer_forward(W1, W2, get_activation("tanh"), rng.uniform(-2, 2, 8),
                                      np.full(4, u_max), final_act=sig)
        assert np.all(out >= -0.1 * u_max) and np.all(out <= 1.1 * u_max)


def test_forward_with_final_activation(deep_ref):
    rng = np.random.default_rng(4)
    W1, W2 = rng.uniform(-0.3, 0.3, (8, 4)), rng.uniform(-0.3, 0.3, (2, 8))
    x = rng.uniform(-1, 1, 4)
    keys = he.keygen(he.HeParams(64, (40,) + (26,) * 8 + (40,), 26), 1, backend="reference")
    ct = he.encrypt(x, keys)
    out = enc_two_layer_forward(W1, W2, get_activation("tanh"), ct, [0.3, 0.3], keys,
                                final_act=get_activation("sigmoid"))
    assert ct.level - out.level == 8
    ref = plain_two_layer_forward(W1, W2, get_activation("tanh"), x, [0.3, 0.3],
                                  final_act=get_activation("sigmoid"))
    np.testing.assert_allclose(he.decrypt(out, keys), ref, atol=1e-6)
    with pytest.raises(ValueError):
        enc_two_layer_forward(W1, W2, get_activation("tanh"), ct, [0.3, 0.4], keys,
                              final_act=get_activation("sigmoid"))
