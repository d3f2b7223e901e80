import math

import numpy as np
import pytest

from enchvac import he
from enchvac.enc_nn import DimensionMismatch, get_activation
from enchvac.grhdp import (
    Batch,
    ControllerWeights,
    GrhdpConfig,
    LOG_FIELDS,
    ToyPlant,
    actor_forward,
    actor_loss_grad,
    batch_targets,
    critic1_target,
    critic2_target,
    critic_forward,
    critic_loss_grad,
    external_reward,
    rollout,
    train_controller,
    update_actor,
    update_critic,
    write_log,
)


def cfg_for(n, m, **kw):
    return GrhdpConfig(D=np.eye(n), M=np.eye(m), **kw)


def random_weights(n, m, d, rng, scale=0.5, bias=0.3):
    w = ControllerWeights.init(n, m, d, rng.uniform(0.5, 2.0, m), rng)
    for k in ControllerWeights.PARAMS:
        arr = getattr(w, k)
        s = bias if k.startswith("b") else scale
        setattr(w, k, rng.uniform(-s, s, arr.shape) * (1 if k.startswith("b") else 2 / math.sqrt(arr.shape[-1])))
    return w


def zero_weights(n, m, d, u_max=1.0):
    return ControllerWeights(np.zeros((d, n)), np.zeros((m, d)), np.zeros((d, n + m)), np.zeros((1, d)),
                             np.zeros((d, n + m)), np.zeros((1, d)), np.full(m, u_max))


# -- reward -------------------------------------------------------------------

def test_reward_examples():
    cfg = GrhdpConfig(D=np.eye(2), M=[[1.0]])
    assert external_reward([1, -1], [2], cfg) == 6.0
    assert external_reward([0, 0], [0], cfg) == 0.0
    with pytest.raises(DimensionMismatch):
        external_reward([1, 2, 3], [0], cfg)


def test_reward_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, m = rng.integers(1, 6, size=2)
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(m, m))
        cfg = GrhdpConfig(D=A @ A.T + n * np.eye(n), M=B @ B.T + np.eye(m))
        x, u = rng.normal(size=n), rng.normal(size=m)
        ref = sum(x[i] * cfg.D[i, j] * x[j] for i in range(n) for j in range(n))
        ref += sum(u[i] * cfg.M[i, j] * u[j] for i in range(m) for j in range(m))
        r = external_reward(x, u, cfg)
        assert r == pytest.approx(ref, abs=1e-12 * max(1.0, abs(ref)))
        assert r >= 0


def test_config_validation():
    with pytest.raises(ValueError):
        GrhdpConfig(D=[[1.0, 2.0], [2.0, 1.0]], M=[[1.0]])
    with pytest.raises(ValueError):
        GrhdpConfig(D=np.eye(2), M=[[1.0]], alpha=1.5)
    with pytest.raises(ValueError):
        GrhdpConfig(D=np.eye(2), M=[[1.0]], actor_mode="encrypted")


# -- forwards -----------------------------------------------------------------

def test_actor_zero_weights_gives_half_u_max():
    w = zero_weights(3, 2, 4, u_max=0.3)
    for mode in ("plain", "poly"):
        np.testing.assert_allclose(actor_forward(np.array([5.0, -1.0, 2.0]), w, mode), [0.15, 0.15], atol=1e-12)


def test_actor_plain_bounded():
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = random_weights(4, 3, 5, rng, scale=5.0, bias=3.0)
        for x in rng.normal(scale=5.0, size=(10, 4)):
            for mode in ("plain", "poly"):
                u = actor_forward(x, w, mode)
                assert np.all(u >= 0) and np.all(u <= w.u_max)


def test_critic_zero_examples():
    rng = np.random.default_rng(2)
    w = random_weights(3, 2, 4, rng)
    w.c2g[:] = 0.0
    w.bc2g[:] = 0.0
    assert critic_forward(rng.normal(size=3), rng.normal(size=2), "G", w) == 0.0
    w = random_weights(3, 2, 4, rng)
    w.c1w[:] = 0.0
    w.bc1w[:] = 0.0
    w.bc2w[:] = 0.0
    assert critic_forward(rng.normal(size=3), rng.normal(size=2), "W", w) == pytest.approx(0.5 * w.c2w.sum(), abs=1e-15)


def test_critic_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n, m, d = 3, 2, 5
        w = random_weights(n, m, d, rng)
        x, u = rng.normal(size=n), rng.uniform(0, 1, size=m)
        z = list(x) + list(u / w.u_max)
        out = w.bc2w[0]
        for i in range(d):
            h = w.bc1w[i] + sum(w.c1w[i, j] * z[j] for j in range(n + m))
            out += w.c2w[0, i] / (1.0 + math.exp(-h))
        assert critic_forward(x, u, "W", w) == pytest.approx(out, abs=1e-10)


def test_actor_loop_oracle():
    rng = np.random.default_rng(4)
    n, m, d = 4, 2, 3
    w = random_weights(n, m, d, rng)
    x = rng.normal(size=n)
    r = [math.tanh(w.ba1[i] + sum(w.a1[i, j] * x[j] for j in range(n))) for i in range(d)]
    ref = [w.u_max[k] / (1 + math.exp(-(w.ba2[k] + sum(w.a2[k, i] * r[i] for i in range(d))))) for k in range(m)]
    np.testing.assert_allclose(actor_forward(x, w), ref, atol=1e-12)


def test_forward_dimension_errors():
    w = zero_weights(3, 2, 4)
    with pytest.raises(DimensionMismatch):
        actor_forward(np.zeros(4), w)
    with pytest.raises(DimensionMismatch):
        critic_forward(np.zeros(3), np.zeros(3), "G", w)
    with pytest.raises(ValueError):
        critic_forward(np.zeros(3), np.zeros(2), "Q", w)
    with pytest.raises(ValueError):
        actor_forward(np.zeros(3), w, "encrypted")


# -- targets --------------------------------------------------------------------

def test_targets_zero_critic_and_alpha_gamma():
    rng = np.random.default_rng(5)
    w = random_weights(2, 1, 3, rng)
    x, u, xn, un = rng.normal(size=2), rng.uniform(size=1), rng.normal(size=2), rng.uniform(size=1)
    cfg = cfg_for(2, 1)
    r = external_reward(x, u, cfg)
    z = w.copy()
    z.c2g[:] = 0
    z.bc2g[:] = 0
    z.c2w[:] = 0
    z.bc2w[:] = 0
    assert critic1_target(x, u, xn, un, z, cfg) == r
    assert critic2_target(x, u, xn, un, z, cfg) == r
    assert critic1_target(x, u, xn, un, w, cfg_for(2, 1, alpha=0.0)) == r
    assert critic2_target(x, u, xn, un, w, cfg_for(2, 1, alpha=0.0, gamma=0.0)) == r
    c0 = cfg_for(2, 1, gamma=0.0)
    assert critic2_target(x, u, xn, un, w, c0) == critic1_target(x, u, xn, un, w, c0)


def test_targets_composition_oracle():
    rng = np.random.default_rng(6)
    for _ in range(10):
        w = random_weights(3, 2, 4, rng)
        cfg = cfg_for(3, 2, alpha=rng.uniform(), gamma=rng.uniform())
        x, u, xn, un = rng.normal(size=3), rng.uniform(size=2), rng.normal(size=3), rng.uniform(size=2)
        g = critic_forward(xn, un, "G", w)
        v = critic_forward(xn, un, "W", w)
        r = external_reward(x, u, cfg)
        assert critic1_target(x, u, xn, un, w, cfg) == pytest.approx(r + cfg.alpha * g, abs=1e-12)
        assert critic2_target(x, u, xn, un, w, cfg) == pytest.approx(
            r + cfg.alpha * g + cfg.gamma * v, abs=1e-12)


def test_batch_targets_match_scalar():
    rng = np.random.default_rng(7)
    w = random_weights(3, 2, 4, rng)
    cfg = cfg_for(3, 2, actor_mode="plain")
    b = Batch(rng.normal(size=(5, 3)), rng.uniform(size=(5, 2)), rng.normal(size=(5, 3)))
    t = batch_targets("W", b, w, cfg)
    for i in range(5):
        un = actor_forward(b.x_next[i], w, "plain")
        assert t[i] == pytest.approx(critic2_target(b.x[i], b.u[i], b.x_next[i], un, w, cfg), abs=1e-12)


# -- gradients ------------------------------------------------------------------

def _fd_check(loss_of, w, keys, h=1e-5):
    _, grads = loss_of(w)
    worst = 0.0
    for k in keys:
        g = grads[k]
        base = getattr(w, k)
        fd = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = w.copy(), w.copy()
            getattr(plus, k)[idx] += h
            getattr(minus, k)[idx] -= h
            fd[idx] = (loss_of(plus)[0] - loss_of(minus)[0]) / (2 * h)
        scale = max(np.abs(fd).max(), np.abs(g).max(), 1e-3)
        worst = max(worst, np.abs(g - fd).max() / scale)
    return worst


CONFIGS = [(seed, mode) for seed in range(30) for mode in ("plain", "poly")]


@pytest.mark.parametrize("seed,mode", CONFIGS)
def test_gradients_match_finite_differences(seed, mode):
    rng = np.random.default_rng(100 + seed)
    n, m, d = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 6))
    w = random_weights(n, m, d, rng)
    cfg = GrhdpConfig(D=np.diag(rng.uniform(0.5, 2, n)), M=np.diag(rng.uniform(0.5, 2, m)),
                      alpha=rng.uniform(), gamma=rng.uniform(), actor_mode=mode, critic_mode=mode)
    B = int(rng.integers(1, 6))
    b = Batch(rng.normal(size=(B, n)), rng.uniform(size=(B, m)) * w.u_max, rng.normal(size=(B, n)))
    for which in ("G", "W"):
        t = batch_targets(which, b, w, cfg)
        s = which.lower()
        err = _fd_check(lambda v: critic_loss_grad(which, b, t, v, cfg), w,
                        ["c1" + s, "bc1" + s, "c2" + s, "bc2" + s])
        assert err <= 1e-4, (which, err)
    err = _fd_check(lambda v: actor_loss_grad(b.x, v, cfg), w, ["a1", "ba1", "a2", "ba2"])
    assert err <= 1e-4, ("actor", err)


def test_zero_gradient_cases():
    rng = np.random.default_rng(8)
    w = random_weights(3, 2, 4, rng)
    cfg = cfg_for(3, 2)
    b = Batch(rng.normal(size=(4, 3)), rng.uniform(size=(4, 2)), rng.normal(size=(4, 3)))
    # prediction equals target
    exact = np.array([critic_forward(x, u, "G", w) for x, u in zip(b.x, b.u)])
    w2, loss = update_critic("G", b, w, cfg, exact)
    assert loss == pytest.approx(0.0, abs=1e-30) and w2.allclose(w, atol=1e-15)
    # zero critic 2 means zero actor gradient
    z = w.copy()
    z.c2w[:] = 0
    z.bc2w[:] = 0
    w3, loss = update_actor(b.x, z, cfg)
    assert loss == 0.0 and w3.allclose(z)
    # zero actor step size
    w4, _ = update_actor(b.x, w, cfg_for(3, 2, lr_actor=0.0))
    assert w4.allclose(w)


def test_small_step_is_descent():
    rng = np.random.default_rng(9)
    w = random_weights(2, 1, 3, rng)
    b = Batch(rng.normal(size=(1, 2)), rng.uniform(size=(1, 1)), rng.normal(size=(1, 2)))
    for lr in (1e-3, 1e-5):
        cfg = cfg_for(2, 1, lr_critic=lr, lr_actor=lr)
        t = batch_targets("W", b, w, cfg)
        w2, before = update_critic("W", b, w, cfg, t)
        assert critic_loss_grad("W", b, t, w2, cfg)[0] <= before
        w3, before = update_actor(b.x, w, cfg)
        assert actor_loss_grad(b.x, w3, cfg)[0] <= before


# -- training -------------------------------------------------------------------

def toy_cfg(**kw):
    base = dict(D=[[1.0]], M=[[1.0]], epochs=40, hidden=6, episodes=2, episode_len=30,
                critic_iters=30, actor_iters=10, lr_actor=0.05, warmup=5, seed=3)
    base.update(kw)
    return GrhdpConfig(**base)


def test_toy_plant_training_beats_zero_control():
    plant = ToyPlant(x0_range=(-2.0, -0.5))
    w, rows = train_controller(plant, toy_cfg())
    trained = rollout(plant, w, 40, np.random.default_rng(11), mode="poly")
    idle = rollout(plant, None, 40, np.random.default_rng(11))
    assert np.linalg.norm(trained) < np.linalg.norm(idle)


def test_zero_epochs_returns_init():
    plant = ToyPlant()
    init = ControllerWeights.init(1, 1, 4, [1.0], np.random.default_rng(0))
    w, rows = train_controller(plant, toy_cfg(epochs=0, hidden=4), init=init)
    assert rows == [] and w.allclose(init)


def test_training_deterministic(tmp_path):
    plant = ToyPlant()
    a, ra = train_controller(plant, toy_cfg(epochs=4))
    b, rb = train_controller(plant, toy_cfg(epochs=4))
    assert ra == rb and a.allclose(b)
    write_log(ra, tmp_path / "a.csv")
    write_log(rb, tmp_path / "b.csv")
    text = (tmp_path / "a.csv").read_text()
    assert text == (tmp_path / "b.csv").read_text()
    assert text.splitlines()[0] == ",".join(LOG_FIELDS)
    assert len(text.splitlines()) == 5


def test_checkpoint_roundtrip(tmp_path):
    w = random_weights(8, 4, 16, np.random.default_rng(12))
    w.save(tmp_path / "w.bin")
    back = ControllerWeights.load(tmp_path / "w.bin")
    assert back.allclose(w)
    blob = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(blob[:-8])
    with pytest.raises(ValueError, match="size"):
        ControllerWeights.load(tmp_path / "bad.bin")
    (tmp_path / "junk.bin").write_bytes(b"nope" + blob[4:])
    with pytest.raises(ValueError):
        ControllerWeights.load(tmp_path / "junk.bin")


def test_weight_shape_validation():
    w = zero_weights(3, 2, 4)
    with pytest.raises(DimensionMismatch):
        ControllerWeights(w.a1, w.a2, w.c1g[:, :4], w.c2g, w.c1w, w.c2w, w.u_max)
    with pytest.raises(ValueError):
        ControllerWeights(w.a1, w.a2, w.c1g, w.c2g, w.c1w, w.c2w, [0.3, -1.0])


# -- encrypted inference ------------------------------------------------------------

@pytest.fixture(scope="module")
def deep_keys():
    return he.keygen(he.get_preset("deep-6"), seed=21, backend="rlwe")


def test_encrypted_actor_matches_poly(deep_keys):
    rng = np.random.default_rng(13)
    w = random_weights(8, 4, 16, rng, scale=0.6, bias=0.3)
    w.u_max[:] = 0.3
    for x in rng.uniform(-2, 2, size=(2, 8)):
        enc = actor_forward(x, w, "encrypted", deep_keys)
        assert np.abs(enc - actor_forward(x, w, "poly")).max() <= 5e-2


def test_encrypted_critic_matches_poly(deep_keys):
    rng = np.random.default_rng(14)
    w = random_weights(8, 4, 16, rng, scale=0.6, bias=0.3)
    x, u = rng.uniform(-2, 2, 8), rng.uniform(0, 0.3, 4)
    enc = critic_forward(x, u, "G", w, "encrypted", deep_keys)
    assert enc == pytest.approx(critic_forward(x, u, "G", w, "poly"), abs=5e-2)


def test_depth3_preset_too_shallow_for_actor():
    keys = he.keygen(he.get_preset("paper-2024"), seed=3, backend="reference")
    w = random_weights(8, 4, 16, np.random.default_rng(15))
    with pytest.raises(he.DepthExhausted):
        actor_forward(np.zeros(8), w, "encrypted", keys)


def test_poly_activation_names_resolve():
    for name in ("sigmoid", "tanh"):
        assert get_activation(name).func == name
