import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from uavswarm.neuralnet import (
    CheckpointError,
    Checkpoint,
    IncompatibleCheckpointError,
    OpCounter,
    OptimizerState,
    QNetwork,
    apply_update,
    backward,
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    save_checkpoint,
)

EXPECTED_OPS = {"conv1": 440_000, "conv2": 3_704_980, "conv3": 628_180, "fc1": 125_504, "fc2": 645}


def random_obs(rng, F=20, batch=None):
    shape = (3, F, F) if batch is None else (batch, 3, F, F)
    o = rng.random(shape)
    return o


def test_layer_shapes():
    net = QNetwork(20)
    assert net.layer_shapes() == [(20, 20, 20), (17, 17, 20), (14, 14, 5), (64,), (5,)]
    assert net.params["fc1.w"].shape == (64, 980)


def test_output_length_and_batching():
    rng = np.random.default_rng(0)
    net = QNetwork(20, rng, np.float64)
    obs = random_obs(rng, batch=4)
    q = net.forward(obs)
    assert q.shape == (4, 5)
    assert np.allclose(q[2], net.forward(obs[2]), atol=1e-12)


def test_zero_network_outputs_zero():
    net = QNetwork(20)
    for p in net.params.values():
        p[...] = 0
    assert np.array_equal(net.forward(np.ones((3, 20, 20))), np.zeros(5))


def test_op_count():
    c = OpCounter()
    QNetwork(20).forward(np.zeros((3, 20, 20)), counter=c)
    assert c.counts == EXPECTED_OPS
    assert c.total == 4_899_309


def test_conv_matches_direct_loops():
    # reference forward written with explicit loops over output pixels
    rng = np.random.default_rng(1)
    net = QNetwork(8, rng, np.float64)
    x = random_obs(rng, 8)
    P = net.params
    h = x
    for name, pad in (("conv1", 1), ("conv2", 0), ("conv3", 0)):
        w, b = P[f"{name}.w"], P[f"{name}.b"]
        hp = np.pad(h, ((0, 0), (pad, pad), (pad, pad)))
        k = w.shape[2]
        side = hp.shape[1] - k + 1
        out = np.zeros((w.shape[0], side, side))
        for i in range(side):
            for j in range(side):
                out[:, i, j] = (w * hp[None, :, i : i + k, j : j + k]).sum(axis=(1, 2, 3)) + b
        h = np.maximum(out, 0)
    # the dense layer consumes channel-last features
    flat = h.transpose(1, 2, 0).reshape(-1)
    a1 = np.maximum(P["fc1.w"] @ flat + P["fc1.b"], 0)
    q = P["fc2.w"] @ a1 + P["fc2.b"]
    assert np.allclose(net.forward(x), q, atol=1e-12)


def test_gradient_check_float64():
    rng = np.random.default_rng(2)
    for _ in range(3):
        net = QNetwork(20, rng, np.float64)
        obs, a, y = random_obs(rng), int(rng.integers(5)), float(rng.normal())
        g = backward(net, obs, a, y)
        errs = oracles.gradient_errors(net, g, obs, a, y, rng, per_array=15)
        assert max(errs.values()) < 1e-4, errs


def test_zero_residual_zero_gradient():
    rng = np.random.default_rng(3)
    net = QNetwork(20, rng, np.float64)
    obs = random_obs(rng)
    q = net.forward(obs)
    g = backward(net, obs, 2, float(q[2]))
    assert all(np.all(v == 0) for v in g.values())


def test_untaken_action_rows_zero():
    rng = np.random.default_rng(4)
    net = QNetwork(20, rng, np.float64)
    g = backward(net, random_obs(rng), 1, 3.0)
    rows = [r for r in range(5) if r != 1]
    assert np.all(g["fc2.w"][rows] == 0) and np.all(g["fc2.b"][rows] == 0)
    assert np.any(g["fc2.w"][1] != 0)


def test_batch_gradient_is_mean_of_singles():
    rng = np.random.default_rng(5)
    net = QNetwork(20, rng, np.float64)
    obs = random_obs(rng, batch=3)
    acts, ys = [0, 3, 4], [0.5, -1.0, 2.0]
    _, gb = net.loss_and_grads(obs, acts, ys)
    singles = [backward(net, obs[i], acts[i], ys[i]) for i in range(3)]
    for k in gb:
        assert np.allclose(gb[k], sum(s[k] for s in singles) / 3, atol=1e-12)


def test_radam_two_steps_by_hand():
    # rho_1 = 1 and rho_2 ~ 2 are below the threshold: plain bias-corrected momentum
    p = {"w": np.array([1.0])}
    opt = OptimizerState(lr=0.1)
    apply_update(p, {"w": np.array([0.5])}, opt)
    assert p["w"][0] == pytest.approx(0.95, abs=1e-15)
    apply_update(p, {"w": np.array([0.5])}, opt)
    assert p["w"][0] == pytest.approx(0.90, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.sampled_from([0.9, 0.99, 0.999]))
def test_radam_matches_scalar_reference(grads, b2):
    p = {"w": np.array([0.3])}
    opt = OptimizerState(lr=1e-2, beta2=b2)
    traj = []
    for g in grads:
        apply_update(p, {"w": np.array([g])}, opt)
        traj.append(p["w"][0])
    want = oracles.radam_scalar(0.3, grads, 1e-2, 0.9, b2, 1e-8)
    assert np.allclose(traj, want, rtol=1e-12, atol=1e-15)
    assert opt.step == len(grads)


def test_radam_rectification_onset():
    opt = OptimizerState()
    assert [opt.rectification(t) is None for t in range(1, 7)] == [True] * 4 + [False] * 2


def test_zero_gradient_leaves_params():
    rng = np.random.default_rng(6)
    net = QNetwork(20, rng)
    before = {k: v.copy() for k, v in net.params.items()}
    opt = OptimizerState()
    for _ in range(8):
        apply_update(net.params, {k: np.zeros_like(v) for k, v in net.params.items()}, opt)
    assert all(np.array_equal(before[k], net.params[k]) for k in before)


def test_repeated_gradient_monotone_movement():
    rng = np.random.default_rng(7)
    p = {"w": rng.normal(size=50)}
    g = {"w": rng.normal(size=50)}
    opt = OptimizerState(lr=1e-3)
    prev = p["w"].copy()
    for _ in range(20):
        apply_update(p, g, opt)
        step = p["w"] - prev
        assert np.all(np.sign(step) == -np.sign(g["w"]))
        prev = p["w"].copy()


def _trained_checkpoint(rng, dtype=np.float32):
    net = QNetwork(20, rng, dtype)
    opt = OptimizerState()
    for _ in range(3):
        obs = random_obs(rng, batch=2)
        _, g = net.loss_and_grads(obs, [0, 1], [1.0, -1.0])
        apply_update(net.params, g, opt)
    return Checkpoint(net, opt, 0.2, net.copy(), grad_steps=3, episodes=1)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_round_trip_bit_identical(tmp_path, dtype):
    rng = np.random.default_rng(8)
    ck = _trained_checkpoint(rng, dtype)
    save_checkpoint(tmp_path / "ck.bin", ck)
    ck2 = load_checkpoint(tmp_path / "ck.bin", F=20, rho=0.2)
    obs = random_obs(rng, batch=5)
    assert ck.net.forward(obs).tobytes() == ck2.net.forward(obs).tobytes()
    assert ck2.opt.step == 3 and ck2.grad_steps == 3 and ck2.episodes == 1
    assert all(np.array_equal(ck.opt.m[k], ck2.opt.m[k]) for k in ck.opt.m)
    assert ck2.target is not None
    assert checkpoint_bytes(ck2) == checkpoint_bytes(ck)


def test_truncated_checkpoint_rejected():
    ck = _trained_checkpoint(np.random.default_rng(9))
    data = checkpoint_bytes(ck)
    for cut in (10, len(data) // 2, len(data) - 1):
        with pytest.raises(CheckpointError):
            checkpoint_from_bytes(data[:cut])
    flipped = bytearray(data)
    flipped[200] ^= 0xFF
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(bytes(flipped))


def test_checkpoint_fingerprint_checked():
    data = checkpoint_bytes(_trained_checkpoint(np.random.default_rng(10)))
    with pytest.raises(IncompatibleCheckpointError):
        checkpoint_from_bytes(data, F=16)
    with pytest.raises(IncompatibleCheckpointError):
        checkpoint_from_bytes(data, rho=0.3)


def test_network_runs_on_big_map():
    from uavswarm.harness import DDQLPolicy, run_episode
    from uavswarm.scenario import Scenario

    ck = checkpoint_from_bytes(checkpoint_bytes(_trained_checkpoint(np.random.default_rng(11))), F=20)
    sc = Scenario(M=50, F=20, U=3, K=4, eta=0.1, steps=10)
    res = run_episode(DDQLPolicy(ck.net, tau=0.1), sc, seed=0, index=0)
    assert len(res.occupied) == 11  # step 0 plus every move
