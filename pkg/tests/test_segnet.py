import numpy as np
import pytest

from ustrun import segnet
from ustrun.grid import check_prob_field
from ustrun.losses import _ce, _dice, ce_dice
from ustrun.synthdata import generate_dataset


def perturbed(seed, dtype=np.float64, scale=0.1, classes=2):
    rng = np.random.default_rng(seed)
    p = segnet.init_params(1, classes, rng=seed, dtype=dtype)
    for k in p:
        p[k] += rng.normal(0, scale, p[k].shape).astype(dtype)
    return p


def fd_check(params, x, loss_fn, rng, per_block=12, h=1e-4):
    _, grads = segnet.loss_and_grad(params, x, loss_fn)
    errs = {}
    for name, p in params.items():
        idxs = [np.unravel_index(i, p.shape) for i in rng.choice(p.size, min(per_block, p.size), replace=False)]
        an, fd = [], []
        for idx in idxs:
            p[idx] += h
            up = loss_fn(segnet.forward(params, x))[0]
            p[idx] -= 2 * h
            down = loss_fn(segnet.forward(params, x))[0]
            p[idx] += h
            fd.append((up - down) / (2 * h))
            an.append(grads[name][idx])
        an, fd = np.array(an), np.array(fd)
        errs[name] = np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1e-12)
    return errs


def test_param_budget():
    assert segnet.count_params(segnet.init_params(1, 2)) < 30000
    assert segnet.count_params(segnet.init_params(1, 4)) < 30000


def test_zero_classifier_gives_uniform(rng):
    params = segnet.init_params(1, 3, rng=0)
    p = segnet.forward(params, rng.random((2, 1, 8, 8)))
    assert np.allclose(p, 1 / 3)


def test_forward_deterministic_and_valid(rng):
    params = perturbed(3)
    x = rng.random((2, 1, 8, 8))
    a, b = segnet.forward(params, x), segnet.forward(params, x)
    assert np.array_equal(a, b)
    check_prob_field(a)
    assert np.abs(a.sum(axis=1) - 1).max() < 1e-6


def test_constant_input_constant_output():
    params = perturbed(5)
    p = segnet.forward(params, np.full((1, 1, 12, 12), 0.4))
    assert np.allclose(p, p[..., :1, :1], atol=1e-12)


def test_bad_dims():
    with pytest.raises(ValueError):
        segnet.forward(segnet.init_params(), np.zeros((1, 1, 7, 8)))


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = perturbed(seed)
    x = rng.random((2, 1, 8, 8))
    y = rng.integers(0, 2, (2, 8, 8))
    w = rng.integers(0, 2, (2, 8, 8))
    errs = fd_check(params, x, lambda p: ce_dice(y, p, w), rng)
    assert max(errs.values()) < 1e-3, errs


def test_fully_masked_loss_has_zero_gradient(rng):
    params = perturbed(2)
    x = rng.random((1, 1, 8, 8))
    y = rng.integers(0, 2, (1, 8, 8))
    _, grads = segnet.loss_and_grad(params, x, lambda p: ce_dice(y, p, np.zeros((1, 8, 8))))
    assert all(not g.any() for g in grads.values())


def test_gradient_linearity(rng):
    params = perturbed(4)
    x = rng.random((2, 1, 8, 8))
    y = rng.integers(0, 2, (2, 8, 8))
    w = np.ones((2, 8, 8))
    _, g_sum = segnet.loss_and_grad(params, x, lambda p: ce_dice(y, p, w))
    _, g_ce = segnet.loss_and_grad(params, x, lambda p: _ce(y, p, w))
    _, g_dice = segnet.loss_and_grad(params, x, lambda p: _dice(y, p, w))
    for k in params:
        assert np.abs(g_sum[k] - g_ce[k] - g_dice[k]).max() < 1e-9


def test_sgd_zero_grad_no_decay():
    params = {"a": np.array([1.0, -2.0])}
    segnet.SGD(0.9, 0.0).step(params, {"a": np.zeros(2)}, 0.1)
    assert params["a"].tolist() == [1.0, -2.0]


def test_sgd_single_step_no_momentum():
    params = {"a": np.array([1.0, -2.0])}
    g = np.array([0.5, 0.25])
    segnet.SGD(0.0, 1e-4).step(params, {"a": g}, 0.03)
    assert np.allclose(params["a"], np.array([1.0, -2.0]) - 0.03 * (g + 1e-4 * np.array([1.0, -2.0])),
                       atol=1e-15)


def test_sgd_momentum_matches_recurrence():
    lr, mu, wd = 0.03, 0.9, 1e-4
    grads = [0.7, -0.2]
    params = {"a": np.array([1.5])}
    opt = segnet.SGD(mu, wd)
    for g in grads:
        opt.step(params, {"a": np.array([g])}, lr)
    # scalar recurrence by hand
    p, v = 1.5, 0.0
    for i, g in enumerate(grads):
        d = g + wd * p
        v = d if i == 0 else mu * v + d
        p = p - lr * v
    assert abs(params["a"][0] - p) < 1e-12


def test_poly_lr():
    assert segnet.poly_lr(0.03, 0, 100) == 0.03
    assert segnet.poly_lr(0.03, 100, 100) == 0.0
    assert abs(segnet.poly_lr(0.03, 50, 100) - 0.03 * 0.5 ** 0.9) < 1e-15


def test_ema_examples():
    t, s = {"a": np.array([0.0])}, {"a": np.array([1.0])}
    segnet.ema_update(t, s, 0.99)
    assert abs(t["a"][0] - 0.01) < 1e-15
    segnet.ema_update(t, s, 0.0)
    assert t["a"][0] == 1.0
    t, s = {"a": np.array([0.3])}, {"a": np.array([0.3])}
    segnet.ema_update(t, s, 0.99)
    assert abs(t["a"][0] - 0.3) < 1e-15
    with pytest.raises(ValueError):
        segnet.ema_update(t, s, 1.0)


def test_ema_stays_in_hull(rng):
    pair = segnet.TeacherStudent.create({"a": np.zeros(3)})
    history = [pair.teacher["a"].copy()]
    for t in range(30):
        pair.student["a"] = rng.normal(size=3)
        history.append(pair.student["a"].copy())
        pair.update_teacher(t)
        h = np.array(history)
        assert np.all(pair.teacher["a"] >= h.min(0) - 1e-12) and np.all(pair.teacher["a"] <= h.max(0) + 1e-12)


def test_ema_warm_ramp():
    assert segnet.ema_decay(0) == 0.0
    assert segnet.ema_decay(1) == 0.5
    assert segnet.ema_decay(10_000) == 0.99


def test_checkpoint_roundtrip(tmp_path):
    params = perturbed(1, dtype=np.float32)
    segnet.save_checkpoint(tmp_path / "m.segn", params)
    raw = (tmp_path / "m.segn").read_bytes()
    assert raw[:4] == b"SEGN"
    back = segnet.load_checkpoint(tmp_path / "m.segn")
    assert list(back) == segnet.param_names()
    for k in params:
        assert np.array_equal(back[k], params[k])
    segnet.save_checkpoint(tmp_path / "m2.segn", back)
    assert (tmp_path / "m2.segn").read_bytes() == raw


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.segn").write_bytes(b"GRID" + bytes(40))
    with pytest.raises(ValueError):
        segnet.load_checkpoint(tmp_path / "x.segn")


def test_supervised_loss_decreases():
    ds = generate_dataset(seed=0, n_unlabeled_per_domain=1, n_test_per_domain=1)
    x = np.stack([s.image for s in ds.labeled])
    y = np.stack([s.label for s in ds.labeled])
    w = np.ones(y.shape)
    decreasing = 0
    for seed in range(3):
        params = segnet.init_params(1, 2, rng=seed)
        opt = segnet.SGD(0.9, 1e-4)
        history = []
        for t in range(50):
            v, g = segnet.loss_and_grad(params, x, lambda p: ce_dice(y, p, w))
            history.append(v)
            opt.step(params, g, segnet.poly_lr(0.03, t, 50))
        decreasing += history[-1] < history[0] and np.mean(history[-10:]) < np.mean(history[:10])
    assert decreasing >= 2
