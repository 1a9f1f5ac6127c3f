"""d-dimensional simulator: sampling, per-sample overlap identity, determinism."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from medlab import sgd_sim as sim
from medlab.errors import DivergenceError, IllConditionedInitError, StateInvalidError
from medlab.state import TaskParams


@pytest.fixture(scope="module")
def teacher():
    return sim.make_teacher(400, 0.3, seed=1)


# -------------------------------------------------------------------- sampling

def test_teacher_norm_is_validated():
    sim.make_teacher(123, 0.0, seed=5)  # fine
    with pytest.raises(StateInvalidError):
        sim.TeacherModel(np.ones(10) * 2.0)
    with pytest.raises(StateInvalidError):
        sim.TeacherModel(np.ones(10), delta=-0.1)


def test_label_on_forced_input(teacher):
    clean = sim.TeacherModel(teacher.wstar, 0.0)
    x = teacher.wstar / teacher.d
    assert sim.teacher_label(clean, x) == pytest.approx(1.0, rel=1e-12)


def test_sample_statistics():
    """E[y] = 1 and Var[y] = 2 at zero noise; the noise adds delta."""
    t = sim.make_teacher(30, 0.0, seed=2)
    n = 1_000_000
    ys = np.fromiter((s.y for s in sim.sample_batch(t, n, seed=3)), float, count=n)
    se_mean = ys.std(ddof=1) / np.sqrt(n)
    assert abs(ys.mean() - 1.0) < 4 * se_mean
    # Var[y^2-ish] fluctuation scale: se of the sample variance
    se_var = np.sqrt((np.mean((ys - ys.mean()) ** 4) - ys.var() ** 2) / n)
    assert abs(ys.var(ddof=1) - 2.0) < 4 * se_var

    x = next(sim.sample_batch(t, 1, seed=4)).x
    assert x.shape == (30,)
    # x ~ N(0, I/d): squared norm concentrates at 1
    big = np.array([s.x @ s.x for s in sim.sample_batch(t, 2000, seed=5)])
    assert big.mean() == pytest.approx(1.0, abs=0.05)


def test_sample_batch_is_deterministic(teacher):
    a = [s.y for s in sim.sample_batch(teacher, 5, seed=9)]
    b = [s.y for s in sim.sample_batch(teacher, 5, seed=9)]
    assert a == b
    with pytest.raises(StateInvalidError):
        next(sim.sample_batch(teacher, 0, seed=0))


# -------------------------------------------------------------------- sgd_step

def test_zero_residual_and_zero_rate_leave_network_unchanged():
    t = sim.make_teacher(50, 0.0, seed=6)
    net = sim.StudentNetwork(t.wstar[None, :].copy(), np.ones(1))
    sample = next(sim.sample_batch(t, 1, seed=7))
    stepped = sim.sgd_step(net, sample, TaskParams(d=50, p=1, gamma=0.1, spherical=False))
    assert_allclose(stepped.W, net.W, atol=1e-12)

    net2 = sim.init_network(50, 2, seed=8)
    flat = sim.sgd_step(net2, sample, TaskParams(d=50, p=2, gamma=0.0, spherical=False))
    assert np.array_equal(flat.W, net2.W)
    # on the sphere the no-op projection still rescales by 1.0 + O(eps)
    proj = sim.sgd_step(net2, sample, TaskParams(d=50, p=2, gamma=0.0))
    assert_allclose(proj.W, net2.W, rtol=1e-14)


def test_spherical_step_preserves_row_norms(teacher):
    net = sim.init_network(400, 3, seed=9)
    params = TaskParams(d=400, p=3, gamma=0.15, delta=0.3)
    for s in sim.sample_batch(teacher, 20, seed=10):
        net = sim.sgd_step(net, s, params)
        norms = np.linalg.norm(net.W, axis=1) ** 2 / 400
        assert_allclose(norms, 1.0, rtol=1e-10)


def test_one_step_equals_overlap_increment(teacher):
    """A single weight update, re-measured, reproduces the per-sample overlap
    increments exactly (the reduction is an identity before expectations)."""
    d, p = 400, 3
    params = TaskParams(d=d, p=p, gamma=0.1, delta=0.3, spherical=False, train_a=True)
    net = sim.init_network(d, p, "gaussian-unconstrained", seed=11)
    sample = next(sim.sample_batch(teacher, 1, seed=12))
    before = sim.measure_overlaps(net, teacher)
    after = sim.measure_overlaps(sim.sgd_step(net, sample, params), teacher)

    lam = net.W.astype(float) @ sample.x
    lam_star = teacher.wstar @ sample.x
    a = net.a.astype(float)
    err = float(a @ (lam * lam)) / p - sample.y
    x2 = float(sample.x @ sample.x)
    dt = params.dt_sgd
    dm = dt * (-2 * err * a * lam * lam_star)
    da = dt * (-err * lam * lam)
    g = 4 * params.gamma / p
    dQ = dt * (
        -2 * err * (a[:, None] + a[None, :]) * np.outer(lam, lam)
        + g * x2 * err**2 * np.outer(a * lam, a * lam)
    )
    assert_allclose(after.m - before.m, dm, atol=1e-10)
    assert_allclose(after.Q - before.Q, dQ, atol=1e-10)
    assert_allclose(after.a - before.a, da, atol=1e-10)


# ------------------------------------------------------------ measure_overlaps

def test_measure_overlaps_on_aligned_rows(teacher):
    W = np.stack([teacher.wstar, -teacher.wstar])
    st = sim.measure_overlaps(sim.StudentNetwork(W, np.ones(2)), teacher)
    assert_allclose(st.m, [1.0, -1.0], rtol=1e-12)
    assert_allclose(st.Q, [[1.0, -1.0], [-1.0, 1.0]], rtol=1e-12)
    assert np.min(np.linalg.eigvalsh(st.Q)) > -1e-12


def test_random_init_overlap_scale():
    t = sim.make_teacher(10_000, 0.0, seed=13)
    net = sim.init_network(10_000, 1, seed=14)
    st = sim.measure_overlaps(net, t)
    assert abs(st.m[0]) * np.sqrt(10_000) < 4.0


# --------------------------------------------------------------------- run_sgd

def test_run_sgd_equals_repeated_steps(teacher):
    d, p = 400, 3
    params = TaskParams(d=d, p=p, gamma=0.1, delta=0.3, train_a=True)
    net = sim.init_network(d, p, seed=15)
    traj = sim.run_sgd(teacher, net, params, 60, record_stride=1, seed=16)
    cur = net.copy()
    for i, s in enumerate(sim.sample_batch(teacher, 60, seed=16), start=1):
        cur = sim.sgd_step(cur, s, params)
    final = sim.measure_overlaps(cur, teacher)
    assert_allclose(traj.m[-1], final.m, atol=1e-12)
    assert_allclose(traj.Q[-1], final.Q, atol=1e-12)
    assert_allclose(traj.a[-1], final.a, atol=1e-12)
    assert traj.t[-1] == pytest.approx(60 * params.dt_sgd)


def test_run_sgd_determinism_and_stride_independence(teacher):
    params = TaskParams(d=400, p=2, gamma=0.1, delta=0.3)
    net = sim.init_network(400, 2, seed=17)
    t1 = sim.run_sgd(teacher, net, params, 90, record_stride=1, seed=18)
    t1b = sim.run_sgd(teacher, net, params, 90, record_stride=1, seed=18)
    assert np.array_equal(t1.m, t1b.m) and np.array_equal(t1.Q, t1b.Q)

    t9 = sim.run_sgd(teacher, net, params, 90, record_stride=9, seed=18)
    assert np.array_equal(t1.m[::9], t9.m)
    assert np.array_equal(t1.risk[::9], t9.risk)


def test_run_sgd_does_not_mutate_inputs(teacher):
    net = sim.init_network(400, 2, seed=19)
    W0 = net.W.copy()
    sim.run_sgd(teacher, net, TaskParams(d=400, p=2, gamma=0.1, delta=0.3), 30, seed=20)
    assert np.array_equal(net.W, W0)


def test_second_layer_is_bit_frozen_without_training(teacher):
    params = TaskParams(d=400, p=3, gamma=0.12, delta=0.3, train_a=False)
    net = sim.init_network(400, 3, seed=21)
    traj = sim.run_sgd(teacher, net, params, 50, record_stride=1, seed=22)
    assert np.all(traj.a == 1.0)


def test_large_rate_never_aligns():
    """Above the stability bound the projected flow cannot reach the target."""
    d = 300
    t = sim.make_teacher(d, 0.0, seed=23)
    net = sim.init_network(d, 1, seed=24)
    params = TaskParams(d=d, p=1, gamma=0.2, delta=0.0)
    traj = sim.run_sgd(t, net, params, 40_000, record_stride=1000, seed=25)
    # risk floor is 0 here; a healthy rate would be below 0.2 long before this
    assert np.all(traj.risk[-5:] > 0.5)


def test_n_steps_zero_gives_single_record(teacher):
    net = sim.init_network(400, 2, seed=26)
    traj = sim.run_sgd(teacher, net, TaskParams(d=400, p=2, gamma=0.1), 0, seed=27)
    assert traj.n_records == 1 and traj.t[0] == 0.0


def test_divergence_raises_with_step_index():
    d = 80
    t = sim.make_teacher(d, 0.0, seed=28)
    net = sim.init_network(d, 1, "gaussian-unconstrained", seed=29)
    params = TaskParams(d=d, p=1, gamma=30.0, spherical=False)
    with pytest.raises(DivergenceError) as err:
        sim.run_sgd(t, net, params, 5000, seed=30)
    assert 1 <= err.value.step <= 5000


def test_run_sgd_rejects_shape_mismatch(teacher):
    net = sim.init_network(400, 2, seed=31)
    with pytest.raises(StateInvalidError):
        sim.run_sgd(teacher, net, TaskParams(d=100, p=2, gamma=0.1), 5)


# ------------------------------------------------------------- initialization

def test_init_network_modes():
    t = sim.make_teacher(500, 0.0, seed=32)
    net = sim.init_network(500, 4, "orthogonal-exact", seed=33)
    st = sim.measure_overlaps(net, t)
    assert_allclose(st.Q, np.eye(4), atol=1e-12)
    assert_allclose(np.linalg.norm(net.W, axis=1) ** 2, 500.0, rtol=1e-12)

    net = sim.init_network(500, 4, "spherical-uniform", seed=34)
    assert_allclose(np.linalg.norm(net.W, axis=1) ** 2 / 500, 1.0, rtol=1e-12)

    net = sim.init_network(500, 4, "gaussian-unconstrained", seed=35)
    assert not np.allclose(np.linalg.norm(net.W, axis=1) ** 2 / 500, 1.0, atol=1e-3)

    bern = sim.init_network(500, 50, seed=36, a_init="bernoulli")
    assert set(np.unique(bern.a)) <= {0.0, 1.0}
    assert 0 < bern.a.sum() < 50

    with pytest.raises(IllConditionedInitError):
        sim.init_network(3, 5)
    with pytest.raises(StateInvalidError):
        sim.init_network(500, 2, "whitened")


# -------------------------------------------------------------------- ensemble

def test_ensemble_reduction_and_shared_init():
    params = TaskParams(d=150, p=2, gamma=0.1, delta=0.2)
    res = sim.sgd_ensemble(params, 40, 6, record_stride=10, seed=100)
    assert res.risk.shape == (6, 5)
    assert res.max_abs_m.shape == (6, 5)
    res_b = sim.sgd_ensemble(params, 40, 6, record_stride=10, seed=100)
    assert np.array_equal(res.risk, res_b.risk)

    shared = sim.sgd_ensemble(params, 40, 6, record_stride=10, seed=100, shared_init=True)
    assert np.all(shared.risk[:, 0] == shared.risk[0, 0])  # common starting point
    assert not np.all(shared.risk[:, -1] == shared.risk[0, -1])  # data noise splits them
    assert not np.all(res.risk[:, 0] == res.risk[0, 0])


def test_ensemble_workers_do_not_change_results():
    params = TaskParams(d=100, p=1, gamma=0.1, delta=0.1)
    serial = sim.sgd_ensemble(params, 30, 4, record_stride=10, seed=101, workers=1)
    parallel = sim.sgd_ensemble(params, 30, 4, record_stride=10, seed=101, workers=2)
    assert np.array_equal(serial.risk, parallel.risk)
    assert np.array_equal(serial.max_abs_m, parallel.max_abs_m)


# ------------------------------------------------------------------ checkpoint

def test_checkpoint_roundtrip(tmp_path):
    net = sim.init_network(64, 3, seed=40)
    path = tmp_path / "net.ckpt"
    sim.save_checkpoint(path, net, spherical=True)
    back, spherical = sim.load_checkpoint(path)
    assert spherical is True
    assert np.array_equal(back.W, net.W)
    assert np.array_equal(back.a, net.a)

    with pytest.raises(StateInvalidError):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOPE" + bytes(16))
        sim.load_checkpoint(bad)
