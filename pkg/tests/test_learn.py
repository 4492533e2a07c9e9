"""Model, gradient, and training-protocol tests: analytic gradients against
finite differences, the error-correction rule, round semantics in the exact
(collision-free) regime, and the convergence harness."""

import math
import warnings

import numpy as np
import pytest

from diffsketch import data, learn
from diffsketch.learn import (
    FEDAVG_MODE,
    LEAST_SQUARES,
    LOGISTIC,
    SGD_MODE,
    LossSpec,
    Model,
    TrainConfig,
    TrainHistory,
    accuracy,
    convergence_check,
    default_t,
    effective_fraction,
    error_correct,
    fedavg_round,
    gradient,
    init_fedavg_state,
    init_sgd_state,
    least_squares_optimum,
    loss_value,
    model_dim,
    resolve_dims,
    sampling_rng,
    sgd_round,
    step_size,
)

LS = LossSpec(LEAST_SQUARES)


def _exact_cfg(**kw):
    """Config whose sketch is wide enough for collision-free exact recovery."""
    base = dict(workers=3, rounds=5, batch_size=None, lr=0.05, t=1, k=1 << 14,
                error_correction_fraction=0.0, master_seed=9)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def reg_part():
    part, w_star = data.synth_regression(3, 24, 6, 0.0, seed=5)
    return part, w_star


# ---- gradients ---- #


def _fd_gradient(w, loss, X, y, eps=1e-6):
    out = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = eps
        out[i] = (loss_value(Model(w + e), loss, X, y) - loss_value(Model(w - e), loss, X, y)) / (2 * eps)
    return out


def test_least_squares_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(12, 5)), rng.normal(size=12)
    w = rng.normal(size=5)
    for l2 in (0.0, 0.3):
        loss = LossSpec(LEAST_SQUARES, l2)
        assert np.allclose(gradient(Model(w), loss, (X, y)), _fd_gradient(w, loss, X, y), atol=1e-5)


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(15, 4))
    y = rng.integers(0, 3, size=15)
    w = 0.1 * rng.normal(size=model_dim(LossSpec(LOGISTIC), 4, 3))
    for l2 in (0.0, 0.05):
        loss = LossSpec(LOGISTIC, l2)
        assert np.allclose(gradient(Model(w), loss, (X, y)), _fd_gradient(w, loss, X, y), atol=1e-5)


def test_logistic_at_zero_weights():
    # with w = 0 every class has probability 1/c, so the loss is ln(c)
    X = np.ones((6, 3))
    y = np.array([0, 1, 0, 1, 0, 1])
    loss = LossSpec(LOGISTIC)
    w = np.zeros(model_dim(loss, 3, 2))
    assert loss_value(Model(w), loss, X, y) == pytest.approx(math.log(2))


def test_model_dim():
    assert model_dim(LS, 10) == 10
    assert model_dim(LossSpec(LOGISTIC), 10, 4) == 4 * 11
    with pytest.raises(ValueError):
        model_dim(LossSpec(LOGISTIC), 10)


def test_model_validation():
    with pytest.raises(ValueError):
        Model(np.array([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        Model(np.array([1.0, np.inf]))


def test_accuracy():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    y = np.array([0, 1, 1])
    loss = LossSpec(LOGISTIC)
    w = np.zeros(model_dim(loss, 2, 2))
    w[0], w[3] = 4.0, 4.0  # class 0 weights favor x0, class 1 weights favor x1
    assert accuracy(Model(w), X, y) == pytest.approx(2 / 3)


# ---- error correction and step sizes ---- #


def test_error_correct_documented_example():
    queried = np.array([10.0, 1.0, -9.0, 2.0])
    local = np.array([3.0, 1.0, 4.0, 2.0])
    out = error_correct(queried, local, 0.5)
    # |q - g| = [7, 0, 13, 0]: the two largest deviations (indices 2, 0) zero out
    assert np.array_equal(out, [0.0, 1.0, 0.0, 2.0])
    assert np.array_equal(queried, [10.0, 1.0, -9.0, 2.0])  # input untouched


def test_error_correct_fraction_extremes():
    q = np.array([5.0, -1.0, 2.0])
    g = np.array([1.0, -1.0, 2.0])
    assert np.array_equal(error_correct(q, g, 0.0), q)
    assert np.array_equal(error_correct(q, g, 1.0), np.zeros(3))


def test_error_correct_count_is_floor():
    q = np.arange(5.0) * 10
    g = np.zeros(5)
    out = error_correct(q, g, 0.5)  # floor(0.5 * 5) = 2 coordinates zeroed
    assert np.count_nonzero(out == 0) == 2 + 1  # indices 4, 3 zeroed; q[0] was 0
    assert np.array_equal(out, [0.0, 10.0, 20.0, 0.0, 0.0])


def test_error_correct_ties_are_stable():
    q = np.array([2.0, 2.0, 2.0, 2.0])
    g = np.zeros(4)
    out = error_correct(q, g, 0.5)
    assert np.array_equal(out, [0.0, 0.0, 2.0, 2.0])


def test_error_correct_validation():
    with pytest.raises(ValueError):
        error_correct(np.ones(3), np.ones(3), -0.1)
    with pytest.raises(ValueError):
        error_correct(np.ones(3), np.ones(3), 1.1)
    with pytest.raises(ValueError):
        error_correct(np.ones(3), np.ones(4), 0.5)


def test_step_size():
    assert step_size(1, 0.5) == 0.5
    assert step_size(4, 0.5) == 0.25
    assert step_size(100, 1.0) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        step_size(0, 0.5)
    with pytest.raises(ValueError):
        step_size(1, 0.0)


# ---- config resolution ---- #


def test_default_t_per_mode():
    assert default_t(SGD_MODE) == 7
    assert default_t(FEDAVG_MODE) == 10


def test_effective_fraction_defaults():
    cfg = TrainConfig(workers=2, rounds=1)
    assert effective_fraction(cfg, SGD_MODE) == 0.5
    assert effective_fraction(cfg, FEDAVG_MODE) == 0.0
    cfg2 = TrainConfig(workers=2, rounds=1, error_correction_fraction=0.25)
    assert effective_fraction(cfg2, SGD_MODE) == 0.25


def test_resolve_dims_from_compression():
    cfg = TrainConfig(workers=2, rounds=1, compression=10.0, m_pad=0)
    dims = resolve_dims(cfg, 700, SGD_MODE)
    assert dims.t == 7
    assert dims.k == 10  # round(700 / (7 * 10))
    assert dims.n == 700
    padded = TrainConfig(workers=2, rounds=1, compression=10.0, m_pad=300)
    dims2 = resolve_dims(padded, 700, SGD_MODE)
    assert dims2.n == 1000
    assert dims2.k == round(1000 / 70)


def test_resolve_dims_explicit_k():
    cfg = TrainConfig(workers=2, rounds=1, t=3, k=17)
    dims = resolve_dims(cfg, 100, FEDAVG_MODE)
    assert (dims.t, dims.k, dims.n) == (3, 17, 100)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(workers=0, rounds=1)
    with pytest.raises(ValueError):
        TrainConfig(workers=1, rounds=0)
    with pytest.raises(ValueError):
        TrainConfig(workers=1, rounds=1, k=5, compression=2.0)
    with pytest.raises(ValueError):
        TrainConfig(workers=1, rounds=1, lr_schedule="linear")
    with pytest.raises(ValueError):
        TrainConfig(workers=1, rounds=1, error_correction_fraction=1.5)
    with pytest.raises(ValueError):
        TrainConfig(workers=2, rounds=1, devices_per_round=3)
    with pytest.raises(ValueError):
        TrainConfig(workers=1, rounds=1, eps_target=0.0)


# ---- sgd rounds ---- #


def test_sgd_round_exact_regime_matches_plain_sgd(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg()
    state = learn.init_sgd_state(3, 6)
    state2, res = sgd_round(state, cfg, part, LS)
    grads = [gradient(Model(np.zeros(6)), LS, part.parts[w]) for w in range(3)]
    expected = -cfg.lr * np.mean(grads, axis=0)
    assert np.allclose(state2.weights[0], expected, atol=1e-12)
    assert res.round_index == 1
    assert res.weight_spread == 0.0
    assert res.participants == (0, 1, 2)
    assert res.bytes_per_worker == 30 + 8 * res.dims.t * res.dims.k


def test_sgd_synchrony_without_error_correction(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(k=128, batch_size=8, m_pad=50, eps_target=0.5, rounds=4)
    state = learn.init_sgd_state(3, 6)
    for _ in range(4):
        state, res = sgd_round(state, cfg, part, LS)
        assert res.weight_spread == 0.0
        for w in range(1, 3):
            assert np.array_equal(state.weights[0], state.weights[w])


def test_sgd_error_correction_breaks_synchrony(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(k=8, error_correction_fraction=0.5)
    state = learn.init_sgd_state(3, 6)
    state, res = sgd_round(state, cfg, part, LS)
    assert res.weight_spread > 0.0


def test_sgd_parallel_determinism(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(k=64, batch_size=8, eps_target=2.0, m_pad=20)
    s1 = s4 = learn.init_sgd_state(3, 6)
    for _ in range(3):
        s1, r1 = sgd_round(s1, cfg, part, LS, parallelism=1)
        s4, r4 = sgd_round(s4, cfg, part, LS, parallelism=4)
        assert np.array_equal(s1.weights, s4.weights)
        assert r1.privacy == r4.privacy


def test_sgd_single_worker_equals_centralized(reg_part):
    part, _ = reg_part
    X = np.vstack([p[0] for p in part.parts])
    y = np.concatenate([p[1] for p in part.parts])
    solo = data.Partition(parts=((X, y),), kind=part.kind, seed=part.seed)
    cfg = _exact_cfg(workers=1)
    state = learn.init_sgd_state(1, 6)
    state, _ = sgd_round(state, cfg, solo, LS)
    w_manual = -cfg.lr * gradient(Model(np.zeros(6)), LS, (X, y))
    assert np.allclose(state.weights[0], w_manual, atol=1e-12)


def test_sgd_objective_decreases(reg_part):
    part, _ = reg_part
    X = np.vstack([p[0] for p in part.parts])
    y = np.concatenate([p[1] for p in part.parts])
    cfg = _exact_cfg(k=256, rounds=200)
    state = learn.init_sgd_state(3, 6)
    losses = [loss_value(Model(state.weights[0]), LS, X, y)]
    for _ in range(200):
        state, _ = sgd_round(state, cfg, part, LS)
        losses.append(loss_value(Model(state.weights[0]), LS, X, y))
    drops = sum(b <= a for a, b in zip(losses, losses[1:]))
    assert drops >= 0.95 * 200
    assert losses[-1] < 0.05 * losses[0]


def test_sgd_inv_sqrt_schedule(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(lr_schedule="inv-sqrt", step_c=0.3, rounds=2)
    state = learn.init_sgd_state(3, 6)
    state, r1 = sgd_round(state, cfg, part, LS)
    state, r2 = sgd_round(state, cfg, part, LS)
    assert r1.step == pytest.approx(0.3)
    assert r2.step == pytest.approx(0.3 / math.sqrt(2))


def test_sgd_privacy_reports_attached(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(k=8, t=3, eps_target=0.5)
    state = learn.init_sgd_state(3, 6)
    state, res = sgd_round(state, cfg, part, LS)
    assert len(res.privacy) == 3
    for rep in res.privacy:
        assert rep.eps_target == 0.5
        assert rep.noise_added is True
        assert rep.eps_attained == 0.5


# ---- fedavg rounds ---- #


def test_fedavg_full_participation_single_epoch_matches_sgd(reg_part):
    """With K=m, E=1, full batch, exact sketches and f=0, a fedavg round is
    plain distributed SGD on the same weights."""
    part, _ = reg_part
    cfg = _exact_cfg(devices_per_round=3, local_epochs=1)
    fstate = init_fedavg_state(6)
    fstate, fres = fedavg_round(fstate, cfg, part, LS, sampling_rng(cfg))
    sstate = init_sgd_state(3, 6)
    sstate, _ = sgd_round(sstate, cfg, part, LS)
    assert fres.participants == (0, 1, 2)
    assert np.allclose(fstate.weights, sstate.weights[0], atol=1e-10)


def test_fedavg_sampling_without_replacement(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(devices_per_round=2, rounds=30)
    rng = sampling_rng(cfg)
    state = init_fedavg_state(6)
    seen = set()
    for _ in range(30):
        state, res = fedavg_round(state, cfg, part, LS, rng)
        assert len(res.participants) == 2
        assert len(set(res.participants)) == 2
        assert res.participants == tuple(sorted(res.participants))
        seen.update(res.participants)
    assert seen == {0, 1, 2}


def test_fedavg_sample_weights_bias_selection(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(devices_per_round=1, rounds=40, sample_weights=(0.9, 0.05, 0.05))
    rng = sampling_rng(cfg)
    state = init_fedavg_state(6)
    counts = np.zeros(3)
    for _ in range(40):
        state, res = fedavg_round(state, cfg, part, LS, rng)
        counts[res.participants[0]] += 1
    assert counts[0] > 25


def test_fedavg_warns_on_error_correction(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(error_correction_fraction=0.5, devices_per_round=2)
    state = init_fedavg_state(6)
    with pytest.warns(UserWarning):
        fedavg_round(state, cfg, part, LS, sampling_rng(cfg))


def test_fedavg_local_epochs_advance_locally(reg_part):
    part, _ = reg_part
    cfg1 = _exact_cfg(devices_per_round=3, local_epochs=1, batch_size=8)
    cfg3 = _exact_cfg(devices_per_round=3, local_epochs=3, batch_size=8)
    s1, _ = fedavg_round(init_fedavg_state(6), cfg1, part, LS, sampling_rng(cfg1))
    s3, _ = fedavg_round(init_fedavg_state(6), cfg3, part, LS, sampling_rng(cfg3))
    X = np.vstack([p[0] for p in part.parts])
    y = np.concatenate([p[1] for p in part.parts])
    assert loss_value(Model(s3.weights), LS, X, y) < loss_value(Model(s1.weights), LS, X, y)


def test_fedavg_parallel_determinism(reg_part):
    part, _ = reg_part
    cfg = _exact_cfg(devices_per_round=2, batch_size=8, k=64, eps_target=1.0)
    a = init_fedavg_state(6)
    b = init_fedavg_state(6)
    ra, rb = sampling_rng(cfg), sampling_rng(cfg)
    for _ in range(3):
        a, _ = fedavg_round(a, cfg, part, LS, ra, parallelism=1)
        b, _ = fedavg_round(b, cfg, part, LS, rb, parallelism=3)
        assert np.array_equal(a.weights, b.weights)


# ---- convergence harness ---- #


def test_least_squares_optimum_is_stationary():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(40, 7)), rng.normal(size=40)
    for l2 in (0.0, 0.2):
        w = least_squares_optimum(X, y, l2)
        g = gradient(Model(w), LossSpec(LEAST_SQUARES, l2), (X, y))
        assert np.linalg.norm(g) < 1e-10


def test_convergence_check_bounds_running_average(reg_part):
    part, _ = reg_part
    X = np.vstack([p[0] for p in part.parts])
    y = np.concatenate([p[1] for p in part.parts])
    cfg = _exact_cfg(lr_schedule="inv-sqrt", step_c=0.4, rounds=60, k=256)
    state = learn.init_sgd_state(3, 6)
    hist = TrainHistory(X, y, c=0.4)
    for _ in range(60):
        hist.iterates.append(state.weights[0].copy())
        state, res = sgd_round(state, cfg, part, LS)
        hist.grad_sq_norms.append(res.grad_sq_norm_max)
    report = convergence_check(hist, LS, res.dims)
    assert report.holds
    assert report.violation_round is None
    assert len(report.suboptimality) == len(report.bound) == 60
    assert np.all(report.suboptimality >= -1e-9)
    assert np.all(report.bound >= report.suboptimality)
    assert report.mu == pytest.approx(math.sqrt(math.e / res.dims.k))
    assert report.delta == pytest.approx(math.exp(-res.dims.t))
    assert report.suboptimality[-1] < report.suboptimality[0]


def test_convergence_check_rejects_logistic(reg_part):
    part, _ = reg_part
    X = np.vstack([p[0] for p in part.parts])
    y = np.concatenate([p[1] for p in part.parts])
    hist = TrainHistory(X, y, c=0.4, iterates=[np.zeros(6)], grad_sq_norms=[1.0])
    with pytest.raises(ValueError):
        convergence_check(hist, LossSpec(LOGISTIC), learn.SketchDims(1, 4, 6))


def test_convergence_check_flags_violations(reg_part):
    part, _ = reg_part
    X = np.vstack([p[0] for p in part.parts])
    y = np.concatenate([p[1] for p in part.parts])
    # a far-away frozen iterate with an understated gradient bound must violate:
    # the huge c kills the R^2/(2c) term and the tiny G^2 kills the other
    hist = TrainHistory(X, y, c=1e9,
                        iterates=[np.full(6, 100.0)] * 3,
                        grad_sq_norms=[1e-12] * 3)
    report = convergence_check(hist, LS, learn.SketchDims(1, 4, 6))
    assert not report.holds
    assert report.violation_round == 1
