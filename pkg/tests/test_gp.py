"""GP regression tests.

The two-point predictive oracle and the nlml values were computed with an
independent dense linear-algebra script (plain numpy solves, no Cholesky
caching) and frozen here.
"""

import numpy as np
import pytest

from fcps.errors import ContractError, NumericalError
from fcps.gp import (
    GpModel,
    KernelHyperparams,
    _chol_with_jitter,
    fantasize,
    fit,
    kernel_eval,
    nlml,
    optimize_hyperparams,
    posterior_joint,
    predict,
    predict_batch,
    refit,
    sample_posterior,
)
from fcps.optim import SearchSpace

# dense-oracle values for inputs {0, 1}, targets {0, 1}, ell=1, sf2=1, sn2=1e-6
ORACLE_MEAN_AT_HALF = 0.5493180898423446
ORACLE_VAR_AT_HALF = 0.03045697436088879
ORACLE_NLML = 2.3995277174676795
ORACLE_NLML_SINGLE = 1.3770838991417502  # N=1, y=0, sf2=2, sn2=0.5


def two_point_model():
    h = KernelHyperparams(1.0, np.array([1.0]), 1e-6)
    return fit(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), h)


def random_instance(rng, n=None, d=None):
    n = n or int(rng.integers(3, 20))
    d = d or int(rng.integers(1, 6))
    x = rng.uniform(-2, 2, size=(n, d))
    y = rng.normal(size=n)
    h = KernelHyperparams(
        float(rng.uniform(0.3, 3.0)),
        rng.uniform(0.3, 2.0, size=d),
        float(rng.uniform(1e-4, 0.3)),
    )
    return x, y, h


# ---------------------------------------------------------------------------
# hyperparameters and kernel
# ---------------------------------------------------------------------------


def test_hyperparams_must_be_positive():
    with pytest.raises(ContractError):
        KernelHyperparams(0.0, np.array([1.0]), 1e-6)
    with pytest.raises(ContractError):
        KernelHyperparams(1.0, np.array([1.0, -1.0]), 1e-6)
    with pytest.raises(ContractError):
        KernelHyperparams(1.0, np.array([1.0]), 0.0)


def test_hyperparams_log_round_trip():
    h = KernelHyperparams(2.5, np.array([0.3, 1.7]), 1e-3)
    back = KernelHyperparams.from_log_vector(h.as_log_vector())
    assert np.allclose(back.lengthscales, h.lengthscales)
    assert back.signal_variance == pytest.approx(h.signal_variance)
    assert back.noise_variance == pytest.approx(h.noise_variance)


def test_kernel_diagonal_and_symmetry():
    rng = np.random.default_rng(1)
    x, _, h = random_instance(rng, n=12, d=3)
    K = kernel_eval(x, x, h)
    assert np.allclose(np.diag(K), h.signal_variance)
    assert np.allclose(K, K.T)
    # strictly positive and bounded by the signal variance
    assert np.all(K > 0)
    assert np.all(K <= h.signal_variance + 1e-12)


def test_kernel_ard_anisotropy():
    h = KernelHyperparams(1.0, np.array([0.1, 10.0]), 1e-6)
    a = np.array([[0.0, 0.0]])
    near_long_axis = np.array([[0.0, 1.0]])
    near_short_axis = np.array([[1.0, 0.0]])
    assert kernel_eval(a, near_long_axis, h)[0, 0] > kernel_eval(a, near_short_axis, h)[0, 0]


# ---------------------------------------------------------------------------
# fit / predict
# ---------------------------------------------------------------------------


def test_predict_matches_dense_oracle():
    m = two_point_model()
    mean, var = predict(m, np.array([0.5]))
    assert mean == pytest.approx(ORACLE_MEAN_AT_HALF, abs=1e-8)
    assert var == pytest.approx(ORACLE_VAR_AT_HALF, abs=1e-8)


def test_predict_interpolates_training_points():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(8, 2))
    y = rng.normal(size=8)
    h = KernelHyperparams(1.0, np.array([0.8, 0.8]), 1e-10)
    m = fit(x, y, h)
    mean, var = predict_batch(m, x)
    assert np.allclose(mean, y, atol=1e-4)
    assert np.all(var < 1e-4)
    assert np.all(var >= 0)


def test_predict_far_from_data_reverts_to_prior():
    m = two_point_model()
    mean, var = predict(m, np.array([500.0]))
    assert abs(mean) <= 1e-12
    assert var == pytest.approx(1.0, abs=1e-12)


def test_empty_model_is_prior_only():
    h = KernelHyperparams(3.0, np.array([1.0, 1.0]), 1e-6)
    m = fit(np.zeros((0, 2)), np.zeros(0), h)
    mean, var = predict(m, np.array([0.3, -0.4]))
    assert mean == 0.0
    assert var == pytest.approx(3.0)


def test_fit_shape_validation():
    h = KernelHyperparams(1.0, np.array([1.0]), 1e-6)
    with pytest.raises(ContractError):
        fit(np.zeros((3, 2)), np.zeros(3), h)
    with pytest.raises(ContractError):
        fit(np.zeros((3, 1)), np.zeros(4), h)
    with pytest.raises(ContractError):
        fit(np.array([[np.nan]]), np.zeros(1), h)


def test_input_space_scaling_equivalence():
    rng = np.random.default_rng(5)
    space = SearchSpace([-4.0, 10.0], [2.0, 30.0])
    x = space.sample_uniform(10, rng)
    y = rng.normal(size=10)
    h = KernelHyperparams(1.2, np.array([0.5, 0.5]), 1e-4)
    scaled = fit(x, y, h, input_space=space)
    manual = fit(space.to_unit(x), y, h)
    q = space.sample_uniform(5, rng)
    ms, vs = predict_batch(scaled, q)
    mm, vm = predict_batch(manual, space.to_unit(q))
    assert np.allclose(ms, mm, atol=1e-10)
    assert np.allclose(vs, vm, atol=1e-10)


def test_standardize_round_trip():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, size=(12, 1))
    y = 50.0 + 3.0 * rng.normal(size=12)
    h = KernelHyperparams(1.0, np.array([0.3]), 1e-3)
    m = fit(x, y, h, standardize=True)
    shift, scale = m.y_shift, m.y_scale
    manual = fit(x, (y - shift) / scale, h)
    q = rng.uniform(0, 1, size=(4, 1))
    ms, vs = predict_batch(m, q)
    mm, vm = predict_batch(manual, q)
    assert np.allclose(ms, shift + scale * mm, atol=1e-10)
    assert np.allclose(vs, scale**2 * vm, atol=1e-10)
    # far from data the standardized model reverts to the target mean
    far_mean, _ = predict(m, np.array([1e6]))
    assert far_mean == pytest.approx(shift, abs=1e-9)


# ---------------------------------------------------------------------------
# marginal likelihood
# ---------------------------------------------------------------------------


def test_nlml_matches_dense_oracle():
    h = KernelHyperparams(1.0, np.array([1.0]), 1e-6)
    val, _ = nlml(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), h)
    assert val == pytest.approx(ORACLE_NLML, abs=1e-10)


def test_nlml_single_point_closed_form():
    h = KernelHyperparams(2.0, np.array([1.0]), 0.5)
    val, _ = nlml(np.array([[0.7]]), np.array([0.0]), h)
    assert val == pytest.approx(ORACLE_NLML_SINGLE, abs=1e-12)


def test_nlml_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    step = 1e-5
    for _ in range(8):
        x, y, h = random_instance(rng)
        _, grad = nlml(x, y, h)
        logv = h.as_log_vector()
        fd = np.empty_like(grad)
        for j in range(logv.size):
            up, dn = logv.copy(), logv.copy()
            up[j] += step
            dn[j] -= step
            vu, _ = nlml(x, y, KernelHyperparams.from_log_vector(up))
            vd, _ = nlml(x, y, KernelHyperparams.from_log_vector(dn))
            fd[j] = (vu - vd) / (2 * step)
        scale = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(grad - fd) / scale) <= 1e-4


def test_optimize_hyperparams_never_worse_than_init():
    rng = np.random.default_rng(8)
    x, y, _ = random_instance(rng, n=15, d=2)
    init = KernelHyperparams(1.0, np.array([1.0, 1.0]), 0.01)
    out = optimize_hyperparams(x, y, init, restarts=3, rng=rng)
    v_init, _ = nlml(x, y, init)
    v_out, _ = nlml(x, y, out)
    assert v_out <= v_init + 1e-12


def test_optimize_hyperparams_recovers_lengthscale():
    # data drawn from a known GP; the fitted lengthscale should land within 2x
    rng = np.random.default_rng(9)
    true_ell = 0.5
    x = np.sort(rng.uniform(0, 5, size=60))[:, None]
    h_true = KernelHyperparams(1.0, np.array([true_ell]), 1e-4)
    K = kernel_eval(x, x, h_true) + 1e-4 * np.eye(60)
    y = np.linalg.cholesky(K) @ rng.standard_normal(60)
    init = KernelHyperparams(1.0, np.array([2.5]), 1e-2)
    out = optimize_hyperparams(x, y, init, restarts=3, rng=rng)
    assert true_ell / 2 <= out.lengthscales[0] <= true_ell * 2


def test_optimize_hyperparams_degenerate_dataset():
    init = KernelHyperparams(1.0, np.array([1.0]), 0.01)
    out = optimize_hyperparams(np.array([[0.0]]), np.array([1.0]), init)
    assert out is init


# ---------------------------------------------------------------------------
# incremental update and sampling
# ---------------------------------------------------------------------------


def test_fantasize_equals_refit():
    rng = np.random.default_rng(10)
    for _ in range(6):
        x, y, h = random_instance(rng)
        m = fit(x, y, h)
        x_new = rng.uniform(-2, 2, size=x.shape[1])
        y_new = float(rng.normal())
        fast = fantasize(m, x_new, y_new)
        slow = fit(np.vstack([x, x_new]), np.append(y, y_new), h)
        q = rng.uniform(-2, 2, size=(6, x.shape[1]))
        mf, vf = predict_batch(fast, q)
        ms, vs = predict_batch(slow, q)
        assert np.allclose(mf, ms, atol=1e-8)
        assert np.allclose(vf, vs, atol=1e-8)


def test_fantasize_on_empty_model():
    h = KernelHyperparams(1.0, np.array([1.0]), 1e-6)
    m = fit(np.zeros((0, 1)), np.zeros(0), h)
    m2 = fantasize(m, np.array([0.5]), 2.0)
    mean, _ = predict(m2, np.array([0.5]))
    assert mean == pytest.approx(2.0, abs=1e-4)


def test_fantasize_near_duplicate_still_consistent():
    # near-zero pivot forces the refactorization fallback
    h = KernelHyperparams(1.0, np.array([1.0]), 1e-10)
    x = np.array([[0.0], [1.0]])
    m = fit(x, np.array([0.0, 1.0]), h)
    m2 = fantasize(m, np.array([1.0 + 1e-13]), 1.0)
    slow = fit(np.vstack([x, [[1.0 + 1e-13]]]), np.array([0.0, 1.0, 1.0]), h)
    q = np.array([[0.3], [0.9]])
    mf, _ = predict_batch(m2, q)
    ms, _ = predict_batch(slow, q)
    assert np.allclose(mf, ms, atol=1e-6)


def test_sample_posterior_deterministic_and_calibrated():
    m = two_point_model()
    pts = np.array([[0.25], [0.5], [0.75]])
    a = sample_posterior(m, pts, 4000, np.random.default_rng(42))
    b = sample_posterior(m, pts, 4000, np.random.default_rng(42))
    assert np.array_equal(a, b)
    mean, cov = posterior_joint(m, pts)
    assert np.allclose(a.mean(axis=0), mean, atol=4 * np.sqrt(np.diag(cov).max() / 4000) + 1e-3)
    emp_cov = np.cov(a.T)
    assert np.allclose(emp_cov, cov, atol=0.01)


def test_sample_posterior_degenerate_returns_mean():
    h = KernelHyperparams(1.0, np.array([1.0]), 1e-10)
    x = np.array([[0.0]])
    m = fit(x, np.array([3.0]), h)
    draws = sample_posterior(m, x, 5, np.random.default_rng(0))
    assert np.allclose(draws, 3.0, atol=1e-4)


# ---------------------------------------------------------------------------
# numerics
# ---------------------------------------------------------------------------


def test_jitter_handles_duplicate_rows():
    h = KernelHyperparams(1.0, np.array([1.0]), 1e-9)
    x = np.array([[0.5], [0.5], [0.5], [1.5]])
    y = np.array([1.0, 1.0, 1.0, 0.0])
    m = fit(x, y, h)
    mean, _ = predict(m, np.array([0.5]))
    assert mean == pytest.approx(1.0, abs=1e-3)


def test_chol_with_jitter_gives_up_eventually():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(NumericalError) as exc:
        _chol_with_jitter(bad)
    assert len(exc.value.jitters) > 0


def test_refit_improves_or_keeps_nlml():
    rng = np.random.default_rng(11)
    x, y, _ = random_instance(rng, n=18, d=2)
    init = KernelHyperparams(1.0, np.array([1.0, 1.0]), 0.05)
    space = SearchSpace([-2.0, -2.0], [2.0, 2.0])
    m = fit(x, y, init, input_space=space, standardize=True)
    m2 = refit(m, restarts=2, rng=rng)
    v1, _ = nlml(m.xt, m.yt, m.hyperparams)
    v2, _ = nlml(m2.xt, m2.yt, m2.hyperparams)
    assert v2 <= v1 + 1e-12
    assert isinstance(m2, GpModel)
