"""Gaussian-process regression with a squared-exponential ARD kernel.

Models use a zero-mean prior over possibly transformed coordinates: inputs
may be scaled to the unit box via a :class:`~fcps.optim.SearchSpace` and
targets may be standardized at fit time.  Hyperparameters always refer to the
transformed coordinates; predictions are reported in the original units.

The marginal-likelihood gradient follows the standard trace identity
d(nlml)/dt = -0.5 tr((alpha alpha^T - K^{-1}) dK/dt) over log-hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize as _scipy_minimize

from .errors import ContractError, NumericalError
from .optim import SearchSpace

_JITTER_START = 1e-10
_JITTER_LIMIT = 1e-4


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelHyperparams:
    """Squared-exponential kernel settings; every entry strictly positive."""

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        ell = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        sf2 = float(self.signal_variance)
        sn2 = float(self.noise_variance)
        if ell.ndim != 1:
            raise ContractError("lengthscales must be a 1-d array")
        if not (np.all(np.isfinite(ell)) and np.isfinite(sf2) and np.isfinite(sn2)):
            raise ContractError("hyperparameters must be finite")
        if sf2 <= 0 or sn2 <= 0 or np.any(ell <= 0):
            raise ContractError("hyperparameters must be strictly positive")
        ell.flags.writeable = False
        object.__setattr__(self, "signal_variance", sf2)
        object.__setattr__(self, "lengthscales", ell)
        object.__setattr__(self, "noise_variance", sn2)

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def as_log_vector(self) -> np.ndarray:
        return np.concatenate([
            [np.log(self.signal_variance)],
            np.log(self.lengthscales),
            [np.log(self.noise_variance)],
        ])

    @classmethod
    def from_log_vector(cls, v) -> "KernelHyperparams":
        v = np.asarray(v, dtype=float)
        return cls(np.exp(v[0]), np.exp(v[1:-1]), np.exp(v[-1]))


@dataclass(frozen=True)
class GpModel:
    """Fitted GP: raw data, transforms, and the Cholesky/weights cache.

    ``chol`` is the lower factor of K + noise*I (+ jitter) over transformed
    inputs ``xt``; ``weights`` solves that system against the transformed
    targets ``yt``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    hyperparams: KernelHyperparams
    x_lo: np.ndarray | None
    x_span: np.ndarray | None
    y_shift: float
    y_scale: float
    xt: np.ndarray
    yt: np.ndarray
    chol: np.ndarray
    weights: np.ndarray
    jitter: float

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def transform_inputs(self, x: np.ndarray) -> np.ndarray:
        if self.x_lo is None:
            return np.asarray(x, dtype=float)
        return (np.asarray(x, dtype=float) - self.x_lo) / self.x_span


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


def kernel_eval(a, b, h: KernelHyperparams) -> np.ndarray:
    """Kernel matrix between row sets ``a`` (m, d) and ``b`` (n, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != h.dim or b.shape[1] != h.dim:
        raise ContractError("input dimension does not match kernel lengthscales")
    sa = a / h.lengthscales
    sb = b / h.lengthscales
    sq = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * (sa @ sb.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return h.signal_variance * np.exp(-0.5 * sq)


def _chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter.

    Jitter starts at 1e-10 * mean diagonal and grows tenfold up to
    1e-4 * mean diagonal before giving up.
    """
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = float(np.trace(K)) / n
    if scale <= 0:
        scale = 1.0
    attempted = []
    jitter = 0.0
    while True:
        try:
            L = cholesky(K + jitter * np.eye(n), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            pass
        if jitter == 0.0:
            jitter = _JITTER_START * scale
        else:
            jitter *= 10.0
        if jitter > _JITTER_LIMIT * scale * (1 + 1e-12):
            raise NumericalError(
                f"Cholesky factorization failed after jitter up to {attempted[-1]:.3e}",
                jitters=attempted,
            )
        attempted.append(jitter)


# ---------------------------------------------------------------------------
# fitting and prediction
# ---------------------------------------------------------------------------


def _assemble(inputs, targets, h, x_lo, x_span, y_shift, y_scale) -> GpModel:
    xt = inputs if x_lo is None else (inputs - x_lo) / x_span
    yt = (targets - y_shift) / y_scale
    if len(xt):
        K = kernel_eval(xt, xt, h) + h.noise_variance * np.eye(len(xt))
        L, jitter = _chol_with_jitter(K)
        weights = cho_solve((L, True), yt)
    else:
        L = np.zeros((0, 0))
        weights = np.zeros(0)
        jitter = 0.0
    return GpModel(inputs, targets, h, x_lo, x_span, y_shift, y_scale,
                   xt, yt, L, weights, jitter)


def fit(inputs, targets, h: KernelHyperparams, *, input_space: SearchSpace | None = None,
        standardize: bool = False) -> GpModel:
    """Build a model from (possibly empty) data under fixed hyperparameters."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if inputs.size == 0:
        inputs = inputs.reshape(0, h.dim)
    if inputs.ndim != 2 or inputs.shape[1] != h.dim:
        raise ContractError("inputs must be (n, d) with d matching the kernel")
    if targets.shape != (inputs.shape[0],):
        raise ContractError("targets must be one value per input row")
    if inputs.size and not np.all(np.isfinite(inputs)):
        raise ContractError("inputs must be finite")
    if targets.size and not np.all(np.isfinite(targets)):
        raise ContractError("targets must be finite")

    x_lo = x_span = None
    if input_space is not None:
        if input_space.dim != h.dim:
            raise ContractError("input_space dimension does not match the kernel")
        x_lo = input_space.lower
        x_span = input_space.span
    y_shift, y_scale = 0.0, 1.0
    if standardize and len(targets):
        y_shift = float(np.mean(targets))
        sd = float(np.std(targets))
        y_scale = sd if sd > 1e-12 else 1.0
    return _assemble(inputs, targets, h, x_lo, x_span, y_shift, y_scale)


def predict_batch(m: GpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and (noise-free) variance at each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != m.hyperparams.dim:
        raise ContractError("query dimension does not match the model")
    h = m.hyperparams
    if len(m) == 0:
        mean_t = np.zeros(len(x))
        var_t = np.full(len(x), h.signal_variance)
    else:
        xt = m.transform_inputs(x)
        ks = kernel_eval(xt, m.xt, h)
        mean_t = ks @ m.weights
        v = solve_triangular(m.chol, ks.T, lower=True)
        var_t = h.signal_variance - np.sum(v**2, axis=0)
        np.maximum(var_t, 0.0, out=var_t)
    return m.y_shift + m.y_scale * mean_t, (m.y_scale**2) * var_t


def predict(m: GpModel, x) -> tuple[float, float]:
    mean, var = predict_batch(m, np.asarray(x, dtype=float)[None, :])
    return float(mean[0]), float(var[0])


def posterior_joint(m: GpModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Joint posterior mean vector and covariance matrix at ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    h = m.hyperparams
    pt = m.transform_inputs(points)
    if len(m) == 0:
        mean_t = np.zeros(len(points))
        cov_t = kernel_eval(pt, pt, h)
    else:
        ks = kernel_eval(pt, m.xt, h)
        mean_t = ks @ m.weights
        v = solve_triangular(m.chol, ks.T, lower=True)
        cov_t = kernel_eval(pt, pt, h) - v.T @ v
    return m.y_shift + m.y_scale * mean_t, (m.y_scale**2) * cov_t


def sample_posterior(m: GpModel, points, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """``n_draws`` joint posterior function draws, one row per draw."""
    if n_draws < 1:
        raise ContractError("n_draws must be positive")
    mean, cov = posterior_joint(m, points)
    k = mean.size
    if float(np.trace(cov)) <= 1e-300:
        return np.tile(mean, (n_draws, 1))
    L, _ = _chol_with_jitter(cov)
    z = rng.standard_normal((n_draws, k))
    return mean[None, :] + z @ L.T


# ---------------------------------------------------------------------------
# marginal likelihood
# ---------------------------------------------------------------------------


def nlml(inputs, targets, h: KernelHyperparams) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient.

    The gradient is over log-hyperparameters ordered as
    [log signal_variance, log lengthscales..., log noise_variance].
    Data is used exactly as given; no transforms are applied here.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    n, d = inputs.shape
    if d != h.dim or targets.shape != (n,):
        raise ContractError("data shapes do not match the kernel")
    if n == 0:
        raise ContractError("nlml needs at least one observation")

    kf = kernel_eval(inputs, inputs, h)
    K = kf + h.noise_variance * np.eye(n)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return np.inf, np.zeros(d + 2)
    alpha = cho_solve((L, True), targets)
    value = (0.5 * targets @ alpha + np.sum(np.log(np.diag(L)))
             + 0.5 * n * np.log(2.0 * np.pi))

    kinv = cho_solve((L, True), np.eye(n))
    A = np.outer(alpha, alpha) - kinv
    grad = np.empty(d + 2)
    grad[0] = -0.5 * np.sum(A * kf)
    for i in range(d):
        diff = inputs[:, i][:, None] - inputs[:, i][None, :]
        grad[1 + i] = -0.5 * np.sum(A * kf * (diff**2 / h.lengthscales[i] ** 2))
    grad[-1] = -0.5 * h.noise_variance * np.trace(A)
    return float(value), grad


def default_hyperparam_bounds(inputs, targets) -> list[tuple[float, float]]:
    """Log-space box for hyperparameter search, derived from the data.

    Lengthscales range over [1e-3, 10] times the observed input span per
    dimension; noise variance over [1e-8, observed target variance]; signal
    variance over [1e-4, 1e2] times the observed target variance.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    spans = inputs.max(axis=0) - inputs.min(axis=0)
    spans = np.where(spans > 1e-12, spans, 1.0)
    vy = float(np.var(targets))
    vy = max(vy, 1e-8)
    bounds = [(np.log(1e-4 * vy), np.log(1e2 * vy))]
    bounds += [(np.log(1e-3 * s), np.log(10.0 * s)) for s in spans]
    bounds.append((np.log(1e-8), np.log(max(vy, 1e-7))))
    return bounds


def optimize_hyperparams(inputs, targets, init: KernelHyperparams, *,
                         restarts: int = 3, rng: np.random.Generator | None = None,
                         bounds: list[tuple[float, float]] | None = None,
                         prior: list[tuple[float, float]] | None = None) -> KernelHyperparams:
    """Bounded likelihood maximization, warm-started plus random restarts.

    ``prior`` optionally lists one (mean, width) Gaussian penalty per
    log-hyperparameter, turning the search into a MAP fit under independent
    lognormal priors; small datasets then stay near the prior means instead
    of committing to whatever extreme the likelihood surface rewards first.
    The returned hyperparameters never score worse than ``init`` under the
    chosen objective.  With fewer than two observations the data says
    nothing useful, so ``init`` comes back unchanged.
    """
    if restarts < 1:
        raise ContractError("restarts must be positive")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if len(targets) <= 1:
        return init
    if bounds is None:
        bounds = default_hyperparam_bounds(inputs, targets)
    if len(bounds) != init.dim + 2:
        raise ContractError("bounds must cover every log-hyperparameter")
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if prior is not None:
        if len(prior) != init.dim + 2:
            raise ContractError("prior must cover every log-hyperparameter")
        p_mu = np.array([p[0] for p in prior], dtype=float)
        p_sd = np.array([p[1] for p in prior], dtype=float)
        if np.any(p_sd <= 0.0):
            raise ContractError("prior widths must be positive")
    if rng is None:
        rng = np.random.default_rng(0)

    def objective(logv):
        value, grad = nlml(inputs, targets, KernelHyperparams.from_log_vector(logv))
        if prior is not None and np.isfinite(value):
            z = (logv - p_mu) / p_sd
            value += 0.5 * float(z @ z)
            grad = grad + z / p_sd
        return value, grad

    starts = [np.clip(init.as_log_vector(), lo, hi)]
    for _ in range(restarts - 1):
        starts.append(rng.uniform(lo, hi))

    best_val, _ = objective(init.as_log_vector())
    best = init
    for s in starts:
        res = _scipy_minimize(objective, s, jac=True, method="L-BFGS-B",
                              bounds=bounds, options={"maxiter": 200, "maxcor": 10})
        cand = KernelHyperparams.from_log_vector(np.clip(res.x, lo, hi))
        val, _ = objective(cand.as_log_vector())
        if val < best_val:
            best_val, best = val, cand
    return best


def refit(m: GpModel, *, restarts: int = 3, rng: np.random.Generator | None = None,
          bounds: list[tuple[float, float]] | None = None,
          prior: list[tuple[float, float]] | None = None) -> GpModel:
    """Re-optimize hyperparameters on the model's transformed data in place."""
    h = optimize_hyperparams(m.xt, m.yt, m.hyperparams, restarts=restarts,
                             rng=rng, bounds=bounds, prior=prior)
    return _assemble(m.inputs, m.targets, h, m.x_lo, m.x_span, m.y_shift, m.y_scale)


# ---------------------------------------------------------------------------
# shared-input ensemble
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GpEnsemble:
    """Many GPs sharing inputs and hyperparameters, one target column each.

    The kernel matrix and its Cholesky factor are computed once; per-branch
    state reduces to a weight column and a target standardization.
    """

    inputs: np.ndarray
    targets: np.ndarray  # (N, C)
    hyperparams: KernelHyperparams
    x_lo: np.ndarray | None
    x_span: np.ndarray | None
    y_shift: np.ndarray  # (C,)
    y_scale: np.ndarray  # (C,)
    xt: np.ndarray
    chol: np.ndarray
    alphas: np.ndarray  # (N, C)
    jitter: float

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_branches(self) -> int:
        return self.targets.shape[1]

    def transform_inputs(self, x: np.ndarray) -> np.ndarray:
        if self.x_lo is None:
            return np.asarray(x, dtype=float)
        return (np.asarray(x, dtype=float) - self.x_lo) / self.x_span


def fit_shared_inputs(inputs, target_matrix, h: KernelHyperparams, *,
                      input_space: SearchSpace | None = None,
                      standardize: bool = True) -> GpEnsemble:
    """Fit one GP per target column over a common input set."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(target_matrix, dtype=float))
    if inputs.size == 0:
        inputs = inputs.reshape(0, h.dim)
        if targets.size == 0:
            keep = targets.shape[1] if targets.ndim == 2 and targets.shape[1] else 1
            targets = targets.reshape(0, keep)
    if inputs.shape[1] != h.dim or targets.shape[0] != inputs.shape[0]:
        raise ContractError("target matrix must have one row per input")
    x_lo = x_span = None
    if input_space is not None:
        if input_space.dim != h.dim:
            raise ContractError("input_space dimension does not match the kernel")
        x_lo, x_span = input_space.lower, input_space.span
    n, c = targets.shape if targets.size else (0, targets.shape[1])
    if standardize and n:
        y_shift = targets.mean(axis=0)
        sd = targets.std(axis=0)
        y_scale = np.where(sd > 1e-12, sd, 1.0)
    else:
        y_shift = np.zeros(c)
        y_scale = np.ones(c)
    xt = inputs if x_lo is None else (inputs - x_lo) / x_span
    yt = (targets - y_shift) / y_scale
    if n:
        K = kernel_eval(xt, xt, h) + h.noise_variance * np.eye(n)
        L, jitter = _chol_with_jitter(K)
        alphas = cho_solve((L, True), yt)
    else:
        L = np.zeros((0, 0))
        alphas = np.zeros((0, c))
        jitter = 0.0
    return GpEnsemble(inputs, targets, h, x_lo, x_span, y_shift, y_scale,
                      xt, L, alphas, jitter)


def ensemble_branch_model(ens: GpEnsemble, branch: int) -> GpModel:
    """Materialize one ensemble column as a standalone model."""
    return GpModel(ens.inputs, ens.targets[:, branch], ens.hyperparams,
                   ens.x_lo, ens.x_span, float(ens.y_shift[branch]),
                   float(ens.y_scale[branch]), ens.xt,
                   (ens.targets[:, branch] - ens.y_shift[branch]) / ens.y_scale[branch],
                   ens.chol, ens.alphas[:, branch], ens.jitter)


# ---------------------------------------------------------------------------
# incremental update
# ---------------------------------------------------------------------------


def fantasize(m: GpModel, x, y: float) -> GpModel:
    """Model extended by one observation via a rank-1 Cholesky update.

    Transforms are carried over unchanged, so the result equals a refit on
    the extended dataset under the same transforms.  Falls back to a full
    refactorization if the incremental pivot is numerically unusable.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != m.hyperparams.dim:
        raise ContractError("query dimension does not match the model")
    new_inputs = np.vstack([m.inputs, x]) if len(m) else x.copy()
    new_targets = np.append(m.targets, float(y))
    h = m.hyperparams
    if len(m) == 0:
        return _assemble(new_inputs, new_targets, h, m.x_lo, m.x_span,
                         m.y_shift, m.y_scale)

    xt_new = m.transform_inputs(x)
    k_vec = kernel_eval(m.xt, xt_new, h)[:, 0]
    k_ss = h.signal_variance + h.noise_variance + m.jitter
    b = solve_triangular(m.chol, k_vec, lower=True)
    c_sq = k_ss - b @ b
    if c_sq <= 1e-12 * k_ss:
        return _assemble(new_inputs, new_targets, h, m.x_lo, m.x_span,
                         m.y_shift, m.y_scale)

    n = len(m)
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = m.chol
    L[n, :n] = b
    L[n, n] = np.sqrt(c_sq)
    yt = np.append(m.yt, (float(y) - m.y_shift) / m.y_scale)
    weights = cho_solve((L, True), yt)
    return GpModel(new_inputs, new_targets, h, m.x_lo, m.x_span, m.y_shift,
                   m.y_scale, np.vstack([m.xt, xt_new]), yt, L, weights, m.jitter)
