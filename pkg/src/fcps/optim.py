"""Box-constrained maximization: deterministic DIRECT search plus L-BFGS refinement.

The global stage is a DIRECT-style rectangle subdivision on the unit cube
with trisection along the longest side only (ties broken by the lowest
dimension index), which keeps the search fully deterministic.  The local
stage wraps scipy's bounded L-BFGS with central finite differences when no
analytic gradient is supplied.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .errors import ContractError

_log = logging.getLogger(__name__)

# Rectangles thinner than 3**-26 along every side are never subdivided
# further; at that scale trisection is below float resolution of the box.
_MIN_LEVEL = 26
_PO_EPSILON = 1e-4


# ---------------------------------------------------------------------------
# search space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    """Axis-aligned box of valid inputs with strictly ordered bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ContractError("bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractError("bounds must be finite")
        if not np.all(lo < hi):
            raise ContractError("every lower bound must lie strictly below its upper bound")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, atol: float = 0.0):
        """True where points lie inside the box (per row for 2-d input)."""
        x = np.asarray(x, dtype=float)
        lo_ok = x >= self.lower - atol
        hi_ok = x <= self.upper + atol
        return np.logical_and(lo_ok, hi_ok).all(axis=-1)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.span

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.span

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def sample_latin(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Latin hypercube sample: one point per stratum along every axis."""
        if n < 1:
            raise ContractError("latin hypercube sample needs n >= 1")
        u = np.empty((n, self.dim))
        for j in range(self.dim):
            strata = rng.permutation(n) + rng.uniform(size=n)
            u[:, j] = strata / n
        return self.from_unit(u)

    def concat(self, other: "SearchSpace") -> "SearchSpace":
        """Product box: this space's axes followed by the other's."""
        return SearchSpace(
            np.concatenate([self.lower, other.lower]),
            np.concatenate([self.upper, other.upper]),
        )


# ---------------------------------------------------------------------------
# DIRECT global stage
# ---------------------------------------------------------------------------


def _as_batch(f, vectorized: bool):
    """Adapt an objective to the (m, d) -> (m,) batch protocol."""
    if vectorized:
        return lambda pts: np.asarray(f(pts), dtype=float).reshape(len(pts))
    return lambda pts: np.array([float(f(p)) for p in pts])


class _DirectState:
    """Rectangle bookkeeping for one DIRECT run, in unit-cube coordinates."""

    def __init__(self, dim: int):
        self.dim = dim
        self.centers: list[np.ndarray] = []
        self.levels: list[np.ndarray] = []  # trisection counts per dimension
        self.values: list[float] = []
        self.evals = 0
        self.best_index = 0

    @property
    def best_value(self) -> float:
        return self.values[self.best_index]

    @property
    def best_center(self) -> np.ndarray:
        return self.centers[self.best_index]

    def measures(self) -> np.ndarray:
        lev = np.array(self.levels)
        return 0.5 * np.sqrt(np.sum(9.0 ** (-lev.astype(float)), axis=1))

    def ranked_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Centers and values ordered by decreasing value (stable)."""
        vals = np.array(self.values)
        order = np.argsort(-vals, kind="stable")
        return np.array(self.centers)[order], vals[order]


def _potentially_optimal(state: _DirectState) -> list[int]:
    """Indices of rectangles to subdivide this iteration.

    A rectangle is potentially optimal when some slope K > 0 makes its
    value-plus-K-times-size bound dominate every other rectangle and clear
    the current best by the usual epsilon margin.  Only the best (lowest
    creation index) rectangle of each size class is considered.
    """
    d = state.measures()
    vals = np.array(state.values)
    lev = np.array(state.levels)
    splittable = lev.min(axis=1) < _MIN_LEVEL
    if not splittable.any():
        return []

    keys = np.round(d, 14)
    reps: dict[float, int] = {}
    for i in np.flatnonzero(splittable):
        k = keys[i]
        j = reps.get(k)
        if j is None or vals[i] > vals[j]:
            reps[k] = int(i)
    sizes = sorted(reps)
    idx = [reps[k] for k in sizes]
    f = vals[idx]
    dd = d[idx]
    f_max = vals.max()
    threshold = f_max + _PO_EPSILON * abs(f_max)

    chosen = []
    for j in range(len(idx)):
        k_lo = 0.0
        for i in range(j):
            k_lo = max(k_lo, (f[i] - f[j]) / (dd[j] - dd[i]))
        k_hi = np.inf
        for i in range(j + 1, len(idx)):
            k_hi = min(k_hi, (f[j] - f[i]) / (dd[i] - dd[j]))
        if k_hi < k_lo or k_hi <= 0.0:
            continue
        bound = f[j] + k_hi * dd[j] if np.isfinite(k_hi) else np.inf
        if bound >= threshold:
            chosen.append(idx[j])
    return chosen


def _direct_search(f_batch, dim: int, max_evals: int) -> _DirectState:
    state = _DirectState(dim)
    center = np.full(dim, 0.5)
    v = f_batch(center[None, :])[0]
    if not np.isfinite(v):
        _log.warning("objective returned non-finite value at the box center")
        v = -np.inf
    state.centers.append(center)
    state.levels.append(np.zeros(dim, dtype=np.int64))
    state.values.append(float(v))
    state.evals = 1

    while state.evals + 2 <= max_evals:
        chosen = _potentially_optimal(state)
        if not chosen:
            break
        budget_pairs = (max_evals - state.evals) // 2
        chosen = chosen[:budget_pairs]

        new_points = []
        split_dims = []
        for i in chosen:
            lev = state.levels[i]
            side_dim = int(np.argmin(lev))  # longest side; ties -> lowest index
            delta = 3.0 ** (-(lev[side_dim] + 1))
            c = state.centers[i]
            lo_pt = c.copy()
            lo_pt[side_dim] -= delta
            hi_pt = c.copy()
            hi_pt[side_dim] += delta
            new_points.extend([lo_pt, hi_pt])
            split_dims.append(side_dim)

        vals = f_batch(np.array(new_points))
        bad = ~np.isfinite(vals)
        if bad.any():
            _log.warning("objective returned %d non-finite values; treated as -inf", int(bad.sum()))
            vals = np.where(bad, -np.inf, vals)

        for pair, (i, side_dim) in enumerate(zip(chosen, split_dims)):
            new_level = state.levels[i].copy()
            new_level[side_dim] += 1
            state.levels[i] = new_level
            for k in range(2):
                state.centers.append(new_points[2 * pair + k])
                state.levels.append(new_level.copy())
                state.values.append(float(vals[2 * pair + k]))
                state.evals += 1
                if state.values[-1] > state.best_value:
                    state.best_index = len(state.values) - 1
    return state


def direct_maximize(f, space: SearchSpace, max_evals: int, *, vectorized: bool = False):
    """Deterministic DIRECT maximization of ``f`` over ``space``.

    Returns ``(x, value)``.  Uses at most ``max_evals`` objective
    evaluations; with a constant objective the box center is returned because
    the incumbent only moves on strict improvement.
    """
    if max_evals < 2 * space.dim + 1:
        raise ContractError(f"max_evals must be at least 2*dim+1 = {2 * space.dim + 1}")
    batch = _as_batch(f, vectorized)
    state = _direct_search(lambda u: batch(space.from_unit(u)), space.dim, max_evals)
    return space.from_unit(state.best_center), state.best_value


# ---------------------------------------------------------------------------
# L-BFGS local stage
# ---------------------------------------------------------------------------


def _central_gradient(batch_f, x: np.ndarray, space: SearchSpace) -> np.ndarray:
    """Central finite differences with step 1e-6 * span, one-sided at bounds."""
    h = 1e-6 * space.span
    d = space.dim
    fwd = np.repeat(x[None, :], d, axis=0)
    bwd = np.repeat(x[None, :], d, axis=0)
    for j in range(d):
        fwd[j, j] = min(x[j] + h[j], space.upper[j])
        bwd[j, j] = max(x[j] - h[j], space.lower[j])
    vals = batch_f(np.vstack([fwd, bwd]))
    denom = fwd[np.arange(d), np.arange(d)] - bwd[np.arange(d), np.arange(d)]
    grad = np.zeros(d)
    ok = denom > 0
    grad[ok] = (vals[:d][ok] - vals[d:][ok]) / denom[ok]
    return grad


def lbfgs_refine(f, space: SearchSpace, x0, max_iters: int = 100, *, grad=None,
                 vectorized: bool = False):
    """Bounded L-BFGS ascent from ``x0``; never returns a worse point.

    Returns ``(x, value)`` with ``x`` inside the box and
    ``value >= f(x0) - 1e-12``.
    """
    if max_iters < 1:
        raise ContractError("max_iters must be positive")
    batch = _as_batch(f, vectorized)
    x0 = space.clip(x0)
    if x0.shape != (space.dim,):
        raise ContractError("x0 dimension does not match the search space")
    f0 = float(batch(x0[None, :])[0])

    if grad is None:
        jac = lambda x: -_central_gradient(batch, x, space)
    else:
        jac = lambda x: -np.asarray(grad(x), dtype=float)

    res = _scipy_minimize(
        lambda x: -float(batch(x[None, :])[0]),
        x0,
        jac=jac,
        method="L-BFGS-B",
        bounds=list(zip(space.lower, space.upper)),
        options={"maxiter": max_iters, "maxcor": 10},
    )
    x = space.clip(res.x)
    val = float(batch(x[None, :])[0])
    if not np.isfinite(val) or val < f0:
        return x0, f0
    return x, val


def global_then_local(f, space: SearchSpace, *, direct_evals: int | None = None,
                      refine_starts: int = 3, refine_iters: int = 100,
                      grad=None, vectorized: bool = False):
    """DIRECT followed by L-BFGS restarts from the best distinct rectangles.

    Returns ``(x, value)`` with value at least the DIRECT incumbent's.
    """
    if refine_starts < 1:
        raise ContractError("refine_starts must be positive")
    if direct_evals is None:
        direct_evals = 500 * space.dim
    if direct_evals < 2 * space.dim + 1:
        raise ContractError(f"direct_evals must be at least 2*dim+1 = {2 * space.dim + 1}")

    batch = _as_batch(f, vectorized)
    state = _direct_search(lambda u: batch(space.from_unit(u)), space.dim, direct_evals)

    starts = [state.best_center]
    ranked_centers, _ = state.ranked_centers()
    for c in ranked_centers:
        if len(starts) >= refine_starts:
            break
        if all(np.max(np.abs(c - s)) > 1e-12 for s in starts):
            starts.append(c)

    best_x = space.from_unit(state.best_center)
    best_val = state.best_value
    for u in starts:
        x, val = lbfgs_refine(f, space, space.from_unit(u), refine_iters,
                              grad=grad, vectorized=vectorized)
        if val > best_val:
            best_x, best_val = x, val
    return best_x, best_val
