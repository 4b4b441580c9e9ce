"""Monte Carlo ground truth for costs, variances, and Shapley effects.

These estimators work on arbitrary noise-free black boxes and serve as the
independent check on the closed-form forest computations.  The conditional
variance uses a double loop with the standard inner-noise bias correction, so
the estimate can be trusted at a few standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .forest import Forest, evaluate_many

DEFAULT_N_INNER = 16
DEFAULT_N_OUTER = 10_000
DEFAULT_N_SUBSETS = 64
_CHUNK = 200_000  # max points per function-evaluation batch


@dataclass(frozen=True)
class BlackBox:
    """A deterministic function on [0,1]^p taking an (N, p) array."""

    p: int
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ValueError(f"expected (N, {self.p}) points, got {X.shape}")
        return np.asarray(self.fn(X), dtype=float)

    @staticmethod
    def from_forest(forest: Forest) -> "BlackBox":
        return BlackBox(forest.p, lambda X: evaluate_many(forest, X))


def mc_cost(fn: BlackBox, P, n_outer: int = DEFAULT_N_OUTER,
            n_inner: int = DEFAULT_N_INNER, rng=None) -> tuple:
    """Double-loop estimate of Var(E[f(X) | X_P]) with jackknife stderr.

    The naive variance of inner means is biased upward by the inner sampling
    noise; the average inner variance over n_inner is subtracted out.
    """
    if n_outer < 2 or n_inner < 2:
        raise ValueError("n_outer and n_inner must be >= 2")
    rng = np.random.default_rng(rng)
    P = sorted(set(int(j) for j in P))
    comp = [j for j in range(fn.p) if j not in P]
    means = np.empty(n_outer)
    ivars = np.zeros(n_outer)
    if not comp:
        # conditioning on everything: inner expectation is f itself
        X = rng.random((n_outer, fn.p))
        means[:] = fn(X)
    else:
        chunk = max(1, _CHUNK // n_inner)
        for start in range(0, n_outer, chunk):
            stop = min(start + chunk, n_outer)
            b = stop - start
            XP = rng.random((b, len(P)))
            Xc = rng.random((b, n_inner, len(comp)))
            X = np.empty((b, n_inner, fn.p))
            if P:
                X[:, :, P] = XP[:, None, :]
            X[:, :, comp] = Xc
            vals = fn(X.reshape(b * n_inner, fn.p)).reshape(b, n_inner)
            means[start:stop] = vals.mean(axis=1)
            ivars[start:stop] = vals.var(axis=1, ddof=1)
    n = n_outer
    A = means.sum()
    B = (means ** 2).sum()
    C = ivars.sum()
    est = (B - A * A / n) / (n - 1) - C / (n * n_inner)
    # leave-one-out jackknife, vectorized through the sufficient sums
    A1 = A - means
    B1 = B - means ** 2
    C1 = C - ivars
    loo = (B1 - A1 * A1 / (n - 1)) / (n - 2) - C1 / ((n - 1) * n_inner)
    se = float(np.sqrt(max((n - 1) / n * ((loo - loo.mean()) ** 2).sum(), 0.0)))
    return float(est), se


def mc_variance(fn: BlackBox, N: int = 1_000_000, rng=None) -> tuple:
    """Plain sample variance over N uniform points, with standard error."""
    if N < 2:
        raise ValueError("N must be >= 2")
    rng = np.random.default_rng(rng)
    vals = np.empty(N)
    for start in range(0, N, _CHUNK):
        stop = min(start + _CHUNK, N)
        vals[start:stop] = fn(rng.random((stop - start, fn.p)))
    est = float(vals.var(ddof=1))
    d = vals - vals.mean()
    m2 = float((d ** 2).mean())
    m4 = float((d ** 4).mean())
    se = float(np.sqrt(max(m4 - (N - 3) / (N - 1) * m2 ** 2, 0.0) / N))
    return est, se


def mc_shapley(fn: BlackBox, j: int, n_subsets: int = DEFAULT_N_SUBSETS,
               n_outer: int = DEFAULT_N_OUTER, n_inner: int = DEFAULT_N_INNER,
               rng=None, cost_cache: dict = None) -> tuple:
    """Random-subset Shapley estimate for a black box.

    Averages cost differences over coin-flip subsets of the other inputs.
    Distinct subsets are estimated once and cached (the cache may be shared
    across inputs); the stderr combines subset-sampling spread with the
    Monte Carlo error of the cached cost estimates.
    """
    if n_subsets < 1:
        raise ValueError("n_subsets must be >= 1")
    rng = np.random.default_rng(rng)
    if cost_cache is None:
        cost_cache = {}

    def cached_cost(P):
        key = frozenset(P)
        if key not in cost_cache:
            cost_cache[key] = mc_cost(fn, sorted(key), n_outer, n_inner, rng)
        return cost_cache[key]

    diffs = np.empty(n_subsets)
    counts: dict = {}
    for l in range(n_subsets):
        coins = rng.random(fn.p) < 0.5
        coins[j] = False
        P = frozenset(np.flatnonzero(coins).tolist())
        counts[P] = counts.get(P, 0) + 1
        hi, _ = cached_cost(P | {j})
        lo, _ = cached_cost(P)
        diffs[l] = hi - lo
    est = float(diffs.mean())
    subset_var = float(diffs.var(ddof=1) / n_subsets) if n_subsets > 1 else 0.0
    mc_var = 0.0
    for P, cnt in counts.items():
        w = cnt / n_subsets
        mc_var += w * w * (cost_cache[P | {j}][1] ** 2 + cost_cache[P][1] ** 2)
    return est, float(np.sqrt(subset_var + mc_var))
