"""Closed-form variance-based sensitivity indices for piecewise-constant forests.

The central quantity is the cost functional cost(f, P) = Var(E[f(X) | X_P])
under the product-uniform measure on [0,1]^p.  For a forest it reduces to a
pair sum over leaf boxes in which only dimensions split by both leaves of a
pair contribute a nontrivial factor, which keeps the computation tractable
even for hundreds of inputs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from .forest import (
    Forest,
    PosteriorEnsemble,
    _overlap_ratio,
    l2_distance,
    mean,
    sup_norm_bound,
    variance,
)

EXACT_SHAPLEY_MAX_P = 20
SOBOL_INTERACTION_MAX = 12
DEFAULT_LEVELS = (0.025, 0.975)
DEFAULT_EXACT_THRESHOLD = 12


def _check_subset(P, p) -> tuple:
    P = tuple(sorted(set(int(j) for j in P)))
    for j in P:
        if not (0 <= j < p):
            raise ValueError(f"input index {j} out of range for p={p}")
    return P


def cost(forest: Forest, P) -> float:
    """Exact Var(E[f(X) | X_P]) for the forest under product-uniform inputs."""
    P = _check_subset(P, forest.p)
    flat = forest.flat()
    if len(flat) == 0 or not P:
        return 0.0
    M = np.outer(flat.w, flat.w)
    for d in P:
        if d in flat.dims:
            ix, lo, hi = flat.dims[d]
            M[np.ix_(ix, ix)] *= _overlap_ratio(lo, hi)
    return max(float(M.sum()) - float(flat.w.sum()) ** 2, 0.0)


def _sub_bounds(flat, d, positions, pos_of):
    """Bounds of dim d for the leaves listed in `positions` ([0,1] if unsplit)."""
    lo = np.zeros(len(positions))
    hi = np.ones(len(positions))
    if d in flat.dims:
        ix, dlo, dhi = flat.dims[d]
        for k, leaf in enumerate(ix):
            j = pos_of.get(leaf)
            if j is not None:
                lo[j] = dlo[k]
                hi[j] = dhi[k]
    return lo, hi


def cost_difference(forest: Forest, P, j: int) -> float:
    """cost(forest, P u {j}) - cost(forest, P), computed directly.

    Only leaf pairs where both leaves carry a bound on dimension j can
    contribute; for all other pairs the j-factor is identical in both terms.
    """
    P = _check_subset(P, forest.p)
    j = int(j)
    if j in P:
        raise ValueError(f"index {j} already in subset {P}")
    if not (0 <= j < forest.p):
        raise ValueError(f"input index {j} out of range for p={forest.p}")
    flat = forest.flat()
    if j not in flat.dims:
        return 0.0
    ix, lo_j, hi_j = flat.dims[j]
    pos_of = {leaf: k for k, leaf in enumerate(ix)}
    D = np.outer(flat.w[ix], flat.w[ix])
    for d in P:
        lo, hi = _sub_bounds(flat, d, ix, pos_of)
        D *= _overlap_ratio(lo, hi)
    D *= _overlap_ratio(lo_j, hi_j) - 1.0
    return float(D.sum())


def sobol_interaction(forest: Forest, P) -> float:
    """Interaction variance term V_P via inclusion-exclusion over costs."""
    P = _check_subset(P, forest.p)
    if not P:
        raise ValueError("P must be nonempty")
    if len(P) > SOBOL_INTERACTION_MAX:
        raise ValueError(f"|P|={len(P)} exceeds limit {SOBOL_INTERACTION_MAX}")
    total = 0.0
    for r in range(len(P) + 1):
        sign = (-1) ** (len(P) - r)
        for Q in combinations(P, r):
            total += sign * cost(forest, Q)
    return total


def sobol_main(forest: Forest, j: int) -> float:
    return cost(forest, (j,))


def sobol_total(forest: Forest, j: int) -> float:
    """Total-effect index via the complement identity (valid for uniform inputs)."""
    j = int(j)
    if not (0 <= j < forest.p):
        raise ValueError(f"input index {j} out of range for p={forest.p}")
    comp = [d for d in range(forest.p) if d != j]
    return max(variance(forest) - cost(forest, comp), 0.0)


def shapley_weights(p: int) -> np.ndarray:
    """w[k] = (p-k-1)! k! / p!, the Shapley weight of a size-k subset."""
    w = np.empty(p)
    for k in range(p):
        w[k] = math.factorial(p - k - 1) * math.factorial(k) / math.factorial(p)
    return w


def shapley_exact(forest: Forest, j: int) -> float:
    """Exact Shapley effect of input j (sum over all 2^(p-1) subsets)."""
    p = forest.p
    if p > EXACT_SHAPLEY_MAX_P:
        raise ValueError(f"p={p} exceeds exact-Shapley limit {EXACT_SHAPLEY_MAX_P}")
    j = int(j)
    others = [d for d in range(p) if d != j]
    w = shapley_weights(p)
    total = 0.0
    for r in range(p):
        for P in combinations(others, r):
            total += w[r] * cost_difference(forest, P, j)
    return max(total, 0.0)


def _subset_rng(master_seed, draw: int, j: int, l: int) -> np.random.Generator:
    # reproducible stream per (draw, input, repeat), independent of execution order
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), draw, j, l]))


def _draw_subset(rng: np.random.Generator, p: int, j: int) -> tuple:
    coins = rng.random(p) < 0.5
    coins[j] = False
    return tuple(np.flatnonzero(coins))


def shapley_sampled(ensemble: PosteriorEnsemble, j: int, m: int = 1,
                    seed: int = 0) -> np.ndarray:
    """Per-draw random-subset Shapley values for input j.

    Each draw averages m cost differences over coin-flip subsets of the other
    inputs; values are clamped at zero (they estimate an expectation of
    conditional variances, which is nonnegative under uniform inputs).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    p = ensemble.p
    values = np.empty(ensemble.n_draw)
    for i, (forest, _) in enumerate(ensemble.draws):
        acc = 0.0
        for l in range(m):
            P = _draw_subset(_subset_rng(seed, i, j, l), p, j)
            acc += max(cost_difference(forest, P, j), 0.0)
        values[i] = acc / m
    return values


# ---------------------------------------------------------------------------
# fast per-draw machinery shared by report assembly


def _cost_table(forest: Forest):
    """Costs over all subsets of the forest's split dimensions.

    Returns (dims, table) where table[mask] = cost over the subset of `dims`
    selected by the bits of mask.  Uses an incremental depth-first sweep so
    per-step work is quadratic in the leaves touching one dimension only.
    """
    flat = forest.flat()
    dims = sorted(flat.dims)
    s = len(dims)
    table = np.zeros(2 ** s)
    if len(flat) == 0:
        return dims, table
    M = np.outer(flat.w, flat.w)
    mean_sq = float(flat.w.sum()) ** 2
    ratios = []
    for d in dims:
        ix, lo, hi = flat.dims[d]
        ratios.append((np.ix_(ix, ix), _overlap_ratio(lo, hi)))
    total = [float(M.sum())]

    def rec(i, mask):
        if i == s:
            table[mask] = max(total[0] - mean_sq, 0.0)
            return
        rec(i + 1, mask)
        sub, R = ratios[i]
        saved = M[sub].copy()
        new = saved * R
        total[0] += float(new.sum() - saved.sum())
        M[sub] = new
        rec(i + 1, mask | (1 << i))
        M[sub] = saved
        total[0] -= float(new.sum() - saved.sum())

    rec(0, 0)
    return dims, table


def _exact_indices_from_table(p: int, dims, table) -> tuple:
    """(V, T, S, var) for all inputs from an all-subset cost table.

    Subsets are collapsed onto split dimensions: inert dims never change a
    cost, so their effect on Shapley weights is purely combinatorial.
    """
    s = len(dims)
    pos = {d: i for i, d in enumerate(dims)}
    var = table[(1 << s) - 1]
    V = np.zeros(p)
    T = np.zeros(p)
    S = np.zeros(p)
    if s == 0:  # constant forest: every index is zero
        return V, T, S, var
    n_inert = p - s
    w = shapley_weights(p)
    # W[a] = sum over inert-subset sizes b of C(n_inert, b) * w[a + b]
    W = np.zeros(s)
    for a in range(s):
        W[a] = sum(math.comb(n_inert, b) * w[a + b] for b in range(n_inert + 1))
    for j in range(p):
        if j not in pos:
            continue
        bit = 1 << pos[j]
        V[j] = table[bit]
        T[j] = max(var - table[(1 << s) - 1 - bit], 0.0)
        acc = 0.0
        rest = [1 << pos[d] for d in dims if d != j]
        for r in range(len(rest) + 1):
            for combo in combinations(rest, r):
                mask = 0
                for b in combo:
                    mask |= b
                acc += W[r] * (table[mask | bit] - table[mask])
        S[j] = max(acc, 0.0)
    return V, T, S, var


def _sampled_indices(forest: Forest, draw_index: int, m: int, seed) -> tuple:
    """(V, T, S, var) for one draw with random-subset Shapley values."""
    flat = forest.flat()
    p = forest.p
    V = np.zeros(p)
    T = np.zeros(p)
    S = np.zeros(p)
    if len(flat) == 0:
        return V, T, S, 0.0
    mean_sq = float(flat.w.sum()) ** 2
    M = np.outer(flat.w, flat.w)
    ratios = {}
    for d, (ix, lo, hi) in flat.dims.items():
        R = _overlap_ratio(lo, hi)
        ratios[d] = (ix, R)
        V[d] = max(float((M[np.ix_(ix, ix)] * (R - 1.0)).sum()), 0.0)
    # full product over all split dims -> total variance
    for d, (ix, R) in ratios.items():
        M[np.ix_(ix, ix)] *= R
    var = max(float(M.sum()) - mean_sq, 0.0)
    # leaf -> set of split dims, for the per-input complement correction
    leaf_dims: dict = {}
    for d, (ix, _, _) in flat.dims.items():
        for leaf in ix:
            leaf_dims.setdefault(int(leaf), []).append(d)
    for j, (ix_j, R_j) in ratios.items():
        # cost of all dims but j: differs from the full product only on pairs
        # of leaves that both split j
        pos_of = {int(leaf): k for k, leaf in enumerate(ix_j)}
        E = np.outer(flat.w[ix_j], flat.w[ix_j])
        touching = sorted({d for leaf in ix_j for d in leaf_dims[int(leaf)] if d != j})
        for d in touching:
            lo, hi = _sub_bounds(flat, d, ix_j, pos_of)
            E *= _overlap_ratio(lo, hi)
        full_sub = float((E * R_j).sum())
        cost_comp = float(M.sum()) - full_sub + float(E.sum()) - mean_sq
        T[j] = max(var - max(cost_comp, 0.0), 0.0)
        acc = 0.0
        for l in range(m):
            P = _draw_subset(_subset_rng(seed, draw_index, j, l), p, j)
            pos = {int(leaf): k for k, leaf in enumerate(ix_j)}
            D = np.outer(flat.w[ix_j], flat.w[ix_j])
            for d in P:
                if d in flat.dims:
                    lo, hi = _sub_bounds(flat, d, ix_j, pos)
                    D *= _overlap_ratio(lo, hi)
            acc += max(float((D * (R_j - 1.0)).sum()), 0.0)
        S[j] = acc / m
    return V, T, S, var


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class IndexEstimate:
    point: float
    quantiles: dict  # level -> value
    draws: np.ndarray = field(default=None, compare=False)

    def as_dict(self) -> dict:
        levels = sorted(self.quantiles)
        return {
            "point": self.point,
            "lo": self.quantiles[levels[0]],
            "hi": self.quantiles[levels[-1]],
        }


@dataclass(frozen=True)
class SensitivityReport:
    main: list  # per input IndexEstimate for V_j (raw units)
    total: list
    shapley: list
    main_norm: list
    total_norm: list
    shapley_norm: list
    variance: IndexEstimate
    sigma2: IndexEstimate
    metadata: dict

    @property
    def p(self) -> int:
        return len(self.shapley)

    def to_json_dict(self) -> dict:
        inputs = []
        for j in range(self.p):
            inputs.append(
                {
                    "input": j,
                    "V": self.main[j].as_dict(),
                    "T": self.total[j].as_dict(),
                    "S": self.shapley[j].as_dict(),
                    "normalized": {
                        "V": self.main_norm[j].as_dict(),
                        "T": self.total_norm[j].as_dict(),
                        "S": self.shapley_norm[j].as_dict(),
                    },
                }
            )
        return {
            "metadata": self.metadata,
            "variance": self.variance.as_dict(),
            "sigma2": self.sigma2.as_dict(),
            "inputs": inputs,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)

    def to_text(self) -> str:
        lines = []
        meta = ", ".join(f"{k}={v}" for k, v in sorted(self.metadata.items()))
        lines.append(f"# {meta}")
        v = self.variance.as_dict()
        s2 = self.sigma2.as_dict()
        lines.append(f"# variance point={v['point']:.6g} [{v['lo']:.6g}, {v['hi']:.6g}]")
        lines.append(f"# sigma2   point={s2['point']:.6g} [{s2['lo']:.6g}, {s2['hi']:.6g}]")
        header = f"{'input':>6} {'index':>7} {'point':>12} {'lo':>12} {'hi':>12}"
        lines.append(header)
        for j in range(self.p):
            for name, est in (
                ("V", self.main[j]), ("T", self.total[j]), ("S", self.shapley[j]),
                ("V_norm", self.main_norm[j]), ("T_norm", self.total_norm[j]),
                ("S_norm", self.shapley_norm[j]),
            ):
                d = est.as_dict()
                lines.append(
                    f"{j:>6} {name:>7} {d['point']:>12.6g} {d['lo']:>12.6g} {d['hi']:>12.6g}"
                )
        return "\n".join(lines) + "\n"

    def plot_rows(self) -> list:
        """(input, index-type, point, lo, hi) rows for plot-data emission."""
        rows = []
        for name, ests in (
            ("V", self.main), ("T", self.total), ("S", self.shapley),
            ("V_norm", self.main_norm), ("T_norm", self.total_norm),
            ("S_norm", self.shapley_norm),
        ):
            for j, est in enumerate(ests):
                d = est.as_dict()
                rows.append((j, name, d["point"], d["lo"], d["hi"]))
        return rows


def _estimate(draws: np.ndarray, levels, keep: bool) -> IndexEstimate:
    qs = {float(lv): float(np.quantile(draws, lv)) for lv in levels}
    return IndexEstimate(float(draws.mean()), qs, draws.copy() if keep else None)


def _draw_indices(args):
    forest, i, m, seed, exact_threshold = args
    if forest.p <= exact_threshold:
        dims, table = _cost_table(forest)
        return _exact_indices_from_table(forest.p, dims, table)
    return _sampled_indices(forest, i, m, seed)


def assemble_report(ensemble: PosteriorEnsemble, m: int = 1, levels=DEFAULT_LEVELS,
                    normalization: str = "per_draw", seed: int = 0,
                    exact_threshold: int = DEFAULT_EXACT_THRESHOLD,
                    keep_draws: bool = False, n_jobs: int = 1) -> SensitivityReport:
    """Summarize an ensemble into per-input index estimates with intervals.

    Raw indices are rescaled into the original response units by the squared
    y scale; normalized indices divide each draw's indices by that same
    draw's forest variance.
    """
    if ensemble.n_draw == 0:
        raise ValueError("empty ensemble")
    if m < 1:
        raise ValueError("m must be >= 1")
    for lv in levels:
        if not (0.0 < lv < 1.0):
            raise ValueError(f"quantile level {lv} outside (0, 1)")
    if normalization != "per_draw":
        raise ValueError(f"unknown normalization {normalization!r}")
    p = ensemble.p
    n = ensemble.n_draw
    tasks = [(forest, i, m, seed, exact_threshold)
             for i, (forest, _) in enumerate(ensemble.draws)]
    if n_jobs is None or n_jobs < 1:
        n_jobs = os.cpu_count() or 1
    if n_jobs > 1 and n > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs, batch_size="auto")(
            delayed(_draw_indices)(t) for t in tasks
        )
    else:
        results = [_draw_indices(t) for t in tasks]
    V = np.array([r[0] for r in results])
    T = np.array([r[1] for r in results])
    S = np.array([r[2] for r in results])
    var = np.array([r[3] for r in results])
    sig2 = np.array([s2 for _, s2 in ensemble.draws])
    y_scale_sq = ensemble.y_scaling[1] ** 2
    safe_var = np.where(var > 0, var, 1.0)
    exact_mode = p <= exact_threshold

    def per_input(mat):
        return [_estimate(mat[:, j], levels, keep_draws) for j in range(p)]

    report = SensitivityReport(
        main=per_input(V * y_scale_sq),
        total=per_input(T * y_scale_sq),
        shapley=per_input(S * y_scale_sq),
        main_norm=per_input(V / safe_var[:, None]),
        total_norm=per_input(T / safe_var[:, None]),
        shapley_norm=per_input(S / safe_var[:, None]),
        variance=_estimate(var * y_scale_sq, levels, keep_draws),
        sigma2=_estimate(sig2 * y_scale_sq, levels, keep_draws),
        metadata={
            "m": m,
            "n_draw": n,
            "seed": seed,
            "normalization": normalization,
            "levels": list(float(lv) for lv in levels),
            "mode": "exact" if exact_mode else "sampled",
            "method": "closed_form",
        },
    )
    return report


def lipschitz_gap(f: Forest, f0: Forest, P) -> tuple:
    """(|cost(f,P) - cost(f0,P)|, 4 B ||f - f0||_2) with B the larger sup bound."""
    if f.p != f0.p:
        raise ValueError(f"dimension mismatch: {f.p} != {f0.p}")
    lhs = abs(cost(f, P) - cost(f0, P))
    rhs = 4.0 * max(sup_norm_bound(f), sup_norm_bound(f0)) * l2_distance(f, f0)
    return lhs, rhs


def total_effect_coefficient_sum(p: int, j: int = 0) -> int:
    """Absolute coefficient sum of T_j expanded in costs, before cancellation.

    Expands T_j = sum over P of V_{P u {j}} with each interaction term written
    by inclusion-exclusion over costs (coefficients +-1), and counts absolute
    coefficients without collecting like terms.  The closed form is
    sum_i C(p-1, i) (2^(i+1) - 1).
    """
    others = [d for d in range(p) if d != j]
    total = 0
    for r in range(p):
        for P in combinations(others, r):
            full = set(P) | {j}
            # V_full = sum over nonempty Q subset of full of (+-1) cost(Q)
            total += sum(math.comb(len(full), q) for q in range(1, len(full) + 1))
    return total


def total_effect_coefficient_sum_closed_form(p: int) -> int:
    return sum(math.comb(p - 1, i) * (2 ** (i + 1) - 1) for i in range(p))


def shapley_weight_identity(p: int, j: int = 0) -> Fraction:
    """(1/p) * sum over subsets P of [p]\\{j} of 1 / C(p-1, |P|), by enumeration."""
    others = [d for d in range(p) if d != j]
    total = Fraction(0)
    for r in range(p):
        for _ in combinations(others, r):
            total += Fraction(1, math.comb(p - 1, r))
    return total / p
