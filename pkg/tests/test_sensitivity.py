"""Closed-form costs, Sobol' indices, Shapley effects, and report assembly."""

import json
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from shapfor.forest import PosteriorEnsemble, random_forest, variance
from shapfor.sensitivity import (
    assemble_report,
    cost,
    cost_difference,
    lipschitz_gap,
    shapley_exact,
    shapley_sampled,
    shapley_weight_identity,
    shapley_weights,
    sobol_interaction,
    sobol_main,
    sobol_total,
    total_effect_coefficient_sum,
    total_effect_coefficient_sum_closed_form,
)

from conftest import constant_forest, interaction_forest, two_leaf_forest


def test_cost_empty_subset(rng):
    assert cost(random_forest(rng, 3, 2), ()) == 0.0


def test_cost_two_leaf_examples():
    f = two_leaf_forest(p=2)
    assert cost(f, (0,)) == pytest.approx(0.25)
    assert cost(f, (1,)) == pytest.approx(0.0, abs=1e-15)


def test_cost_interaction_tree():
    f = interaction_forest()
    assert cost(f, (0,)) == pytest.approx(0.0625)
    assert cost(f, (1,)) == pytest.approx(0.0625)
    assert cost(f, (0, 1)) == pytest.approx(0.1875)
    assert cost(f, (0, 1)) == pytest.approx(variance(f))


def test_cost_index_out_of_range():
    with pytest.raises(ValueError):
        cost(two_leaf_forest(p=2), (2,))


def test_cost_difference_independent_dim(rng):
    f = random_forest(rng, 4, 2)
    g = two_leaf_forest(p=3)  # never splits dims 1, 2
    assert cost_difference(g, (0,), 2) == 0.0
    assert cost_difference(g, (), 1) == 0.0
    assert f.p == 4  # keep the random draw deterministic for later tests


def test_cost_difference_interaction_tree():
    f = interaction_forest()
    assert cost_difference(f, (), 0) == pytest.approx(0.0625)
    assert cost_difference(f, (1,), 0) == pytest.approx(0.125)


def test_cost_difference_rejects_member():
    with pytest.raises(ValueError):
        cost_difference(interaction_forest(), (0,), 0)
    with pytest.raises(ValueError):
        cost_difference(interaction_forest(), (), 5)


def test_cost_difference_matches_naive(rng):
    for _ in range(100):
        p = int(rng.integers(2, 7))
        f = random_forest(rng, p, int(rng.integers(1, 5)))
        members = [j for j in range(p) if rng.random() < 0.5]
        others = [j for j in range(p) if j not in members]
        if not others:
            continue
        j = int(rng.choice(others))
        direct = cost_difference(f, members, j)
        naive = cost(f, list(members) + [j]) - cost(f, members)
        assert direct == pytest.approx(naive, abs=1e-12)


def test_sobol_interaction_singleton(rng):
    f = random_forest(rng, 3, 2)
    for j in range(3):
        assert sobol_interaction(f, (j,)) == pytest.approx(cost(f, (j,)), abs=1e-12)


def test_sobol_interaction_interaction_tree():
    assert sobol_interaction(interaction_forest(), (0, 1)) == pytest.approx(0.0625)


def test_sobol_interaction_matches_recursion(rng):
    def recursive(f, P):
        P = tuple(sorted(P))
        total = cost(f, P)
        for r in range(1, len(P)):
            for Q in combinations(P, r):
                total -= recursive(f, Q)
        return total

    for _ in range(10):
        f = random_forest(rng, 4, 2)
        P = (0, 1, 3)
        assert sobol_interaction(f, P) == pytest.approx(recursive(f, P), abs=1e-12)


def test_sobol_interaction_limits():
    with pytest.raises(ValueError):
        sobol_interaction(two_leaf_forest(), ())
    f = random_forest(np.random.default_rng(0), 14, 1)
    with pytest.raises(ValueError):
        sobol_interaction(f, tuple(range(13)))


def test_sobol_main_total_examples():
    f = interaction_forest()
    assert sobol_main(f, 0) == pytest.approx(0.0625)
    assert sobol_total(f, 0) == pytest.approx(0.125)
    g = two_leaf_forest(p=3)
    assert sobol_main(g, 2) == pytest.approx(0.0, abs=1e-15)
    assert sobol_total(g, 2) == pytest.approx(0.0, abs=1e-15)


def test_sobol_total_matches_subset_sum(rng):
    # complement identity vs the explicit sum of V_{P u {j}} over P
    for _ in range(5):
        f = random_forest(rng, 4, 2)
        for j in range(4):
            others = [d for d in range(4) if d != j]
            total = 0.0
            for r in range(len(others) + 1):
                for P in combinations(others, r):
                    total += sobol_interaction(f, P + (j,))
            assert sobol_total(f, j) == pytest.approx(total, abs=1e-10)


def test_shapley_exact_examples():
    f = two_leaf_forest(p=2)
    assert shapley_exact(f, 0) == pytest.approx(0.25)
    assert shapley_exact(f, 1) == pytest.approx(0.0, abs=1e-15)
    g = interaction_forest()
    assert shapley_exact(g, 0) == pytest.approx(0.09375)
    assert shapley_exact(g, 1) == pytest.approx(0.09375)
    assert shapley_exact(g, 0) + shapley_exact(g, 1) == pytest.approx(variance(g))


def test_shapley_exact_p_limit():
    f = constant_forest(0.0, p=21)
    with pytest.raises(ValueError):
        shapley_exact(f, 0)


def test_shapley_sum_and_sandwich(rng):
    for _ in range(30):
        p = int(rng.integers(2, 7))
        f = random_forest(rng, p, int(rng.integers(1, 5)))
        S = np.array([shapley_exact(f, j) for j in range(p)])
        assert S.sum() == pytest.approx(variance(f), abs=1e-10)
        for j in range(p):
            assert sobol_main(f, j) <= S[j] + 1e-10
            assert S[j] <= sobol_total(f, j) + 1e-10


def _single_draw_ensemble(forest, sigma2=0.5):
    return PosteriorEnsemble(((forest, sigma2),),
                             ((0.0, 1.0),) * forest.p, (0.0, 1.0))


def test_shapley_sampled_independent_input():
    ens = _single_draw_ensemble(two_leaf_forest(p=3))
    assert (shapley_sampled(ens, 1, m=8) == 0.0).all()
    assert (shapley_sampled(ens, 2, m=8) == 0.0).all()


def test_shapley_sampled_p2_support():
    f = interaction_forest()
    ens = _single_draw_ensemble(f)
    allowed = (cost_difference(f, (), 0), cost_difference(f, (1,), 0))
    vals = {float(shapley_sampled(ens, 0, m=1, seed=s)[0]) for s in range(40)}
    for v in vals:
        assert min(abs(v - a) for a in allowed) < 1e-12
    assert len(vals) == 2  # both subsets appear across seeds


def test_shapley_sampled_unbiased(rng):
    # depth <= 2 forest: the coin-flip average is exactly unbiased, so the
    # sample mean must approach shapley_exact at the Monte-Carlo rate
    forest = random_forest(rng, 5, 3, max_depth=2)
    ens = _single_draw_ensemble(forest)
    m = 2000
    for j in range(5):
        exact = shapley_exact(forest, j)
        draws = np.array([
            max(cost_difference(forest,
                                tuple(d for d in range(5)
                                      if d != j and rng.random() < 0.5), j), 0.0)
            for _ in range(m)
        ])
        se = draws.std(ddof=1) / np.sqrt(m)
        assert abs(draws.mean() - exact) <= 3 * se + 1e-12


def test_shapley_sampled_reproducible():
    ens = _single_draw_ensemble(interaction_forest())
    a = shapley_sampled(ens, 0, m=5, seed=9)
    b = shapley_sampled(ens, 0, m=5, seed=9)
    np.testing.assert_array_equal(a, b)


def test_assemble_report_identical_draws(rng):
    f = random_forest(rng, 3, 2)
    ens = PosteriorEnsemble(((f, 0.4),) * 5, ((0.0, 1.0),) * 3, (0.0, 2.0))
    rep = assemble_report(ens)
    for est in rep.shapley + rep.main + rep.total:
        d = est.as_dict()
        assert d["lo"] == pytest.approx(d["hi"], abs=1e-12)
        assert d["lo"] == pytest.approx(d["point"], abs=1e-12)
    # raw indices are rescaled by the squared y scale
    assert rep.shapley[0].point == pytest.approx(4.0 * shapley_exact(f, 0), abs=1e-12)


def test_assemble_report_normalized_sums_to_one(rng):
    draws = tuple((random_forest(rng, 4, 3), 0.3) for _ in range(6))
    ens = PosteriorEnsemble(draws, ((0.0, 1.0),) * 4, (1.0, 3.0))
    rep = assemble_report(ens, keep_draws=True)
    per_draw = np.stack([est.draws for est in rep.shapley_norm])
    np.testing.assert_allclose(per_draw.sum(axis=0), 1.0, atol=1e-9)
    assert (per_draw >= 0).all()
    # sandwich holds per draw in exact mode
    V = np.stack([est.draws for est in rep.main_norm])
    T = np.stack([est.draws for est in rep.total_norm])
    assert (V <= per_draw + 1e-10).all()
    assert (per_draw <= T + 1e-10).all()


def test_assemble_report_sampled_mode_consistency(rng):
    # forcing the sampled path must leave the closed-form V, T, var unchanged
    draws = tuple((random_forest(rng, 4, 2), 0.3) for _ in range(4))
    ens = PosteriorEnsemble(draws, ((0.0, 1.0),) * 4, (0.0, 1.0))
    exact = assemble_report(ens, seed=1)
    sampled = assemble_report(ens, seed=1, exact_threshold=0)
    assert sampled.metadata["mode"] == "sampled"
    for j in range(4):
        assert sampled.main[j].point == pytest.approx(exact.main[j].point, abs=1e-10)
        assert sampled.total[j].point == pytest.approx(exact.total[j].point, abs=1e-10)
    assert sampled.variance.point == pytest.approx(exact.variance.point, abs=1e-10)


def test_assemble_report_parallel_matches_serial(rng):
    draws = tuple((random_forest(rng, 3, 2), 0.3) for _ in range(4))
    ens = PosteriorEnsemble(draws, ((0.0, 1.0),) * 3, (0.0, 1.0))
    serial = assemble_report(ens, seed=2, n_jobs=1)
    parallel = assemble_report(ens, seed=2, n_jobs=2)
    assert serial.to_json() == parallel.to_json()


def test_assemble_report_validation(rng):
    f = random_forest(rng, 2, 1)
    ens = _single_draw_ensemble(f)
    with pytest.raises(ValueError):
        assemble_report(ens, levels=(0.0, 0.9))
    with pytest.raises(ValueError):
        assemble_report(ens, normalization="pooled")
    with pytest.raises(ValueError):
        assemble_report(ens, m=0)


def test_report_json_schema_and_text_agree(rng):
    draws = tuple((random_forest(rng, 3, 2), 0.3) for _ in range(4))
    ens = PosteriorEnsemble(draws, ((0.0, 1.0),) * 3, (0.0, 1.0))
    rep = assemble_report(ens)
    doc = json.loads(rep.to_json())
    assert set(doc) == {"metadata", "variance", "sigma2", "inputs"}
    for j, rec in enumerate(doc["inputs"]):
        assert rec["input"] == j
        for key in ("V", "T", "S"):
            assert set(rec[key]) == {"point", "lo", "hi"}
            assert set(rec["normalized"][key]) == {"point", "lo", "hi"}
    # text table carries the same numbers (6 significant digits)
    text = rep.to_text()
    for line in text.splitlines():
        parts = line.split()
        if line.startswith("#") or parts[0] == "input":
            continue
        j, name = int(parts[0]), parts[1]
        source = {"V": rep.main, "T": rep.total, "S": rep.shapley,
                  "V_norm": rep.main_norm, "T_norm": rep.total_norm,
                  "S_norm": rep.shapley_norm}[name][j].as_dict()
        assert parts[2] == f"{source['point']:.6g}"
        assert parts[3] == f"{source['lo']:.6g}"
        assert parts[4] == f"{source['hi']:.6g}"
    rows = rep.plot_rows()
    assert len(rows) == 6 * 3


def test_lipschitz_gap_trivial_cases(rng):
    f = random_forest(rng, 3, 2)
    lhs, rhs = lipschitz_gap(f, f, (0, 2))
    assert (lhs, rhs) == (pytest.approx(0.0, abs=1e-12), pytest.approx(0.0, abs=1e-12))
    lhs, rhs = lipschitz_gap(constant_forest(1.0), constant_forest(0.0), (0,))
    assert lhs == pytest.approx(0.0, abs=1e-15)
    assert rhs == pytest.approx(4.0)
    with pytest.raises(ValueError):
        lipschitz_gap(constant_forest(0.0, p=2), constant_forest(0.0, p=3), ())


def test_shapley_weights():
    w = shapley_weights(3)
    np.testing.assert_allclose(w, [2 / 6, 1 / 6, 2 / 6])
    # summing over all subsets of the other inputs gives total weight 1
    import math

    assert sum(math.comb(2, k) * w[k] for k in range(3)) == pytest.approx(1.0)


def test_coefficient_sum_identity():
    for p in range(1, 9):
        assert (total_effect_coefficient_sum(p)
                == total_effect_coefficient_sum_closed_form(p))


def test_shapley_weight_identity():
    for p in range(1, 9):
        assert shapley_weight_identity(p) == Fraction(1)
