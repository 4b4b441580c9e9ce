"""Forest geometry, exact moments, and ensemble serialization."""

import io
import math

import numpy as np
import pytest

from shapfor.forest import (
    EnsembleFormatError,
    Forest,
    Internal,
    Interval,
    Leaf,
    PosteriorEnsemble,
    Tree,
    concat,
    deserialize,
    evaluate,
    evaluate_many,
    l2_distance,
    leaf_boxes,
    mean,
    random_forest,
    second_moment,
    serialize,
    sup_norm_bound,
    variance,
)

from conftest import constant_forest, figure_tree, interaction_forest, two_leaf_forest


def test_interval_invariant():
    assert Interval(0.2, 0.7).length == pytest.approx(0.5)
    with pytest.raises(ValueError):
        Interval(0.7, 0.2)
    with pytest.raises(ValueError):
        Interval(0.5, 0.5)
    with pytest.raises(ValueError):
        Interval(-0.1, 0.5)


def test_leaf_boxes_single_leaf():
    boxes = leaf_boxes(Tree(Leaf(3.0)))
    assert len(boxes) == 1
    assert boxes[0].bounds == {}
    assert boxes[0].volume == 1.0
    assert boxes[0].mu == 3.0


def test_leaf_boxes_two_split_tree():
    boxes = leaf_boxes(figure_tree())
    got = {((b.bounds.get(0, Interval(0, 1)).lo, b.bounds.get(0, Interval(0, 1)).hi),
            (b.bounds.get(1, Interval(0, 1)).lo, b.bounds.get(1, Interval(0, 1)).hi))
           for b in boxes}
    expected = {((0.0, 0.2), (0.0, 0.7)), ((0.2, 1.0), (0.0, 0.7)),
                ((0.0, 0.4), (0.7, 1.0)), ((0.4, 1.0), (0.7, 1.0))}
    assert got == expected


def test_leaf_boxes_partition(rng):
    for _ in range(20):
        forest = random_forest(rng, p=4, num_trees=1, max_depth=4)
        boxes = leaf_boxes(forest.trees[0])
        assert sum(b.volume for b in boxes) == pytest.approx(1.0, abs=1e-12)
        # pairwise disjoint: some split dim must have non-overlapping intervals
        for i, a in enumerate(boxes):
            for b in boxes[i + 1:]:
                disjoint = False
                for d in set(a.bounds) & set(b.bounds):
                    ia, ib = a.bounds[d], b.bounds[d]
                    if ia.hi <= ib.lo or ib.hi <= ia.lo:
                        disjoint = True
                assert disjoint
        # every random point lands in exactly one box, matching evaluate
        for x in rng.random((200, 4)):
            containing = [b for b in boxes if b.contains(x)]
            assert len(containing) == 1
            assert evaluate(forest, x) == pytest.approx(containing[0].mu)


def test_evaluate_empty_forest():
    f = Forest((), 3)
    assert evaluate(f, [0.1, 0.2, 0.3]) == 0.0
    assert mean(f) == 0.0
    assert variance(f) == 0.0
    assert second_moment(f) == 0.0


def test_evaluate_figure_tree_regions():
    f = Forest((figure_tree((1.0, 2.0, 3.0, 4.0)),), 2)
    assert evaluate(f, (0.1, 0.5)) == 1.0
    assert evaluate(f, (0.9, 0.5)) == 2.0
    assert evaluate(f, (0.1, 0.8)) == 3.0
    assert evaluate(f, (0.9, 0.8)) == 4.0


def test_evaluate_boundary_goes_right():
    f = two_leaf_forest()
    assert evaluate(f, (0.5, 0.0)) == 1.0
    assert evaluate(f, (0.4999999, 0.0)) == 0.0


def test_evaluate_linearity_two_copies(rng):
    t = figure_tree()
    single = Forest((t,), 2)
    double = Forest((t, t), 2)
    for x in rng.random((50, 2)):
        assert evaluate(double, x) == pytest.approx(2 * evaluate(single, x))


def test_evaluate_dimension_mismatch():
    with pytest.raises(ValueError):
        evaluate(two_leaf_forest(p=2), (0.1, 0.2, 0.3))
    with pytest.raises(ValueError):
        evaluate_many(two_leaf_forest(p=2), np.zeros((5, 3)))


def test_evaluate_many_matches_scalar(rng):
    forest = random_forest(rng, p=3, num_trees=4, max_depth=3)
    X = rng.random((300, 3))
    got = evaluate_many(forest, X)
    expected = np.array([evaluate(forest, x) for x in X])
    np.testing.assert_allclose(got, expected, rtol=0, atol=0)


def test_mean_examples():
    assert mean(two_leaf_forest()) == pytest.approx(0.5)
    assert mean(constant_forest(7.5)) == pytest.approx(7.5)


def test_mean_linearity_concat(rng):
    f = random_forest(rng, 3, 2)
    g = random_forest(rng, 3, 3)
    assert mean(concat(f, g)) == pytest.approx(mean(f) + mean(g), abs=1e-12)


def test_variance_examples():
    assert variance(constant_forest(4.0)) == 0.0
    assert variance(two_leaf_forest()) == pytest.approx(0.25)


def test_l2_distance_examples():
    f = two_leaf_forest()
    assert l2_distance(f, f) == pytest.approx(0.0, abs=1e-12)
    assert l2_distance(constant_forest(1.0), constant_forest(0.0)) == pytest.approx(1.0)


def test_moments_match_monte_carlo(rng):
    # mean / variance / l2 exact values vs sampling, 3 standard errors
    N = 200_000
    for _ in range(5):
        f = random_forest(rng, p=4, num_trees=3, max_depth=3)
        g = random_forest(rng, p=4, num_trees=2, max_depth=3)
        X = rng.random((N, 4))
        vf = evaluate_many(f, X)
        se_mean = vf.std(ddof=1) / math.sqrt(N)
        assert abs(mean(f) - vf.mean()) <= 3 * se_mean + 1e-12
        dev = (vf - vf.mean()) ** 2
        se_var = dev.std(ddof=1) / math.sqrt(N)
        assert abs(variance(f) - vf.var(ddof=1)) <= 3 * se_var + 1e-12
        d2 = (vf - evaluate_many(g, X)) ** 2
        se_d2 = d2.std(ddof=1) / math.sqrt(N)
        assert abs(l2_distance(f, g) ** 2 - d2.mean()) <= 3 * se_d2 + 1e-12


def test_sup_norm_bound_examples(rng):
    assert sup_norm_bound(constant_forest(-2.0)) == pytest.approx(2.0)
    t1 = figure_tree((0.0, 1.0, 0.0, 1.0))
    t2 = figure_tree((-1.0, 3.0, -1.0, 3.0))
    assert sup_norm_bound(Forest((t1, t2), 2)) == pytest.approx(4.0)
    forest = random_forest(rng, p=3, num_trees=4, max_depth=3)
    vals = evaluate_many(forest, rng.random((100_000, 3)))
    assert np.abs(vals).max() <= sup_norm_bound(forest) + 1e-12


def _ensemble(rng, n_draw=3, p=3, T=2):
    draws = tuple((random_forest(rng, p, T), float(rng.uniform(0.1, 1.0)))
                  for _ in range(n_draw))
    x_scaling = tuple((float(rng.normal()), float(rng.uniform(0.5, 2.0)))
                      for _ in range(p))
    return PosteriorEnsemble(draws, x_scaling, (1.5, 2.5))


def test_serialize_roundtrip_bit_identical(rng):
    ens = _ensemble(rng)
    text = serialize(ens)
    back = deserialize(text)
    assert serialize(back) == text
    assert back.x_scaling == ens.x_scaling
    assert back.y_scaling == ens.y_scaling
    assert back.n_draw == ens.n_draw
    for (f1, s1), (f2, s2) in zip(ens.draws, back.draws):
        assert s1 == s2
        assert f1.trees == f2.trees


def test_serialize_stream_roundtrip(rng):
    ens = _ensemble(rng)
    buf = io.StringIO()
    serialize(ens, buf)
    assert serialize(deserialize(io.StringIO(buf.getvalue()))) == buf.getvalue()


def test_deserialize_rejects_malformed(rng):
    ens = _ensemble(rng, n_draw=2)
    text = serialize(ens)
    with pytest.raises(EnsembleFormatError):
        deserialize("")
    with pytest.raises(EnsembleFormatError):
        deserialize("something-else 1 p=2 n_draw=0 T=0 x_scaling=0:1 y_scaling=0:1\n")
    with pytest.raises(EnsembleFormatError):
        deserialize(text.replace("shapfor-ensemble 1", "shapfor-ensemble 99", 1))
    lines = text.splitlines()
    with pytest.raises(EnsembleFormatError):  # truncated draw record
        deserialize("\n".join([lines[0], " ".join(lines[1].split()[:-2]), lines[2]]))
    with pytest.raises(EnsembleFormatError):  # trailing tokens
        deserialize("\n".join([lines[0], lines[1] + " L 0", lines[2]]))


def test_deserialize_rejects_invariant_violations():
    header = "shapfor-ensemble 1 p=1 n_draw=1 T=1 x_scaling=0:1 y_scaling=0:1"
    with pytest.raises(ValueError):  # nonpositive sigma2
        deserialize(header + "\n0 L 1\n")
    with pytest.raises(ValueError):  # cut outside the admissible interval
        deserialize(header + "\n0.5 I 0 0.5 I 0 0.7 L 1 L 2 L 3\n")
    with pytest.raises(ValueError):  # split dim out of range
        deserialize(header + "\n0.5 I 3 0.5 L 1 L 2\n")


def test_ensemble_validation():
    f = two_leaf_forest()
    with pytest.raises(ValueError):
        PosteriorEnsemble(((f, -1.0),), ((0.0, 1.0),) * 2, (0.0, 1.0))
    with pytest.raises(ValueError):
        PosteriorEnsemble(((f, 1.0), (two_leaf_forest(p=3), 1.0)),
                          ((0.0, 1.0),) * 2, (0.0, 1.0))
