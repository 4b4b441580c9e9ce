"""Trees, forests, posterior ensembles, and exact moments under uniform inputs.

A forest is a sum of piecewise-constant regression trees on [0,1]^p.  All
moment computations (mean, variance, L2 distance) are exact integrals under
the product-uniform measure, obtained from the leaf-box geometry rather than
by sampling.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

FORMAT_NAME = "shapfor-ensemble"
FORMAT_VERSION = 1


class EnsembleFormatError(ValueError):
    """Raised when an ensemble file cannot be parsed or violates invariants."""


@dataclass(frozen=True)
class Interval:
    """Half-open interval [lo, hi) inside [0,1]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError(f"invalid interval [{self.lo}, {self.hi})")

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class Leaf:
    mu: float


@dataclass(frozen=True)
class Internal:
    split_dim: int
    cut: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Internal]


@dataclass(frozen=True)
class LeafBox:
    """A leaf value together with its box, stored sparsely.

    Dimensions absent from ``bounds`` span the full interval [0,1].
    """

    mu: float
    bounds: dict  # dim -> Interval

    @property
    def volume(self) -> float:
        v = 1.0
        for iv in self.bounds.values():
            v *= iv.length
        return v

    def contains(self, x) -> bool:
        # boundary convention: a point equal to a cut belongs to the right box
        for d, iv in self.bounds.items():
            if not (iv.lo <= x[d] < iv.hi or (iv.hi == 1.0 and x[d] == 1.0)):
                return False
        return True


@dataclass(frozen=True)
class Tree:
    root: TreeNode

    @property
    def num_leaves(self) -> int:
        return sum(1 for _ in _iter_leaves(self.root))

    def validate(self, p: int) -> None:
        _validate_node(self.root, p, {})


def _iter_leaves(node: TreeNode) -> Iterator[Leaf]:
    if isinstance(node, Leaf):
        yield node
    else:
        yield from _iter_leaves(node.left)
        yield from _iter_leaves(node.right)


def _validate_node(node: TreeNode, p: int, bounds: dict) -> None:
    if isinstance(node, Leaf):
        return
    if not (0 <= node.split_dim < p):
        raise ValueError(f"split dimension {node.split_dim} out of range for p={p}")
    lo, hi = bounds.get(node.split_dim, (0.0, 1.0))
    if not (lo < node.cut < hi):
        raise ValueError(
            f"cut {node.cut} outside admissible interval ({lo}, {hi}) "
            f"of dimension {node.split_dim}"
        )
    left = dict(bounds)
    left[node.split_dim] = (lo, node.cut)
    right = dict(bounds)
    right[node.split_dim] = (node.cut, hi)
    _validate_node(node.left, p, left)
    _validate_node(node.right, p, right)


def leaf_boxes(tree: Tree) -> list:
    """Materialize the leaf partition of a tree as sparse LeafBox records."""
    out = []

    def walk(node, bounds):
        if isinstance(node, Leaf):
            out.append(LeafBox(node.mu, {d: Interval(lo, hi) for d, (lo, hi) in bounds.items()}))
            return
        lo, hi = bounds.get(node.split_dim, (0.0, 1.0))
        b = dict(bounds)
        b[node.split_dim] = (lo, node.cut)
        walk(node.left, b)
        b = dict(bounds)
        b[node.split_dim] = (node.cut, hi)
        walk(node.right, b)

    walk(tree.root, {})
    return out


class _FlatLeaves:
    """Array view of all leaf boxes of a forest, used by moment computations.

    Attributes:
        mu, vol, w: per-leaf value, box volume, and weight mu*vol (length L).
        dims: dim -> (leaf indices splitting on dim, lo array, hi array).
    """

    def __init__(self, forest: "Forest"):
        mus, vols = [], []
        dims: dict = {}
        for tree in forest.trees:
            for box in leaf_boxes(tree):
                i = len(mus)
                mus.append(box.mu)
                vols.append(box.volume)
                for d, iv in box.bounds.items():
                    dims.setdefault(d, ([], [], []))
                    dims[d][0].append(i)
                    dims[d][1].append(iv.lo)
                    dims[d][2].append(iv.hi)
        self.mu = np.asarray(mus, dtype=float)
        self.vol = np.asarray(vols, dtype=float)
        self.w = self.mu * self.vol
        self.dims = {
            d: (np.asarray(ix, dtype=np.intp), np.asarray(lo), np.asarray(hi))
            for d, (ix, lo, hi) in dims.items()
        }

    def __len__(self) -> int:
        return len(self.mu)


@dataclass
class Forest:
    """Ordered sum of trees on [0,1]^p.  Immutable after construction."""

    trees: tuple
    p: int
    _flat: _FlatLeaves = field(default=None, repr=False, compare=False)

    def __init__(self, trees: Sequence[Tree], p: int):
        object.__setattr__(self, "trees", tuple(trees))
        object.__setattr__(self, "p", int(p))
        object.__setattr__(self, "_flat", None)

    def flat(self) -> _FlatLeaves:
        if self._flat is None:
            object.__setattr__(self, "_flat", _FlatLeaves(self))
        return self._flat

    def validate(self) -> None:
        for tree in self.trees:
            tree.validate(self.p)


def evaluate(forest: Forest, x) -> float:
    """Evaluate the forest at a single point (point on a cut goes right)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (forest.p,):
        raise ValueError(f"point has shape {x.shape}, expected ({forest.p},)")
    total = 0.0
    for tree in forest.trees:
        node = tree.root
        while isinstance(node, Internal):
            node = node.left if x[node.split_dim] < node.cut else node.right
        total += node.mu
    return total


def evaluate_many(forest: Forest, X) -> np.ndarray:
    """Vectorized evaluation at an (N, p) array of points."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.p:
        raise ValueError(f"points have shape {X.shape}, expected (N, {forest.p})")
    out = np.zeros(len(X))

    def walk(node, mask):
        if isinstance(node, Leaf):
            out[mask] += node.mu
            return
        go_left = X[mask, node.split_dim] < node.cut
        idx = np.flatnonzero(mask)
        left = np.zeros_like(mask)
        left[idx[go_left]] = True
        right = np.zeros_like(mask)
        right[idx[~go_left]] = True
        walk(node.left, left)
        walk(node.right, right)

    full = np.ones(len(X), dtype=bool)
    for tree in forest.trees:
        walk(tree.root, full)
    return out


def mean(forest: Forest) -> float:
    """Exact integral of the forest under product-uniform measure."""
    return float(forest.flat().w.sum())


def _overlap_ratio(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Pairwise len(I_a o I_b) / (len(I_a) len(I_b)) for intervals given as arrays."""
    lo2 = np.maximum.outer(lo, lo)
    hi2 = np.minimum.outer(hi, hi)
    ov = np.clip(hi2 - lo2, 0.0, None)
    lengths = hi - lo
    return ov / np.outer(lengths, lengths)


def second_moment(forest: Forest) -> float:
    """Exact E[f(X)^2] under product-uniform measure.

    Pair sum over leaves: only dimensions split by both leaves of a pair
    contribute a factor different from 1, so per-dim updates touch only the
    leaves that carry a bound on that dim.
    """
    flat = forest.flat()
    if len(flat) == 0:
        return 0.0
    M = np.outer(flat.w, flat.w)
    for ix, lo, hi in flat.dims.values():
        M[np.ix_(ix, ix)] *= _overlap_ratio(lo, hi)
    return float(M.sum())


def variance(forest: Forest) -> float:
    v = second_moment(forest) - mean(forest) ** 2
    return max(v, 0.0)


def concat(f: Forest, g: Forest) -> Forest:
    if f.p != g.p:
        raise ValueError(f"dimension mismatch: {f.p} != {g.p}")
    return Forest(f.trees + g.trees, f.p)


def negate(forest: Forest) -> Forest:
    def neg(node):
        if isinstance(node, Leaf):
            return Leaf(-node.mu)
        return Internal(node.split_dim, node.cut, neg(node.left), neg(node.right))

    return Forest(tuple(Tree(neg(t.root)) for t in forest.trees), forest.p)


def l2_distance(f: Forest, f0: Forest) -> float:
    """Exact L2([0,1]^p, uniform) distance between two forests."""
    diff = concat(f, negate(f0))
    return float(np.sqrt(max(second_moment(diff), 0.0)))


def sup_norm_bound(forest: Forest) -> float:
    """Sum of per-tree maximal absolute leaf values; upper-bounds the sup norm."""
    total = 0.0
    for tree in forest.trees:
        total += max(abs(leaf.mu) for leaf in _iter_leaves(tree.root))
    return total


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Posterior draws (forest, sigma2) plus the scaling used at fit time.

    Forests and sigma2 are in scaled-y units; x_scaling holds per-dimension
    (offset, width) maps sending raw covariates into [0,1]; y_scaling holds
    the (center, scale) map applied to responses.
    """

    draws: tuple  # of (Forest, float)
    x_scaling: tuple  # of (offset, width)
    y_scaling: tuple  # (center, scale)

    @property
    def p(self) -> int:
        return self.draws[0][0].p if self.draws else len(self.x_scaling)

    @property
    def n_draw(self) -> int:
        return len(self.draws)

    def __post_init__(self):
        num_trees = len(self.draws[0][0].trees) if self.draws else 0
        for forest, sigma2 in self.draws:
            if forest.p != self.p:
                raise ValueError("all forests must share the same input dimension")
            if len(forest.trees) != num_trees:
                raise ValueError("all draws must have the same number of trees")
            if not sigma2 > 0:
                raise ValueError(f"sigma2 must be positive, got {sigma2}")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_node(node: TreeNode, parts: list) -> None:
    if isinstance(node, Leaf):
        parts.append(f"L {_fmt(node.mu)}")
    else:
        parts.append(f"I {node.split_dim} {_fmt(node.cut)}")
        _write_node(node.left, parts)
        _write_node(node.right, parts)


def serialize(ensemble: PosteriorEnsemble, stream=None) -> str:
    """Write an ensemble in the one-record-per-line text format."""
    num_trees = len(ensemble.draws[0][0].trees) if ensemble.draws else 0
    buf = stream if stream is not None else io.StringIO()
    xs = ";".join(f"{_fmt(o)}:{_fmt(s)}" for o, s in ensemble.x_scaling)
    ys = f"{_fmt(ensemble.y_scaling[0])}:{_fmt(ensemble.y_scaling[1])}"
    buf.write(
        f"{FORMAT_NAME} {FORMAT_VERSION} p={ensemble.p} n_draw={ensemble.n_draw} "
        f"T={num_trees} x_scaling={xs} y_scaling={ys}\n"
    )
    for forest, sigma2 in ensemble.draws:
        parts = [_fmt(sigma2)]
        for tree in forest.trees:
            _write_node(tree.root, parts)
        buf.write(" ".join(parts) + "\n")
    if stream is None:
        return buf.getvalue()
    return ""


def _parse_node(tokens: list, pos: int) -> tuple:
    if pos >= len(tokens):
        raise EnsembleFormatError("truncated tree record")
    tag = tokens[pos]
    if tag == "L":
        return Leaf(float(tokens[pos + 1])), pos + 2
    if tag == "I":
        dim = int(tokens[pos + 1])
        cut = float(tokens[pos + 2])
        left, pos = _parse_node(tokens, pos + 3)
        right, pos = _parse_node(tokens, pos)
        return Internal(dim, cut, left, right), pos
    raise EnsembleFormatError(f"unexpected token {tag!r} in tree record")


def deserialize(text) -> PosteriorEnsemble:
    """Parse an ensemble file, validating structure and invariants."""
    if hasattr(text, "read"):
        text = text.read()
    lines = text.splitlines()
    if not lines:
        raise EnsembleFormatError("empty ensemble file")
    head = lines[0].split()
    if len(head) < 7 or head[0] != FORMAT_NAME:
        raise EnsembleFormatError("not a shapfor ensemble file")
    if int(head[1]) != FORMAT_VERSION:
        raise EnsembleFormatError(f"unsupported format version {head[1]}")
    fields = dict(part.split("=", 1) for part in head[2:])
    p = int(fields["p"])
    n_draw = int(fields["n_draw"])
    num_trees = int(fields["T"])
    x_scaling = tuple(
        tuple(float(v) for v in pair.split(":")) for pair in fields["x_scaling"].split(";") if pair
    )
    y_scaling = tuple(float(v) for v in fields["y_scaling"].split(":"))
    draws = []
    for line in lines[1 : n_draw + 1]:
        tokens = line.split()
        sigma2 = float(tokens[0])
        pos = 1
        trees = []
        for _ in range(num_trees):
            root, pos = _parse_node(tokens, pos)
            trees.append(Tree(root))
        if pos != len(tokens):
            raise EnsembleFormatError("trailing tokens in draw record")
        forest = Forest(trees, p)
        forest.validate()
        draws.append((forest, sigma2))
    if len(draws) != n_draw:
        raise EnsembleFormatError(f"expected {n_draw} draws, found {len(draws)}")
    return PosteriorEnsemble(tuple(draws), x_scaling, y_scaling)


def random_forest(rng: np.random.Generator, p: int, num_trees: int, max_depth: int = 3,
                  split_prob: float = 0.7, mu_scale: float = 1.0) -> Forest:
    """Sample a small random forest; used by property sweeps and benchmarks."""

    def grow(depth, bounds):
        if depth < max_depth and rng.random() < split_prob:
            dim = int(rng.integers(p))
            lo, hi = bounds.get(dim, (0.0, 1.0))
            cut = lo + (hi - lo) * rng.uniform(0.1, 0.9)
            b = dict(bounds)
            b[dim] = (lo, cut)
            left = grow(depth + 1, b)
            b = dict(bounds)
            b[dim] = (cut, hi)
            right = grow(depth + 1, b)
            return Internal(dim, cut, left, right)
        return Leaf(float(rng.normal(scale=mu_scale)))

    return Forest(tuple(Tree(grow(0, {})) for _ in range(num_trees)), p)
