"""MCMC fitting of the sum-of-trees regression model.

The chain alternates, for each tree, a birth/death Metropolis-Hastings move on
the tree structure (with leaf means integrated out) with conjugate redraws of
all leaf means, followed by an inverse-gamma redraw of the noise variance and,
optionally, a Dirichlet redraw of the split-dimension probabilities.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .forest import Forest, Internal, Leaf, PosteriorEnsemble, Tree


@dataclass(frozen=True)
class Dataset:
    """Raw covariates X (n x p) and responses y (length n)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if y.shape != (X.shape[0],):
            raise ValueError("y length must match the number of rows of X")
        if X.shape[0] < 2:
            raise ValueError("need at least 2 observations")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("non-finite entries in the dataset")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SplitNet:
    """Allowed cut values per dimension, each strictly increasing in (0,1)."""

    cuts: tuple  # per-dimension float arrays

    def __post_init__(self):
        cuts = tuple(np.asarray(c, dtype=float) for c in self.cuts)
        for c in cuts:
            if len(c) and not ((c > 0).all() and (c < 1).all() and (np.diff(c) > 0).all()):
                raise ValueError("cut values must be strictly increasing inside (0,1)")
        object.__setattr__(self, "cuts", cuts)

    def admissible(self, dim: int, lo: float, hi: float) -> np.ndarray:
        """Cut values of `dim` strictly inside (lo, hi)."""
        c = self.cuts[dim]
        return c[bisect_right(c, lo): bisect_left(c, hi)]

    def n_admissible(self, dim: int, lo: float, hi: float) -> int:
        c = self.cuts[dim]
        return bisect_left(c, hi) - bisect_right(c, lo)


@dataclass(frozen=True)
class SamplerConfig:
    num_trees: int = 200
    n_burn: int = 1000
    n_draw: int = 1000
    thin: int = 1
    alpha_split: float = 0.95
    beta_split: float = 2.0
    k: float = 2.0
    nu: float = 3.0
    q: float = 0.90
    sparsity: bool = False
    sparsity_a: float = 1.0
    splitnet_mode: str = "uniform_grid"
    splitnet_grid: int = 100
    min_leaf_obs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1 or self.n_draw < 1 or self.thin < 1:
            raise ValueError("num_trees, n_draw, and thin must be >= 1")
        if not (0.0 < self.alpha_split < 1.0):
            raise ValueError("alpha_split must lie in (0, 1)")
        if self.beta_split < 0:
            raise ValueError("beta_split must be >= 0")
        if self.min_leaf_obs < 1:
            raise ValueError("min_leaf_obs must be >= 1")
        if self.splitnet_mode not in ("uniform_grid", "observed_values"):
            raise ValueError(f"unknown splitnet mode {self.splitnet_mode!r}")


def scale_inputs(X: np.ndarray):
    """Min-max map of each raw covariate column into [0,1]."""
    X = np.asarray(X, dtype=float)
    lo = X.min(axis=0)
    width = X.max(axis=0) - lo
    if (width <= 0).any():
        bad = int(np.argmax(width <= 0))
        raise ValueError(f"covariate column {bad} is constant and cannot be scaled")
    scaled = (X - lo) / width
    return scaled, tuple((float(a), float(b)) for a, b in zip(lo, width))


def scale_outputs(y: np.ndarray):
    """Center responses at midrange and scale so the range becomes 1."""
    y = np.asarray(y, dtype=float)
    ymin, ymax = float(y.min()), float(y.max())
    if ymax <= ymin:
        raise ValueError("constant response: output scale is undefined")
    center = (ymax + ymin) / 2.0
    scale = ymax - ymin
    return (y - center) / scale, (center, scale)


def make_splitnet(X_scaled: np.ndarray, config: SamplerConfig) -> SplitNet:
    """Build the allowed-cutpoint set from a grid or the observed values."""
    p = X_scaled.shape[1]
    if config.splitnet_mode == "uniform_grid":
        G = config.splitnet_grid
        grid = np.arange(1, G + 1) / (G + 1)
        return SplitNet(tuple(grid for _ in range(p)))
    cuts = []
    for d in range(p):
        vals = np.unique(X_scaled[:, d])
        vals = vals[(vals > 0.0) & (vals < 1.0)]
        if len(vals) == 0:
            raise ValueError(f"column {d} has no admissible interior cut values")
        cuts.append(vals)
    return SplitNet(tuple(cuts))


def log_marginal_likelihood(sums, counts, sumsq, sigma2: float, leaf_var: float) -> float:
    """Log marginal of leaf residuals with the leaf means integrated out.

    Per leaf with n_k residuals summing to S_k and squaring to Q_k:
    0.5 log(s2 / (s2 + n_k v)) + v S_k^2 / (2 s2 (s2 + n_k v)) - Q_k / (2 s2),
    dropping the constant shared by trees with the same observations.
    """
    sums = np.asarray(sums, dtype=float)
    counts = np.asarray(counts, dtype=float)
    sumsq = np.asarray(sumsq, dtype=float)
    denom = sigma2 + counts * leaf_var
    return float(
        (0.5 * np.log(sigma2 / denom)
         + leaf_var * sums ** 2 / (2.0 * sigma2 * denom)
         - sumsq / (2.0 * sigma2)).sum()
    )


def _leaf_loglik(S: float, n: int, sigma2: float, leaf_var: float) -> float:
    # Q terms cancel between the two sides of a birth/death ratio
    denom = sigma2 + n * leaf_var
    return 0.5 * math.log(sigma2 / denom) + leaf_var * S * S / (2.0 * sigma2 * denom)


class _Node:
    """Mutable tree node used inside the chain; leaves carry observation ids."""

    __slots__ = ("depth", "bounds", "dim", "cut", "left", "right", "mu", "idx")

    def __init__(self, depth: int, bounds: dict):
        self.depth = depth
        self.bounds = bounds
        self.dim = None  # None marks a leaf
        self.cut = None
        self.left = None
        self.right = None
        self.mu = 0.0
        self.idx = None

    @property
    def is_leaf(self) -> bool:
        return self.dim is None

    def leaves(self, out=None) -> list:
        out = [] if out is None else out
        if self.is_leaf:
            out.append(self)
        else:
            self.left.leaves(out)
            self.right.leaves(out)
        return out

    def prunable(self, out=None) -> list:
        """Internal nodes whose children are both leaves."""
        out = [] if out is None else out
        if not self.is_leaf:
            if self.left.is_leaf and self.right.is_leaf:
                out.append(self)
            else:
                self.left.prunable(out)
                self.right.prunable(out)
        return out

    def to_tree(self) -> Tree:
        def freeze(node):
            if node.is_leaf:
                return Leaf(float(node.mu))
            return Internal(node.dim, float(node.cut), freeze(node.left), freeze(node.right))

        return Tree(freeze(self))


@dataclass
class MoveProposal:
    kind: str  # "birth" or "death"
    valid: bool
    node: _Node = None  # leaf to split (birth) or node to collapse (death)
    dim: int = None
    cut: float = None
    log_prior_ratio: float = 0.0
    log_forward: float = 0.0  # log proposal prob of the move
    log_reverse: float = 0.0  # log proposal prob of undoing it


def _log_p_split(depth: int, alpha: float, beta: float) -> float:
    return math.log(alpha) - beta * math.log1p(depth)


def _log_p_leaf(depth: int, alpha: float, beta: float) -> float:
    return math.log1p(-alpha * (1.0 + depth) ** -beta)


def propose_move(root: _Node, splitnet: SplitNet, s_cumsum: np.ndarray, s: np.ndarray,
                 rng: np.random.Generator, alpha: float, beta: float) -> MoveProposal:
    """Draw a birth or death proposal with its exact prior and proposal ratios."""
    leaves = root.leaves()
    prunable = root.prunable()
    single_leaf = root.is_leaf
    p_birth = 1.0 if single_leaf else 0.5
    birth = single_leaf or rng.random() < 0.5

    if birth:
        leaf = leaves[rng.integers(len(leaves))]
        dim = int(np.searchsorted(s_cumsum, rng.random(), side="right"))
        dim = min(dim, len(s) - 1)
        lo, hi = leaf.bounds.get(dim, (0.0, 1.0))
        cuts = splitnet.admissible(dim, lo, hi)
        if len(cuts) == 0:
            return MoveProposal("birth", valid=False)
        cut = float(cuts[rng.integers(len(cuts))])
        d = leaf.depth
        log_prior = (
            _log_p_split(d, alpha, beta)
            + 2.0 * _log_p_leaf(d + 1, alpha, beta)
            - _log_p_leaf(d, alpha, beta)
            + math.log(s[dim]) - math.log(len(cuts))
        )
        log_forward = (
            math.log(p_birth) - math.log(len(leaves))
            + math.log(s[dim]) - math.log(len(cuts))
        )
        # after the birth: the new internal node is prunable, and the leaf's
        # former parent (if both its children were leaves) no longer is
        n_prunable_after = len(prunable) + 1 - sum(1 for nd in prunable
                                                   if nd.left is leaf or nd.right is leaf)
        log_reverse = math.log(0.5) - math.log(n_prunable_after)
        return MoveProposal("birth", True, leaf, dim, cut,
                            log_prior, log_forward, log_reverse)

    if not prunable:
        return MoveProposal("death", valid=False)
    node = prunable[rng.integers(len(prunable))]
    dim = node.dim
    lo, hi = node.bounds.get(dim, (0.0, 1.0))
    n_cuts = splitnet.n_admissible(dim, lo, hi)
    d = node.depth
    log_prior = -(
        _log_p_split(d, alpha, beta)
        + 2.0 * _log_p_leaf(d + 1, alpha, beta)
        - _log_p_leaf(d, alpha, beta)
        + math.log(s[dim]) - math.log(n_cuts)
    )
    log_forward = math.log(0.5) - math.log(len(prunable))
    n_leaves_after = len(leaves) - 1
    p_birth_after = 1.0 if n_leaves_after == 1 else 0.5
    log_reverse = (
        math.log(p_birth_after) - math.log(n_leaves_after)
        + math.log(s[dim]) - math.log(n_cuts)
    )
    return MoveProposal("death", True, node, dim, None,
                        log_prior, log_forward, log_reverse)


class ChainState:
    """Mutable state of one chain: trees, cached fits, sigma2, split probs."""

    def __init__(self, dataset_scaled: np.ndarray, y_scaled: np.ndarray,
                 config: SamplerConfig, splitnet: SplitNet):
        n, p = dataset_scaled.shape
        self.X = dataset_scaled
        self.y = y_scaled
        self.config = config
        self.splitnet = splitnet
        self.roots = []
        for _ in range(config.num_trees):
            root = _Node(0, {})
            root.idx = np.arange(n)
            self.roots.append(root)
        self.fits = np.zeros((config.num_trees, n))
        self.total_fit = np.zeros(n)
        self.sigma2 = float(np.var(y_scaled)) or 1.0
        self.s = np.full(p, 1.0 / p)
        self.s_cumsum = np.cumsum(self.s)
        self.split_counts = np.zeros(p, dtype=int)
        self.leaf_var = (0.5 / (config.k * math.sqrt(config.num_trees))) ** 2
        s2 = float(np.var(y_scaled, ddof=1))
        self.lam = s2 * stats.chi2.ppf(1.0 - config.q, config.nu) / config.nu
        self.accepts = 0
        self.proposals = 0

    def forest(self) -> Forest:
        return Forest(tuple(root.to_tree() for root in self.roots), self.X.shape[1])


def _apply_birth(leaf: _Node, dim: int, cut: float, X: np.ndarray) -> None:
    lo, hi = leaf.bounds.get(dim, (0.0, 1.0))
    left = _Node(leaf.depth + 1, {**leaf.bounds, dim: (lo, cut)})
    right = _Node(leaf.depth + 1, {**leaf.bounds, dim: (cut, hi)})
    go_left = X[leaf.idx, dim] < cut
    left.idx = leaf.idx[go_left]
    right.idx = leaf.idx[~go_left]
    leaf.dim = dim
    leaf.cut = cut
    leaf.left = left
    leaf.right = right
    leaf.idx = None


def _apply_death(node: _Node) -> None:
    node.idx = np.concatenate([node.left.idx, node.right.idx])
    node.dim = None
    node.cut = None
    node.left = None
    node.right = None


def gibbs_sweep(state: ChainState, rng: np.random.Generator) -> ChainState:
    """One full sweep: per-tree structure + leaf means, then sigma2 (and s)."""
    cfg = state.config
    n = len(state.y)
    for t, root in enumerate(state.roots):
        resid = state.y - (state.total_fit - state.fits[t])
        prop = propose_move(root, state.splitnet, state.s_cumsum, state.s, rng,
                            cfg.alpha_split, cfg.beta_split)
        if prop.valid:
            state.proposals += 1
            log_lik = None
            if prop.kind == "birth":
                leaf = prop.node
                vals = state.X[leaf.idx, prop.dim]
                go_left = vals < prop.cut
                n_left = int(go_left.sum())
                n_right = len(leaf.idx) - n_left
                if n_left >= cfg.min_leaf_obs and n_right >= cfg.min_leaf_obs:
                    r = resid[leaf.idx]
                    S_left = float(r[go_left].sum())
                    S_all = float(r.sum())
                    log_lik = (
                        _leaf_loglik(S_left, n_left, state.sigma2, state.leaf_var)
                        + _leaf_loglik(S_all - S_left, n_right, state.sigma2, state.leaf_var)
                        - _leaf_loglik(S_all, len(leaf.idx), state.sigma2, state.leaf_var)
                    )
            else:
                node = prop.node
                S_l = float(resid[node.left.idx].sum())
                S_r = float(resid[node.right.idx].sum())
                n_l, n_r = len(node.left.idx), len(node.right.idx)
                log_lik = (
                    _leaf_loglik(S_l + S_r, n_l + n_r, state.sigma2, state.leaf_var)
                    - _leaf_loglik(S_l, n_l, state.sigma2, state.leaf_var)
                    - _leaf_loglik(S_r, n_r, state.sigma2, state.leaf_var)
                )
            if log_lik is not None:
                log_accept = (log_lik + prop.log_prior_ratio
                              + prop.log_reverse - prop.log_forward)
                if math.log(rng.random()) < log_accept:
                    state.accepts += 1
                    if prop.kind == "birth":
                        _apply_birth(prop.node, prop.dim, prop.cut, state.X)
                        state.split_counts[prop.dim] += 1
                    else:
                        state.split_counts[prop.node.dim] -= 1
                        _apply_death(prop.node)
        # conjugate redraw of all leaf means, then refresh the fit cache
        new_fit = np.empty(n)
        for leaf in root.leaves():
            nk = len(leaf.idx)
            S = float(resid[leaf.idx].sum())
            denom = state.sigma2 + nk * state.leaf_var
            post_mean = state.leaf_var * S / denom
            post_sd = math.sqrt(state.sigma2 * state.leaf_var / denom)
            leaf.mu = post_mean + post_sd * rng.standard_normal()
            new_fit[leaf.idx] = leaf.mu
        state.total_fit += new_fit - state.fits[t]
        state.fits[t] = new_fit
    resid_all = state.y - state.total_fit
    shape = (cfg.nu + n) / 2.0
    rate = (cfg.nu * state.lam + float(resid_all @ resid_all)) / 2.0
    state.sigma2 = rate / rng.gamma(shape)
    if cfg.sparsity:
        p = state.X.shape[1]
        state.s = rng.dirichlet(cfg.sparsity_a / p + state.split_counts)
        state.s = np.maximum(state.s, 1e-300)
        state.s /= state.s.sum()
        state.s_cumsum = np.cumsum(state.s)
    return state


def fit(dataset: Dataset, config: SamplerConfig = SamplerConfig(),
        progress=None) -> PosteriorEnsemble:
    """Run the chain and collect a posterior ensemble in scaled-y units."""
    X_scaled, x_scaling = scale_inputs(dataset.X)
    y_scaled, y_scaling = scale_outputs(dataset.y)
    splitnet = make_splitnet(X_scaled, config)
    rng = np.random.default_rng(config.seed)
    state = ChainState(X_scaled, y_scaled, config, splitnet)
    draws = []
    total_sweeps = config.n_burn + config.n_draw * config.thin
    for sweep in range(total_sweeps):
        gibbs_sweep(state, rng)
        if sweep >= config.n_burn and (sweep - config.n_burn) % config.thin == config.thin - 1:
            draws.append((state.forest(), state.sigma2))
        if progress is not None and (sweep + 1) % 100 == 0:
            rate = state.accepts / max(state.proposals, 1)
            progress(sweep + 1, total_sweeps, rate, state.sigma2)
    return PosteriorEnsemble(tuple(draws), x_scaling, y_scaling)


def simulate_prior(splitnet: SplitNet, p: int, n_iter: int,
                   config: SamplerConfig = SamplerConfig(num_trees=1),
                   seed: int = 0, observer=None) -> list:
    """Run the structural chain with the likelihood switched off.

    Visits the tree prior restricted to the split-net; used to verify the
    depth prior empirically.  Returns the visited roots' frozen trees unless
    an observer callback is given.
    """
    rng = np.random.default_rng(seed)
    s = np.full(p, 1.0 / p)
    s_cumsum = np.cumsum(s)
    root = _Node(0, {})
    out = []
    for _ in range(n_iter):
        prop = propose_move(root, splitnet, s_cumsum, s, rng,
                            config.alpha_split, config.beta_split)
        if prop.valid:
            log_accept = prop.log_prior_ratio + prop.log_reverse - prop.log_forward
            if math.log(rng.random()) < log_accept:
                if prop.kind == "birth":
                    lo, hi = prop.node.bounds.get(prop.dim, (0.0, 1.0))
                    leaf = prop.node
                    leaf.dim = prop.dim
                    leaf.cut = prop.cut
                    leaf.left = _Node(leaf.depth + 1, {**leaf.bounds, prop.dim: (lo, prop.cut)})
                    leaf.right = _Node(leaf.depth + 1, {**leaf.bounds, prop.dim: (prop.cut, hi)})
                else:
                    node = prop.node
                    node.dim = None
                    node.cut = None
                    node.left = None
                    node.right = None
        if observer is not None:
            observer(root)
        else:
            out.append(root.to_tree())
    return out
