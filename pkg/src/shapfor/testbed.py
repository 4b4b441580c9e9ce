"""Benchmark test functions, synthetic data generation, and reference values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import BlackBox, mc_variance
from .sampler import Dataset

FUNCTION_NAMES = ("friedman", "morris", "bratley", "gfunction")

# Reference values (d=5, uniform inputs): total variance and normalized
# main-effect, total-effect, and Shapley indices per input.
REFERENCE_D5 = {
    "friedman": {
        "var": 23.8,
        "V": (0.197, 0.197, 0.093, 0.350, 0.087),
        "T": (0.274, 0.274, 0.093, 0.350, 0.087),
        "S": (0.235, 0.235, 0.093, 0.350, 0.087),
    },
    "morris": {
        "var": 5.25,
        "V": (0.190,) * 5,
        "T": (0.210,) * 5,
        "S": (0.2,) * 5,
    },
    "bratley": {
        "var": 0.057,
        "V": (0.688, 0.142, 0.051, 0.006, 0.006),
        "T": (0.766, 0.220, 0.099, 0.018, 0.018),
        "S": (0.725, 0.179, 0.073, 0.011, 0.011),
    },
    "gfunction": {
        "var": 3.076,
        "V": (0.411, 0.183, 0.103, 0.066, 0.046),
        "T": (0.558, 0.288, 0.172, 0.113, 0.080),
        "S": (0.482, 0.233, 0.135, 0.088, 0.062),
    },
}

_variance_cache: dict = {}


@dataclass(frozen=True)
class TestFunction:
    """One of the benchmark functions, with d active of p ambient inputs."""

    __test__ = False  # not a test case despite the name

    name: str
    d: int = 5
    p: int = 5

    def __post_init__(self):
        if self.name not in FUNCTION_NAMES:
            raise ValueError(f"unknown test function {self.name!r}; "
                             f"choose from {FUNCTION_NAMES}")
        if self.p < self.d:
            raise ValueError(f"ambient dimension p={self.p} below active d={self.d}")
        if self.name == "friedman" and self.d != 5:
            raise ValueError("the friedman function has exactly 5 active inputs")

    def as_blackbox(self) -> BlackBox:
        return BlackBox(self.p, lambda X: evaluate_batch(self, X))


def evaluate_batch(fn: TestFunction, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != fn.p:
        raise ValueError(f"expected (N, {fn.p}) inputs, got {X.shape}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("inputs must lie in the unit cube")
    A = X[:, : fn.d]
    d = fn.d
    if fn.name == "friedman":
        return (10.0 * np.sin(np.pi * A[:, 0] * A[:, 1])
                + 20.0 * (A[:, 2] - 0.5) ** 2 + 10.0 * A[:, 3] + 5.0 * A[:, 4])
    if fn.name == "morris":
        alpha = np.sqrt(12.0) - 6.0 * np.sqrt(0.1 * (d - 1))
        beta = 12.0 / np.sqrt(10.0 * (d - 1))
        s1 = A.sum(axis=1)
        s2 = (s1 ** 2 - (A ** 2).sum(axis=1)) / 2.0  # sum over i<j of x_i x_j
        return alpha * s1 + beta * s2
    if fn.name == "bratley":
        out = np.zeros(len(A))
        prod = np.ones(len(A))
        for i in range(1, d + 1):
            prod = prod * A[:, i - 1]
            out += (-1) ** i * prod
        return out
    c = (np.arange(1, d + 1) - 1.0) / 2.0
    return np.prod((np.abs(4.0 * A - 2.0) + c) / (1.0 + c), axis=1)


def eval_test(fn: TestFunction, x) -> float:
    """Evaluate at a single point in [0,1]^p."""
    return float(evaluate_batch(fn, np.asarray(x, dtype=float)[None, :])[0])


def reference_values(fn: TestFunction) -> dict:
    """Table of reference (normalized V, T, S, Var) constants; d=5 only."""
    if fn.d != 5:
        raise ValueError(f"reference values are tabulated for d=5 only, got d={fn.d}")
    return REFERENCE_D5[fn.name]


def function_variance(fn: TestFunction) -> float:
    """Variance of the test function under uniform inputs.

    Uses the tabulated d=5 value; other active dimensions are calibrated once
    by Monte Carlo and cached.
    """
    if fn.d == 5:
        return REFERENCE_D5[fn.name]["var"]
    key = (fn.name, fn.d)
    if key not in _variance_cache:
        box = BlackBox(fn.d, lambda X: evaluate_batch(TestFunction(fn.name, fn.d, fn.d), X))
        est, _ = mc_variance(box, N=1_000_000, rng=12345)
        _variance_cache[key] = est
    return _variance_cache[key]


@dataclass(frozen=True)
class GenerationSpec:
    n: int = None  # defaults to 50 * p
    noise_ratio: float = 0.25
    design: str = "random_uniform"
    seed: int = 0

    def resolve_n(self, p: int) -> int:
        n = 50 * p if self.n is None else self.n
        if n < 1:
            raise ValueError("n must be >= 1")
        return n

    def __post_init__(self):
        if self.noise_ratio < 0:
            raise ValueError("noise_ratio must be >= 0")
        if self.design != "random_uniform":
            raise ValueError(f"unknown design {self.design!r}")


def generate(fn: TestFunction, spec: GenerationSpec = GenerationSpec()) -> Dataset:
    """Draw uniform inputs and noisy responses with the standard noise level.

    Noise variance is noise_ratio times the function's reference variance.
    """
    n = spec.resolve_n(fn.p)
    rng = np.random.default_rng(spec.seed)
    X = rng.random((n, fn.p))
    y = evaluate_batch(fn, X)
    if spec.noise_ratio > 0:
        sigma = float(np.sqrt(spec.noise_ratio * function_variance(fn)))
        y = y + rng.normal(0.0, sigma, size=n)
    return Dataset(X, y)
