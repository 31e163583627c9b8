"""Worst-case expectation of a predictor over IID product models.

The expectation of E under Q^{n+1} is a polynomial in Q. An ExpectationProfile
stores it as count vectors and weights, sum_t W_t prod_a Q_a^{C_ta}; the
maximisers below evaluate it on whole grids at once.
"""
import math
import logging
import itertools
from typing import Iterator, Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy import optimize
from scipy.special import gammaln, softmax

from .core import DataSequence, Example, Predictor, guard_enumeration
from .errors import SearchIndeterminate

logger = logging.getLogger(__name__)

Alphabet = Literal["labels", "examples"]

_LOG_ZERO = -1e300
_CHUNK = 4096
INV_PHI = (math.sqrt(5) - 1) / 2


class SearchConfig(BaseModel):
    grid_resolution: int = Field(64, ge=1, description="Simplex grid resolution upper bound")
    grid_budget: int = Field(200_000, ge=1, description="Maximum simplex grid points")
    scan_points: int = Field(1025, ge=3, description="Grid points of the one-dimensional scan")
    multistarts: int = Field(32, ge=0, description="Nelder-Mead restarts after the grid")
    golden_tol: float = Field(1e-10, gt=0)
    exact_tol: float = Field(1e-9, gt=0, description="Pass tolerance for one-dimensional searches")
    search_tol: float = Field(1e-6, gt=0, description="Pass tolerance for simplex searches")
    max_iter: int = Field(4000, ge=1)
    seed: int = 0


class SearchResult(NamedTuple):
    q: np.ndarray
    value: float
    method: Literal["one_dim_maximize", "simplex_grid"]
    resolution: float
    converged: bool
    tolerance: float


class ExpectationProfile(NamedTuple):
    alphabet: Alphabet
    counts: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.counts.shape[1]

    def evaluate(self, q: np.ndarray) -> np.ndarray:
        """Expectation at each row of q (shape (G, A) or (A,))."""
        Q = np.atleast_2d(np.asarray(q, dtype=float))
        out = np.empty(Q.shape[0])
        finite = np.isfinite(self.weights)
        for start in range(0, Q.shape[0], _CHUNK):
            block = Q[start:start + _CHUNK]
            positive = block > 0
            logq = np.where(positive, np.log(np.where(positive, block, 1.0)), _LOG_ZERO)
            probs = np.exp(self.counts @ logq.T)
            vals = self.weights[finite] @ probs[finite]
            if not finite.all():
                hit = (probs[~finite] > 0).any(axis=0)
                vals = np.where(hit, np.inf, vals)
            out[start:start + _CHUNK] = vals
        return out

    def value(self, q: np.ndarray) -> float:
        return float(self.evaluate(q)[0])


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    for combo in itertools.combinations_with_replacement(range(parts), total):
        counts = [0] * parts
        for a in combo:
            counts[a] += 1
        yield tuple(counts)


def log_multinomial(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    return float(gammaln(counts.sum() + 1) - gammaln(counts + 1).sum())


def _symbol_example(E: Predictor, a: int) -> Example:
    return Example(0, a) if E.label_only else E.space.example(a)


def profile_terms(E: Predictor, cap: Optional[int] = None) -> Iterator[tuple[tuple[int, ...], float, DataSequence]]:
    """(total count vector, multiplicity, representative sequence) for every class of sequences
    on which E is constant. Multiplicities are the number of sequences in each class."""
    A = E.space.num_labels if E.label_only else E.space.size
    n = E.n

    def rep(train_counts, test_symbol) -> DataSequence:
        train = tuple(_symbol_example(E, a) for a, c in enumerate(train_counts) for _ in range(c))
        return train + (_symbol_example(E, test_symbol),)

    if E.fully_invariant:
        guard_enumeration("count vectors", math.comb(n + A, A - 1), cap)
        for counts in compositions(n + 1, A):
            test = max(a for a, c in enumerate(counts) if c)
            train = list(counts)
            train[test] -= 1
            yield counts, math.exp(log_multinomial(counts)), rep(train, test)
    elif E.train_invariant:
        guard_enumeration("training count vectors", math.comb(n + A - 1, A - 1) * A, cap)
        for train in compositions(n, A):
            mult = math.exp(log_multinomial(train))
            for test in range(A):
                total = list(train)
                total[test] += 1
                yield tuple(total), mult, rep(train, test)
    else:
        guard_enumeration("sequences", A ** (n + 1), cap)
        for symbols in itertools.product(range(A), repeat=n + 1):
            seq = tuple(_symbol_example(E, a) for a in symbols)
            yield tuple(np.bincount(symbols, minlength=A).tolist()), 1.0, seq


def expectation_profile(E: Predictor, cap: Optional[int] = None) -> ExpectationProfile:
    alphabet: Alphabet = "labels" if E.label_only else "examples"
    A = E.space.num_labels if E.label_only else E.space.size
    if E.profile is not None:
        terms = list(E.profile())
    else:
        acc: dict[tuple[int, ...], float] = {}
        for counts, mult, seq in profile_terms(E, cap):
            value = E(seq)
            if value > 0:
                acc[counts] = acc.get(counts, 0.0) + mult * value
        terms = list(acc.items())
    if not terms:
        return ExpectationProfile(alphabet, np.zeros((1, A)), np.zeros(1))
    counts = np.array([c for c, _ in terms], dtype=float)
    weights = np.array([w for _, w in terms], dtype=float)
    return ExpectationProfile(alphabet, counts, weights)


# ------------------ Maximisers ------------------

def golden_section_max(f, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200) -> tuple[float, float, bool]:
    """Maximise a unimodal f on [lo, hi]. Returns (argmax, max, converged)."""
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + INV_PHI * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - INV_PHI * (hi - lo)
            f1 = f(x1)
    x = (lo + hi) / 2
    return x, f(x), hi - lo <= tol


def _maximize_one_dim(profile: ExpectationProfile, config: SearchConfig) -> SearchResult:
    def f(theta: float) -> float:
        return profile.value(np.array([1.0 - theta, theta]))

    grid = np.linspace(0.0, 1.0, config.scan_points)
    values = profile.evaluate(np.column_stack([1.0 - grid, grid]))
    i = int(np.argmax(values))
    best_theta, best_value, converged = float(grid[i]), float(values[i]), True
    if math.isfinite(best_value):
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        theta, value, converged = golden_section_max(f, lo, hi, config.golden_tol, config.max_iter)
        if value > best_value:
            best_theta, best_value = theta, value
    q = np.array([1.0 - best_theta, best_theta])
    return SearchResult(q, best_value, "one_dim_maximize", config.golden_tol, converged, config.exact_tol)


def simplex_grid(dim: int, resolution: int) -> np.ndarray:
    points = np.array(list(compositions(resolution, dim)), dtype=float)
    return points / resolution


def grid_resolution_for(dim: int, config: SearchConfig) -> int:
    r = config.grid_resolution
    while r > 1 and math.comb(r + dim - 1, dim - 1) > config.grid_budget:
        r -= 1
    return r


def _maximize_simplex(profile: ExpectationProfile, config: SearchConfig) -> SearchResult:
    dim = profile.size
    r = grid_resolution_for(dim, config)
    grid = simplex_grid(dim, r)
    values = profile.evaluate(grid)
    order = np.argsort(values)[::-1]
    best_q, best_value = grid[order[0]], float(values[order[0]])
    if not math.isfinite(best_value):
        return SearchResult(best_q, best_value, "simplex_grid", 1.0 / r, True, config.search_tol)

    rng = np.random.default_rng(config.seed)
    starts = [grid[i] for i in order[: config.multistarts // 2]]
    starts += list(rng.dirichlet(np.ones(dim), size=config.multistarts - len(starts)))

    def negative(x: np.ndarray) -> float:
        return -profile.value(softmax(x))

    converged = config.multistarts == 0
    found = []
    for q0 in starts:
        x0 = np.log(np.asarray(q0) + 1e-12)
        res = optimize.minimize(negative, x0, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": config.max_iter})
        converged = converged or bool(res.success)
        found.append(float(-res.fun))
        if -res.fun > best_value:
            best_q, best_value = softmax(res.x), float(-res.fun)
    # Ascents stopped by maxiter still count when two of them agree on the best value.
    agreeing = sum(v >= best_value - config.search_tol for v in found)
    converged = converged or agreeing >= 2
    logger.debug(f"simplex search: {len(starts)} restarts, {agreeing} within tolerance of {best_value:.12g}")
    return SearchResult(np.asarray(best_q), best_value, "simplex_grid", 1.0 / r, converged, config.search_tol)


def maximize_profile(profile: ExpectationProfile, config: Optional[SearchConfig] = None) -> SearchResult:
    config = config or SearchConfig()
    if profile.size == 2:
        return _maximize_one_dim(profile, config)
    return _maximize_simplex(profile, config)


def worst_case_expectation(E: Predictor, config: Optional[SearchConfig] = None,
                           cap: Optional[int] = None) -> SearchResult:
    """sup over Q of E's expectation under Q^{n+1}.

    Raises SearchIndeterminate when no ascent converged and the best value found
    is still within tolerance of 1.
    """
    config = config or SearchConfig()
    result = maximize_profile(expectation_profile(E, cap), config)
    logger.info(f"worst case of {E.name}: {result.value:.12g} at q={np.round(result.q, 6).tolist()} ({result.method})")
    if not result.converged and result.value <= 1 + result.tolerance:
        raise SearchIndeterminate(f"Search for {E.name} did not converge (best value {result.value:.12g}).")
    return result
