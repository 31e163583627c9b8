"""Certification of predictor classes, and Monte Carlo support.

Exchangeability checks are exact: on a finite space the extreme exchangeable
measures are uniform on single orbits, so it is enough to check every bag.
Randomness checks search over product models and report pass_numeric.
"""
import math
import logging
import itertools
from typing import Iterator, Literal, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import optimize
from scipy.special import softmax
from scipy.stats import binom

from .core import (DataSequence, Example, Predictor, ProductModel, draw_sequences, guard_enumeration, tabulate)
from .errors import DomainViolation, FlavorMismatch, SearchIndeterminate
from .operators import conformalize, orbit_values, ratio0, relative_deviation, summarize
from .search import (ExpectationProfile, SearchConfig, SearchResult, grid_resolution_for, maximize_profile,
                     profile_terms, simplex_grid, worst_case_expectation)
from .settings import ABS_TOL, get_settings

logger = logging.getLogger(__name__)

TargetClass = Literal["exch_e", "rand_e", "invariant_rand_e", "exch_p", "rand_p", "test_cond_exch_e"]
Verdict = Literal["pass_exact", "pass_numeric", "fail", "indeterminate"]
CertMethod = Literal["orbit_enumeration", "simplex_grid", "one_dim_maximize", "roots_of_unity", "monte_carlo"]

ALPHA_GRID = tuple(round(0.01 * i, 2) for i in range(1, 100))


class Witness(BaseModel):
    sequence: Optional[list[list[str]]] = Field(None, description="(object, label) pairs of a violating sequence")
    q: Optional[list[float]] = Field(None, description="Violating product model, over `alphabet`")
    alphabet: Optional[list[str]] = None
    alpha: Optional[float] = None


class Certificate(BaseModel):
    target_class: TargetClass
    verdict: Verdict
    witness: Optional[Witness] = None
    margin: float
    worst_value: float
    method: CertMethod
    resolution: Optional[float] = None
    tolerance: float = ABS_TOL
    seed: Optional[int] = None
    detail: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_verdict(self) -> "Certificate":
        if self.verdict == "fail" and self.witness is None:
            raise ValueError("A failing certificate must carry a witness.")
        if self.verdict == "pass_numeric" and self.resolution is None:
            raise ValueError("A numeric pass must carry the search resolution.")
        return self

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass_exact", "pass_numeric")


def _require(pred: Predictor, flavor: str) -> None:
    if pred.flavor != flavor:
        raise FlavorMismatch(f"{pred.name} must be a {flavor}-predictor, got {pred.flavor}.")


def _log(cert: Certificate, pred: Predictor) -> Certificate:
    logger.info(f"{cert.target_class} for {pred.name}: {cert.verdict} via {cert.method} "
                f"(worst {cert.worst_value:.12g}, margin {cert.margin:.3g})")
    return cert


def bag_representatives(pred: Predictor, size: int, cap: Optional[int] = None) -> Iterator[DataSequence]:
    """One sorted sequence per bag of the given size; label-only predictors use object 0."""
    space = pred.space
    alphabet = [Example(0, y) for y in range(space.num_labels)] if pred.label_only else list(space.examples)
    guard_enumeration("bags", math.comb(size + len(alphabet) - 1, len(alphabet) - 1), cap)
    return itertools.combinations_with_replacement(alphabet, size)


def _sequence_witness(pred: Predictor, seq: DataSequence, alpha: Optional[float] = None) -> Witness:
    return Witness(sequence=pred.space.describe(seq), alpha=alpha)


def _alphabet_names(pred: Predictor, search_alphabet: str) -> list[str]:
    space = pred.space
    if search_alphabet == "labels":
        return list(space.labels)
    return [f"{space.objects[z.object]}:{space.labels[z.label]}" for z in space.examples]


# ------------------ Exact orbit checks ------------------

def certify_exchangeability_e(E: Predictor, cap: Optional[int] = None) -> Certificate:
    _require(E, "e")
    method = "cyclic_fast_path" if E.train_invariant else "exact_enumeration"
    worst, witness = -math.inf, None
    for seq in bag_representatives(E, E.arity, cap):
        mean = summarize(*orbit_values(E, seq, "all", method, cap)).mean
        if mean > worst:
            worst, witness = mean, seq
    passed = worst <= 1 + ABS_TOL
    cert = Certificate(target_class="exch_e", verdict="pass_exact" if passed else "fail",
                       witness=None if passed else _sequence_witness(E, witness), margin=1 - worst,
                       worst_value=worst, method="orbit_enumeration")
    return _log(cert, E)


def certify_test_conditional(G: Predictor, cap: Optional[int] = None) -> Certificate:
    """Mean of G over the n! training orderings is at most 1 for every sequence."""
    _require(G, "e")
    worst, witness = -math.inf, None
    for train in bag_representatives(G, G.n, cap):
        for y in range(G.space.num_labels):
            for x in range(1 if G.label_only else G.space.num_objects):
                seq = tuple(train) + (Example(x, y),)
                mean = summarize(*orbit_values(G, seq, "train_only", "exact_enumeration", cap)).mean
                if mean > worst:
                    worst, witness = mean, seq
    passed = worst <= 1 + ABS_TOL
    cert = Certificate(target_class="test_cond_exch_e", verdict="pass_exact" if passed else "fail",
                       witness=None if passed else _sequence_witness(G, witness), margin=1 - worst,
                       worst_value=worst, method="orbit_enumeration")
    return _log(cert, G)


def certify_exchangeability_p(P: Predictor, alphas: Sequence[float] = ALPHA_GRID, cap: Optional[int] = None) -> Certificate:
    """Orbit fraction of {P <= alpha} is at most alpha, at every grid level and every value of P."""
    _require(P, "p")
    method = "cyclic_fast_path" if P.train_invariant else "exact_enumeration"
    grid = np.asarray(sorted(alphas), dtype=float)
    margin, worst_frac, witness = math.inf, 0.0, None
    for seq in bag_representatives(P, P.arity, cap):
        pairs, total = orbit_values(P, seq, "all", method, cap)
        values = np.array([v for v, _ in pairs])
        weights = np.array([w for _, w in pairs])
        order = np.argsort(values)
        values, cum = values[order], np.cumsum(weights[order]) / total
        levels = np.union1d(values, grid)
        fracs = np.concatenate([[0.0], cum])[np.searchsorted(values, levels, side="right")]
        gaps = levels - fracs
        i = int(np.argmin(gaps))
        if gaps[i] < margin:
            margin, worst_frac = float(gaps[i]), float(fracs[i])
            witness = _sequence_witness(P, seq, float(levels[i]))
    passed = margin >= -ABS_TOL
    cert = Certificate(target_class="exch_p", verdict="pass_exact" if passed else "fail",
                       witness=None if passed else witness, margin=margin, worst_value=worst_frac,
                       method="orbit_enumeration", detail={"alpha": witness.alpha if witness else None})
    return _log(cert, P)


# ------------------ Product-model searches ------------------

def certify_randomness_e(E: Predictor, search: Optional[SearchConfig] = None, cap: Optional[int] = None) -> Certificate:
    _require(E, "e")
    search = search or SearchConfig()
    try:
        result = worst_case_expectation(E, search, cap)
    except SearchIndeterminate as exc:
        logger.warning(str(exc))
        return _log(Certificate(target_class="rand_e", verdict="indeterminate", margin=math.nan, worst_value=math.nan,
                                method="simplex_grid", seed=search.seed), E)
    return _log(_search_certificate("rand_e", E, result, 1.0, search.seed), E)


def _search_certificate(target: TargetClass, pred: Predictor, result: SearchResult, bound: float, seed: int,
                        alpha: Optional[float] = None) -> Certificate:
    passed = result.value <= bound + result.tolerance
    alphabet = "labels" if pred.label_only else "examples"
    witness = None if passed else Witness(q=result.q.tolist(), alphabet=_alphabet_names(pred, alphabet), alpha=alpha)
    return Certificate(target_class=target, verdict="pass_numeric" if passed else "fail", witness=witness,
                       margin=bound - result.value, worst_value=result.value, method=result.method,
                       resolution=result.resolution, tolerance=result.tolerance, seed=seed,
                       detail={"maximizer": result.q.tolist(), "alphabet": _alphabet_names(pred, alphabet)})


def certify_invariant_randomness_e(E: Predictor, search: Optional[SearchConfig] = None,
                                   cap: Optional[int] = None) -> Certificate:
    if not E.fully_invariant:
        raise DomainViolation(f"{E.name} is not declared fully invariant.")
    cert = certify_randomness_e(E, search, cap)
    return cert.model_copy(update={"target_class": "invariant_rand_e"})


def certify_randomness_p(P: Predictor, alphas: Sequence[float] = ALPHA_GRID, search: Optional[SearchConfig] = None,
                         cap: Optional[int] = None) -> Certificate:
    """max over Q of Q(P <= alpha) - alpha, at every grid level and every value of P.

    Q(P <= alpha) only changes at values of P, so one search per distinct value covers
    every level in between.
    """
    _require(P, "p")
    search = search or SearchConfig()
    terms = [(counts, mult, P(seq)) for counts, mult, seq in profile_terms(P, cap)]
    breakpoints = sorted({v for _, _, v in terms})
    A = len(terms[0][0])

    searched: dict[float, SearchResult] = {}

    def sublevel_max(level: float) -> Optional[SearchResult]:
        below = [v for v in breakpoints if v <= level]
        if not below:
            return None
        key = below[-1]
        if key not in searched:
            acc: dict = {}
            for counts, mult, v in terms:
                if v <= key:
                    acc[counts] = acc.get(counts, 0.0) + mult
            profile = ExpectationProfile("labels" if P.label_only else "examples",
                                         np.array(list(acc), dtype=float).reshape(-1, A), np.array(list(acc.values())))
            searched[key] = maximize_profile(profile, search)
        return searched[key]

    worst: Optional[tuple[float, float, SearchResult]] = None
    converged = True
    for level in sorted(set(alphas) | set(breakpoints)):
        result = sublevel_max(level)
        if result is None:
            continue
        converged = converged and result.converged
        gap = level - result.value
        if worst is None or gap < worst[0]:
            worst = (gap, level, result)

    if worst is None:
        cert = Certificate(target_class="rand_p", verdict="pass_exact", margin=1.0, worst_value=0.0,
                           method="one_dim_maximize" if A == 2 else "simplex_grid")
        return _log(cert, P)
    gap, level, result = worst
    if gap >= -result.tolerance and not converged:
        cert = Certificate(target_class="rand_p", verdict="indeterminate", margin=gap, worst_value=result.value,
                           method=result.method, resolution=result.resolution, seed=search.seed)
        return _log(cert, P)
    cert = _search_certificate("rand_p", P, result, level, search.seed, alpha=level)
    cert.detail["alpha"] = level
    return _log(cert, P)


# ------------------ Modular-sum certification ------------------

def modular_sum_probability(Q: np.ndarray, n: int, m: int) -> np.ndarray:
    """P(Y_1 + ... + Y_{n+1} = 0 mod m) under Q^{n+1}, by the roots-of-unity filter."""
    Q = np.atleast_2d(Q)
    freqs = np.arange(m)
    omega = np.exp(2j * np.pi * np.outer(freqs, freqs) / m)
    phi = Q @ omega.T
    return np.clip((phi ** (n + 1)).sum(axis=1).real / m, 0.0, 1.0)


def balance_window(n: int, m: int) -> tuple[int, int]:
    """Integer counts k with |k - n/m| <= 0.1 n/m."""
    return -(-9 * n // (10 * m)), 11 * n // (10 * m)


def balance_probability_bound(Q: np.ndarray, n: int, m: int) -> np.ndarray:
    """min over labels of P(count of the label lies in the balance window)."""
    Q = np.atleast_2d(Q)
    lo, hi = balance_window(n, m)
    tails = binom.cdf(hi, n + 1, Q) - binom.cdf(lo - 1, n + 1, Q)
    return np.clip(tails.min(axis=1), 0.0, 1.0)


def certify_randomness_e_modular(E: Predictor, search: Optional[SearchConfig] = None) -> Certificate:
    """c m min(P(sum = 0 mod m), P(balance)) maximised over label distributions."""
    if E.params.get("shape") != "modular_sum":
        raise DomainViolation(f"{E.name} is not a modular-sum predictor.")
    n, m, c = E.params["n"], E.params["m"], E.params["c"]
    search = search or SearchConfig()

    def bound(Q: np.ndarray) -> np.ndarray:
        return c * m * np.minimum(modular_sum_probability(Q, n, m), balance_probability_bound(Q, n, m))

    r = grid_resolution_for(m, search)
    grid = simplex_grid(m, r)
    values = bound(grid)
    order = np.argsort(values)[::-1]
    best_q, best = grid[order[0]], float(values[order[0]])
    for q0 in grid[order[: max(1, search.multistarts // 4)]]:
        res = optimize.minimize(lambda x: -float(bound(softmax(x))[0]), np.log(q0 + 1e-12), method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": search.max_iter})
        if -res.fun > best:
            best_q, best = softmax(res.x), float(-res.fun)
    passed = best <= 1 + search.search_tol
    witness = None if passed else Witness(q=np.asarray(best_q).tolist(), alphabet=list(E.space.labels))
    cert = Certificate(target_class="rand_e", verdict="pass_numeric" if passed else "fail", witness=witness,
                       margin=1 - best, worst_value=best, method="roots_of_unity", resolution=1.0 / r,
                       tolerance=search.search_tol, seed=search.seed,
                       detail={"maximizer": np.asarray(best_q).tolist(), "balance_window": list(balance_window(n, m))})
    return _log(cert, E)


# ------------------ Monte Carlo ------------------

class MonteCarloEstimate(NamedTuple):
    mean: float
    se: float
    trials: int


def sample_values(E: Predictor, model: ProductModel, trials: int, seed: int) -> np.ndarray:
    """Values of E on `trials` sequences drawn from model, reproducible per seed."""
    if model.space.model_dump() != E.space.model_dump() or model.power != E.arity:
        raise DomainViolation(f"Model does not match {E.name}'s space and arity.")
    idx = draw_sequences(model, trials, seed)
    space = E.space
    if space.size ** E.arity <= get_settings().table_cap:
        radix = space.size ** np.arange(E.n, -1, -1)
        return tabulate(E)[idx @ radix]
    if E.count_fn is not None:
        labels = idx % space.num_labels
        train = np.stack([(labels[:, :-1] == y).sum(axis=1) for y in range(space.num_labels)], axis=1)
        keys = np.column_stack([train, labels[:, -1]])
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        values = np.array([E.at_counts(row[:-1].tolist(), int(row[-1])) for row in unique])
        return values[inverse.ravel()]
    logger.debug(f"sampling {E.name} sequence by sequence")
    return np.array([E(tuple(space.example(int(i)) for i in row)) for row in idx])


def mc_expectation(E: Predictor, model: ProductModel, trials: int, seed: int) -> MonteCarloEstimate:
    if trials < 100:
        raise DomainViolation(f"Monte Carlo needs at least 100 trials, got {trials}.")
    values = sample_values(E, model, trials, seed)
    if np.isinf(values).any():
        return MonteCarloEstimate(math.inf, math.inf, trials)
    return MonteCarloEstimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(trials)), trials)


class GuaranteeReport(BaseModel):
    epsilon: float
    frequency: float
    se: float
    bound: float
    mean: float
    passed: bool


def markov_guarantee(samples: np.ndarray, epsilon: float) -> GuaranteeReport:
    """Frequency of G >= 1/epsilon against the Markov bound epsilon."""
    if not 0 < epsilon < 1:
        raise DomainViolation(f"epsilon must lie in (0, 1), got {epsilon}.")
    samples = np.asarray(samples, dtype=float)
    freq = float(np.mean(samples >= 1 / epsilon))
    se = math.sqrt(freq * (1 - freq) / len(samples))
    return GuaranteeReport(epsilon=epsilon, frequency=freq, se=se, bound=epsilon, mean=float(samples.mean()),
                           passed=freq <= epsilon + 3 * se)


def worst_label_guarantee(E: Predictor, model: ProductModel, epsilon: float, trials: int, seed: int,
                          sqrt_form: bool = False, cap: Optional[int] = None) -> GuaranteeReport:
    """Frequency of sequences on which every false label y has E/E^x < e(|Y|-1)/epsilon.

    With sqrt_form the comparison is E/E^tx < e((|Y|-1)/epsilon)^2. The frequency must
    be at least 1 - epsilon up to 3 standard errors.
    """
    if not 0 < epsilon < 1:
        raise DomainViolation(f"epsilon must lie in (0, 1), got {epsilon}.")
    _require(E, "e")
    k = E.space.num_labels
    if sqrt_form:
        reference = conformalize(E, cap).predictor
        limit = math.e * ((k - 1) / epsilon) ** 2
    else:
        reference = relative_deviation(E, cap=cap).predictor
        limit = math.e * (k - 1) / epsilon
    idx = draw_sequences(model, trials, seed)
    hits = 0
    for row in idx:
        seq = tuple(E.space.example(int(i)) for i in row)
        train, z = seq[:-1], seq[-1]
        hits += all(ratio0(E(s), reference(s)) < limit
                    for s in (train + (Example(z.object, y),) for y in range(k) if y != z.label))
    freq = hits / trials
    se = math.sqrt(freq * (1 - freq) / trials)
    return GuaranteeReport(epsilon=epsilon, frequency=freq, se=se, bound=1 - epsilon, mean=freq,
                           passed=freq >= 1 - epsilon - 3 * se)
