"""Symmetrisation operators on e-predictors.

    avg_all             E^i   mean over all (n+1)! orderings
    relative_deviation  E^x   E / E^i
    avg_train           E^t   mean over the n! orderings of the training part
    conformalize        E^tx  (E^t)^x

Train-invariant inputs take the cyclic fast path: their full-orbit mean is the
mean over the n+1 rotations, or a |Y|-term sum when a count_fn is available.
"""
import math
import logging
from typing import Callable, Literal, NamedTuple, Optional

from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp

from .core import Bag, DataSequence, Example, Predictor, Scope, orbit, rotations
from .errors import FlavorMismatch

logger = logging.getLogger(__name__)

Method = Literal["exact_enumeration", "cyclic_fast_path"]

# Orbit means below this are divided in log space.
TINY_MEAN = 1e-300


class OperatorResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    predictor: Predictor
    method: Method
    cost: int = Field(..., ge=1, description="Base evaluations per output value")


class OrbitSummary(NamedTuple):
    mean: float
    total: float
    inf_weight: float
    log_mean: float


def _require_e(E: Predictor) -> None:
    if E.flavor != "e":
        raise FlavorMismatch(f"Operators act on e-predictors; {E.name} is a {E.flavor}-predictor.")


def _resolve_method(E: Predictor, method: Optional[Method]) -> Method:
    if method is None:
        return "cyclic_fast_path" if E.train_invariant else "exact_enumeration"
    if method == "cyclic_fast_path" and not E.train_invariant:
        raise ValueError(f"The cyclic fast path needs a train-invariant predictor; {E.name} is not.")
    return method


def orbit_values(E: Predictor, seq: DataSequence, scope: Scope, method: Method,
                 cap: Optional[int] = None) -> tuple[list[tuple[float, float]], float]:
    """(value, weight) pairs over the orbit of seq, and the total weight.

    Weighted sums over the pairs equal sums over all permutations in scope up
    to the common factor given by the total.
    """
    if scope == "train_only":
        if E.train_invariant:
            return [(E(seq), 1.0)], 1.0
        pairs = [(E(s), float(w)) for s, w in orbit(seq, "train_only", dedup=True, cap=cap)]
        return pairs, float(math.factorial(E.n))

    if method == "cyclic_fast_path":
        if E.count_fn is not None:
            k = E.space.num_labels
            totals = [0] * k
            for z in seq:
                totals[z.label] += 1
            pairs = []
            for y, c in enumerate(totals):
                if c:
                    train = list(totals)
                    train[y] -= 1
                    pairs.append((E.at_counts(train, y), float(c)))
            return pairs, float(E.arity)
        return [(E(s), 1.0) for s in rotations(seq)], float(E.arity)

    pairs = [(E(s), float(w)) for s, w in orbit(seq, "all", dedup=True, cap=cap)]
    return pairs, float(math.factorial(E.arity))


def summarize(pairs: list[tuple[float, float]], total: float) -> OrbitSummary:
    inf_weight = math.fsum(w for v, w in pairs if math.isinf(v))
    if inf_weight:
        return OrbitSummary(math.inf, total, inf_weight, math.inf)
    mean = math.fsum(v * w for v, w in pairs) / total
    positive = [(v, w) for v, w in pairs if v > 0]
    if not positive:
        log_mean = -math.inf
    elif mean < TINY_MEAN:
        log_mean = float(logsumexp([math.log(v) for v, _ in positive], b=[w for _, w in positive])) - math.log(total)
    else:
        log_mean = math.log(mean)
    return OrbitSummary(mean, total, inf_weight, log_mean)


def relative_value(value: float, summary: OrbitSummary) -> float:
    """value / orbit mean, with 0/0 := 1 and the infinite-mean convention."""
    if math.isinf(summary.mean):
        return summary.total / summary.inf_weight if math.isinf(value) else 0.0
    if summary.mean == 0:
        return 1.0
    if value == 0:
        return 0.0
    if summary.mean < TINY_MEAN:
        return math.exp(math.log(value) - summary.log_mean)
    return value / summary.mean


def ratio0(num: float, den: float) -> float:
    """num / den with 0/0 := 0, x/0 := inf and inf/inf := 1."""
    if num == 0:
        return 0.0
    if math.isinf(num) and math.isinf(den):
        return 1.0
    if den == 0:
        return math.inf
    return num / den


def _orbit_cost(E: Predictor, method: Method) -> int:
    if method == "exact_enumeration":
        return math.factorial(E.arity)
    return E.space.num_labels if E.count_fn is not None else E.arity


def _memoised_summary(E: Predictor, scope: Scope, method: Method,
                      cap: Optional[int]) -> Callable[[DataSequence], OrbitSummary]:
    cache: dict = {}

    def lookup(seq: DataSequence) -> OrbitSummary:
        key = Bag.of(seq) if scope == "all" else (Bag.of(seq[:-1]), seq[-1])
        if key not in cache:
            cache[key] = summarize(*orbit_values(E, seq, scope, method, cap))
        return cache[key]

    return lookup


def orbit_mean(E: Predictor, seq: DataSequence, method: Optional[Method] = None, cap: Optional[int] = None) -> float:
    return summarize(*orbit_values(E, seq, "all", _resolve_method(E, method), cap)).mean


def avg_all(E: Predictor, method: Optional[Method] = None, cap: Optional[int] = None) -> OperatorResult:
    _require_e(E)
    method = _resolve_method(E, method)
    lookup = _memoised_summary(E, "all", method, cap)

    count_fn = None
    if E.count_fn is not None:
        def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
            totals = list(train_counts)
            totals[test_label] += 1
            acc = []
            for y, c in enumerate(totals):
                if c:
                    train = list(totals)
                    train[y] -= 1
                    acc.append(c * E.at_counts(train, y))
            return math.inf if math.inf in acc else math.fsum(acc) / E.arity

    pred = Predictor(space=E.space, n=E.n, flavor="e", fn=lambda seq: lookup(seq).mean, fully_invariant=True,
                     label_only=E.label_only, count_fn=count_fn, name=f"{E.name}^i")
    logger.debug(f"avg_all({E.name}) via {method}")
    return OperatorResult(predictor=pred, method=method, cost=_orbit_cost(E, method))


def relative_deviation(E: Predictor, method: Optional[Method] = None, cap: Optional[int] = None) -> OperatorResult:
    _require_e(E)
    method = _resolve_method(E, method)
    lookup = _memoised_summary(E, "all", method, cap)

    count_fn = None
    if E.count_fn is not None:
        mean_of = avg_all(E, method, cap).predictor

        def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
            seq_counts = list(train_counts)
            seq_counts[test_label] += 1
            mean = mean_of.at_counts(train_counts, test_label)
            value = E.at_counts(train_counts, test_label)
            if math.isinf(mean):
                inf_weight = sum(c for y, c in enumerate(seq_counts)
                                 if c and math.isinf(E.at_counts(_minus(seq_counts, y), y)))
                summary = OrbitSummary(mean, float(E.arity), float(inf_weight), math.inf)
            else:
                summary = OrbitSummary(mean, float(E.arity), 0.0, math.log(mean) if mean > 0 else -math.inf)
            return relative_value(value, summary)

    pred = Predictor(space=E.space, n=E.n, flavor="e", fn=lambda seq: relative_value(E(seq), lookup(seq)),
                     train_invariant=E.train_invariant, fully_invariant=E.fully_invariant,
                     label_only=E.label_only, count_fn=count_fn, name=f"{E.name}^x")
    logger.debug(f"relative_deviation({E.name}) via {method}")
    return OperatorResult(predictor=pred, method=method, cost=_orbit_cost(E, method))


def _minus(counts: list[int], y: int) -> list[int]:
    out = list(counts)
    out[y] -= 1
    return out


def avg_train(E: Predictor, cap: Optional[int] = None) -> OperatorResult:
    _require_e(E)
    if E.train_invariant:
        return OperatorResult(predictor=E.derive(name=f"{E.name}^t"), method="exact_enumeration", cost=1)
    lookup = _memoised_summary(E, "train_only", "exact_enumeration", cap)
    pred = Predictor(space=E.space, n=E.n, flavor="e", fn=lambda seq: lookup(seq).mean, train_invariant=True,
                     label_only=E.label_only, name=f"{E.name}^t")
    return OperatorResult(predictor=pred, method="exact_enumeration", cost=math.factorial(E.n))


def conformalize(E: Predictor, cap: Optional[int] = None) -> OperatorResult:
    """E^tx; the x step always runs on the cyclic fast path."""
    t = avg_train(E, cap)
    x = relative_deviation(t.predictor, cap=cap)
    return OperatorResult(predictor=x.predictor.derive(name=f"{E.name}^tx"), method=x.method, cost=t.cost * x.cost)


OPERATORS: dict[str, Callable[..., OperatorResult]] = {
    "i": avg_all,
    "x": relative_deviation,
    "t": avg_train,
    "tx": conformalize,
}


def apply_chain(E: Predictor, chain: str, cap: Optional[int] = None) -> OperatorResult:
    """Apply a comma-separated operator chain, left to right ("t,x" is E^tx)."""
    steps = [s.strip() for s in chain.split(",") if s.strip()]
    if not steps:
        raise ValueError("Operator chain is empty.")
    result = OperatorResult(predictor=E, method="exact_enumeration", cost=1)
    cost = 1
    for step in steps:
        if step not in OPERATORS:
            raise ValueError(f"Unknown operator '{step}'; choose from {sorted(OPERATORS)}.")
        result = OPERATORS[step](result.predictor, cap=cap)
        cost *= result.cost
    return result.model_copy(update={"cost": cost})
