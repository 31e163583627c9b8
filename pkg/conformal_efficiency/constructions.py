"""Named predictors and derived e-variables.

Kernel integrals G(seq) = const * sum_y B(y | z_{n+1}) * term(train, x_{n+1}, y)
are the common shape here; kernel_integral builds them once, and adds a
count function whenever the term has one and the kernel ignores objects.
"""
import math
import logging
import itertools
from typing import Callable, Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import binom

from .calibration import Calibrator, calibrate_predictor
from .core import (BLOCK_SIZE, Bag, DataSequence, Example, ExampleSpace, MarkovKernel, Predictor, block_rng,
                   count_predictor, flip_kernel, uniform_all_kernel, uniform_other_kernel)
from .errors import DomainViolation, FlavorMismatch
from .operators import avg_all, avg_train, conformalize, ratio0, relative_deviation
from .search import SearchConfig, golden_section_max
from .verification import Certificate, certify_randomness_e

logger = logging.getLogger(__name__)

E_INV = math.exp(-1.0)
E_INV_SQRT = math.exp(-0.5)

Term = Callable[[DataSequence], float]
CountTerm = Callable[[tuple[int, ...], int], float]
Scorer = Callable[[Bag, Example], float]


class ExperimentConstants(BaseModel):
    a: float = Field(0.99, gt=0, lt=1, description="Value scale of the Theorem 3 encoder")
    b: float = Field(1.01, gt=1, description="Slack in the Theorem 3 local-limit bound")
    c: float = Field(0.9, gt=0, description="Acceptance constant of the modular-sum predictor")
    c_labels: float = Field(2.0, gt=0, description="Constant c in the Theorem 3 efficiency claim")
    c_refute: float = Field(0.4, gt=0, description="Constant replacing 1/e in the Theorem 2 refutation")
    delta: float = Field(0.5, gt=0, lt=1)
    epsilon: float = Field(0.05, gt=0, lt=1)
    epsilon1: float = Field(0.05, gt=0, lt=1)
    epsilon2: float = Field(0.05, gt=0, lt=1)
    k: int = Field(2, ge=1)


def _require(pred: Predictor, flavor: str) -> None:
    if pred.flavor != flavor:
        raise FlavorMismatch(f"{pred.name} must be a {flavor}-predictor, got {pred.flavor}.")


def kernel_integral(B: MarkovKernel, n: int, term: Term, const: float = 1.0, *, name: str,
                    train_invariant: bool = False, label_only: bool = False,
                    term_counts: Optional[CountTerm] = None) -> Predictor:
    space = B.space
    k = space.num_labels

    def fn(seq: DataSequence) -> float:
        train, x = seq[:-1], seq[-1].object
        row = B.row(seq[-1])
        return const * math.fsum(row[y] * term(train + (Example(x, y),)) for y in range(k) if row[y] > 0)

    count_fn = None
    if term_counts is not None and B.label_only and label_only and train_invariant:
        def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
            row = B.label_row(test_label)
            return const * math.fsum(row[y] * term_counts(train_counts, y) for y in range(k) if row[y] > 0)

    return Predictor(space=space, n=n, flavor="e", fn=fn, train_invariant=train_invariant,
                     label_only=label_only and B.label_only, count_fn=count_fn, name=name)


# ------------------ Toy predictors ------------------

def single_one_predictor(n: int, space: Optional[ExampleSpace] = None) -> Predictor:
    """(1 - 1/(n+1))^-n when exactly one label is 1, else 0."""
    space = space or ExampleSpace.binary()
    value = (1 - 1 / (n + 1)) ** -n

    def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
        return value if train_counts[1] + (test_label == 1) == 1 else 0.0

    return count_predictor(space, n, "e", count_fn, fully_invariant=True, name="single_one")


def laplace_predictor(n: int, space: Optional[ExampleSpace] = None) -> Predictor:
    """(n+1)(1 + 1/n)^n on (0,...,0,1), else 0."""
    space = space or ExampleSpace.binary()
    value = (n + 1) * (1 + 1 / n) ** n

    def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
        return value if train_counts[1] == 0 and test_label == 1 else 0.0

    return count_predictor(space, n, "e", count_fn, name="laplace")


def rarity_predictor(space: ExampleSpace, n: int, power: float = 1.0) -> Predictor:
    """((n/|Y|) / (k_y + 1))^power: large when the test label is rare in the training data."""
    m = space.num_labels

    def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
        return ((n / m) / (train_counts[test_label] + 1)) ** power

    return count_predictor(space, n, "e", count_fn, name="rarity")


# ------------------ Theorem 1 and its proof ------------------

def theorem1_G(E: Predictor, B: MarkovKernel, constant: float = E_INV, cap: Optional[int] = None) -> Predictor:
    _require(E, "e")
    Ex = relative_deviation(E, cap=cap).predictor

    term_counts = None
    if E.count_fn is not None:
        def term_counts(train_counts, y):
            return ratio0(E.at_counts(train_counts, y), Ex.at_counts(train_counts, y))

    return kernel_integral(B, E.n, lambda s: ratio0(E(s), Ex(s)), constant, name=f"thm1G({E.name})",
                           train_invariant=E.train_invariant, label_only=E.label_only, term_counts=term_counts)


class ProofParts(NamedTuple):
    G1: Predictor
    G2: Predictor
    G3: Predictor
    exact: bool


def exactly_one_resample_probability(n: int) -> float:
    """(n+1) * (1/(n+1)) * (n/(n+1))^n, the chance that exactly one of n+1 labels is resampled."""
    return (n / (n + 1)) ** n


def theorem1_proof_parts(E: Predictor, B: MarkovKernel, resample_cap: int = 2 ** 13, trials: int = 20_000,
                         seed: int = 0, cap: Optional[int] = None) -> ProofParts:
    """G1 resamples one uniformly chosen label, G2 resamples each label independently
    with probability 1/(n+1), and G3 = (integral of E^i over the test label) / G1.

    G2 is exact while |Y|^(n+1) <= resample_cap and a seeded Monte Carlo estimate otherwise.
    """
    _require(E, "e")
    Ei = avg_all(E, cap=cap).predictor
    space, n = E.space, E.n
    k = space.num_labels
    exact = k ** (n + 1) <= resample_cap
    if not exact:
        logger.warning(f"G2 for {E.name}: {k}^{n + 1} assignments exceed {resample_cap}; using {trials} Monte Carlo trials")

    def relabel(seq: DataSequence, i: int, y: int) -> DataSequence:
        return seq[:i] + (Example(seq[i].object, y),) + seq[i + 1:]

    def g1(seq: DataSequence) -> float:
        acc = [B.row(z)[y] * Ei(relabel(seq, i, y)) for i, z in enumerate(seq) for y in range(k) if B.row(z)[y] > 0]
        return math.fsum(acc) / (n + 1)

    def resample_rows(seq: DataSequence) -> np.ndarray:
        stay = np.zeros((n + 1, k))
        stay[np.arange(n + 1), [z.label for z in seq]] = 1.0
        return (n / (n + 1)) * stay + (1 / (n + 1)) * np.array([B.row(z) for z in seq])

    def g2(seq: DataSequence) -> float:
        rows = resample_rows(seq)
        objects = [z.object for z in seq]
        if exact:
            support = [[y for y in range(k) if rows[i, y] > 0] for i in range(n + 1)]
            acc = []
            for labels in itertools.product(*support):
                weight = math.prod(rows[i, y] for i, y in enumerate(labels))
                acc.append(weight * Ei(tuple(Example(x, y) for x, y in zip(objects, labels))))
            return math.fsum(acc)
        rng = np.random.default_rng([seed] + [space.index(z) for z in seq])
        cum = rows.cumsum(axis=1)
        draws = (rng.random((trials, n + 1, 1)) > cum[None, :, :]).sum(axis=2)
        draws = np.minimum(draws, k - 1)
        return float(np.mean([Ei(tuple(Example(x, int(y)) for x, y in zip(objects, row))) for row in draws]))

    def g3(seq: DataSequence) -> float:
        x = seq[-1].object
        row = B.row(seq[-1])
        num = math.fsum(row[y] * Ei(seq[:-1] + (Example(x, y),)) for y in range(k) if row[y] > 0)
        return ratio0(num, G1(seq))

    G1 = Predictor(space=space, n=n, flavor="e", fn=g1, name=f"G1({E.name})")
    G2 = Predictor(space=space, n=n, flavor="e", fn=g2, name=f"G2({E.name})")
    G3 = Predictor(space=space, n=n, flavor="e", fn=g3, name=f"G3({E.name})")
    return ProofParts(G1, G2, G3, exact)


class Theorem2Report(BaseModel):
    n: int
    c: float
    value_at_zero: float
    closed_form: float
    ratio_on_single_one: float
    certificate: Certificate


def theorem2_counterexample(n: int, c: float, search: Optional[SearchConfig] = None) -> Theorem2Report:
    """Flip-kernel G with constant c for the single-one predictor, evaluated at the all-zero sequence."""
    if n < 1 or c <= 0:
        raise DomainViolation(f"Need n >= 1 and c > 0, got n={n}, c={c}.")
    space = ExampleSpace.binary()
    E = single_one_predictor(n, space)
    Ex = relative_deviation(E).predictor
    G = theorem1_G(E, flip_kernel(space), constant=c)
    zeros = space.label_sequence([0] * (n + 1))
    one = space.label_sequence([0] * n + [1])
    cert = certify_randomness_e(G, search)
    return Theorem2Report(n=n, c=c, value_at_zero=G(zeros), closed_form=c * (1 + 1 / n) ** n,
                          ratio_on_single_one=ratio0(E(one), Ex(one)), certificate=cert)


# ------------------ Corollary 1 ------------------

def corollary1_G(P: Predictor, B: MarkovKernel, delta: float) -> tuple[Predictor, Predictor]:
    """(P', G) with P' = min(1/E^x, 1) for E = delta * P^(delta-1)."""
    _require(P, "p")
    E = calibrate_predictor(Calibrator.power(delta), P)
    Ex = relative_deviation(E).predictor
    P_prime = calibrate_predictor(Calibrator.e_to_p(), Ex).derive(name=f"cor1P({P.name})")

    def term(s: DataSequence) -> float:
        return ratio0(P_prime(s), P(s) ** (1 - delta))

    term_counts = None
    if P.count_fn is not None:
        def term_counts(train_counts, y):
            return ratio0(P_prime.at_counts(train_counts, y), P.at_counts(train_counts, y) ** (1 - delta))

    G = kernel_integral(B, P.n, term, delta / math.e, name=f"cor1G({P.name})", train_invariant=P.train_invariant,
                        label_only=P.label_only, term_counts=term_counts)
    return P_prime, G


class RewriteCheck(NamedTuple):
    g_value: float
    condition: bool
    mass: float
    required: float
    holds: bool


def rewrite_guarantee(P: Predictor, P_prime: Predictor, G: Predictor, B: MarkovKernel, seq: DataSequence,
                      delta: float, eps1: float, eps2: float, sqrt_form: bool = False) -> RewriteCheck:
    """When G(seq) < 1/eps1, the labels y with P' < factor * P^(1-delta) carry B-mass >= 1 - eps2.

    factor is e/(delta eps1 eps2), or e/(delta eps1^2 eps2^2) for the square-root G.
    """
    g = G(seq)
    factor = math.e / (delta * eps1 * eps2) if not sqrt_form else math.e / (delta * (eps1 * eps2) ** 2)
    train, x = seq[:-1], seq[-1].object
    row = B.row(seq[-1])
    mass = 0.0
    for y in range(B.space.num_labels):
        s = train + (Example(x, y),)
        if row[y] > 0 and P_prime(s) < factor * P(s) ** (1 - delta):
            mass += row[y]
    condition = g < 1 / eps1
    return RewriteCheck(g, condition, mass, 1 - eps2, (not condition) or mass >= 1 - eps2 - 1e-12)


# ------------------ Multi-class forms ------------------

MulticlassVariant = Literal["exclude_true", "crude", "uniform_all"]


def multiclass_G(E: Predictor, variant: MulticlassVariant, train_invariant: bool = True,
                 cap: Optional[int] = None) -> Predictor:
    """Multi-class e-variables built from E.

    With train_invariant=True the terms are e^-1 E/E^x; with False they are the
    square-root terms e^-1/2 sqrt(E/E^tx), valid for any E.
    """
    _require(E, "e")
    space = E.space
    k = space.num_labels
    if train_invariant:
        base = relative_deviation(E, cap=cap).predictor
        const = E_INV

        def term(s: DataSequence) -> float:
            return ratio0(E(s), base(s))
    else:
        base = conformalize(E, cap=cap).predictor
        const = E_INV_SQRT

        def term(s: DataSequence) -> float:
            return math.sqrt(ratio0(E(s), base(s)))

    name = f"multiclass[{variant}]({E.name})"
    structured = E.train_invariant
    if variant == "exclude_true":
        return kernel_integral(uniform_other_kernel(space), E.n, term, const, name=name,
                               train_invariant=structured, label_only=E.label_only)
    if variant == "uniform_all":
        return kernel_integral(uniform_all_kernel(space), E.n, term, const, name=name,
                               train_invariant=structured, label_only=E.label_only)
    if variant != "crude":
        raise ValueError(f"Unknown multiclass variant '{variant}'.")

    def crude(seq: DataSequence) -> float:
        train, z = seq[:-1], seq[-1]
        worst = max(term(train + (Example(z.object, y),)) for y in range(k) if y != z.label)
        return const * worst / (k - 1)

    return Predictor(space=space, n=E.n, flavor="e", fn=crude, train_invariant=structured,
                     label_only=E.label_only, name=name)


# ------------------ Theorem 3 encoder ------------------

def theorem3_space(k: int) -> ExampleSpace:
    """Labels 0', 1' followed by -k..k."""
    return ExampleSpace.with_labels(("0'", "1'") + tuple(str(y) for y in range(-k, k + 1)))


def theorem3_value(n: int, a: float) -> float:
    return a * math.e * math.sqrt(math.pi / 2) * n ** 1.5


def _check_theorem3(n: int, k: int, a: float) -> None:
    if k < 2 or n % 2 or n < 16 * k * k:
        raise DomainViolation(f"Theorem 3 encoder needs k >= 2 and even n >= 16k^2, got n={n}, k={k}.")
    if not 0 < a < 1:
        raise DomainViolation(f"Theorem 3 encoder needs a in (0, 1), got {a}.")


def theorem3_E(n: int, k: int = 2, a: float = 0.99) -> Predictor:
    """Large value exactly when the training labels are all primed and the test label
    equals (number of 1' labels) - n/2."""
    _check_theorem3(n, k, a)
    space = theorem3_space(k)
    value = theorem3_value(n, a)
    half = n // 2

    def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
        if test_label < 2 or any(train_counts[2:]):
            return 0.0
        return value if train_counts[1] - half == test_label - 2 - k else 0.0

    def profile():
        for y in range(-k, k + 1):
            counts = [half - y, half + y] + [0] * (2 * k + 1)
            counts[2 + k + y] = 1
            yield tuple(counts), math.comb(n, half + y) * value

    return count_predictor(space, n, "e", count_fn, name="thm3E", profile=profile,
                           params={"shape": "primed_sum", "n": n, "k": k, "a": a})


class Theorem3WorstCase(NamedTuple):
    value: float
    label: int
    theta: float
    s: float


def theorem3_worst_case(n: int, k: int = 2, a: float = 0.99, tol: float = 1e-10) -> Theorem3WorstCase:
    """Exact worst-case expectation of theorem3_E.

    Mass s on the primed labels with 1' share theta and 1 - s on one test label y
    gives V * C(n, n/2+y) theta^(n/2+y) (1-theta)^(n/2-y) * s^n (1-s); the s-factor
    peaks at s = n/(n+1), theta is found by golden section for each y.
    """
    _check_theorem3(n, k, a)
    half = n // 2
    s = n / (n + 1)
    s_factor = s ** n * (1 - s)
    best = Theorem3WorstCase(-math.inf, 0, 0.0, s)
    for y in range(-k, k + 1):
        theta, value, _ = golden_section_max(lambda t: float(binom.pmf(half + y, n, t)), 0.0, 1.0, tol)
        total = theorem3_value(n, a) * value * s_factor
        if total > best.value:
            best = Theorem3WorstCase(total, y, theta, s)
    return best


class Theorem3Inequality(BaseModel):
    n: int
    k: int
    a: float
    b: float
    c: float
    num_labels: int
    g_ratio_bound: float = Field(..., description="Upper bound on G / E^i over the conditioning event")
    target: float = Field(..., description="c / (e |Y|)")
    holds: bool
    condition_probability: float = Field(..., description="Exact max over theta of P(|sum - n/2| <= k)")
    local_limit_approx: float
    g_bound: float = Field(..., description="b sqrt(pi n) / (2 sqrt(2) k)")
    g_bound_covers: bool = Field(..., description="g_bound >= 1 / condition_probability")
    exact_ratio_bound: float = Field(..., description="Ratio bound with 1 / condition_probability in place of g_bound")


def theorem3_inequality(n: int, k: int = 2, a: float = 0.99, b: float = 1.01, c: float = 2.0) -> Theorem3Inequality:
    _check_theorem3(n, k, a)
    num_labels = 2 * k + 3
    g_bound = b * math.sqrt(math.pi * n) / (2 * math.sqrt(2) * k)
    ratio = g_bound * (n + 1) / theorem3_value(n, a)
    target = c / (math.e * num_labels)

    def window(theta: float) -> float:
        return float(binom.cdf(n // 2 + k, n, theta) - binom.cdf(n // 2 - k - 1, n, theta))

    _, prob, _ = golden_section_max(window, 0.0, 1.0)
    return Theorem3Inequality(
        n=n, k=k, a=a, b=b, c=c, num_labels=num_labels, g_ratio_bound=ratio, target=target, holds=ratio < target,
        condition_probability=prob, local_limit_approx=(2 * k + 1) / math.sqrt(2 * math.pi * n / 4),
        g_bound=g_bound, g_bound_covers=g_bound * prob >= 1.0,
        exact_ratio_bound=(n + 1) / (prob * theorem3_value(n, a)))


# ------------------ Theorem 4 modular-sum predictor ------------------

def theorem4_space(m: int) -> ExampleSpace:
    return ExampleSpace.with_labels(tuple(str(y) for y in range(m)))


def modular_accept(totals, n: int, m: int) -> bool:
    s = sum(y * c for y, c in enumerate(totals))
    return s % m == 0 and all(10 * abs(c * m - n) <= n for c in totals)


def theorem4_E(n: int, m: int = 5, c: float = 0.9) -> Predictor:
    """c*m when the label sum is 0 mod m and every label count is within 10% of n/m."""
    if m < 2 or not 0 < c < 1:
        raise DomainViolation(f"Need m >= 2 and c in (0, 1), got m={m}, c={c}.")
    space = theorem4_space(m)

    def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
        totals = list(train_counts)
        totals[test_label] += 1
        return c * m if modular_accept(totals, n, m) else 0.0

    return count_predictor(space, n, "e", count_fn, fully_invariant=True, name="thm4E",
                           params={"shape": "modular_sum", "n": n, "m": m, "c": c})


class Theorem4Events(BaseModel):
    n: int
    m: int
    c: float
    trials: int
    seed: int
    freq_sum_zero: float
    freq_accept: float
    se_accept: float
    accept_target: float = 0.999
    accept_threshold: float = 0.99
    freq_g_small: float
    se_g_small: float
    g_bound: float = 0.5
    freq_e_prime_small: float
    se_e_prime_small: float
    e_prime_bound: float = 1 - 1 / 2.01

    @property
    def accept_ok(self) -> bool:
        return self.freq_accept >= self.accept_threshold

    @property
    def g_ok(self) -> bool:
        return self.freq_g_small >= self.g_bound - 3 * self.se_g_small

    @property
    def e_prime_ok(self) -> bool:
        return self.freq_e_prime_small >= self.e_prime_bound - 3 * self.se_e_prime_small


def _binomial_se(freq: float, trials: int) -> float:
    return math.sqrt(max(freq * (1 - freq), 0.0) / trials)


def theorem4_events(n: int, m: int = 5, c: float = 0.9, trials: int = 10_000, seed: int = 0,
                    G: Optional[Predictor] = None, E_prime: Optional[Predictor] = None,
                    accept_threshold: float = 0.99) -> Theorem4Events:
    """Sample Y_1..Y_{n+1} uniformly, set Y = -(Y_1 + ... + Y_n) mod m and count the events
    E(Y_1..Y_n, Y) >= c m, G(Y_1..Y_{n+1}) <= 2 and E'(Y_1..Y_n, Y) <= 2.01."""

    if trials < 1:
        raise DomainViolation("trials must be positive.")
    space = theorem4_space(m)
    E = theorem4_E(n, m, c)
    G = G or count_predictor(space, n, "e", lambda counts, y: 1.0, fully_invariant=True, name="one")
    E_prime = E_prime or relative_deviation(rarity_predictor(space, n)).predictor
    for pred in (G, E_prime):
        if pred.count_fn is None:
            raise DomainViolation(f"{pred.name} needs a count function for large-n sampling.")

    sums = accepts = g_small = e_small = 0
    done = 0
    block = 0
    while done < trials:
        size = min(BLOCK_SIZE, trials - done)
        labels = block_rng(seed, block).integers(0, m, size=(BLOCK_SIZE, n + 1), dtype=np.int16)[:size]
        derived = (-labels[:, :n].sum(axis=1, dtype=np.int64)) % m
        train = np.stack([(labels[:, :n] == y).sum(axis=1) for y in range(m)], axis=1)
        for counts, actual, y in zip(train.tolist(), labels[:, n].tolist(), derived.tolist()):
            totals = list(counts)
            totals[y] += 1
            sums += sum(j * t for j, t in enumerate(totals)) % m == 0
            accepts += E.at_counts(counts, y) >= c * m
            g_small += G.at_counts(counts, actual) <= 2
            e_small += E_prime.at_counts(counts, y) <= 2.01
        done += size
        block += 1

    freq = {name: v / trials for name, v in
            (("sum", sums), ("accept", accepts), ("g", g_small), ("e", e_small))}
    logger.info(f"Theorem 4 events at n={n}, m={m}: accept={freq['accept']:.4f} G<=2 {freq['g']:.4f} E'<=2.01 {freq['e']:.4f}")
    return Theorem4Events(
        n=n, m=m, c=c, trials=trials, seed=seed, freq_sum_zero=freq["sum"],
        freq_accept=freq["accept"], se_accept=_binomial_se(freq["accept"], trials), accept_threshold=accept_threshold,
        freq_g_small=freq["g"], se_g_small=_binomial_se(freq["g"], trials),
        freq_e_prime_small=freq["e"], se_e_prime_small=_binomial_se(freq["e"], trials))


# ------------------ Test-conditional forms ------------------

def theorem5_G(E: Predictor, B: MarkovKernel, cap: Optional[int] = None) -> Predictor:
    _require(E, "e")
    Et = avg_train(E, cap).predictor
    return kernel_integral(B, E.n, lambda s: ratio0(E(s), Et(s)), name=f"thm5G({E.name})",
                           label_only=E.label_only)


def corollary2_G(E: Predictor, B: MarkovKernel, cap: Optional[int] = None) -> Predictor:
    _require(E, "e")
    Etx = conformalize(E, cap).predictor
    return kernel_integral(B, E.n, lambda s: math.sqrt(ratio0(E(s), Etx(s))), E_INV_SQRT,
                           name=f"cor2G({E.name})", train_invariant=E.train_invariant, label_only=E.label_only)


class Corollary2Parts(NamedTuple):
    G1: Predictor
    G2: Predictor
    G3: Predictor


def corollary2_bound_parts(E: Predictor, B: MarkovKernel, cap: Optional[int] = None) -> Corollary2Parts:
    """G1 = theorem1_G(E), G2 = theorem5_G(E^x), G3 = (G1 + G2)/2; corollary2_G <= sqrt(G1 G2) <= G3."""
    G1 = theorem1_G(E, B, cap=cap)
    G2 = theorem5_G(relative_deviation(E, cap=cap).predictor, B, cap)
    G3 = Predictor(space=E.space, n=E.n, flavor="e", fn=lambda s: (G1(s) + G2(s)) / 2, name=f"cor2G3({E.name})")
    return Corollary2Parts(G1, G2, G3)


def corollary3_G(P: Predictor, B: MarkovKernel, delta: float, cap: Optional[int] = None) -> tuple[Predictor, Predictor]:
    """(P', G) with P' = min(1/E^tx, 1) for E = delta * P^(delta-1); P' is conformal."""
    _require(P, "p")
    E = calibrate_predictor(Calibrator.power(delta), P)
    Etx = conformalize(E, cap).predictor
    P_prime = calibrate_predictor(Calibrator.e_to_p(), Etx).derive(name=f"cor3P({P.name})")
    G = kernel_integral(B, P.n, lambda s: math.sqrt(ratio0(P_prime(s), P(s) ** (1 - delta))),
                        math.sqrt(delta / math.e), name=f"cor3G({P.name})", train_invariant=P.train_invariant,
                        label_only=P.label_only)
    return P_prime, G


# ------------------ Conformal p-values ------------------

def conformal_p_from_scores(space: ExampleSpace, n: int, scorer: Scorer, name: str = "conformal") -> Predictor:
    """P = #{i : A(bag, z_i) >= A(bag, z_{n+1})} / (n+1)."""
    cache: dict = {}

    def score(bag: Bag, z: Example) -> float:
        key = (bag, z)
        if key not in cache:
            cache[key] = float(scorer(bag, z))
        return cache[key]

    def fn(seq: DataSequence) -> float:
        bag = Bag.of(seq)
        test = score(bag, seq[-1])
        return sum(score(bag, z) >= test for z in seq) / (n + 1)

    return Predictor(space=space, n=n, flavor="p", fn=fn, train_invariant=True, name=name)


def remark1_scorer(P0: Predictor) -> Scorer:
    """A(bag, z) = 1 / P0(bag minus z in canonical order, then z)."""
    _require(P0, "p")

    def scorer(bag: Bag, z: Example) -> float:
        return ratio0(1.0, P0(bag.without(z).elements() + (z,)))

    return scorer
