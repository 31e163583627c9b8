"""Built-in experiment scenarios.

Each scenario is a function of (config, report) registered with @scenario; it
adds one check row per claim and embeds every certificate it produces.
Scenarios flagged stochastic draw from cfg.rng() / derived_seed(cfg.seed, ...)
only, so a report is a pure function of the config.
"""
import math
import logging
import itertools
from typing import Optional

import numpy as np

from .calibration import Calibrator, calibrate_predictor, calibrate_value, calibrator_integral
from .constructions import (E_INV, E_INV_SQRT, conformal_p_from_scores, corollary1_G, corollary2_G,
                            corollary2_bound_parts, corollary3_G, exactly_one_resample_probability, laplace_predictor,
                            multiclass_G, remark1_scorer, rewrite_guarantee, single_one_predictor, theorem1_G,
                            theorem1_proof_parts, theorem2_counterexample, theorem3_E, theorem3_inequality,
                            theorem3_worst_case, theorem4_E, theorem4_events, theorem5_G)
from .core import (Bag, Example, ExampleSpace, Predictor, ProductModel, constant_predictor, count_predictor,
                   derived_seed, flip_kernel, table_predictor)
from .harness import ExperimentConfig, Report, scenario
from .operators import avg_all, avg_train, conformalize, relative_deviation
from .search import SearchConfig, compositions, worst_case_expectation
from .verification import (certify_exchangeability_p, certify_randomness_e, certify_randomness_e_modular,
                           certify_test_conditional, markov_guarantee, mc_expectation, sample_values,
                           worst_label_guarantee)

logger = logging.getLogger(__name__)

EXACT = 1e-12
THETAS = tuple(round(0.1 * i, 1) for i in range(1, 10))


# ------------------ Random predictors ------------------

def random_count_predictor(space: ExampleSpace, n: int, rng: np.random.Generator, zero_fraction: float = 0.3,
                           name: str = "random counts") -> Predictor:
    """Train-invariant label-only e-predictor with an independent random value per
    (training counts, test label); a zero_fraction share of the values is 0."""
    k = space.num_labels
    table = {}
    for train in compositions(n, k):
        for y in range(k):
            table[train, y] = 0.0 if rng.random() < zero_fraction else float(rng.exponential())
    return count_predictor(space, n, "e", lambda counts, y: table[tuple(counts), y], name=name)


def random_table_predictor(space: ExampleSpace, n: int, rng: np.random.Generator, zero_fraction: float = 0.2,
                           name: str = "random table") -> Predictor:
    """Label-only e-predictor with no symmetry: one random value per label sequence."""
    table = {}
    for labels in itertools.product(range(space.num_labels), repeat=n + 1):
        table[labels] = 0.0 if rng.random() < zero_fraction else float(rng.exponential())
    return table_predictor(space, n, "e", table, name=name, label_only=True)


def scaled(E: Predictor, factor: float, name: Optional[str] = None) -> Predictor:
    count_fn = None
    if E.count_fn is not None:
        def count_fn(counts, y):
            return factor * E.at_counts(counts, y)
    return E.derive(fn=lambda seq: factor * E(seq), count_fn=count_fn, profile=None, name=name or E.name)


def normalized(E: Predictor, search: SearchConfig) -> Predictor:
    """E divided by its worst-case expectation over product models."""
    worst = worst_case_expectation(E, search).value
    return scaled(E, 1.0 / worst, f"{E.name}/{worst:.6g}") if worst > 0 else E


def random_scorer(space: ExampleSpace, rng: np.random.Generator):
    """A(bag, z) = w_y + v_y * (multiplicity of z in the bag)."""
    w = rng.normal(size=space.num_labels)
    v = rng.normal(size=space.num_labels)

    def scorer(bag: Bag, z: Example) -> float:
        return float(w[z.label] + v[z.label] * bag.multiplicity(z))

    return scorer


def random_valid_p(space: ExampleSpace, n: int, rng: np.random.Generator, name: str = "random p") -> Predictor:
    """min(1, u * conformal p) with u in [1, 2] random per (training counts, test label).

    Inflating a conformal p-value keeps it valid under exchangeability, and the
    result stays train-invariant and label-only.
    """
    conformal = conformal_p_from_scores(space, n, random_scorer(space, rng))
    k = space.num_labels
    inflate = {(train, y): 1.0 + float(rng.random()) for train in compositions(n, k) for y in range(k)}

    def count_fn(counts, y):
        counts = tuple(counts)
        return min(1.0, inflate[counts, y] * conformal.at_counts(counts, y))

    return count_predictor(space, n, "p", count_fn, name=name)


def prefix_rank_p(space: ExampleSpace, n: int, h: int, rng: np.random.Generator) -> Predictor:
    """Rank of the test label's score among the first h training labels and itself.

    Valid under exchangeability but not train-invariant when h < n.
    """
    scores = rng.random(space.num_labels)

    def fn(seq):
        test = scores[seq[-1].label]
        return sum(scores[z.label] >= test for z in seq[:h] + seq[-1:]) / (h + 1)

    return Predictor(space=space, n=n, flavor="p", fn=fn, label_only=True, name=f"prefix_rank[{h}]")


def _label_sequences(space: ExampleSpace, n: int):
    return space.all_sequences(n + 1, label_only=True)


def _all_close(f, g, space: ExampleSpace, n: int, tol: float = EXACT) -> bool:
    return all(math.isclose(f(s), g(s), rel_tol=tol, abs_tol=tol) for s in _label_sequences(space, n))


# ------------------ Scenarios ------------------

@scenario("eq13-certify")
def eq13_certify(cfg: ExperimentConfig, report: Report) -> None:
    """Single-one predictor: worst case 1 at theta = 1/(n+1), and its E^x on the support."""
    space = ExampleSpace.binary()
    top = cfg.n or 20
    for n in range(2, top + 1):
        E = single_one_predictor(n, space)
        cert = certify_randomness_e(E, cfg.search)
        report.certificate(f"n={n}: rand-e", cert)
        report.close(f"n={n}: worst-case expectation", cert.worst_value, 1.0, 1e-9)
        theta = cert.detail.get("maximizer", [1.0, 0.0])[1]
        report.close(f"n={n}: maximizer theta", theta, 1 / (n + 1), 1e-6)
        if n <= 8:
            Ex = relative_deviation(E, method="exact_enumeration").predictor
            support, unit = True, True
            for seq in _label_sequences(space, n):
                support &= (E(seq) > 0) == (sum(z.label for z in seq) == 1)
                # E is fully invariant: E^x is 1 on the support and 0/0 := 1 off it,
                # so E^x is identically 1 rather than the k=1 indicator
                unit &= math.isclose(Ex(seq), 1.0, abs_tol=EXACT)
            report.check(f"n={n}: support is exactly k=1", support)
            report.check(f"n={n}: E^x = 1 by orbit enumeration (0/0 := 1 off the k=1 support, not its indicator)",
                         unit)


@scenario("thm2-refute")
def thm2_refute(cfg: ExperimentConfig, report: Report) -> None:
    """A constant above 1/e in the flip-kernel G breaks randomness validity."""
    n = cfg.n or 9
    c = cfg.constants.c_refute
    result = theorem2_counterexample(n, c, cfg.search)
    report.close("G at the all-zero sequence", result.value_at_zero, result.closed_form, EXACT)
    report.close("closed form c (1 + 1/n)^n", result.closed_form, c * (1 + 1 / n) ** n, EXACT)
    report.close("E/E^x on a single one", result.ratio_on_single_one, (1 + 1 / n) ** n, 1e-9)
    cert = result.certificate
    report.certificate(f"c={c:g}: rand-e", cert, expect_pass=c * (1 + 1 / n) ** n <= 1)
    if cert.witness is not None and cert.witness.q is not None:
        report.at_least("witness is the point mass on label 0", cert.witness.q[0], 1.0, 1e-6)
    for m in (2, 5, 9, 20):
        result = theorem2_counterexample(m, E_INV, cfg.search)
        report.certificate(f"c=1/e, n={m}: rand-e", result.certificate)


@scenario("laplace-gap")
def laplace_gap(cfg: ExperimentConfig, report: Report) -> None:
    """E/E^x of the Laplace predictor at (0,...,0,1) approaches e from below."""
    space = ExampleSpace.binary()
    ns = sorted({10, 100, 1000} | ({cfg.n} if cfg.n else set()))
    ratios = []
    for n in ns:
        E = laplace_predictor(n, space)
        Ex = relative_deviation(E).predictor
        seq = space.label_sequence([0] * n + [1])
        ratio = E(seq) / Ex(seq)
        ratios.append(ratio)
        report.close(f"n={n}: E/E^x", ratio, (1 + 1 / n) ** n, 1e-9)
        report.check(f"n={n}: below e", ratio < math.e, ratio, f"< {math.e:.12g}")
        G = theorem1_G(E, flip_kernel(space))
        report.close(f"n={n}: G at all zeros", G(space.label_sequence([0] * (n + 1))), E_INV * (1 + 1 / n) ** n, 1e-9)
    report.check("increasing in n", all(a < b for a, b in zip(ratios, ratios[1:])), ratios[-1], "increasing")


@scenario("thm1-monte-carlo", stochastic=True)
def thm1_monte_carlo(cfg: ExperimentConfig, report: Report) -> None:
    """Flip-kernel G of normalised random predictors under Bernoulli models, plus the proof bound."""
    space = ExampleSpace.binary()
    n = cfg.n or 6
    trials = cfg.trials or 100_000
    B = flip_kernel(space)
    rng = cfg.rng(0)
    for i in range(20):
        E = normalized(random_count_predictor(space, n, rng, name=f"E{i}"), cfg.search)
        G = theorem1_G(E, B)
        worst = -math.inf
        for j, theta in enumerate(THETAS):
            model = ProductModel.bernoulli(space, theta, n + 1)
            est = mc_expectation(G, model, trials, derived_seed(cfg.seed, i, j))
            worst = max(worst, est.mean - 3 * est.se)
        report.at_most(f"E{i}: mean of G - 3 SE over theta", worst, 1.0)

        if i < 3:
            parts = theorem1_proof_parts(E, B, seed=derived_seed(cfg.seed, i, len(THETAS)))
            Ei = avg_all(E).predictor
            low, chain = math.inf, True
            for seq in _label_sequences(space, n):
                g1, g2 = parts.G1(seq), parts.G2(seq)
                if g1 > 0:
                    low = min(low, g2 / g1)
                integral = math.fsum(B.row(seq[-1])[y] * Ei(seq[:-1] + (Example(0, y),)) for y in range(2))
                chain &= g2 * parts.G3(seq) >= E_INV * integral * (1 - EXACT)
            report.check(f"E{i}: proof parts exact", parts.exact)
            report.at_least(f"E{i}: min G2/G1", low, E_INV, EXACT)
            report.check(f"E{i}: G2 G3 >= e^-1 integral of E^i", chain)

    probs = [exactly_one_resample_probability(m) for m in range(1, 51)]
    report.at_least("min over n <= 50 of (n/(n+1))^n", min(probs), E_INV)
    report.close("n=1 resample probability", probs[0], 0.5, EXACT)


@scenario("operators-laws", stochastic=True)
def operators_laws(cfg: ExperimentConfig, report: Report) -> None:
    """Commutation, idempotence and annihilation of the operators on random tables."""
    space = ExampleSpace.with_labels(("0", "1", "2"))
    n = cfg.n or 4
    rng = cfg.rng(0)
    counts = dict.fromkeys(("commute", "idem_i", "idem_x", "idem_t", "idem_tx", "annihilate", "annihilate_i",
                            "i_then_t", "t_then_i", "cyclic_i", "cyclic_x"), 0)
    tables = 100
    for i in range(tables):
        E = random_table_predictor(space, n, rng, name=f"T{i}")
        Ei = avg_all(E).predictor
        Ex = relative_deviation(E).predictor
        Et = avg_train(E).predictor
        Etx = conformalize(E).predictor

        def same(f, g):
            return _all_close(f, g, space, n)

        counts["commute"] += same(relative_deviation(Et).predictor, avg_train(Ex).predictor)
        counts["idem_i"] += same(avg_all(Ei).predictor, Ei)
        counts["idem_x"] += same(relative_deviation(Ex).predictor, Ex)
        counts["idem_t"] += same(avg_train(Et).predictor, Et)
        counts["idem_tx"] += same(conformalize(Etx).predictor, Etx)
        counts["annihilate"] += same(avg_all(Ex).predictor, lambda s: 1.0)
        counts["annihilate_i"] += same(relative_deviation(Ei).predictor, lambda s: 1.0)
        counts["t_then_i"] += same(avg_all(Et).predictor, Ei)
        plain = Ei.derive(fully_invariant=False, train_invariant=False, count_fn=None)
        counts["i_then_t"] += same(avg_train(plain).predictor, Ei)
        counts["cyclic_i"] += same(avg_all(Et, "cyclic_fast_path").predictor,
                                   avg_all(Et, "exact_enumeration").predictor)
        counts["cyclic_x"] += same(relative_deviation(Et, "cyclic_fast_path").predictor,
                                   relative_deviation(Et, "exact_enumeration").predictor)
    laws = {
        "commute": "(E^t)^x = (E^x)^t",
        "idem_i": "(E^i)^i = E^i",
        "idem_x": "(E^x)^x = E^x",
        "idem_t": "(E^t)^t = E^t",
        "idem_tx": "(E^tx)^tx = E^tx",
        "annihilate": "(E^x)^i = 1",
        "annihilate_i": "(E^i)^x = 1",
        "i_then_t": "(E^i)^t = E^i",
        "t_then_i": "(E^t)^i = E^i",
        "cyclic_i": "cyclic = exact for ^i",
        "cyclic_x": "cyclic = exact for ^x",
    }
    for key, label in laws.items():
        report.check(f"{label} (tables passing)", counts[key] == tables, counts[key], tables, EXACT)

    # Rotation denominators against full orbit enumeration, on train-invariant tables without a count_fn.
    for m in range(1, 8):
        E = random_count_predictor(space, m, cfg.rng(m), name=f"S{m}").derive(count_fn=None)
        cyclic = relative_deviation(E, "cyclic_fast_path").predictor
        exact = relative_deviation(E, "exact_enumeration").predictor
        report.check(f"n={m}: cyclic = exact for ^x", _all_close(cyclic, exact, space, m))


@scenario("calibration-transport", stochastic=True)
def calibration_transport(cfg: ExperimentConfig, report: Report) -> None:
    """Calibrator integrals, and Corollary 1 on random conformal p-predictors."""
    for delta in (0.25, 0.5, 0.75):
        report.close(f"delta={delta}: integral of power calibrator", calibrator_integral(Calibrator.power(delta)),
                     1.0, 1e-6)
    density = Calibrator.from_density([1.5, 0.5])
    report.close("density [1.5, 0.5]: integral", calibrator_integral(density), 1.0, 1e-6)
    report.close("density [1.5, 0.5] at p=0.2", calibrate_value(density, 0.2), 1.5, EXACT)
    report.close("e_to_p at 4", calibrate_value(Calibrator.e_to_p(), 4.0), 0.25, EXACT)

    space = ExampleSpace.binary()
    n = cfg.n or 5
    delta = cfg.constants.delta
    eps1, eps2 = cfg.constants.epsilon1, cfg.constants.epsilon2
    B = flip_kernel(space)
    rng = cfg.rng(0)
    for i in range(10):
        P = random_valid_p(space, n, rng, name=f"P{i}")
        P_prime, G = corollary1_G(P, B, delta)
        report.certificate(f"P{i}: cor1 G rand-e", certify_randomness_e(G, cfg.search))
        report.certificate(f"P{i}: P' exch-p", certify_exchangeability_p(P_prime))
        report.check(f"P{i}: P' train-invariant", P_prime.train_invariant)
        report.check(f"P{i}: rewrite guarantee", all(
            rewrite_guarantee(P, P_prime, G, B, seq, delta, eps1, eps2).holds for seq in _label_sequences(space, n)))
        if i < 3:
            report.certificate(f"P{i}: density-calibrated rand-e",
                               certify_randomness_e(calibrate_predictor(density, P), cfg.search))

    P_prime, G = corollary1_G(constant_predictor(space, n, "p", 1.0), B, delta)
    zeros = space.label_sequence([0] * (n + 1))
    report.close("P = 1: P'", P_prime(zeros), 1.0, EXACT)
    report.close("P = 1: G = delta/e", G(zeros), delta / math.e, EXACT)


@scenario("thm4-desk", stochastic=True)
def thm4_desk(cfg: ExperimentConfig, report: Report) -> None:
    """Modular-sum predictor: certified validity and the three sampled events."""
    n = cfg.n or 6000
    m = 5
    c = cfg.constants.c
    E = theorem4_E(n, m, c)
    report.certificate("thm4E rand-e (roots of unity)", certify_randomness_e_modular(E, cfg.search))
    events = theorem4_events(n, m, c, trials=cfg.trials or 10_000, seed=cfg.seed)
    report.measure("events", events.model_dump())
    report.close("sum is 0 mod m on every sample", events.freq_sum_zero, 1.0, 0.0)
    report.check(f"accept frequency >= {events.accept_threshold} (large-n target {events.accept_target})",
                 events.accept_ok, events.freq_accept, f">= {events.accept_threshold}")
    report.check("G <= 2 frequency meets 0.5", events.g_ok, events.freq_g_small, f">= {events.g_bound}",
                 3 * events.se_g_small)
    report.check("E' <= 2.01 frequency meets 1 - 1/2.01", events.e_prime_ok, events.freq_e_prime_small,
                 f">= {events.e_prime_bound:.12g}", 3 * events.se_e_prime_small)


@scenario("thm3-construction")
def thm3_construction(cfg: ExperimentConfig, report: Report) -> None:
    """Theorem 3 encoder: numeric certification, exact worst case, and the efficiency inequality."""
    n = cfg.n or 64
    k, a = cfg.constants.k, cfg.constants.a
    E = theorem3_E(n, k, a)
    cert = certify_randomness_e(E, cfg.search)
    report.certificate("thm3E rand-e", cert)
    worst = theorem3_worst_case(n, k, a)
    report.at_most("exact worst-case expectation", worst.value, 1.0)
    report.check("search agrees with the exact worst case",
                 math.isclose(cert.worst_value, worst.value, rel_tol=1e-3), cert.worst_value, worst.value, 1e-3)
    report.at_most("search never exceeds the exact worst case", cert.worst_value, worst.value, 1e-9)
    report.measure("worst_case", worst._asdict())
    report.measure("inequality", theorem3_inequality(n, k, a, cfg.constants.b, cfg.constants.c_labels).model_dump())


@scenario("appendix-b", stochastic=True)
def appendix_b(cfg: ExperimentConfig, report: Report) -> None:
    """Test-conditional G, the square-root forms and the conformal p-predictor of Corollary 3."""
    space = ExampleSpace.binary()
    B = flip_kernel(space)
    rng = cfg.rng(0)
    passed = 0
    for i in range(50):
        n = 2 + i % 4
        G = theorem5_G(random_table_predictor(space, n, rng, name=f"T{i}"), B)
        cert = certify_test_conditional(G)
        passed += cert.passed
        if i < 4:
            report.certificate(f"T{i}: thm5 G test-conditional", cert)
    report.check("thm5 G test-conditional (tables passing)", passed == 50, passed, 50)

    n = cfg.n or 3
    one = constant_predictor(space, n, "e", 1.0)
    G = corollary2_G(one, B)
    report.check("E = 1: cor2 G = e^-1/2", _all_close(G, lambda s: E_INV_SQRT, space, n),
                 G(space.label_sequence([0] * (n + 1))), E_INV_SQRT, EXACT)
    for i in range(10):
        E = normalized(random_table_predictor(space, n, rng, name=f"N{i}"), cfg.search)
        parts = corollary2_bound_parts(E, B)
        G = corollary2_G(E, B)
        report.certificate(f"N{i}: cor2 G rand-e", certify_randomness_e(G, cfg.search))
        report.check(f"N{i}: G <= (G1 + G2)/2", all(G(s) <= parts.G3(s) * (1 + EXACT) + EXACT
                                                    for s in _label_sequences(space, n)))

    delta = cfg.constants.delta
    for h in (1, n - 1):
        P = prefix_rank_p(space, n, h, rng)
        P_prime, G = corollary3_G(P, B, delta)
        report.check(f"h={h}: cor3 P' train-invariant", P_prime.train_invariant)
        report.certificate(f"h={h}: cor3 P' exch-p", certify_exchangeability_p(P_prime))
        report.certificate(f"h={h}: cor3 G rand-e", certify_randomness_e(G, cfg.search))
    _, G = corollary3_G(constant_predictor(space, n, "p", 0.04), B, delta)
    report.close("P = 0.04: cor3 G", G(space.label_sequence([0] * (n + 1))),
                 math.sqrt(delta / math.e) * 0.04 ** (-(1 - delta) / 2), EXACT)


@scenario("remark1-domination", stochastic=True)
def remark1_domination(cfg: ExperimentConfig, report: Report) -> None:
    """Conformal p-values scored by 1/P0 never exceed P0."""
    space = ExampleSpace.binary()
    rng = cfg.rng(0)
    for i in range(20):
        n = 2 + i % 4
        P0 = random_valid_p(space, n, rng, name=f"P{i}")
        P = conformal_p_from_scores(space, n, remark1_scorer(P0), name=f"conf(P{i})")
        gap = max(P(s) - P0(s) for s in _label_sequences(space, n))
        report.at_most(f"P{i} (n={n}): max of P_conf - P0", gap, 0.0, EXACT)


@scenario("multiclass-guarantees", stochastic=True)
def multiclass_guarantees(cfg: ExperimentConfig, report: Report) -> None:
    """Multi-class variants certify, coincide with the flip kernel at |Y| = 2, and meet their guarantees."""
    k = cfg.num_labels or 3
    n = cfg.n or 4
    space = ExampleSpace.with_labels(tuple(str(y) for y in range(k)))
    rng = cfg.rng(0)
    E = normalized(random_count_predictor(space, n, rng, name="E"), cfg.search)
    for variant in ("exclude_true", "crude", "uniform_all"):
        report.certificate(f"{variant}: rand-e", certify_randomness_e(multiclass_G(E, variant), cfg.search))
    T = normalized(random_table_predictor(space, min(n, 3), rng, name="T"), cfg.search)
    for variant in ("exclude_true", "uniform_all"):
        report.certificate(f"{variant} (square-root form): rand-e",
                           certify_randomness_e(multiclass_G(T, variant, train_invariant=False), cfg.search))

    binary = ExampleSpace.binary()
    Eb = random_count_predictor(binary, n, rng, name="Eb")
    report.check("|Y|=2: exclude_true = flip-kernel G",
                 _all_close(multiclass_G(Eb, "exclude_true"), theorem1_G(Eb, flip_kernel(binary)), binary, n))

    epsilon = cfg.constants.epsilon
    trials = cfg.trials or 20_000
    model = ProductModel.from_labels(space, rng.dirichlet(np.ones(k)).tolist(), n + 1)
    for sqrt_form in (False, True):
        g = worst_label_guarantee(E, model, epsilon, trials, derived_seed(cfg.seed, 1, int(sqrt_form)),
                                  sqrt_form=sqrt_form)
        label = "square-root" if sqrt_form else "plain"
        report.check(f"worst-label guarantee ({label})", g.passed, g.frequency, f">= {g.bound:.12g}", 3 * g.se)
    samples = sample_values(multiclass_G(E, "exclude_true"), model, trials, derived_seed(cfg.seed, 2))
    g = markov_guarantee(samples, epsilon)
    report.check("Markov bound for exclude_true G", g.passed, g.frequency, f"<= {epsilon}", 3 * g.se)
