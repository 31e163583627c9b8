import math

import pytest

from conformal_efficiency.constructions import laplace_predictor
from conformal_efficiency.core import constant_predictor, table_predictor
from conformal_efficiency.errors import FlavorMismatch
from conformal_efficiency.operators import (apply_chain, avg_all, avg_train, conformalize, ratio0,
                                            relative_deviation)
from conformal_efficiency.scenarios import random_count_predictor, random_table_predictor


def label_sequences(space, n):
    return list(space.all_sequences(n + 1, label_only=True))


class TestAvgAll:
    def test_constant_is_fixed(self, binary):
        E = constant_predictor(binary, 3, "e", 2.0)
        Ei = avg_all(E).predictor
        assert all(Ei(s) == pytest.approx(2.0) for s in label_sequences(binary, 3))

    def test_result_is_fully_invariant(self, binary, rng):
        E = random_table_predictor(binary, 3, rng)
        Ei = avg_all(E).predictor
        assert Ei.fully_invariant
        seq = binary.label_sequence([0, 1, 1, 0])
        assert Ei(seq) == pytest.approx(Ei(binary.label_sequence([1, 1, 0, 0])), rel=1e-12)

    def test_cyclic_path_matches_enumeration(self, ternary, rng):
        E = random_count_predictor(ternary, 3, rng)
        fast = avg_all(E).predictor
        slow = avg_all(E, method="exact_enumeration").predictor
        for s in label_sequences(ternary, 3):
            assert fast(s) == pytest.approx(slow(s), rel=1e-12, abs=1e-12)

    def test_cyclic_path_needs_train_invariance(self, binary, rng):
        with pytest.raises(ValueError, match="train-invariant"):
            avg_all(random_table_predictor(binary, 2, rng), method="cyclic_fast_path")

    def test_rejects_p_predictors(self, binary):
        with pytest.raises(FlavorMismatch):
            avg_all(constant_predictor(binary, 2, "p", 0.5))

    def test_costs(self, binary, rng):
        assert avg_all(random_table_predictor(binary, 3, rng)).cost == 24
        assert avg_all(random_count_predictor(binary, 3, rng)).cost == 2


class TestRelativeDeviation:
    def test_laplace_jump(self, binary):
        n = 5
        Ex = relative_deviation(laplace_predictor(n, binary)).predictor
        assert Ex(binary.label_sequence([0] * n + [1])) == pytest.approx(n + 1)
        assert Ex.at_counts((n, 0), 1) == pytest.approx(n + 1)

    def test_laplace_jump_by_enumeration(self, binary):
        n = 4
        Ex = relative_deviation(laplace_predictor(n, binary), method="exact_enumeration").predictor
        assert Ex(binary.label_sequence([0] * n + [1])) == pytest.approx(n + 1)

    def test_orbit_means_are_one(self, binary, rng):
        E = random_table_predictor(binary, 3, rng)
        Exi = avg_all(relative_deviation(E).predictor).predictor
        assert all(Exi(s) == pytest.approx(1.0) for s in label_sequences(binary, 3))

    def test_constant_gives_one(self, ternary):
        Ex = relative_deviation(constant_predictor(ternary, 2, "e", 7.0)).predictor
        assert all(Ex(s) == 1.0 for s in label_sequences(ternary, 2))

    def test_zero_orbit_gives_one(self, binary):
        Ex = relative_deviation(table_predictor(binary, 2, "e", {}, label_only=True)).predictor
        assert Ex(binary.label_sequence([0, 1, 1])) == 1.0

    def test_infinite_orbit(self, binary):
        E = table_predictor(binary, 1, "e", {(0, 1): math.inf}, label_only=True)
        Ex = relative_deviation(E).predictor
        assert Ex(binary.label_sequence([0, 1])) == 2.0
        assert Ex(binary.label_sequence([1, 0])) == 0.0

    def test_tiny_means_divide_in_log_space(self, binary):
        E = table_predictor(binary, 1, "e", {(0, 1): 1e-310}, label_only=True)
        Ex = relative_deviation(E).predictor
        assert Ex(binary.label_sequence([0, 1])) == pytest.approx(2.0, rel=1e-6)


class TestAvgTrainAndConformalize:
    def test_train_average_is_train_invariant(self, binary, rng):
        Et = avg_train(random_table_predictor(binary, 3, rng)).predictor
        assert Et.train_invariant
        assert Et(binary.label_sequence([0, 1, 1, 0])) == pytest.approx(Et(binary.label_sequence([1, 1, 0, 0])))

    def test_train_invariant_input_is_unchanged(self, binary, rng):
        E = random_count_predictor(binary, 3, rng)
        result = avg_train(E)
        assert result.cost == 1
        assert all(result.predictor(s) == E(s) for s in label_sequences(binary, 3))

    def test_t_and_x_commute(self, binary, rng):
        E = random_table_predictor(binary, 3, rng)
        xt = avg_train(relative_deviation(E).predictor).predictor
        tx = conformalize(E).predictor
        for s in label_sequences(binary, 3):
            assert xt(s) == pytest.approx(tx(s), rel=1e-9, abs=1e-12)

    def test_chain_matches_conformalize(self, binary, rng):
        E = random_table_predictor(binary, 3, rng)
        chained = apply_chain(E, "t,x")
        direct = conformalize(E).predictor
        assert chained.cost == 24
        assert all(chained.predictor(s) == pytest.approx(direct(s)) for s in label_sequences(binary, 3))

    @pytest.mark.parametrize("chain", ["", " , ", "t,q"])
    def test_bad_chains(self, binary, chain):
        with pytest.raises(ValueError):
            apply_chain(constant_predictor(binary, 2, "e", 1.0), chain)


class TestLaws:
    @pytest.mark.parametrize("n", range(1, 8))
    def test_rotations_match_full_orbit(self, ternary, rng, n):
        E = random_count_predictor(ternary, n, rng).derive(count_fn=None)
        for op in (avg_all, relative_deviation):
            fast = op(E, method="cyclic_fast_path").predictor
            slow = op(E, method="exact_enumeration").predictor
            for s in label_sequences(ternary, n):
                assert fast(s) == pytest.approx(slow(s), rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_average_then_deviation_is_one(self, ternary, rng, n):
        Eix = relative_deviation(avg_all(random_table_predictor(ternary, n, rng)).predictor).predictor
        assert all(Eix(s) == pytest.approx(1.0, abs=1e-12) for s in label_sequences(ternary, n))

    def test_average_of_zero_is_one_after_deviation(self, binary):
        E = table_predictor(binary, 2, "e", {(0, 0, 1): 3.0}, label_only=True)
        Eix = relative_deviation(avg_all(E).predictor).predictor
        assert Eix(binary.label_sequence([1, 1, 1])) == 1.0

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_train_average_then_full_average(self, ternary, rng, n):
        E = random_table_predictor(ternary, n, rng)
        Eti = avg_all(avg_train(E).predictor).predictor
        Ei = avg_all(E).predictor
        for s in label_sequences(ternary, n):
            assert Eti(s) == pytest.approx(Ei(s), rel=1e-12, abs=1e-12)


class TestRatio0:
    @pytest.mark.parametrize("num, den, expected", [
        (0.0, 0.0, 0.0),
        (0.0, 3.0, 0.0),
        (2.0, 0.0, math.inf),
        (math.inf, math.inf, 1.0),
        (math.inf, 2.0, math.inf),
        (3.0, 1.5, 2.0),
    ])
    def test_conventions(self, num, den, expected):
        assert ratio0(num, den) == expected
