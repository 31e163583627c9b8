import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from pydantic import ValidationError

from conformal_efficiency.core import (Bag, Example, ExampleSpace, MarkovKernel, PredictionFunction, Predictor,
                                       ProductModel, constant_predictor, count_predictor, derived_seed,
                                       draw_sequences, flip_kernel, orbit, prediction_function, prediction_set,
                                       rotations, table_predictor, tabulate, uniform_other_kernel, validate_flags)
from conformal_efficiency.errors import ArityMismatch, DomainViolation, EnumerationCapExceeded


class TestExampleSpace:
    def test_rejects_single_label(self):
        with pytest.raises(ValidationError):
            ExampleSpace(labels=("only",))

    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            ExampleSpace(labels=("a", "a"))

    def test_rejects_names_with_separators(self):
        with pytest.raises(ValidationError):
            ExampleSpace(labels=("a b", "c"))

    def test_examples_are_object_major(self):
        space = ExampleSpace.binary(objects=("u", "v"))
        assert space.examples == (Example(0, 0), Example(0, 1), Example(1, 0), Example(1, 1))
        assert [space.index(z) for z in space.examples] == [0, 1, 2, 3]
        assert space.example(3) == Example(1, 1)

    def test_sequence_validation(self, binary):
        with pytest.raises(DomainViolation):
            binary.sequence([(0, 0)])
        with pytest.raises(DomainViolation):
            binary.sequence([(0, 0), (0, 2)])
        assert binary.label_sequence([0, 1]) == (Example(0, 0), Example(0, 1))

    def test_unknown_label_name(self, binary):
        with pytest.raises(DomainViolation, match="Unknown label"):
            binary.label_index("2")

    def test_all_sequences_respects_cap(self, ternary):
        assert len(list(ternary.all_sequences(3, label_only=True))) == 27
        with pytest.raises(EnumerationCapExceeded, match="at least 27"):
            ternary.all_sequences(3, cap=10)


class TestBagsAndOrbits:
    @given(st.lists(st.integers(0, 2), min_size=2, max_size=6), st.randoms())
    def test_permuted_sequences_share_a_bag(self, labels, random):
        seq = tuple(Example(0, y) for y in labels)
        shuffled = list(seq)
        random.shuffle(shuffled)
        assert Bag.of(seq) == Bag.of(shuffled)
        assert Bag.of(seq).size == len(seq)

    @given(st.lists(st.integers(0, 2), min_size=2, max_size=6))
    def test_dedup_weights_count_every_permutation(self, labels):
        seq = tuple(Example(0, y) for y in labels)
        pairs = list(orbit(seq, "all", dedup=True))
        assert sum(w for _, w in pairs) == math.factorial(len(seq))
        assert len({s for s, _ in pairs}) == len(pairs)

    @given(st.lists(st.integers(0, 2), min_size=2, max_size=6), st.sampled_from(["all", "train_only"]), st.randoms())
    def test_weighted_sums_match_naive_enumeration(self, labels, scope, random):
        seq = tuple(Example(0, y) for y in labels)
        values = {}

        def f(s):
            return values.setdefault(s, random.randint(0, 100))

        naive = sum(f(s) * w for s, w in orbit(seq, scope))
        assert sum(f(s) * w for s, w in orbit(seq, scope, dedup=True)) == naive

    def test_train_orbit_keeps_test_item(self):
        seq = (Example(0, 0), Example(0, 1), Example(0, 2))
        pairs = list(orbit(seq, "train_only"))
        assert len(pairs) == 2
        assert all(s[-1] == Example(0, 2) for s, _ in pairs)

    def test_orbit_cap(self):
        seq = tuple(Example(0, y) for y in range(5))
        with pytest.raises(EnumerationCapExceeded, match="at least 120"):
            list(orbit(seq, cap=10))

    def test_rotations(self):
        seq = (Example(0, 0), Example(0, 1), Example(0, 1))
        rots = list(rotations(seq))
        assert len(rots) == 3
        assert rots[0] == (Example(0, 1), Example(0, 1), Example(0, 0))
        assert rots[-1] == seq

    def test_bag_without(self):
        bag = Bag.of([Example(0, 1), Example(0, 1), Example(0, 0)])
        assert bag.without(Example(0, 1)).multiplicity(Example(0, 1)) == 1
        with pytest.raises(DomainViolation):
            bag.without(Example(0, 2))


class TestPredictor:
    def test_arity_checked(self, binary):
        E = constant_predictor(binary, 2, "e", 1.0)
        with pytest.raises(ArityMismatch):
            E(binary.label_sequence([0, 1]))

    def test_value_ranges(self, binary):
        negative = Predictor(space=binary, n=1, flavor="e", fn=lambda s: -1.0)
        with pytest.raises(DomainViolation):
            negative(binary.label_sequence([0, 1]))
        too_big = Predictor(space=binary, n=1, flavor="p", fn=lambda s: 1.5)
        with pytest.raises(DomainViolation):
            too_big(binary.label_sequence([0, 1]))
        rounding = Predictor(space=binary, n=1, flavor="p", fn=lambda s: 1.0 + 1e-13)
        assert rounding(binary.label_sequence([0, 1])) == 1.0
        assert Predictor(space=binary, n=1, flavor="e", fn=lambda s: math.inf)(binary.label_sequence([0, 1])) == math.inf

    def test_fully_invariant_implies_train_invariant(self, binary):
        assert Predictor(space=binary, n=1, flavor="e", fn=lambda s: 1.0, fully_invariant=True).train_invariant

    def test_count_fn_needs_structure(self, binary):
        with pytest.raises(ValidationError):
            Predictor(space=binary, n=1, flavor="e", fn=lambda s: 1.0, count_fn=lambda c, y: 1.0)

    def test_count_predictor_matches_counts(self, ternary):
        E = count_predictor(ternary, 3, "e", lambda c, y: c[0] + 10 * y)
        assert E(ternary.label_sequence([0, 0, 2, 1])) == 2 + 10
        assert E.at_counts((2, 0, 1), 1) == 12

    def test_derive_gets_a_fresh_cache(self, binary):
        E = constant_predictor(binary, 1, "e", 2.0)
        E(binary.label_sequence([0, 0]))
        copy = E.derive(name="copy")
        assert copy.name == "copy" and copy.count_fn is E.count_fn
        assert copy._cache == {}

    def test_tabulate_order(self, binary):
        E = table_predictor(binary, 1, "e", {(0, 1): 3.0}, label_only=True)
        assert tabulate(E).tolist() == [0.0, 3.0, 0.0, 0.0]

    def test_validate_flags_catches_false_claims(self, binary):
        first = Predictor(space=binary, n=4, flavor="e", fn=lambda s: float(s[0].label), train_invariant=True)
        assert validate_flags(first, exact=True)["train_invariant"] is False
        honest = constant_predictor(binary, 4, "e", 1.0)
        assert all(validate_flags(honest, exact=True).values())


class TestPrediction:
    def test_prediction_function(self, binary):
        E = count_predictor(binary, 2, "e", lambda c, y: float(y))
        f = prediction_function(E, [(0, 0), (0, 1)], 0)
        assert f.values == {"0": 0.0, "1": 1.0}
        with pytest.raises(ArityMismatch):
            prediction_function(E, [(0, 0)], 0)

    def test_p_and_e_sets(self):
        p = PredictionFunction(values={"a": 0.02, "b": 0.3, "c": 0.05}, flavor="p")
        assert prediction_set(p, 0.05) == {"b"}
        e = PredictionFunction(values={"a": 50.0, "b": 1.0, "c": 20.0}, flavor="e")
        assert prediction_set(e, 20.0) == {"b"}

    def test_alpha_ranges(self):
        p = PredictionFunction(values={"a": 0.5}, flavor="p")
        with pytest.raises(DomainViolation):
            prediction_set(p, 1.0)
        e = PredictionFunction(values={"a": 0.5}, flavor="e")
        with pytest.raises(DomainViolation):
            prediction_set(e, 0.0)

    def test_p_values_above_one_rejected(self):
        with pytest.raises(ValidationError):
            PredictionFunction(values={"a": 1.5}, flavor="p")

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.floats(0.001, 0.999), st.floats(0.001, 0.999))
    def test_p_sets_shrink_as_alpha_grows(self, values, a1, a2):
        lo, hi = sorted((a1, a2))
        f = PredictionFunction(values={str(i): v for i, v in enumerate(values)}, flavor="p")
        assert prediction_set(f, hi) <= prediction_set(f, lo)

    @given(st.lists(st.floats(0, 1e6), min_size=1, max_size=6), st.floats(0.01, 1e3), st.floats(0.01, 1e3))
    def test_e_sets_grow_as_alpha_grows(self, values, a1, a2):
        lo, hi = sorted((a1, a2))
        f = PredictionFunction(values={str(i): v for i, v in enumerate(values)}, flavor="e")
        assert prediction_set(f, lo) <= prediction_set(f, hi)


class TestKernelsAndModels:
    def test_rows_must_sum_to_one(self, binary):
        with pytest.raises(ValidationError):
            MarkovKernel(space=binary, rows=np.array([[0.5, 0.4], [0.0, 1.0]]))

    def test_flip_kernel(self, binary):
        B = flip_kernel(binary)
        assert B.row(Example(0, 0)).tolist() == [0.0, 1.0]
        assert B.row(Example(0, 1)).tolist() == [1.0, 0.0]
        assert B.label_only

    def test_flip_kernel_needs_two_labels(self, ternary):
        with pytest.raises(DomainViolation):
            flip_kernel(ternary)

    def test_uniform_other(self, ternary):
        assert uniform_other_kernel(ternary).row(Example(0, 1)).tolist() == [0.5, 0.0, 0.5]

    def test_bernoulli_probability(self, binary):
        model = ProductModel.bernoulli(binary, 0.3, 3)
        assert model.probability(binary.label_sequence([0, 1, 1])) == pytest.approx(0.7 * 0.3 * 0.3)
        assert model.label_marginal().tolist() == pytest.approx([0.7, 0.3])

    def test_draws_are_stable_in_the_trial_count(self, binary):
        model = ProductModel.bernoulli(binary, 0.4, 5)
        short = draw_sequences(model, 100, seed=7)
        long = draw_sequences(model, 5000, seed=7)
        assert short.shape == (100, 5)
        np.testing.assert_array_equal(long[:100], short)

    def test_derived_seed(self):
        assert derived_seed(1, 2, 3) == derived_seed(1, 2, 3)
        assert derived_seed(1, 2, 3) != derived_seed(1, 3, 2)
