"""Finite example spaces, data sequences, bags, predictors and Markov kernels.

Everything in the package is indexed by an ExampleSpace: a finite list of
objects and a finite list of (at least two) labels. Examples are pairs of
indices, data sequences are tuples of examples whose last item is the test
example, and predictors are memoised closures over such tuples.
"""
import math
import logging
import itertools
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Iterator, Literal, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator
from sympy.utilities.iterables import multiset_permutations

from .errors import ArityMismatch, DomainViolation, EnumerationCapExceeded
from .settings import ABS_TOL, get_settings

logger = logging.getLogger(__name__)

Flavor = Literal["e", "p"]
Scope = Literal["train_only", "all"]

# Monte Carlo draws are made in fixed-size blocks, each with its own spawn key,
# so that increasing the trial count never changes earlier draws.
BLOCK_SIZE = 4096


class Example(NamedTuple):
    object: int
    label: int


DataSequence = tuple[Example, ...]
CountFn = Callable[[tuple[int, ...], int], float]


# --- Example spaces ---

class ExampleSpace(BaseModel):
    model_config = ConfigDict(frozen=True)

    objects: tuple[str, ...] = Field(("x0",), min_length=1, description="Object identifiers")
    labels: tuple[str, ...] = Field(..., min_length=2, description="Label identifiers")

    @field_validator("objects", "labels")
    @classmethod
    def validate_distinct(cls, v: tuple[str, ...]):
        if len(set(v)) != len(v):
            raise ValueError(f"Identifiers must be distinct, got {list(v)}.")
        for name in v:
            if not name or any(ch.isspace() or ch in ",#" for ch in name):
                raise ValueError(f"Identifier '{name}' must be non-empty and contain no whitespace, ',' or '#'.")
        return v

    @classmethod
    def binary(cls, objects: Sequence[str] = ("x0",)) -> "ExampleSpace":
        return cls(objects=tuple(objects), labels=("0", "1"))

    @classmethod
    def with_labels(cls, labels: Sequence[str], objects: Sequence[str] = ("x0",)) -> "ExampleSpace":
        return cls(objects=tuple(objects), labels=tuple(labels))

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return self.num_objects * self.num_labels

    @cached_property
    def examples(self) -> tuple[Example, ...]:
        return tuple(Example(x, y) for x in range(self.num_objects) for y in range(self.num_labels))

    def index(self, z: Example) -> int:
        return z.object * self.num_labels + z.label

    def example(self, i: int) -> Example:
        x, y = divmod(i, self.num_labels)
        return Example(x, y)

    def label_index(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise DomainViolation(f"Unknown label '{name}'; labels are {list(self.labels)}.") from None

    def object_index(self, name: str) -> int:
        try:
            return self.objects.index(name)
        except ValueError:
            raise DomainViolation(f"Unknown object '{name}'; objects are {list(self.objects)}.") from None

    def contains(self, z: Example) -> bool:
        return 0 <= z.object < self.num_objects and 0 <= z.label < self.num_labels

    def sequence(self, items: Iterable) -> DataSequence:
        """Validated data sequence from Examples or (object, label) index pairs."""
        seq = tuple(Example(*z) for z in items)
        if len(seq) < 2:
            raise DomainViolation(f"A data sequence needs at least 2 examples, got {len(seq)}.")
        for z in seq:
            if not self.contains(z):
                raise DomainViolation(f"Example {tuple(z)} is outside the example space.")
        return seq

    def label_sequence(self, labels: Sequence[int], obj: int = 0) -> DataSequence:
        return self.sequence((obj, y) for y in labels)

    def all_sequences(self, length: int, label_only: bool = False, cap: Optional[int] = None) -> Iterator[DataSequence]:
        """Every sequence of the given length, in mixed-radix order (first item most significant)."""
        alphabet = tuple(Example(0, y) for y in range(self.num_labels)) if label_only else self.examples
        total = len(alphabet) ** length
        guard_enumeration("all sequences", total, cap)
        return itertools.product(alphabet, repeat=length)

    def describe(self, seq: DataSequence) -> list[list[str]]:
        return [[self.objects[z.object], self.labels[z.label]] for z in seq]


def guard_enumeration(what: str, required: int, cap: Optional[int] = None) -> None:
    cap = cap if cap is not None else get_settings().enumeration_cap
    if required > cap:
        raise EnumerationCapExceeded(what, required, cap)


def label_counts(items: Iterable[Example], num_labels: int) -> tuple[int, ...]:
    counts = [0] * num_labels
    for z in items:
        counts[z.label] += 1
    return tuple(counts)


def representative(train_counts: Sequence[int], test_label: int, obj: int = 0) -> DataSequence:
    """Canonical label-only sequence with the given training label counts and test label."""
    train = tuple(Example(obj, y) for y, c in enumerate(train_counts) for _ in range(c))
    return train + (Example(obj, test_label),)


def multinomial(counts: Iterable[int]) -> int:
    counts = list(counts)
    result = math.factorial(sum(counts))
    for c in counts:
        result //= math.factorial(c)
    return result


# --- Bags ---

@dataclass(frozen=True)
class Bag:
    counts: tuple[tuple[Example, int], ...]

    @classmethod
    def of(cls, items: Iterable[Example]) -> "Bag":
        return cls(tuple(sorted(Counter(items).items())))

    @property
    def size(self) -> int:
        return sum(c for _, c in self.counts)

    def multiplicity(self, z: Example) -> int:
        return dict(self.counts).get(z, 0)

    def elements(self) -> DataSequence:
        return tuple(z for z, c in self.counts for _ in range(c))

    def without(self, z: Example) -> "Bag":
        remaining = Counter(dict(self.counts))
        if remaining[z] == 0:
            raise DomainViolation(f"Example {tuple(z)} is not in the bag.")
        remaining[z] -= 1
        return Bag.of(remaining.elements())


# --- Orbits ---

def orbit(seq: DataSequence, scope: Scope = "all", dedup: bool = False,
          cap: Optional[int] = None) -> Iterator[tuple[DataSequence, int]]:
    """Permuted copies of seq as (sequence, weight) pairs.

    The naive mode yields one pair per permutation (n! or (n+1)! of them, each
    with weight 1). The deduplicated mode yields every distinct arrangement once,
    weighted by the number of permutations producing it, so weighted sums agree
    with the naive enumeration exactly.
    """
    movable = seq if scope == "all" else seq[:-1]
    tail = () if scope == "all" else seq[-1:]
    if not dedup:
        guard_enumeration(f"{scope} orbit", math.factorial(len(movable)), cap)
        for perm in itertools.permutations(range(len(movable))):
            yield tuple(movable[i] for i in perm) + tail, 1
        return

    counts = Counter(movable)
    guard_enumeration(f"deduplicated {scope} orbit", multinomial(counts.values()), cap)
    weight = math.prod(math.factorial(c) for c in counts.values())
    symbols = sorted(counts)
    codes = [symbols.index(z) for z in movable]
    for perm in multiset_permutations(codes):
        yield tuple(symbols[i] for i in perm) + tail, weight


def rotations(seq: DataSequence) -> Iterator[DataSequence]:
    """The n+1 cyclic rotations (z_{i+1},...,z_{n+1},z_1,...,z_i), i = 1..n+1."""
    for i in range(1, len(seq) + 1):
        yield seq[i:] + seq[:i]


# --- Predictors ---

class Predictor(BaseModel):
    """A total scoring function on sequences of n+1 examples.

    Evaluations are memoised. A label-only train-invariant predictor may carry
    count_fn(training label counts, test label); symmetrisation and Monte Carlo
    use it instead of materialising sequences. A predictor may also carry
    profile(), an iterable of (count vector, weight) pairs listing every
    nonzero term of its expectation polynomial.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: ExampleSpace
    n: int = Field(..., ge=1, description="Training length; sequences have n+1 examples")
    flavor: Flavor
    fn: Callable[[DataSequence], float]
    train_invariant: bool = False
    fully_invariant: bool = False
    label_only: bool = False
    count_fn: Optional[CountFn] = None
    profile: Optional[Callable[[], Iterable[tuple[tuple[int, ...], float]]]] = None
    name: str = "predictor"
    params: dict = Field(default_factory=dict)

    _cache: dict = PrivateAttr(default_factory=dict)

    @model_validator(mode="before")
    @classmethod
    def fully_invariant_implies_train_invariant(cls, data):
        if isinstance(data, dict) and data.get("fully_invariant"):
            data = {**data, "train_invariant": True}
        return data

    @model_validator(mode="after")
    def validate_count_fn(self) -> "Predictor":
        if self.count_fn is not None and not (self.label_only and self.train_invariant):
            raise ValueError("count_fn requires a label-only train-invariant predictor.")
        return self

    @property
    def arity(self) -> int:
        return self.n + 1

    def __call__(self, seq: DataSequence) -> float:
        cached = self._cache.get(seq)
        if cached is not None:
            return cached
        if len(seq) != self.arity:
            raise ArityMismatch(f"{self.name} takes {self.arity} examples, got {len(seq)}.")
        value = check_value(self.flavor, float(self.fn(seq)), self.name)
        self._cache[seq] = value
        return value

    def at_counts(self, train_counts: Sequence[int], test_label: int) -> float:
        if self.count_fn is not None:
            return check_value(self.flavor, float(self.count_fn(tuple(train_counts), test_label)), self.name)
        return self(representative(train_counts, test_label))

    def derive(self, **changes) -> "Predictor":
        """Copy with some fields replaced and a fresh cache."""
        fields = {name: getattr(self, name) for name in type(self).model_fields}
        fields.update(changes)
        return Predictor(**fields)


def check_value(flavor: Flavor, value: float, name: str = "predictor") -> float:
    if math.isnan(value) or value < 0:
        raise DomainViolation(f"{name} produced {value}; values must be nonnegative.")
    if flavor == "p":
        if value > 1 + ABS_TOL:
            raise DomainViolation(f"{name} produced p-value {value} > 1.")
        value = min(value, 1.0)
    return value


def count_predictor(space: ExampleSpace, n: int, flavor: Flavor, count_fn: CountFn,
                    fully_invariant: bool = False, name: str = "count predictor", **kwargs) -> Predictor:
    k = space.num_labels

    def fn(seq: DataSequence) -> float:
        return count_fn(label_counts(seq[:-1], k), seq[-1].label)

    return Predictor(space=space, n=n, flavor=flavor, fn=fn, count_fn=count_fn, label_only=True,
                     train_invariant=True, fully_invariant=fully_invariant, name=name, **kwargs)


def constant_predictor(space: ExampleSpace, n: int, flavor: Flavor, value: float) -> Predictor:
    return count_predictor(space, n, flavor, lambda counts, y: value, fully_invariant=True,
                           name=f"constant {value:g}")


def table_predictor(space: ExampleSpace, n: int, flavor: Flavor, table: Mapping, default: float = 0.0,
                    name: str = "table", **flags) -> Predictor:
    """Predictor looked up in a table.

    Keys are tuples of label indices when label_only is set, tuples of Examples otherwise.
    """
    if flags.get("label_only"):
        def fn(seq: DataSequence) -> float:
            return table.get(tuple(z.label for z in seq), default)
    else:
        def fn(seq: DataSequence) -> float:
            return table.get(seq, default)
    return Predictor(space=space, n=n, flavor=flavor, fn=fn, name=name, **flags)


def tabulate(pred: Predictor, cap: Optional[int] = None) -> np.ndarray:
    """Values on every sequence in ExampleSpace.all_sequences order (examples alphabet)."""
    cap = cap if cap is not None else get_settings().table_cap
    seqs = pred.space.all_sequences(pred.arity, cap=cap)
    return np.fromiter((pred(seq) for seq in seqs), dtype=float, count=pred.space.size ** pred.arity)


def _adjacent_swaps(seq: DataSequence, length: int) -> Iterator[DataSequence]:
    for i in range(length - 1):
        yield seq[:i] + (seq[i + 1], seq[i]) + seq[i + 2:]


def validate_flags(pred: Predictor, rng: Optional[np.random.Generator] = None, samples: int = 20,
                   exact: bool = False) -> dict[str, bool]:
    """Check the declared structure flags, by sampling or (exact=True) on every sequence.

    The exact check compares every sequence with its adjacent transpositions, which
    generate the permutation group, and with its copy moved to object 0.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    space = pred.space

    def stable(seq: DataSequence, other: DataSequence) -> bool:
        a, b = pred(seq), pred(other)
        return a == b or math.isclose(a, b, rel_tol=ABS_TOL, abs_tol=ABS_TOL)

    result = {}
    if exact:
        for seq in space.all_sequences(pred.arity, cap=get_settings().table_cap):
            if pred.fully_invariant and not all(stable(seq, s) for s in _adjacent_swaps(seq, pred.arity)):
                result["fully_invariant"] = False
            if pred.train_invariant and not all(stable(seq, s) for s in _adjacent_swaps(seq, pred.n)):
                result["train_invariant"] = False
            if pred.label_only and not stable(seq, tuple(Example(0, z.label) for z in seq)):
                result["label_only"] = False
    else:
        idx = rng.integers(0, space.size, size=(samples, pred.arity))
        for row in idx:
            seq = tuple(space.example(int(i)) for i in row)
            order = rng.permutation(pred.n)
            shuffled = tuple(seq[i] for i in order) + seq[-1:]
            if pred.train_invariant and not stable(seq, shuffled):
                result["train_invariant"] = False
            order = rng.permutation(pred.arity)
            if pred.fully_invariant and not stable(seq, tuple(seq[i] for i in order)):
                result["fully_invariant"] = False
            moved = tuple(Example(int(rng.integers(space.num_objects)), z.label) for z in seq)
            if pred.label_only and not stable(seq, moved):
                result["label_only"] = False
    for flag in ("train_invariant", "fully_invariant", "label_only"):
        result.setdefault(flag, getattr(pred, flag))
    return result


# --- Prediction functions and sets ---

class PredictionFunction(BaseModel):
    model_config = ConfigDict(frozen=True)

    values: dict[str, float] = Field(..., description="Score of each candidate label")
    flavor: Flavor

    @model_validator(mode="after")
    def validate_range(self) -> "PredictionFunction":
        for label, v in self.values.items():
            if math.isnan(v) or v < 0 or (self.flavor == "p" and v > 1):
                raise ValueError(f"Value {v} for label '{label}' is outside the {self.flavor}-range.")
        return self


def prediction_function(pred: Predictor, training: Sequence[Example], test_object: int) -> PredictionFunction:
    training = tuple(Example(*z) for z in training)
    if len(training) != pred.n:
        raise ArityMismatch(f"{pred.name} expects {pred.n} training examples, got {len(training)}.")
    values = {
        label: pred(training + (Example(test_object, y),))
        for y, label in enumerate(pred.space.labels)
    }
    return PredictionFunction(values=values, flavor=pred.flavor)


def prediction_set(f: PredictionFunction, alpha: float) -> frozenset[str]:
    """Labels kept at level alpha: p-values above alpha, or e-values below it."""
    if f.flavor == "p":
        if not 0 < alpha < 1:
            raise DomainViolation(f"p-prediction needs alpha in (0, 1), got {alpha}.")
        return frozenset(y for y, v in f.values.items() if v > alpha)
    if not 0 < alpha < math.inf:
        raise DomainViolation(f"e-prediction needs alpha in (0, inf), got {alpha}.")
    return frozenset(y for y, v in f.values.items() if v < alpha)


# --- Markov kernels and product models ---

def _check_distribution(v: np.ndarray, what: str) -> np.ndarray:
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError(f"{what} must be finite and nonnegative.")
    if abs(math.fsum(v.tolist()) - 1.0) > 1e-12:
        raise ValueError(f"{what} must sum to 1, got {math.fsum(v.tolist())!r}.")
    return v


class MarkovKernel(BaseModel):
    """B(. | z): one label distribution per example, rows in ExampleSpace.examples order."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: ExampleSpace
    rows: np.ndarray
    name: str = "kernel"

    @model_validator(mode="after")
    def validate_rows(self) -> "MarkovKernel":
        if self.rows.shape != (self.space.size, self.space.num_labels):
            raise ValueError(f"Kernel rows must have shape {(self.space.size, self.space.num_labels)}, got {self.rows.shape}.")
        for i, row in enumerate(self.rows):
            _check_distribution(row, f"Kernel row {i}")
        return self

    def row(self, z: Example) -> np.ndarray:
        return self.rows[self.space.index(z)]

    @cached_property
    def label_only(self) -> bool:
        k = self.space.num_labels
        return all(np.array_equal(self.rows[i], self.rows[i % k]) for i in range(self.space.size))

    def label_row(self, y: int) -> np.ndarray:
        return self.rows[y]


def flip_kernel(space: ExampleSpace) -> MarkovKernel:
    if space.num_labels != 2:
        raise DomainViolation("The flip kernel needs exactly two labels.")
    rows = np.array([[float(z.label), 1.0 - z.label] for z in space.examples])
    return MarkovKernel(space=space, rows=rows, name="flip")


def uniform_other_kernel(space: ExampleSpace) -> MarkovKernel:
    k = space.num_labels
    rows = np.array([[0.0 if y == z.label else 1.0 / (k - 1) for y in range(k)] for z in space.examples])
    return MarkovKernel(space=space, rows=rows, name="uniform_other")


def uniform_all_kernel(space: ExampleSpace) -> MarkovKernel:
    rows = np.full((space.size, space.num_labels), 1.0 / space.num_labels)
    return MarkovKernel(space=space, rows=rows, name="uniform_all")


KERNELS = {
    "flip": flip_kernel,
    "uniform_other": uniform_other_kernel,
    "uniform_all": uniform_all_kernel,
}


class ProductModel(BaseModel):
    """Q on examples together with the IID power n+1."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: ExampleSpace
    q: np.ndarray
    power: int = Field(..., ge=2)

    @model_validator(mode="after")
    def validate_q(self) -> "ProductModel":
        if self.q.shape != (self.space.size,):
            raise ValueError(f"q must have length {self.space.size}, got shape {self.q.shape}.")
        _check_distribution(self.q, "q")
        return self

    @classmethod
    def bernoulli(cls, space: ExampleSpace, theta: float, power: int, obj: int = 0) -> "ProductModel":
        if space.num_labels != 2 or not 0 <= theta <= 1:
            raise DomainViolation("The Bernoulli model needs two labels and theta in [0, 1].")
        q = np.zeros(space.size)
        q[space.index(Example(obj, 0))] = 1.0 - theta
        q[space.index(Example(obj, 1))] = theta
        return cls(space=space, q=q, power=power)

    @classmethod
    def from_labels(cls, space: ExampleSpace, label_q: Sequence[float], power: int, obj: int = 0) -> "ProductModel":
        q = np.zeros(space.size)
        for y, p in enumerate(label_q):
            q[space.index(Example(obj, y))] = p
        return cls(space=space, q=q, power=power)

    def label_marginal(self) -> np.ndarray:
        return self.q.reshape(self.space.num_objects, self.space.num_labels).sum(axis=0)

    def probability(self, seq: DataSequence) -> float:
        return math.prod(float(self.q[self.space.index(z)]) for z in seq)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))


def draw_sequences(model: ProductModel, trials: int, seed: int) -> np.ndarray:
    """Example indices of shape (trials, power), drawn block by block."""
    blocks = [np.empty((0, model.power), dtype=np.int64)]
    for block in range(math.ceil(trials / BLOCK_SIZE)):
        rng = block_rng(seed, block)
        blocks.append(rng.choice(model.space.size, size=(BLOCK_SIZE, model.power), p=model.q))
    return np.concatenate(blocks)[:trials]


def derived_seed(seed: int, *keys: int) -> int:
    """Independent integer seed for the sub-experiment identified by keys."""
    return int(np.random.SeedSequence(seed, spawn_key=keys).generate_state(1)[0])
