"""Calibrators between p-values and e-values."""
import math
import logging
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import integrate

from .core import Predictor
from .errors import DomainViolation, FlavorMismatch

logger = logging.getLogger(__name__)

CalibratorKind = Literal["p_to_e_power", "p_to_e_density", "e_to_p"]

DENSITY_INTEGRAL_TOL = 1e-6


class Calibrator(BaseModel):
    kind: CalibratorKind
    delta: Optional[float] = Field(None, gt=0, lt=1, description="Exponent of the power calibrator")
    density: Optional[tuple[float, ...]] = Field(
        None, description="Non-increasing bin values of a piecewise-constant calibrator on [0, 1]")

    @model_validator(mode="after")
    def validate_kind(self) -> "Calibrator":
        if self.kind == "p_to_e_power" and self.delta is None:
            raise ValueError("The power calibrator needs delta in (0, 1).")
        if self.kind == "p_to_e_density":
            if not self.density:
                raise ValueError("The density calibrator needs at least one bin value.")
            d = np.asarray(self.density)
            if np.any(d < 0) or not np.all(np.isfinite(d)):
                raise ValueError("Density values must be finite and nonnegative.")
            if np.any(np.diff(d) > 0):
                raise ValueError("Density values must be non-increasing in p.")
            integral = density_integral(self.density)
            if abs(integral - 1.0) > DENSITY_INTEGRAL_TOL:
                raise ValueError(f"Density must integrate to 1 over [0, 1], got {integral:.9g}.")
        return self

    @classmethod
    def power(cls, delta: float) -> "Calibrator":
        return cls(kind="p_to_e_power", delta=delta)

    @classmethod
    def from_density(cls, values) -> "Calibrator":
        return cls(kind="p_to_e_density", density=tuple(float(v) for v in values))

    @classmethod
    def e_to_p(cls) -> "Calibrator":
        return cls(kind="e_to_p")

    @property
    def input_flavor(self) -> str:
        return "e" if self.kind == "e_to_p" else "p"

    @property
    def output_flavor(self) -> str:
        return "p" if self.kind == "e_to_p" else "e"

    def __call__(self, v: float) -> float:
        return calibrate_value(self, v)


def density_integral(values) -> float:
    """Integral over [0, 1] of the step function with the given bin values."""
    values = np.asarray(values, dtype=float)
    edges = np.linspace(0.0, 1.0, len(values) + 1)
    # Each bin is integrated exactly by trapezoid on its two endpoints.
    return float(sum(integrate.trapezoid([v, v], edges[i:i + 2]) for i, v in enumerate(values)))


def calibrate_value(c: Calibrator, v: float) -> float:
    if c.kind == "e_to_p":
        if math.isnan(v) or v < 0:
            raise DomainViolation(f"e_to_p needs an e-value in [0, inf], got {v}.")
        return 1.0 if v <= 1 else 1.0 / v
    if math.isnan(v) or not 0 <= v <= 1:
        raise DomainViolation(f"{c.kind} needs a p-value in [0, 1], got {v}.")
    if c.kind == "p_to_e_power":
        if v == 0:
            return math.inf
        return c.delta * v ** (c.delta - 1)
    bins = len(c.density)
    return c.density[min(int(v * bins), bins - 1)]


def calibrator_integral(c: Calibrator) -> float:
    """Integral of a p-to-e calibrator over [0, 1]; admissible calibrators give 1."""
    if c.kind == "e_to_p":
        raise FlavorMismatch("e_to_p is not a p-to-e calibrator.")
    if c.kind == "p_to_e_density":
        return density_integral(c.density)
    # delta * p^(delta - 1) has an integrable singularity at 0, handled by the algebraic weight.
    value, _ = integrate.quad(lambda p: c.delta, 0.0, 1.0, weight="alg", wvar=(c.delta - 1.0, 0.0))
    return float(value)


def calibrate_predictor(c: Calibrator, pred: Predictor) -> Predictor:
    if pred.flavor != c.input_flavor:
        raise FlavorMismatch(f"{c.kind} takes a {c.input_flavor}-predictor; {pred.name} is a {pred.flavor}-predictor.")

    count_fn = None
    if pred.count_fn is not None:
        def count_fn(train_counts: tuple[int, ...], test_label: int) -> float:
            return calibrate_value(c, pred.at_counts(train_counts, test_label))

    return Predictor(space=pred.space, n=pred.n, flavor=c.output_flavor, fn=lambda seq: calibrate_value(c, pred(seq)),
                     train_invariant=pred.train_invariant, fully_invariant=pred.fully_invariant,
                     label_only=pred.label_only, count_fn=count_fn, name=f"{c.kind}({pred.name})")


def load_density(path: str | Path) -> Calibrator:
    """Density calibrator from a file of whitespace-separated bin values ('#' starts a comment)."""
    values = np.loadtxt(path, comments="#", ndmin=1).ravel()
    logger.info(f"Loaded {len(values)} density bins from {path}")
    return Calibrator.from_density(values)
