"""Conformal and randomness e-/p-predictors on finite example spaces."""
from .core import Example, ExampleSpace, MarkovKernel, Predictor, ProductModel
from .errors import ConformalError
from .operators import avg_all, avg_train, conformalize, relative_deviation

__all__ = [
    "ConformalError",
    "Example",
    "ExampleSpace",
    "MarkovKernel",
    "Predictor",
    "ProductModel",
    "avg_all",
    "avg_train",
    "conformalize",
    "relative_deviation",
]
