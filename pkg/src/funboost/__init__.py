"""Gradient boosting for distributional regression with functional responses."""

from .boost import FittedModel, Hyper, fit, predict
from .data import (
    CategoricalCovariate,
    DatasetSchema,
    FunctionalCovariate,
    FunctionalDataset,
    Grid,
    ScalarCovariate,
    ingest_dataset,
    write_dataset,
)
from .families import get_family
from .model import DerivedCovariate, ModelSpec, TermDescriptor

__version__ = "0.1.0"

__all__ = [
    "CategoricalCovariate",
    "DatasetSchema",
    "DerivedCovariate",
    "FittedModel",
    "FunctionalCovariate",
    "FunctionalDataset",
    "Grid",
    "Hyper",
    "ModelSpec",
    "ScalarCovariate",
    "TermDescriptor",
    "fit",
    "get_family",
    "ingest_dataset",
    "predict",
    "write_dataset",
]
