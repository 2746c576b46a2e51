"""Cell-value estimators: robust effect models and the regression forest."""

from __future__ import annotations

from rodd.cube import DataCube
from rodd.errors import ValidationError
from rodd.estimators.anova import CoefficientTable, fit_coefficients, predict_coefficients
from rodd.estimators.forest import (
    Forest,
    ForestParams,
    RegressionTree,
    build_tree,
    fit_forest,
    one_hot,
    predict_forest,
)
from rodd.estimators.robust import MEDIAN, TrimSpec, median, trimmed_mean

# estimator id -> aggregator; "rf" is handled separately
TRIMMED = {
    "s75": TrimSpec(0.125),
    "s60": TrimSpec(0.20),
    "s90": TrimSpec(0.05),
    "median": MEDIAN,
}
ESTIMATORS = ("s75", "s60", "s90", "median", "rf")
LABELS = {"s75": "S75", "s60": "S60", "s90": "S90", "median": "Median", "rf": "RF"}


def fit_estimator(cube: DataCube, name: str, forest_params: ForestParams | None = None,
                  threads: int | None = None) -> CoefficientTable | Forest:
    name = name.lower()
    if name == "rf":
        return fit_forest(cube, forest_params or ForestParams(), threads=threads)
    if name in TRIMMED:
        return fit_coefficients(cube, TRIMMED[name])
    raise ValidationError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")


__all__ = [
    "CoefficientTable", "ESTIMATORS", "Forest", "ForestParams", "LABELS", "MEDIAN",
    "RegressionTree", "TRIMMED", "TrimSpec", "build_tree", "fit_coefficients",
    "fit_estimator", "fit_forest", "median", "one_hot", "predict_coefficients",
    "predict_forest", "trimmed_mean",
]
