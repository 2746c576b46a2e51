"""Log-additive effect model fitted by robust aggregation over views.

The log of every cell is modelled as the sum of one coefficient per
strict-subset projection of its coordinate. Coefficients are fitted level
by level: a projection's coefficient is the robust average of the log
measures in its view minus the coefficients of all its own sub-projections.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from rodd.cube import Coordinate, DataCube, Dimension, Projection, enumerate_projections
from rodd.errors import EmptyCube, NonPositiveMeasure
from rodd.estimators.robust import TrimSpec

logger = logging.getLogger(__name__)

Aggregator = Union[TrimSpec, Callable[[Sequence[float]], float]]


@dataclass(frozen=True)
class CoefficientTable:
    dimensions: tuple[Dimension, ...]
    gamma: dict[Projection, float]
    aggregator: Aggregator
    # log-prediction of every training cell, in the cube's cell order
    fitted_log: np.ndarray = field(repr=False)

    def predict(self, coord: Sequence[int]) -> float:
        return predict_coefficients(self, coord)

    def predict_cells(self, cube: DataCube) -> np.ndarray:
        if cube.dimensions == self.dimensions and len(cube) == len(self.fitted_log):
            return np.exp(self.fitted_log)
        return np.array([self.predict(c) for c in cube.cells])

    def to_csv(self, path: str | Path) -> None:
        """One row per projection; unfixed dimensions are left blank."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([d.name for d in self.dimensions] + ["gamma"])
            for proj, g in self.gamma.items():
                row = [""] * len(self.dimensions)
                for p, i in proj.fixed:
                    row[p] = self.dimensions[p].categories[i]
                w.writerow(row + [repr(g)])


def _log_measures(cube: DataCube) -> np.ndarray:
    if len(cube) == 0:
        raise EmptyCube("cannot fit an estimator on an empty cube")
    bad = np.flatnonzero(cube.values <= 0)
    if bad.size:
        coord = list(cube.cells)[bad[0]]
        raise NonPositiveMeasure(
            f"cell {cube.labels(coord)} has measure {cube.values[bad[0]]!r}; "
            "the log-scale model requires strictly positive measures"
        )
    return np.log(cube.values)


def fit_coefficients(cube: DataCube, aggregator: Aggregator) -> CoefficientTable:
    logy = _log_measures(cube)
    n = cube.n_dims
    m = len(cube)
    coords = cube.coords
    # per-cell contribution of each fitted subset of dimensions
    contrib: dict[tuple[int, ...], np.ndarray] = {}
    gamma: dict[Projection, float] = {}

    for k in range(n):
        for subset in itertools.combinations(range(n), k):
            lower = np.zeros(m)
            for sub, arr in contrib.items():
                if set(sub) < set(subset):
                    lower += arr
            if k == 0:
                inverse = np.zeros(m, dtype=np.int64)
                keys = np.zeros((1, 0), dtype=np.int64)
            else:
                keys, inverse = np.unique(coords[:, subset], axis=0, return_inverse=True)
                inverse = inverse.reshape(-1)
            order = np.argsort(inverse, kind="stable")
            bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
            values = np.empty(len(keys))
            for g in range(len(keys)):
                members = order[bounds[g] : bounds[g + 1]]
                # every member shares the same sub-projections, so lower is constant here
                values[g] = aggregator(logy[members]) - lower[members[0]]
                gamma[Projection(tuple(zip(subset, keys[g].tolist())))] = float(values[g])
            contrib[subset] = values[inverse]

    fitted = np.zeros(m)
    for arr in contrib.values():
        fitted += arr
    return CoefficientTable(cube.dimensions, gamma, aggregator, fitted)


def predict_coefficients(table: CoefficientTable, coord: Coordinate | Sequence[int]) -> float:
    total = 0.0
    missing = 0
    for proj in enumerate_projections(tuple(coord)):
        g = table.gamma.get(proj)
        if g is None:
            missing += 1
        else:
            total += g
    if missing == 2 ** len(coord) - 1:
        logger.warning("no fitted coefficient covers coordinate %s; predicting exp(0) = 1", tuple(coord))
    return float(np.exp(total))
