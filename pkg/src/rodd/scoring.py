"""Dispersion model, outlierness scores and end-to-end detection."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import numpy as np

from rodd.cube import Coordinate, DataCube
from rodd.errors import NonPositiveEstimate, NoValidPairs, ValidationError

logger = logging.getLogger(__name__)

TAU = 2.5
SIGMA_FLOOR = 1e-12
# relative residuals below this are log/exp round-off, not signal
RESIDUAL_SNAP = 1e-9


@dataclass(frozen=True)
class RhoEstimate:
    rho: float
    residual: float
    bracket: tuple[float, float]
    converged: bool
    scale: float = 1.0


def _rho_terms(y: np.ndarray, y_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if np.any(y_hat <= 0):
        raise NonPositiveEstimate("estimated cell values must be strictly positive")
    L = np.log(y_hat)
    with np.errstate(divide="ignore"):
        log_r2 = 2.0 * np.log(np.abs(y - y_hat))
    keep = L != 0
    return L[keep], log_r2[keep]


def rho_equation(rho: float, L: np.ndarray, log_r2: np.ndarray) -> float:
    """sum log(yhat) * ((y - yhat)^2 / yhat^rho - 1), evaluated in log space."""
    with np.errstate(over="ignore"):
        return float(np.sum(L * (np.exp(log_r2 - rho * L) - 1.0)))


def solve_rho(pairs: Sequence[tuple[float, float]] | np.ndarray,
              lo: float = 0.0, hi: float = 4.0, limit: float = 16.0,
              xtol: float = 1e-10) -> RhoEstimate:
    """Maximum-likelihood exponent of the variance model ``sigma^2 = yhat^rho``.

    Brackets a sign change starting from ``[lo, hi]`` and widening
    geometrically up to ``[-limit, limit]``, then bisects.
    """
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    L, log_r2 = _rho_terms(arr[:, 0], arr[:, 1])
    if L.size == 0 or not np.isfinite(log_r2).any():
        raise NoValidPairs("no pair with yhat != 1 and a non-zero residual")
    scale = float(np.sum(np.abs(L)))
    tol = 1e-8 * scale

    def F(r: float) -> float:
        return rho_equation(r, L, log_r2)

    f_lo, f_hi = F(lo), F(hi)
    width = hi - lo
    while np.sign(f_lo) == np.sign(f_hi) and f_lo != 0 and (lo > -limit or hi < limit):
        lo, hi = max(-limit, lo - width), min(limit, hi + width)
        width *= 2
        f_lo, f_hi = F(lo), F(hi)
    bracket = (lo, hi)

    if f_lo == 0:
        return RhoEstimate(lo, 0.0, bracket, True, scale)
    if f_hi == 0:
        return RhoEstimate(hi, 0.0, bracket, True, scale)
    if np.sign(f_lo) == np.sign(f_hi):
        rho, res = (lo, f_lo) if abs(f_lo) <= abs(f_hi) else (hi, f_hi)
        logger.warning("rho equation has no root in [%g, %g]; clamping to %g", lo, hi, rho)
        return RhoEstimate(rho, res, bracket, False, scale)

    a, b, fa = lo, hi, f_lo
    mid, fm = a, fa
    for _ in range(400):
        mid = 0.5 * (a + b)
        if mid in (a, b):
            break
        fm = F(mid)
        if fm == 0:
            break
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
        if b - a < xtol and abs(fm) <= tol:
            break
    return RhoEstimate(mid, fm, bracket, abs(fm) <= tol, scale)


def sigma(y_hat: float | np.ndarray, rho: float) -> float | np.ndarray:
    y_hat_arr = np.asarray(y_hat, dtype=np.float64)
    if np.any(y_hat_arr <= 0):
        raise NonPositiveEstimate("sigma requires a strictly positive estimate")
    out = np.maximum(np.power(y_hat_arr, rho / 2.0), SIGMA_FLOOR)
    return float(out) if out.ndim == 0 else out


def selfexp(y: float, y_hat: float, sig: float, tau: float = TAU) -> tuple[float, float]:
    """Return ``(raw score, SelfExp)`` where SelfExp = max(raw - tau, 0)."""
    if sig <= 0:
        raise ValidationError("sigma must be positive")
    if tau < 0:
        raise ValidationError("tau must be non-negative")
    raw = abs(y - y_hat) / sig
    return raw, max(raw - tau, 0.0)


@dataclass(frozen=True)
class ScoreRecord:
    coord: Coordinate
    y: float
    y_hat: float
    sigma: float
    raw_score: float
    selfexp: float
    is_outlier: bool


class CellEstimator(Protocol):
    def predict_cells(self, cube: DataCube) -> np.ndarray: ...


@dataclass
class Detection:
    """Scores for every cell of a cube plus the fitted dispersion exponent."""

    cube: DataCube
    records: list[ScoreRecord]
    rho: RhoEstimate
    tau: float
    meta: dict = field(default_factory=dict)

    def __iter__(self) -> Iterator[ScoreRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> ScoreRecord:
        return self.records[i]

    @property
    def raw_scores(self) -> np.ndarray:
        return np.array([r.raw_score for r in self.records])

    @property
    def outliers(self) -> list[ScoreRecord]:
        return [r for r in self.records if r.is_outlier]

    def metadata(self) -> dict:
        return {
            **self.meta,
            "tau": self.tau,
            "rho": self.rho.rho,
            "rho_residual": self.rho.residual,
            "rho_bracket": list(self.rho.bracket),
            "converged": self.rho.converged,
            "n_cells": len(self.records),
            "n_outliers": len(self.outliers),
        }

    def to_csv(self, path: str | Path) -> None:
        dims = self.cube.dimensions
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([d.name for d in dims] + ["y", "y_hat", "sigma", "raw_score", "selfexp", "is_outlier"])
            for r in self.records:
                w.writerow([*self.cube.labels(r.coord), repr(r.y), repr(r.y_hat), repr(r.sigma),
                            repr(r.raw_score), repr(r.selfexp), int(r.is_outlier)])

    def to_json(self, path: str | Path) -> None:
        dims = [d.name for d in self.cube.dimensions]
        cells = [
            {"labels": dict(zip(dims, self.cube.labels(r.coord))), "y": r.y, "y_hat": r.y_hat,
             "sigma": r.sigma, "raw_score": r.raw_score, "selfexp": r.selfexp,
             "is_outlier": r.is_outlier}
            for r in self.records
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"metadata": self.metadata(), "cells": cells}, fh, indent=1, sort_keys=True)
            fh.write("\n")


def detect(cube: DataCube, estimator: CellEstimator, tau: float = TAU) -> Detection:
    """Score every cell of ``cube`` against an estimator fitted on it."""
    if tau < 0:
        raise ValidationError("tau must be non-negative")
    y = cube.values
    y_hat = np.asarray(estimator.predict_cells(cube), dtype=np.float64)
    if np.any(y_hat <= 0):
        raise NonPositiveEstimate("estimator produced a non-positive cell estimate")
    resid = np.abs(y - y_hat)
    resid[resid <= RESIDUAL_SNAP * y_hat] = 0.0

    try:
        rho = solve_rho(np.column_stack([y_hat + resid, y_hat]))
    except NoValidPairs:
        # perfect fit, or every estimate is exactly 1: sigma does not depend on rho
        rho = RhoEstimate(0.0, 0.0, (0.0, 0.0), False, 0.0)
    if not rho.converged:
        logger.warning("rho did not converge (rho=%g); scores use the clamped value", rho.rho)

    sig = sigma(y_hat, rho.rho)
    raw = resid / sig
    records = [
        ScoreRecord(coord, float(yi), float(yh), float(s), float(r), max(float(r) - tau, 0.0), bool(r > tau))
        for coord, yi, yh, s, r in zip(cube.cells, y, y_hat, sig, raw)
    ]
    return Detection(cube, records, rho, tau)
