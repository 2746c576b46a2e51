"""Robust location estimators used to aggregate log-measures over views."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from rodd.errors import EmptyInput, ValidationError


@dataclass(frozen=True)
class TrimSpec:
    """Fraction of observations removed from *each* tail before averaging.

    ``0.125`` is the classical S75 estimator, ``0.05`` S90, ``0.20`` S60 and
    ``0.5`` degenerates to the median.
    """

    trim_fraction: float = 0.125

    def __post_init__(self) -> None:
        if not 0.0 <= self.trim_fraction <= 0.5:
            raise ValidationError(f"trim_fraction must lie in [0, 0.5], got {self.trim_fraction}")

    def __call__(self, values: Sequence[float]) -> float:
        return trimmed_mean(values, self)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrimSpec:
        return cls(float(d["trim_fraction"]))


MEDIAN = TrimSpec(0.5)


def trim_count(m: int, trim_fraction: float) -> int:
    # the epsilon keeps products such as 0.29 * 100 from flooring one short
    return int(math.floor(trim_fraction * m + 1e-9))


def trimmed_mean(values: Sequence[float], spec: TrimSpec | float) -> float:
    frac = spec.trim_fraction if isinstance(spec, TrimSpec) else float(spec)
    a = np.sort(np.asarray(values, dtype=np.float64))
    m = a.size
    if m == 0:
        raise EmptyInput("trimmed mean of an empty sequence")
    k = trim_count(m, frac)
    if 2 * k >= m:
        return _median_sorted(a)
    return float(a[k : m - k].mean())


def median(values: Sequence[float]) -> float:
    a = np.sort(np.asarray(values, dtype=np.float64))
    if a.size == 0:
        raise EmptyInput("median of an empty sequence")
    return _median_sorted(a)


def _median_sorted(a: np.ndarray) -> float:
    m = a.size
    if m % 2:
        return float(a[m // 2])
    return float((a[m // 2 - 1] + a[m // 2]) / 2.0)
