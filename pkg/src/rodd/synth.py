"""Labelled synthetic cubes with planted outliers.

A cube is assembled from random per-category expected values and pairwise
interaction effects, a sample of cells is moved onto the nearest
``mean +/- 1.5 IQR`` boundary of its categorical slices, and integer noise
scaled by the cube's standard deviation is added to every cell.
"""

from __future__ import annotations

import itertools
import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from rodd.cube import Coordinate, DataCube, Dimension, read_csv, write_csv
from rodd.errors import InsufficientData, ValidationError

OUTLIER_RATES = (0.0025, 0.01, 0.05)
NOISE_DIVISORS = (2.5, 5.0, 7.5, 10.0, 12.5)


def round_half_away(x):
    """Round to the nearest integer, halves away from zero."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return int(out) if out.ndim == 0 else out.astype(np.int64)


def _div_round(num: np.ndarray, den: int) -> np.ndarray:
    # exact integer version of round_half_away(num / den)
    num = np.asarray(num, dtype=np.int64)
    q = (2 * np.abs(num) + den) // (2 * den)
    return np.sign(num) * q


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of a global seed."""
    return np.random.default_rng([seed & ((1 << 64) - 1), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class SynthConfig:
    dims: tuple[tuple[str, int], ...] = (("month", 12), ("product", 9), ("city", 10))
    value_ranges: tuple[tuple[int, int], ...] = ((80, 120), (40, 160), (60, 140))
    interaction_range: tuple[int, int] = (-10, 10)
    outlier_rate: float = 0.01
    noise_divisor: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple((str(n), int(k)) for n, k in self.dims))
        object.__setattr__(self, "value_ranges", tuple((int(a), int(b)) for a, b in self.value_ranges))
        object.__setattr__(self, "interaction_range", tuple(int(v) for v in self.interaction_range))
        if len(self.dims) < 2:
            raise ValidationError("a synthetic cube needs at least two dimensions")
        if any(k < 1 for _, k in self.dims):
            raise ValidationError("every dimension needs at least one category")
        if len(self.value_ranges) != len(self.dims):
            raise ValidationError("one value range per dimension is required")
        for lo, hi in self.value_ranges:
            if lo < 1 or hi < lo:
                raise ValidationError(f"value range ({lo}, {hi}) must satisfy 1 <= lo <= hi")
        lo, hi = self.interaction_range
        if hi < lo:
            raise ValidationError("interaction range is empty")
        if not 0 < self.outlier_rate < 0.5:
            raise ValidationError(f"outlier_rate must lie in (0, 0.5), got {self.outlier_rate}")
        if not self.noise_divisor > 0:
            raise ValidationError("noise_divisor must be positive")

    @property
    def n_cells(self) -> int:
        return int(np.prod([k for _, k in self.dims]))

    def dimensions(self) -> list[Dimension]:
        return [Dimension(name, tuple(f"{name}{i + 1:02d}" for i in range(k))) for name, k in self.dims]

    def with_(self, **changes) -> SynthConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = [list(x) for x in self.dims]
        d["value_ranges"] = [list(x) for x in self.value_ranges]
        d["interaction_range"] = list(self.interaction_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        return cls(
            dims=tuple(tuple(x) for x in d["dims"]),
            value_ranges=tuple(tuple(x) for x in d["value_ranges"]),
            interaction_range=tuple(d["interaction_range"]),
            outlier_rate=float(d["outlier_rate"]),
            noise_divisor=float(d["noise_divisor"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class Effects:
    expected: tuple[np.ndarray, ...]
    # (dim a, dim b) with a < b -> integer matrix of shape (n_a, n_b)
    interactions: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class LabeledCube:
    cube: DataCube
    noiseless: DataCube
    outlier_mask: frozenset[Coordinate]
    config: SynthConfig
    # cube right after injection, before noise
    injected: DataCube | None = None

    def labels(self) -> np.ndarray:
        """Boolean outlier indicator in the cube's cell order."""
        return np.array([c in self.outlier_mask for c in self.cube.cells])

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(self.cube, out / "cube.csv")
        write_csv(self.noiseless, out / "noiseless.csv")
        dims = self.cube.dimensions
        with open(out / "mask.csv", "w", encoding="utf-8") as fh:
            fh.write(",".join(d.name for d in dims) + "\n")
            for c in sorted(self.outlier_mask):
                fh.write(",".join(self.cube.labels(c)) + "\n")
        with open(out / "config.json", "w", encoding="utf-8") as fh:
            json.dump(self.config.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, in_dir: str | Path) -> LabeledCube:
        src = Path(in_dir)
        config = SynthConfig.from_dict(json.loads((src / "config.json").read_text()))
        names = [n for n, _ in config.dims]
        cube = read_csv(src / "cube.csv", names, "y")
        noiseless = read_csv(src / "noiseless.csv", names, "y")
        lines = (src / "mask.csv").read_text(encoding="utf-8").splitlines()[1:]
        mask = frozenset(cube.coordinate(line.split(",")) for line in lines if line)
        return cls(cube, noiseless, mask, config)


def gen_effects(config: SynthConfig, rng: np.random.Generator) -> Effects:
    expected = tuple(
        rng.integers(lo, hi + 1, size=k) for (_, k), (lo, hi) in zip(config.dims, config.value_ranges)
    )
    ilo, ihi = config.interaction_range
    interactions = {
        (a, b): rng.integers(ilo, ihi + 1, size=(config.dims[a][1], config.dims[b][1]))
        for a, b in itertools.combinations(range(len(config.dims)), 2)
    }
    return Effects(expected, interactions)


def assemble_noiseless(effects: Effects, dims: Sequence[Dimension]) -> DataCube:
    """Dense cube whose cells are the rounded mean of the per-category values
    and the rounded pairwise combination values."""
    n = len(dims)
    shape = tuple(len(d) for d in dims)
    grids = np.meshgrid(*[np.arange(k) for k in shape], indexing="ij")
    total = np.zeros(shape, dtype=np.int64)
    for p in range(n):
        total += np.asarray(effects.expected[p], dtype=np.int64)[grids[p]]
    for a, b in itertools.combinations(range(n), 2):
        ea = np.asarray(effects.expected[a], dtype=np.int64)[:, None]
        eb = np.asarray(effects.expected[b], dtype=np.int64)[None, :]
        combo = _div_round(ea + eb + np.asarray(effects.interactions[(a, b)], dtype=np.int64), 2)
        total += combo[grids[a], grids[b]]
    values = _div_round(total, n + n * (n - 1) // 2)
    cells = {c: float(values[c]) for c in itertools.product(*[range(k) for k in shape])}
    return DataCube(dims, cells)


def slice_boundaries(cube: DataCube, keep: np.ndarray) -> list[list[tuple[int, int]]]:
    """Rounded ``mean -/+ 1.5 IQR`` per category of every dimension, from kept cells."""
    out = []
    vals = cube.values
    for p, dim in enumerate(cube.dimensions):
        bounds = []
        for i in range(len(dim)):
            sel = vals[keep & (cube.coords[:, p] == i)]
            if sel.size < 4:
                raise InsufficientData(
                    f"slice {dim.name}={dim.categories[i]} has {sel.size} inlier cells; need 4 for an IQR"
                )
            q1, q3 = np.percentile(sel, [25, 75])
            spread = 1.5 * (q3 - q1)
            mean = sel.mean()
            bounds.append((round_half_away(mean - spread), round_half_away(mean + spread)))
        out.append(bounds)
    return out


def n_outliers(rate: float, m: int) -> int:
    return max(1, round_half_away(rate * m))


def inject_outliers(noiseless: DataCube, rate: float, rng: np.random.Generator
                    ) -> tuple[DataCube, frozenset[Coordinate]]:
    if not 0 < rate < 0.5:
        raise ValidationError(f"outlier rate must lie in (0, 0.5), got {rate}")
    m = len(noiseless)
    k = n_outliers(rate, m)
    picked = np.sort(rng.choice(m, size=k, replace=False))
    keep = np.ones(m, dtype=bool)
    keep[picked] = False
    bounds = slice_boundaries(noiseless, keep)

    values = noiseless.values.copy()
    keys = list(noiseless.cells)
    for j in picked:
        orig = values[j]
        cands = [b for p, i in enumerate(keys[j]) for b in bounds[p][i]]
        # nearest boundary; on equal distance the lower one wins
        values[j] = min(cands, key=lambda b: (abs(b - orig), b))
    return noiseless.with_values(values), frozenset(keys[j] for j in picked)


def add_noise(cube: DataCube, divisor: float, rng: np.random.Generator) -> DataCube:
    if not divisor > 0:
        raise ValidationError("noise divisor must be positive")
    if len(cube) == 0:
        return cube
    step = round_half_away(np.std(cube.values) / divisor)
    u = rng.integers(-10, 11, size=len(cube))
    return cube.with_values(np.maximum(cube.values + step * u, 1.0))


def synthesize(config: SynthConfig) -> LabeledCube:
    dims = config.dimensions()
    effects = gen_effects(config, substream(config.seed, "effects"))
    noiseless = assemble_noiseless(effects, dims)
    injected, mask = inject_outliers(noiseless, config.outlier_rate, substream(config.seed, "sampling"))
    noisy = add_noise(injected, config.noise_divisor, substream(config.seed, "noise"))
    return LabeledCube(noisy, noiseless, mask, config, injected)
