"""Sparse n-dimensional data cubes over categorical dimensions."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from rodd.errors import ArityMismatch, DuplicateCell, ParseError, UnknownCategory, ValidationError

Coordinate = tuple[int, ...]


@dataclass(frozen=True)
class Dimension:
    name: str
    categories: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(self.categories))
        if not self.categories:
            raise ValidationError(f"dimension {self.name!r} has no categories")
        if len(set(self.categories)) != len(self.categories):
            raise ValidationError(f"dimension {self.name!r} has duplicate category labels")

    def __len__(self) -> int:
        return len(self.categories)

    def index(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise UnknownCategory(
                f"category {label!r} is not declared in dimension {self.name!r}"
            ) from None


@dataclass(frozen=True)
class Projection:
    """A coordinate restricted to a strict subset of the dimensions.

    ``fixed`` holds ``(position, category index)`` pairs sorted by position.
    The empty projection fixes nothing and matches every cell.
    """

    fixed: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        fixed = tuple(sorted((int(p), int(i)) for p, i in self.fixed))
        positions = [p for p, _ in fixed]
        if len(set(positions)) != len(positions):
            raise ValidationError("projection fixes the same dimension twice")
        object.__setattr__(self, "fixed", fixed)

    @classmethod
    def of(cls, coord: Sequence[int], positions: Iterable[int]) -> Projection:
        return cls(tuple((p, coord[p]) for p in positions))

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(p for p, _ in self.fixed)

    def __len__(self) -> int:
        return len(self.fixed)

    def matches(self, coord: Sequence[int]) -> bool:
        return all(coord[p] == i for p, i in self.fixed)

    def check(self, dims: Sequence[Dimension]) -> None:
        n = len(dims)
        if len(self.fixed) >= n:
            raise ValidationError("a projection must fix a strict subset of the dimensions")
        for p, i in self.fixed:
            if not 0 <= p < n or not 0 <= i < len(dims[p]):
                raise ValidationError(f"projection entry ({p}, {i}) is out of range")


class DataCube:
    """Immutable sparse map from coordinates to a real-valued measure.

    Cells are kept in lexicographic coordinate order; ``coords`` and
    ``values`` are read-only arrays in that order.
    """

    def __init__(self, dimensions: Sequence[Dimension], cells: Mapping[Coordinate, float]):
        self._dims = tuple(dimensions)
        n = len(self._dims)
        sizes = [len(d) for d in self._dims]
        store: dict[Coordinate, float] = {}
        for coord in sorted(cells):
            c = tuple(int(i) for i in coord)
            if len(c) != n:
                raise ArityMismatch(f"coordinate {coord} has {len(c)} entries, cube has {n} dimensions")
            for i, size in zip(c, sizes):
                if not 0 <= i < size:
                    raise UnknownCategory(f"coordinate {coord} is out of range for dimensions {sizes}")
            store[c] = float(cells[coord])
        self._cells = MappingProxyType(store)
        coords = np.array(list(store), dtype=np.int64).reshape(len(store), n)
        values = np.fromiter(store.values(), dtype=np.float64, count=len(store))
        coords.setflags(write=False)
        values.setflags(write=False)
        self._coords = coords
        self._values = values

    @property
    def dimensions(self) -> tuple[Dimension, ...]:
        return self._dims

    @property
    def cells(self) -> Mapping[Coordinate, float]:
        return self._cells

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n_dims(self) -> int:
        return len(self._dims)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(d) for d in self._dims)

    def __len__(self) -> int:
        return len(self._cells)

    def __contains__(self, coord: object) -> bool:
        return coord in self._cells

    def __getitem__(self, coord: Coordinate) -> float:
        return self._cells[coord]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataCube):
            return NotImplemented
        return self._dims == other._dims and dict(self._cells) == dict(other._cells)

    def __repr__(self) -> str:
        return f"DataCube(shape={self.shape}, cells={len(self)})"

    def labels(self, coord: Sequence[int]) -> tuple[str, ...]:
        return tuple(d.categories[i] for d, i in zip(self._dims, coord))

    def coordinate(self, labels: Sequence[str]) -> Coordinate:
        if len(labels) != self.n_dims:
            raise ArityMismatch(f"{len(labels)} labels given for {self.n_dims} dimensions")
        return tuple(d.index(lab) for d, lab in zip(self._dims, labels))

    def to_records(self) -> list[tuple[tuple[str, ...], float]]:
        return [(self.labels(c), y) for c, y in self._cells.items()]

    def with_values(self, values: Sequence[float]) -> DataCube:
        """New cube on the same coordinates with replaced measures."""
        if len(values) != len(self):
            raise ValidationError("value count does not match cell count")
        return DataCube(self._dims, dict(zip(self._cells, (float(v) for v in values))))


def build_cube(records: Iterable[tuple[Sequence[str], float]], dims: Sequence[Dimension]) -> DataCube:
    dims = tuple(dims)
    cells: dict[Coordinate, float] = {}
    for labels, measure in records:
        labels = tuple(labels)
        if len(labels) != len(dims):
            raise ArityMismatch(f"record {labels} has {len(labels)} labels, expected {len(dims)}")
        coord = tuple(d.index(lab) for d, lab in zip(dims, labels))
        if coord in cells:
            raise DuplicateCell(f"cell {labels} appears more than once")
        cells[coord] = float(measure)
    return DataCube(dims, cells)


def enumerate_projections(coord: Sequence[int]) -> list[Projection]:
    """All strict-subset projections of ``coord``, smallest subsets first."""
    n = len(coord)
    return [
        Projection.of(coord, positions)
        for k in range(n)
        for positions in itertools.combinations(range(n), k)
    ]


def view_cells(cube: DataCube, proj: Projection) -> list[tuple[Coordinate, float]]:
    proj.check(cube.dimensions)
    if not proj.fixed:
        return list(cube.cells.items())
    mask = np.ones(len(cube), dtype=bool)
    for p, i in proj.fixed:
        mask &= cube.coords[:, p] == i
    keys = list(cube.cells)
    return [(keys[j], cube.values[j].item()) for j in np.flatnonzero(mask)]


def read_csv(
    path: str | Path,
    dim_columns: Sequence[str],
    measure_column: str,
    delimiter: str = ",",
) -> DataCube:
    """Load a cube from a CSV file with one column per dimension.

    Categories are the distinct values of each dimension column, sorted
    lexicographically.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        missing = [c for c in (*dim_columns, measure_column) if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            raw = row[measure_column]
            try:
                y = float(raw)
            except (TypeError, ValueError):
                raise ParseError(
                    f"{path}:{lineno}: column {measure_column!r} value {raw!r} is not a number"
                ) from None
            records.append((tuple(row[c] for c in dim_columns), y))
    dims = [
        Dimension(name, tuple(sorted({labels[k] for labels, _ in records})))
        for k, name in enumerate(dim_columns)
    ] if records else [Dimension(name, ("",)) for name in dim_columns]
    return build_cube(records, dims)


def write_csv(cube: DataCube, path: str | Path, measure_column: str = "y", delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow([d.name for d in cube.dimensions] + [measure_column])
        for labels, y in cube.to_records():
            writer.writerow([*labels, _fmt(y)])


def _fmt(x: float) -> str:
    # integral measures print without a trailing ".0" so synthetic cubes stay readable
    if float(x).is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(float(x))
