from pathlib import Path

import pytest

from rodd.cube import read_csv

DATA = Path(__file__).parent / "data"
TOY_DIMS = ["product", "month", "city"]


@pytest.fixture
def toy_cube():
    return read_csv(DATA / "toy_cube.csv", TOY_DIMS, "sales")


@pytest.fixture
def toy_csv():
    return DATA / "toy_cube.csv"
