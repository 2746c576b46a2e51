import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import injection_ref
from rodd.cube import DataCube, Dimension
from rodd.errors import InsufficientData, ValidationError
from rodd.synth import (
    Effects,
    LabeledCube,
    SynthConfig,
    _div_round,
    add_noise,
    assemble_noiseless,
    gen_effects,
    inject_outliers,
    n_outliers,
    round_half_away,
    substream,
    synthesize,
)


def dims_for(shape):
    return [Dimension(f"d{p}", tuple(f"c{i}" for i in range(k))) for p, k in enumerate(shape)]


def test_round_half_away():
    assert round_half_away(100.5) == 101
    assert round_half_away(-100.5) == -101
    assert round_half_away(2.5) == 3
    assert round_half_away(2.4999) == 2
    assert list(round_half_away([0.5, 1.5, -0.5])) == [1, 2, -1]


@given(st.integers(-10**6, 10**6), st.integers(1, 50))
def test_div_round_is_exact_half_away(num, den):
    q = Fraction(abs(num), den) + Fraction(1, 2)
    expected = (1 if num >= 0 else -1) * (q.numerator // q.denominator)
    assert int(_div_round(np.array([num]), den)[0]) == expected


def table_one_effects(vc, city, month, i_pc, i_pm, i_cm):
    # dims: product, city, month with one category each
    return Effects(
        (np.array([vc]), np.array([city]), np.array([month])),
        {(0, 1): np.array([[i_pc]]), (0, 2): np.array([[i_pm]]), (1, 2): np.array([[i_cm]])},
    )


# product {VC}, location {Osaka, Berlin}, time {January, February}
TABLE_ONE = Effects(
    (np.array([98]), np.array([110, 87]), np.array([91, 93])),
    {
        (0, 1): np.array([[4, 0]]),
        (0, 2): np.array([[0, -3]]),
        (1, 2): np.array([[4, 0], [0, 5]]),
    },
)


def test_table_one_golden_cells():
    cube = assemble_noiseless(TABLE_ONE, dims_for((1, 2, 2)))
    assert cube.cells[(0, 0, 0)] == 101.0   # (98 + 110 + 91 + 106 + 95 + 103) / 6 = 100.5
    assert cube.cells[(0, 0, 1)] == 101.0
    assert cube.cells[(0, 1, 0)] == 92.0
    assert cube.cells[(0, 1, 1)] == 93.0    # 558 / 6


def test_table_one_combination_values():
    # every listed combination value, several of which sit exactly on .5
    e = TABLE_ONE.expected
    combos = {
        (0, 1): [[106, 93]],
        (0, 2): [[95, 94]],
        (1, 2): [[103, 102], [89, 93]],
    }
    for (a, b), want in combos.items():
        got = _div_round(e[a][:, None] + e[b][None, :] + TABLE_ONE.interactions[(a, b)], 2)
        assert got.tolist() == want


def test_combination_rounding_half_up():
    # (98 + 110 + 3) / 2 = 105.5 must round to 106
    eff = table_one_effects(98, 110, 91, 3, 0, 0)
    dims = dims_for((1, 1, 1))
    total = 98 + 110 + 91 + 106 + round_half_away((98 + 91) / 2) + round_half_away((110 + 91) / 2)
    assert assemble_noiseless(eff, dims).cells[(0, 0, 0)] == round_half_away(total / 6)


def test_constant_effects_give_constant_cube():
    cfg = SynthConfig(dims=(("a", 3), ("b", 4), ("c", 2)), value_ranges=((70, 70),) * 3,
                      interaction_range=(0, 0))
    eff = gen_effects(cfg, substream(0, "effects"))
    assert all(np.all(e == 70) for e in eff.expected)
    cube = assemble_noiseless(eff, cfg.dimensions())
    assert set(cube.values.tolist()) == {70.0}


def test_effect_counts():
    cfg = SynthConfig(dims=(("a", 3), ("b", 3), ("c", 3)), value_ranges=((1, 9),) * 3)
    eff = gen_effects(cfg, substream(4, "effects"))
    assert sum(len(e) for e in eff.expected) == 9
    assert sum(m.size for m in eff.interactions.values()) == 27
    for e, (lo, hi) in zip(eff.expected, cfg.value_ranges):
        assert e.min() >= lo and e.max() <= hi
    for m in eff.interactions.values():
        assert m.min() >= -10 and m.max() <= 10


def test_effects_deterministic():
    cfg = SynthConfig()
    a = gen_effects(cfg, substream(7, "effects"))
    b = gen_effects(cfg, substream(7, "effects"))
    assert all(np.array_equal(x, y) for x, y in zip(a.expected, b.expected))
    assert all(np.array_equal(a.interactions[k], b.interactions[k]) for k in a.interactions)


def random_cube(shape, rng, lo=50, hi=150):
    cells = {c: float(rng.integers(lo, hi + 1)) for c in itertools.product(*[range(k) for k in shape])}
    return DataCube(dims_for(shape), cells)


@pytest.mark.parametrize("seed", range(20))
def test_injection_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    cube = random_cube((3, 3, 3), rng)
    injected, mask = inject_outliers(cube, 0.05, np.random.default_rng(seed + 100))
    assert len(mask) == 1
    expected = injection_ref(dict(cube.cells), (3, 3, 3), mask)
    for c, y in injected.cells.items():
        assert y == (expected[c] if c in mask else cube.cells[c])


def test_injection_larger_rate_oracle():
    rng = np.random.default_rng(1)
    cube = random_cube((5, 4, 6), rng)
    injected, mask = inject_outliers(cube, 0.1, rng)
    assert len(mask) == 12
    expected = injection_ref(dict(cube.cells), (5, 4, 6), mask)
    assert all(injected.cells[c] == expected[c] for c in mask)
    assert sum(injected.cells[c] != cube.cells[c] for c in cube.cells if c not in mask) == 0


def test_injection_degenerate_constant_cube():
    cube = DataCube(dims_for((3, 3, 3)), {c: 80.0 for c in itertools.product(range(3), repeat=3)})
    injected, mask = inject_outliers(cube, 0.1, np.random.default_rng(0))
    assert len(mask) == 3
    assert set(injected.values.tolist()) == {80.0}


def test_injection_errors():
    cube = random_cube((2, 2), np.random.default_rng(0))
    with pytest.raises(InsufficientData):
        inject_outliers(cube, 0.1, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        inject_outliers(cube, 0.6, np.random.default_rng(0))


def test_outlier_counts():
    assert n_outliers(0.0025, 27) == 1
    assert n_outliers(0.01, 1080) == 11
    assert n_outliers(0.05, 1080) == 54


def test_noise_identity_cases():
    cube = DataCube(dims_for((3, 3)), {c: 5.0 for c in itertools.product(range(3), repeat=2)})
    assert add_noise(cube, 2.5, np.random.default_rng(0)) == cube
    other = random_cube((4, 4), np.random.default_rng(2))
    assert add_noise(other, 1e9, np.random.default_rng(0)) == other


def test_noise_replay():
    cube = random_cube((6, 5), np.random.default_rng(3))
    out = add_noise(cube, 5.0, np.random.default_rng(11))
    step = round_half_away(float(np.std(cube.values)) / 5.0)
    u = np.random.default_rng(11).integers(-10, 11, size=len(cube))
    assert np.array_equal(out.values, np.maximum(cube.values + step * u, 1.0))


def test_noise_floor():
    cube = DataCube(dims_for((2, 2)), {(0, 0): 1.0, (0, 1): 1.0, (1, 0): 1.0, (1, 1): 1000.0})
    out = add_noise(cube, 0.5, np.random.default_rng(0))
    assert out.values.min() >= 1.0


def test_synthesize_default():
    lab = synthesize(SynthConfig(seed=3))
    assert len(lab.cube) == 1080
    assert len(lab.outlier_mask) == 11
    assert lab.cube.values.min() >= 1
    assert set(lab.cube.cells) == set(lab.noiseless.cells)
    changed = {c for c in lab.noiseless.cells if lab.injected.cells[c] != lab.noiseless.cells[c]}
    assert changed <= lab.outlier_mask
    assert lab.labels().sum() == 11


def test_synthesize_deterministic():
    a, b = synthesize(SynthConfig(seed=9)), synthesize(SynthConfig(seed=9))
    assert a.cube == b.cube and a.noiseless == b.noiseless and a.outlier_mask == b.outlier_mask


def test_distinct_seeds_distinct_cubes():
    cfg = SynthConfig(dims=(("a", 4), ("b", 4), ("c", 4)), value_ranges=((50, 150),) * 3)
    digests = {synthesize(cfg.with_(seed=s)).cube.values.tobytes() for s in range(100)}
    assert len(digests) >= 99


def test_injected_values_are_boundaries():
    lab = synthesize(SynthConfig(dims=(("a", 6), ("b", 5), ("c", 4)), value_ranges=((50, 150),) * 3,
                                 outlier_rate=0.05, seed=2))
    expected = injection_ref(dict(lab.noiseless.cells), (6, 5, 4), lab.outlier_mask)
    assert all(lab.injected.cells[c] == expected[c] for c in lab.outlier_mask)


def test_config_validation_and_json():
    with pytest.raises(ValidationError):
        SynthConfig(value_ranges=((0, 10), (1, 2), (1, 2)))
    with pytest.raises(ValidationError):
        SynthConfig(outlier_rate=0.5)
    with pytest.raises(ValidationError):
        SynthConfig(noise_divisor=0)
    cfg = SynthConfig(seed=2**63 + 5, noise_divisor=7.5)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_save_load_roundtrip(tmp_path):
    lab = synthesize(SynthConfig(dims=(("a", 5), ("b", 4), ("c", 4)), value_ranges=((50, 150),) * 3, seed=1))
    lab.save(tmp_path / "c")
    back = LabeledCube.load(tmp_path / "c")
    assert back.config == lab.config
    assert back.outlier_mask == lab.outlier_mask
    assert np.array_equal(back.cube.values, lab.cube.values)
    assert np.array_equal(back.noiseless.values, lab.noiseless.values)
