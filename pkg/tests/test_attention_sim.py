import numpy as np
import pytest

from ecprune.attention_sim import (
    BiasProfile,
    default_multipliers,
    random_attention_inputs,
    synth_biased_map,
    tiny_attention,
)
from ecprune.bias import partition_regions, peripheral_ratio
from ecprune.earf import attention_readout
from ecprune.errors import ConfigError, InputDataError

from oracles import naive_softmax_attention

GRID = partition_regions(12, 18, 0.15)


def readout_mass(amap, frame=0):
    toks, s = attention_readout(amap, frame)
    mass = np.zeros(GRID.rows * GRID.cols)
    mass[toks] = s
    return mass


@pytest.mark.parametrize("m", [1.0, 2.0, 5.64])
def test_injected_ratio_round_trips(m):
    amap = synth_biased_map(GRID, BiasProfile(noise_scale=0.0), layer=9, seed=5, multiplier=m)
    assert abs(peripheral_ratio(readout_mass(amap), GRID) - m) <= 1e-9


def test_layer_group_multipliers():
    mult = default_multipliers()
    assert len(mult) == 28
    assert mult[0] == mult[7] == 3.35 and mult[8] == mult[16] == 5.64 and mult[17] == mult[27] == 2.86
    amap = synth_biased_map(GRID, BiasProfile(), layer=12)
    assert abs(peripheral_ratio(readout_mass(amap), GRID) - 5.64) <= 1e-9


def test_row_sums_and_layout():
    active = {0: range(0, 216, 2), 3: range(216)}
    for seed in range(5):
        amap = synth_biased_map(GRID, BiasProfile(noise_scale=0.4, seed=seed), layer=4, active=active, n_text=6, n_queries=3)
        assert np.all(np.abs(amap.scores.sum(axis=1) - 1.0) <= 1e-9)
        assert amap.scores.shape == (3, 108 + 216 + 6)
        assert amap.frames() == [0, 3]


def test_noise_changes_ratio_but_keeps_direction():
    amap = synth_biased_map(GRID, BiasProfile(noise_scale=0.3, seed=1), layer=10)
    r = peripheral_ratio(readout_mass(amap), GRID)
    assert r != 5.64 and 4.5 < r < 7.0


def test_determinism():
    prof = BiasProfile(noise_scale=0.2, seed=42)
    a = synth_biased_map(GRID, prof, layer=3, active={1: range(216)})
    b = synth_biased_map(GRID, prof, layer=3, active={1: range(216)})
    assert a.scores.tobytes() == b.scores.tobytes()
    c = synth_biased_map(GRID, BiasProfile(noise_scale=0.2, seed=43), layer=3, active={1: range(216)})
    assert a.scores.tobytes() != c.scores.tobytes()


def test_validation():
    with pytest.raises(ConfigError):
        BiasProfile(multipliers=(1.0, -2.0))
    with pytest.raises(ConfigError):
        synth_biased_map(GRID, BiasProfile(), 0, n_text=2, n_queries=3)
    with pytest.raises(InputDataError):
        synth_biased_map(GRID, BiasProfile(), 0, active={0: [216]})


def test_single_key():
    alpha, z = tiny_attention([[0.3, -1.0]], [[2.0, 0.5]], [[4.0, -7.0]])
    assert alpha.tolist() == [[1.0]] and z.tolist() == [[4.0, -7.0]]


def test_identical_keys_uniform():
    alpha, _ = tiny_attention(np.ones((2, 3)), np.tile([0.2, 0.1, -0.4], (5, 1)), np.eye(5))
    assert np.all(alpha == 0.2)


def test_random_instance_matches_naive():
    q, k, v = random_attention_inputs(8, 8, 8, 8, seed=99)
    alpha, z = tiny_attention(q, k, v)
    ref_alpha, ref_z = naive_softmax_attention(q.tolist(), k.tolist(), v.tolist(), 8)
    assert np.all(np.abs(alpha.sum(axis=1) - 1.0) <= 1e-9)
    assert np.allclose(alpha, ref_alpha, atol=1e-12) and np.allclose(z, ref_z, atol=1e-12)


def test_inputs_deterministic():
    a = random_attention_inputs(2, 3, 4, 5, seed=7)
    b = random_attention_inputs(2, 3, 4, 5, seed=7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert a[2].shape == (3, 5)
