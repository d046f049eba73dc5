import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecprune.errors import ConfigError, InputDataError
from ecprune.etcs import (
    EtcsParams,
    KeyframeSet,
    initial_selection,
    nearest_frame,
    select_keyframes,
    uniform_keyframes,
)
from ecprune.events import ActivityProfile, WindowingParams

from oracles import etcs_reference

DT = 1_000


def profile(flux, origin=0):
    flux = np.asarray(flux, dtype=np.int64)
    return ActivityProfile(flux, np.abs(np.diff(flux)), WindowingParams(DT, origin), origin)


def one_frame_per_window(n):
    return [int((k + 0.5) * DT) for k in range(n)]


def test_delta_tie_then_flux_tie():
    prof = profile([0, 0, 9, 0])
    assert prof.deltas.tolist() == [0, 9, 9]
    params = EtcsParams(n_target=2, delta_share=0.5, min_gap=0)
    assert initial_selection(prof.flux, prof.deltas, params) == [0, 2]
    ks = select_keyframes(prof, params, one_frame_per_window(4))
    assert ks.window_indices == [0, 2]
    ref_windows, ref_frames = etcs_reference([0, 0, 9, 0], 2, 0.5, one_frame_per_window(4), prof.window_mid)
    assert (ks.window_indices, ks.frame_indices) == (ref_windows, ref_frames)


def test_uniform_flux_budget_equals_windows():
    prof = profile([5, 5, 5, 5])
    ks = select_keyframes(prof, EtcsParams(n_target=4), one_frame_per_window(4))
    assert ks.window_indices == [0, 1, 2, 3] and ks.frame_indices == [0, 1, 2, 3]


@given(st.lists(st.integers(0, 6), min_size=1, max_size=12), st.sampled_from([0.0, 0.5, 1.0]))
def test_single_target_is_argmax(flux, share):
    prof = profile(flux)
    ks = select_keyframes(prof, EtcsParams(n_target=1, delta_share=share), one_frame_per_window(len(flux)))
    if share > 0 and len(flux) > 1:
        d = np.abs(np.diff(flux))
        expected = 1 + int(np.argmax(d))
    else:
        expected = int(np.argmax(flux))
    assert ks.window_indices == [expected]


@given(
    st.lists(st.integers(0, 5), min_size=1, max_size=14),
    st.integers(1, 10),
    st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]),
    st.lists(st.integers(0, 20_000), min_size=1, max_size=12, unique=True),
)
def test_matches_reference_enumeration(flux, n_target, share, frame_times):
    frame_times = sorted(frame_times)
    prof = profile(flux)
    ks = select_keyframes(prof, EtcsParams(n_target, share, 0), frame_times)
    ref_windows, ref_frames = etcs_reference(flux, n_target, share, frame_times, prof.window_mid)
    assert ks.window_indices == ref_windows
    assert ks.frame_indices == ref_frames
    assert ks.frame_times == [frame_times[f] for f in ref_frames]


@given(st.lists(st.integers(0, 9), min_size=1, max_size=16), st.integers(1, 16), st.floats(0, 1))
def test_coverage_is_monotone_in_budget(flux, n, share):
    frames = one_frame_per_window(len(flux))
    small = select_keyframes(profile(flux), EtcsParams(n, share), frames)
    large = select_keyframes(profile(flux), EtcsParams(n + 1, share), frames)
    assert len(small) == min(n, len(flux))
    assert set(small.frame_indices) <= set(large.frame_indices)


@given(st.lists(st.integers(0, 9), min_size=2, max_size=20), st.integers(1, 8), st.integers(1, 5))
def test_refinement_keeps_budget_and_uniqueness(flux, n, gap):
    frames = one_frame_per_window(len(flux))
    ks = select_keyframes(profile(flux), EtcsParams(n, 0.5, gap, 0.5), frames)
    assert len(ks) == min(n, len(flux))
    assert ks.frame_indices == sorted(set(ks.frame_indices))


def test_refinement_drops_clustered_window_and_fills_gap():
    flux = [5, 2, 2, 2, 2, 2, 2, 2, 2, 2, 9, 1, 2]
    params = EtcsParams(n_target=4, delta_share=1.0, min_gap=3, low_activity_quantile=0.25)
    prof = profile(flux)
    assert initial_selection(prof.flux, prof.deltas, params) == [1, 10, 11, 12]
    # 11 sits next to 10 with S below the quantile (2): it goes, and the 1..10 gap gets window 5
    ks = select_keyframes(prof, params, one_frame_per_window(len(flux)))
    assert ks.window_indices == [1, 5, 10, 12]


def test_dropped_window_is_not_backfilled_first():
    flux = [2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 9, 1, 2]
    params = EtcsParams(n_target=2, delta_share=1.0, min_gap=3, low_activity_quantile=0.25)
    prof = profile(flux)
    assert initial_selection(prof.flux, prof.deltas, params) == [10, 11]
    ks = select_keyframes(prof, params, one_frame_per_window(len(flux)))
    assert ks.window_indices == [0, 10]


def test_nearest_frame_tie_goes_earlier():
    ft = np.array([0.0, 100.0, 200.0])
    assert nearest_frame(50, ft) == 0
    assert nearest_frame(51, ft) == 1
    assert nearest_frame(-5, ft) == 0
    assert nearest_frame(999, ft) == 2


def test_more_windows_than_frames_dedups():
    flux = [9, 8, 7, 6, 5, 4]
    ks = select_keyframes(profile(flux), EtcsParams(n_target=6, delta_share=0.0), [0, 6_000])
    assert ks.frame_indices == [0, 1]
    assert ks.window_indices == [0, 3]


def test_manifest_round_trip():
    ks = KeyframeSet([0, 4], [1, 7], [33_000, 233_000])
    text = ks.to_manifest()
    assert text == "1,0,33000\n7,4,233000\n"
    assert KeyframeSet.from_manifest("# frame,window,t\n" + text) == ks
    with pytest.raises(InputDataError, match="line 1"):
        KeyframeSet.from_manifest("1,2\n")


def test_uniform_fallback():
    prof = profile([0, 0, 0])
    ks = uniform_keyframes([0, 500, 1_000, 1_500, 2_000, 2_500], 3, prof)
    assert ks.frame_indices == [0, 2, 5]
    assert ks.window_indices == [0, 1, 2]


def test_validation():
    with pytest.raises(ConfigError):
        EtcsParams(n_target=0)
    with pytest.raises(ConfigError):
        EtcsParams(delta_share=1.5)
    with pytest.raises(InputDataError):
        select_keyframes(profile([1, 2]), EtcsParams(), [])
    with pytest.raises(InputDataError):
        select_keyframes(profile([1, 2]), EtcsParams(), [5, 5])
