import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatiodlm.data import CompletedData, ObservedDataset, TimeClass, as_completed, build_layout, unvec, vec
from spatiodlm.spatial import SiteSet


def test_worked_layout_example():
    # N=4, q=2; observed at 1-based vec positions 1, 2, 4, 7, 8
    mask = np.zeros(8, dtype=bool)
    mask[[0, 1, 3, 6, 7]] = True
    lay = build_layout(mask)
    names = [f"Y{n + 1}{i + 1}" for i in range(2) for n in range(4)]
    assert [names[k] for k in lay.obs_idx] == ["Y11", "Y21", "Y41", "Y32", "Y42"]
    assert [names[k] for k in lay.mis_idx] == ["Y31", "Y12", "Y22"]
    assert lay.kind is TimeClass.PARTIAL


def test_trivial_layouts():
    full = build_layout(np.ones(6, dtype=bool))
    assert full.kind is TimeClass.COMPLETE
    assert np.array_equal(full.permutation, np.arange(6))
    np.testing.assert_array_equal(full.permutation_matrix(), np.eye(6))
    empty = build_layout(np.zeros(6, dtype=bool))
    assert empty.kind is TimeClass.MISSING and empty.n_obs == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=30), st.integers(0, 10_000))
def test_permutation_round_trip(mask, seed):
    lay = build_layout(mask)
    y = np.random.default_rng(seed).standard_normal(len(mask))
    permuted = lay.permutation_matrix() @ y
    assert np.array_equal(np.concatenate([y[lay.obs_idx], y[lay.mis_idx]]), permuted)
    back = np.empty_like(y)
    back[lay.permutation] = permuted
    assert np.array_equal(back, y)
    assert lay.n_obs + lay.n_mis == len(mask)


def test_vec_is_column_stacking():
    m = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(vec(m), [0, 2, 4, 1, 3, 5])
    assert np.array_equal(unvec(vec(m), 3, 2), m)


def _dataset():
    sites = SiteSet(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    y = np.arange(12.0).reshape(2, 3, 2)
    y[0, 1, 0] = np.nan
    y[1, 0, 1] = np.nan
    y[1, 2, 1] = np.nan
    return ObservedDataset(sites, y)


def test_missing_positions_order_and_completion():
    data = _dataset()
    t, n, i = data.missing_positions()
    assert list(zip(t, n, i)) == [(0, 1, 0), (1, 0, 1), (1, 2, 1)]
    filled = CompletedData.from_dataset(data, np.array([-1.0, -2.0, -3.0]))
    assert np.array_equal(filled.imputed_values(), [-1.0, -2.0, -3.0])
    obs = data.observed
    assert np.array_equal(filled.filled[obs], data.responses[obs])
    np.testing.assert_allclose(data.missing_fractions(), [1 / 6, 2 / 6])
    with pytest.raises(ValueError):
        as_completed(data)
    with pytest.raises(ValueError):
        CompletedData.from_dataset(data)


def test_dataset_shape_checks():
    sites = SiteSet(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(ValueError):
        ObservedDataset(sites, np.zeros((2, 4, 1)))
