import math

import numpy as np
import pytest
import torch

from cmrrecon.errors import ValidationError
from cmrrecon.sampling import (
    CHALLENGE_ACCELERATIONS,
    TRAJECTORIES,
    apply_mask,
    make_gaussian_mask,
    make_mask,
    make_pseudo_radial_mask,
    make_uniform_mask,
    make_uniform_mask_stack,
    rasterize_spokes,
)

from conftest import rand_complex


def test_uniform_af1_is_full():
    assert make_uniform_mask(16, 32, 1, 4).data.min() == 1.0


def test_uniform_example_columns():
    m = make_uniform_mask(8, 64, 4, 16, offset=0)
    cols = set(np.nonzero(m.data[0])[0].tolist())
    oracle = set(range(0, 64, 4)) | set(range(24, 40))
    assert cols == oracle
    # 16 strided + 16 ACS columns, 4 of them shared
    assert len(cols) == 28


def test_uniform_deterministic_and_column_constant():
    a = make_uniform_mask(32, 64, 8, 16, offset=3)
    b = make_uniform_mask(32, 64, 8, 16, offset=3)
    assert np.array_equal(a.data, b.data)
    assert (a.data == a.data[:1]).all()


def test_uniform_rejects_wide_acs():
    with pytest.raises(ValidationError):
        make_uniform_mask(8, 16, 4, 16)


def test_uniform_stack_offsets_advance():
    m = make_uniform_mask_stack(8, 32, 4, frames=3, acs_lines=0)
    assert m.data.shape == (3, 8, 32)
    for t in range(3):
        assert np.nonzero(m.data[t, 0])[0][0] == t


def test_gaussian_af1_and_budget_met_by_acs():
    assert make_gaussian_mask(8, 32, 1, 4, seed=0).data.min() == 1.0
    m = make_gaussian_mask(8, 64, 4, 16, seed=5)
    assert int(m.data[0].sum()) == 16
    assert m.data[0, 24:40].all()


def test_gaussian_exact_column_count():
    for seed in range(5):
        m = make_gaussian_mask(8, 128, 4, 16, seed=seed)
        assert int(m.data[0].sum()) == round(128 / 4)
        assert (m.data == m.data[:1]).all()


def test_gaussian_concentrates_near_center():
    # Monte-Carlo: mean |column - center| of the randomly drawn (non-ACS) lines
    # is smaller than for equispaced lines with the same budget.
    W, af, acs = 128, 4, 16
    center = W // 2
    acs_cols = set(range(56, 72))
    gauss = []
    for seed in range(1000):
        cols = np.nonzero(make_gaussian_mask(1, W, af, acs, seed=seed).data[0])[0]
        gauss.extend(abs(c - center) for c in cols if c not in acs_cols)
    uni_cols = np.nonzero(make_uniform_mask(1, W, af, acs).data[0])[0]
    uni = [abs(c - center) for c in uni_cols if c not in acs_cols]
    assert np.mean(gauss) < np.mean(uni)


def _bresenham(y0, x0, y1, x1):
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    while True:
        pts.append((y0, x0))
        if (y0, x0) == (y1, x1):
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def test_perpendicular_spokes_match_bresenham():
    n = 9
    m = rasterize_spokes(n, n, [0.0, math.pi / 2])
    oracle = np.zeros((n, n))
    for (a, b) in (((4, 0), (4, 8)), ((0, 4), (8, 4))):
        for y, x in _bresenham(*a, *b):
            oracle[y, x] = 1
    assert np.array_equal(m, oracle)


def test_diagonal_spoke_matches_bresenham():
    m = rasterize_spokes(9, 9, [math.pi / 4])
    oracle = np.zeros((9, 9))
    for y, x in _bresenham(0, 0, 8, 8):
        oracle[y, x] = 1
    assert np.array_equal(m, oracle)


def test_radial_af1_and_acs():
    assert make_pseudo_radial_mask(16, 16, 1, 4).data.min() == 1.0
    m = make_pseudo_radial_mask(64, 64, 8, 16, seed=2)
    assert m.data[:, 24:40].all()


@pytest.mark.parametrize("af", [4, 8, 12, 16, 20, 24])
def test_radial_fraction_within_tolerance(af):
    m = make_pseudo_radial_mask(128, 128, af, 0, seed=af)
    frac = m.data.mean()
    assert 0.85 / af <= frac <= 1.15 / af


def test_radial_point_symmetric_on_odd_grid():
    for seed in range(3):
        m = make_pseudo_radial_mask(65, 65, 6, 0, seed=seed).data
        assert np.array_equal(m, m[::-1, ::-1])


@pytest.mark.parametrize("trajectory", TRAJECTORIES)
def test_acs_always_sampled_and_deterministic(trajectory):
    for af in CHALLENGE_ACCELERATIONS:
        a = make_mask(trajectory, 64, 128, af, 16, seed=11)
        b = make_mask(trajectory, 64, 128, af, 16, seed=11)
        assert np.array_equal(a.data, b.data)
        assert a.data[:, 56:72].all()
        assert set(np.unique(a.data)) <= {0.0, 1.0}


def test_unknown_trajectory():
    with pytest.raises(ValidationError):
        make_mask("spiral", 8, 8, 4, 2)


def test_apply_mask_properties():
    k = rand_complex(3, 2, 8, 16, seed=0)
    ones = np.ones((8, 16), np.float32)
    assert torch.equal(apply_mask(k, ones), k)
    assert not apply_mask(k, np.zeros((8, 16), np.float32)).abs().any()
    m = make_uniform_mask(8, 16, 4, 4)
    once = apply_mask(k, m)
    assert torch.equal(apply_mask(once, m), once)
    with pytest.raises(ValidationError):
        apply_mask(k, np.ones((8, 8), np.float32))


def test_apply_per_frame_mask():
    k = rand_complex(3, 2, 8, 16, seed=1)
    m = make_uniform_mask_stack(8, 16, 4, frames=3, acs_lines=0)
    out = apply_mask(k, m)
    for t in range(3):
        assert torch.equal(out[t], k[t] * torch.from_numpy(m.data[t]).to(torch.float64))
