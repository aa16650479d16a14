import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kssmooth.errors import DegenerateZeroMode, InvalidParameters, InvalidWeight, SideMismatch
from kssmooth.grid_spectral import (
    ComplexField,
    GridSpec,
    dump_field,
    forward_transform,
    fractional_multiplier,
    from_function,
    inverse_transform,
    load_field,
    make_grid,
    physical_field,
    weighted_l2_norm,
)
from kssmooth.weights import Constant, GaussianBump


def random_field(rng, grid, side="physical"):
    z = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    return ComplexField(grid, side, z)


def test_make_grid_examples():
    g = make_grid(1, 8, math.pi)
    assert g.spacing == pytest.approx(math.pi / 4)
    assert sorted(np.round(g.frequency_axis).astype(int)) == list(range(-4, 4))
    g = make_grid(2, 16, 8)
    assert g.size == 256 and g.spacing == 1.0
    g = make_grid(3, 8, 4)
    assert g.size == 512 and g.frequency_step == pytest.approx(math.pi / 4)


@pytest.mark.parametrize("args", [(2, 12, 1.0), (2, 4, 1.0), (4, 8, 1.0), (0, 8, 1.0), (2, 8, 0.0)])
def test_make_grid_rejects(args):
    with pytest.raises(InvalidParameters):
        make_grid(*args)


@given(st.sampled_from([1, 2, 3]), st.integers(3, 6), st.floats(0.1, 100))
def test_grid_invariants(dim, logn, L):
    if dim == 3:
        logn = min(logn, 4)
    g = GridSpec(dim, 2**logn, L)
    assert g.spacing * g.points_per_axis == pytest.approx(2 * L, rel=1e-15)
    modes = set(g.mode_axis.tolist())
    unpaired = [m for m in modes if -m not in modes]
    assert unpaired == [-g.points_per_axis // 2]
    assert g.nodes.shape == g.shape + (dim,)


def test_plane_wave_single_mode():
    g = GridSpec(2, 16, 3.0)
    k = np.array([2, -3])
    f = from_function(g, lambda x: np.exp(1j * (x @ (k * g.frequency_step))))
    fh = forward_transform(f).samples
    idx = tuple(int(m) % 16 for m in k)
    assert fh[idx] == pytest.approx((2 * g.half_width) ** 2, rel=1e-13)
    fh[idx] = 0
    assert np.max(np.abs(fh)) < 1e-10


def test_zero_field():
    g = GridSpec(1, 8, 1.0)
    z = physical_field(g, np.zeros(8))
    assert np.all(forward_transform(z).samples == 0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([(1, 64), (2, 16), (3, 8)]), st.floats(0.5, 20))
def test_parseval_and_roundtrip(seed, dims, L):
    rng = np.random.default_rng(seed)
    g = GridSpec(dims[0], dims[1], L)
    f = random_field(rng, g)
    fh = forward_transform(f)
    assert fh.norm() == pytest.approx(f.norm(), rel=1e-12)
    back = inverse_transform(fh)
    assert np.linalg.norm(back.samples - f.samples) <= 1e-12 * np.linalg.norm(f.samples)


def test_side_mismatch():
    g = GridSpec(1, 8, 1.0)
    f = physical_field(g, np.ones(8))
    with pytest.raises(SideMismatch):
        inverse_transform(f)
    with pytest.raises(SideMismatch):
        forward_transform(forward_transform(f))
    with pytest.raises(SideMismatch):
        fractional_multiplier(f, 0.5)


def test_fractional_multiplier_examples(rng):
    g = GridSpec(2, 16, 4.0)
    f = random_field(rng, g)
    fh = forward_transform(f)
    assert np.array_equal(fractional_multiplier(fh, 0.0).samples, fh.samples)
    k = np.array([1, 2]) * g.frequency_step
    pw = forward_transform(from_function(g, lambda x: np.exp(1j * (x @ k))))
    out = inverse_transform(fractional_multiplier(pw, 0.5)).samples
    expect = np.linalg.norm(k) ** 0.5 * np.exp(1j * (g.nodes @ k))
    assert np.max(np.abs(out - expect)) < 1e-12
    zero = (0, 0)
    mean_zero = fh.with_samples(np.where(np.arange(g.size).reshape(g.shape) == 0, 0, fh.samples))
    a = fractional_multiplier(fractional_multiplier(mean_zero, 0.3), 0.7).samples
    b = fractional_multiplier(mean_zero, 1.0).samples
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))
    assert fractional_multiplier(fh, 0.5).samples[zero] == 0


def test_negative_order_needs_mean_zero(rng):
    g = GridSpec(1, 16, 1.0)
    fh = forward_transform(physical_field(g, 1.0 + rng.normal(size=16)))
    with pytest.raises(DegenerateZeroMode):
        fractional_multiplier(fh, -0.5)
    ok = fh.with_samples(np.where(np.arange(16) == 0, 0, fh.samples))
    fractional_multiplier(ok, -0.5)


def test_weighted_norm(rng):
    g = GridSpec(2, 16, 2.0)
    f = random_field(rng, g)
    assert weighted_l2_norm(f, Constant(1.0)) == pytest.approx(f.norm(), rel=1e-14)
    assert weighted_l2_norm(physical_field(g, np.zeros(g.shape)), GaussianBump((0.0, 0.0), 1.0)) == 0
    with pytest.raises(InvalidWeight):
        weighted_l2_norm(f, -np.ones(g.shape))


def test_weighted_norm_scales_with_weight(rng):
    g = GridSpec(2, 16, 2.0)
    f = random_field(rng, g)
    w = GaussianBump((0.5, 0.0), 0.7)
    assert weighted_l2_norm(f, w * 4.0) == pytest.approx(2 * weighted_l2_norm(f, w), rel=1e-13)


def test_dump_roundtrip(rng):
    g = GridSpec(2, 8, 1.5)
    f = random_field(rng, g)
    data = dump_field(f)
    assert len(data) == 32 + 8 * g.size
    assert data[:4] == b"KSFD"
    back = load_field(data)
    assert back.grid == g and back.side == "physical"
    assert np.allclose(back.samples, f.samples.astype(np.complex64))
