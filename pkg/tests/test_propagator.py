import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kssmooth.errors import DegenerateZeroMode, InvalidParameters
from kssmooth.grid_spectral import ComplexField, GridSpec, weighted_l2_norm
from kssmooth.propagator import (
    EvolutionParams,
    WavePacketSum,
    check_window,
    evolve,
    packet_family,
    polar_spacetime_norm,
    smoothed_evolve,
    spacetime_norms,
    spacetime_weighted_norm,
)
from kssmooth.weights import Constant, Indicator, sample_weight


def _random_field(rng, grid):
    return ComplexField(grid, "physical", rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape))


def _l2(f):
    return float(np.sqrt(np.sum(np.abs(f.samples) ** 2) * f.grid.cell_volume))


@pytest.mark.parametrize("dim,N", [(1, 64), (2, 32), (3, 16)])
def test_evolution_is_unitary_and_a_group(dim, N, rng):
    g = GridSpec(dim, N, 5.0)
    f = _random_field(rng, g)
    for gamma, t1, t2 in [(2.0, 0.3, -1.1), (1.5, 2.0, 0.7), (3.2, -0.4, 0.9)]:
        u = evolve(f, t1, gamma)
        assert _l2(u) / _l2(f) == pytest.approx(1, abs=1e-12)
        both = evolve(u, t2, gamma)
        assert np.allclose(both.samples, evolve(f, t1 + t2, gamma).samples, atol=1e-11)
    assert np.allclose(evolve(f, 0.0, 2.0).samples, f.samples, atol=1e-13)


def test_plane_wave():
    g = GridSpec(2, 32, np.pi * 4)
    k = np.array([3 * np.pi / g.half_width, -2 * np.pi / g.half_width])
    f = ComplexField(g, "physical", np.exp(1j * g.nodes @ k))
    t, gamma, s = 0.7, 1.6, 0.4
    kn = np.linalg.norm(k)
    out = smoothed_evolve(f, t, gamma, s)
    assert np.allclose(out.samples, kn**s * np.exp(-1j * t * kn**gamma) * f.samples, atol=1e-12)


def test_smoothing_commutes_with_evolution(rng):
    g = GridSpec(2, 32, 4.0)
    f = _random_field(rng, g)
    a = smoothed_evolve(evolve(f, 0.8, 2.0), 0.0, 2.0, 0.6)
    b = evolve(smoothed_evolve(f, 0.0, 2.0, 0.6), 0.8, 2.0)
    assert np.allclose(a.samples, b.samples, atol=1e-12)
    assert np.allclose(smoothed_evolve(f, 0.5, 2.0, 0.0).samples, evolve(f, 0.5, 2.0).samples, atol=1e-13)


def test_negative_order_needs_mean_zero(rng):
    g = GridSpec(1, 32, 4.0)
    with pytest.raises(DegenerateZeroMode):
        smoothed_evolve(ComplexField(g, "physical", np.ones(32)), 0.1, 2.0, -0.3)


def test_params_validation():
    for bad in [dict(gamma=1.0, s=0, T=1, time_nodes=32), dict(gamma=2, s=0, T=0, time_nodes=32),
                dict(gamma=2, s=0, T=1, time_nodes=8)]:
        with pytest.raises(InvalidParameters):
            EvolutionParams(**bad)
    p = EvolutionParams(2.0, 0.0, 1.0, 21).with_window(3.0)
    assert p.T == 3.0 and p.time_nodes == 61


def test_constant_weight_conserves(rng):
    g = GridSpec(2, 32, 4.0)
    f = _random_field(rng, g)
    for T in (0.5, 2.0):
        p = EvolutionParams(2.0, 0.0, T, 33)
        assert spacetime_weighted_norm(f, p, Constant(1.0)) == pytest.approx(_l2(f) * np.sqrt(2 * T), rel=1e-12)
    assert spacetime_weighted_norm(ComplexField(g, "physical", np.zeros(g.shape)), p, Constant(1.0)) == 0


def test_spacetime_matches_slice_sum(rng):
    g = GridSpec(2, 16, 3.0)
    f = _random_field(rng, g)
    p = EvolutionParams(1.7, 0.3, 1.5, 17)
    w = Indicator((-1.0, -2.0), (2.0, 1.0))
    slices = [weighted_l2_norm(smoothed_evolve(f, t, 1.7, 0.3), w) ** 2 for t in p.times]
    assert spacetime_weighted_norm(f, p, w) == pytest.approx(np.sqrt(np.dot(p.trapezoid_weights, slices)),
                                                             rel=1e-11)
    # more than 64 steps exercises the periodic resynchronization
    long = EvolutionParams(1.7, 0.3, 1.5, 151)
    slices = [weighted_l2_norm(smoothed_evolve(f, t, 1.7, 0.3), w) ** 2 for t in long.times]
    assert spacetime_weighted_norm(f, long, w) == pytest.approx(np.sqrt(np.dot(long.trapezoid_weights, slices)),
                                                                rel=1e-11)


@given(st.lists(st.floats(0.2, 4.0), min_size=2, max_size=4, unique=True))
def test_monotone_in_window(Ts):
    g = GridSpec(2, 16, 8.0)
    f = packet_family(1, 1, 2, band=(0.5, 1.0), sigma=1.5)[0].sample(g, decay_tol=1e-3)
    w = sample_weight(Indicator((-2.0, -2.0), (2.0, 2.0)), g)
    vals = [spacetime_norms(f, EvolutionParams(2.0, 0.0, T, 16).with_window(T, 0.01), [w])[0] for T in sorted(Ts)]
    assert np.all(np.diff(vals) >= -1e-9 * vals[-1])


def test_half_derivative_identity_in_one_dimension():
    # for one-signed frequencies, int_R ||D|^{1/2} u(x0, t)|^2 dt = ||f||^2 / 2 at every x0
    g = GridSpec(1, 2048, 256.0)
    pk = WavePacketSum(np.array([[0.0], [3.0]]), np.array([[3.0], [4.0]]), np.array([1.0, 0.5j]), 2.0)
    f = pk.sample(g)
    for x0 in (0.0, 5.0):
        w = sample_weight(Indicator((x0,), (x0 + g.spacing,)), g)
        val = spacetime_norms(f, EvolutionParams(2.0, 0.5, 10.0, 1001), [w])[0]
        assert val / np.sqrt(g.spacing) == pytest.approx(_l2(f) / np.sqrt(2), rel=1e-9)


def test_polar_route_agrees_with_time_quadrature():
    g = GridSpec(2, 256, 64.0)
    pk = packet_family(3, 1, 2, band=(1.5, 2.0), sigma=1.5)[0]
    w = sample_weight(Indicator((-4.0, -4.0), (4.0, 4.0)), g)
    direct = spacetime_norms(pk.sample(g), EvolutionParams(2.0, 0.3, 6.0, 241), [w])[0]
    polar = polar_spacetime_norm(pk, 2.0, 0.3, w, g, (1e-6, 6.0), radial_nodes=96)
    assert direct == pytest.approx(polar, rel=0.01)
    assert direct < polar


def test_packet_transform_is_exact():
    g = GridSpec(2, 64, 16.0)
    pk = packet_family(5, 1, 2, band=(1.0, 1.5), sigma=1.5)[0]
    from kssmooth.grid_spectral import forward_transform

    fhat = forward_transform(pk.sample(g))
    xi = np.stack(np.meshgrid(*([np.fft.fftfreq(64, g.spacing) * 2 * np.pi] * 2), indexing="ij"), -1)
    assert np.allclose(fhat.samples, pk.transform(xi), atol=1e-9)


def test_window_check_and_localization():
    g = GridSpec(2, 64, 16.0)
    pk = packet_family(0, 1, 2, band=(1.0, 1.5), sigma=1.5)[0]
    check_window(g, EvolutionParams(2.0, 0.0, 0.5, 16), pk.max_frequency())
    with pytest.raises(InvalidParameters):
        check_window(g, EvolutionParams(2.0, 0.0, 5.0, 16), pk.max_frequency())
    with pytest.raises(InvalidParameters):
        WavePacketSum(np.array([[15.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([1.0]), 1.5).sample(g)
