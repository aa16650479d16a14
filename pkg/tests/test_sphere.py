import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from kssmooth.errors import AnnulusExceedsBox, InvalidParameters
from kssmooth.grid_spectral import ComplexField, GridSpec
from kssmooth.sphere import (
    SPHERE_AREA,
    DyadicCutoff,
    bessel_j0,
    convolve_kernel,
    decay_quotient,
    dyadic_kernel,
    extension,
    kernel_symbol,
    sampled_kernel,
    sphere_rule,
    surface_measure_ft,
    surface_measure_ft_quadrature,
    surface_measure_ft_radial,
)


def _monomial_moment(n, powers):
    # int_{S^{n-1}} w^a = 2 prod Gamma(b_i) / Gamma(sum b_i), b_i = (a_i + 1)/2, zero if any a_i is odd
    if any(p % 2 for p in powers):
        return 0.0
    b = [(p + 1) / 2 for p in powers]
    return 2 * math.prod(math.gamma(x) for x in b) / math.gamma(sum(b))


@pytest.mark.parametrize("n,d", [(2, 8), (2, 21), (3, 6), (3, 13)])
def test_rule_exact_on_monomials(n, d):
    rule = sphere_rule(n, d)
    assert rule.weights.sum() == pytest.approx(SPHERE_AREA[n], rel=1e-12)
    assert np.allclose(np.linalg.norm(rule.nodes, axis=1), 1.0, atol=1e-14)
    for powers in np.ndindex(*([d + 1] * n)):
        if sum(powers) > d:
            continue
        vals = np.prod(rule.nodes ** np.array(powers), axis=1)
        assert rule.integrate(vals) == pytest.approx(_monomial_moment(n, powers), abs=1e-12)


def test_rule_shapes_and_errors():
    r = sphere_rule(2, 8)
    assert r.size >= 9 and np.allclose(r.weights, r.weights[0])
    assert r.metadata() == {"dim": 2, "nodes": r.size, "exactness_degree": 8}
    with pytest.raises(InvalidParameters):
        sphere_rule(4, 8)
    with pytest.raises(InvalidParameters):
        sphere_rule(2, 3)


def test_bessel_matches_reference():
    x = np.concatenate([np.linspace(0, 40, 4001), [11.999, 12.0, 12.001, 100.0, 1e4]])
    assert np.max(np.abs(bessel_j0(x) - special.j0(x))) < 1e-12  # series cancellation near the split


def test_surface_measure_n3_values():
    assert surface_measure_ft(3, [0.0, 0.0, 0.0]) == pytest.approx(4 * math.pi, abs=1e-12)
    assert abs(surface_measure_ft(3, [0.0, math.pi, 0.0])) < 1e-12


def test_surface_measure_n2_vs_trapezoid_oracle():
    theta = 2 * np.pi * np.arange(10_000) / 10_000
    for r in np.linspace(0.1, 30, 25):
        oracle = np.mean(np.exp(-1j * r * np.cos(theta))) * 2 * np.pi
        assert surface_measure_ft(2, [r, 0.0]) == pytest.approx(oracle, abs=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_quadrature_route_matches_closed_form(n, rng):
    rule = sphere_rule(n, 60)
    x = rng.uniform(-8, 8, size=(200, n))
    assert np.max(np.abs(surface_measure_ft_quadrature(rule, x) - surface_measure_ft(n, x))) < 1e-10


def test_extension_examples():
    rule = sphere_rule(3, 10)
    assert extension(np.ones(rule.size), rule, 2.0, np.zeros(3)) == pytest.approx(16 * math.pi)
    assert np.all(extension(np.zeros(rule.size), rule, 1.0, np.ones((4, 3))) == 0)
    with pytest.raises(InvalidParameters):
        extension(np.ones(3), rule, 1.0, np.zeros(3))


@pytest.mark.parametrize("n", [2, 3])
def test_decay_quotient_stable_in_radius(n):
    sups = [decay_quotient(n, R)[0] for R in (10, 20, 40)]
    assert np.ptp(sups) / min(sups) < 0.05


def test_cutoff_partition_of_unity():
    t = np.linspace(0, 300, 30001)
    total = sum(DyadicCutoff(j)(t) for j in range(10))
    assert np.max(np.abs(total - 1)) < 1e-12
    for j in range(10):
        v = DyadicCutoff(j)(t)
        assert v.min() >= 0 and v.max() <= 1
        lo, hi = DyadicCutoff(j).support
        assert np.all(v[(t < lo) | (t > hi)] == 0)


@given(st.integers(0, 12), st.floats(0, 1e4))
def test_cutoff_in_unit_interval(j, t):
    assert 0 <= float(DyadicCutoff(j)(t)) <= 1


def test_kernel_reconstruction_and_support(rng):
    x = rng.uniform(-20, 20, size=(500, 3))
    r = np.linalg.norm(x, axis=1)
    inside = r < 2**5
    total = sum(dyadic_kernel(j, x) for j in range(7))
    assert np.max(np.abs(total[inside] - surface_measure_ft(3, x[inside]))) < 1e-12
    k3 = dyadic_kernel(3, x)
    assert np.all(k3[(r <= 4) | (r >= 16)] == 0)


def test_kernel_sup_decays_at_the_predicted_rate():
    vals = []
    for j in range(2, 7):
        lo, hi = DyadicCutoff(j).support
        r = np.linspace(lo, hi, 20001)
        pts = np.stack([r, 0 * r, 0 * r], -1)
        vals.append(np.max(np.abs(dyadic_kernel(j, pts))) * 2 ** j)
    assert max(vals) / min(vals) < 2


def test_convolution_matches_direct_sum(rng):
    g = GridSpec(2, 64, 8.0)
    f = np.zeros(g.shape, dtype=complex)
    f[28:36, 28:36] = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    out = convolve_kernel(2, ComplexField(g, "physical", f)).samples
    # direct periodic double sum h^n sum_y K(x - y) f(y)
    idx = np.argwhere(np.abs(f) > 0)
    nodes = g.nodes
    targets = [(32, 32), (20, 40), (5, 60)]
    for t in targets:
        d = nodes[t] - nodes[tuple(idx.T)]
        d = (d + g.half_width) % (2 * g.half_width) - g.half_width
        direct = g.cell_volume * np.sum(dyadic_kernel(2, d) * f[tuple(idx.T)])
        assert out[t] == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_convolution_of_spike_is_kernel():
    g = GridSpec(2, 32, 8.0)
    spike = np.zeros(g.shape, dtype=complex)
    spike[16, 16] = 1 / g.cell_volume  # node at the origin
    out = convolve_kernel(2, ComplexField(g, "physical", spike)).samples
    assert np.allclose(out, sampled_kernel(2, g).samples, atol=1e-12)


def test_annulus_must_fit():
    with pytest.raises(AnnulusExceedsBox):
        kernel_symbol(4, GridSpec(2, 32, 8.0))


def test_radial_unsupported_dim():
    with pytest.raises(InvalidParameters):
        surface_measure_ft_radial(4, 1.0)
