import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from kssmooth.errors import EmptyWeight, InvalidParameters, InvalidWeight
from kssmooth.grid_spectral import GridSpec
from kssmooth.weights import (
    Constant,
    DyadicCube,
    GaussianBump,
    Indicator,
    Power,
    Sampled,
    cell_pair_table,
    cube_energies,
    default_cubes,
    dyadic_cubes,
    dyadic_radii,
    eval_weight,
    grid_base_box,
    ks_norm,
    ks_norm_power,
    max_level,
    mc_norm,
    mc_profile,
    parse_weight,
    riesz_double_integral,
    sample_weight,
)

# Brute-force oracles, computed once and frozen here:
#  * MC norm of |x|^-1 (n=2, alpha=1, p=1.5, N=64, L=4, every cell midpoint as
#    center, dyadic radii): pointwise midpoint rule on the 4x finer lattice,
#    direct sums over the points inside each ball, same h/2 cap.
MC_ORACLE = 5.058507111324787
#  * KS norm of a unit Gaussian bump (n=2, alpha=1.5, N=32, L=4): midpoint
#    double sum on the 2x finer lattice; the coincident-cell term uses the
#    unit-cell self-energy from the self-similar identity
#    I = (off-diagonal subcube energy) / (1 - 2^-alpha).
KS_ORACLE = 5.436855514236733
SELF_ENERGY_ORACLE = 1.5843890800748304  # the identity above with 64^2 midpoints per subcube


IDS = ["power:a=1.5", "power:a=0.5,c=1;-1", "bump:c=0;0,w=1.5,A=2.0", "indicator:lo=-1;-2,hi=1;0",
       "const:A=3.0", "bump:c=1;1,w=1.0,A=1.0,lam=2.0", "power:a=1.0+const:A=0.5"]


@pytest.mark.parametrize("wid", IDS)
def test_parse_id_roundtrip(wid):
    w = parse_weight(wid)
    again = parse_weight(w.id)
    pts = np.random.default_rng(0).uniform(-3, 3, size=(50, 2))
    assert np.allclose(w.values(pts, 0.1), again.values(pts, 0.1), rtol=1e-15)


@pytest.mark.parametrize("bad", ["power", "power:a=", "circle:r=1", "bump:c=0,zz=1", "power:a=-1"])
def test_parse_rejects(bad):
    with pytest.raises(InvalidParameters):
        parse_weight(bad)


def test_power_cap_convention():
    g = GridSpec(2, 16, 2.0)
    vals = sample_weight(Power(1.2), g, "nodes")
    origin = (8, 8)  # node at x = 0
    assert vals[origin] == pytest.approx((g.spacing / 2) ** -1.2)
    assert eval_weight(Power(1.2), [0.0, 0.0], spacing=g.spacing) == pytest.approx((g.spacing / 2) ** -1.2)
    with pytest.raises(InvalidParameters):
        eval_weight(Power(1.0), [3.0, 0.0], half_width=2.0)


def test_negative_samples_rejected():
    g = GridSpec(1, 8, 1.0)
    with pytest.raises(InvalidWeight):
        sample_weight(Sampled(g, -np.ones(8)) * 1.0, g)


def test_combinators():
    x = np.array([[0.3, -0.2]])
    a, b = GaussianBump((0.0, 0.0), 1.0), Indicator(-1.0, 1.0)
    assert (a + b).values(x) == pytest.approx(a.values(x) + b.values(x))
    assert (a * 3.0).values(x) == pytest.approx(3 * a.values(x))
    assert a.dilate(2.0).values(x) == pytest.approx(a.values(2 * x))
    assert a.power(2.0).values(x) == pytest.approx(a.values(x) ** 2)


def test_dyadic_family():
    g = GridSpec(2, 32, 4.0)
    cubes = default_cubes(g)
    assert max_level(g) == 4
    for j in range(5):
        level = [c for c in cubes if c.level == j]
        assert len(level) == 4**j
        assert level[0].side == pytest.approx(8.0 / 2**j)
    c = DyadicCube(2, (1, 3), (-4.0, -4.0), 8.0)
    assert c.parent().contains(c.corner + 0.1)
    kids = c.children()
    assert len(kids) == 4 and all(k.parent() == c for k in kids)
    pts = np.random.default_rng(1).uniform(-4, 4, size=(400, 2))
    assert np.array_equal(sum(k.contains(pts).astype(int) for k in kids), c.contains(pts).astype(int))
    with pytest.raises(InvalidParameters):
        dyadic_cubes(grid_base_box(g), 0, 5, g.spacing)


# -- cell-pair integrals -----------------------------------------------------


def test_pair_integrals_1d_closed_form():
    alpha = 0.7
    table = cell_pair_table(1, alpha, 80)
    for d in [0, 1, 5, 64, 70]:
        ref = ((d + 1) ** (alpha + 1) - 2 * d ** (alpha + 1) + abs(d - 1) ** (alpha + 1)) / (alpha * (alpha + 1))
        assert table[d + 80] == pytest.approx(ref, rel=1e-7)
    for d in [2, 5]:
        quad = integrate.dblquad(lambda y, x: (y - x) ** (alpha - 1), 0, 1, lambda x: d, lambda x: d + 1,
                                 epsabs=1e-13)[0]
        assert table[d + 80] == pytest.approx(quad, rel=1e-9)


def test_self_energy_matches_self_similar_oracle():
    table = cell_pair_table(2, 1.5, 0)
    assert float(table.flat[0]) == pytest.approx(SELF_ENERGY_ORACLE, rel=5e-5)


@pytest.mark.parametrize("d,rel", [((1, 0), 1e-8), ((3, 1), 1e-8), ((7, 2), 1e-5)])
def test_pair_integral_2d_against_tent_quadrature(d, rel):
    # offsets beyond the tabulated block use the midpoint value plus a second-moment correction
    # convolution of two unit-square indicators is the tent prod(1 - |u_i|)
    alpha = 1.5
    f = lambda v, u: (1 - abs(u)) * (1 - abs(v)) * math.hypot(u + d[0], v + d[1]) ** (alpha - 2)  # noqa: E731
    ref = integrate.dblquad(f, -1, 1, -1, 1, epsabs=1e-13, epsrel=1e-11)[0]
    table = cell_pair_table(2, alpha, 8)
    assert table[d[0] + 8, d[1] + 8] == pytest.approx(ref, rel=rel)


# -- Kerman-Sawyer -----------------------------------------------------------


def test_ks_indicator_closed_form():
    g = GridSpec(1, 1024, 1.0)
    res = ks_norm(Indicator(0.0, 1.0), 0.5, g)
    assert res.value == pytest.approx(8 / 3, rel=1e-9)


def test_ks_brute_force_oracle():
    g = GridSpec(2, 32, 4.0)
    assert ks_norm(GaussianBump((0.0, 0.0), 1.0), 1.5, g).value == pytest.approx(KS_ORACLE, rel=1e-3)


@pytest.mark.parametrize("n,alpha,sigma", [(1, 0.5, 0.7), (2, 1.5, 1.0), (3, 2.0, 0.8)])
def test_riesz_energy_of_gaussian(n, alpha, sigma):
    # (w*w)(z) = A^2 (pi s^2)^{n/2} exp(-|z|^2/(4 s^2)); integrate against |z|^{alpha-n}
    A = 2.0
    area = {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}[n]
    exact = A * A * (math.pi * sigma**2) ** (n / 2) * area * 0.5 * (4 * sigma**2) ** (alpha / 2) * math.gamma(
        alpha / 2)
    L = 8 * sigma
    h = 2 * L / (64 if n < 3 else 32)
    Q = DyadicCube(0, (0,) * n, (-L,) * n, 2 * L)
    assert riesz_double_integral(GaussianBump((0.0,) * n, sigma, A), Q, alpha, h) == pytest.approx(exact, rel=0.02)


@pytest.mark.parametrize("wid", ["bump:c=0.5;0,w=0.8", "power:a=1.2", "indicator:lo=0;0,hi=1;2"])
@pytest.mark.parametrize("lam", [2.0, 4.0, 8.0])
def test_ks_dilation(wid, lam):
    alpha = 1.4
    g = GridSpec(2, 32, 4.0)
    w = parse_weight(wid)
    base = ks_norm(w, alpha, g).value
    scaled = ks_norm(w.dilate(lam), alpha, GridSpec(2, 32, 4.0 / lam)).value
    assert scaled / base == pytest.approx(lam**-alpha, rel=1e-10)


@given(st.floats(0.1, 50.0))
def test_ks_homogeneous_in_weight(c):
    g = GridSpec(2, 16, 2.0)
    w = GaussianBump((0.3, -0.1), 0.6)
    assert ks_norm(w * c, 1.3, g).value == pytest.approx(c * ks_norm(w, 1.3, g).value, rel=1e-12)


@given(st.sampled_from(IDS[:4]), st.floats(0.3, 1.9))
def test_ks_dominates_mass_times_diameter(wid, alpha):
    # |x - y| <= sqrt(n) side inside a cube, so energy >= mass^2 (sqrt(n) side)^{alpha-n}
    g = GridSpec(2, 16, 4.0)
    w = parse_weight(wid)
    cubes = default_cubes(g)
    masses, energies = cube_energies(w, alpha, cubes, g.spacing)
    sides = np.array([c.side for c in cubes])
    assert np.all(energies >= masses**2 * (math.sqrt(2) * sides) ** (alpha - 2) * (1 - 1e-12))
    assert ks_norm(w, alpha, g).value >= np.max(masses * (math.sqrt(2) * sides) ** (alpha - 2)) * (1 - 1e-12)


def test_ks_power_relation():
    g = GridSpec(2, 16, 2.0)
    w = GaussianBump((0.0, 0.0), 0.5)
    res = ks_norm_power(w, 1.5, 1.6, g)
    assert res.value == pytest.approx(ks_norm(w.power(1.5), 1.6, g).value ** (1 / 3), rel=1e-12)
    with pytest.raises(InvalidParameters):
        ks_norm_power(w, 0.5, 1.6, g)


def test_ks_rejects():
    g = GridSpec(2, 16, 2.0)
    with pytest.raises(EmptyWeight):
        ks_norm(Constant(0.0), 1.0, g)
    with pytest.raises(InvalidParameters):
        ks_norm(Constant(1.0), 2.0, g)


# -- Morrey-Campanato --------------------------------------------------------


def test_mc_brute_force_oracle():
    g = GridSpec(2, 64, 4.0)
    res = mc_norm(Power(1.0), 1.0, 1.5, g)
    assert res.value == pytest.approx(MC_ORACLE, rel=1e-3)
    assert res.witness["radius"] == pytest.approx(4.0)


def test_mc_constant_weight():
    # r^alpha (r^-n int_B c^p)^{1/p} = c r^alpha |B_1|^{1/p}, largest radius wins
    g = GridSpec(2, 64, 8.0)
    c, alpha, p = 2.0, 1.0, 1.5
    radii = [1.0, 2.0, 4.0, 8.0]
    res = mc_norm(Constant(c), alpha, p, g, np.zeros((1, 2)), radii)
    assert res.witness["radius"] == 8.0
    assert res.value == pytest.approx(c * 8.0**alpha * math.pi ** (1 / p), rel=2e-3)


def test_mc_scale_invariant_profile():
    # |x|^-alpha about its singularity: r^alpha r^-n int_B |x|^-alpha = |S^1| / (n - alpha)
    g = GridSpec(2, 256, 8.0)
    radii = [16 * g.spacing * 2**k for k in range(4)]
    prof = mc_profile(Power(1.0), 1.0, 1.0, g, np.zeros(2), radii)
    err = 2 * math.pi - prof
    # cell-resolution error near the singularity decays like h / r
    assert np.all(err > 0)
    assert np.allclose(err[:-1] / err[1:], 2.0, rtol=0.1)
    assert prof[-1] == pytest.approx(2 * math.pi, rel=0.01)


@pytest.mark.parametrize("lam", [2.0, 4.0, 8.0])
def test_mc_dilation(lam):
    g = GridSpec(2, 32, 4.0)
    w = GaussianBump((0.5, 0.0), 0.5) + Power(0.8)
    base = mc_norm(w, 1.2, 1.4, g).value
    scaled = mc_norm(w.dilate(lam), 1.2, 1.4, GridSpec(2, 32, 4.0 / lam)).value
    assert scaled / base == pytest.approx(lam**-1.2, rel=1e-10)


def test_mc_rejects():
    g = GridSpec(2, 16, 2.0)
    with pytest.raises(InvalidParameters):
        mc_norm(Constant(1.0), 1.0, 3.0, g)
    with pytest.raises(InvalidParameters):
        mc_norm(Constant(1.0), 1.0, 1.0, g, radii=[0.1])
    assert dyadic_radii(g)[0] == pytest.approx(2 * g.spacing)
