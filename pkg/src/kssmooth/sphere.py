"""Quadrature on the unit sphere, the Fourier transform of surface measure,
the extension operator ``f -> (f dsigma_r)^`` and its dyadic pieces.

Sign convention (the only place it matters): every transform here uses
``e^{-i x.xi}``, so

.. math::

    \\widehat{d\\sigma}(x) = \\int_{S^{n-1}} e^{-i x\\cdot\\omega}\\,d\\sigma(\\omega),
    \\qquad \\widehat{f d\\sigma_r}(x) = \\int_{|\\xi| = r} e^{-i x\\cdot\\xi} f\\,d\\sigma_r.

With this convention the time-slice of the propagator written in polar
coordinates reads ``(\\hat f d\\sigma_\\rho)^(-x)``; callers that need it
evaluate the extension at ``-x`` rather than flipping signs elsewhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from kssmooth.errors import AnnulusExceedsBox, InvalidParameters
from kssmooth.grid_spectral import (
    ComplexField,
    GridSpec,
    forward_transform,
    inverse_transform,
)

SPHERE_AREA = {2: 2 * math.pi, 3: 4 * math.pi}


@dataclass(frozen=True, eq=False)
class SphereRule:
    dim: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    exactness_degree: int

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, self.dim)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(nodes) != len(weights):
            raise InvalidParameters("nodes and weights differ in length")
        if np.any(weights <= 0):
            raise InvalidParameters("sphere rule weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> complex:
        return np.sum(self.weights * np.asarray(values))

    def metadata(self) -> dict:
        return {"dim": self.dim, "nodes": self.size, "exactness_degree": self.exactness_degree}


def sphere_rule(n: int, exactness_degree: int) -> SphereRule:
    """Equal-weight circle rule (n=2) or Gauss-Legendre x uniform-azimuth
    product rule (n=3) integrating polynomials of degree <= ``exactness_degree``."""
    d = int(exactness_degree)
    if d < 4:
        raise InvalidParameters(f"exactness degree must be >= 4, got {d}")
    if n == 2:
        m = d + 1
        theta = 2 * np.pi * np.arange(m) / m
        return SphereRule(2, np.stack([np.cos(theta), np.sin(theta)], -1), np.full(m, 2 * np.pi / m), d)
    if n == 3:
        k = d // 2 + 1
        z, wz = roots_legendre(k)
        m = d + 1
        phi = 2 * np.pi * np.arange(m) / m
        st = np.sqrt(1 - z**2)
        nodes = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                          np.outer(z, np.ones(m))], -1).reshape(-1, 3)
        weights = np.outer(wz, np.full(m, 2 * np.pi / m)).ravel()
        return SphereRule(3, nodes, weights, d)
    raise InvalidParameters(f"sphere rules are provided for n in {{2, 3}}, got {n}")


# ---------------------------------------------------------------------------
# Surface measure transform
# ---------------------------------------------------------------------------

_J0_SPLIT = 12.0


def _j0_series(x: np.ndarray) -> np.ndarray:
    q = -0.25 * x * x
    term = np.ones_like(x)
    total = term.copy()
    for k in range(1, 80):
        term = term * q / (k * k)
        total += term
        if np.all(np.abs(term) < 1e-17 * np.maximum(1.0, np.abs(total))):
            break
    return total


def _j0_asymptotic(x: np.ndarray) -> np.ndarray:
    # Hankel expansion, summed until the terms stop decreasing
    P = np.ones_like(x)
    Q = np.zeros_like(x)
    a = 1.0  # a_k(0) = prod_{j<=k} (-(2j-1)^2) / (k! 8^k)
    best = np.full_like(x, np.inf)
    done = np.zeros(x.shape, dtype=bool)
    for k in range(1, 60):
        a *= -((2 * k - 1) ** 2) / (k * 8.0)
        t = a / x**k
        mag = np.abs(t)
        done |= mag > best
        best = np.minimum(best, mag)
        live = ~done
        if k % 2 == 0:
            P = np.where(live, P + (-1) ** (k // 2) * t, P)
        else:
            Q = np.where(live, Q + (-1) ** (k // 2) * t, Q)
        if np.all(done | (mag < 1e-17)):
            break
    chi = x - 0.25 * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * (P * np.cos(chi) - Q * np.sin(chi))


def bessel_j0(x) -> np.ndarray:
    """J_0 by power series below |x| = 12 and the Hankel asymptotic expansion above."""
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    small = x < _J0_SPLIT
    if np.any(small):
        out[small] = _j0_series(x[small])
    if np.any(~small):
        out[~small] = _j0_asymptotic(x[~small])
    return out


def surface_measure_ft_radial(n: int, r) -> np.ndarray:
    """``(dsigma)^`` as a function of ``|x|`` (it is real and radial)."""
    r = np.asarray(r, dtype=float)
    if n == 3:
        with np.errstate(invalid="ignore", divide="ignore"):
            out = 4 * np.pi * np.sin(r) / r
        return np.where(r == 0, 4 * np.pi, out)
    if n == 2:
        return 2 * np.pi * bessel_j0(r)
    raise InvalidParameters(f"surface_measure_ft supports n in {{2, 3}}, got {n}")


def surface_measure_ft(n: int, x) -> np.ndarray:
    """``(dsigma)^(x) = int_{S^{n-1}} e^{-i x.w} dsigma(w)`` at points ``x`` of shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise InvalidParameters(f"points have dimension {x.shape[-1]}, expected {n}")
    return surface_measure_ft_radial(n, np.sqrt(np.sum(x**2, axis=-1))).astype(complex)


def surface_measure_ft_quadrature(rule: SphereRule, x) -> np.ndarray:
    """Cross-check of :func:`surface_measure_ft` by the sphere rule."""
    return extension(np.ones(rule.size), rule, 1.0, x)


def extension(f, rule: SphereRule, radius: float, targets, chunk: int = 4096) -> np.ndarray:
    """``(f dsigma_r)^(x) = sum_w f(w) e^{-i r x.w} r^{n-1} weight(w)`` for targets ``(..., n)``."""
    f = np.asarray(f)
    if f.shape != (rule.size,):
        raise InvalidParameters(f"expected {rule.size} node values, got shape {f.shape}")
    targets = np.asarray(targets, dtype=float)
    if targets.shape[-1] != rule.dim:
        raise InvalidParameters("targets and rule differ in dimension")
    flat = targets.reshape(-1, rule.dim)
    coef = f * rule.weights * radius ** (rule.dim - 1)
    out = np.empty(len(flat), dtype=complex)
    for i in range(0, len(flat), chunk):
        phase = flat[i:i + chunk] @ rule.nodes.T
        out[i:i + chunk] = np.exp(-1j * radius * phase) @ coef
    return out.reshape(targets.shape[:-1])


def extension_matrix(rule: SphereRule, radius: float, targets) -> np.ndarray:
    """Matrix of ``extension`` (targets x nodes), including quadrature weights."""
    targets = np.asarray(targets, dtype=float).reshape(-1, rule.dim)
    return np.exp(-1j * radius * (targets @ rule.nodes.T)) * (rule.weights * radius ** (rule.dim - 1))


def decay_quotient(n: int, R: float, samples_per_unit: int = 200) -> tuple[float, float]:
    """``sup_{|x| <= R} |(dsigma)^(x)| (1 + |x|)^{(n-1)/2}`` by dense radial
    sampling; returns ``(sup, argmax radius)``."""
    r = np.linspace(0.0, R, int(samples_per_unit * R) + 1)
    q = np.abs(surface_measure_ft_radial(n, r)) * (1 + r) ** ((n - 1) / 2)
    k = int(np.argmax(q))
    return float(q[k]), float(r[k])


# ---------------------------------------------------------------------------
# Dyadic pieces
# ---------------------------------------------------------------------------


def smooth_step(t) -> np.ndarray:
    """C^3 step: 1 on ``t <= 1``, 0 on ``t >= 2``, septic polynomial in between."""
    u = np.clip(np.asarray(t, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - u**4 * (35 - 84 * u + 70 * u**2 - 20 * u**3)


@dataclass(frozen=True)
class DyadicCutoff:
    """Radial cutoff ``psi_j``: ``psi_0 = phi`` and ``psi_j(t) = phi(t/2^j) - phi(t/2^{j-1})``,
    with ``phi`` the smooth step.  The pieces telescope, so
    ``sum_{j<=J} psi_j = phi(t/2^J)``, which is 1 on ``[0, 2^J]``."""

    index: int

    def __post_init__(self):
        if self.index < 0:
            raise InvalidParameters("cutoff index must be >= 0")

    @property
    def support(self) -> tuple[float, float]:
        j = self.index
        return (0.0, 2.0) if j == 0 else (2.0 ** (j - 1), 2.0 ** (j + 1))

    def __call__(self, t) -> np.ndarray:
        t = np.abs(np.asarray(t, dtype=float))
        j = self.index
        if j == 0:
            return smooth_step(t)
        return smooth_step(t / 2.0**j) - smooth_step(t / 2.0 ** (j - 1))


def dyadic_kernel(j: int, x) -> np.ndarray:
    """``K_j(x) = (dsigma)^(x) psi_j(|x|)``; dimension taken from ``x``."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x**2, axis=-1))
    return surface_measure_ft_radial(x.shape[-1], r) * DyadicCutoff(j)(r) + 0j


def sampled_kernel(j: int, grid: GridSpec) -> ComplexField:
    return ComplexField(grid, "physical", dyadic_kernel(j, grid.nodes))


def check_annulus(j: int, grid: GridSpec):
    outer = DyadicCutoff(j).support[1]
    if outer > grid.half_width:
        raise AnnulusExceedsBox(f"K_{j} is supported out to |x| = {outer:g} but the box half-width is "
                                f"{grid.half_width:g}")


def kernel_symbol(j: int, grid: GridSpec) -> np.ndarray:
    """Lattice transform of the sampled, box-truncated ``K_j``."""
    check_annulus(j, grid)
    return forward_transform(sampled_kernel(j, grid)).samples


def convolve_kernel(j: int, f: ComplexField, symbol: np.ndarray | None = None) -> ComplexField:
    """Periodic convolution ``K_j * f`` by multiplication with :func:`kernel_symbol`."""
    if symbol is None:
        symbol = kernel_symbol(j, f.grid)
    fhat = forward_transform(f)
    return inverse_transform(fhat.with_samples(fhat.samples * symbol))
