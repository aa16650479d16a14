"""Periodic box discretization and the discrete Fourier pair used everywhere.

The box is ``[-L, L)^n`` sampled at ``N`` nodes per axis, ``x_k = -L + k h``
with ``h = 2L/N``.  The transform convention is

.. math::

    \\hat f(\\xi) = \\int e^{-i x\\cdot\\xi} f(x)\\,dx, \\qquad
    f(x) = (2\\pi)^{-n} \\int e^{i x\\cdot\\xi} \\hat f(\\xi)\\,d\\xi,

discretized with ``h^n`` quadrature weights on the physical side and the
lattice ``(pi/L) Z^n`` on the frequency side.  Frequency-side arrays are kept
in FFT order (``numpy.fft.fftfreq``), so the Nyquist mode ``-N/2`` is the one
unpaired frequency per axis.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from kssmooth.errors import DegenerateZeroMode, InvalidParameters, InvalidWeight, SideMismatch

Side = Literal["physical", "frequency"]


@dataclass(frozen=True)
class GridSpec:
    dim: int
    points_per_axis: int
    half_width: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise InvalidParameters(f"dim must be 1, 2 or 3, got {self.dim}")
        n = self.points_per_axis
        if n < 8 or n & (n - 1):
            raise InvalidParameters(f"points_per_axis must be a power of two >= 8, got {n}")
        if not self.half_width > 0:
            raise InvalidParameters(f"half_width must be positive, got {self.half_width}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def frequency_step(self) -> float:
        return np.pi / self.half_width

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        """Node coordinates along one axis."""
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def cell_centers_axis(self) -> np.ndarray:
        return self.axis + 0.5 * self.spacing

    @cached_property
    def mode_axis(self) -> np.ndarray:
        """Integer mode numbers along one axis, FFT order."""
        return np.fft.fftfreq(self.points_per_axis, d=1.0 / self.points_per_axis).astype(int)

    @cached_property
    def frequency_axis(self) -> np.ndarray:
        return self.frequency_step * self.mode_axis

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (dim,)``."""
        return _mesh(self.axis, self.dim)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return _mesh(self.cell_centers_axis, self.dim)

    @cached_property
    def frequencies(self) -> np.ndarray:
        return _mesh(self.frequency_axis, self.dim)

    @cached_property
    def frequency_norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.frequencies**2, axis=-1))

    @cached_property
    def radius(self) -> np.ndarray:
        """``|x|`` at the nodes."""
        return np.sqrt(np.sum(self.nodes**2, axis=-1))

    @cached_property
    def _phase(self) -> np.ndarray:
        # (-1)^(m_1 + ... + m_n) from shifting the box origin to -L
        sign = np.where(self.mode_axis % 2 == 0, 1.0, -1.0)
        out = sign
        for _ in range(self.dim - 1):
            out = np.multiply.outer(out, sign)
        return out

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.dim, self.points_per_axis * factor, self.half_width)

    def enlarged(self, factor: int = 2) -> "GridSpec":
        """Same spacing, box and point count both multiplied by ``factor``."""
        return GridSpec(self.dim, self.points_per_axis * factor, self.half_width * factor)


def _mesh(axis: np.ndarray, dim: int) -> np.ndarray:
    return np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1)


def make_grid(dim: int, points_per_axis: int, half_width: float) -> GridSpec:
    return GridSpec(int(dim), int(points_per_axis), float(half_width))


@dataclass(frozen=True)
class ComplexField:
    grid: GridSpec
    side: Side
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.side not in ("physical", "frequency"):
            raise InvalidParameters(f"unknown side {self.side!r}")
        arr = np.asarray(self.samples, dtype=complex)
        if arr.size != self.grid.size:
            raise InvalidParameters(f"expected {self.grid.size} samples, got {arr.size}")
        object.__setattr__(self, "samples", arr.reshape(self.grid.shape))

    def with_samples(self, samples: np.ndarray) -> "ComplexField":
        return ComplexField(self.grid, self.side, samples)

    def norm(self) -> float:
        """Plain L2 norm with the measure matching ``side``."""
        if self.side == "physical":
            return float(np.sqrt(np.sum(np.abs(self.samples) ** 2) * self.grid.cell_volume))
        # ||f||_2 via Parseval: (2 pi)^{-n} * sum |fhat|^2 * dxi^n
        dxi = self.grid.frequency_step**self.grid.dim
        return float(np.sqrt(np.sum(np.abs(self.samples) ** 2) * dxi / (2 * np.pi) ** self.grid.dim))


def physical_field(grid: GridSpec, samples) -> ComplexField:
    return ComplexField(grid, "physical", samples)


def from_function(grid: GridSpec, func) -> ComplexField:
    """Sample ``func(points)`` (points shaped ``(..., dim)``) at the nodes."""
    return ComplexField(grid, "physical", func(grid.nodes))


def forward_transform(f: ComplexField) -> ComplexField:
    if f.side != "physical":
        raise SideMismatch("forward_transform expects a physical-side field")
    g = f.grid
    fhat = g.cell_volume * g._phase * np.fft.fftn(f.samples)
    return ComplexField(g, "frequency", fhat)


def inverse_transform(fhat: ComplexField) -> ComplexField:
    if fhat.side != "frequency":
        raise SideMismatch("inverse_transform expects a frequency-side field")
    g = fhat.grid
    f = np.fft.ifftn(g._phase * fhat.samples) / g.cell_volume
    return ComplexField(g, "physical", f)


def fractional_symbol(grid: GridSpec, s: float) -> np.ndarray:
    """``|xi|^s`` on the lattice with ``|0|^s := 0`` for ``s > 0`` (and 1 for ``s = 0``).

    For ``s < 0`` the zero mode entry is set to 0; callers must make sure the
    input vanishes there.
    """
    rho = grid.frequency_norm
    if s == 0:
        return np.ones_like(rho)
    out = np.zeros_like(rho)
    nz = rho > 0
    out[nz] = rho[nz] ** s
    return out


def fractional_multiplier(fhat: ComplexField, s: float) -> ComplexField:
    if fhat.side != "frequency":
        raise SideMismatch("fractional_multiplier acts on frequency-side fields")
    if s < 0:
        zero = (0,) * fhat.grid.dim
        if fhat.samples[zero] != 0:
            raise DegenerateZeroMode(
                f"|xi|^{s} is undefined at xi=0 and the input has nonzero mean "
                f"(zero mode {fhat.samples[zero]!r})"
            )
    return fhat.with_samples(fhat.samples * fractional_symbol(fhat.grid, s))


def _weight_samples(field_: ComplexField, w) -> np.ndarray:
    # local import: weights depends on this module
    from kssmooth.weights import sample_weight

    if isinstance(w, np.ndarray):
        vals = np.broadcast_to(np.asarray(w, dtype=float), field_.grid.shape)
    else:
        vals = sample_weight(w, field_.grid, where="nodes")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise InvalidWeight("weight has negative or non-finite samples on the grid")
    return vals


def weighted_l2_norm(f: ComplexField, w) -> float:
    """``(sum_i w(x_i) |f(x_i)|^2 h^n)^{1/2}``; ``w`` is a WeightSpec or node array."""
    if f.side != "physical":
        raise SideMismatch("weighted_l2_norm expects a physical-side field")
    vals = _weight_samples(f, w)
    return float(np.sqrt(np.sum(vals * np.abs(f.samples) ** 2) * f.grid.cell_volume))


# -- debugging dumps ---------------------------------------------------------

_MAGIC = b"KSFD"
_HEADER = struct.Struct("<4sIIId8x")  # 32 bytes
assert _HEADER.size == 32


def dump_field(f: ComplexField) -> bytes:
    """Serialize as a 32-byte header (magic, dim, N, side, L) followed by
    little-endian interleaved complex64 pairs in C order."""
    header = _HEADER.pack(_MAGIC, f.grid.dim, f.grid.points_per_axis,
                          0 if f.side == "physical" else 1, f.grid.half_width)
    body = np.ascontiguousarray(f.samples, dtype="<c8").tobytes()
    return header + body


def load_field(data: bytes) -> ComplexField:
    magic, dim, n, side, half_width = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a field dump")
    grid = GridSpec(dim, n, half_width)
    samples = np.frombuffer(data, dtype="<c8", offset=_HEADER.size, count=grid.size)
    return ComplexField(grid, "physical" if side == 0 else "frequency", samples.astype(complex))
