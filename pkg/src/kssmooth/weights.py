"""Weight catalog and the Morrey-Campanato / Kerman-Sawyer weight norms.

Weights are immutable ``WeightSpec`` objects evaluated on point arrays shaped
``(..., dim)``.  Quadrature for the norms is cell-centered: the box
``[-L, L)^n`` is cut into cells of side ``h`` and each cell carries the weight
value at its midpoint.  Power weights are capped at the half-cell scale,
``w(x) = max(|x|, h/2)^{-a}``, so every sampled value is finite.

The Kerman-Sawyer self-energy of a cube,

.. math::

    \\int_Q \\int_Q w(x) w(y) |x-y|^{\\alpha-n}\\,dx\\,dy,

is discretized as ``h^{n+alpha} sum_{i,k} w_i w_k G(i-k)`` where ``G(d)`` is
the exact integral of the kernel over a pair of unit cells at integer offset
``d`` (closed form in 1-D, Duffy/Gauss-Jacobi quadrature in 2-D and 3-D) for
nearby offsets, and a corrected midpoint value further out.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.signal import fftconvolve
from scipy.special import roots_jacobi, roots_legendre

from kssmooth.errors import EmptyWeight, InvalidParameters, InvalidWeight
from kssmooth.grid_spectral import GridSpec

# ---------------------------------------------------------------------------
# Weight catalog
# ---------------------------------------------------------------------------


class WeightSpec:
    """Nonnegative weight on R^n.  Subclasses implement :meth:`values`."""

    def values(self, points: np.ndarray, cap: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    @property
    def id(self) -> str:
        raise NotImplementedError

    def __add__(self, other: "WeightSpec") -> "WeightSpec":
        return Sum((self, other))

    def __mul__(self, c) -> "WeightSpec":
        if isinstance(c, WeightSpec):
            return Product((self, c))
        return Scaled(self, float(c))

    __rmul__ = __mul__

    def dilate(self, lam: float) -> "WeightSpec":
        """The weight ``x -> w(lam x)``."""
        return Dilated(self, float(lam))

    def power(self, beta: float) -> "WeightSpec":
        return self if beta == 1 else Powered(self, float(beta))


def _as_center(center, dim: int) -> np.ndarray:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.size == 1:
        return np.full(dim, float(c[0]))
    if c.size != dim:
        raise InvalidParameters(f"center {center!r} does not match dimension {dim}")
    return c


def _fmt(x) -> str:
    if np.ndim(x) == 0:
        return repr(float(x))
    return ";".join(repr(float(v)) for v in np.ravel(x))


@dataclass(frozen=True)
class Power(WeightSpec):
    """``|x - center|^{-a}``, capped at ``cap^{-a}`` inside radius ``cap``."""

    a: float
    center: float | tuple[float, ...] = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidParameters(f"power exponent must be positive, got {self.a}")

    def values(self, points, cap=0.0):
        points = np.asarray(points, dtype=float)
        c = _as_center(self.center, points.shape[-1])
        r = np.sqrt(np.sum((points - c) ** 2, axis=-1))
        with np.errstate(divide="ignore"):
            return np.maximum(r, cap) ** (-self.a)

    @property
    def id(self):
        s = f"power:a={self.a!r}"
        if np.any(np.asarray(self.center) != 0):
            s += f",c={_fmt(self.center)}"
        return s


@dataclass(frozen=True)
class GaussianBump(WeightSpec):
    """``amplitude * exp(-|x - center|^2 / (2 width^2))``."""

    center: float | tuple[float, ...] = 0.0
    width: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.width > 0 or self.amplitude < 0:
            raise InvalidParameters("bump needs width > 0 and amplitude >= 0")

    def values(self, points, cap=0.0):
        points = np.asarray(points, dtype=float)
        c = _as_center(self.center, points.shape[-1])
        r2 = np.sum((points - c) ** 2, axis=-1)
        return self.amplitude * np.exp(-0.5 * r2 / self.width**2)

    @property
    def id(self):
        return f"bump:c={_fmt(self.center)},w={self.width!r},A={self.amplitude!r}"


@dataclass(frozen=True)
class Indicator(WeightSpec):
    """Indicator of the half-open box ``[lower, upper)`` (scalars mean a cube)."""

    lower: float | tuple[float, ...] = 0.0
    upper: float | tuple[float, ...] = 1.0
    amplitude: float = 1.0

    def values(self, points, cap=0.0):
        points = np.asarray(points, dtype=float)
        lo = _as_center(self.lower, points.shape[-1])
        hi = _as_center(self.upper, points.shape[-1])
        inside = np.all((points >= lo) & (points < hi), axis=-1)
        return self.amplitude * inside.astype(float)

    @property
    def id(self):
        s = f"indicator:lo={_fmt(self.lower)},hi={_fmt(self.upper)}"
        if self.amplitude != 1.0:
            s += f",A={self.amplitude!r}"
        return s


@dataclass(frozen=True)
class Constant(WeightSpec):
    value: float = 1.0

    def values(self, points, cap=0.0):
        points = np.asarray(points, dtype=float)
        return np.full(points.shape[:-1], float(self.value))

    @property
    def id(self):
        return f"const:A={self.value!r}"


@dataclass(frozen=True, eq=False)
class Sampled(WeightSpec):
    """Node samples on a grid, extended piecewise constant over the cells
    ``[x_k, x_k + h)`` and by zero outside the box."""

    grid: GridSpec
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float).reshape(self.grid.shape)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise InvalidWeight("sampled weight must be finite and nonnegative")
        object.__setattr__(self, "samples", arr)

    def values(self, points, cap=0.0):
        points = np.asarray(points, dtype=float)
        g = self.grid
        idx = np.floor((points + g.half_width) / g.spacing).astype(int)
        inside = np.all((idx >= 0) & (idx < g.points_per_axis), axis=-1)
        idx = np.clip(idx, 0, g.points_per_axis - 1)
        out = self.samples[tuple(np.moveaxis(idx, -1, 0))]
        return np.where(inside, out, 0.0)

    @property
    def id(self):
        return f"sampled:N={self.grid.points_per_axis},L={self.grid.half_width!r}"


@dataclass(frozen=True)
class Sum(WeightSpec):
    terms: tuple[WeightSpec, ...]

    def values(self, points, cap=0.0):
        return sum(t.values(points, cap) for t in self.terms)

    @property
    def id(self):
        return "+".join(t.id for t in self.terms)


@dataclass(frozen=True)
class Product(WeightSpec):
    terms: tuple[WeightSpec, ...]

    def values(self, points, cap=0.0):
        out = self.terms[0].values(points, cap)
        for t in self.terms[1:]:
            out = out * t.values(points, cap)
        return out

    @property
    def id(self):
        return "*".join(f"({t.id})" for t in self.terms)


@dataclass(frozen=True)
class Scaled(WeightSpec):
    base: WeightSpec
    factor: float

    def __post_init__(self):
        if self.factor < 0:
            raise InvalidWeight("negative scale factor")

    def values(self, points, cap=0.0):
        return self.factor * self.base.values(points, cap)

    @property
    def id(self):
        return f"{self.factor!r}*({self.base.id})"


@dataclass(frozen=True)
class Dilated(WeightSpec):
    """``x -> base(lam x)``; the cap radius is dilated along with the argument
    so that sampling on a correspondingly rescaled grid is exactly covariant."""

    base: WeightSpec
    lam: float

    def values(self, points, cap=0.0):
        return self.base.values(self.lam * np.asarray(points, dtype=float), self.lam * cap)

    @property
    def id(self):
        # dilation distributes over sums and composes, so catalog ids stay parseable
        b = self.base
        if isinstance(b, Sum):
            return "+".join(Dilated(t, self.lam).id for t in b.terms)
        if isinstance(b, Dilated):
            return Dilated(b.base, self.lam * b.lam).id
        if "(" in b.id or "lam=" in b.id:
            return f"({b.id}),lam={self.lam!r}"
        return f"{b.id},lam={self.lam!r}"


@dataclass(frozen=True)
class Powered(WeightSpec):
    base: WeightSpec
    beta: float

    def values(self, points, cap=0.0):
        return self.base.values(points, cap) ** self.beta

    @property
    def id(self):
        return f"({self.base.id})^{self.beta!r}"


def eval_weight(w: WeightSpec, x, spacing: float | None = None,
                half_width: float | None = None) -> float:
    """Pointwise value.  With ``spacing`` the power-weight cap ``spacing/2``
    applies; with ``half_width`` the point must lie in ``[-L, L)^n``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if half_width is not None and np.any((x < -half_width) | (x >= half_width)):
        raise InvalidParameters(f"point {x.tolist()} outside the domain [-{half_width}, {half_width})^n")
    cap = 0.0 if spacing is None else 0.5 * spacing
    return float(w.values(x[None, :], cap)[0])


def sample_weight(w: WeightSpec, grid: GridSpec, where: str = "nodes") -> np.ndarray:
    """Weight values on ``grid`` at the nodes or at the cell midpoints."""
    if isinstance(w, Sampled) and w.grid == grid:
        return w.samples
    pts = grid.nodes if where == "nodes" else grid.cell_centers
    vals = np.asarray(w.values(pts, 0.5 * grid.spacing), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise InvalidWeight(f"weight {w.id} has negative or non-finite samples")
    return vals


_ID_RE = re.compile(r"^\s*(?P<kind>[a-z]+)\s*(?::(?P<args>.*))?$")


def _parse_vec(text: str):
    parts = [float(p) for p in text.split(";")]
    return parts[0] if len(parts) == 1 else tuple(parts)


def parse_weight(text: str) -> WeightSpec:
    """Build a weight from a catalog id such as ``"power:a=1.0"``,
    ``"bump:c=0,w=1,A=2"``, ``"indicator:lo=0,hi=1"`` or ``"const:A=1"``.

    Vector arguments separate components by ``;`` (``c=1;0``); a trailing
    ``lam=`` dilates; ``+`` sums ids.
    """
    if "+" in text:
        return Sum(tuple(parse_weight(t) for t in text.split("+")))
    m = _ID_RE.match(text)
    if not m:
        raise InvalidParameters(f"cannot parse weight id {text!r}")
    kind = m.group("kind")
    args: dict[str, str] = {}
    if m.group("args"):
        for item in m.group("args").split(","):
            if "=" not in item:
                raise InvalidParameters(f"weight id {text!r}: expected key=value, got {item!r}")
            k, v = item.split("=", 1)
            args[k.strip()] = v.strip()
    lam = float(args.pop("lam", 1.0))
    try:
        if kind == "power":
            w = Power(float(args.pop("a")), _parse_vec(args.pop("c", "0")))
        elif kind == "bump":
            w = GaussianBump(_parse_vec(args.pop("c", "0")), float(args.pop("w", 1.0)),
                             float(args.pop("A", 1.0)))
        elif kind == "indicator":
            w = Indicator(_parse_vec(args.pop("lo", "0")), _parse_vec(args.pop("hi", "1")),
                          float(args.pop("A", 1.0)))
        elif kind == "const":
            w = Constant(float(args.pop("A", 1.0)))
        else:
            raise InvalidParameters(f"unknown weight kind {kind!r} in {text!r}")
    except KeyError as exc:
        raise InvalidParameters(f"weight id {text!r} is missing argument {exc.args[0]!r}") from None
    except ValueError as exc:
        if isinstance(exc, InvalidParameters):
            raise
        raise InvalidParameters(f"weight id {text!r}: {exc}") from None
    if args:
        raise InvalidParameters(f"weight id {text!r}: unknown arguments {sorted(args)}")
    return w if lam == 1.0 else w.dilate(lam)


# ---------------------------------------------------------------------------
# Dyadic cubes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DyadicCube:
    """Cube of the dyadic family generated by a base cube.

    Level 0 is the base cube itself; level ``j`` cubes have side
    ``base_side * 2^-j`` and lower corner ``base_corner + corner_index * side``.
    """

    level: int
    corner_index: tuple[int, ...]
    base_corner: tuple[float, ...]
    base_side: float

    @property
    def dim(self) -> int:
        return len(self.corner_index)

    @property
    def side(self) -> float:
        return self.base_side * 2.0 ** (-self.level)

    @property
    def corner(self) -> np.ndarray:
        return np.asarray(self.base_corner) + self.side * np.asarray(self.corner_index)

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        c = self.corner
        return np.all((p >= c) & (p < c + self.side), axis=-1)

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level - 1, tuple(i // 2 for i in self.corner_index),
                          self.base_corner, self.base_side)

    def children(self) -> list["DyadicCube"]:
        return [DyadicCube(self.level + 1, tuple(2 * i + e for i, e in zip(self.corner_index, bits)),
                           self.base_corner, self.base_side)
                for bits in product((0, 1), repeat=self.dim)]

    def as_dict(self) -> dict:
        return {"level": self.level, "corner": [float(c) for c in self.corner], "side": self.side}


def grid_base_box(grid: GridSpec) -> tuple[tuple[float, ...], float]:
    return (-grid.half_width,) * grid.dim, 2.0 * grid.half_width


def max_level(grid: GridSpec) -> int:
    """Finest level whose cubes still span at least two cells per side."""
    return int(math.log2(grid.points_per_axis)) - 1


def dyadic_cubes(base_box: tuple[Sequence[float], float], level_min: int, level_max: int,
                 spacing: float | None = None) -> list[DyadicCube]:
    """All cubes of levels ``level_min..level_max`` generated by ``base_box``
    (given as ``(lower_corner, side)``), level by level, each level complete.

    With ``spacing`` the resolution bound ``side >= 2 * spacing`` is enforced.
    """
    corner, side = base_box
    corner = tuple(float(c) for c in corner)
    if level_min > level_max or level_min < 0:
        raise InvalidParameters(f"bad level range {level_min}..{level_max}")
    if spacing is not None and side * 2.0 ** (-level_max) < 2 * spacing * (1 - 1e-12):
        raise InvalidParameters(
            f"level {level_max} cubes (side {side * 2.0 ** -level_max:g}) are finer than two cells "
            f"(2h = {2 * spacing:g})")
    cubes = []
    for j in range(level_min, level_max + 1):
        for idx in product(range(2**j), repeat=len(corner)):
            cubes.append(DyadicCube(j, idx, corner, float(side)))
    return cubes


# ---------------------------------------------------------------------------
# Cell-pair integrals of the Riesz kernel
# ---------------------------------------------------------------------------

_NEAR_RADIUS = {1: 64, 2: 4, 3: 3}
_GL_NODES = 24


def _check_alpha(alpha: float, dim: int):
    if not 0 < alpha < dim:
        raise InvalidParameters(f"alpha must lie in (0, n) = (0, {dim}), got {alpha}")


def _pair_integral_1d(d: np.ndarray, alpha: float) -> np.ndarray:
    """int_0^1 int_0^1 |x - y + d|^{alpha-1} dx dy, exact."""
    d = np.abs(np.asarray(d, dtype=float))

    def prim(t):
        return np.abs(t) ** (alpha + 1) / (alpha * (alpha + 1))

    return prim(d + 1) - 2 * prim(d) + prim(d - 1)


def _far_series_1d(d: np.ndarray, alpha: float, terms: int = 6) -> np.ndarray:
    # expansion of the same integral in 1/d, valid for |d| > 1
    d = np.abs(np.asarray(d, dtype=float))
    p = alpha - 1.0
    out = np.zeros_like(d)
    coef = 1.0
    for k in range(0, 2 * terms, 2):
        if k > 0:
            coef *= (p - k + 2) * (p - k + 1) / (k * (k - 1))
        out += coef * d ** (p - k) * 2.0 / ((k + 1) * (k + 2))
    return out


@lru_cache(maxsize=None)
def _legendre01(m: int):
    x, w = roots_legendre(m)
    return 0.5 * (x + 1), 0.5 * w


@lru_cache(maxsize=None)
def _jacobi01(m: int, alpha: float):
    # nodes/weights for int_0^1 t^{alpha-1} g(t) dt
    x, w = roots_jacobi(m, 0.0, alpha - 1.0)
    return 0.5 * (x + 1), w * 2.0 ** (-alpha)


def _pair_integral_nd(d: tuple[int, ...], alpha: float) -> float:
    """int_{[-1,1]^n} prod(1 - |u_i|) |u + d|^{alpha-n} du for integer offset d.

    The tent-weighted domain is split into unit cubes.  A cube having the
    singular point as a vertex is integrated by the Duffy map from that
    vertex (Gauss-Jacobi in the radial variable, exact because the tent is
    polynomial there); all other cubes are at distance >= 1 from the
    singularity and take tensor Gauss-Legendre.
    """
    n = len(d)
    p = alpha - n
    tg, wg = _legendre01(_GL_NODES)
    tj, wj = _jacobi01(4, alpha)
    total = 0.0
    for sides in product((0, 1), repeat=n):
        # axis i covers y_i in [d_i - 1, d_i] (side 0) or [d_i, d_i + 1] (side 1)
        lo = np.array([di - 1 if s == 0 else di for di, s in zip(d, sides)], dtype=float)
        sign = np.array([1.0 if s == 0 else -1.0 for s in sides])  # tent = 1 + sign*(y - d)
        dd = np.asarray(d, dtype=float)

        def tent(y):
            return np.prod(1.0 + sign * (y - dd), axis=-1)

        vertex = all(l == 0 or l + 1 == 0 for l in lo)
        if vertex:
            refl = np.where(lo == 0, 1.0, -1.0)  # y = refl * z, z in [0,1]^n
            if n == 2:
                v = tg[:, None]
                wv = wg
            else:
                v = np.stack(np.meshgrid(tg, tg, indexing="ij"), -1).reshape(-1, 2)
                wv = np.outer(wg, wg).ravel()
            v = v.reshape(len(wv), n - 1)
            ang = (1.0 + np.sum(v**2, axis=-1)) ** (p / 2)
            for k in range(n):
                z = np.insert(v, k, 1.0, axis=1)  # (V, n), direction with z_k = 1
                pts = tj[:, None, None] * z[None, :, :]  # (T, V, n)
                vals = tent(refl * pts)
                total += float(np.einsum("t,v,tv,v->", wj, wv, vals, ang))
        else:
            axes = [lo_i + tg for lo_i in lo]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
            wts = wg
            for _ in range(n - 1):
                wts = np.multiply.outer(wts, wg)
            r = np.sqrt(np.sum(pts**2, axis=-1))
            total += float(np.sum(wts * tent(pts) * r**p))
    return total


@lru_cache(maxsize=None)
def _near_table(dim: int, alpha: float) -> dict[tuple[int, ...], float]:
    R = _NEAR_RADIUS[dim]
    table: dict[tuple[int, ...], float] = {}
    for key in product(range(R + 1), repeat=dim):
        canon = tuple(sorted(key))
        if canon not in table:
            table[canon] = _pair_integral_nd(canon, alpha)
    return table


def cell_pair_table(dim: int, alpha: float, max_offset: int) -> np.ndarray:
    """``G(d)`` for ``|d_i| <= max_offset``: the integral of ``|x-y|^{alpha-n}``
    over ``x`` in the unit cell and ``y`` in the unit cell shifted by ``d``.

    Returned as an array of shape ``(2*max_offset + 1,)*dim`` indexed by
    ``d + max_offset``.
    """
    _check_alpha(alpha, dim)
    offs = np.arange(-max_offset, max_offset + 1)
    if dim == 1:
        d = np.abs(offs).astype(float)
        near = d <= _NEAR_RADIUS[1]
        out = np.empty_like(d)
        out[near] = _pair_integral_1d(d[near], alpha)
        out[~near] = _far_series_1d(d[~near], alpha)
        return out
    grids = np.meshgrid(*([np.abs(offs)] * dim), indexing="ij")
    absd = np.stack(grids, -1)
    r = np.sqrt(np.sum(absd.astype(float) ** 2, axis=-1))
    p = alpha - dim
    with np.errstate(divide="ignore", invalid="ignore"):
        # midpoint value plus the tent second-moment correction (1/12) Lap |d|^p
        out = r**p + (p * (alpha - 2.0) / 12.0) * r ** (p - 2)
    table = _near_table(dim, float(alpha))
    R = _NEAR_RADIUS[dim]
    near = np.max(absd, axis=-1) <= R
    for idx in zip(*np.nonzero(near)):
        out[idx] = table[tuple(sorted(absd[idx]))]
    return out


def _block_energies(blocks: np.ndarray, dim: int, alpha: float, spacing: float) -> np.ndarray:
    """``h^{n+alpha} sum_{i,k} b_i b_k G(i-k)`` for a batch of blocks
    shaped ``(K,) + (m,)*dim``."""
    m = blocks.shape[1]
    G = cell_pair_table(dim, alpha, m - 1)  # offsets -(m-1)..(m-1)
    scale = spacing ** (dim + alpha)
    if m == 1:
        return scale * G.ravel()[0] * blocks.reshape(len(blocks)) ** 2
    size = (2 * m,) * dim
    # circular layout of G on a 2m grid: offset d sits at index d mod 2m
    Gc = np.zeros(size)
    idx = np.arange(-(m - 1), m) % (2 * m)
    Gc[np.ix_(*([idx] * dim))] = G
    axes = tuple(range(1, dim + 1))
    Gh = sfft.rfftn(Gc)
    conv = sfft.irfftn(sfft.rfftn(blocks, s=size, axes=axes) * Gh, s=size, axes=axes)
    conv = conv[(slice(None),) + (slice(0, m),) * dim]
    return scale * np.sum(blocks * conv, axis=axes)


def _cube_block_index(cube: DyadicCube, origin: np.ndarray, spacing: float) -> tuple[np.ndarray, int]:
    start = (cube.corner - origin) / spacing
    m = cube.side / spacing
    si, mi = np.rint(start).astype(int), int(round(m))
    if np.any(np.abs(start - si) > 1e-6) or abs(m - mi) > 1e-6 or mi < 1:
        raise InvalidParameters(f"cube {cube.as_dict()} is not aligned with cells of size {spacing}")
    return si, mi


def _cell_samples(w, cubes: Sequence[DyadicCube], spacing: float):
    lo = np.min([c.corner for c in cubes], axis=0)
    hi = np.max([c.corner + c.side for c in cubes], axis=0)
    counts = np.rint((hi - lo) / spacing).astype(int)
    if isinstance(w, np.ndarray):
        vals = np.asarray(w, dtype=float)
        if vals.shape != tuple(counts):
            raise InvalidParameters(f"cell samples of shape {vals.shape} do not cover the cube family "
                                    f"({tuple(counts)} cells)")
    else:
        axes = [lo[i] + spacing * (np.arange(counts[i]) + 0.5) for i in range(len(lo))]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
        vals = np.asarray(w.values(pts, 0.5 * spacing), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise InvalidWeight("weight has negative or non-finite cell samples")
    return vals, lo


def _extract_blocks(arr: np.ndarray, starts: np.ndarray, m: int) -> np.ndarray:
    dim = arr.ndim
    ar = np.arange(m)
    index = []
    for i in range(dim):
        shape = [1] * (dim + 1)
        shape[i + 1] = m
        index.append(starts[:, i].reshape([len(starts)] + [1] * dim) + ar.reshape(shape))
    return arr[tuple(index)]


def riesz_double_integral(w, Q: DyadicCube, alpha: float, spacing: float) -> float:
    """``int_Q int_Q w(x) w(y) |x-y|^{alpha-n} dx dy`` on cells of size ``spacing``."""
    _check_alpha(alpha, Q.dim)
    vals, lo = _cell_samples(w, [Q], spacing)
    return float(_block_energies(vals[None], Q.dim, alpha, spacing)[0])


@dataclass
class NormValue:
    """A measured norm together with the element of the family attaining it."""

    value: float
    witness: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def cube_energies(w, alpha: float, cubes: Sequence[DyadicCube], spacing: float):
    """Masses ``int_Q w`` and self-energies for every cube of the family."""
    dim = cubes[0].dim
    _check_alpha(alpha, dim)
    vals, origin = _cell_samples(w, cubes, spacing)
    masses = np.empty(len(cubes))
    energies = np.empty(len(cubes))
    by_size: dict[int, list[int]] = {}
    starts = []
    for k, c in enumerate(cubes):
        s, m = _cube_block_index(c, origin, spacing)
        starts.append(s)
        by_size.setdefault(m, []).append(k)
    starts = np.array(starts)
    vol = spacing**dim
    for m, ks in by_size.items():
        ks = np.array(ks)
        # chunk to bound memory of the batched FFTs
        chunk = max(1, 2**22 // (2 * m) ** dim)
        for i in range(0, len(ks), chunk):
            sel = ks[i:i + chunk]
            blocks = _extract_blocks(vals, starts[sel], m)
            masses[sel] = vol * blocks.reshape(len(sel), -1).sum(axis=1)
            energies[sel] = _block_energies(blocks, dim, alpha, spacing)
    return masses, energies


def default_cubes(grid: GridSpec) -> list[DyadicCube]:
    return dyadic_cubes(grid_base_box(grid), 0, max_level(grid), grid.spacing)


def ks_norm(w, alpha: float, grid: GridSpec, cubes: Sequence[DyadicCube] | None = None,
            mass_floor: float = 1e-12) -> NormValue:
    """Kerman-Sawyer norm ``sup_Q (int_Q w)^{-1} int_Q int_Q w w |x-y|^{alpha-n}``
    over a dyadic family (default: all cubes of the grid box down to side 2h).

    Cubes whose mass is below ``mass_floor`` times the largest cube mass are
    skipped.  ``w`` may be a WeightSpec or an array of cell-midpoint samples
    covering the family.
    """
    cubes = default_cubes(grid) if cubes is None else list(cubes)
    masses, energies = cube_energies(w, alpha, cubes, grid.spacing)
    keep = masses > mass_floor * masses.max() if masses.max() > 0 else np.zeros(len(cubes), bool)
    if not np.any(keep):
        raise EmptyWeight("every cube of the family has negligible weight mass")
    ratios = np.full(len(cubes), -np.inf)
    ratios[keep] = energies[keep] / masses[keep]
    k = int(np.argmax(ratios))
    return NormValue(float(ratios[k]), {"cube": cubes[k].as_dict(), "mass": float(masses[k]),
                                        "energy": float(energies[k]),
                                        "cubes_used": int(keep.sum())})


def ks_norm_power(w, beta: float, alpha: float, grid: GridSpec,
                  cubes: Sequence[DyadicCube] | None = None) -> NormValue:
    """``||w^beta||_{KS_alpha}^{1/(2 beta)}``, the weight factor of the smoothing bound."""
    if beta < 1:
        raise InvalidParameters(f"beta must be >= 1, got {beta}")
    if isinstance(w, np.ndarray):
        wb = np.asarray(w, dtype=float) ** beta
    else:
        wb = w.power(beta)
    inner = ks_norm(wb, alpha, grid, cubes)
    return NormValue(inner.value ** (1.0 / (2.0 * beta)), dict(inner.witness, ks=inner.value))


# ---------------------------------------------------------------------------
# Morrey-Campanato
# ---------------------------------------------------------------------------

_SUPERSAMPLE = 4


def _ball_mask(radius_cells: float, dim: int) -> np.ndarray:
    """Fraction of each unit cell (integer offset from the center cell)
    covered by a ball of the given radius centered at the center cell's midpoint."""
    R = int(math.ceil(radius_cells + 0.5 * math.sqrt(dim)))
    offs = np.arange(-R, R + 1)
    sub = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE - 0.5
    fine = (offs[:, None] + sub[None, :]).ravel()
    mesh = np.meshgrid(*([fine] * dim), indexing="ij")
    inside = (sum(m**2 for m in mesh) <= radius_cells**2).astype(float)
    shape = []
    for _ in range(dim):
        shape += [len(offs), _SUPERSAMPLE]
    return inside.reshape(shape).mean(axis=tuple(range(1, 2 * dim, 2)))


def _ball_coverage(center: np.ndarray, radius: float, grid: GridSpec) -> np.ndarray:
    h = grid.spacing
    sub = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE * h
    fine = (grid.axis[:, None] + sub[None, :]).ravel()
    out = None
    for i in range(grid.dim):
        # separable squared distances, accumulated by broadcasting
        d2 = ((fine - center[i]) ** 2).reshape([-1 if k == i else 1 for k in range(grid.dim)])
        out = d2 if out is None else out + d2
    inside = (out <= radius**2).astype(float)
    shape = []
    for _ in range(grid.dim):
        shape += [grid.points_per_axis, _SUPERSAMPLE]
    return inside.reshape(shape).mean(axis=tuple(range(1, 2 * grid.dim, 2)))


def _cell_average_power(w, grid: GridSpec, p: float) -> np.ndarray:
    """Cell averages of ``w^p`` from a ``_SUPERSAMPLE^n`` midpoint rule per cell."""
    if isinstance(w, Sampled) and w.grid == grid:
        return w.samples**p
    h = grid.spacing
    sub = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE * h
    fine = (grid.axis[:, None] + sub[None, :]).ravel()
    pts = np.stack(np.meshgrid(*([fine] * grid.dim), indexing="ij"), -1)
    vals = np.asarray(w.values(pts, 0.5 * h), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise InvalidWeight(f"weight {w.id} has negative or non-finite samples")
    shape = []
    for _ in range(grid.dim):
        shape += [grid.points_per_axis, _SUPERSAMPLE]
    return (vals**p).reshape(shape).mean(axis=tuple(range(1, 2 * grid.dim, 2)))


def dyadic_radii(grid: GridSpec) -> list[float]:
    r, out = 2 * grid.spacing, []
    while r <= 2 * grid.half_width * (1 + 1e-12):
        out.append(r)
        r *= 2
    return out


def mc_norm(w, alpha: float, p: float, grid: GridSpec, centers="all",
            radii: Iterable[float] | None = None) -> NormValue:
    """Morrey-Campanato norm ``sup_{x,r} r^alpha (r^{-n} int_{B(x,r)} w^p)^{1/p}``
    over a finite center/radius family.

    ``centers`` is ``"all"`` (every cell midpoint) or an array of points; the
    weight is taken as zero outside the box.  Ball integrals use supersampled
    cell averages of ``w^p`` times the supersampled fraction of each cell
    inside the ball.
    """
    n = grid.dim
    if not 0 < alpha <= n:
        raise InvalidParameters(f"alpha must lie in (0, n], got {alpha}")
    if not 1 <= p <= n / alpha * (1 + 1e-12):
        raise InvalidParameters(f"p must lie in [1, n/alpha] = [1, {n / alpha:g}], got {p}")
    radii = dyadic_radii(grid) if radii is None else [float(r) for r in radii]
    h = grid.spacing
    for r in radii:
        if not 2 * h * (1 - 1e-12) <= r <= 2 * grid.half_width * (1 + 1e-12):
            raise InvalidParameters(f"radius {r} outside [2h, 2L] = [{2 * h}, {2 * grid.half_width}]")
    wp = _cell_average_power(w, grid, p)
    vol = grid.cell_volume
    best, wit = -1.0, {}
    if isinstance(centers, str) and centers == "all":
        for r in radii:
            mask = _ball_mask(r / h, n)
            integral = vol * fftconvolve(wp, mask, mode="same")
            vals = r**alpha * (np.maximum(integral, 0.0) / r**n) ** (1.0 / p)
            k = np.unravel_index(int(np.argmax(vals)), vals.shape)
            if vals[k] > best:
                best = float(vals[k])
                wit = {"center": grid.cell_centers[k].tolist(), "radius": r}
    else:
        pts = np.atleast_2d(np.asarray(centers, dtype=float))
        for c in pts:
            for r in radii:
                integral = vol * float(np.sum(wp * _ball_coverage(c, r, grid)))
                val = r**alpha * (integral / r**n) ** (1.0 / p)
                if val > best:
                    best, wit = val, {"center": c.tolist(), "radius": r}
    return NormValue(best, wit)


def mc_profile(w, alpha: float, p: float, grid: GridSpec, center, radii) -> np.ndarray:
    """The Morrey-Campanato expression at one center for each radius."""
    c = np.asarray(center, dtype=float)
    wp = _cell_average_power(w, grid, p)
    out = []
    for r in radii:
        integral = grid.cell_volume * float(np.sum(wp * _ball_coverage(c, r, grid)))
        out.append(r**alpha * (integral / r**grid.dim) ** (1.0 / p))
    return np.array(out)
