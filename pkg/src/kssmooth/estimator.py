"""Admissibility arithmetic, best-constant measurement and refinement scans.

Every constant reported here is a maximum over a declared finite family
(inputs, weights, cubes) and comes with the witness that attains it.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import fft as sfft

from kssmooth.errors import InvalidParameters
from kssmooth.grid_spectral import ComplexField, GridSpec
from kssmooth.propagator import EvolutionParams, spacetime_norms
from kssmooth.sphere import (
    SphereRule,
    check_annulus,
    dyadic_kernel,
    surface_measure_ft,
)
from kssmooth.weights import ks_norm_power, sample_weight

SCHEMA_VERSION = 1

# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def smoothing_order(alpha: float, beta: float, gamma: float) -> float:
    """``s = 1 - (alpha/beta + 2 - gamma)/2``, arranged so that at ``gamma = 2``
    it is bit-for-bit ``1 - alpha/(2 beta)``."""
    return 1.0 - alpha / (2.0 * beta) + (gamma - 2.0) / 2.0


@dataclass(frozen=True)
class ParamSet:
    n: int
    gamma: float
    alpha: float
    beta: float
    s: float
    admissible: bool
    violations: tuple[str, ...] = ()
    flags: dict = field(default_factory=dict, compare=False)
    p: float | None = None
    q: float | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        d["violations"] = list(self.violations)
        return d


def param_set(n: int, gamma: float, alpha: float, beta: float, p: float | None = None,
              q: float | None = None) -> ParamSet:
    """Evaluate the hypotheses of the smoothing theorem without rejecting."""
    violations = []
    if n < 2:
        violations.append(f"n >= 2 fails (n = {n})")
    if not gamma > 1:
        violations.append(f"gamma > 1 fails (gamma = {gamma})")
    if not beta >= 1:
        violations.append(f"1 <= beta fails (beta = {beta})")
    if not beta < (n + 1) / 2:
        violations.append(f"beta < (n+1)/2 = {(n + 1) / 2:g} fails (beta = {beta})")
    if not alpha > beta + (n - 1) / 2:
        violations.append(f"alpha > beta + (n-1)/2 = {beta + (n - 1) / 2:g} fails, strict (alpha = {alpha})")
    if not alpha > 0:
        violations.append(f"alpha > 0 fails (alpha = {alpha})")
    s = smoothing_order(alpha, beta, gamma)
    flags = {
        "s_schroedinger": 1.0 - alpha / (2.0 * beta) if gamma == 2 else None,
        "ks_class_defined": bool(0 < alpha < n),
        "s_lower_bound": 1.0 - (alpha + 2.0 - gamma) / 2.0,
        "s_above_lower_bound": bool(s >= 1.0 - (alpha + 2.0 - gamma) / 2.0 - 1e-12),
    }
    if 1 < gamma <= 2:
        upper = 1.0 / (n + 1) - (2.0 - gamma) / 2.0
        flags["s_upper_bound"] = upper
        flags["s_below_upper_bound"] = bool(s < upper)
        flags["smoothing_requires_gamma_above"] = (6 * n + 2) / (3 * (n + 1))
    return ParamSet(n, float(gamma), float(alpha), float(beta), s, not violations, tuple(violations),
                    flags, p, q)


def validate_params(n: int, gamma: float, alpha: float, beta: float, **kw) -> ParamSet:
    """Like :func:`param_set` but raises ``InvalidParameters`` naming every
    violated inequality."""
    ps = param_set(n, gamma, alpha, beta, **kw)
    if not ps.admissible:
        raise InvalidParameters("; ".join(ps.violations))
    return ps


def admissible_s_interval(n: int, alpha: float, gamma: float = 2.0) -> tuple[float, float]:
    """``[s_min, s_max)`` reachable by admissible ``beta`` at fixed ``alpha``.

    ``s`` is increasing in ``beta``; ``beta`` ranges over
    ``[1, min((n+1)/2, alpha - (n-1)/2))``.  At ``gamma = 2`` the upper end is
    ``(alpha-n+1)/(2 alpha-n+1)`` whenever that bound is the binding one.
    """
    beta_max = min((n + 1) / 2, alpha - (n - 1) / 2)
    if beta_max <= 1:
        raise InvalidParameters(f"no admissible beta for n={n}, alpha={alpha}")
    return smoothing_order(alpha, 1.0, gamma), smoothing_order(alpha, beta_max, gamma)


def summability_exponent(n: int, alpha: float, beta: float) -> float:
    """Exponent ``e`` of ``2^{j e}`` in the interpolated per-piece bound."""
    return 1.0 + ((n - 1) / 2.0 - alpha) / beta


def dyadic_sum_converges(n: int, alpha: float, beta: float) -> bool:
    """Geometric-series test for ``sum_j 2^{j e}``: converges iff ``e < 0``.

    Since ``beta > 0`` this is ``alpha > beta + (n-1)/2``, compared directly so
    the gate flips at exactly the same floating-point value as admissibility.
    """
    return alpha > beta + (n - 1) / 2


# ---------------------------------------------------------------------------
# Power iteration
# ---------------------------------------------------------------------------


@dataclass
class PowerResult:
    value: float
    vector: np.ndarray = field(repr=False)
    iterations: int
    converged: bool
    residual: float
    history: list[float] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        out = {"value": self.value, "iterations": self.iterations, "converged": self.converged,
               "residual": self.residual}
        if not self.converged:
            out["last_iterates"] = self.history[-2:]
        return out


def power_iteration(apply: Callable[[np.ndarray], np.ndarray], dim: int, seed: int = 0,
                    tol: float = 1e-8, residual_tol: float = 1e-6, max_iter: int = 500,
                    block: int = 4, real: bool = False, atol: float = 0.0) -> PowerResult:
    """Largest eigenvalue of a Hermitian positive semidefinite operator.

    Block power (subspace) iteration with a Rayleigh-Ritz step, so clustered
    top eigenvalues do not stall it.  ``apply`` maps a ``(dim, k)`` array to
    ``(dim, k)``.  The top Ritz value is nondecreasing in the iteration count.
    Stops once the Ritz value changes by less than ``tol`` (relative) and the
    residual ``||Bv - lam v|| / lam`` is below ``residual_tol``, or once the
    Ritz value stays below ``atol`` (the operator vanishes numerically).
    """
    rng = np.random.default_rng(seed)
    k = max(1, min(block, dim))
    V = rng.normal(size=(dim, k))
    if not real:
        V = V + 1j * rng.normal(size=(dim, k))
    V, _ = np.linalg.qr(V)
    history: list[float] = []
    prev = None
    top, x, res = 0.0, V[:, 0], np.inf
    for it in range(1, max_iter + 1):
        W = apply(V)
        H = V.conj().T @ W
        theta, Y = np.linalg.eigh(0.5 * (H + H.conj().T))
        order = np.argsort(theta)[::-1]
        theta, Y = theta[order], Y[:, order]
        top = float(theta[0])
        x = V @ Y[:, 0]
        r = W @ Y[:, 0] - top * x
        res = float(np.linalg.norm(r) / max(abs(top), 1e-300))
        history.append(top)
        if top <= atol and it > 1:
            return PowerResult(max(top, 0.0), x, it, True, 0.0, history)
        if prev is not None and abs(top - prev) <= tol * abs(top) and res <= residual_tol:
            return PowerResult(top, x, it, True, res, history)
        prev = top
        V, _ = np.linalg.qr(W @ Y)
    return PowerResult(top, x, max_iter, False, res, history)


def operator_norm(apply: Callable[[np.ndarray], np.ndarray], dim: int, **kw) -> PowerResult:
    """``||B||`` for a self-adjoint but possibly indefinite ``B``, via power
    iteration on ``B^2``; the returned ``value`` is the norm itself."""
    if "atol" in kw:
        kw["atol"] = kw["atol"] ** 2
    pr = power_iteration(lambda V: apply(apply(V)), dim, **kw)
    pr.value = math.sqrt(max(pr.value, 0.0))
    pr.history = [math.sqrt(max(v, 0.0)) for v in pr.history]
    return pr


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _encode(obj):
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return bool(obj) if isinstance(obj, np.bool_) else obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return format(float(obj), ".17g")
    if isinstance(obj, complex):
        return [format(obj.real, ".17g"), format(obj.imag, ".17g")]
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    return str(obj)


@dataclass
class EstimateReport:
    """Result of one measurement or scan.

    ``history`` holds one entry per refinement level (or per parameter point)
    and ``verdict`` the boolean/string outcome flags.  ``to_json`` writes all
    floats as 17-significant-digit decimal strings.
    """

    kind: str
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    constant: float | None = None
    witnesses: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    verdict: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": self.kind, "params": self.params,
                "grid": self.grid, "constant": self.constant, "witnesses": self.witnesses,
                "history": self.history, "verdict": self.verdict, "extra": self.extra}

    def to_json(self, timestamp: str | None = None) -> str:
        d = self.as_dict()
        if timestamp is not None:
            d["timestamp"] = timestamp
        return json.dumps(_encode(d), indent=2, sort_keys=True) + "\n"


def grid_meta(grid: GridSpec) -> dict:
    return {"dim": grid.dim, "points_per_axis": grid.points_per_axis, "half_width": grid.half_width,
            "spacing": grid.spacing}


# ---------------------------------------------------------------------------
# Smoothing ratio
# ---------------------------------------------------------------------------


@dataclass
class SmoothingRatio:
    ratio: float
    lhs: float
    ks_factor: float
    f_norm: float


def _weight_arrays(w, grid: GridSpec):
    if isinstance(w, np.ndarray):
        return w, w
    return sample_weight(w, grid, "nodes"), w


def smoothing_ratio(f: ComplexField, params: ParamSet, w, evolution: EvolutionParams,
                    ks_factor: float | None = None, require_admissible: bool = True) -> SmoothingRatio:
    """``|| |grad|^s e^{-it(-Delta)^{gamma/2}} f ||_{L^2_{x,t}(w)} / (||w^beta||_{KS_alpha}^{1/(2beta)} ||f||_2)``."""
    if require_admissible and not params.admissible:
        raise InvalidParameters("; ".join(params.violations))
    if evolution.gamma != params.gamma or evolution.s != params.s:
        raise InvalidParameters("evolution (gamma, s) disagree with the parameter set")
    node_w, spec = _weight_arrays(w, f.grid)
    if ks_factor is None:
        ks_factor = ks_norm_power(spec, params.beta, params.alpha, f.grid).value
    f_norm = f.norm()
    if f_norm == 0 or ks_factor == 0:
        raise InvalidParameters("zero denominator: ||f||_2 or the KS factor vanishes")
    lhs = float(spacetime_norms(f, evolution, [node_w])[0])
    return SmoothingRatio(lhs / (ks_factor * f_norm), lhs, float(ks_factor), f_norm)


def smoothing_family_max(fields: Sequence[ComplexField], params: ParamSet, weights: dict,
                         evolution: EvolutionParams, require_admissible: bool = True,
                         threads: int = 1) -> EstimateReport:
    """Max smoothing ratio over ``fields`` x ``weights`` (a ``{id: WeightSpec}`` map).

    All weights share one evolution pass per input.
    """
    if require_admissible and not params.admissible:
        raise InvalidParameters("; ".join(params.violations))
    grid = fields[0].grid
    ids = list(weights)
    ks = {k: ks_norm_power(weights[k], params.beta, params.alpha, grid) for k in ids}
    arrays = [sample_weight(weights[k], grid, "nodes") for k in ids]

    def one(f):
        return spacetime_norms(f, evolution, arrays) / f.norm()

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(one, fields))
    else:
        rows = [one(f) for f in fields]
    table = np.array(rows) / np.array([ks[k].value for k in ids])[None, :]
    i, k = np.unravel_index(int(np.argmax(table)), table.shape)
    per_weight = {wid: float(table[:, c].max()) for c, wid in enumerate(ids)}
    return EstimateReport(
        "smoothing", params.as_dict(), grid_meta(grid), float(table[i, k]),
        {"input_index": int(i), "weight": ids[k], "ks_cube": ks[ids[k]].witness.get("cube")},
        extra={"per_weight_max": per_weight, "ks_factor": {wid: ks[wid].value for wid in ids},
               "T": evolution.T, "time_nodes": evolution.time_nodes, "inputs": len(fields)})


# ---------------------------------------------------------------------------
# Extension operator and the TT* form
# ---------------------------------------------------------------------------


def extension_gram(w_nodes: np.ndarray, grid: GridSpec, rule: SphereRule, radius: float = 1.0,
                   chunk: int = 2048) -> np.ndarray:
    """``A^H A`` for ``A = W^{1/2} Phi D^{1/2}``: the extension from rule-node space
    (quadrature inner product) into ``L^2(w)`` on the grid, made unitary on both sides."""
    pts = grid.nodes.reshape(-1, grid.dim)
    wv = np.asarray(w_nodes, dtype=float).reshape(-1) * grid.cell_volume
    keep = wv > 0
    pts, wv = pts[keep], wv[keep]
    scale = radius ** (rule.dim - 1) * np.sqrt(rule.weights)
    m = rule.size
    G = np.zeros((m, m), dtype=complex)
    for i in range(0, len(pts), chunk):
        A = np.exp(-1j * radius * (pts[i:i + chunk] @ rule.nodes.T))
        A *= np.sqrt(wv[i:i + chunk])[:, None]
        A *= scale[None, :]
        G += A.conj().T @ A
    return 0.5 * (G + G.conj().T)


def extension_norm(w, params: ParamSet | None, grid: GridSpec, rule: SphereRule, radius: float = 1.0,
                   seed: int = 0, dense_limit: int = 4000, ks_factor: float | None = None) -> EstimateReport:
    """Best constant in ``||(f dsigma_r)^||_{L^2(w)} <= C ||w^beta||_{KS}^{1/(2beta)} ||f||_{L^2(S_r)}``.

    The raw operator norm comes from power iteration on ``T*T``; when the rule
    has at most ``dense_limit`` nodes it is cross-checked by a dense
    eigendecomposition.  With ``params=None`` no KS normalization is applied.
    """
    node_w, spec = _weight_arrays(w, grid)
    if np.any(node_w < 0):
        raise InvalidParameters("weight must be nonnegative")
    G = extension_gram(node_w, grid, rule, radius)
    # the quadrature inner product on S_r carries r^{n-1}
    G = G / radius ** (rule.dim - 1)
    pr = power_iteration(lambda V: G @ V, rule.size, seed=seed)
    raw = math.sqrt(max(pr.value, 0.0))
    extra = {"power_iteration": pr.summary(), "rule": rule.metadata(), "radius": radius}
    if rule.size <= dense_limit:
        dense = float(np.linalg.eigvalsh(G)[-1])
        extra["dense_norm"] = math.sqrt(max(dense, 0.0))
        extra["power_vs_dense_rel"] = abs(raw - extra["dense_norm"]) / max(extra["dense_norm"], 1e-300)
    cert = float(np.linalg.norm(G @ pr.vector - pr.value * pr.vector) / (pr.value * np.linalg.norm(pr.vector)))
    extra["certificate_residual"] = cert
    constant = raw
    if params is not None:
        if ks_factor is None:
            ks_factor = ks_norm_power(spec, params.beta, params.alpha, grid).value
        constant = raw / ks_factor
        extra["ks_factor"] = ks_factor
    extra["raw_norm"] = raw
    return EstimateReport("extension", params.as_dict() if params else {}, grid_meta(grid), constant,
                          {"weight": getattr(spec, "id", "array")}, extra=extra,
                          verdict={"converged": pr.converged, "certificate_ok": cert <= 1e-6})


def _difference_kernel(grid: GridSpec, kernel: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Kernel sampled on all node differences, laid out circularly on a ``2N`` box."""
    N, h, n = grid.points_per_axis, grid.spacing, grid.dim
    offs = np.arange(2 * N)
    offs = np.where(offs < N, offs, offs - 2 * N)  # offset N is never a real difference
    pts = np.stack(np.meshgrid(*([offs * h] * n), indexing="ij"), -1)
    K = kernel(pts)
    mask = np.ones((2 * N,) * n, dtype=bool)
    for ax in range(n):
        sl = [slice(None)] * n
        sl[ax] = N
        mask[tuple(sl)] = False
    return np.where(mask, K, 0.0)


class WeightedConvolution:
    """``g -> a (K * (a g))`` on node functions, with ``K`` a kernel on R^n
    (linear, zero-padded) or on the torus, and ``a`` a nonnegative node array."""

    def __init__(self, grid: GridSpec, kernel: Callable[[np.ndarray], np.ndarray], amplitude=None,
                 periodic: bool = False):
        self.grid = grid
        self.periodic = periodic
        self.a = None if amplitude is None else np.asarray(amplitude, dtype=float).reshape(grid.shape)
        h = grid.cell_volume
        if periodic:
            from kssmooth.grid_spectral import _mesh

            # kernel at node offsets wrapped into [-L, L)
            N = grid.points_per_axis
            offs = np.arange(N)
            offs = np.where(offs < N // 2, offs, offs - N)
            self.symbol = sfft.fftn(kernel(_mesh(offs * grid.spacing, grid.dim))) * h
            self.size = grid.shape
        else:
            self.symbol = sfft.fftn(_difference_kernel(grid, kernel)) * h
            self.size = tuple(2 * s for s in grid.shape)

    def __call__(self, V: np.ndarray) -> np.ndarray:
        g = self.grid
        k = V.shape[1]
        X = V.T.reshape((k,) + g.shape)
        if self.a is not None:
            X = X * self.a
        axes = tuple(range(1, g.dim + 1))
        Y = sfft.ifftn(sfft.fftn(X, s=self.size, axes=axes) * self.symbol, axes=axes)
        Y = Y[(slice(None),) + tuple(slice(0, s) for s in g.shape)]
        if self.a is not None:
            Y = Y * self.a
        return Y.reshape(k, -1).T

    def dense(self) -> np.ndarray:
        return self(np.eye(self.grid.size))


def tt_star_norm(w, params: ParamSet | None, grid: GridSpec, seed: int = 0, periodic: bool = False,
                 dense_limit: int = 1024, ks_factor: float | None = None) -> EstimateReport:
    """Best constant in ``||(dsigma)^ * f||_{L^2(w)} <= C ||f||_{L^2(w^{-1})}``, i.e. the
    norm of ``g -> w^{1/2} ((dsigma)^ * (w^{1/2} g))`` on plain ``L^2``.

    Normalized (when ``params`` is given) by ``||w^beta||_{KS}^{1/beta}``, the
    square of the extension factor.
    """
    node_w, spec = _weight_arrays(w, grid)
    if np.any(node_w <= 0):
        raise InvalidParameters("the TT* form needs a strictly positive weight (w^{-1} must exist)")
    n = grid.dim
    op = WeightedConvolution(grid, lambda x: surface_measure_ft(n, x).real, np.sqrt(node_w), periodic)
    pr = power_iteration(op, grid.size, seed=seed, real=True)
    extra = {"power_iteration": pr.summary(), "periodic": periodic,
             "rayleigh_monotone": bool(np.all(np.diff(pr.history) >= -1e-12 * abs(pr.value)))}
    if grid.size <= dense_limit:
        M = op.dense()
        ev = np.linalg.eigvalsh(0.5 * (M + M.T).real)
        extra["dense_norm"] = float(np.max(np.abs(ev)))
        extra["power_vs_dense_rel"] = abs(pr.value - extra["dense_norm"]) / extra["dense_norm"]
        extra["min_eigenvalue"] = float(ev[0])
    v = pr.vector[:, None]
    cert = float(np.linalg.norm(op(v)[:, 0] - pr.value * pr.vector) / (pr.value * np.linalg.norm(pr.vector)))
    extra["certificate_residual"] = cert
    extra["raw_norm"] = pr.value
    constant = pr.value
    if params is not None:
        if ks_factor is None:
            ks_factor = ks_norm_power(spec, params.beta, params.alpha, grid).value
        constant = pr.value / ks_factor**2
        extra["ks_factor"] = ks_factor
    return EstimateReport("tt_star", params.as_dict() if params else {}, grid_meta(grid), constant,
                          {"weight": getattr(spec, "id", "array")}, extra=extra,
                          verdict={"converged": pr.converged, "certificate_ok": cert <= 1e-6})


def equivalence_check(w, params: ParamSet, grid: GridSpec, rule: SphereRule, seed: int = 0,
                      tol: float = 0.01) -> EstimateReport:
    """Extension norm squared against the TT* norm on the same grid and weight."""
    ks = ks_norm_power(_weight_arrays(w, grid)[1], params.beta, params.alpha, grid).value
    ext = extension_norm(w, params, grid, rule, seed=seed, ks_factor=ks)
    tts = tt_star_norm(w, params, grid, seed=seed, ks_factor=ks)
    a, b = ext.extra["raw_norm"] ** 2, tts.extra["raw_norm"]
    rel = abs(a - b) / b
    return EstimateReport("equivalence", params.as_dict(), grid_meta(grid), rel,
                          {"weight": ext.witnesses["weight"]},
                          verdict={"agree": rel <= tol},
                          extra={"extension_norm_sq": a, "tt_star_norm": b, "ks_factor": ks,
                                 "extension": ext.extra, "tt_star": tts.extra})


# ---------------------------------------------------------------------------
# Dyadic pieces
# ---------------------------------------------------------------------------


def log2_slope(js: Sequence[int], values: Sequence[float]) -> float:
    """Least-squares slope of ``log2(values)`` against ``js``; zero values (an
    operator that vanishes identically) are left out, and fewer than two
    nonzero values give ``-inf``."""
    js = np.asarray(js, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = v > 0
    if keep.sum() < 2:
        return -math.inf
    return float(np.polyfit(js[keep], np.log2(v[keep]), 1)[0])


def _grid_cube_sums(mass: np.ndarray, side_cells: int, enlarge: float) -> tuple[float, float]:
    """Max over the cube grid of side ``side_cells`` (anchored at the box corner)
    of the mass in each cube and in its concentric ``enlarge``-times cube."""
    n = mass.ndim
    N = mass.shape[0]
    c = np.cumsum(mass, axis=0)
    for ax in range(1, n):
        c = np.cumsum(c, axis=ax)
    c = np.pad(c, [(1, 0)] * n)

    def box_sum(lo, hi):
        # inclusion-exclusion on the padded cumulative sum; lo/hi index arrays per axis
        total = 0.0
        for bits in np.ndindex(*(2,) * n):
            idx = tuple(hi[a] if b else lo[a] for a, b in enumerate(bits))
            sign = (-1) ** (n - sum(bits))
            total = total + sign * c[np.ix_(*idx)]
        return total

    starts = np.arange(0, N, side_cells)
    lo = [starts] * n
    hi = [np.minimum(starts + side_cells, N)] * n
    inner = box_sum(lo, hi)
    ext = int(round((enlarge - 1) / 2 * side_cells))
    lo_e = [np.clip(starts - ext, 0, N)] * n
    hi_e = [np.clip(starts + side_cells + ext, 0, N)] * n
    outer = box_sum(lo_e, hi_e)
    return float(inner.max()), float(outer.max())


def dyadic_piece_bounds(js: Iterable[int], w, params: ParamSet, grid: GridSpec, seed: int = 0,
                        enlarge: float = 10.0, tol: float = 1e-7, residual_tol: float = 1e-3,
                        max_iter: int = 300) -> EstimateReport:
    """Per-piece operator norms of ``K_j *``.

    For each ``j``: the plain ``L^2`` norm (compared with ``2^j``), the weighted
    norm ``L^2(w^{-beta}) -> L^2(w^beta)`` divided by ``||w^beta||_{KS}``
    (compared with ``2^{j(n - alpha - (n-1)/2)}``), and the cube-grid bound
    ``10^{n/2} ||K_j||_inf (sup int_{Q*} w^beta)^{1/2} (sup int_Q w^beta)^{1/2}``
    over grid cubes of side ``2^j`` and their enlargements, which dominates
    the weighted norm.  Log2 slopes are fitted over ``js``.
    """
    js = list(js)
    n = grid.dim
    for j in js:
        check_annulus(j, grid)
    node_w, spec = _weight_arrays(w, grid)
    wb = node_w**params.beta
    ks = ks_norm_power(spec, params.beta, params.alpha, grid)
    ks_full = ks.witness["ks"]  # ||w^beta||_KS itself
    rows = []
    for j in js:
        kern = lambda x, j=j: dyadic_kernel(j, x).real  # noqa: E731
        plain_op = WeightedConvolution(grid, kern)
        symbol_sup = float(np.max(np.abs(plain_op.symbol)))
        it = dict(seed=seed, real=True, block=8, tol=tol, residual_tol=residual_tol, max_iter=max_iter)
        plain = operator_norm(plain_op, grid.size, atol=1e-12 * symbol_sup, **it)
        weighted = operator_norm(WeightedConvolution(grid, kern, np.sqrt(wb)), grid.size,
                                 atol=1e-12 * symbol_sup * float(wb.max()), **it)
        r = np.linspace(0, 2.0 ** (j + 1), 20001)
        kmax = float(np.max(np.abs(dyadic_kernel(j, np.stack([r] + [0 * r] * (n - 1), -1)))))
        side_cells = int(round(2.0**j / grid.spacing))
        inner, outer = _grid_cube_sums(wb * grid.cell_volume, side_cells, enlarge)
        bound = enlarge ** (n / 2) * kmax * math.sqrt(inner * outer)
        rows.append({
            "j": j,
            "plain_norm": plain.value,
            "plain_over_2j": plain.value / 2.0**j,
            "padded_symbol_sup": symbol_sup,
            "weighted_norm": weighted.value,
            "weighted_over_ks": weighted.value / ks_full,
            "kernel_sup": kmax,
            "cube_mass_sup": inner,
            "enlarged_cube_mass_sup": outer,
            "cube_grid_bound": bound,
            "cube_grid_bound_holds": bool(weighted.value <= bound * (1 + 1e-9)),
            "enlarged_mass_over_ks_scale": outer / (2.0 ** (j * (n - params.alpha)) * ks_full),
            "converged": plain.converged and weighted.converged,
            "iterations": [plain.iterations, weighted.iterations],
        })
    slope11 = log2_slope(js, [r_["plain_norm"] for r_ in rows])
    slope11_symbol = log2_slope(js, [r_["padded_symbol_sup"] for r_ in rows])
    slope12 = log2_slope(js, [r_["weighted_over_ks"] for r_ in rows])
    target12 = n - params.alpha - (n - 1) / 2
    e = summability_exponent(n, params.alpha, params.beta)
    return EstimateReport(
        "dyadic_pieces", params.as_dict(), grid_meta(grid), None, {"weight": getattr(spec, "id", "array")},
        history=rows,
        verdict={"slope11_ok": slope11 <= 1.2, "slope12_ok": slope12 <= target12 + 0.3,
                 "summable": dyadic_sum_converges(n, params.alpha, params.beta),
                 "cube_grid_bounds_hold": all(r_["cube_grid_bound_holds"] for r_ in rows)},
        extra={"slope11": slope11, "slope11_symbol_sup": slope11_symbol, "slope12": slope12, "slope12_target": target12,
               "summability_exponent": e, "ks": ks_full})


# ---------------------------------------------------------------------------
# Refinement scans
# ---------------------------------------------------------------------------

STABLE, GROWING, INDETERMINATE = "STABLE", "GROWING", "INDETERMINATE"


def classify_growth(values: Sequence[float], stable_tol: float = 0.10, growth_min: float = 0.25) -> str:
    """STABLE if every level changes the constant by less than ``stable_tol``
    (relative), GROWING if every level grows it by at least ``growth_min``."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        raise InvalidParameters("a refinement scan needs at least 3 levels")
    ratios = v[1:] / v[:-1]
    if np.all(np.abs(ratios - 1) < stable_tol):
        return STABLE
    if np.all(ratios >= 1 + growth_min):
        return GROWING
    return INDETERMINATE


def refinement_scan(measure: Callable[[int], tuple[float, dict]], levels: int, params: dict | None = None,
                    axes: Sequence[str] = (), kind: str = "scan") -> EstimateReport:
    """Run ``measure(level)`` for ``level = 0..levels-1``; each call returns the
    constant and a metadata dict.  The verdict classifies the growth."""
    history = []
    for k in range(levels):
        value, meta = measure(k)
        history.append(dict(meta, level=k, constant=float(value)))
    vals = [h["constant"] for h in history]
    growth = [vals[i + 1] / vals[i] for i in range(len(vals) - 1)]
    verdict = classify_growth(vals)
    return EstimateReport(kind, params or {}, {}, vals[-1], {"axes": list(axes)}, history,
                          {"verdict": verdict}, {"growth_per_level": growth})


@dataclass(frozen=True)
class SmoothingScanConfig:
    """Geometry of a (N, L, T) doubling scan; spacing and time step stay fixed."""

    dim: int = 2
    points: int = 128
    half_width: float = 64.0
    T: float = 4.0
    dt: float = 0.1
    inputs: int = 50
    seed: int = 0
    band: tuple[float, float] = (1.0, 1.5)
    sigma: float = 3.0
    spread: float = 2.0

    def level(self, k: int) -> tuple[GridSpec, float]:
        f = 2**k
        return GridSpec(self.dim, self.points * f, self.half_width * f), self.T * f


def smoothing_scan(params: ParamSet, weights: dict, config: SmoothingScanConfig, levels: int = 3,
                   require_admissible: bool = True, threads: int = 1) -> EstimateReport:
    """Max smoothing ratio over the packet family and ``weights`` at each
    level of an (N, L, T) doubling; classified STABLE / GROWING / INDETERMINATE."""
    from kssmooth.propagator import check_window, packet_family

    packets = packet_family(config.seed, config.inputs, config.dim, band=config.band, sigma=config.sigma,
                            spread=config.spread)
    fmax = max(p.max_frequency(tail=5.3) for p in packets)

    def measure(k):
        grid, T = config.level(k)
        ev = EvolutionParams(params.gamma, params.s, T, int(round(2 * T / config.dt)) + 1)
        check_window(grid, ev, fmax)
        fields = [p.sample(grid) for p in packets]
        rep = smoothing_family_max(fields, params, weights, ev, require_admissible, threads)
        return rep.constant, {"grid": grid_meta(grid), "T": T, "witness": rep.witnesses,
                              "per_weight_max": rep.extra["per_weight_max"],
                              "ks_factor": rep.extra["ks_factor"]}

    rep = refinement_scan(measure, levels, params.as_dict(), ("N", "L", "T"), kind="smoothing_scan")
    rep.extra["config"] = asdict(config)
    return rep


def knapp_packet(grid: GridSpec, delta: float) -> ComplexField:
    """Packet at frequency ``e_1`` whose transform has widths ``delta^2`` along
    ``xi_1`` and ``delta`` across: spatially a plate of length ``delta^{-2}``
    and width ``delta^{-1}`` that travels coherently for times ``~ delta^{-2}``."""
    x = grid.nodes
    q = (x[..., 0] * delta**2) ** 2 + np.sum((x[..., 1:] * delta) ** 2, axis=-1)
    vals = np.exp(1j * x[..., 0] - 0.5 * q)
    edge = np.max(np.abs(np.concatenate([np.take(vals, 0, axis=a).ravel() for a in range(grid.dim)])))
    if edge > 1e-10:
        raise InvalidParameters(f"Knapp packet not localized in the box (boundary value {edge:.2e})")
    return ComplexField(grid, "physical", vals)


def knapp_scan(params: ParamSet, deltas: Sequence[float], points: int | None = None, dt: float = 0.25,
               tail: float = 5.3) -> EstimateReport:
    """Smoothing ratio of a Knapp packet against the indicator of the tube it
    occupies (length ``delta^{-2}``, width ``delta^{-1}``), over the window
    ``|t| <= delta^{-2}/2``.  The ratio squared behaves like
    ``delta^{(2 alpha - n + 1)/beta - 2}`` (up to a logarithm when ``alpha``
    is close to ``n - 1``), so it grows as ``delta`` shrinks exactly when
    ``alpha < beta + (n-1)/2``.

    With ``points=None`` each level takes the smallest power-of-two grid whose
    Nyquist frequency is at least four times the packet's frequency reach; an
    explicit ``points`` must meet the same requirement.
    """
    from kssmooth.propagator import check_window
    from kssmooth.weights import Indicator

    n = params.n

    def measure(k):
        d = float(deltas[k])
        T = 0.5 / d**2
        fmax = math.hypot(1 + tail * d**2, tail * d)
        speed = params.gamma * fmax ** (params.gamma - 1)
        # box holds the tube, the packet tails and the group-velocity reach
        L = max(2.2 * speed * T, 1.2 * (tail / d**2 + speed * T), 1.2 * tail / d)
        h_max = math.pi / (4 * fmax)
        N = points if points is not None else 2 ** math.ceil(math.log2(2 * L / h_max))
        grid = GridSpec(n, N, L)
        if grid.spacing > h_max:
            raise InvalidParameters(f"{N} points per axis leave spacing {grid.spacing:g} above {h_max:g} "
                                    f"needed to resolve the packet at delta = {d:g}")
        ev = EvolutionParams(params.gamma, params.s, T, int(round(2 * T / dt)) + 1)
        check_window(grid, ev, fmax)
        tube = Indicator(tuple([-1.0 / d**2] + [-1.0 / d] * (n - 1)),
                         tuple([1.0 / d**2] + [1.0 / d] * (n - 1)))
        f = knapp_packet(grid, d)
        r = smoothing_ratio(f, params, tube, ev, require_admissible=False)
        return r.ratio, {"delta": d, "T": T, "grid": grid_meta(grid), "ks_factor": r.ks_factor,
                         "lhs": r.lhs, "f_norm": r.f_norm}

    rep = refinement_scan(measure, len(deltas), params.as_dict(), ("delta",), kind="knapp_scan")
    e = (2 * params.alpha - n + 1) / params.beta - 2
    rep.extra["ratio_exponent"] = e / 2
    rep.extra["predicted_growth_per_level"] = [(deltas[k + 1] / deltas[k]) ** (e / 2)
                                               for k in range(len(deltas) - 1)]
    return rep


def rescaled_restriction_scan(w, params: ParamSet, grid: GridSpec, rule: SphereRule, rs: Sequence[float],
                              gamma: float | None = None, seed: int = 0) -> EstimateReport:
    """Extension from the sphere of radius ``r^{1/gamma}`` against the factor
    ``r^{(alpha/beta - 1)/(2 gamma)}``.

    For each ``r`` two quantities are divided by that factor, by the KS factor
    and (for constant data) by the square root of the sphere's area: the norm
    of ``(1 dsigma_rho)^`` in ``L^2(w)`` and the operator norm.  The verdict
    records the max/min spread of each across ``rs``.
    """
    from kssmooth.sphere import SPHERE_AREA, extension

    gamma = params.gamma if gamma is None else gamma
    node_w, spec = _weight_arrays(w, grid)
    ks = ks_norm_power(spec, params.beta, params.alpha, grid).value
    n = grid.dim
    pts = grid.nodes.reshape(-1, n)
    rows = []
    for r in rs:
        rho = float(r) ** (1.0 / gamma)
        factor = float(r) ** ((params.alpha / params.beta - 1) / (2 * gamma))
        u = extension(np.ones(rule.size), rule, rho, pts)
        ones_norm = math.sqrt(float(np.sum(node_w.reshape(-1) * np.abs(u) ** 2)) * grid.cell_volume)
        mass = SPHERE_AREA[n] * rho ** (n - 1)
        op = extension_norm(node_w, None, grid, rule, rho, seed=seed)
        rows.append({"r": float(r), "radius": rho, "factor": factor,
                     "constant_data": ones_norm / (factor * ks * math.sqrt(mass)),
                     "operator": op.constant / (factor * ks)})

    def spread(key):
        v = [row[key] for row in rows]
        return max(v) / min(v)

    return EstimateReport("rescaled_restriction", dict(params.as_dict(), gamma_scaling=gamma), grid_meta(grid),
                          spread("constant_data"), {"weight": getattr(spec, "id", "array")}, rows,
                          {"within_factor_4": spread("constant_data") <= 4.0},
                          {"operator_spread": spread("operator"), "ks_factor": ks})
