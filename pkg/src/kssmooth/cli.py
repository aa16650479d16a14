"""Batch front end: ``kssmooth COMMAND --config FILE --out DIR``.

Configs are ``key = value`` blocks under ``[section]`` headers.  Every
command declares its sections and keys below; after parsing, all defaults
are filled in so that ``ExperimentConfig.to_text`` writes the complete
experiment.  Each run writes ``<out>/<command>.json`` (an EstimateReport)
and ``<out>/<command>.csv``.

Exit status: 0 on success, 1 on numerical failure or rejected parameters
(the partial report is still written), 2 on config errors.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable

import numpy as np

from kssmooth.errors import KsSmoothError
from kssmooth.estimator import (
    EstimateReport,
    SmoothingScanConfig,
    dyadic_piece_bounds,
    equivalence_check,
    extension_norm,
    grid_meta,
    knapp_scan,
    param_set,
    refinement_scan,
    smoothing_scan,
)
from kssmooth.grid_spectral import GridSpec
from kssmooth.propagator import EvolutionParams, check_window, packet_family, spacetime_norms
from kssmooth.sphere import decay_quotient, sphere_rule, surface_measure_ft_radial
from kssmooth.weights import (
    cube_energies,
    default_cubes,
    ks_norm_power,
    mc_norm,
    dyadic_radii,
    parse_weight,
    sample_weight,
)

REQUIRED = object()


class ConfigError(Exception):
    def __init__(self, message: str, section: str | None = None, key: str | None = None,
                 line: int | None = None):
        where = []
        if section:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        if line:
            where.append(f"line {line}")
        super().__init__(("config error" + (" at " + ", ".join(where) if where else "") + ": " + message))


# -- value types --------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _lines(text: str) -> list[str]:
    return [t.strip() for t in text.strip().splitlines() if t.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        if v and isinstance(v[0], str):
            return "\n" + "\n".join("    " + x for x in v)  # indented continuation lines
        return " ".join(repr(float(x)) for x in v)
    return str(v)


@dataclass(frozen=True)
class Key:
    kind: Callable[[str], Any]
    default: Any = REQUIRED
    doc: str = ""


GRID = {"dim": Key(int, doc="space dimension n"),
        "points": Key(int, doc="points per axis N (power of two)"),
        "half_width": Key(float, doc="box is [-L, L)^n")}
PARAMS = {"gamma": Key(float, 2.0, "dispersion order gamma"),
          "alpha": Key(float, doc="Kerman-Sawyer order alpha"),
          "beta": Key(float, 1.0, "weight power beta")}
RUN = {"seed": Key(int, 0, "seed for power iteration and input families")}

COMMANDS: dict[str, dict[str, dict[str, Key]]] = {
    "ks-norm": {
        "grid": GRID,
        "weight": {"id": Key(str, doc="weight id, e.g. power:a=1.8")},
        "norm": {"alpha": Key(float, doc="order alpha in (0, n)"),
                 "beta": Key(float, 1.0, "report ||w^beta||_KS^(1/(2 beta)) as well")},
        "run": RUN,
    },
    "mc-norm": {
        "grid": GRID,
        "weight": {"id": Key(str)},
        "norm": {"alpha": Key(float), "p": Key(float, 1.0),
                 "centers": Key(str, "all", "'all' (every cell midpoint) or 'origin'")},
        "run": RUN,
    },
    "sigma-hat": {
        "sigma": {"dim": Key(int, doc="2 or 3"), "r_min": Key(float, 0.0), "r_max": Key(float, 10.0),
                  "samples": Key(int, 101, "number of equispaced radii")},
        "run": RUN,
    },
    "decay-check": {
        "sigma": {"dim": Key(int), "radii": Key(_floats, [10.0, 20.0, 40.0]),
                  "samples_per_unit": Key(int, 200), "tolerance": Key(float, 0.05)},
        "run": RUN,
    },
    "restriction-norm": {
        "grid": GRID,
        "weight": {"id": Key(str)},
        "params": PARAMS,
        "rule": {"degree": Key(int, 40, "polynomial exactness degree of the sphere rule"),
                 "radii": Key(_floats, [1.0], "sphere radii")},
        "run": RUN,
    },
    "equivalence-check": {
        "grid": GRID,
        "weight": {"ids": Key(_lines, doc="one strictly positive weight id per line")},
        "params": PARAMS,
        "rule": {"degree": Key(int, 40)},
        "check": {"tolerance": Key(float, 0.01)},
        "run": RUN,
    },
    "verify-smoothing": {
        "grid": GRID,
        "weight": {"ids": Key(_lines)},
        "params": PARAMS,
        "evolution": {"T": Key(float), "time_nodes": Key(int)},
        "inputs": {"count": Key(int, 50), "band": Key(_floats, [1.0, 1.5]), "sigma": Key(float, 3.0),
                   "spread": Key(float, 2.0), "require_admissible": Key(_bool, True)},
        "run": RUN,
    },
    "dyadic-pieces": {
        "grid": GRID,
        "weight": {"id": Key(str)},
        "params": PARAMS,
        "pieces": {"j_min": Key(int, 2), "j_max": Key(int, 5), "enlarge": Key(float, 10.0)},
        "run": RUN,
    },
    "validate": {
        "params": {"n": Key(int), **PARAMS},
        "run": RUN,
    },
    "scan": {
        "scan": {"kind": Key(str, "smoothing", "smoothing | knapp | time"),
                 "levels": Key(int, 3),
                 "dim": Key(int, 2), "points": Key(int, 128), "half_width": Key(float, 64.0),
                 "T": Key(float, 4.0), "dt": Key(float, 0.2),
                 "deltas": Key(_floats, [0.5, 0.35355339059327373, 0.25], "knapp: tube parameters"),
                 "require_admissible": Key(_bool, True)},
        "weight": {"ids": Key(_lines, ["power:a=1.8"])},
        "params": PARAMS,
        "inputs": {"count": Key(int, 50), "band": Key(_floats, [1.0, 1.5]), "sigma": Key(float, 3.0),
                   "spread": Key(float, 2.0)},
        "run": RUN,
    },
}

CSV_COLUMNS: dict[str, list[tuple[str, str]]] = {
    "ks-norm": [("level", "dyadic level (0 = grid box)"), ("side", "cube side length"),
                ("cubes", "cubes of the level above the mass floor"),
                ("best_ratio", "max energy/mass over the level"),
                ("best_mass", "mass of the maximizing cube")],
    "mc-norm": [("radius", "ball radius"), ("value", "max over centers of r^alpha (r^-n int_B w^p)^(1/p)"),
                ("center", "maximizing center, ';'-separated")],
    "sigma-hat": [("r", "|x|"), ("value", "Fourier transform of surface measure at |x| = r"),
                  ("decay_quotient", "|value| (1 + r)^((n-1)/2)")],
    "decay-check": [("R", "radius bound"), ("sup", "sup over |x| <= R of the decay quotient"),
                    ("argmax", "radius attaining the sup")],
    "restriction-norm": [("radius", "sphere radius"), ("raw_norm", "operator norm into L^2(w)"),
                         ("normalized", "raw_norm / ||w^beta||_KS^(1/(2 beta))"),
                         ("rescaled", "normalized / radius^((alpha/beta - 1)/2)"),
                         ("power_vs_dense_rel", "relative gap to the dense eigendecomposition")],
    "equivalence-check": [("weight", "weight id"), ("extension_norm_sq", "squared extension norm"),
                          ("tt_star_norm", "norm of the conjugated surface-measure convolution"),
                          ("rel_diff", "relative difference")],
    "verify-smoothing": [("input", "input index in the seeded family"), ("weight", "weight id"),
                         ("ratio", "smoothing ratio")],
    "dyadic-pieces": [("j", "piece index"), ("plain_norm", "L^2 operator norm of K_j *"),
                      ("symbol_sup", "max |symbol| of the zero-padded K_j"),
                      ("weighted_over_ks", "weighted norm / ||w^beta||_KS"),
                      ("cube_grid_bound", "explicit cube-grid bound on the weighted norm")],
    "validate": [("n", ""), ("gamma", ""), ("alpha", ""), ("beta", ""), ("s", "smoothing order"),
                 ("admissible", "true when every hypothesis holds")],
    "scan": [("level", "refinement level"), ("constant", "measured constant"),
             ("growth", "constant / previous level's constant (empty at level 0)")],
}


# -- config -------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    command: str
    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def to_text(self) -> str:
        out = []
        for sec, keys in self.values.items():
            out.append(f"[{sec}]")
            for k, v in keys.items():
                out.append(f"{k} = {_fmt_value(v)}".rstrip())
            out.append("")
        return "\n".join(out)

    @classmethod
    def from_text(cls, command: str, text: str) -> "ExperimentConfig":
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        schema = COMMANDS[command]
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",),
                                       inline_comment_prefixes=None, strict=True)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None
        for sec in cp.sections():
            if sec not in schema:
                raise ConfigError(f"unknown section for {command}", sec, line=_line_of(text, sec))
            for k in cp[sec]:
                if k not in schema[sec]:
                    raise ConfigError("unknown key", sec, k, _line_of(text, sec, k))
        values: dict[str, dict[str, Any]] = {}
        for sec, keys in schema.items():
            values[sec] = {}
            for k, spec in keys.items():
                if cp.has_option(sec, k):
                    raw = cp.get(sec, k)
                    try:
                        values[sec][k] = spec.kind(raw)
                    except (ValueError, TypeError) as exc:
                        raise ConfigError(f"bad value {raw.strip()!r} ({exc})", sec, k,
                                          _line_of(text, sec, k)) from None
                elif spec.default is REQUIRED:
                    raise ConfigError("missing required key", sec, k, _line_of(text, sec))
                else:
                    values[sec][k] = spec.default
        return cls(command, values)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return i
    return None


def _grid(cfg: ExperimentConfig) -> GridSpec:
    g = cfg.values["grid"]
    try:
        return GridSpec(g["dim"], g["points"], g["half_width"])
    except KsSmoothError as exc:
        raise ConfigError(str(exc), "grid") from None


def _weight(cfg: ExperimentConfig, text: str, key: str = "id"):
    try:
        return parse_weight(text)
    except (KsSmoothError, ValueError) as exc:
        raise ConfigError(f"{text!r}: {exc}", "weight", key) from None


def _params(cfg: ExperimentConfig, n: int):
    p = cfg.values["params"]
    return param_set(n, p["gamma"], p["alpha"], p["beta"])


# -- output -------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple)):
        return ";".join(_cell(x) for x in v)
    return "" if v is None else str(v)


def write_atomic(path: str, data: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(command: str, rows: list[dict]) -> str:
    cols = [c for c, _ in CSV_COLUMNS[command]]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for r in rows:
        wr.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


# -- commands -----------------------------------------------------------------
# each takes (cfg, rows, threads), appends CSV rows as it goes and returns a report


def cmd_ks_norm(cfg, rows, threads):
    grid = _grid(cfg)
    w = _weight(cfg, cfg.get("weight", "id"))
    alpha, beta = cfg.get("norm", "alpha"), cfg.get("norm", "beta")
    cubes = default_cubes(grid)
    wb = w if beta == 1 else w.power(beta)
    masses, energies = cube_energies(wb, alpha, cubes, grid.spacing)
    floor = 1e-12 * masses.max()
    levels = np.array([c.level for c in cubes])
    for lev in sorted(set(levels.tolist())):
        sel = np.flatnonzero((levels == lev) & (masses > floor))
        if len(sel) == 0:
            continue
        ratios = energies[sel] / masses[sel]
        k = sel[int(np.argmax(ratios))]
        rows.append({"level": lev, "side": cubes[k].side, "cubes": len(sel), "best_ratio": float(ratios.max()),
                     "best_mass": float(masses[k])})
    res = ks_norm_power(w, beta, alpha, grid, cubes)
    return EstimateReport("ks-norm", {"alpha": alpha, "beta": beta}, grid_meta(grid), res.witness["ks"],
                          {"weight": w.id, **res.witness}, extra={"ks_power_factor": res.value})


def cmd_mc_norm(cfg, rows, threads):
    grid = _grid(cfg)
    w = _weight(cfg, cfg.get("weight", "id"))
    alpha, p, centers = cfg.get("norm", "alpha"), cfg.get("norm", "p"), cfg.get("norm", "centers")
    if centers not in ("all", "origin"):
        raise ConfigError("centers must be 'all' or 'origin'", "norm", "centers")
    c = "all" if centers == "all" else np.zeros((1, grid.dim))
    best = None
    for r in dyadic_radii(grid):
        res = mc_norm(w, alpha, p, grid, c, [r])
        rows.append({"radius": r, "value": res.value, "center": res.witness["center"]})
        if best is None or res.value > best.value:
            best = res
    return EstimateReport("mc-norm", {"alpha": alpha, "p": p, "centers": centers}, grid_meta(grid), best.value,
                          {"weight": w.id, **best.witness})


def cmd_sigma_hat(cfg, rows, threads):
    s = cfg.values["sigma"]
    n = s["dim"]
    if n not in (2, 3):
        raise ConfigError("dim must be 2 or 3", "sigma", "dim")
    r = np.linspace(s["r_min"], s["r_max"], s["samples"])
    vals = surface_measure_ft_radial(n, r)
    q = np.abs(vals) * (1 + r) ** ((n - 1) / 2)
    for ri, vi, qi in zip(r, vals, q):
        rows.append({"r": float(ri), "value": float(vi), "decay_quotient": float(qi)})
    k = int(np.argmax(q))
    return EstimateReport("sigma-hat", {"dim": n}, {}, float(q[k]), {"r": float(r[k])})


def cmd_decay_check(cfg, rows, threads):
    s = cfg.values["sigma"]
    n = s["dim"]
    if n not in (2, 3):
        raise ConfigError("dim must be 2 or 3", "sigma", "dim")
    sups = []
    for R in s["radii"]:
        sup, arg = decay_quotient(n, R, s["samples_per_unit"])
        sups.append(sup)
        rows.append({"R": R, "sup": sup, "argmax": arg})
    spread = (max(sups) - min(sups)) / min(sups)
    return EstimateReport("decay-check", {"dim": n}, {}, max(sups), {},
                          verdict={"bounded": spread < s["tolerance"]}, extra={"relative_spread": spread})


def cmd_restriction_norm(cfg, rows, threads):
    grid = _grid(cfg)
    w = _weight(cfg, cfg.get("weight", "id"))
    ps = _params(cfg, grid.dim)
    rule = sphere_rule(grid.dim, cfg.get("rule", "degree"))
    ks = ks_norm_power(w, ps.beta, ps.alpha, grid).value
    hist, best = [], None
    for radius in cfg.get("rule", "radii"):
        rep = extension_norm(w, ps, grid, rule, radius, seed=cfg.seed, ks_factor=ks)
        row = {"radius": radius, "raw_norm": rep.extra["raw_norm"], "normalized": rep.constant,
               "rescaled": rep.constant / radius ** ((ps.alpha / ps.beta - 1) / 2),
               "power_vs_dense_rel": rep.extra.get("power_vs_dense_rel")}
        rows.append(row)
        hist.append(dict(row, converged=rep.verdict["converged"],
                         certificate_residual=rep.extra["certificate_residual"]))
        if best is None or rep.constant > best.constant:
            best = rep
    return EstimateReport("restriction-norm", ps.as_dict(), grid_meta(grid), best.constant,
                          {"weight": w.id, "radius": best.extra["radius"]}, hist,
                          {"converged": all(h["converged"] for h in hist)},
                          {"rule": rule.metadata(), "ks_factor": ks})


def cmd_equivalence(cfg, rows, threads):
    grid = _grid(cfg)
    ps = _params(cfg, grid.dim)
    rule = sphere_rule(grid.dim, cfg.get("rule", "degree"))
    tol = cfg.get("check", "tolerance")
    hist = []
    for wid in cfg.get("weight", "ids"):
        w = _weight(cfg, wid, "ids")
        rep = equivalence_check(w, ps, grid, rule, seed=cfg.seed, tol=tol)
        row = {"weight": w.id, "extension_norm_sq": rep.extra["extension_norm_sq"],
               "tt_star_norm": rep.extra["tt_star_norm"], "rel_diff": rep.constant}
        rows.append(row)
        hist.append(dict(row, agree=rep.verdict["agree"]))
    worst = max(hist, key=lambda h: h["rel_diff"])
    return EstimateReport("equivalence-check", ps.as_dict(), grid_meta(grid), worst["rel_diff"],
                          {"weight": worst["weight"]}, hist, {"agree": all(h["agree"] for h in hist)},
                          {"rule": rule.metadata(), "tolerance": tol})


def cmd_verify_smoothing(cfg, rows, threads):
    grid = _grid(cfg)
    ps = _params(cfg, grid.dim)
    inp = cfg.values["inputs"]
    if inp["require_admissible"] and not ps.admissible:
        raise KsSmoothError("; ".join(ps.violations))
    ev_cfg = cfg.values["evolution"]
    try:
        ev = EvolutionParams(ps.gamma, ps.s, ev_cfg["T"], ev_cfg["time_nodes"])
    except KsSmoothError as exc:
        raise ConfigError(str(exc), "evolution") from None
    weights = {}
    for wid in cfg.get("weight", "ids"):
        w = _weight(cfg, wid, "ids")
        weights[w.id] = w
    if len(inp["band"]) != 2:
        raise ConfigError("band needs two numbers", "inputs", "band")
    packets = packet_family(cfg.seed, inp["count"], grid.dim, band=tuple(inp["band"]), sigma=inp["sigma"],
                            spread=inp["spread"])
    check_window(grid, ev, max(p.max_frequency(tail=5.3) for p in packets))
    ids = list(weights)
    ks = {k: ks_norm_power(weights[k], ps.beta, ps.alpha, grid).value for k in ids}
    arrays = [sample_weight(weights[k], grid, "nodes") for k in ids]
    best = (-1.0, None, None)
    for i, p in enumerate(packets):
        f = p.sample(grid)
        norms = spacetime_norms(f, ev, arrays, workers=threads) / f.norm()
        for k, v in zip(ids, norms):
            ratio = float(v / ks[k])
            rows.append({"input": i, "weight": k, "ratio": ratio})
            if ratio > best[0]:
                best = (ratio, i, k)
    return EstimateReport("verify-smoothing", ps.as_dict(), grid_meta(grid), best[0],
                          {"input_index": best[1], "weight": best[2]},
                          extra={"ks_factor": ks, "T": ev.T, "time_nodes": ev.time_nodes, "inputs": len(packets)})


def cmd_dyadic_pieces(cfg, rows, threads):
    grid = _grid(cfg)
    ps = _params(cfg, grid.dim)
    w = _weight(cfg, cfg.get("weight", "id"))
    pc = cfg.values["pieces"]
    rep = dyadic_piece_bounds(range(pc["j_min"], pc["j_max"] + 1), w, ps, grid, seed=cfg.seed,
                              enlarge=pc["enlarge"])
    for h in rep.history:
        rows.append({"j": h["j"], "plain_norm": h["plain_norm"], "symbol_sup": h["padded_symbol_sup"],
                     "weighted_over_ks": h["weighted_over_ks"], "cube_grid_bound": h["cube_grid_bound"]})
    rep.kind = "dyadic-pieces"
    return rep


def cmd_validate(cfg, rows, threads):
    p = cfg.values["params"]
    ps = param_set(p["n"], p["gamma"], p["alpha"], p["beta"])
    rows.append({"n": ps.n, "gamma": ps.gamma, "alpha": ps.alpha, "beta": ps.beta, "s": ps.s,
                 "admissible": ps.admissible})
    rep = EstimateReport("validate", ps.as_dict(), {}, ps.s, {}, verdict={"admissible": ps.admissible})
    if not ps.admissible:
        raise _Rejected(rep, "; ".join(ps.violations))
    return rep


def cmd_scan(cfg, rows, threads):
    sc = cfg.values["scan"]
    kind = sc["kind"]
    ps = _params(cfg, sc["dim"])
    if kind == "smoothing":
        inp = cfg.values["inputs"]
        weights = {}
        for wid in cfg.get("weight", "ids"):
            w = _weight(cfg, wid, "ids")
            weights[w.id] = w
        conf = SmoothingScanConfig(sc["dim"], sc["points"], sc["half_width"], sc["T"], sc["dt"], inp["count"],
                                   cfg.seed, tuple(inp["band"]), inp["sigma"], inp["spread"])
        rep = smoothing_scan(ps, weights, conf, sc["levels"], sc["require_admissible"], threads)
    elif kind == "knapp":
        if len(sc["deltas"]) != sc["levels"]:
            raise ConfigError("deltas must list one value per level", "scan", "deltas")
        rep = knapp_scan(ps, sc["deltas"], None, sc["dt"])  # grid sized per level for resolution
    elif kind == "time":
        rep = _time_scan(cfg, ps, sc)
    else:
        raise ConfigError(f"unknown scan kind {kind!r}", "scan", "kind")
    prev = None
    for h in rep.history:
        rows.append({"level": h["level"], "constant": h["constant"],
                     "growth": None if prev is None else h["constant"] / prev})
        prev = h["constant"]
    return rep


def _time_scan(cfg, ps, sc):
    """Only ``T`` doubles; grid and input stay fixed (first input of the family)."""
    grid = GridSpec(sc["dim"], sc["points"], sc["half_width"])
    inp = cfg.values["inputs"]
    packet = packet_family(cfg.seed, 1, grid.dim, band=tuple(inp["band"]), sigma=inp["sigma"],
                           spread=inp["spread"])[0]
    f = packet.sample(grid)
    w = _weight(cfg, cfg.get("weight", "ids")[0], "ids")
    arr = sample_weight(w, grid, "nodes")
    ks = ks_norm_power(w, ps.beta, ps.alpha, grid).value

    def measure(k):
        T = sc["T"] * 2**k
        ev = EvolutionParams(ps.gamma, ps.s, T, int(round(2 * T / sc["dt"])) + 1)
        v = float(spacetime_norms(f, ev, [arr])[0]) / (ks * f.norm())
        return v, {"T": T}

    rep = refinement_scan(measure, sc["levels"], ps.as_dict(), ("T",), kind="time_scan")
    ts = [h["T"] for h in rep.history]
    rep.extra["log2_slope_in_T"] = float(np.polyfit(np.log2(ts), np.log2([h["constant"] for h in rep.history]),
                                                    1)[0])
    rep.grid = grid_meta(grid)
    return rep


class _Rejected(Exception):
    def __init__(self, report, message):
        super().__init__(message)
        self.report = report


HANDLERS = {
    "ks-norm": cmd_ks_norm, "mc-norm": cmd_mc_norm, "sigma-hat": cmd_sigma_hat,
    "decay-check": cmd_decay_check, "restriction-norm": cmd_restriction_norm,
    "equivalence-check": cmd_equivalence, "verify-smoothing": cmd_verify_smoothing,
    "dyadic-pieces": cmd_dyadic_pieces, "validate": cmd_validate, "scan": cmd_scan,
}


def schema_text(command: str | None = None) -> str:
    cmds = [command] if command else list(COMMANDS)
    out = {}
    for c in cmds:
        out[c] = {
            "csv_columns": [{"name": n, "doc": d} for n, d in CSV_COLUMNS[c]],
            "config": {sec: {k: {"default": None if spec.default is REQUIRED else _fmt_value(spec.default),
                                 "required": spec.default is REQUIRED, "doc": spec.doc}
                             for k, spec in keys.items()}
                       for sec, keys in COMMANDS[c].items()},
        }
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def run(command: str, config_text: str, out_dir: str, seed: int | None = None, threads: int = 1,
        timestamp: str | None = None) -> int:
    """Run one command; returns the exit status."""
    try:
        cfg = ExperimentConfig.from_text(command, config_text)
        if seed is not None:
            cfg.values["run"]["seed"] = seed
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    rows: list[dict] = []
    status = 0
    try:
        report = HANDLERS[command](cfg, rows, threads)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except _Rejected as exc:
        report = exc.report
        report.verdict["error"] = str(exc)
        print(f"rejected: {exc}", file=sys.stderr)
        status = 1
    except (KsSmoothError, FloatingPointError, np.linalg.LinAlgError) as exc:
        report = EstimateReport(command, verdict={"error": f"{type(exc).__name__}: {exc}", "partial": True})
        print(f"numerical failure: {exc}", file=sys.stderr)
        status = 1
    report.extra["config"] = cfg.to_text()
    if timestamp is None:
        timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    write_atomic(os.path.join(out_dir, f"{command}.json"), report.to_json(timestamp))
    write_atomic(os.path.join(out_dir, f"{command}.csv"), csv_text(command, rows))
    return status


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="kssmooth", description=__doc__.splitlines()[0])
    ap.add_argument("command", nargs="?", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--out", metavar="DIR", default=".")
    ap.add_argument("--seed", type=int, metavar="U64")
    ap.add_argument("--threads", type=int, default=1, metavar="K")
    ap.add_argument("--schema", action="store_true", help="print config keys and CSV columns, then exit")
    args = ap.parse_args(argv)
    if args.schema:
        sys.stdout.write(schema_text(args.command))
        return 0
    if args.command is None:
        ap.error("a command is required")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        ap.error("--seed must be an unsigned 64-bit integer")
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    text = ""
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    return run(args.command, text, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
