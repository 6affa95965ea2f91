"""Warp functions A(x) and the effective potentials they induce.

For the metric dx^2 + A(x)^2 G_theta on R x Omega the mode operators are
-h^2 d^2/dx^2 + V0 + h^2 V1 with

    V0 = A^-2,
    V1 = (n-1)/2 * A''/A - (n-1)(n-3)/4 * (A')^2/A^2,

and h = 1/lambda_k for the angular eigenvalue lambda_k^2.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import mpmath
import numpy as np
import sympy
from scipy.interpolate import CubicSpline

from ..errors import ConfigError, SemiresError
from ..logging import get_logger
from ..numerics.discretize import Grid
from .constants import (
    FAMILY_CHOICES,
    FAMILY_CONSTANT_PLUS_BUMP,
    FAMILY_CYLINDER_PLATEAU,
    FAMILY_DEFAULTS,
    FAMILY_DEGENERATE_BUMP,
    FAMILY_GEVREY_FLAT,
    FAMILY_INFLECTION_PROFILE,
    FAMILY_POLYNOMIAL,
    FAMILY_RAW_POTENTIAL,
    FAMILY_WELL_PROFILE,
)

LOG = get_logger("warp")

X = sympy.Symbol("x", real=True)
# even families flat at 0 are written in |x| to keep derivatives free of sign/delta terms
XP = sympy.Symbol("r", positive=True)
EVEN_FAMILIES = frozenset({FAMILY_GEVREY_FLAT, FAMILY_CYLINDER_PLATEAU})

GEVREY_MAX_RATIO = 10.0
GEVREY_DPS = 60


class DomainError(SemiresError, ValueError):
    """A sample of A (or V0) left the admissible domain."""


@dataclass(frozen=True)
class RawTable:
    """User-supplied potential samples for the raw_potential family."""

    x: Tuple[float, ...]
    v0: Tuple[float, ...]
    v1: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class WarpSpec:
    family: str
    params: Tuple[Tuple[str, float], ...] = ()
    n: int = 2
    tau: Optional[float] = None
    eps: float = 1e-8
    r_short: float = 8.0
    table: Optional[RawTable] = None

    def __post_init__(self) -> None:
        if self.family not in FAMILY_CHOICES:
            raise ConfigError(f"unknown warp family {self.family!r}; expected one of {', '.join(FAMILY_CHOICES)}")
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError(f"manifold dimension n must be an integer >= 2, got {self.n}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.family == FAMILY_RAW_POTENTIAL and (self.table is None or not self.table.v0):
            raise ConfigError("raw_potential needs a table with at least x and v0 columns")

    @classmethod
    def make(cls, family: str, params: Optional[Mapping[str, float]] = None, **kwargs) -> "WarpSpec":
        merged: Dict[str, float] = dict(FAMILY_DEFAULTS.get(family, {}))
        merged.update({k: float(v) for k, v in (params or {}).items()})
        return cls(family=family, params=tuple(sorted(merged.items())), **kwargs)

    def param(self, name: str) -> float:
        for k, v in self.params:
            if k == name:
                return v
        raise ConfigError(f"family {self.family} requires parameter {name!r}")

    def param_dict(self) -> Dict[str, float]:
        return dict(self.params)


@dataclass(frozen=True, eq=False)
class PotentialProfile:
    grid: Grid
    v0: np.ndarray
    v1: np.ndarray
    v0p: np.ndarray
    v0pp: np.ndarray
    exact_derivatives: bool = True

    def __post_init__(self) -> None:
        for name in ("v0", "v1", "v0p", "v0pp"):
            arr = getattr(self, name)
            if arr.shape != (self.grid.n,):
                raise DomainError(f"{name} has shape {arr.shape}, grid has {self.grid.n} points")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite samples")
        if not np.all(self.v0 > 0):
            i = int(np.argmin(self.v0))
            raise DomainError(f"V0 must be positive; V0({self.grid.points()[i]:.6g}) = {self.v0[i]:.6g}")

    @property
    def x(self) -> np.ndarray:
        return self.grid.points()

    def scale(self) -> float:
        return float(np.max(np.abs(self.v0)))

    def to_csv(self, path: str) -> str:
        tmp = f"{path}.tmp"
        os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["x", "v0", "v1", "v0p", "v0pp"])
            for row in zip(self.x, self.v0, self.v1, self.v0p, self.v0pp):
                w.writerow([repr(float(v)) for v in row])
        os.replace(tmp, path)
        return path


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


def _positive_int(spec: WarpSpec, name: str) -> int:
    v = spec.param(name)
    if v != int(v) or v < 1:
        raise ConfigError(f"{spec.family}: {name} must be a positive integer, got {v}")
    return int(v)


def _inflection_transport(x: sympy.Expr, m2: int, x_infl: float) -> sympy.Expr:
    # monotone map, flat of order 2*m2+1 at x_infl and ~x at infinity
    q = 2 * m2 + 1
    s = sympy.Float(x_infl)
    y = (x - s) / s
    return s + s * y**q / (1 + y ** (q - 1))


def warp_expression(spec: WarpSpec) -> sympy.Expr:
    """Closed-form A as a sympy expression in `warp_symbol(spec)`."""
    fam = spec.family
    if fam == FAMILY_CONSTANT_PLUS_BUMP:
        c, amp, width = spec.param("c"), spec.param("amp"), spec.param("width")
        if width <= 0 or c <= 0 or amp <= -1:
            raise ConfigError("constant_plus_bump needs c > 0, width > 0 and amp > -1")
        return sympy.sqrt((c**2 + X**2) / (1 + amp * sympy.exp(-(X**2) / width**2)))
    if fam == FAMILY_DEGENERATE_BUMP:
        m = _positive_int(spec, "m")
        c = spec.param("c")
        if c <= 0:
            raise ConfigError("degenerate_bump needs c > 0")
        return (sympy.Float(c) ** (2 * m) + X ** (2 * m)) ** sympy.Rational(1, 2 * m)
    if fam == FAMILY_INFLECTION_PROFILE:
        m2 = _positive_int(spec, "m2")
        m = _positive_int(spec, "m")
        s = spec.param("x_infl")
        if s <= 0:
            raise ConfigError("inflection_profile needs x_infl > 0")
        t = _inflection_transport(X, m2, s) - s / 2.0
        return (1 + t ** (2 * m)) ** sympy.Rational(1, 2 * m)
    if fam == FAMILY_GEVREY_FLAT:
        p = spec.param("p")
        if p <= 0:
            raise ConfigError("gevrey_flat needs p > 0")
        pe = sympy.nsimplify(p)
        return (1 - sympy.exp(-(XP ** (-pe)))) ** (-1 / pe)
    if fam == FAMILY_CYLINDER_PLATEAU:
        half, w = spec.param("half_length"), spec.param("w")
        if half <= 0 or w <= 0:
            raise ConfigError("cylinder_plateau needs half_length > 0 and w > 0")
        # A = 1 on the plateau; the roll-off is flat to infinite order at its edge
        t = XP - sympy.Float(half)
        outer = sympy.sqrt(1 + XP**2 * sympy.exp(-sympy.Float(w) / t**2))
        return sympy.Piecewise((sympy.Integer(1), XP <= sympy.Float(half)), (outer, True))
    if fam == FAMILY_WELL_PROFILE:
        v_min, w = spec.param("v_min"), spec.param("w")
        if v_min <= 0 or w <= 0:
            raise ConfigError("well_profile needs v_min > 0 and w > 0")
        return sympy.sqrt((1 + X**4 / w**2) / (v_min + X**2))
    if fam == FAMILY_POLYNOMIAL:
        coeffs = sorted(((int(k[1:]), v) for k, v in spec.params if k.startswith("c") and k[1:].isdigit()))
        if not coeffs:
            raise ConfigError("polynomial family needs coefficients c0, c1, ...")
        return sympy.Add(*[sympy.Float(v) * X**j for j, v in coeffs])
    raise ConfigError(f"family {fam} has no closed-form warp function")


def warp_symbol(spec: WarpSpec) -> sympy.Symbol:
    """X, or XP for even families written in |x|."""
    return XP if spec.family in EVEN_FAMILIES else X


@lru_cache(maxsize=64)
def _lambdified(spec: WarpSpec) -> Tuple[Callable, Callable, Callable]:
    sym = warp_symbol(spec)
    a = warp_expression(spec)
    da = sympy.diff(a, sym)
    dda = sympy.diff(da, sym)
    return tuple(sympy.lambdify(sym, e, modules="numpy") for e in (a, da, dda))  # type: ignore[return-value]


def _broadcast(f: Callable, x: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        out = np.asarray(f(x), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).astype(float)
        bad = ~np.isfinite(out)
        if np.any(bad):
            # removable singularities of the closed forms (e.g. |x|^-p at 0)
            nudged = x[bad] + 1e-9 * np.maximum(1.0, np.abs(x[bad]))
            out = out.copy()
            out[bad] = np.asarray(f(nudged), dtype=float)
    return out


def evaluate_warp(spec: WarpSpec, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Samples of (A, A', A'') from the closed form."""
    f, df, ddf = _lambdified(spec)
    x = np.asarray(x, dtype=float)
    if warp_symbol(spec) is XP:
        r = np.abs(x)
        return _broadcast(f, r), np.sign(x) * _broadcast(df, r), _broadcast(ddf, r)
    return _broadcast(f, x), _broadcast(df, x), _broadcast(ddf, x)


def _fd_derivatives(v: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Fourth-order central differences, second order on the two edge rows per side."""
    n = v.shape[0]
    d1 = np.gradient(v, delta, edge_order=2)
    d2 = np.gradient(d1, delta, edge_order=2)
    if n >= 5:
        d1[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * delta)
        d2[2:-2] = (-v[:-4] + 16 * v[1:-3] - 30 * v[2:-2] + 16 * v[3:-1] - v[4:]) / (12 * delta * delta)
    return d1, d2


def profile_from_samples(grid: Grid, v0: Sequence[float], v1: Optional[Sequence[float]] = None) -> PotentialProfile:
    """Profile from samples already on `grid`; derivatives by finite differences."""
    v0a = np.asarray(v0, dtype=float)
    if v0a.shape != (grid.n,):
        raise ConfigError(f"v0 has {v0a.shape[0] if v0a.ndim else 0} samples, grid has {grid.n}")
    v1a = np.zeros_like(v0a) if v1 is None else np.asarray(v1, dtype=float)
    d1, d2 = _fd_derivatives(v0a, grid.delta)
    return PotentialProfile(grid=grid, v0=v0a, v1=v1a, v0p=d1, v0pp=d2, exact_derivatives=False)


def _raw_profile(spec: WarpSpec, grid: Grid) -> PotentialProfile:
    table = spec.table
    assert table is not None
    xs = np.asarray(table.x, dtype=float)
    if xs.shape[0] != len(table.v0) or (table.v1 is not None and len(table.v1) != xs.shape[0]):
        raise ConfigError("raw_potential columns must have equal length")
    if xs[0] > grid.x_min + 1e-12 or xs[-1] < grid.x_max - 1e-12:
        raise DomainError(f"grid [{grid.x_min}, {grid.x_max}] exceeds the table range [{xs[0]}, {xs[-1]}]")
    x = grid.points()
    v0 = CubicSpline(xs, np.asarray(table.v0, dtype=float))(x)
    v1 = None if table.v1 is None else CubicSpline(xs, np.asarray(table.v1, dtype=float))(x)
    return profile_from_samples(grid, v0, v1)


def effective_potential(spec: WarpSpec, grid: Grid) -> PotentialProfile:
    """V0, V1 and the derivatives of V0 on `grid`."""
    if spec.family == FAMILY_RAW_POTENTIAL:
        return _raw_profile(spec, grid)
    x = grid.points()
    a, da, dda = evaluate_warp(spec, x)
    low = a < spec.eps
    if np.any(low):
        i = int(np.argmax(low))
        raise DomainError(f"A({x[i]:.6g}) = {a[i]:.6g} is below eps = {spec.eps}")
    n = spec.n
    inv = 1.0 / a
    v0 = inv**2
    v1 = 0.5 * (n - 1) * dda * inv - 0.25 * (n - 1) * (n - 3) * (da * inv) ** 2
    v0p = -2.0 * da * inv**3
    v0pp = 6.0 * da**2 * inv**4 - 2.0 * dda * inv**3
    return PotentialProfile(grid=grid, v0=v0, v1=v1, v0p=v0p, v0pp=v0pp, exact_derivatives=True)


def mode_parameters(lambda_k: float) -> float:
    """Semiclassical parameter h = 1/lambda_k."""
    if not lambda_k > 0:
        raise DomainError(f"lambda_k must be positive, got {lambda_k}")
    return 1.0 / lambda_k


def full_potential(profile: PotentialProfile, h: float) -> np.ndarray:
    return profile.v0 + (h * h) * profile.v1


def short_range_advisory(spec: WarpSpec, tol: float = 0.5) -> bool:
    """Advisory check that x^2 V0 settles to a constant at least like <x>^-2.

    The deviation from the far-field constant must drop by about a factor 4
    when |x| doubles from r_short. Logs a warning and returns False otherwise;
    the truncated numerical domain does not depend on it.
    """
    if spec.family == FAMILY_RAW_POTENTIAL:
        return True
    r = max(spec.r_short, 1.0)
    ok = True
    for side in (1.0, -1.0):
        xs = side * np.array([r, 2.0 * r, 64.0 * r])
        a, _, _ = evaluate_warp(spec, xs)
        g = xs**2 / a**2
        near, far = abs(g[0] - g[2]), abs(g[1] - g[2])
        if not np.all(np.isfinite(g)) or far > (1.0 + tol) * 0.25 * near + 1e-12 * max(abs(g[2]), 1.0):
            ok = False
    if not ok:
        LOG.warning(f"{spec.family}: x^2 V0 does not settle like <x>^-2 beyond |x| = {r}")
    return ok


# ---------------------------------------------------------------------------
# 0-Gevrey spot check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GevreyReport:
    passes: bool
    worst_ratio: float
    constant: float
    worst_pair: Tuple[int, int]
    tau: float
    ratios: Dict[str, float] = field(default_factory=dict)


def _mp_eval(fk: Callable, x, k: int, in_abs: bool):
    if not in_abs:
        return fk(mpmath.mpf(x))
    sign = -1 if (x < 0 and k % 2) else 1
    return sign * fk(mpmath.mpf(abs(x)))


def _jet_at(fk: Callable, x0: float, k: int, in_abs: bool):
    try:
        v = _mp_eval(fk, x0, k, in_abs)
        if mpmath.isfinite(v):
            return v
    except (ZeroDivisionError, ValueError):
        pass
    # removable singularity: approach from the right
    return _mp_eval(fk, mpmath.mpf(x0) + mpmath.mpf("1e-40"), k, in_abs)


def check_gevrey(spec: WarpSpec, x0: float, k_max: int, sample_xs: Sequence[float]) -> GevreyReport:
    """Spot-check the 0-Gevrey inequality for A at x0.

    For 0 <= s < k <= k_max and each sample x the ratio

        R = |A^(k)(x) - A^(k)(x0)| * |x - x0|^(tau (k - s)) / |A^(s)(x) - A^(s)(x0)|

    must stay bounded as x -> x0. The fitted constant is the largest ratio on
    the outer third of the samples; worst_ratio is the largest growth of the
    inner samples over that constant across (k, s) pairs. Passing means
    worst_ratio <= 10. Evaluation runs in multiprecision since flat families
    underflow doubles.
    """
    if spec.tau is None:
        raise ConfigError("check_gevrey needs a declared tau")
    if spec.family == FAMILY_RAW_POTENTIAL:
        raise ConfigError("raw_potential has no closed-form derivatives")
    if k_max < 1:
        raise ConfigError(f"k_max must be >= 1, got {k_max}")
    xs = sorted({float(x) for x in sample_xs if float(x) != x0}, key=lambda x: -abs(x - x0))
    if len(xs) < 3:
        raise ConfigError("check_gevrey needs at least three sample points distinct from x0")
    tau = float(spec.tau)

    sym = warp_symbol(spec)
    in_abs = sym is XP
    exprs = [warp_expression(spec)]
    for _ in range(k_max):
        exprs.append(sympy.diff(exprs[-1], sym))

    with mpmath.workdps(GEVREY_DPS):
        funcs = [sympy.lambdify(sym, e, modules="mpmath") for e in exprs]
        at_x0 = [_jet_at(f, x0, k, in_abs) for k, f in enumerate(funcs)]
        # log|Delta_k(x)| per sample; None marks an exact zero
        logs: List[List[Optional[float]]] = []
        for x in xs:
            row: List[Optional[float]] = []
            for k, (f, f0) in enumerate(zip(funcs, at_x0)):
                d = abs(_mp_eval(f, x, k, in_abs) - f0)
                row.append(None if d == 0 else float(mpmath.log(d)))
            logs.append(row)

    n_outer = max(1, len(xs) // 3)
    worst, worst_pair, constant = 0.0, (1, 0), 0.0
    ratios: Dict[str, float] = {}
    for k in range(1, k_max + 1):
        for s in range(k):
            lr: List[float] = []
            for x, row in zip(xs, logs):
                lk, ls = row[k], row[s]
                if lk is None:
                    lr.append(-math.inf)
                elif ls is None:
                    lr.append(math.inf)
                else:
                    lr.append(lk - ls + tau * (k - s) * math.log(abs(x - x0)))
            outer = max(lr[:n_outer])
            inner = max(lr[n_outer:])
            if inner == -math.inf:
                growth = 0.0
            elif outer == -math.inf or inner == math.inf:
                growth = math.inf
            else:
                growth = math.exp(min(inner - outer, 700.0))
            if outer > -math.inf:
                constant = max(constant, math.exp(min(outer, 700.0)))
            ratios[f"{k},{s}"] = growth
            if growth > worst:
                worst, worst_pair = growth, (k, s)
    passes = worst <= GEVREY_MAX_RATIO
    LOG.info(f"check_gevrey {spec.family} tau={tau}: worst_ratio={worst:.3g} at (k,s)={worst_pair} -> {'pass' if passes else 'fail'}")
    return GevreyReport(passes=passes, worst_ratio=worst, constant=constant, worst_pair=worst_pair, tau=tau, ratios=ratios)
