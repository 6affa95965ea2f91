"""Quasimodes for a stable well and the resolvent lower bound they certify.

A local minimum of V0 with barriers on both sides is cut out, the outside is
replaced by a convex confining branch, and an eigenfunction of the confined
operator is cut off inside the well. Its residual against the original
operator gives ||chi (P - E)^-1 chi|| >= 1 / residual.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.optimize import brentq

from ..domain.constants import KIND_LOCAL_MIN
from ..domain.trapping import CriticalComponent, find_critical_components, classify_order
from ..domain.warp import PotentialProfile, full_potential
from ..errors import SemiresError
from ..logging import get_logger
from .discretize import DiscreteOperator, Grid, build_operator, count_in_window, eigen_window, l2_norm
from .resolvent import DEFAULT_MAX_ITER, DEFAULT_SEED, DEFAULT_TOL, ResolventSample, cutoff_resolvent_norm, interval_cutoff

LOG = get_logger("quasimode")

DELTA_FRACTION = 0.45
DELTA_FLOOR = 1e-6
EPS_FRACTION = 0.9
OUTER_EPS_MULTIPLE = 5.0
CROSS_CHECK_SLACK = 0.5
MASS_ADVISORY = 10.0


class DegenerateWellError(SemiresError, ValueError):
    pass


class ExtensionError(SemiresError, RuntimeError):
    pass


class QuasimodeError(SemiresError, RuntimeError):
    pass


@dataclass(frozen=True)
class WellSpec:
    v_min: float
    delta: float
    a: float
    b: float
    eps: float
    beta: float = 1.0
    x_center: float = 0.0

    @property
    def left(self) -> float:
        return self.x_center - self.a

    @property
    def right(self) -> float:
        return self.x_center + self.b

    @property
    def window(self) -> Tuple[float, float]:
        """Energy window [v_min + delta/2, v_min + 2 delta/3]."""
        return self.v_min + 0.5 * self.delta, self.v_min + 2.0 * self.delta / 3.0

    @property
    def outer_radius(self) -> float:
        return max(self.a, self.b) + OUTER_EPS_MULTIPLE * self.eps

    def to_dict(self) -> Dict[str, float]:
        return {
            "v_min": self.v_min,
            "delta": self.delta,
            "a": self.a,
            "b": self.b,
            "eps": self.eps,
            "beta": self.beta,
            "x_center": self.x_center,
        }


@dataclass(frozen=True, eq=False)
class ExtendedPotential:
    grid: Grid
    values: np.ndarray
    well: WellSpec
    h: float


@dataclass(frozen=True, eq=False)
class Quasimode:
    energy: float
    vector: np.ndarray
    residual: float
    mass_outside: float
    phi: np.ndarray
    chi: np.ndarray
    grid: Grid
    h: float
    eigen_residual: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"E": self.energy, "residual": self.residual, "mass_outside": self.mass_outside, "h": self.h}


@dataclass(frozen=True)
class CertifiedBound:
    lower_bound: float
    measured: Optional[ResolventSample] = None
    consistent: Optional[bool] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "lower_bound": None if math.isinf(self.lower_bound) else self.lower_bound,
            "measured": None if self.measured is None else self.measured.norm,
            "consistent": self.consistent,
        }


# ---------------------------------------------------------------------------
# Well geometry
# ---------------------------------------------------------------------------


def _lowest_minimum(profile: PotentialProfile) -> CriticalComponent:
    best: Optional[CriticalComponent] = None
    for comp in find_critical_components(profile):
        kind, _ = classify_order(profile, comp)
        if kind == KIND_LOCAL_MIN and (best is None or comp.critical_value < best.critical_value):
            best = comp
    if best is None:
        raise DegenerateWellError("V0 has no local minimum on the grid")
    return best


def _rims(v0: np.ndarray, ic: int) -> Tuple[int, int]:
    """Indices where V0 stops increasing away from ic (grid ends if it never does)."""
    left = ic
    while left > 0 and v0[left - 1] >= v0[left]:
        left -= 1
    right = ic
    while right < v0.shape[0] - 1 and v0[right + 1] >= v0[right]:
        right += 1
    return left, right


def _crossing(spline: CubicSpline, x: np.ndarray, v0: np.ndarray, level: float, start: int, stop: int) -> Optional[float]:
    """First x between indices start and stop (either direction) with V0 = level."""
    step = 1 if stop >= start else -1
    for j in range(start + step, stop + step, step):
        if v0[j] >= level:
            lo, hi = sorted((x[j - step], x[j]))
            if v0[j] == level:
                return float(x[j])
            return float(brentq(lambda t: float(spline(t)) - level, lo, hi, xtol=1e-14, rtol=1e-14))
    return None


def _try_delta(
    spline: CubicSpline, x: np.ndarray, v0: np.ndarray, ic: int, rims: Tuple[int, int], v_min: float, delta: float
) -> Tuple[Optional[WellSpec], str]:
    il, ir = rims
    x_c = float(x[ic])
    if v_min + 2.0 * delta >= min(v0[il], v0[ir]):
        return None, "sublevel set {V0 <= v_min + 2 delta} not compact inside the barriers"
    right = _crossing(spline, x, v0, v_min + delta, ic, ir)
    left = _crossing(spline, x, v0, v_min + delta, ic, il)
    if right is None or left is None:
        return None, "level v_min + delta not reached"
    if not (float(spline(left, 1)) < 0.0 < float(spline(right, 1))):
        return None, "V0' has the wrong sign at -a or b"
    r32 = _crossing(spline, x, v0, v_min + 1.5 * delta, ic, ir)
    l32 = _crossing(spline, x, v0, v_min + 1.5 * delta, ic, il)
    if r32 is None or l32 is None:
        return None, "level v_min + 3 delta/2 not reached"
    a, b = x_c - left, right - x_c
    eps_min = max(r32 - right, left - l32)
    eps_top = min(float(x[ir]) - right, left - float(x[il]))
    eps = min(EPS_FRACTION * eps_top, max(a, b))
    if eps < eps_min:
        return None, f"margin eps {eps:.3g} below the 3 delta/2 crossing distance {eps_min:.3g}"
    return WellSpec(v_min=v_min, delta=delta, a=a, b=b, eps=eps, x_center=x_c), ""


def fit_well(
    profile: PotentialProfile,
    comp: Optional[CriticalComponent] = None,
    delta0: Optional[float] = None,
    beta: float = 1.0,
) -> WellSpec:
    """Choose delta, a, b and eps around a local minimum of V0.

    delta starts at `delta0` (default 0.45 of the lower barrier height) and is
    halved until the sublevel sets are compact, V0' changes sign across the
    well and the 3 delta/2 margins fit inside the barriers.
    """
    if comp is None:
        comp = _lowest_minimum(profile)
    kind = comp.kind
    if kind is None:
        kind, _ = classify_order(profile, comp)
    if kind != KIND_LOCAL_MIN:
        raise DegenerateWellError(f"component at x={comp.center:.6g} is {kind}, not a local minimum")
    if comp.x_left != comp.x_right:
        raise DegenerateWellError("flat-bottomed wells are not supported; V0 must have an isolated minimum")
    x = profile.x
    v0 = profile.v0
    ic = profile.grid.index_of(comp.center)
    v_min = float(v0[ic])
    rims = _rims(v0, ic)
    top = float(min(v0[rims[0]], v0[rims[1]]))
    scale = profile.scale()
    delta = float(delta0) if delta0 is not None else DELTA_FRACTION * (top - v_min)
    if not delta > 0:
        raise DegenerateWellError(f"no barrier above the minimum at x={x[ic]:.6g}")
    spline = CubicSpline(x, v0)
    floor = DELTA_FLOOR * scale
    reason = ""
    while delta >= floor:
        well, reason = _try_delta(spline, x, v0, ic, rims, v_min, delta)
        if well is not None:
            if float(np.min(profile.v0pp[rims[0] : rims[1] + 1])) < 0:
                LOG.debug("V0 is not convex between the barriers; the extension restores convexity outside")
            well = WellSpec(well.v_min, well.delta, well.a, well.b, well.eps, float(beta), well.x_center)
            LOG.info(f"fit_well: delta={well.delta:.4g} a={well.a:.4g} b={well.b:.4g} eps={well.eps:.4g}")
            return well
        LOG.debug(f"fit_well: delta={delta:.4g} rejected ({reason}); halving")
        delta *= 0.5
    raise DegenerateWellError(f"no admissible delta above {floor:.3g}: {reason}")


# ---------------------------------------------------------------------------
# Convex extension
# ---------------------------------------------------------------------------


def extend_convex(profile: PotentialProfile, well: WellSpec, h: float = 0.0, grid: Optional[Grid] = None) -> ExtendedPotential:
    """V on [-a-eps, b+eps], v_min + beta (x - x_c)^2 beyond the outer radius, C^1 cubics between.

    V includes the h^2 V1 correction, so the result matches the operator used
    for the residual at the same h.
    """
    grid = grid or profile.grid
    x = grid.points()
    spline_v = CubicSpline(profile.x, full_potential(profile, h))
    V, dV = spline_v(x), spline_v(x, 1)
    xc = well.x_center
    out = well.outer_radius
    if xc - out < grid.x_min or xc + out > grid.x_max:
        raise ExtensionError(f"outer radius {out:.4g} leaves the grid [{grid.x_min:.4g}, {grid.x_max:.4g}]; widen the grid")
    ilo, ihi = grid.index_of(well.left - well.eps), grid.index_of(well.right + well.eps)
    values = well.v_min + well.beta * (x - xc) ** 2
    values[ilo : ihi + 1] = V[ilo : ihi + 1]
    for side, i_edge in ((1.0, ihi), (-1.0, ilo)):
        x_e, x_o = float(x[i_edge]), xc + side * out
        v_o, d_o = well.v_min + well.beta * out * out, 2.0 * well.beta * side * out
        if v_o <= V[i_edge] or side * dV[i_edge] <= 0:
            raise ExtensionError(f"outer branch at {x_o:.4g} does not rise above V({x_e:.4g}); increase beta or X_out")
        if side > 0:
            bridge = CubicHermiteSpline([x_e, x_o], [V[i_edge], v_o], [dV[i_edge], d_o])
        else:
            bridge = CubicHermiteSpline([x_o, x_e], [v_o, V[i_edge]], [d_o, dV[i_edge]])
        mask = (x > min(x_e, x_o)) & (x < max(x_e, x_o))
        values[mask] = bridge(x[mask])
        if np.any(side * bridge(x[mask], 1) <= 0):
            raise ExtensionError(f"C^1 bridge between {x_e:.4g} and {x_o:.4g} is not monotone; use a larger X_out")
        if np.any(bridge(x[mask], 2) < 0):
            LOG.warning(f"bridge between {x_e:.4g} and {x_o:.4g} is not convex")
    inside = (x >= well.left - grid.delta) & (x <= well.right + grid.delta)
    if np.any((values <= well.window[1]) & ~inside):
        raise ExtensionError("sublevel set of the extended potential at v_min + 2 delta/3 leaves [-a, b]")
    LOG.debug(f"extend_convex: outer radius {out:.4g}, beta={well.beta:g}, h={h:.4g}")
    return ExtendedPotential(grid=grid, values=values, well=well, h=float(h))


# ---------------------------------------------------------------------------
# Quasimode and certificate
# ---------------------------------------------------------------------------


def well_cutoff(well: WellSpec, grid: Grid) -> np.ndarray:
    """1 on [-a, b], supported in [-a-eps, b+eps]."""
    return interval_cutoff(grid.points(), well.left, well.right, well.eps)


def build_quasimode(
    extended: ExtendedPotential,
    V: np.ndarray,
    h: float,
    well: WellSpec,
    grid: Grid,
    chi: Optional[np.ndarray] = None,
) -> Quasimode:
    """Cut off an eigenfunction of (hD)^2 + V~ and measure it against (hD)^2 + V.

    Among the eigenvalues in the window the one with the smallest recomputed
    residual is kept.
    """
    pairs = eigen_window(extended.values, h, grid, well.window)
    if not pairs:
        raise QuasimodeError(
            f"no eigenvalue in [{well.window[0]:.6g}, {well.window[1]:.6g}] at h={h:.4g}; decrease h (the count grows like 1/h)"
        )
    w = well_cutoff(well, grid) if chi is None else np.asarray(chi, dtype=float)
    op = build_operator(np.asarray(V, dtype=float), h, grid)
    x = grid.points()
    outside = (x < well.left) | (x > well.right)
    best: Optional[Quasimode] = None
    for pair in pairs:
        u = w * pair.vector
        unorm = l2_norm(u, grid)
        if unorm == 0.0:
            continue
        # the absorber only lives on the CAP layers; the residual uses the self-adjoint part
        r = tridiagonal_residual(op, u, pair.energy)
        residual = l2_norm(r, grid) / unorm
        u = u / unorm
        mass = float(np.sum(np.abs(u[outside]) ** 2) * grid.delta)
        qm = Quasimode(
            energy=pair.energy,
            vector=u,
            residual=float(residual),
            mass_outside=mass,
            phi=pair.vector,
            chi=w,
            grid=grid,
            h=float(h),
            eigen_residual=pair.residual,
        )
        LOG.debug(f"h={h:.4g} E={pair.energy:.8g} residual={residual:.3e}")
        if best is None or qm.residual < best.residual:
            best = qm
    if best is None:
        raise QuasimodeError("cutoff annihilates every eigenfunction in the window")
    if best.mass_outside > MASS_ADVISORY * math.sqrt(best.residual):
        LOG.warning(f"mass outside [-a, b] is {best.mass_outside:.2e}, above 10 sqrt(residual)")
    LOG.info(f"quasimode h={h:.4g}: E={best.energy:.8g} residual={best.residual:.3e}")
    return best


def tridiagonal_residual(op: DiscreteOperator, u: np.ndarray, energy: float) -> np.ndarray:
    """((hD)^2 + V - E) u using only the real part of the bands."""
    d = op.diag.real - energy
    e = op.offdiag.real
    out = d * u
    out[:-1] += e * u[1:]
    out[1:] += e * u[:-1]
    return out


def certify_blowup(
    qm: Quasimode,
    op: Optional[DiscreteOperator] = None,
    chi_tilde: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
) -> CertifiedBound:
    """1/residual as a lower bound for ||chi~ R(E) chi~||, cross-checked against a direct measurement when `op` is given."""
    if chi_tilde is not None:
        chi_tilde = np.asarray(chi_tilde, dtype=float)
        support = qm.chi > 0
        if np.any(chi_tilde[support] < 1.0 - 1e-12):
            raise QuasimodeError("chi_tilde must equal 1 on the support of the quasimode cutoff")
    if qm.residual <= np.finfo(float).tiny:
        lower = math.inf
    else:
        lower = 1.0 / qm.residual
    if op is None or chi_tilde is None:
        return CertifiedBound(lower_bound=lower)
    measured = cutoff_resolvent_norm(op, qm.energy, chi_tilde, tol=tol, max_iter=max_iter, seed=seed)
    consistent = bool(measured.blowup or measured.norm >= CROSS_CHECK_SLACK * lower)
    if not consistent:
        LOG.warning(f"measured norm {measured.norm:.3e} is below half the certified bound {lower:.3e}")
    return CertifiedBound(lower_bound=lower, measured=measured, consistent=consistent)


def weyl_count(
    values: np.ndarray, grid: Grid, h_list: Sequence[float], window: Sequence[float]
) -> Tuple[List[int], float]:
    """Eigenvalue counts in `window` per h and the log-log slope of count against h."""
    counts = [count_in_window(values, h, grid, window) for h in h_list]
    if min(counts) <= 0:
        raise QuasimodeError(f"empty window at some h in {list(h_list)}: counts {counts}")
    slope, _ = np.polyfit(np.log(np.asarray(h_list, dtype=float)), np.log(np.asarray(counts, dtype=float)), 1)
    return counts, float(slope)


def export_quasimode(qm: Quasimode, bound: Optional[CertifiedBound], directory: str, stem: str = "quasimode") -> Tuple[str, str]:
    """Write <stem>.csv (x, phi, chi_phi) and <stem>.json {E, residual, lower_bound}."""
    os.makedirs(directory, exist_ok=True)
    csv_path = os.path.join(directory, f"{stem}.csv")
    json_path = os.path.join(directory, f"{stem}.json")
    tmp = f"{csv_path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["x", "phi", "chi_phi"])
        for xi, p, u in zip(qm.grid.points(), qm.phi, qm.vector):
            w.writerow([repr(float(xi)), repr(float(p)), repr(float(u))])
    os.replace(tmp, csv_path)
    summary = qm.to_dict()
    summary["lower_bound"] = None if bound is None else bound.to_dict()["lower_bound"]
    tmp = f"{json_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    os.replace(tmp, json_path)
    return csv_path, json_path
