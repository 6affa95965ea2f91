"""Critical components of V0, their degeneracy and the resolvent law they predict.

Worst-of logic: the global cutoff resolvent bound is the worst of the local
bounds, and any local minimum (stable trapping) forces superpolynomial blowup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import SemiresError
from ..logging import get_logger
from ..numerics.discretize import Grid
from .constants import (
    CASE_ALMOST_BOUNDED,
    CASE_BLOWUP,
    FORM_ELLIPTIC,
    FORM_NONTRAPPING,
    FORM_POWER,
    FORM_POWER_LOG,
    FORM_POWER_PLUS_ETA,
    FORM_SUPERPOLYNOMIAL,
    KIND_CYLINDER_INFLECTION,
    KIND_CYLINDER_MAX,
    KIND_DEGENERATE_MAX,
    KIND_INFINITELY_DEGENERATE_INFLECTION,
    KIND_INFINITELY_DEGENERATE_MAX,
    KIND_INFLECTION,
    KIND_LOCAL_MIN,
    KIND_NONDEGENERATE_MAX,
    KINDS_CYLINDER,
    KINDS_INFINITE,
    ORDER_INFINITE,
)
from .warp import PotentialProfile, WarpSpec, effective_potential

LOG = get_logger("trapping")

DEFAULT_M_CAP = 8
FIT_WINDOW = (1e-8, 1e-2)
MIN_FLANK_SAMPLES = 6
PLATEAU_TOL = 1e-12
ENERGY_BAND = 0.05
CLASSIFY_HALF_WIDTH = 10.0
CLASSIFY_SPACING = 1e-3

Order = Union[int, str]


class ClassificationError(SemiresError, ValueError):
    pass


@dataclass(frozen=True)
class CriticalComponent:
    x_left: float
    x_right: float
    critical_value: float
    kind: Optional[str] = None
    order: Optional[Order] = None
    # signs of -V0' just outside the component, (left, right)
    flank_signs: Tuple[int, int] = (0, 0)
    curvature_sign: int = 0
    # highest energy still trapped by the component (basin rim for minima)
    energy_top: Optional[float] = None

    @property
    def width(self) -> float:
        return self.x_right - self.x_left

    @property
    def center(self) -> float:
        return 0.5 * (self.x_left + self.x_right)

    @property
    def is_point(self) -> bool:
        return self.x_left == self.x_right

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x_left": self.x_left,
            "x_right": self.x_right,
            "kind": self.kind,
            "order": self.order,
            "critical_value": self.critical_value,
        }


@dataclass(frozen=True)
class ScalingLaw:
    """Predicted cutoff resolvent size ~ h^-exponent (times log(1/h) for power_log)."""

    form: str
    exponent: float

    @property
    def decay_exponent(self) -> Optional[float]:
        """delta = 2 - gamma: the |lambda|^-delta decay of the resolvent in frequency."""
        if self.form == FORM_SUPERPOLYNOMIAL:
            return None
        return 2.0 - self.exponent

    @property
    def smoothing_order(self) -> Optional[float]:
        if self.form == FORM_SUPERPOLYNOMIAL or self.exponent >= 2.0:
            return None
        return (2.0 - self.exponent) / 2.0

    def describe(self) -> str:
        if self.form == FORM_SUPERPOLYNOMIAL:
            return ">= C_N h^-N for every N"
        if self.form == FORM_POWER_LOG:
            return f"~ log(1/h) h^-{self.exponent:g}"
        if self.form == FORM_POWER_PLUS_ETA:
            return f"<= C_eta h^-({self.exponent:g}+eta) for every eta > 0"
        return f"~ h^-{self.exponent:g}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "form": self.form,
            "gamma": None if math.isinf(self.exponent) else self.exponent,
            "describe": self.describe(),
        }


_FORM_RANK = {
    FORM_ELLIPTIC: 0,
    FORM_NONTRAPPING: 1,
    FORM_POWER: 2,
    FORM_POWER_LOG: 3,
    FORM_POWER_PLUS_ETA: 4,
    FORM_SUPERPOLYNOMIAL: 5,
}

NONTRAPPING_LAW = ScalingLaw(FORM_NONTRAPPING, 1.0)
ELLIPTIC_LAW = ScalingLaw(FORM_ELLIPTIC, 0.0)


@dataclass(frozen=True)
class TrappingReport:
    components: Tuple[CriticalComponent, ...]
    per_component_law: Tuple[ScalingLaw, ...]
    case: str
    worst: ScalingLaw
    smoothing_order: Optional[float]
    decay_exponent: Optional[float] = None
    notes: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def worst_gamma(self) -> float:
        return self.worst.exponent

    def to_dict(self) -> Dict[str, Any]:
        comps = []
        for c, law in zip(self.components, self.per_component_law):
            d = c.to_dict()
            d["predicted_form"] = law.form
            d["predicted_gamma"] = None if math.isinf(law.exponent) else law.exponent
            comps.append(d)
        return {
            "components": comps,
            "global": {
                "case": self.case,
                "worst_form": self.worst.form,
                "worst_gamma": None if math.isinf(self.worst.exponent) else self.worst.exponent,
                "smoothing_order": self.smoothing_order,
                "decay_exponent": self.decay_exponent,
            },
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    out: List[Tuple[int, int]] = []
    i, n = 0, mask.shape[0]
    while i < n:
        if mask[i]:
            j = i
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((i, j))
            i = j + 1
        else:
            i += 1
    return out


def _sign(v: float) -> int:
    return 1 if v > 0 else (-1 if v < 0 else 0)


def _basin_top(v0: np.ndarray, i_left: int, i_right: int) -> float:
    """Lowest rim height of the basin around [i_left, i_right]: climb each side until V0 turns down."""
    rims = []
    i = i_left
    while i > 0 and v0[i - 1] >= v0[i]:
        i -= 1
    rims.append(v0[i])
    j = i_right
    while j < v0.shape[0] - 1 and v0[j + 1] >= v0[j]:
        j += 1
    rims.append(v0[j])
    return float(min(rims))


def find_critical_components(
    profile: PotentialProfile,
    deriv_tol: Optional[float] = None,
    merge_width: Optional[float] = None,
    plateau_tol: float = PLATEAU_TOL,
) -> List[CriticalComponent]:
    """Connected pieces of {|V0'| <= deriv_tol}, reduced to their flat core.

    Each candidate run (sign changes of V0' between samples included) is merged
    with neighbours closer than merge_width, then shrunk to the samples where
    V0' vanishes to plateau_tol relative precision. A core wider than
    merge_width becomes an interval component; anything else is a point at the
    extremal (or flattest) sample. Runs touching the grid ends are dropped.
    """
    x, v0, d = profile.x, profile.v0, profile.v0p
    n = x.shape[0]
    if n == 0:
        raise ClassificationError("empty grid")
    max_d = float(np.max(np.abs(d)))
    if max_d == 0.0:
        raise ClassificationError("V0' vanishes identically: everything is critical")
    tol = 1e-3 * max_d if deriv_tol is None else float(deriv_tol)
    if tol <= 0:
        raise ClassificationError(f"deriv_tol must be positive, got {tol}")
    if tol >= max_d:
        raise ClassificationError(f"deriv_tol {tol:.3g} >= max|V0'| {max_d:.3g}: everything is critical")
    merge = 5.0 * profile.grid.delta if merge_width is None else float(merge_width)
    if merge <= 0:
        raise ClassificationError(f"merge_width must be positive, got {merge}")

    mask = np.abs(d) <= tol
    # a derivative sign change between samples marks a critical point even when both sides exceed tol
    flips = np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)[0]
    for i in flips:
        mask[i if abs(d[i]) <= abs(d[i + 1]) else i + 1] = True

    runs = _runs(mask)
    merged: List[Tuple[int, int]] = []
    for r in runs:
        if merged and x[r[0]] - x[merged[-1][1]] < merge:
            merged[-1] = (merged[-1][0], r[1])
        else:
            merged.append(r)

    comps: List[CriticalComponent] = []
    for i0, i1 in merged:
        if i0 < 2 or i1 > n - 3:
            LOG.debug(f"dropping boundary run [{x[i0]:.4g}, {x[i1]:.4g}]")
            continue
        left_sign, right_sign = _sign(-d[i0 - 1]), _sign(-d[i1 + 1])
        seg = slice(i0, i1 + 1)
        flat = plateau_tol * max_d
        # prefer samples where V0' vanishes outright; finite differences leak next to a plateau edge
        still = np.nonzero(np.abs(d[seg]) <= flat)[0]
        if left_sign * right_sign < 0:
            pick = np.argmax if left_sign < 0 else np.argmin
            ic = i0 + (int(still[pick(v0[seg][still])]) if still.size else int(pick(v0[seg])))
        else:
            ic = i0 + int(np.argmin(np.abs(d[seg])))
        p0 = p1 = ic
        while p0 > i0 and abs(d[p0 - 1]) <= flat:
            p0 -= 1
        while p1 < i1 and abs(d[p1 + 1]) <= flat:
            p1 += 1
        if x[p1] - x[p0] > merge:
            xl, xr, vc = float(x[p0]), float(x[p1]), float(v0[ic])
        else:
            p0 = p1 = ic
            xl = xr = float(x[ic])
            vc = float(v0[ic])
        top = _basin_top(v0, p0, p1) if (left_sign > 0 and right_sign < 0) else vc
        comps.append(
            CriticalComponent(
                x_left=xl,
                x_right=xr,
                critical_value=vc,
                flank_signs=(left_sign, right_sign),
                curvature_sign=_sign(float(profile.v0pp[ic])),
                energy_top=top,
            )
        )
    LOG.debug(f"find_critical_components: {len(comps)} component(s) with deriv_tol={tol:.3g}")
    return comps


# ---------------------------------------------------------------------------
# Order fitting
# ---------------------------------------------------------------------------


def _flank_samples(profile: PotentialProfile, comp: CriticalComponent, side: int, scale: float) -> Tuple[np.ndarray, np.ndarray, int]:
    x, v0 = profile.x, profile.v0
    lo, hi = FIT_WINDOW[0] * scale, FIT_WINDOW[1] * scale
    edge = comp.x_right if side > 0 else comp.x_left
    i = profile.grid.index_of(edge) + side
    dist: List[float] = []
    dv: List[float] = []
    signs = 0
    while 0 <= i < x.shape[0]:
        delta_v = v0[i] - comp.critical_value
        if abs(delta_v) > hi:
            break
        if abs(delta_v) >= lo and abs(x[i] - edge) > 0:
            dist.append(abs(x[i] - edge))
            dv.append(abs(delta_v))
            signs += _sign(delta_v)
        i += side
    return np.asarray(dist), np.asarray(dv), _sign(signs)


def classify_order(profile: PotentialProfile, comp: CriticalComponent, m_cap: int = DEFAULT_M_CAP) -> Tuple[str, Order]:
    """Kind and degeneracy order of a component from the flank power law.

    On each flank the slope of log|V0 - V_c| against log(distance) estimates the
    vanishing order. Falling on both sides is a maximum (order 2m), rising on
    both a minimum, and a monotone passage an inflection (order 2*m2 + 1). The
    flank with the higher order wins; slopes above 2*m_cap are reported as
    INFINITE.
    """
    left, right = comp.flank_signs
    if not comp.is_point:
        if left < 0 and right > 0:
            return KIND_CYLINDER_MAX, ORDER_INFINITE
        if left > 0 and right < 0:
            return KIND_LOCAL_MIN, 1
        return KIND_CYLINDER_INFLECTION, ORDER_INFINITE

    scale = profile.scale()
    slopes: List[float] = []
    drops: List[int] = []
    for side in (-1, 1):
        dist, dv, sgn = _flank_samples(profile, comp, side, scale)
        if dist.shape[0] < MIN_FLANK_SAMPLES:
            LOG.debug(f"flank {side:+d} at x={comp.x_left:.4g}: only {dist.shape[0]} usable samples")
            continue
        slope = float(np.polyfit(np.log(dist), np.log(dv), 1)[0])
        slopes.append(slope)
        drops.append(sgn)
    if not slopes:
        raise ClassificationError(
            f"component at x={comp.x_left:.6g}: fewer than {MIN_FLANK_SAMPLES} samples with "
            f"|V0 - V_c| in [{FIT_WINDOW[0]:g}, {FIT_WINDOW[1]:g}]*scale on both flanks; refine the grid"
        )
    if len(drops) == 2:
        falling = drops[0] < 0 and drops[1] < 0
        rising = drops[0] > 0 and drops[1] > 0
    else:
        # single usable flank: fall back on the derivative pattern
        falling = left < 0 and right > 0
        rising = left > 0 and right < 0
    slope = max(slopes)
    infinite = slope > 2 * m_cap
    LOG.debug(f"classify_order x={comp.x_left:.4g}: slopes={['%.3f' % s for s in slopes]}")
    if rising:
        return KIND_LOCAL_MIN, (ORDER_INFINITE if infinite else max(1, int(round(slope / 2.0))))
    if falling:
        if infinite:
            return KIND_INFINITELY_DEGENERATE_MAX, ORDER_INFINITE
        m = max(1, int(round(slope / 2.0)))
        return (KIND_NONDEGENERATE_MAX if m == 1 else KIND_DEGENERATE_MAX), m
    if infinite:
        return KIND_INFINITELY_DEGENERATE_INFLECTION, ORDER_INFINITE
    return KIND_INFLECTION, max(1, int(round((slope - 1.0) / 2.0)))


def degenerate_max_gamma(m: int) -> float:
    return 2.0 * m / (m + 1.0)


def inflection_gamma(m2: int) -> float:
    return (4.0 * m2 + 2.0) / (2.0 * m2 + 3.0)


def predicted_law(comp: CriticalComponent) -> ScalingLaw:
    """Resolvent growth implied by the local lower bound for the component's kind."""
    kind, order = comp.kind, comp.order
    if kind == KIND_LOCAL_MIN:
        return ScalingLaw(FORM_SUPERPOLYNOMIAL, math.inf)
    if kind in KINDS_CYLINDER or kind in KINDS_INFINITE or order == ORDER_INFINITE:
        return ScalingLaw(FORM_POWER_PLUS_ETA, 2.0)
    if kind == KIND_NONDEGENERATE_MAX:
        return ScalingLaw(FORM_POWER_LOG, 1.0)
    if kind == KIND_DEGENERATE_MAX:
        return ScalingLaw(FORM_POWER, degenerate_max_gamma(int(order)))  # type: ignore[arg-type]
    if kind == KIND_INFLECTION:
        return ScalingLaw(FORM_POWER, inflection_gamma(int(order)))  # type: ignore[arg-type]
    raise ClassificationError(f"component at x={comp.x_left:.6g} is not classified (kind={kind!r})")


def _law_key(law: ScalingLaw) -> Tuple[float, int]:
    return (law.exponent, _FORM_RANK[law.form])


def worst_law(laws: Sequence[ScalingLaw]) -> ScalingLaw:
    if not laws:
        return NONTRAPPING_LAW
    return max(laws, key=_law_key)


def global_verdict(components: Sequence[CriticalComponent], laws: Sequence[ScalingLaw]) -> TrappingReport:
    if len(components) != len(laws):
        raise ClassificationError("components and laws must be aligned")
    notes: List[str] = []
    if any(c.kind == KIND_LOCAL_MIN for c in components):
        worst = ScalingLaw(FORM_SUPERPOLYNOMIAL, math.inf)
        case = CASE_BLOWUP
        notes.append("stable trapping: localized quasimodes force superpolynomial resolvent growth")
    else:
        worst = worst_law(laws)
        case = CASE_ALMOST_BOUNDED
        if worst.form == FORM_POWER_LOG:
            notes.append("smoothing order holds up to a logarithmic loss")
        if worst.form == FORM_POWER_PLUS_ETA:
            notes.append("optimal infinitely degenerate bound may be h^-2/gamma(h); not resolved numerically")
    return TrappingReport(
        components=tuple(components),
        per_component_law=tuple(laws),
        case=case,
        worst=worst,
        smoothing_order=worst.smoothing_order,
        decay_exponent=worst.decay_exponent,
        notes=tuple(notes),
    )


def classify_profile(
    profile: PotentialProfile,
    deriv_tol: Optional[float] = None,
    merge_width: Optional[float] = None,
    m_cap: int = DEFAULT_M_CAP,
) -> TrappingReport:
    comps = []
    for c in find_critical_components(profile, deriv_tol=deriv_tol, merge_width=merge_width):
        kind, order = classify_order(profile, c, m_cap=m_cap)
        comps.append(replace(c, kind=kind, order=order))
    laws = [predicted_law(c) for c in comps]
    report = global_verdict(comps, laws)
    LOG.info(
        f"classified {len(comps)} component(s): "
        + (", ".join(f"{c.kind}({c.order})@{c.center:.3g}" for c in comps) or "none")
        + f"; {report.case}, worst {report.worst.describe()}"
    )
    return report


def classification_grid(half_width: float = CLASSIFY_HALF_WIDTH, spacing: float = CLASSIFY_SPACING) -> Grid:
    return Grid.symmetric(half_width, int(round(2.0 * half_width / spacing)) + 1)


def classify_warp(spec: WarpSpec, grid: Optional[Grid] = None, **kwargs: Any) -> Tuple[PotentialProfile, TrappingReport]:
    profile = effective_potential(spec, grid or classification_grid())
    return profile, classify_profile(profile, **kwargs)


def relevant_components(report: TrappingReport, z: float, scale: float, band: float = ENERGY_BAND) -> List[int]:
    """Indices of components that trap at energy z (within band*scale)."""
    w = band * scale
    out = []
    for i, c in enumerate(report.components):
        top = c.energy_top if c.energy_top is not None else c.critical_value
        if c.critical_value - w <= z <= max(top, c.critical_value) + w:
            out.append(i)
    return out


def law_at_energy(report: TrappingReport, z: float, profile: PotentialProfile, band: float = ENERGY_BAND) -> ScalingLaw:
    """Law governing the cutoff resolvent at a fixed energy z."""
    idx = relevant_components(report, z, profile.scale(), band)
    if idx:
        return worst_law([report.per_component_law[i] for i in idx])
    if z < float(np.min(profile.v0)):
        return ELLIPTIC_LAW
    return NONTRAPPING_LAW
