"""Least-squares fits of log ||chi R chi|| against log(1/h), and verdicts against predicted laws."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..domain.constants import (
    FORM_POWER_PLUS_ETA,
    FORM_SUPERPOLYNOMIAL,
    MODEL_POWER_LOG,
    MODEL_PURE_POWER,
    VERDICT_CONSISTENT,
    VERDICT_INCONCLUSIVE,
    VERDICT_INCONSISTENT,
)
from ..domain.trapping import ScalingLaw
from ..errors import SemiresError
from ..logging import get_logger
from .resolvent import ResolventSample

LOG = get_logger("fit")

MIN_POINTS = 4
MIN_SPAN = 4.0
MIN_R2 = 0.98
DEFAULT_TOL_GAMMA = 0.15
ETA_FLOOR = 1.7
SUPERPOLY_FLOOR = 3.0
COLLINEAR_COND = 1e8


class FitError(SemiresError, ValueError):
    pass


@dataclass(frozen=True)
class ScalingFitResult:
    model: str
    gamma: float
    kappa: float
    log_c: float
    r2: float
    n_points: int
    h_min: float = 0.0
    h_max: float = 0.0
    sse: float = 0.0
    collinear: bool = False
    n_blowup: int = 0

    @property
    def span(self) -> float:
        return self.h_max / self.h_min if self.h_min > 0 else 0.0

    def predict(self, h: float) -> float:
        L = math.log(1.0 / h)
        return math.exp(self.log_c + self.gamma * L + self.kappa * math.log(L))

    def to_dict(self) -> Dict[str, object]:
        return {
            "model": self.model,
            "gamma": self.gamma,
            "kappa": self.kappa,
            "log_c": self.log_c,
            "r2": self.r2,
            "n_points": self.n_points,
            "h_range": [self.h_min, self.h_max],
            "collinear": self.collinear,
        }


Sample = Union[ResolventSample, Tuple[float, float]]


def _usable(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray, int]:
    """Converged finite (h, norm) pairs sorted by decreasing h, plus the blowup count."""
    pairs: List[Tuple[float, float]] = []
    n_blowup = 0
    for s in samples:
        if isinstance(s, ResolventSample):
            if s.blowup or math.isinf(s.norm):
                n_blowup += 1
                continue
            if not s.converged or s.error:
                continue
            h, norm = s.h, s.norm
        else:
            h, norm = float(s[0]), float(s[1])
            if math.isinf(norm):
                n_blowup += 1
                continue
        if h > 0 and math.isfinite(norm) and norm > 0:
            pairs.append((h, norm))
    # sorting makes the fit independent of input order
    pairs.sort(key=lambda p: (-p[0], p[1]))
    h = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    return h, y, n_blowup


def _lstsq(model: str, samples: Sequence[Sample]) -> ScalingFitResult:
    h, norm, n_blowup = _usable(samples)
    if h.shape[0] < MIN_POINTS:
        raise FitError(f"{model} fit needs >= {MIN_POINTS} converged samples, got {h.shape[0]}")
    span = float(h.max() / h.min())
    if span < MIN_SPAN:
        raise FitError(f"h spans a factor {span:.3g}; need >= {MIN_SPAN:g}")
    L = np.log(1.0 / h)
    y = np.log(norm)
    cols = [np.ones_like(L), L]
    if model == MODEL_POWER_LOG:
        if np.any(L <= 0):
            raise FitError("power_log model needs h < 1")
        cols.append(np.log(L))
    A = np.column_stack(cols)
    coef, _, _, sv = np.linalg.lstsq(A, y, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    collinear = cond > COLLINEAR_COND
    if collinear:
        LOG.warning(f"{model} fit is ill-conditioned (cond {cond:.2e}); widen the h range")
    resid = y - A @ coef
    sse = float(resid @ resid)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if sst == 0.0 else max(0.0, min(1.0, 1.0 - sse / sst))
    res = ScalingFitResult(
        model=model,
        gamma=float(coef[1]),
        kappa=float(coef[2]) if model == MODEL_POWER_LOG else 0.0,
        log_c=float(coef[0]),
        r2=r2,
        n_points=int(h.shape[0]),
        h_min=float(h.min()),
        h_max=float(h.max()),
        sse=sse,
        collinear=collinear,
        n_blowup=n_blowup,
    )
    LOG.debug(f"{model}: gamma={res.gamma:.4f} kappa={res.kappa:.4f} r2={res.r2:.6f} n={res.n_points}")
    return res


def fit_power(samples: Sequence[Sample]) -> ScalingFitResult:
    """log norm = log_c + gamma log(1/h)."""
    return _lstsq(MODEL_PURE_POWER, samples)


def fit_power_log(samples: Sequence[Sample]) -> ScalingFitResult:
    """log norm = log_c + gamma log(1/h) + kappa log log(1/h)."""
    return _lstsq(MODEL_POWER_LOG, samples)


def count_blowups(samples: Sequence[Sample]) -> int:
    return _usable(samples)[2]


def verdict(
    fit: Optional[ScalingFitResult],
    law: ScalingLaw,
    tol_gamma: float = DEFAULT_TOL_GAMMA,
    *,
    blowup_present: bool = False,
) -> str:
    """consistent / inconsistent / inconclusive for a fit against a predicted law.

    Superpolynomial laws accept either gamma >= 3 or blowup sentinels. The
    h^-(2+eta) law is accepted on the band [1.7, 2 + tol_gamma].
    """
    if law.form == FORM_SUPERPOLYNOMIAL and (blowup_present or (fit is not None and fit.n_blowup > 0)):
        return VERDICT_CONSISTENT
    if fit is None:
        return VERDICT_INCONCLUSIVE
    if fit.r2 < MIN_R2 or fit.span < MIN_SPAN:
        return VERDICT_INCONCLUSIVE
    if law.form == FORM_SUPERPOLYNOMIAL:
        ok = fit.gamma >= SUPERPOLY_FLOOR
    elif law.form == FORM_POWER_PLUS_ETA:
        ok = ETA_FLOOR <= fit.gamma <= law.exponent + tol_gamma
    else:
        ok = abs(fit.gamma - law.exponent) <= tol_gamma
    return VERDICT_CONSISTENT if ok else VERDICT_INCONSISTENT


def verdict_report(fit: Optional[ScalingFitResult], law: ScalingLaw, tol_gamma: float = DEFAULT_TOL_GAMMA, blowup_present: bool = False) -> Dict[str, object]:
    """{predicted, fitted, verdict, r2, h_range} for the JSON report."""
    return {
        "predicted": law.to_dict(),
        "fitted": None if fit is None else fit.to_dict(),
        "verdict": verdict(fit, law, tol_gamma, blowup_present=blowup_present),
        "r2": None if fit is None else fit.r2,
        "h_range": None if fit is None else [fit.h_min, fit.h_max],
    }
