import math
import os
import sys

import numpy as np
import pytest

# Ensure the repository's src/ is importable
sys.path.insert(0, os.path.abspath("src"))

from semires.domain.constants import (
    FORM_POWER,
    FORM_POWER_LOG,
    FORM_POWER_PLUS_ETA,
    FORM_SUPERPOLYNOMIAL,
    VERDICT_CONSISTENT,
    VERDICT_INCONCLUSIVE,
    VERDICT_INCONSISTENT,
)
from semires.domain.trapping import ScalingLaw
from semires.numerics.fit import FitError, count_blowups, fit_power, fit_power_log, verdict, verdict_report
from semires.numerics.resolvent import ResolventSample

HS = [0.2, 0.1, 0.05, 0.025, 0.0125]


def _samples(gamma, kappa=0.0, c=3.0, hs=HS):
    return [(h, c * (1 / h) ** gamma * math.log(1 / h) ** kappa) for h in hs]


def test_pure_power_recovers_exponent_and_constant():
    fit = fit_power(_samples(4.0 / 3.0))
    assert fit.gamma == pytest.approx(4.0 / 3.0, abs=1e-10)
    assert math.exp(fit.log_c) == pytest.approx(3.0)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.span == pytest.approx(16.0)
    assert fit.predict(0.05) == pytest.approx(3.0 * 20 ** (4.0 / 3.0))


def test_power_log_recovers_both_exponents():
    fit = fit_power_log(_samples(1.0, kappa=1.0))
    assert fit.gamma == pytest.approx(1.0, abs=1e-8)
    assert fit.kappa == pytest.approx(1.0, abs=1e-8)


def test_fit_is_equivariant_under_rescaling_norms():
    base = fit_power(_samples(1.5))
    scaled = fit_power([(h, 7.0 * n) for h, n in _samples(1.5)])
    assert scaled.gamma == pytest.approx(base.gamma)
    assert scaled.log_c == pytest.approx(base.log_c + math.log(7.0))


def test_fit_ignores_input_order():
    data = _samples(1.2)
    rng = np.random.default_rng(42)
    shuffled = [data[i] for i in rng.permutation(len(data))]
    assert fit_power(shuffled) == fit_power(data)


def test_too_few_points_or_too_short_span():
    with pytest.raises(FitError):
        fit_power(_samples(1.0, hs=[0.2, 0.1, 0.05]))
    with pytest.raises(FitError):
        fit_power(_samples(1.0, hs=[0.2, 0.18, 0.15, 0.12, 0.1]))


def test_power_log_needs_h_below_one():
    with pytest.raises(FitError):
        fit_power_log(_samples(1.0, hs=[4.0, 2.0, 1.0, 0.5]))


def test_unconverged_and_blowup_samples_are_set_aside():
    samples = [ResolventSample(h=h, z=1.0, norm=n, iterations=5, converged=True) for h, n in _samples(1.0)]
    samples.append(ResolventSample(h=0.3, z=1.0, norm=1e9, iterations=200, converged=False))
    samples.append(ResolventSample(h=0.01, z=1.0, norm=math.inf, iterations=1, converged=True, blowup=True))
    fit = fit_power(samples)
    assert fit.n_points == len(HS)
    assert fit.n_blowup == 1
    assert fit.gamma == pytest.approx(1.0)
    assert count_blowups(samples) == 1


def test_collinear_design_is_flagged():
    hs = [0.01 * (1 + 1e-9 * k) for k in range(4)] + [0.04]
    fit = fit_power_log(_samples(1.0, hs=hs))
    assert fit.collinear


@pytest.mark.parametrize(
    "gamma,law,expected",
    [
        (4.0 / 3.0, ScalingLaw(FORM_POWER, 4.0 / 3.0), VERDICT_CONSISTENT),
        (1.6, ScalingLaw(FORM_POWER, 4.0 / 3.0), VERDICT_INCONSISTENT),
        (1.9, ScalingLaw(FORM_POWER_PLUS_ETA, 2.0), VERDICT_CONSISTENT),
        (1.5, ScalingLaw(FORM_POWER_PLUS_ETA, 2.0), VERDICT_INCONSISTENT),
        (2.3, ScalingLaw(FORM_POWER_PLUS_ETA, 2.0), VERDICT_INCONSISTENT),
        (3.5, ScalingLaw(FORM_SUPERPOLYNOMIAL, math.inf), VERDICT_CONSISTENT),
        (2.0, ScalingLaw(FORM_SUPERPOLYNOMIAL, math.inf), VERDICT_INCONSISTENT),
    ],
)
def test_verdict_bands(gamma, law, expected):
    assert verdict(fit_power(_samples(gamma)), law) == expected


def test_power_log_verdict_uses_exponent():
    fit = fit_power_log(_samples(1.0, kappa=1.0))
    assert verdict(fit, ScalingLaw(FORM_POWER_LOG, 1.0)) == VERDICT_CONSISTENT


def test_verdict_without_fit_or_with_poor_fit_is_inconclusive():
    law = ScalingLaw(FORM_POWER, 1.0)
    assert verdict(None, law) == VERDICT_INCONCLUSIVE
    noisy = [(h, n * f) for (h, n), f in zip(_samples(1.0), [1.0, 3.0, 0.4, 2.5, 0.5])]
    assert verdict(fit_power(noisy), law) == VERDICT_INCONCLUSIVE


def test_blowup_settles_superpolynomial_law():
    law = ScalingLaw(FORM_SUPERPOLYNOMIAL, math.inf)
    assert verdict(None, law, blowup_present=True) == VERDICT_CONSISTENT


def test_verdict_report_shape():
    law = ScalingLaw(FORM_POWER, 4.0 / 3.0)
    rep = verdict_report(fit_power(_samples(4.0 / 3.0)), law)
    assert rep["verdict"] == VERDICT_CONSISTENT
    assert rep["h_range"] == [0.0125, 0.2]
    assert rep["fitted"]["model"] == "pure_power"
    empty = verdict_report(None, law)
    assert empty["fitted"] is None and empty["verdict"] == VERDICT_INCONCLUSIVE
