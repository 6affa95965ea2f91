import os
import sys

import numpy as np
import pytest

# Ensure the repository's src/ is importable
sys.path.insert(0, os.path.abspath("src"))

from semires.domain.constants import KIND_NONDEGENERATE_MAX, VERDICT_CONSISTENT
from semires.domain.trapping import CriticalComponent
from semires.domain.warp import WarpSpec, effective_potential, profile_from_samples
from semires.experiments.gluing import (
    GluingError,
    PropagationCase,
    glued_vs_local,
    propagation_inequality_check,
    random_cases,
    surgery_potential,
    surgery_windows,
)
from semires.numerics.discretize import Grid


def test_constant_function_satisfies_the_estimate():
    case = PropagationCase(a=0.0, b=1.0, K=2.0, h=0.1, amplitudes=np.array([1.0]), frequencies=np.array([0.0]))
    out = propagation_inequality_check(case)
    assert out["lhs"] == pytest.approx(1.0)
    assert out["rhs"] == pytest.approx(np.sqrt(2.0))
    assert out["holds"]


def test_random_family_always_holds():
    cases = random_cases(200)
    assert len(cases) == 200
    assert all(propagation_inequality_check(c)["holds"] for c in cases)


def test_random_family_is_reproducible():
    a, b = random_cases(5, seed=3), random_cases(5, seed=3)
    assert [(c.a, c.b, c.K, c.h) for c in a] == [(c.a, c.b, c.K, c.h) for c in b]
    assert all(np.array_equal(x.frequencies, y.frequencies) for x, y in zip(a, b))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(a=1.0, b=0.0, K=1.0, h=0.1),
        dict(a=0.0, b=1.0, K=0.0, h=0.1),
        dict(a=0.0, b=1.0, K=1.0, h=-0.1),
    ],
)
def test_propagation_case_validation(kwargs):
    with pytest.raises(GluingError):
        PropagationCase(amplitudes=np.array([1.0]), frequencies=np.array([0.0]), **kwargs)


def test_mismatched_synthesis_arrays_rejected():
    with pytest.raises(GluingError):
        PropagationCase(a=0.0, b=1.0, K=1.0, h=0.1, amplitudes=np.ones(2), frequencies=np.zeros(3))


def _point(x):
    return CriticalComponent(x_left=x, x_right=x, critical_value=1.0, kind=KIND_NONDEGENERATE_MAX, order=1)


def test_surgery_windows_and_overlap():
    assert surgery_windows([_point(-3.0), _point(3.0)]) == [(-4.0, -2.0), (2.0, 4.0)]
    with pytest.raises(GluingError):
        surgery_windows([_point(0.0), _point(1.5)])


def test_surgery_potential_keeps_window_and_decays_outside():
    x = np.linspace(-6, 6, 1201)
    V = 1.0 / (1.0 + x**2)
    out = surgery_potential(x, V, (-1.0, 1.0))
    inside = np.abs(x) <= 1.0
    assert np.array_equal(out[inside], V[inside])
    right = out[x >= 1.0]
    assert np.all(np.diff(right) <= 0)
    assert np.all(right > 0)
    assert np.allclose(out, out[::-1], atol=1e-9)
    with pytest.raises(GluingError):
        surgery_potential(x, V, (-7.0, 1.0))


def test_surgery_tail_decays_from_rising_edge():
    x = np.linspace(-8, 8, 1601)
    V = 1.0 / (1.0 + x**2)
    # left edge at x = 1 rises towards the bump, the right edge at 3 falls
    out = surgery_potential(x, V, (1.0, 3.0))
    left = out[x <= 1.0]
    edge = float(V[np.argmin(np.abs(x - 1.0))])
    assert np.all(np.diff(left) >= 0)
    assert np.all(left <= edge + 1e-12)
    assert left[0] < 1e-3 * edge
    right = out[x >= 3.0]
    assert np.all(np.diff(right) <= 0)


def test_surgery_tail_decays_from_flat_edge():
    x = np.linspace(-8, 8, 1601)
    V = 1.0 / (1.0 + x**2)
    out = surgery_potential(x, V, (0.0, 2.0))
    left = out[x <= 0.0]
    assert np.all(np.diff(left) >= 0)
    assert left[-1] == pytest.approx(1.0)
    assert np.all(left <= 1.0 + 1e-12)


def test_single_component_glues_to_itself():
    prof = effective_potential(WarpSpec.make("degenerate_bump", {"m": 1}), Grid.symmetric(12.0, 4001))
    rep = glued_vs_local(prof, 0.1, threads=1)
    assert len(rep.local_samples) == 1
    assert rep.energies == (pytest.approx(1.0),)
    assert rep.dominant == 0
    assert rep.verdict == VERDICT_CONSISTENT
    d = rep.to_dict()
    assert d["verdict"] == VERDICT_CONSISTENT
    assert len(d["local"]) == 1


def test_local_minimum_cannot_be_glued():
    g = Grid.symmetric(10.0, 4001)
    x = g.points()
    prof = profile_from_samples(g, 1.0 + x**2 * np.exp(-(x**2) / 8.0))
    with pytest.raises(GluingError):
        glued_vs_local(prof, 0.1)
