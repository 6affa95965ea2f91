import os
import sys

import numpy as np
import pytest

# Ensure the repository's src/ is importable
sys.path.insert(0, os.path.abspath("src"))

from semires.domain.warp import (
    DomainError,
    RawTable,
    WarpSpec,
    check_gevrey,
    effective_potential,
    full_potential,
    mode_parameters,
    profile_from_samples,
    short_range_advisory,
)
from semires.errors import ConfigError
from semires.numerics.discretize import Grid


def _poly(n=2, tau=None, **coeffs):
    return WarpSpec.make("polynomial", coeffs, n=n, tau=tau)


def test_constant_warp_gives_unit_potential_and_zero_v1():
    for n in (2, 3, 5):
        prof = effective_potential(_poly(n=n, c0=1.0), Grid.symmetric(3.0, 31))
        assert np.allclose(prof.v0, 1.0)
        assert np.allclose(prof.v1, 0.0)
        assert np.allclose(prof.v0p, 0.0)


def test_v1_reduces_to_a_second_over_a_in_dimension_three():
    grid = Grid.symmetric(2.0, 41)
    prof = effective_potential(_poly(n=3, c0=1.0, c2=1.0), grid)
    x = grid.points()
    assert np.allclose(prof.v1, 2.0 / (1.0 + x**2), rtol=1e-12)


def test_one_plus_x_squared_in_two_dimensions_at_origin():
    grid = Grid.symmetric(1.0, 21)
    prof = effective_potential(_poly(n=2, c0=1.0, c2=1.0), grid)
    i = grid.index_of(0.0)
    assert prof.v0[i] == pytest.approx(1.0)
    assert prof.v1[i] == pytest.approx(1.0)


def test_closed_form_derivatives_match_central_differences():
    spec = WarpSpec.make("degenerate_bump", {"m": 2})
    grid = Grid(0.5, 2.0, 15001)
    prof = effective_potential(spec, grid)
    d = grid.delta
    fd1 = (prof.v0[2:] - prof.v0[:-2]) / (2 * d)
    fd2 = (prof.v0[2:] - 2 * prof.v0[1:-1] + prof.v0[:-2]) / d**2
    assert np.allclose(prof.v0p[1:-1], fd1, rtol=1e-6, atol=1e-9)
    assert np.allclose(prof.v0pp[1:-1], fd2, rtol=1e-5, atol=1e-6)


def test_nonpositive_warp_is_a_domain_error():
    with pytest.raises(DomainError):
        effective_potential(_poly(c0=-1.0), Grid.symmetric(1.0, 21))


def test_raw_potential_requires_a_table():
    with pytest.raises(ConfigError):
        WarpSpec(family="raw_potential")


def test_raw_potential_interpolates_table_and_defaults_v1_to_zero():
    xs = np.linspace(-5, 5, 201)
    spec = WarpSpec(family="raw_potential", table=RawTable(x=tuple(xs), v0=tuple(1.0 / (1.0 + xs**2))))
    grid = Grid.symmetric(4.0, 161)
    prof = effective_potential(spec, grid)
    assert np.allclose(prof.v0, 1.0 / (1.0 + grid.points() ** 2), atol=1e-5)
    assert np.all(prof.v1 == 0.0)
    assert not prof.exact_derivatives


def test_unknown_family_rejected():
    with pytest.raises(ConfigError):
        WarpSpec.make("torus")


@pytest.mark.parametrize("lam,h", [(1.0, 1.0), (100.0, 0.01), (np.pi / 2, 2 / np.pi)])
def test_mode_parameters(lam, h):
    assert mode_parameters(lam) == pytest.approx(h)


def test_mode_parameters_rejects_nonpositive():
    with pytest.raises(DomainError):
        mode_parameters(0.0)


def test_full_potential_adds_h_squared_v1():
    grid = Grid.symmetric(1.0, 17)
    prof = profile_from_samples(grid, np.ones(17), 2.0 * np.ones(17))
    assert np.allclose(full_potential(prof, 0.1), 1.02)
    zero = profile_from_samples(grid, np.ones(17))
    assert np.allclose(full_potential(zero, 0.5), 1.0)


def test_full_potential_is_monotone_in_h_where_v1_nonnegative():
    spec = _poly(n=3, c0=1.0, c2=1.0)
    prof = effective_potential(spec, Grid.symmetric(2.0, 41))
    assert np.all(prof.v1 >= 0)
    assert np.all(full_potential(prof, 0.2) >= full_potential(prof, 0.1))


def test_profile_csv_export(tmp_path):
    prof = effective_potential(WarpSpec.make("degenerate_bump"), Grid.symmetric(2.0, 21))
    path = prof.to_csv(str(tmp_path / "profile.csv"))
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "x,v0,v1,v0p,v0pp"
    assert len(lines) == 22


def test_short_range_advisory_accepts_asymptotically_euclidean_family():
    assert short_range_advisory(WarpSpec.make("degenerate_bump", {"m": 2}))
    assert short_range_advisory(WarpSpec.make("constant_plus_bump", {"amp": 0.5}))


def test_cylinder_plateau_is_flat_then_decreasing():
    spec = WarpSpec.make("cylinder_plateau")
    g = Grid.symmetric(6.0, 1201)
    x = g.points()
    p = effective_potential(spec, g)
    flat = np.abs(x) <= 1.0
    assert np.all(p.v0[flat] == 1.0)
    assert np.all(p.v0p[flat] == 0.0)
    assert np.all(np.diff(p.v0[x >= 1.2]) < 0)
    assert np.all(p.v0 <= 1.0)
    assert np.allclose(p.v0, p.v0[::-1])
    assert short_range_advisory(spec)
    with pytest.raises(ConfigError):
        effective_potential(WarpSpec.make("cylinder_plateau", {"w": 0.0}), g)


def test_gevrey_polynomial_passes_with_tau_one():
    spec = _poly(tau=1.0, c0=1.0, c2=1.0)
    rep = check_gevrey(spec, 0.0, 4, np.geomspace(0.5, 0.01, 12))
    assert rep.passes
    assert rep.worst_ratio <= 10.0


def test_gevrey_flat_passes_at_p_plus_one_and_fails_below():
    xs = np.geomspace(0.3, 0.1, 12)
    good = check_gevrey(WarpSpec.make("gevrey_flat", {"p": 2}, tau=3.0), 0.0, 4, xs)
    bad = check_gevrey(WarpSpec.make("gevrey_flat", {"p": 2}, tau=1.5), 0.0, 4, xs)
    assert good.passes
    assert not bad.passes
    assert bad.worst_ratio > good.worst_ratio


def test_gevrey_requires_tau():
    with pytest.raises(ConfigError):
        check_gevrey(WarpSpec.make("gevrey_flat"), 0.0, 4, [0.3, 0.2, 0.1])
