import os
import sys
import textwrap

import pytest

# Ensure the repository's src/ is importable
sys.path.insert(0, os.path.abspath("src"))

from semires.errors import ConfigError
from semires.experiments.settings import load_config, parse_config, validate


def _cfg(text, path=None):
    return parse_config(textwrap.dedent(text).lstrip(), path)


SWEEP = """
schema_version = 1
kind = "sweep"
seed = 7

[potential]
family = "degenerate_bump"
params = { m = 2 }

[sweep]
h_list = [0.1, 0.05, 0.025, 0.0125]
"""


def test_parse_top_level_and_sections():
    cfg = _cfg(SWEEP)
    assert cfg.kind == "sweep"
    assert cfg.seed == 7
    assert cfg.warp_spec().param("m") == 2.0
    assert cfg.sweep_h_list() == [0.1, 0.05, 0.025, 0.0125]
    assert cfg.solver_options()["seed"] == 7
    assert validate(cfg) == []


def test_invalid_toml_is_a_config_error():
    with pytest.raises(ConfigError):
        parse_config("kind = ", "broken.toml")


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "nope.toml"))


def test_increasing_h_list_is_reported_with_its_line():
    cfg = _cfg(SWEEP.replace("[0.1, 0.05, 0.025, 0.0125]", "[0.05, 0.1]"))
    diags = validate(cfg)
    assert len(diags) == 1
    d = diags[0]
    assert d.field == "sweep.h_list"
    assert "decreasing" in d.message
    assert d.line == 10
    assert d.format("sweep.toml").startswith("sweep.toml:10: sweep.h_list:")


def test_unknown_kind_stops_validation():
    diags = validate(_cfg('schema_version = 1\nkind = "torus"\n'))
    assert [d.field for d in diags] == ["kind"]
    assert diags[0].line == 2


def test_unknown_sections_and_keys():
    cfg = _cfg(SWEEP + "\n[plotting]\ncolor = 1\n")
    cfg2 = _cfg(SWEEP.replace("[sweep]", "[sweep]\nspeed = 3"))
    assert any(d.field == "plotting" and "unknown section" in d.message for d in validate(cfg))
    assert any(d.field == "sweep.speed" for d in validate(cfg2))


def test_wrong_schema_version():
    diags = validate(_cfg(SWEEP.replace("schema_version = 1", "schema_version = 2")))
    assert any(d.field == "schema_version" for d in diags)


def test_cutoff_overlapping_absorber_names_both_blocks():
    cfg = _cfg(SWEEP + "\n[cutoff]\ninner_radius = 4.0\n\n[cap]\nhalf_width = 3.0\n")
    diags = validate(cfg)
    assert len(diags) == 1
    msg = diags[0].message
    assert "[cutoff]" in msg and "[cap]" in msg


def test_cap_half_width_alone_is_fine():
    assert validate(_cfg(SWEEP + "\n[cap]\nhalf_width = 6.0\n")) == []


def test_h_points_override_respaces_the_range():
    cfg = _cfg(SWEEP).with_overrides(h_points=3)
    assert cfg.sweep_h_list() == pytest.approx([0.1, 0.1 / 8 ** 0.5, 0.0125])


def test_h_range_without_list():
    cfg = _cfg(SWEEP.replace("h_list = [0.1, 0.05, 0.025, 0.0125]", "h_max = 0.2\nh_min = 0.02\nh_points = 2"))
    assert cfg.sweep_h_list() == pytest.approx([0.2, 0.02])


def test_bad_family_and_params():
    diags = validate(_cfg(SWEEP.replace('"degenerate_bump"', '"torus"')))
    assert any(d.field.startswith("potential") for d in diags)
    diags = validate(_cfg(SWEEP.replace("{ m = 2 }", '{ m = "two" }')))
    assert any(d.field == "potential.params" for d in diags)


def test_raw_potential_requires_matching_columns():
    text = """
    schema_version = 1
    kind = "classify"

    [potential]
    family = "raw_potential"
    x = [0.0, 1.0, 2.0]
    v0 = [1.0, 0.5]
    """
    diags = validate(_cfg(text))
    assert [d.field for d in diags] == ["potential.v0"]


def test_gevrey_needs_tau_once():
    text = """
    schema_version = 1
    kind = "gevrey"

    [potential]
    family = "gevrey_flat"

    [gevrey]
    sample_xs = [0.3, 0.2, 0.1]
    """
    diags = validate(_cfg(text))
    assert [d.field for d in diags] == ["potential.tau"]


def test_gevrey_sample_range():
    text = """
    schema_version = 1
    kind = "gevrey"

    [potential]
    family = "gevrey_flat"
    tau = 3.0

    [gevrey]
    sample_range = [0.1, 0.3, 5]
    """
    opts = _cfg(text).gevrey_options()
    assert opts["sample_xs"] == pytest.approx([0.1, 0.15, 0.2, 0.25, 0.3])
    assert opts["k_max"] == 4


def test_billiard_needs_no_potential_but_checks_wings():
    text = """
    schema_version = 1
    kind = "billiard"

    [billiard]
    a = 1.0
    k_list = [4, 8, 12, 16]
    left = { kind = "power", q = 0.5 }
    """
    diags = validate(_cfg(text))
    assert [d.field for d in diags] == ["billiard.left"]
    ok = validate(_cfg(text.replace("q = 0.5", "q = 2.0")))
    assert ok == []


def test_billiard_defaults():
    cfg = _cfg('schema_version = 1\nkind = "billiard"\n[billiard]\na = 2.0\n')
    opts = cfg.billiard_options()
    assert opts["k_list"] == [8, 16, 24, 32, 40, 48, 56, 64]
    assert opts["bc"] == "dirichlet"
    assert opts["left"] == opts["right"]
    assert opts["regimes"] is True and opts["control"] is False


def test_output_dir_is_relative_to_the_config(tmp_path):
    path = tmp_path / "exp" / "run.toml"
    path.parent.mkdir()
    path.write_text(SWEEP + '\n[output]\ndir = "out"\n', encoding="utf-8")
    cfg = load_config(str(path))
    assert cfg.output_directory() == str(tmp_path / "exp" / "out")
    assert cfg.with_overrides(output_dir="/elsewhere").output_directory() == "/elsewhere"


@pytest.mark.parametrize("name", sorted(os.listdir(os.path.join(os.path.dirname(__file__), "..", "configs"))))
def test_shipped_configs_validate(name):
    path = os.path.join(os.path.dirname(__file__), "..", "configs", name)
    cfg = load_config(path)
    assert cfg.kind == os.path.splitext(name)[0]
    assert validate(cfg) == []
