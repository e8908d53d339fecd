import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpisim import (ApertureMask, ConfigError, MaskOverlapError, PreconditionError, SampledGrid,
                    Slit, SourceProfile, calibrate_source_na, derived_quantities,
                    load_scenario, make_slit_mask, paper_setup, parse_mask_spec)
from cpisim.core import dump_scenario, mask_spec, parse_scenario


# -- scenario ----------------------------------------------------------------


def test_paper_setup_values(cfg):
    assert cfg.wavelength == 532e-9
    assert cfg.z_a == 92e-3
    assert cfg.magnification == 1.0
    assert cfg.pixel_dx == 7.2e-6 and cfg.pixel_du == 72e-6
    assert cfg.focused_resolution == pytest.approx(14e-6, rel=0.01)


def test_resolution_identities(cfg):
    assert cfg.focused_resolution * cfg.source_na == pytest.approx(cfg.wavelength, rel=1e-15)
    assert cfg.dof_standard * cfg.source_na**2 == pytest.approx(cfg.wavelength, rel=1e-15)


def test_dof_standard_value():
    cfg = calibrate_source_na(paper_setup(), 14e-6)
    assert cfg.dof_standard == pytest.approx(0.37e-3, rel=0.01)


@pytest.mark.parametrize("key,value", [("wavelength", 0.0), ("z_a", -1.0), ("pixel_du", 0.0),
                                       ("magnification", 0.0), ("source_na", 1.0),
                                       ("na_b", 0.0), ("z_b", float("nan"))])
def test_invalid_config(cfg, key, value):
    with pytest.raises(ConfigError) as err:
        cfg.replace(**{key: value})
    assert key in str(err.value)


def test_calibrate_source_na(cfg):
    out = calibrate_source_na(cfg, 14e-6)
    assert out.source_na == pytest.approx(0.038, rel=1e-12)
    assert out.source_diameter == pytest.approx(3.50e-3, rel=0.01)
    assert out.source_diameter / out.source_sigma == pytest.approx(3.24, abs=0.01)
    with pytest.raises(ConfigError):
        calibrate_source_na(cfg, cfg.wavelength)  # NA = 1


def test_parse_round_trip(cfg):
    assert parse_scenario(dump_scenario(cfg)) == cfg


def test_parse_comments_and_blank_lines(cfg):
    text = "# setup\n\n" + dump_scenario(cfg).replace("\n", "  # trailing\n", 1)
    assert parse_scenario(text) == cfg


def test_parse_missing_key(cfg):
    text = "".join(line + "\n" for line in dump_scenario(cfg).splitlines()
                   if not line.startswith("z_b"))
    with pytest.raises(ConfigError) as err:
        parse_scenario(text, source="s.cfg")
    assert "z_b" in str(err.value)


def test_parse_reports_line(cfg):
    text = dump_scenario(cfg) + "z_c = 1\n"
    with pytest.raises(ConfigError) as err:
        parse_scenario(text)
    assert err.value.key == "z_c"
    assert err.value.line == len(dump_scenario(cfg).splitlines()) + 1


def test_parse_duplicate_and_bad_number(cfg):
    with pytest.raises(ConfigError, match="z_a"):
        parse_scenario(dump_scenario(cfg) + "z_a = 1\n")
    bad = dump_scenario(cfg).replace("z_b = 0.113", "z_b = far")
    with pytest.raises(ConfigError, match="z_b"):
        parse_scenario(bad)


def test_load_scenario(tmp_path, cfg):
    p = tmp_path / "s.cfg"
    p.write_text(dump_scenario(cfg))
    assert load_scenario(p) == cfg


# -- grids -------------------------------------------------------------------


def test_grid_basics():
    g = SampledGrid.centered(5, 0.5)
    np.testing.assert_allclose(g.points, [-1, -0.5, 0, 0.5, 1])
    assert g.extent == 2.0 and g.index_of(0.26) == 3 and g.index_of(9) == 4
    assert g.scaled(2).spacing == 1.0


def test_grid_invariants():
    with pytest.raises(ConfigError):
        SampledGrid(1, 1.0)
    with pytest.raises(ConfigError):
        SampledGrid(4, 0.0)
    with pytest.raises(PreconditionError):
        SampledGrid.centered(11, 0.1, support=(-1.0, 2.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1e-2), st.floats(1e-6, 1e-4))
def test_covering_covers(half, spacing):
    g = SampledGrid.covering(half, spacing)
    assert g.n % 2 == 1
    assert g.start <= -half * (1 - 1e-9) and g.stop >= half * (1 - 1e-9)
    assert abs(g.points[g.n // 2]) < 1e-12 * spacing + 1e-300


def test_source_profile_normalized():
    src = SourceProfile(1.08e-3)
    g = SampledGrid.covering(8e-3, 5e-6)
    assert np.sum(src.intensity_1d(g.points)) * g.spacing == pytest.approx(1.0, abs=1e-3)
    x = np.linspace(-8e-3, 8e-3, 801)
    h = x[1] - x[0]
    total = np.sum(src.intensity(x[:, None], x[None, :])) * h * h
    assert total >= 0.999
    np.testing.assert_allclose(src.amplitude_1d(g.points) ** 2, src.intensity_1d(g.points))


# -- masks -------------------------------------------------------------------


def test_measurement_b_mask(triple):
    assert triple.n_slits == 3
    assert triple.extent == pytest.approx(2 * 198e-6 + 99e-6)
    np.testing.assert_allclose(triple.centers, [-198e-6, 0, 198e-6], atol=1e-18)
    assert triple.pitch == pytest.approx(198e-6)


def test_single_and_double_masks():
    single = make_slit_mask(1, 14e-6, 14e-6)
    assert single.extent == pytest.approx(14e-6) and single.n_slits == 1
    double = make_slit_mask(2, 14e-6, 28e-6)
    assert double.extent == pytest.approx(42e-6)
    assert double.min_width == pytest.approx(14e-6)


def test_mask_errors():
    with pytest.raises(MaskOverlapError):
        make_slit_mask(2, 100e-6, 50e-6)
    with pytest.raises(ConfigError):
        make_slit_mask(0, 1e-6, 1e-6)
    with pytest.raises(ConfigError):
        make_slit_mask(1, -1e-6, 1e-6)
    with pytest.raises(ConfigError):
        Slit(0.0, 1e-6, 1.5)
    with pytest.raises(ConfigError):
        ApertureMask((Slit(0.0, 1e-6, 0.0),))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.floats(1e-6, 2e-4), st.floats(1.0, 4.0))
def test_mask_even_symmetry(n, a, ratio):
    mask = make_slit_mask(n, a, a * ratio)
    x = np.linspace(-mask.half_extent * 1.2, mask.half_extent * 1.2, 1001)
    np.testing.assert_array_equal(mask.transmission(x), mask.transmission(-x))
    assert mask.extent == pytest.approx((n - 1) * a * ratio + a, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.floats(5e-6, 1e-4), st.floats(1.0, 3.0), st.floats(0.3e-6, 3e-6))
def test_mask_sample_integrates_to_open_width(n, a, ratio, h):
    mask = make_slit_mask(n, a, a * ratio)
    g = SampledGrid.covering(mask.half_extent + 4 * h, h)
    total = np.sum(mask.sample(g)).real * h
    assert total == pytest.approx(n * a, rel=1e-9)
    assert total > 0


def test_mask_spec_round_trip(triple):
    assert parse_mask_spec(mask_spec(triple)) == triple
    assert parse_mask_spec("slits:n=2,a=14e-6") == make_slit_mask(2, 14e-6, 28e-6)
    with pytest.raises(ConfigError):
        parse_mask_spec("disk:r=1")
    with pytest.raises(ConfigError):
        parse_mask_spec("slits:n=2,w=1")
    with pytest.raises(ConfigError):
        parse_mask_spec("slits:n=2")


# -- derived quantities ------------------------------------------------------


def test_derived_quantities(cfg, triple):
    dq = derived_quantities(cfg, triple)
    assert dq.diffraction_term == pytest.approx(607e-6, rel=0.01)
    assert dq.angular_resolution == dq.diffraction_term
    focused = derived_quantities(cfg.replace(z_b=cfg.z_a), triple)
    assert focused.projected_resolution == pytest.approx(triple.pitch)


def test_angular_resolution_monotone(cfg, triple):
    zs = np.linspace(60e-3, 300e-3, 50)
    du = [derived_quantities(cfg.replace(z_b=z), triple).angular_resolution for z in zs]
    assert np.all(np.diff(du) >= 0)


def test_focused_resolution_finite(cfg):
    assert math.isfinite(cfg.focused_resolution) and cfg.focused_resolution > 0
