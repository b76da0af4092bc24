from pathlib import Path

import pytest

from orlicz_lab.config import (STAGES, ConfigError, ExperimentConfig, load_config, parse_config,
                               validate)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults():
    cfg = parse_config("")
    assert cfg.h == 1 / 32 and cfg.radii == (0.4, 0.2, 0.1, 0.05)
    assert cfg.slope_threshold == pytest.approx(0.8)
    assert cfg.gamma == "auto" and cfg.m0 == (4, 8, 16)
    assert "sources" not in cfg.as_dict()


def test_fraction_and_lists():
    cfg = parse_config("[mesh]\nh = 1/64\nrefine = 1/8, 1/16,1/32\n[balls]\ncenter = 0.1, -0.1\n"
                       "[truncation]\ngamma = 0.5\nm0 = 2, 4\n[excess]\nmin_slope = 0.6\n")
    assert cfg.h == 1 / 64 and cfg.refine == (1 / 8, 1 / 16, 1 / 32)
    assert cfg.center == (0.1, -0.1) and cfg.gamma == 0.5 and cfg.m0 == (2, 4)
    assert cfg.slope_threshold == 0.6


def test_case_sensitive_keys():
    assert parse_config("[mesh]\nL = 2\nh = 1/8\n[balls]\nradii=0.8\n").L == 2.0


@pytest.mark.parametrize("text,key", [
    ("[mesh]\nh = 2\n", "mesh.h"),
    ("[mesh]\nh = 0\n", "mesh.h"),
    ("[mesh]\nh = abc\n", "mesh.h"),
    ("[mesh]\nrefine = 1/8\n", "mesh.refine"),
    ("[mesh]\nrefine = 1/16, 1/8\n", "mesh.refine"),
    ("[mesh]\nsize = 1\n", "mesh.size"),
    ("[grid]\nh = 1\n", "grid"),
    ("[phi]\nkind = exp\n", "phi.kind"),
    ("[phi]\np = 1\n", "phi.p"),
    ("[phi]\nsamples = 3\n", "phi.samples"),
    ("[phi]\nsamples = 2.5\n", "phi.samples"),
    ("[integrand]\neps = 0.7\n", "integrand.eps"),
    ("[integrand]\nkind = swirl\n", "integrand.kind"),
    ("[boundary]\ntag = spline\n", "boundary.tag"),
    ("[boundary]\ntag = custom-coefficients\ncoeffs = 1, 2\n", "boundary.coeffs"),
    ("[boundary]\nprofile = cos\n", "boundary.profile"),
    ("[balls]\nradii = 0.1, 0.2\n", "balls.radii"),
    ("[balls]\nradii = 0.6\n", "balls.radii"),
    ("[balls]\ncenter = 0\n", "balls.center"),
    ("[excess]\nbeta = 1\n", "excess.beta"),
    ("[excess]\ns0 = 1\n", "excess.s0"),
    ("[truncation]\ngamma = -1\n", "truncation.gamma"),
    ("[truncation]\nm0 = 0\n", "truncation.m0"),
    ("[run]\nseed = -1\n", "run.seed"),
])
def test_field_level_errors(text, key):
    with pytest.raises(ConfigError, match=rf"^{key}\b"):
        parse_config(text)


def test_h_exceeds_l_message():
    with pytest.raises(ConfigError, match="mesh.h: h=2 exceeds the half-width L=1"):
        parse_config("[mesh]\nh = 2\n")


def test_malformed_ini():
    with pytest.raises(ConfigError):
        parse_config("h = 1\n")


def test_load_missing(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.ini")


def test_validate_after_edit():
    cfg = parse_config("")
    cfg.seed = 1 << 64
    with pytest.raises(ConfigError, match="run.seed"):
        validate(cfg)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert isinstance(cfg, ExperimentConfig) and cfg.sources == [str(path)]


def test_stage_names():
    assert STAGES == ("nfunc-check", "minimize", "excess-scan", "decay", "truncate-demo",
                      "aharmonic-check")
