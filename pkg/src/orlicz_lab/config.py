"""Experiment configuration: flat INI sections with field-level validation.

Every key is optional; missing keys take the defaults below.  Numbers
accept fractions such as ``1/64``; lists are comma separated.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "validate",
           "STAGES"]

STAGES = ("nfunc-check", "minimize", "excess-scan", "decay", "truncate-demo",
          "aharmonic-check")
PHI_KINDS = ("power", "power_log", "quadratic")
INTEGRAND_KINDS = ("radial", "perturbed")
BOUNDARY_TAGS = ("perturbed-affine", "affine", "harmonic-poly", "custom-coefficients", "kink")
U64 = 1 << 64


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending ``section.key``."""


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "run"
    phi_kind: str = "power"
    phi_p: float = 2.0
    phi_suite: str = "acceptance"
    samples: int = 10_000
    pairs: int = 10_000
    integrand_kind: str = "radial"
    integrand_p: float = 2.0
    eps: float = 0.0
    L: float = 1.0
    h: float = 1 / 32
    refine: tuple = (1 / 16, 1 / 32, 1 / 64)
    probe_h: float = 1 / 64
    boundary_tag: str = "perturbed-affine"
    coeffs: tuple = ()
    amp: float = 0.01
    profile: str = "sine"
    center: tuple = (0.0, 0.0)
    radii: tuple = (0.4, 0.2, 0.1, 0.05)
    grid_step: float = 0.1
    scan_radii: tuple = (0.25, 0.125, 0.0625)
    beta: float = 0.5
    delta: tuple = (0.03,)
    s: float = 1.0
    s0: float = 1.25
    min_slope: float | None = None
    max_defect: float = 0.1
    gamma: str | float = "auto"
    m0: tuple = (4, 8, 16)
    psi_p: tuple = (1.5, 2.0, 3.0)
    pigeonhole_cap: float = 10.0
    sources: list = field(default_factory=list)

    @property
    def slope_threshold(self):
        return 2 * self.beta - 0.2 if self.min_slope is None else self.min_slope

    def as_dict(self):
        d = asdict(self)
        d.pop("sources")
        return d


def _num(text):
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None


def _int(text):
    v = _num(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _nums(text):
    return tuple(_num(t) for t in text.split(",") if t.strip())


def _ints(text):
    return tuple(_int(t) for t in text.split(",") if t.strip())


def _str(text):
    return text.strip()


def _gamma(text):
    t = text.strip()
    return t if t == "auto" else _num(t)


def _opt_num(text):
    t = text.strip()
    return None if t in ("", "auto") else _num(t)


# section -> key -> (attribute, parser)
SCHEMA = {
    "run": {"seed": ("seed", _int), "out": ("out", _str)},
    "phi": {"kind": ("phi_kind", _str), "p": ("phi_p", _num), "suite": ("phi_suite", _str),
            "samples": ("samples", _int), "pairs": ("pairs", _int)},
    "integrand": {"kind": ("integrand_kind", _str), "p": ("integrand_p", _num),
                  "eps": ("eps", _num)},
    "mesh": {"L": ("L", _num), "h": ("h", _num), "refine": ("refine", _nums),
             "probe_h": ("probe_h", _num)},
    "boundary": {"tag": ("boundary_tag", _str), "coeffs": ("coeffs", _nums),
                 "amp": ("amp", _num), "profile": ("profile", _str)},
    "balls": {"center": ("center", _nums), "radii": ("radii", _nums),
              "grid_step": ("grid_step", _num), "scan_radii": ("scan_radii", _nums)},
    "excess": {"beta": ("beta", _num), "delta": ("delta", _nums), "s": ("s", _num),
               "s0": ("s0", _num), "min_slope": ("min_slope", _opt_num),
               "max_defect": ("max_defect", _num)},
    "truncation": {"gamma": ("gamma", _gamma), "m0": ("m0", _ints), "psi_p": ("psi_p", _nums),
                   "pigeonhole_cap": ("pigeonhole_cap", _num)},
}


def _fail(key, msg):
    raise ConfigError(f"{key}: {msg}")


def _validate(c):
    if c.phi_kind not in PHI_KINDS:
        _fail("phi.kind", f"must be one of {', '.join(PHI_KINDS)}")
    if not c.phi_p > 1:
        _fail("phi.p", f"exponent {c.phi_p} must exceed 1")
    if c.phi_suite not in ("acceptance", "primary"):
        _fail("phi.suite", "must be 'acceptance' or 'primary'")
    for key, v in (("phi.samples", c.samples), ("phi.pairs", c.pairs)):
        if v < 10:
            _fail(key, "needs at least 10 samples")
    if c.integrand_kind not in INTEGRAND_KINDS:
        _fail("integrand.kind", f"must be one of {', '.join(INTEGRAND_KINDS)}")
    if not c.integrand_p > 1:
        _fail("integrand.p", f"exponent {c.integrand_p} must exceed 1")
    if not 0 <= c.eps <= 0.5:
        _fail("integrand.eps", f"{c.eps} outside [0, 0.5]")
    if not c.L > 0:
        _fail("mesh.L", "must be positive")
    if not c.h > 0:
        _fail("mesh.h", "must be positive")
    if c.h > c.L:
        _fail("mesh.h", f"h={c.h:g} exceeds the half-width L={c.L:g}")
    for key, hs in (("mesh.refine", c.refine), ("mesh.probe_h", (c.probe_h,))):
        if not hs or any(not 0 < h <= c.L for h in hs):
            _fail(key, f"mesh sizes must lie in (0, L={c.L:g}]")
    if len(c.refine) < 2 or any(b >= a for a, b in zip(c.refine, c.refine[1:])):
        _fail("mesh.refine", "needs at least two strictly decreasing sizes")
    if c.boundary_tag not in BOUNDARY_TAGS:
        _fail("boundary.tag", f"must be one of {', '.join(BOUNDARY_TAGS)}")
    if c.boundary_tag == "affine" and len(c.coeffs) not in (0, 4):
        _fail("boundary.coeffs", "affine data needs 4 entries")
    if c.boundary_tag == "custom-coefficients" and len(c.coeffs) != 12:
        _fail("boundary.coeffs", "custom-coefficients needs 12 entries")
    if c.profile not in ("sine", "poly"):
        _fail("boundary.profile", "must be 'sine' or 'poly'")
    if not c.amp >= 0:
        _fail("boundary.amp", "must be non-negative")
    if len(c.center) != 2:
        _fail("balls.center", "needs two coordinates")
    for key, radii in (("balls.radii", c.radii), ("balls.scan_radii", c.scan_radii)):
        if not radii or any(r <= 0 for r in radii):
            _fail(key, "radii must be positive")
        if any(b >= a for a, b in zip(radii, radii[1:])):
            _fail(key, "radii must be strictly decreasing")
    reach = max(abs(c.center[0]), abs(c.center[1])) + 2 * c.radii[0]
    if reach > c.L:
        _fail("balls.radii", f"doubled ball of radius {c.radii[0]:g} leaves the domain")
    if 2 * c.scan_radii[0] > c.L:
        _fail("balls.scan_radii", "doubled largest scan ball leaves the domain")
    if not c.grid_step > 0:
        _fail("balls.grid_step", "must be positive")
    if not 0 < c.beta < 1:
        _fail("excess.beta", "must lie in (0, 1)")
    if not c.delta or any(d <= 0 for d in c.delta):
        _fail("excess.delta", "must be positive")
    if c.s < 1:
        _fail("excess.s", "must be at least 1")
    if not c.s0 > 1:
        _fail("excess.s0", "must exceed 1")
    if not c.max_defect > 0:
        _fail("excess.max_defect", "must be positive")
    if c.gamma != "auto" and not c.gamma > 0:
        _fail("truncation.gamma", "must be 'auto' or positive")
    if not c.m0 or any(m < 1 for m in c.m0):
        _fail("truncation.m0", "levels must be at least 1")
    if not c.psi_p or any(p <= 1 for p in c.psi_p):
        _fail("truncation.psi_p", "exponents must exceed 1")
    if not 0 <= c.seed < U64:
        _fail("run.seed", "must be an unsigned 64-bit integer")


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = ExperimentConfig(sources=[source])
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{section}: unknown section")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            attr, conv = SCHEMA[section][key]
            try:
                setattr(cfg, attr, conv(raw))
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
    _validate(cfg)
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def validate(cfg):
    """Re-check a config after programmatic edits (e.g. a ``--seed`` override)."""
    _validate(cfg)
    return cfg
