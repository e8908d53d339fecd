"""
Optical scenario, source, object masks and sampling grids.

Everything here is immutable and cheap to construct; the heavier modules
(:mod:`cpisim.engine`, :mod:`cpisim.speckle`, :mod:`cpisim.analysis`) take
these objects as plain inputs.

Coordinates are one dimensional unless stated otherwise. All lengths are SI
metres.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, MaskOverlapError, PreconditionError

__all__ = [
    "ScenarioConfig",
    "SampledGrid",
    "SourceProfile",
    "Slit",
    "ApertureMask",
    "DerivedSet",
    "make_slit_mask",
    "derived_quantities",
    "calibrate_source_na",
    "parse_scenario",
    "load_scenario",
    "dump_scenario",
    "paper_setup",
    "parse_mask_spec",
    "mask_spec",
]


def _positive(name, value):
    if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value) and value > 0):
        raise ConfigError(f"must be a finite positive number, got {value!r}", key=name)


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Optical geometry of a correlation plenoptic imaging setup.

    Parameters
    ----------
    wavelength : float
        Central wavelength [m].
    source_sigma : float
        Width of the Gaussian source intensity profile [m].
    z_a : float
        Source to ghost-image plane (spatial sensor) distance [m].
    z_b : float
        Source to object distance [m].
    magnification : float
        Magnification of the source image on the angular sensor.
    na_b : float
        Numerical aperture of the lens imaging the source on the angular
        sensor.
    source_na : float
        Effective numerical aperture of the source seen from the ghost plane.
        Calibrated separately from ``source_sigma``.
    pixel_dx, pixel_du : float
        Pixel pitch of the spatial and the angular sensor [m].
    lens_focal : float
        Focal length of the angular-arm lens [m].
    """

    wavelength: float
    source_sigma: float
    z_a: float
    z_b: float
    magnification: float
    na_b: float
    source_na: float
    pixel_dx: float
    pixel_du: float
    lens_focal: float = 0.3

    def __post_init__(self):
        for name in ("wavelength", "source_sigma", "z_a", "z_b", "na_b",
                     "pixel_dx", "pixel_du", "lens_focal"):
            _positive(name, getattr(self, name))
        m = self.magnification
        if not (math.isfinite(m) and m != 0):
            raise ConfigError(f"must be finite and non-zero, got {m!r}", key="magnification")
        if not (0 < self.source_na < 1):
            raise ConfigError(f"must lie in (0, 1), got {self.source_na!r}", key="source_na")
        if not (0 < self.na_b < 1):
            raise ConfigError(f"must lie in (0, 1), got {self.na_b!r}", key="na_b")

    @property
    def k(self) -> float:
        """Wavenumber omega/c = 2 pi / lambda [1/m]."""
        return 2.0 * math.pi / self.wavelength

    @property
    def alpha(self) -> float:
        """Object-to-ghost-plane distance ratio z_b / z_a."""
        return self.z_b / self.z_a

    @property
    def focused_resolution(self) -> float:
        """Diffraction-limited resolution of the focused image, lambda / NA."""
        return self.wavelength / self.source_na

    @property
    def dof_standard(self) -> float:
        """Standard depth of field lambda / NA^2."""
        return self.wavelength / self.source_na**2

    @property
    def source_diameter(self) -> float:
        """Effective source diameter D_s = NA * z_a."""
        return self.source_na * self.z_a

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# Grids and source
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampledGrid:
    """
    Uniform 1D sampling grid ``origin + spacing * arange(n)``.

    ``support`` optionally declares an interval the grid must cover; it is
    checked at construction.
    """

    n: int
    spacing: float
    origin: float = 0.0
    support: tuple[float, float] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError(f"grid needs at least 2 points, got {self.n!r}", key="n")
        _positive("spacing", self.spacing)
        if not math.isfinite(self.origin):
            raise ConfigError("origin must be finite", key="origin")
        if self.support is not None:
            lo, hi = self.support
            if lo < self.start - 1e-12 * self.extent or hi > self.stop + 1e-12 * self.extent:
                raise PreconditionError(
                    f"grid [{self.start:.6g}, {self.stop:.6g}] does not cover the declared "
                    f"support [{lo:.6g}, {hi:.6g}]"
                )

    @classmethod
    def centered(cls, n: int, spacing: float, support=None) -> "SampledGrid":
        return cls(int(n), float(spacing), -(int(n) - 1) / 2.0 * spacing, support)

    @classmethod
    def covering(cls, half_width: float, spacing: float) -> "SampledGrid":
        """Smallest odd-sized centered grid with the given spacing covering +-half_width."""
        half = int(math.ceil(half_width / spacing - 1e-9))
        return cls.centered(2 * max(half, 1) + 1, spacing)

    @property
    def start(self) -> float:
        return self.origin

    @property
    def stop(self) -> float:
        return self.origin + (self.n - 1) * self.spacing

    @property
    def extent(self) -> float:
        return (self.n - 1) * self.spacing

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n)

    def scaled(self, factor: float) -> "SampledGrid":
        """Same samples with every coordinate multiplied by ``factor`` > 0."""
        return SampledGrid(self.n, self.spacing * factor, self.origin * factor)

    def index_of(self, x: float) -> int:
        """Index of the sample nearest to ``x`` (clipped to the grid)."""
        i = int(round((x - self.origin) / self.spacing))
        return min(max(i, 0), self.n - 1)

    def as_dict(self) -> dict:
        return {"n": int(self.n), "spacing": float(self.spacing), "origin": float(self.origin)}


@dataclass(frozen=True)
class SourceProfile:
    """Gaussian source intensity profile F = exp(-r^2 / 2 sigma^2) / (2 pi sigma^2)."""

    sigma: float
    kind: str = "gaussian"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        if self.kind != "gaussian":
            raise ConfigError(f"unsupported source kind {self.kind!r}", key="kind")

    def intensity(self, x, y=0.0):
        """Two-dimensional, unit-integral intensity F(x, y)."""
        r2 = np.asarray(x) ** 2 + np.asarray(y) ** 2
        return np.exp(-r2 / (2 * self.sigma**2)) / (2 * math.pi * self.sigma**2)

    def intensity_1d(self, x):
        """Marginal of :meth:`intensity` over y."""
        x = np.asarray(x)
        return np.exp(-(x**2) / (2 * self.sigma**2)) / (math.sqrt(2 * math.pi) * self.sigma)

    def amplitude_1d(self, x):
        return np.sqrt(self.intensity_1d(x))


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slit:
    center: float
    width: float
    transmission: complex = 1.0

    def __post_init__(self):
        _positive("width", self.width)
        if not math.isfinite(self.center):
            raise ConfigError("slit center must be finite", key="center")
        if abs(self.transmission) > 1 + 1e-12:
            raise ConfigError(
                f"|transmission| must be <= 1, got {abs(self.transmission):.6g}", key="transmission"
            )

    @property
    def left(self) -> float:
        return self.center - self.width / 2

    @property
    def right(self) -> float:
        return self.center + self.width / 2


@dataclass(frozen=True)
class ApertureMask:
    """
    Object transmission made of non-overlapping slits.

    ``y_slits`` turns the mask into a separable 2D product A(x) A_y(y); the
    analysis only ever uses the x factor.
    """

    slits: tuple[Slit, ...]
    y_slits: tuple[Slit, ...] | None = None

    def __post_init__(self):
        if len(self.slits) == 0:
            raise ConfigError("mask needs at least one slit", key="slits")
        object.__setattr__(self, "slits", tuple(sorted(self.slits, key=lambda s: s.center)))
        for left, right in zip(self.slits, self.slits[1:]):
            if right.left < left.right - 1e-15:
                raise MaskOverlapError(
                    f"slits at {left.center:.6g} and {right.center:.6g} overlap"
                )
        if all(abs(s.transmission) == 0 for s in self.slits):
            raise ConfigError("mask has zero total transmission", key="transmission")

    @property
    def dimensionality(self) -> int:
        return 1 if self.y_slits is None else 2

    @property
    def n_slits(self) -> int:
        return len(self.slits)

    @property
    def left(self) -> float:
        return self.slits[0].left

    @property
    def right(self) -> float:
        return self.slits[-1].right

    @property
    def extent(self) -> float:
        return self.right - self.left

    @property
    def half_extent(self) -> float:
        """Largest |x| inside the mask support."""
        return max(abs(self.left), abs(self.right))

    @property
    def min_width(self) -> float:
        return min(s.width for s in self.slits)

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.slits])

    @property
    def pitch(self) -> float:
        """Smallest center-to-center distance; twice the width for a single slit."""
        if self.n_slits == 1:
            return 2 * self.slits[0].width
        return float(np.min(np.diff(self.centers)))

    @property
    def total_transmission(self) -> float:
        return float(sum(abs(s.transmission) ** 2 * s.width for s in self.slits))

    def transmission(self, x) -> np.ndarray:
        """Point samples of A(x); edges count as inside."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=complex)
        for s in self.slits:
            out[(x >= s.left) & (x <= s.right)] = s.transmission
        return out

    def sample(self, grid: SampledGrid) -> np.ndarray:
        """Cell-averaged transmission on ``grid`` (cells of width ``spacing``)."""
        x = grid.points
        h = grid.spacing
        out = np.zeros(grid.n, dtype=complex)
        for s in self.slits:
            overlap = np.clip(np.minimum(x + h / 2, s.right) - np.maximum(x - h / 2, s.left), 0, None)
            out += s.transmission * overlap / h
        return out

    def transmission_2d(self, x, y) -> np.ndarray:
        ax = self.transmission(x)
        if self.y_slits is None:
            return ax * np.ones_like(np.asarray(y, dtype=float))
        ay = ApertureMask(self.y_slits).transmission(y)
        return ax * ay


def make_slit_mask(n_slits: int, width: float, pitch: float, transmission: complex = 1.0,
                   y_height: float | None = None) -> ApertureMask:
    """
    Evenly spaced slits centered on the origin.

    Parameters
    ----------
    n_slits : int
        Number of slits, at least one.
    width : float
        Slit width ``a`` [m].
    pitch : float
        Center-to-center distance ``d`` [m]; must be >= ``width``.
    y_height : float, optional
        If given, the mask becomes separable 2D with a single y-slit of this
        height.
    """
    if int(n_slits) != n_slits or n_slits < 1:
        raise ConfigError(f"n_slits must be a positive integer, got {n_slits!r}", key="n")
    _positive("a", width)
    _positive("d", pitch)
    if pitch < width:
        raise MaskOverlapError(f"pitch d={pitch:.6g} smaller than width a={width:.6g}", key="d")
    centers = (np.arange(n_slits) - (n_slits - 1) / 2.0) * pitch
    slits = tuple(Slit(float(c), float(width), transmission) for c in centers)
    y = None if y_height is None else (Slit(0.0, float(y_height)),)
    return ApertureMask(slits, y)


# ---------------------------------------------------------------------------
# Derived quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivedSet:
    focused_resolution: float
    dof_standard: float
    projected_resolution: float
    angular_resolution: float
    diffraction_term: float
    lens_term: float
    pixel_term: float


def derived_quantities(cfg: ScenarioConfig, mask: ApertureMask) -> DerivedSet:
    """Resolution summary of a scenario for a given mask (d, a from the mask)."""
    a = mask.min_width
    d = mask.pitch
    diffraction = cfg.wavelength * cfg.z_b / a
    lens = 2 * cfg.wavelength / (abs(cfg.magnification) * cfg.na_b)
    pixel = 2 * cfg.pixel_du / abs(cfg.magnification)
    return DerivedSet(
        focused_resolution=cfg.focused_resolution,
        dof_standard=cfg.dof_standard,
        projected_resolution=d * cfg.z_a / cfg.z_b,
        angular_resolution=max(diffraction, lens, pixel),
        diffraction_term=diffraction,
        lens_term=lens,
        pixel_term=pixel,
    )


def calibrate_source_na(cfg: ScenarioConfig, target_resolution: float) -> ScenarioConfig:
    """Return ``cfg`` with ``source_na`` chosen so that lambda / NA equals the target."""
    _positive("target_resolution", target_resolution)
    return cfg.replace(source_na=cfg.wavelength / target_resolution)


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_REQUIRED = [name for name, f in _FIELDS.items() if f.default is dataclasses.MISSING]


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    """
    Parse ``key = value`` lines into a :class:`ScenarioConfig`.

    Blank lines and ``#`` comments are ignored. Keys are the field names of
    :class:`ScenarioConfig`; every key without a default is required.
    """
    values: dict[str, float] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno, source=source)
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError("unknown key", key=key, line=lineno, source=source)
        if key in values:
            raise ConfigError(f"duplicate key (first on line {lines[key]})", key=key,
                              line=lineno, source=source)
        try:
            values[key] = float(val)
        except ValueError:
            raise ConfigError(f"value {val!r} is not a number", key=key, line=lineno,
                              source=source) from None
        lines[key] = lineno
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError("missing required key", key=key, source=source)
    try:
        return ScenarioConfig(**values)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], key=exc.key, line=lines.get(exc.key),
                          source=source) from None


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(), source=str(path))


def dump_scenario(cfg: ScenarioConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in cfg.as_dict().items())


def paper_setup(**overrides) -> ScenarioConfig:
    """The canonical experimental setup shipped with the package."""
    text = resources.files("cpisim").joinpath("data/paper_setup.cfg").read_text()
    cfg = parse_scenario(text, source="paper_setup")
    return cfg.replace(**overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# Mask specs
# ---------------------------------------------------------------------------

_SPEC_RE = re.compile(r"^\s*(\w+)\s*:(.*)$")


def parse_mask_spec(spec: str) -> ApertureMask:
    """
    Build a mask from an inline spec such as ``slits:n=3,a=99e-6,d=198e-6``.

    ``d`` defaults to ``2a``; ``t`` sets a common real transmission.
    """
    m = _SPEC_RE.match(spec)
    if not m or m.group(1) != "slits":
        raise ConfigError(f"unsupported mask spec {spec!r}; expected 'slits:n=..,a=..,d=..'",
                          key="mask")
    params: dict[str, str] = {}
    for item in filter(None, (p.strip() for p in m.group(2).split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"malformed item {item!r}", key="mask")
        params[key.strip()] = val.strip()
    unknown = set(params) - {"n", "a", "d", "t"}
    if unknown:
        raise ConfigError(f"unknown mask parameters {sorted(unknown)}", key="mask")
    try:
        n = int(params.get("n", "1"))
        a = float(params["a"])
        d = float(params.get("d", 2 * a))
        t = float(params.get("t", "1"))
    except KeyError:
        raise ConfigError("mask spec needs a width 'a'", key="mask") from None
    except ValueError as exc:
        raise ConfigError(f"bad number in mask spec: {exc}", key="mask") from None
    return make_slit_mask(n, a, d, t)


def mask_spec(mask: ApertureMask) -> str:
    """Inverse of :func:`parse_mask_spec` for evenly spaced real-valued masks."""
    t = mask.slits[0].transmission
    if (any(s.width != mask.slits[0].width or s.transmission != t for s in mask.slits)
            or (mask.n_slits > 2 and np.ptp(np.diff(mask.centers)) > 1e-15)
            or abs(np.mean(mask.centers)) > 1e-15 or complex(t).imag != 0):
        raise ConfigError("mask is not an evenly spaced slit group", key="mask")
    return f"slits:n={mask.n_slits},a={mask.slits[0].width!r},d={mask.pitch!r},t={complex(t).real!r}"

