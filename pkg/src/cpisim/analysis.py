"""
Resolution, visibility and depth-of-field analysis.

Four imaging modalities are compared on double- or multi-slit objects:

``standard``
    incoherent image with the source aperture (what the ghost image gives);
``standard-pi``
    standard plenoptic imaging with ``n_u`` angular pixels, modeled as a
    standard image with an ``n_u`` times smaller aperture;
``cpi-refocused``
    shear-and-sum refocused CPI image;
``cpi-coherent``
    the coherent image carried by the central angular pixel.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ApertureMask, SampledGrid, ScenarioConfig, make_slit_mask
from .engine import (ImageProfile, coherent_image, footprint_grids, gamma_map, incoherent_image,
                     refocus)
from .errors import ConfigError, CPIError

__all__ = [
    "MODALITIES",
    "VisibilityMap",
    "DofInterval",
    "DofReport",
    "WidthMetrics",
    "visibility",
    "width_metrics",
    "resolution_limit",
    "modality_image",
    "visibility_map",
    "dof_report",
    "geometric_bound",
    "default_z_floor",
    "pixel_average",
]

MODALITIES = ("standard", "standard-pi", "cpi-refocused", "cpi-coherent")
RAYLEIGH_VISIBILITY = 0.10
_FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def _check_modality(modality: str, n_u: float):
    if modality not in MODALITIES:
        raise ConfigError(f"unknown modality {modality!r}; choose from {MODALITIES}",
                          key="modality")
    if n_u < 1:
        raise ConfigError(f"n_u must be >= 1, got {n_u}", key="n_u")


# ---------------------------------------------------------------------------
# Image metrics
# ---------------------------------------------------------------------------


def visibility(profile: ImageProfile, mask: ApertureMask) -> float:
    """
    Peak-to-dip visibility of a multi-slit image.

    Each slit's peak is the profile maximum within +-d/2 of its projected
    position; the dip of a pair of neighbours is the minimum strictly between
    their peaks. ``V = (mean peak - worst dip) / (mean peak + worst dip)``,
    and ``V = 0`` as soon as one pair has no dip below both of its peaks.
    """
    if mask.n_slits < 2:
        raise ConfigError("visibility needs a mask with at least two slits; "
                          "use width_metrics for single slits", key="mask")
    x = profile.x
    y = profile.values
    half = 0.5 * mask.pitch * abs(profile.magnification)
    peaks = []
    for c in mask.centers * profile.magnification:
        idx = np.flatnonzero((x >= c - half) & (x < c + half))
        if idx.size == 0:
            raise CPIError(f"profile grid does not reach the slit image at {c:.4g} m")
        peaks.append(idx[np.argmax(y[idx])])
    peaks.sort()
    dips = []
    for i0, i1 in zip(peaks, peaks[1:]):
        if i1 - i0 < 2:
            return 0.0
        dip = float(np.min(y[i0 + 1:i1]))
        if dip >= min(y[i0], y[i1]):
            return 0.0
        dips.append(dip)
    peak = float(np.mean(y[peaks]))
    dip = max(dips)
    if peak + dip <= 0:
        return 0.0
    return max(0.0, (peak - dip) / (peak + dip))


@dataclass(frozen=True)
class WidthMetrics:
    fwhm: float
    hwhm: float
    center: float
    multimodal: bool = False


def width_metrics(profile: ImageProfile) -> WidthMetrics:
    """
    Full and half width at half maximum.

    The half-maximum crossings are the outermost ones, located by linear
    interpolation; if the profile dips below half maximum in between, the
    result describes the envelope and ``multimodal`` is set.
    """
    x = profile.x
    y = np.asarray(profile.values, dtype=float)
    peak = float(y.max())
    if peak <= 0:
        raise CPIError("width of an all-zero profile is undefined")
    half = peak / 2
    above = np.flatnonzero(y >= half)
    i0, i1 = above[0], above[-1]
    if i0 == 0 or i1 == y.size - 1:
        raise CPIError("half-maximum crossing lies outside the profile grid")
    xl = np.interp(half, [y[i0 - 1], y[i0]], [x[i0 - 1], x[i0]])
    xr = np.interp(half, [y[i1 + 1], y[i1]], [x[i1 + 1], x[i1]])
    multimodal = bool(np.any(y[i0:i1 + 1] < half))
    fwhm = float(xr - xl)
    return WidthMetrics(fwhm, fwhm / 2, float(0.5 * (xl + xr)), multimodal)


def pixel_average(profile: ImageProfile, width: float) -> ImageProfile:
    """
    The profile as seen through a sliding pixel of ``width``: the mean of the
    (linearly interpolated) profile over [x - width/2, x + width/2].
    """
    if width <= 0:
        raise ConfigError("pixel width must be positive", key="width")
    x = profile.x
    v = np.asarray(profile.values)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(x))])
    # values beyond the grid are taken as zero
    def integral(t):
        return np.interp(t, x, cum, left=0.0, right=cum[-1])
    out = (integral(x + width / 2) - integral(x - width / 2)) / width
    return ImageProfile(out, profile.grid, profile.kind, profile.magnification,
                        profile.pixel_rescale, (profile.note + f"; {width:.3g} m pixel").lstrip("; "))


def resolution_limit(mask: ApertureMask, psf_sigma: float) -> float:
    """Half slit width plus the Gaussian-PSF Rayleigh distance 2 sqrt(2 ln 2) sigma."""
    if psf_sigma < 0:
        raise ConfigError("psf_sigma must be >= 0", key="psf_sigma")
    return mask.min_width / 2 + _FWHM_PER_SIGMA * psf_sigma


# ---------------------------------------------------------------------------
# Modality images
# ---------------------------------------------------------------------------


def _object_grid(cfg: ScenarioConfig, mask: ApertureMask) -> SampledGrid:
    _, _, out = footprint_grids(cfg, mask)
    return out


def modality_image(modality: str, cfg: ScenarioConfig, mask: ApertureMask, z_b: float | None = None,
                   *, n_u: float = 3, grid: SampledGrid | None = None,
                   workers: int = 1) -> ImageProfile:
    """
    Image of ``mask`` placed at ``z_b`` as seen by one modality.

    All modalities return a profile in object coordinates (magnification 1),
    so visibilities are directly comparable.
    """
    _check_modality(modality, n_u)
    if z_b is not None:
        cfg = cfg.replace(z_b=z_b)
    if grid is None:
        grid = _object_grid(cfg, mask)
    if modality == "standard":
        return incoherent_image(cfg, mask, grid)
    if modality == "standard-pi":
        img = incoherent_image(cfg, mask, grid, sigma=cfg.source_sigma / n_u)
        return ImageProfile(img.values, grid, "standard-pi", note=f"aperture / {n_u:g}")
    if modality == "cpi-coherent":
        return coherent_image(cfg, mask, grid)
    grid_a, grid_b, _ = footprint_grids(cfg, mask)
    gamma = gamma_map(cfg, mask, grid_a, grid_b, workers=workers)
    return refocus(gamma, output_grid=grid)


# ---------------------------------------------------------------------------
# Geometric bound
# ---------------------------------------------------------------------------


def _angular_resolution(cfg: ScenarioConfig, a: float, z_b):
    m = abs(cfg.magnification)
    return np.maximum(np.maximum(cfg.wavelength * z_b / a, 2 * cfg.wavelength / (m * cfg.na_b)),
                      2 * cfg.pixel_du / m)


def _bound_margin(cfg, d, a, z_b):
    """Negative inside the perfect-refocusing region."""
    return np.abs(1 - cfg.z_a / z_b) - (d * cfg.z_a / z_b) / _angular_resolution(cfg, a, z_b)


def _bisect(f, inside, outside, tol):
    # f(inside) is True, f(outside) is False
    while abs(outside - inside) > tol:
        mid = 0.5 * (inside + outside)
        if f(mid):
            inside = mid
        else:
            outside = mid
    return inside


def _march(f, z_a, direction, limit, tol, first_step, growth):
    """
    Walk away from ``z_a`` until ``f`` turns False, then bisect.

    Returns ``(z, clamped)``; ``clamped`` is True when ``f`` still holds at
    ``limit``.
    """
    z_in = z_a
    step = first_step
    while True:
        z = z_in + direction * step
        if (z - limit) * direction >= 0:
            if f(limit):
                return limit, True
            return _bisect(f, z_in, limit, tol), False
        if not f(z):
            return _bisect(f, z_in, z, tol), False
        z_in = z
        step = max(first_step, growth * abs(z_in - z_a))


def default_z_floor(cfg: ScenarioConfig, mask: ApertureMask) -> float:
    """
    Closest object distance considered in depth-of-field scans.

    Below 2a / (M NA_b) the angular resolution is set by the lens aperture,
    which the analytic correlation model does not include.
    """
    return 2 * mask.min_width / (abs(cfg.magnification) * cfg.na_b)


def geometric_bound(cfg: ScenarioConfig, mask: ApertureMask, *, z_floor: float | None = None,
                    z_ceil: float | None = None, tol: float = 1e-6) -> tuple[float, float]:
    """
    Geometrical-optics range of perfect refocusing around ``z_a``.

    Solves |1 - z_a/z_b| < Dx/Du for the crossing nearest to ``z_a`` on each
    side by bisection. Sides without a crossing are clamped to ``z_floor``
    and ``z_ceil`` (defaults: :func:`default_z_floor` and 10 z_a).
    """
    d, a = mask.pitch, mask.min_width
    z_floor = default_z_floor(cfg, mask) if z_floor is None else z_floor
    z_ceil = 10 * cfg.z_a if z_ceil is None else z_ceil

    def inside(z):
        return _bound_margin(cfg, d, a, z) < 0

    step = 1e-3 * cfg.z_a
    lo, _ = _march(inside, cfg.z_a, -1, z_floor, tol, step, 0.05)
    hi, _ = _march(inside, cfg.z_a, +1, z_ceil, tol, step, 0.05)
    return lo, hi


# ---------------------------------------------------------------------------
# Visibility maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VisibilityMap:
    """V on a (z_b - z_a) x (d / Dx^f) lattice; rows follow ``dz``."""

    d_over_dx: np.ndarray
    dz: np.ndarray
    values: np.ndarray
    modality: str
    n_u: float = 1
    n_failed: int = 0
    bound_lo: np.ndarray | None = None
    bound_hi: np.ndarray | None = None

    def to_csv(self) -> str:
        """Long format: d_over_dx, dz, modality, V (+ geometric bound columns)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["d_over_dx", "dz", "modality", "V"]
        if self.bound_lo is not None:
            header += ["bound_dz_lo", "bound_dz_hi"]
        w.writerow(header)
        name = self.modality if self.modality != "standard-pi" else f"standard-pi({self.n_u:g})"
        for i, dz in enumerate(self.dz):
            for j, r in enumerate(self.d_over_dx):
                row = [repr(float(r)), repr(float(dz)), name, repr(float(self.values[i, j]))]
                if self.bound_lo is not None:
                    row += [repr(float(self.bound_lo[j])), repr(float(self.bound_hi[j]))]
                w.writerow(row)
        return buf.getvalue()


def double_slit(d: float) -> ApertureMask:
    """Double slit of pitch ``d`` and width ``d / 2``."""
    return make_slit_mask(2, d / 2, d)


def visibility_map(modality: str, cfg: ScenarioConfig, d_over_dx, dz, *, n_u: float = 3,
                   workers: int = 1) -> VisibilityMap:
    """
    Visibility of double slits (d = 2a) over a grid of sizes and defocus.

    Cells that fail numerically are stored as NaN and counted.
    """
    _check_modality(modality, n_u)
    d_over_dx = np.atleast_1d(np.asarray(d_over_dx, dtype=float))
    dz = np.atleast_1d(np.asarray(dz, dtype=float))
    if d_over_dx.size == 0 or dz.size == 0:
        raise ConfigError("empty d or z range", key="range")
    dxf = cfg.focused_resolution

    def cell(ij):
        i, j = ij
        mask = double_slit(d_over_dx[j] * dxf)
        z_b = cfg.z_a + dz[i]
        if z_b <= 0:
            return np.nan
        try:
            return visibility(modality_image(modality, cfg, mask, z_b, n_u=n_u), mask)
        except CPIError:
            return np.nan

    cells = [(i, j) for i in range(dz.size) for j in range(d_over_dx.size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            flat = list(ex.map(cell, cells))
    else:
        flat = [cell(c) for c in cells]
    values = np.array(flat, dtype=float).reshape(dz.size, d_over_dx.size)
    lo = hi = None
    if modality == "cpi-refocused":
        bounds = [geometric_bound(cfg, double_slit(r * dxf)) for r in d_over_dx]
        lo = np.array([b[0] for b in bounds]) - cfg.z_a
        hi = np.array([b[1] for b in bounds]) - cfg.z_a
    return VisibilityMap(d_over_dx, dz, values, modality, n_u, int(np.isnan(values).sum()), lo, hi)


# ---------------------------------------------------------------------------
# Depth of field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DofInterval:
    z_min: float
    z_max: float
    floor_clamped: bool = False
    ceil_clamped: bool = False

    @property
    def length(self) -> float:
        return max(0.0, self.z_max - self.z_min)

    @property
    def empty(self) -> bool:
        return not self.z_max > self.z_min

    def contains(self, other: "DofInterval", tol: float = 0.0) -> bool:
        return self.z_min <= other.z_min + tol and other.z_max <= self.z_max + tol


@dataclass(frozen=True)
class DofReport:
    d: float
    n_u: float
    threshold: float
    z_a: float
    intervals: dict = field(default_factory=dict)

    def ratio(self, num: str, den: str) -> float:
        a, b = self.intervals[num].length, self.intervals[den].length
        return a / b if b > 0 else math.inf

    @property
    def cpi_over_standard(self) -> float:
        return self.ratio("cpi-refocused", "standard")

    @property
    def cpi_over_pi(self) -> float:
        return self.ratio("cpi-refocused", "standard-pi")

    @property
    def refocusable_planes(self) -> float:
        """How many standard depths of field fit into the CPI one."""
        return self.cpi_over_standard

    def summary(self) -> str:
        lines = [f"d = {self.d * 1e3:.4g} mm, threshold V = {self.threshold:g}, "
                 f"N_u = {self.n_u:g}",
                 f"{'modality':<16}{'z_b^m [mm]':>12}{'z_b^M [mm]':>12}{'DOF [mm]':>11}"]
        for name, iv in self.intervals.items():
            flag = " (scan limit)" if iv.floor_clamped or iv.ceil_clamped else ""
            lines.append(f"{name:<16}{iv.z_min * 1e3:>12.3f}{iv.z_max * 1e3:>12.3f}"
                         f"{iv.length * 1e3:>11.3f}{flag}")
        if "standard" in self.intervals and "cpi-refocused" in self.intervals:
            lines.append(f"DOF_CPI / DOF_standard = {self.cpi_over_standard:.3f}")
        if "standard-pi" in self.intervals and "cpi-refocused" in self.intervals:
            lines.append(f"DOF_CPI / DOF_PI({self.n_u:g}) = {self.cpi_over_pi:.3f}")
        return "\n".join(lines)


def _dof_interval(modality, cfg, mask, n_u, threshold, z_floor, z_ceil, tol, workers):
    def resolved(z):
        img = modality_image(modality, cfg, mask, z, n_u=n_u, workers=workers)
        return visibility(img, mask) >= threshold

    if not resolved(cfg.z_a):
        return DofInterval(cfg.z_a, cfg.z_a)
    step = max(tol, 0.25 * cfg.dof_standard)
    lo, lo_c = _march(resolved, cfg.z_a, -1, z_floor, tol, step, 0.15)
    hi, hi_c = _march(resolved, cfg.z_a, +1, z_ceil, tol, step, 0.15)
    return DofInterval(lo, hi, lo_c, hi_c)


def dof_report(cfg: ScenarioConfig, d: float, *, n_u: float = 3, mask: ApertureMask | None = None,
               threshold: float = RAYLEIGH_VISIBILITY, modalities=("standard", "standard-pi",
                                                                   "cpi-refocused"),
               z_floor: float | None = None, z_ceil: float | None = None, tol: float = 1e-4,
               workers: int = 1) -> DofReport:
    """
    Depth of field per modality for an object of pitch ``d``.

    For each modality the object distance is walked away from ``z_a`` on both
    sides until the visibility drops below ``threshold``, and the crossing is
    bisected to ``tol``. The default object is a double slit with a = d/2.
    """
    mask = double_slit(d) if mask is None else mask
    z_floor = default_z_floor(cfg, mask) if z_floor is None else z_floor
    z_ceil = 3 * cfg.z_a if z_ceil is None else z_ceil
    intervals = {}
    for modality in modalities:
        _check_modality(modality, n_u)
        intervals[modality] = _dof_interval(modality, cfg, mask, n_u, threshold, z_floor, z_ceil,
                                             tol, workers)
    return DofReport(d, n_u, threshold, cfg.z_a, intervals)
