"""
Analytic correlation function, point-spread functions and CPI images for a
Gaussian chaotic source.

The correlation of intensity fluctuations between a point ``x_a`` of the
spatial sensor and a point ``x_b`` of the angular sensor is

    Gamma(x_a, x_b) = | int dx A(x) exp(-i k x x_b / (z_b M)) C(x - (z_b/z_a) x_a) |^2

with the complex Gaussian point-spread function C(r) = exp(-p r^2). Because
the mask is a set of slits, the object integral splits into one smooth
integral per slit. Each of those is evaluated for every ``x_b`` at once with a
chirp-z transform (an FFT with arbitrary output spacing) of the trapezoidal
sums, followed by analytic Euler-Maclaurin endpoint corrections, which makes
the result accurate to O(h^6) in the node spacing.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import czt
from scipy.special import erf

from .core import ApertureMask, SampledGrid, ScenarioConfig
from .errors import ConfigError, PreconditionError

__all__ = [
    "CorrelationTensor",
    "ImageProfile",
    "ComplexPSF",
    "psf_exponent",
    "coherent_psf",
    "incoherent_psf",
    "incoherent_sigma",
    "gamma_map",
    "gamma_direct",
    "ghost_image",
    "refocus",
    "coherent_slice",
    "coherent_image",
    "incoherent_image",
    "image_width_alpha",
    "optimal_alpha",
    "footprint_grids",
]

# Euler-Maclaurin coefficients B2/2! and B4/4!.
_EM2 = 1.0 / 12.0
_EM4 = 1.0 / 720.0
# exp(-45) ~ 3e-20: beyond this radius the PSF envelope is treated as zero.
_ENVELOPE_LOG = 45.0


@dataclass(frozen=True)
class CorrelationTensor:
    """Sampled Gamma(x_a, x_b); rows follow ``grid_a``, columns ``grid_b``."""

    values: np.ndarray
    grid_a: SampledGrid
    grid_b: SampledGrid
    scenario: ScenarioConfig
    provenance: str = "analytic"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid_a.n, self.grid_b.n):
            raise ConfigError(f"values shape {v.shape} does not match grids "
                              f"({self.grid_a.n}, {self.grid_b.n})", key="values")
        if not np.all(np.isfinite(v)):
            raise PreconditionError("correlation tensor has non-finite entries")
        # Fluctuation estimates may dip below zero through noise; analytic ones may not.
        if self.provenance == "analytic" and np.any(v < 0):
            raise PreconditionError("analytic correlation tensor has negative entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def normalized(self) -> np.ndarray:
        peak = np.max(np.abs(self.values))
        return self.values / peak if peak > 0 else self.values.copy()

    def transposed(self) -> "CorrelationTensor":
        return CorrelationTensor(self.values.T, self.grid_b, self.grid_a, self.scenario,
                                 self.provenance)


@dataclass(frozen=True)
class ImageProfile:
    """
    A 1D image on ``grid``.

    A point of the object at coordinate ``x`` appears at ``magnification * x``
    on the profile grid. ``pixel_rescale`` records the factor by which the
    sensor pixel was rescaled to build the profile (z_b/z_a for refocused
    and coherent-slice images).
    """

    values: np.ndarray
    grid: SampledGrid
    kind: str
    magnification: float = 1.0
    pixel_rescale: float = 1.0
    note: str = ""
    clipped_fraction: float = field(default=0.0, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ConfigError(f"values shape {v.shape} does not match grid size {self.grid.n}",
                              key="values")
        if not np.all(np.isfinite(v)):
            raise PreconditionError("image has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return self.grid.points

    def normalized(self) -> "ImageProfile":
        peak = float(np.max(self.values))
        vals = self.values / peak if peak > 0 else self.values
        return ImageProfile(vals, self.grid, self.kind, self.magnification, self.pixel_rescale,
                            (self.note + "; peak-normalized").lstrip("; "))


@dataclass(frozen=True)
class ComplexPSF:
    values: np.ndarray
    grid: SampledGrid
    z_b: float
    scenario: ScenarioConfig


# ---------------------------------------------------------------------------
# Point-spread functions
# ---------------------------------------------------------------------------


def _defocus_parameter(cfg: ScenarioConfig) -> float:
    """k sigma^2 / z_b * (1 - z_b / z_a)."""
    return cfg.k * cfg.source_sigma**2 / cfg.z_b * (1.0 - cfg.z_b / cfg.z_a)


def psf_exponent(cfg: ScenarioConfig, sigma: float | None = None) -> complex:
    """Complex ``p`` such that the coherent PSF is C(r) = exp(-p r^2)."""
    sigma = cfg.source_sigma if sigma is None else sigma
    gamma = cfg.k * sigma**2 / cfg.z_b * (1.0 - cfg.z_b / cfg.z_a)
    return 0.5 * (cfg.k * sigma / cfg.z_b) ** 2 / (1.0 - 1j * gamma)


def _check_psf_grid(p: complex, grid: SampledGrid):
    if p.real * grid.spacing**2 > 700.0:
        raise PreconditionError(
            f"PSF narrower than the grid can represent: exp(-Re(p) h^2) underflows for "
            f"spacing {grid.spacing:.3g} m (PSF amplitude width {1 / math.sqrt(p.real):.3g} m)"
        )


def coherent_psf(cfg: ScenarioConfig, grid: SampledGrid) -> ComplexPSF:
    """Coherent CPI point-spread function C on ``grid``, with C(0) = 1."""
    p = psf_exponent(cfg)
    _check_psf_grid(p, grid)
    r = grid.points
    return ComplexPSF(np.exp(-p * r**2), grid, cfg.z_b, cfg)


def incoherent_sigma(cfg: ScenarioConfig, sigma: float | None = None) -> float:
    """Standard deviation of the incoherent PSF J (object-plane coordinates)."""
    sigma = cfg.source_sigma if sigma is None else sigma
    gamma = cfg.k * sigma**2 / cfg.z_b * (1.0 - cfg.z_b / cfg.z_a)
    return cfg.z_b / (cfg.k * sigma) * math.sqrt((1.0 + gamma**2) / 2.0)


def incoherent_psf(cfg: ScenarioConfig, grid: SampledGrid) -> ImageProfile:
    """Peak-normalized incoherent (ghost-image) PSF J on ``grid``."""
    gamma = _defocus_parameter(cfg)
    b = (cfg.k * cfg.source_sigma / cfg.z_b) ** 2 / (1.0 + gamma**2)
    if b * grid.spacing**2 > 700.0:
        raise PreconditionError(f"incoherent PSF unresolved at spacing {grid.spacing:.3g} m")
    r = grid.points
    return ImageProfile(np.exp(-b * r**2), grid, "psf", note="incoherent PSF J, peak-normalized")


def image_width_alpha(cfg: ScenarioConfig, alpha) -> np.ndarray | float:
    """Width sigma_i(alpha) of the image of a point object at z_b = alpha z_a."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ConfigError("alpha must be positive", key="alpha")
    sig = cfg.source_sigma
    out = np.sqrt(0.5 * (cfg.z_a / (cfg.k * sig)) ** 2 * alpha**2 + 0.5 * sig**2 * (1 - alpha) ** 2)
    return float(out) if out.ndim == 0 else out


def optimal_alpha(cfg: ScenarioConfig) -> float:
    """Minimizer of :func:`image_width_alpha`, always below one."""
    return 1.0 / (1.0 + (cfg.z_a / (cfg.k * cfg.source_sigma**2)) ** 2)


# ---------------------------------------------------------------------------
# Gamma
# ---------------------------------------------------------------------------


def _kappa(cfg: ScenarioConfig, grid_b: SampledGrid) -> tuple[float, float]:
    """Start and step of the object-plane spatial frequency k x_b / (z_b M)."""
    scale = cfg.k / (cfg.z_b * cfg.magnification)
    return grid_b.origin * scale, grid_b.spacing * scale


def _check_aliasing(cfg: ScenarioConfig, mask: ApertureMask, grid_b: SampledGrid):
    _, dk = _kappa(cfg, grid_b)
    step = abs(dk) * mask.half_extent
    if step > math.pi:
        raise PreconditionError(
            f"angular grid undersampled: phase step {step:.3g} rad per x_b sample at the mask "
            f"edge exceeds pi; use x_b spacing <= "
            f"{math.pi * cfg.z_b * abs(cfg.magnification) / (cfg.k * mask.half_extent):.3g} m"
        )


def _slit_nodes(p: complex, left: float, right: float, s_lo: float, s_hi: float,
                kappa_max: float, phase_step: float) -> int:
    """Number of trapezoid intervals on one slit for a given phase-step budget."""
    radius = math.sqrt(_ENVELOPE_LOG / p.real)
    reach = min(max(abs(right - s_lo), abs(s_hi - left)), radius)
    freq = 2 * abs(p) * reach + kappa_max + math.sqrt(2 * abs(p))
    return max(8, int(math.ceil((right - left) * freq / phase_step)))


def _slit_integrals(p: complex, left: float, right: float, s: np.ndarray, k0: float, dk: float,
                    m: int, n_int: int) -> np.ndarray:
    """
    I[j, q] = int_left^right exp(-p (x - s_j)^2 - i (k0 + q dk) x) dx

    for all rows ``s`` and ``m`` equally spaced frequencies, from a chirp-z
    transform of the trapezoidal sums plus h^2 and h^4 endpoint corrections.
    """
    h = (right - left) / n_int
    x = left + h * np.arange(n_int + 1)
    w = np.full(n_int + 1, h)
    w[0] = w[-1] = h / 2
    vals = np.exp(-p * (x[None, :] - s[:, None]) ** 2) * w
    # sum_n v_n exp(-i (k0 + q dk)(left + n h)) = exp(-i kappa_q left) * czt
    spec = czt(vals, m=m, w=np.exp(-1j * dk * h), a=np.exp(1j * k0 * h), axis=-1)
    kappa = k0 + dk * np.arange(m)
    spec *= np.exp(-1j * kappa * left)[None, :]

    def endpoint(e):
        f = np.exp(-p * (e - s)[:, None] ** 2 - 1j * kappa[None, :] * e)
        g = -2 * p * (e - s)[:, None] - 1j * kappa[None, :]
        return g * f, (g**3 - 6 * p * g) * f

    d1_r, d3_r = endpoint(right)
    d1_l, d3_l = endpoint(left)
    return spec - _EM2 * h**2 * (d1_r - d1_l) + _EM4 * h**4 * (d3_r - d3_l)


def _amplitude(cfg, mask, s, k0, dk, m, phase_step, p=None, s_range=None) -> np.ndarray:
    """Summed slit integrals; ``s_range`` fixes the rows used to size the quadrature."""
    p = psf_exponent(cfg) if p is None else p
    s_lo, s_hi = (float(s.min()), float(s.max())) if s_range is None else s_range
    kappa_max = max(abs(k0), abs(k0 + dk * (m - 1)))
    out = np.zeros((s.size, m), dtype=complex)
    for slit in mask.slits:
        if slit.transmission == 0:
            continue
        n_int = _slit_nodes(p, slit.left, slit.right, s_lo, s_hi, kappa_max, phase_step)
        if n_int > 2**22:
            raise PreconditionError(f"slit at {slit.center:.3g} m needs {n_int} quadrature nodes; "
                                    "the scenario is too far from focus for this grid")
        # keep each chunk's node matrix around 4M entries
        rows = max(1, int(4_000_000 // (n_int + 1)))
        for i0 in range(0, s.size, rows):
            out[i0:i0 + rows] += slit.transmission * _slit_integrals(
                p, slit.left, slit.right, s[i0:i0 + rows], k0, dk, m, n_int)
    return out


def gamma_map(cfg: ScenarioConfig, mask: ApertureMask, grid_a: SampledGrid, grid_b: SampledGrid,
              *, phase_step: float = math.pi / 8, workers: int = 1) -> CorrelationTensor:
    """
    Analytic Gamma on ``grid_a x grid_b``.

    Parameters
    ----------
    phase_step : float
        Largest phase advance of the integrand between quadrature nodes;
        smaller is more accurate and slower.
    workers : int
        Threads used over row blocks. The result does not depend on it.
    """
    _check_aliasing(cfg, mask, grid_b)
    if not (0 < phase_step <= math.pi / 4):
        raise ConfigError("phase_step must lie in (0, pi/4]", key="phase_step")
    k0, dk = _kappa(cfg, grid_b)
    s = cfg.alpha * grid_a.points
    p = psf_exponent(cfg)
    # node counts must not depend on how rows are split between threads
    s_range = (float(s.min()), float(s.max()))
    if workers <= 1 or grid_a.n < 2 * workers:
        amp = _amplitude(cfg, mask, s, k0, dk, grid_b.n, phase_step, p, s_range)
    else:
        blocks = np.array_split(np.arange(grid_a.n), workers)

        def run(idx):
            return _amplitude(cfg, mask, s[idx], k0, dk, grid_b.n, phase_step, p, s_range)

        with ThreadPoolExecutor(max_workers=workers) as ex:
            amp = np.concatenate(list(ex.map(run, blocks)), axis=0)
    return CorrelationTensor(np.abs(amp) ** 2, grid_a, grid_b, cfg, "analytic")


def gamma_direct(cfg: ScenarioConfig, mask: ApertureMask, grid_a: SampledGrid,
                 grid_b: SampledGrid, nodes_per_slit: int) -> CorrelationTensor:
    """
    Brute-force reference for :func:`gamma_map`.

    Plain trapezoidal rule on ``nodes_per_slit`` nodes per slit, with every
    complex exponential evaluated explicitly. Slow; meant for small grids.
    """
    xa = grid_a.points
    xb = grid_b.points
    alpha = cfg.z_b / cfg.z_a
    p = psf_exponent(cfg)
    amp = np.zeros((xa.size, xb.size), dtype=complex)
    for slit in mask.slits:
        xo = np.linspace(slit.left, slit.right, nodes_per_slit)
        wts = np.full(nodes_per_slit, xo[1] - xo[0])
        wts[[0, -1]] *= 0.5
        phase = np.exp(-1j * cfg.k * np.outer(xo, xb) / (cfg.z_b * cfg.magnification))
        for i, x in enumerate(xa):
            c = np.exp(-p * (xo - alpha * x) ** 2)
            amp[i] += slit.transmission * ((c * wts) @ phase)
    return CorrelationTensor(np.abs(amp) ** 2, grid_a, grid_b, cfg, "analytic")


# ---------------------------------------------------------------------------
# Images from Gamma
# ---------------------------------------------------------------------------


def ghost_image(gamma: CorrelationTensor) -> ImageProfile:
    """Sum of Gamma over the angular sensor: the bucket-detector ghost image."""
    vals = gamma.values.sum(axis=1) * gamma.grid_b.spacing
    cfg = gamma.scenario
    if gamma.provenance != "analytic":
        vals = np.clip(vals, 0, None)
    return ImageProfile(vals, gamma.grid_a, "ghost", magnification=cfg.z_a / cfg.z_b,
                        note="sum over x_b")


def _supported_grid(grid_a: SampledGrid, grid_b: SampledGrid, ratio: float,
                    shear: float) -> SampledGrid:
    """Object grid whose sheared reads stay inside ``grid_a`` for every column."""
    full = grid_a.scaled(1.0 / ratio)
    slack = max(abs(grid_b.start), abs(grid_b.stop)) * abs(shear)
    lo = (grid_a.start + slack) / ratio
    hi = (grid_a.stop - slack) / ratio
    i0 = int(math.ceil((lo - full.origin) / full.spacing - 1e-9))
    i1 = int(math.floor((hi - full.origin) / full.spacing + 1e-9))
    if i1 - i0 < 1:
        return full
    return SampledGrid(i1 - i0 + 1, full.spacing, full.origin + i0 * full.spacing)


def refocus(gamma: CorrelationTensor, output_grid: SampledGrid | None = None,
            warn_clipped: float = 0.05) -> ImageProfile:
    """
    Refocused CPI image.

    Every angular column ``x_b`` is read at the sheared spatial coordinate
    (z_a/z_b) x - (x_b/M)(1 - z_a/z_b), by linear interpolation along
    ``grid_a``, and the columns are summed. The default output grid is
    ``grid_a`` rescaled by z_b/z_a (so the profile is in object coordinates),
    trimmed to the points whose reads stay inside ``grid_a``. Queries outside
    ``grid_a`` contribute zero; their fraction is recorded and a warning is
    issued above ``warn_clipped``.
    """
    cfg = gamma.scenario
    ratio = cfg.z_a / cfg.z_b
    xa = gamma.grid_a.points
    xb = gamma.grid_b.points
    shear = (1.0 - ratio) / cfg.magnification
    if output_grid is None:
        output_grid = _supported_grid(gamma.grid_a, gamma.grid_b, ratio, shear)
    x = output_grid.points
    out = np.zeros(x.size)
    clipped = 0
    lo, hi = gamma.grid_a.start, gamma.grid_a.stop
    for j in range(xb.size):
        q = ratio * x - xb[j] * shear
        clipped += np.count_nonzero((q < lo) | (q > hi))
        out += np.interp(q, xa, gamma.values[:, j], left=0.0, right=0.0)
    out *= gamma.grid_b.spacing
    frac = clipped / (x.size * xb.size)
    if frac > warn_clipped:
        warnings.warn(f"refocus: {frac:.1%} of the sheared samples fall outside grid_a",
                      RuntimeWarning, stacklevel=2)
    if gamma.provenance != "analytic":
        out = np.clip(out, 0, None)
    return ImageProfile(out, output_grid, "refocused", magnification=1.0,
                        pixel_rescale=1.0 / ratio, note="shear-and-sum over x_b",
                        clipped_fraction=frac)


def coherent_slice(gamma: CorrelationTensor, rho_b: float = 0.0) -> ImageProfile:
    """Column of Gamma at ``rho_b`` (nearest sample), in object coordinates."""
    cfg = gamma.scenario
    j = gamma.grid_b.index_of(rho_b)
    xj = gamma.grid_b.points[j]
    if abs(xj - rho_b) > 1e-9 * gamma.grid_b.spacing:
        warnings.warn(f"coherent_slice: x_b={rho_b:.6g} not on the grid, using {xj:.6g}",
                      RuntimeWarning, stacklevel=2)
    vals = gamma.values[:, j]
    if gamma.provenance != "analytic":
        vals = np.clip(vals, 0, None)
    return ImageProfile(vals, gamma.grid_a.scaled(cfg.z_b / cfg.z_a), "coherent",
                        magnification=1.0, pixel_rescale=cfg.z_b / cfg.z_a,
                        note=f"Gamma column at x_b={xj:.6g}")


# ---------------------------------------------------------------------------
# Closed-form images in object coordinates
# ---------------------------------------------------------------------------


def incoherent_image(cfg: ScenarioConfig, mask: ApertureMask, grid: SampledGrid,
                     sigma: float | None = None) -> ImageProfile:
    """
    Incoherent (ghost / standard) image: |A|^2 convolved with J.

    ``grid`` is in object coordinates. ``sigma`` replaces the source width,
    which models an imaging device with a proportionally smaller aperture.
    """
    width = incoherent_sigma(cfg, sigma)
    x = grid.points
    out = np.zeros(x.size)
    for s in mask.slits:
        t2 = abs(s.transmission) ** 2
        out += 0.5 * t2 * (erf((x - s.left) / (math.sqrt(2) * width))
                           - erf((x - s.right) / (math.sqrt(2) * width)))
    return ImageProfile(out, grid, "ghost", note=f"|A|^2 * J, J std {width:.4g} m")


def coherent_image(cfg: ScenarioConfig, mask: ApertureMask, grid: SampledGrid,
                   phase_step: float = math.pi / 8) -> ImageProfile:
    """Coherent CPI image |int A(x) C(x - x_o) dx|^2 on an object-coordinate grid."""
    amp = _amplitude(cfg, mask, grid.points, 0.0, 1.0, 1, phase_step)[:, 0]
    return ImageProfile(np.abs(amp) ** 2, grid, "coherent", note="x_b = 0 slice, closed form")


# ---------------------------------------------------------------------------
# Grid planning
# ---------------------------------------------------------------------------


def footprint_grids(cfg: ScenarioConfig, mask: ApertureMask, *, margin: float | None = None,
                    object_spacing: float | None = None, angular_spacing: float | None = None,
                    phase_step: float = math.pi / 4, source_widths: float = 4.0,
                    diffraction_lobes: float = 8.0):
    """
    Grids for Gamma that contain the whole sheared footprint of the object.

    Returns ``(grid_a, grid_b, output_grid)`` where ``output_grid`` is the
    object-coordinate grid on which refocused images are read.
    """
    m = abs(cfg.magnification)
    a = mask.min_width
    margin = mask.pitch if margin is None else margin
    if object_spacing is None:
        object_spacing = min(a / 8, cfg.focused_resolution / 4)
    bound = phase_step * cfg.z_b * m / (cfg.k * mask.half_extent)
    du = min(cfg.pixel_du, bound) if angular_spacing is None else angular_spacing
    half_b = source_widths * cfg.source_sigma * m + diffraction_lobes * cfg.wavelength * cfg.z_b * m / a
    grid_b = SampledGrid.covering(half_b, du)

    ratio = cfg.z_a / cfg.z_b
    half_obj = mask.half_extent + margin
    output = SampledGrid.covering(half_obj, object_spacing)
    half_a = ratio * output.stop + grid_b.stop * abs(1 - ratio) / m + 2 * ratio * object_spacing
    grid_a = SampledGrid.covering(half_a, ratio * object_spacing)
    return grid_a, grid_b, output
