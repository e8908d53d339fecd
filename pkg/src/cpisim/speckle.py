"""
Monte-Carlo simulation of correlation plenoptic imaging with chaotic light.

Each frame is one instantaneous realization of a delta-correlated Gaussian
source field. The field is sent through both arms of the setup, the two
sensors record |E|^2, and the correlation of intensity fluctuations is then
estimated across frames exactly as in an experiment.

Propagation between windows of interest uses the discrete Fresnel sum

    E_out(x2) = (i lambda z)^(-1/2) sum_n E_in(x1_n) exp(i k (x2 - x1_n)^2 / 2z) h

evaluated for all outputs at once with a chirp-z transform. Only the region
that matters in each plane is sampled (source, mask, lens aperture, sensor
window), so no periodic wrap-around can occur. :func:`fresnel_propagate`
implements the classic transfer-function method on a periodic grid.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import CZT

from .core import ApertureMask, SampledGrid, ScenarioConfig, SourceProfile, mask_spec
from .engine import CorrelationTensor, ImageProfile
from .errors import ConfigError, PreconditionError

__all__ = [
    "FrameStack",
    "PropagationPlan",
    "sample_source_field",
    "frame_rng",
    "fresnel_propagate",
    "fresnel_max_distance",
    "fresnel_window",
    "generate_frames",
    "estimate_gamma",
    "postprocess",
    "default_lowpass",
    "bin_pixels",
    "bin_grid",
    "fine_grid",
    "g2_zero",
]

HIGH_VARIANCE_FRAMES = 100


# ---------------------------------------------------------------------------
# Random substreams and source
# ---------------------------------------------------------------------------


def frame_rng(seed: int, frame: int) -> np.random.Generator:
    """Independent generator for one frame; depends only on ``(seed, frame)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(frame),))))


def sample_source_field(profile: SourceProfile, grid: SampledGrid, rng: np.random.Generator,
                        size: int | None = None) -> np.ndarray:
    """
    Delta-correlated chaotic source field on ``grid``.

    E(x) = f(x) g(x) / sqrt(h), with g a unit-variance circular complex
    Gaussian per cell, so that <E*(x) E(x')> tends to F(x) delta(x - x') as the
    spacing ``h`` goes to zero. ``size`` draws that many independent rows.
    """
    shape = (grid.n,) if size is None else (size, grid.n)
    g = rng.standard_normal(shape + (2,)).view(complex)[..., 0] / math.sqrt(2.0)
    return profile.amplitude_1d(grid.points) * g / math.sqrt(grid.spacing)


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def fresnel_max_distance(n: int, spacing: float, wavelength: float) -> float:
    """Largest distance for which the sampled transfer function is not aliased."""
    return n * spacing**2 / wavelength


def fresnel_propagate(field: np.ndarray, z: float, wavelength: float, spacing: float) -> np.ndarray:
    """
    Paraxial Fresnel propagation over ``z`` by the transfer-function method.

    The last axis of ``field`` is a periodic grid of the given spacing. The
    operation is unitary, so total power is conserved.
    """
    field = np.asarray(field, dtype=complex)
    if z == 0:
        return field.copy()
    n = field.shape[-1]
    zmax = fresnel_max_distance(n, spacing, wavelength)
    if abs(z) > zmax:
        raise PreconditionError(
            f"Fresnel transfer function undersampled: |z| = {abs(z):.4g} m exceeds the max valid "
            f"z = {zmax:.4g} m for {n} samples at {spacing:.3g} m"
        )
    f = np.fft.fftfreq(n, spacing)
    h = np.exp(-1j * math.pi * wavelength * z * f**2)
    return np.fft.ifft(np.fft.fft(field, axis=-1) * h, axis=-1)


@dataclass(frozen=True)
class _Stage:
    """Precomputed discrete Fresnel sum between two windows."""

    pre: np.ndarray
    post: np.ndarray
    transform: CZT

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.transform(u * self.pre, axis=-1) * self.post


def _stage(grid_in: SampledGrid, grid_out: SampledGrid, z: float, wavelength: float) -> _Stage:
    k = 2 * math.pi / wavelength
    h1, h2 = grid_in.spacing, grid_out.spacing
    a1, a2 = grid_in.origin, grid_out.origin
    x1, x2 = grid_in.points, grid_out.points
    pre = np.exp(1j * k * x1**2 / (2 * z))
    post = (h1 / np.sqrt(1j * wavelength * z)) * np.exp(1j * k * x2**2 / (2 * z) - 1j * k * a1 * x2 / z)
    transform = CZT(grid_in.n, grid_out.n, w=np.exp(-1j * k * h1 * h2 / z), a=np.exp(1j * k * h1 * a2 / z))
    return _Stage(pre, post, transform)


def fresnel_window(field: np.ndarray, grid_in: SampledGrid, grid_out: SampledGrid, z: float,
                   wavelength: float) -> np.ndarray:
    """
    Discrete Fresnel sum from the samples on ``grid_in`` to ``grid_out``.

    Unlike :func:`fresnel_propagate` the grids are not periodic and may have
    different spacings and extents; light leaving ``grid_out`` is lost.
    """
    if z <= 0:
        raise ConfigError("windowed propagation needs z > 0", key="z")
    _check_kernel(grid_in, grid_out, z, wavelength, "propagation")
    return _stage(grid_in, grid_out, z, wavelength)(np.asarray(field, dtype=complex))


def _check_kernel(grid_in: SampledGrid, grid_out: SampledGrid, z: float, wavelength: float,
                  name: str, lens_term: float = 0.0):
    # local angle of the kernel exp(i k (x2 - x1)^2 / 2z) must stay below the sampling band
    reach_in = max(abs(grid_in.start), abs(grid_in.stop))
    reach_out = max(abs(grid_out.start), abs(grid_out.stop))
    if lens_term:
        angle = reach_in * abs(1.0 / z - lens_term) + reach_out / z
    else:
        angle = (reach_in + reach_out) / z
    band = wavelength / (2 * grid_in.spacing)
    if angle > band:
        raise PreconditionError(
            f"{name}: kernel angle {angle:.3g} rad exceeds the sampling band {band:.3g} rad; "
            f"reduce the spacing to {wavelength / (2 * angle):.3g} m or less"
        )


@dataclass(frozen=True)
class PropagationPlan:
    """
    Geometry of both arms.

    Arm a is free propagation over ``z_a`` from the source to sensor S_a.
    Arm b propagates over ``z_b`` to the mask, over ``l1 - z_b`` to a thin
    lens of focal ``focal`` and slab aperture ``aperture`` (half-width), and
    over ``l2`` to S_b, where the lens images the source with magnification
    ``l2 / l1``.
    """

    wavelength: float
    spacing: float
    z_a: float
    z_b: float
    l1: float
    l2: float
    focal: float
    aperture: float
    source_half_width: float
    arm_a: tuple = field(init=False)
    arm_b: tuple = field(init=False)

    def __post_init__(self):
        for name in ("wavelength", "spacing", "z_a", "z_b", "l1", "l2", "focal", "aperture",
                     "source_half_width"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"must be positive and finite, got {v!r}", key=name)
        if self.z_b >= self.l1:
            raise ConfigError(f"mask at z_b = {self.z_b:.4g} m must lie before the lens "
                              f"(l1 = {self.l1:.4g} m)", key="z_b")
        if abs(1 / self.l1 + 1 / self.l2 - 1 / self.focal) * self.focal > 1e-12:
            raise ConfigError("l1, l2 do not satisfy the lens equation", key="l1")
        object.__setattr__(self, "arm_a", (("fresnel", self.z_a),))
        object.__setattr__(self, "arm_b", (("fresnel", self.z_b), ("mask", None),
                                           ("fresnel", self.l1 - self.z_b),
                                           ("lens", self.focal), ("fresnel", self.l2)))

    @property
    def magnification(self) -> float:
        return self.l2 / self.l1

    @classmethod
    def from_scenario(cls, cfg: ScenarioConfig, *, oversample: int = 3,
                      source_widths: float = 5.0) -> "PropagationPlan":
        """
        Plan for ``cfg``: the simulation spacing is ``pixel_dx / oversample``
        and the lens sits at l1 = f (1 + 1/M), l2 = M l1.
        """
        if int(oversample) != oversample or oversample < 1:
            raise ConfigError("oversample must be a positive integer", key="oversample")
        m = abs(cfg.magnification)
        l1 = cfg.lens_focal * (1.0 + 1.0 / m)
        return cls(wavelength=cfg.wavelength, spacing=cfg.pixel_dx / oversample, z_a=cfg.z_a,
                   z_b=cfg.z_b, l1=l1, l2=m * l1, focal=cfg.lens_focal, aperture=cfg.na_b * l1,
                   source_half_width=source_widths * cfg.source_sigma)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameStack:
    """
    Recorded intensities, one row per frame.

    ``frame_ids`` are the substream indices of the rows; row ``i`` was drawn
    from ``frame_rng(seed, frame_ids[i])``.
    """

    intensities_a: np.ndarray
    intensities_b: np.ndarray
    grid_a: SampledGrid
    grid_b: SampledGrid
    seed: int
    frame_ids: np.ndarray
    scenario: ScenarioConfig
    mask: str = ""

    def __post_init__(self):
        ia = np.asarray(self.intensities_a, dtype=np.float32)
        ib = np.asarray(self.intensities_b, dtype=np.float32)
        ids = np.asarray(self.frame_ids, dtype=np.int64)
        if ia.ndim != 2 or ib.ndim != 2 or ia.shape[0] != ib.shape[0] or ids.shape != (ia.shape[0],):
            raise ConfigError("frame arrays have inconsistent shapes", key="frames")
        if ia.shape[1] != self.grid_a.n or ib.shape[1] != self.grid_b.n:
            raise ConfigError("frame width does not match the sensor grid", key="frames")
        if np.any(ia < 0) or np.any(ib < 0) or not (np.all(np.isfinite(ia)) and np.all(np.isfinite(ib))):
            raise PreconditionError("intensities must be finite and non-negative")
        for name, v in (("intensities_a", ia), ("intensities_b", ib), ("frame_ids", ids)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def n_frames(self) -> int:
        return int(self.intensities_a.shape[0])

    def swapped(self) -> "FrameStack":
        """Same frames with the two sensors exchanged."""
        return FrameStack(self.intensities_b, self.intensities_a, self.grid_b, self.grid_a,
                          self.seed, self.frame_ids, self.scenario, self.mask)

    def select(self, rows) -> "FrameStack":
        """Frames picked by a slice or index array."""
        return FrameStack(self.intensities_a[rows], self.intensities_b[rows], self.grid_a,
                          self.grid_b, self.seed, self.frame_ids[rows], self.scenario, self.mask)

    def head(self, n: int) -> "FrameStack":
        return self.select(slice(0, n))

    def extended(self, other: "FrameStack") -> "FrameStack":
        """Concatenate frames of the same run."""
        if (other.seed != self.seed or other.grid_a != self.grid_a or other.grid_b != self.grid_b
                or other.scenario != self.scenario or other.mask != self.mask):
            raise ConfigError("cannot extend a frame stack with frames of a different run")
        if np.intersect1d(self.frame_ids, other.frame_ids).size:
            raise ConfigError("frame stacks share frame ids")
        return FrameStack(np.concatenate([self.intensities_a, other.intensities_a]),
                          np.concatenate([self.intensities_b, other.intensities_b]),
                          self.grid_a, self.grid_b, self.seed,
                          np.concatenate([self.frame_ids, other.frame_ids]), self.scenario, self.mask)


def fine_grid(pixels: int, pixel: float, factor: int) -> SampledGrid:
    """Simulation samples whose blocks of ``factor`` make the centered pixel grid."""
    return SampledGrid.centered(pixels * factor, pixel / factor)


def _bin_factor(pixel: float, spacing: float, name: str) -> int:
    f = pixel / spacing
    if abs(f - round(f)) > 1e-6 * f or round(f) < 1:
        raise ConfigError(f"pixel {pixel:.4g} m is not a multiple of the simulation spacing "
                          f"{spacing:.4g} m", key=name)
    return int(round(f))


class _Simulator:
    """Both arms compiled for fixed windows."""

    def __init__(self, cfg: ScenarioConfig, mask: ApertureMask, plan: PropagationPlan,
                 fine_a: SampledGrid, fine_b: SampledGrid):
        if abs(plan.magnification - abs(cfg.magnification)) > 1e-12 * abs(cfg.magnification):
            raise ConfigError(f"plan magnification {plan.magnification:.6g} does not match the "
                              f"scenario ({cfg.magnification:.6g})", key="magnification")
        h = plan.spacing
        lam = plan.wavelength
        self.source = SourceProfile(cfg.source_sigma)
        self.grid_s = SampledGrid.covering(plan.source_half_width, h)
        reach = max(abs(mask.left), abs(mask.right)) + 2 * h
        self.grid_m = SampledGrid.covering(reach, h)
        self.grid_l = SampledGrid.covering(plan.aperture, h)

        _check_kernel(self.grid_s, fine_a, plan.z_a, lam, "arm a")
        _check_kernel(self.grid_s, self.grid_m, plan.z_b, lam, "arm b, source to mask")
        _check_kernel(self.grid_m, self.grid_l, plan.l1 - plan.z_b, lam, "arm b, mask to lens")
        _check_kernel(self.grid_l, fine_b, plan.l2, lam, "arm b, lens to sensor",
                      lens_term=1.0 / plan.focal)

        self.to_a = _stage(self.grid_s, fine_a, plan.z_a, lam)
        self.to_mask = _stage(self.grid_s, self.grid_m, plan.z_b, lam)
        self.to_lens = _stage(self.grid_m, self.grid_l, plan.l1 - plan.z_b, lam)
        self.to_b = _stage(self.grid_l, fine_b, plan.l2, lam)
        self.mask = mask.sample(self.grid_m)
        xl = self.grid_l.points
        k = 2 * math.pi / lam
        pupil = (np.abs(xl) <= plan.aperture).astype(float)
        self.lens = pupil * np.exp(-1j * k * xl**2 / (2 * plan.focal))
        self.h = h

    def fields(self, src: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ea = self.to_a(src)
        eb = self.to_b(self.to_lens(self.to_mask(src) * self.mask) * self.lens)
        return ea, eb


def _block_sum(v: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return v
    return v.reshape(v.shape[:-1] + (v.shape[-1] // factor, factor)).sum(axis=-1)


def generate_frames(cfg: ScenarioConfig, mask: ApertureMask, plan: PropagationPlan | None = None,
                    n_frames: int = 1000, seed: int = 0, *, pixels_a: int = 128, pixels_b: int = 64,
                    pixel_a: float | None = None, pixel_b: float | None = None, start: int = 0,
                    workers: int = 1, chunk: int = 32) -> FrameStack:
    """
    Simulate ``n_frames`` frames with ids ``start .. start + n_frames - 1``.

    Sensor S_a has ``pixels_a`` pixels of ``pixel_a`` (default ``pixel_dx``),
    S_b has ``pixels_b`` pixels of ``pixel_b`` (default ``pixel_du``), both
    centered on the optical axis. Pixel values are the energy collected over
    the pixel. The output does not depend on ``workers``.

    Parameters
    ----------
    chunk : int
        Frames propagated together. Chunks are aligned to multiples of
        ``chunk`` in frame id, so resuming a run reproduces the same batches.
    """
    if int(n_frames) != n_frames or n_frames < 2:
        raise ConfigError(f"n_frames must be an integer >= 2, got {n_frames!r}", key="n_frames")
    plan = PropagationPlan.from_scenario(cfg) if plan is None else plan
    if abs(plan.z_b - cfg.z_b) > 1e-12 or abs(plan.z_a - cfg.z_a) > 1e-12:
        raise ConfigError("propagation plan distances do not match the scenario", key="plan")
    pixel_a = cfg.pixel_dx if pixel_a is None else pixel_a
    pixel_b = cfg.pixel_du if pixel_b is None else pixel_b
    fa = _bin_factor(pixel_a, plan.spacing, "pixel_a")
    fb = _bin_factor(pixel_b, plan.spacing, "pixel_b")
    fine_a = fine_grid(pixels_a, pixel_a, fa)
    fine_b = fine_grid(pixels_b, pixel_b, fb)
    sim = _Simulator(cfg, mask, plan, fine_a, fine_b)

    first, last = int(start), int(start) + int(n_frames)
    bounds = []
    lo = first
    while lo < last:
        hi = min(last, (lo // chunk + 1) * chunk)
        bounds.append((lo, hi))
        lo = hi

    def run(b):
        lo, hi = b
        src = np.stack([sample_source_field(sim.source, sim.grid_s, frame_rng(seed, f))
                        for f in range(lo, hi)])
        ea, eb = sim.fields(src)
        ia = _block_sum((ea.real**2 + ea.imag**2) * sim.h, fa)
        ib = _block_sum((eb.real**2 + eb.imag**2) * sim.h, fb)
        return ia.astype(np.float32), ib.astype(np.float32)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    ia = np.concatenate([p[0] for p in parts])
    ib = np.concatenate([p[1] for p in parts])
    return FrameStack(ia, ib, SampledGrid.centered(pixels_a, pixel_a),
                      SampledGrid.centered(pixels_b, pixel_b), int(seed),
                      np.arange(first, last), cfg, _describe(mask))


def _describe(mask: ApertureMask) -> str:
    try:
        return mask_spec(mask)
    except ConfigError:
        return ";".join(f"{s.center!r}:{s.width!r}:{s.transmission!r}" for s in mask.slits)


def g2_zero(intensity: np.ndarray) -> float:
    """Normalized second moment <I^2> / <I>^2 of a series of intensities."""
    i = np.asarray(intensity, dtype=float)
    return float(np.mean(i**2) / np.mean(i) ** 2)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


class _Neumaier:
    """Compensated elementwise accumulator."""

    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)

    def add(self, x):
        t = self.s + x
        big = np.abs(self.s) >= np.abs(x)
        self.c += np.where(big, (self.s - t) + x, (x - t) + self.s)
        self.s = t

    @property
    def value(self):
        return self.s + self.c


def estimate_gamma(stack: FrameStack, *, chunk: int = 1024, workers: int = 1) -> CorrelationTensor:
    """
    Sample covariance of intensity fluctuations between every pixel pair.

    Two passes: the per-pixel means first, then the centered cross products,
    summed per block of ``chunk`` frames and accumulated with compensated
    summation in a fixed block order.
    """
    n = stack.n_frames
    if n < 2:
        raise PreconditionError("at least two frames are needed")
    if n < HIGH_VARIANCE_FRAMES:
        warnings.warn(f"only {n} frames: the correlation estimate is high-variance",
                      RuntimeWarning, stacklevel=2)
    a = stack.intensities_a
    b = stack.intensities_b
    blocks = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]

    sa, sb = _Neumaier(a.shape[1]), _Neumaier(b.shape[1])
    for s in blocks:
        sa.add(a[s].sum(axis=0, dtype=np.float64))
        sb.add(b[s].sum(axis=0, dtype=np.float64))
    ma, mb = sa.value / n, sb.value / n

    def cross(s):
        return (a[s].astype(np.float64) - ma).T @ (b[s].astype(np.float64) - mb)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(cross, blocks))
    else:
        parts = [cross(s) for s in blocks]
    acc = _Neumaier((a.shape[1], b.shape[1]))
    for p in parts:
        acc.add(p)
    return CorrelationTensor(acc.value / (n - 1), stack.grid_a, stack.grid_b, stack.scenario,
                             "monte-carlo")


# ---------------------------------------------------------------------------
# Post-processing and binning
# ---------------------------------------------------------------------------


def default_lowpass(cfg: ScenarioConfig, mask: ApertureMask) -> float:
    """
    Gaussian low-pass width at twice the mask's design frequency 1/pitch,
    expressed on sensor S_a, where the object appears scaled by z_a/z_b.
    """
    return 2.0 * cfg.z_b / (cfg.z_a * mask.pitch)


def _filter(values: np.ndarray, spacings, sigmas, threshold: float) -> np.ndarray:
    spec = np.fft.fftn(values)
    for axis, (h, s) in enumerate(zip(spacings, sigmas)):
        if s is None or math.isinf(s):
            continue
        if s <= 0:
            raise ConfigError("lowpass_sigma must be positive", key="lowpass_sigma")
        f = np.fft.fftfreq(values.shape[axis], h)
        shape = [1] * values.ndim
        shape[axis] = -1
        spec = spec * np.exp(-(f**2) / (2 * s**2)).reshape(shape)
    if threshold > 0:
        mag = np.abs(spec)
        spec = np.where(mag < threshold * mag.max(), 0, spec)
    out = np.fft.ifftn(spec).real
    return np.clip(out, 0, None)


def postprocess(obj, lowpass_sigma=None, threshold: float = 0.01):
    """
    Gaussian low-pass filtering and thresholding in the Fourier domain.

    The spectrum is multiplied by exp(-f^2 / 2 sigma^2), coefficients below
    ``threshold`` times the largest magnitude are zeroed, and negatives of the
    inverse transform are clamped to zero.

    Parameters
    ----------
    obj : ImageProfile or CorrelationTensor
    lowpass_sigma : float, pair or None
        Width in cycles per metre of the sampling grid. For a tensor a scalar
        filters the S_a axis only; a pair gives (S_a, S_b) widths. ``None`` or
        ``inf`` disables low-pass filtering on that axis.
    threshold : float
        Fraction of the peak spectral magnitude, in [0, 1).
    """
    if not (0 <= threshold < 1):
        raise ConfigError("threshold must lie in [0, 1)", key="threshold")
    if isinstance(obj, ImageProfile):
        sig = lowpass_sigma[0] if isinstance(lowpass_sigma, (tuple, list)) else lowpass_sigma
        vals = _filter(np.asarray(obj.values), [obj.grid.spacing], [sig], threshold)
        return ImageProfile(vals, obj.grid, obj.kind, obj.magnification, obj.pixel_rescale,
                            (obj.note + "; post-processed").lstrip("; "), obj.clipped_fraction)
    if isinstance(obj, CorrelationTensor):
        sig = tuple(lowpass_sigma) if isinstance(lowpass_sigma, (tuple, list)) else (lowpass_sigma, None)
        vals = _filter(np.asarray(obj.values), [obj.grid_a.spacing, obj.grid_b.spacing], sig,
                       threshold)
        return CorrelationTensor(vals, obj.grid_a, obj.grid_b, obj.scenario, obj.provenance)
    raise ConfigError(f"cannot post-process {type(obj).__name__}")


def bin_grid(grid: SampledGrid, factor: int) -> SampledGrid:
    """Grid of the block sums of ``factor`` consecutive cells (trailing cells dropped)."""
    n = grid.n // factor
    return SampledGrid(n, grid.spacing * factor, grid.origin + (factor - 1) / 2 * grid.spacing)


def bin_pixels(data, factor: int, axis: int = -1):
    """
    Sum blocks of ``factor`` pixels.

    ``data`` is an :class:`ImageProfile` or an array (for frames, bin along
    ``axis``). Trailing pixels that do not fill a block are dropped with a
    warning.
    """
    if int(factor) != factor or factor < 1:
        raise ConfigError(f"bin factor must be an integer >= 1, got {factor!r}", key="factor")
    factor = int(factor)
    profile = data if isinstance(data, ImageProfile) else None
    v = np.asarray(profile.values if profile is not None else data)
    v = np.moveaxis(v, axis, -1)
    n = v.shape[-1]
    keep = (n // factor) * factor
    if keep == 0:
        raise ConfigError(f"bin factor {factor} exceeds the {n} available pixels", key="factor")
    if keep != n:
        warnings.warn(f"bin_pixels: dropping {n - keep} trailing pixels", RuntimeWarning,
                      stacklevel=2)
    out = np.moveaxis(_block_sum(v[..., :keep], factor), -1, axis)
    if profile is None:
        return out
    return ImageProfile(out, bin_grid(profile.grid, factor), profile.kind, profile.magnification,
                        profile.pixel_rescale, profile.note, profile.clipped_fraction)
