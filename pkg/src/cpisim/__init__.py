"""Correlation plenoptic imaging with chaotic light: analytic and Monte-Carlo toolkit."""

from .core import (ApertureMask, SampledGrid, ScenarioConfig, Slit, SourceProfile,
                   calibrate_source_na, derived_quantities, load_scenario, make_slit_mask,
                   paper_setup, parse_mask_spec)
from .engine import (CorrelationTensor, ImageProfile, coherent_psf, coherent_slice, gamma_map,
                     ghost_image, image_width_alpha, incoherent_psf, optimal_alpha, refocus)
from .errors import ConfigError, CPIError, FormatError, MaskOverlapError, PreconditionError

__version__ = "0.1.0"

__all__ = [
    "ApertureMask", "SampledGrid", "ScenarioConfig", "Slit", "SourceProfile",
    "calibrate_source_na", "derived_quantities", "load_scenario", "make_slit_mask",
    "paper_setup", "parse_mask_spec",
    "CorrelationTensor", "ImageProfile", "coherent_psf", "coherent_slice", "gamma_map",
    "ghost_image", "image_width_alpha", "incoherent_psf", "optimal_alpha", "refocus",
    "ConfigError", "CPIError", "FormatError", "MaskOverlapError", "PreconditionError",
]
