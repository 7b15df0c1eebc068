"""Micro-scanning light field simulation, calibration, registration, fusion and restoration."""

from .calibrate import decode, detect_centers, fit_grid
from .core import LensletGrid, LightField, RawCapture, ShiftSchedule, default_lytro_schedule, schedule_subset
from .delaunay import delaunay_triangulate
from .errors import (
    CalibrationError,
    ConfigurationError,
    DegenerateSignalError,
    DomainError,
    FitQualityError,
    GeometryError,
    LFError,
    RegistrationError,
    StepSizeError,
)
from .fusion import FusionConfig, fuse
from .metrics import ResolutionReport, contrast_profile, frequency_cutoff, psnr, ssim
from .register import RegistrationConfig, ShiftEstimate, estimate_lf_shift, phase_correlate
from .restore import PsfModel, SrConfig, bayesian_sr, richardson_lucy, wiener_deconvolve
from .sensorsim import CaptureConfig, SceneModel, make_test_chart, render_white_image, simulate_capture

__version__ = "0.1.0"
