"""Sub-pixel rigid motion between two frames from a shared Gaussian kernel fit."""
from .estimator import GaussianMotionEstimator
from .frame import BitDepth, Frame, load_frame, quantize, save_frame
from .kernel import GaussianKernel, KernelSet, Translation, render
from .loss import LossConfig
from .solver import FitConfig, FitResult, MeasurementReport, fit_pair, measure_motion
from .synthgen import GfsmSpec, GkaSpec, generate_gka, make_gfsm, synth_motion

__version__ = "0.1.0"

__all__ = [
    "BitDepth",
    "FitConfig",
    "FitResult",
    "Frame",
    "GaussianKernel",
    "GaussianMotionEstimator",
    "GfsmSpec",
    "GkaSpec",
    "KernelSet",
    "LossConfig",
    "MeasurementReport",
    "Translation",
    "fit_pair",
    "generate_gka",
    "load_frame",
    "make_gfsm",
    "measure_motion",
    "quantize",
    "render",
    "save_frame",
    "synth_motion",
]
