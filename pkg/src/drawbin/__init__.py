"""Binarization of degraded engineering-drawing scans.

Classical thresholding (Otsu, Niblack, Sauvola, MLT, IHEGT), a semi-automatic
ground-truth labeling pipeline, a small encoder-decoder CNN written in numpy,
and an evaluation harness.
"""
from .classical import ThresholdParams, mlt, niblack, otsu, sauvola
from .evaluation import EvalReport, confusion, evaluate_dataset, metrics, psnr
from .ihegt import ihegt_binarize
from .labeling import CwmfParams, HdadPair, cwmf_denoise, fuse, label_pair

__version__ = "0.1.0"

__all__ = [
    "CwmfParams",
    "EvalReport",
    "HdadPair",
    "ThresholdParams",
    "confusion",
    "cwmf_denoise",
    "evaluate_dataset",
    "fuse",
    "ihegt_binarize",
    "label_pair",
    "metrics",
    "mlt",
    "niblack",
    "otsu",
    "psnr",
    "sauvola",
]
