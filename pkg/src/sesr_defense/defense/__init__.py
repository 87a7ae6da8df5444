"""Training-free preprocessing defense."""
from .jpeg import jpeg_round_trip, quant_table
from .pipeline import UPSCALERS, DefenseConfig, defend
from .resample import bicubic_downscale, interpolate_upscale, resize_bicubic, resize_nearest
from .wavelet import Pyramid, dwt2, estimate_noise_sigma, idwt2, soft_threshold, wavelet_denoise

__all__ = [
    "DefenseConfig",
    "Pyramid",
    "UPSCALERS",
    "bicubic_downscale",
    "defend",
    "dwt2",
    "estimate_noise_sigma",
    "idwt2",
    "interpolate_upscale",
    "jpeg_round_trip",
    "quant_table",
    "resize_bicubic",
    "resize_nearest",
    "soft_threshold",
    "wavelet_denoise",
]
