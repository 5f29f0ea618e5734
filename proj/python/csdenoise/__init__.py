"""Complex-spectrogram audio denoiser: STFT images in, a complex Swin-style
encoder-decoder, image-quality + audio-reconstruction losses, ISTFT out.

The heavy lifting lives in the compiled extension; this package re-exports
the main operations.
"""

from ._core import (
    SpectroImage,
    cabs,
    cmatmul,
    default_config_text,
    denoise,
    istft_audio,
    istft_image_array,
    model_forward,
    read_wav,
    sdr,
    sdr_loss,
    ssim,
    stft_image,
    write_wav,
)

__all__ = [
    "SpectroImage",
    "cabs",
    "cmatmul",
    "default_config_text",
    "denoise",
    "istft_audio",
    "istft_image_array",
    "model_forward",
    "read_wav",
    "sdr",
    "sdr_loss",
    "ssim",
    "stft_image",
    "write_wav",
]
