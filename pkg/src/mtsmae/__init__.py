"""Masked-autoencoder pretraining and encoder-decoder forecasting for
multivariate time series, on a minimal numpy-backed autodiff core."""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
