"""Photometric and geometric augmentation techniques DA1..DA8.

Every technique is a pure function of ``(image, seed)``: the same seed
always produces the same output.  Inputs are ``(H, W, 3)`` uint8 rasters.
All techniques return uint8 except DA1, whose zero-mean unit-variance
output is float64 by nature.  DA2 changes the raster extent and records
the sampled scale factor so box coordinates can be rescaled alongside.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image

from ..errors import DomainError

BRIGHTNESS_MAX_DELTA = 32.0 / 255.0
CONTRAST_RANGE = (0.8, 1.25)
HUE_MAX_DELTA = 0.05
SATURATION_RANGE = (0.8, 1.25)
SCALE_RANGE = (0.5, 2.0)
GRAY_PROBABILITY = 0.1

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class DATechnique(enum.Enum):
    """Augmentation techniques, keyed by their DA codes."""

    DA1 = "normalize"
    DA2 = "random scale"
    DA3 = "random rgb to gray"
    DA4 = "random adjust brightness"
    DA5 = "random adjust contrast"
    DA6 = "random adjust hue"
    DA7 = "random adjust saturation"
    DA8 = "random distort colour"


@dataclass(frozen=True)
class AugmentResult:
    """Augmented raster plus the scale factor when geometry changed."""

    image: np.ndarray
    scale_factor: float | None = None


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DomainError("image must be an (H, W, 3) uint8 array")


def _to_uint8(xf: np.ndarray) -> np.ndarray:
    return np.clip(np.round(xf * 255.0), 0, 255).astype(np.uint8)


def _normalize(image: np.ndarray) -> np.ndarray:
    xf = image.astype(np.float64)
    mean = xf.mean(axis=(0, 1), keepdims=True)
    std = xf.std(axis=(0, 1), keepdims=True)
    return (xf - mean) / np.maximum(std, 1e-12)


def _random_scale(image: np.ndarray, rng: np.random.Generator) -> AugmentResult:
    factor = float(rng.uniform(*SCALE_RANGE))
    h, w = image.shape[:2]
    new_w = max(1, round(w * factor))
    new_h = max(1, round(h * factor))
    resized = Image.fromarray(image, mode="RGB").resize(
        (new_w, new_h), resample=Image.Resampling.BICUBIC
    )
    return AugmentResult(image=np.asarray(resized), scale_factor=factor)


def _rgb_to_gray(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if rng.random() >= GRAY_PROBABILITY:
        return image.copy()
    luma = image.astype(np.float64) @ _LUMA_WEIGHTS
    gray = np.clip(np.round(luma), 0, 255).astype(np.uint8)
    return np.repeat(gray[:, :, np.newaxis], 3, axis=2)


def _brightness(xf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    delta = rng.uniform(-BRIGHTNESS_MAX_DELTA, BRIGHTNESS_MAX_DELTA)
    return np.clip(xf + delta, 0.0, 1.0)


def _contrast(xf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    factor = rng.uniform(*CONTRAST_RANGE)
    mean = xf.mean(axis=(0, 1), keepdims=True)
    return np.clip((xf - mean) * factor + mean, 0.0, 1.0)


def _hue(xf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    delta = rng.uniform(-HUE_MAX_DELTA, HUE_MAX_DELTA)
    hsv = rgb_to_hsv(xf)
    hsv[..., 0] = (hsv[..., 0] + delta) % 1.0
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def _saturation(xf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    factor = rng.uniform(*SATURATION_RANGE)
    hsv = rgb_to_hsv(xf)
    hsv[..., 1] = np.clip(hsv[..., 1] * factor, 0.0, 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def _distort_colour(xf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    xf = _brightness(xf, rng)
    xf = _saturation(xf, rng)
    xf = _hue(xf, rng)
    return _contrast(xf, rng)


def augment(image: np.ndarray, technique: DATechnique, seed: int) -> AugmentResult:
    """Apply one augmentation technique deterministically.

    DA1 ignores the seed (it has no random component).  DA3 converts to
    grayscale with a small probability, so most seeds leave the raster
    unchanged; a grayscale input is a fixed point either way.
    """
    _check_image(image)
    rng = np.random.default_rng(seed)
    if technique is DATechnique.DA1:
        return AugmentResult(image=_normalize(image))
    if technique is DATechnique.DA2:
        return _random_scale(image, rng)
    if technique is DATechnique.DA3:
        return AugmentResult(image=_rgb_to_gray(image, rng))
    xf = image.astype(np.float64) / 255.0
    if technique is DATechnique.DA4:
        out = _brightness(xf, rng)
    elif technique is DATechnique.DA5:
        out = _contrast(xf, rng)
    elif technique is DATechnique.DA6:
        out = _hue(xf, rng)
    elif technique is DATechnique.DA7:
        out = _saturation(xf, rng)
    elif technique is DATechnique.DA8:
        out = _distort_colour(xf, rng)
    else:
        raise DomainError(f"unknown technique: {technique!r}")
    return AugmentResult(image=_to_uint8(out))
