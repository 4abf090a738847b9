"""Synthetic seasonal two-modality scenes and geospatial crop strategies.

Scenes carry a shared latent field rendered into an optical raster and a
speckled SAR raster per season, plus a class label recoverable from the
latent texture orientation. Crop strategies mirror the three region selection
modes: same location, partial overlap, and no overlap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np


class SceneConfigError(ValueError):
    pass


class CropError(ValueError):
    pass


# Class label encodes the orientation of the dominant texture wave. The wave
# frequency is kept low (under one cycle per raster) so patches are smooth and
# masked patches are predictable from visible context at desk scale, while the
# orientation stays invisible to mean-pooled raw-pixel features.
_MAX_CLASSES = 6
_TEX_FREQ = 0.75          # cycles across the full raster
_TEX_FREQ_JITTER = 0.1
_BG_SCALE = 0.3           # weight of the smooth random background field

# per-channel optical mixing coefficients; truncated/cycled to C_O channels
_OPT_GAIN = (1.0, 0.8, -0.6, 0.45, 0.7, -0.35)
_OPT_BIAS = (0.1, -0.05, 0.2, 0.0, -0.1, 0.15)

_SEASON_PHASE_STEP = 0.35      # radians of texture phase drift per season
_SEASON_INTENSITY_AMP = 0.25   # amplitude of the seasonal intensity cycle
_OPT_NOISE = 0.03
_SAR_SPECKLE = 0.05


@dataclass(frozen=True)
class SceneConfig:
    t_seasons: int = 4
    c_opt: int = 4
    c_sar: int = 2
    h_full: int = 64
    w_full: int = 64
    num_classes: int = 4

    def validate(self) -> None:
        if min(self.t_seasons, self.c_opt, self.c_sar, self.h_full, self.w_full) < 1:
            raise SceneConfigError(f"scene dims must be positive: {self}")
        if self.num_classes < 2:
            raise SceneConfigError("num_classes must be >= 2")
        if self.num_classes > _MAX_CLASSES:
            raise SceneConfigError(
                f"num_classes must be <= {_MAX_CLASSES}")


@dataclass
class Scene:
    optical: np.ndarray      # (T, C_O, H, W)
    sar: np.ndarray          # (T, C_R, H, W)
    latent_label: int
    seed: int


def _smooth_background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Low-frequency random field from a handful of seeded Fourier modes."""
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    field = np.zeros((h, w))
    for _ in range(4):
        kx = rng.uniform(-0.75, 0.75)
        ky = rng.uniform(-0.75, 0.75)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.2, 0.5)
        field += amp * np.sin(2 * np.pi * (kx * xx / w + ky * yy / h) + phase)
    return field


def generate_scene(seed: int, config: SceneConfig) -> Scene:
    """Deterministic seasonal scene with cross-modal and cross-season structure."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([982451653, seed]))
    h, w = config.h_full, config.w_full
    t_seasons = config.t_seasons

    label = int(rng.integers(config.num_classes))
    bin_width = np.pi / config.num_classes
    theta = label * bin_width + rng.uniform(-0.25, 0.25) * bin_width
    freq = _TEX_FREQ + rng.uniform(-_TEX_FREQ_JITTER, _TEX_FREQ_JITTER)
    phi = rng.uniform(0, 2 * np.pi)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # direction coordinate of the class-defining texture wave
    u = (xx * np.cos(theta) + yy * np.sin(theta)) / w
    background = _smooth_background(rng, h, w)
    season_psi = rng.uniform(0, 2 * np.pi)

    optical = np.empty((t_seasons, config.c_opt, h, w))
    sar = np.empty((t_seasons, config.c_sar, h, w))
    for t in range(t_seasons):
        z = np.sin(2 * np.pi * freq * u + phi + t * _SEASON_PHASE_STEP)
        z = z + _BG_SCALE * background
        intensity = 1.0 + _SEASON_INTENSITY_AMP * np.sin(
            2 * np.pi * t / max(t_seasons, 2) + season_psi)
        for c in range(config.c_opt):
            gain = _OPT_GAIN[c % len(_OPT_GAIN)]
            bias = _OPT_BIAS[c % len(_OPT_BIAS)]
            noise = _OPT_NOISE * rng.standard_normal((h, w))
            optical[t, c] = intensity * gain * z + bias + noise
        # SAR: pointwise nonlinearity of the latent field with multiplicative
        # speckle, so cross-modal prediction is informative but not trivial
        for c in range(config.c_sar):
            body = np.tanh(1.2 * z) if c % 2 == 0 else z * z - 0.5
            speckle = np.exp(_SAR_SPECKLE * rng.standard_normal((h, w)))
            sar[t, c] = body * speckle
    return Scene(optical=optical, sar=sar, latent_label=label, seed=seed)


# ---------------------------------------------------------------------------
# crop strategies
# ---------------------------------------------------------------------------

class CropKind(str, Enum):
    SAME_LOCATION = "same_location"
    PARTIAL_OVERLAP = "partial_overlap"
    NO_OVERLAP = "no_overlap"


@dataclass(frozen=True)
class CropStrategy:
    kind: CropKind
    min_rate: float = 0.5
    max_rate: float = 1.0

    def validate(self) -> None:
        if self.kind is CropKind.PARTIAL_OVERLAP:
            if not (0 < self.min_rate <= self.max_rate <= 1.0):
                raise CropError(
                    f"partial overlap rates must satisfy 0 < min <= max <= 1, "
                    f"got [{self.min_rate}, {self.max_rate}]")


@dataclass(frozen=True)
class CropWindow:
    season: int
    top: int
    left: int
    height: int
    width: int

    def intersection_area(self, other: "CropWindow") -> int:
        dy = min(self.top + self.height, other.top + other.height) - max(self.top, other.top)
        dx = min(self.left + self.width, other.left + other.width) - max(self.left, other.left)
        return max(dy, 0) * max(dx, 0)


def sample_crops(h_full: int, w_full: int, t_seasons: int, strategy: CropStrategy,
                 crop_h: int, crop_w: int, rng: np.random.Generator) -> list[CropWindow]:
    """One window per season; the same window serves both modalities."""
    strategy.validate()
    if crop_h > h_full or crop_w > w_full:
        raise CropError(f"crop {crop_h}x{crop_w} exceeds raster {h_full}x{w_full}")

    if strategy.kind is CropKind.SAME_LOCATION:
        top = int(rng.integers(0, h_full - crop_h + 1))
        left = int(rng.integers(0, w_full - crop_w + 1))
        return [CropWindow(t, top, left, crop_h, crop_w) for t in range(t_seasons)]

    if strategy.kind is CropKind.PARTIAL_OVERLAP:
        windows = []
        for t in range(t_seasons):
            # rate is a linear side fraction of the full raster
            hh = max(int(round(rng.uniform(strategy.min_rate, strategy.max_rate) * h_full)), 1)
            ww = max(int(round(rng.uniform(strategy.min_rate, strategy.max_rate) * w_full)), 1)
            hh = min(hh, h_full)
            ww = min(ww, w_full)
            top = int(rng.integers(0, h_full - hh + 1))
            left = int(rng.integers(0, w_full - ww + 1))
            windows.append(CropWindow(t, top, left, hh, ww))
        return windows

    # no overlap: tile the raster into disjoint crop-sized cells
    rows = h_full // crop_h
    cols = w_full // crop_w
    if rows * cols < t_seasons:
        raise CropError(
            f"no-overlap needs {t_seasons} disjoint {crop_h}x{crop_w} crops; "
            f"raster {h_full}x{w_full} admits only {rows * cols}")
    cells = rng.choice(rows * cols, size=t_seasons, replace=False)
    return [CropWindow(t, int(c // cols) * crop_h, int(c % cols) * crop_w, crop_h, crop_w)
            for t, c in enumerate(cells)]


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C, h, w) array (align-corners sampling)."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.linspace(0, h - 1, out_h)
    xs = np.linspace(0, w - 1, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def extract_crop(raster: np.ndarray, window: CropWindow, crop_h: int,
                 crop_w: int) -> np.ndarray:
    """Cut a (C, H, W) season raster to the window and resample to crop size."""
    patch = raster[:, window.top:window.top + window.height,
                   window.left:window.left + window.width]
    return _bilinear_resize(patch, crop_h, crop_w)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray   # (C,)

    def validate(self) -> None:
        if np.any(self.std <= 0):
            raise SceneConfigError("channel std must be positive")


def compute_channel_stats(rasters: np.ndarray) -> ChannelStats:
    """Per-channel stats over a (..., C, H, W) calibration stack."""
    axes = tuple(i for i in range(rasters.ndim) if i != rasters.ndim - 3)
    mean = rasters.mean(axis=axes)
    std = rasters.std(axis=axes)
    std = np.where(std <= 0, np.nan, std)
    if np.any(np.isnan(std)):
        raise SceneConfigError("degenerate channel with zero variance")
    return ChannelStats(mean=mean, std=std)


def normalize(raster: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Standardize a (C, H, W) raster per channel."""
    stats.validate()
    return (raster - stats.mean.reshape(-1, 1, 1)) / stats.std.reshape(-1, 1, 1)


def denormalize(raster: np.ndarray, stats: ChannelStats) -> np.ndarray:
    stats.validate()
    return raster * stats.std.reshape(-1, 1, 1) + stats.mean.reshape(-1, 1, 1)


# ---------------------------------------------------------------------------
# binary scene container
# ---------------------------------------------------------------------------

_MAGIC = b"SEAMO1"
_DTYPE_F64 = 1


class ContainerError(ValueError):
    pass


def save_scene(scene: Scene, path) -> None:
    """Little-endian container: magic, dims, dtype code, raw payloads."""
    t, c_o, h, w = scene.optical.shape
    c_r = scene.sar.shape[1]
    header = struct.pack("<6sB5IqI", _MAGIC, _DTYPE_F64, t, c_o, c_r, h, w,
                         int(scene.seed), int(scene.latent_label))
    with open(path, "wb") as f:
        f.write(header)
        f.write(scene.optical.astype("<f8").tobytes())
        f.write(scene.sar.astype("<f8").tobytes())


def load_scene(path) -> Scene:
    head_size = struct.calcsize("<6sB5IqI")
    with open(path, "rb") as f:
        head = f.read(head_size)
        if len(head) < head_size:
            raise ContainerError("scene file truncated in header")
        magic, dtype, t, c_o, c_r, h, w, seed, label = struct.unpack("<6sB5IqI", head)
        if magic != _MAGIC:
            raise ContainerError(f"bad magic {magic!r}")
        if dtype != _DTYPE_F64:
            raise ContainerError(f"unknown dtype code {dtype}")
        n_opt = t * c_o * h * w
        n_sar = t * c_r * h * w
        payload = f.read((n_opt + n_sar) * 8)
        if len(payload) != (n_opt + n_sar) * 8:
            raise ContainerError("scene file truncated in payload")
    flat = np.frombuffer(payload, dtype="<f8")
    optical = flat[:n_opt].reshape(t, c_o, h, w).copy()
    sar = flat[n_opt:].reshape(t, c_r, h, w).copy()
    return Scene(optical=optical, sar=sar, latent_label=int(label), seed=int(seed))
