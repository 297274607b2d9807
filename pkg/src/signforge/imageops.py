"""Deterministic raster primitives used by the synthesizer.

All operations are pure functions of their inputs (plus an explicit RNG
where noted): identical inputs always produce identical rasters. Images
are 8-bit RGB numpy arrays of shape (H, W, 3); template carriers pair an
RGB raster with a float alpha plane in [0, 1]. Every photometric op
rounds and clamps to [0, 255] -- there is no wraparound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import GeometryError


@dataclass
class Rgba:
    """RGB raster plus per-pixel opacity in [0, 1]."""

    rgb: np.ndarray    # uint8, (H, W, 3)
    alpha: np.ndarray  # float32, (H, W)

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be (H, W, 3), got {self.rgb.shape}")
        if self.alpha.shape != self.rgb.shape[:2]:
            raise ValueError(
                f"alpha shape {self.alpha.shape} does not match rgb {self.rgb.shape[:2]}"
            )

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def nominal_size(self) -> int:
        return max(self.width, self.height)


@dataclass
class PerspectiveJitter:
    """Per-corner pixel offsets, ordered TL, TR, BR, BL."""

    corner_offsets: np.ndarray  # float, (4, 2) as (dx, dy)

    def __post_init__(self):
        self.corner_offsets = np.asarray(self.corner_offsets, dtype=np.float64)
        if self.corner_offsets.shape != (4, 2):
            raise ValueError("corner_offsets must have shape (4, 2)")

    @classmethod
    def zero(cls) -> "PerspectiveJitter":
        return cls(np.zeros((4, 2)))


def _round_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def adjust_brightness_contrast(img: np.ndarray, gain: float, offset: float) -> np.ndarray:
    """Map every channel value v to clamp(round(gain*v + offset), 0, 255)."""
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    return _round_u8(img.astype(np.float32) * np.float32(gain) + np.float32(offset))


def scale_gain_template(tmpl: Rgba, gain: float) -> Rgba:
    """Apply the background's gain to the template rgb; alpha untouched."""
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    rgb = _round_u8(tmpl.rgb.astype(np.float32) * np.float32(gain))
    return Rgba(rgb, tmpl.alpha.copy())


def _quad_is_convex(quad: np.ndarray) -> bool:
    """True when the 4 points form a strictly convex, non-degenerate quad."""
    crosses = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        crosses.append(a[0] * b[1] - a[1] * b[0])
    crosses = np.asarray(crosses)
    if np.any(np.abs(crosses) < 1e-9):
        return False
    return bool(np.all(crosses > 0) or np.all(crosses < 0))


def warp_homography(
    width: int,
    height: int,
    persp: PerspectiveJitter,
    theta_deg: float,
    scale_px: float,
) -> tuple[np.ndarray, tuple[int, int], np.ndarray]:
    """Homography for the perspective -> rotate -> scale chain.

    Corners are taken at pixel centers. Rotation is about the centroid of
    the jittered quad; the uniform scale is chosen so the final quad's
    larger extent spans ``scale_px`` pixels. Returns (H, (out_w, out_h),
    projected corner quad in output coordinates).
    """
    src = np.array(
        [[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]],
        dtype=np.float64,
    )
    jittered = src + persp.corner_offsets
    if not _quad_is_convex(jittered):
        raise GeometryError("perspective corners form a non-convex or degenerate quad")

    persp_mat = cv2.getPerspectiveTransform(
        src.astype(np.float32), jittered.astype(np.float32)
    ).astype(np.float64)

    cx, cy = jittered.mean(axis=0)
    rad = math.radians(theta_deg)
    c, s = math.cos(rad), math.sin(rad)
    rot = np.array(
        [
            [c, -s, cx - c * cx + s * cy],
            [s, c, cy - s * cx - c * cy],
            [0.0, 0.0, 1.0],
        ]
    )

    rotated = _project(rot @ persp_mat, src)
    extent = max(rotated[:, 0].max() - rotated[:, 0].min(),
                 rotated[:, 1].max() - rotated[:, 1].min())
    if extent <= 0:
        raise GeometryError("transformed quad has zero extent")
    factor = (scale_px - 1.0) / extent
    scale_mat = np.diag([factor, factor, 1.0])

    scaled = _project(scale_mat @ rot @ persp_mat, src)
    shift = np.array(
        [[1.0, 0.0, -scaled[:, 0].min()], [0.0, 1.0, -scaled[:, 1].min()], [0.0, 0.0, 1.0]]
    )
    hmat = shift @ scale_mat @ rot @ persp_mat

    quad = _project(hmat, src)
    out_w = int(math.ceil(quad[:, 0].max())) + 1
    out_h = int(math.ceil(quad[:, 1].max())) + 1
    return hmat, (out_w, out_h), quad


def _project(hmat: np.ndarray, points: np.ndarray) -> np.ndarray:
    homo = np.concatenate([points, np.ones((len(points), 1))], axis=1) @ hmat.T
    return homo[:, :2] / homo[:, 2:3]


def warp_template(
    tmpl: Rgba, persp: PerspectiveJitter, theta_deg: float, scale_px: float
) -> Rgba:
    """Warp rgb and alpha with one map; pixels outside the quad get alpha 0.

    The output canvas is the tight bounding box of the transformed quad.
    Interpolation is bilinear on both planes.
    """
    if scale_px < 8:
        raise ValueError(f"scale_px must be >= 8, got {scale_px}")
    hmat, (out_w, out_h), _ = warp_homography(
        tmpl.width, tmpl.height, persp, theta_deg, scale_px
    )
    stack = np.dstack([tmpl.rgb.astype(np.float32), tmpl.alpha.astype(np.float32)])
    warped = cv2.warpPerspective(
        stack,
        hmat,
        (out_w, out_h),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )
    rgb = _round_u8(warped[:, :, :3])
    alpha = np.clip(warped[:, :, 3], 0.0, 1.0).astype(np.float32)
    return Rgba(rgb, alpha)


def alpha_support_bbox(alpha: np.ndarray) -> tuple[int, int, int, int] | None:
    """Tight (x, y, w, h) box around pixels with alpha > 0, or None."""
    ys, xs = np.nonzero(alpha > 0)
    if len(xs) == 0:
        return None
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return x0, y0, x1 - x0 + 1, y1 - y0 + 1


def crop_to_alpha_support(tmpl: Rgba) -> tuple[Rgba, tuple[int, int]] | None:
    """Crop the carrier to its alpha support; returns (cropped, (dx, dy))."""
    box = alpha_support_bbox(tmpl.alpha)
    if box is None:
        return None
    x, y, w, h = box
    return Rgba(tmpl.rgb[y:y + h, x:x + w].copy(), tmpl.alpha[y:y + h, x:x + w].copy()), (x, y)


def match_region_brightness(tmpl: Rgba, region_mean: float, constant: float) -> Rgba:
    """Shift template rgb by (region_mean - constant); alpha untouched."""
    shift = np.float32(region_mean - constant)
    rgb = _round_u8(tmpl.rgb.astype(np.float32) + shift)
    return Rgba(rgb, tmpl.alpha.copy())


def add_jitter(tmpl: Rgba, amplitude: float, rng: np.random.Generator) -> Rgba:
    """Add independent U(-amplitude, amplitude) noise to every rgb value."""
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    if amplitude == 0:
        return Rgba(tmpl.rgb.copy(), tmpl.alpha.copy())
    noise = rng.uniform(-amplitude, amplitude, size=tmpl.rgb.shape)
    rgb = _round_u8(tmpl.rgb.astype(np.float64) + noise)
    return Rgba(rgb, tmpl.alpha.copy())


def fade_borders(tmpl: Rgba, fade_frac: float) -> Rgba:
    """Linearly ramp alpha from 0 at the support boundary to 1 at depth
    fade_frac * nominal_size; rgb untouched.

    Depth is the exact Euclidean distance to the nearest transparent pixel
    (the canvas border counts as transparent), so the outermost support
    ring lands at ramp 0.
    """
    if not 0 <= fade_frac < 0.5:
        raise ValueError(f"fade_frac must be in [0, 0.5), got {fade_frac}")
    if fade_frac == 0:
        return Rgba(tmpl.rgb.copy(), tmpl.alpha.copy())
    band = fade_frac * tmpl.nominal_size
    support = np.pad(tmpl.alpha > 0, 1, constant_values=False)
    dist = distance_transform_edt(support)[1:-1, 1:-1]
    ramp = np.clip((dist - 1.0) / band, 0.0, 1.0).astype(np.float32)
    return Rgba(tmpl.rgb.copy(), (tmpl.alpha * ramp).astype(np.float32))


def composite(
    background: np.ndarray, tmpl: Rgba, position: tuple[int, int]
) -> np.ndarray:
    """Alpha-blend the template over the background at top-left (x, y).

    The template box must fit entirely inside the background; asking for
    an out-of-bounds placement is a caller bug, not a recoverable state.
    """
    x, y = position
    h, w = tmpl.alpha.shape
    bg_h, bg_w = background.shape[:2]
    if x < 0 or y < 0 or x + w > bg_w or y + h > bg_h:
        raise ValueError(
            f"placement ({x}, {y}, {w}, {h}) exceeds background {bg_w}x{bg_h}"
        )
    out = background.copy()
    region = out[y:y + h, x:x + w].astype(np.float32)
    a = tmpl.alpha[:, :, None]
    blended = a * tmpl.rgb.astype(np.float32) + (1.0 - a) * region
    out[y:y + h, x:x + w] = _round_u8(blended)
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian sampled at integer offsets, radius ceil(3*sigma)."""
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian with clamp-to-edge borders; sigma=0 is identity.

    uint8 inputs are filtered in float and rounded back; float inputs stay
    float at full precision.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    kernel = gaussian_kernel(sigma)
    if img.dtype == np.uint8:
        filtered = cv2.sepFilter2D(
            img.astype(np.float32), -1, kernel, kernel, borderType=cv2.BORDER_REPLICATE
        )
        return _round_u8(filtered)
    return cv2.sepFilter2D(img, -1, kernel, kernel, borderType=cv2.BORDER_REPLICATE)


def region_mean(img: np.ndarray, box: tuple[int, int, int, int]) -> float:
    """Arithmetic mean over all channels and pixels of the box (x, y, w, h)."""
    x, y, w, h = box
    bg_h, bg_w = img.shape[:2]
    if w <= 0 or h <= 0:
        raise ValueError(f"box must have positive size, got {box}")
    if x < 0 or y < 0 or x + w > bg_w or y + h > bg_h:
        raise ValueError(f"box {box} exceeds image {bg_w}x{bg_h}")
    return float(img[y:y + h, x:x + w].mean())
