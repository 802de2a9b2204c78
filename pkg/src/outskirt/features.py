"""Hand-crafted descriptors over grayscale images in [0, 1].

Conventions
-----------
HoG
    Gradients use centred differences ``[-1, 0, 1]`` with edge replication.
    Orientation is unsigned (0-180 degrees) and measured from the +x axis
    (columns grow to the right, rows grow downwards, so a vertical step edge
    has orientation 0 and lands in bin 0).  Each pixel votes its magnitude
    into a single bin ``floor(theta / (180 / orientations))``.  Blocks slide
    one cell at a time and are L2-normalised ``v / sqrt(|v|^2 + eps^2)``.
LBP
    Neighbour ``p`` of ``P`` sits at angle ``2*pi*p/P`` on a circle of radius
    ``R``: ``(row - R sin a, col + R cos a)``, sampled bilinearly.  Bit ``p``
    is set when the neighbour is >= the centre.  Only pixels whose whole
    neighbour circle (rounded outward) lies inside the image are counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

FEATURE_ORDER = ("hog", "lbp", "raw")
LBP_METHODS = ("default", "ror", "uniform", "var")
HOG_EPS = 1e-6
# max variance of values confined to [0, 1]
_VAR_MAX = 0.25


@dataclass(frozen=True)
class HogConfig:
    orientations: int = 9
    pixels_per_cell: tuple = (14, 14)
    cells_per_block: tuple = (1, 1)
    signed: bool = False

    def __post_init__(self):
        if self.orientations < 1:
            raise ConfigError("hog.orientations must be positive")
        if min(self.pixels_per_cell) < 1 or min(self.cells_per_block) < 1:
            raise ConfigError("hog cell and block sizes must be positive")
        if self.signed:
            raise ConfigError("only unsigned (0-180 degree) HoG is supported")


@dataclass(frozen=True)
class LbpConfig:
    points: int = 4
    radius: float = 8.0
    method: str = "uniform"

    def __post_init__(self):
        if self.points < 4:
            raise ConfigError("lbp.points must be >= 4")
        if self.radius < 1:
            raise ConfigError("lbp.radius must be >= 1")
        if self.method not in LBP_METHODS:
            raise ConfigError(f"unknown lbp.method {self.method!r}")

    @property
    def n_bins(self):
        if self.method in ("uniform", "var"):
            return self.points + 2
        return 2**self.points


def as_image(image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise DataError(f"expected a non-empty 2-D grayscale image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise DataError("pixels must be finite and within [0, 1]")
    return img


def image_gradients(img):
    padded = np.pad(img, 1, mode="edge")
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return gx, gy


def hog_length(shape, cfg=HogConfig()):
    cy = shape[0] // cfg.pixels_per_cell[0]
    cx = shape[1] // cfg.pixels_per_cell[1]
    by, bx = cfg.cells_per_block
    if cy < by or cx < bx:
        raise ConfigError(
            f"image {shape} too small for {cfg.pixels_per_cell} cells in "
            f"{cfg.cells_per_block} blocks"
        )
    return (cy - by + 1) * (cx - bx + 1) * by * bx * cfg.orientations


def hog(image, cfg=HogConfig()):
    img = as_image(image)
    hog_length(img.shape, cfg)  # validates the geometry
    ch, cw = cfg.pixels_per_cell
    cy, cx = img.shape[0] // ch, img.shape[1] // cw
    gx, gy = image_gradients(img)
    mag = np.hypot(gx, gy)
    theta = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.minimum((theta * cfg.orientations / 180.0).astype(int), cfg.orientations - 1)

    # per-cell histograms over the cell-aligned crop
    mag = mag[: cy * ch, : cx * cw]
    bins = bins[: cy * ch, : cx * cw]
    cell_id = (np.arange(cy * ch) // ch)[:, None] * cx + (np.arange(cx * cw) // cw)[None, :]
    flat = (cell_id * cfg.orientations + bins).ravel()
    cells = np.bincount(flat, weights=mag.ravel(), minlength=cy * cx * cfg.orientations)
    cells = cells.reshape(cy, cx, cfg.orientations)

    by, bx = cfg.cells_per_block
    blocks = []
    for i in range(cy - by + 1):
        for j in range(cx - bx + 1):
            v = cells[i : i + by, j : j + bx].ravel()
            blocks.append(v / math.sqrt(float(v @ v) + HOG_EPS**2))
    return np.concatenate(blocks)


def _lbp_margin(cfg):
    return int(math.ceil(cfg.radius - 1e-9))


def _neighbour_samples(img, cfg):
    """Bilinear neighbour values, shape ``(P, h, w)`` over the valid region."""
    m = _lbp_margin(cfg)
    h, w = img.shape[0] - 2 * m, img.shape[1] - 2 * m
    if h < 1 or w < 1:
        raise ConfigError(
            f"image {img.shape} too small for LBP radius {cfg.radius} "
            f"(needs at least {2 * m + 1} pixels per side)"
        )
    out = np.empty((cfg.points, h, w))
    for p in range(cfg.points):
        a = 2.0 * math.pi * p / cfg.points
        # snap trig noise so integer offsets stay exact
        dy = round(-cfg.radius * math.sin(a), 9)
        dx = round(cfg.radius * math.cos(a), 9)
        y0, x0 = math.floor(dy), math.floor(dx)
        fy, fx = dy - y0, dx - x0

        def shifted(oy, ox):
            return img[m + oy : m + oy + h, m + ox : m + ox + w]

        val = (1 - fy) * (1 - fx) * shifted(y0, x0)
        if fx:
            val = val + (1 - fy) * fx * shifted(y0, x0 + 1)
        if fy:
            val = val + fy * (1 - fx) * shifted(y0 + 1, x0)
        if fx and fy:
            val = val + fy * fx * shifted(y0 + 1, x0 + 1)
        out[p] = val
    return out


def uniform_lookup(points):
    """Map every ``points``-bit code to its uniform-LBP bin (0..P+1)."""
    codes = np.arange(2**points)
    bits = (codes[:, None] >> np.arange(points)[None, :]) & 1
    transitions = np.sum(bits != np.roll(bits, -1, axis=1), axis=1)
    return np.where(transitions <= 2, bits.sum(axis=1), points + 1)


def ror_lookup(points):
    """Minimum over all circular bit rotations of each code."""
    codes = np.arange(2**points)
    mask = 2**points - 1
    best = codes.copy()
    for r in range(1, points):
        rot = ((codes >> r) | (codes << (points - r))) & mask
        best = np.minimum(best, rot)
    return best


def lbp_codes(image, cfg=LbpConfig()):
    """Per-pixel LBP bin index over the valid region (float variances for ``var``)."""
    img = as_image(image)
    nb = _neighbour_samples(img, cfg)
    m = _lbp_margin(cfg)
    centre = img[m : img.shape[0] - m, m : img.shape[1] - m]
    if cfg.method == "var":
        return nb.var(axis=0)
    bits = (nb >= centre[None]).astype(np.int64)
    code = np.tensordot(1 << np.arange(cfg.points), bits, axes=1)
    if cfg.method == "uniform":
        return uniform_lookup(cfg.points)[code]
    if cfg.method == "ror":
        return ror_lookup(cfg.points)[code]
    return code


def lbp_histogram(image, cfg=LbpConfig()):
    """Normalised LBP histogram.

    ``uniform`` yields P+2 bins, ``default``/``ror`` 2**P bins and ``var``
    P+2 equal-width bins over the local-variance range [0, 0.25].
    """
    codes = lbp_codes(image, cfg)
    if cfg.method == "var":
        idx = np.minimum((codes / _VAR_MAX * cfg.n_bins).astype(int), cfg.n_bins - 1)
    else:
        idx = codes
    hist = np.bincount(idx.ravel(), minlength=cfg.n_bins).astype(np.float64)
    return hist / hist.sum()


def raw(image):
    return as_image(image).ravel().copy()


def extract(images, names, hog_cfg=HogConfig(), lbp_cfg=LbpConfig()):
    """Feature matrices for a stack of images, one per requested descriptor.

    ``names`` is reordered into the canonical (hog, lbp, raw) order.  Plain
    vectors (a 2-D ``(n, d)`` array) only support ``raw``, which passes
    them through unchanged.
    """
    names = canonical_features(names)
    if isinstance(images, np.ndarray) and images.ndim == 2:
        if names != ("raw",):
            raise ConfigError("vector data only supports the 'raw' feature")
        return [np.asarray(images, dtype=np.float64)]
    out = []
    for name in names:
        if name == "hog":
            rows = [hog(im, hog_cfg) for im in images]
        elif name == "lbp":
            rows = [lbp_histogram(im, lbp_cfg) for im in images]
        else:
            rows = [raw(im) for im in images]
        if len({len(r) for r in rows}) > 1:
            raise DataError(f"{name} features differ in length; images must share a size")
        out.append(np.vstack(rows) if rows else np.empty((0, 0)))
    return out


def canonical_features(names):
    names = tuple(names)
    unknown = set(names) - set(FEATURE_ORDER)
    if unknown or not names:
        raise ConfigError(f"feature set must be a non-empty subset of {FEATURE_ORDER}")
    return tuple(n for n in FEATURE_ORDER if n in names)
