"""Fusion of a model zoo's attention maps into a single map, plus binary masks.

All functions accept a zoo stack shaped (T, H, W); the ``*_batch`` variants
take (B, T, H, W) and give results identical to calling per image.
"""

from dataclasses import dataclass

import numpy as np

NEIGHBORHOODS = {
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
    4: ((-1, 0), (0, -1), (0, 1), (1, 0)),
}


@dataclass(frozen=True)
class FusionConfig:
    strategy: str = "neighboring"
    tau1: float = 0.3
    lam: float = 0.15
    neighborhood: int = 8
    include_center: bool = True
    # allow j == k in the pair search of the neighbour indicator
    allow_same_map: bool = True

    def validate(self):
        if self.strategy not in ("average", "neighboring"):
            raise ValueError(f"unknown fusion strategy {self.strategy!r}")
        if not 0.0 <= self.tau1 <= 1.0:
            raise ValueError(f"tau1 must lie in [0, 1], got {self.tau1}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.neighborhood not in NEIGHBORHOODS:
            raise ValueError("neighborhood must be 4 or 8")


def as_zoo(maps):
    """Stack a list of equally shaped maps into a (T, H, W) float64 array."""
    if isinstance(maps, np.ndarray):
        zoo = maps.astype(np.float64, copy=False)
    else:
        shapes = {np.shape(m) for m in maps}
        if len(shapes) > 1:
            raise ValueError(f"zoo maps differ in shape: {sorted(shapes)}")
        zoo = np.asarray(maps, dtype=np.float64)
    if zoo.ndim < 3 or zoo.shape[-3] < 1:
        raise ValueError(f"expected at least one map of shape (H, W), got {zoo.shape}")
    if not np.all(np.isfinite(zoo)):
        raise ValueError("zoo maps contain non-finite values")
    return zoo


def _zoo_mean(zoo):
    # fixed left-to-right accumulation over the zoo axis
    acc = zoo[..., 0, :, :].copy()
    for t in range(1, zoo.shape[-3]):
        acc = acc + zoo[..., t, :, :]
    return acc / zoo.shape[-3]


def average_fuse(maps, tau1=0.3):
    zoo = as_zoo(maps)
    s = _zoo_mean(zoo)
    return np.where(s > tau1, s, 0.0)


def _shift(a, dr, dc):
    """out[..., r, c] = a[..., r + dr, c + dc], zero outside the image."""
    out = np.zeros_like(a)
    h, w = a.shape[-2:]
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    if r0 < r1 and c0 < c1:
        out[..., r0:r1, c0:c1] = a[..., r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    return out


def _valid(h, w, dr, dc):
    rows = np.arange(h)[:, None] + dr
    cols = np.arange(w)[None, :] + dc
    return (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)


def _indicator(zoo, lam, neighborhood, allow_same_map):
    h, w = zoo.shape[-2:]
    offsets = NEIGHBORHOODS[neighborhood]
    count = np.zeros((h, w))
    for dr, dc in offsets:
        count += _valid(h, w, dr, dc)
    shifted = [(_shift(zoo, dr, dc), _valid(h, w, dr, dc)) for dr, dc in offsets]
    n_maps = zoo.shape[-3]
    flag = np.zeros(zoo.shape[:-3] + (h, w), dtype=bool)
    for k in range(n_maps):
        centre = zoo[..., k, :, :]
        for j in range(n_maps):
            if j == k and not allow_same_map:
                continue
            total = np.zeros_like(centre)
            for nb, valid in shifted:
                total = total + np.where(valid, np.abs(nb[..., j, :, :] - centre), 0.0)
            mean = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
            flag |= (mean > lam) & (count > 0)
    return flag


def neighbor_indicator(maps, pixel, lam=0.15, neighborhood=8, allow_same_map=True):
    """1 if some ordered map pair differs from the pixel's neighbourhood by more than lam."""
    zoo = as_zoo(maps)
    h, w = zoo.shape[-2:]
    r, c = pixel
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"pixel {pixel} outside {h}x{w} map")
    return int(_indicator(zoo, lam, neighborhood, allow_same_map)[..., r, c])


def _neighbour_max(zoo, neighborhood, include_center):
    h, w = zoo.shape[-2:]
    best = zoo.max(axis=-3) if include_center else np.full(zoo.shape[:-3] + (h, w), -np.inf)
    for dr, dc in NEIGHBORHOODS[neighborhood]:
        nb = _shift(zoo, dr, dc).max(axis=-3)
        best = np.where(_valid(h, w, dr, dc), np.maximum(best, nb), best)
    # a 1x1 map without the centre has no candidates at all
    return np.where(np.isfinite(best), best, 0.0)


def neighboring_fuse(maps, cfg=None):
    """Region-growing fusion layered over the thresholded average map."""
    cfg = cfg or FusionConfig()
    zoo = as_zoo(maps)
    flag = _indicator(zoo, cfg.lam, cfg.neighborhood, cfg.allow_same_map)
    grown = np.where(flag, _neighbour_max(zoo, cfg.neighborhood, cfg.include_center), 0.0)
    return np.maximum(average_fuse(zoo, cfg.tau1), grown)


def fuse(maps, cfg=None):
    cfg = cfg or FusionConfig()
    cfg.validate()
    if cfg.strategy == "average":
        return average_fuse(maps, cfg.tau1)
    return neighboring_fuse(maps, cfg)


def to_binary_mask(fused):
    return (np.asarray(fused) > 0).astype(np.uint8)


def complement(mask):
    return (1 - np.asarray(mask)).astype(np.uint8)


def primary_region_ratio(mask):
    """Percentage of pixels inside the mask."""
    mask = np.asarray(mask)
    if mask.size == 0:
        raise ValueError("empty mask")
    return 100.0 * np.count_nonzero(mask) / mask.size


def format_ratio(value):
    return f"{value:.2f}"
