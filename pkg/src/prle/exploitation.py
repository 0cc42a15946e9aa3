"""Top-alpha truncation of fused maps and image occlusion."""

import math
from dataclasses import dataclass

import numpy as np

from .cam import upsample_nearest
from .fusion import to_binary_mask


@dataclass(frozen=True)
class RankedPixels:
    """Strictly positive pixels in descending value order, row-major on ties."""

    coords: np.ndarray  # (N, 2) int rows/cols
    values: np.ndarray  # (N,)
    shape: tuple

    def __len__(self):
        return len(self.values)

    def as_list(self):
        return [((int(r), int(c)), float(v)) for (r, c), v in zip(self.coords, self.values)]


@dataclass(frozen=True)
class SelectionSet:
    coords: np.ndarray  # (M, 2)
    alpha: float
    shape: tuple

    def __len__(self):
        return len(self.coords)

    def as_set(self):
        return {(int(r), int(c)) for r, c in self.coords}

    def to_mask(self):
        m = np.zeros(self.shape, dtype=np.uint8)
        m[self.coords[:, 0], self.coords[:, 1]] = 1
        return m


def rank_pixels(fused):
    fused = np.asarray(fused, dtype=np.float64)
    flat = fused.ravel()
    pos = np.flatnonzero(flat > 0)
    # stable sort keeps row-major order among equal values
    order = pos[np.argsort(-flat[pos], kind="stable")]
    coords = np.stack(np.unravel_index(order, fused.shape), axis=1).astype(np.int64)
    return RankedPixels(coords.reshape(-1, 2), flat[order], fused.shape)


def selection_count(n_ranked, alpha, inclusive=True):
    """Number of ranked pixels kept for a given alpha.

    The inclusive reading keeps indices 0..floor(alpha * n), so at least one
    pixel survives whenever the ranking is nonempty.
    """
    if n_ranked == 0:
        return 0
    k = math.floor(alpha * n_ranked)
    return min(n_ranked, k + 1 if inclusive else k)


def select_top_alpha(ranked, alpha, inclusive=True):
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    m = selection_count(len(ranked), alpha, inclusive)
    return SelectionSet(ranked.coords[:m], alpha, ranked.shape)


def apply_selection(selection, mask):
    mask = np.asarray(mask)
    h, w = mask.shape
    coords = selection.coords
    if len(coords) and (
        coords.min() < 0 or coords[:, 0].max() >= h or coords[:, 1].max() >= w
    ):
        raise IndexError(f"selection has coordinates outside the {h}x{w} mask")
    out = np.zeros_like(mask)
    out[coords[:, 0], coords[:, 1]] = mask[coords[:, 0], coords[:, 1]]
    return out


def mask_image(image, selection, mask):
    """Zero out the selected primary-region pixels; channels (last axis) masked alike."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} differ in size")
    keep = 1.0 - apply_selection(selection, mask).astype(np.float64)
    if image.ndim == 3:
        keep = keep[:, :, None]
    return image * keep


def dynamic_augment(image, fused, alpha, inclusive=True):
    """Mask the top-alpha primary region of ``fused`` out of ``image``."""
    image = np.asarray(image, dtype=np.float64)
    fused = np.asarray(fused, dtype=np.float64)
    h, w = image.shape[:2]
    if fused.shape != (h, w):
        fused = upsample_nearest(fused, h, w)
    selection = select_top_alpha(rank_pixels(fused), alpha, inclusive)
    return mask_image(image, selection, to_binary_mask(fused))


def occlusion_mask(fused, alpha, inclusive=True):
    """Binary mask of the pixels dynamic_augment would remove."""
    fused = np.asarray(fused, dtype=np.float64)
    selection = select_top_alpha(rank_pixels(fused), alpha, inclusive)
    return apply_selection(selection, to_binary_mask(fused))
