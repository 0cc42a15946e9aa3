"""Synthetic two-class images with a plantable shortcut patch.

Label 1 images carry a horizontal intensity ramp, label 0 a vertical one. A
bright square patch is stamped on label-1 images with probability rho and on
label-0 images with probability 1 - rho, so rho = 1 makes the patch a perfect
(spurious) predictor and rho = 0.5 makes it uninformative.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SyntheticConfig:
    n_examples: int = 2000
    side: int = 32
    patch_side: int = 6
    patch_origin: tuple = (4, 4)
    rho: float = 1.0
    signal_strength: float = 0.35
    noise_amplitude: float = 0.4
    seed: int = 0

    def validate(self):
        if self.n_examples < 1 or self.side < 1:
            raise ValueError("n_examples and side must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        r, c = self.patch_origin
        if r < 0 or c < 0 or r + self.patch_side > self.side or c + self.patch_side > self.side:
            raise ValueError(
                f"patch of side {self.patch_side} at {self.patch_origin} "
                f"does not fit a {self.side}x{self.side} image"
            )


@dataclass(frozen=True)
class TrainingExample:
    image: np.ndarray
    label: int


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int
    has_patch: np.ndarray  # (N,) bool

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return TrainingExample(self.images[i], int(self.labels[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def ramp(side, horizontal):
    r = np.linspace(0.0, 1.0, side)
    return np.tile(r, (side, 1)) if horizontal else np.tile(r[:, None], (1, side))


def stamp_patch(images, cfg):
    """Copy of images with the bright patch stamped at the configured origin."""
    out = np.array(images, dtype=np.float64, copy=True)
    r, c = cfg.patch_origin
    out[..., r : r + cfg.patch_side, c : c + cfg.patch_side] = 1.0
    return out


def patch_mask(cfg):
    m = np.zeros((cfg.side, cfg.side), dtype=bool)
    r, c = cfg.patch_origin
    m[r : r + cfg.patch_side, c : c + cfg.patch_side] = True
    return m


def _draw(cfg):
    """Unpatched (clipped) images, labels and the patch draw for each example."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, side = cfg.n_examples, cfg.side
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2] = 1
    if n % 2:
        # odd count: the spare example is label 1 or 0 with equal chance
        labels[-1] = rng.integers(0, 2)
    labels = rng.permutation(labels)

    noise = rng.uniform(0.0, 1.0, size=(n, side, side))
    u = rng.uniform(0.0, 1.0, size=n)
    patch_prob = np.where(labels == 1, cfg.rho, 1.0 - cfg.rho)
    has_patch = u < patch_prob

    signal = np.where(labels[:, None, None] == 1, ramp(side, True), ramp(side, False))
    images = cfg.noise_amplitude * noise + cfg.signal_strength * signal
    np.clip(images, 0.0, 1.0, out=images)
    return images, labels, has_patch


def generate_synthetic_dataset(cfg):
    images, labels, has_patch = _draw(cfg)
    r, c = cfg.patch_origin
    images[has_patch, r : r + cfg.patch_side, c : c + cfg.patch_side] = 1.0
    return Dataset(images, labels, has_patch)


def patch_pairs(cfg):
    """Each drawn image without and with the patch, ignoring the rho draw."""
    images, labels, _ = _draw(cfg)
    return images, stamp_patch(images, cfg), labels
