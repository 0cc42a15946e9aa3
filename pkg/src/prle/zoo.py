"""Static localization: train a small zoo of detectors and fuse their attention maps."""

from dataclasses import dataclass

import numpy as np

from . import detector
from .fusion import FusionConfig, fuse
from .trainer import TrainConfig, fit


@dataclass(frozen=True)
class ZooConfig:
    size: int = 3
    channels: tuple = (4, 6, 8)
    epochs: int = 15
    learning_rate: float = 0.5
    batch_size: int = 8
    seed: int = 0
    # explicit per-member seeds; derived from ``seed`` when None
    seeds: tuple = None

    def member_channels(self, t):
        return self.channels[t % len(self.channels)]

    def member_seed(self, t):
        if self.seeds is not None:
            return int(self.seeds[t])
        return self.seed * 1000 + 17 * (t + 1)


def train_zoo(dataset, cfg=None):
    """Plain BCE training of cfg.size detectors with distinct seeds and widths."""
    cfg = cfg or ZooConfig()
    if cfg.size < 1:
        raise ValueError("zoo size must be at least 1")
    if cfg.seeds is not None and len(cfg.seeds) != cfg.size:
        raise ValueError("need one seed per zoo member")
    members = []
    for t in range(cfg.size):
        tcfg = TrainConfig(
            learning_rate=cfg.learning_rate,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            seed=cfg.member_seed(t),
            prle_enabled=False,
            channels=cfg.member_channels(t),
        )
        params, _ = fit(tcfg, dataset)
        members.append(params)
    return members


def normalize_batch(cams):
    """Per-image min-max normalisation of (B, H, W) raw maps; constant maps become zero."""
    lo = cams.min(axis=(1, 2), keepdims=True)
    hi = cams.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (cams - lo) / safe, 0.0)


def attention_maps(members, images, chunk=32):
    """Normalised attention maps, shaped (B, T, H, W)."""
    images = np.asarray(images, dtype=np.float64)
    out = np.empty((images.shape[0], len(members)) + images.shape[1:])
    for start in range(0, images.shape[0], chunk):
        sl = slice(start, start + chunk)
        for t, params in enumerate(members):
            out[sl, t] = normalize_batch(detector.cam_batch(params, images[sl]))
    return out


def static_localization(dataset, zoo_cfg=None, fusion_cfg=None, members=None):
    """Fused map for every training image; returns (fused (B, H, W), members)."""
    if members is None:
        members = train_zoo(dataset, zoo_cfg)
    maps = attention_maps(members, dataset.images)
    return fuse(maps, fusion_cfg or FusionConfig()), members
