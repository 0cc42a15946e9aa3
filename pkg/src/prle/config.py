"""One flat, JSON-serialisable record holding every pipeline setting.

All keys are optional. Defaults match the method's published settings
(tau1 = 0.3, lambda = 0.15, p = 0.5, gamma = 1, three zoo detectors).
"""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import SyntheticConfig
from .fusion import FusionConfig
from .trainer import TrainConfig
from .zoo import ZooConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # fusion
    strategy: str = "neighboring"
    tau1: float = 0.3
    lam: float = 0.15
    neighborhood: int = 8
    include_center: bool = True
    # exploitation / training
    p: float = 0.5
    gamma: float = 1.0
    alpha_lo: float = 0.0
    alpha_hi: float = 1.0
    learning_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 8
    channels: int = 4
    seed: int = 0
    # synthetic data
    n_examples: int = 2000
    side: int = 32
    patch_side: int = 6
    patch_origin: tuple = (4, 4)
    rho: float = 1.0
    signal_strength: float = 0.35
    noise_amplitude: float = 0.4
    # zoo
    zoo_size: int = 3
    zoo_channels: tuple = (4, 6, 8)
    zoo_seeds: tuple = None
    zoo_epochs: int = 15
    zoo_learning_rate: float = 0.5
    zoo_batch_size: int = 8
    # paths
    input_dir: str = None
    output_dir: str = None

    def fusion(self):
        return FusionConfig(
            strategy=self.strategy,
            tau1=self.tau1,
            lam=self.lam,
            neighborhood=self.neighborhood,
            include_center=self.include_center,
        )

    def train(self, prle_enabled=True):
        return TrainConfig(
            p=self.p,
            gamma=self.gamma,
            alpha_range=(self.alpha_lo, self.alpha_hi),
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            prle_enabled=prle_enabled,
            channels=self.channels,
        )

    def synthetic(self, **overrides):
        kw = dict(
            n_examples=self.n_examples,
            side=self.side,
            patch_side=self.patch_side,
            patch_origin=tuple(self.patch_origin),
            rho=self.rho,
            signal_strength=self.signal_strength,
            noise_amplitude=self.noise_amplitude,
            seed=self.seed,
        )
        kw.update(overrides)
        return SyntheticConfig(**kw)

    def zoo(self):
        return ZooConfig(
            size=self.zoo_size,
            channels=tuple(self.zoo_channels),
            epochs=self.zoo_epochs,
            learning_rate=self.zoo_learning_rate,
            batch_size=self.zoo_batch_size,
            seed=self.seed,
            seeds=None if self.zoo_seeds is None else tuple(self.zoo_seeds),
        )

    def validate(self):
        if self.zoo_size < 1:
            raise ConfigError("zoo_size must be at least 1")
        if self.zoo_seeds is not None and len(self.zoo_seeds) != self.zoo_size:
            raise ConfigError("zoo_seeds needs exactly zoo_size entries")
        try:
            self.fusion().validate()
            self.train().validate()
            self.synthetic().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        # "lambda" is a Python keyword, so it is stored as ``lam``
        data = {("lam" if k == "lambda" else k): v for k, v in data.items()}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for k in ("patch_origin", "zoo_channels", "zoo_seeds"):
            if data.get(k) is not None:
                data[k] = tuple(data[k])
        return cls(**data).validate()

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)
