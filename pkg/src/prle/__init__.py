"""Primary-region localization and exploitation (PRLE) on a toy detector."""

from .cam import ShapeMismatchError, compute_cam, normalize_minmax, upsample_nearest
from .config import ConfigError, PipelineConfig
from .data import Dataset, SyntheticConfig, generate_synthetic_dataset
from .detector import DetectorParams, backward, extract_cam_inputs, forward, predict
from .exploitation import (
    apply_selection,
    dynamic_augment,
    mask_image,
    rank_pixels,
    select_top_alpha,
)
from .fusion import (
    FusionConfig,
    average_fuse,
    fuse,
    neighbor_indicator,
    neighboring_fuse,
    primary_region_ratio,
    to_binary_mask,
)
from .tensor_io import read_image_png, read_tensor, write_image_png, write_mask_png, write_tensor
from .trainer import TrainConfig, evaluate, fit, sample_augmentation
from .zoo import ZooConfig, static_localization, train_zoo

__version__ = "0.1.0"
