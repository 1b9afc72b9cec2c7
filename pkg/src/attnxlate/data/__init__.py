"""Datasets, synthetic data, PNG I/O and the checkpoint container."""

from .checkpoint import ChecksumError, CheckpointError, read_checkpoint, write_checkpoint
from .dataset import Dataset, load_dataset, load_folder, load_pair
from .images import from_uint8, image_grid, load_image, save_image, to_uint8
from .synthetic import SyntheticSpec, disc_mask, generate_synthetic, write_dataset

__all__ = [
    "ChecksumError", "CheckpointError", "Dataset", "SyntheticSpec", "disc_mask", "from_uint8",
    "generate_synthetic", "image_grid", "load_dataset", "load_folder", "load_image", "load_pair",
    "read_checkpoint", "save_image", "to_uint8", "write_checkpoint", "write_dataset",
]
