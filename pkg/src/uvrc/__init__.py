"""Learned lossy image codec with inference-time input scaling for variable rate."""

from .bitstream import CompressedFile, read_file, write_file
from .codec import compress, decompress, scale_compress, scale_decompress
from .errors import (
    CodecError,
    CorruptStreamError,
    ModelMismatchError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
    UnsupportedArchitectureError,
)
from .evaluation import (
    RDCurve,
    RDPoint,
    dispersion_stats,
    distortion_gap,
    latent_histogram,
    pareto_envelope,
    psnr,
    rd_point,
    sweep_scales,
)
from .model import ModelConfig, ModelWeights, load_weights, save_weights, toy_config
from .training import PatchDataset, TrainingConfig, train_model

__version__ = "0.1.0"
