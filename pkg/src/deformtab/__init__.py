"""Deformed-table data generation, GOE/HKCF reference blocks, scale-aware losses, mask NMS and mAP evaluation."""

from .annotations import AnnotationSet, PolygonInstance, rasterize
from .dataset import GeneratorConfig, generate_dataset, split_dataset
from .errors import (
    ConfigError,
    DecodeError,
    DeformtabError,
    DomainError,
    FoldError,
    InvalidAnnotationError,
    InvalidInputError,
    NumericError,
    ShapeError,
    UndefinedMetricError,
)
from .imaging import ImageBuffer, ShadowParams, decode_image, encode_image, read_image, write_image
from .sampler import DeformationParams, SamplerConfig, sample_params
from .warp import CylinderParams, SamplingField, WaveParams, compose_warps, cylinder_map, wave_map

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet", "PolygonInstance", "rasterize",
    "GeneratorConfig", "generate_dataset", "split_dataset",
    "ConfigError", "DecodeError", "DeformtabError", "DomainError", "FoldError", "InvalidAnnotationError",
    "InvalidInputError", "NumericError", "ShapeError", "UndefinedMetricError",
    "ImageBuffer", "ShadowParams", "decode_image", "encode_image", "read_image", "write_image",
    "DeformationParams", "SamplerConfig", "sample_params",
    "CylinderParams", "SamplingField", "WaveParams", "compose_warps", "cylinder_map", "wave_map",
]
