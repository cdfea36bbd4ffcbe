"""Multi-resolution planar-region extraction from unordered 3D point clouds."""

from planeseg.core import (
    Category,
    CloudFormatError,
    ConfigError,
    DegenerateGeometryError,
    LabeledCloud,
    Plane,
    PlanesegError,
    SegmenterConfig,
    default_config,
    load_config,
    save_config,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "Category",
    "CloudFormatError",
    "ConfigError",
    "DegenerateGeometryError",
    "LabeledCloud",
    "Plane",
    "PlanesegError",
    "SegmenterConfig",
    "default_config",
    "load_config",
    "save_config",
    "validate_config",
    "__version__",
]
