# Copyright Contributors to the INS Project
# SPDX-License-Identifier: Apache-2.0
"""Stylized implicit neural representations: python surface.

The heavy lifting lives in the `_ins` extension module (C++). This package
re-exports the main operations: input encoding, volume compositing, patch
sampling, perceptual losses over the deterministic surrogate backbone, and
read-only checkpoint rendering.
"""

from _ins import (
    ArgumentError,
    Checkpoint,
    CheckpointError,
    ConfigError,
    DataError,
    composite,
    content_loss,
    geometry_loss,
    gram,
    pixel_grid,
    positional_encoding,
    recon_loss,
    stride_patch,
    style_loss,
)

__all__ = [
    "ArgumentError",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "composite",
    "content_loss",
    "geometry_loss",
    "gram",
    "pixel_grid",
    "positional_encoding",
    "recon_loss",
    "stride_patch",
    "style_loss",
]

__version__ = "0.1.0"
