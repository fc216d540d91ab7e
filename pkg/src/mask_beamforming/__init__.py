"""
mask-beamforming package.

Mask-based MVDR, GEV and multichannel Wiener beamforming with
multichannel losses for training the mask estimator.
"""

from __future__ import annotations

import importlib
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .config import ExperimentSettings
    from .estimator import MaskEstimator
    from .pipeline import BeamformingPipeline, run_pipeline
    from .ports.audio import Waveform
    from .scenes import Scene


__all__ = [
    "BeamformingPipeline",
    "ExperimentSettings",
    "MaskEstimator",
    "Scene",
    "Waveform",
    "run_pipeline",
]

_EXPORTS = {
    "BeamformingPipeline": ".pipeline",
    "ExperimentSettings": ".config",
    "MaskEstimator": ".estimator",
    "Scene": ".scenes",
    "Waveform": ".ports.audio",
    "run_pipeline": ".pipeline",
}


# Submodules import on first attribute access.
def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(name)
    return getattr(importlib.import_module(module, __name__), name)
