"""Sensor-fusion pipeline for animal digital twins.

Merge multi-rate sensor streams onto a common time grid, quality-check
them, train and apply energy-expenditure regression models, and run whole
experiments as audited, replayable pipelines.
"""

__version__ = "0.1.0"

from .components import COMPONENT_VERSIONS  # noqa: E402

__all__ = ["COMPONENT_VERSIONS", "__version__"]
