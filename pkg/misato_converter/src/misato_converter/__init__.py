"""MISATO HDF5 to bindmd complex-file converter."""

__version__ = "0.1.0"

from .convert import ConversionError, ConversionManifest, convert  # noqa: F401
from .stats import stats_report  # noqa: F401
