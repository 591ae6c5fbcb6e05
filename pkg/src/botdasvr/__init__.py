"""Linear SVR post-processing for BOTDA gain spectra and a performance model
of its FPGA decision-function accelerator."""

from .spectra import (
    FrequencyGrid,
    GainSpectrum,
    LorentzianParams,
    TemperatureCalibration,
    TrainingSet,
    generate_training_set,
)
from .svr import SvrHyperparams, SvrModel
from .engine import TileSpec, BatchRequest
from .datapath import DatapathConfig, LatencyReport

__version__ = "0.1.0"

__all__ = [
    "FrequencyGrid",
    "GainSpectrum",
    "LorentzianParams",
    "TemperatureCalibration",
    "TrainingSet",
    "generate_training_set",
    "SvrHyperparams",
    "SvrModel",
    "TileSpec",
    "BatchRequest",
    "DatapathConfig",
    "LatencyReport",
]
