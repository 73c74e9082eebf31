"""Domain types, synthetic benchmark generator, and dataset serialization."""

from cascadet.data.generator import generate_dataset, stratified_split
from cascadet.data.io import DatasetFormatError, load_dataset, save_dataset
from cascadet.data.types import (
    DEFAULT_CHANNEL_NAMES,
    DEFAULT_CLASS_PRIORS,
    N_CLASSES,
    Dataset,
    GeneratorConfig,
    HotspotBox,
    LabelClass,
    Sample,
    SensorWindow,
    ThermalFrame,
)

__all__ = [
    "DEFAULT_CHANNEL_NAMES",
    "DEFAULT_CLASS_PRIORS",
    "N_CLASSES",
    "Dataset",
    "DatasetFormatError",
    "GeneratorConfig",
    "HotspotBox",
    "LabelClass",
    "Sample",
    "SensorWindow",
    "ThermalFrame",
    "generate_dataset",
    "load_dataset",
    "save_dataset",
    "stratified_split",
]
