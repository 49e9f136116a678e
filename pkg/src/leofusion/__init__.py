"""Learned extended-object fusion: geometry, simulation, graph attention and evaluation."""

__version__ = "0.1.0"
DATASET_SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1
