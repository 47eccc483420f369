"""EAST: early action prediction with observation-ratio sampling and difference masking."""

__version__ = "0.1.0"
