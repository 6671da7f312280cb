"""Keystroke-timing workbench: corpus handling, synthetic timing generators,
timing-only detectors, and the evaluation matrix around them."""

__version__ = "0.1.0"
