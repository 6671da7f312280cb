"""Adversarial timing generators and neural reference detectors.

Companion package to the core keystroke workbench. All data flows through
the core's file formats (session/manifest/feature-matrix CSV); nothing here
imports the core package.
"""

__version__ = "0.1.0"
