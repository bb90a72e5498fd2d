"""Ray-based monocular absolute 3D pose lifting with camera normalisation."""

__version__ = "0.1.0"
