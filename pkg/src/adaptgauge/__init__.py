"""adaptgauge: label-free estimation of post-adaptation classifier accuracy."""

__version__ = "0.1.0"
