"""Multi-scale fully convolutional networks for land cover segmentation, in numpy."""

__version__ = "0.1.0"
