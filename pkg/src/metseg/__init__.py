"""Two-stage detection-then-segmentation of brain metastases."""
__version__ = "0.1.0"
