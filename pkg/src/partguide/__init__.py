"""partguide: label-efficient part segmentation guidance toolkit."""

__version__ = "0.1.0"
