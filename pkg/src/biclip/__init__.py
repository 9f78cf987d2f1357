"""Text-guided segmentation with bidirectional fusion and augmentation consistency."""

__version__ = "0.1.0"
