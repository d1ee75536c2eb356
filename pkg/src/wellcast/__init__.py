"""Forecasting growth in two-species microwell fluorescence videos."""

from .video import ColorSpace, DatasetManifest, Frame, Split, Video, WellRecord, load_video, save_video

__version__ = "0.1.0"

__all__ = ["ColorSpace", "DatasetManifest", "Frame", "Split", "Video", "WellRecord", "load_video", "save_video"]
