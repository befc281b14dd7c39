"""Batch curation of raw video corpora into budgeted text-to-video training sets."""

__version__ = "0.1.0"

from .model import DecisionEntry, MediaInfo, MetricSet, VideoRecord

__all__ = ["DecisionEntry", "MediaInfo", "MetricSet", "VideoRecord", "__version__"]
