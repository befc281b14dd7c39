"""Scorer sidecars speaking the line-delimited JSON scorer protocol (v1)."""

__all__ = ["PROTOCOL", "OPS"]

PROTOCOL = "scorer/1"
OPS = ("caption", "embed_text", "embed_frames", "aesthetic", "ocr_boxes")
