"""Real-model scorer: wraps CLIP-style embedding, an image captioner, an
aesthetic head, and an OCR detector behind the scorer protocol.

Model loading is best-effort per op: anything that fails to import or load
is logged to stderr and left out of the advertised ops, so the sidecar
stays useful on machines with a partial stack. Checkpoint choice is
configuration, not contract.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

from . import OPS
from .protocol import ScorerError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SidecarConfig:
    caption_model: str = "Salesforce/blip-image-captioning-base"
    embed_model: str = "openai/clip-vit-base-patch32"
    # linear head over image embeddings; no public default checkpoint, so the
    # aesthetic op is only advertised when a weights path is supplied
    aesthetic_weights: str | None = None
    ocr_langs: tuple[str, ...] = ("en",)
    device: str = "cpu"
    batch_size: int = 8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class RealScorer:
    """Advertised ops always match the models that actually loaded."""

    def __init__(self, config: SidecarConfig | None = None):
        self.config = config or SidecarConfig()
        self._embedder = None
        self._handlers = {}
        loaders = {
            "embed_text": self._load_embedder,
            "embed_frames": self._load_embedder,
            "caption": self._load_captioner,
            "aesthetic": self._load_aesthetic,
            "ocr_boxes": self._load_ocr,
        }
        loaded = {}
        for op in OPS:
            loader = loaders[op]
            try:
                if loader not in loaded:
                    loaded[loader] = loader()
                self._handlers[op] = loaded[loader]
            except Exception as e:  # noqa: BLE001 - degrade, never die at startup
                log.warning("op %s unavailable: %s", op, e)
        self.ops = tuple(op for op in OPS if op in self._handlers)

    def handle(self, op, video_id, payload):
        handler = self._handlers.get(op)
        if handler is None:
            raise ScorerError("unsupported_op", f"op {op!r} did not load")
        if op == "embed_text":
            text = payload.get("text")
            if not isinstance(text, str):
                raise ScorerError("bad_request", "payload.text must be a string")
            return handler.embed_text(text)
        images = self._load_images(payload)
        if op == "embed_frames":
            return handler.embed_images(images)
        if op == "caption":
            return handler.caption(images[len(images) // 2])
        if op == "aesthetic":
            return handler.score(images)
        return handler.boxes(images)

    def _load_images(self, payload):
        from PIL import Image

        frames = payload.get("frames")
        if not isinstance(frames, list) or not frames:
            raise ScorerError("bad_request", "payload.frames must be a nonempty list")
        images = []
        for path in frames:
            try:
                with Image.open(path) as img:
                    images.append(img.convert("RGB"))
            except OSError as e:
                raise ScorerError("unreadable_frame", f"{path}: {e}") from e
        return images

    # loaders ----------------------------------------------------------------

    def _load_embedder(self):
        if self._embedder is None:
            self._embedder = _ClipEmbedder(self.config.embed_model,
                                           self.config.device,
                                           self.config.batch_size)
        return self._embedder

    def _load_captioner(self):
        return _Captioner(self.config.caption_model, self.config.device)

    def _load_aesthetic(self):
        if self.config.aesthetic_weights is None:
            raise RuntimeError("no aesthetic weights configured")
        return _AestheticHead(self._load_embedder(),
                              Path(self.config.aesthetic_weights),
                              self.config.device)

    def _load_ocr(self):
        return _OcrDetector(self.config.ocr_langs, self.config.device)


class _ClipEmbedder:
    def __init__(self, model_id, device, batch_size):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self.torch = torch
        self.device = device
        self.batch_size = batch_size
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()

    def embed_text(self, text):
        with self.torch.no_grad():
            inputs = self.processor(text=[text], return_tensors="pt",
                                    padding=True, truncation=True).to(self.device)
            vec = self.model.get_text_features(**inputs)[0]
            return (vec / vec.norm()).cpu().tolist()

    def embed_images(self, images):
        vectors = []
        with self.torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                batch = images[start:start + self.batch_size]
                inputs = self.processor(images=batch, return_tensors="pt").to(self.device)
                feats = self.model.get_image_features(**inputs)
                feats = feats / feats.norm(dim=-1, keepdim=True)
                vectors.extend(feats.cpu().tolist())
        return vectors

    def raw_image_features(self, images):
        with self.torch.no_grad():
            inputs = self.processor(images=images, return_tensors="pt").to(self.device)
            return self.model.get_image_features(**inputs)


class _Captioner:
    def __init__(self, model_id, device):
        import torch
        from transformers import BlipForConditionalGeneration, BlipProcessor

        self.torch = torch
        self.device = device
        self.processor = BlipProcessor.from_pretrained(model_id)
        self.model = BlipForConditionalGeneration.from_pretrained(model_id)
        self.model = self.model.to(device).eval()

    def caption(self, image):
        with self.torch.no_grad():
            inputs = self.processor(images=image, return_tensors="pt").to(self.device)
            ids = self.model.generate(**inputs, max_new_tokens=40, do_sample=False)
            text = self.processor.decode(ids[0], skip_special_tokens=True).strip()
        if not text:
            raise ScorerError("empty_caption", "captioner produced no text")
        return text


class _AestheticHead:
    def __init__(self, embedder, weights_path, device):
        import torch

        self.torch = torch
        self.embedder = embedder
        self.head = torch.load(weights_path, map_location=device)
        self.head.eval()

    def score(self, images):
        with self.torch.no_grad():
            feats = self.embedder.raw_image_features(images)
            feats = feats / feats.norm(dim=-1, keepdim=True)
            per_frame = self.head(feats).squeeze(-1)
            value = float(per_frame.mean())
        return min(max(value, 0.0), 10.0)


class _OcrDetector:
    def __init__(self, langs, device):
        import easyocr

        self.reader = easyocr.Reader(list(langs), gpu=device != "cpu")

    def boxes(self, images):
        import numpy as np

        out = []
        for image in images:
            frame_boxes = []
            for quad, _text, _conf in self.reader.readtext(np.asarray(image)):
                xs = [float(p[0]) for p in quad]
                ys = [float(p[1]) for p in quad]
                if min(xs) < max(xs) and min(ys) < max(ys):
                    frame_boxes.append([min(xs), min(ys), max(xs), max(ys)])
            out.append(frame_boxes)
        return out
