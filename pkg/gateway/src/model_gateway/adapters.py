"""Model adapters behind the four endpoints.

Identifiers select the implementation: `builtin:*` adapters are
deterministic and dependency-light (suitable for tests and smoke
deployments); `hf:<model-id>` adapters wrap transformers checkpoints and
need the `hf` extra plus locally available weights.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .rle import box_fill


class AdapterDomainError(Exception):
    """Request is schema-valid but outside the model's domain (HTTP 422)."""


class AdapterLoadError(Exception):
    """The configured model cannot be loaded; the process should exit."""


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _open_image(path: str):
    from PIL import Image

    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except OSError as exc:
        raise AdapterDomainError(f"cannot open image {path!r}: {exc}") from None


class HashVe:
    """Deterministic smoke classifier: parity of the request hash."""

    def classify(self, image: str, expression: str) -> tuple[str, float]:
        label = "e" if _fnv1a64(f"{image}|{expression}") % 2 == 0 else "c"
        return label, 0.5


class CenterVg:
    """Centered box covering a quarter of the image; needs the real pixels."""

    def ground(self, image: str, expression: str) -> tuple[list[float], float]:
        img = _open_image(image)
        w, h = img.size
        return [w / 4, h / 4, 3 * w / 4, 3 * h / 4], 0.5


class BoxFillSegment:
    """Fills the box prompt; a lower bound any real model should beat."""

    def segment(self, image: str, box: Sequence[float], width: int, height: int) -> np.ndarray:
        grid = box_fill(tuple(box), width, height)
        if not grid.any():
            raise AdapterDomainError(f"box {list(box)} covers no pixels on {width}x{height}")
        return grid


class GrabCutSegment:
    """Classical box-prompted segmentation over the actual image pixels."""

    def __init__(self) -> None:
        try:
            import cv2  # noqa: F401
        except ImportError as exc:
            raise AdapterLoadError(f"builtin:grabcut needs opencv: {exc}") from None

    def segment(self, image: str, box: Sequence[float], width: int, height: int) -> np.ndarray:
        import cv2

        img = _open_image(image)
        img = img.resize((width, height))
        arr = np.asarray(img)[:, :, ::-1].copy()
        x1, y1, x2, y2 = (int(round(v)) for v in box)
        x1, y1 = max(x1, 0), max(y1, 0)
        x2, y2 = min(x2, width), min(y2, height)
        if x1 >= x2 or y1 >= y2:
            raise AdapterDomainError(f"box {list(box)} covers no pixels on {width}x{height}")
        mask = np.zeros((height, width), dtype=np.uint8)
        bgd = np.zeros((1, 65), dtype=np.float64)
        fgd = np.zeros((1, 65), dtype=np.float64)
        try:
            cv2.grabCut(arr, mask, (x1, y1, x2 - x1, y2 - y1), bgd, fgd, 3, cv2.GC_INIT_WITH_RECT)
        except cv2.error as exc:
            raise AdapterDomainError(f"grabcut failed: {exc}") from None
        grid = (mask == cv2.GC_FGD) | (mask == cv2.GC_PR_FGD)
        if not grid.any():
            grid = box_fill((x1, y1, x2, y2), width, height)
        return grid


class EchoLlm:
    """Returns the prompt's leading whitespace-delimited tokens."""

    def generate(self, prompt: str, max_tokens: int) -> str:
        return " ".join(prompt.split()[:max_tokens])


class HfVe:
    def __init__(self, model_id: str, device: str) -> None:
        try:
            from transformers import pipeline

            self._pipe = pipeline("zero-shot-image-classification", model=model_id, device=device)
        except Exception as exc:
            raise AdapterLoadError(f"cannot load VE model {model_id!r}: {exc}") from exc

    def classify(self, image: str, expression: str) -> tuple[str, float]:
        img = _open_image(image)
        results = self._pipe(img, candidate_labels=[expression, "unrelated content"])
        top = results[0]
        score = float(top["score"])
        return ("e" if top["label"] == expression else "c"), score


class HfVg:
    def __init__(self, model_id: str, device: str) -> None:
        try:
            from transformers import pipeline

            self._pipe = pipeline("zero-shot-object-detection", model=model_id, device=device)
        except Exception as exc:
            raise AdapterLoadError(f"cannot load VG model {model_id!r}: {exc}") from exc

    def ground(self, image: str, expression: str) -> tuple[list[float], float]:
        img = _open_image(image)
        results = self._pipe(img, candidate_labels=[expression])
        if not results:
            raise AdapterDomainError(f"no region found for {expression!r}")
        best = max(results, key=lambda r: r["score"])
        b = best["box"]
        return [float(b["xmin"]), float(b["ymin"]), float(b["xmax"]), float(b["ymax"])], float(
            best["score"]
        )


class HfSegment:
    def __init__(self, model_id: str, device: str) -> None:
        try:
            import torch
            from transformers import SamModel, SamProcessor

            self._torch = torch
            self._model = SamModel.from_pretrained(model_id).to(device)
            self._processor = SamProcessor.from_pretrained(model_id)
            self._device = device
        except Exception as exc:
            raise AdapterLoadError(f"cannot load segmentation model {model_id!r}: {exc}") from exc

    def segment(self, image: str, box: Sequence[float], width: int, height: int) -> np.ndarray:
        img = _open_image(image).resize((width, height))
        inputs = self._processor(
            img, input_boxes=[[[float(v) for v in box]]], return_tensors="pt"
        ).to(self._device)
        with self._torch.no_grad():
            outputs = self._model(**inputs)
        masks = self._processor.image_processor.post_process_masks(
            outputs.pred_masks.cpu(),
            inputs["original_sizes"].cpu(),
            inputs["reshaped_input_sizes"].cpu(),
        )
        grid = masks[0][0, 0].numpy().astype(bool)
        if grid.shape != (height, width):
            raise AdapterDomainError(
                f"model produced a {grid.shape} mask for a {height}x{width} request"
            )
        return grid


class HfLlm:
    def __init__(self, model_id: str, device: str) -> None:
        try:
            from transformers import pipeline

            self._pipe = pipeline("text-generation", model=model_id, device=device)
        except Exception as exc:
            raise AdapterLoadError(f"cannot load LLM {model_id!r}: {exc}") from exc

    def generate(self, prompt: str, max_tokens: int) -> str:
        out = self._pipe(prompt, max_new_tokens=max_tokens, return_full_text=False)
        return out[0]["generated_text"]


_BUILTINS = {
    ("ve", "hash"): lambda device: HashVe(),
    ("vg", "center"): lambda device: CenterVg(),
    ("segment", "boxfill"): lambda device: BoxFillSegment(),
    ("segment", "grabcut"): lambda device: GrabCutSegment(),
    ("llm", "echo"): lambda device: EchoLlm(),
}

_HF = {"ve": HfVe, "vg": HfVg, "segment": HfSegment, "llm": HfLlm}


def load_adapter(endpoint: str, identifier: str, device: str):
    """Resolve `builtin:*` or `hf:<model-id>` into a live adapter."""
    scheme, _, name = identifier.partition(":")
    if scheme == "builtin":
        factory = _BUILTINS.get((endpoint, name))
        if factory is None:
            known = sorted(n for e, n in _BUILTINS if e == endpoint)
            raise AdapterLoadError(
                f"no builtin {name!r} for endpoint {endpoint!r}; known: {known}"
            )
        return factory(device)
    if scheme == "hf":
        if not name:
            raise AdapterLoadError(f"hf adapter for {endpoint!r} needs a model id")
        return _HF[endpoint](name, device)
    raise AdapterLoadError(f"unknown adapter scheme {scheme!r} in {identifier!r}")
