"""Zero-shot backend: text-prompted detection, box-prompted segmentation,
and self-supervised ViT features.

Model weights are loaded lazily on first construction; any import or
download problem surfaces as ModelLoadFailure so batch jobs fail fast
with the backend named, rather than mid-run.
"""

import numpy as np

from .errors import ModelLoadFailure

DETECTOR_ID = "IDEA-Research/grounding-dino-tiny"
SEGMENTER_ID = "facebook/sam-vit-base"
EMBEDDER_ID = "facebook/dinov2-base"

STAGE2_LABELS = ("hand", "wrist", "shoe", "wooden box", "crate", "holding object")
BOX_THRESHOLD = 0.25
TEXT_THRESHOLD = 0.25


class ZeroShotBackend:
    """Grounding-DINO-style detector, SAM-style segmenter, DINOv2-style embedder."""

    name = "zeroshot"

    def __init__(self, device: str = "cpu", with_segmenter: bool = True):
        self.device = device
        self.model_ids = {
            "detector": DETECTOR_ID,
            "segmenter": SEGMENTER_ID if with_segmenter else None,
            "embedder": EMBEDDER_ID,
        }
        try:
            import torch
            from transformers import (
                AutoModelForZeroShotObjectDetection,
                AutoProcessor,
                Dinov2Model,
                SamModel,
                SamProcessor,
            )
        except ImportError as exc:
            raise ModelLoadFailure(
                f"zeroshot backend needs torch and transformers: {exc}"
            ) from exc
        self._torch = torch
        try:
            self._det_processor = AutoProcessor.from_pretrained(DETECTOR_ID)
            self._detector = AutoModelForZeroShotObjectDetection.from_pretrained(
                DETECTOR_ID
            ).to(device).eval()
            self._embedder = Dinov2Model.from_pretrained(EMBEDDER_ID).to(device).eval()
            if with_segmenter:
                self._sam_processor = SamProcessor.from_pretrained(SEGMENTER_ID)
                self._segmenter = SamModel.from_pretrained(SEGMENTER_ID).to(device).eval()
            else:
                self._sam_processor = None
                self._segmenter = None
        except Exception as exc:
            raise ModelLoadFailure(f"cannot load model weights: {exc}") from exc

    def _detect(self, image_rgb: np.ndarray, prompt: str, threshold: float) -> list:
        torch = self._torch
        inputs = self._det_processor(
            images=image_rgb, text=prompt, return_tensors="pt"
        ).to(self.device)
        with torch.no_grad():
            outputs = self._detector(**inputs)
        results = self._det_processor.post_process_grounded_object_detection(
            outputs,
            inputs.input_ids,
            threshold=threshold,
            text_threshold=TEXT_THRESHOLD,
            target_sizes=[image_rgb.shape[:2]],
        )[0]
        found = []
        for box, score, label in zip(
            results["boxes"], results["scores"], results["text_labels"]
        ):
            x0, y0, x1, y1 = (float(v) for v in box.tolist())
            found.append((str(label), (x0, y0, x1, y1), float(score)))
        return found

    def detect_person(self, frame: np.ndarray) -> list:
        found = self._detect(frame[:, :, ::-1], "person lifting", BOX_THRESHOLD)
        candidates = [(bbox, round(score, 4)) for _label, bbox, score in found]
        candidates.sort(key=lambda c: (-c[1], c[0]))
        return candidates

    def detect_rois(self, crop_image: np.ndarray) -> list:
        prompt = " . ".join(STAGE2_LABELS)
        found = []
        for label, bbox, score in self._detect(crop_image[:, :, ::-1], prompt, BOX_THRESHOLD):
            # the detector echoes matched prompt spans; keep exact vocabulary hits
            if label in STAGE2_LABELS:
                found.append((label, bbox, round(score, 4)))
        found.sort(key=lambda c: (c[0], c[1]))
        return found

    def segment(self, frame: np.ndarray, bbox) -> np.ndarray:
        if self._segmenter is None:
            raise ModelLoadFailure("backend constructed without a segmenter")
        torch = self._torch
        image_rgb = frame[:, :, ::-1]
        inputs = self._sam_processor(
            images=image_rgb, input_boxes=[[[float(v) for v in bbox]]], return_tensors="pt"
        ).to(self.device)
        with torch.no_grad():
            outputs = self._segmenter(**inputs)
        masks = self._sam_processor.image_processor.post_process_masks(
            outputs.pred_masks.cpu(),
            inputs["original_sizes"].cpu(),
            inputs["reshaped_input_sizes"].cpu(),
        )[0][0]
        scores = outputs.iou_scores.cpu().reshape(-1)
        best = masks[int(scores.argmax())].numpy().astype(bool)
        x0, y0 = int(np.floor(bbox[0])), int(np.floor(bbox[1]))
        x1 = x0 + int(bbox[2] - bbox[0])
        y1 = y0 + int(bbox[3] - bbox[1])
        return best[y0:y1, x0:x1]

    def embed_batch(self, images: list) -> np.ndarray:
        torch = self._torch
        stack = np.stack(images).transpose(0, 3, 1, 2)
        pixels = torch.from_numpy(np.ascontiguousarray(stack)).to(self.device)
        with torch.no_grad():
            out = self._embedder(pixel_values=pixels)
        return out.last_hidden_state[:, 0].cpu().numpy().astype(np.float32)
