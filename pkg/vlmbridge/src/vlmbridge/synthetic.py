"""Deterministic stand-in backend for offline runs and tests.

Operates on staged footage in which every prompt term has a reserved
solid color on a uniform light background. Detection is color
thresholding plus connected components, segmentation is the non-background
pixels inside a box, and the embedder is a fixed average-pool summary of
the normalized ROI. No weights, no randomness: identical frames always
produce identical records and vectors.
"""

import math

import cv2
import numpy as np

# BGR palette shared with the staged-clip generator
BACKGROUND = (235, 235, 235)
PALETTE = {
    "person lifting": (200, 120, 60),
    "hand": (60, 60, 220),
    "wrist": (60, 160, 255),
    "shoe": (80, 180, 80),
    "wooden box": (70, 120, 170),
    "crate": (190, 90, 170),
}
COLOR_TOLERANCE = 75.0
BACKGROUND_TOLERANCE = 60.0
MIN_BLOB_AREA = 40

STAGE2_LABELS = ("hand", "wrist", "shoe", "wooden box", "crate", "holding object")


def _color_blobs(image: np.ndarray, color, tolerance: float) -> list:
    """(bbox, area) of connected regions within tolerance of a color."""
    dist = np.linalg.norm(image.astype(np.float64) - np.asarray(color, dtype=np.float64), axis=2)
    mask = (dist < tolerance).astype(np.uint8)
    count, _labels, stats, _centroids = cv2.connectedComponentsWithStats(mask, connectivity=8)
    blobs = []
    for i in range(1, count):
        x, y, w, h, area = (int(v) for v in stats[i])
        if area < MIN_BLOB_AREA:
            continue
        blobs.append(((float(x), float(y), float(x + w), float(y + h)), int(area)))
    return blobs


def _score(bbox, area: int) -> float:
    # solid fill reads as high confidence; compression speckle scores low
    x0, y0, x1, y1 = bbox
    fill = area / max((x1 - x0) * (y1 - y0), 1.0)
    return round(min(0.99, 0.5 + 0.5 * fill), 4)


class SyntheticBackend:
    """Color-keyed detector, segmenter, and embedder."""

    name = "synthetic"

    def __init__(self, device: str = "cpu"):
        self.device = device
        self.model_ids = {
            "detector": "color-key",
            "segmenter": "color-key",
            "embedder": "avgpool-16x16",
        }

    def detect_person(self, frame: np.ndarray) -> list:
        """(bbox, score) candidates in full-frame coordinates."""
        blobs = _color_blobs(frame, PALETTE["person lifting"], COLOR_TOLERANCE)
        found = [(bbox, _score(bbox, area)) for bbox, area in blobs]
        found.sort(key=lambda c: (-c[1], c[0]))
        return found

    def detect_rois(self, crop_image: np.ndarray) -> list:
        """(label, crop-local bbox, score) for every stage-2 region."""
        found = []
        for label in STAGE2_LABELS:
            color = PALETTE.get(label)
            if color is None:
                continue
            for bbox, area in _color_blobs(crop_image, color, COLOR_TOLERANCE):
                found.append((label, bbox, _score(bbox, area)))
        found.sort(key=lambda c: (c[0], c[1]))
        return found

    def segment(self, frame: np.ndarray, bbox) -> np.ndarray:
        """Boolean foreground grid local to an integer-aligned box."""
        x0, y0 = int(math.floor(bbox[0])), int(math.floor(bbox[1]))
        x1 = x0 + int(bbox[2] - bbox[0])
        y1 = y0 + int(bbox[3] - bbox[1])
        patch = frame[y0:y1, x0:x1]
        dist = np.linalg.norm(
            patch.astype(np.float64) - np.asarray(BACKGROUND, dtype=np.float64), axis=2
        )
        return dist > BACKGROUND_TOLERANCE

    def embed_batch(self, images: list) -> np.ndarray:
        """One 768-vector per normalized 224x224 RGB image.

        Each channel is average-pooled on a 16x16 grid; 3 x 256 cells
        give the backbone's output width.
        """
        out = np.zeros((len(images), 768), dtype=np.float32)
        for i, img in enumerate(images):
            pooled = img.reshape(16, 14, 16, 14, 3).mean(axis=(1, 3))
            out[i] = pooled.transpose(2, 0, 1).reshape(-1).astype(np.float32)
        return out
