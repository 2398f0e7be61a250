"""Video decoding."""

import os

import cv2

from .errors import DecodeFailure

FRAME_WIDTH = 1280
FRAME_HEIGHT = 720


def iter_frames(path, width: int = FRAME_WIDTH, height: int = FRAME_HEIGHT):
    """Yield (frame_index, BGR array) for every frame of a video.

    Raises DecodeFailure when the file cannot be opened, yields nothing
    decodable, or frames do not match the expected geometry.
    """
    if not os.path.exists(path):
        raise DecodeFailure(f"video not found: {path}")
    cap = cv2.VideoCapture(os.fspath(path))
    if not cap.isOpened():
        raise DecodeFailure(f"cannot open video: {path}")
    try:
        index = 0
        while True:
            got, frame = cap.read()
            if not got:
                break
            if frame.ndim != 3 or frame.shape[2] != 3:
                raise DecodeFailure(f"{path}: frame {index} is not 3-channel")
            if frame.shape[1] != width or frame.shape[0] != height:
                raise DecodeFailure(
                    f"{path}: frame {index} is {frame.shape[1]}x{frame.shape[0]}, "
                    f"expected {width}x{height}"
                )
            yield index, frame
            index += 1
        if index == 0:
            raise DecodeFailure(f"{path}: no decodable frames")
    finally:
        cap.release()
