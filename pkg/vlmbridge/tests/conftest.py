import json
import os

import pytest

from vlmbridge.job import AdapterJob

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


@pytest.fixture(scope="session")
def clip_path() -> str:
    return os.path.join(DATA_DIR, "clip.avi")


@pytest.fixture(scope="session")
def golden() -> dict:
    with open(os.path.join(DATA_DIR, "golden.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture
def make_job(clip_path, tmp_path):
    """Job factory bound to the sample clip and a per-test output dir."""

    def build(variant: str, subdir: str = "out", **kw) -> AdapterJob:
        out = tmp_path / subdir
        fields = dict(
            video=clip_path,
            view_id="V1",
            trial_id="SAMPLE_T00",
            variant=variant,
            detections_out=str(out / "detections.jsonl"),
            features_out=str(out / "features.bin"),
            backend="synthetic",
        )
        fields.update(kw)
        return AdapterJob(**fields)

    return build
