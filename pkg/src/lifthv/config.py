"""Run configuration: one JSON document, one master seed.

Every stochastic step in a run (scene synthesis, weight init, shuffling,
dropout, per-fold training) derives its stream from the single top-level
seed, so a config file plus a seed pins the entire pipeline.  Sections
mirror the library's config dataclasses and reject unknown keys.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .evalharness import parse_cell
from .featpipe import WINDOW_LEN, WINDOW_STRIDE
from .kinlab import canonical_digest
from .seqreg.model import ModelConfig
from .seqreg.train import TrainConfig
from .simscene import SyntheticSceneConfig


@dataclass
class RunConfig:
    """Everything one pipeline run needs besides the input files."""

    data_root: str = "data"
    out_dir: str = "out"
    seed: int = 0
    workers: int = 1
    deterministic: bool = False
    window: int = WINDOW_LEN
    stride: int = WINDOW_STRIDE
    cells: tuple = ()  # cell id strings; empty means the full grid
    scene: SyntheticSceneConfig = field(default_factory=SyntheticSceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if self.window < 1 or self.stride < 1:
            raise ConfigError("window and stride must be at least 1")
        if self.model.max_len < self.window:
            raise ConfigError(
                f"model max_len {self.model.max_len} is below the window {self.window}"
            )
        for text in self.cells:
            parse_cell(text)
        self.scene.validate()
        self.model.validate()
        if self.train.lr <= 0 or self.train.batch_size < 1 or self.train.max_epochs < 1:
            raise ConfigError("training needs a positive lr, batch size, and epoch count")

    def to_doc(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Short stable digest of the fields that shape the numbers.

        Output locations and execution knobs (workers, deterministic)
        are excluded: results are invariant to them, so artifacts from
        runs that differ only there compare equal.
        """
        doc = self.to_doc()
        for key in ("data_root", "out_dir", "workers", "deterministic"):
            doc.pop(key)
        return canonical_digest(doc)


_SECTIONS = {"scene": SyntheticSceneConfig, "model": ModelConfig, "train": TrainConfig}
_TOP_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def _build_section(cls, section: dict, name: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(section) - set(fields)
    if unknown:
        raise ConfigError(f"{name} section has unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in section.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}") from exc


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from a JSON file plus flag overrides.

    ``overrides`` maps top-level field names to values and wins over the
    file; None values are ignored.  The scene section must not set its
    own seed: the run seed is the only entropy source.
    """
    doc = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: run config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown run config keys {sorted(unknown)}")

    top = {k: v for k, v in doc.items() if k not in _SECTIONS}
    for key, value in (overrides or {}).items():
        if key not in _TOP_KEYS or key in _SECTIONS:
            raise ConfigError(f"cannot override {key!r}")
        if value is not None:
            top[key] = value
    if isinstance(top.get("cells"), list):
        top["cells"] = tuple(top["cells"])

    sections = {}
    for name, cls in _SECTIONS.items():
        body = doc.get(name, {})
        if not isinstance(body, dict):
            raise ConfigError(f"{name} section must be a JSON object")
        if name == "scene" and "seed" in body:
            raise ConfigError("set the top-level seed, not scene.seed")
        sections[name] = _build_section(cls, body, name)

    try:
        cfg = RunConfig(**top, **sections)
    except TypeError as exc:
        raise ConfigError(f"bad run config: {exc}") from exc
    cfg = dataclasses.replace(
        cfg, scene=dataclasses.replace(cfg.scene, seed=cfg.seed)
    )
    cfg.validate()
    return cfg
