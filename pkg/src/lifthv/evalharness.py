"""Leave-one-subject-out evaluation over pipeline x view-condition cells.

Each cell pairs a feature pipeline variant with one of seven camera
view conditions.  Every fold trains a fresh model on all but one
participant, monitors the held-out participant's lift start/end
sequences for early stopping, and scores predictions at the exact
event frames in millimeters.  Folds are deterministic given (cell,
fold, master seed), so cells can run in any order or in parallel
without changing a single number.
"""

import dataclasses
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._rng import derive_seed_sequence
from .errors import ConfigError, LengthMismatch, TooFewParticipants
from .featpipe import (
    WINDOW_LEN,
    WINDOW_STRIDE,
    WindowBatch,
    concat_window_batches,
    denormalize_targets,
    extract_eval_sequences,
    make_windows,
    normalize_targets,
)
from .kinlab import VIEW_IDS, canonical_json
from .roistore import VARIANTS
from .seqreg.model import ModelConfig, forward
from .seqreg.train import TrainConfig, train_model

PHASES = ("start", "end")
TARGETS = ("H", "V")
METRIC_NAMES = ("mae", "rmse", "maxae")

VIEW_CONDITIONS = (
    ("V1",),
    ("V2",),
    ("V3",),
    ("V1", "V2"),
    ("V1", "V3"),
    ("V2", "V3"),
    ("V1", "V2", "V3"),
)


class IncompleteGrid(Warning):
    """Report aggregation received a partial or duplicated cell grid."""


# -- domain types ---------------------------------------------------------------

@dataclass(frozen=True)
class ConditionCell:
    """One evaluation cell: a pipeline variant under a view condition."""

    pipeline: str
    views: tuple

    def validate(self) -> None:
        if self.pipeline not in VARIANTS:
            raise ConfigError(f"unknown pipeline variant {self.pipeline!r}")
        if tuple(self.views) not in VIEW_CONDITIONS:
            raise ConfigError(
                f"view condition {self.views} is not one of the seven supported"
            )

    @property
    def cell_id(self) -> str:
        return f"{self.pipeline}/{'+'.join(self.views)}"


def full_grid() -> list:
    """All 14 cells: both pipeline variants under every view condition."""
    return [
        ConditionCell(pipeline=p, views=v) for p in VARIANTS for v in VIEW_CONDITIONS
    ]


def parse_cell(text: str) -> ConditionCell:
    """Parse 'VARIANT/Va+Vb' as printed by cell_id."""
    pipeline, sep, views = text.partition("/")
    if not sep:
        raise ConfigError(f"cell {text!r} is not of the form VARIANT/VIEWS")
    cell = ConditionCell(pipeline=pipeline, views=tuple(views.split("+")))
    cell.validate()
    return cell


@dataclass
class Fold:
    """One cross-validation fold: a held-out participant and the rest."""

    fold_id: int
    held_out: str
    training: tuple

    def validate(self) -> None:
        if self.held_out in self.training:
            raise ConfigError(f"fold {self.fold_id} trains on its held-out participant")
        if not self.training:
            raise TooFewParticipants(f"fold {self.fold_id} has an empty training set")


def make_loso_folds(participants) -> list:
    """One fold per participant, training on all the others."""
    ids = sorted(set(participants))
    if len(ids) < 2:
        raise TooFewParticipants(f"need at least 2 participants, got {len(ids)}")
    folds = []
    for i, held in enumerate(ids):
        fold = Fold(
            fold_id=i,
            held_out=held,
            training=tuple(p for p in ids if p != held),
        )
        fold.validate()
        folds.append(fold)
    return folds


@dataclass
class MetricSet:
    """Error summary for one (phase, target) over a fold's event frames."""

    phase: str
    target: str
    mae_mm: float
    rmse_mm: float
    maxae_mm: float
    n: int

    def validate(self) -> None:
        if self.phase not in PHASES or self.target not in TARGETS:
            raise ConfigError(f"bad metric key ({self.phase}, {self.target})")
        if self.n < 1:
            raise LengthMismatch("metric set needs at least one sample")
        if not 0.0 <= self.mae_mm <= self.rmse_mm <= self.maxae_mm:
            raise ConfigError(
                f"metric ordering violated: mae {self.mae_mm}, "
                f"rmse {self.rmse_mm}, maxae {self.maxae_mm}"
            )


def compute_metrics(preds_mm, truths_mm, phase: str, target: str) -> MetricSet:
    """MAE, RMSE, and MaxAE between equal-length vectors in mm."""
    preds = np.asarray(preds_mm, dtype=np.float64).reshape(-1)
    truths = np.asarray(truths_mm, dtype=np.float64).reshape(-1)
    if preds.size == 0:
        raise LengthMismatch("no evaluation samples")
    if preds.shape != truths.shape:
        raise LengthMismatch(
            f"{preds.size} predictions against {truths.size} ground truths"
        )
    err = np.abs(preds - truths)
    ms = MetricSet(
        phase=phase,
        target=target,
        mae_mm=float(err.mean()),
        rmse_mm=float(np.sqrt(np.mean(err * err))),
        maxae_mm=float(err.max()),
        n=int(err.size),
    )
    ms.validate()
    return ms


# -- fold execution --------------------------------------------------------------

@dataclass
class FoldResult:
    """Metrics and training provenance for one fold of one cell."""

    fold_id: int
    participant_id: str
    seed: int
    best_epoch: int
    best_val_loss: float
    metrics: list


@dataclass
class CellResult:
    cell: ConditionCell
    master_seed: int
    fold_results: list


def fold_seed(master_seed: int, fold_id: int) -> int:
    """Stable per-fold training seed, shared by every cell.

    Cells of one study train from identical initializations per fold, so
    cell-to-cell comparisons are paired rather than confounded by init
    luck.
    """
    return int(
        derive_seed_sequence(master_seed, "fold", fold_id).generate_state(1)[0]
    )


def event_window_batch(windows: list, trials: list, window: int) -> WindowBatch:
    """Stack event windows with per-frame targets for validation loss."""
    b = len(windows)
    x = np.stack([w.x for w in windows])
    mask = np.zeros((b, window), dtype=bool)
    y = np.zeros((b, window, 2), dtype=np.float32)
    frame_index = np.full((b, window), -1, dtype=np.int32)
    for i, (w, trial) in enumerate(zip(windows, trials)):
        n = trial.meta.frame_count
        stop = min(w.frame_start + window, n)
        k = stop - w.frame_start
        sl = slice(w.frame_start, stop)
        mask[i, :k] = w.mask[:k] & trial.target_valid[sl]
        y[i, :k] = normalize_targets(trial.targets_mm[sl])
        frame_index[i, :k] = np.arange(w.frame_start, stop, dtype=np.int32)
    y[~mask] = 0.0
    return WindowBatch(x=x, mask=mask, y=y, frame_index=frame_index)


def run_fold(
    cell: ConditionCell,
    dataset,
    fold: Fold,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    master_seed: int,
    window: int = WINDOW_LEN,
    stride: int = WINDOW_STRIDE,
) -> FoldResult:
    """Train on the fold's training participants, score the held-out one."""
    seed = fold_seed(master_seed, fold.fold_id)

    train_parts = []
    for trial in dataset.trials_for(fold.training):
        fused = trial.fused_sequence(cell.views)
        train_parts.append(
            make_windows(fused, trial.targets_mm, trial.target_valid, window, stride)
        )
    train = concat_window_batches(train_parts)

    held_trials = dataset.trials_for((fold.held_out,))
    event_windows = []
    event_trials = []
    for trial in held_trials:
        fused = trial.fused_sequence(cell.views)
        for w in extract_eval_sequences(
            fused,
            trial.targets_mm,
            trial.target_valid,
            trial.meta.lift_start_frame,
            trial.meta.lift_end_frame,
            window,
        ):
            event_windows.append(w)
            event_trials.append(trial)
    val = event_window_batch(event_windows, event_trials, window)

    fit = train_model(
        model_cfg,
        train.x,
        train.mask,
        train.y,
        val.x,
        val.mask,
        val.y,
        dataclasses.replace(train_cfg, seed=seed),
    )

    out = forward(fit.params, model_cfg, val.x, val.mask, train=False)
    rows = out[np.arange(len(event_windows)), [w.event_offset for w in event_windows]]
    preds_mm = denormalize_targets(np.asarray(rows, dtype=np.float64))

    metrics = []
    for phase in PHASES:
        idx = [i for i, w in enumerate(event_windows) if w.phase == phase]
        truths = np.stack([event_windows[i].target_mm for i in idx])
        for t_i, target in enumerate(TARGETS):
            metrics.append(
                compute_metrics(
                    preds_mm[idx, t_i], truths[:, t_i], phase=phase, target=target
                )
            )
    return FoldResult(
        fold_id=fold.fold_id,
        participant_id=fold.held_out,
        seed=seed,
        best_epoch=fit.best_epoch,
        best_val_loss=float(fit.best_val_loss),
        metrics=metrics,
    )


def run_cell(
    cell: ConditionCell,
    dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    master_seed: int,
    window: int = WINDOW_LEN,
    stride: int = WINDOW_STRIDE,
    workers: int = 1,
) -> CellResult:
    """All LOSO folds of one cell; parallel folds change no numbers."""
    cell.validate()
    if dataset.variant != cell.pipeline:
        raise ConfigError(
            f"dataset holds {dataset.variant} features, cell wants {cell.pipeline}"
        )
    folds = make_loso_folds(dataset.participants())

    def one(fold):
        return run_fold(
            cell, dataset, fold, model_cfg, train_cfg, master_seed, window, stride
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, folds))
    else:
        results = [one(f) for f in folds]
    return CellResult(cell=cell, master_seed=master_seed, fold_results=results)


# -- result files ----------------------------------------------------------------

def cell_result_to_doc(result: CellResult) -> dict:
    return {
        "kind": "cell_metrics",
        "version": 1,
        "cell": result.cell.cell_id,
        "master_seed": result.master_seed,
        "folds": [
            {
                "fold_id": fr.fold_id,
                "participant_id": fr.participant_id,
                "seed": fr.seed,
                "best_epoch": fr.best_epoch,
                "best_val_loss": fr.best_val_loss,
                "metrics": [dataclasses.asdict(m) for m in fr.metrics],
            }
            for fr in result.fold_results
        ],
    }


def cell_result_from_doc(doc: dict) -> CellResult:
    if doc.get("kind") != "cell_metrics":
        raise ConfigError(f"not a cell metrics document: kind={doc.get('kind')!r}")
    folds = []
    for f in doc["folds"]:
        metrics = [MetricSet(**m) for m in f["metrics"]]
        for m in metrics:
            m.validate()
        folds.append(
            FoldResult(
                fold_id=int(f["fold_id"]),
                participant_id=f["participant_id"],
                seed=int(f["seed"]),
                best_epoch=int(f["best_epoch"]),
                best_val_loss=float(f["best_val_loss"]),
                metrics=metrics,
            )
        )
    return CellResult(
        cell=parse_cell(doc["cell"]),
        master_seed=int(doc["master_seed"]),
        fold_results=folds,
    )


def save_cell_result(path, result: CellResult, header_extra: dict | None = None) -> None:
    doc = cell_result_to_doc(result)
    doc.update(header_extra or {})
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(doc) + "\n")


def load_cell_result(path) -> CellResult:
    with open(path, "r", encoding="utf-8") as fh:
        return cell_result_from_doc(json.load(fh))


# -- aggregation -----------------------------------------------------------------

@dataclass
class ReportTables:
    """Plot-ready tables: per-cell summary, per-fold values, pairwise deltas."""

    summary_rows: list
    fold_rows: list
    pairwise_rows: list


def _metric_value(ms: MetricSet, name: str) -> float:
    return {"mae": ms.mae_mm, "rmse": ms.rmse_mm, "maxae": ms.maxae_mm}[name]


def aggregate_report(cell_results: list) -> ReportTables:
    """Join cell results into summary, long-format, and pairwise tables.

    A missing or duplicated cell raises an IncompleteGrid warning and the
    tables are built from whatever was supplied.
    """
    seen = [r.cell.cell_id for r in cell_results]
    if len(set(seen)) != len(seen):
        warnings.warn(f"duplicated cells in report input: {seen}", IncompleteGrid)
    missing = {c.cell_id for c in full_grid()} - set(seen)
    if missing:
        warnings.warn(
            f"report covers {len(set(seen))} of 14 cells; missing {sorted(missing)}",
            IncompleteGrid,
        )

    results = sorted(cell_results, key=lambda r: r.cell.cell_id)
    summary_rows = []
    fold_rows = []
    means = {}
    for res in results:
        cid = res.cell.cell_id
        for fr in res.fold_results:
            for ms in fr.metrics:
                fold_rows.append(
                    {
                        "cell": cid,
                        "fold_id": fr.fold_id,
                        "participant_id": fr.participant_id,
                        "phase": ms.phase,
                        "target": ms.target,
                        "mae_mm": ms.mae_mm,
                        "rmse_mm": ms.rmse_mm,
                        "maxae_mm": ms.maxae_mm,
                        "n": ms.n,
                        "seed": fr.seed,
                        "best_epoch": fr.best_epoch,
                    }
                )
        for phase in PHASES:
            for target in TARGETS:
                picked = [
                    ms
                    for fr in res.fold_results
                    for ms in fr.metrics
                    if ms.phase == phase and ms.target == target
                ]
                for name in METRIC_NAMES:
                    vals = np.array([_metric_value(ms, name) for ms in picked])
                    mean = float(vals.mean()) if vals.size else float("nan")
                    sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                    summary_rows.append(
                        {
                            "cell": cid,
                            "phase": phase,
                            "target": target,
                            "metric": name,
                            "mean_mm": mean,
                            "sd_mm": sd,
                            "n_folds": int(vals.size),
                        }
                    )
                    means[(cid, phase, target, name)] = mean

    pairwise_rows = []
    ids = [r.cell.cell_id for r in results]
    for phase in PHASES:
        for target in TARGETS:
            for name in METRIC_NAMES:
                for i, a in enumerate(ids):
                    for b in ids[i + 1 :]:
                        ma = means[(a, phase, target, name)]
                        mb = means[(b, phase, target, name)]
                        pairwise_rows.append(
                            {
                                "phase": phase,
                                "target": target,
                                "metric": name,
                                "cell_a": a,
                                "cell_b": b,
                                "mean_a_mm": ma,
                                "mean_b_mm": mb,
                                "diff_mm": ma - mb,
                            }
                        )
    return ReportTables(
        summary_rows=summary_rows, fold_rows=fold_rows, pairwise_rows=pairwise_rows
    )
