"""Command-line entry point.

Subcommands cover the whole pipeline: synthesize a dataset, relabel it
from trajectories, validate the artifact graph, train a model, run the
cross-validated evaluation grid, aggregate reports with figures, and
two utilities (lifting-equation arithmetic and the gradient check).
Every artifact header carries the master seed and the run config
digest, and every command is deterministic given both.
"""

import argparse
import dataclasses
import glob
import logging
import os
import sys

from ._rng import derive_seed_sequence
from .config import RunConfig, load_run_config
from .errors import LiftError, MissingArtifact, NumericError
from .evalharness import (
    aggregate_report,
    event_window_batch,
    full_grid,
    load_cell_result,
    parse_cell,
    run_cell,
    save_cell_result,
)
from .featpipe import (
    concat_window_batches,
    extract_eval_sequences,
    load_trial_dataset,
    make_windows,
)
from .kinlab import (
    canonical_json,
    label_frames,
    load_manifest,
    lowpass_filter,
    parse_joint_trajectories,
    resample,
    save_frame_labels,
)
from .report import write_report
from .rnle import RnleTask, compute_li, compute_multipliers, compute_rwl
from .roistore import VARIANTS
from .seqreg.checkpoint import save_checkpoint
from .seqreg.model import check_gradients
from .seqreg.train import save_history, train_model
from .simscene import write_synthetic_dataset

log = logging.getLogger("lifthv")

# keeps the thread-pool cap alive for the rest of the process
_blas_limit = None


def _limit_threads() -> None:
    global _blas_limit
    import threadpoolctl

    _blas_limit = threadpoolctl.threadpool_limits(limits=1)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--workers", type=int, help="parallel folds (overrides config)")
    common.add_argument(
        "--deterministic",
        action="store_true",
        default=None,
        help="single-threaded numerics for bit-stable reruns",
    )
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--data-root", help="dataset directory (overrides config)")
    common.add_argument(
        "--log-level", default="info", choices=("debug", "info", "warning", "error")
    )

    p = argparse.ArgumentParser(
        prog="lifthv",
        description="Hand-distance estimation pipeline for lifting-task risk assessment",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common],
                   help="write a synthetic multi-view dataset")
    sub.add_parser("label", parents=[common],
                   help="recompute frame labels from raw trajectories")
    sub.add_parser("ingest", parents=[common],
                   help="validate the dataset artifacts and summarize them")

    train = sub.add_parser("train", parents=[common],
                           help="train one model on the whole dataset")
    train.add_argument("--cell", default="GD-SAM-Dv2/V1+V2+V3",
                       help="pipeline/view cell, e.g. GD-Dv2/V1+V3")

    ev = sub.add_parser("evaluate", parents=[common],
                        help="leave-one-subject-out metrics per cell")
    ev.add_argument("--cell", action="append",
                    help="cell to run (repeatable); default: config cells or full grid")

    sub.add_parser("report", parents=[common],
                   help="aggregate evaluated cells into tables and figures")

    rn = sub.add_parser("rnle", parents=[common],
                        help="recommended weight limit from task parameters")
    rn.add_argument("--h-cm", type=float, required=True)
    rn.add_argument("--v-cm", type=float, required=True)
    rn.add_argument("--d-cm", type=float, required=True)
    rn.add_argument("--a-deg", type=float, default=0.0)
    rn.add_argument("--f-per-min", type=float, default=0.2)
    rn.add_argument("--duration", default="1h", choices=("1h", "2h", "8h"))
    rn.add_argument("--coupling", default="good", choices=("good", "fair", "poor"))
    rn.add_argument("--load-kg", type=float, help="also report the lifting index")

    gc = sub.add_parser("gradcheck", parents=[common],
                        help="finite-difference validation of the backward pass")
    gc.add_argument("--step", type=float, default=1e-5)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--max-entries", type=int,
                    help="sampled entries per parameter tensor (default: all)")
    return p


def _load_config(args) -> RunConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", None),
        "deterministic": getattr(args, "deterministic", None),
        "out_dir": getattr(args, "out", None),
        "data_root": getattr(args, "data_root", None),
    }
    return load_run_config(args.config, overrides)


def _manifest_path(cfg: RunConfig) -> str:
    path = os.path.join(cfg.data_root, "manifest.json")
    if not os.path.exists(path):
        raise MissingArtifact(
            f"no dataset manifest at {path}; run 'lifthv simulate' or point "
            "--data-root at an ingested dataset"
        )
    return path


def _header(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "config_digest": cfg.digest()}


def _cell_filename(cell_id: str) -> str:
    return cell_id.replace("/", "_") + ".json"


def cmd_simulate(cfg: RunConfig, args) -> int:
    manifest = write_synthetic_dataset(cfg.data_root, cfg.scene)
    log.info("seed %d, scene digest in headers", cfg.seed)
    print(manifest)
    return 0


def cmd_label(cfg: RunConfig, args) -> int:
    manifest = _manifest_path(cfg)
    _, entries = load_manifest(manifest)
    root = os.path.dirname(manifest)
    count = 0
    for entry in entries:
        meta = entry.meta
        if "trajectory" not in entry.files or "labels" not in entry.files:
            raise MissingArtifact(f"{meta.trial_id}: manifest lists no trajectory/labels")
        traj = parse_joint_trajectories(
            os.path.join(root, entry.files["trajectory"]), trial_id=meta.trial_id
        )
        at_fps = resample(lowpass_filter(traj), meta.fps)
        labels = label_frames(at_fps, meta)
        save_frame_labels(
            os.path.join(root, entry.files["labels"]),
            labels,
            dict(_header(cfg), trial_id=meta.trial_id),
        )
        count += 1
    log.info("labeled %d trials", count)
    print(manifest)
    return 0


def cmd_ingest(cfg: RunConfig, args) -> int:
    manifest = _manifest_path(cfg)
    summary = dict(_header(cfg), kind="dataset_summary", variants={})
    for variant in VARIANTS:
        ds = load_trial_dataset(manifest, variant)
        frames = sum(t.meta.frame_count for t in ds.trials)
        valid = sum(
            int(seq.valid.sum())
            for t in ds.trials
            for seq in t.view_sequences.values()
        )
        summary["variants"][variant] = {
            "participants": ds.participants(),
            "trials": len(ds.trials),
            "frames": frames,
            "valid_view_frames": valid,
        }
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "dataset_summary.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(summary) + "\n")
    print(path)
    return 0


def _training_arrays(cfg: RunConfig, dataset, cell):
    train_parts = []
    windows, trials = [], []
    for trial in dataset.trials:
        fused = trial.fused_sequence(cell.views)
        train_parts.append(
            make_windows(fused, trial.targets_mm, trial.target_valid,
                         cfg.window, cfg.stride)
        )
        for w in extract_eval_sequences(
            fused, trial.targets_mm, trial.target_valid,
            trial.meta.lift_start_frame, trial.meta.lift_end_frame, cfg.window,
        ):
            windows.append(w)
            trials.append(trial)
    batch = event_window_batch(windows, trials, cfg.window)
    return concat_window_batches(train_parts), batch


def cmd_train(cfg: RunConfig, args) -> int:
    cell = parse_cell(args.cell)
    dataset = load_trial_dataset(_manifest_path(cfg), cell.pipeline)
    train, val = _training_arrays(cfg, dataset, cell)
    seed = int(
        derive_seed_sequence(cfg.seed, "train", cell.cell_id).generate_state(1)[0]
    )
    log.info("cell %s: %d training windows, seed %d", cell.cell_id, train.x.shape[0], seed)
    result = train_model(
        cfg.model, train.x, train.mask, train.y, val.x, val.mask, val.y,
        dataclasses.replace(cfg.train, seed=seed),
    )
    out = os.path.join(cfg.out_dir, "train", cell.cell_id.replace("/", "_"))
    os.makedirs(out, exist_ok=True)
    header = dict(_header(cfg), cell=cell.cell_id, train_seed=seed,
                  best_epoch=result.best_epoch, best_val_loss=result.best_val_loss)
    history_path = os.path.join(out, "history.csv")
    save_history(history_path, result.history, header)
    ckpt_path = os.path.join(out, "model.ckpt")
    save_checkpoint(ckpt_path, cfg.model, result.params, header)
    print(history_path)
    print(ckpt_path)
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    if args.cell:
        cells = [parse_cell(c) for c in args.cell]
    elif cfg.cells:
        cells = [parse_cell(c) for c in cfg.cells]
    else:
        cells = full_grid()
    manifest = _manifest_path(cfg)
    out = os.path.join(cfg.out_dir, "eval")
    os.makedirs(out, exist_ok=True)
    datasets = {}
    for cell in cells:
        if cell.pipeline not in datasets:
            datasets[cell.pipeline] = load_trial_dataset(manifest, cell.pipeline)
        log.info("evaluating %s", cell.cell_id)
        result = run_cell(
            cell,
            datasets[cell.pipeline],
            cfg.model,
            cfg.train,
            cfg.seed,
            window=cfg.window,
            stride=cfg.stride,
            workers=cfg.workers,
        )
        path = os.path.join(out, _cell_filename(cell.cell_id))
        save_cell_result(path, result, header_extra={"config_digest": cfg.digest()})
        print(path)
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    eval_dir = os.path.join(cfg.out_dir, "eval")
    files = sorted(glob.glob(os.path.join(eval_dir, "*.json")))
    if not files:
        raise MissingArtifact(
            f"no cell metrics under {eval_dir}; run 'lifthv evaluate' first"
        )
    tables = aggregate_report([load_cell_result(p) for p in files])
    paths = write_report(os.path.join(cfg.out_dir, "report"), tables, _header(cfg))
    for name in ("summary", "folds", "pairwise", "participant_means"):
        print(paths[name])
    for fig in paths["figures"]:
        print(fig)
    return 0


def cmd_rnle(cfg: RunConfig, args) -> int:
    task = RnleTask(
        h_cm=args.h_cm,
        v_cm=args.v_cm,
        d_cm=args.d_cm,
        a_deg=args.a_deg,
        f_per_min=args.f_per_min,
        duration=args.duration,
        coupling=args.coupling,
    )
    task.validate()
    ms = compute_multipliers(task)
    rwl = compute_rwl(task)
    doc = {
        "kind": "rnle",
        "hm": ms.hm,
        "vm": ms.vm,
        "dm": ms.dm,
        "am": ms.am,
        "fm": ms.fm,
        "cm": ms.cm,
        "rwl_kg": rwl,
    }
    if args.load_kg is not None:
        doc["load_kg"] = args.load_kg
        doc["li"] = compute_li(args.load_kg, rwl)
    print(canonical_json(doc))
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    report = check_gradients(
        seed=cfg.seed,
        step=args.step,
        tolerance=args.tolerance,
        max_entries_per_param=args.max_entries,
    )
    print(
        f"max relative error {report.max_rel_error:.3e} "
        f"({report.worst_param}) over {report.entries_checked} entries, "
        f"tolerance {report.tolerance:.1e}"
    )
    if not report.passed:
        raise NumericError(
            f"gradient check failed: {report.max_rel_error:.3e} > {report.tolerance:.1e}"
        )
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "label": cmd_label,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "rnle": cmd_rnle,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = _load_config(args)
        if cfg.deterministic:
            _limit_threads()
        log.debug("seed %d, config digest %s", cfg.seed, cfg.digest())
        return COMMANDS[args.command](cfg, args)
    except LiftError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
