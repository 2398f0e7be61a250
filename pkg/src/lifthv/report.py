"""Report emission: comma-separated tables plus box-plot figures.

Tables carry one canonical-JSON provenance comment and repr-formatted
floats, so identical inputs rewrite byte-identically.  Figures are
rendered headlessly to PNG files next to the tables.
"""

import os

from .evalharness import METRIC_NAMES, PHASES, TARGETS, VIEW_CONDITIONS, ReportTables
from .kinlab import canonical_json
from .roistore import VARIANTS

SUMMARY_COLUMNS = ("cell", "phase", "target", "metric", "mean_mm", "sd_mm", "n_folds")
FOLD_COLUMNS = (
    "cell", "fold_id", "participant_id", "phase", "target",
    "mae_mm", "rmse_mm", "maxae_mm", "n", "seed", "best_epoch",
)
PAIRWISE_COLUMNS = (
    "phase", "target", "metric", "cell_a", "cell_b",
    "mean_a_mm", "mean_b_mm", "diff_mm",
)
PARTICIPANT_COLUMNS = ("cell", "participant_id", "phase", "target", "metric", "value_mm")


def _format(value) -> str:
    if isinstance(value, bool):
        raise ValueError(f"unexpected boolean cell {value!r}")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(path, rows: list, columns: tuple, header: dict) -> None:
    """Write dict rows as CSV under one provenance comment line."""
    meta = dict(header)
    meta.setdefault("kind", "report_table")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + canonical_json(meta) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format(row[c]) for c in columns) + "\n")


def participant_mean_rows(tables: ReportTables) -> list:
    """Long-format per-participant means, one row per metric value."""
    out = []
    for row in tables.fold_rows:
        for name in METRIC_NAMES:
            out.append(
                {
                    "cell": row["cell"],
                    "participant_id": row["participant_id"],
                    "phase": row["phase"],
                    "target": row["target"],
                    "metric": name,
                    "value_mm": row[f"{name}_mm"],
                }
            )
    return out


def write_report_tables(out_dir, tables: ReportTables, header: dict) -> dict:
    """Emit the four standard tables; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "summary": os.path.join(out_dir, "summary.csv"),
        "folds": os.path.join(out_dir, "fold_metrics.csv"),
        "pairwise": os.path.join(out_dir, "pairwise_differences.csv"),
        "participant_means": os.path.join(out_dir, "participant_means.csv"),
    }
    write_table(paths["summary"], tables.summary_rows, SUMMARY_COLUMNS,
                dict(header, table="summary"))
    write_table(paths["folds"], tables.fold_rows, FOLD_COLUMNS,
                dict(header, table="fold_metrics"))
    write_table(paths["pairwise"], tables.pairwise_rows, PAIRWISE_COLUMNS,
                dict(header, table="pairwise_differences"))
    write_table(paths["participant_means"], participant_mean_rows(tables),
                PARTICIPANT_COLUMNS, dict(header, table="participant_means"))
    return paths


def render_figures(out_dir, tables: ReportTables, metric: str = "mae") -> list:
    """Box plots of per-fold errors across cells, one figure per phase/target.

    Cells are grouped by view condition with one box per pipeline
    variant; cells absent from the tables are skipped, so partial grids
    still render.
    """
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    if metric not in METRIC_NAMES:
        raise ValueError(f"unknown metric {metric!r}")
    os.makedirs(out_dir, exist_ok=True)
    key = f"{metric}_mm"
    fills = {v: c for v, c in zip(VARIANTS, ("#9ecae1", "#fdae6b"))}
    paths = []
    for phase in PHASES:
        for target in TARGETS:
            data, labels, colors = [], [], []
            for views in VIEW_CONDITIONS:
                for variant in VARIANTS:
                    cell_id = f"{variant}/{'+'.join(views)}"
                    vals = [
                        row[key]
                        for row in tables.fold_rows
                        if row["cell"] == cell_id
                        and row["phase"] == phase
                        and row["target"] == target
                    ]
                    if not vals:
                        continue
                    data.append(vals)
                    labels.append(f"{'+'.join(views)}\n{variant}")
                    colors.append(fills[variant])
            if not data:
                continue
            fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(data)), 4.5))
            boxes = ax.boxplot(data, patch_artist=True, tick_labels=labels)
            for patch, color in zip(boxes["boxes"], colors):
                patch.set_facecolor(color)
            ax.set_ylabel(f"{metric.upper()} (mm)")
            ax.set_title(f"{target} at lift {phase}")
            ax.tick_params(axis="x", labelsize=7)
            fig.tight_layout()
            path = os.path.join(out_dir, f"{metric}_{phase}_{target}.png")
            fig.savefig(path, dpi=120)
            plt.close(fig)
            paths.append(path)
    return paths


def write_report(out_dir, tables: ReportTables, header: dict) -> dict:
    """Tables plus figures; returns {name: path} with a 'figures' list."""
    paths = write_report_tables(out_dir, tables, header)
    paths["figures"] = render_figures(out_dir, tables)
    return paths
