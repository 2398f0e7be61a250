"""Report tables and figure rendering."""

import json

import pytest

from lifthv.evalharness import (
    PHASES,
    TARGETS,
    CellResult,
    ConditionCell,
    FoldResult,
    MetricSet,
    ReportTables,
    aggregate_report,
    full_grid,
)
from lifthv.report import (
    FOLD_COLUMNS,
    PARTICIPANT_COLUMNS,
    participant_mean_rows,
    render_figures,
    write_report,
    write_report_tables,
    write_table,
)


def small_tables(folds=2):
    cells = [full_grid()[0], full_grid()[7]]
    results = []
    for cell in cells:
        frs = []
        for i in range(folds):
            metrics = [
                MetricSet(phase=p, target=t, mae_mm=40.0 + 3.0 * i,
                          rmse_mm=50.0 + 3.0 * i, maxae_mm=80.0 + 3.0 * i, n=4)
                for p in PHASES for t in TARGETS
            ]
            frs.append(FoldResult(fold_id=i, participant_id=f"P{i + 1:02d}",
                                  seed=100 + i, best_epoch=3, best_val_loss=0.1,
                                  metrics=metrics))
        results.append(CellResult(cell=cell, master_seed=1, fold_results=frs))
    with pytest.warns(Warning):
        return aggregate_report(results)


def test_write_table_is_byte_stable_and_parseable(tmp_path):
    rows = [
        {"cell": "a", "value_mm": 1.25, "n": 3},
        {"cell": "b", "value_mm": 0.1 + 0.2, "n": 4},
    ]
    for name in ("t1.csv", "t2.csv"):
        write_table(tmp_path / name, rows, ("cell", "value_mm", "n"), {"seed": 7})
    b1 = (tmp_path / "t1.csv").read_bytes()
    assert b1 == (tmp_path / "t2.csv").read_bytes()
    lines = b1.decode("utf-8").splitlines()
    header = json.loads(lines[0][2:])
    assert header["seed"] == 7 and header["kind"] == "report_table"
    assert lines[1] == "cell,value_mm,n"
    # repr floats round-trip exactly
    assert float(lines[3].split(",")[1]) == 0.1 + 0.2


def test_report_tables_row_counts(tmp_path):
    tables = small_tables()
    paths = write_report_tables(tmp_path, tables, {"seed": 1})
    assert sorted(paths) == ["folds", "pairwise", "participant_means", "summary"]
    folds = (tmp_path / "fold_metrics.csv").read_text().splitlines()
    assert folds[1] == ",".join(FOLD_COLUMNS)
    assert len(folds) == 2 + 2 * 2 * 4  # comment + columns + cells x folds x metricsets
    means = (tmp_path / "participant_means.csv").read_text().splitlines()
    assert means[1] == ",".join(PARTICIPANT_COLUMNS)
    assert len(means) == 2 + len(participant_mean_rows(tables))
    assert len(participant_mean_rows(tables)) == 2 * 2 * 4 * 3


def test_figures_render_per_phase_and_target(tmp_path):
    tables = small_tables()
    paths = render_figures(tmp_path, tables)
    assert len(paths) == 4
    for path in paths:
        data = open(path, "rb").read()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert len(data) > 1000
    with pytest.raises(ValueError):
        render_figures(tmp_path, tables, metric="median")


def test_figures_are_byte_stable(tmp_path):
    tables = small_tables()
    a = render_figures(tmp_path / "a", tables)
    b = render_figures(tmp_path / "b", tables)
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_partial_grid_still_renders(tmp_path):
    tables = small_tables()
    # drop one cell's rows entirely
    kept = [r for r in tables.fold_rows if r["cell"] == tables.fold_rows[0]["cell"]]
    partial = ReportTables(summary_rows=tables.summary_rows, fold_rows=kept,
                           pairwise_rows=tables.pairwise_rows)
    paths = write_report(tmp_path, partial, {"seed": 1})
    assert len(paths["figures"]) == 4
