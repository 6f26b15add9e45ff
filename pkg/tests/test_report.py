"""Delimited output, JSON payloads, and figure rendering."""

import json

import numpy as np
import pytest

from benchtrack.report import (format_cell, render_field_heatmap,
                               render_lines, run_payload, write_csv,
                               write_json)


def test_format_cell_variants():
    assert format_cell(None) == ""
    assert format_cell("label") == "label"
    assert format_cell(True) == "true"
    assert format_cell(False) == "false"
    assert format_cell(float("nan")) == "nan"
    assert format_cell(0.25) == "0.25"
    assert format_cell(np.float64(1.0) / 3.0) == "0.333333333333"
    assert format_cell(np.int64(7)) == "7"


def test_write_csv_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["a", "b"], [(1.0, 2.0), (3.5, np.nan)])
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "a,b"
    assert lines[1] == "1,2"
    assert lines[2] == "3.5,nan"


def test_write_csv_rejects_ragged_rows(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "t.csv", ["a", "b"], [(1.0,)])


def test_write_json_handles_numpy(tmp_path):
    p = tmp_path / "t.json"
    write_json(p, {"v": np.float64(0.5), "arr": np.arange(3),
                   "bad": float("nan"), "flag": np.bool_(True)})
    back = json.loads(p.read_text())
    assert back["v"] == 0.5
    assert back["arr"] == [0, 1, 2]
    assert back["bad"] == "nan"
    assert back["flag"] is True
    assert p.read_text().endswith("\n")


def test_run_payload_shape():
    payload = run_payload({"seed": 1}, {"mean": 2.0})
    assert payload["config"] == {"seed": 1}
    assert payload["results"] == {"mean": 2.0}


def test_render_lines_writes_png(tmp_path):
    p = tmp_path / "fig.png"
    x = np.linspace(0, 1, 20)
    render_lines(p, x, [np.sin(x), np.cos(x)], ["s", "c"],
                 title="t", xlabel="x", ylabel="y")
    assert p.exists() and p.stat().st_size > 1000


def test_render_lines_two_panels(tmp_path):
    p = tmp_path / "fig2.png"
    x = np.linspace(0, 1, 10)
    render_lines(p, x, [x], ["v"], second_panel=[x ** 2],
                 second_labels=["q"], second_ylabel="y2")
    assert p.exists() and p.stat().st_size > 1000


def test_render_heatmap_writes_png(tmp_path):
    p = tmp_path / "hm.png"
    xs = np.linspace(0, 1, 8)
    ys = np.linspace(0, 2, 6)
    vals = np.outer(ys, xs)
    render_field_heatmap(p, xs, ys, vals, title="h")
    assert p.exists() and p.stat().st_size > 1000
