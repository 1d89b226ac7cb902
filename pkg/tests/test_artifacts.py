"""Tests for dataset, selection and result codecs."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from selgraph.models import IntervalResult, Method
from selgraph.pipeline.artifacts import (
    DataFormatError,
    read_data_csv,
    read_results_json,
    read_selection_json,
    read_theta_csv,
    selection_event,
    selection_record,
    write_data_csv,
    write_edges_json,
    write_results_json,
    write_selection_json,
    write_theta_csv,
)
from selgraph.pipeline.selector import suff_stat


def record_for(event, suff, **kwargs):
    defaults = dict(n=suff.n, alpha=0.1, kappa=0.5, omega_scale=1.0, seed=7)
    defaults.update(kwargs)
    return selection_record(event, **defaults)


class TestDataCsv:
    def test_round_trip_is_exact(self, tmp_path, chain_data):
        path = write_data_csv(tmp_path / "data.csv", chain_data)
        assert path.read_text().splitlines()[0] == "x1,x2,x3,x4,x5"
        np.testing.assert_array_equal(read_data_csv(path), chain_data)

    def test_non_numeric_cell_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2\n1.0,2.0\n3.0,abc\n")
        with pytest.raises(DataFormatError, match="line 3") as info:
            read_data_csv(path)
        assert info.value.line == 3

    def test_missing_cell_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2\n1.0,2.0\n3.0,4.0\n5.0,\n")
        with pytest.raises(DataFormatError) as info:
            read_data_csv(path)
        assert info.value.line == 4

    def test_non_finite_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2\ninf,2.0\n")
        with pytest.raises(DataFormatError, match="non-finite"):
            read_data_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataFormatError):
            read_data_csv(path)

    def test_theta_must_be_square(self, tmp_path):
        path = write_theta_csv(tmp_path / "theta.csv", np.ones((3, 2)))
        with pytest.raises(DataFormatError, match="square"):
            read_theta_csv(path)


class TestSelectionJson:
    def test_round_trip_rebuilds_event(self, tmp_path, chain_event, chain_suff):
        record = record_for(chain_event, chain_suff, config_hash="abc")
        path = write_selection_json(tmp_path / "selection.json", record)
        loaded = read_selection_json(path)
        assert loaded == record
        event = selection_event(loaded, chain_suff)
        assert event.sorted_edges() == chain_event.sorted_edges()
        assert all(node.kkt_residual <= 1e-6 for node in loaded.nodes)

    def test_rejects_other_data(self, chain_event, chain_suff, chain_data):
        record = record_for(chain_event, chain_suff)
        other = suff_stat(chain_data * 1.5)
        with pytest.raises(ValueError, match="KKT residual"):
            selection_event(record, other)

    def test_rejects_dimension_mismatch(self, chain_event, chain_suff, chain_data):
        record = record_for(chain_event, chain_suff)
        with pytest.raises(ValueError, match="fitted on"):
            selection_event(record, suff_stat(chain_data[:100]))

    def test_rejects_tampered_edges(self, chain_event, chain_suff):
        record = record_for(chain_event, chain_suff)
        tampered = record.model_copy(update={"edges": []})
        with pytest.raises(ValueError, match="edge list"):
            selection_event(tampered, chain_suff)


class TestResultsJson:
    def test_empty_list(self, tmp_path):
        path = write_results_json(tmp_path / "results.json", [])
        assert path.read_text().strip() == "[]"
        assert read_results_json(path) == []

    def test_unbounded_endpoints_survive(self, tmp_path):
        result = IntervalResult(
            edge=(0, 2),
            lower=-math.inf,
            upper=1.5,
            pvalue=0.3,
            alpha=0.1,
            significant=False,
            method=Method.split,
        )
        path = write_results_json(tmp_path / "results.json", [result])
        assert "Infinity" in path.read_text()
        (loaded,) = read_results_json(path)
        assert loaded == result
        assert not loaded.bounded

    def test_error_key_only_on_failure(self, tmp_path):
        ok = IntervalResult(edge=(0, 1), lower=-1.0, upper=1.0, pvalue=0.5, alpha=0.1, significant=False)
        failed = ok.model_copy(update={"edge": (1, 2), "error": "no finite grid point"})
        path = write_results_json(tmp_path / "results.json", [ok, failed])
        first, second = json.loads(path.read_text())
        assert "error" not in first
        assert second["error"] == "no finite grid point"
        assert read_results_json(path) == [ok, failed]


class TestEdgesJson:
    def test_sorted_pairs(self, tmp_path, chain_graph):
        path = write_edges_json(tmp_path / "edges.json", chain_graph)
        raw = json.loads(path.read_text())
        assert raw == [list(e) for e in sorted(chain_graph.true_edges)]
