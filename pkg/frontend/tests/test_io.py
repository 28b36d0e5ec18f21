import pytest

from bmoll_plot.io import (
    SchemaError,
    read_aggregate,
    read_front,
    read_json,
    read_pareto_set,
    read_surface,
    read_trace,
)

from conftest import write_csv


class TestReaders:
    def test_trace(self, demo_suite):
        cols = read_trace(demo_suite / "opt" / "trace.csv")
        assert set(cols) == {"iter", "time_s", "f_true", "trial"}
        assert cols["iter"].dtype.kind == "i"
        assert cols["f_true"].size == 24

    def test_aggregate(self, demo_suite):
        cols = read_aggregate(demo_suite / "rn" / "aggregate.csv")
        assert cols["f_mean"].size == 12
        assert (cols["ci95"] >= 0).all()

    def test_front_and_meta(self, demo_suite):
        front = read_front(demo_suite / "ra" / "front.csv")
        assert front["lambda1"].size == 30
        meta = read_json(demo_suite / "ra" / "front_meta.json")
        assert meta["mark_kind"] == "pessimistic"

    def test_surface_and_set(self, demo_suite):
        surf = read_surface(demo_suite / "opt" / "surface.csv")
        assert surf["f_u"].size == 24 * 20
        pset = read_pareto_set(demo_suite / "opt" / "pareto_set.csv")
        assert pset["y"].size == 30


class TestSchemaErrors:
    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_csv(path, ("iter", "time_s", "value", "trial"), [(0, 0.0, 1.0, 0)])
        with pytest.raises(SchemaError, match="f_true"):
            read_trace(path)

    def test_unparsable_row(self, tmp_path):
        path = tmp_path / "front.csv"
        write_csv(path, ("lambda1", "f1", "f2"), [(0.0, "oops", 1.0)])
        with pytest.raises(SchemaError):
            read_front(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "aggregate.csv"
        path.write_text("")
        with pytest.raises(SchemaError):
            read_aggregate(path)
