import shutil
import subprocess

import pytest

from bmoll_plot.cli import main
from bmoll_plot.figures import FigureSpec, render


class TestRender:
    @pytest.mark.parametrize("kind", ["trace", "trace-ci", "front", "solution-space", "panel"])
    def test_kinds_render(self, demo_suite, tmp_path, kind):
        out = tmp_path / f"{kind}.png"
        render(FigureSpec(kind=kind, in_dir=demo_suite, out_path=out))
        assert out.exists() and out.stat().st_size > 1000

    def test_single_run_trace(self, demo_suite, tmp_path):
        out = tmp_path / "one.png"
        render(FigureSpec(kind="trace", in_dir=demo_suite / "opt", out_path=out))
        assert out.exists()

    def test_time_axis(self, demo_suite, tmp_path):
        out = tmp_path / "time.png"
        render(FigureSpec(kind="trace-ci", in_dir=demo_suite, out_path=out,
                          xaxis="time"))
        assert out.exists()

    def test_byte_stable(self, demo_suite, tmp_path):
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        render(FigureSpec(kind="front", in_dir=demo_suite, out_path=a))
        render(FigureSpec(kind="front", in_dir=demo_suite, out_path=b))
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_kind_rejected(self, demo_suite, tmp_path):
        with pytest.raises(ValueError):
            FigureSpec(kind="pie", in_dir=demo_suite, out_path=tmp_path / "x.png")


class TestCli:
    def test_render_via_cli(self, demo_suite, tmp_path):
        out = tmp_path / "fig.png"
        code = main(["front", "--in", str(demo_suite), "--out", str(out)])
        assert code == 0 and out.exists()

    def test_schema_mismatch_exit_2_names_column(self, tmp_path, capsys):
        bad = tmp_path / "run"
        bad.mkdir()
        (bad / "aggregate.csv").write_text("iter,value\n0,1.0\n")
        code = main(["trace-ci", "--in", str(bad), "--out", str(tmp_path / "x.png")])
        assert code == 2
        assert "f_mean" in capsys.readouterr().err

    def test_missing_inputs_exit_2(self, tmp_path):
        code = main(["front", "--in", str(tmp_path), "--out", str(tmp_path / "x.png")])
        assert code == 2


@pytest.mark.skipif(shutil.which("bmoll") is None,
                    reason="bmoll CLI not installed")
class TestAgainstRealHarness:
    def test_panel_and_ci_from_real_outputs(self, tmp_path):
        suite_dir = tmp_path / "det"
        rc = subprocess.call(["bmoll", "suite", "det-sep", "--out", str(suite_dir),
                              "--iters", "5"])
        assert rc == 0
        out = tmp_path / "jos1_panel.png"
        assert main(["panel", "--in", str(suite_dir / "jos1"), "--out", str(out)]) == 0
        assert out.exists()
        out_ci = tmp_path / "jos1_ci.png"
        assert main(["trace-ci", "--in", str(suite_dir / "jos1"),
                     "--out", str(out_ci)]) == 0
