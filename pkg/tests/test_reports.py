import contextlib
import csv

import numpy as np
import pytest

from src.autodiff.tensor import DimensionError, Tensor
from src.data_io import images, reports
from src.data_io.images import quantize, read_pgm, write_image_grid, write_pgm
from src.data_io.reports import HEADER, format_percent, write_csv_report, write_timing_csv
from src.evaluation.report import AVERAGE_ROW, CLEAN_ATTACK, EvalReport, TimingRow


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


def test_quantize_rounds_half_up():
    assert quantize(np.array([0.5]))[0] == 128
    np.testing.assert_array_equal(quantize(np.array([-0.2, 0.0, 1.0, 1.7])), [0, 0, 255, 255])


def test_grid_of_four_is_115_pixels_wide(tmp_path):
    path = str(tmp_path / "grid.pgm")
    write_image_grid([np.full((1, 28, 28), 0.5)] * 4, cols=4, path=path)
    grid = read_pgm(path)
    assert grid.shape == (1, 28, 115)
    assert grid[0, 0, 28] == pytest.approx(1.0)
    assert grid[0, 0, 0] == pytest.approx(128 / 255.0)


def test_grid_pads_missing_tiles_and_wraps_rows(tmp_path):
    path = str(tmp_path / "grid.pgm")
    write_image_grid([Tensor(np.ones((1, 5, 5)))] * 3, cols=2, path=path)
    grid = read_pgm(path)[0]
    assert grid.shape == (11, 11)
    assert grid[6:, 6:].max() == 0.0


def test_grid_rejects_mixed_shapes(tmp_path):
    with pytest.raises(DimensionError):
        write_image_grid([np.zeros((1, 4, 4)), np.zeros((1, 5, 5))], cols=2, path=str(tmp_path / "g.pgm"))
    with pytest.raises(DimensionError):
        write_image_grid([np.zeros((3, 4, 4))], cols=1, path=str(tmp_path / "g.pgm"))


def test_pgm_round_trip(tmp_path):
    image = np.linspace(0, 1, 28 * 28).reshape(1, 28, 28)
    path = str(tmp_path / "one.pgm")
    write_pgm(image, path)
    np.testing.assert_allclose(read_pgm(path), image, atol=0.5 / 255 + 1e-6)


def test_format_percent():
    assert format_percent(0.98293) == "98.29"
    assert format_percent(1.0) == "100.00"


def whitebox_report() -> EvalReport:
    report = EvalReport("whitebox", with_average=True)
    report.add(CLEAN_ATTACK, "mnist/A", "no_attack", 99, 100)
    report.add(CLEAN_ATTACK, "mnist/A", "vae", 98, 100)
    report.add("FGSM(eps=0.3)", "mnist/B", "no_defense", 10, 100, 1.5)
    report.add("FGSM(eps=0.3)", "mnist/B", "vae", 90, 100, 2.0)
    report.add("FGSM(eps=0.3)", "mnist/A", "no_defense", 20, 100)
    report.add("FGSM(eps=0.3)", "mnist/A", "vae", 96, 100)
    return report


def test_averages_leave_out_clean_rows():
    averages = whitebox_report().averages()
    assert averages["vae"] == pytest.approx(0.93)
    assert averages["no_defense"] == pytest.approx(0.15)
    assert "no_attack" not in averages


def test_report_rejects_unknown_mode():
    with pytest.raises(ValueError):
        EvalReport("x").add("FGSM", "mnist/A", "vae_rec_e2e", 1, 1)


def test_csv_report_sorted_with_average(tmp_path):
    path = str(tmp_path / "reports" / "whitebox.csv")
    write_csv_report(whitebox_report(), path)
    rows = read_rows(path)
    assert rows[0] == HEADER
    assert [r[:2] for r in rows[1:-1]] == [["FGSM(eps=0.3)", "mnist/A"], ["FGSM(eps=0.3)", "mnist/B"],
                                          [CLEAN_ATTACK, "mnist/A"]]
    assert rows[1][HEADER.index("vae")] == "96.00"
    assert rows[1][HEADER.index("vae_rec")] == ""
    assert rows[2][HEADER.index("wall_time_s")] == "3.500"
    assert rows[-1][0] == AVERAGE_ROW
    assert rows[-1][HEADER.index("vae")] == "93.00"


def test_csv_report_refuses_empty_report(tmp_path):
    with pytest.raises(ValueError):
        write_csv_report(EvalReport("empty"), str(tmp_path / "empty.csv"))


def test_timing_csv_speedup_relative_to_fastest(tmp_path):
    report = EvalReport("speed")
    report.timings.append(TimingRow("defense_vae", 0, 0, 100, 0.5, 0.97))
    report.timings.append(TimingRow("zsearch", 200, 10, 100, 20.0))
    path = str(tmp_path / "speed.csv")
    write_timing_csv(report, path)
    rows = read_rows(path)
    assert rows[1][-2:] == ["1.00", "97.00"]
    assert rows[2][-2:] == ["40.00", ""]


def test_merge_keeps_rows_and_metadata():
    first, second = whitebox_report(), EvalReport("whitebox", metadata={"seed": "3"})
    second.add("CW_L2(lr=10)", "mnist/A", "vae", 1, 2)
    first.merge(second)
    assert first.cell("CW_L2(lr=10)", "mnist/A", "vae") == pytest.approx(0.5)
    assert first.metadata["seed"] == "3"
    assert first.cell("CW_L2(lr=10)", "mnist/B", "vae") is None


def test_writers_hold_the_file_lock(tmp_path, monkeypatch):
    locked = []

    @contextlib.contextmanager
    def recording_lock(path):
        locked.append(path)
        yield

    monkeypatch.setattr(reports, "exclusive_lock", recording_lock)
    monkeypatch.setattr(images, "exclusive_lock", recording_lock)
    report = EvalReport("locked")
    report.add("fgsm", "mnist/A", "vae", 1, 2)
    report.timings.append(TimingRow("defense_vae", 0, 1, 2, 0.1))
    paths = [str(tmp_path / name) for name in ("a.csv", "b.csv", "c.pgm", "d.pgm")]
    write_csv_report(report, paths[0])
    write_timing_csv(report, paths[1])
    write_pgm(np.zeros((1, 2, 2)), paths[2])
    write_image_grid([np.zeros((1, 2, 2))], 1, paths[3])
    assert locked == paths
