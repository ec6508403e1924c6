import pytest

from streamgemm.errors import SchemaMismatch
from streamgemm.report import (
    CSV_HEADER,
    BenchRow,
    BenchmarkReport,
    merge,
    read_csv,
    write_csv,
    write_plot_data,
)


def row(label="8x8x8-streamed", seconds=1.0, gflops=2.0, gpw=None):
    return BenchRow(label, 8, 8, 8, label.split("-", 1)[1], seconds, gflops, gpw)


class TestBenchRow:
    def test_rejects_comma_in_label(self):
        with pytest.raises(SchemaMismatch):
            BenchRow("a,b", 1, 1, 1, "x", 1.0, 1.0)

    def test_rejects_empty_engine(self):
        with pytest.raises(SchemaMismatch):
            BenchRow("a", 1, 1, 1, "", 1.0, 1.0)

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(SchemaMismatch):
            BenchRow("a", 1, 0, 1, "x", 1.0, 1.0)

    def test_efficiency_optional(self):
        assert row().gflops_per_watt is None
        assert row(gpw=3.5).gflops_per_watt == 3.5


class TestCsvRoundTrip:
    def test_lossless(self, tmp_path):
        report = BenchmarkReport()
        report.add(row("8x8x8-streamed", seconds=0.1230000000000001))
        report.add(row("8x8x8-reference", seconds=1 / 3, gpw=2.718281828459045))
        path = tmp_path / "r.csv"
        write_csv(str(path), report)
        back = read_csv(str(path))
        assert back.rows == report.rows

    def test_header_first_line(self, tmp_path):
        path = tmp_path / "r.csv"
        write_csv(str(path), BenchmarkReport())
        assert path.read_text() == CSV_HEADER + "\n"

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("label,seconds\n")
        with pytest.raises(SchemaMismatch, match="header"):
            read_csv(str(path))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("")
        with pytest.raises(SchemaMismatch, match="empty"):
            read_csv(str(path))

    def test_field_count_error_names_line(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(CSV_HEADER + "\nonly,three,fields\n")
        with pytest.raises(SchemaMismatch, match="line 2"):
            read_csv(str(path))

    def test_bad_number_names_line(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(CSV_HEADER + "\na,8,8,8,x,fast,1.0,\n")
        with pytest.raises(SchemaMismatch, match="line 2"):
            read_csv(str(path))

    def test_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(CSV_HEADER + "\n\na,8,8,8,x,1.0,2.0,\n\n")
        assert len(read_csv(str(path)).rows) == 1


class TestReportOps:
    def test_ratio_table(self):
        report = BenchmarkReport()
        report.add(row("8x8x8-reference", seconds=2.0))
        report.add(row("8x8x8-streamed", seconds=0.5))
        table = dict(report.ratio_table("8x8x8-reference"))
        assert table["8x8x8-reference"] == 1.0
        assert table["8x8x8-streamed"] == 4.0

    def test_find_missing_label(self):
        with pytest.raises(SchemaMismatch):
            BenchmarkReport().find("nope")

    def test_merge_disjoint(self):
        r1 = BenchmarkReport([row("8x8x8-streamed")])
        r2 = BenchmarkReport([row("8x8x8-reference")])
        merged = merge([r1, r2])
        assert merged.labels() == ["8x8x8-streamed", "8x8x8-reference"]

    def test_merge_duplicate_label(self):
        r1 = BenchmarkReport([row()])
        r2 = BenchmarkReport([row()])
        with pytest.raises(SchemaMismatch, match="duplicate"):
            merge([r1, r2])


class TestPlotData:
    def test_one_file_per_metric(self, tmp_path):
        report = BenchmarkReport([
            row("8x8x8-streamed", seconds=0.5, gflops=4.0, gpw=None),
            row("8x8x8-kria", seconds=1.5, gflops=2.0, gpw=9.0),
        ])
        paths = write_plot_data(str(tmp_path / "plot"), report)
        assert [p.rsplit(".", 2)[-2] for p in paths] == [
            "seconds", "gflops", "gflops_per_watt",
        ]
        gpw_lines = (tmp_path / "plot.gflops_per_watt.dat").read_text().splitlines()
        assert gpw_lines == ["8x8x8-kria 9.0"]
        seconds_lines = (tmp_path / "plot.seconds.dat").read_text().splitlines()
        assert seconds_lines == ["8x8x8-streamed 0.5", "8x8x8-kria 1.5"]
