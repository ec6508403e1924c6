"""Benchmark result rows, CSV round-tripping and ratio tables.

The CSV schema is fixed: one header line
``label,m,k,n,engine,seconds,gflops,gflops_per_watt`` followed by one
row per measurement.  Floats are serialized with repr so a
write/read/write cycle is lossless.  gflops_per_watt is empty for rows
with no energy model (measured host runs).
"""

import io
from dataclasses import dataclass, field

from .errors import SchemaMismatch

CSV_HEADER = "label,m,k,n,engine,seconds,gflops,gflops_per_watt"
_COLUMNS = CSV_HEADER.split(",")


@dataclass(frozen=True)
class BenchRow:
    label: str
    m: int
    k: int
    n: int
    engine: str
    seconds: float
    gflops: float
    gflops_per_watt: float = None

    def __post_init__(self):
        for name in ("label", "engine"):
            value = getattr(self, name)
            if not value or "," in value or "\n" in value:
                raise SchemaMismatch(f"bad {name} field: {value!r}")
        if min(self.m, self.k, self.n) < 1:
            raise SchemaMismatch(f"row {self.label}: dims must be positive")


@dataclass
class BenchmarkReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row):
        self.rows.append(row)

    def labels(self):
        return [row.label for row in self.rows]

    def find(self, label):
        for row in self.rows:
            if row.label == label:
                return row
        raise SchemaMismatch(f"no row labelled {label!r}")

    def to_csv(self):
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for row in self.rows:
            gpw = "" if row.gflops_per_watt is None else repr(float(row.gflops_per_watt))
            out.write(
                f"{row.label},{row.m},{row.k},{row.n},{row.engine},"
                f"{float(row.seconds)!r},{float(row.gflops)!r},{gpw}\n"
            )
        return out.getvalue()

    def ratio_table(self, baseline_label):
        """(label, speedup) pairs where speedup = baseline_seconds / seconds."""
        base = self.find(baseline_label)
        return [(row.label, base.seconds / row.seconds) for row in self.rows]


def write_csv(path, report):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(report.to_csv())


def _parse_row(line, lineno):
    parts = line.split(",")
    if len(parts) != len(_COLUMNS):
        raise SchemaMismatch(
            f"line {lineno}: expected {len(_COLUMNS)} fields, got {len(parts)}"
        )
    label, m, k, n, engine, seconds, gflops, gpw = parts
    try:
        return BenchRow(
            label=label,
            m=int(m),
            k=int(k),
            n=int(n),
            engine=engine,
            seconds=float(seconds),
            gflops=float(gflops),
            gflops_per_watt=None if gpw == "" else float(gpw),
        )
    except ValueError as exc:
        raise SchemaMismatch(f"line {lineno}: {exc}") from exc


def read_csv(path):
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = [line.rstrip("\n") for line in fh]
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise SchemaMismatch(f"{path}: empty benchmark file")
    if lines[0] != CSV_HEADER:
        raise SchemaMismatch(f"{path}: header is {lines[0]!r}, expected {CSV_HEADER!r}")
    report = BenchmarkReport()
    for lineno, line in enumerate(lines[1:], start=2):
        report.add(_parse_row(line, lineno))
    return report


def merge(reports):
    """Concatenate reports; duplicate labels are a schema error."""
    merged = BenchmarkReport()
    seen = set()
    for report in reports:
        for row in report.rows:
            if row.label in seen:
                raise SchemaMismatch(f"duplicate row label {row.label!r}")
            seen.add(row.label)
            merged.add(row)
        merged.metadata.update(report.metadata)
    return merged


def write_plot_data(out_prefix, report, metrics=("seconds", "gflops", "gflops_per_watt")):
    """One whitespace-delimited label/value file per metric, for gnuplot.

    Rows missing a metric (None) are skipped in that metric's file.
    Returns the list of paths written.
    """
    paths = []
    for metric in metrics:
        path = f"{out_prefix}.{metric}.dat"
        with open(path, "w", encoding="ascii") as fh:
            for row in report.rows:
                value = getattr(row, metric)
                if value is None:
                    continue
                fh.write(f"{row.label} {float(value)!r}\n")
        paths.append(path)
    return paths
