"""Analytic cycle and energy model over tile schedules and device presets.

The model converts a TileSchedule plus the engine's transfer counters
into cycles, seconds, GFLOPS, watts and GFLOPS/W for a named device
preset.  Transfer and compute fully overlap (total is their max, not
their sum) and a pipeline-fill term is added once:

    fill_latency = stages * stream_depth * tile_k

with tile_k as the per-tile cycle cost, since a full MAC tile drains in
exactly tile_k cycles when macs_per_cycle covers a tile_m x tile_n
slab.  Shipped presets are illustrative calibrations, not measurements
of any physical device.
"""

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .engine import (
    EngineCounters,
    PIPELINE_STAGES,
    expected_counters,
    gemm_reference,
    gemm_streamed,
    plan_tiles,
)
from .errors import InvalidPreset, VerificationFailed
from .tensor import Matrix

_PRESET_FIELDS = (
    "clock_hz",
    "macs_per_cycle",
    "bytes_per_cycle_per_bank",
    "n_banks_max",
    "static_watts",
    "joules_per_flop",
    "joules_per_byte",
)


@dataclass(frozen=True)
class DevicePreset:
    name: str
    clock_hz: float
    macs_per_cycle: int
    bytes_per_cycle_per_bank: float
    n_banks_max: int
    static_watts: float
    joules_per_flop: float
    joules_per_byte: float

    def validate(self):
        for fname in _PRESET_FIELDS:
            value = getattr(self, fname)
            if not math.isfinite(value):
                raise InvalidPreset(f"preset '{self.name}': {fname} must be finite")
        if self.clock_hz <= 0:
            raise InvalidPreset(f"preset '{self.name}': clock_hz must be positive")
        if self.macs_per_cycle < 1 or self.macs_per_cycle != int(self.macs_per_cycle):
            raise InvalidPreset(f"preset '{self.name}': macs_per_cycle must be a positive int")
        if self.bytes_per_cycle_per_bank <= 0:
            raise InvalidPreset(
                f"preset '{self.name}': bytes_per_cycle_per_bank must be positive"
            )
        if self.n_banks_max < 1:
            raise InvalidPreset(f"preset '{self.name}': n_banks_max must be >= 1")
        for fname in ("static_watts", "joules_per_flop", "joules_per_byte"):
            if getattr(self, fname) < 0:
                raise InvalidPreset(f"preset '{self.name}': {fname} must be >= 0")
        if self.static_watts == 0 and self.joules_per_flop == 0 and self.joules_per_byte == 0:
            raise InvalidPreset(
                f"preset '{self.name}': at least one energy parameter must be positive"
            )


@dataclass(frozen=True)
class PerfEstimate:
    preset: str
    flops: int
    total_bytes: int
    compute_cycles: int
    transfer_cycles_per_bank: tuple
    fill_latency: int
    total_cycles: int
    seconds: float
    gflops: float
    energy_joules: float
    watts: float
    gflops_per_watt: float


def fill_latency(config):
    """Pipeline fill cycles: stages * stream_depth * tile_k."""
    return PIPELINE_STAGES * config.stream_depth * config.tile_k


def estimate(schedule, counters, preset):
    """Model one schedule execution on a preset; counters come from the engine."""
    preset.validate()
    cfg = schedule.config
    if cfg.n_banks > preset.n_banks_max:
        raise InvalidPreset(
            f"preset '{preset.name}' supports at most {preset.n_banks_max} banks,"
            f" config asks for {cfg.n_banks}"
        )
    flops = schedule.shape.flops
    mac_ops = flops // 2
    compute_cycles = -(-mac_ops // preset.macs_per_cycle)

    bus_bytes = cfg.bus_width_bits // 8
    transfer = tuple(
        math.ceil(words * bus_bytes / preset.bytes_per_cycle_per_bank)
        for words in counters.words_in_per_bank
    )
    fill = fill_latency(cfg)
    total_cycles = max(compute_cycles, max(transfer, default=0)) + fill

    seconds = total_cycles / preset.clock_hz
    total_bytes = (sum(counters.words_in_per_bank) + counters.words_out) * bus_bytes
    energy = (
        flops * preset.joules_per_flop
        + total_bytes * preset.joules_per_byte
        + seconds * preset.static_watts
    )
    watts = energy / seconds
    gflops = flops / seconds / 1e9
    return PerfEstimate(
        preset=preset.name,
        flops=flops,
        total_bytes=total_bytes,
        compute_cycles=compute_cycles,
        transfer_cycles_per_bank=transfer,
        fill_latency=fill,
        total_cycles=total_cycles,
        seconds=seconds,
        gflops=gflops,
        energy_joules=energy,
        watts=watts,
        gflops_per_watt=gflops / watts,
    )


# --- engine-vs-preset comparison -------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    name: str
    cycles: int  # None for measured wall-clock rows
    seconds: float
    gflops: float
    watts: float            # None for measured rows
    gflops_per_watt: float  # None for measured rows


@dataclass(frozen=True)
class ComparisonReport:
    shape: object
    config: object
    rows: tuple

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def ratios(self, baseline):
        """Speedup of every row against the named baseline row's seconds."""
        base = self.row(baseline).seconds
        return {r.name: base / r.seconds for r in self.rows}

    def to_csv(self):
        lines = ["name,cycles,seconds,gflops,watts,gflops_per_watt"]
        for r in self.rows:
            lines.append(
                ",".join(
                    "" if v is None else (repr(v) if isinstance(v, float) else str(v))
                    for v in (r.name, r.cycles, r.seconds, r.gflops, r.watts, r.gflops_per_watt)
                )
            )
        return "\n".join(lines) + "\n"


def compare(presets, shape, config, seed=0):
    """Run both engines on random data for the shape and add preset rows.

    Raises VerificationFailed unless the engines agree bit for bit, so a
    report can never carry an unverified streamed timing.
    """
    if isinstance(presets, dict):
        presets = list(presets.values())
    if not presets:
        raise InvalidPreset("compare needs at least one preset")
    rng = np.random.default_rng(seed)
    a = Matrix(rng.random((shape.m, shape.k), dtype=np.float32) - np.float32(0.5))
    b = Matrix(rng.random((shape.k, shape.n), dtype=np.float32) - np.float32(0.5))

    counters = EngineCounters()
    t0 = time.perf_counter()
    streamed = gemm_streamed(a, b, config, counters)
    t_streamed = time.perf_counter() - t0
    t0 = time.perf_counter()
    reference = gemm_reference(a, b)
    t_reference = time.perf_counter() - t0
    if streamed.data.tobytes() != reference.data.tobytes():
        raise VerificationFailed(f"engines disagree on shape {shape}")

    flops = shape.flops
    rows = [
        ComparisonRow("reference", None, t_reference, flops / t_reference / 1e9, None, None),
        ComparisonRow("streamed", None, t_streamed, flops / t_streamed / 1e9, None, None),
    ]
    schedule = plan_tiles(shape, config)
    for preset in presets:
        est = estimate(schedule, counters, preset)
        rows.append(
            ComparisonRow(
                preset.name, est.total_cycles, est.seconds, est.gflops,
                est.watts, est.gflops_per_watt,
            )
        )
    return ComparisonReport(shape, config, tuple(rows))


# --- presets ----------------------------------------------------------------

def builtin_presets():
    """Illustrative device calibrations; none of these are measurements."""
    return {
        "alveo-like": DevicePreset(
            "alveo-like", clock_hz=300e6, macs_per_cycle=4096,
            bytes_per_cycle_per_bank=64.0, n_banks_max=32,
            static_watts=25.0, joules_per_flop=8e-12, joules_per_byte=6e-11,
        ),
        "kria-like": DevicePreset(
            "kria-like", clock_hz=200e6, macs_per_cycle=512,
            bytes_per_cycle_per_bank=16.0, n_banks_max=8,
            static_watts=5.0, joules_per_flop=1.5e-11, joules_per_byte=8e-11,
        ),
        "xeon-like": DevicePreset(
            "xeon-like", clock_hz=2.1e9, macs_per_cycle=64,
            bytes_per_cycle_per_bank=32.0, n_banks_max=8,
            static_watts=85.0, joules_per_flop=6e-11, joules_per_byte=1.5e-10,
        ),
        "arm-like": DevicePreset(
            "arm-like", clock_hz=1.5e9, macs_per_cycle=16,
            bytes_per_cycle_per_bank=8.0, n_banks_max=4,
            static_watts=3.0, joules_per_flop=3e-11, joules_per_byte=1e-10,
        ),
    }


def parse_preset(text, fallback_name=""):
    """Parse one preset from flat key=value text; '#' lines are comments."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidPreset(f"preset line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip().lower()] = value.strip()
    name = values.pop("name", fallback_name)
    if not name:
        raise InvalidPreset("preset needs a name")
    kwargs = {}
    for fname in _PRESET_FIELDS:
        if fname not in values:
            raise InvalidPreset(f"preset '{name}': missing key '{fname}'")
        raw = values.pop(fname)
        try:
            kwargs[fname] = float(raw)
        except ValueError:
            raise InvalidPreset(f"preset '{name}': {fname}={raw!r} is not a number") from None
    if values:
        raise InvalidPreset(f"preset '{name}': unknown keys {sorted(values)}")
    kwargs["macs_per_cycle"] = int(kwargs["macs_per_cycle"])
    kwargs["n_banks_max"] = int(kwargs["n_banks_max"])
    preset = DevicePreset(name=name, **kwargs)
    preset.validate()
    return preset


def load_preset(path):
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        text = fh.read()
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_preset(text, fallback_name=stem)
