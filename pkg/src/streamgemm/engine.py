"""Streamed, bank-partitioned tiled GEMM with a naive reference oracle.

Both engines accumulate each output element in a single FP32
accumulator in strictly ascending k order, so gemm_streamed is
bitwise-identical to gemm_reference by construction and the equality is
testable.  The streamed engine executes a tile schedule as a
producer/consumer pipeline: one loader per memory bank copies operand
tiles into bounded FIFOs, a MAC stage drains them in schedule order,
and a writer assembles finished output tiles.  Parallelism is applied
only across (mi, ni) output tiles; the k walk of any output element is
never split.
"""

import os
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, DimMismatch
from .tensor import Matrix

DEFAULT_BUDGET_BYTES = 256 * 1024

# loader -> MAC -> writer; used for pipeline fill accounting in the perf model
PIPELINE_STAGES = 3

THREADS_ENV = "STREAMGEMM_THREADS"

_JOIN_POLL_S = 0.05


@dataclass(frozen=True)
class EngineConfig:
    """Tile dims, bank count, bus width and FIFO depth for the engine."""

    tile_m: int = 64
    tile_k: int = 64
    tile_n: int = 64
    n_banks: int = 4
    bus_width_bits: int = 512
    stream_depth: int = 2
    onchip_budget_bytes: int = DEFAULT_BUDGET_BYTES

    def __post_init__(self):
        for name in ("tile_m", "tile_k", "tile_n", "n_banks", "stream_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.bus_width_bits < 32 or self.bus_width_bits % 32 != 0:
            raise ValueError("bus_width_bits must be a positive multiple of 32")

    @property
    def bus_lanes(self):
        return self.bus_width_bits // 32

    @property
    def working_set_floats(self):
        return (
            self.tile_m * self.tile_k
            + self.tile_k * self.tile_n
            + self.tile_m * self.tile_n
        )

    def check_budget(self):
        need = 4 * self.working_set_floats
        if need > self.onchip_budget_bytes:
            raise BudgetExceeded(
                f"tile working set {need} bytes exceeds on-chip budget"
                f" {self.onchip_budget_bytes} bytes"
            )


@dataclass(frozen=True)
class GemmShape:
    m: int
    k: int
    n: int

    def __post_init__(self):
        if min(self.m, self.k, self.n) < 1:
            raise DimMismatch(f"GEMM dims must be positive, got {self}")

    @property
    def flops(self):
        return 2 * self.m * self.k * self.n


def _ceil_div(a, b):
    return -(-a // b)


@dataclass(frozen=True)
class TileSchedule:
    """Ordered (mi, ni, ki) tile walk: mi-major, then ni, then ki ascending."""

    shape: GemmShape
    config: EngineConfig
    tiles: tuple

    @property
    def blocks_m(self):
        return _ceil_div(self.shape.m, self.config.tile_m)

    @property
    def blocks_n(self):
        return _ceil_div(self.shape.n, self.config.tile_n)

    @property
    def blocks_k(self):
        return _ceil_div(self.shape.k, self.config.tile_k)

    def m_extent(self, mi):
        return min(self.config.tile_m, self.shape.m - mi * self.config.tile_m)

    def n_extent(self, ni):
        return min(self.config.tile_n, self.shape.n - ni * self.config.tile_n)

    def k_extent(self, ki):
        return min(self.config.tile_k, self.shape.k - ki * self.config.tile_k)


def plan_tiles(shape, config):
    """Build the tile schedule for a shape; edge tiles are logically padded."""
    config.check_budget()
    bm = _ceil_div(shape.m, config.tile_m)
    bn = _ceil_div(shape.n, config.tile_n)
    bk = _ceil_div(shape.k, config.tile_k)
    tiles = tuple(
        (mi, ni, ki)
        for mi in range(bm)
        for ni in range(bn)
        for ki in range(bk)
    )
    return TileSchedule(shape, config, tiles)


def pack_bus_words(count_fp32, bus_width_bits):
    """Full-width bus words needed to move count_fp32 floats."""
    if bus_width_bits < 32 or bus_width_bits % 32 != 0:
        raise ValueError("bus_width_bits must be a positive multiple of 32")
    return _ceil_div(count_fp32, bus_width_bits // 32)


def bank_partition(m, n_banks, block_rows=1):
    """Round-robin row blocks of a matrix over banks.

    Block i (block_rows consecutive rows) goes to bank i mod n_banks.
    Returns one sorted row-index list per bank; together they cover all
    rows exactly once.
    """
    if n_banks < 1:
        raise ValueError("n_banks must be >= 1")
    if block_rows < 1:
        raise ValueError("block_rows must be >= 1")
    banks = [[] for _ in range(n_banks)]
    n_blocks = _ceil_div(m.rows, block_rows)
    for block in range(n_blocks):
        rows = range(block * block_rows, min((block + 1) * block_rows, m.rows))
        banks[block % n_banks].extend(rows)
    return banks


@dataclass
class EngineCounters:
    """Transfer and execution tallies from one gemm_streamed call."""

    tiles_executed: int = 0
    words_in_per_bank: list = field(default_factory=list)
    words_out: int = 0
    # Runtime diagnostic, not derivable from a schedule; excluded from ==.
    peak_live_tile_bytes: int = field(default=0, compare=False)

    @property
    def total_words(self):
        return sum(self.words_in_per_bank) + self.words_out


def expected_counters(schedule):
    """Pure derivation of the transfer counters gemm_streamed will report.

    A tiles are owned by bank mi mod n_banks, B tiles by ni mod n_banks;
    every scheduled tile op transfers both of its operand tiles.  Result
    tiles are written once each and tallied separately from the banked
    loads (the writeback drains through the writer stage, overlapped
    with compute, and does not contend with the loaders).
    """
    cfg = schedule.config
    words = [0] * cfg.n_banks
    out_words = 0
    for mi, ni, ki in schedule.tiles:
        me = schedule.m_extent(mi)
        ne = schedule.n_extent(ni)
        ke = schedule.k_extent(ki)
        words[mi % cfg.n_banks] += pack_bus_words(me * ke, cfg.bus_width_bits)
        words[ni % cfg.n_banks] += pack_bus_words(ke * ne, cfg.bus_width_bits)
        if ki == schedule.blocks_k - 1:
            out_words += pack_bus_words(me * ne, cfg.bus_width_bits)
    return EngineCounters(
        tiles_executed=len(schedule.tiles),
        words_in_per_bank=words,
        words_out=out_words,
    )


def gemm_reference(a, b):
    """Naive GEMM: ascending-k accumulation, one FP32 accumulator per element."""
    if a.cols != b.rows:
        raise DimMismatch(f"A is {a.rows}x{a.cols} but B is {b.rows}x{b.cols}")
    av, bv = a.data, b.data
    out = np.zeros((a.rows, b.cols), dtype=np.float32)
    tmp = np.empty_like(out)
    for k in range(a.cols):
        np.multiply(av[:, k, None], bv[k, :], out=tmp)
        np.add(out, tmp, out=out)
    return Matrix(out)


def resolve_thread_cap():
    """Worker-thread cap: STREAMGEMM_THREADS if set, else host parallelism."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            cap = 0
        if cap >= 1:
            return cap
    return os.cpu_count() or 1


class _BufferLedger:
    """Tracks live tile-buffer bytes so tests can assert the memory bound."""

    def __init__(self):
        self._lock = threading.Lock()
        self.live = 0
        self.peak = 0

    def alloc(self, nbytes):
        with self._lock:
            self.live += nbytes
            if self.live > self.peak:
                self.peak = self.live

    def free(self, nbytes):
        with self._lock:
            self.live -= nbytes


class _Abort:
    """Propagates the first stage failure and unblocks queue waits."""

    def __init__(self):
        self.event = threading.Event()
        self._lock = threading.Lock()
        self.error = None

    def fail(self, exc):
        with self._lock:
            if self.error is None:
                self.error = exc
        self.event.set()

    def put(self, q, item):
        while not self.event.is_set():
            try:
                q.put(item, timeout=_JOIN_POLL_S)
                return True
            except queue.Full:
                continue
        return False

    def get(self, q):
        while not self.event.is_set():
            try:
                return q.get(timeout=_JOIN_POLL_S)
            except queue.Empty:
                continue
        return None


def _split_chunks(items, n):
    """Split a list into n contiguous chunks with sizes differing by <= 1."""
    base, extra = divmod(len(items), n)
    chunks = []
    start = 0
    for i in range(n):
        size = base + (1 if i < extra else 0)
        chunks.append(items[start : start + size])
        start += size
    return [c for c in chunks if c]


def gemm_streamed(a, b, config, counters=None):
    """Tiled streaming GEMM, bitwise-identical to gemm_reference.

    Runs the tile schedule through concurrent loader/MAC/writer stages
    connected by bounded FIFOs of capacity config.stream_depth.  If
    counters is an EngineCounters instance it is filled in place.
    """
    if a.cols != b.rows:
        raise DimMismatch(f"A is {a.rows}x{a.cols} but B is {b.rows}x{b.cols}")
    shape = GemmShape(a.rows, a.cols, b.cols)
    schedule = plan_tiles(shape, config)
    return _run_pipeline(schedule, a.data, b.data, counters)


def _loader(my_bank, entries, sched, av, bv, out_q, ledger, words, abort):
    """One logical producer per bank: copies owned tiles into the bank FIFO.

    A tiles are staged k-major (transposed) so the MAC reads contiguous
    rows per k step; the staging copy is the modeled bank transfer.
    """
    cfg = sched.config
    tm, tk, tn = cfg.tile_m, cfg.tile_k, cfg.tile_n
    bus_bits = cfg.bus_width_bits
    try:
        for mi, ni, ki in entries:
            k0 = ki * tk
            ke = sched.k_extent(ki)
            if mi % cfg.n_banks == my_bank:
                m0 = mi * tm
                me = sched.m_extent(mi)
                tile = av[m0 : m0 + me, k0 : k0 + ke].T.copy()
                ledger.alloc(tile.nbytes)
                words[my_bank] += pack_bus_words(me * ke, bus_bits)
                if not abort.put(out_q, tile):
                    return
            if ni % cfg.n_banks == my_bank:
                n0 = ni * tn
                ne = sched.n_extent(ni)
                tile = bv[k0 : k0 + ke, n0 : n0 + ne].copy()
                ledger.alloc(tile.nbytes)
                words[my_bank] += pack_bus_words(ke * ne, bus_bits)
                if not abort.put(out_q, tile):
                    return
    except Exception as exc:  # pragma: no cover - internal failure guard
        abort.fail(exc)


def _mac_worker(entries, sched, bank_qs, done_q, ledger, abort):
    """Drains operand FIFOs in schedule order and accumulates output tiles."""
    cfg = sched.config
    blocks_k = sched.blocks_k
    tmp = np.empty((cfg.tile_m, cfg.tile_n), dtype=np.float32)
    acc = None
    try:
        for mi, ni, ki in entries:
            a_tile = abort.get(bank_qs[mi % cfg.n_banks])
            b_tile = abort.get(bank_qs[ni % cfg.n_banks])
            if a_tile is None or b_tile is None:
                return
            me, ne, ke = a_tile.shape[1], b_tile.shape[1], b_tile.shape[0]
            if ki == 0:
                acc = np.zeros((me, ne), dtype=np.float32)
                ledger.alloc(acc.nbytes)
            view = tmp[:me, :ne]
            for kk in range(ke):
                np.multiply(a_tile[kk, :, None], b_tile[kk, :], out=view)
                np.add(acc, view, out=acc)
            ledger.free(a_tile.nbytes)
            ledger.free(b_tile.nbytes)
            if ki == blocks_k - 1:
                if not abort.put(done_q, (mi, ni, acc)):
                    return
                acc = None
    except Exception as exc:  # pragma: no cover - internal failure guard
        abort.fail(exc)


def _writer(n_tiles, sched, done_q, out, ledger, words_out, abort):
    cfg = sched.config
    try:
        for _ in range(n_tiles):
            msg = abort.get(done_q)
            if msg is None:
                return
            mi, ni, acc = msg
            m0 = mi * cfg.tile_m
            n0 = ni * cfg.tile_n
            out[m0 : m0 + acc.shape[0], n0 : n0 + acc.shape[1]] = acc
            words_out[0] += pack_bus_words(acc.size, cfg.bus_width_bits)
            ledger.free(acc.nbytes)
    except Exception as exc:  # pragma: no cover - internal failure guard
        abort.fail(exc)


def _run_pipeline(schedule, av, bv, counters):
    cfg = schedule.config
    shape = schedule.shape
    pairs = [(mi, ni) for mi in range(schedule.blocks_m) for ni in range(schedule.blocks_n)]
    n_workers = max(1, min(resolve_thread_cap(), len(pairs)))
    chunks = _split_chunks(pairs, n_workers)

    out = np.empty((shape.m, shape.n), dtype=np.float32)
    ledger = _BufferLedger()
    abort = _Abort()
    done_q = queue.Queue(maxsize=cfg.stream_depth)
    words_out = [0]
    bank_words = []
    threads = [
        threading.Thread(
            target=_writer,
            args=(len(pairs), schedule, done_q, out, ledger, words_out, abort),
            name="gemm-writer",
        )
    ]

    for chunk in chunks:
        entries = [
            (mi, ni, ki)
            for mi, ni in chunk
            for ki in range(schedule.blocks_k)
        ]
        bank_qs = {}
        used_banks = set()
        for mi, ni, _ in entries:
            used_banks.add(mi % cfg.n_banks)
            used_banks.add(ni % cfg.n_banks)
        for bank in used_banks:
            bank_qs[bank] = queue.Queue(maxsize=cfg.stream_depth)
        words = [0] * cfg.n_banks
        bank_words.append(words)
        for bank in sorted(used_banks):
            threads.append(
                threading.Thread(
                    target=_loader,
                    args=(bank, entries, schedule, av, bv, bank_qs[bank], ledger, words, abort),
                    name=f"gemm-loader-{bank}",
                )
            )
        threads.append(
            threading.Thread(
                target=_mac_worker,
                args=(entries, schedule, bank_qs, done_q, ledger, abort),
                name="gemm-mac",
            )
        )

    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if abort.error is not None:
        raise abort.error

    if counters is not None:
        counters.tiles_executed = len(schedule.tiles)
        counters.words_in_per_bank = [
            sum(w[bank] for w in bank_words) for bank in range(cfg.n_banks)
        ]
        counters.words_out = words_out[0]
        counters.peak_live_tile_bytes = ledger.peak
    return Matrix(out)
