"""DRAM backpressure under correctly and incorrectly sized LLC MSHR pools.

Every LLC MSHR can have at most one writeback and one read outstanding at the
DRAM controller, so ``floor(d_max / 2)`` MSHRs can never overrun it. With
``d_max`` MSHRs a burst of dirty replacements can.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..config import BASE, SECURE, SimConfig, Variant, region_base
from ..engine import DetRng
from ..machine import Machine
from ..trace import COMPUTE, LOAD, STORE, TraceOp
from .workloads import byte_addr, random_trace, region_lines

# Four cores with a small LLC, so random traffic keeps evicting dirty lines.
SIZING_CONFIG = SimConfig(
    n_cores=4,
    llc_sets=64,
    llc_ways=4,
    l1_sets=4,
    l1_ways=8,
    l1_mshrs=8,
    llc_mshrs_total=8,
    n_regions=8,
    dram_bytes=1 << 20,
    dram_latency=120,
    dram_max_inflight=16,
)


@dataclass
class SizingResult:
    mshrs: int
    dram_max_inflight: int
    cycles: int
    dram_requests: int
    max_inflight_seen: int
    backpressure: int


def _result(m: Machine) -> SizingResult:
    return SizingResult(m.llc.n_mshrs, m.cfg.dram_max_inflight, m.cycle, m.dram.reads + m.dram.writes,
                        m.dram.max_seen, m.dram.backpressure)


def random_load(cfg: SimConfig = SIZING_CONFIG, variant: Variant = SECURE, cycles: int = 1_000_000,
                seed: int = 0, chunk_ops: int = 2000, allow_invalid: bool = False) -> SizingResult:
    """Keep every core busy with random store-heavy traffic in its own region for ``cycles`` cycles."""
    m = Machine(cfg, variant, allow_invalid=allow_invalid)
    rng = DetRng(seed)
    streams = []
    for c, core in enumerate(m.cores):
        region = 1 + c % (cfg.n_regions - 1)
        core.set_bitvector([region])
        lines = region_lines(cfg, region, min(cfg.lines_per_region, 8 * cfg.llc_sets))
        streams.append((rng.split(c), lines))
    while m.cycle < cycles:
        for core, (r, lines) in zip(m.cores, streams):
            if core.done:
                core.set_trace(random_trace(r, cfg, lines, chunk_ops, store_frac=0.5,
                                            compute_frac=0.05, max_compute=3))
        m.run_for(min(1000, cycles - m.cycle))
    return _result(m)


def burst(cfg: SimConfig = SIZING_CONFIG, variant: Variant = BASE, mshrs: int | None = None) -> SizingResult:
    """Dirty one LLC set per MSHR, then miss on a new line in each of them at once.

    Every miss needs a dirty writeback and a read, so ``mshrs`` simultaneous
    misses put ``2 * mshrs`` requests in front of the controller.
    """
    total = cfg.dram_max_inflight if mshrs is None else mshrs
    c = cfg.replace(llc_mshrs_total=total)
    m = Machine(c, variant, allow_invalid=True)
    per_core = -(-total // c.n_cores)
    traces = []
    for k in range(c.n_cores):
        base = region_base(1, c)
        sets = [k * per_core + j for j in range(per_core)]
        ops = []
        for s in sets:
            for w in range(c.llc_ways):
                ops.append(TraceOp(STORE, addr=byte_addr(base + s + w * c.llc_sets, c)))
        ops.append(TraceOp(COMPUTE, cycles=4 * c.dram_latency))
        ops += [TraceOp(LOAD, addr=byte_addr(base + s + c.llc_ways * c.llc_sets, c)) for s in sets]
        traces.append(ops)
    m.load_traces(traces)
    m.run()
    return _result(m)
