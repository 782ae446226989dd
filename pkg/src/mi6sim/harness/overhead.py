"""Variant-by-trace overhead tables and the directional comparisons built on them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from ..config import BASE, SimConfig, Variant
from ..machine import Machine
from .workloads import conflict_trace, parallel_misses, streaming_trace

OVERHEAD_COLUMNS = (
    "trace", "variant", "cycles", "llc_misses", "llc_misses_per_kop", "mshr_stall_cycles",
    "arbiter_idle_grants", "dq_retries", "purge_stalls", "cycles_vs_base",
)

# Single-core machine with a 256-line LLC and a 32-line L1, so that small
# synthetic traces exercise the LLC rather than the L1. Eight L1 MSHRs let
# eight independent misses overlap completely.
OVERHEAD_CONFIG = SimConfig(
    n_cores=1,
    llc_sets=64,
    llc_ways=4,
    l1_sets=4,
    l1_ways=8,
    l1_mshrs=8,
    llc_mshrs_total=8,
    n_regions=4,
    dram_bytes=1 << 20,
    dram_latency=120,
    dram_max_inflight=16,
)
REGION = 1


@dataclass
class RunResult:
    trace: str
    variant: str
    cycles: int
    memops: int
    llc_misses: int
    mshr_stall_cycles: int
    arbiter_idle_grants: int
    dq_retries: int
    purge_stalls: int


def run_trace(cfg: SimConfig, variant: Variant, traces, name: str = "trace") -> RunResult:
    """Run per-core ``traces`` to completion and total the counters over all cores."""
    m = Machine(cfg, variant)
    m.load_traces(traces)
    m.run()
    cycles = max(c.stats.finish for c in m.cores)
    llc = m.llc.stats
    return RunResult(
        trace=name,
        variant=variant.label,
        cycles=cycles,
        memops=sum(c.stats.memops for c in m.cores),
        llc_misses=sum(llc.llc_misses),
        mshr_stall_cycles=sum(llc.mshr_stall_cycles),
        arbiter_idle_grants=llc.arbiter_idle_grants,
        dq_retries=sum(llc.dq_retries),
        purge_stalls=sum(c.stats.purge_stalls for c in m.cores),
    )


def overhead_report(traces: dict, variants, cfg: SimConfig = OVERHEAD_CONFIG) -> list[dict]:
    """One row per (trace, variant); ``cycles_vs_base`` divides by the BASE run of the same trace."""
    rows = []
    for name in sorted(traces):
        base = run_trace(cfg, BASE, traces[name], name)
        for variant in variants:
            r = base if variant == BASE or not variant.flags else run_trace(cfg, variant, traces[name], name)
            r.variant = variant.label
            rows.append({
                "trace": name,
                "variant": r.variant,
                "cycles": r.cycles,
                "llc_misses": r.llc_misses,
                "llc_misses_per_kop": round(1000 * r.llc_misses / r.memops, 3) if r.memops else 0.0,
                "mshr_stall_cycles": r.mshr_stall_cycles,
                "arbiter_idle_grants": r.arbiter_idle_grants,
                "dq_retries": r.dq_retries,
                "purge_stalls": r.purge_stalls,
                "cycles_vs_base": round(r.cycles / base.cycles, 6),
            })
    return rows


def report_csv(rows) -> str:
    buf = io.StringIO()
    buf.write("# schema=1\n")
    w = csv.DictWriter(buf, fieldnames=OVERHEAD_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# -- directional checks -------------------------------------------------------------

def conflict_workload(cfg: SimConfig = OVERHEAD_CONFIG) -> list:
    """Half the LLC's capacity in consecutive lines of one region, swept repeatedly.

    The lines spread over every set without PART and fit; with PART the region
    only owns a quarter of the sets, so the same lines conflict.
    """
    n = cfg.llc_sets * cfg.llc_ways // 2
    return [conflict_trace(cfg, REGION, n, rounds=4, set_stride=1)]


def memory_bound_workload(cfg: SimConfig = OVERHEAD_CONFIG) -> list:
    return [streaming_trace(cfg, REGION, 400)]


def parallel_miss_workload(cfg: SimConfig = OVERHEAD_CONFIG) -> list:
    return [parallel_misses(cfg, REGION, 8)]


@dataclass
class Directional:
    name: str
    variant: RunResult
    base: RunResult
    metric: str
    factor: float

    @property
    def ratio(self) -> float:
        return getattr(self.variant, self.metric) / getattr(self.base, self.metric)

    @property
    def passed(self) -> bool:
        v, b = getattr(self.variant, self.metric), getattr(self.base, self.metric)
        if self.factor == 1.0:
            return v > b
        return v >= self.factor * b


def directional_checks(cfg: SimConfig = OVERHEAD_CONFIG) -> list[Directional]:
    """PART misses more on conflicts, ARB takes longer when memory bound, NONSPEC serialises misses."""
    out = []
    cases = (
        ("part_conflict_misses", "part", conflict_workload(cfg), "llc_misses", 1.0),
        ("arb_memory_bound_cycles", "arb", memory_bound_workload(cfg), "cycles", 1.0),
        ("nonspec_parallel_misses", "nonspec", parallel_miss_workload(cfg), "cycles", 4.0),
    )
    for name, variant, traces, metric, factor in cases:
        base = run_trace(cfg, BASE, traces, name)
        var = run_trace(cfg, Variant.parse(variant), traces, name)
        out.append(Directional(name, var, base, metric, factor))
    return out
