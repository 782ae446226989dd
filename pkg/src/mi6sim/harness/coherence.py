"""Random multi-core load/store stress checked against a flat memory oracle.

All cores share one region and a small pool of lines, so lines bounce between
L1s in S and M and get evicted from the LLC while other cores still hold them.
Every load's value is checked against the last store to that word, in the
order the simulator performed them.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..config import BASE, SimConfig, Variant
from ..engine import DetRng
from ..machine import Machine
from .workloads import random_trace, region_lines

COHERENCE_CONFIG = SimConfig(
    n_cores=4,
    llc_sets=16,
    llc_ways=2,
    l1_sets=2,
    l1_ways=4,
    l1_mshrs=4,
    llc_mshrs_total=8,
    n_regions=4,
    dram_bytes=1 << 20,
    dram_latency=30,
    dram_max_inflight=16,
)
SHARED_REGION = 1


@dataclass
class CoherenceResult:
    n_cores: int
    variant: str
    ops: int
    loads: int
    stores: int
    cycles: int
    mismatches: list
    directory_problems: list

    @property
    def passed(self) -> bool:
        return not self.mismatches and not self.directory_problems


def coherence_run(n_ops: int = 100_000, n_cores: int = 4, seed: int = 0, variant: Variant = BASE,
                  cfg: SimConfig = COHERENCE_CONFIG, n_lines: int = 48) -> CoherenceResult:
    """``n_ops`` memory ops in total, split evenly over ``n_cores`` cores sharing ``n_lines`` lines."""
    c = cfg.replace(n_cores=n_cores, llc_mshrs_total=cfg.llc_mshrs_total // cfg.n_cores * n_cores,
                    dram_max_inflight=cfg.dram_max_inflight // cfg.n_cores * n_cores)
    m = Machine(c, variant, oracle=True)
    rng = DetRng(seed)
    lines = region_lines(c, SHARED_REGION, n_lines)
    per_core = n_ops // n_cores
    traces = []
    for k in range(n_cores):
        # no compute ops, so every op in the trace is a load or a store
        traces.append(random_trace(rng.split(k), c, lines, per_core + (k < n_ops % n_cores),
                                   store_frac=0.4, compute_frac=0.0))
    m.load_traces(traces)
    cycles = m.run()
    o = m.oracle
    return CoherenceResult(n_cores, variant.label, o.loads + o.stores, o.loads, o.stores, cycles,
                           list(o.mismatches), m.check_directory())


def coherence_suite(n_ops: int = 100_000, seed: int = 0, variants=(BASE,), core_counts=(2, 3, 4)) -> list[CoherenceResult]:
    """Each variant gets ``n_ops`` ops, spread over one run per core count."""
    runs = [(v, n) for v in variants for n in core_counts]
    share = -(-n_ops // len(core_counts))
    return [coherence_run(share, n, DetRng(seed).split(i).next_u64(), v) for i, (v, n) in enumerate(runs)]
