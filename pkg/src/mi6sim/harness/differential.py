"""Differential noninterference testing.

A victim trace runs on one core while the remaining cores run an attacker
workload from a different protection domain. The victim's observables (per-op
issue and completion cycles, load values, faults, finish time) are recorded
for each attacker kind; timing independence means they are all identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..config import SECURE, SimConfig, Variant
from ..engine import DetRng
from ..machine import Machine
from .workloads import ATTACKER_KINDS, attacker_trace, random_trace, region_lines

# Small enough to run hundreds of pairs quickly, large enough for real conflicts:
# 4 DRAM regions with 2 colour bits give every region its own quarter of the LLC.
DIFF_CONFIG = SimConfig(
    n_cores=2,
    llc_sets=64,
    llc_ways=4,
    l1_sets=4,
    l1_ways=4,
    l1_mshrs=4,
    llc_mshrs_total=4,
    n_regions=4,
    dram_bytes=1 << 20,
    dram_latency=40,
    dram_max_inflight=8,
)


def run_domains(cfg: SimConfig, variant: Variant, traces, regions, watch: int,
                allow_invalid: bool = False, max_cycles: int = 2_000_000, log: bool = False) -> Machine:
    """Run one trace per core with per-core region permissions until core ``watch`` finishes."""
    m = Machine(cfg, variant, allow_invalid=allow_invalid, log=log)
    for core, regs in zip(m.cores, regions):
        core.set_bitvector(regs)
    m.load_traces(traces)
    victim = m.cores[watch]
    m.run(until=lambda: victim.done, max_cycles=max_cycles)
    return m


@dataclass
class DifferenceReport:
    """Outcome of comparing victim observables across attacker variants.

    ``first_divergence`` is ``(op index, observable under run A, observable
    under run B)`` with ``op index`` -1 when only the finish time differs.
    """

    equal: bool
    first_divergence: tuple | None = None
    runs: tuple = ()
    channel_label: str | None = None


def first_divergence(a, b):
    """Compare two ``(observables, finish)`` pairs; None when identical."""
    ops_a, fin_a = a
    ops_b, fin_b = b
    for i, (x, y) in enumerate(zip(ops_a, ops_b)):
        if x != y:
            return (i, x, y)
    if len(ops_a) != len(ops_b):
        i = min(len(ops_a), len(ops_b))
        return (i, ops_a[i] if i < len(ops_a) else None, ops_b[i] if i < len(ops_b) else None)
    if fin_a != fin_b:
        return (-1, fin_a, fin_b)
    return None


def run_differential(cfg: SimConfig, variant: Variant, victim_trace, victim_core: int, victim_regions,
                     attackers: dict, attacker_regions, channel_label: str | None = None,
                     allow_invalid: bool = False) -> DifferenceReport:
    """Run the victim once per attacker setup and compare its observables exactly.

    ``attackers`` maps a name to per-core traces for the non-victim cores (a
    list of length ``n_cores`` whose victim slot is ignored); an empty dict
    entry list means an idle attacker. The idle run is always included.
    """
    overlap = set(victim_regions) & set(attacker_regions)
    if overlap:
        raise ValueError(f"victim and attacker domains share regions {sorted(overlap)}")
    setups = {"idle": [[] for _ in range(cfg.n_cores)]}
    setups.update(attackers)
    regions = [list(attacker_regions) for _ in range(cfg.n_cores)]
    regions[victim_core] = list(victim_regions)
    runs = []
    for name, traces in setups.items():
        traces = list(traces)
        traces[victim_core] = victim_trace
        m = run_domains(cfg, variant, traces, regions, victim_core, allow_invalid)
        runs.append((name, m.observables(victim_core)))
    ref = runs[0][1]
    for name, obs in runs[1:]:
        d = first_divergence(ref, obs)
        if d is not None:
            return DifferenceReport(False, d, tuple(r[0] for r in runs), channel_label)
    return DifferenceReport(True, None, tuple(r[0] for r in runs), channel_label)


@dataclass
class Pair:
    seed: int
    n_cores: int
    victim_core: int
    victim_region: int
    attacker_region: int
    victim_trace: list = field(repr=False)
    attacker_ops: int = 300

    def traces(self, kind: str, cfg: SimConfig) -> list:
        rng = DetRng(self.seed).split(kind)
        out = []
        for c in range(self.n_cores):
            if c == self.victim_core:
                out.append(self.victim_trace)
            else:
                out.append(attacker_trace(kind, rng.split(c), cfg, self.attacker_region, self.attacker_ops))
        return out

    def regions(self) -> list:
        return [[self.victim_region] if c == self.victim_core else [self.attacker_region] for c in range(self.n_cores)]


def make_pair(seed: int, cfg: SimConfig = DIFF_CONFIG, max_cores: int = 2, victim_ops: int = 60) -> Pair:
    """Draw a random victim program and domain layout from ``seed``."""
    rng = DetRng(seed)
    n = 2 + rng.below(max_cores - 1) if max_cores > 2 else 2
    victim_core = rng.below(n)
    regions = list(range(1, cfg.n_regions))
    vr = regions[rng.below(len(regions))]
    others = [r for r in regions if r != vr]
    ar = others[rng.below(len(others))]
    span = 16 + rng.below(min(cfg.lines_per_region, 4 * cfg.llc_sets))
    lines = region_lines(cfg, vr, span)
    ops = random_trace(rng.split("victim"), cfg, lines, victim_ops,
                       store_frac=rng.random() * 0.6, compute_frac=0.1 + rng.random() * 0.3, max_compute=8)
    return Pair(seed, n, victim_core, vr, ar, ops)


@dataclass
class PairResult:
    pair: Pair
    observables: dict
    equal: bool

    @property
    def first_divergence(self):
        runs = list(self.observables.values())
        for other in runs[1:]:
            d = first_divergence(runs[0], other)
            if d is not None:
                return d
        return None

    @property
    def finish_times(self) -> dict:
        return {k: v[1] for k, v in self.observables.items()}


def check_pair(pair: Pair, variant: Variant = SECURE, cfg: SimConfig = DIFF_CONFIG,
               kinds=ATTACKER_KINDS, allow_invalid: bool = False) -> PairResult:
    c = cfg.replace(n_cores=pair.n_cores, llc_mshrs_total=cfg.llc_mshrs_total // cfg.n_cores * pair.n_cores,
                    dram_max_inflight=cfg.dram_max_inflight // cfg.n_cores * pair.n_cores)
    obs = {}
    for kind in kinds:
        m = run_domains(c, variant, pair.traces(kind, c), pair.regions(), pair.victim_core, allow_invalid)
        obs[kind] = m.observables(pair.victim_core)
    first = next(iter(obs.values()))
    return PairResult(pair, obs, all(o == first for o in obs.values()))


@dataclass
class SuiteResult:
    results: list
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.equal for r in self.results)

    @property
    def failures(self) -> list:
        return [r for r in self.results if not r.equal]


def noninterference_suite(n_pairs: int = 50, seed: int = 0, variant: Variant = SECURE,
                          cfg: SimConfig = DIFF_CONFIG, max_cores: int = 4) -> SuiteResult:
    """Check ``n_pairs`` random victim/attacker pairs; each pair runs once per attacker kind."""
    start = time.perf_counter()
    root = DetRng(seed)
    results = []
    for i in range(n_pairs):
        pair = make_pair(root.split(i).next_u64(), cfg, max_cores=max_cores)
        results.append(check_pair(pair, variant, cfg))
    return SuiteResult(results, time.perf_counter() - start)
