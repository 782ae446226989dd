"""Prime+probe against a shared LLC set.

The attacker fills one LLC set with its own lines, waits while the victim runs,
then reloads them and times each reload. The LLC is inclusive, so a victim
access that evicts a primed line also back-invalidates the attacker's L1 copy
and the reload pays a full DRAM round trip instead of an L1 hit.

Detection means the probe latencies differ between a victim that touches the
target set and one that does not.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..config import SimConfig, Variant, llc_index, region_base
from ..engine import DetRng
from ..trace import COMPUTE, LOAD, TraceOp
from .differential import run_domains
from .workloads import byte_addr

# Small LLC so one set is quick to prime; the L1 has room for every primed line.
PP_CONFIG = SimConfig(
    n_cores=2,
    llc_sets=64,
    llc_ways=4,
    l1_sets=4,
    l1_ways=8,
    l1_mshrs=4,
    llc_mshrs_total=4,
    n_regions=4,
    dram_bytes=1 << 20,
    dram_latency=40,
    dram_max_inflight=8,
)
ATTACKER, VICTIM = 0, 1
ATTACKER_REGION, VICTIM_REGION = 1, 2
VICTIM_START = 600
PROBE_START = 1500


@dataclass
class Scenario:
    seed: int
    target_set: int
    prime_lines: list
    victim_line: int
    noise_lines: list


def make_scenario(seed: int, cfg: SimConfig = PP_CONFIG) -> Scenario:
    """Draw a target set, the attacker's eviction set and a victim line that collides with it without PART."""
    rng = DetRng(seed)
    sets = cfg.llc_sets
    target = rng.below(sets)
    lpr = cfg.lines_per_region
    abase = region_base(ATTACKER_REGION, cfg)
    candidates = [abase + target + k * sets for k in range(lpr // sets)]
    prime = []
    while len(prime) < cfg.llc_ways:
        line = candidates[rng.below(len(candidates))]
        if line not in prime:
            prime.append(line)
    vbase = region_base(VICTIM_REGION, cfg)
    victim_line = vbase + target + rng.below(lpr // sets) * sets
    noise = []
    for _ in range(4):
        s = rng.below(sets)
        if s != target:
            noise.append(vbase + s + rng.below(lpr // sets) * sets)
    return Scenario(seed, target, prime, victim_line, noise)


def attacker_program(sc: Scenario, cfg: SimConfig) -> list:
    ops = [TraceOp(LOAD, addr=byte_addr(line, cfg)) for line in sc.prime_lines]
    ops.append(TraceOp(COMPUTE, cycles=PROBE_START))
    ops += [TraceOp(LOAD, addr=byte_addr(line, cfg)) for line in sc.prime_lines]
    return ops


def victim_program(sc: Scenario, cfg: SimConfig, touch: bool) -> list:
    ops = [TraceOp(COMPUTE, cycles=VICTIM_START)]
    ops += [TraceOp(LOAD, addr=byte_addr(line, cfg)) for line in sc.noise_lines]
    if touch:
        ops.append(TraceOp(LOAD, addr=byte_addr(sc.victim_line, cfg)))
    return ops


def probe_latencies(sc: Scenario, variant: Variant, cfg: SimConfig = PP_CONFIG, touch: bool = True) -> list[int]:
    """Reload latency of each primed line, in probe order."""
    traces = [None, None]
    traces[ATTACKER] = attacker_program(sc, cfg)
    traces[VICTIM] = victim_program(sc, cfg, touch)
    regions = [None, None]
    regions[ATTACKER] = [ATTACKER_REGION]
    regions[VICTIM] = [VICTIM_REGION]
    m = run_domains(cfg, variant, traces, regions, ATTACKER)
    obs = m.cores[ATTACKER].observables
    probes = obs[-len(sc.prime_lines):]
    return [done - issue for _, issue, done, _, _ in probes]


def slow_probes(latencies, cfg: SimConfig = PP_CONFIG) -> int:
    """Number of probes slow enough to have gone to DRAM."""
    return sum(1 for t in latencies if t > cfg.dram_latency // 2)


@dataclass
class Detection:
    seed: int
    touch_slow: int
    skip_slow: int

    @property
    def detected(self) -> bool:
        return self.touch_slow != self.skip_slow


def prime_probe(seed: int, variant: Variant, cfg: SimConfig = PP_CONFIG, victim_idle: bool = False) -> Detection:
    """One scenario instance. ``victim_idle`` compares two non-touching runs as a no-signal control."""
    sc = make_scenario(seed, cfg)
    touch = slow_probes(probe_latencies(sc, variant, cfg, touch=not victim_idle), cfg)
    skip = slow_probes(probe_latencies(sc, variant, cfg, touch=False), cfg)
    return Detection(seed, touch, skip)


def detection_rate(variant: Variant, seeds=range(20), cfg: SimConfig = PP_CONFIG) -> list[Detection]:
    return [prime_probe(s, variant, cfg) for s in seeds]
