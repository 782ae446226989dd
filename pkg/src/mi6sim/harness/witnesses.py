"""One constructed scenario per LLC timing channel.

Each witness pairs a victim program with an attacker program. A channel is
demonstrated when removing its countermeasure from the secure variant makes
the victim's observables depend on whether the attacker runs, while the full
secure variant keeps them identical.

The scenarios were found by a parameter search over a few workload families
and then frozen here; the matrix test reruns them from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..config import SECURE, Flag, SimConfig, Variant, region_base
from ..engine import DetRng
from ..trace import COMPUTE, LOAD, STORE, TraceOp
from .differential import run_domains
from .workloads import random_trace, region_lines

CHANNELS = (
    "CACHE_SET",
    "MSHR_EXHAUST",
    "DRAM_BACKPRESSURE",
    "ENTRY_PORT",
    "DOWNGRADE_LOGIC",
    "UQ_HEADLINE",
    "DQ_TWO_CYCLE",
)

# The countermeasure each channel defeats. DRAM backpressure is closed by
# sizing, not by a flag: the insecure machine gets d_max MSHRs instead of d_max/2.
SIZING = "MSHR_SIZING"
COUNTERMEASURE = {
    "CACHE_SET": Flag.PART,
    "MSHR_EXHAUST": Flag.MSHR_PARTITION,
    "DRAM_BACKPRESSURE": SIZING,
    "ENTRY_PORT": Flag.RR_ARBITER,
    "DOWNGRADE_LOGIC": Flag.DUP_DOWNGRADE,
    "UQ_HEADLINE": Flag.SPLIT_UQ,
    "DQ_TWO_CYCLE": Flag.DQ_RETRY,
}

# Four cores: victim on core 1, a three-core attacker domain on 0, 2 and 3.
# A pipeline latency of 6 on 4 cores lines pipeline exits up with the victim's
# next arbiter slot, so single-cycle contention is not absorbed by slot alignment.
WITNESS_CONFIG = SimConfig(
    n_cores=4,
    llc_sets=64,
    llc_ways=2,
    l1_sets=4,
    l1_ways=8,
    l1_mshrs=8,
    llc_mshrs_total=16,
    llc_pipeline_latency=6,
    n_regions=4,
    dram_bytes=1 << 20,
    dram_latency=40,
    dram_max_inflight=32,
    link_depth=1,
)
VICTIM_CORE = 1
ATTACKER_CORES = (0, 2, 3)
VICTIM_REGION = 1
ATTACKER_REGION = 2


def _op(kind: str, line: int) -> TraceOp:
    return TraceOp(kind, addr=line << 6)


def _gapped(ops, gap: int) -> list:
    out = []
    for op in ops:
        out.append(op)
        if gap:
            out.append(TraceOp(COMPUTE, cycles=gap))
    return out


def victim_program(cfg: SimConfig, n_lines: int, kind: str, gap: int, delay: int = 0, n_ops: int = 40) -> list:
    """Cycle ``kind`` accesses over ``n_lines`` conflicting lines of the victim region."""
    base = region_base(VICTIM_REGION, cfg)
    stride = 16 if n_lines < 5 else 4
    ops = [TraceOp(COMPUTE, cycles=delay)] if delay else []
    return ops + _gapped([_op(kind, base + stride * (i % n_lines)) for i in range(n_ops)], gap)


def shared_set_attack(cfg: SimConfig, n_lines: int, kind: str, gap: int) -> list:
    """All attacker cores sweep the same few lines of one LLC set, staggered by one line."""
    base = region_base(ATTACKER_REGION, cfg)
    lines = [base + 16 * j for j in range(n_lines)]
    return [_gapped([_op(kind, lines[(i + k) % n_lines]) for i in range(300)], gap) for k in range(3)]


def random_attack(cfg: SimConfig, seed: int) -> list:
    rng = DetRng(seed)
    lines = region_lines(cfg, ATTACKER_REGION, 64)
    return [random_trace(rng.split(a), cfg, lines, 300, store_frac=0.6, compute_frac=0.05) for a in range(3)]


def store_stream_attack(cfg: SimConfig, n_lines: int) -> list:
    """Each attacker core streams dirty stores over its own slice of the attacker region."""
    base = region_base(ATTACKER_REGION, cfg)
    quarter = cfg.lines_per_region // 4
    return [[_op(STORE, base + j * quarter + (i % n_lines) * 4) for i in range(400)] for j in range(3)]


@dataclass(frozen=True)
class Witness:
    channel: str
    victim: dict
    attack: tuple
    config: dict = field(default_factory=dict)

    def cfg(self, base: SimConfig = WITNESS_CONFIG) -> SimConfig:
        return base.replace(**self.config) if self.config else base

    def victim_trace(self, cfg: SimConfig) -> list:
        return victim_program(cfg, **self.victim)

    def attacker_traces(self, cfg: SimConfig) -> list:
        family, *args = self.attack
        if family == "shared_set":
            return shared_set_attack(cfg, *args)
        if family == "random":
            return random_attack(cfg, *args)
        if family == "store_stream":
            return store_stream_attack(cfg, *args)
        raise ValueError(f"unknown attack family {family!r}")


WITNESSES = {
    "CACHE_SET": Witness("CACHE_SET", dict(n_lines=3, kind=STORE, gap=5), ("store_stream", 32)),
    "MSHR_EXHAUST": Witness("MSHR_EXHAUST", dict(n_lines=3, kind=STORE, gap=20), ("random", 0)),
    "DRAM_BACKPRESSURE": Witness(
        "DRAM_BACKPRESSURE", dict(n_lines=3, kind=STORE, gap=20, delay=400), ("random", 0), {"dram_latency": 200}
    ),
    "ENTRY_PORT": Witness("ENTRY_PORT", dict(n_lines=3, kind=STORE, gap=5), ("shared_set", 3, LOAD, 1)),
    "DOWNGRADE_LOGIC": Witness("DOWNGRADE_LOGIC", dict(n_lines=3, kind=STORE, gap=20), ("shared_set", 3, LOAD, 1)),
    "UQ_HEADLINE": Witness("UQ_HEADLINE", dict(n_lines=3, kind=STORE, gap=20), ("random", 0)),
    "DQ_TWO_CYCLE": Witness("DQ_TWO_CYCLE", dict(n_lines=3, kind=LOAD, gap=5), ("store_stream", 32)),
}


def oversized(cfg: SimConfig) -> SimConfig:
    """The same machine with as many LLC MSHRs as DRAM slots, twice the safe budget."""
    return cfg.replace(llc_mshrs_total=cfg.dram_max_inflight)


def victim_observables(w: Witness, variant: Variant, cfg: SimConfig, attacker_on: bool, allow_invalid: bool = False):
    traces: list = [[] for _ in range(cfg.n_cores)]
    traces[VICTIM_CORE] = w.victim_trace(cfg)
    if attacker_on:
        for core, ops in zip(ATTACKER_CORES, w.attacker_traces(cfg)):
            traces[core] = ops
    regions = [[ATTACKER_REGION] for _ in range(cfg.n_cores)]
    regions[VICTIM_CORE] = [VICTIM_REGION]
    m = run_domains(cfg, variant, traces, regions, VICTIM_CORE, allow_invalid=allow_invalid)
    return m.observables(VICTIM_CORE)


def diverges(w: Witness, variant: Variant, cfg: SimConfig, allow_invalid: bool = False) -> bool:
    """True when the victim can tell whether the attacker ran."""
    quiet = victim_observables(w, variant, cfg, False, allow_invalid)
    busy = victim_observables(w, variant, cfg, True, allow_invalid)
    return quiet != busy


def insecure_setup(channel: str, variant: Variant, cfg: SimConfig):
    """``(variant, cfg, allow_invalid)`` with the channel's countermeasure removed."""
    cm = COUNTERMEASURE[channel]
    if cm == SIZING:
        return variant, oversized(cfg), True
    return variant.without(cm), cfg, cfg.llc_mshrs_total > cfg.dram_max_inflight // 2


@dataclass
class Row:
    channel: str
    insecure_diverges: bool
    secure_diverges: bool

    @property
    def passed(self) -> bool:
        return self.insecure_diverges and not self.secure_diverges


def witness_row(channel: str, secure: Variant = SECURE, oversize: bool = False) -> Row:
    """Run one channel's witness.

    ``secure`` and ``oversize`` describe the machine under test, so a mutated
    secure variant (or a mis-sized one) can be checked against the matrix.
    """
    w = WITNESSES[channel]
    cfg = w.cfg()
    if oversize:
        cfg = oversized(cfg)
    ins_variant, ins_cfg, ins_allow = insecure_setup(channel, secure, cfg)
    return Row(
        channel,
        diverges(w, ins_variant, ins_cfg, ins_allow),
        diverges(w, secure, cfg, oversize),
    )


def witness_matrix(secure: Variant = SECURE, oversize: bool = False, channels=CHANNELS) -> list[Row]:
    return [witness_row(ch, secure, oversize) for ch in channels]
