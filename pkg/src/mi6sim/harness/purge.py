"""Purge checks: stall arithmetic and reset equivalence of the scrubbed core."""

from __future__ import annotations

from dataclasses import dataclass

from ..config import FULL_CONFIG, SimConfig, Variant
from ..core import purge_duration
from ..engine import DetRng
from ..machine import Machine
from .workloads import random_trace, region_lines

# The full-size geometry with an MSHR count that passes validation under every variant.
PURGE_CONFIG = FULL_CONFIG.replace(llc_mshrs_total=12)


@dataclass
class PurgeResult:
    duration: int
    measured_stall: int
    equal_to_reset: bool
    dirty_state: bool

    @property
    def passed(self) -> bool:
        return self.equal_to_reset and self.dirty_state and self.measured_stall == self.duration


def purge_check(cfg: SimConfig = PURGE_CONFIG, variant: Variant | str = "secure", seed: int = 0,
                n_ops: int = 400) -> PurgeResult:
    """Dirty every structure a core owns, purge it, and compare with a freshly reset core.

    ``dirty_state`` records that the core really did differ from reset before
    the purge, so a vacuous comparison cannot pass.
    """
    if isinstance(variant, str):
        variant = Variant.parse(variant)
    m = Machine(cfg, variant)
    core = m.cores[0]
    reset_state = m.cores[0].serialize_state()
    rng = DetRng(seed)
    lines = region_lines(cfg, 1, 4 * cfg.l1_lines)
    core.set_trace(random_trace(rng, cfg, lines, n_ops, store_frac=0.4, compute_frac=0.1))
    for i in range(len(core.bp)):
        core.bp[i] = rng.below(4)
    m.run()
    dirty = core.serialize_state() != reset_state
    start = m.cycle
    duration = core.purge(start)
    m.run(until=lambda: core.mode == "NORMAL")
    return PurgeResult(duration, m.cycle - start, core.serialize_state() == reset_state, dirty)


def trap_purge_stalls(cfg: SimConfig = PURGE_CONFIG, interval: int = 2000, n_ops: int = 600, seed: int = 0):
    """Run a FLUSH machine with periodic traps; returns (purges, stall cycles per purge)."""
    from ..monitor import Monitor

    c = cfg.replace(trap_interval=interval)
    m = Machine(c, Variant.parse("flush"))
    mon = Monitor(m)
    mon.create_domain("d", [1])
    rng = DetRng(seed)
    mon.schedule("d", 0, random_trace(rng, c, region_lines(c, 1, 256), n_ops, compute_frac=0.3, max_compute=16))
    m.run()
    core = m.cores[0]
    return core.stats.purges, core.stats.purge_stalls / max(core.stats.purges, 1)


def full_size_stall() -> int:
    return purge_duration(FULL_CONFIG)
