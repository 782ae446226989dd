"""Wires cores, links, LLC and DRAM together and advances them one cycle at a time."""

from __future__ import annotations

from .config import ConfigError, SimConfig, Variant, validate_config
from .core import Core
from .dram import Dram, Memory
from .engine import EventLog, Kernel, SimulationAbort
from .llc import Llc
from .protocol import Link

STATS_COLUMNS = (
    "variant", "core", "cycles", "memops", "llc_misses", "l1_misses", "mshr_stall_cycles",
    "arbiter_wait_cycles", "dq_retries", "purge_stalls", "faults",
)


class FlatMemory:
    """Reference memory for coherence checking: every load must see the latest store to its word."""

    def __init__(self):
        self.words: dict[tuple, int] = {}
        self.mismatches: list = []
        self.loads = 0
        self.stores = 0

    def load(self, core: int, line: int, word: int, value: int, cycle: int):
        self.loads += 1
        expect = self.words.get((line, word), 0)
        if value != expect:
            self.mismatches.append((cycle, core, line, word, value, expect))

    def store(self, core: int, line: int, word: int, value: int, cycle: int):
        self.stores += 1
        self.words[(line, word)] = value

    def zero_lines(self, first: int, count: int):
        end = first + count
        for key in [k for k in self.words if first <= k[0] < end]:
            del self.words[key]


class Machine:
    """One simulated chip.

    ``allow_invalid`` skips config validation; it exists so experiments can
    build deliberately mis-sized machines (for example MSHRs beyond the DRAM
    budget) and observe what goes wrong.
    """

    def __init__(
        self,
        cfg: SimConfig,
        variant: Variant,
        *,
        log: bool = False,
        check: bool = True,
        allow_invalid: bool = False,
        oracle: bool = False,
    ):
        violations = validate_config(cfg, variant)
        if violations and not allow_invalid:
            raise ConfigError(violations)
        self.cfg = cfg
        self.variant = variant
        self.kernel = Kernel(EventLog(log))
        self.log = self.kernel.log
        self.memory = Memory(cfg.line_bytes)
        self.dram = Dram(cfg.dram_latency, cfg.dram_max_inflight, self.memory, self.log)
        self.links = [Link(self.kernel, c, cfg.link_depth, cfg.link_depth) for c in range(cfg.n_cores)]
        self.llc = Llc(cfg, variant, self.kernel, self.links, self.dram, check=check)
        self.oracle = FlatMemory() if oracle else None
        self.cores = [
            Core(c, cfg, variant, self.links[c], self.llc.purge_port, self.oracle, self.log)
            for c in range(cfg.n_cores)
        ]
        everything = range(cfg.n_regions)
        for core in self.cores:
            core.set_bitvector(everything)
        self.llc.back_invalidate = self._back_invalidate
        self.monitor = None

    @property
    def cycle(self) -> int:
        return self.kernel.cycle

    def _back_invalidate(self, addr: int, holders):
        for c in holders:
            self.cores[c].invalidate_line(addr)

    def load_traces(self, traces):
        """Give core ``i`` trace ``traces[i]`` (None leaves the core idle)."""
        for core, ops in zip(self.cores, traces):
            if ops is not None:
                core.set_trace(ops)

    def tick(self):
        c = self.kernel.cycle
        for core in self.cores:
            core.step(c)
        self.llc.step(c)
        resp = self.dram.step(c)
        if resp is not None:
            self.llc.accept_dram(resp, c)
        if self.monitor is not None:
            self.monitor.step(c)
        self.kernel.advance()

    def all_done(self) -> bool:
        if self.monitor is not None and not self.monitor.done:
            return False
        return all(core.done for core in self.cores)

    def run(self, max_cycles: int = 50_000_000, until=None) -> int:
        """Tick until every core finished its trace (or ``until()`` is true); returns the final cycle."""
        done = until or self.all_done
        limit = self.kernel.cycle + max_cycles
        while not done():
            if self.kernel.cycle >= limit:
                raise SimulationAbort(self.kernel.cycle, "machine", f"no completion within {max_cycles} cycles")
            self.tick()
        return self.kernel.cycle

    def run_for(self, cycles: int):
        for _ in range(cycles):
            self.tick()

    # -- results -------------------------------------------------------------------
    def core_stats(self, c: int) -> dict:
        core = self.cores[c]
        llc = self.llc.stats
        return {
            "variant": self.variant.label,
            "core": c,
            "cycles": core.stats.finish,
            "memops": core.stats.memops,
            "llc_misses": llc.llc_misses[c],
            "l1_misses": core.stats.l1_misses,
            "mshr_stall_cycles": llc.mshr_stall_cycles[c],
            "arbiter_wait_cycles": llc.arbiter_wait_cycles[c],
            "dq_retries": llc.dq_retries[c],
            "purge_stalls": core.stats.purge_stalls,
            "faults": core.stats.faults,
        }

    def stats_rows(self) -> list[dict]:
        return [self.core_stats(c) for c in range(self.cfg.n_cores)]

    def stats_csv(self) -> str:
        lines = ["# schema=1", ",".join(STATS_COLUMNS)]
        for row in self.stats_rows():
            lines.append(",".join(str(row[k]) for k in STATS_COLUMNS))
        return "\n".join(lines) + "\n"

    def observables(self, c: int) -> tuple:
        """Everything core ``c`` can observe about its own execution: per-op timings, values, faults."""
        core = self.cores[c]
        return tuple(core.observables), core.stats.finish

    # -- coherent functional access (monitor and tests) ----------------------------------
    def peek_line(self, addr: int) -> bytes:
        """Current architectural value of a line, looking through the caches."""
        for core in self.cores:
            line = core.lines.get(addr)
            if line is not None and line.state == 2:
                return line.data
        line = self.llc.resident.get(addr)
        if line is not None:
            return line.data
        return self.memory.read(addr)

    def peek_word(self, byte_addr: int) -> int:
        line = byte_addr >> self.cfg.line_shift
        w = byte_addr & (self.cfg.line_bytes - 1) & ~7
        return int.from_bytes(self.peek_line(line)[w:w + 8], "little")

    def check_directory(self) -> list[str]:
        """Compare each L1's line states with the LLC directory; returns human-readable problems."""
        problems = []
        for core in self.cores:
            for addr, line in core.lines.items():
                d = self.llc.resident.get(addr)
                if d is None:
                    problems.append(f"core {core.id} holds {addr:#x} which the LLC does not")
                elif d.states[core.id] < line.state:
                    problems.append(f"core {core.id} holds {addr:#x} in {line.state} but directory says {d.states[core.id]}")
        for addr, d in self.llc.resident.items():
            if sum(1 for s in d.states if s == 2) > 1 or (2 in d.states and sum(1 for s in d.states if s) > 1):
                problems.append(f"directory line {addr:#x} has conflicting states {d.states}")
        return problems

    def line_quiescent(self, addr: int) -> bool:
        """No MSHR, link message or DRAM request currently carries ``addr``."""
        for m in self.llc.mshrs:
            if m.addr == addr or m.victim == addr:
                if m.phase != "free":
                    return False
        for link in self.links:
            for fifo in (link.req, link.resp, link.down):
                for msg in fifo.snapshot():
                    if getattr(msg, "addr", None) == addr:
                        return False
        for core in self.cores:
            if addr in core.mshrs:
                return False
        for req in self.dram.in_flight:
            if req.addr == addr:
                return False
        for req in self.dram.ready:
            if req.addr == addr:
                return False
        return True

    def poke_line(self, addr: int, data: bytes):
        """Write a whole line coherently: every cached copy and the backing store see ``data``."""
        data = bytes(data)
        for core in self.cores:
            line = core.lines.get(addr)
            if line is not None:
                line.data = data
        d = self.llc.resident.get(addr)
        if d is not None:
            d.data = data
            d.dirty = True
        else:
            self.memory.write(addr, data)
        if self.oracle is not None:
            for w in range(0, self.cfg.line_bytes, 8):
                self.oracle.words[(addr, w)] = int.from_bytes(data[w:w + 8], "little")

    def read_bytes(self, byte_addr: int, size: int) -> bytes:
        out = bytearray()
        lb = self.cfg.line_bytes
        a = byte_addr
        end = byte_addr + size
        while a < end:
            line, off = divmod(a, lb)
            take = min(lb - off, end - a)
            out += self.peek_line(line)[off:off + take]
            a += take
        return bytes(out)

    def write_bytes(self, byte_addr: int, payload: bytes):
        lb = self.cfg.line_bytes
        a = byte_addr
        i = 0
        while i < len(payload):
            line, off = divmod(a, lb)
            take = min(lb - off, len(payload) - i)
            data = bytearray(self.peek_line(line))
            data[off:off + take] = payload[i:i + take]
            self.poke_line(line, data)
            a += take
            i += take

    def zero_region(self, region: int):
        """Zero a DRAM region and drop every cached copy of it."""
        lpr = self.cfg.lines_per_region
        first = region * lpr
        self.llc.scrub_sets(region)
        for core in self.cores:
            for addr in [a for a in core.lines if first <= a < first + lpr]:
                core.invalidate_line(addr)
        self.memory.zero_range(first, lpr)
        if self.oracle is not None:
            self.oracle.zero_lines(first, lpr)

    def region_quiescent(self, region: int) -> bool:
        """No in-flight message, MSHR or DRAM request touches ``region``."""
        lpr = self.cfg.lines_per_region
        lo, hi = region * lpr, (region + 1) * lpr

        def inside(a):
            return a is not None and lo <= a < hi

        if self.llc.region_busy(region):
            return False
        for link in self.links:
            for fifo in (link.req, link.resp, link.down):
                if any(inside(getattr(msg, "addr", None)) for msg in fifo.snapshot()):
                    return False
        for core in self.cores:
            if any(inside(a) for a in core.mshrs):
                return False
        if self.llc.purge_port and any(inside(a) for _, a, _ in self.llc.purge_port):
            return False
        return not any(inside(r.addr) for r in list(self.dram.in_flight) + list(self.dram.ready))
