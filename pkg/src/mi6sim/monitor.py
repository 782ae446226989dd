"""Security monitor: protection-domain lifecycle driven by a scripted event schedule.

Schedule files hold one event per line::

    @<cycle> create <id> regions=<list> [buffers=<enclave_addr>:<os_addr>:<size>]
    @<cycle> schedule <id> core=<n> trace=<file>
    @<cycle> deschedule core=<n>
    @<cycle> destroy <id>
    @<cycle> mbox <from> <to> <hex payload, up to 64 bytes>
    @<cycle> memcopy <id> read|write

Events fire in file order at their cycle. Scheduling and descheduling drain
the core's window, purge it, and only then apply the new permissions. Periodic
traps (``trap_interval``) drain the core and purge it only when the variant
flushes on every trap.

``buffers=`` takes ``enclave:os:size`` or ``enclave:enclave_size:os:os_size``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .config import Flag, parse_region_list
from .core import NORMAL
from .trace import load_trace

CREATED, RUNNING, DESCHEDULED, DESTROYED = "CREATED", "RUNNING", "DESCHEDULED", "DESTROYED"
OS = "os"
PAYLOAD_BYTES = 64


class MonitorError(RuntimeError):
    pass


class ScheduleError(ValueError):
    def __init__(self, line: int, message: str, source: str = "<schedule>"):
        self.line = line
        super().__init__(f"{source}:{line}: {message}")


@dataclass
class Domain:
    id: str
    regions: frozenset
    state: str = CREATED
    cores: set = field(default_factory=set)
    inbox: deque = field(default_factory=deque)
    io_buffers: tuple | None = None


@dataclass
class Event:
    cycle: int
    op: str
    args: dict
    line: int = 0


@dataclass
class Transition:
    """Per-core switch in progress: drain, optional purge, then ``finish``."""

    core: int
    finish: object
    purge: bool
    phase: str = "drain"


def _kv(tokens, lineno, source):
    out = {}
    pos = []
    for t in tokens:
        if "=" in t:
            k, v = t.split("=", 1)
            out[k] = v
        else:
            pos.append(t)
    return pos, out


def parse_schedule(text: str, base_dir=".", source: str = "<schedule>", dram_bytes: int | None = None) -> list[Event]:
    """Parse a schedule file; traces named by ``trace=`` are loaded relative to ``base_dir``."""
    events = []
    base = Path(base_dir)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if not tokens[0].startswith("@"):
            raise ScheduleError(lineno, "events must start with @<cycle>", source)
        try:
            cycle = int(tokens[0][1:])
        except ValueError:
            raise ScheduleError(lineno, f"bad cycle {tokens[0]!r}", source) from None
        if cycle < 0 or len(tokens) < 2:
            raise ScheduleError(lineno, "expected '@<cycle> <op> ...'", source)
        op = tokens[1]
        pos, kv = _kv(tokens[2:], lineno, source)
        try:
            if op == "create":
                args = {"id": pos[0], "regions": parse_region_list(kv["regions"])}
                if "buffers" in kv:
                    parts = [int(x, 0) for x in kv["buffers"].split(":")]
                    if len(parts) == 3:
                        parts = [parts[0], parts[2], parts[1], parts[2]]
                    if len(parts) != 4:
                        raise ValueError("buffers needs enclave:os:size or enclave:size:os:size")
                    args["buffers"] = tuple(parts)
            elif op == "schedule":
                path = base / kv["trace"]
                args = {"id": pos[0], "core": int(kv["core"]), "trace": load_trace(path, dram_bytes)}
            elif op == "deschedule":
                args = {"core": int(kv["core"])}
            elif op == "destroy":
                args = {"id": pos[0]}
            elif op == "mbox":
                hexdata = pos[2]
                if hexdata.lower().startswith("0x"):
                    hexdata = hexdata[2:]
                payload = bytes.fromhex(hexdata.rjust(len(hexdata) + len(hexdata) % 2, "0"))
                args = {"src": pos[0], "dst": pos[1], "payload": payload}
            elif op == "memcopy":
                if pos[1] not in ("read", "write"):
                    raise ValueError("direction must be read or write")
                args = {"id": pos[0], "direction": pos[1]}
            else:
                raise ScheduleError(lineno, f"unknown op {op!r}", source)
        except ScheduleError:
            raise
        except (IndexError, KeyError, ValueError) as e:
            raise ScheduleError(lineno, f"malformed {op!r} event: {e}", source) from None
        events.append(Event(cycle, op, args, lineno))
    events.sort(key=lambda e: e.cycle)  # stable: same-cycle events keep file order
    return events


def load_schedule(path, dram_bytes: int | None = None) -> list[Event]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ScheduleError(0, f"cannot read schedule: {e.strerror}", str(p)) from None
    return parse_schedule(text, p.parent, str(p), dram_bytes)


class Monitor:
    def __init__(self, machine, events=(), strict: bool = True):
        self.machine = machine
        self.cfg = cfg = machine.cfg
        self.flush = Flag.FLUSH in machine.variant.flags
        self.reserved = frozenset(cfg.monitor_regions)
        self.domains: dict[str, Domain] = {}
        self.core_domain: list = [None] * cfg.n_cores
        self.events = deque(events)
        self.deferred: deque = deque()
        self.transitions: dict[int, Transition] = {}
        self.strict = strict
        self.errors: list = []
        self.cost_cycles = 0
        self.shootdowns = 0
        self.purges = 0
        self.next_trap = cfg.trap_interval or None
        machine.monitor = self
        for core in machine.cores:
            core.set_bitvector(self.os_regions())

    # -- bookkeeping ------------------------------------------------------------
    def live(self):
        return [d for d in self.domains.values() if d.state != DESTROYED]

    def owned_regions(self) -> set:
        out = set()
        for d in self.live():
            out |= d.regions
        return out

    def os_regions(self) -> list:
        taken = self.owned_regions() | self.reserved
        return [r for r in range(self.cfg.n_regions) if r not in taken]

    def _domain(self, did: str, live: bool = True) -> Domain:
        d = self.domains.get(did)
        if d is None:
            raise MonitorError(f"unknown domain {did!r}")
        if live and d.state == DESTROYED:
            raise MonitorError(f"domain {did!r} is destroyed")
        return d

    @property
    def done(self) -> bool:
        return not self.events and not self.deferred and not self.transitions

    def charge(self, cycles: int, core: int | None = None, nonspec: bool = False):
        self.cost_cycles += cycles
        if core is not None:
            c = self.machine.cores[core]
            now = self.machine.cycle
            c.stall_until = max(c.stall_until, now + cycles)
            if nonspec:
                c.nonspec_until = max(c.nonspec_until, now + cycles)
        return cycles

    # -- lifecycle ---------------------------------------------------------------
    def tlb_shootdown(self):
        for core in self.machine.cores:
            core.shootdown()
        self.shootdowns += 1

    def _refresh_os_cores(self):
        regs = self.os_regions()
        for c, did in enumerate(self.core_domain):
            if did is None and c not in self.transitions:
                self.machine.cores[c].set_bitvector(regs)

    def _regions_ready(self, regions) -> bool:
        return all(self.machine.region_quiescent(r) for r in regions)

    def create_domain(self, did: str, regions, buffers=None) -> str:
        regions = frozenset(regions)
        if did in self.domains:
            raise MonitorError(f"domain {did!r} already exists")
        if did == OS:
            raise MonitorError("'os' names the untrusted domain")
        if not regions:
            raise MonitorError("a domain needs at least one region")
        for r in regions:
            if not 0 <= r < self.cfg.n_regions:
                raise MonitorError(f"region {r} out of range")
        clash = regions & self.reserved
        if clash:
            raise MonitorError(f"regions {sorted(clash)} are reserved for the monitor")
        for d in self.live():
            overlap = regions & d.regions
            if overlap:
                raise MonitorError(f"regions {sorted(overlap)} already belong to domain {d.id!r}")
        dom = Domain(did, regions)
        if buffers is not None:
            dom.io_buffers = self._check_buffers(dom, *buffers)
        self.domains[did] = dom
        self.tlb_shootdown()
        for r in sorted(regions):
            self.machine.zero_region(r)
        self._refresh_os_cores()
        return did

    def register_buffers(self, did: str, enclave: int, enclave_size: int, os_buf: int, os_size: int):
        d = self._domain(did)
        d.io_buffers = self._check_buffers(d, enclave, enclave_size, os_buf, os_size)

    def _check_buffers(self, dom: Domain, enc: int, enc_size: int, osb: int, os_size: int):
        if enc_size != os_size:
            raise MonitorError(f"buffer sizes differ: enclave {enc_size}, OS {os_size}")
        size = enc_size
        if size <= 0:
            raise MonitorError("buffer size must be positive")
        cfg = self.cfg
        lb = cfg.line_bytes
        for addr, owner in ((enc, dom.regions), (osb, None)):
            first = (addr // lb) // cfg.lines_per_region
            last = ((addr + size - 1) // lb) // cfg.lines_per_region
            for r in range(first, last + 1):
                if owner is not None and r not in owner:
                    raise MonitorError(f"enclave buffer leaves the domain's regions (region {r})")
                if owner is None and (r in self.reserved or r in dom.regions):
                    raise MonitorError(f"OS buffer overlaps protected region {r}")
        return (enc, osb, size)

    def destroy_domain(self, did: str):
        d = self.domains.get(did)
        if d is None:
            raise MonitorError(f"unknown domain {did!r}")
        if d.state == DESTROYED:
            raise MonitorError(f"domain {did!r} already destroyed")
        if d.cores or any(t.core in d.cores for t in self.transitions.values()):
            raise MonitorError(f"domain {did!r} is still scheduled on cores {sorted(d.cores)}")
        for r in sorted(d.regions):
            self.machine.zero_region(r)
        self.tlb_shootdown()
        d.state = DESTROYED
        d.inbox.clear()
        self._refresh_os_cores()

    def _begin(self, core: int, finish, purge: bool):
        c = self.machine.cores[core]
        c.draining = True
        self.transitions[core] = Transition(core, finish, purge)

    def schedule(self, did: str, core: int, trace):
        d = self._domain(did)
        if not 0 <= core < self.cfg.n_cores:
            raise MonitorError(f"no core {core}")
        if self.core_domain[core] is not None or core in self.transitions:
            raise MonitorError(f"core {core} is busy")

        def finish(c):
            c.set_bitvector(d.regions)
            c.set_trace(trace)
            d.state = RUNNING

        d.cores.add(core)
        self.core_domain[core] = did
        self._begin(core, finish, True)

    def deschedule(self, core: int):
        if not 0 <= core < self.cfg.n_cores:
            raise MonitorError(f"no core {core}")
        did = self.core_domain[core]
        if did is None or core in self.transitions:
            raise MonitorError(f"core {core} is not running a domain")
        d = self.domains[did]

        def finish(c):
            c.set_trace([])
            d.cores.discard(core)
            self.core_domain[core] = None
            if not d.cores:
                d.state = DESCHEDULED
            c.set_bitvector(self.os_regions())

        self._begin(core, finish, True)

    def trap(self, core: int):
        """A trap into the monitor: drain, purge when flushing, resume the same program."""
        if core in self.transitions:
            return
        self._begin(core, lambda c: None, self.flush)

    def mailbox_send(self, src: str, dst: str, payload: bytes) -> int:
        if len(payload) > PAYLOAD_BYTES:
            raise MonitorError(f"mailbox payload is {len(payload)} bytes, limit {PAYLOAD_BYTES}")
        if src != OS:
            self._domain(src)
        if dst == OS:
            raise MonitorError("the OS has no monitor inbox")
        d = self._domain(dst)
        if len(d.inbox) >= self.cfg.mailbox_depth:
            raise MonitorError(f"inbox of {dst!r} is full")
        d.inbox.append((src, payload.ljust(PAYLOAD_BYTES, b"\0")))
        sender = None if src == OS else next(iter(sorted(self.domains[src].cores)), None)
        return self.charge(self.cfg.monitor_call_cost, sender)

    def mailbox_receive(self, did: str):
        d = self._domain(did)
        if not d.inbox:
            return None
        return d.inbox.popleft()

    def memcopy_cost(self, size: int) -> int:
        lines = -(-size // self.cfg.line_bytes)
        return self.cfg.monitor_call_cost + lines * self.cfg.memcopy_line_cycles

    def memcopy(self, did: str, direction: str) -> int:
        """``write`` copies the enclave buffer out to the OS buffer, ``read`` copies the OS buffer in."""
        d = self._domain(did)
        if d.io_buffers is None:
            raise MonitorError(f"domain {did!r} has no registered I/O buffers")
        enc, osb, size = d.io_buffers
        if direction == "write":
            src, dst = enc, osb
        elif direction == "read":
            src, dst = osb, enc
        else:
            raise MonitorError(f"unknown memcopy direction {direction!r}")
        m = self.machine
        m.write_bytes(dst, m.read_bytes(src, size))
        core = next(iter(sorted(d.cores)), None)
        return self.charge(self.memcopy_cost(size), core, nonspec=True)

    def _memcopy_ready(self, did: str) -> bool:
        d = self.domains.get(did)
        if d is None or d.io_buffers is None:
            return True
        lb = self.cfg.line_bytes
        for base in d.io_buffers[:2]:
            for line in range(base // lb, (base + d.io_buffers[2] - 1) // lb + 1):
                if not self.machine.line_quiescent(line):
                    return False
        return True

    # -- event processing -----------------------------------------------------------
    def _ready(self, ev: Event) -> bool:
        if ev.op == "create":
            regions = [r for r in ev.args["regions"] if 0 <= r < self.cfg.n_regions]
            return self._regions_ready(regions)
        if ev.op == "destroy":
            d = self.domains.get(ev.args["id"])
            if d is None or d.state == DESTROYED:
                return True
            # a deschedule still purging the domain's core finishes first
            if any(c in self.transitions for c in d.cores):
                return False
            return self._regions_ready(d.regions)
        if ev.op == "memcopy":
            return self._memcopy_ready(ev.args["id"])
        return True

    def apply(self, ev: Event):
        a = ev.args
        if ev.op == "create":
            self.create_domain(a["id"], a["regions"], a.get("buffers"))
        elif ev.op == "schedule":
            self.schedule(a["id"], a["core"], a["trace"])
        elif ev.op == "deschedule":
            self.deschedule(a["core"])
        elif ev.op == "destroy":
            self.destroy_domain(a["id"])
        elif ev.op == "mbox":
            self.mailbox_send(a["src"], a["dst"], a["payload"])
        elif ev.op == "memcopy":
            self.memcopy(a["id"], a["direction"])
        else:
            raise MonitorError(f"unknown op {ev.op!r}")

    def _fire(self, ev: Event):
        log = self.machine.log
        if log.enabled:
            detail = " ".join(f"{k}={v!r}" for k, v in ev.args.items() if k != "trace")
            log.emit(self.machine.cycle, "monitor", ev.op, detail)
        try:
            self.apply(ev)
        except MonitorError as e:
            if self.strict:
                raise MonitorError(f"cycle {self.machine.cycle}, schedule line {ev.line}: {e}") from None
            self.errors.append((self.machine.cycle, ev, str(e)))

    def step(self, cycle: int):
        # events that had to wait for quiescent memory go first, in order
        if self.deferred:
            while self.deferred and self._ready(self.deferred[0]):
                self._fire(self.deferred.popleft())
        while self.events and self.events[0].cycle <= cycle:
            ev = self.events.popleft()
            if self.deferred or not self._ready(ev):
                self.deferred.append(ev)
            else:
                self._fire(ev)
        if self.next_trap is not None and cycle >= self.next_trap:
            self.next_trap += self.cfg.trap_interval
            for c, core in enumerate(self.machine.cores):
                if core.pc < len(core.trace):
                    self.trap(c)
        if self.transitions:
            self._advance_transitions(cycle)

    def _advance_transitions(self, cycle: int):
        for cid in sorted(self.transitions):
            t = self.transitions[cid]
            core = self.machine.cores[cid]
            if t.phase == "drain" and core.drained and core.mode == NORMAL:
                if t.purge:
                    core.purge(cycle)
                    self.purges += 1
                    t.phase = "purge"
                else:
                    t.phase = "done"
            elif t.phase == "purge" and core.mode == NORMAL:
                t.phase = "done"
            if t.phase == "done":
                core.draining = False
                t.finish(core)
                del self.transitions[cid]
