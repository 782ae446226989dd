"""Trace-driven core: in-flight window, permission TLB, private L1 with MSHRs, and the purge engine."""

from __future__ import annotations

import json
from collections import OrderedDict, deque
from hashlib import sha256

from .config import Flag, SimConfig, Variant
from .engine import SimulationAbort, hash_pick
from .protocol import I, M, S, DowngradeReq, DowngradeResp, UpgradeReq
from .trace import COMPUTE, LOAD, STORE

ALLOWED, FAULT = "ALLOWED", "FAULT"
NORMAL, PURGING = "NORMAL", "PURGING"


def check_access(addr: int, bitvector, cfg: SimConfig) -> str:
    """ALLOWED iff the line's DRAM region bit is set; lines past the end of DRAM always fault."""
    region = addr // cfg.lines_per_region
    if not 0 <= region < len(bitvector):
        return FAULT
    return ALLOWED if bitvector[region] else FAULT


def purge_duration(cfg: SimConfig) -> int:
    """Cycles a purge stalls the core: the slowest of the four parallel flush engines."""
    l1 = -(-cfg.l1_lines // cfg.l1_flush_rate)
    bp = -(-cfg.bp_table_entries // cfg.bp_flush_rate)
    return max(l1, 1, cfg.l2_tlb_sets, bp)


class Tlb:
    """Two-level cache of page -> permission; only permitted pages are cached.

    Both levels keep LRU order in their dicts, so there is no separate
    replacement state to scrub.
    """

    def __init__(self, cfg: SimConfig):
        self.l1_entries = cfg.l1_tlb_entries
        self.l2_sets = cfg.l2_tlb_sets
        self.l2_ways = cfg.l2_tlb_ways
        self.l1: OrderedDict = OrderedDict()
        self.l2 = [OrderedDict() for _ in range(cfg.l2_tlb_sets)]
        self.walks = 0

    def lookup(self, page: int) -> int:
        """1 for an L1 hit, 2 for an L2 hit (promoted to L1), 0 for a miss."""
        if page in self.l1:
            self.l1.move_to_end(page)
            return 1
        ways = self.l2[page % self.l2_sets]
        if page in ways:
            ways.move_to_end(page)
            self._fill_l1(page)
            return 2
        return 0

    def _fill_l1(self, page: int):
        self.l1[page] = True
        self.l1.move_to_end(page)
        if len(self.l1) > self.l1_entries:
            self.l1.popitem(last=False)

    def insert(self, page: int):
        ways = self.l2[page % self.l2_sets]
        ways[page] = True
        ways.move_to_end(page)
        if len(ways) > self.l2_ways:
            ways.popitem(last=False)
        self._fill_l1(page)

    def clear(self):
        self.l1.clear()
        for ways in self.l2:
            ways.clear()

    def clear_l1(self):
        self.l1.clear()

    def clear_l2_set(self, s: int):
        self.l2[s].clear()

    def state(self):
        return {"l1": list(self.l1), "l2": [list(w) for w in self.l2 if w]}


class L1Line:
    __slots__ = ("tag", "state", "data")

    def __init__(self, zero: bytes):
        self.tag = -1
        self.state = I
        self.data = zero


class L1Mshr:
    __slots__ = ("addr", "want", "ops", "sent")

    def __init__(self, addr: int, want: int):
        self.addr = addr
        self.want = want
        self.ops: list = []
        self.sent = False


class OpRecord:
    """One trace op in flight; ``done_at`` is None until its completion time is known."""

    __slots__ = ("seq", "op", "issue", "done_at", "ready_at", "tlb_done", "walking", "fault", "value", "line", "word")

    def __init__(self, seq: int, op, issue: int):
        self.seq = seq
        self.op = op
        self.issue = issue
        self.done_at = None
        self.ready_at = issue + 1
        self.tlb_done = False
        self.walking = False
        self.fault = False
        self.value = None
        self.line = 0
        self.word = 0


class CoreStats:
    def __init__(self):
        self.memops = 0
        self.l1_misses = 0
        self.faults = 0
        self.purge_stalls = 0
        self.purges = 0
        self.messages = 0
        self.finish = 0
        self.l1_evictions = 0


class Core:
    def __init__(self, cid: int, cfg: SimConfig, variant: Variant, link, llc_purge_port, oracle=None, log=None):
        self.id = cid
        self.cfg = cfg
        self.variant = variant
        self.link = link
        self.purge_port = llc_purge_port
        self.oracle = oracle
        self.log = log
        self.nonspec_variant = Flag.NONSPEC in variant.flags
        self.zero = bytes(cfg.line_bytes)
        self.page_lines = cfg.page_bytes // cfg.line_bytes
        self.stats = CoreStats()
        self.bitvector = bytearray(cfg.n_regions)
        self.trace: list = []
        self.pc = 0
        self.observables: list = []
        self.store_seq = 0
        self.stall_until = 0
        self.nonspec_until = 0
        self.draining = False
        self.now = 0
        self.reset_micro()

    # -- state ---------------------------------------------------------------
    def reset_micro(self):
        """Put every microarchitectural structure into its post-reset state."""
        cfg = self.cfg
        self.l1 = [[L1Line(self.zero) for _ in range(cfg.l1_ways)] for _ in range(cfg.l1_sets)]
        self.lines: dict[int, L1Line] = {}
        self.mshrs: dict[int, L1Mshr] = {}
        self.window: deque = deque()
        self.memq: deque = deque()
        self.tlb = Tlb(cfg)
        self.bp = bytearray(cfg.bp_table_entries)
        self.mode = NORMAL
        self.purge_start = 0
        self.purge_done_at = 0
        self.issue_block_until = 0
        self.port_used = -1

    def serialize_state(self) -> bytes:
        """Canonical bytes of the microarchitectural state, excluding observables, clock and trace position."""
        l1 = []
        for ways in self.l1:
            l1.append([[ln.tag, ln.state, ln.data.hex()] if ln.state != I else None for ln in ways])
        doc = {
            "l1": l1,
            "mshrs": sorted(self.mshrs),
            "window": len(self.window),
            "memq": len(self.memq),
            "tlb": self.tlb.state(),
            "bp": sha256(bytes(self.bp)).hexdigest(),
            "mode": self.mode,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    def set_trace(self, ops):
        self.trace = list(ops)
        self.pc = 0

    def set_bitvector(self, regions):
        self.bitvector = bytearray(self.cfg.n_regions)
        for r in regions:
            self.bitvector[r] = 1

    @property
    def nonspec(self) -> bool:
        return self.nonspec_variant or self.now < self.nonspec_until

    @property
    def drained(self) -> bool:
        return not self.window and not self.memq and not self.mshrs

    @property
    def done(self) -> bool:
        return self.pc >= len(self.trace) and self.drained and self.mode == NORMAL

    # -- per-cycle step --------------------------------------------------------
    def step(self, cycle: int):
        self.now = cycle
        if self.link.down.items:
            self._handle_incoming(cycle)
        if self.mode == PURGING:
            self._purge_step(cycle)
            return
        if self.mshrs:
            self._resend(cycle)
        self._retire(cycle)
        if self.memq:
            self._memory_stage(cycle)
        if cycle >= self.stall_until and not self.draining:
            self._issue(cycle)

    def _retire(self, cycle: int):
        window = self.window
        n = self.cfg.issue_width
        while n and window:
            rec = window[0]
            if rec.done_at is None or rec.done_at > cycle:
                break
            window.popleft()
            self.observables.append((rec.seq, rec.issue, rec.done_at, rec.value, rec.fault))
            if rec.done_at > self.stats.finish:
                self.stats.finish = rec.done_at
            n -= 1

    def _issue(self, cycle: int):
        cfg = self.cfg
        window = self.window
        trace = self.trace
        n = cfg.issue_width
        while n and self.pc < len(trace) and len(window) < cfg.issue_window and cycle >= self.issue_block_until:
            op = trace[self.pc]
            if op.kind == COMPUTE:
                rec = OpRecord(self.pc, op, cycle)
                rec.done_at = cycle + op.cycles
                self.issue_block_until = rec.done_at
                self.bp[hash_pick(len(self.bp), self.id, self.pc) if self.bp else 0] = 1
            else:
                if self.nonspec and window:
                    break
                rec = OpRecord(self.pc, op, cycle)
                rec.line = op.addr >> cfg.line_shift
                rec.word = op.addr & (cfg.line_bytes - 1) & ~7
                if not 0 <= rec.line < cfg.total_lines:
                    raise SimulationAbort(cycle, f"core{self.id}", f"address {op.addr:#x} outside DRAM")
                self.memq.append(rec)
                self.stats.memops += 1
            window.append(rec)
            self.pc += 1
            n -= 1
            if self.nonspec and op.kind != COMPUTE:
                break

    # -- memory pipeline -------------------------------------------------------
    def _memory_stage(self, cycle: int):
        rec = self.memq[0]
        if rec.ready_at > cycle:
            return
        if not rec.tlb_done:
            page = rec.line // self.page_lines
            if rec.walking:
                # page walk finished: validate against the current bitvector
                rec.walking = False
                if check_access(rec.line, self.bitvector, self.cfg) == FAULT:
                    self._fault(rec, cycle)
                    return
                self.tlb.insert(page)
                rec.tlb_done = True
            else:
                hit = self.tlb.lookup(page)
                if hit == 1:
                    rec.tlb_done = True
                elif hit == 2:
                    rec.tlb_done = True
                    rec.ready_at = cycle + self.cfg.l2_tlb_latency
                    return
                else:
                    self.tlb.walks += 1
                    rec.walking = True
                    rec.ready_at = cycle + self.cfg.page_walk_latency
                    return
        self._l1_access(rec, cycle)

    def _fault(self, rec: OpRecord, cycle: int):
        self.memq.popleft()
        rec.fault = True
        rec.done_at = cycle
        self.stats.faults += 1
        if self.log is not None and self.log.enabled:
            self.log.emit(cycle, f"core{self.id}", "fault", f"addr={rec.op.addr:#x}")

    def _l1_access(self, rec: OpRecord, cycle: int):
        a = rec.line
        pending = self.mshrs.get(a)
        if pending is not None:
            self.memq.popleft()
            pending.ops.append(rec)
            return
        want = M if rec.op.kind == STORE else S
        line = self.lines.get(a)
        if line is not None and line.state >= want:
            self.memq.popleft()
            self._perform(rec, line, cycle)
            rec.done_at = cycle + self.cfg.l1_hit_latency
            return
        if len(self.mshrs) >= self.cfg.l1_mshrs or not self.link.req.can_enqueue():
            return
        self.memq.popleft()
        m = L1Mshr(a, want)
        m.ops.append(rec)
        self.mshrs[a] = m
        self._send_upgrade(m, cycle)
        self.stats.l1_misses += 1

    def _send_upgrade(self, m: L1Mshr, cycle: int):
        self.link.req.enqueue(UpgradeReq(self.id, m.addr, m.want))
        m.sent = True
        self.stats.messages += 1
        if self.log is not None and self.log.enabled:
            self.log.emit(cycle, f"core{self.id}", "upgrade_req", f"addr={m.addr:#x} want={'ISM'[m.want]}")

    def _resend(self, cycle: int):
        for m in self.mshrs.values():
            if not m.sent:
                if not self.link.req.can_enqueue():
                    return
                self._send_upgrade(m, cycle)

    def _perform(self, rec: OpRecord, line: L1Line, cycle: int):
        w = rec.word
        if rec.op.kind == LOAD:
            rec.value = int.from_bytes(line.data[w:w + 8], "little")
            if self.oracle is not None:
                self.oracle.load(self.id, rec.line, w, rec.value, cycle)
        else:
            value = rec.op.value
            if value is None:
                value = ((self.id + 1) << 48) | (self.store_seq & ((1 << 48) - 1))
                self.store_seq += 1
            data = bytearray(line.data)
            data[w:w + 8] = value.to_bytes(8, "little")
            line.data = bytes(data)
            rec.value = value
            if self.oracle is not None:
                self.oracle.store(self.id, rec.line, w, value, cycle)

    # -- messages from the LLC ---------------------------------------------------
    def _handle_incoming(self, cycle: int):
        msg = self.link.down.items[0]
        if isinstance(msg, DowngradeReq):
            if not self.link.resp.can_enqueue():
                return
            self.link.down.dequeue()
            self._downgrade(msg, cycle)
        else:
            if not self._fill(msg, cycle):
                return
            self.link.down.dequeue()

    def _downgrade(self, msg, cycle: int):
        line = self.lines.get(msg.addr)
        data = None
        state = I
        if line is not None:
            if line.state == M:
                data = line.data
            if msg.state == I:
                self._drop(line)
            else:
                line.state = min(line.state, msg.state)
                state = line.state
        self.link.resp.enqueue(DowngradeResp(self.id, msg.addr, state, data, msg.tag))
        self.stats.messages += 1

    def _drop(self, line: L1Line):
        del self.lines[line.tag]
        line.tag = -1
        line.state = I
        line.data = self.zero

    def _fill(self, msg, cycle: int) -> bool:
        a = msg.addr
        m = self.mshrs.get(a)
        if m is None:
            raise SimulationAbort(cycle, f"core{self.id}", f"upgrade response for {a:#x} without an L1 MSHR")
        line = self.lines.get(a)
        if line is None:
            s = a % self.cfg.l1_sets
            ways = self.l1[s]
            line = None
            for ln in ways:
                if ln.state == I:
                    line = ln
                    break
            if line is None:
                victims = [ln for ln in ways if ln.tag not in self.mshrs]
                if not self.link.resp.can_enqueue():
                    return False
                line = victims[hash_pick(len(victims), self.cfg.seed, self.id, cycle, s)]
                self.link.resp.enqueue(
                    DowngradeResp(self.id, line.tag, I, line.data if line.state == M else None, None)
                )
                self.stats.messages += 1
                self.stats.l1_evictions += 1
                self._drop(line)
            line.tag = a
            self.lines[a] = line
        line.state = msg.state
        line.data = msg.data
        m.sent = False
        # serve queued ops in order until one needs more permission than the line has
        t = cycle
        served = 0
        for rec in m.ops:
            want = M if rec.op.kind == STORE else S
            if line.state < want:
                break
            self._perform(rec, line, cycle)
            rec.done_at = t if served == 0 else t + self.cfg.l1_hit_latency
            served += 1
        del m.ops[:served]
        if m.ops:
            m.want = M
            if self.link.req.can_enqueue():
                self._send_upgrade(m, cycle)
        else:
            del self.mshrs[a]
        return True

    # -- purge --------------------------------------------------------------------
    def purge(self, cycle: int) -> int:
        """Start flushing all private state; returns the stall duration."""
        if self.mode == PURGING:
            raise RuntimeError(f"core {self.id} is already purging")
        if not self.drained:
            raise RuntimeError(f"core {self.id} must be drained before a purge")
        d = purge_duration(self.cfg)
        self.mode = PURGING
        self.purge_start = cycle
        self.purge_done_at = cycle + d
        self._purge_slot = 0
        self._purge_l2 = 0
        self._purge_bp = 0
        if self.log is not None and self.log.enabled:
            self.log.emit(cycle, f"core{self.id}", "purge", f"until={self.purge_done_at}")
        self.stats.purges += 1
        self._purge_step(cycle)
        return d

    def _purge_step(self, cycle: int):
        cfg = self.cfg
        self.stats.purge_stalls += 1
        if cycle == self.purge_start:
            self.tlb.clear_l1()
        for _ in range(cfg.l1_flush_rate):
            slot = self._purge_slot
            if slot >= cfg.l1_lines:
                break
            line = self.l1[slot // cfg.l1_ways][slot % cfg.l1_ways]
            if line.state != I:
                self.purge_port.append((self.id, line.tag, line.data if line.state == M else None))
                self._drop(line)
            self._purge_slot += 1
        if self._purge_l2 < cfg.l2_tlb_sets:
            self.tlb.clear_l2_set(self._purge_l2)
            self._purge_l2 += 1
        if self._purge_bp < cfg.bp_table_entries:
            end = min(self._purge_bp + cfg.bp_flush_rate, cfg.bp_table_entries)
            self.bp[self._purge_bp:end] = bytes(end - self._purge_bp)
            self._purge_bp = end
        if cycle + 1 >= self.purge_done_at:
            self.mode = NORMAL
            self.issue_block_until = 0

    # -- monitor helpers -------------------------------------------------------------
    def invalidate_line(self, addr: int):
        """Functional back-invalidation used when the monitor scrubs a region."""
        line = self.lines.get(addr)
        if line is not None:
            self._drop(line)

    def shootdown(self):
        self.tlb.clear()
