"""Directory-based MSI last-level cache.

The same class models both shapes of the LLC:

* insecure: a two-level priority mux in front of the cache-access pipeline
  (message type first, then lowest core id), one shared MSHR pool, one UQ,
  one Downgrade-L1 scanner and a DQ whose replacement heads hold the dequeue
  port for two cycles (writeback, then read);
* isolating: per-core merge plus a round-robin arbiter that only admits core
  ``cycle % n_cores``, per-core MSHR slices, per-core UQs, one scanner per
  slice, and a DQ retry bit so every dequeue takes exactly one cycle.

Each mechanism is switched independently by a ``Flag``.

Pipeline order inside one LLC step: purge-port notifications, pipeline exit,
DQ drain, downgrade scan, UQ drain, arbitration. Anything enqueued in a step
becomes visible the next cycle.
"""

from __future__ import annotations

from collections import deque

from .config import Flag, SimConfig, Variant, dram_region, llc_index, mshr_budget
from .engine import SimulationAbort, hash_pick
from .protocol import I, M, S, DowngradeReq, DramReq, UpgradeResp

# message kinds in intra-core priority order
DRAM_RESP, DOWN_RESP, RETRY, UPGRADE_REQ = 0, 1, 2, 3
KIND_NAMES = ("dram_resp", "downgrade_resp", "retry", "upgrade_req")

# MSHR phases
FREE = "free"
PIPE = "pipe"
CONFLICT = "conflict"
WAIT_DG = "wait_downgrade"
WAIT_REPL = "wait_replace"
IN_DQ = "dq"
RETRY_WAIT = "retry"
WAIT_DRAM = "wait_dram"
DRAM_READY = "dram_ready"
IN_UQ = "uq"


def merge_per_core(dram_resp=None, down_resp=None, retry=None, upgrade_req=None):
    """Pick one message for a core: DRAM response > downgrade response > retry > upgrade request."""
    for kind, msg in ((DRAM_RESP, dram_resp), (DOWN_RESP, down_resp), (RETRY, retry), (UPGRADE_REQ, upgrade_req)):
        if msg is not None:
            return kind, msg
    return None


def arbiter_select(cycle: int, pending, round_robin: bool):
    """Choose which core's message enters the pipeline this cycle.

    ``pending[c]`` maps message kind to message for core ``c`` (missing or
    empty when the core has nothing). Returns ``(core, kind, msg)`` or None.

    Round robin grants core ``cycle % n`` only, and nobody if that core is
    idle. Otherwise the lowest (kind, core) pair wins.
    """
    n = len(pending)
    if round_robin:
        c = cycle % n
        cands = pending[c]
        if not cands:
            return None
        kind = min(cands)
        return c, kind, cands[kind]
    best = None
    for c in range(n):
        cands = pending[c]
        if cands:
            kind = min(cands)
            if best is None or kind < best[1]:
                best = (c, kind, cands[kind])
    return best


class DirectoryLine:
    __slots__ = ("set", "way", "tag", "valid", "dirty", "data", "states", "locked_by")

    def __init__(self, set_index: int, way: int, n_cores: int, zero: bytes):
        self.set = set_index
        self.way = way
        self.tag = -1
        self.valid = False
        self.dirty = False
        self.data = zero
        self.states = [I] * n_cores
        self.locked_by = None


class Mshr:
    __slots__ = (
        "index", "owner", "addr", "want", "phase", "gen", "pending", "to_send", "dg_addr",
        "retry", "data", "needs_writeback", "wb_data", "wb_sent", "set", "way", "victim", "ready_at",
    )

    def __init__(self, index: int):
        self.index = index
        self.gen = 0
        self.reset()

    def reset(self):
        self.owner = -1
        self.addr = -1
        self.want = I
        self.phase = FREE
        self.pending = {}
        self.to_send = []
        self.dg_addr = -1
        self.retry = False
        self.data = None
        self.needs_writeback = False
        self.wb_data = None
        self.wb_sent = False
        self.set = -1
        self.way = -1
        self.victim = -1
        self.ready_at = 0


class LlcStats:
    def __init__(self, n: int):
        self.llc_misses = [0] * n
        self.mshr_stall_cycles = [0] * n
        self.arbiter_wait_cycles = [0] * n
        self.arbiter_idle_grants = 0
        self.dq_retries = [0] * n
        self.grants = 0
        self.dq_max = 0


class Llc:
    def __init__(self, cfg: SimConfig, variant: Variant, kernel, links, dram, check: bool = True):
        self.cfg = cfg
        self.variant = variant
        self.kernel = kernel
        self.log = kernel.log
        self.links = links
        self.dram = dram
        self.check = check
        self.n = n = cfg.n_cores
        flags = variant.flags
        self.rr = Flag.RR_ARBITER in flags
        self.split_uq = Flag.SPLIT_UQ in flags
        self.dup = Flag.DUP_DOWNGRADE in flags
        self.dq_retry = Flag.DQ_RETRY in flags
        self.partition = Flag.MSHR_PARTITION in flags
        self.miss = Flag.MISS in flags
        self.part = Flag.PART in flags
        self.latency = cfg.llc_pipeline_latency + (cfg.arb_extra_latency if Flag.ARB in flags else 0)
        self.seed = cfg.seed

        if self.miss:
            self.n_mshrs = mshr_budget(cfg.dram_max_inflight, 1)[0]
            self.bank_size = self.n_mshrs // cfg.miss_banks
        else:
            self.n_mshrs = cfg.llc_mshrs_total
            self.bank_size = 0
        self.slice = self.n_mshrs // n if self.partition else 0
        self.mshrs = [Mshr(i) for i in range(self.n_mshrs)]

        # index function parameters
        self._set_mask = cfg.llc_sets - 1
        k = cfg.part_region_bits
        self._low_bits = cfg.llc_index_bits - k
        self._low_mask = (1 << self._low_bits) - 1
        self._kmask = (1 << k) - 1
        self._lpr = cfg.lines_per_region

        zero = bytes(cfg.line_bytes)
        self.zero = zero
        self.sets = [[DirectoryLine(s, w, n, zero) for w in range(cfg.llc_ways)] for s in range(cfg.llc_sets)]
        self.resident: dict[int, DirectoryLine] = {}
        self.holder: dict[int, int] = {}

        if self.split_uq:
            depth = self.slice if self.partition else self.n_mshrs
            self.uqs = [kernel.fifo(f"llc.uq{c}", depth) for c in range(n)]
            self.uq = None
        else:
            self.uqs = None
            self.uq = kernel.fifo("llc.uq", self.n_mshrs)
        self.dq = kernel.fifo("llc.dq", self.n_mshrs)
        self.pipe: deque = deque()
        self.purge_port: list = []
        self.link_used = [-1] * n
        self.dram_ready = [[] for _ in range(n)]
        self.retry_ready = [[] for _ in range(n)]
        self.conflicts = [[] for _ in range(n)]
        self.n_to_send = 0
        self.stats = LlcStats(n)
        sized = self.n_mshrs <= cfg.dram_max_inflight // 2
        self.dq_bound = 2 if (self.dq_retry and variant.strong and sized) else None
        self.back_invalidate = None

    # -- address helpers ---------------------------------------------------
    def index(self, addr: int) -> int:
        if self.part:
            return (((addr // self._lpr) & self._kmask) << self._low_bits) | (addr & self._low_mask)
        return addr & self._set_mask

    # -- per-cycle step ----------------------------------------------------
    def step(self, cycle: int):
        if self.purge_port:
            self._apply_purge_notifications(cycle)
        pipe = self.pipe
        if pipe and pipe[0][0] <= cycle:
            _, kind, payload = pipe.popleft()
            self._exit(kind, payload, cycle)
        if self.dq.items:
            self._dq_drain(cycle)
        if self.n_to_send:
            self._downgrade_scan(cycle)
        self._uq_drain(cycle)
        self._arbitrate(cycle)
        if self.dq_bound is not None and self.dq.occupancy > self.dq_bound:
            raise SimulationAbort(cycle, "llc", f"DQ occupancy {self.dq.occupancy} exceeds {self.dq_bound}")

    @property
    def idle(self) -> bool:
        return not self.pipe and all(m.phase == FREE for m in self.mshrs)

    # -- arbitration ---------------------------------------------------------
    def allocatable(self, core: int, addr: int):
        """Free MSHR index for an upgrade request from ``core``, or None (stall)."""
        mshrs = self.mshrs
        if self.miss:
            bank = self.index(addr) % self.cfg.miss_banks
            lo = bank * self.bank_size
            hi = lo + self.bank_size
        elif self.partition:
            lo = core * self.slice
            hi = lo + self.slice
        else:
            lo, hi = 0, self.n_mshrs
        for i in range(lo, hi):
            if mshrs[i].phase is FREE:
                return i
        return None

    def _retry_candidate(self, c: int):
        best = None
        for m in self.retry_ready[c]:
            if best is None or m.index < best.index:
                best = m
        for m in self.conflicts[c]:
            if (best is None or m.index < best.index) and self._conflict_resolved(m):
                best = m
        return best

    def _dram_candidate(self, c: int, cycle: int):
        best = None
        for m in self.dram_ready[c]:
            if m.ready_at <= cycle and (best is None or m.index < best.index):
                best = m
        return best

    def _candidates(self, c: int, cycle: int, with_req: bool = True) -> dict:
        cands = {}
        m = self._dram_candidate(c, cycle) if self.dram_ready[c] else None
        if m is not None:
            cands[DRAM_RESP] = m
        link = self.links[c]
        if link.resp.items:
            cands[DOWN_RESP] = link.resp.items[0]
        if self.retry_ready[c] or self.conflicts[c]:
            m = self._retry_candidate(c)
            if m is not None:
                cands[RETRY] = m
        if with_req and link.req.items:
            req = link.req.items[0]
            if self.allocatable(c, req.addr) is not None:
                cands[UPGRADE_REQ] = req
            else:
                self.stats.mshr_stall_cycles[c] += 1
        return cands

    def _has_work(self, c: int) -> bool:
        link = self.links[c]
        return bool(link.req.items or link.resp.items or self.dram_ready[c] or self.retry_ready[c])

    def _arbitrate(self, cycle: int):
        n = self.n
        stats = self.stats
        if self.rr:
            c = cycle % n
            cands = self._candidates(c, cycle)
            granted = None
            if cands:
                kind = min(cands)
                self._grant(c, kind, cands[kind], cycle)
                granted = c
            waiting = False
            for o in range(n):
                if o != granted and self._has_work(o):
                    stats.arbiter_wait_cycles[o] += 1
                    waiting = True
            if granted is None and waiting:
                stats.arbiter_idle_grants += 1
            return

        pending = []
        for c in range(n):
            pending.append(self._candidates(c, cycle, with_req=False))
        # upgrade requests: lowest core id with a visible request that can get an MSHR
        for c in range(n):
            link = self.links[c]
            if not link.req.items:
                continue
            req = link.req.items[0]
            if self.allocatable(c, req.addr) is not None:
                pending[c][UPGRADE_REQ] = req
                break
            self.stats.mshr_stall_cycles[c] += 1
            if self.miss:
                # one overwhelmed bank stalls the whole MSHR structure
                break
        choice = arbiter_select(cycle, pending, False)
        if choice is not None:
            self._grant(choice[0], choice[1], choice[2], cycle)
        for o in range(n):
            if (choice is None or o != choice[0]) and self._has_work(o):
                stats.arbiter_wait_cycles[o] += 1

    def _grant(self, c: int, kind: int, msg, cycle: int):
        self.stats.grants += 1
        exit_at = cycle + self.latency
        if kind == UPGRADE_REQ:
            link = self.links[c]
            req = link.req.dequeue()
            idx = self.allocatable(c, req.addr)
            m = self.mshrs[idx]
            if self.partition and not (c * self.slice <= idx < (c + 1) * self.slice):
                raise SimulationAbort(cycle, "llc", f"MSHR {idx} outside core {c}'s slice")
            m.owner = c
            m.addr = req.addr
            m.want = req.want
            m.phase = PIPE
            self.pipe.append((exit_at, UPGRADE_REQ, m))
            if self.log.enabled:
                self.log.emit(cycle, "llc", "mshr_alloc", f"core={c} mshr={idx} addr={req.addr:#x}")
        elif kind == DOWN_RESP:
            self.links[c].resp.dequeue()
            self.pipe.append((exit_at, DOWN_RESP, msg))
        elif kind == DRAM_RESP:
            self.dram_ready[c].remove(msg)
            msg.phase = PIPE
            self.pipe.append((exit_at, DRAM_RESP, msg))
        else:
            if msg.phase is CONFLICT:
                self.conflicts[c].remove(msg)
            else:
                self.retry_ready[c].remove(msg)
            msg.phase = PIPE
            self.pipe.append((exit_at, RETRY, msg))
        if self.log.enabled:
            self.log.emit(cycle, "llc", "grant", f"core={c} kind={KIND_NAMES[kind]}")

    # -- pipeline exit -------------------------------------------------------
    def _exit(self, kind: int, payload, cycle: int):
        if kind == DOWN_RESP:
            self._process_resp(payload, cycle)
        elif kind == DRAM_RESP:
            self._install(payload, cycle)
        elif kind == RETRY and payload.retry:
            m = payload
            if m.addr in self.resident:
                raise SimulationAbort(cycle, "llc", f"retry for {m.addr:#x} found the line resident")
            m.retry = False
            m.needs_writeback = False
            self._enqueue_dq(m, cycle)
        else:
            self._process_req(payload, cycle)

    def _conflict_resolved(self, m: Mshr) -> bool:
        h = self.holder.get(m.addr)
        if h is not None and h != m.index:
            return False
        if m.addr in self.resident:
            return True
        return self._has_way(self.index(m.addr))

    def _has_way(self, s: int) -> bool:
        holder = self.holder
        for line in self.sets[s]:
            if line.locked_by is None and (not line.valid or line.tag not in holder):
                return True
        return False

    def _pick_way(self, s: int, cycle: int):
        holder = self.holder
        victims = []
        for line in self.sets[s]:
            if line.locked_by is not None:
                continue
            if not line.valid:
                return line
            if line.tag not in holder:
                victims.append(line)
        if not victims:
            return None
        return victims[hash_pick(len(victims), self.seed, cycle, s)]

    def _wait_conflict(self, m: Mshr):
        m.phase = CONFLICT
        self.conflicts[m.owner].append(m)

    def _process_req(self, m: Mshr, cycle: int):
        a = m.addr
        h = self.holder.get(a)
        if h is not None and h != m.index:
            self._wait_conflict(m)
            return
        line = self.resident.get(a)
        if line is not None:
            need = {}
            owner = m.owner
            for o, st in enumerate(line.states):
                if o == owner or st == I:
                    continue
                if m.want == M:
                    need[o] = I
                elif st == M:
                    need[o] = S
            self.holder[a] = m.index
            if need:
                self._start_downgrades(m, a, need, WAIT_DG, cycle)
            else:
                self._respond(m, line, cycle)
            return
        s = self.index(a)
        slot = self._pick_way(s, cycle)
        if slot is None:
            self._wait_conflict(m)
            return
        self.stats.llc_misses[m.owner] += 1
        self.holder[a] = m.index
        slot.locked_by = m.index
        m.set = s
        m.way = slot.way
        if not slot.valid:
            m.needs_writeback = False
            self._enqueue_dq(m, cycle)
            return
        v = slot.tag
        self.holder[v] = m.index
        m.victim = v
        need = {o: I for o, st in enumerate(slot.states) if st != I}
        if need:
            self._start_downgrades(m, v, need, WAIT_REPL, cycle)
        else:
            self._finish_replacement(m, cycle)

    def _start_downgrades(self, m: Mshr, addr: int, need: dict, phase: str, cycle: int):
        m.gen += 1
        m.pending = need
        m.to_send = sorted(need)
        m.dg_addr = addr
        m.phase = phase
        self.n_to_send += 1

    def _respond(self, m: Mshr, line: DirectoryLine, cycle: int):
        owner = m.owner
        line.states[owner] = m.want
        if self.check and m.want == M:
            for o, st in enumerate(line.states):
                if o != owner and st != I:
                    raise SimulationAbort(cycle, "llc", f"granting M on {m.addr:#x} while core {o} holds state {st}")
        m.data = line.data
        m.phase = IN_UQ
        if self.uqs is not None:
            self.uqs[owner].enqueue(m)
        else:
            self.uq.enqueue(m)
        if self.log.enabled:
            self.log.emit(cycle, "llc", "uq_enq", f"mshr={m.index} core={owner}")

    def _finish_replacement(self, m: Mshr, cycle: int):
        slot = self.sets[m.set][m.way]
        m.needs_writeback = slot.dirty
        m.wb_data = slot.data if slot.dirty else None
        del self.resident[slot.tag]
        if self.holder.get(slot.tag) == m.index:
            del self.holder[slot.tag]
        slot.tag = -1
        slot.valid = False
        slot.dirty = False
        slot.data = self.zero
        slot.states = [I] * self.n
        self._enqueue_dq(m, cycle)

    def _enqueue_dq(self, m: Mshr, cycle: int):
        m.phase = IN_DQ
        m.wb_sent = False
        m.retry = self.dq_retry and m.needs_writeback
        self.dq.enqueue(m)
        if self.log.enabled:
            self.log.emit(cycle, "llc", "dq_enq", f"mshr={m.index} wb={int(m.needs_writeback)}")

    def _install(self, m: Mshr, cycle: int):
        slot = self.sets[m.set][m.way]
        if slot.locked_by != m.index:
            raise SimulationAbort(cycle, "llc", f"DRAM fill for MSHR {m.index} into a slot it does not own")
        slot.tag = m.addr
        slot.valid = True
        slot.dirty = False
        slot.data = m.data
        slot.states = [I] * self.n
        slot.locked_by = None
        self.resident[m.addr] = slot
        self._respond(m, slot, cycle)

    def _process_resp(self, msg, cycle: int):
        c = msg.core
        a = msg.addr
        if msg.tag is not None:
            idx, gen = msg.tag
            m = self.mshrs[idx]
            if m.gen != gen or c not in m.pending or m.dg_addr != a:
                # already satisfied by an eviction that overtook the request
                return
        line = self.resident.get(a)
        if line is None:
            raise SimulationAbort(cycle, "llc", f"downgrade response from core {c} for absent line {a:#x}")
        if msg.data is not None:
            line.data = msg.data
            line.dirty = True
        # a purge notification may already have taken the state lower than the response reports
        if msg.state < line.states[c]:
            line.states[c] = msg.state
        self._downgrade_done(c, a, line.states[c], cycle)

    def _downgrade_done(self, c: int, a: int, state: int, cycle: int):
        h = self.holder.get(a)
        if h is None:
            return
        m = self.mshrs[h]
        if m.dg_addr != a or c not in m.pending or state > m.pending[c]:
            return
        del m.pending[c]
        if c in m.to_send:
            m.to_send.remove(c)
            if not m.to_send:
                self.n_to_send -= 1
        if m.pending:
            return
        if m.phase == WAIT_DG:
            self._respond(m, self.resident[a], cycle)
        elif m.phase == WAIT_REPL:
            self._finish_replacement(m, cycle)

    def _apply_purge_notifications(self, cycle: int):
        # dedicated one-line-per-cycle invalidation port used by purge; it only updates the directory
        for c, a, data in self.purge_port:
            line = self.resident.get(a)
            if line is None:
                raise SimulationAbort(cycle, "llc", f"purge notification for absent line {a:#x}")
            if data is not None:
                line.data = data
                line.dirty = True
            line.states[c] = I
        self.purge_port.clear()

    # -- queues toward L1s and DRAM -------------------------------------------
    def _link_free(self, c: int, cycle: int) -> bool:
        return self.link_used[c] != cycle and self.links[c].down.can_enqueue()

    def _send_downgrade(self, m: Mshr, cycle: int) -> bool:
        target = m.to_send[0]
        if not self._link_free(target, cycle):
            return False
        self.links[target].down.enqueue(DowngradeReq(m.dg_addr, m.pending[target], (m.index, m.gen)))
        self.link_used[target] = cycle
        m.to_send.pop(0)
        if not m.to_send:
            self.n_to_send -= 1
        if self.log.enabled:
            self.log.emit(cycle, "llc", "downgrade_req", f"mshr={m.index} core={target} addr={m.dg_addr:#x}")
        return True

    def _downgrade_scan(self, cycle: int):
        if self.dup:
            firsts = {}
            for m in self.mshrs:
                if m.to_send and m.owner not in firsts:
                    firsts[m.owner] = m
            for owner in sorted(firsts):
                self._send_downgrade(firsts[owner], cycle)
        else:
            for m in self.mshrs:
                if m.to_send:
                    self._send_downgrade(m, cycle)
                    return

    def _send_response(self, m: Mshr, cycle: int):
        c = m.owner
        self.links[c].down.enqueue(UpgradeResp(m.addr, m.want, m.data))
        self.link_used[c] = cycle
        if self.holder.get(m.addr) == m.index:
            del self.holder[m.addr]
        if self.log.enabled:
            self.log.emit(cycle, "llc", "mshr_free", f"mshr={m.index} core={c}")
        m.reset()

    def _uq_drain(self, cycle: int):
        if self.uqs is not None:
            for c, uq in enumerate(self.uqs):
                if uq.items and self._link_free(c, cycle):
                    self._send_response(uq.dequeue(), cycle)
        elif self.uq.items:
            m = self.uq.items[0]
            if self._link_free(m.owner, cycle):
                self._send_response(self.uq.dequeue(), cycle)

    def _dq_drain(self, cycle: int):
        m = self.dq.items[0]
        if m.needs_writeback and not m.wb_sent:
            victim_addr = m.victim
            if not self.dram.submit(DramReq(True, victim_addr, m.index, m.wb_data), cycle):
                return
            if self.dq_retry:
                self.dq.dequeue()
                m.needs_writeback = False
                m.wb_data = None
                m.phase = RETRY_WAIT
                self.retry_ready[m.owner].append(m)
                self.stats.dq_retries[m.owner] += 1
            else:
                m.wb_sent = True
            return
        if not self.dram.submit(DramReq(False, m.addr, m.index), cycle):
            return
        self.dq.dequeue()
        m.phase = WAIT_DRAM
        if self.log.enabled:
            self.log.emit(cycle, "llc", "dq_deq", f"mshr={m.index}")

    def accept_dram(self, resp: DramReq, cycle: int):
        """Buffer a DRAM read response in its MSHR; it competes for the pipeline from the next cycle."""
        m = self.mshrs[resp.mshr]
        if m.phase != WAIT_DRAM:
            raise SimulationAbort(cycle, "llc", f"DRAM response for MSHR {m.index} in phase {m.phase}")
        m.data = resp.data
        m.phase = DRAM_READY
        m.ready_at = cycle + 1
        self.dram_ready[m.owner].append(m)

    # -- monitor-facing --------------------------------------------------------
    def region_sets(self, region: int) -> range:
        if self.part and self._kmask + 1 >= self.cfg.n_regions:
            lo = (region & self._kmask) << self._low_bits
            return range(lo, lo + (1 << self._low_bits))
        return range(self.cfg.llc_sets)

    def region_busy(self, region: int) -> bool:
        for m in self.mshrs:
            if m.phase is FREE:
                continue
            for a in (m.addr, m.victim):
                if a >= 0 and dram_region(a, self.cfg) == region:
                    return True
        return False

    def scrub_sets(self, region: int) -> int:
        """Invalidate and zero every LLC line of ``region``; returns the number invalidated."""
        if self.region_busy(region):
            raise ValueError(f"region {region} is referenced by a live MSHR")
        count = 0
        for s in self.region_sets(region):
            for line in self.sets[s]:
                if line.valid and line.tag // self._lpr == region:
                    holders = [c for c, st in enumerate(line.states) if st != I]
                    if holders and self.back_invalidate is not None:
                        self.back_invalidate(line.tag, holders)
                    del self.resident[line.tag]
                    line.tag = -1
                    line.valid = False
                    line.dirty = False
                    line.data = self.zero
                    line.states = [I] * self.n
                    count += 1
        return count

    def read_line(self, addr: int):
        line = self.resident.get(addr)
        return None if line is None else line

    def check_part_isolation(self) -> bool:
        """True when no set holds lines from two regions of different colour.

        The colour is the low ``part_region_bits`` of the region id; when there
        are no more regions than colours this means no set ever mixes regions.
        """
        for ways in self.sets:
            colours = {(line.tag // self._lpr) & self._kmask for line in ways if line.valid}
            if len(colours) > 1:
                return False
        return True

    def max_m_holders(self) -> int:
        worst = 0
        for line in self.resident.values():
            worst = max(worst, sum(1 for st in line.states if st == M))
        return worst
