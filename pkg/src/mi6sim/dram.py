"""Constant-latency DRAM controller with a hard in-flight cap."""

from __future__ import annotations

from collections import deque

from .protocol import DramReq


class Memory:
    """Sparse line-granular backing store; absent lines read as zeros."""

    def __init__(self, line_bytes: int):
        self.line_bytes = line_bytes
        self.zero = bytes(line_bytes)
        self.lines: dict[int, bytes] = {}

    def read(self, addr: int) -> bytes:
        return self.lines.get(addr, self.zero)

    def write(self, addr: int, data: bytes):
        if len(data) != self.line_bytes:
            raise ValueError("partial line write")
        if data == self.zero:
            self.lines.pop(addr, None)
        else:
            self.lines[addr] = bytes(data)

    def zero_range(self, first: int, count: int):
        end = first + count
        for a in [a for a in self.lines if first <= a < end]:
            del self.lines[a]


class Dram:
    """Requests occupy a slot for exactly ``latency`` cycles; only reads answer.

    Reads sample memory and writebacks update it at submission, so a read
    submitted after a writeback to the same line always sees the new data.
    A single response port delivers at most one read response per cycle in
    submission order.
    """

    def __init__(self, latency: int, max_inflight: int, memory: Memory, log=None):
        self.latency = latency
        self.max_inflight = max_inflight
        self.memory = memory
        self.log = log
        self.in_flight: deque[DramReq] = deque()
        self.ready: deque[DramReq] = deque()
        self.backpressure = 0
        self.reads = 0
        self.writes = 0
        self.max_seen = 0
        self._seq = 0

    def can_accept(self) -> bool:
        return len(self.in_flight) < self.max_inflight

    def submit(self, req: DramReq, cycle: int) -> bool:
        """True if accepted, False (and a backpressure count) when at capacity."""
        if len(self.in_flight) >= self.max_inflight:
            self.backpressure += 1
            if self.log is not None and self.log.enabled:
                self.log.emit(cycle, "dram", "backpressure", f"mshr={req.mshr}")
            return False
        req.submitted = cycle
        req.complete_at = cycle + self.latency
        req.seq = self._seq
        self._seq += 1
        if req.write:
            self.memory.write(req.addr, req.data)
            self.writes += 1
        else:
            req.data = self.memory.read(req.addr)
            self.reads += 1
        self.in_flight.append(req)
        if len(self.in_flight) > self.max_seen:
            self.max_seen = len(self.in_flight)
        if self.log is not None and self.log.enabled:
            self.log.emit(cycle, "dram", "write" if req.write else "read", f"addr={req.addr:#x} mshr={req.mshr}")
        return True

    def step(self, cycle: int) -> DramReq | None:
        """Retire requests due this cycle and return at most one read response."""
        q = self.in_flight
        while q and q[0].complete_at <= cycle:
            r = q.popleft()
            if not r.write:
                self.ready.append(r)
        if self.ready:
            r = self.ready.popleft()
            if self.log is not None and self.log.enabled:
                self.log.emit(cycle, "dram", "response", f"addr={r.addr:#x} mshr={r.mshr}")
            return r
        return None

    @property
    def idle(self) -> bool:
        return not self.in_flight and not self.ready
