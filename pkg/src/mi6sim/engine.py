"""Deterministic discrete-time kernel.

Everything that can influence timing is driven from here: one global cycle
counter, registered FIFOs whose enqueues only become visible after the end
of the cycle, and a SplitMix64-based generator whose output is a pure function
of its seed.
"""

from __future__ import annotations

from collections import deque

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class SimulationAbort(RuntimeError):
    """An internal invariant broke; carries the cycle and the component at fault."""

    def __init__(self, cycle: int, component: str, message: str):
        self.cycle = cycle
        self.component = component
        super().__init__(f"cycle {cycle}: {component}: {message}")


class FifoError(RuntimeError):
    pass


def mix64(z: int) -> int:
    """SplitMix64 finaliser."""
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash_pick(n: int, *keys: int) -> int:
    """Stateless draw in ``[0, n)`` keyed by ``keys``.

    Replacement policies use this with (seed, cycle, set) keys so a pick never
    depends on how many draws other sets or other cores made before it.
    """
    h = 0
    for k in keys:
        h = mix64(h ^ (k & MASK64))
    return h % n


class DetRng:
    """Splittable SplitMix64 stream.

    ``next_u64`` advances the state by the golden gamma and returns the mixed
    state. ``split(label)`` derives an independent child stream from the
    current state and a label without advancing the parent, so adding a new
    consumer never perturbs existing streams.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.state = self.seed

    def next_u64(self) -> int:
        z = self.state
        self.state = (z + GOLDEN) & MASK64
        return mix64(z)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def split(self, label: int | str) -> "DetRng":
        if isinstance(label, str):
            h = 0
            for b in label.encode("utf-8"):
                h = mix64(h ^ b)
            label = h
        return DetRng(mix64(self.state ^ mix64(label & MASK64)))


class Clock:
    __slots__ = ("cycle",)

    def __init__(self):
        self.cycle = 0

    def tick(self):
        self.cycle += 1


class EventLog:
    """Optional ``cycle,component,event,detail`` rows."""

    def __init__(self, enabled: bool = False):
        self.enabled = enabled
        self.rows: list[str] = []

    def emit(self, cycle: int, component: str, event: str, detail: str = ""):
        if self.enabled:
            self.rows.append(f"{cycle},{component},{event},{detail}")

    def text(self) -> str:
        return "".join(r + "\n" for r in self.rows)


class Kernel:
    """Clock plus the set of FIFOs that need committing at the end of a tick."""

    def __init__(self, log: EventLog | None = None):
        self.clock = Clock()
        self.log = log or EventLog(False)
        self._dirty: list[Fifo] = []

    @property
    def cycle(self) -> int:
        return self.clock.cycle

    def fifo(self, name: str, capacity: int) -> "Fifo":
        return Fifo(name, capacity, self)

    def commit(self):
        dirty = self._dirty
        if dirty:
            self._dirty = []
            for f in dirty:
                f.commit()

    def advance(self):
        self.commit()
        self.clock.tick()


class Fifo:
    """Bounded FIFO with registered semantics.

    Items enqueued during a cycle sit in a pending buffer and are only visible
    to ``peek``/``dequeue`` after ``commit`` (run by the kernel at the end of
    the tick). Capacity is checked on the post-commit length, so a dequeue
    and an enqueue in the same cycle are legal on a full FIFO.
    """

    __slots__ = ("name", "capacity", "items", "pending", "_kernel", "max_seen")

    def __init__(self, name: str, capacity: int, kernel: Kernel | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.name = name
        self.capacity = capacity
        self.items: deque = deque()
        self.pending: list = []
        self._kernel = kernel
        self.max_seen = 0

    def __len__(self) -> int:
        return len(self.items)

    @property
    def occupancy(self) -> int:
        return len(self.items) + len(self.pending)

    def full(self) -> bool:
        return len(self.items) + len(self.pending) >= self.capacity

    def can_enqueue(self) -> bool:
        return len(self.items) + len(self.pending) < self.capacity

    def enqueue(self, item):
        if not self.pending and self._kernel is not None:
            self._kernel._dirty.append(self)
        self.pending.append(item)

    def peek(self):
        if not self.items:
            raise FifoError(f"{self.name}: peek on empty fifo")
        return self.items[0]

    def head(self):
        """Visible head or None."""
        return self.items[0] if self.items else None

    def dequeue(self):
        if not self.items:
            raise FifoError(f"{self.name}: dequeue on empty fifo")
        return self.items.popleft()

    def commit(self):
        if self.pending:
            self.items.extend(self.pending)
            self.pending.clear()
        n = len(self.items)
        if n > self.capacity:
            raise FifoError(f"{self.name}: {n} entries exceed capacity {self.capacity}")
        if n > self.max_seen:
            self.max_seen = n

    def clear(self):
        self.items.clear()
        self.pending.clear()

    def snapshot(self) -> list:
        return list(self.items) + list(self.pending)
