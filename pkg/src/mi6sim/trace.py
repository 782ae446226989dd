"""Trace format: one op per line.

    C <decimal>      compute for that many cycles
    L 0x<hex>        load the 8-byte word at a byte physical address
    S 0x<hex> [0x<value>]   store; the value defaults to a per-core counter

``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

LOAD, STORE, COMPUTE = "L", "S", "C"


class TraceError(ValueError):
    def __init__(self, line: int, column: int, message: str, source: str = "<trace>"):
        self.line = line
        self.column = column
        super().__init__(f"{source}:{line}:{column}: {message}")


@dataclass(frozen=True, slots=True)
class TraceOp:
    kind: str
    addr: int = 0
    cycles: int = 0
    value: int | None = None

    def __post_init__(self):
        if self.kind not in (LOAD, STORE, COMPUTE):
            raise ValueError(f"unknown trace op kind {self.kind!r}")
        if self.kind == COMPUTE and self.cycles < 1:
            raise ValueError("compute cycles must be >= 1")

    @property
    def is_mem(self) -> bool:
        return self.kind != COMPUTE

    def __str__(self):
        if self.kind == COMPUTE:
            return f"C {self.cycles}"
        if self.value is not None:
            return f"{self.kind} {self.addr:#x} {self.value:#x}"
        return f"{self.kind} {self.addr:#x}"


def load(addr: int) -> TraceOp:
    return TraceOp(LOAD, addr=addr)


def store(addr: int, value: int | None = None) -> TraceOp:
    return TraceOp(STORE, addr=addr, value=value)


def compute(cycles: int) -> TraceOp:
    if cycles < 1:
        raise ValueError("compute cycles must be >= 1")
    return TraceOp(COMPUTE, cycles=cycles)


def _hex(token: str, lineno: int, col: int, source: str) -> int:
    if not token.lower().startswith("0x"):
        raise TraceError(lineno, col, f"expected 0x-prefixed hex, got {token!r}", source)
    try:
        return int(token[2:], 16)
    except ValueError:
        raise TraceError(lineno, col, f"non-hex address {token!r}", source) from None


def parse_trace(text: str, source: str = "<trace>", dram_bytes: int | None = None) -> list[TraceOp]:
    """Parse trace text; with ``dram_bytes`` set, addresses past the end of DRAM are errors."""
    ops = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        tokens = line.split()
        col = line.index(tokens[0]) + 1
        kind = tokens[0].upper()
        if kind == COMPUTE:
            if len(tokens) != 2:
                raise TraceError(lineno, col, "expected 'C <cycles>'", source)
            try:
                cycles = int(tokens[1], 10)
            except ValueError:
                raise TraceError(lineno, line.index(tokens[1]) + 1, f"bad cycle count {tokens[1]!r}", source) from None
            if cycles < 1:
                raise TraceError(lineno, line.index(tokens[1]) + 1, "compute cycles must be >= 1", source)
            ops.append(TraceOp(COMPUTE, cycles=cycles))
        elif kind in (LOAD, STORE):
            if len(tokens) < 2 or len(tokens) > (3 if kind == STORE else 2):
                raise TraceError(lineno, col, f"expected '{kind} 0x<addr>'", source)
            addr = _hex(tokens[1], lineno, line.index(tokens[1]) + 1, source)
            if dram_bytes is not None and addr + 8 > dram_bytes:
                raise TraceError(lineno, line.index(tokens[1]) + 1,
                                 f"address {addr:#x} outside DRAM ({dram_bytes:#x} bytes)", source)
            value = None
            if len(tokens) == 3:
                value = _hex(tokens[2], lineno, line.rindex(tokens[2]) + 1, source)
                if value >> 64:
                    raise TraceError(lineno, line.rindex(tokens[2]) + 1, "store value wider than 64 bits", source)
            ops.append(TraceOp(kind, addr=addr, value=value))
        else:
            raise TraceError(lineno, col, f"unknown op {tokens[0]!r}", source)
    return ops


def load_trace(path, dram_bytes: int | None = None) -> list[TraceOp]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise TraceError(0, 0, f"cannot read trace: {e.strerror}", str(p)) from None
    return parse_trace(text, source=str(p), dram_bytes=dram_bytes)


def format_trace(ops, header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend(str(op) for op in ops)
    return "\n".join(lines) + "\n"
