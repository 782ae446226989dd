"""Synthetic trace generators used by the experiments and tests."""

from __future__ import annotations

from ..config import SimConfig, region_base
from ..engine import DetRng
from ..trace import COMPUTE, LOAD, STORE, TraceOp

ATTACKER_KINDS = ("idle", "streaming", "thrashing", "random")


def region_lines(cfg: SimConfig, region: int, count: int, start: int = 0) -> list[int]:
    base = region_base(region, cfg)
    if start + count > cfg.lines_per_region:
        raise ValueError(f"region {region} has only {cfg.lines_per_region} lines")
    return [base + start + i for i in range(count)]


def byte_addr(line: int, cfg: SimConfig, word: int = 0) -> int:
    return (line << cfg.line_shift) | (word * 8)


def random_trace(rng: DetRng, cfg: SimConfig, lines, n_ops: int, store_frac: float = 0.3,
                 compute_frac: float = 0.2, max_compute: int = 4) -> list[TraceOp]:
    """Loads and stores drawn uniformly from ``lines`` with occasional short compute gaps."""
    words = cfg.line_bytes // 8
    ops = []
    for _ in range(n_ops):
        r = rng.random()
        if r < compute_frac:
            ops.append(TraceOp(COMPUTE, cycles=1 + rng.below(max_compute)))
            continue
        line = lines[rng.below(len(lines))]
        addr = byte_addr(line, cfg, rng.below(words))
        ops.append(TraceOp(STORE if rng.random() < store_frac else LOAD, addr=addr))
    return ops


def streaming_trace(cfg: SimConfig, region: int, n_ops: int, stride_lines: int = 1) -> list[TraceOp]:
    """Sequential loads walking through a region, wrapping at its end."""
    base = region_base(region, cfg)
    span = cfg.lines_per_region
    return [TraceOp(LOAD, addr=byte_addr(base + (i * stride_lines) % span, cfg)) for i in range(n_ops)]


def thrashing_trace(cfg: SimConfig, region: int, n_ops: int, ways_over: int = 2, stores: bool = True) -> list[TraceOp]:
    """Cycle through more same-set lines than the LLC has ways, alternating loads and stores."""
    step = cfg.llc_sets
    count = cfg.llc_ways + ways_over
    lines = [region_base(region, cfg) + (i * step) % cfg.lines_per_region for i in range(count)]
    ops = []
    for i in range(n_ops):
        kind = STORE if stores and i % 2 else LOAD
        ops.append(TraceOp(kind, addr=byte_addr(lines[i % count], cfg)))
    return ops


def attacker_trace(kind: str, rng: DetRng, cfg: SimConfig, region: int, n_ops: int) -> list[TraceOp]:
    if kind == "idle":
        return []
    if kind == "streaming":
        return streaming_trace(cfg, region, n_ops)
    if kind == "thrashing":
        return thrashing_trace(cfg, region, n_ops)
    if kind == "random":
        lines = region_lines(cfg, region, min(cfg.lines_per_region, 4 * cfg.llc_sets))
        return random_trace(rng, cfg, lines, n_ops, store_frac=0.5, compute_frac=0.05, max_compute=2)
    raise ValueError(f"unknown attacker kind {kind!r}")


def parallel_misses(cfg: SimConfig, region: int, count: int = 8) -> list[TraceOp]:
    """``count`` independent loads to distinct lines in distinct pages of one TLB-warm page set."""
    base = region_base(region, cfg)
    return [TraceOp(LOAD, addr=byte_addr(base + i, cfg)) for i in range(count)]


def conflict_trace(cfg: SimConfig, region: int, n_lines: int, rounds: int, set_stride: int | None = None) -> list[TraceOp]:
    """Repeatedly load ``n_lines`` lines spaced ``set_stride`` lines apart."""
    stride = set_stride or cfg.llc_sets
    base = region_base(region, cfg)
    lines = [base + (i * stride) % cfg.lines_per_region for i in range(n_lines)]
    return [TraceOp(LOAD, addr=byte_addr(l, cfg)) for _ in range(rounds) for l in lines]
