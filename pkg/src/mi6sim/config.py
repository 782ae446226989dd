"""Machine geometry, variant toggles and the address arithmetic shared by every module."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Raised for malformed config files or configurations that fail validation."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class Flag(enum.Enum):
    FLUSH = "FLUSH"
    PART = "PART"
    MISS = "MISS"
    ARB = "ARB"
    NONSPEC = "NONSPEC"
    MSHR_PARTITION = "MSHR_PARTITION"
    SPLIT_UQ = "SPLIT_UQ"
    DUP_DOWNGRADE = "DUP_DOWNGRADE"
    DQ_RETRY = "DQ_RETRY"
    RR_ARBITER = "RR_ARBITER"


# Flags that together give strong timing independence in the LLC.
STRONG_FLAGS = frozenset(
    {Flag.PART, Flag.MSHR_PARTITION, Flag.RR_ARBITER, Flag.SPLIT_UQ, Flag.DUP_DOWNGRADE, Flag.DQ_RETRY}
)

PRESETS = {
    "base": frozenset(),
    "flush": frozenset({Flag.FLUSH}),
    "part": frozenset({Flag.PART}),
    "miss": frozenset({Flag.MISS}),
    "arb": frozenset({Flag.ARB}),
    "nonspec": frozenset({Flag.NONSPEC}),
    "secure": STRONG_FLAGS | {Flag.FLUSH},
    "fpma": frozenset({Flag.FLUSH, Flag.PART, Flag.MISS, Flag.ARB}),
}
PRESETS["f+p+m+a"] = PRESETS["fpma"]


@dataclass(frozen=True)
class Variant:
    """An immutable set of secure-feature toggles.

    ``Variant.parse`` accepts a preset name (``base``, ``secure``, ``fpma`` ...)
    or a ``+``-joined flag list such as ``PART+RR_ARBITER``. A leading preset
    may be followed by ``-FLAG`` terms to knock single mechanisms out, e.g.
    ``secure-RR_ARBITER``.
    """

    flags: frozenset = frozenset()
    name: str = ""

    @classmethod
    def preset(cls, name: str) -> "Variant":
        key = name.strip().lower()
        if key not in PRESETS:
            raise ConfigError(f"unknown variant preset {name!r}")
        canonical = "fpma" if key == "f+p+m+a" else key
        return cls(PRESETS[key], canonical.upper())

    @classmethod
    def parse(cls, text: str) -> "Variant":
        text = text.strip()
        if not text:
            raise ConfigError("empty variant")
        if text.lower() in PRESETS:
            return cls.preset(text)
        head, *removed = text.split("-")
        flags = set()
        for term in head.split("+"):
            term = term.strip()
            if term.lower() in PRESETS:
                flags |= PRESETS[term.lower()]
                continue
            try:
                flags.add(Flag[term.upper()])
            except KeyError:
                raise ConfigError(f"unknown variant flag {term!r}") from None
        for term in removed:
            try:
                flags.discard(Flag[term.strip().upper()])
            except KeyError:
                raise ConfigError(f"unknown variant flag {term!r}") from None
        return cls(frozenset(flags), text)

    def __contains__(self, flag: Flag) -> bool:
        return flag in self.flags

    def without(self, *flags: Flag) -> "Variant":
        removed = "".join(f"-{f.value}" for f in flags)
        return Variant(self.flags - set(flags), f"{self.label}{removed}")

    def with_flags(self, *flags: Flag) -> "Variant":
        added = "".join(f"+{f.value}" for f in flags)
        return Variant(self.flags | set(flags), f"{self.label}{added}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return "+".join(sorted(f.value for f in self.flags)) or "BASE"

    @property
    def strong(self) -> bool:
        return STRONG_FLAGS <= self.flags

    def __str__(self) -> str:
        return self.label


BASE = Variant.preset("base")
SECURE = Variant.preset("secure")
FPMA = Variant.preset("fpma")


@dataclass(frozen=True)
class SimConfig:
    n_cores: int = 1
    line_bytes: int = 64
    l1_sets: int = 64
    l1_ways: int = 8
    l1_mshrs: int = 8
    llc_sets: int = 1024
    llc_ways: int = 16
    llc_mshrs_total: int = 16
    llc_pipeline_latency: int = 4
    dram_latency: int = 120
    dram_max_inflight: int = 24
    n_regions: int = 64
    dram_bytes: int = 2 << 30
    l1_tlb_entries: int = 32
    l2_tlb_sets: int = 256
    l2_tlb_ways: int = 4
    bp_table_entries: int = 4096
    bp_flush_rate: int = 8
    l1_flush_rate: int = 1
    issue_window: int = 80
    issue_width: int = 2
    miss_banks: int = 4
    # modeling knobs with documented defaults
    part_region_bits: int = 2
    l1_hit_latency: int = 2
    l2_tlb_latency: int = 1
    page_walk_latency: int = 20
    page_bytes: int = 4096
    link_depth: int = 2
    arb_extra_latency: int = 8
    monitor_call_cost: int = 200
    memcopy_line_cycles: int = 8
    mailbox_depth: int = 4
    monitor_regions: tuple = (0,)
    trap_interval: int = 0
    seed: int = 0

    # -- derived geometry -------------------------------------------------
    @property
    def line_shift(self) -> int:
        return self.line_bytes.bit_length() - 1

    @property
    def total_lines(self) -> int:
        return self.dram_bytes // self.line_bytes

    @property
    def lines_per_region(self) -> int:
        return self.total_lines // self.n_regions

    @property
    def region_bytes(self) -> int:
        return self.dram_bytes // self.n_regions

    @property
    def llc_index_bits(self) -> int:
        return self.llc_sets.bit_length() - 1

    @property
    def llc_capacity(self) -> int:
        return self.llc_sets * self.llc_ways * self.line_bytes

    @property
    def l1_lines(self) -> int:
        return self.l1_sets * self.l1_ways

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


FULL_CONFIG = SimConfig()


def _pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


def byte_to_line(byte_addr: int, cfg: SimConfig) -> int:
    return byte_addr >> cfg.line_shift


def region_base(region: int, cfg: SimConfig) -> int:
    """First line address of ``region``."""
    return region * cfg.lines_per_region


def dram_region(addr: int, cfg: SimConfig) -> int:
    """DRAM region of a line address: its top log2(n_regions) bits."""
    if not 0 <= addr < cfg.total_lines:
        raise IndexError(f"line address {addr:#x} outside DRAM ({cfg.total_lines:#x} lines)")
    return addr // cfg.lines_per_region


def llc_index(addr: int, cfg: SimConfig, variant: Variant = BASE) -> int:
    """LLC set index of a line address.

    Without PART this is the low log2(llc_sets) bits. With PART the top
    ``part_region_bits`` of the index are replaced by the low bits of the DRAM
    region, i.e. ``{R[k-1:0], A[n-k-1:0]}``.
    """
    if not 0 <= addr < cfg.total_lines:
        raise IndexError(f"line address {addr:#x} outside DRAM ({cfg.total_lines:#x} lines)")
    n = cfg.llc_index_bits
    if Flag.PART not in variant.flags:
        return addr & (cfg.llc_sets - 1)
    k = cfg.part_region_bits
    low = n - k
    region = addr // cfg.lines_per_region
    return ((region & ((1 << k) - 1)) << low) | (addr & ((1 << low) - 1))


def mshr_budget(dram_max_inflight: int, n_cores: int) -> tuple[int, int]:
    """MSHR count that can never overrun the DRAM controller.

    Each MSHR may have a writeback and a read in flight at once, so the total
    is half the controller's capacity, split evenly between cores.
    """
    total = dram_max_inflight // 2
    per_core = total // n_cores if n_cores > 0 else 0
    if per_core == 0:
        raise ConfigError(
            f"MSHR budget of {dram_max_inflight} DRAM requests gives 0 entries per core for {n_cores} cores"
        )
    return total, per_core


def validate_config(cfg: SimConfig, variant: Variant = BASE) -> list[str]:
    """Return every invariant violation in ``cfg`` under ``variant`` (empty list when valid)."""
    out = []
    positive = (
        "n_cores line_bytes l1_sets l1_ways l1_mshrs llc_sets llc_ways llc_mshrs_total dram_latency "
        "dram_max_inflight n_regions dram_bytes l1_tlb_entries l2_tlb_sets l2_tlb_ways bp_table_entries "
        "bp_flush_rate l1_flush_rate issue_window issue_width miss_banks l1_hit_latency page_bytes link_depth"
    ).split()
    for name in positive:
        if getattr(cfg, name) <= 0:
            out.append(f"{name} must be positive (got {getattr(cfg, name)})")
    if out:
        return out
    for name in ("line_bytes", "l1_sets", "llc_sets", "n_regions", "dram_bytes", "page_bytes", "l2_tlb_sets"):
        if not _pow2(getattr(cfg, name)):
            out.append(f"{name} must be a power of two (got {getattr(cfg, name)})")
    if cfg.llc_pipeline_latency < 1:
        out.append("llc_pipeline_latency must be at least 1")
    if cfg.dram_bytes % cfg.n_regions:
        out.append("dram_bytes must divide evenly into n_regions")
    region = cfg.dram_bytes // cfg.n_regions
    if region < cfg.page_bytes or region % cfg.page_bytes:
        out.append(f"region size {region} must be a whole number of {cfg.page_bytes}-byte pages")
    if cfg.page_bytes < cfg.line_bytes:
        out.append("page_bytes must be at least line_bytes")
    if cfg.l1_mshrs > cfg.l1_ways:
        out.append("l1_mshrs must not exceed l1_ways (a fill always needs a non-pending victim way)")
    if cfg.n_cores > 64:
        out.append("n_cores above 64 is not supported")
    if _pow2(cfg.llc_sets) and _pow2(cfg.n_regions):
        if cfg.part_region_bits < 0 or cfg.part_region_bits > cfg.llc_index_bits:
            out.append("part_region_bits must lie in [0, log2(llc_sets)]")
        if cfg.part_region_bits > cfg.n_regions.bit_length() - 1:
            out.append("part_region_bits must not exceed log2(n_regions)")
    for r in cfg.monitor_regions:
        if not 0 <= r < cfg.n_regions:
            out.append(f"monitor region {r} out of range")
    if cfg.trap_interval < 0:
        out.append("trap_interval must be >= 0")

    if Flag.MISS in variant.flags and Flag.MSHR_PARTITION in variant.flags:
        out.append("MISS and MSHR_PARTITION are alternative MSHR models; enable at most one")
    if cfg.dram_max_inflight < 2 * cfg.n_cores:
        if Flag.MSHR_PARTITION in variant.flags or Flag.MISS in variant.flags:
            out.append("dram_max_inflight must be at least 2*n_cores")
    else:
        total, _ = mshr_budget(cfg.dram_max_inflight, cfg.n_cores)
        if Flag.MSHR_PARTITION in variant.flags and cfg.llc_mshrs_total > total:
            out.append(
                f"MSHRs exceed d_max/2: llc_mshrs_total={cfg.llc_mshrs_total} > "
                f"{cfg.dram_max_inflight}//2={total}"
            )
        if Flag.MISS in variant.flags:
            miss_total, _ = mshr_budget(cfg.dram_max_inflight, 1)
            if miss_total % cfg.miss_banks:
                out.append(f"MISS needs {miss_total} MSHRs to split evenly over {cfg.miss_banks} banks")
    if Flag.MSHR_PARTITION in variant.flags and cfg.llc_mshrs_total < cfg.n_cores:
        out.append("MSHR_PARTITION needs at least one MSHR per core")
    return out


# -- config file format ---------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


def _parse_value(name: str, raw: str):
    if name == "monitor_regions":
        return tuple(parse_region_list(raw))
    return int(raw, 0)


def parse_region_list(text: str) -> list[int]:
    """Parse ``4,5,8-11`` into a sorted list of region ids."""
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo, 0), int(hi, 0) + 1))
        else:
            out.add(int(part, 0))
    return sorted(out)


def parse_config(text: str) -> tuple[SimConfig, Variant | None]:
    """Parse flat ``key=value`` lines. Unknown keys are errors."""
    values = {}
    variant = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "variant":
            variant = Variant.parse(raw)
            continue
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None
    return SimConfig(**values), variant


def load_config(path) -> tuple[SimConfig, Variant | None]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if name == "monitor_regions":
            value = ",".join(str(r) for r in value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"
