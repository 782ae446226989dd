"""MSI coherence states and the messages carried on the L1<->LLC links and the LLC<->DRAM port."""

from __future__ import annotations

from dataclasses import dataclass

I, S, M = 0, 1, 2
STATE_NAMES = "ISM"


@dataclass(slots=True)
class UpgradeReq:
    core: int
    addr: int
    want: int


@dataclass(slots=True)
class DowngradeResp:
    """L1 -> LLC. ``tag`` is ``(mshr, gen)`` for solicited responses, None for evictions."""

    core: int
    addr: int
    state: int
    data: bytes | None
    tag: tuple | None = None


@dataclass(slots=True)
class UpgradeResp:
    addr: int
    state: int
    data: bytes


@dataclass(slots=True)
class DowngradeReq:
    addr: int
    state: int
    tag: tuple


@dataclass(slots=True)
class DramReq:
    write: bool
    addr: int
    mshr: int
    data: bytes | None = None
    submitted: int = 0
    complete_at: int = 0
    seq: int = 0


class Link:
    """The three FIFOs between one core's L1 and the LLC."""

    def __init__(self, kernel, core: int, req_depth: int, depth: int):
        self.core = core
        self.req = kernel.fifo(f"link{core}.upgrade_req", req_depth)
        self.resp = kernel.fifo(f"link{core}.downgrade_resp", depth)
        self.down = kernel.fifo(f"link{core}.to_l1", depth)
