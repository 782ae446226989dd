import pytest

from mi6sim import SimConfig

# Small machine used by most unit tests: 4 regions of 4096 lines, 64-set LLC.
SMALL = SimConfig(
    n_cores=2,
    llc_sets=64,
    llc_ways=4,
    l1_sets=4,
    l1_ways=4,
    l1_mshrs=4,
    llc_mshrs_total=4,
    n_regions=4,
    dram_bytes=1 << 20,
    dram_latency=40,
    dram_max_inflight=8,
)


@pytest.fixture
def small_cfg():
    return SMALL
