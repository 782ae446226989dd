import hashlib
from concurrent.futures import ProcessPoolExecutor

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mi6sim import Machine
from mi6sim.config import BASE, SECURE, ConfigError, Variant
from mi6sim.engine import DetRng, SimulationAbort
from mi6sim.harness.workloads import random_trace, region_lines
from mi6sim.machine import STATS_COLUMNS
from mi6sim.trace import LOAD, STORE, TraceOp

from .conftest import SMALL


def random_run(seed: int, variant: str = "secure", n_ops: int = 150):
    cfg = SMALL
    m = Machine(cfg, Variant.parse(variant), log=True)
    rng = DetRng(seed)
    lines = region_lines(cfg, 1, 64)
    m.load_traces([random_trace(rng.split(c), cfg, lines, n_ops) for c in range(cfg.n_cores)])
    m.run()
    return m.stats_csv(), m.log.text()


def digest(args):
    stats, log = random_run(*args)
    return hashlib.sha256((stats + log).encode()).hexdigest()


def test_stats_csv_header():
    m = Machine(SMALL, BASE)
    lines = m.stats_csv().splitlines()
    assert lines[0] == "# schema=1"
    assert lines[1].split(",") == list(STATS_COLUMNS)
    assert len(lines) == 2 + SMALL.n_cores
    assert all(line.startswith("BASE,") for line in lines[2:])


def test_variant_label_in_stats():
    m = Machine(SMALL, SECURE)
    assert m.stats_rows()[0]["variant"] == "SECURE"


@pytest.mark.parametrize("variant", ["base", "secure", "part-nonspec"])
def test_rerun_byte_identical(variant):
    first = random_run(11, variant)
    assert first[1]  # the log is not empty
    for _ in range(2):
        assert random_run(11, variant) == first


def test_identical_across_processes():
    jobs = [(5, "secure")] * 3
    with ProcessPoolExecutor(max_workers=3) as pool:
        digests = list(pool.map(digest, jobs))
    assert len(set(digests)) == 1
    assert digests[0] == digest((5, "secure"))


def test_different_seeds_differ():
    assert random_run(1)[1] != random_run(2)[1]


def test_invalid_config_rejected_unless_allowed():
    bad = SMALL.replace(llc_mshrs_total=SMALL.dram_max_inflight)
    with pytest.raises(ConfigError):
        Machine(bad, SECURE)
    Machine(bad, SECURE, allow_invalid=True)


def test_run_cycle_limit_aborts():
    m = Machine(SMALL, BASE)
    m.load_traces([[TraceOp(LOAD, addr=SMALL.line_bytes * i) for i in range(50)]])
    with pytest.raises(SimulationAbort):
        m.run(max_cycles=10)


def test_empty_machine_is_done():
    m = Machine(SMALL, BASE)
    assert m.all_done()
    assert m.run() == 0


def test_poke_peek_through_caches():
    cfg = SMALL
    m = Machine(cfg, BASE)
    a = 3 * cfg.line_bytes + (cfg.lines_per_region << cfg.line_shift)
    m.load_traces([[TraceOp(STORE, addr=a, value=9)]])
    m.run()
    assert m.peek_word(a) == 9
    m.write_bytes(a + 8, b"\x01\x02")
    assert m.read_bytes(a, 10) == (9).to_bytes(8, "little") + b"\x01\x02"
    m.load_traces([[TraceOp(LOAD, addr=a + 8)]])
    m.run()
    assert m.cores[0].observables[-1][3] == 0x0201


def test_zero_region_clears_cached_and_backing_data():
    cfg = SMALL
    m = Machine(cfg, BASE, oracle=True)
    lines = region_lines(cfg, 1, 8)
    m.load_traces([[TraceOp(STORE, addr=l << cfg.line_shift, value=7) for l in lines]])
    m.run()
    m.zero_region(1)
    assert all(m.peek_word(l << cfg.line_shift) == 0 for l in lines)
    assert not any(cfg.lines_per_region <= a < 2 * cfg.lines_per_region for a in m.llc.resident)
    assert m.region_quiescent(1)
    m.load_traces([[TraceOp(LOAD, addr=l << cfg.line_shift) for l in lines]])
    m.run()
    assert m.oracle.mismatches == []


def test_quiescence_sees_inflight_line():
    cfg = SMALL
    m = Machine(cfg, BASE)
    line = region_lines(cfg, 1, 1)[0]
    m.load_traces([[TraceOp(LOAD, addr=line << cfg.line_shift)]])
    m.run_for(30)  # past the page walk, while the miss is outstanding
    assert not m.line_quiescent(line)
    assert not m.region_quiescent(1)
    m.run()
    assert m.line_quiescent(line) and m.region_quiescent(1)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 4), st.sampled_from(["base", "secure", "fpma", "nonspec"]))
def test_small_random_coherence(seed, n_cores, variant):
    # MISS banks need an MSHR count divisible by the four banks and every core count
    cfg = SMALL.replace(n_cores=n_cores, llc_mshrs_total=12, dram_max_inflight=24,
                        llc_ways=2, l1_sets=2, l1_ways=2, l1_mshrs=2)
    m = Machine(cfg, Variant.parse(variant), oracle=True)
    rng = DetRng(seed)
    lines = region_lines(cfg, 1, 12)
    m.load_traces([random_trace(rng.split(c), cfg, lines, 80, store_frac=0.5, compute_frac=0.0)
                   for c in range(n_cores)])
    m.run()
    assert m.oracle.mismatches == []
    assert m.check_directory() == []
    assert m.oracle.loads + m.oracle.stores == 80 * n_cores
