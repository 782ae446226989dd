import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mi6sim import Machine
from mi6sim.config import BASE, SECURE, Variant
from mi6sim.core import purge_duration
from mi6sim.harness.workloads import region_lines
from mi6sim.monitor import (
    CREATED,
    DESCHEDULED,
    DESTROYED,
    RUNNING,
    Monitor,
    MonitorError,
    ScheduleError,
    parse_schedule,
)
from mi6sim.trace import COMPUTE, LOAD, STORE, TraceOp

from .conftest import SMALL

CFG = SMALL.replace(n_regions=8, dram_bytes=1 << 21)
LB = CFG.line_bytes


def addr(region, line=0, word=0):
    return ((region * CFG.lines_per_region + line) << CFG.line_shift) + 8 * word


def fresh(variant=SECURE, cfg=CFG, events=()):
    m = Machine(cfg, variant, oracle=False)
    return m, Monitor(m, events)


def allowed_regions(core):
    return {r for r, bit in enumerate(core.bitvector) if bit}


def settle(m):
    m.run()
    return m.cycle


# -- create / destroy ----------------------------------------------------------------

def test_create_fresh_domain():
    m, mon = fresh()
    mon.create_domain("a", {4, 5})
    assert mon.domains["a"].state == CREATED
    assert mon.domains["a"].regions == frozenset({4, 5})
    assert 4 not in mon.os_regions() and 5 not in mon.os_regions()
    assert mon.shootdowns == 1


def test_create_overlap_names_owner():
    m, mon = fresh()
    mon.create_domain("a", {4})
    with pytest.raises(MonitorError, match="'a'"):
        mon.create_domain("b", {4, 6})
    assert "b" not in mon.domains


@pytest.mark.parametrize("regions, message", [
    ({0}, "reserved"),
    ({1, 0}, "reserved"),
    (set(), "at least one"),
    ({99}, "out of range"),
])
def test_create_rejected(regions, message):
    m, mon = fresh()
    with pytest.raises(MonitorError, match=message):
        mon.create_domain("x", regions)


def test_create_duplicate_and_os_names():
    m, mon = fresh()
    mon.create_domain("a", {2})
    with pytest.raises(MonitorError):
        mon.create_domain("a", {3})
    with pytest.raises(MonitorError):
        mon.create_domain("os", {3})


def test_create_zeroes_region():
    m, mon = fresh()
    m.write_bytes(addr(3, 5), b"secret!!")
    mon.create_domain("a", {3})
    assert m.read_bytes(addr(3, 5), 8) == bytes(8)


def test_destroy_twice_and_while_scheduled():
    m, mon = fresh()
    mon.create_domain("a", {2})
    mon.schedule("a", 0, [TraceOp(COMPUTE, cycles=50)])
    with pytest.raises(MonitorError, match="still scheduled"):
        mon.destroy_domain("a")
    settle(m)
    mon.deschedule(0)
    settle(m)
    mon.destroy_domain("a")
    assert mon.domains["a"].state == DESTROYED
    with pytest.raises(MonitorError, match="already destroyed"):
        mon.destroy_domain("a")
    with pytest.raises(MonitorError, match="unknown"):
        mon.destroy_domain("nobody")


def test_reallocated_region_reads_zero():
    m, mon = fresh()
    mon.create_domain("a", {2})
    stores = [TraceOp(STORE, addr=addr(2, i), value=0xDEAD + i) for i in range(16)]
    mon.schedule("a", 0, stores)
    settle(m)
    mon.deschedule(0)
    settle(m)
    assert m.peek_word(addr(2, 3)) == 0xDEAD + 3
    mon.destroy_domain("a")
    mon.create_domain("b", {2})
    mon.schedule("b", 1, [TraceOp(LOAD, addr=addr(2, i)) for i in range(16)])
    settle(m)
    values = [o[3] for o in m.cores[1].observables]
    assert values == [0] * 16


# -- schedule / deschedule -------------------------------------------------------------

def test_schedule_starts_after_purge():
    m, mon = fresh()
    mon.create_domain("a", {2})
    start = m.cycle
    mon.schedule("a", 1, [TraceOp(LOAD, addr=addr(2))])
    m.tick()
    core = m.cores[1]
    assert core.mode == "PURGING"
    settle(m)
    first_issue = core.observables[0][1]
    assert first_issue >= start + purge_duration(CFG)
    assert mon.domains["a"].state == RUNNING
    assert allowed_regions(core) == {2}


def test_schedule_errors():
    m, mon = fresh()
    mon.create_domain("a", {2})
    mon.create_domain("b", {3})
    mon.schedule("a", 0, [])
    with pytest.raises(MonitorError, match="busy"):
        mon.schedule("b", 0, [])
    with pytest.raises(MonitorError, match="no core"):
        mon.schedule("b", 7, [])
    settle(m)
    mon.deschedule(0)
    settle(m)
    mon.destroy_domain("b")
    with pytest.raises(MonitorError, match="destroyed"):
        mon.schedule("b", 1, [])


def test_deschedule_idle_core():
    m, mon = fresh()
    with pytest.raises(MonitorError, match="not running"):
        mon.deschedule(0)


def test_deschedule_resets_core_state():
    m, mon = fresh()
    reset = m.cores[0].serialize_state()
    mon.create_domain("a", {2})
    ops = [TraceOp(STORE if i % 3 else LOAD, addr=addr(2, 7 * i), value=i) for i in range(60)]
    mon.schedule("a", 0, ops)
    settle(m)
    assert m.cores[0].serialize_state() != reset
    mon.deschedule(0)
    settle(m)
    assert mon.domains["a"].state == DESCHEDULED
    assert m.cores[0].serialize_state() == reset
    assert allowed_regions(m.cores[0]) == set(mon.os_regions())


def test_reschedule_other_domain_sees_reset_core():
    """Core state after one domain leaves equals the state of a core that never ran it."""
    def state_after(first_ops):
        m, mon = fresh()
        mon.create_domain("a", {2})
        mon.create_domain("b", {3})
        mon.schedule("a", 0, first_ops)
        settle(m)
        mon.deschedule(0)
        settle(m)
        mon.schedule("b", 0, [])
        settle(m)
        return m.cores[0].serialize_state()

    busy = [TraceOp(STORE, addr=addr(2, i * 5), value=i) for i in range(40)]
    assert state_after(busy) == state_after([])


def test_flush_trap_injects_purge():
    cfg = CFG.replace(trap_interval=500)
    m, mon = fresh(Variant.parse("flush"), cfg)
    mon.create_domain("a", {2})
    mon.schedule("a", 0, [TraceOp(COMPUTE, cycles=400)] * 4)
    settle(m)
    # one purge at schedule plus one per trap while the trace is running
    assert m.cores[0].stats.purges >= 3
    m2, mon2 = fresh(BASE, cfg)
    mon2.create_domain("a", {2})
    mon2.schedule("a", 0, [TraceOp(COMPUTE, cycles=400)] * 4)
    settle(m2)
    assert m2.cores[0].stats.purges == 1


# -- mailbox ---------------------------------------------------------------------------

def test_mailbox_delivers_bytes():
    m, mon = fresh()
    mon.create_domain("a", {2})
    mon.create_domain("b", {3})
    payload = bytes(range(64))
    mon.mailbox_send("a", "b", payload)
    assert mon.mailbox_receive("b") == ("a", payload)
    assert mon.mailbox_receive("b") is None
    mon.mailbox_send("os", "b", b"\x01")
    assert mon.mailbox_receive("b") == ("os", b"\x01" + bytes(63))
    assert mon.purges == 0


def test_mailbox_cost_independent_of_content():
    m, mon = fresh()
    mon.create_domain("a", {2})
    mon.create_domain("b", {3})
    c1 = mon.mailbox_send("a", "b", bytes(64))
    c2 = mon.mailbox_send("a", "b", b"\xff" * 64)
    assert c1 == c2 == CFG.monitor_call_cost


def test_mailbox_full_and_dead():
    m, mon = fresh()
    mon.create_domain("a", {2})
    for _ in range(CFG.mailbox_depth):
        mon.mailbox_send("os", "a", b"x")
    with pytest.raises(MonitorError, match="full"):
        mon.mailbox_send("os", "a", b"x")
    with pytest.raises(MonitorError, match="limit"):
        mon.mailbox_send("os", "a", bytes(65))
    with pytest.raises(MonitorError, match="unknown"):
        mon.mailbox_send("ghost", "a", b"x")


# -- memcopy -----------------------------------------------------------------------------

def with_buffers(size=256):
    m, mon = fresh()
    mon.create_domain("a", {2}, buffers=(addr(2, 100), size, addr(5, 0), size))
    return m, mon


def test_memcopy_write_copies_enclave_buffer():
    m, mon = with_buffers()
    data = bytes((7 * i) & 0xFF for i in range(256))
    m.write_bytes(addr(2, 100), data)
    mon.memcopy("a", "write")
    assert m.read_bytes(addr(5, 0), 256) == data


def test_memcopy_read_copies_os_buffer():
    m, mon = with_buffers(100)
    m.write_bytes(addr(5, 0), b"z" * 100)
    mon.memcopy("a", "read")
    assert m.read_bytes(addr(2, 100), 100) == b"z" * 100


def test_memcopy_cost_data_independent():
    costs = []
    for fill in (b"\x00", b"\xa5"):
        m, mon = with_buffers()
        m.write_bytes(addr(2, 100), fill * 256)
        costs.append(mon.memcopy("a", "write"))
    assert costs[0] == costs[1] == CFG.monitor_call_cost + 4 * CFG.memcopy_line_cycles


def test_memcopy_runs_nonspeculative_on_domain_core():
    m, mon = with_buffers()
    mon.schedule("a", 0, [TraceOp(COMPUTE, cycles=10)])
    settle(m)
    now = m.cycle
    cost = mon.memcopy("a", "write")
    assert m.cores[0].nonspec_until == now + cost
    assert m.cores[0].stall_until == now + cost


def test_memcopy_errors():
    m, mon = fresh()
    mon.create_domain("a", {2})
    with pytest.raises(MonitorError, match="no registered"):
        mon.memcopy("a", "read")
    with pytest.raises(MonitorError, match="sizes differ"):
        mon.register_buffers("a", addr(2), 128, addr(5), 64)
    with pytest.raises(MonitorError, match="leaves"):
        mon.register_buffers("a", addr(3), 64, addr(5), 64)
    with pytest.raises(MonitorError, match="protected"):
        mon.register_buffers("a", addr(2), 64, addr(2, 10), 64)


# -- TLB shootdown --------------------------------------------------------------------------

def test_shootdown_forces_rewalk():
    m, mon = fresh()
    mon.create_domain("a", {2})
    mon.schedule("a", 0, [TraceOp(LOAD, addr=addr(2))])
    settle(m)
    core = m.cores[0]
    walks = core.tlb.walks
    mon.tlb_shootdown()
    core.set_trace([TraceOp(LOAD, addr=addr(2))])
    settle(m)
    assert core.tlb.walks == walks + 1


def test_shootdown_idle_is_harmless():
    m, mon = fresh()
    mon.tlb_shootdown()
    assert m.run() == 0


def test_shootdown_mid_walk_revalidates():
    m, mon = fresh(BASE)
    core = m.cores[0]
    core.set_trace([TraceOp(LOAD, addr=addr(4))])
    for _ in range(3):
        m.tick()
    assert core.memq[0].walking
    # the monitor hands region 4 to a domain while the walk is in flight
    mon.create_domain("a", {4})
    settle(m)
    assert core.observables[0][4]  # faulted
    assert core.tlb.lookup(addr(4) >> CFG.line_shift // core.page_lines) == 0


# -- schedule files ---------------------------------------------------------------------------

def test_parse_schedule(tmp_path):
    (tmp_path / "t.tr").write_text(f"L {addr(2):#x}\n")
    text = """
    # comment
    @10 schedule e core=1 trace=t.tr
    @0 create e regions=2,3 buffers=0x1000:0x2000:64
    @50 mbox os e 0xabcd
    @60 memcopy e write
    @100 deschedule core=1
    @200 destroy e
    """
    events = parse_schedule(text, tmp_path)
    assert [e.op for e in events] == ["create", "schedule", "mbox", "memcopy", "deschedule", "destroy"]
    assert events[0].args["buffers"] == (0x1000, 64, 0x2000, 64)
    assert events[0].args["regions"] == [2, 3]
    assert events[2].args["payload"] == b"\xab\xcd"
    assert events[1].line == 3


@pytest.mark.parametrize("text, line", [
    ("@0 create a regions=2\nbogus\n", 2),
    ("@x create a regions=2\n", 1),
    ("@0 create a regions=2\n@5 explode\n", 2),
    ("\n\n@5 memcopy a sideways\n", 3),
    ("@5 deschedule\n", 1),
    ("@1 schedule a core=0 trace=missing.tr\n", 1),
])
def test_schedule_errors_carry_line_numbers(text, line, tmp_path):
    with pytest.raises(ScheduleError) as info:
        parse_schedule(text, tmp_path, source="s.sched")
    assert info.value.line == line
    assert str(info.value).startswith(f"s.sched:{line}:")


def test_scripted_run(tmp_path):
    (tmp_path / "v.tr").write_text(f"S {addr(2):#x} 0x5\nL {addr(2):#x}\n")
    text = "@0 create e regions=2\n@1 schedule e core=1 trace=v.tr\n@3000 deschedule core=1\n@3100 destroy e\n"
    m, mon = fresh(events=parse_schedule(text, tmp_path))
    m.run()
    assert mon.domains["e"].state == DESTROYED
    assert m.cores[1].observables[1][3] == 5
    assert m.peek_word(addr(2)) == 0


def test_strict_off_collects_errors():
    m = Machine(CFG, SECURE)
    events = parse_schedule("@0 deschedule core=0\n")
    mon = Monitor(m, events, strict=False)
    m.run()
    assert len(mon.errors) == 1


# -- region disjointness over random lifecycles ----------------------------------------------

lifecycle_op = st.one_of(
    st.tuples(st.just("create"), st.sampled_from("abcd"), st.frozensets(st.integers(0, 7), max_size=3)),
    st.tuples(st.just("schedule"), st.sampled_from("abcd"), st.integers(0, 1)),
    st.tuples(st.just("deschedule"), st.integers(0, 1)),
    st.tuples(st.just("destroy"), st.sampled_from("abcd")),
)


@settings(max_examples=40, deadline=None)
@given(st.lists(lifecycle_op, max_size=14))
def test_region_disjointness(ops):
    m, mon = fresh()
    for op in ops:
        try:
            if op[0] == "create":
                mon.create_domain(op[1], op[2])
            elif op[0] == "schedule":
                mon.schedule(op[1], op[2], [TraceOp(LOAD, addr=addr(min(mon.domains[op[1]].regions)))])
            elif op[0] == "deschedule":
                mon.deschedule(op[1])
            else:
                mon.destroy_domain(op[1])
        except (MonitorError, KeyError):
            pass
        m.run()
        live = mon.live()
        for i, a in enumerate(live):
            assert not a.regions & set(CFG.monitor_regions)
            for b in live[i + 1:]:
                assert not a.regions & b.regions
        running = [d for d in live if d.state == RUNNING]
        for c in range(CFG.n_cores):
            assert sum(c in d.cores for d in running) <= 1
        for c, core in enumerate(m.cores):
            allowed = allowed_regions(core)
            did = mon.core_domain[c]
            expected = mon.domains[did].regions if did else set(mon.os_regions())
            assert allowed == set(expected)
