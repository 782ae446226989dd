import pytest
from hypothesis import given
from hypothesis import strategies as st

from mi6sim.trace import COMPUTE, LOAD, STORE, TraceError, TraceOp, compute, format_trace, load_trace, parse_trace


def test_parse_example():
    ops = parse_trace("C 10\nL 0x1000\nS 0x1040")
    assert ops == [TraceOp(COMPUTE, cycles=10), TraceOp(LOAD, addr=0x1000), TraceOp(STORE, addr=0x1040)]


def test_empty_and_comments():
    assert parse_trace("") == []
    assert parse_trace("# only a comment\n\n   \n") == []
    assert parse_trace("l 0x40  # lower case op\n") == [TraceOp(LOAD, addr=0x40)]


def test_store_value():
    assert parse_trace("S 0x80 0xdead")[0].value == 0xDEAD


@pytest.mark.parametrize(
    "text, line, col, fragment",
    [
        ("L xyz", 1, 3, "hex"),
        ("C 0", 1, 3, "compute cycles"),
        ("L 0x40\nQ 0x40", 2, 1, "unknown op"),
        ("C ten", 1, 3, "cycle count"),
        ("L 0x4g", 1, 3, "non-hex"),
        ("L", 1, 1, "expected"),
        ("S 0x40 0x1 0x2", 1, 1, "expected"),
    ],
)
def test_parse_errors_carry_position(text, line, col, fragment):
    with pytest.raises(TraceError) as exc:
        parse_trace(text)
    assert exc.value.line == line
    assert exc.value.column == col
    assert fragment in str(exc.value)


def test_dram_bound_check():
    assert parse_trace("L 0xff8", dram_bytes=0x1000)
    with pytest.raises(TraceError, match="outside DRAM"):
        parse_trace("L 0x1000", dram_bytes=0x1000)


def test_load_trace_missing_file(tmp_path):
    with pytest.raises(TraceError, match="cannot read"):
        load_trace(tmp_path / "nope.tr")


def test_compute_helper_and_kind_check():
    with pytest.raises(ValueError):
        compute(0)
    with pytest.raises(ValueError):
        TraceOp("LOAD", addr=0)


OPS = st.one_of(
    st.builds(lambda n: TraceOp(COMPUTE, cycles=n), st.integers(1, 10_000)),
    st.builds(lambda a: TraceOp(LOAD, addr=a), st.integers(0, 2**40)),
    st.builds(lambda a, v: TraceOp(STORE, addr=a, value=v), st.integers(0, 2**40),
              st.one_of(st.none(), st.integers(0, 2**64 - 1))),
)


@given(st.lists(OPS, max_size=30))
def test_format_parse_roundtrip(ops):
    assert parse_trace(format_trace(ops, header="generated")) == ops
