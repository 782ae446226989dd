import pytest
from hypothesis import given
from hypothesis import strategies as st

from mi6sim.config import (
    BASE,
    FPMA,
    FULL_CONFIG,
    SECURE,
    STRONG_FLAGS,
    ConfigError,
    Flag,
    SimConfig,
    Variant,
    dram_region,
    dump_config,
    llc_index,
    mshr_budget,
    parse_config,
    parse_region_list,
    region_base,
    validate_config,
)

PART = Variant.parse("part")


@pytest.mark.parametrize(
    "line, region",
    [
        (0x000000, 0),
        (0x202000, 4),  # byte 0x0808_0000; bits [24:19] of the line address
        (0x7FFFFFC0 >> 6, 63),  # last line of DRAM
    ],
)
def test_dram_region_examples(line, region):
    assert dram_region(line, FULL_CONFIG) == region


def test_dram_region_out_of_range():
    with pytest.raises(IndexError):
        dram_region(FULL_CONFIG.total_lines, FULL_CONFIG)
    with pytest.raises(IndexError):
        llc_index(-1, FULL_CONFIG)


@pytest.mark.parametrize(
    "variant, line, expected",
    [
        (BASE, 0x12345, 0x345),
        (PART, 0x202000, 0x000),
        (PART, 0x0, 0x0),
        # region 5 -> R[1:0] = 01 lands in index bits 9:8
        (PART, (5 << 19) | 0xAB, 0x1AB),
    ],
)
def test_llc_index_examples(variant, line, expected):
    assert llc_index(line, FULL_CONFIG, variant) == expected


def test_part_index_matches_bit_formula():
    # {A[20:19], A[7:0]} for 2 GiB DRAM with 64 regions
    for line in (0x1FFFFFF, 0x0ABCDEF, 0x1234567, 0x0180000):
        expected = (((line >> 19) & 0b11) << 8) | (line & 0xFF)
        assert llc_index(line, FULL_CONFIG, PART) == expected


@pytest.mark.parametrize("dmax, cores, expected", [(24, 1, (12, 12)), (2, 1, (1, 1)), (24, 4, (12, 3))])
def test_mshr_budget(dmax, cores, expected):
    assert mshr_budget(dmax, cores) == expected


def test_mshr_budget_zero_per_core():
    with pytest.raises(ConfigError):
        mshr_budget(4, 4)


def test_full_size_config_valid_under_base():
    assert validate_config(FULL_CONFIG, BASE) == []


def test_secure_rejects_oversized_mshrs():
    cfg = FULL_CONFIG.replace(llc_mshrs_total=16, dram_max_inflight=24)
    problems = validate_config(cfg, SECURE)
    assert any("MSHRs exceed d_max/2" in p for p in problems)
    assert validate_config(cfg.replace(llc_mshrs_total=12), SECURE) == []


def test_zero_regions_rejected_without_exception():
    problems = validate_config(FULL_CONFIG.replace(n_regions=0), BASE)
    assert any("n_regions" in p for p in problems)


@pytest.mark.parametrize(
    "change, fragment",
    [
        (dict(line_bytes=48), "line_bytes"),
        (dict(n_regions=1 << 20), "page"),
        (dict(l1_mshrs=16), "l1_mshrs"),
        (dict(monitor_regions=(99,)), "monitor region"),
    ],
)
def test_validate_reports_violations(change, fragment):
    problems = validate_config(FULL_CONFIG.replace(**change), BASE)
    assert any(fragment in p for p in problems), problems


def test_presets_expand():
    assert BASE.flags == frozenset()
    assert SECURE.strong and Flag.FLUSH in SECURE
    assert STRONG_FLAGS <= SECURE.flags
    assert FPMA.flags == {Flag.FLUSH, Flag.PART, Flag.MISS, Flag.ARB}
    assert Variant.parse("F+P+M+A").flags == FPMA.flags
    assert Variant.parse("fpma").label == "FPMA"


def test_variant_parse_flags_and_removal():
    v = Variant.parse("secure-RR_ARBITER")
    assert Flag.RR_ARBITER not in v and Flag.PART in v
    assert Variant.parse("PART+RR_ARBITER").flags == {Flag.PART, Flag.RR_ARBITER}
    assert SECURE.without(Flag.DQ_RETRY).flags == SECURE.flags - {Flag.DQ_RETRY}
    with pytest.raises(ConfigError):
        Variant.parse("turbo")
    with pytest.raises(ConfigError):
        Variant.parse("")


def test_parse_config_and_unknown_key():
    cfg, variant = parse_config("n_cores=2\nvariant=secure\n# comment\nllc_mshrs_total=12\n")
    assert cfg.n_cores == 2 and cfg.llc_mshrs_total == 12
    assert variant == SECURE
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("n_core=2\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("n_cores=two\n")


def test_dump_parse_roundtrip():
    cfg = FULL_CONFIG.replace(n_cores=3, monitor_regions=(0, 1), seed=9)
    again, _ = parse_config(dump_config(cfg))
    assert again == cfg


def test_region_list():
    assert parse_region_list("4,5,8-11") == [4, 5, 8, 9, 10, 11]


SMALL_GEOMS = st.tuples(st.sampled_from([16, 32, 64]), st.sampled_from([4, 8]), st.integers(0, 2))


@given(SMALL_GEOMS)
def test_part_region_sets_disjoint(geom):
    """With as many regions as colours, each region's lines land in a set range no other region uses."""
    sets, n_regions, extra = geom
    k = n_regions.bit_length() - 1
    cfg = SimConfig(llc_sets=sets, n_regions=n_regions, dram_bytes=n_regions * 4096 * (1 << extra),
                    part_region_bits=k)
    used = {}
    for line in range(cfg.total_lines):
        r = dram_region(line, cfg)
        used.setdefault(r, set()).add(llc_index(line, cfg, PART))
    regions = sorted(used)
    for i in regions:
        for j in regions:
            if i < j:
                assert not used[i] & used[j]


@given(st.integers(0, 63))
def test_region_base_roundtrip(region):
    assert dram_region(region_base(region, FULL_CONFIG), FULL_CONFIG) == region


@given(st.integers(2, 64), st.integers(1, 16))
def test_secure_valid_configs_respect_budget(dmax, cores):
    cfg = SimConfig(n_cores=cores, dram_max_inflight=dmax, llc_mshrs_total=max(cores, dmax // 2))
    if not validate_config(cfg, SECURE):
        assert 2 * cfg.llc_mshrs_total <= cfg.dram_max_inflight
