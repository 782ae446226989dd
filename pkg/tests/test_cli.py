import subprocess
import sys
from pathlib import Path

import pytest

from mi6sim.cli import main, parse_trace_specs
from mi6sim.trace import TraceError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
BASE_CFG = str(CONFIGS / "base.cfg")
STREAM = str(CONFIGS / "traces" / "stream.tr")


def stats_rows(text):
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, l.split(","))) for l in lines[1:]]


def test_simulate_base(capsys):
    assert main(["simulate", "--config", BASE_CFG, "--variant", "base", "--trace", f"core0={STREAM}"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# schema=1\n")
    rows = stats_rows(out)
    assert len(rows) == 1 and rows[0]["variant"] == "BASE" and int(rows[0]["memops"]) > 0


def test_simulate_secure_recorded(tmp_path):
    stats = tmp_path / "s.csv"
    cfg = tmp_path / "two.cfg"
    cfg.write_text(Path(BASE_CFG).read_text() + "n_cores=2\n")
    assert main(["simulate", "--config", str(cfg), "--variant", "secure", "--trace", f"core0={STREAM}",
                 "--stats", str(stats)]) == 0
    rows = stats_rows(stats.read_text())
    assert [r["variant"] for r in rows] == ["SECURE", "SECURE"]


def test_simulate_out_of_dram_trace(tmp_path):
    bad = tmp_path / "bad.tr"
    bad.write_text("L 0xffffffff0\n")
    assert main(["simulate", "--config", BASE_CFG, "--trace", f"core0={bad}"]) == 2


@pytest.mark.parametrize("text", ["llc_ways=three\n", "no_such_key=1\n", "llc_mshrs_total=24\nvariant=secure\nn_cores=2\n"])
def test_simulate_config_error(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(Path(BASE_CFG).read_text() + text)
    assert main(["simulate", "--config", str(cfg), "--trace", f"core0={STREAM}"]) == 1


def test_simulate_missing_trace_file(tmp_path):
    assert main(["simulate", "--config", BASE_CFG, "--trace", f"core0={tmp_path / 'nope.tr'}"]) == 2


def test_simulate_schedule_and_log(tmp_path):
    log = tmp_path / "events.log"
    rc = main(["simulate", "--config", str(CONFIGS / "secure.cfg"), "--schedule", str(CONFIGS / "demo.sched"),
               "--trace", f"core0={STREAM}", "--log", str(log), "--stats", str(tmp_path / "s.csv")])
    assert rc == 0
    text = log.read_text()
    assert ",monitor,create," in text and ",core1,purge," in text


def test_simulate_output_byte_stable(tmp_path):
    outs = []
    for i in range(2):
        p = tmp_path / f"s{i}.csv"
        main(["simulate", "--config", BASE_CFG, "--trace", f"core0={STREAM}", "--seed", "3", "--stats", str(p)])
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_trace_spec_errors():
    with pytest.raises(TraceError):
        parse_trace_specs(["core5=x.tr"], 2, 1 << 20)
    with pytest.raises(TraceError):
        parse_trace_specs(["x.tr"], 2, 1 << 20)


def test_verify_witnesses(capsys):
    assert main(["verify", "--suite", "witnesses"]) == 0
    out = capsys.readouterr().out
    assert "witnesses: PASS" in out
    assert sum(ch in out for ch in ("CACHE_SET", "MSHR_EXHAUST", "DRAM_BACKPRESSURE", "ENTRY_PORT",
                                   "DOWNGRADE_LOGIC", "UQ_HEADLINE", "DQ_TWO_CYCLE")) == 7


def test_verify_mutated_arbiter_fails(capsys):
    assert main(["verify", "--suite", "witnesses", "--secure-variant", "secure-RR_ARBITER"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "ENTRY_PORT" in out


def test_verify_coherence():
    assert main(["verify", "--suite", "coherence", "--ops", "10000", "--seed", "7"]) == 0


@pytest.mark.parametrize("suite", ["purge", "primeprobe", "directional"])
def test_verify_other_suites(suite):
    assert main(["verify", "--suite", suite]) == 0


def test_verify_small_noninterference():
    assert main(["verify", "--suite", "noninterference", "--pairs", "3"]) == 0


def test_sweep_two_variants(tmp_path):
    out = tmp_path / "o.csv"
    assert main(["sweep", "--config", BASE_CFG, "--variants", "base,part", "--trace", f"s={STREAM}",
                 "--out", str(out)]) == 0
    rows = stats_rows(out.read_text())
    assert [r["variant"] for r in rows] == ["BASE", "PART"]
    assert rows[0]["cycles_vs_base"] == "1.0"
    assert float(rows[1]["cycles_vs_base"]) > 0


def test_sweep_fpma_flags(capsys):
    assert main(["sweep", "--config", BASE_CFG, "--variants", "fpma", "--trace", STREAM]) == 0
    rows = stats_rows(capsys.readouterr().out)
    assert rows[0]["variant"] in ("F+P+M+A", "FPMA", "fpma") or set(rows[0]["variant"].split("+")) == {"ARB", "FLUSH", "MISS", "PART"}


def test_sweep_empty_trace_set():
    assert main(["sweep", "--config", BASE_CFG, "--variants", "base"]) == 2


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "mi6sim.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
