import csv
import json
import random
import socket
import threading
from fractions import Fraction

import pytest

from nvodsched.cli import main
from nvodsched.core import VideoSpec
from nvodsched.harness import all_figures, figure_buffer, figure_channels, figure_redundant, figure_wait, fmt6, write_figures

V = VideoSpec(8 * 10**7, 10**4)
D = Fraction(8000)


def test_fmt6():
    assert fmt6(Fraction(8000, 7)) == "1142.86"
    assert fmt6(Fraction(15, 2)) == "7.5"
    assert fmt6(0) == "0" and fmt6(12) == "12"
    assert fmt6(Fraction(1, 3)) == "0.333333"


def test_figure_wait():
    ds = figure_wait(V, range(1, 9))
    assert ds.column("wait_ctfb_s") == [0] * 8
    assert ds.rows[2] == (3, D / 7, 1000, 0)
    fb, dp = ds.column("wait_fb_s"), ds.column("wait_dpfb_s")
    assert all(a > b for a, b in zip(fb, fb[1:])) and all(a > b for a, b in zip(dp, dp[1:]))


def test_figure_channels():
    ds = figure_channels(V, [500, 8000])
    assert ds.rows == ((500, 5, 4, 2), (8000, 1, 1, 2))


def test_figure_redundant():
    ds = figure_redundant(V, range(2, 9))
    assert ds.column("red_dpfb") == [2 ** (k - 2) - 1 for k in range(2, 9)]
    assert set(ds.column("red_fb")) == set(ds.column("red_ctfb")) == {0}


def test_figure_buffer():
    ds = figure_buffer(V, range(2, 9))
    assert set(ds.column("buf_ctfb_formula_MB")) == {Fraction(15, 2)}
    assert ds.column("buf_ctfb_sim_MB") == [Fraction(2 ** (k - 1) + 1, 2**k) * 10 for k in range(2, 9)]
    assert any("discrepancy" in n for n in ds.notes)


def test_write_figures_deterministic(tmp_path):
    a = write_figures(tmp_path / "a", all_figures(V, 8))
    b = write_figures(tmp_path / "b", all_figures(V, 8))
    assert [p.name for p in a] == ["fig6.csv", "fig7.csv", "fig8.csv", "fig9.csv"]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_cli_figures(tmp_path, capsys):
    assert main(["figures", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "fig6.csv")
    assert rows[2] == {"k": "3", "wait_fb_s": "1142.86", "wait_dpfb_s": "1000", "wait_ctfb_s": "0"}
    assert "discrepancy" in (tmp_path / "fig9.csv").read_text()


def test_cli_schedule(tmp_path, capsys):
    assert main(["schedule", "--scheme", "dpfb", "-k", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "slot,channel,segment_index" and len(out) == 1 + 4 * 3
    path = tmp_path / "s.csv"
    assert main(["schedule", "--scheme", "fb", "-k", "2", "--slots", "2", "--csv", str(path)]) == 0
    assert path.read_text().splitlines()[1:] == ["1,0,1", "1,1,2", "2,0,1", "2,1,3"]


def test_cli_analyze(capsys):
    assert main(["analyze", "--scheme", "ctfb", "-k", "4", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["segment_duration_s"] == "500" and doc["max_buffer_formula_MB"] == "7.5"
    assert doc["transmitted_distinct_count"] == 12


def test_cli_simulate(tmp_path, capsys):
    trace = tmp_path / "t.csv"
    assert main(["simulate", "--scheme", "fb", "-k", "3", "--trace", str(trace)]) == 0
    assert json.loads(trace.with_suffix(".json").read_text())["max_resident_s"]
    assert "starvation: none" in capsys.readouterr().out
    rc = main(["simulate", "--scheme", "fb", "-k", "2", "--transition", "2:3", "--trace", str(trace), "--fail-on-starve"])
    assert rc == 3


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["analyze", "--scheme", "dpfb", "-k", "2", "--beta", "3"]) == 1
    assert main(["analyze", "--scheme", "nope", "-k", "2"]) == 1
    assert main(["figures", "--out", "/proc/forbidden/x"]) == 2
    assert main(["serve", "--scheme", "fb", "-k", "2", "--input", str(tmp_path / "missing"), "--base-port", "1"]) == 2
    assert main(["--config", str(tmp_path / "missing.cfg"), "analyze"]) == 2
    assert main(["--help"]) == 0


def test_cli_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nscheme = ctfb\nk = 4\njson = true\n")
    assert main(["--config", str(cfg), "analyze"]) == 0
    assert json.loads(capsys.readouterr().out)["channel_count"] == 2
    # flags override the file
    assert main(["--config", str(cfg), "analyze", "-k", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["segment_duration_s"] == "250"


def free_base_port(n):
    for _ in range(50):
        base = random.randrange(20000, 60000)
        socks = []
        try:
            for i in range(n):
                s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                socks.append(s)
                s.bind(("127.0.0.1", base + i))
            return base
        except OSError:
            continue
        finally:
            for s in socks:
                s.close()
    pytest.skip("no free port range")


def test_cli_serve_and_watch(tmp_path):
    data = bytes(random.Random(3).randrange(256) for _ in range(8192))
    src, pre, out = tmp_path / "v.bin", tmp_path / "pre.bin", tmp_path / "out.bin"
    src.write_bytes(data)
    base = free_base_port(2)
    args = ["serve", "--scheme", "ctfb", "-k", "3", "--input", str(src), "--base-port", str(base),
            "--pace", "scale", "100", "--slots", "300", "--export-preload", str(pre)]
    server = threading.Thread(target=main, args=(args,), daemon=True)
    server.start()
    # the preload file is written before the server binds
    for _ in range(100):
        if pre.exists():
            break
        server.join(0.05)
    rc = main(["watch", "--base-port", str(base), "--out", str(out), "--preload", str(pre), "--timeout", "20"])
    server.join(30)
    assert rc == 0 and out.read_bytes() == data
