from __future__ import annotations

import os
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from privagg.afe import LinReg, Sum, Variance
from privagg.cli import main, read_inputs
from privagg.errors import ConfigurationError
from privagg.harness import plaintext_oracle

DATA = Path(__file__).parent / "data"


def _run(*args, timeout=60):
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    return subprocess.run([sys.executable, "-m", "privagg", *args], capture_output=True, text=True,
                          timeout=timeout, env=env)


@pytest.mark.parametrize("name,extra", [
    ("sum", []),
    ("variance", []),
    ("linreg", []),
    ("sum_adv", ["--adversaries", str(DATA / "sum.adversaries")]),
    ("sum_noval", ["--adversaries", str(DATA / "sum.adversaries"), "--no-validate"]),
])
def test_sim_golden(name, extra, capsys):
    base = name.split("_")[0]
    argv = ["sim", "--config", str(DATA / f"{base}.cfg"), "--inputs", str(DATA / f"{base}.inputs"),
            "--seed", "7", *extra]
    assert main(argv) == 0
    assert capsys.readouterr().out == (DATA / f"{name}.golden").read_text()


@pytest.mark.parametrize("name,kind", [("sum", Sum(4)), ("variance", Variance(6)), ("linreg", LinReg(2, 4))])
def test_goldens_agree_with_oracle(name, kind):
    values = read_inputs(kind, str(DATA / f"{name}.inputs"))
    golden = (DATA / f"{name}.golden").read_text()
    assert f"aggregate={plaintext_oracle(kind, values).summary()}\n" in golden


def test_read_inputs_errors(tmp_path):
    bad = tmp_path / "bad.inputs"
    bad.write_text("1\n99\n")
    with pytest.raises(ConfigurationError, match="bad.inputs:2"):
        read_inputs(Sum(4), str(bad))
    with pytest.raises(ConfigurationError):
        read_inputs(Sum(4), str(tmp_path / "missing"))


def test_usage_and_parse_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["--help"]) == 0
    assert main(["frobnicate"]) == 2
    assert main(["sim", "--config", str(tmp_path / "nope.cfg"), "--inputs", "x", "--seed", "1"]) == 2
    bad_adv = tmp_path / "adv"
    bad_adv.write_text("client teleport 0\n")
    argv = ["sim", "--config", str(DATA / "sum.cfg"), "--inputs", str(DATA / "sum.inputs"),
            "--adversaries", str(bad_adv), "--seed", "1"]
    assert main(argv) == 2
    assert "teleport" in capsys.readouterr().err


def test_help_exits_zero():
    for cmd in ("server", "client", "publish", "sim"):
        proc = _run(cmd, "--help")
        assert proc.returncode == 0 and "--config" in proc.stdout


# -- networked deployment


def _free_ports(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def _write_cfg(tmp_path, ports, extra=""):
    cfg = tmp_path / "net.cfg"
    addrs = ",".join(f"127.0.0.1:{p}" for p in ports)
    cfg.write_text(f"field = goldilocks\nservers = {len(ports)}\nkind = sum:b=4\n"
                   f"timeout = 2.0\naddresses = {addrs}\n{extra}")
    return cfg


def _start_server(cfg, i, snap):
    proc = subprocess.Popen([sys.executable, "-m", "privagg", "server", "--config", str(cfg),
                             "--id", str(i), "--snapshot", str(snap)],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
                            env=dict(os.environ, PYTHONUNBUFFERED="1"))
    line = proc.stdout.readline()
    assert f"server {i} listening" in line, proc.stderr.read()
    return proc


@pytest.fixture
def deployment(tmp_path):
    ports = _free_ports(3)
    cfg = _write_cfg(tmp_path, ports)
    procs = [_start_server(cfg, i, tmp_path / f"s{i}.snap") for i in range(3)]
    time.sleep(0.5)  # followers dial the leader
    yield cfg, tmp_path, procs
    for p in procs:
        p.terminate()
    for p in procs:
        try:
            p.wait(timeout=5)
        except subprocess.TimeoutExpired:
            p.kill()


def test_networked_end_to_end(deployment):
    cfg, tmp_path, procs = deployment
    out = _run("client", "--config", str(cfg), "--value", "5", "--count", "3", "--seed", "1")
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip().endswith("accepted=3 submitted=3")
    out = _run("client", "--config", str(cfg), "--value", "2", "--forge", "bad-triple alpha=1",
               "--count", "2", "--seed", "2")
    assert out.returncode == 5 and "accepted=0 submitted=2" in out.stdout
    out = _run("client", "--config", str(cfg), "--value", "99")
    assert out.returncode == 2 and "DomainError" in out.stderr
    out = _run("client", "--config", str(cfg), "--value", "1", "--forge", "garbage-upload server=2",
               "--seed", "3", "--timeout", "10")
    assert out.returncode == 5, out.stdout + out.stderr
    out = _run("publish", "--config", str(cfg))
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "sum=15"
    for p in procs:
        p.terminate()
        p.wait(timeout=5)
    snaps = [str(tmp_path / f"s{i}.snap") for i in range(3)]
    out = _run("publish", "--config", str(cfg), "--snapshots", *snaps)
    assert out.returncode == 0 and out.stdout.strip() == "sum=15"


def test_server_exit_codes(tmp_path):
    ports = _free_ports(2)
    cfg = _write_cfg(tmp_path, ports)
    snap = tmp_path / "bad.snap"
    snap.write_bytes(b"XXXX1\x00\x00")
    out = _run("server", "--config", str(cfg), "--id", "0", "--snapshot", str(snap))
    assert out.returncode == 4
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    try:
        port = blocker.getsockname()[1]
        out = _run("server", "--config", str(cfg), "--id", "0", "--listen", f"127.0.0.1:{port}")
        assert out.returncode == 3 and "cannot bind" in out.stderr
    finally:
        blocker.close()
    out = _run("server", "--config", str(tmp_path / "missing.cfg"))
    assert out.returncode == 2


def test_publish_unreachable_and_bad_snapshots(tmp_path):
    cfg = _write_cfg(tmp_path, _free_ports(2))
    out = _run("publish", "--config", str(cfg), "--timeout", "0.5")
    assert out.returncode == 1
    out = _run("publish", "--config", str(cfg), "--snapshots", "one")
    assert out.returncode == 2
    bad = tmp_path / "x.snap"
    bad.write_bytes(b"garbage")
    out = _run("publish", "--config", str(cfg), "--snapshots", str(bad), str(bad))
    assert out.returncode == 4
