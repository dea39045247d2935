"""Command-line entry points.

Exit codes are stable: 0 success, 1 runtime/network failure, 2 config or
input parse error, 3 bind error, 4 corrupt snapshot, 5 nothing accepted
(client) or the batch could not be published.

Domain literals, one per line in input files: integers for sum, mean,
variance, minmax, approx-minmax, freq and countmin (countmin also takes
arbitrary strings); ``0``/``1``/``true``/``false`` for or/and; bit strings
such as ``0110`` for popular; comma-separated integers ``x1,...,xd,y`` for
linreg and rsquared.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys

from privagg.errors import ConfigurationError, PrivaggError, SnapshotCorrupt
from privagg.protocol import DeploymentConfig, SnapshotLog, publish

EXIT_RUNTIME = 1
EXIT_PARSE = 2
EXIT_BIND = 3
EXIT_SNAPSHOT = 4
EXIT_REJECTED = 5


def _setup_logging() -> None:
    level = os.environ.get("PRIVAGG_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_config(path: str) -> DeploymentConfig:
    return DeploymentConfig.load(path)


def read_inputs(kind, path: str, field=None) -> list:
    """One domain literal per line; blank lines and ``#`` comments are skipped.

    Every value is test-encoded (in ``field``, default the 64-bit field) so
    out-of-domain lines fail here rather than as a silent client error.
    """
    from privagg.field import GOLDILOCKS
    from privagg.sharing import Rng

    field = field or GOLDILOCKS
    rng = Rng(0)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read inputs {path}: {exc}") from None
    values = []
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            value = kind.parse_value(line)
            kind.encode(field, value, rng)
            values.append(value)
        except (ValueError, PrivaggError) as exc:
            raise ConfigurationError(f"{path}:{n}: {exc}") from None
    return values


def read_adversaries(path: str) -> list:
    from privagg.harness import AdversarySpec

    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read adversaries {path}: {exc}") from None
    specs = []
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            try:
                specs.append(AdversarySpec.parse(line))
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{n}: {exc}") from None
    return specs


# ---------------------------------------------------------------- server


def server_main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="privagg-server", description="Run one aggregation server.")
    ap.add_argument("--config", required=True, help="deployment config file")
    ap.add_argument("--id", type=int, default=None,
                    help="server id (default: the leader, or the entry matching --listen)")
    ap.add_argument("--listen", help="host:port to bind (default: this id's configured address)")
    ap.add_argument("--snapshot", help="append-only verdict log; resumed from on start")
    args = ap.parse_args(argv)
    _setup_logging()
    from privagg.netserver import NetServer

    try:
        cfg = _load_config(args.config)
        sid = args.id
        if sid is None:
            sid = cfg.addresses.index(args.listen) if args.listen in cfg.addresses else cfg.leader
        srv = NetServer(cfg, sid, listen=args.listen, snapshot=args.snapshot)
    except SnapshotCorrupt as exc:
        return _fail(EXIT_SNAPSHOT, f"snapshot: {exc}")
    except (ConfigurationError, ValueError) as exc:
        return _fail(EXIT_PARSE, str(exc))
    try:
        srv.start()
    except OSError as exc:
        return _fail(EXIT_BIND, f"cannot bind {args.listen or cfg.addresses[sid]}: {exc}")
    signal.signal(signal.SIGTERM, lambda *_: srv.stop())
    host, port = srv.address
    print(f"server {sid} listening on {host}:{port}", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        srv.stop()
    return 0


# ---------------------------------------------------------------- client


def client_main(argv=None) -> int:
    from privagg.harness import CLIENT_STRATEGIES

    ap = argparse.ArgumentParser(prog="privagg-client", description="Submit values to the servers.")
    ap.add_argument("--config", required=True)
    ap.add_argument("--value", required=True, help="domain literal for the configured kind")
    ap.add_argument("--count", type=int, default=1, help="number of submissions")
    ap.add_argument("--forge", metavar="STRATEGY",
                    help="submit adversarially; one of " + ", ".join(CLIENT_STRATEGIES)
                    + " (params as 'name key=value ...')")
    ap.add_argument("--seed", help="deterministic client randomness")
    ap.add_argument("--timeout", type=float, help="seconds to wait for each verdict")
    args = ap.parse_args(argv)
    _setup_logging()
    from privagg.harness import AdversarySpec, forge_submission, garble_frame
    from privagg.netserver import Client
    from privagg.sharing import Rng

    try:
        cfg = _load_config(args.config)
        x = cfg.kind.parse_value(args.value)
        spec = None
        if args.forge:
            parts = args.forge.split()
            spec = AdversarySpec.parse(" ".join(["client", parts[0], "0"] + parts[1:]))
        rng = Rng(args.seed) if args.seed is not None else Rng()
        if args.count < 1:
            raise ConfigurationError("--count must be positive")
        subs = [forge_submission(cfg, x, spec, rng) for _ in range(args.count)]
    except (ConfigurationError, ValueError, PrivaggError) as exc:
        return _fail(EXIT_PARSE, f"{type(exc).__name__}: {exc}")
    corrupt = None
    if spec is not None and spec.strategy == "garbage-upload":
        corrupt = {spec.p.get("server", 1): garble_frame}
    client = Client(cfg, rng, args.timeout)
    accepted = 0
    try:
        for i, sub in enumerate(subs):
            try:
                ok = client.send_submission(sub, corrupt)
            except (OSError, PrivaggError) as exc:
                print(f"submission {i} {sub.nonce.hex()} error {type(exc).__name__}", flush=True)
                continue
            accepted += ok
            print(f"submission {i} {sub.nonce.hex()} {'accepted' if ok else 'rejected'}", flush=True)
    finally:
        client.close()
    print(f"accepted={accepted} submitted={len(subs)}")
    return 0 if accepted else EXIT_REJECTED


# ---------------------------------------------------------------- publisher


def publish_main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="privagg-publish",
                                 description="Combine every server's accumulator and decode.")
    ap.add_argument("--config", required=True)
    ap.add_argument("--snapshots", nargs="+", metavar="PATH",
                    help="decode offline from each server's snapshot (in server-id order)")
    ap.add_argument("--timeout", type=float)
    args = ap.parse_args(argv)
    _setup_logging()
    try:
        cfg = _load_config(args.config)
        if args.snapshots and len(args.snapshots) != cfg.servers:
            raise ConfigurationError(f"need {cfg.servers} snapshots, got {len(args.snapshots)}")
    except ConfigurationError as exc:
        return _fail(EXIT_PARSE, str(exc))
    try:
        if args.snapshots:
            accs = [SnapshotLog(p, cfg).load()[0] for p in args.snapshots]
            result = publish(accs, cfg)
        else:
            from privagg.netserver import publish_remote

            result = publish_remote(cfg, args.timeout)
    except SnapshotCorrupt as exc:
        return _fail(EXIT_SNAPSHOT, f"snapshot: {exc}")
    except PrivaggError as exc:
        return _fail(EXIT_REJECTED, f"{type(exc).__name__}: {exc}")
    except OSError as exc:
        return _fail(EXIT_RUNTIME, f"cannot reach leader: {exc}")
    print(result.summary())
    return 0


# ---------------------------------------------------------------- simulator


def sim_main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="privagg-sim",
                                 description="Simulate a deployment in-process and print a report.")
    ap.add_argument("--config", required=True)
    ap.add_argument("--inputs", required=True, help="one domain literal per line")
    ap.add_argument("--adversaries", help="one 'role strategy target [key=value ...]' per line")
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--no-validate", action="store_true",
                    help="accept every submission without verification (negative control)")
    args = ap.parse_args(argv)
    _setup_logging()
    from privagg.harness import run_simulation

    try:
        cfg = _load_config(args.config)
        inputs = read_inputs(cfg.kind, args.inputs, cfg.field)
        advs = read_adversaries(args.adversaries) if args.adversaries else []
    except ConfigurationError as exc:
        return _fail(EXIT_PARSE, str(exc))
    report = run_simulation(cfg, inputs, advs, args.seed, validate=not args.no_validate)
    sys.stdout.write(report.summary())
    return 0


COMMANDS = {"server": server_main, "client": client_main, "publish": publish_main, "sim": sim_main}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in COMMANDS:
        print("usage: python -m privagg {" + ",".join(COMMANDS) + "} [options]", file=sys.stderr)
        return 0 if argv and argv[0] in ("-h", "--help") else EXIT_PARSE
    return COMMANDS[argv[0]](argv[1:])
