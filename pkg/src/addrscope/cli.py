"""addrscope command line interface.

Subcommands:

- monitor:  connect to peers and append wire events to a JSON-lines log
- analyze:  run the daily set-algebra pipeline over one or two logs
- simulate: run the gossip simulator from a config file
- evaluate: score a simulated monitor log against its ground truth

Exit codes: 0 success, 1 usage error, 2 runtime failure.
Set ADDRSCOPE_LOG_LEVEL (DEBUG/INFO/WARNING/ERROR) to control logging.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

log = logging.getLogger("addrscope")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this project uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_duration_s(text: str) -> float:
    """Parse '120', '120s', '5m', '6h' into seconds."""
    text = text.strip().lower()
    scale = 1.0
    if text and text[-1] in "smh":
        scale = {"s": 1.0, "m": 60.0, "h": 3600.0}[text[-1]]
        text = text[:-1]
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("duration must be positive")
    return value * scale


def _parse_magic(text: str) -> bytes:
    raw = bytes.fromhex(text)
    if len(raw) != 4:
        raise argparse.ArgumentTypeError("magic must be 8 hex digits")
    return raw


def build_parser() -> _Parser:
    parser = _Parser(prog="addrscope", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("monitor", help="run a passive listening node")
    p.add_argument("--seeds", required=True, help="file with one host:port per line")
    p.add_argument("--log", required=True, help="JSON-lines event log to append to")
    p.add_argument("--getaddr-interval", type=_parse_duration_s, default=120.0, metavar="DUR")
    p.add_argument("--reconnect-limit", type=_parse_duration_s, default=6 * 3600.0, metavar="DUR")
    p.add_argument("--magic", type=_parse_magic, default=None, metavar="HEX8")

    p = sub.add_parser("analyze", help="daily set-algebra analysis of a monitor log")
    p.add_argument("--log", required=True, help="monitor event log")
    p.add_argument("--log2", help="second monitor log for overlap reporting")
    p.add_argument("--inbound", help="inbound-connection log for validation rates")
    p.add_argument("--out", required=True, help="output directory for CSV reports")
    p.add_argument("--subnet-prefix", type=int, default=8, choices=(8, 16, 24))

    p = sub.add_parser("simulate", help="run the gossip simulator")
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("evaluate", help="score a simulation run against ground truth")
    p.add_argument("--sim-dir", required=True, help="simulate output directory")
    p.add_argument("--out", help="recall CSV path (default: <sim-dir>/recall.csv)")

    return parser


def _cmd_monitor(args) -> int:
    from .codec import MAINNET_MAGIC, NetworkAddress
    from .monitor import MonitorConfig, MonitorCore
    from .tcpdriver import TcpDriver

    seeds = []
    with open(args.seeds, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            host, _, port = line.rpartition(":")
            seeds.append((str(NetworkAddress.from_string(host.strip("[]"))), int(port)))
    if not seeds:
        log.error("no seed addresses in %s", args.seeds)
        return EXIT_RUNTIME

    config = MonitorConfig(
        seed_addresses=seeds,
        getaddr_interval_s=args.getaddr_interval,
        reconnect_rate_limit_s=args.reconnect_limit,
        magic=args.magic or MAINNET_MAGIC,
    )
    from .events import LogWriter

    with open(args.log, "a", encoding="utf-8") as fh:
        core = MonitorCore(config, LogWriter(fh))
        driver = TcpDriver(core)
        log.info("monitoring %d seeds, logging to %s", len(seeds), args.log)
        try:
            driver.run()
        except KeyboardInterrupt:
            log.info("interrupted, closing")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    from . import analysis
    from .events import ReadStats, read_log

    os.makedirs(args.out, exist_ok=True)
    stats = ReadStats()
    events = list(read_log(args.log, stats))
    if stats.malformed:
        log.warning("%d malformed records skipped in %s", stats.malformed, args.log)
    estimates = analysis.analyze_events(events)
    analysis.write_daily_csv(os.path.join(args.out, "daily.csv"), estimates)
    subnet_reports = [
        analysis.subnet_concentration(e.A, args.subnet_prefix, e.day) for e in estimates
    ]
    analysis.write_subnet_csv(os.path.join(args.out, "subnets.csv"), subnet_reports)

    if args.log2:
        stats2 = ReadStats()
        events2 = list(read_log(args.log2, stats2))
        estimates2 = analysis.analyze_events(events2)
        reports = analysis.overlap_reports(estimates, estimates2)
        analysis.write_overlap_csv(os.path.join(args.out, "overlap.csv"), reports)

    if args.inbound:
        stats3 = ReadStats()
        inbound = list(read_log(args.inbound, stats3))
        rows = analysis.incoming_validation(inbound, estimates)
        analysis.write_incoming_csv(os.path.join(args.out, "incoming.csv"), rows)

    log.info("wrote reports for %d days to %s", len(estimates), args.out)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    from .sim import Simulation, load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    paths = Simulation(cfg, args.out).run()
    log.info("simulation complete: %s", paths.stats_json)
    print(paths.out_dir)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .sim import evaluate_run, write_recall_csv

    monitor_log = os.path.join(args.sim_dir, "monitor1.log")
    truth = os.path.join(args.sim_dir, "ground_truth.csv")
    scores = evaluate_run(monitor_log, truth)
    out = args.out or os.path.join(args.sim_dir, "recall.csv")
    write_recall_csv(scores, out)
    print(out)
    return EXIT_OK


_COMMANDS = {
    "monitor": _cmd_monitor,
    "analyze": _cmd_analyze,
    "simulate": _cmd_simulate,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("ADDRSCOPE_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
