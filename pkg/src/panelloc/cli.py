"""Command-line front end.

Subcommands: ``simulate`` (Monte-Carlo runs on one scenario), ``sweep``
(grid evaluation), ``latency`` (cost-model tables) and ``serve-panel`` /
``collect`` (socket daisy-chain nodes).  Log verbosity comes from the
``PANELLOC_LOG`` environment variable (debug / info / warning).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path


def _setup_logging() -> None:
    level = os.environ.get("PANELLOC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _parse_hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _cmd_simulate(args) -> int:
    from .harness import (
        run_monte_carlo,
        rmse_scalar,
        write_rmse_time_csv,
        write_timeseries_csv,
    )
    from .plots import render_plots
    from .scenario import default_scenario, load_scenario
    from .spa import SpaConfig

    scn = load_scenario(args.scenario) if args.scenario else default_scenario()
    cfg = SpaConfig(n_particles=args.particles, mode=args.mode)
    results = run_monte_carlo(scn, cfg, n_runs=args.runs, seed=args.seed, n_steps=args.steps, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_timeseries_csv(results, out / "timeseries.csv")
    write_rmse_time_csv(results, out / "rmse_time.csv")
    for r in results:
        (out / f"estimates_run{r.run_id:03d}.jsonl").write_text("\n".join(r.estimate_lines) + "\n", encoding="utf-8")
    summary = {
        "rmse_m": rmse_scalar(results),
        "runs": len(results),
        "diverged": sum(r.diverged for r in results),
        "mode": args.mode,
        "seed": args.seed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    if not args.no_plots:
        render_plots(out / "rmse_time.csv", out)
    print(json.dumps(summary))
    return 0


def _cmd_sweep(args) -> int:
    from .harness import SweepSpec, run_sweep, write_sweep_csv
    from .plots import render_plots

    spec = SweepSpec.from_json(args.spec) if args.spec else SweepSpec()
    rows = run_sweep(spec, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "sweep.csv")
    if not args.no_plots:
        render_plots(out / "sweep.csv", out)
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return 0


def _cmd_latency(args) -> int:
    import csv

    from .latency import LatencyParams, chain_latency

    params = LatencyParams.from_json(args.params) if args.params else LatencyParams()
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8")) if args.grid else {}
    j_grid = grid.get("J", [2, 4, 8, 12, 24, 48])
    np_grid = grid.get("n_particles", [2048, 4096, 8192, 16384])
    n_meas = int(grid.get("n_meas", 3))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["J", "N_p", "total_s"])
        for j in j_grid:
            for n_p in np_grid:
                report = chain_latency(j, [n_meas] * j, n_p, params)
                writer.writerow([j, n_p, repr(report.total_seconds)])
    print(f"wrote latency table to {args.out}")
    return 0


def _cmd_serve_panel(args) -> int:
    from .chain import serve_panel

    server = serve_panel(_parse_hostport(args.bind), args.panel_config, next_hop=_parse_hostport(args.next))
    print(f"panel {server.node.panel_id} serving on {server.address}, forwarding to {server.next_hop}")
    try:
        server.join(timeout=None)
    except KeyboardInterrupt:
        server.stop()
    if server.error is not None:
        print(f"panel stopped with error: {server.error}", file=sys.stderr)
        return 1
    return 0


def _cmd_collect(args) -> int:
    from .chain import Collector

    collector = Collector(
        _parse_hostport(args.bind),
        head=_parse_hostport(args.head),
        n_steps=args.steps,
        step_timeout=args.timeout,
    ).start()
    collector.join(timeout=None)
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for line in collector.lines:
            print(line, file=sink)
    finally:
        if args.out:
            sink.close()
    if collector.error:
        print(f"collector stopped with error: {collector.error}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panelloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte-Carlo runs on one scenario")
    p.add_argument("--scenario", help="scenario JSON file (omit for the default scene)")
    p.add_argument("--mode", choices=["los", "mpc"], default="los")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None, help="truncate the trajectory to this many steps")
    p.add_argument("--particles", type=int, default=4096)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="grid evaluation over J / N_a / N_p / B_w / mode")
    p.add_argument("--spec", help="sweep spec JSON file (omit for stock grids)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("latency", help="evaluate the chain latency model over a grid")
    p.add_argument("--params", help="latency params JSON file (omit for the illustrative profile)")
    p.add_argument("--grid", help="grid JSON file with keys J, n_particles, n_meas")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_latency)

    p = sub.add_parser("serve-panel", help="run one panel node of a socket daisy chain")
    p.add_argument("--bind", required=True, help="HOST:PORT to listen on")
    p.add_argument("--next", required=True, help="HOST:PORT of the next hop (panel or collector)")
    p.add_argument("--panel-config", required=True, help="panel config JSON file")
    p.set_defaults(func=_cmd_serve_panel)

    p = sub.add_parser("collect", help="run the chain collector (tail consumer + head loopback)")
    p.add_argument("--bind", required=True, help="HOST:PORT to listen on")
    p.add_argument("--head", required=True, help="HOST:PORT of the head panel")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", help="JSON-lines output file (default stdout)")
    p.set_defaults(func=_cmd_collect)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
