"""Command line entry point for sweeps and convergence traces."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .channels import dbm_to_watts, generate_channels
from .experiments import (ExperimentConfig, _models, channel_rng, emit_figure_data, run_convergence_trace,
                          run_experiment, solver_rng)
from .model import ProblemSpec, Protocol
from .penalty import PenaltyOptions


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="star-ris", description="Transmit power minimisation sweeps.")
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--sweep", help="sweep as VAR=v1,v2,... with VAR in M, N, sinr_db")
    p.add_argument("--protocol", type=_csv_list, help="comma separated protocols, e.g. TS,ES,MS")
    p.add_argument("--scenario", type=_csv_list, help="UNICAST, MULTICAST or both")
    p.add_argument("--realizations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--trace", action="store_true",
                   help="write ES/MS convergence traces for realization 0 instead of a sweep")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> ExperimentConfig:
    data = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    if args.sweep:
        var, _, values = args.sweep.partition("=")
        data["sweep"] = var.strip()
        if values:
            data["values"] = [float(v) if var.strip() == "sinr_db" else int(v) for v in _csv_list(values)]
    overrides = {"protocols": args.protocol, "scenarios": args.scenario, "realizations": args.realizations,
                 "seed": args.seed, "out": str(args.out) if args.out else None, "workers": args.workers}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def write_traces(config: ExperimentConfig) -> list[Path]:
    value = config.values[0]
    N, M, sinr_db = config.point(value)
    geometry, fading = _models(config, M)
    options = PenaltyOptions(**config.penalty)
    paths = []
    for scenario in config.scenarios:
        for name in config.protocols:
            protocol = Protocol(name)
            if protocol not in (Protocol.ES, Protocol.MS):
                continue
            spec = ProblemSpec.from_sinr_db(N, M, protocol, scenario, sinr_db, dbm_to_watts(config.noise_dbm))
            channels = generate_channels(spec, geometry, fading, channel_rng(config, 0, value))
            path = Path(config.out) / f"trace_{scenario.lower()}_{name.lower()}.csv"
            run_convergence_trace(spec, channels, options, path, solver_rng(config, 0, value, protocol))
            paths.append(path)
    return paths


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.trace:
        for path in write_traces(config):
            print(path)
        return 0
    results = run_experiment(config)
    paths = emit_figure_data(results, config.out)
    for row in results.table:
        print(f"{config.sweep}={row['sweep_value']} {row['scenario']:9s} {row['protocol']:8s} "
              f"{row['mean_power_dbm']:8.3f} dBm  ok={row['n_ok']} fail={row['n_fail']}")
    print(f"wrote {paths['figure']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
