"""Monte Carlo sweeps over M, N or the SINR target, and their tabular outputs."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from .baselines import solve_conventional_ris, solve_ues
from .channels import FadingConfig, GeometryConfig, dbm_to_watts, generate_channels, watts_to_dbm
from .model import ContractViolation, ProblemSpec, Protocol, Scenario, Status
from .penalty import PenaltyOptions, solve_penalty
from .time_switching import TSOptions, solve_ts

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_VARIABLES = ("M", "N", "sinr_db")
FIGURE_COLUMNS = ("sweep_value", "protocol", "scenario", "mean_power_dbm", "stderr_dbm", "n_ok", "n_fail")
RUN_COLUMNS = ("sweep_value", "protocol", "scenario", "realization", "power_w", "power_dbm", "ok",
               "status", "outer_iterations", "inner_iterations", "min_rate_margin", "message")
# stable integer codes keep solver streams fixed when the protocol list changes
PROTOCOL_CODES = {p: i for i, p in enumerate(Protocol)}
QOS_TOLERANCE = 1e-4


@dataclass
class ExperimentConfig:
    """One sweep; every field round-trips through JSON."""

    sweep: str = "M"
    values: list = field(default_factory=lambda: [6, 8, 10])
    N: int = 2
    M: int = 10
    sinr_db: float = 0.0
    scenarios: list = field(default_factory=lambda: ["UNICAST"])
    protocols: list = field(default_factory=lambda: ["TS", "ES", "MS", "UES", "CONV_RIS"])
    realizations: int = 20
    seed: int = 0
    out: str = "results"
    noise_dbm: float = -90.0
    penalty: dict = field(default_factory=dict)
    ts: dict = field(default_factory=dict)
    geometry: dict = field(default_factory=dict)
    fading: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if self.sweep not in SWEEP_VARIABLES:
            raise ContractViolation(f"sweep must be one of {SWEEP_VARIABLES}")
        cast = float if self.sweep == "sinr_db" else int
        self.values = [cast(v) for v in self.values]
        if not self.values:
            raise ContractViolation("sweep values must be non-empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ContractViolation("sweep values must be strictly increasing")
        if self.realizations < 1:
            raise ContractViolation("need at least one realization")
        self.scenarios = [Scenario(s).value for s in self.scenarios]
        self.protocols = [Protocol(p).value for p in self.protocols]
        if self.workers < 1:
            raise ContractViolation("workers must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def point(self, value) -> tuple[int, int, float]:
        """``(N, M, sinr_db)`` at one sweep value."""
        params = {"N": self.N, "M": self.M, "sinr_db": self.sinr_db}
        params[self.sweep] = value
        return int(params["N"]), int(params["M"]), float(params["sinr_db"])


def realization_entropy(config: ExperimentConfig, index: int, value) -> list[int]:
    """Seed words from the base seed, realization index and sweep point."""
    digest = hashlib.sha256(f"{config.sweep}={value!r}".encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return [int(config.seed), int(index), *words]


def channel_rng(config: ExperimentConfig, index: int, value) -> np.random.Generator:
    return np.random.default_rng(realization_entropy(config, index, value) + [0])


def solver_rng(config: ExperimentConfig, index: int, value, protocol: Protocol) -> np.random.Generator:
    return np.random.default_rng(realization_entropy(config, index, value) + [1, PROTOCOL_CODES[protocol]])


def solve(spec: ProblemSpec, channels, penalty_options: PenaltyOptions, ts_options: TSOptions,
          rng: np.random.Generator):
    """Dispatch to the solver for ``spec.protocol``."""
    p = spec.protocol
    if p is Protocol.TS:
        return solve_ts(spec, channels, ts_options, rng)
    if p is Protocol.CONV_RIS:
        return solve_conventional_ris(spec, channels, penalty_options, rng)
    if p is Protocol.UES:
        return solve_ues(spec, channels, penalty_options, rng)
    return solve_penalty(spec, channels, penalty_options, rng=rng)


def _models(config: ExperimentConfig, M: int):
    geometry = GeometryConfig(**{"M": M, **config.geometry})
    fading = FadingConfig.from_db(**config.fading) if config.fading else FadingConfig()
    return geometry, fading


def _run_realization(config: ExperimentConfig, value, index: int) -> list[dict]:
    """All scenarios and protocols on one channel draw."""
    N, M, sinr_db = config.point(value)
    noise = dbm_to_watts(config.noise_dbm)
    penalty_options = PenaltyOptions(**config.penalty)
    ts_options = TSOptions(**config.ts)
    geometry, fading = _models(config, M)
    base = ProblemSpec.from_sinr_db(N, M, Protocol.ES, Scenario.UNICAST, sinr_db, noise)
    channels = generate_channels(base, geometry, fading, channel_rng(config, index, value))
    rows = []
    for scenario in config.scenarios:
        for name in config.protocols:
            protocol = Protocol(name)
            row = {"sweep_value": value, "protocol": name, "scenario": scenario, "realization": index,
                   "power_w": math.nan, "power_dbm": math.nan, "ok": False, "status": "",
                   "outer_iterations": 0, "inner_iterations": 0, "min_rate_margin": math.nan,
                   "message": ""}
            try:
                spec = ProblemSpec.from_sinr_db(N, M, protocol, scenario, sinr_db, noise)
                sol, report = solve(spec, channels, penalty_options, ts_options,
                                    solver_rng(config, index, value, protocol))
                row.update(status=report.status.value, outer_iterations=report.outer_iterations,
                           inner_iterations=report.inner_iterations, message=report.message)
                if sol is not None:
                    margin = min(a - t for a, t in zip(sol.achieved_rates, spec.rate_targets))
                    row.update(power_w=float(sol.total_power), power_dbm=float(watts_to_dbm(sol.total_power)),
                               min_rate_margin=float(margin))
                    row["ok"] = bool(margin >= -QOS_TOLERANCE
                                     and report.status in (Status.CONVERGED, Status.MAX_ITER))
            except Exception as exc:  # a single failed run must not stop the sweep
                log.warning("run %s/%s/%s/%d failed: %s", value, scenario, name, index, exc)
                row.update(status="ERROR", message=f"{type(exc).__name__}: {exc}")
            rows.append(row)
    return rows


def aggregate(runs: list[dict], config: ExperimentConfig) -> list[dict]:
    """One row per sweep value, scenario and protocol, in config order."""
    table = []
    for value in config.values:
        for scenario in config.scenarios:
            for protocol in config.protocols:
                group = [r for r in runs if r["sweep_value"] == value and r["scenario"] == scenario
                         and r["protocol"] == protocol]
                ok = [r for r in group if r["ok"]]
                powers = np.array([r["power_w"] for r in ok])
                if len(powers):
                    mean = float(np.mean(powers))
                    se = float(np.std(powers, ddof=1) / math.sqrt(len(powers))) if len(powers) > 1 else 0.0
                    mean_dbm = float(watts_to_dbm(mean))
                    # delta method: d(10 log10 x) = 10 / (x ln 10) dx
                    se_dbm = 10.0 * se / (mean * math.log(10.0))
                    iters = float(np.mean([r["outer_iterations"] for r in ok]))
                else:
                    mean_dbm = se_dbm = iters = math.nan
                table.append({"sweep_value": value, "protocol": protocol, "scenario": scenario,
                              "mean_power_dbm": mean_dbm, "stderr_dbm": se_dbm, "n_ok": len(ok),
                              "n_fail": len(group) - len(ok), "mean_outer_iterations": iters})
    return table


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    runs: list[dict]
    table: list[dict]

    def lookup(self, value, protocol, scenario="UNICAST") -> dict:
        for row in self.table:
            if row["sweep_value"] == value and row["protocol"] == protocol and row["scenario"] == scenario:
                return row
        raise KeyError((value, protocol, scenario))


def run_experiment(config: ExperimentConfig) -> ExperimentResults:
    """Run every realization of every sweep point; failures are recorded, not raised."""
    jobs = [(value, index) for value in config.values for index in range(config.realizations)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_run_realization, [config] * len(jobs), *zip(*jobs)))
    else:
        chunks = []
        for value, index in jobs:
            log.info("%s=%s realization %d", config.sweep, value, index)
            chunks.append(_run_realization(config, value, index))
    runs = [row for chunk in chunks for row in chunk]
    runs.sort(key=lambda r: (config.values.index(r["sweep_value"]), r["realization"],
                             config.scenarios.index(r["scenario"]), config.protocols.index(r["protocol"])))
    return ExperimentResults(config, runs, aggregate(runs, config))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def emit_figure_data(results: ExperimentResults, out_dir) -> dict[str, Path]:
    """Write ``figure_data.csv``, ``runs.csv`` and ``manifest.json`` under ``out_dir``."""
    if not results.table:
        raise ContractViolation("nothing to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"figure": out / "figure_data.csv", "runs": out / "runs.csv", "manifest": out / "manifest.json"}
    _write_csv(paths["figure"], FIGURE_COLUMNS, results.table)
    _write_csv(paths["runs"], RUN_COLUMNS, results.runs)
    config = results.config
    seeds = {str(v): [realization_entropy(config, i, v) for i in range(config.realizations)]
             for v in config.values}
    manifest = {"schema_version": SCHEMA_VERSION, "config": config.to_dict(), "seeds": seeds,
                "version": _version()}
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


def read_figure_data(path) -> list[dict]:
    """Parse ``figure_data.csv`` back into typed rows."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        value = float(r["sweep_value"])
        out.append({"sweep_value": int(value) if r["sweep_value"].lstrip("-").isdigit() else value,
                    "protocol": r["protocol"], "scenario": r["scenario"],
                    "mean_power_dbm": float(r["mean_power_dbm"]), "stderr_dbm": float(r["stderr_dbm"]),
                    "n_ok": int(r["n_ok"]), "n_fail": int(r["n_fail"])})
    return out


def rerun_from_manifest(path) -> ExperimentResults:
    manifest = json.loads(Path(path).read_text())
    return run_experiment(ExperimentConfig.from_dict(manifest["config"]))


def run_convergence_trace(spec: ProblemSpec, channels, options: PenaltyOptions = PenaltyOptions(),
                          path=None, rng: np.random.Generator | None = None):
    """Run the penalty solver and write per-outer-iteration objective and violation.

    Only the main penalty loop is traced; the assignment polish that
    follows for MS is left out. Returns ``(rows, report)``.
    """
    if spec.protocol not in (Protocol.ES, Protocol.MS):
        raise ContractViolation("convergence traces are defined for ES and MS")
    _, report = solve_penalty(spec, channels, options, rng=rng)
    main = [r for r in report.records if not r.get("polish")]
    rows = []
    for outer, violation in enumerate(report.violation_trace, start=1):
        last = [r for r in main if r["outer"] == outer][-1]
        rows.append({"outer": outer, "inner_iterations": report.inner_iterations_per_outer[outer - 1],
                     "objective_w": last["objective"], "power_w": last["power"], "violation": violation})
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(path, ("outer", "inner_iterations", "objective_w", "power_w", "violation"), rows)
    return rows, report
