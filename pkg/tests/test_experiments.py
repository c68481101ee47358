import csv
import json
import math

import numpy as np
import pytest

from star_ris import cli
from star_ris.channels import generate_channels, watts_to_dbm
from star_ris.experiments import (FIGURE_COLUMNS, ExperimentConfig, channel_rng, emit_figure_data, read_figure_data,
                                  realization_entropy, rerun_from_manifest, run_convergence_trace, run_experiment)
from star_ris.model import ContractViolation, ProblemSpec, Protocol
from star_ris.penalty import PenaltyOptions


def _tiny(**kw):
    base = dict(sweep="M", values=[2, 4], N=2, sinr_db=0.0, protocols=["TS", "ES"], realizations=2, seed=11,
                penalty={"init_candidates": 20})
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_results():
    return run_experiment(_tiny())


def test_config_validation():
    with pytest.raises(ContractViolation):
        ExperimentConfig(values=[])
    with pytest.raises(ContractViolation):
        ExperimentConfig(values=[8, 6])
    with pytest.raises(ContractViolation):
        ExperimentConfig(realizations=0)
    with pytest.raises(ContractViolation):
        ExperimentConfig(sweep="K")
    with pytest.raises(ValueError):
        ExperimentConfig(protocols=["XX"])
    with pytest.raises(ContractViolation):
        ExperimentConfig.from_dict({"bogus": 1})
    cfg = ExperimentConfig(sweep="sinr_db", values=[0, 6])
    assert cfg.values == [0.0, 6.0]
    assert cfg.point(6.0) == (2, 10, 6.0)


def test_seeds_independent_of_other_sweep_points():
    a = _tiny(values=[2, 4])
    b = _tiny(values=[2, 3, 4])
    assert realization_entropy(a, 1, 4) == realization_entropy(b, 1, 4)
    assert realization_entropy(a, 1, 4) != realization_entropy(a, 0, 4)
    spec = ProblemSpec(2, 4, Protocol.ES, "UNICAST", 1.0)
    g1 = generate_channels(spec, rng=channel_rng(a, 1, 4)).G
    g2 = generate_channels(spec, rng=channel_rng(b, 1, 4)).G
    assert g1.tobytes() == g2.tobytes()


def test_table_shape(tiny_results):
    table = tiny_results.table
    assert len(table) == 2 * 2
    assert all(row["n_ok"] + row["n_fail"] == 2 for row in table)
    assert {r["protocol"] for r in tiny_results.runs} == {"TS", "ES"}


def test_emitted_files_round_trip(tiny_results, tmp_path):
    paths = emit_figure_data(tiny_results, tmp_path)
    with open(paths["figure"]) as fh:
        assert tuple(next(csv.reader(fh))) == FIGURE_COLUMNS
    parsed = read_figure_data(paths["figure"])
    for got, want in zip(parsed, tiny_results.table):
        for col in FIGURE_COLUMNS:
            if isinstance(want[col], float) and math.isnan(want[col]):
                assert math.isnan(got[col])
            else:
                assert got[col] == want[col]
    manifest = json.loads(paths["manifest"].read_text())
    assert manifest["schema_version"] == 1
    assert manifest["config"]["seed"] == 11
    assert len(manifest["seeds"]["2"]) == 2


def test_mean_recomputed_from_runs(tiny_results, tmp_path):
    paths = emit_figure_data(tiny_results, tmp_path)
    with open(paths["runs"]) as fh:
        runs = list(csv.DictReader(fh))
    for row in tiny_results.table:
        powers = [float(r["power_w"]) for r in runs if r["ok"] == "True" and int(r["sweep_value"]) == row["sweep_value"]
                  and r["protocol"] == row["protocol"] and r["scenario"] == row["scenario"]]
        assert watts_to_dbm(np.mean(powers)) == pytest.approx(row["mean_power_dbm"], abs=1e-12)


def test_rerun_is_byte_identical(tiny_results, tmp_path):
    first = emit_figure_data(tiny_results, tmp_path / "a")
    again = rerun_from_manifest(first["manifest"])
    second = emit_figure_data(again, tmp_path / "b")
    for key in ("figure", "runs", "manifest"):
        assert first[key].read_bytes() == second[key].read_bytes()


def test_worker_pool_matches_serial(tiny_results):
    pooled = run_experiment(_tiny(workers=2))
    assert pooled.table == tiny_results.table


def test_failures_are_recorded():
    res = run_experiment(_tiny(values=[3], protocols=["CONV_RIS", "TS"], realizations=1))
    conv = res.lookup(3, "CONV_RIS")
    assert conv["n_fail"] == 1 and conv["n_ok"] == 0 and math.isnan(conv["mean_power_dbm"])
    assert res.lookup(3, "TS")["n_ok"] == 1
    assert res.runs[0]["status"] == "ERROR"


def test_convergence_trace(tmp_path):
    spec = ProblemSpec.from_sinr_db(2, 4, Protocol.ES, "UNICAST", 0.0)
    ch = generate_channels(spec, rng=np.random.default_rng(0))
    rows, report = run_convergence_trace(spec, ch, path=tmp_path / "trace.csv", rng=np.random.default_rng(0))
    assert len(rows) == report.outer_iterations
    assert rows[-1]["violation"] <= 1e-7
    with open(tmp_path / "trace.csv") as fh:
        assert next(csv.reader(fh)) == ["outer", "inner_iterations", "objective_w", "power_w", "violation"]
    with pytest.raises(ContractViolation):
        run_convergence_trace(spec.with_protocol(Protocol.TS), ch)


def test_cli_sweep_and_trace(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"N": 2, "sinr_db": 0.0, "penalty": {"init_candidates": 10}}))
    out = tmp_path / "out"
    code = cli.main(["--config", str(cfg), "--sweep", "M=2,4", "--protocol", "TS,ES", "--scenario", "UNICAST",
                     "--realizations", "1", "--seed", "3", "--out", str(out)])
    assert code == 0
    assert (out / "figure_data.csv").exists() and (out / "manifest.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["values"] == [2, 4] and manifest["config"]["seed"] == 3
    code = cli.main(["--config", str(cfg), "--sweep", "M=4", "--protocol", "ES,TS", "--out", str(out), "--trace"])
    assert code == 0
    assert (out / "trace_unicast_es.csv").exists()
    assert cli.main(["--sweep", "K=1"]) == 2


def test_trace_violation_decreases_after_first_outer():
    monotone, finals, outers = 0, [], []
    for seed in range(5):
        spec = ProblemSpec.from_sinr_db(2, 6, Protocol.ES, "UNICAST", 0.0)
        ch = generate_channels(spec, rng=np.random.default_rng(500 + seed))
        opts = PenaltyOptions(init_candidates=1, init_phases="random")
        rows, report = run_convergence_trace(spec, ch, opts, rng=np.random.default_rng(seed))
        v = [r["violation"] for r in rows]
        monotone += all(b <= a for a, b in zip(v[1:], v[2:]))
        finals.append(v[-1])
        outers.append(report.outer_iterations)
    assert monotone >= 0.9 * 5
    assert max(finals) <= 1e-7
    assert max(outers) <= 8
