"""
Test level: integration
"""
import glob
import json
import math
import os

import numpy as np
import pytest

from hdinfer import experiments
from hdinfer.drgmm import DrgmmStageError
from hdinfer.experiments import ConfigError, ResultTable
from hdinfer.io import get_conf_path
from hdinfer.lp_solver import LpIterationLimitError


_CONFIG_TEXT = """{
  "schema_version": 1,
  "experiment": "coverage",
  "dgp": {"variant": "figure1", "n": 10, "p": 2},
  "seed": 1,
  "output_dir": "out",
  "method": {"alpha": 1.5}
}"""


def _config(experiment, dgp, method=None, replications=3, seed=7):
    return experiments.parse_config(
        {
            "schema_version": 1,
            "experiment": experiment,
            "dgp": dgp,
            "method": method or {},
            "replications": replications,
            "seed": seed,
            "output_dir": "out",
        }
    )


def _figure1(**kwargs):
    return {"variant": "figure1", "n": 60, "p": 8, **kwargs}


@pytest.mark.parametrize(
    "filepath",
    sorted(glob.glob(os.path.join(get_conf_path(), "experiments", "*.json"))),
)
def test_shipped_configs_are_valid(filepath):
    cfg = experiments.load_config(filepath)
    assert cfg.replications >= 1


def test_config_error_points_to_the_line():
    with pytest.raises(ConfigError) as excinfo:
        experiments.parse_config(json.loads(_CONFIG_TEXT), text=_CONFIG_TEXT)
    assert excinfo.value.key_path == "method.alpha"
    assert excinfo.value.line == 7
    assert str(excinfo.value).startswith("line 7:")


def test_config_errors():
    conf = json.loads(_CONFIG_TEXT)
    del conf["method"]
    for key, value, path in (
        ("colour", "red", "colour"),
        ("schema_version", 2, "schema_version"),
        ("experiment", "power", "experiment"),
        ("seed", -1, "seed"),
        ("seed", 1.5, "seed"),
        ("replications", 0, "replications"),
        ("dgp", {"variant": "figure1", "n": 0, "p": 2}, "dgp"),
    ):
        with pytest.raises(ConfigError) as excinfo:
            experiments.parse_config({**conf, key: value})
        assert excinfo.value.key_path == path
    missing = dict(conf)
    del missing["seed"]
    with pytest.raises(ConfigError):
        experiments.parse_config(missing)


def test_incompatible_variant():
    text = _CONFIG_TEXT.replace('"coverage"', '"lq_bounds"')
    conf = json.loads(text)
    del conf["method"]
    with pytest.raises(ConfigError) as excinfo:
        experiments.parse_config(conf, text=text)
    assert excinfo.value.key_path == "dgp.variant"
    assert excinfo.value.line == 4


def test_invalid_json_line(tmp_path):
    filepath = os.path.join(tmp_path, "bad.json")
    with open(filepath, "w") as f:
        f.write('{\n  "seed": 1,\n}')
    with pytest.raises(ConfigError) as excinfo:
        experiments.load_config(filepath)
    assert excinfo.value.line == 3


def test_defaults_fill_the_method():
    cfg = _config("coverage", _figure1())
    assert cfg.method.scheme == "gaussian"
    assert cfg.method.B >= 1
    # Check that the echo is JSON serializable
    assert json.loads(json.dumps(cfg.echo()))["seed"] == 7


def test_result_table_aggregates():
    table = ResultTable()
    table.add_row({"a": 1, "b": True})
    table.add_row({"a": 3, "b": False})
    agg = table.aggregate()
    assert agg.loc["mean", "a"] == 2.0
    assert agg.loc["se", "a"] == pytest.approx(1.0)
    assert agg.loc["mean", "b"] == 0.5
    df = table.to_df()
    assert df["replication"].tolist() == ["0", "1", "mean", "se"]
    single = ResultTable()
    single.add_row({"a": 1.0})
    assert math.isnan(single.aggregate().loc["se", "a"])


def test_coverage_run_and_outputs(tmp_path):
    cfg = _config("coverage", _figure1(), method={"B": 50})
    output = experiments.run_experiment(cfg=cfg, progress=False)
    metrics = output.metrics.per_replication()
    assert len(metrics) == 3
    assert set(metrics["covered"]) <= {0.0, 1.0}
    assert np.all(metrics["lambda_hat"] > 0)
    paths = experiments.write_outputs(cfg=cfg, output=output, folder=tmp_path)
    names = sorted(os.path.basename(path) for path in paths)
    assert names == ["bands.csv", "config_echo.json", "metrics.csv"]
    with open(os.path.join(tmp_path, "config_echo.json")) as f:
        echo = json.load(f)
    assert echo["experiment"] == "coverage"
    assert echo["dgp"]["p"] == 8


def test_outputs_do_not_depend_on_workers(tmp_path):
    cfg = _config("coverage", _figure1(), method={"B": 50})
    contents = []
    for n_jobs in (1, 2, 1):
        folder = os.path.join(tmp_path, str(len(contents)))
        output = experiments.run_experiment(
            cfg=cfg, n_jobs=n_jobs, progress=False
        )
        experiments.write_outputs(cfg=cfg, output=output, folder=folder)
        with open(os.path.join(folder, "metrics.csv"), "rb") as f:
            contents.append(f.read())
    assert contents[0] == contents[1] == contents[2]


@pytest.mark.parametrize("experiment", ["fwer", "fdr"])
def test_testing_runs(experiment):
    cfg = _config(
        experiment,
        _figure1(n_signals=2, signal_strength=6.0),
        method={"B": 50, "alpha": 0.1},
    )
    output = experiments.run_experiment(cfg=cfg, progress=False)
    metrics = output.metrics.per_replication()
    assert "_decisions" not in metrics.columns
    assert np.all(metrics["bonf_within_holm"] == 1.0)
    decisions = output.tables["decisions.csv"]
    assert len(decisions) == 8
    assert ("max_correlation" in metrics.columns) == (experiment == "fdr")


def test_lq_bounds_run():
    dgp = {
        "variant": "means_model",
        "n": 1,
        "p": 40,
        "model": {"kind": "ES", "s": 4},
    }
    cfg = _config("lq_bounds", dgp, method={"alpha": 0.1})
    metrics = experiments.run_experiment(
        cfg=cfg, progress=False
    ).metrics.per_replication()
    assert np.all(metrics["off_support_zero"] == 1.0)
    # Check that the bound holds whenever the sup event does
    on_event = metrics["sup_event"] == 1.0
    assert np.all(metrics.loc[on_event, "soft_within_l2_bound"] == 1.0)


def test_rmd_rates_run():
    dgp = {
        "variant": "sparse_linear",
        "n": 100,
        "p": 10,
        "model": {"kind": "ES", "s": 2, "amplitude": 5.0},
    }
    cfg = _config(
        "rmd_rates", dgp, method={"sample_sizes": [100, 400]}, replications=5
    )
    output = experiments.run_experiment(cfg=cfg, progress=False)
    metrics = output.metrics.per_replication()
    assert np.all(metrics["n100_optimal"] == 1.0)
    assert output.summary["median_l2_ratio_n100_n400"] > 1.0


def test_drgmm_inference_run():
    dgp = {
        "variant": "homoskedastic_iv",
        "n": 200,
        "p": 3,
        "m": 5,
        "s": 2,
    }
    cfg = _config(
        "drgmm_inference",
        dgp,
        method={"B": 50, "homoskedastic": True},
        replications=2,
    )
    metrics = experiments.run_experiment(
        cfg=cfg, progress=False
    ).metrics.per_replication()
    for column in ("r1", "r2", "r3", "covered_0", "bias_drgmm_2"):
        assert column in metrics.columns
    assert np.all(metrics["drgmm_l2"] < 1.0)


def test_pp_data_run():
    cfg = _config(
        "pp_data",
        _figure1(),
        method={"B": 50, "pp_grid_size": 20},
        replications=10,
    )
    output = experiments.run_experiment(cfg=cfg, progress=False)
    curve = output.tables["pp_curve.csv"]
    assert list(curve.columns) == [
        "x",
        "empirical",
        "gaussian",
        "gaussian_bootstrap",
        "empirical_bootstrap",
    ]
    assert len(curve) == 20
    assert curve["empirical"].iloc[-1] == 1.0
    assert set(output.summary) == {
        "max_gap_gaussian",
        "max_gap_gaussian_bootstrap",
        "max_gap_empirical_bootstrap",
    }


@pytest.mark.parametrize("experiment", ["fwer", "fdr"])
def test_error_rates_under_the_global_null(experiment):
    alpha, replications = 0.1, 100
    cfg = _config(
        experiment,
        _figure1(n=100),
        method={"B": 50, "alpha": alpha},
        replications=replications,
    )
    metrics = experiments.run_experiment(
        cfg=cfg, progress=False
    ).metrics.per_replication()
    # Check every error rate against alpha plus three Monte Carlo s.e.
    bound = alpha + 3.0 * math.sqrt(alpha * (1.0 - alpha) / replications)
    for name in ("bonf", "holm", "rw", "bh"):
        assert metrics[f"any_false_{name}"].mean() <= bound
        # Under the global null every rejection is false
        np.testing.assert_array_equal(
            metrics[f"fdp_{name}"], metrics[f"any_false_{name}"]
        )


def test_failed_drgmm_replication_is_not_fatal(monkeypatch, caplog):
    dgp = {
        "variant": "homoskedastic_iv",
        "n": 200,
        "p": 3,
        "m": 5,
        "s": 2,
    }
    cfg = _config(
        "drgmm_inference",
        dgp,
        method={"B": 50, "homoskedastic": True},
        replications=3,
    )
    pipeline = experiments.drgmm_pipeline
    calls = []

    def fail_on_second_call(**kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise DrgmmStageError("[step 4: mu] singular gamma_hat G_hat")
        return pipeline(**kwargs)

    monkeypatch.setattr(experiments, "drgmm_pipeline", fail_on_second_call)
    metrics = experiments.run_experiment(
        cfg=cfg, progress=False
    ).metrics.per_replication()
    # Check replication 1 is kept as a NaN row and the others are intact
    assert len(metrics) == 3
    assert list(metrics["failed"]) == [0.0, 1.0, 0.0]
    assert np.isnan(metrics.loc[1, "drgmm_l2"])
    assert np.all(np.isfinite(metrics.loc[[0, 2], "drgmm_l2"]))
    assert "Replication 1: estimation failed" in caplog.text
    assert "step 4" in caplog.text


def test_lp_iteration_limit_is_not_fatal(monkeypatch, caplog):
    dgp = {
        "variant": "sparse_linear",
        "n": 50,
        "p": 5,
        "model": {"kind": "ES", "s": 2, "amplitude": 5.0},
    }
    cfg = _config(
        "rmd_rates", dgp, method={"sample_sizes": [50, 100]}, replications=2
    )

    def hit_the_cap(**kwargs):
        raise LpIterationLimitError("pivot cap reached")

    monkeypatch.setattr(experiments, "rmd_linear", hit_the_cap)
    output = experiments.run_experiment(cfg=cfg, progress=False)
    metrics = output.metrics.per_replication()
    # Check a run where every replication fails still completes
    assert list(metrics["failed"]) == [1.0, 1.0]
    assert math.isnan(output.summary["median_l2_ratio_n50_n100"])
    assert "Replication 0: estimation failed" in caplog.text
