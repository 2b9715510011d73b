import csv
import json
import math
import shutil

import pytest

from oilsent import evaluation
from oilsent.report import bundle, cli, pipeline
from oilsent.report import config as runconfig

# a 90-week run can leave a test block with constant predictions
pytestmark = pytest.mark.filterwarnings("ignore:metric undefined")

SMALL = {"sets": ["gpt", "av_baseline"], "explain": {"set": "gpt", "background_cap": 32},
         "cv": {"k": 3, "inner_k": 2}, "tpe": {"n_trials": 4, "n_startup": 2}}


def _stderr_json(capsys) -> dict:
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """A short synthetic run driven stage by stage through the CLI."""
    run = tmp_path_factory.mktemp("small")
    pipeline.prepare_replay(run, 4, SMALL, n_weeks=90)
    transport = pipeline._offline_transport()
    cfg = runconfig.load(run / runconfig.CONFIG_NAME)
    pipeline.run_fetch(run, cfg, transport=transport)  # offline: reads the cached pages
    for stage in ("extract", "features", "evaluate", "explain", "report"):
        assert cli.main([stage, "--out", str(run)]) == 0, stage
    return run


def test_usage_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["transmogrify"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["features", "--bogus"])
    assert exc.value.code == 2


def test_missing_inputs_are_reported(tmp_path, capsys):
    assert cli.main(["evaluate", "--out", str(tmp_path), "--stub"]) == 1
    err = _stderr_json(capsys)
    assert err["error"] == "missing_inputs"
    assert set(err["missing"]) == {pipeline.FEATURES, pipeline.LABELS}
    assert cli.main(["report", "--out", str(tmp_path)]) == 1
    err = _stderr_json(capsys)
    assert pipeline.VECTORS in err["missing"] and pipeline.SHAP_SUMMARY in err["missing"]
    assert cli.main(["features", "--out", str(tmp_path), "--stub"]) == 1
    assert "prices.csv" in _stderr_json(capsys)["missing"]


def test_config_errors(tmp_path, capsys):
    with pytest.raises(runconfig.ConfigError):
        runconfig.resolve({"sample_fraction": 0.0})
    with pytest.raises(runconfig.ConfigError):
        runconfig.resolve({"corpus_start": "2024-01-01", "corpus_end": "2023-01-01"})
    with pytest.raises(runconfig.ConfigError):
        runconfig.resolve({"sets": ["gpt"], "explain": {"set": "llm"}})
    with pytest.raises(runconfig.ConfigError):
        runconfig.resolve({"adapters": {"llm_a": None}})
    assert runconfig.resolve({"stub": True, "adapters": {"llm_a": None}})["stub"]
    assert cli.main(["features", "--out", str(tmp_path), "--sets", "everything"]) == 1
    assert _stderr_json(capsys)["error"] == "config"
    assert cli.main(["features", "--out", str(tmp_path),
                     "--config", str(tmp_path / "nope.json")]) == 1
    assert _stderr_json(capsys)["error"] == "config"


def test_sets_flag_moves_explain_set(tmp_path):
    args = cli.build_parser().parse_args(["features", "--out", str(tmp_path), "--stub",
                                          "--sets", "llama,tradition"])
    cfg = cli._load_config(args)
    assert cfg["sets"] == ["llama", "tradition"] and cfg["explain"]["set"] == "llama"


def test_bundle_files(small_run):
    for name in bundle.BUNDLE_FILES:
        path = small_run / name
        assert path.is_file() and path.stat().st_size > 0, name
    svg = (small_run / bundle.METRICS_SVG).read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_metrics_table_matches_metrics(small_run):
    with open(small_run / bundle.METRICS_TABLE, newline="") as fh:
        table = list(csv.DictReader(fh))
    assert [r["set"] for r in table] == SMALL["sets"]
    rows = {(r["set"], r["fold"]): r
            for r in evaluation.read_metrics_csv(small_run / pipeline.METRICS)}
    for r in table:
        assert float(r["auroc_mean"]) == rows[(r["set"], "mean")]["auroc"]


def test_polarity_corr_diagonal(small_run):
    with open(small_run / bundle.POLARITY_CORR, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert len(body) == len(header) - 1
    for i, row in enumerate(body):
        assert float(row[i + 1]) == 1.0
        for j, cell in enumerate(row[1:]):
            assert cell == body[j][i + 1]  # symmetric


def test_quartiles_ordered(small_run):
    with open(small_run / bundle.QUARTILES, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["model"] for r in rows} == {"llm_a", "llm_b"}
    for r in rows:
        vals = [float(r[k]) for k in bundle.QUARTILE_KEYS]
        assert vals == sorted(vals) and not any(math.isnan(v) for v in vals)


def test_shap_importance_matches_summary(small_run):
    names, values = bundle.read_importance(small_run / pipeline.SHAP_SUMMARY)
    assert values == sorted(values, reverse=True) and len(names) == 11
    table = (small_run / bundle.SHAP_TABLE).read_text()
    assert table == (small_run / pipeline.SHAP_SUMMARY).read_text()


def test_report_rerun_is_byte_identical(small_run, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(small_run, copy)
    before = {n: (copy / n).read_bytes() for n in bundle.BUNDLE_FILES}
    assert cli.main(["report", "--out", str(copy)]) == 0
    assert {n: (copy / n).read_bytes() for n in bundle.BUNDLE_FILES} == before


def test_explain_meta(small_run):
    meta = json.loads((small_run / pipeline.SHAP_META).read_text())
    assert meta["set"] == "gpt" and meta["fold"] == 2
    assert meta["max_local_accuracy_error"] <= 1e-8
    assert meta["n_background"] <= 32
