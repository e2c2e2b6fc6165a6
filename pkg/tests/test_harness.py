import csv
import json
import math

import pytest

from transdens.harness.cli import main
from transdens.harness.config import ConfigError, ExperimentConfig, load_config
from transdens.harness.experiments import (RateReport, RateRow, exact_density, fit_slope,
                                           run_rate_experiment)
from transdens.harness.export import ExportError, export, load_report, sidecar_path
from transdens.harness.suite import CheckResult, SuiteReport, run_invariant_suite
from transdens.model import builtin


def _small_config(**kw):
    base = dict(model_name="ou", model_params={"innovations": "student", "S": 10.0},
                n_values=[8, 16, 32, 64], probe_x=[0.0, 1.0], probe_y=[0.0, 1.0])
    base.update(kw)
    return ExperimentConfig(**base)


# -- config -------------------------------------------------------------------------

def test_load_defaults_and_file(tmp_path):
    cfg = load_config()
    assert cfg.model_name == "ou" and cfg.n_values == [8, 16, 32, 64, 128]
    path = tmp_path / "c.toml"
    path.write_text('[model]\nname = "constant"\nparams = { innovations = "gaussian" }\n'
                    '[rate]\nn = [4, 8]\nprobe_x = [0.5]\n[series]\nR = 2\ntime_nodes = 30\n'
                    '[run]\nseed = 7\nthreads = 2\n')
    cfg = load_config(path, {"seed": 9, "out_dir": None})
    assert cfg.model_name == "constant" and cfg.n_values == [4, 8] and cfg.R == 2
    assert cfg.quad.time_nodes == 30 and cfg.seed == 9 and cfg.threads == 2
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


@pytest.mark.parametrize("text", [
    '[rate]\nn = [8, 8]\n',
    '[rate]\nn = [16, 8]\n',
    '[rate]\nprobe_x = [5.0]\n',
    '[rate]\nn = [3]\nt_i = 0.5\n',
    '[series]\nR = 7\n',
    '[model]\nname = "nope"\n',
    '[model]\nparams = { sigma = -1.0 }\n',
    '[rate]\nbogus = 1\n',
    '[extra]\na = 1\n',
    'not toml ===',
])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")


# -- experiments ---------------------------------------------------------------------

def test_fit_slope():
    assert fit_slope([1, 2, 4, 8], [1, 0.5, 0.25, 0.125]) == pytest.approx(-1.0)
    assert fit_slope([1], [1.0]) is None


def test_exact_density_values():
    m, _ = builtin("ou")
    assert exact_density(m, 0.0, 1.0, 0.0, 0.0) == pytest.approx(1 / math.sqrt(math.pi * (1 - math.exp(-2))))
    m, _ = builtin("holder_drift")
    assert exact_density(m, 0.0, 1.0, 0.0, 0.0) is None


def test_rate_experiment_deterministic_and_threaded():
    cfg = _small_config()
    a = run_rate_experiment(cfg)
    b = run_rate_experiment(_small_config(threads=3))
    assert a.rows == b.rows and a.slope == b.slope
    assert len(a.rows) == 4 and a.reference == "exact"
    assert a.rows[0].slope_so_far is None and a.rows[-1].slope_so_far == a.slope


def test_rate_experiment_rejects_d2():
    with pytest.raises(ValueError):
        run_rate_experiment(_small_config(model_params={"d": 2}))


# -- export --------------------------------------------------------------------------

def _rate_report(rows=5):
    rs = [RateRow(8 * 2 ** k, 0.1 / 2 ** k, 0.3 / 2 ** k, None if k == 0 else -1.0 + k * 1e-17,
                  0.1, 2.0, 1.0 / 3.0) for k in range(rows)]
    return RateReport("ou", rs, -1.0, -0.9, 0.5, 0.0, 0.0, False, True, False, "exact",
                      meta={"note": 0.1 + 0.2})


def test_export_rate_csv_and_sidecar(tmp_path):
    path = export(_rate_report(), "csv", tmp_path / "rate.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["n", "sup_raw", "sup_normalized", "slope_so_far"]
    assert len(rows) == 6 and rows[1][3] == ""
    meta = json.loads(sidecar_path(path).read_text())
    assert meta["slope"] == -1.0 and len(meta["rows"]) == 5


def test_export_empty_is_header_only(tmp_path):
    path = export(_rate_report(0), "csv", tmp_path / "empty.csv")
    assert path.read_text() == "n,sup_raw,sup_normalized,slope_so_far\n"
    path = export(SuiteReport(0, ["flow"], "ou"), "csv", tmp_path / "suite.csv")
    assert path.read_text().count("\n") == 1


def test_json_round_trip_bit_exact(tmp_path):
    rep = _rate_report()
    back = load_report(export(rep, "json", tmp_path / "r.json"))
    assert back == rep
    suite = SuiteReport(3, ["flow"], "ou", [CheckResult("flow", "x", True, 1 / 3, None, "d")])
    assert load_report(export(suite, "json", tmp_path / "s.json")) == suite


def test_export_errors_carry_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ExportError, match="file"):
        export(_rate_report(), "csv", blocker / "sub" / "r.csv")
    with pytest.raises(ValueError):
        export(_rate_report(), "xml", tmp_path / "r.xml")
    with pytest.raises(ExportError, match="absent.json"):
        load_report(tmp_path / "absent.json")


# -- suite ---------------------------------------------------------------------------

def test_suite_flow_on_ou():
    rep = run_invariant_suite(["flow"], seed=0, model="ou")
    assert rep.passed, rep.failures
    names = {c.name for c in rep.results}
    assert {"semigroup_continuous", "semigroup_discrete", "lipschitz", "linear_growth",
            "discrepancy_slope"} <= names


def test_suite_constant_parametrix_terms_zero():
    rep = run_invariant_suite(["parametrix"], seed=0, model="constant", quick=True)
    zero = [c for c in rep.results if c.name == "constant_terms_zero"]
    assert zero and zero[0].passed and zero[0].measured == 0.0


def test_suite_rejects_unknown_scope():
    with pytest.raises(ValueError):
        run_invariant_suite(["nope"])


def test_suite_deterministic():
    a = run_invariant_suite(["model"], seed=4)
    b = run_invariant_suite(["model"], seed=4)
    assert a == b


# -- cli -----------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["--out", out, "flow", "--y", "0,1"]) == 0
    assert main(["flow", "--out", out, "--seed", "3"]) == 0
    assert (tmp_path / "out" / "flow.csv").exists()
    assert main(["--out", out, "check", "--scope", "model"]) == 0
    assert (tmp_path / "out" / "check.json").exists()
    assert main(["--config", str(tmp_path / "missing.toml"), "validate"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--seed", "-1", "validate"])
    assert exc.value.code == 2


def test_cli_check_failure_exit_code(tmp_path, monkeypatch):
    import transdens.harness.cli as cli

    def failing(*a, **k):
        return SuiteReport(0, ["model"], "ou", [CheckResult("model", "forced", False, 1.0)])

    monkeypatch.setattr(cli, "run_invariant_suite", failing)
    assert main(["--out", str(tmp_path), "check"]) == 1


def test_cli_rate_and_series(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[model]\nname = "constant"\nparams = { innovations = "gaussian" }\n'
                   '[rate]\nn = [4, 8, 16, 32]\nprobe_x = [0.0]\nprobe_y = [0.0, 0.5]\n')
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "--out", str(out), "rate"]) == 0
    rows = list(csv.reader((out / "rate.csv").open()))
    assert len(rows) == 5
    assert main(["--config", str(cfg), "--out", str(out), "series", "--x", "0", "--y", "0.5"]) == 0
    assert json.loads((out / "series.json").read_text())["terms"][1] == 0.0
    assert main(["--config", str(cfg), "--out", str(out), "density", "--n", "8", "--y", "0,0.5"]) == 0
    assert main(["--config", str(cfg), "--out", str(out), "validate"]) == 0
