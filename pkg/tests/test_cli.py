import csv
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pinvport import asymptotics as asy
from pinvport.backtest import METRIC_COLUMNS
from pinvport.calibration import FIT_COLUMNS, ThetaCurveModel, theta_curve
from pinvport.cli import (
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_SCHEMA,
    EXIT_USAGE,
    UsageError,
    main,
    parse_grid,
)
from pinvport.errors import SolverError
from pinvport.montecarlo import SWEEP_COLUMNS

DATA = Path(__file__).parent / "data"


def run(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestParseGrid:
    def test_forms(self):
        assert parse_grid("4") == [4.0]
        assert parse_grid("1,2,3.5") == [1.0, 2.0, 3.5]
        assert parse_grid("0:1:5") == [0.0, 0.25, 0.5, 0.75, 1.0]

    @pytest.mark.parametrize("bad", ["", "a,b", "0:1", "0:1:0", "1:0:x"])
    def test_bad(self, bad):
        with pytest.raises(UsageError):
            parse_grid(bad)


class TestLimits:
    def test_single_row(self, capsys):
        code, out, err = run(["limits", "--theorem", "sr", "--theta", "4", "--rho", "0.5", "--phi", "0"], capsys)
        assert code == EXIT_OK
        rows = table(out)
        assert len(rows) == 1
        assert float(rows[0]["sr"]) == pytest.approx(1.33333, abs=5e-6)
        assert list(rows[0]) == ["theta", "phi", "rho", "sigma", "sr"]
        manifest = json.loads(err)
        assert manifest["command"] == "limits" and manifest["config"]["theorem"] == "sr"

    def test_unit_ratio_exit(self, capsys):
        code, out, err = run(["limits", "--theorem", "loss", "--theta", "4", "--rho", "1.0"], capsys)
        assert code == EXIT_USAGE
        assert "within" in err and out == ""

    def test_missing_grid(self, capsys):
        assert run(["limits", "--theta", "4"], capsys)[0] == EXIT_USAGE

    def test_grid_size(self, capsys):
        code, out, _ = run(["limits", "--theta", "1,4", "--rho", "0.1:0.9:5", "--phi", "0,1"], capsys)
        assert code == EXIT_OK and len(table(out)) == 20

    def test_double_ascent(self, capsys):
        code, out, _ = run(["limits", "--scenario", "double-ascent", "--T", "100", "--theorem", "sr"], capsys)
        assert code == EXIT_OK
        rows = table(out)
        strong = [r for r in rows if float(r["phi"]) == 100.0]
        Ns = [int(r["N"]) for r in strong]
        assert Ns == sorted(Ns) and 100 not in Ns
        sr = {int(r["N"]): float(r["sr"]) for r in strong}
        below = {n: v for n, v in sr.items() if n < 100}
        peak = max(below, key=below.get)
        assert 2 < peak < 98
        assert sr[500] > sr[120]
        dip = min(v for n, v in sr.items() if 80 <= n <= 125)
        assert dip == min(v for n, v in sr.items() if n >= peak) and dip < 0.5 * below[peak]

    def test_json_and_files(self, tmp_path, capsys):
        out = tmp_path / "l.json"
        code, stdout, _ = run(["limits", "--theta", "4", "--rho", "0.5,2", "--format", "json", "--out", out],
                              capsys)
        assert code == EXIT_OK and stdout == ""
        rows = json.loads(out.read_text())
        assert rows[1]["sr"] == asy.sr_limit_factor(asy.LimitInputs(4.0, 2.0))
        manifest = json.loads(Path(str(out) + ".manifest.json").read_text())
        assert manifest["columns"] == ["theta", "phi", "rho", "sigma", "sr", "loss", "mean", "sd"]


SIM_CONF = "T = 40\nN_list = 10,60\nphi_list = 0,1/T,log(T)\ntheta = 4\nreps = 5\nseed = 17\n"


class TestSimulate:
    def test_byte_identical_and_thread_free(self, tmp_path, capsys):
        conf = tmp_path / "s.conf"
        conf.write_text(SIM_CONF)
        outs = []
        for i, threads in enumerate((1, 1, 3)):
            o = tmp_path / f"o{i}.csv"
            assert run(["simulate", "--config", conf, "--out", o, "--threads", threads], capsys)[0] == EXIT_OK
            outs.append(o.read_bytes())
        assert outs[0] == outs[1] == outs[2]
        m0 = json.loads((tmp_path / "o0.csv.manifest.json").read_text())
        m2 = json.loads((tmp_path / "o2.csv.manifest.json").read_text())
        assert m0["config"] == m2["config"]
        assert m0["config"]["phi_list"][1] == pytest.approx(1 / 40)
        header = outs[0].decode().splitlines()[0]
        assert header == ",".join(SWEEP_COLUMNS)

    def test_named_phi_grid_has_finite_se(self, tmp_path, capsys):
        conf = tmp_path / "p.conf"
        conf.write_text("T = 100\nN_list = 20,50,150,300\nphi_list = 0,1/T,1/sqrt(T),1,log(T),T\n"
                        "reps = 8\nseed = 1\n")
        code, out, _ = run(["simulate", "--config", conf], capsys)
        assert code == EXIT_OK
        rows = table(out)
        assert len(rows) == 24
        assert all(math.isfinite(float(r["se_sr"])) and math.isfinite(float(r["se_loss"])) for r in rows)

    def test_seed_override(self, tmp_path, capsys):
        conf = tmp_path / "s.conf"
        conf.write_text(SIM_CONF)
        a = run(["simulate", "--config", conf], capsys)[1]
        b = run(["simulate", "--config", conf, "--seed", "18"], capsys)[1]
        assert a != b

    @pytest.mark.parametrize("text", ["T = 40\nbogus = 1\n", "T = 40\nreps = 0\n", "no equals sign\n",
                                      "T = 40\nphi_list = huge\n"])
    def test_bad_config(self, tmp_path, capsys, text):
        conf = tmp_path / "s.conf"
        conf.write_text(text)
        assert run(["simulate", "--config", conf], capsys)[0] == EXIT_USAGE

    def test_missing_config_file(self, tmp_path, capsys):
        assert run(["simulate", "--config", tmp_path / "nope.conf"], capsys)[0] == EXIT_USAGE

    def test_threads_must_be_positive(self, tmp_path, capsys):
        conf = tmp_path / "s.conf"
        conf.write_text(SIM_CONF)
        assert run(["simulate", "--config", conf, "--threads", "0"], capsys)[0] == EXIT_USAGE


class TestBacktest:
    def golden_args(self, out):
        return ["backtest", "--config", DATA / "golden_backtest.conf", "--returns", DATA / "golden_returns.csv",
                "--out", out]

    def test_golden(self, tmp_path, capsys):
        out = tmp_path / "m.csv"
        assert run(self.golden_args(out), capsys)[0] == EXIT_OK
        assert out.read_bytes() == (DATA / "golden_metrics.csv").read_bytes()

    def test_threads_do_not_change_golden(self, tmp_path, capsys):
        out = tmp_path / "m.csv"
        assert run(self.golden_args(out) + ["--threads", "2"], capsys)[0] == EXIT_OK
        assert out.read_bytes() == (DATA / "golden_metrics.csv").read_bytes()

    def test_annualize_exact(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(self.golden_args(a), capsys)
        run(self.golden_args(b) + ["--annualize"], capsys)
        for ra, rb in zip(table(a.read_text()), table(b.read_text())):
            for col in ("sr", "ew_sr", "minvar_sr", "insample_sr", "std"):
                assert float(rb[col]) == float(ra[col]) * math.sqrt(12)
            for col in ("avg", "cer", "capm_alpha"):
                assert float(rb[col]) == float(ra[col]) * 12
            assert rb["annualized"] == "1" and ra["annualized"] == "0"

    def test_bad_header_names_column(self, tmp_path, capsys):
        bad = tmp_path / "r.csv"
        bad.write_text("period,a,b,a\n1,0.1,0.2,0.3\n")
        code, _, err = run(["backtest", "--returns", bad, "--N", "1"], capsys)
        assert code == EXIT_SCHEMA
        assert "header column 4" in err and "'a'" in err

    def test_unknown_config_key(self, tmp_path, capsys):
        conf = tmp_path / "b.conf"
        conf.write_text("window = 10\nlookback = 3\n")
        code, _, err = run(["backtest", "--config", conf, "--returns", DATA / "golden_returns.csv"], capsys)
        assert code == EXIT_USAGE and "lookback" in err

    def test_characteristic_inputs(self, tmp_path, capsys):
        rng = np.random.default_rng(5)
        T, S = 40, 30
        periods = list(range(1, T + 1))
        R = 0.01 + 0.05 * rng.standard_normal((T, S))
        (tmp_path / "r.csv").write_text(
            "period," + ",".join(f"s{j}" for j in range(S)) + "\n"
            + "".join(f"{p}," + ",".join(repr(float(x)) for x in R[t]) + "\n" for t, p in enumerate(periods)))
        with (tmp_path / "c.csv").open("w") as fh:
            fh.write("period,stock,characteristic,value\n")
            for t, p in enumerate(periods):
                for j in range(S):
                    for c in ("size", "mom"):
                        fh.write(f"{p},s{j},{c},{float(rng.standard_normal())!r}\n")
        with (tmp_path / "w.csv").open("w") as fh:
            fh.write("period,stock,weight\n")
            for p in periods:
                for j in range(S):
                    fh.write(f"{p},s{j},{S - j}\n")
        (tmp_path / "m.csv").write_text("period,market\n" + "".join(f"{p},0.01\n" for p in periods))
        out = tmp_path / "o.csv"
        args = ["backtest", "--returns", tmp_path / "r.csv", "--characteristics", tmp_path / "c.csv",
                "--weights", tmp_path / "w.csv", "--market", tmp_path / "m.csv", "--top-m", "20",
                "--groups", "5", "--N", "4,10", "--out", out]
        conf = tmp_path / "b.conf"
        conf.write_text("window = 20\nreps = 3\n")
        code, _, err = run(args + ["--config", conf], capsys)
        assert code == EXIT_OK, err
        rows = table(out.read_text())
        assert [r["N"] for r in rows] == ["4", "10"]
        assert all(r["market_proxy"] == "0" for r in rows)
        assert list(rows[0]) == list(METRIC_COLUMNS)
        assert run(args[:5] + ["--top-m", "20"], capsys)[0] == EXIT_USAGE  # weights missing


class TestCalibrate:
    def write_curve(self, path, Ns, model=ThetaCurveModel(0.5, 1.5, 0.03), se=False):
        lines = ["N,SR,SE" if se else "N,SR"]
        for n in Ns:
            s = asy.sr_limit_factor(asy.LimitInputs(theta_curve(model, n) ** 2, n / 120, 5.0))
            lines.append(f"{n},{s!r}" + (",0.01" if se else ""))
        path.write_text("\n".join(lines) + "\n")

    def test_inverse_crime(self, tmp_path, capsys):
        curve = tmp_path / "c.csv"
        self.write_curve(curve, [5, 10, 20, 39, 60, 90, 150, 200, 300, 450, 600, 684])
        out = tmp_path / "f.csv"
        code, _, err = run(["calibrate", "--input", curve, "--T", "120", "--phi", "5", "--out", out], capsys)
        assert code == EXIT_OK, err
        result = json.loads(Path(str(out) + ".manifest.json").read_text())["result"]
        for k, v in (("sqrt_theta1", 0.5), ("sqrt_theta_bar", 1.5), ("lambda_speed", 0.03)):
            assert abs(result[k] / v - 1) < 0.05
        model = ThetaCurveModel(result["sqrt_theta1"], result["sqrt_theta_bar"], result["lambda_speed"])
        rows = table(out.read_text())
        assert list(rows[0]) == list(FIT_COLUMNS)
        for r in rows:
            assert float(r["sqrt_theta"]) == pytest.approx(theta_curve(model, int(r["N"])), abs=1e-12)

    def test_too_few_points(self, tmp_path, capsys):
        curve = tmp_path / "c.csv"
        self.write_curve(curve, [10, 60, 300])
        code, _, err = run(["calibrate", "--input", curve, "--T", "120"], capsys)
        assert code == EXIT_USAGE and "at least 4" in err

    def test_weighted_needs_se(self, tmp_path, capsys):
        curve = tmp_path / "c.csv"
        self.write_curve(curve, [5, 10, 60, 300, 600])
        assert run(["calibrate", "--input", curve, "--T", "120", "--weighted"], capsys)[0] == EXIT_USAGE
        self.write_curve(curve, [5, 10, 60, 300, 600], se=True)
        assert run(["calibrate", "--input", curve, "--T", "120", "--phi", "5", "--weighted"], capsys)[0] == EXIT_OK

    def test_schema(self, tmp_path, capsys):
        curve = tmp_path / "c.csv"
        curve.write_text("n,sr\n1,0.1\n")
        assert run(["calibrate", "--input", curve, "--T", "120"], capsys)[0] == EXIT_SCHEMA


class TestSpectralCommands:
    def test_mp(self, capsys):
        code, out, err = run(["mp", "--rho", "4", "--points", "11"], capsys)
        assert code == EXIT_OK
        rows = table(out)
        assert float(rows[0]["x"]) == 1.0 and float(rows[-1]["x"]) == 9.0
        result = json.loads(err)["result"]
        assert result["zero_mass"] == 0.75 and result["smallest_nonzero"] == 1.0

    def test_ridge(self, capsys):
        code, out, _ = run(["ridge", "--lambda", "1e-4,0.5", "--rho", "0.5", "--theta", "4", "--xi2", "4"], capsys)
        assert code == EXIT_OK
        rows = table(out)
        assert abs(float(rows[0]["sr"]) - 4 / 3) < 1e-2
        assert all(float(r["residual"]) < 1e-12 for r in rows)

    def test_numeric_failure_exit(self, capsys, monkeypatch):
        def boom(_):
            raise SolverError("no convergence")
        monkeypatch.setattr(asy, "ridge_limits", boom)
        code, _, err = run(["ridge", "--lambda", "1", "--rho", "0.5", "--theta", "4", "--xi2", "4"], capsys)
        assert code == EXIT_NUMERIC and "numerical failure" in err


class TestManifestReplay:
    @pytest.mark.parametrize("argv", [
        ["limits", "--theta", "4", "--rho", "0.5,3", "--phi", "1"],
        ["mp", "--rho", "0.5", "--points", "5"],
        ["backtest", "--config", str(DATA / "golden_backtest.conf"), "--returns", str(DATA / "golden_returns.csv")],
    ])
    def test_replay_from_manifest(self, argv, tmp_path, capsys):
        out = tmp_path / "o.csv"
        assert run(argv + ["--out", out], capsys)[0] == EXIT_OK
        first = out.read_bytes()
        manifest = json.loads(Path(str(out) + ".manifest.json").read_text())
        assert run(manifest["argv"], capsys)[0] == EXIT_OK
        assert out.read_bytes() == first


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pinvport", "limits", "--theorem", "sr", "--theta", "4",
                           "--rho", "2"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert float(table(proc.stdout)[0]["sr"]) == pytest.approx(0.8164965809277260, rel=1e-15)


def test_no_subcommand(capsys):
    assert run([], capsys)[0] == EXIT_USAGE
