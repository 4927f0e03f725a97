import csv
import hashlib
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from mildns import cli, diagnostics
from mildns.solver import load_state

C_HAT = 1.6294316182204938


def run(tmp_path, command, config=None, *extra, name="out"):
    out = tmp_path / name
    args = [command, "--out", str(out), *extra]
    if config is not None:
        path = tmp_path / f"{name}-config.json"
        path.write_text(json.dumps(config))
        args += ["--config", str(path)]
    return cli.main(args), out


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
        assert first.startswith("# convention: ")
        return json.loads(first[len("# convention: "):]), list(csv.DictReader(fh))


def digest(directory):
    h = {}
    for root, _, files in os.walk(directory):
        for f in files:
            p = os.path.join(root, f)
            h[os.path.relpath(p, directory)] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return h


class TestParser:
    @pytest.mark.parametrize("command", list(cli.COMMANDS))
    def test_help_documents_outputs(self, command, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main([command, "--help"])
        assert info.value.code == 0
        text = capsys.readouterr().out
        for flag in ("--config", "--out", "--threads", "--seed"):
            assert flag in text
        assert cli.CSV_HELP[command].split(":")[0] in text

    def test_module_entry_point(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "mildns", "selftest", "--out", str(tmp_path)],
                             capture_output=True, text=True)
        assert res.returncode == 0
        assert json.loads((tmp_path / "selftest.json").read_text())["checks"]


class TestConfigErrors:
    def test_zero_time_rejected_before_computing(self, tmp_path, capsys, monkeypatch):
        called = []
        monkeypatch.setattr(cli.oseen, "kernel_norms", lambda *a, **k: called.append(a))
        code, out = run(tmp_path, "kernel-bounds", {"times": [0.0, 0.5]})
        assert code == cli.EXIT_CONFIG
        assert "kernel-bounds.times.0" in capsys.readouterr().err
        assert not called and not out.exists()

    def test_nested_field_path(self, tmp_path, capsys):
        code, _ = run(tmp_path, "simulate", {"solver": {"n": 33, "dt": -1}})
        err = capsys.readouterr().err
        assert code == cli.EXIT_CONFIG
        assert "simulate.solver.n" in err and "simulate.solver.dt" in err

    def test_unknown_field(self, tmp_path, capsys):
        code, _ = run(tmp_path, "lorentz", {"feilds": 3})
        assert code == cli.EXIT_CONFIG
        assert "lorentz.feilds" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli.main(["selftest", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_bad_threads_and_seed(self, tmp_path):
        assert cli.main(["selftest", "--threads", "-1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert cli.main(["selftest", "--seed", str(2**64), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert cli.main(["kernel-bounds", "--seed", "3", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


class TestKernelBounds:
    def test_smoke_single_time(self, tmp_path):
        code, out = run(tmp_path, "kernel-bounds", {"times": [0.25], "n_min": 64})
        assert code == cli.EXIT_PASS
        conv, rows = read_csv(out / "kernel_profile.csv")
        assert conv["C_hat_source"] == "estimate_kernel_constant"
        assert len(rows) == 1 and rows[0]["converged"] == "1" and rows[0]["n"] == "128"
        rec = json.loads((out / "kernel_bounds.json").read_text())
        assert rec["C_hat"] == pytest.approx(math.sqrt(0.25) * float(rows[0]["l1"]))
        assert rec["convention"]["tensor_norm"] == "pointwise Frobenius magnitude"

    def test_default_run(self, tmp_path):
        code, out = run(tmp_path, "kernel-bounds")
        assert code == cli.EXIT_PASS
        _, rows = read_csv(out / "kernel_profile.csv")
        assert sum(r["converged"] == "1" for r in rows) >= 16

    def test_nonconvergence_exit_code(self, tmp_path):
        code, out = run(tmp_path, "kernel-bounds", {"times": [1e-3], "n_max": 128})
        assert code == cli.EXIT_NONCONVERGENCE
        _, rows = read_csv(out / "kernel_profile.csv")
        assert rows[0]["converged"] == "0"


class TestSimulate:
    def test_taylor_green_preset(self, tmp_path):
        code, out = run(tmp_path, "simulate", {"amplitude": 2.0, "t_end": 0.05})
        assert code == cli.EXIT_PASS
        _, rows = read_csv(out / "trajectory.csv")
        l2_0 = float(rows[0]["l2"])
        assert l2_0 == pytest.approx(2.0 / math.sqrt(2), rel=1e-14)
        for r in rows:
            expected = 2.0 * math.exp(-8 * math.pi**2 * float(r["t"])) * l2_0 / 2.0
            assert float(r["l2"]) == pytest.approx(expected, rel=1e-6)
        rec = json.loads((out / "simulate.json").read_text())
        assert rec["exact_relative_l2_error"] < 1e-6
        state, t = load_state((out / "final_state.bin").read_bytes())
        assert t == pytest.approx(0.05) and state.grid.n == 64

    def test_picard_failure_exit_code(self, tmp_path):
        cfg = {"preset": "random", "l2": 5.0, "t_end": 0.02,
               "solver": {"n": 32, "dt": 0.01, "picard_max_iters": 1, "picard_tol": 1e-15}}
        code, out = run(tmp_path, "simulate", cfg)
        assert code == cli.EXIT_NONCONVERGENCE
        assert not out.exists()


class TestSmoothing:
    def test_slope_in_summary(self, tmp_path):
        code, out = run(tmp_path, "smoothing", {"solver": {"n": 32, "dt": 1e-3}})
        assert code == cli.EXIT_PASS
        rec = json.loads((out / "smoothing.json").read_text())
        assert abs(rec["slope"] - 0.5) <= 0.05 and rec["slope_pass"]
        _, rows = read_csv(out / "smoothing_M.csv")
        M = [float(r["M"]) for r in rows]
        assert M == sorted(M)


class TestStability:
    def test_zero_perturbation(self, tmp_path):
        code, out = run(tmp_path, "stability", {"trials": 3, "eps": 0.0, "C_hat": C_HAT, "solver": {"n": 32}})
        assert code == cli.EXIT_PASS
        conv, rows = read_csv(out / "campaign.csv")
        assert conv["C_hat_source"] == "user-supplied"
        assert [r["sup_w"] for r in rows] == ["0.0"] * 3
        assert all(r["pass"] == "1" for r in rows)
        trial = json.loads((out / "trials" / "trial_1.json").read_text())
        assert trial["convention"]["C_hat_source"] == "user-supplied"

    def test_violation_exit_code(self, tmp_path, monkeypatch):
        real = diagnostics.stability_experiment

        def broken(*args, **kwargs):
            run_ = real(*args, **kwargs)
            bad = diagnostics.StabilityReport(**{**run_.report.__dict__, "verdict": "fail"})
            return diagnostics.StabilityRun(bad, run_.traj1, run_.traj2, run_.volterra)

        monkeypatch.setattr(cli.diagnostics, "stability_experiment", broken)
        code, out = run(tmp_path, "stability", {"trials": 1, "C_hat": C_HAT, "solver": {"n": 16, "dt": 1e-3}})
        assert code == cli.EXIT_VIOLATION
        _, rows = read_csv(out / "campaign.csv")
        assert rows[0]["pass"] == "0"

    def test_underflow_exit_code(self, tmp_path):
        cfg = {"trials": 1, "C_hat": 1e12, "delta_min": 1e-4, "solver": {"n": 16, "dt": 1e-3}}
        code, out = run(tmp_path, "stability", cfg)
        assert code == cli.EXIT_NONCONVERGENCE


class TestReproducibility:
    CONFIGS = {
        "lorentz": {"fields": 8, "product_pairs": 8, "n": 32, "brute_force_points": 10},
        "simulate": {"preset": "random", "t_end": 0.005, "solver": {"n": 32, "dt": 1e-3}},
        "stability": {"trials": 2, "C_hat": C_HAT, "solver": {"n": 16, "dt": 1e-3}},
        "selftest": {},
    }

    @pytest.mark.parametrize("command", list(CONFIGS))
    def test_bitwise_identical_outputs(self, tmp_path, command):
        cfg = self.CONFIGS[command]
        code_a, a = run(tmp_path, command, cfg, name="a")
        code_b, b = run(tmp_path, command, cfg, "--threads", "2", name="b")
        assert code_a == code_b == cli.EXIT_PASS
        assert digest(a) == digest(b)
        assert not [f for f in os.listdir(a) if f.startswith(".staging")]

    @pytest.mark.parametrize("command", list(CONFIGS))
    def test_convention_block_everywhere(self, tmp_path, command):
        _, out = run(tmp_path, command, self.CONFIGS[command])
        for root, _, files in os.walk(out):
            for f in files:
                path = os.path.join(root, f)
                if f.endswith(".csv"):
                    conv, _ = read_csv(path)
                    assert conv["laplacian_multiplier"] == "-4 pi^2 |k|^2"
                elif f.endswith(".json"):
                    assert "convention" in json.loads(open(path).read())

    def test_seed_override(self, tmp_path):
        cfg = dict(self.CONFIGS["lorentz"], seed=5)
        _, a = run(tmp_path, "lorentz", cfg, name="a")
        _, b = run(tmp_path, "lorentz", self.CONFIGS["lorentz"], "--seed", "5", name="b")
        _, c = run(tmp_path, "lorentz", self.CONFIGS["lorentz"], name="c")
        assert digest(a) == digest(b) != digest(c)


class TestLorentzCommand:
    def test_outputs(self, tmp_path):
        code, out = run(tmp_path, "lorentz", {"fields": 12, "product_pairs": 20, "q_list": [1.2, 1.6]})
        assert code == cli.EXIT_PASS
        _, rows = read_csv(out / "lorentz_sweep.csv")
        assert len(rows) == 24 and set(rows[0]) == {"field_id", "p", "r", "norm", "ratio", "bound", "pass"}
        rec = json.loads((out / "lorentz.json").read_text())
        assert rec["sweep_all_pass"] and rec["brute_force_within_bound"] and rec["linf_l2_product_all_hold"]
        assert 0 < rec["product_ratio_max"] <= 1
        assert rec["l22_identity_max_rel_gap"] <= 1e-12
        assert np.isfinite(rec["product_ratio_max"])
