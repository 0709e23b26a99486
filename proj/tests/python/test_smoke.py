"""End-to-end checks of the grbsde extension module and the CLI binary.

Run under ctest with PYTHONPATH pointing at the built module and GRBSDE_CLI
pointing at the solver binary, or standalone the same way:

    PYTHONPATH=build GRBSDE_CLI=build/grbsde python3 tests/python/test_smoke.py
"""

import json
import os
import subprocess
import sys
import tempfile

import grbsde

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

LADDER_CONFIG = {
    "problem": {
        "sigma_lo": 0.6,
        "sigma_hi": 1.0,
        "terminal": "min(-19 - 0.02*x, -19.5 + 0.03*x)",
        "driver": "-0.1*y",
        "lower": "-1 - 0.1*t",
        "upper": "0.2*exp(-t) + 0.05*x",
        "lipschitz": 0.1,
    },
    "lattice": {"horizon": 200.0, "steps": 120, "x0": 0.0},
    "penalty": {"levels": [4, 16, 64]},
}


def read_config(name):
    with open(os.path.join(REPO_ROOT, "configs", name)) as f:
        return f.read()


def test_scalar_helpers():
    assert grbsde.g_value(0.5, 1.0, 2.0) == 1.0
    assert grbsde.g_value(0.5, 1.0, -2.0) == -0.25
    assert grbsde.eval_expression("-x^2", x=3) == -9.0
    assert grbsde.eval_expression("max(t, y) + z", t=1, y=2, z=3) == 5.0
    assert grbsde.g_expectation(0.5, 1.0, "x^2", 1.0, 64) == 1.0


def test_expression_errors():
    try:
        grbsde.eval_expression("2*")
    except ValueError as err:
        assert "offset 2" in str(err)
    else:
        raise AssertionError("malformed expression was accepted")


def test_solve_quadratic():
    summary = grbsde.solve(read_config("quadratic.json"))
    assert summary["y0"] == 1.0
    assert summary["scheme"] == "penalized"
    assert summary["martingale_defect"] <= 1e-12
    assert summary["warnings"] == []


def test_config_rejection():
    try:
        grbsde.solve('{"problem": {}}')
    except ValueError as err:
        assert "missing" in str(err)
    else:
        raise AssertionError("incomplete configuration was accepted")


def test_ladder_report():
    report = grbsde.ladder(json.dumps(LADDER_CONFIG))
    assert report["rate_in_band"]
    assert -1.5 < report["slope"] < -0.5
    header = report["csv"].splitlines()[0]
    assert header.startswith("level,y0,")
    parsed = json.loads(report["json"])
    assert parsed["flags"]["rate_in_band"] is True


def test_selftest_passes():
    code, text = grbsde.selftest()
    assert code == 0, text
    assert text.count("[PASS]") == 9


def test_cli_roundtrip():
    cli = os.environ.get("GRBSDE_CLI")
    if not cli:
        print("GRBSDE_CLI not set, skipping CLI check")
        return
    with tempfile.TemporaryDirectory() as out_dir:
        proc = subprocess.run(
            [cli, "solve", "--config", os.path.join(REPO_ROOT, "configs", "quadratic.json"),
             "--out", out_dir],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        with open(os.path.join(out_dir, "summary.json")) as f:
            summary = json.load(f)
        assert summary["y0"] == 1.0
        with open(os.path.join(out_dir, "solution.csv")) as f:
            assert f.readline().startswith("step,offset,x,Y,Z,")


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
