"""Smoke test for the relsens_py extension.

Builds the extension with cargo, loads it from the target directory and
runs the shipped Example 1 configuration.

    python3 python/smoke_test.py
"""

import importlib.util
import math
import pathlib
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "relsens-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / ("librelsens_py.dylib" if sys.platform == "darwin" else "librelsens_py.so")
    spec = importlib.util.spec_from_file_location("relsens_py", lib)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    rs = load()
    cfg = ROOT / "configs" / "example1_safety.json"

    summary = rs.validate(str(cfg))
    assert summary["inputs"] == ["R", "S", "XR", "XS"], summary

    with tempfile.TemporaryDirectory() as tmp:
        report = rs.run(str(cfg), out=tmp)
        assert abs(report["pf"] / 7.358e-3 - 1) < 1e-3, report["pf"]
        evppi = {row["name"]: row["normalized"] for row in report["safety"][0]["evppi"]["inputs"]}
        for name, want in {"R": 0.272, "S": 0.354, "XR": 0.102, "XS": 0.272}.items():
            assert abs(evppi[name] - want) < 0.005, (name, evppi[name])
        assert rs.verify_manifest(tmp) == 9

    curves = rs.form_curves([3.0], ratio=1e-3)
    assert len(curves["alpha"]) == 99 and all(math.isfinite(v) for v in curves["evppi"])
    assert abs(rs.beta_of_pf(1e-3) - 3.090232) < 1e-6

    try:
        rs.run(str(cfg), method="bogus")
    except rs.ConfigError:
        pass
    else:
        raise AssertionError("expected ConfigError")

    print("python smoke test ok")


if __name__ == "__main__":
    main()
