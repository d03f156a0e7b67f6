#!/usr/bin/env python3
"""Smoke test for the vstsae_py extension module.

Builds the cdylib if needed, stages it as an importable module, and
exercises the catalog, model fitting, estimation, MSE, intervals and a tiny
simulation run.

Usage: python3 python/smoke_test.py [--release]
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_and_import(release: bool):
    profile = "release" if release else "debug"
    lib = ROOT / "target" / profile / "libvstsae_py.so"
    if not lib.exists():
        cmd = ["cargo", "build", "-p", "vstsae-py"]
        if release:
            cmd.append("--release")
        subprocess.run(cmd, cwd=ROOT, check=True)
    if not lib.exists():
        sys.exit(f"extension library not found at {lib}")
    stage = Path(tempfile.mkdtemp(prefix="vstsae_py_"))
    shutil.copy2(lib, stage / "vstsae_py.so")
    sys.path.insert(0, str(stage))
    import vstsae_py

    return vstsae_py


def approx(a, b, tol=1e-12):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    release = "--release" in sys.argv[1:]
    v = build_and_import(release)
    print(f"loaded vstsae_py {v.__version__}")

    # Catalog.
    families = v.list_families()
    assert len(families) == 7 and "bernoulli-arcsin" in families
    t = v.Transform("bernoulli-arcsin")
    approx(t.a, 1.0)
    approx(t.b, -0.5)
    approx(t.g(0.5), 0.0)
    approx(t.g_inv(t.g(0.3)), 0.3)
    approx(t.curvature_ratio(0.75), 0.25)
    approx(t.back_transform(0.0, 0.1), 0.5)
    approx(t.back_transform(t.forward_shift(0.4, 0.08), 0.08), 0.4)
    approx(t.posterior_mean(0.3, 0.04), (1 + math.sin(0.3) * math.exp(-0.02)) / 2)
    gamma = v.Transform("gamma-log", shape=4.0)
    approx(gamma.a, -0.25)

    # Unknown family raises.
    try:
        v.Transform("cauchy")
        raise AssertionError("expected ValueError for unknown family")
    except ValueError:
        pass

    # Dataset, fit and estimation on arcsin data.
    y = [0.42, 0.55, 0.38, 0.61, 0.47, 0.52, 0.35, 0.58, 0.44, 0.50]
    ds = v.Dataset(
        t,
        area_ids=[f"a{i}" for i in range(10)],
        y_direct=y,
        n=[10] * 10,
        sum_w2=[0.12] * 10,
    )
    assert len(ds) == 10 and ds.p == 1
    fit = v.fit(ds, method="YL")
    assert fit.method == "YL" and fit.a_hat > 0.0
    assert all(0.0 <= g < 1.0 for g in fit.gamma)

    est = v.point_estimates(ds, t, fit)
    assert set(est) >= {"area_id", "direct", "nbt", "peb", "eb"}
    for eb, direct in zip(est["eb"], est["direct"]):
        assert 0.0 <= eb <= 1.0
        # Shrinkage pulls toward the common mean.
        assert abs(eb - 0.5) <= abs(direct - 0.5) + 0.05

    mse = v.mse(ds, t, fit, b=64, seed=5)
    assert all(m >= 0.0 for m in mse["m1"])
    assert all(ms >= 0.0 for ms in mse["ms"])
    # pms/ms = (1 + a*D/2)^2 exactly.
    mult = (1 + 0.12 / 2) ** 2
    for ms, pms in zip(mse["ms"], mse["pms"]):
        approx(pms, ms * mult, tol=1e-12)

    cis = v.intervals(
        ds, t, methods=["TDirect", "TEB.B", "Mpnaive"], alpha=0.05, b=300, seed=9
    )
    for tag in ("TDirect", "TEB.B", "Mpnaive"):
        assert len(cis[tag]) == 10
    for (lo, hi), eb in zip(cis["TEB.B"], est["eb"]):
        assert lo <= eb <= hi

    # Determinism of the bootstrap given a seed.
    again = v.intervals(ds, t, methods=["TEB.B"], alpha=0.05, b=300, seed=9)
    assert again["TEB.B"] == cis["TEB.B"]

    # Tiny simulation scenario.
    report = v.simulate(m=10, n=10, replications=8, seed=3)
    assert report["m"] == 10 and report["replications_used"] == 8
    names = [c["name"] for c in report["mse"]]
    assert "EB.RE" in names and "Direct" in names
    eb_mse = next(c["value"] for c in report["mse"] if c["name"] == "EB.RE")
    dir_mse = next(c["value"] for c in report["mse"] if c["name"] == "Direct")
    assert eb_mse < dir_mse
    assert 0.0 <= report["zero_reml_pct"]["value"] <= 100.0

    print("smoke test OK: catalog, fit, estimates, mse, intervals, simulate")


if __name__ == "__main__":
    main()
