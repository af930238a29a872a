#!/usr/bin/env python3
"""Smoke test for the ldc_py extension module.

Builds nothing itself: run `cargo build -p ldc-py` (or --release) first,
then `python3 python/smoke_test.py`. The script locates the compiled
cdylib, imports it, and exercises the main surface end to end.
"""
import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_ldc_py():
    candidates = [
        REPO / "target" / "release" / "libldc_py.so",
        REPO / "target" / "debug" / "libldc_py.so",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p ldc-py")
    stage = Path(tempfile.mkdtemp(prefix="ldc-py-"))
    shutil.copy2(lib, stage / "ldc_py.so")
    sys.path.insert(0, str(stage))
    import ldc_py  # noqa: E402

    return ldc_py


def approx(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    ldc = import_ldc_py()
    print(f"ldc_py {ldc.__version__}; features: {ldc.FEATURE_NAMES}")

    # ground truth model and sampling
    truth = ldc.demo_truth_model("R")
    assert truth.k == 3 and truth.d == 8
    draws = truth.sample(600, seed=1)
    assert len(draws) == 600
    lo, hi = truth.lower_bounds(), truth.upper_bounds()
    for row in draws:
        assert all(l < x < u for l, x, u in zip(lo, row, hi))
    assert truth.sample(5, seed=9) == truth.sample(5, seed=9), "sampling not deterministic"

    # density sanity at a component mean
    mean0 = truth.means()[0]
    assert truth.pdf(mean0) > 0.0
    outside = list(mean0)
    outside[0] = hi[0] + 1.0
    assert truth.pdf(outside) == 0.0

    # fit recovers the generator parameters reasonably at this scale
    model, report = ldc.BgmModel.fit(draws, 3, lo, hi, seed=0)
    assert report["converged"]
    trace = report["trace"]
    assert all(b >= a - 1e-8 * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))
    fitted_means = sorted(m[0] for m in model.means())
    truth_means = sorted(m[0] for m in truth.means())
    for f, t in zip(fitted_means, truth_means):
        approx(f, t, 0.5)

    # JSON round trip
    again = ldc.BgmModel.from_json(model.to_json())
    assert again.k == model.k
    approx(again.log_likelihood(draws[:50]), model.log_likelihood(draws[:50]), 1e-9)

    # noiseless reconstruction inverts feature extraction
    xi = list(draws[0])
    xi[0] = round(xi[0] / 0.05) * 0.05  # snap duration to the grid
    xi[2] = 0.0  # sigma_y
    xi[5] = 0.0  # sigma_v
    ev = ldc.reconstruct_event(xi, ts=0.05, seed=3)
    assert ev["side"] == "R"
    feats = ldc.extract_features_arrays(ev["t"], ev["y"], ev["v"], ev["c"], side=ev["side"])
    approx(feats["T"], xi[0], 1e-9)
    approx(feats["v_bar"], xi[3], 1e-9)
    approx(feats["d_y"], xi[1], 1e-6)
    assert ldc.filter_event_arrays(ev["t"], ev["y"], ev["v"], ev["c"]) == "accept"

    # controller run on the reconstructed event
    run = ldc.run_controlled(ev["t"], ev["y"], ev["v"], ev["c"], side="R")
    assert run["triggered"], "demo event should cross the threshold"
    assert len(run["e_y"]) == len(run["t"]) == len(run["delta"])

    # end-to-end evaluation
    left = ldc.demo_truth_model("L")
    report = json.loads(ldc.evaluate(model_l=left, model_r=truth, n=40, seed=5))
    for side_key in ("left", "right"):
        agg = report[side_key]
        assert agg["n_events"] == 40
        assert agg["comparison_defined"]
        assert agg["reduction_percent"] > 0.0, f"{side_key}: no reduction"
    assert report == json.loads(ldc.evaluate(model_l=left, model_r=truth, n=40, seed=5))

    print("per-side reductions:",
          {k: round(report[k]["reduction_percent"], 2) for k in ("left", "right")})
    print("smoke test passed")


if __name__ == "__main__":
    main()
