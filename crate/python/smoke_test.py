"""Smoke test for the `ltrc` Python module.

Build and run from the repository root:

    cargo build --release -p ltrc-python --features extension-module
    python3 python/smoke_test.py

The script looks for target/release/libltrc.so (or the macOS/Windows
equivalent) and loads it as `ltrc`.
"""

import importlib.machinery
import importlib.util
import json
import math
import os
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    release = os.path.join(ROOT, "target", "release")
    for name in ("libltrc.so", "libltrc.dylib", "ltrc.dll"):
        path = os.path.join(release, name)
        if os.path.exists(path):
            loader = importlib.machinery.ExtensionFileLoader("ltrc", path)
            spec = importlib.util.spec_from_file_location("ltrc", path, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("ltrc extension not found; build it with "
             "`cargo build --release -p ltrc-python --features extension-module`")


def main():
    ltrc = load_module()

    data = ltrc.simulate(1000, scenario="ate", seed=11)
    assert len(data) == 1000
    assert all(q < x for q, x in zip(data.q, data.x))
    report = json.loads(data.validate())
    assert not report["violations"]
    print("dataset:", data, "censoring rate:", report["summary"]["censoring_rate"])

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "obs.csv")
        data.to_csv(path)
        back = ltrc.Dataset.from_csv(path, covariates=2)
        assert back.x == data.x and back.a == data.a

    rebuilt = ltrc.Dataset(data.q, data.x, data.delta, data.a, data.z)
    assert len(rebuilt) == len(data)

    res = ltrc.estimate_ate(data, nuisance="Cox1/lgs1-Cox1-Cox1", nu="surv:3", seed=11)
    print("ate:", res)
    assert res.ci_lower < res.theta_hat < res.ci_upper
    assert abs(res.theta_hat + 0.1166) < 0.15

    fits = ltrc.fit_nuisances(data, seed=11)
    again = ltrc.solve_ate_with(data, fits, nu="surv:3")
    assert abs(again.theta_hat - res.theta_hat) < 1e-10
    v = fits.operator_values(data, nu="surv:3")
    assert len(v) == len(data) and all(math.isfinite(a) and math.isfinite(b) for a, b in v)
    assert 0.0 < fits.propensity([0.5, 0.5]) < 1.0

    ipw = ltrc.estimate_ate(data, estimator="ipw", seed=11)
    print("ipw:", ipw)

    truth, se = ltrc.mc_true_theta(nu="surv:3", n_mc=200_000, seed=3)
    print("truth: %.4f (mc se %.5f)" % (truth, se))
    assert abs(truth + 0.1166) < 0.005

    cate_data = ltrc.simulate(800, scenario="i", seed=5)
    model = ltrc.estimate_cate(cate_data, loss="ltrcR", nuisance="Cox1/lgs1-Cox1-Cox1",
                               nu="log", seed=5, n_search=2, max_trees=100)
    grid = [[z1 / 4, z2 / 4] for z1 in range(5) for z2 in range(5)]
    pred = model.predict_many(grid)
    truth_tau = [ltrc.true_tau("i", z) for z in grid]
    mse = sum((p - t) ** 2 for p, t in zip(pred, truth_tau)) / len(grid)
    print("cate grid mse: %.4f" % mse)
    restored = ltrc.CateModel.from_json(model.to_json())
    assert abs(restored.predict(grid[3]) - pred[3]) < 1e-12

    bench = json.loads(ltrc.bench_ate([1], n=300, reps=3, seed=1))
    print("bench keys:", sorted(bench))

    try:
        ltrc.estimate_ate(data, nu="surv")
    except ValueError as e:
        print("bad argument rejected:", e)
    else:
        raise AssertionError("expected ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
