"""Smoke test for the doseconf Python extension.

Build and install first, e.g. `pip install crates/python` or
`maturin develop -m crates/python/Cargo.toml`, then run this file.
"""

import json
import math

import doseconf


def main():
    data = doseconf.generate(3, 1, 600, seed=7)
    assert len(data) == 600 and data.dim == 3
    train, cal, test = data.split(seed=7)
    assert (len(train), len(cal), len(test)) == (300, 150, 150)

    model = doseconf.fit_cadrf(train, n_rounds=100, seed=1)
    x, t = test.x[0], test.t[0]
    lo, hi = model.interval(cal, x, t, 0.1)
    assert lo <= model.predict(x, t) <= hi

    # Constant weights reduce to the standard interval.
    assert model.weighted_interval(cal, [3.0] * len(cal), 3.0, x, t, 0.1) == (lo, hi)

    cps = doseconf.SplitCps(model, cal)
    pd = cps.predictive(model.predict(x, t), phi=0.5)
    assert 0.0 <= pd.cdf(test.y[0]) <= 1.0
    band = pd.band(0.1)
    assert band[0] <= pd.median() <= band[1]

    assert doseconf.weighted_quantile([1.0, 2.0, 3.0], [0.25] * 3, 0.25, 0.75) == 3.0
    assert doseconf.weighted_quantile([5.0], [0.5], 0.5, 0.9) == math.inf
    assert doseconf.effective_sample_size([1.0, 1.0, 1.0, 1.0]) == 4.0

    peak = doseconf.oracle_propensity(3, 1, [0.0, 0.0, 0.0], 0.0)
    assert abs(peak - 1.0 / (4.0 * math.sqrt(2.0 * math.pi))) < 1e-15
    assert doseconf.w_global(0.5, 0.0, -10.0, 10.0) == 2.0
    assert doseconf.w_local(1.0, 1.0, 3.0) == 1.0

    est = doseconf.fit_propensity(train, cal, seed=1, n_rounds=50)
    assert est.density(x, t) > 0.0

    grid = doseconf.treatment_grid(train, 40)
    assert len(grid) == 40 and grid == sorted(grid)

    report = json.loads(doseconf.run_experiment(json.dumps({
        "setup": 2, "scenario": 2, "n_seeds": 1, "n_samples": 200, "grid_k": 5,
        "methods": ["standard_cp", "wcp_global_oracle"],
        "learner": {"n_rounds": 30},
    })))
    assert len(report["rows"]) == 4 and not report["failed_seeds"]
    print("doseconf smoke test passed")


if __name__ == "__main__":
    main()
