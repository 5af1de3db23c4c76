"""Smoke test for the _humankernel extension module.

Build and place the module next to this script first:

    cargo build --release -p humankernel-py
    cp target/release/lib_humankernel.so python/_humankernel.so
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import _humankernel as hk  # noqa: E402


def main():
    k = hk.Kernel.rbf(1.0, 2.0)
    assert abs(k.eval(0.0, 0.0) - 2.0) < 1e-12
    assert abs(k.eval(0.0, 1.0) - 2.0 * math.exp(-0.5)) < 1e-12
    assert k.n_params() == 2

    sm = hk.Kernel.spectral_mixture([(0.6, 0.2, 0.0016), (0.4, 0.6, 0.0025)])
    prod = hk.Kernel.product(sm, hk.Kernel.linear(0.05, -1.0))
    assert hk.Kernel.from_json(prod.to_json()).params() == prod.params()

    xs = [0.5 * i for i in range(12)]
    truth = hk.GpModel(k, 0.01)
    y = truth.sample_prior(xs, 1, 3)[0]
    lml = truth.log_marginal_likelihood(xs, y)
    assert math.isfinite(lml)
    assert len(truth.lml_grad(xs, y)) == 3

    x_test = [6.0 + 0.5 * i for i in range(8)]
    mean, cov = truth.posterior(xs, y, x_test)
    assert len(mean) == 8 and len(cov) == 8 and len(cov[0]) == 8

    fit = hk.fit_data(hk.GpModel(hk.Kernel.rbf(2.0, 1.0), 0.01), xs, y, restarts=2, seed=1)
    assert fit.best_objective >= lml - 1e-6
    print(fit.table())

    draws = truth.sample_posterior(xs, y, x_test, 10, 5)
    assert len(draws) == 10 and len(draws[0]) == 8
    pred = hk.fit_prediction(truth, xs, y, x_test, draws, restarts=2, seed=2)
    assert math.isfinite(pred.best_objective)
    m, c = hk.empirical_gaussian(draws)
    assert len(m) == 8 and len(c) == 8

    summary = json.loads(hk.run_experiment(json.dumps({"experiment": "occam", "seed": 1, "tasks": 2})))
    assert summary["fraction_ml_rank_1"] == 1.0

    try:
        hk.Kernel.rbf(-1.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative length-scale accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
