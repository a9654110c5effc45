"""Exercise the compiled extension end to end.

Build with `cargo build -p rdlasso-py --release` and put the library on the
path as `rdlasso_py.so` (or pass its directory as the first argument).
"""

import json
import math
import random
import sys

if len(sys.argv) > 1:
    sys.path.insert(0, sys.argv[1])

import rdlasso_py as rd


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)
    print("ok  ", msg)


def main():
    s = rd.draw_sample("dgp2", n=500, p=5, seed=3, replication=0)
    check(s.n == 500 and s.p == 5 and len(s) == 500, "draw_sample shape")
    check(s.covariate_names == ["z", "w1", "w2", "w3", "w4"], "covariate names")
    check(abs(rd.true_tau("dgp2") - 0.0494) < 1e-12, "true_tau dgp2")

    est = rd.estimate(s)
    lo, hi = est.ci
    z = 1.959963984540054
    check(abs(lo - (est.tau_bc - z * est.se_robust)) < 1e-10, "ci consistent with se")
    check(est.method_used == "covariate_selection", "default method")
    check("z" in est.selected, "first-stage covariate selected")
    check(est.h > 0 and est.b > 0 and est.n_minus + est.n_plus > 0, "bandwidths and counts")
    d = est.to_dict()
    check(d["tau_bc"] == est.tau_bc and json.loads(est.to_json())["n"] == 500, "dict and json export")

    std = rd.estimate(s, method="standard", bandwidth="auto-nocov")
    adj = rd.estimate(s, method="adjusted", bandwidth="auto-nocov")
    check(std.selected == [] and std.lambda_ is None, "standard uses no covariates")
    check(adj.relative_efficiency(std) < 1.0, "covariates reduce variance")

    fixed = rd.estimate(s, method="standard", bandwidth="h=0.3,b=0.5", level=0.9)
    check((fixed.h, fixed.b, fixed.level) == (0.3, 0.5, 0.9), "fixed bandwidth and level")

    rng = random.Random(1)
    x = [rng.uniform(-1, 1) for _ in range(400)]
    y = [abs(v) for v in x]
    kink = rd.estimate(rd.Sample(x, y), method="standard", design="kink", kink_denominator=2.0,
                       bandwidth="h=0.5,b=0.8")
    check(abs(kink.tau_hat - 1.0) < 1e-8, "kink of |x| with b0 = 2")

    w = [1.0 if v >= 0 else 0.0 for v in x]
    y2 = [0.3 * t + v + 0.1 * rng.gauss(0, 1) for t, v in zip(w, x)]
    sharp = rd.estimate(rd.Sample(x, y2), method="standard")
    fuzzy = rd.estimate(rd.Sample(x, y2, takeup=w), method="standard", design="fuzzy")
    check(abs(fuzzy.first_stage[0] - 1.0) < 1e-12, "full compliance first stage")
    check(abs(fuzzy.tau_hat - sharp.tau_hat) < 1e-10, "fuzzy equals sharp under full compliance")

    fit = rd.lasso_fit(s, 0.4)
    check(fit.converged and 0 in [j for j, g in fit.gamma if g != 0.0], "lasso selects z")
    check(set(fit.selected("threshold")) <= set(fit.selected("support")), "threshold is a subset")
    big = rd.lasso_fit(s, 0.4, lambda_="1e6")
    check(big.selected() == [], "huge lambda selects nothing")
    check(abs(rd.plugin_lambda(1, 100) - 0.3619) < 1e-4, "plug-in lambda core")
    check(abs(rd.rho_n(500) - 0.6027) < 1e-4, "rho_n(500)")

    try:
        rd.estimate(rd.Sample([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]), method="standard")
    except rd.RdlassoError as e:
        check("side" in str(e), "one-sided data raises RdlassoError")
    else:
        raise AssertionError("expected RdlassoError")
    try:
        rd.estimate(s, method="bogus")
    except ValueError:
        check(True, "bad option raises ValueError")
    else:
        raise AssertionError("expected ValueError")

    summaries = rd.simulate("dgp1", [5], reps=20, seed=7)
    sel = [m for m in summaries[0]["methods"] if m["name"] == "selection"][0]
    check(sel["successes"] == 20 and math.isfinite(sel["rmse"]), "simulate summary")
    table = rd.simulate("dgp1", [5], reps=20, seed=7, csv=True, threads=1)
    check(len(table.strip().splitlines()) == 5, "simulate csv table")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
