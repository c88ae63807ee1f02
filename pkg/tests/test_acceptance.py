"""One test per acceptance criterion, each run at its stated tolerance.

Every test prints a single ``criterion N: PASS|FAIL ...`` line; the lines are
collected again in a summary section at the end of the pytest run.
Criterion 9 is exploratory and never fails the run.
"""
import math

import numpy as np
import pytest

from sle_lqg import analytic, martingales as mg, runner, zipper
from sle_lqg.errors import ConsistencyError
from sle_lqg.experiments import REGISTRY
from sle_lqg.loewner import FlowState, forward_flow, reverse_flow, run_flow, sample_increments, zero_driver
from sle_lqg.loewner import derive_seed

RESULTS = {}


def report(n, passed, detail, gating=True):
    tag = "PASS" if passed else ("FAIL" if gating else "FAIL (non-gating)")
    line = f"criterion {n}: {tag} {detail}"
    RESULTS[n] = line
    print(line)


def run_registered(name, **overrides):
    cfg = runner.resolve(name, name, overrides)
    return REGISTRY[name].func(dict(cfg.params), runner.RunContext(name, 0, 1))


def test_criterion_01_exponent_table():
    worst = 0.0
    for kappa in (2.0, 8 / 3, 3.0, 4.0, 6.0, 8.0):
        p = analytic.build_params(kappa)
        s = math.sqrt(kappa)
        worst = max(worst, abs((p.gamma / 2 + 2 / p.gamma) - (s / 2 + 2 / s)),
                    abs(p.alpha_bulk * p.Q - p.alpha_bulk**2 / 2 - (1 + kappa / 8)))
    for kappa in (5.0, 6.0, 7.0):
        p = analytic.build_params(kappa)
        worst = max(worst, abs(p.beta_boundary * p.Q - p.beta_boundary**2 - (2 - 8 / kappa)))
    ok = worst <= 1e-14
    report(1, ok, f"max abs error {worst:.2e} (tol 1e-14)")
    assert ok


def test_criterion_02_dual_forms():
    seeds = [derive_seed(0, "criterion-2", i) for i in range(100)]
    inc = sample_increments(2.0, 0.5, 1e-3, seeds)
    b = run_flow(inc, 1e-3, np.array([1 + 1j]), record=True)
    st = FlowState(0.5, b.w, b.dw)
    worst, ok = 0.0, True
    Q = analytic.background_charge(2.0)
    for alpha in (0.3, 0.5, 1.0, math.sqrt(2) / 2):
        try:
            prod = mg.exp_martingale_bulk(st, alpha, 2.0)
        except ConsistencyError:
            ok = False
            continue
        h = mg.mart_h(st, 2.0)
        C = mg.conformal_factor_C(st)
        worst = max(worst, float(np.max(np.abs(np.exp(alpha * h + alpha**2 / 2 * C) / prod - 1))))
    ok = ok and worst <= 1e-10
    report(2, ok, f"max relative gap {worst:.2e} over {b.w.shape[0]} steps x 100 paths (tol 1e-10)")
    assert ok


def test_criterion_03_pathwise_identities():
    qv = mg.richardson_ratio(2.0, 1 + 1j, 0.5, 1e-4, 100, seed=derive_seed(0, "criterion-3-qv"))
    cov = mg.richardson_ratio(3.0, 1 + 1j, 0.5, 1e-4, 100, seed=derive_seed(0, "criterion-3-cov"), pair=-1 + 2j)
    z1 = mg.pathwise_qv_check(reverse_flow(zero_driver(0.5, 1e-4), 2j))
    z2 = mg.pathwise_covariation_check(reverse_flow(zero_driver(0.5, 1e-4), 1j, track_pair=3j))
    ok = (0.3 <= qv["ratio"] <= 0.7 and 0.3 <= cov["ratio"] <= 0.7
          and z1.abs_err <= 1e-10 and z2.abs_err <= 1e-10)
    report(3, ok, f"ratios qv={qv['ratio']:.4f} covariation={cov['ratio']:.4f} (in [0.3, 0.7]); "
                  f"zero-driver errors {z1.abs_err:.1e}, {z2.abs_err:.1e} (tol 1e-10)")
    assert ok


def test_criterion_04_expectations():
    scores = {}
    for kappa, alpha in ((8 / 3, 0.3), (4.0, 0.3), (6.0, 0.25)):
        for q, a in (("h", None), ("M_bulk", alpha)):
            spec = mg.McSpec(q, 2j, kappa, 0.5, 1e-3, 10_000, 0, alpha=a, name=f"criterion-4-{q}-{kappa:.4g}")
            scores[f"{q}(kappa={kappa:.4g})"] = mg.mc_expectation(spec).z_score
    ok = all(abs(z) <= 3 for z in scores.values())
    report(4, ok, "z-scores " + ", ".join(f"{k}={v:+.2f}" for k, v in scores.items()) + " (|z| <= 3)")
    assert ok


def test_criterion_05_moment_scaling():
    out = run_registered("gff_moment")
    ok = out.passed
    report(5, ok, "slopes " + ", ".join(f"gamma={r['gamma']:.4g}: {r['slope']:.4f} +- {r['stderr']:.4f} "
                                        f"(target {r['target']:.4g}, z={r['z_score']:+.2f})" for r in out.records))
    assert ok


def test_criterion_06_density_identities():
    x, y = np.meshgrid(np.linspace(-3, 3, 10), np.linspace(0.05, 3, 10))
    z = (x + 1j * y).ravel()
    worst = 0.0
    for kappa in (2.0, 8 / 3, 3.0, 4.0, 6.0, 8.0):
        lhs = analytic.bulk_moment_initial(z, math.sqrt(kappa) / 2, kappa) * analytic.natural_param_density(z, kappa)
        worst = max(worst, float(np.max(np.abs(lhs / analytic.expected_bulk_length_density(z, kappa) - 1))))
        gamma = analytic.build_params(kappa).gamma
        area = analytic.bulk_moment_initial(z, gamma, kappa) / analytic.expected_area_density(z, kappa)
        worst = max(worst, float(np.max(np.abs(area - 1))))
    flat4 = float(np.max(np.abs(analytic.expected_bulk_length_density(z, 4.0) - 1)))
    flat6 = float(np.max(np.abs(analytic.expected_boundary_densities(np.linspace(0.1, 5, 100), 6.0)
                                .intersection_density - 1)))
    ok = worst <= 1e-12 and flat4 <= 1e-12 and flat6 <= 1e-12
    report(6, ok, f"max relative error {worst:.2e}; kappa=4 bulk density off by {flat4:.1e}, "
                  f"kappa=6 intersection density off by {flat6:.1e} (tol 1e-12)")
    assert ok


def test_criterion_07_forward_length():
    res = mg.mc_expectation(mg.McSpec("forward_length", 2j, 2.0, 0.3, 1e-3, 10_000, 0, name="criterion-7"))
    deg = mg.mc_expectation(mg.McSpec("forward_length", 2j, 8.0, 0.3, 1e-3, 1000, 0, name="criterion-7-k8"))
    ok = abs(res.z_score) <= 3 and res.excluded_fraction < 0.01 and deg.mean == 1.0 and deg.stderr == 0.0
    report(7, ok, f"z={res.z_score:+.2f}, excluded {res.excluded_fraction:.2%}; "
                  f"kappa=8 mean {deg.mean!r} stderr {deg.stderr!r}")
    assert ok


def test_criterion_08_covariance():
    recs = [zipper.covariance_transform_check([1, 2, 1, 2], zero_driver(1.0, 1e-3), 1.0, 6.0, m=m)
            for m in (50, 100, 200)]
    orders = [math.log(a.rel_err / b.rel_err) / math.log(2) for a, b in zip(recs, recs[1:])]
    ok = recs[-1].rel_err <= 1e-6 and all(1.8 <= o <= 2.2 for o in orders)
    report(8, ok, f"rel_err {recs[-1].rel_err:.2e} at m=200 (tol 1e-6); observed orders "
                  + ", ".join(f"{o:.3f}" for o in orders))
    assert ok


def test_criterion_09_welding_trend():
    out = run_registered("welding_trend")
    main, control = out.records
    ok = main["decreasing"] and not control["decreasing"]
    report(9, ok, f"medians {[round(m, 4) for m in main['medians']]} over eps {list(main['epsilons'])}, "
                  f"{main['n_failed']} of {main['n_members']} members without a resolvable partner; "
                  f"gamma=0 control {[round(m, 4) for m in control['medians']]}", gating=False)
    # exploratory: the run must complete, the trend itself does not gate
    assert main["n_members"] == 500


SMALL = {
    "params_table": {}, "kpz_roundtrip": {}, "green_symmetry": {}, "density_identities": {}, "flow_exact": {},
    "qv_check": {"N": "12"}, "covariation_check": {"N": "12"}, "dual_form": {"N": "12"},
    "mart_h_mc": {"N": "700", "T": "0.1"}, "exp_mart_mc": {"N": "700", "T": "0.1"},
    "forward_length_mc": {"N": "700", "T": "0.1"},
    "gff_moment": {"n": "64", "N": "40", "eps_list": "[0.07, 0.1, 0.15, 0.2]"},
    "area_gamma0": {"n": "64"},
    "welding_trend": {"N": "6", "grid": "[128, 64]", "eps_list": "[0.16, 0.08]"},
    "cov_transform": {"m_list": "[20, 40]"},
}


def test_criterion_10_determinism(tmp_path):
    assert set(SMALL) == set(REGISTRY)
    configs = [runner.resolve(name, name, over) for name, over in SMALL.items()]
    texts = []
    for k, workers in enumerate((1, 8, 1)):
        _, rep = runner.run(configs, tmp_path / f"w{k}", master_seed=5, workers=workers, timestamp="fixed")
        files = ["report.json", "aggregate.csv"] + [f"{name}.csv" for name in SMALL]
        texts.append([(tmp_path / f"w{k}" / f).read_text() for f in files])
    ok = texts[0] == texts[1] == texts[2]
    n_checks = sum(len(e["checks"]) for e in rep["experiments"])
    report(10, ok, f"{len(SMALL)} experiments ({n_checks} checks): reports and CSVs byte-identical "
                   f"for workers=1, workers=8 and a rerun")
    assert ok
