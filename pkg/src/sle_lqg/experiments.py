"""Registry of named experiments run by the command-line runner.

Each experiment takes a flat parameter dict and returns an :class:`Outcome`
holding CSV rows, JSON records and pass/fail checks.  Checks marked
``gating=False`` are reported but do not change the exit status.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import analytic, gff, loewner, martingales, zipper
from .errors import ConsistencyError
from .loewner import derive_seed

__all__ = ["Check", "Outcome", "Experiment", "REGISTRY", "get"]


@dataclass
class Check:
    label: str
    passed: bool
    gating: bool = True
    detail: dict = field(default_factory=dict)


@dataclass
class Outcome:
    rows: list = field(default_factory=list)
    records: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.gating)

    def as_dict(self) -> dict:
        return {"records": self.records, "checks": [asdict(c) for c in self.checks], "passed": self.passed}


@dataclass(frozen=True)
class Experiment:
    name: str
    module: str
    verifies: str
    defaults: dict
    func: Callable = field(repr=False)

    @property
    def required(self) -> list:
        return sorted(self.defaults)

    def listing(self) -> dict:
        return {"name": self.name, "module": self.module, "fields": self.required, "verifies": self.verifies}


REGISTRY: dict = {}


def _register(name, module, verifies, **defaults):
    def deco(fn):
        REGISTRY[name] = Experiment(name, module, verifies, defaults, fn)
        return fn
    return deco


def get(name) -> Experiment:
    return REGISTRY[name]


# analytic ----------------------------------------------------------------

@_register("params_table", "analytic", "Q(gamma) = Q(kappa); d = alpha Q - alpha^2/2 = 1 + kappa/8; "
           "d_hat = beta Q - beta^2 = 2 - 8/kappa",
           kappa_list=[2.0, 8 / 3, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
def _params_table(p, ctx):
    out = Outcome()
    for kappa in p["kappa_list"]:
        P = analytic.build_params(kappa)
        row = {"kappa": kappa, "gamma": P.gamma, "gamma_dual": P.gamma_dual, "Q": P.Q,
               "d": P.d_bulk, "d_hat": P.d_boundary, "c": analytic.central_charge(kappa)}
        out.rows.append(row)
        q_err = abs(analytic.background_charge(kappa) - P.Q)
        d_err = abs(P.alpha_bulk * P.Q - P.alpha_bulk**2 / 2 - (1 + kappa / 8))
        out.checks.append(Check(f"Q kappa={kappa:.6g}", q_err <= 1e-14, detail={"abs_err": q_err}))
        out.checks.append(Check(f"d kappa={kappa:.6g}", d_err <= 1e-14, detail={"abs_err": d_err}))
        if P.d_boundary is not None:
            b_err = abs(P.beta_boundary * P.Q - P.beta_boundary**2 - P.d_boundary)
            out.checks.append(Check(f"d_hat kappa={kappa:.6g}", b_err <= 1e-14, detail={"abs_err": b_err}))
    return out


@_register("kpz_roundtrip", "analytic", "x = (gamma^2/4) Delta^2 + (1 - gamma^2/4) Delta and its inverse",
           gamma_list=[0.5, 1.0, math.sqrt(2), 1.9], x_list=[0.0, 0.1, 0.5, 1.0, 2.0])
def _kpz_roundtrip(p, ctx):
    out = Outcome()
    worst = 0.0
    for g in p["gamma_list"]:
        for x in p["x_list"]:
            delta = analytic.kpz_bulk_inverse(x, g)
            back = analytic.kpz_bulk(delta, g)
            err = abs(back - x)
            worst = max(worst, err / max(1.0, abs(x)))
            out.rows.append({"gamma": g, "x": x, "delta": delta, "x_back": back, "abs_err": err})
    out.checks.append(Check("roundtrip", worst <= 1e-12, detail={"max_rel_err": worst}))
    return out


@_register("green_symmetry", "analytic", "G_0(y, z) = -log(|y - z| |y - conj z|) is symmetric",
           n_points=200, seed=1)
def _green_symmetry(p, ctx):
    rng = np.random.Generator(np.random.Philox(key=derive_seed(ctx.master_seed, ctx.name, p["seed"])))
    n = int(p["n_points"])
    y = rng.uniform(-3, 3, n) + 1j * rng.uniform(0.05, 3, n)
    z = rng.uniform(-3, 3, n) + 1j * rng.uniform(0.05, 3, n)
    a = analytic.neumann_green(y, z)
    b = analytic.neumann_green(z, y)
    c = analytic.neumann_green(-np.conj(y), -np.conj(z))
    sym = float(np.max(np.abs(a - b)))
    refl = float(np.max(np.abs(a - c)))
    out = Outcome(rows=[{"re_y": yy.real, "im_y": yy.imag, "re_z": zz.real, "im_z": zz.imag, "G": g}
                        for yy, zz, g in zip(y, z, a)])
    out.checks.append(Check("symmetry", sym <= 1e-12, detail={"max_abs_err": sym}))
    out.checks.append(Check("reflection", refl <= 1e-12, detail={"max_abs_err": refl}))
    return out


@_register("density_identities", "analytic",
           "M^alpha_0 G = (sin theta)^(8/kappa - 2); M^gamma_0 = expected area density",
           kappa_list=[2.0, 3.0, 4.0, 6.0, 8.0], n_points=100, seed=2)
def _density_identities(p, ctx):
    rng = np.random.Generator(np.random.Philox(key=derive_seed(ctx.master_seed, ctx.name, p["seed"])))
    n = int(p["n_points"])
    w = rng.uniform(-3, 3, n) + 1j * rng.uniform(0.05, 3, n)
    out = Outcome()
    for kappa in p["kappa_list"]:
        P = analytic.build_params(kappa)
        lhs = analytic.bulk_moment_initial(w, P.alpha_bulk, kappa) * analytic.natural_param_density(w, kappa)
        rhs = analytic.expected_bulk_length_density(w, kappa)
        e1 = float(np.max(np.abs(lhs / rhs - 1)))
        lhs2 = analytic.bulk_moment_initial(w, P.gamma, kappa)
        rhs2 = analytic.expected_area_density(w, kappa)
        e2 = float(np.max(np.abs(lhs2 / rhs2 - 1)))
        out.rows.append({"kappa": kappa, "length_rel_err": e1, "area_rel_err": e2})
        out.checks.append(Check(f"length density kappa={kappa:g}", e1 <= 1e-12, detail={"max_rel_err": e1}))
        out.checks.append(Check(f"area density kappa={kappa:g}", e2 <= 1e-12, detail={"max_rel_err": e2}))
    return out


# loewner -----------------------------------------------------------------

@_register("flow_exact", "loewner", "zero driver: f_t(z) = sqrt(z^2 - 4t) at every grid time",
           T=1.0, dt=1e-3, points=[1j, 1 + 1j, -2 + 0.5j, 3 + 0j], scheme="vertical")
def _flow_exact(p, ctx):
    d = loewner.zero_driver(p["T"], p["dt"])
    pts = np.array(p["points"], dtype=complex)
    b = loewner.run_flow(d.increments, d.dt, pts, scheme=p["scheme"], record=True)
    t = b.t[:, None]
    exact = pts * np.sqrt(1 - 4 * t / pts**2 + 0j)
    exact = np.where(exact.imag < 0, -exact, exact)
    err = float(np.max(np.abs(b.w - exact)))
    out = Outcome(rows=[{"re_z": z.real, "im_z": z.imag, "re_w": w.real, "im_w": w.imag}
                        for z, w in zip(pts, b.w[-1])])
    out.checks.append(Check("exact steps", err <= 1e-10, detail={"max_abs_err": err}))
    return out


# martingales -------------------------------------------------------------

def _order_check(out, label, res):
    out.records.append(dict(res, name=label))
    out.rows.append(dict(res, name=label))
    out.checks.append(Check(f"{label} ratio in [0.3, 0.7]", 0.3 <= res["ratio"] <= 0.7, detail=res))


@_register("qv_check", "martingales", "<h_t(z), h_t(z)> = C_0(z) - C_t(z) with C = -log(Im f |f'|)",
           kappa=2.0, z=1 + 1j, T=0.5, dt=1e-3, N=100)
def _qv_check(p, ctx):
    out = Outcome()
    res = martingales.richardson_ratio(p["kappa"], p["z"], p["T"], p["dt"], int(p["N"]),
                                       derive_seed(ctx.master_seed, ctx.name))
    _order_check(out, "qv", res)
    zero = loewner.reverse_flow(loewner.zero_driver(p["T"], p["dt"]), 2j)
    rec = martingales.pathwise_qv_check(zero)
    out.checks.append(Check("zero driver on imaginary axis", rec.abs_err <= 1e-10,
                            detail={"lhs": rec.lhs, "rhs": rec.rhs}))
    return out


@_register("covariation_check", "martingales", "<h_t(y), h_t(z)> = G_0(y, z) - G_t(y, z)",
           kappa=3.0, y=1 + 1j, z=-1 + 2j, T=0.5, dt=1e-3, N=100)
def _covariation_check(p, ctx):
    out = Outcome()
    res = martingales.richardson_ratio(p["kappa"], p["y"], p["T"], p["dt"], int(p["N"]),
                                       derive_seed(ctx.master_seed, ctx.name), pair=p["z"])
    _order_check(out, "covariation", res)
    zero = loewner.reverse_flow(loewner.zero_driver(p["T"], p["dt"]), 1j, track_pair=2j)
    rec = martingales.pathwise_covariation_check(zero)
    out.checks.append(Check("zero driver on imaginary axis", rec.abs_err <= 1e-10,
                            detail={"lhs": rec.lhs, "rhs": rec.rhs}))
    return out


def _mc(out, spec, ctx, max_excluded=None):
    res = martingales.mc_expectation(spec, workers=ctx.workers)
    rec = res.record()
    out.records.append(rec)
    out.rows.append({k: v for k, v in rec.items() if k != "params"})
    ok = abs(res.z_score) <= 3
    out.checks.append(Check(f"{res.name} within 3 SE", ok, detail={"z_score": res.z_score}))
    if max_excluded is not None:
        out.checks.append(Check(f"{res.name} exclusion below {max_excluded:g}",
                                res.excluded_fraction < max_excluded,
                                detail={"excluded_fraction": res.excluded_fraction}))
    return res


@_register("mart_h_mc", "martingales", "E h_T(z) = h_0(z) with h_0 = (2/sqrt(kappa)) log|z|",
           kappa=8 / 3, z=2j, T=0.5, dt=1e-3, N=10000)
def _mart_h_mc(p, ctx):
    out = Outcome()
    _mc(out, martingales.McSpec("h", p["z"], p["kappa"], p["T"], p["dt"], int(p["N"]),
                                ctx.master_seed, name=ctx.name), ctx)
    return out


@_register("exp_mart_mc", "martingales", "E M^alpha_T(z) = |z|^(2 alpha/sqrt(kappa)) (Im z)^(-alpha^2/2)",
           kappa=4.0, alpha=0.3, z=2j, T=0.5, dt=1e-3, N=10000)
def _exp_mart_mc(p, ctx):
    out = Outcome()
    _mc(out, martingales.McSpec("M_bulk", p["z"], p["kappa"], p["T"], p["dt"], int(p["N"]),
                                ctx.master_seed, alpha=p["alpha"], name=ctx.name), ctx)
    return out


@_register("dual_form", "martingales", "exp(alpha h + alpha^2 C/2) = |w|^(2 alpha/sqrt kappa) "
           "|f'|^(alpha Q - alpha^2/2) (Im w)^(-alpha^2/2) at every step",
           kappa=2.0, alpha=0.5, z=1 + 1j, T=0.5, dt=1e-3, N=100)
def _dual_form(p, ctx):
    seeds = [derive_seed(ctx.master_seed, ctx.name, i) for i in range(int(p["N"]))]
    inc = loewner.sample_increments(p["kappa"], p["T"], p["dt"], seeds)
    b = loewner.run_flow(inc, p["dt"], np.array([complex(p["z"])]), record=True)
    out = Outcome()
    try:
        m = martingales.exp_martingale_bulk(loewner.FlowState(p["T"], b.w, b.dw), p["alpha"], p["kappa"])
        ok, detail = True, {"n_evaluations": int(np.size(m))}
    except ConsistencyError as exc:
        ok, detail = False, {"error": str(exc)}
    out.checks.append(Check("dual forms agree to 1e-10", ok, detail=detail))
    return out


@_register("forward_length_mc", "martingales", "E G(g_T(z)) |g_T'(z)|^(2-d) = G(z)",
           kappa=2.0, z=2j, T=0.3, dt=1e-3, N=10000)
def _forward_length_mc(p, ctx):
    out = Outcome()
    _mc(out, martingales.McSpec("forward_length", p["z"], p["kappa"], p["T"], p["dt"], int(p["N"]),
                                ctx.master_seed, name=ctx.name), ctx, max_excluded=0.01)
    return out


# gff ---------------------------------------------------------------------

def _moment_chunk(args):
    n, seeds, eps = args
    return gff.circle_average_samples(gff.iter_gff(gff.UnitDisc(), n, gff.DIRICHLET, seeds), 0j, eps)


def disc_circle_samples(n, seeds, eps, workers=1, chunk=100):
    """Circle averages at the origin, one row per seed, computed in fixed chunks."""
    jobs = [(n, seeds[i:i + chunk], list(eps)) for i in range(0, len(seeds), chunk)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_moment_chunk, jobs))
    else:
        parts = [_moment_chunk(j) for j in jobs]
    return np.concatenate(parts)


def default_moment_radii(n):
    h = 2.0 / (n - 1)
    return list(np.geomspace(8 * h, 0.25, 5))


@_register("gff_moment", "gff", "E exp(gamma h_eps(0)) = eps^(-gamma^2/2) on the unit disc",
           gamma_list=[1.0, math.sqrt(2)], n=256, N=2000, eps_list=None)
def _gff_moment(p, ctx):
    n = int(p["n"])
    eps = p["eps_list"] or default_moment_radii(n)
    seeds = [derive_seed(ctx.master_seed, ctx.name, i) for i in range(int(p["N"]))]
    S = disc_circle_samples(n, seeds, eps, ctx.workers)
    out = Outcome()
    for g in p["gamma_list"]:
        fit = gff.fit_moment_slope(S, g, eps)
        rec = {"gamma": g, "slope": fit.slope, "stderr": fit.stderr, "target": fit.expected_slope,
               "z_score": fit.z_score, "n_fields": len(seeds), "eps": list(map(float, eps))}
        out.records.append(rec)
        out.rows.append({k: v for k, v in rec.items() if k != "eps"})
        out.checks.append(Check(f"slope gamma={g:.6g} within 3 SE", abs(fit.z_score) <= 3,
                                detail={"z_score": fit.z_score}))
    return out


@_register("area_gamma0", "gff", "gamma = 0 quantum area is Lebesgue measure (pi on the unit disc)",
           n=256, epsilon=0.1, seed=0)
def _area_gamma0(p, ctx):
    f = gff.sample_gff(gff.UnitDisc(), int(p["n"]), gff.DIRICHLET,
                       derive_seed(ctx.master_seed, ctx.name, p["seed"]))
    total = gff.quantum_area(f, 0.0, p["epsilon"]).total
    rel = abs(total - math.pi) / math.pi
    out = Outcome(rows=[{"n": p["n"], "total": total, "rel_err": rel}])
    out.checks.append(Check("area within 1%", rel <= 0.01, detail={"rel_err": rel}))
    return out


# zipper ------------------------------------------------------------------

@_register("welding_trend", "zipper", "welded arcs [x', 0] and [0, x] carry equal boundary quantum length",
           kappa=2.0, t=0.25, dt=1e-3, N=500, eps_list=[0.08, 0.04, 0.02], box=[8.0, 4.0],
           grid=[512, 256], x_fraction=0.5)
def _welding_trend(p, ctx):
    out = Outcome()
    common = dict(box=tuple(p["box"]), n=tuple(int(v) for v in p["grid"]), x_fraction=p["x_fraction"],
                  workers=ctx.workers)
    seed = derive_seed(ctx.master_seed, ctx.name)
    s = zipper.welding_ensemble(p["kappa"], p["t"], p["dt"], int(p["N"]), p["eps_list"], seed, **common)
    c = zipper.welding_ensemble(p["kappa"], p["t"], p["dt"], int(p["N"]), p["eps_list"], seed,
                                gamma=0.0, **common)
    out.rows = [dict(r, gamma=s.gamma) for r in s.rows] + [dict(r, gamma=0.0) for r in c.rows]
    out.records = [dict(s.record(), control=False), dict(c.record(), control=True)]
    out.checks.append(Check("median rel_diff decreases in eps", s.decreasing, gating=False,
                            detail={"medians": list(s.medians), "n_failed": s.n_failed}))
    out.checks.append(Check("gamma=0 control shows no decrease", not c.decreasing, gating=False,
                            detail={"medians": list(c.medians)}))
    return out


@_register("cov_transform", "zipper", "nu(f_t(D)) = int_D |f_t'|^d G dz (change of variables)",
           rect=[1.0, 2.0, 1.0, 2.0], kappa=6.0, t=1.0, dt=1e-3, m_list=[50, 100, 200], driver="zero")
def _cov_transform(p, ctx):
    if p["driver"] == "zero":
        d = loewner.zero_driver(p["t"], p["dt"])
    else:
        d = loewner.sample_driver(p["kappa"], p["t"], p["dt"], derive_seed(ctx.master_seed, ctx.name))
    out = Outcome()
    recs = [zipper.covariance_transform_check(p["rect"], d, p["t"], p["kappa"], int(m)) for m in p["m_list"]]
    for r in recs:
        out.rows.append({"m": r.m, "lhs": r.lhs, "rhs": r.rhs, "rel_err": r.rel_err})
        out.records.append({"m": r.m, "lhs": r.lhs, "rhs": r.rhs, "rel_err": r.rel_err})
    last = recs[-1]
    out.checks.append(Check(f"rel_err <= 1e-6 at m={last.m}", last.rel_err <= 1e-6,
                            detail={"rel_err": last.rel_err}))
    if len(recs) >= 2:
        orders = [math.log(a.rel_err / b.rel_err) / math.log(b.m / a.m) for a, b in zip(recs, recs[1:])]
        out.checks.append(Check("observed order near 2", all(1.8 <= o <= 2.2 for o in orders),
                                detail={"orders": orders}))
    return out
