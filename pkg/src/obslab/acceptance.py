"""The twelve acceptance criteria, shared by ``obslab validate`` and the test suite.

Each ``criterion_N`` returns a :class:`CriterionResult`. Expensive sweeps
are cached so criteria that read the same runs do not repeat them.
"""

from dataclasses import dataclass, field
import functools
import json
import math
import time

import numpy as np
import scipy.linalg as sla

from obslab import quasiuni as qu
from obslab import theory
from obslab import transplant as tp
from obslab.discretize import (
    DIRICHLET, DiscreteSpace, assemble_form, build_grid, classify_cells,
)
from obslab.geometry import SolidRegion, Torus
from obslab.harness.runner import run_scenario
from obslab.sparsela import (
    MetricNormProblem, heat_apply, lanczos_smallest, make_solver, metric_opnorm,
)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict)


def _timed(number, name):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            passed, detail, data = fn(*args, **kwargs)
            return CriterionResult(number, name, bool(passed), detail,
                                   time.perf_counter() - t0, data)
        run.number = number
        return run
    return wrap


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


# 1 -------------------------------------------------------------------------

def torus_eigenvalues(n, L=1.0, count=10):
    h = L / n
    s = (4 / h ** 2) * np.sin(np.pi * np.arange(n) / n) ** 2
    return np.sort(np.add.outer(s, s).ravel())[:count]


def dirichlet_square_eigenvalues(n, count=10):
    h = 1.0 / n
    s = (4 / h ** 2) * np.sin(np.pi * np.arange(1, n) * h / 2) ** 2
    return np.sort(np.add.outer(s, s).ravel())[:count]


def dirichlet_square_form(n):
    """Unit square with one removed row and column of cells: an (n-1)^2 Dirichlet block."""
    grid = build_grid(Torus(2, 1.0), n)
    h = grid.h
    mask = classify_cells(grid, lambda x: (x[:, 0] < h) | (x[:, 1] < h), bc=DIRICHLET)
    return assemble_form(DiscreteSpace(mask))


@_timed(1, "closed-form eigenvalues")
def criterion_1(seed=0):
    worst = 0.0
    data = {}
    for n in (32, 64):
        grid = build_grid(Torus(2, 1.0), n)
        form = assemble_form(DiscreteSpace(classify_cells(grid, None)))
        solver = make_solver(form.K, form.mass, 1.0, periodic_shape=grid.shape,
                             edge_weight=form.edge_weight)
        vals, _ = lanczos_smallest(form.K, form.mass, 10, solver=solver)
        exact = torus_eigenvalues(n)
        err_t = float(np.max(np.abs(vals - exact) / np.maximum(exact, 1.0)))
        sq = dirichlet_square_form(n)
        vals_d, _ = lanczos_smallest(sq.K, sq.mass, 10)
        err_d = _rel(vals_d, dirichlet_square_eigenvalues(n))
        data[n] = {"torus": err_t, "dirichlet_square": err_d}
        worst = max(worst, err_t, err_d)
    return worst <= 1e-8, f"max relative error {worst:.2e} (tol 1e-8)", data


# 2 -------------------------------------------------------------------------

def baseline_config(scenario):
    cfg = {"schema": 1, "name": f"baseline_{scenario}", "scenario": scenario, "m": 2,
           "eps": [1 / 16], "eta": {"values": [0.5]}, "gamma": 0.25,
           "centers": {"kind": "none"}, "grid": {"n": 128},
           "measure": {"spectra": False}, "heat_times": [0.1]}
    return cfg


@_timed(2, "unitary baseline")
def criterion_2(seed=0):
    worst = 0.0
    data = {}
    for scenario in ("neu_fade", "dir_fade"):
        rep = run_scenario(baseline_config(scenario), seed=seed)
        row = rep.results[0]
        values = list(row["delta"].values()) + [row["defect"]["resolvent"]]
        values += list(row["defect"]["heat"].values())
        data[scenario] = max(values)
        worst = max(worst, max(values))
    return worst <= 1e-7, f"largest component or defect {worst:.2e} (tol 1e-7)", data


# 3 -------------------------------------------------------------------------

def identity_pairs():
    torus = Torus(2, 1.0)
    S = SolidRegion.box(torus, [0.25, 0.25], [0.75, 0.75])
    for n, eps in ((128, 1 / 16), (256, 1 / 32)):
        grid = build_grid(torus, n)
        yield tp.build_neu_fade(eps, 0.25, grid)
        yield tp.build_dir_fade(eps, None, 0.5, 0.25, grid)
        yield tp.build_dir_solid(eps, 2 * eps, None, S, grid)


@_timed(3, "identification identities")
def criterion_3(seed=0):
    adj, comp = 0.0, 0.0
    for pair in identity_pairs():
        adj = max(adj, tp.adjoint_mismatch(pair, trials=50, seed=seed))
        comp = max(comp, tp.composition_defect(pair))
    ok = adj <= 1e-12 and comp == 0.0
    return ok, f"adjoint mismatch {adj:.2e} (tol 1e-12), composition defect {comp:g}", \
        {"adjoint": adj, "composition": comp}


# 4 and 6 -------------------------------------------------------------------

def certification_configs():
    """Three scenarios times four eps on grids of at most 256 cells per side."""
    common = {"schema": 1, "m": 2, "grid": {"n": 256}, "spectra": {"count": 20}}
    return [
        dict(common, name="cert_neu_fade", scenario="neu_fade",
             eps=[1 / 16, 1 / 20, 1 / 24, 1 / 32], eta={"values": [0.25] * 4}),
        dict(common, name="cert_dir_fade", scenario="dir_fade", gamma=0.25,
             eps=[1 / 20, 1 / 24, 1 / 28, 1 / 32], eta={"values": [0.5] * 4}),
        dict(common, name="cert_dir_solid", scenario="dir_solid",
             eps=[1 / 8, 1 / 16, 1 / 24, 1 / 32], eta={"alpha": 1.0, "scale": 2.0},
             solid={"shape": "box", "lo": [0.25, 0.25], "hi": [0.75, 0.75]}),
    ]


@functools.lru_cache(maxsize=None)
def certification_suite(seed=0):
    t0 = time.perf_counter()
    reports = [run_scenario(cfg, seed=seed) for cfg in certification_configs()]
    return reports, time.perf_counter() - t0


@_timed(4, "seven-delta certification")
def criterion_4(seed=0):
    reports, seconds = certification_suite(seed)
    rows = [(r.config["name"], row["eps"], row["defect"]["resolvent"],
             row["defect"]["seven_delta_bound"])
            for r in reports for row in r.results]
    ratios = [res / (bound * 1.05) for _, _, res, bound in rows]
    ok = len(rows) >= 12 and max(ratios) <= 1.0 and seconds < 600
    return ok, (f"{len(rows)} configs, max defect/(1.05*7*delta) = {max(ratios):.3f}, "
                f"{seconds:.0f}s (limit 600s)"), {"rows": rows, "seconds": seconds}


# 5 and 10 ------------------------------------------------------------------

def neu_rate_config():
    return {"schema": 1, "name": "neu_fade_rate", "scenario": "neu_fade", "m": 2,
            "eps": [2.0 ** -k for k in (4, 5, 6, 7)], "eta": {"alpha": 0.5},
            "grid": {"n": "per_eps"},
            "measure": {"delta": True, "defect": False, "spectra": False,
                        "extension_norm": True},
            "checks": {"rate_slope_min": 0.35, "delta_decreasing": True}}


@functools.lru_cache(maxsize=None)
def neu_rate_run(seed=0):
    t0 = time.perf_counter()
    rep = run_scenario(neu_rate_config(), seed=seed)
    return rep, time.perf_counter() - t0


@_timed(5, "Neumann fading rate")
def criterion_5(seed=0):
    rep, seconds = neu_rate_run(seed)
    eps = [r["eps"] for r in rep.results]
    dmax = [r["delta"]["max"] for r in rep.results]
    decreasing = all(b < a for a, b in zip(dmax, dmax[1:]))
    slope = theory.fit_rate(eps, dmax)[0]
    ok = decreasing and slope >= 0.35 and seconds < 900
    return ok, (f"delta_max {['%.4f' % d for d in dmax]}, slope {slope:.3f} (min 0.35), "
                f"{seconds:.0f}s (limit 900s)"), {"eps": eps, "delta_max": dmax, "slope": slope}


@_timed(10, "extension norm stability")
def criterion_10(seed=0):
    rep, _ = neu_rate_run(seed)
    norms = [r["extension_norm"] for r in rep.results]
    ratio = max(norms) / min(norms)
    ratios_h = [r["info"]["eps_over_h"] for r in rep.results]
    return ratio <= 2.0, (f"norms {['%.4f' % v for v in norms]} at eps/h "
                          f"{['%.2f' % v for v in ratios_h]}, max/min {ratio:.3f} (limit 2)"), \
        {"norms": norms}


# 7 -------------------------------------------------------------------------

SOLID_EPS = (1 / 32, 1 / 64, 1 / 128)


@functools.lru_cache(maxsize=None)
def solid_spectra_run(n=1024, reference_n=512, count=30):
    torus = Torus(2, 1.0)
    S = SolidRegion.box(torus, [0.25, 0.25], [0.75, 0.75])
    t0 = time.perf_counter()
    ref_form = assemble_form(DiscreteSpace(classify_cells(build_grid(torus, reference_n), S)))
    reference = lanczos_smallest(ref_form.K, ref_form.mass, count)[0]
    del ref_form
    limit_vals = None
    runs = []
    for eps in SOLID_EPS:
        pair = tp.build_dir_solid(eps, 2 * eps, None, S, build_grid(torus, n))
        if limit_vals is None:
            limit_vals = qu.form_spectrum(pair.limit, count, pair.limit_solver).values
        pair.release()
        per_vals = qu.form_spectrum(pair.perturbed, count, pair.perturbed_solver).values
        pair.release()
        runs.append({"eps": eps, "perturbed": per_vals, "info": pair.info})
        del pair
    return reference, limit_vals, runs, time.perf_counter() - t0


@_timed(7, "solidifying spectra")
def criterion_7(seed=0):
    reference, limit_vals, runs, seconds = solid_spectra_run()
    finest = runs[-1]["perturbed"]
    first5 = float(np.max(np.abs(finest[:5] - reference[:5]) / reference[:5]))
    window = qu.gap_window(reference, 15)
    dists = [qu.spectral_hausdorff(r["perturbed"], limit_vals, window) for r in runs]
    decreasing = None not in dists and all(b < a for a, b in zip(dists, dists[1:]))
    ok = first5 <= 0.05 and decreasing and seconds < 1200
    return ok, (f"first five within {100 * first5:.2f}% (limit 5%), Hausdorff "
                f"{['%.3f' % d for d in dists]} on [0, {window:.1f}], {seconds:.0f}s (limit 1200s)"), \
        {"first5": first5, "hausdorff": dists, "window": window}


@_timed(6, "Dirichlet monotonicity")
def criterion_6(seed=0):
    reports, _ = certification_suite(seed)
    checks = [c for r in reports for c in r.checks if c.name == "dirichlet_monotone"]
    worst = 0.0
    ok = all(c.passed for c in checks) and len(checks) > 0
    for c in checks:
        worst = max(worst, (c.bound - c.value) / max(abs(c.bound), 1.0))
    _, limit_vals, runs, _ = solid_spectra_run()
    for r in runs:
        k = min(len(limit_vals), len(r["perturbed"]))
        viol = float(np.max((r["perturbed"][:k] - limit_vals[:k]) / np.maximum(limit_vals[:k], 1.0)))
        worst = max(worst, viol)
        ok = ok and viol <= 1e-8
    return ok, f"{len(checks) + len(runs)} spectra compared, worst violation {worst:.2e} (tol 1e-8)", \
        {"worst": worst}


# 8 -------------------------------------------------------------------------

ANNULUS_BRACKET = (1.0, 20.0)


@_timed(8, "annulus eigenvalue bracket")
def criterion_8(seed=0):
    products = {}
    for m in (2, 3):
        for eps in (1e-2, 1e-3, 1e-4):
            lam = theory.annulus_first_eigenvalue(m, eps, 10 * eps)
            products[(m, eps)] = lam / theory.rauch_taylor_bound(m, eps, 10 * eps)
    lo, hi = ANNULUS_BRACKET
    ok = all(lo <= v <= hi for v in products.values())
    text = ", ".join(f"m={m} eps={e:g}: {v:.3f}" for (m, e), v in products.items())
    return ok, f"{text} (bracket [{lo:g}, {hi:g}])", {str(k): v for k, v in products.items()}


# 9 -------------------------------------------------------------------------

NONCONCENTRATION_PAIRS = {
    2: [(8, 16), (8, 24), (8, 32), (8, 48), (12, 40), (16, 128)],
    3: [(8, 16), (8, 18), (8, 20), (8, 24), (10, 24), (8, 32)],
}


def ball_predicate(center, radius, torus):
    from obslab.geometry import torus_distance

    return lambda x: torus_distance(x, center, torus) < radius


@_timed(9, "non-concentration bound")
def criterion_9(seed=0):
    rows = []
    for m, pairs in NONCONCENTRATION_PAIRS.items():
        torus = Torus(m, 1.0)
        for inner_cells, outer_cells in pairs:
            n = 2 * outer_cells + 16
            grid = build_grid(torus, n)
            center = np.full(m, 0.5)
            eps, eta = inner_cells * grid.h, outer_cells * grid.h
            value = qu.nonconcentration_constant(ball_predicate(center, eps, torus),
                                                 ball_predicate(center, eta, torus), grid,
                                                 tol=1e-7, seed=seed)
            rows.append((m, eps / grid.h, eps / eta, value, theory.tau(m, eps / eta)))
    ok = all(v <= t for *_, v, t in rows)
    worst = max(v / t for *_, v, t in rows)
    return ok, f"{len(rows)} pairs, max constant/tau = {worst:.3f}", {"rows": rows}


# 11 ------------------------------------------------------------------------

def random_spd(rng, n, cond=50.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


def dense_metric_norm(G, P, Q):
    Lp = np.linalg.cholesky(P)
    Lq = np.linalg.cholesky(Q)
    X = sla.solve_triangular(Lp, G, lower=True)
    X = sla.solve_triangular(Lq, X.T, lower=True).T
    return float(np.linalg.svd(X, compute_uv=False)[0])


def random_laplacian(rng, n, density=0.05):
    import scipy.sparse as sp

    W = sp.random(n, n, density=density, random_state=rng, data_rvs=lambda k: rng.uniform(0.5, 2, k))
    W = sp.triu(W, 1)
    W = W + W.T
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


@_timed(11, "dense oracles")
def criterion_11(seed=0):
    rng = np.random.default_rng(seed + 11)
    norm_err, heat_err = 0.0, 0.0
    for _ in range(20):
        p, q = rng.integers(20, 201, size=2)
        G = rng.standard_normal((p, q))
        P, Q = random_spd(rng, p), random_spd(rng, q)
        cp, cq = sla.cho_factor(P), sla.cho_factor(Q)
        prob = MetricNormProblem.from_matrix(G, lambda g: sla.cho_solve(cp, g),
                                             lambda g: sla.cho_solve(cq, g))
        est = metric_opnorm(prob, tol=1e-8, seed=int(rng.integers(1 << 30)))
        norm_err = max(norm_err, abs(est - dense_metric_norm(G, P, Q)) / dense_metric_norm(G, P, Q))

        n = int(rng.integers(20, 201))
        A = random_laplacian(rng, n)
        mass = rng.uniform(0.5, 2.0, n)
        t = float(rng.uniform(0.05, 2.0))
        v = rng.standard_normal(n)
        exact = sla.expm(-t * (A.toarray() / mass[:, None])) @ v
        scale = np.linalg.norm(exact)
        for solver in (None, make_solver(A, mass, 1.0, method="direct")):
            y = heat_apply(A, mass, t, v, krylov_dim=80, tol=1e-10, solver=solver)
            heat_err = max(heat_err, np.linalg.norm(y - exact) / scale)
    ok = norm_err <= 1e-4 and heat_err <= 1e-7
    return ok, f"operator norm rel. error {norm_err:.1e} (tol 1e-4), heat {heat_err:.1e} (tol 1e-7)", \
        {"norm": norm_err, "heat": heat_err}


# 12 ------------------------------------------------------------------------

@_timed(12, "closed-form consistency")
def criterion_12(seed=0):
    rng = np.random.default_rng(seed + 12)
    quad_err = 0.0
    for m in (2, 3, 4, 5):
        for _ in range(10):
            eps = 10 ** rng.uniform(-6, -2)
            eps_plus = eps * 10 ** rng.uniform(0.3, 3)
            a = theory.cutoff_lq_norm(m, eps, eps_plus)
            quad_err = max(quad_err, abs(a - theory.cutoff_lq_norm_quadrature(m, eps, eps_plus)) / a)
    # decay rate against the L^{2q} norm: exact in 2D, leading order otherwise
    prop_err = 0.0
    for m in (2, 3, 4, 5):
        a_m = float(theory.exponents(m).a)
        ratios = []
        for _ in range(10):
            if m == 2:
                eps = 10 ** rng.uniform(-8, -2)
                eps_plus = eps * 10 ** rng.uniform(0.3, 4)
            else:
                eps_plus = 10 ** rng.uniform(-3, -1)
                eps = eps_plus * 10 ** rng.uniform(-14, -10)
            ratios.append(theory.mod_decay_rate(m, eps, eps_plus)
                          / (eps_plus ** -a_m * theory.cutoff_lq_norm(m, eps, eps_plus)))
        prop_err = max(prop_err, (max(ratios) - min(ratios)) / min(ratios))
    flips = True
    for m in (3, 4, 5, 6):
        thr = (m - 2) / m
        flips &= theory.capacity_regime(m, thr - 1e-9) == theory.FADING
        flips &= theory.capacity_regime(m, thr) == theory.CRITICAL
        flips &= theory.capacity_regime(m, thr + 1e-9) == theory.SOLIDIFYING
    ok = quad_err <= 1e-8 and prop_err <= 1e-8 and flips
    return ok, (f"quadrature {quad_err:.1e}, proportionality {prop_err:.1e} (tol 1e-8), "
                f"regime flip {'exact' if flips else 'wrong'}"), \
        {"quadrature": quad_err, "proportionality": prop_err}


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


def run_all(only=None, seed=0):
    chosen = [c for c in CRITERIA if only is None or c.number in only]
    return [c(seed=seed) for c in chosen]


def format_table(results):
    lines = [f"{'#':>3}  {'criterion':<28} {'result':<6} {'time':>7}  detail"]
    for r in results:
        lines.append(f"{r.number:>3}  {r.name:<28} {'PASS' if r.passed else 'FAIL':<6} "
                     f"{r.seconds:>6.1f}s  {r.detail}")
    return "\n".join(lines)


def write_summary(results, path):
    payload = [{"number": r.number, "name": r.name, "passed": r.passed, "detail": r.detail,
                "seconds": r.seconds} for r in results]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
