"""Run one configured scenario over its eps schedule and collect results."""

from dataclasses import dataclass, field
import logging
import math
import platform
import time

import numpy as np
import scipy

from obslab import __version__, theory
from obslab._backend import COMPILED
from obslab.discretize import build_grid
from obslab.geometry import SeparatedSet, SolidRegion, Torus
from obslab.harness.config import eta_exponent, eta_values, load_config
from obslab import quasiuni as qu
from obslab import transplant as tp
from obslab.sparsela import SolverError

log = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    bound: object = None
    eps: float = None
    detail: str = ""


@dataclass
class SpectralReport:
    config: dict
    results: list
    checks: list
    fit: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    @property
    def solver_failed(self):
        return any("error" in r for r in self.results)


def environment_stamp(cfg):
    return {
        "obslab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "compiled_kernels": COMPILED,
        "seed": cfg["seed"],
        "tolerances": cfg["tolerances"],
    }


def _solid(cfg, torus):
    s = cfg["solid"]
    if s["shape"] == "box":
        return SolidRegion.box(torus, s["lo"], s["hi"])
    return SolidRegion.ball(torus, s["center"], s["radius"])


def _centers(cfg, torus, eps, eta, solid):
    c = cfg["centers"]
    kind = c.get("kind", "lattice")
    if kind == "none":
        return SeparatedSet.empty(torus, eta)
    if kind == "points":
        return SeparatedSet(torus, np.array(c["points"], dtype=float), c["sep"])
    if cfg["scenario"] == "dir_solid":
        return tp.solid_centers(solid, eps, c.get("spacing_factor", 2.0))
    return tp.lattice_for_separation(torus, eta, c.get("policy", "nearest"))


def _lattice_count(cfg, torus, eps, eta):
    c = cfg["centers"]
    if c.get("kind", "lattice") != "lattice":
        return 1
    if cfg["scenario"] == "dir_solid":
        return round(torus.L / (c.get("spacing_factor", 2.0) * eps))
    ratio = torus.L / (2 * eta)
    return math.floor(ratio + 1e-12) if c.get("policy") == "floor" else max(1, round(ratio))


def _round_up(value, multiple):
    return int(math.ceil(value / multiple - 1e-9)) * multiple


def choose_grid_sizes(cfg):
    """Grid size per eps following the ``grid.n`` policy."""
    torus = Torus(cfg["m"], cfg["L"])
    guard = cfg["grid"]["resolution_guard"]
    etas = eta_values(cfg)
    counts = [_lattice_count(cfg, torus, e, h) for e, h in zip(cfg["eps"], etas)]
    policy = cfg["grid"]["n"]
    need = [guard * torus.L / e * (1 - 1e-12) for e in cfg["eps"]]
    if isinstance(policy, int):
        return [policy] * len(counts)
    per_eps = [_round_up(v, c) for v, c in zip(need, counts)]
    if policy == "per_eps":
        return per_eps
    common = math.lcm(*counts)
    n = _round_up(max(need), common)
    if n > 2 * max(need):
        log.warning("no common grid near %d cells; using per-eps grids", int(max(need)))
        return per_eps
    return [n] * len(counts)


def _theory_rate(cfg, eps, eta):
    m, gamma = cfg["m"], cfg["gamma"]
    try:
        if cfg["scenario"] == "neu_fade":
            return theory.rate_neu_fading(m, eps, eta)
        if cfg["scenario"] == "dir_fade":
            return theory.rate_dir_fading(m, eps, eta, gamma).value
        return theory.rate_dir_solid(m, eps, eta, gamma)
    except ValueError:
        return None


def build_pair(cfg, i, n):
    torus = Torus(cfg["m"], cfg["L"])
    eps = cfg["eps"][i]
    eta = eta_values(cfg)[i]
    grid = build_grid(torus, n)
    guard = cfg["grid"]["resolution_guard"]
    solid = _solid(cfg, torus) if "solid" in cfg else None
    centers = _centers(cfg, torus, eps, eta, solid)
    if cfg["scenario"] == "neu_fade":
        pair = tp.build_neu_fade(eps, eta, grid, centers, guard)
    elif cfg["scenario"] == "dir_fade":
        eps_plus = cfg["eps_plus"][i] if "eps_plus" in cfg else None
        pair = tp.build_dir_fade(eps, eps_plus, eta, cfg["gamma"], grid, centers, guard)
    else:
        eps_tilde = cfg["eps_tilde"][i] if "eps_tilde" in cfg else None
        pair = tp.build_dir_solid(eps, eta, eps_tilde, solid, grid, centers, cfg["gamma"],
                                  guard, cfg["centers"].get("spacing_factor", 2.0))
    pair.solver_method = cfg["solver"]
    return pair


def _monotone_check(cfg, lim_vals, per_vals, eps):
    slack = cfg["tolerances"]["monotone_slack"]
    k = min(len(lim_vals), len(per_vals))
    if cfg["scenario"] == "dir_fade":
        big, small = per_vals[:k], lim_vals[:k]
        label = "perturbed >= limit"
    elif cfg["scenario"] == "dir_solid":
        big, small = lim_vals[:k], per_vals[:k]
        label = "limit >= perturbed"
    else:
        return None
    margin = big - small + slack * np.maximum(np.abs(small), 1.0)
    worst = int(np.argmin(margin))
    return Check("dirichlet_monotone", bool(np.all(margin >= 0)), float(big[worst]),
                 float(small[worst]), eps, f"{label}, worst index {worst + 1}")


def run_one(cfg, i, n):
    """Measure everything configured for the i-th eps."""
    eps = cfg["eps"][i]
    eta = eta_values(cfg)[i]
    tol = cfg["tolerances"]
    pit = cfg["power_iteration"]
    opts = dict(tol=tol["norm"], restarts=pit["restarts"], maxiter=pit["max_iter"])
    seed = cfg["seed"]
    meas = cfg["measure"]
    checks = []
    t0 = time.perf_counter()
    pair = build_pair(cfg, i, n)
    info = dict(pair.info)
    eta_eff = info["sep"] if info["sep"] is not None else eta
    row = {"eps": eps, "eta": eta, "eta_eff": eta_eff, "n": n, "info": info,
           "dims": {"limit": pair.limit.dim, "perturbed": pair.perturbed.dim},
           "theory_rate": _theory_rate(cfg, eps, eta_eff)}

    adj = tp.adjoint_mismatch(pair, trials=20, seed=seed)
    comp = tp.composition_defect(pair)
    checks.append(Check("adjoint_identity", adj <= 1e-12, adj, 1e-12, eps))
    checks.append(Check("composition_identity", comp == 0.0, comp, 0.0, eps))
    row["identities"] = {"adjoint_mismatch": adj, "composition_defect": comp}

    delta = None
    if meas["delta"]:
        delta = qu.estimate_delta(pair, seed=seed, **opts)
        row["delta"] = delta.as_dict()
        row["delta_iterations"] = delta.iterations
        row["delta_converged"] = delta.converged
    if meas["defect"] and delta is not None:
        rep = qu.defect_report(pair, delta, cfg["heat_times"], k=pair.order, seed=seed,
                               slack=tol["certify_slack"], **opts)
        row["defect"] = rep.as_dict()
        checks.append(Check("resolvent_certified", rep.certified, rep.resolvent,
                            rep.seven_delta_bound * (1 + rep.slack), eps))
        checks.append(Check("resolvent_refined_bound",
                            rep.resolvent <= rep.refined_bound * (1 + rep.slack) + 1e-14,
                            rep.resolvent, rep.refined_bound * (1 + rep.slack), eps))
    if meas["extension_norm"] and pair.kind == tp.NEU_FADE:
        row["extension_norm"] = qu.extension_norm(pair, seed=seed + 300, **opts)
    if meas["spectra"]:
        sp_cfg = cfg["spectra"]
        lim, per = qu.pair_spectra(pair, sp_cfg["count"], tol["eig"])
        if "window_gap_after" in sp_cfg:
            window = qu.gap_window(lim.values, sp_cfg["window_gap_after"])
        else:
            window = qu.spectral_window(lim.values, sp_cfg["window_fraction"])
        row["spectra"] = {"limit": lim.values.tolist(), "perturbed": per.values.tolist()}
        row["window"] = window
        row["hausdorff"] = qu.spectral_hausdorff(per.values, lim.values, window)
        mono = _monotone_check(cfg, lim.values, per.values, eps)
        if mono is not None:
            checks.append(mono)
        if meas["transfer"]:
            rows = qu.eigen_transfer(pair, (lim, per), rel_gap=sp_cfg["cluster_gap"])
            row["transfer"] = [vars(r) for r in rows]
    if pair.info["centers"] == 0:
        worst = 0.0
        if delta is not None:
            worst = delta.max
        if "defect" in row:
            worst = max([worst, row["defect"]["resolvent"], *row["defect"]["heat"].values()])
        checks.append(Check("unitary_baseline", worst <= tol["baseline"], worst,
                            tol["baseline"], eps))
    pair.release()
    row["seconds"] = time.perf_counter() - t0
    return row, checks


def _trend_checks(cfg, results):
    checks = []
    fit = {}
    eps = [r["eps"] for r in results]
    dmax = [r["delta"]["max"] for r in results if "delta" in r]
    complete = len(dmax) == len(eps)
    if complete and len(eps) >= 3 and all(d > 0 for d in dmax):
        slope, intercept, r2 = theory.fit_rate(eps, dmax)
        fit["delta_max"] = {"slope": slope, "intercept": intercept, "r2": r2}
        rates = [r["theory_rate"] for r in results]
        if all(v for v in rates):
            fit["theory_rate"] = dict(zip(("slope", "intercept", "r2"), theory.fit_rate(eps, rates)))
            # constant fitted on the coarsest eps, compared on the rest
            order = np.argsort(eps)[::-1]
            const = dmax[order[0]] / rates[order[0]]
            fit["theory_ratio"] = [d / (const * v) for d, v in zip(dmax, rates)]
    smin = cfg["checks"].get("rate_slope_min")
    if smin is not None:
        slope = fit.get("delta_max", {}).get("slope")
        checks.append(Check("rate_slope", slope is not None and slope >= smin, slope, smin,
                            detail="" if slope is not None else "fit needs three complete points"))
    if cfg["checks"].get("delta_decreasing"):
        order = np.argsort(eps)[::-1]
        seq = [results[j].get("delta", {}).get("max") for j in order]
        ok = complete and all(b < a for a, b in zip(seq, seq[1:]))
        checks.append(Check("delta_decreasing", ok, seq, None))
    if cfg["checks"].get("hausdorff_decreasing"):
        order = np.argsort(eps)[::-1]
        seq = [results[j].get("hausdorff") for j in order]
        ok = None not in seq and all(b < a for a, b in zip(seq, seq[1:]))
        checks.append(Check("hausdorff_decreasing", ok, seq, None))
    fit["alpha"] = eta_exponent(cfg)
    if cfg["m"] >= 2:
        fit["capacity_regime"] = theory.capacity_regime(cfg["m"], fit["alpha"])
    return fit, checks


def run_scenario(config, seed=None, tol_cg=None, tol_norm=None, progress=None):
    """Run a configuration (path, JSON text or dict) and return a SpectralReport."""
    cfg = load_config(config)
    if seed is not None:
        cfg["seed"] = int(seed)
    if tol_cg is not None:
        cfg["tolerances"]["cg"] = float(tol_cg)
    if tol_norm is not None:
        cfg["tolerances"]["norm"] = float(tol_norm)
    sizes = choose_grid_sizes(cfg)
    results, checks = [], []
    for i, n in enumerate(sizes):
        if progress:
            progress(f"eps={cfg['eps'][i]:.6g} n={n}")
        try:
            row, row_checks = run_one(cfg, i, n)
        except SolverError as exc:
            # abort this eps only; the report records the failure
            log.error("eps=%g: %s", cfg["eps"][i], exc)
            row = {"eps": cfg["eps"][i], "n": n, "error": {"kind": "solver", "message": str(exc)}}
            row_checks = [Check("solver", False, eps=cfg["eps"][i], detail=str(exc))]
        results.append(row)
        checks.extend(row_checks)
    fit, trend = _trend_checks(cfg, results)
    checks.extend(trend)
    return SpectralReport(cfg, results, checks, fit, environment_stamp(cfg))
