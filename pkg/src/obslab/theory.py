"""Closed-form rates, exponents and thresholds for the three scenarios.

All formulas are taken with unit geometric constant (flat torus).
``omega`` always denotes the ratio ``eps / eta``.
"""

from collections import namedtuple
from fractions import Fraction
import logging
import math

import numpy as np
from scipy import integrate, optimize
from scipy.special import gamma as gamma_fn

from obslab._backend import kernels

log = logging.getLogger(__name__)

FADING = "fading"
CRITICAL = "critical"
SOLIDIFYING = "solidifying"

Exponents = namedtuple("Exponents", "p q a")
RateResult = namedtuple("RateResult", "value regime condition")


def _check_dim(m, lowest=2):
    if int(m) != m or m < lowest:
        raise ValueError(f"dimension must be an integer >= {lowest}, got {m}")


def sphere_area(m):
    """Surface measure of the unit sphere in R^m."""
    return 2 * math.pi ** (m / 2) / gamma_fn(m / 2)


def tau(m, omega, K=1.0):
    """Non-concentration bound for a ball pair with radius ratio ``omega``."""
    _check_dim(m)
    if not 0 < omega <= 0.5:
        raise ValueError(f"radius ratio must lie in (0, 1/2], got {omega}")
    if m == 2:
        return math.sqrt(8) * K ** 1.5 * omega * math.sqrt(abs(math.log(omega)))
    return math.sqrt(8) * K ** ((m + 1) / 2) * omega


def exponents(m):
    """Sobolev exponents (p, q) and the decay power ``a`` for dimension m."""
    _check_dim(m)
    if m >= 5:
        return Exponents(Fraction(m, m - 4), Fraction(m, 4), Fraction(2))
    if m == 4:
        return Exponents(Fraction(8, 3), Fraction(8, 5), Fraction(5, 4))
    if m == 3:
        return Exponents(math.inf, Fraction(1), Fraction(3, 2))
    return Exponents(math.inf, Fraction(1), Fraction(1))


def _alpha(eps, eta):
    return math.log(eta) / math.log(eps)


def capacity_regime(m, alpha):
    """Classify ``eta = eps^alpha`` by comparing alpha with ``(m-2)/m``."""
    _check_dim(m)
    threshold = Fraction(m - 2, m)
    a = Fraction(alpha).limit_denominator(10 ** 12) if not isinstance(alpha, Fraction) else alpha
    if math.isclose(float(a), float(threshold), rel_tol=0, abs_tol=1e-12):
        return CRITICAL
    return FADING if a < threshold else SOLIDIFYING


def proven_fading_region(m, alpha):
    """Whether alpha lies where the fading estimate is established (m >= 3)."""
    _check_dim(m, 3)
    limit = {3: Fraction(1, 3), 4: Fraction(1, 5)}.get(m, Fraction(1, 2))
    return alpha < limit


def rate_neu_fading(m, eps, eta):
    """Rate for Neumann balls that fade: omega, times sqrt(log(1/omega)) in 2D."""
    _check_dim(m)
    if not 0 < eps <= eta / 2:
        raise ValueError("need 0 < eps <= eta/2")
    omega = eps / eta
    if m == 2:
        return omega * math.sqrt(math.log(1 / omega))
    return omega


def dir_fading_condition(m, eps, eta, gamma):
    """The quantity that must vanish for the Dirichlet fading estimate."""
    omega = eps / eta
    if m >= 5:
        return omega ** (2 * gamma) / eps
    if m == 4:
        return omega ** (5 * gamma) / eps ** 4
    if m == 3:
        return omega ** (3 * gamma) / eps ** 2
    return omega ** gamma / (eps * math.sqrt(abs(math.log(omega))))


def rate_dir_fading(m, eps, eta, gamma):
    """Rate for Dirichlet balls that fade, with ``eps_plus = eps^(1-gamma) eta^gamma``.

    Returns ``RateResult(value, regime, condition)``; the regime is read off
    ``alpha = log(eta)/log(eps)``.
    """
    _check_dim(m)
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not 0 < eps < eta < 1:
        raise ValueError("need 0 < eps < eta < 1")
    omega = eps / eta
    if m == 2:
        lg = math.sqrt(abs(math.log(omega)))
        value = max(omega ** (1 - gamma) * lg, omega ** gamma / (eps * lg))
    else:
        power = {3: 1.5 * gamma, 4: 1.25 * gamma}.get(m, 2 * gamma)
        value = max(omega ** (1 - gamma), omega ** power / eps)
    regime = capacity_regime(m, _alpha(eps, eta))
    return RateResult(value, regime, dir_fading_condition(m, eps, eta, gamma))


def solid_capacity_scale(m, eps, eta):
    """``eta^m / eps^(m-2)``, or ``eta^2 |log eps|`` in 2D."""
    if m == 2:
        return eta ** 2 * abs(math.log(eps))
    return eta ** m / eps ** (m - 2)


def rate_dir_solid(m, eps, eta, gamma):
    """Rate for Dirichlet balls that solidify onto S."""
    _check_dim(m)
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    return solid_capacity_scale(m, eps, eta) ** ((1 - gamma) / 2)


def solid_collar_width(m, eps, eta, gamma):
    """Collar width ``(capacity scale)^gamma`` used by the solidifying cutoff."""
    return solid_capacity_scale(m, eps, eta) ** gamma


def solid_gamma_window(m, alpha):
    """Smallest gamma keeping the collar width below eta for ``eta = eps^alpha``.

    Returns None when no gamma in (0, 1) works, i.e. alpha <= (m-2)/(m-1).
    """
    _check_dim(m)
    if m == 2:
        return 0.5
    if alpha <= (m - 2) / (m - 1):
        return None
    return alpha / (m * alpha - (m - 2))


def rauch_taylor_bound(m, eps, eta):
    """First eigenvalue scale of a small Dirichlet hole in a Neumann cell."""
    _check_dim(m)
    if m == 2:
        return 1.0 / (eta ** 2 * abs(math.log(eps)))
    return eps ** (m - 2) / eta ** m


def cutoff_lq_norm(m, eps, eps_plus):
    """``L^{2q}`` norm of the gradient of the capacitary cutoff, ``q = q_m``."""
    _check_dim(m)
    if not 0 < eps < eps_plus:
        raise ValueError("need 0 < eps < eps_plus")
    area = sphere_area(m)
    if m == 2:
        return math.sqrt(2 * math.pi / math.log(eps_plus / eps))
    q = float(exponents(m).q)
    e = m - 2 * q * (m - 1)
    dh = (eps ** (2 - m) - eps_plus ** (2 - m)) / (m - 2)
    integral = (eps_plus ** e - eps ** e) / e
    return (area * integral / dh ** (2 * q)) ** (1 / (2 * q))


def cutoff_lq_norm_quadrature(m, eps, eps_plus):
    """Same quantity by adaptive quadrature of ``|chi'(r)|^{2q} r^{m-1}``."""
    q = float(exponents(m).q)
    if m == 2:
        dh = math.log(eps_plus / eps)
    else:
        dh = (eps ** (2 - m) - eps_plus ** (2 - m)) / (m - 2)

    # substitute r = exp(s) so the power law is well resolved on wide ranges
    def integrand(s):
        r = math.exp(s)
        return (r ** (1 - m) / dh) ** (2 * q) * r ** (m - 1) * r

    val, _ = integrate.quad(integrand, math.log(eps), math.log(eps_plus),
                            epsabs=0, epsrel=1e-13, limit=200)
    return (sphere_area(m) * val) ** (1 / (2 * q))


def mod_decay_rate(m, eps, eps_plus):
    """Decay of the cutoff modification in the Dirichlet fading estimate."""
    _check_dim(m)
    if not 0 < eps < eps_plus:
        raise ValueError("need 0 < eps < eps_plus")
    if m >= 5:
        return eps / eps_plus ** 2
    if m == 4:
        return eps ** 0.25 / eps_plus ** 1.25
    if m == 3:
        return eps ** 0.5 / eps_plus ** 1.5
    return 1.0 / (eps_plus * math.sqrt(math.log(eps_plus / eps)))


def hypersurface_band_rate(eps, eps_plus):
    """Rate ``sqrt(eps/eps_plus)`` for a band of width eps inside eps_plus."""
    if not 0 < eps < eps_plus:
        raise ValueError("need 0 < eps < eps_plus")
    return math.sqrt(eps / eps_plus)


def _shoot(lam, m, r0, r1, steps):
    return kernels.radial_shoot(float(lam), int(m), float(r0), float(r1), int(steps))


def _first_root(m, eps, eta, steps):
    flux = lambda lam: _shoot(lam, m, eps, eta, steps)[1]
    # upper bracket from the Rayleigh quotient of a quarter sine
    phi = lambda r: math.sin(0.5 * math.pi * (r - eps) / (eta - eps))
    dphi = lambda r: 0.5 * math.pi / (eta - eps) * math.cos(0.5 * math.pi * (r - eps) / (eta - eps))
    num = integrate.quad(lambda r: dphi(r) ** 2 * r ** (m - 1), eps, eta, epsrel=1e-12)[0]
    den = integrate.quad(lambda r: phi(r) ** 2 * r ** (m - 1), eps, eta, epsrel=1e-12)[0]
    hi = num / den * (1 + 1e-6)
    for _ in range(60):
        u, w, zeros = _shoot(hi, m, eps, eta, steps)
        if w < 0 and zeros == 0:
            break
        hi *= 1.05
    else:
        raise RuntimeError("could not bracket the first annulus eigenvalue")
    return optimize.brentq(flux, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)


def annulus_first_eigenvalue(m, eps, eta, tol=1e-10):
    """First eigenvalue of the annulus ``eps < r < eta`` in R^m.

    Dirichlet at ``eps``, Neumann at ``eta``, found by shooting on the
    radial equation. The step count doubles until two successive values
    agree to ``tol`` (relative). ``m = 1`` gives the interval problem.
    """
    _check_dim(m, 1)
    if not 0 < eps < eta:
        raise ValueError("need 0 < eps < eta")
    steps = 400
    prev = _first_root(m, eps, eta, steps)
    while steps < 2 ** 22:
        steps *= 2
        cur = _first_root(m, eps, eta, steps)
        if abs(cur - prev) <= tol * cur:
            return cur
        prev = cur
    raise RuntimeError("annulus eigenvalue did not converge")


def rate_table(m, alphas, eps=1e-3, gamma=0.5):
    """Rows of (alpha, regime, proven, dir-fading rate, dir-solid rate) at one eps."""
    rows = []
    for a in alphas:
        eta = eps ** a
        row = {"alpha": a, "regime": capacity_regime(m, a)}
        row["proven_fading"] = proven_fading_region(m, a) if m >= 3 else None
        row["rate_dir_fading"] = (rate_dir_fading(m, eps, eta, gamma).value
                                  if eps < eta < 1 else None)
        row["rate_dir_solid"] = rate_dir_solid(m, eps, eta, gamma)
        row["rauch_taylor"] = rauch_taylor_bound(m, eps, eta)
        rows.append(row)
    return rows


def fit_rate(eps, values):
    """Least-squares slope of log(values) against log(eps).

    Non-positive values are dropped with a warning; at least three points
    must remain. Returns ``(slope, intercept, r_squared)``.
    """
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (values > 0) & (eps > 0)
    if not keep.all():
        log.warning("fit_rate: dropping %d non-positive points", int((~keep).sum()))
    x, y = np.log(eps[keep]), np.log(values[keep])
    if len(x) < 3:
        raise ValueError(f"need at least three positive points, got {len(x)}")
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2
