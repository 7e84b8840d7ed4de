"""Explicit constants entering the torsion/eigenvalue inequalities (planar case).

Double-precision values are computed by elementary algorithms (bisection,
golden-section search, series summation).  Quantities whose interesting part
sits below double resolution near 1 are carried as separate excess/deficit
numbers, and every constant is also evaluated with mpmath at 40 digits for
the decimal export.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import asdict, dataclass

import mpmath
import numpy as np
from scipy import integrate

from .errors import ConsistencyFailure, DomainError, OracleMismatch, UnsupportedDimension

SQRT2 = math.sqrt(2.0)
KAPPA = 2.0 ** 4.5                       # 2^{9/2}
C_MIN = 4.5 * math.log(2.0)             # where 1 - 2^{9/2} e^{-c} vanishes
C_MAX = 30.0
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_C0_LOWER = 0.5705
_MP_DPS = 40


# --------------------------------------------------------------------------
# Bessel J0 and its first zero
# --------------------------------------------------------------------------

def bessel_j0(x: float, nodes: int = 128) -> float:
    """``J0(x) = (1/pi) int_0^pi cos(x sin t) dt`` by the composite trapezoid rule.

    The integrand is smooth and periodic, so the rule converges geometrically;
    128 nodes reach double precision for ``|x| <= 10``.
    """
    if nodes < 64:
        raise ValueError("use at least 64 quadrature nodes")
    t = np.linspace(0.0, math.pi, nodes + 1)
    f = np.cos(x * np.sin(t))
    return float((f[1:-1].sum() + 0.5 * (f[0] + f[-1])) / nodes)


def bessel_j0_zero(lo: float = 2.0, hi: float = 3.0, tol: float = 1e-13) -> float:
    """First positive zero of J0 by bisection on ``[lo, hi]``."""
    flo = bessel_j0(lo)
    if flo <= 0 or bessel_j0(hi) >= 0:
        raise ValueError("bracket does not enclose a sign change of J0")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if bessel_j0(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# Optimised constants frak_c1, frak_c2
# --------------------------------------------------------------------------

def frak_objective(c, power_num: int, power_den: int):
    """``(1 - 2^{9/2} e^{-c})^a / c^b``, vectorised over ``c``."""
    c = np.asarray(c, dtype=float)
    return (1.0 - KAPPA * np.exp(-c)) ** power_num / c ** power_den


def frak1(c):
    return frak_objective(c, 7, 9)


def frak2(c):
    return frak_objective(c, 2, 3)


def golden_section_max(f, a: float, b: float, tol: float = 1e-12):
    """Maximise a unimodal ``f`` on ``[a, b]``; returns ``(argmax, max)``."""
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = float(f(x1)), float(f(x2))
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = float(f(x2))
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = float(f(x1))
        if x1 >= x2:
            break
    c = 0.5 * (a + b)
    return c, float(f(c))


def grid_scan_max(f, a: float, b: float, step: float = 1e-6, chunk: int = 2_000_000):
    """Brute-force maximum of ``f`` over ``a + k*step`` in ``[a, b]``."""
    n = int(math.floor((b - a) / step)) + 1
    best_c, best_v = a, -math.inf
    for start in range(0, n, chunk):
        k = np.arange(start, min(n, start + chunk))
        c = a + k * step
        v = f(c)
        idx = int(np.argmax(v))
        if v[idx] > best_v:
            best_c, best_v = float(c[idx]), float(v[idx])
    return best_c, best_v


@dataclass(frozen=True)
class FrakConstants:
    frak_c1: float
    c1_star: float
    frak_c2: float
    c2_star: float
    scan_c1: float
    scan_c2: float


@functools.lru_cache(maxsize=None)
def optimize_frak_constants(scan_step: float = 1e-6, rel_tol: float = 1e-10) -> FrakConstants:
    c1_star, v1 = golden_section_max(frak1, C_MIN, C_MAX)
    c2_star, v2 = golden_section_max(frak2, C_MIN, C_MAX)
    _, s1 = grid_scan_max(frak1, C_MIN, C_MAX, scan_step)
    _, s2 = grid_scan_max(frak2, C_MIN, C_MAX, scan_step)
    for name, v, s in (("frak_c1", v1, s1), ("frak_c2", v2, s2)):
        if abs(v - s) > rel_tol * abs(v):
            raise OracleMismatch(f"{name}: golden-section {v!r} vs grid scan {s!r}")
    return FrakConstants(v1, c1_star, v2, c2_star, s1, s2)


# --------------------------------------------------------------------------
# Right-hand sides of the THM1, THM2 and COR1 checks
# --------------------------------------------------------------------------

def thm1_prefactor(j0: float) -> float:
    """``3^5 (67 - 44 sqrt2) / (2^34 * 5 * 7 * j0)``."""
    return 3 ** 5 * (67 - 44 * SQRT2) / (2.0 ** 34 * 35 * j0)


def thm1_floor(c: float, j0: float) -> float:
    """Lower bound on ``lambda * int G(q,y)(1 - lambda w(y))_+ dy`` for a given ``c``.

    Its maximum over ``c >= (9/2) log 2`` is the THM1 excess.
    """
    return thm1_prefactor(j0) * float(frak1(c))


def r_c(c: float, lam: float) -> float:
    """Radius ``(3^2/2^10) (1 - 2^{9/2}e^{-c})^2 c^{-3} lambda^{-1/2}``."""
    return 9.0 / 1024.0 * float(frak2(c)) / math.sqrt(lam)


def ball_integral_factor() -> tuple:
    """Return ``(closed form, quadrature)`` of ``1/6 - sqrt2 int_1^sqrt2 t^2 (t^2-1)(2-t^2) dt``.

    The closed form is ``(67 - 44 sqrt2) / 210``.
    """
    closed = (67 - 44 * SQRT2) / 210.0
    # 8-point Gauss-Legendre is exact for this degree-6 polynomial
    x, wts = np.polynomial.legendre.leggauss(8)
    t = 1.0 + (SQRT2 - 1.0) * (x + 1.0) / 2.0
    val = (SQRT2 - 1.0) / 2.0 * float(wts @ (t * t * (t * t - 1) * (2 - t * t)))
    return closed, 1.0 / 6.0 - SQRT2 * val


def thm2_deficit() -> float:
    return 3 ** 4 / (12801 * 2.0 ** 31 * (1 + (math.pi + math.pi ** 2) / 16) ** 4)


@dataclass(frozen=True)
class TheoremBounds:
    thm1_excess: float
    thm1_rhs: float
    thm2_deficit: float
    thm2_rhs: float
    cor1_rhs: float


def theorem_rhs(j0: float = None, frak_c1: float = None) -> TheoremBounds:
    """Right-hand sides of the two main inequalities and their corollary.

    ``thm1_rhs`` as a double rounds to the next float above 1; use
    ``thm1_excess`` when the excess itself matters.
    """
    if j0 is None:
        j0 = bessel_j0_zero()
    if frak_c1 is None:
        frak_c1 = optimize_frak_constants().frak_c1
    excess = thm1_prefactor(j0) * frak_c1
    deficit = thm2_deficit()
    # 1 - (1 - deficit)/(1 + excess), kept away from cancellation
    cor1_deficit = (deficit + excess) / (1.0 + excess)
    return TheoremBounds(excess, 1.0 + excess, deficit, 1.0 - deficit, 1.0 - cor1_deficit)


# --------------------------------------------------------------------------
# Constants from the participation-ratio argument
# --------------------------------------------------------------------------

def boundary_growth_coefficient(R0: float, c: float = 1.0) -> float:
    """``c (1 + (pi+pi^2)/(2 R0^2)) (4/3) pi^{-3/4} (4 pi R0^2)^{3/4}``."""
    return (c * (1 + (math.pi + math.pi ** 2) / (2 * R0 ** 2))
            * 4.0 / 3.0 * math.pi ** -0.75 * (4 * math.pi * R0 ** 2) ** 0.75)


@dataclass(frozen=True)
class ProofConstants:
    R0: float
    r0: float
    eta1: float
    eta2: float
    eta3: float
    eta: float
    growth_coefficient: float


def proof_constants(rel_tol: float = 1e-6) -> ProofConstants:
    R0 = math.sqrt(8.0)
    k2 = boundary_growth_coefficient(R0, c=2.0)
    # k2 * sqrt(r0) = 1/2
    r0 = (0.5 / k2) ** 2
    if abs(k2 * math.sqrt(r0) - 0.5) > 1e-14:
        raise ConsistencyFailure("r0 does not satisfy its defining equation")
    q1 = 0.25 * 0.25 * 0.5 / 25
    eta1 = q1 / (1 + q1)
    eta2 = r0 ** 2 / 12801
    q3 = 0.5 / (20 * R0) ** 2 * 0.25 / 25
    eta3 = q3 / (1 + q3)
    eta = min(eta1, eta2, eta3)
    packaged = thm2_deficit()
    if abs(eta - packaged) > rel_tol * packaged:
        raise ConsistencyFailure(f"eta={eta!r} differs from the packaged constant {packaged!r}")
    return ProofConstants(R0, r0, eta1, eta2, eta3, eta, boundary_growth_coefficient(R0))


# --------------------------------------------------------------------------
# Miscellaneous
# --------------------------------------------------------------------------

def cm_bounds(m: int = 2):
    """Upper bounds on ``sup ||w||_inf lambda``: ``4 + 3m log2`` and the later refinement."""
    if m != 2:
        raise UnsupportedDimension(f"only m=2 is supported, got m={m}")
    vdbc = 4 + 3 * m * math.log(2)
    hv = m / 8 + 0.25 * math.sqrt(5 * (1 + 0.25 * math.log(2))) * math.sqrt(m) + 1
    return vdbc, hv


def k0(x: float) -> float:
    """Modified Bessel ``K0(x) = int_0^inf exp(-x cosh t) dt`` by adaptive quadrature."""
    if not x > 0:
        raise DomainError(f"K0 needs x > 0, got {x}")
    # integrand is below 1e-300 once x cosh t > 700
    upper = math.acosh(max(1.0, 700.0 / x)) + 1.0
    val, _ = integrate.quad(lambda t: math.exp(-x * math.cosh(t)), 0.0, upper,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def lemma2_green_bound(dist: float, lam: float) -> float:
    """``(2^{1/2}/(4 pi)) int_0^inf t^{-1} exp(-r^2/(8t) - t lam/4) dt``
    evaluated as ``(2^{1/2}/(2 pi)) K0(r sqrt(lam/8))``."""
    return SQRT2 / (2 * math.pi) * k0(dist * math.sqrt(lam / 8.0))


def heat_tail_integral(lam: float, Lam: float) -> float:
    """``2^{3/2} int_0^inf exp(-t lam/4 - Lam^2/(8t)) dt`` by quadrature."""
    val, _ = integrate.quad(lambda t: math.exp(-t * lam / 4 - Lam ** 2 / (8 * t)) if t > 0 else 0.0,
                            0.0, np.inf, epsabs=0.0, epsrel=1e-11, limit=400)
    return 2 ** 1.5 * val


def heat_tail_bound(lam: float, Lam: float) -> float:
    return 2 ** 4.5 / lam * math.exp(-math.sqrt(lam) * Lam / 4)


def zeta3(n_terms: int = 20_000):
    """``zeta(3)`` by direct summation plus the midpoint of an integral tail bracket.

    The tail ``sum_{k>N} k^{-3}`` lies in ``[1/(2(N+1)^2), 1/(2N^2)]``; returns
    ``(value, half_width)``.
    """
    k = np.arange(n_terms, 0, -1, dtype=float)
    head = math.fsum(1.0 / k ** 3)
    lo = 0.5 / (n_terms + 1) ** 2
    hi = 0.5 / n_terms ** 2
    return head + 0.5 * (lo + hi), 0.5 * (hi - lo)


def misc_constants(c0_lower: float = DEFAULT_C0_LOWER):
    z, _ = zeta3()
    return z, float(c0_lower), math.pi


def e5x_coefficient(zeta3_value: float, c0: float) -> float:
    """``7 zeta(3) / (16 c0^2)`` multiplying ``r(Omega)^2``."""
    return 7 * zeta3_value / (16 * c0 ** 2)


# --------------------------------------------------------------------------
# The full record
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PaperConstants:
    j0: float
    frak_c1: float
    c1_star: float
    frak_c2: float
    c2_star: float
    R0: float
    r0: float
    eta1: float
    eta2: float
    eta3: float
    eta: float
    thm1_rhs: float
    thm1_excess: float
    thm2_rhs: float
    thm2_deficit: float
    cor1_rhs: float
    cm_vdbc: float
    cm_hv: float
    zeta3: float
    c0_lower: float
    omega2: float
    growth_coefficient: float

    def as_dict(self):
        return asdict(self)

    @property
    def snapshot_id(self) -> str:
        payload = json.dumps({k: float(v).hex() for k, v in self.as_dict().items()}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_json_dict(self):
        decimals = high_precision_decimals(self.c0_lower)
        return {
            "snapshot_id": self.snapshot_id,
            "constants": {
                k: {"double": v, "hex": float(v).hex(), "decimal": decimals[k]}
                for k, v in self.as_dict().items()
            },
        }


@functools.lru_cache(maxsize=None)
def paper_constants(c0_lower: float = DEFAULT_C0_LOWER) -> PaperConstants:
    j0 = bessel_j0_zero()
    fr = optimize_frak_constants()
    th = theorem_rhs(j0, fr.frak_c1)
    pc = proof_constants()
    vdbc, hv = cm_bounds(2)
    z, c0, omega2 = misc_constants(c0_lower)
    return PaperConstants(
        j0=j0, frak_c1=fr.frak_c1, c1_star=fr.c1_star, frak_c2=fr.frak_c2, c2_star=fr.c2_star,
        R0=pc.R0, r0=pc.r0, eta1=pc.eta1, eta2=pc.eta2, eta3=pc.eta3, eta=pc.eta,
        thm1_rhs=th.thm1_rhs, thm1_excess=th.thm1_excess, thm2_rhs=th.thm2_rhs,
        thm2_deficit=th.thm2_deficit, cor1_rhs=th.cor1_rhs, cm_vdbc=vdbc, cm_hv=hv,
        zeta3=z, c0_lower=c0, omega2=omega2, growth_coefficient=pc.growth_coefficient,
    )


@functools.lru_cache(maxsize=None)
def high_precision_decimals(c0_lower: float = DEFAULT_C0_LOWER, digits: int = 30) -> dict:
    """Every constant at ``digits`` significant digits, computed with mpmath."""
    with mpmath.workdps(_MP_DPS):
        mpf = mpmath.mpf
        kappa = mpf(2) ** mpf("4.5")

        def frak(c, a, b):
            return (1 - kappa * mpmath.exp(-c)) ** a / c ** b

        # stationary points: a kappa e^{-c} / (1 - kappa e^{-c}) = b / c
        c1 = mpmath.findroot(lambda c: 7 * kappa * mpmath.exp(-c) / (1 - kappa * mpmath.exp(-c)) - 9 / c,
                             mpf("4.65"))
        c2 = mpmath.findroot(lambda c: 2 * kappa * mpmath.exp(-c) / (1 - kappa * mpmath.exp(-c)) - 3 / c,
                             mpf("4.5"))
        j0 = mpmath.findroot(lambda x: mpmath.besselj(0, x), mpf("2.4"))
        fc1, fc2 = frak(c1, 7, 9), frak(c2, 2, 3)
        excess = 3 ** 5 * (67 - 44 * mpmath.sqrt(2)) / (mpf(2) ** 34 * 35 * j0) * fc1
        a = 1 + (mpmath.pi + mpmath.pi ** 2) / 16
        deficit = mpf(81) / (12801 * mpf(2) ** 31 * a ** 4)
        R0 = mpmath.sqrt(8)
        growth = ((1 + (mpmath.pi + mpmath.pi ** 2) / (2 * R0 ** 2)) * mpf(4) / 3
                  * mpmath.pi ** mpf("-0.75") * (4 * mpmath.pi * R0 ** 2) ** mpf("0.75"))
        r0 = (1 / (4 * growth)) ** 2
        eta1 = mpf(1) / 801
        eta2 = r0 ** 2 / 12801
        eta3 = mpf(1) / 640001
        vals = {
            "j0": j0, "frak_c1": fc1, "c1_star": c1, "frak_c2": fc2, "c2_star": c2,
            "R0": R0, "r0": r0, "eta1": eta1, "eta2": eta2, "eta3": eta3,
            "eta": min(eta1, eta2, eta3),
            "thm1_rhs": 1 + excess, "thm1_excess": excess,
            "thm2_rhs": 1 - deficit, "thm2_deficit": deficit,
            "cor1_rhs": (1 - deficit) / (1 + excess),
            "cm_vdbc": 4 + 6 * mpmath.log(2),
            "cm_hv": mpf(2) / 8 + mpmath.sqrt(5 * (1 + mpmath.log(2) / 4)) * mpmath.sqrt(2) / 4 + 1,
            "zeta3": mpmath.zeta(3),
            "c0_lower": mpf(repr(c0_lower)),
            "omega2": +mpmath.pi,
            "growth_coefficient": growth,
        }
        return {k: mpmath.nstr(v, digits) for k, v in vals.items()}
