"""Five-point Dirichlet Laplacian on a rasterized domain.

The discrete operator is ``(A f)(i, j) = (4 f(i, j) - sum of the four
neighbours) / h^2`` with neighbours outside the mask contributing zero.  It
is symmetric positive definite, so every solve below is a Jacobi
preconditioned conjugate gradient iteration.
"""

from __future__ import annotations

import logging
import math
import struct
import weakref
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateSequence, GridMismatch, NoConvergence, SourceOutside
from .geometry import DomainMask, GridSpec, argmax_cell, check_same_grid

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_EIGEN_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Grid-aligned values, zero outside the mask."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridMismatch(f"field shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def at(self, cell):
        return float(self.values[cell[0], cell[1]])

    def max(self):
        return float(self.values.max())


@dataclass(frozen=True, eq=False)
class TorsionSolution:
    w: ScalarField
    norm_l1: float
    norm_l2: float
    norm_linf: float
    argmax_cell: tuple
    residual_rel: float
    iterations: int


@dataclass(frozen=True, eq=False)
class SpectralSolution:
    lambda_: float
    u: ScalarField
    argmax_cell: tuple
    residual: float
    residual_rel: float
    lambda_lower: float
    outer_iterations: int
    cg_iterations: int


@dataclass(frozen=True)
class ExtrapolationResult:
    value: float
    observed_order: float
    error_estimate: float


# --------------------------------------------------------------------------
# Operator assembly
# --------------------------------------------------------------------------

class _System:
    """Compact numbering of the inside cells plus the assembled sparse operator."""

    def __init__(self, mask: DomainMask):
        self.mask = mask
        self.cells = mask.cells()
        n = len(self.cells)
        self.n = n
        index = -np.ones(mask.grid.shape, dtype=np.int64)
        index[mask.inside] = np.arange(n)
        self.index = index
        ii, jj = self.cells[:, 0], self.cells[:, 1]
        rows = [np.arange(n)]
        cols = [np.arange(n)]
        vals = [np.full(n, 4.0)]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = index[ii + di, jj + dj]
            keep = nb >= 0
            rows.append(np.nonzero(keep)[0])
            cols.append(nb[keep])
            vals.append(-np.ones(int(keep.sum())))
        h2 = mask.h ** 2
        self.A = sp.csr_matrix(
            (np.concatenate(vals) / h2, (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n))
        self.A.sort_indices()
        self.diag = np.full(n, 4.0 / h2)

    def scatter(self, x) -> np.ndarray:
        out = np.zeros(self.mask.grid.shape)
        out[self.mask.inside] = x
        return out

    def gather(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.mask.inside]

    @property
    def max_iter(self):
        return 50 * max(self.mask.grid.nx, self.mask.grid.ny)


_SYSTEMS: "weakref.WeakKeyDictionary[DomainMask, _System]" = weakref.WeakKeyDictionary()


def _system(mask: DomainMask) -> _System:
    sysm = _SYSTEMS.get(mask)
    if sysm is None:
        sysm = _System(mask)
        _SYSTEMS[mask] = sysm
    return sysm


def apply_laplacian(mask: DomainMask, f: ScalarField) -> ScalarField:
    """Apply the five-point operator to ``f`` without assembling a matrix."""
    check_same_grid(mask.grid, f.grid)
    F = np.where(mask.inside, f.values, 0.0)
    L = 4.0 * F
    L[1:, :] -= F[:-1, :]
    L[:-1, :] -= F[1:, :]
    L[:, 1:] -= F[:, :-1]
    L[:, :-1] -= F[:, 1:]
    L = np.where(mask.inside, L / mask.h ** 2, 0.0)
    return ScalarField(mask.grid, L)


# --------------------------------------------------------------------------
# Conjugate gradients
# --------------------------------------------------------------------------

def conjugate_gradient(matvec, b, diag, x0=None, tol_rel=DEFAULT_TOL, max_iter=10_000,
                       norm_a=None):
    """Jacobi-preconditioned CG for an SPD operator.

    Stops when the true residual satisfies ``|b - A x| <= tol_rel |b|``.
    If ``norm_a`` (an upper bound for ``|A|``) is given, the target is relaxed
    to the attainable accuracy ``64 eps (|A| |x| + |b|)`` when that is larger;
    nearly singular shifted systems need this.
    Returns ``(x, iterations, residual_rel)``.
    """
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    eps64 = 64 * np.finfo(float).eps

    def target():
        t = tol_rel * bnorm
        if norm_a is not None:
            t = max(t, eps64 * (norm_a * float(np.linalg.norm(x)) + bnorm))
        return t

    it = 0
    # outer loop restarts from the true residual if the recursive one drifted
    while True:
        r = b - matvec(x)
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target():
            return x, it, rnorm / bnorm
        if it >= max_iter:
            raise NoConvergence(
                f"CG stopped after {it} iterations at relative residual {rnorm / bnorm:.3e}",
                iterations=it, residual=rnorm / bnorm)
        z = r / diag
        p = z.copy()
        rz = float(r @ z)
        while it < max_iter:
            Ap = matvec(p)
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                raise NoConvergence("CG breakdown: operator not positive definite",
                                    iterations=it, residual=rnorm / bnorm)
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            rnorm = float(np.linalg.norm(r))
            if rnorm <= tol_rel * bnorm or (norm_a is not None and rnorm <= target()):
                break
            z = r / diag
            rz_new = float(r @ z)
            p *= rz_new / rz
            p += z
            rz = rz_new


def _check_tol(tol_rel):
    if not 0 < tol_rel <= 1e-4:
        raise ValueError(f"tol_rel must lie in (0, 1e-4], got {tol_rel}")


def solve_torsion(mask: DomainMask, tol_rel: float = DEFAULT_TOL) -> TorsionSolution:
    """Solve ``A w = 1`` and report midpoint-rule norms of ``w``."""
    _check_tol(tol_rel)
    s = _system(mask)
    x, its, res = conjugate_gradient(s.A.__matmul__, np.ones(s.n), s.diag,
                                     tol_rel=tol_rel, max_iter=s.max_iter)
    values = s.scatter(x)
    h2 = mask.h ** 2
    cell = argmax_cell(values, mask.inside)
    return TorsionSolution(
        w=ScalarField(mask.grid, values),
        norm_l1=float(h2 * x.sum()),
        norm_l2=float(math.sqrt(h2 * (x @ x))),
        norm_linf=float(values[cell]),
        argmax_cell=cell,
        residual_rel=res,
        iterations=its,
    )


def solve_green_column(mask: DomainMask, source, tol_rel: float = DEFAULT_TOL) -> ScalarField:
    """Discrete Green function ``y -> G_h(source, y)`` (right-hand side ``1/h^2`` at source)."""
    _check_tol(tol_rel)
    source = (int(source[0]), int(source[1]))
    if not mask.is_inside(source):
        raise SourceOutside(f"source cell {source} is not inside {mask.name}")
    s = _system(mask)
    b = np.zeros(s.n)
    b[s.index[source]] = 1.0 / mask.h ** 2
    x, _, _ = conjugate_gradient(s.A.__matmul__, b, s.diag, tol_rel=tol_rel, max_iter=s.max_iter)
    return ScalarField(mask.grid, s.scatter(x))


def solve_principal_eigen(mask: DomainMask, tol_rel: float = DEFAULT_EIGEN_TOL,
                          inner_tol: float = DEFAULT_TOL, max_outer: int = 200) -> SpectralSolution:
    """Principal eigenpair by inverse power iteration with CG inner solves.

    Starts from the constant vector.  Each step shifts by ``sigma`` just below
    the certified lower bound ``min_i (A u)_i / u_i`` (valid for any positive
    ``u``), which keeps ``A - sigma I`` positive definite while removing the
    stall on domains with a tiny spectral gap.  Iteration stops once the
    relative change of the Rayleigh quotient is below ``tol_rel`` and the
    residual satisfies ``|A u - lambda u| <= 10 tol_rel lambda |u|``.
    """
    if not 0 < tol_rel <= 1e-4:
        raise ValueError(f"tol_rel must lie in (0, 1e-4], got {tol_rel}")
    s = _system(mask)
    A = s.A
    norm_a = 8.0 / mask.h ** 2         # Gershgorin bound
    u = np.ones(s.n) / math.sqrt(s.n)
    lam_prev = None
    sigma = 0.0
    lam_lower = 0.0
    total = 0
    for outer in range(1, max_outer + 1):
        shift = sigma

        def matvec(p, shift=shift):
            return A @ p - shift * p

        x0 = None if lam_prev is None else u / (lam_prev - shift)
        try:
            v, its, _ = conjugate_gradient(matvec, u, s.diag - shift, x0=x0,
                                           tol_rel=inner_tol, max_iter=s.max_iter,
                                           norm_a=norm_a)
        except NoConvergence:
            if shift == 0.0:
                raise
            # fall back to the unshifted step
            sigma = 0.0
            v, its, _ = conjugate_gradient(A.__matmul__, u, s.diag, x0=None,
                                           tol_rel=inner_tol, max_iter=s.max_iter)
        total += its
        if v.sum() < 0:
            v = -v
        v /= np.linalg.norm(v)
        Av = A @ v
        lam = float(v @ Av)
        resid = float(np.linalg.norm(Av - lam * v))
        if v.min() > 0:
            lam_lower = max(lam_lower, float(np.min(Av / v)))
            sigma = max(0.0, lam_lower * (1.0 - 1e-6))
        log.debug("eigen step %d: cg=%d lambda=%.12g resid=%.3e sigma=%.6g",
                  outer, its, lam, resid / lam, sigma)
        converged = (lam_prev is not None and abs(lam - lam_prev) <= tol_rel * lam
                     and resid <= 10 * tol_rel * lam)
        u = v
        lam_prev = lam
        if converged:
            break
    else:
        raise NoConvergence(
            f"inverse iteration did not converge in {max_outer} steps (residual {resid / lam:.3e})",
            iterations=max_outer, residual=resid / lam)
    values = s.scatter(np.clip(u, 0.0, None))
    cell = argmax_cell(values, mask.inside)
    values = values / values[cell]
    return SpectralSolution(
        lambda_=lam,
        u=ScalarField(mask.grid, values),
        argmax_cell=cell,
        residual=resid,
        residual_rel=resid / lam,
        lambda_lower=lam_lower,
        outer_iterations=outer,
        cg_iterations=total,
    )


# --------------------------------------------------------------------------
# Grid refinement
# --------------------------------------------------------------------------

def richardson(values: Sequence, assumed_order: Optional[float] = None) -> ExtrapolationResult:
    """Richardson extrapolation from ``(h, v)`` pairs on halving grids.

    With three or more levels and no ``assumed_order`` the observed order is
    fitted from the three finest levels; otherwise the two finest levels are
    combined with the assumed order.
    """
    pts = sorted(((float(h), float(v)) for h, v in values), key=lambda t: -t[0])
    if len(pts) < 2 or (assumed_order is None and len(pts) < 3):
        raise DegenerateSequence("need 3 grid levels (or 2 with an assumed order)")
    for (ha, _), (hb, _) in zip(pts, pts[1:]):
        if not math.isclose(ha / hb, 2.0, rel_tol=1e-9):
            raise DegenerateSequence(f"grid spacings must halve, got {ha} -> {hb}")
    if assumed_order is not None:
        p = float(assumed_order)
        v_mid, v_fine = pts[-2][1], pts[-1][1]
    else:
        v_coarse, v_mid, v_fine = (v for _, v in pts[-3:])
        d1, d2 = v_mid - v_coarse, v_fine - v_mid
        if d1 == 0.0 or d2 == 0.0 or (d1 > 0) != (d2 > 0):
            raise DegenerateSequence(f"successive differences {d1:.3e}, {d2:.3e} vanish or change sign")
        p = math.log2(d1 / d2)
        if p <= 0:
            raise DegenerateSequence(f"observed order {p:.3f} is not positive")
    denom = 2.0 ** p - 1.0
    err = abs(v_fine - v_mid) / denom
    return ExtrapolationResult(v_fine + (v_fine - v_mid) / denom, p, err)


# --------------------------------------------------------------------------
# Field export
# --------------------------------------------------------------------------

RAW_HEADER = struct.Struct("<qqd")


def field_to_csv(field_: ScalarField, mask: DomainMask, path):
    """Write ``i,j,x,y,value`` rows for the inside cells, ordered by ``(j, i)``."""
    check_same_grid(mask.grid, field_.grid)
    g = field_.grid
    with open(path, "w", encoding="ascii") as fh:
        fh.write("i,j,x,y,value\n")
        for j in range(g.ny):
            for i in range(g.nx):
                if mask.inside[i, j]:
                    x, y = g.center((i, j))
                    fh.write(f"{i},{j},{float(x)!r},{float(y)!r},{float(field_.values[i, j])!r}\n")


def field_to_raw(field_: ScalarField, path):
    """Raw grid dump: 24-byte header ``<int64 nx, int64 ny, float64 h>`` then
    ``nx*ny`` little-endian float64 values with ``i`` varying fastest."""
    g = field_.grid
    with open(path, "wb") as fh:
        fh.write(RAW_HEADER.pack(g.nx, g.ny, g.h))
        fh.write(np.ascontiguousarray(field_.values.T, dtype="<f8").tobytes())


def field_from_raw(path, x0: float = 0.0, y0: float = 0.0) -> ScalarField:
    data = open(path, "rb").read()
    nx, ny, h = RAW_HEADER.unpack_from(data)
    values = np.frombuffer(data, dtype="<f8", count=nx * ny, offset=RAW_HEADER.size)
    return ScalarField(GridSpec(x0, y0, h, nx, ny), values.reshape(ny, nx).T)
