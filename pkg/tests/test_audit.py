import functools
import json
import math
import warnings

import numpy as np
import pytest

from torsionlab import audit as A
from torsionlab import constants as C
from torsionlab import schemas
from torsionlab.errors import BadBoundaryPoint, GridMismatch, NotApplicable
from torsionlab.geometry import (Annulus, Disk, DomainMask, LShape, Rectangle, distance_field,
                                 rasterize, topology_check)
from torsionlab.solver import ScalarField, solve_green_column, solve_principal_eigen, solve_torsion

from oracles import disk_green_center, mp_j0

J0SQ = float(mp_j0()) ** 2


@functools.lru_cache(maxsize=None)
def solved(spec, h):
    mask = rasterize(spec, h)
    return mask, solve_torsion(mask), solve_principal_eigen(mask), distance_field(mask)


def summary_of(spec, h):
    mask, t, e, d = solved(spec, h)
    return A.summarize(mask, t, e, d)


def analytic_disk_summary(R=1.0):
    """Continuum disk functionals with zero error bars."""
    area, lam = math.pi * R ** 2, J0SQ / R ** 2
    T, l2, linf = math.pi * R ** 4 / 8, math.sqrt(math.pi / 48) * R ** 3, R ** 2 / 4
    return A.FunctionalSummary(
        name="disk", h=0.0, area=area, inradius=R, lambda_=lam, t_rigidity=T, norm_l2_w=l2,
        norm_linf_w=linf, product=linf * lam, f_value=T * lam / area, phi_1inf=T / (area * linf),
        phi_12=T / (math.sqrt(area) * l2), argmax_w_cell=(0, 0), argmax_u_cell=(0, 0),
        d_xw=R, d_xu=R, simply_connected=True, extrapolated=True)


# -- summaries ---------------------------------------------------------------------

def test_summary_identities():
    s = summary_of(LShape(), 1 / 32)
    assert s.product == pytest.approx(s.norm_linf_w * s.lambda_, rel=1e-15)
    assert s.f_value == pytest.approx(s.t_rigidity * s.lambda_ / s.area, rel=1e-15)
    assert s.phi_1inf == pytest.approx(s.t_rigidity / (s.area * s.norm_linf_w), rel=1e-15)
    assert s.phi_12 == pytest.approx(s.t_rigidity / (math.sqrt(s.area) * s.norm_l2_w), rel=1e-15)
    assert s.simply_connected and not s.extrapolated
    assert s.d_xw > 0 and s.d_xu > 0 and s.inradius >= max(s.d_xw, s.d_xu)
    schemas.validate("summary", s.to_dict())


def test_disk_summary_examples(oracle_report):
    s = next(d for d in oracle_report.domains if d.name == "disk").summary
    assert s.extrapolated
    assert s.phi_1inf == pytest.approx(0.5, rel=0.01)
    assert s.phi_12 == pytest.approx(math.sqrt(3) / 2, rel=0.01)
    assert s.f_value == pytest.approx(J0SQ / 8, rel=0.01)


def test_summarize_grid_mismatch():
    mask, t, e, d = solved(Disk(1.0), 1 / 16)
    other = solved(Disk(1.0), 1 / 8)
    with pytest.raises(GridMismatch):
        A.summarize(mask, t, e, other[3])


def test_summarize_warns_on_hint_mismatch():
    mask, t, e, d = solved(Annulus(0.5, 1.0), 1 / 16)
    hinted = DomainMask(mask.grid, mask.inside, "annulus", declared_simply_connected=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = A.summarize(hinted, t, e, d)
    assert any("declared" in str(w.message) for w in caught)
    # topology, not the hint, decides
    assert s.simply_connected is False


def _synthetic_levels(order=1.0):
    base = analytic_disk_summary()
    out = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        bump = 1 + 0.3 * h ** order
        vals = {k: getattr(base, k) * bump for k in A.BASE_FIELDS}
        out.append(A.FunctionalSummary(
            name="disk", h=h, inradius=1 - h, **vals,
            **A._derived(*(vals[k] for k in A.BASE_FIELDS)),
            argmax_w_cell=(1, 1), argmax_u_cell=(1, 1), d_xw=1 - h, d_xu=1 - h,
            simply_connected=True))
    return base, out


@pytest.mark.parametrize("order", [1.0, 2.0])
def test_extrapolation_recovers_exact_model(order):
    base, levels = _synthetic_levels(order)
    ex = A.extrapolate_summaries(levels[::-1])
    assert ex.extrapolated and ex.h == 1 / 64
    for k in A.BASE_FIELDS:
        assert getattr(ex, k) == pytest.approx(getattr(base, k), rel=1e-10)
        assert ex.orders[k] == pytest.approx(order, abs=1e-8)
    assert ex.product == pytest.approx(ex.norm_linf_w * ex.lambda_, rel=1e-15)
    assert ex.err("inradius") == 1 / 64
    assert ex.err("product") >= 0


def test_extrapolation_falls_back_on_degenerate_sequence():
    base, levels = _synthetic_levels()
    wobble = [A.FunctionalSummary(**{**s.__dict__, "lambda_": lam})
              for s, lam in zip(levels, (5.8, 5.7, 5.75))]
    ex = A.extrapolate_summaries(wobble)
    assert ex.lambda_ == wobble[-1].lambda_
    assert ex.err("lambda_") == pytest.approx(abs(wobble[-1].lambda_ - wobble[-2].lambda_))
    assert math.isnan(ex.orders["lambda_"])
    assert ex.to_dict()["orders"]["lambda_"] is None


def test_extrapolation_never_goes_non_positive():
    base, levels = _synthetic_levels()
    # differences shrink by only 2^0.12, so Richardson overshoots below zero
    slow = [A.FunctionalSummary(**{**s.__dict__, "t_rigidity": t})
            for s, t in zip(levels, (0.0063, 0.0058, 0.0053))]
    ex = A.extrapolate_summaries(slow)
    assert ex.t_rigidity == 0.0053
    assert ex.err("t_rigidity") >= 0.0053


# -- report plumbing ---------------------------------------------------------------

def test_make_report_orientation(consts):
    r = A.make_report("X", "d", 1.0, 1.5, 0.1, True, consts)
    assert r.passed and r.margin == 0.5 and r.status == "pass"
    assert not A.make_report("X", "d", 1.0, 1.05, 0.1, True, consts).passed
    assert A.make_report("X", "d", 1.0, 0.95, 0.1, False, consts).passed
    assert not A.make_report("X", "d", 1.0, 0.85, 0.1, False, consts).passed
    d = r.to_dict()
    assert d["pass"] is True and d["constants_snapshot_id"] == consts.snapshot_id
    assert d["params"]["strict"] is True
    schemas.validate("report", d)


def test_sort_reports(consts):
    reps = [A.make_report(c, n, 0, 1, 0, False, consts) for c, n in
            [("B", "x"), ("A", "z"), ("A", "y")]]
    assert [(r.check_id, r.domain) for r in A.sort_reports(reps)] == [("A", "y"), ("A", "z"), ("B", "x")]


# -- summary checks ----------------------------------------------------------------

def test_summary_checks_against_analytic_disk(consts):
    s = analytic_disk_summary()
    k = consts
    expected = {
        "E2_LOWER": (1.0, J0SQ / 4),
        "E2_UPPER": (J0SQ / 4, k.cm_hv),
        "THM1": (k.thm1_rhs, J0SQ / 4),
        "THM2": (J0SQ / 8, k.thm2_rhs),
        "E9": (J0SQ / 8, 1 - math.pi * (math.pi / 8) / math.pi ** 2),
        "E5X": (0.25, 7 * k.zeta3 / (16 * k.c0_lower ** 2)),
        "E50_INRADIUS": (J0SQ, J0SQ),
        # distance to the maximum point, made dimensionless by lambda^{1/2}
        "E12B_ARGMAX_W": (9 / 1024 * k.frak_c2, math.sqrt(J0SQ)),
        "E13_ARGMAX_U": (9 / 1024 * k.frak_c2, math.sqrt(J0SQ)),
        "COR1_PHI1INF": (0.5, k.cor1_rhs),
    }
    for cid, (small, big) in expected.items():
        r = A.audit_summary(cid, s, k)
        assert (r.lhs, r.rhs) == pytest.approx((small, big), rel=1e-12), cid
        assert r.passed, cid
    r = A.audit_summary("PROP1_PHI12", s, k)
    assert r.lhs == pytest.approx(math.sqrt(3) / 2, rel=1e-12) and r.passed


def test_every_summary_check_runs_on_extrapolated_disk(oracle_report, consts):
    s = next(d for d in oracle_report.domains if d.name == "disk").summary
    for cid in A.SUMMARY_CHECKS:
        r = A.audit_summary(cid, s, consts)
        assert r.passed, (cid, r)
        schemas.validate("report", r.to_dict())


def test_disk_e2_lower_and_e50(oracle_report, consts):
    s = next(d for d in oracle_report.domains if d.name == "disk").summary
    r = A.audit_summary("E2_LOWER", s, consts)
    assert r.lhs == 1.0 and r.rhs == pytest.approx(1.4458, abs=2e-3) and r.passed
    r = A.audit_summary("E50_INRADIUS", s, consts)
    # r carries the h-sized distance bias, i.e. about 2h/r relative in r^2
    assert r.lhs == pytest.approx(J0SQ, rel=0.02) and r.rhs == pytest.approx(J0SQ, rel=1e-12)
    assert abs(r.margin) <= 0.02 * J0SQ and r.passed


def test_thin_rectangle_e2_lower_margin(oracle_report, consts):
    s = next(d for d in oracle_report.domains if d.name == "rect_1x32").summary
    r = A.audit_summary("E2_LOWER", s, consts)
    assert s.product == pytest.approx(math.pi ** 2 / 8, rel=0.01)
    assert r.margin == pytest.approx(0.234, abs=0.01) and r.passed


@pytest.mark.parametrize("cid", ["THM1", "THM2", "PROP1_PHI12", "COR1_PHI1INF", "E5X"])
def test_simple_connectivity_gating(cid, consts):
    s = summary_of(Annulus(0.5, 1.0), 1 / 16)
    assert not s.simply_connected
    with pytest.raises(NotApplicable):
        A.audit_summary(cid, s, consts)


def test_ungated_checks_run_on_annulus(consts):
    s = summary_of(Annulus(0.5, 1.0), 1 / 16)
    for cid in ("E2_LOWER", "E2_UPPER", "E9", "E12B_ARGMAX_W", "E13_ARGMAX_U", "E50_INRADIUS"):
        assert A.audit_summary(cid, s, consts).check_id == cid


def test_unknown_check(consts):
    with pytest.raises(KeyError):
        A.audit_summary("NOPE", summary_of(Disk(1.0), 1 / 8), consts)


def test_audit_determinism(consts):
    a = [A.audit_summary(c, summary_of(LShape(), 1 / 32), consts).to_dict() for c in A.SUMMARY_CHECKS]
    solved.cache_clear()
    b = [A.audit_summary(c, summary_of(LShape(), 1 / 32), consts).to_dict() for c in A.SUMMARY_CHECKS]
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


# -- pointwise torsion bound --------------------------------------------------------

def test_pointwise_disk(consts):
    mask, t, e, d = solved(Disk(1.0), 1 / 64)
    r = A.audit_pointwise_w(mask, t, d, e.lambda_, c=4.51, consts=consts)
    assert r.passed and r.params["min_slack"] > 0 and r.params["c"] == 4.51
    assert r.params["boundary_exclusion"] == 2 / 64
    default = A.audit_pointwise_w(mask, t, d, e.lambda_, consts=consts)
    assert default.params["c"] == consts.c2_star


def test_pointwise_large_c(consts):
    mask, t, e, d = solved(LShape(), 1 / 32)
    slacks = [A.audit_pointwise_w(mask, t, d, e.lambda_, c=c, consts=consts).params["min_slack"]
              for c in (5.0, 50.0, 500.0)]
    assert slacks == sorted(slacks) and slacks[-1] > 100


def test_pointwise_l_shape_stable_under_refinement(consts):
    margins = []
    for h in (1 / 32, 1 / 64):
        mask, t, e, d = solved(LShape(), h)
        r = A.audit_pointwise_w(mask, t, d, e.lambda_, c=4.51, consts=consts)
        assert r.passed
        margins.append(r.params["min_slack"])
    assert 0.5 < margins[1] / margins[0] < 2


def test_pointwise_gated(consts):
    mask, t, e, d = solved(Annulus(0.5, 1.0), 1 / 16)
    with pytest.raises(NotApplicable):
        A.audit_pointwise_w(mask, t, d, e.lambda_, consts=consts)
    with pytest.raises(ValueError):
        m2, t2, e2, d2 = solved(Disk(1.0), 1 / 16)
        A.audit_pointwise_w(m2, t2, d2, e2.lambda_, c=0.0, consts=consts)


# -- Green kernel ------------------------------------------------------------------

def test_lemma2_table_never_overestimates():
    lam = J0SQ
    d = np.linspace(0.01, 3.0, 200)
    exact = np.array([C.lemma2_green_bound(float(x), lam) for x in d])
    lower = A.lemma2_bound_lower(d, lam)
    assert (lower <= exact).all()
    # node ratio 1.005 costs at most x * 0.005 relative for K0 ~ e^{-x}
    assert (lower >= exact * 0.97).all()


def test_green_kernel_disk_centre(consts):
    h = 1 / 64
    mask, t, e, d = solved(Disk(1.0), h)
    src = mask.grid.cell_of(1e-9, 1e-9)
    G = solve_green_column(mask, src)
    reps = {r.check_id: r for r in A.audit_green_kernel(mask, G, src, d, e.lambda_, consts=consts)}
    assert set(reps) == {"E20_GREEN", "LEMMA2_GREEN", "E17_INTEGRATED", "E16_LOCAL"}
    assert all(r.passed for r in reps.values())
    e17 = reps["E17_INTEGRATED"]
    assert e17.lhs == pytest.approx(0.25, rel=0.02)
    assert e17.rhs == pytest.approx(4 / 3, rel=0.02)
    assert reps["E16_LOCAL"].params["Lambda_exponent"] == 1.5
    # continuum picture at |x - y| = 1/2
    assert (1 / math.pi) * math.sqrt(1 / 0.5) == pytest.approx(0.4502, abs=1e-4)
    assert disk_green_center(0.5) < 0.4502
    assert C.lemma2_green_bound(1.0, J0SQ) > disk_green_center(1 - 1e-9)


def test_green_kernel_annulus_only_lemma2(consts):
    mask, t, e, d = solved(Annulus(0.5, 1.0), 1 / 32)
    src = mask.grid.cell_of(0.75, 1e-9)
    G = solve_green_column(mask, src)
    reps = {r.check_id: r for r in A.audit_green_kernel(mask, G, src, d, e.lambda_, consts=consts)}
    assert reps["LEMMA2_GREEN"].status == "pass"
    for cid in ("E20_GREEN", "E17_INTEGRATED", "E16_LOCAL"):
        assert reps[cid].status == "not_applicable"
        schemas.validate("report", reps[cid].to_dict())


def test_green_kernel_grid_mismatch(consts):
    mask, t, e, d = solved(Disk(1.0), 1 / 16)
    other = rasterize(Disk(1.0), 1 / 8)
    with pytest.raises(GridMismatch):
        A.audit_green_kernel(mask, ScalarField(other.grid, np.zeros(other.grid.shape)),
                             (5, 5), d, e.lambda_, consts=consts)


# -- boundary growth ---------------------------------------------------------------

def test_boundary_growth_square_mid_edge(consts):
    r = A.audit_boundary_growth(Rectangle(1.0, 1.0), (0.5, 0.0), h=1 / 32, consts=consts)
    assert r.passed and r.params["c"] == 1.0
    assert r.params["coefficient"] == consts.growth_coefficient == C.boundary_growth_coefficient(consts.R0)
    assert r.params["R0"] == math.sqrt(8)


def test_boundary_growth_c_scaling(consts):
    # max of v is about 0.074, so c = scale * max v for both scales
    r20 = A.audit_boundary_growth(Rectangle(1.0, 1.0), (0.5, 0.0), h=1 / 32, scale=20, consts=consts)
    r40 = A.audit_boundary_growth(Rectangle(1.0, 1.0), (0.5, 0.0), h=1 / 32, scale=40, consts=consts)
    assert r40.params["c"] == pytest.approx(2 * r20.params["c"], rel=1e-12)
    assert r40.margin == pytest.approx(2 * r20.margin, rel=1e-9)
    assert r20.passed and r40.passed


@pytest.mark.parametrize("h", [1 / 32, 1 / 64])
def test_boundary_growth_near_x0(h, consts):
    r = A.audit_boundary_growth(LShape(), (0.5, 0.5), h=h, consts=consts)
    assert r.passed and r.params["min_slack_c1"] >= -r.numerical_error


def test_boundary_growth_rejects_interior_point(consts):
    with pytest.raises(BadBoundaryPoint):
        A.audit_boundary_growth(Rectangle(1.0, 1.0), (0.5, 0.5), h=1 / 16, consts=consts)


def test_boundary_growth_gated(consts):
    with pytest.raises(NotApplicable):
        A.audit_boundary_growth(Annulus(0.5, 1.0), (1.0, 0.0), h=1 / 16, consts=consts)


# -- refined identity --------------------------------------------------------------

def test_refined_identity_disk(consts):
    mask, t, e, d = solved(Disk(1.0), 1 / 64)
    G = solve_green_column(mask, e.argmax_cell)
    ident, floor = A.audit_refined_identity(mask, t, e, G, d, consts=consts)
    corr = ident.params["correction"]
    assert corr > 0
    assert ident.passed and ident.rhs - 1 >= e.lambda_ * corr - ident.numerical_error
    assert floor.passed and floor.note.startswith("pass (trivially")
    assert floor.lhs == consts.thm1_excess
    assert floor.params["R_c"] == pytest.approx(C.r_c(consts.c1_star, e.lambda_))


def test_refined_identity_l_shape(consts):
    mask, t, e, d = solved(LShape(), 1 / 32)
    G = solve_green_column(mask, e.argmax_cell)
    reps = A.audit_refined_identity(mask, t, e, G, d, consts=consts)
    assert all(r.passed for r in reps)


def test_refined_identity_grid_mismatch(consts):
    mask, t, e, d = solved(Disk(1.0), 1 / 16)
    other = solved(Disk(1.0), 1 / 8)
    with pytest.raises(GridMismatch):
        A.audit_refined_identity(mask, t, e, other[1].w, d, consts=consts)


def test_refined_identity_gated(consts):
    mask, t, e, d = solved(Annulus(0.5, 1.0), 1 / 16)
    G = solve_green_column(mask, e.argmax_cell)
    with pytest.raises(NotApplicable):
        A.audit_refined_identity(mask, t, e, G, d, topology=topology_check(mask), consts=consts)
