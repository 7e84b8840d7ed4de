"""End-to-end scenarios: oracle validation, corpus audits, sweeps and convergence studies.

Every scenario is deterministic.  Rows (domains or sweep points) may run in a
process pool; results come back in input order and are serialised by a
single writer to ``<output_dir>/<scenario>.json`` and ``<scenario>.csv``.
Wall-clock timings go to a ``<scenario>.meta.json`` sidecar, which is
outside the byte-identity contract.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import audit as A
from . import constants as C
from .errors import (DegenerateSequence, FitDegenerate, NotApplicable, OracleViolation,
                     RasterInfeasible, TorsionLabError)
from .geometry import (DomainSpec, Disk, Dumbbell, LShape, PuncturedSquare, Rectangle, Annulus,
                       distance_field, rasterize, spec_from_dict, topology_check)
from .solver import (DEFAULT_EIGEN_TOL, DEFAULT_TOL, richardson, solve_green_column,
                     solve_principal_eigen, solve_torsion)

log = logging.getLogger(__name__)

DEFAULT_LEVELS = (1 / 64, 1 / 128, 1 / 256)
OUTPUT_ENV = "TORSIONLAB_OUTPUT_DIR"
SCENARIO_KINDS = ("oracle", "corpus", "punctured", "dumbbell", "convergence")


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "torsionlab_out"))


def default_corpus():
    """The standard audit corpus: six simply connected members plus two with holes."""
    R3 = 1 / math.sqrt(3 * math.pi)
    return [
        {"name": "disk", "kind": "disk", "R": 1.0},
        {"name": "square", "kind": "rectangle", "a": 1.0, "b": 1.0},
        {"name": "rect_1x8", "kind": "rectangle", "a": 1.0, "b": 8.0,
         "h_levels": [1 / 32, 1 / 64, 1 / 128]},
        {"name": "l_shape", "kind": "l_shape", "a": 1.0, "b": 1.0, "notch": 0.5},
        {"name": "dumbbell3", "kind": "dumbbell", "n": 3, "R": R3, "tube_w": 0.25 * R3,
         "tube_len": R3},
        {"name": "punctured3", "kind": "punctured_square", "N": 3, "rho": 0.08},
        {"name": "annulus", "kind": "annulus", "r_in": 0.5, "r_out": 1.0},
    ]


def default_oracle_domains():
    return [
        {"name": "disk", "kind": "disk", "R": 1.0},
        {"name": "square", "kind": "rectangle", "a": 1.0, "b": 1.0},
        {"name": "rect_1x32", "kind": "rectangle", "a": 1.0, "b": 32.0,
         "h_levels": [1 / 16, 1 / 32, 1 / 64]},
    ]


@dataclass
class ExperimentConfig:
    """One scenario.  ``domains`` entries are domain-spec dicts plus optional
    ``name`` and ``h_levels`` keys overriding the scenario defaults."""

    scenario: str
    kind: str = "corpus"
    domains: list = field(default_factory=list)
    h_levels: list = field(default_factory=lambda: list(DEFAULT_LEVELS))
    tol_rel: float = DEFAULT_TOL
    eigen_tol: float = DEFAULT_EIGEN_TOL
    N_list: list = field(default_factory=lambda: [3])
    rho_list: list = field(default_factory=lambda: [0.035, 0.05, 0.065])
    n_list: list = field(default_factory=lambda: [2, 4, 8])
    checks: Optional[list] = None
    field_checks: bool = True
    output_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"kind must be one of {SCENARIO_KINDS}, got {self.kind!r}")
        if not self.scenario or any(c in self.scenario for c in "/\\"):
            raise ValueError(f"bad scenario id {self.scenario!r}")
        self.h_levels = _check_levels(self.h_levels)
        for name in ("N_list", "rho_list", "n_list"):
            values = list(getattr(self, name))
            if not values or values != sorted(values):
                raise ValueError(f"{name} must be nonempty and sorted")
            setattr(self, name, values)
        if self.checks is not None:
            unknown = set(self.checks) - set(A.CHECK_IDS)
            if unknown:
                raise ValueError(f"unknown check ids {sorted(unknown)}")
        if not self.domains:
            if self.kind == "oracle":
                self.domains = default_oracle_domains()
            elif self.kind == "corpus":
                self.domains = default_corpus()
        for d in self.domains:
            if "h_levels" in d:
                d["h_levels"] = _check_levels(d["h_levels"])

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "output_dir"}

    def out_dir(self) -> Path:
        return Path(self.output_dir) if self.output_dir else default_output_dir()


def _check_levels(levels):
    levels = sorted((float(h) for h in levels), reverse=True)
    if len(levels) < 3:
        raise ValueError("at least 3 grid levels are needed for extrapolation")
    if any(h <= 0 for h in levels):
        raise ValueError("grid spacings must be positive")
    return levels


def _split_entry(entry: dict):
    entry = dict(entry)
    name = entry.pop("name", None)
    levels = entry.pop("h_levels", None)
    spec = spec_from_dict(entry)
    return spec, name or spec.label, levels


# --------------------------------------------------------------------------
# Single-domain pipeline
# --------------------------------------------------------------------------

@dataclass
class LevelRun:
    mask: object
    torsion: object
    spectral: object
    dist: object
    topology: object
    summary: A.FunctionalSummary


def solve_level(spec: DomainSpec, h: float, name: Optional[str] = None,
                tol_rel: float = DEFAULT_TOL, eigen_tol: float = DEFAULT_EIGEN_TOL) -> LevelRun:
    mask = rasterize(spec, h, name)
    torsion = solve_torsion(mask, tol_rel)
    spectral = solve_principal_eigen(mask, eigen_tol, inner_tol=min(tol_rel, 1e-10))
    dist = distance_field(mask)
    topo = topology_check(mask)
    return LevelRun(mask, torsion, spectral, dist, topo,
                    A.summarize(mask, torsion, spectral, dist, topo))


@dataclass
class DomainResult:
    name: str
    spec: dict
    levels: list
    summary: Optional[A.FunctionalSummary]
    reports: list
    hole_count: int = 0
    error: Optional[str] = None
    seconds: float = 0.0

    def to_dict(self):
        return {
            "name": self.name, "spec": self.spec, "h_levels": [s.h for s in self.levels],
            "level_summaries": [s.to_dict() for s in self.levels],
            "summary": self.summary.to_dict() if self.summary else None,
            "hole_count": self.hole_count, "error": self.error,
        }


def field_reports(run: LevelRun, spec: DomainSpec, consts, tol_rel=DEFAULT_TOL,
                  checks=None) -> list:
    """Pointwise, kernel, refined-identity and boundary-growth audits on the finest level."""
    want = (lambda cid: checks is None or cid in checks)
    name = run.mask.name
    out = []
    lam = run.spectral.lambda_
    if want("E12_POINTWISE"):
        try:
            out.append(A.audit_pointwise_w(run.mask, run.torsion, run.dist, lam,
                                           topology=run.topology, consts=consts))
        except NotApplicable as exc:
            out.append(A.not_applicable("E12_POINTWISE", name, exc.reason, consts))
    kernel_ids = ("E20_GREEN", "LEMMA2_GREEN", "E17_INTEGRATED", "E16_LOCAL")
    refined_ids = ("REFINED_IDENTITY", "REFINED_FLOOR")
    need_green = any(want(c) for c in kernel_ids + refined_ids)
    if need_green:
        q = run.spectral.argmax_cell
        green = solve_green_column(run.mask, q, tol_rel)
        out += [r for r in A.audit_green_kernel(run.mask, green, q, run.dist, lam,
                                                topology=run.topology, consts=consts)
                if want(r.check_id)]
        try:
            out += [r for r in A.audit_refined_identity(run.mask, run.torsion, run.spectral, green,
                                                        run.dist, run.topology, consts)
                    if want(r.check_id)]
        except NotApplicable as exc:
            out += [A.not_applicable(c, name, exc.reason, consts) for c in refined_ids if want(c)]
    if want("BOUNDARY_GROWTH") and isinstance(spec, LShape):
        try:
            rep = A.audit_boundary_growth(run.mask, spec.corner, consts=consts, tol_rel=tol_rel)
            out.append(rep)
        except NotApplicable as exc:
            out.append(A.not_applicable("BOUNDARY_GROWTH", name, exc.reason, consts))
    return out


def summary_reports(summary: A.FunctionalSummary, consts, checks=None) -> list:
    out = []
    for cid in A.SUMMARY_CHECKS:
        if checks is not None and cid not in checks:
            continue
        try:
            out.append(A.audit_summary(cid, summary, consts))
        except NotApplicable as exc:
            out.append(A.not_applicable(cid, summary.name, exc.reason, consts))
    return out


def run_domain(entry: dict, h_levels, tol_rel=DEFAULT_TOL, eigen_tol=DEFAULT_EIGEN_TOL,
               checks=None, field_checks=True) -> DomainResult:
    """Solve one domain on every level, extrapolate, and audit.

    Solver failures are captured in ``error`` so that a corpus keeps going.
    """
    t0 = time.perf_counter()
    spec, name, own_levels = _split_entry(entry)
    levels = own_levels or h_levels
    consts = C.paper_constants()
    spec_dict = {k: v for k, v in entry.items() if k not in ("h_levels",)}
    try:
        runs = [solve_level(spec, h, name, tol_rel, eigen_tol) for h in levels]
        summaries = [r.summary for r in runs]
        summary = A.extrapolate_summaries(summaries)
        reports = summary_reports(summary, consts, checks)
        if field_checks:
            reports += field_reports(runs[-1], spec, consts, tol_rel, checks)
        holes = runs[-1].topology.hole_count
        error = None
    except TorsionLabError as exc:
        log.warning("%s: %s", name, exc)
        summaries, summary, reports, holes = [], None, [], 0
        error = f"{type(exc).__name__}: {exc}"
    return DomainResult(name, spec_dict, summaries, summary, A.sort_reports(reports), holes,
                        error, time.perf_counter() - t0)


def _run_domain_star(args):
    return run_domain(*args)


def ordered_map(fn, items, workers=1):
    """``map`` over a process pool when ``workers > 1``; results keep input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("check_id", "domain", "lhs", "rhs", "margin", "pass", "numerical_error",
                  "params", "constants_snapshot_id", "status", "note")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        d = _clean(r.to_dict() if hasattr(r, "to_dict") else r)
        row = []
        for col in REPORT_COLUMNS:
            v = d[col]
            if col == "params":
                v = json.dumps(v, sort_keys=True)
            elif v is None:
                v = ""
            elif isinstance(v, float):
                v = repr(v)
            row.append(v)
        writer.writerow(row)
    return buf.getvalue()


def write_scenario(name: str, payload: dict, csv_text: str, out_dir, meta=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / f"{name}.json", "csv": out_dir / f"{name}.csv"}
    paths["json"].write_text(dumps(payload))
    paths["csv"].write_text(csv_text)
    if meta is not None:
        paths["meta"] = out_dir / f"{name}.meta.json"
        paths["meta"].write_text(dumps(meta))
    return paths


def _counts(reports):
    out = {"pass": 0, "fail": 0, "not_applicable": 0}
    for r in reports:
        out[r.status] += 1
    return out


# --------------------------------------------------------------------------
# Oracles
# --------------------------------------------------------------------------

def rectangle_oracle(a: float, b: float, tol: float = 1e-13):
    """Continuum ``lambda``, ``T`` and ``max w`` of the ``a x b`` rectangle.

    ``w`` is expanded in the short direction only, the long-direction sum
    being done in closed form; both series then have explicit tail bounds.
    Returns ``(values, tail_bounds)``.
    """
    a, b = min(a, b), max(a, b)
    T = a ** 3 * b / 12.0
    w = a * a / 8.0
    k, T_tail, w_tail = 1, math.inf, math.inf
    while T_tail > tol * T or w_tail > tol * w:
        t = k * math.pi * b / (2 * a)
        T -= 16 * a ** 4 / (math.pi ** 5 * k ** 5) * math.tanh(t)
        sign = 1 if (k // 2) % 2 == 0 else -1          # sin(k pi / 2) for odd k
        sech = 2 * math.exp(-t) / (1 + math.exp(-2 * t))
        w -= sign * 4 * a * a / (math.pi ** 3 * k ** 3) * sech
        # remaining odd terms k+2, k+4, ...
        T_tail = 16 * a ** 4 / math.pi ** 5 / (8 * k ** 4)
        q = math.exp(-math.pi * b / a)
        w_tail = 8 * a * a / (math.pi ** 3 * k ** 3) * math.exp(-(k + 2) * math.pi * b / (2 * a)) / (1 - q)
        k += 2
    lam = math.pi ** 2 * (1 / a ** 2 + 1 / b ** 2)
    return {"lambda_": lam, "t_rigidity": T, "norm_linf_w": w, "product": w * lam}, \
        {"lambda_": 0.0, "t_rigidity": T_tail, "norm_linf_w": w_tail, "product": w_tail * lam}


def square_torsion_double_series(M: int = 2001):
    """``T`` of the unit square from the absolutely convergent double sine series.

    Returns ``(value, tail_bound)`` where the tail bound covers all terms with
    ``max(m, n) > M``.
    """
    k = np.arange(1, M + 1, 2, dtype=float)
    m2 = k[:, None] ** 2
    n2 = k[None, :] ** 2
    value = float((64 / math.pi ** 6 / (m2 * n2 * (m2 + n2))).sum())
    tail = 2 * 64 / math.pi ** 6 * (math.pi ** 2 / 8) / (6 * (M - 1) ** 3)
    return value, tail


def disk_oracle(R: float):
    j0 = C.paper_constants().j0
    lam = j0 ** 2 / R ** 2
    w = R * R / 4
    return {"lambda_": lam, "t_rigidity": math.pi * R ** 4 / 8, "norm_linf_w": w,
            "product": w * lam}


ORACLE_TOLERANCES = {
    "disk": {"lambda_": 0.015, "norm_linf_w": 0.015, "t_rigidity": 0.015, "product": 0.015},
    "square": {"lambda_": 0.005, "t_rigidity": 0.01, "norm_linf_w": 0.01},
    "rectangle": {"product": 0.02},
}


def oracle_for(spec: DomainSpec):
    """Reference values and relative tolerances for an oracle domain."""
    if isinstance(spec, Disk):
        return disk_oracle(spec.R), ORACLE_TOLERANCES["disk"]
    if isinstance(spec, Rectangle):
        values, _ = rectangle_oracle(spec.a, spec.b)
        if spec.a == spec.b:
            T, _ = square_torsion_double_series()
            values["t_rigidity"] = T * spec.a ** 4
            return values, ORACLE_TOLERANCES["square"]
        return values, ORACLE_TOLERANCES["rectangle"]
    raise ValueError(f"no closed-form oracle for {spec.kind}")


@dataclass(frozen=True)
class OracleRow:
    domain: str
    quantity: str
    computed: float
    reference: float
    rel_error: float
    tolerance: float
    passed: bool

    def to_dict(self):
        return {"domain": self.domain, "quantity": self.quantity, "computed": self.computed,
                "reference": self.reference, "rel_error": self.rel_error,
                "tolerance": self.tolerance, "pass": self.passed}


@dataclass
class OracleReport:
    rows: list
    domains: list
    paths: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def failures(self):
        return [r for r in self.rows if not r.passed]

    def raise_for_failures(self):
        bad = self.failures()
        if bad:
            worst = max(bad, key=lambda r: r.rel_error / r.tolerance)
            raise OracleViolation(f"{worst.domain}.{worst.quantity}", worst.rel_error,
                                  worst.tolerance)


def run_oracle_suite(cfg: ExperimentConfig, write: bool = True,
                     raise_on_failure: bool = False) -> OracleReport:
    """Compare extrapolated functionals with closed-form values."""
    t0 = time.perf_counter()
    args = [(d, cfg.h_levels, cfg.tol_rel, cfg.eigen_tol, [], False) for d in cfg.domains]
    results = ordered_map(_run_domain_star, args, cfg.workers)
    rows = []
    for entry, res in zip(cfg.domains, results):
        spec, name, _ = _split_entry(entry)
        ref, tols = oracle_for(spec)
        if res.summary is None:
            rows += [OracleRow(name, q, math.nan, ref[q], math.inf, tol, False)
                     for q, tol in sorted(tols.items())]
            continue
        for q, tol in sorted(tols.items()):
            got = getattr(res.summary, q)
            err = abs(got - ref[q]) / abs(ref[q])
            rows.append(OracleRow(name, q, got, ref[q], err, tol, err <= tol))
    report = OracleReport(rows, results)
    if write:
        payload = {"scenario": cfg.scenario, "kind": "oracle", "config": cfg.to_dict(),
                   "pass": report.passed, "rows": [r.to_dict() for r in rows],
                   "domains": [r.to_dict() for r in results]}
        report.paths = write_scenario(cfg.scenario, payload, _oracle_csv(rows), cfg.out_dir(),
                                      {"seconds": time.perf_counter() - t0})
    if raise_on_failure:
        report.raise_for_failures()
    return report


def _oracle_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain", "quantity", "computed", "reference", "rel_error", "tolerance", "pass"])
    for r in rows:
        w.writerow([r.domain, r.quantity, repr(r.computed), repr(r.reference), repr(r.rel_error),
                    repr(r.tolerance), r.passed])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Corpus
# --------------------------------------------------------------------------

@dataclass
class CorpusReport:
    domains: list
    reports: list
    counts: dict
    validated: bool
    paths: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.counts["fail"] == 0 and not any(d.error for d in self.domains)

    def failures(self):
        return [r for r in self.reports if r.status == "fail"]


def run_corpus_audit(cfg: ExperimentConfig, write: bool = True,
                     oracle: Optional[OracleReport] = None) -> CorpusReport:
    """Audit every applicable check on every corpus domain.

    When an oracle report is given and it failed, the corpus report is
    marked unvalidated.
    """
    t0 = time.perf_counter()
    args = [(d, cfg.h_levels, cfg.tol_rel, cfg.eigen_tol, cfg.checks, cfg.field_checks)
            for d in cfg.domains]
    results = ordered_map(_run_domain_star, args, cfg.workers)
    reports = A.sort_reports([r for res in results for r in res.reports])
    validated = oracle.passed if oracle is not None else None
    rep = CorpusReport(results, reports, _counts(reports), bool(validated) if oracle else True)
    if write:
        payload = {
            "scenario": cfg.scenario, "kind": "corpus", "config": cfg.to_dict(),
            "constants_snapshot_id": C.paper_constants().snapshot_id,
            "validation": ("not_run" if oracle is None
                           else "validated" if oracle.passed else "unvalidated"),
            "counts": rep.counts, "domains": [r.to_dict() for r in results],
            "reports": [r.to_dict() for r in reports],
            "failures": [r.to_dict() for r in rep.failures()],
        }
        rep.paths = write_scenario(cfg.scenario, payload, reports_to_csv(reports), cfg.out_dir(),
                                   {"seconds": time.perf_counter() - t0,
                                    "per_domain_seconds": {r.name: r.seconds for r in results}})
    return rep


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

@dataclass
class SweepResult:
    parameter: dict
    summary: Optional[A.FunctionalSummary]
    reports: list
    seconds: float = 0.0
    hole_count: int = 0
    error: Optional[str] = None

    def to_dict(self):
        return {"parameter": self.parameter,
                "summary": self.summary.to_dict() if self.summary else None,
                "reports": [r.to_dict() for r in self.reports],
                "hole_count": self.hole_count, "error": self.error}


@dataclass
class SweepReport:
    scenario: str
    rows: list
    baseline: Optional[A.FunctionalSummary] = None
    findings: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.findings.get(k, True) for k in self.findings if k.endswith("_ok")) \
            and all(r.error is None for r in self.rows) \
            and not any(rep.status == "fail" for r in self.rows for rep in r.reports)


def punctured_levels(rho: float, base=DEFAULT_LEVELS):
    """Three halving levels, the coarsest satisfying ``rho > 3h``."""
    base = sorted(base, reverse=True)
    h = base[0]
    while not rho > 3 * h:
        h /= 2
    return [h, h / 2, h / 4]


def _sweep_row(args):
    param, entry, levels, tol_rel, eigen_tol, checks = args
    res = run_domain(entry, levels, tol_rel, eigen_tol, checks, field_checks=False)
    return SweepResult(param, res.summary, res.reports, res.seconds, res.hole_count, res.error)


def _write_sweep(cfg, rep: SweepReport, t0):
    payload = {"scenario": cfg.scenario, "kind": cfg.kind, "config": cfg.to_dict(),
               "constants_snapshot_id": C.paper_constants().snapshot_id,
               "baseline": rep.baseline.to_dict() if rep.baseline else None,
               "findings": rep.findings, "rows": [r.to_dict() for r in rep.rows]}
    reports = A.sort_reports([x for r in rep.rows for x in r.reports])
    rep.paths = write_scenario(cfg.scenario, payload, reports_to_csv(reports), cfg.out_dir(),
                               {"seconds": time.perf_counter() - t0,
                                "row_seconds": [r.seconds for r in rep.rows]})


def sweep_punctured(cfg: ExperimentConfig, write: bool = True) -> SweepReport:
    """Product and F of the punctured unit square across ``N`` and ``rho``.

    Each row must keep the product strictly above 1 and strictly below the
    product of the plain square computed on the same levels.
    """
    t0 = time.perf_counter()
    items = []
    for N in cfg.N_list:
        for rho in cfg.rho_list:
            try:
                PuncturedSquare(N, rho).validate()
            except TorsionLabError as exc:
                raise RasterInfeasible(f"N={N}, rho={rho}: {exc}") from exc
            levels = punctured_levels(rho, cfg.h_levels)
            entry = {"name": f"punctured_N{N}_rho{rho:g}", "kind": "punctured_square",
                     "N": N, "rho": rho}
            items.append(({"N": N, "rho": rho}, entry, levels, cfg.tol_rel, cfg.eigen_tol,
                          cfg.checks))
    rows = ordered_map(_sweep_row, items, cfg.workers)
    base_levels = sorted({tuple(it[2]) for it in items})
    baselines = {}
    for lv in base_levels:
        res = run_domain({"name": "square", "kind": "rectangle", "a": 1.0, "b": 1.0}, list(lv),
                         cfg.tol_rel, cfg.eigen_tol, [], False)
        baselines[lv] = res.summary
    findings = {}
    between = True
    for it, row in zip(items, rows):
        base = baselines[tuple(it[2])]
        if row.summary is None or base is None:
            between = False
            continue
        err = row.summary.err("product") + base.err("product")
        ok = (row.summary.product - 1 > row.summary.err("product")
              and base.product - row.summary.product > err)
        row.parameter["product_between_ok"] = bool(ok)
        row.parameter["square_product"] = base.product
        between &= ok
    findings["product_between_ok"] = bool(between)
    findings["hole_counts"] = [r.hole_count for r in rows]
    findings["hole_count_ok"] = all(r.hole_count == it[0]["N"] ** 2 for it, r in zip(items, rows))
    f_values = [r.summary.f_value if r.summary else None for r in rows]
    findings["f_values"] = f_values
    baseline = baselines[base_levels[0]] if base_levels else None
    rep = SweepReport(cfg.scenario, rows, baseline, findings)
    if write:
        _write_sweep(cfg, rep, t0)
    return rep


def dumbbell_entry(n: int, total_area: float = 1.0, tube_ratio: float = 0.25,
                   length_ratio: float = 1.0):
    """Dumbbell whose discs have combined area ``total_area``; tubes scale with the radius."""
    R = math.sqrt(total_area / (n * math.pi))
    return {"name": f"dumbbell_n{n}", "kind": "dumbbell", "n": int(n), "R": R,
            "tube_w": tube_ratio * R, "tube_len": length_ratio * R}


def loglog_slope(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    ok = np.isfinite(xs) & np.isfinite(ys) & (xs > 0) & (ys > 0)
    if ok.sum() < 3:
        raise FitDegenerate(f"need at least 3 usable points, got {int(ok.sum())}")
    slope, _ = np.polyfit(np.log(xs[ok]), np.log(ys[ok]), 1)
    return float(slope)


def sweep_dumbbell(cfg: ExperimentConfig, write: bool = True) -> SweepReport:
    """``T/|Omega|^2`` of chains of ``n`` joined discs of fixed total area."""
    t0 = time.perf_counter()
    items = [({"n": int(n)}, dumbbell_entry(n), cfg.h_levels, cfg.tol_rel, cfg.eigen_tol,
              cfg.checks) for n in cfg.n_list]
    rows = ordered_map(_sweep_row, items, cfg.workers)
    ratios = [r.summary.t_rigidity / r.summary.area ** 2 if r.summary else math.nan for r in rows]
    for row, ratio in zip(rows, ratios):
        row.parameter["t_over_area2"] = ratio
    findings = {"ratios": ratios,
                "decreasing_ok": bool(all(b < a for a, b in zip(ratios, ratios[1:]))),
                "hole_counts": [r.hole_count for r in rows],
                "hole_count_ok": all(r.hole_count == 0 for r in rows)}
    slope = loglog_slope(cfg.n_list, ratios)
    findings["slope"] = slope
    findings["slope_ok"] = bool(-1.5 <= slope <= -0.5)
    rep = SweepReport(cfg.scenario, rows, None, findings)
    if write:
        _write_sweep(cfg, rep, t0)
    return rep


# --------------------------------------------------------------------------
# Convergence
# --------------------------------------------------------------------------

CONVERGENCE_FIELDS = ("lambda_", "t_rigidity", "norm_l2_w", "norm_linf_w", "product")


def convergence_study(spec, h_list, tol_rel=DEFAULT_TOL, eigen_tol=DEFAULT_EIGEN_TOL,
                      name=None) -> dict:
    """Observed order and extrapolated value of each functional.

    Requires at least three levels that halve.  Functionals whose differences
    change sign are flagged ``monotone: false`` instead of being extrapolated.
    """
    if isinstance(spec, dict):
        spec, name, _ = _split_entry(spec)
    hs = sorted((float(h) for h in h_list), reverse=True)
    if len(hs) < 3:
        raise DegenerateSequence("convergence study needs at least 3 levels")
    for a, b in zip(hs, hs[1:]):
        if not math.isclose(a, 2 * b, rel_tol=1e-12):
            raise DegenerateSequence(f"levels must halve: {hs}")
    runs = [solve_level(spec, h, name, tol_rel, eigen_tol).summary for h in hs]
    out = {"domain": name or spec.label, "h": hs, "functionals": {}}
    for key in CONVERGENCE_FIELDS:
        seq = [(s.h, getattr(s, key)) for s in runs]
        row = {"values": [v for _, v in seq]}
        try:
            ex = richardson(seq)
            row.update(monotone=True, observed_order=ex.observed_order, extrapolated=ex.value,
                       error_estimate=ex.error_estimate)
        except DegenerateSequence as exc:
            row.update(monotone=False, observed_order=None, extrapolated=seq[-1][1],
                       error_estimate=abs(seq[-1][1] - seq[-2][1]), note=str(exc))
        out["functionals"][key] = row
    return out


def run_convergence(cfg: ExperimentConfig, write: bool = True) -> list:
    t0 = time.perf_counter()
    studies = []
    for entry in cfg.domains:
        spec, name, own = _split_entry(entry)
        studies.append(convergence_study(spec, own or cfg.h_levels, cfg.tol_rel, cfg.eigen_tol,
                                         name))
    if write:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["domain", "functional", "h", "value", "observed_order", "extrapolated",
                    "error_estimate", "monotone"])
        for st in studies:
            for key, row in st["functionals"].items():
                for h, v in zip(st["h"], row["values"]):
                    w.writerow([st["domain"], key, repr(h), repr(v), row["observed_order"],
                                repr(row["extrapolated"]), repr(row["error_estimate"]),
                                row["monotone"]])
        write_scenario(cfg.scenario, {"scenario": cfg.scenario, "kind": "convergence",
                                      "config": cfg.to_dict(), "studies": studies},
                       buf.getvalue(), cfg.out_dir(), {"seconds": time.perf_counter() - t0})
    return studies


def run_scenario(cfg: ExperimentConfig):
    """Dispatch on ``cfg.kind``; returns the scenario's report object."""
    if cfg.kind == "oracle":
        return run_oracle_suite(cfg)
    if cfg.kind == "corpus":
        return run_corpus_audit(cfg)
    if cfg.kind == "punctured":
        return sweep_punctured(cfg)
    if cfg.kind == "dumbbell":
        return sweep_dumbbell(cfg)
    return run_convergence(cfg)
