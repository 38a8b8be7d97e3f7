"""Stability diagrams, branch endpoints and critical couplings.

The lower unstable branch B-C is the fold of the steady-state curve
(``a0 < 0``); the upper branch D-E is where the Routh-Hurwitz margin
turns negative. Endpoints are located numerically along the curve
parametrized by scaled occupation; the closed-form approximations are
evaluated alongside for comparison only.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import optimize

from .linstab import Klass, LinearizationMode, classify_along, margins_along
from .model import DEGENERATE_TOL, Susceptibility, SystemParams, _drive_sq_parts, drive_for_occupation
from .numerics import REAL_TOL, BracketError, Polynomial, bisect, bisect_predicate, merge_close, real_nonneg_roots

SCAN_RANGE = (1e-4, 1e3)
SCAN_POINTS = 2000
DIVERGENCE_N = 1e6
FAR_RANGE = (1e-4, 1e8)
FAR_POINTS = 800
COUPLING_TOL = 1e-4
DETECTOR_TOL = 1e-6


class Source(str, Enum):
    NUMERIC = "Numeric"
    EQ7 = "Eq7"
    EQ10 = "Eq10"
    EQ5 = "Eq5"
    EQ13 = "Eq13"


class NoBistability(ValueError):
    pass


class AnalyticAssumptionWarning(UserWarning):
    pass


class DetectorMismatch(RuntimeError):
    pass


@dataclass(frozen=True)
class BranchPoint:
    label: str
    n: float
    drive: float
    source: Source = Source.NUMERIC
    segment: int = 0


@dataclass(frozen=True)
class DiagramSample:
    n: float
    drive: float
    verdict: Klass
    a0_margin: float
    rh_margin: float
    max_re_lambda: float


@dataclass
class StabilityDiagram:
    params: SystemParams
    mode: LinearizationMode
    samples: list[DiagramSample]

    def runs(self) -> list[tuple[Klass, float, float]]:
        """Consecutive samples sharing a verdict, as (verdict, n_first, n_last)."""
        out: list[tuple[Klass, float, float]] = []
        for s in self.samples:
            if out and out[-1][0] is s.verdict:
                out[-1] = (s.verdict, out[-1][1], s.n)
            else:
                out.append((s.verdict, s.n, s.n))
        return out

    def pattern(self) -> list[Klass]:
        return [k for k, _, _ in self.runs() if k is not Klass.MARGINAL]


@dataclass
class Endpoints:
    points: list[BranchPoint]
    a0_crossings: list[float] = field(default_factory=list)
    detector_gap: float | None = None
    degenerate: bool = False
    de_unbounded: bool = False

    def get(self, label: str, segment: int = 0) -> BranchPoint | None:
        for p in self.points:
            if p.label == label and p.segment == segment:
                return p
        return None

    def bc_drive_width(self) -> float:
        b, c = self.get("B"), self.get("C")
        return 0.0 if b is None or c is None else b.drive - c.drive

    def de_segments(self) -> list[tuple[float, float]]:
        segs = []
        k = 0
        while self.get("D", k) is not None:
            e = self.get("E", k)
            segs.append((self.get("D", k).n, math.inf if e is None else e.n))
            k += 1
        return segs

    def de_width(self) -> float:
        return sum(e - d for d, e in self.de_segments())


@dataclass
class CriticalCouplings:
    g_c1: float | None
    g_star: float | None
    g_c2: float | None
    g_star_window: tuple[float, float] | None = None
    eq11: float = math.nan
    eq16: float = math.nan
    eq16_alt: float = math.nan
    g_star_c4: float = 2.0
    g_star_text: float = math.nan
    mode: LinearizationMode = LinearizationMode.EXACT


# -- diagrams ------------------------------------------------------------


def _samples(args) -> list[DiagramSample]:
    params, n, mode = args
    drive = np.atleast_1d(drive_for_occupation(params, np.asarray(n)))
    verdicts = classify_along(params, n, mode)
    return [
        DiagramSample(float(x), float(d), v.klass, v.a0_margin, v.rh_margin, v.max_re_lambda)
        for x, d, v in zip(n, drive, verdicts)
    ]


def trace_diagram(
    params: SystemParams,
    n_grid,
    mode: LinearizationMode = LinearizationMode.EXACT,
    workers: int | None = None,
    chunk: int = 500,
) -> StabilityDiagram:
    """Classify the steady state at every occupation of ``n_grid``.

    States are rebuilt from the occupation rather than from the drive,
    so there is no root-selection ambiguity. The grid is classified in
    chunks; with ``workers > 1`` the chunks go to a process pool. Result
    order always follows the grid.
    """
    grid = [float(x) for x in n_grid]
    if any(x < 0 for x in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("n_grid must be nonnegative and strictly increasing")
    mode = LinearizationMode(mode)
    jobs = [(params, grid[i : i + chunk], mode) for i in range(0, len(grid), chunk)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_samples, jobs))
    else:
        parts = [_samples(j) for j in jobs]
    return StabilityDiagram(params, mode, [s for part in parts for s in part])


# -- endpoints -----------------------------------------------------------


def turning_points(params: SystemParams) -> tuple[list[float], bool]:
    """Occupations where drive(n) turns, and whether any pair merged."""
    p, r = _drive_sq_parts(params.scaled())
    dpoly = p.deriv() * r - p * r.deriv()
    roots = [x for x in real_nonneg_roots(Polynomial.from_numpy(dpoly), REAL_TOL) if x > 0]
    roots, flags = merge_close(roots, DEGENERATE_TOL)
    degenerate = any(flags) or len(roots) % 2 == 1
    return roots, degenerate


def _a0(params, mode):
    return lambda n: float(margins_along(params, n, mode)[0])


def _rh(params, mode):
    return lambda n: float(margins_along(params, n, mode)[1])


def _sign_changes(x, y):
    s = np.sign(y)
    return [i for i in range(len(x) - 1) if s[i] != s[i + 1] and s[i] != 0]


def _oscillatory_segments(params, mode, grid):
    """(n_D, n_E or None) pairs where RH fails while a0 stays positive."""
    a0, rh = margins_along(params, grid, mode)
    mask = (rh < 0) & (a0 > 0)
    f_a0, f_rh = _a0(params, mode), _rh(params, mode)
    segs: list[list] = []
    if mask[0]:
        segs.append([grid[0], None])
    for i in range(len(grid) - 1):
        if mask[i] == mask[i + 1]:
            continue
        lo, hi = grid[i], grid[i + 1]
        f = f_rh if np.sign(rh[i]) != np.sign(rh[i + 1]) else f_a0
        try:
            x = bisect(f, lo, hi)
        except BracketError:
            x = 0.5 * (lo + hi)
        if mask[i + 1]:
            segs.append([x, None])
        else:
            segs[-1][1] = x
    return [(d, e) for d, e in segs]


def find_endpoints(
    params: SystemParams,
    mode: LinearizationMode = LinearizationMode.EXACT,
    n_range: tuple[float, float] = SCAN_RANGE,
    n_points: int = SCAN_POINTS,
) -> Endpoints:
    """Locate B, C (fold) and D, E (Routh-Hurwitz) along the steady-state curve.

    B and C come from the turning points of drive(n); the sign changes of
    the a0 margin are located independently. For the exact Jacobian with
    the full susceptibility the two coincide identically, and a gap above
    1e-6 is an error. Otherwise the gap is only reported.
    """
    mode = LinearizationMode(mode)
    tps, degenerate = turning_points(params)
    grid = np.logspace(math.log10(n_range[0]), math.log10(n_range[1]), n_points)
    # narrow folds near the critical coupling can slip between scan points
    extra = [t * f for t in tps for f in (1 - 1e-3, 1 + 1e-3)]
    grid = np.unique(np.concatenate([grid, extra]))

    a0 = margins_along(params, grid, mode)[0]
    f_a0 = _a0(params, mode)
    crossings = [bisect(f_a0, grid[i], grid[i + 1]) for i in _sign_changes(grid, a0)]

    points: list[BranchPoint] = []
    for k in range(len(tps) // 2):
        nb, nc = tps[2 * k], tps[2 * k + 1]
        points.append(BranchPoint("B", nb, drive_for_occupation(params, nb), Source.NUMERIC, k))
        points.append(BranchPoint("C", nc, drive_for_occupation(params, nc), Source.NUMERIC, k))

    gap = None
    if len(crossings) == 2 * (len(tps) // 2) and crossings:
        gap = max(abs(x - t) for x, t in zip(crossings, tps))
    exact = mode is LinearizationMode.EXACT and params.susceptibility is Susceptibility.FULL
    if exact and not degenerate:
        if len(crossings) != len(tps) or (gap is not None and gap > DETECTOR_TOL):
            raise DetectorMismatch(f"a0 crossings {crossings} vs turning points {tps}")

    segs = _oscillatory_segments(params, mode, grid)
    unbounded = False
    for k, (d, e) in enumerate(segs):
        points.append(BranchPoint("D", d, drive_for_occupation(params, d), Source.NUMERIC, k))
        if e is None:
            unbounded = True
        else:
            points.append(BranchPoint("E", e, drive_for_occupation(params, e), Source.NUMERIC, k))
    return Endpoints(points, crossings, gap, degenerate, unbounded)


def upper_endpoint(
    params: SystemParams,
    mode: LinearizationMode = LinearizationMode.EXACT,
    n_range: tuple[float, float] = FAR_RANGE,
    n_points: int = FAR_POINTS,
) -> float:
    """Largest E over all D-E segments; inf if unstable at the end of the range, 0 if none."""
    grid = np.logspace(math.log10(n_range[0]), math.log10(n_range[1]), n_points)
    segs = _oscillatory_segments(params, mode, grid)
    if not segs:
        return 0.0
    e = segs[-1][1]
    return math.inf if e is None else e


# -- closed forms ----------------------------------------------------------


def eq7_endpoints(params: SystemParams) -> tuple[float, float]:
    """Pure radiation-pressure fold points to first order in gamma."""
    sp = params.scaled()
    d0, k = sp.delta0, sp.kappa
    if d0 >= 0:
        raise NoBistability("no bistability for nonnegative detuning")
    disc = 1 - 3 * k * k / (4 * d0 * d0)
    if disc < -1e-12:
        raise NoBistability(f"negative discriminant {disc}")
    root = 0.5 * math.sqrt(max(disc, 0.0))
    return -d0 / 3 * (1 - root), -d0 / 3 * (1 + root)


def eq10_endpoints(params: SystemParams) -> tuple[float, float]:
    """Fold points with the first-order cross-Kerr shift (resolved sideband)."""
    sp = params.scaled()
    d0, k, s = sp.delta0, sp.kappa, sp.s
    if k >= abs(d0):
        warnings.warn("outside the resolved-sideband regime", AnalyticAssumptionWarning, stacklevel=2)
    nb = -d0 / 6 - k * k / (16 * d0) - s * d0 / 4 * (d0 * d0 + 3 * k * k / 4)
    nc = -d0 / 2 + k * k / (16 * d0) - s * d0 / 4 * (d0 * d0 - k * k / 4)
    return nb, nc


def eq5_endpoints(params: SystemParams) -> tuple[float, float]:
    """Pure radiation-pressure D, E to first order in gamma/kappa (Delta0 = -omega_m)."""
    sp = params.scaled()
    eps = sp.gamma / sp.kappa
    if eps > 0.5 or abs(sp.delta0 + 1) > 1e-12:
        warnings.warn("D-E closed form assumes gamma << kappa and Delta0 = -omega_m",
                      AnalyticAssumptionWarning, stacklevel=2)
    nd = 0.5 + eps / 8
    ne = math.sqrt(1 / (2 * eps)) + 0.75 + 19 / 32 * math.sqrt(2 * eps) - eps / 16
    return nd, ne


def _lam(eta):
    return (3 * (1 + eta) * (1 + 2 * eta) - eta * eta) / (8 * (1 + eta) * (1 + 2 * eta) ** 2)


@dataclass(frozen=True)
class Eq13Result:
    n_d: float
    n_e: float
    eta_d: float
    eta_e: float
    lambda_d: float
    lambda_e: float
    converged_d: bool
    converged_e: bool
    iterations_d: int
    iterations_e: int


def _fixed_point(f, x0, tol=1e-10, max_iter=100):
    x = x0
    for i in range(1, max_iter + 1):
        with np.errstate(all="ignore"):
            y = f(x)
        if not math.isfinite(y):
            return y, False, i
        if abs(y - x) <= tol * max(1.0, abs(y)):
            return y, True, i
        x = y
    return x, False, max_iter


def eq13_endpoints(params: SystemParams) -> Eq13Result:
    """Cross-Kerr corrected D, E solved self-consistently in eta = s * n."""
    sp = params.scaled()
    s, k, g = sp.s, sp.kappa, sp.gamma
    if g / k > 0.5:
        warnings.warn("D-E closed form assumes gamma << kappa", AnalyticAssumptionWarning, stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AnalyticAssumptionWarning)
        seed_d, seed_e = eq5_endpoints(params)

    def f_d(n):
        eta = s * n
        return (1 + eta) ** 2 / (2 * (1 + 3 * eta + eta * eta))

    def f_e(n):
        eta = s * n
        lam = _lam(eta)
        if lam <= 0:
            return math.nan
        return 3 * (1 + eta) ** 2 / (32 * lam * (1 + 2 * eta) ** 2) * (math.sqrt(3 * k / (g * lam)) + 3)

    nd, okd, itd = _fixed_point(f_d, seed_d)
    ne, oke, ite = _fixed_point(f_e, seed_e)
    return Eq13Result(nd, ne, s * nd, s * ne, _lam(s * nd), _lam(s * ne), okd, oke, itd, ite)


def asymptotic_coeffs(params: SystemParams) -> tuple[float, float]:
    """Leading large-occupation coefficients (c3, c4) of the RH condition."""
    sp = params.scaled()
    g, k, d0, s = sp.gamma, sp.kappa, sp.delta0, sp.s
    c3 = -32 * (g * k * d0 + s * (s * g * k * d0 / 4 + (g + k)))
    c4 = g * k * (s * s - 4) ** 2
    return c3, c4


# -- critical couplings --------------------------------------------------------


def _bc_exists(params: SystemParams, s: float) -> bool:
    return len(turning_points(params.with_gck_scaled(s))[0]) >= 2


def _unstable_far(params, s, mode) -> bool:
    a0, rh = margins_along(params.with_gck_scaled(s), DIVERGENCE_N, mode)
    return bool(rh < 0 and a0 > 0)


def _de_exists(params, s, mode) -> bool:
    return upper_endpoint(params.with_gck_scaled(s), mode) > 0


def critical_couplings(
    params: SystemParams,
    mode: LinearizationMode = LinearizationMode.EXACT,
    s_max: float = 20.0,
    s_step: float = 0.05,
    tol: float = COUPLING_TOL,
) -> CriticalCouplings:
    """Scaled cross-Kerr strengths where B-C vanishes, E diverges, and D-E vanishes.

    ``g_star`` is the centre of the window where the oscillatory branch
    still covers n = 1e6; the window edges are found by bisection.
    """
    mode = LinearizationMode(mode)
    sp = params.scaled()
    grid = np.arange(0.0, s_max + 0.5 * s_step, s_step)

    g_c1 = None
    if _bc_exists(params, 0.0):
        for lo, hi in zip(grid, grid[1:]):
            if not _bc_exists(params, hi):
                g_c1 = float(bisect_predicate(lambda s: _bc_exists(params, s), lo, hi, tol))
                break

    ne = np.array([upper_endpoint(params.with_gck_scaled(s), mode) for s in grid])
    g_star = window = None
    i = int(np.argmax(np.where(np.isfinite(ne), ne, 1e300)))
    if ne[i] > 0:
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        if _unstable_far(params, grid[i], mode):
            peak = grid[i]
        else:
            res = optimize.minimize_scalar(
                lambda s: -math.log10(max(upper_endpoint(params.with_gck_scaled(s), mode), 1e-300)),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-7},
            )
            peak = float(res.x)
        if _unstable_far(params, peak, mode):
            ind = lambda s: _unstable_far(params, s, mode)  # noqa: E731
            while ind(lo) and lo > 0:
                lo = max(lo - s_step, 0.0)
            while ind(hi) and hi < s_max:
                hi = hi + s_step
            left = lo if ind(lo) else bisect_predicate(ind, lo, peak, tol)
            right = hi if ind(hi) else bisect_predicate(ind, peak, hi, tol)
            window = (float(left), float(right))
            g_star = 0.5 * (window[0] + window[1])

    g_c2 = None
    start = window[1] if window else 0.0
    exists = lambda s: _de_exists(params, s, mode)  # noqa: E731
    if exists(start):
        s_prev = start
        for s in grid[grid > start]:
            if not exists(s):
                g_c2 = float(bisect_predicate(exists, s_prev, s, tol))
                break
            s_prev = s

    return CriticalCouplings(
        g_c1=g_c1,
        g_star=g_star,
        g_c2=g_c2,
        g_star_window=window,
        eq11=8 / sp.kappa * math.sqrt(16 - sp.gamma**2 / 4),
        eq16=-2 * (sp.gamma + sp.kappa) ** 2 / (sp.gamma * sp.kappa * sp.delta0) if sp.delta0 else math.nan,
        eq16_alt=2 * 2.0 + 2 * sp.kappa / sp.gamma,
        g_star_c4=2.0,
        g_star_text=2.0 / params.g0 * params.omega_m**0,
        mode=mode,
    )


# -- reports ---------------------------------------------------------------


def _dev(analytic, numeric):
    if numeric is None or analytic is None or not math.isfinite(numeric) or numeric == 0:
        return math.nan
    return (analytic - numeric) / numeric


def comparison_report(params: SystemParams, mode: LinearizationMode = LinearizationMode.EXACT) -> list[dict]:
    """Numeric endpoints next to every closed-form variant, with relative deviations."""
    ep = find_endpoints(params, mode)
    rows: list[dict] = []

    def num(label):
        p = ep.get(label)
        return None if p is None else p.n

    for label in "BCDE":
        p = ep.get(label)
        rows.append(dict(quantity=f"n_{label}", source=Source.NUMERIC.value,
                         value=math.nan if p is None else p.n, numeric=math.nan if p is None else p.n,
                         deviation=0.0 if p is not None else math.nan,
                         note="absent" if p is None else ("unbounded" if label == "E" and ep.de_unbounded else "")))
    if ep.get("B") is None:
        rows.append(dict(quantity="branch_BC", source=Source.NUMERIC.value, value=math.nan,
                         numeric=math.nan, deviation=math.nan, note="no B-C branch"))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AnalyticAssumptionWarning)
        try:
            nb, nc = eq7_endpoints(params)
            for q, v in (("B", nb), ("C", nc)):
                rows.append(dict(quantity=f"n_{q}", source=Source.EQ7.value, value=v, numeric=num(q),
                                 deviation=_dev(v, num(q)), note="pure RP"))
        except NoBistability as exc:
            rows.append(dict(quantity="n_B", source=Source.EQ7.value, value=math.nan, numeric=num("B"),
                             deviation=math.nan, note=f"no B-C branch: {exc}"))
        nb, nc = eq10_endpoints(params)
        for q, v in (("B", nb), ("C", nc)):
            rows.append(dict(quantity=f"n_{q}", source=Source.EQ10.value, value=v, numeric=num(q),
                             deviation=_dev(v, num(q)), note="first order in gck"))
        nd, ne = eq5_endpoints(params)
        for q, v in (("D", nd), ("E", ne)):
            rows.append(dict(quantity=f"n_{q}", source=Source.EQ5.value, value=v, numeric=num(q),
                             deviation=_dev(v, num(q)), note="pure RP, first order in gamma/kappa"))
        r13 = eq13_endpoints(params)
    for q, v, ok, it in (("D", r13.n_d, r13.converged_d, r13.iterations_d),
                         ("E", r13.n_e, r13.converged_e, r13.iterations_e)):
        rows.append(dict(quantity=f"n_{q}", source=Source.EQ13.value, value=v, numeric=num(q),
                         deviation=_dev(v, num(q)),
                         note=f"fixed point {'converged' if ok else 'did not converge'} after {it} iterations"))
    rows.append(dict(quantity="Lambda_D", source=Source.EQ13.value, value=r13.lambda_d, numeric=math.nan,
                     deviation=math.nan, note="auxiliary, not used by the n_D expression"))
    rows.append(dict(quantity="Lambda_E", source=Source.EQ13.value, value=r13.lambda_e, numeric=math.nan,
                     deviation=math.nan, note="auxiliary"))
    c3, c4 = asymptotic_coeffs(params)
    rows.append(dict(quantity="c3_inf", source="Eq15", value=c3, numeric=math.nan, deviation=math.nan, note=""))
    rows.append(dict(quantity="c4_inf", source="Eq15", value=c4, numeric=math.nan, deviation=math.nan, note=""))
    if ep.detector_gap is not None:
        rows.append(dict(quantity="fold_vs_a0_gap", source=Source.NUMERIC.value, value=ep.detector_gap,
                         numeric=math.nan, deviation=math.nan, note="max |n_a0 - n_fold|"))
    return rows


def critical_report(cc: CriticalCouplings) -> list[dict]:
    def row(q, v, kind, ref=None, note=""):
        v = math.nan if v is None else v
        return dict(quantity=q, value=v, kind=kind,
                    deviation=_dev(v, ref) if ref is not None else math.nan, note=note)

    rows = [
        row("g_c1", cc.g_c1, "numeric", note="B-C branch vanishes" if cc.g_c1 else "B-C never vanishes in scan"),
        row("g_star", cc.g_star, "numeric", note="E diverges" if cc.g_star else "no divergence of E found"),
        row("g_c2", cc.g_c2, "numeric", note="D-E branch vanishes" if cc.g_c2 else "D-E does not vanish in scan"),
    ]
    if cc.g_star_window:
        rows.append(row("g_star_window_lo", cc.g_star_window[0], "numeric", note=f"n_E > {DIVERGENCE_N:g}"))
        rows.append(row("g_star_window_hi", cc.g_star_window[1], "numeric", note=f"n_E > {DIVERGENCE_N:g}"))
    rows += [
        row("g_c1", cc.eq11, "analytic Eq11", cc.g_c1, "units as printed"),
        row("g_star", cc.g_star_c4, "analytic Eq15 c4 zero", cc.g_star),
        row("g_star", cc.g_star_text, "analytic text 2 g0/omega_m", cc.g_star, "converted to scaled units"),
        row("g_c2", cc.eq16, "analytic Eq16", cc.g_c2),
        row("g_c2", cc.eq16_alt, "analytic Eq16 second form", cc.g_c2),
    ]
    return rows
