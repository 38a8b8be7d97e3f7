"""Parameters, scaling conventions and the steady-state solver.

Everything is computed internally in scaled variables: frequencies in
units of the mechanical frequency, occupation ``n = g0**2 |alpha|**2 /
omega_m**2``, cross-Kerr strength ``s = gck * omega_m / g0**2`` and drive
``A = g0 * alpha_in / omega_m**1.5``. In these variables the mean-field
equations do not depend on ``g0`` at all.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import NamedTuple

import numpy as np
from numpy.polynomial import Polynomial as NpPoly

from .numerics import REAL_TOL, Polynomial, merge_close, poly_roots_batch

RESIDUAL_TOL = 1e-9
DEGENERATE_TOL = 1e-6


class Convention(str, Enum):
    """Sign of the radiation-pressure force on the mechanics.

    ``EQ14_CONSISTENT`` drives the mechanics with ``-i g0 |a|^2``, the
    form needed for the usual bistability endpoints. ``AS_PRINTED`` uses
    ``-g0 |a|^2`` literally.
    """

    EQ14_CONSISTENT = "eq14"
    AS_PRINTED = "printed"


class Susceptibility(str, Enum):
    """Whether mechanical damping enters the static mechanical response."""

    GAMMA_NEGLECTED = "quintic"
    FULL = "full"


class SteadyStateError(RuntimeError):
    pass


class SteadyStateWarning(UserWarning):
    pass


class Scaled(NamedTuple):
    kappa: float
    gamma: float
    delta0: float
    s: float
    convention: Convention
    susceptibility: Susceptibility

    @property
    def gamma_static(self) -> float:
        return self.gamma if self.susceptibility is Susceptibility.FULL else 0.0

    @property
    def force(self) -> complex:
        # coefficient c in  db/dt = ... - c |a|^2
        return 1j if self.convention is Convention.EQ14_CONSISTENT else 1.0


@dataclass(frozen=True)
class SystemParams:
    kappa: float
    gamma: float
    g0: float
    gck: float
    delta0: float
    omega_m: float = 1.0
    convention: Convention = Convention.EQ14_CONSISTENT
    susceptibility: Susceptibility = Susceptibility.GAMMA_NEGLECTED

    def __post_init__(self):
        object.__setattr__(self, "convention", Convention(self.convention))
        object.__setattr__(self, "susceptibility", Susceptibility(self.susceptibility))
        for name in ("kappa", "gamma", "g0", "gck", "delta0", "omega_m"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        for name in ("kappa", "gamma", "g0", "omega_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.gck < 0:
            raise ValueError("gck must be nonnegative")

    @classmethod
    def from_scaled(
        cls,
        kappa: float,
        gamma: float,
        delta0: float,
        gck_scaled: float = 0.0,
        g0: float = 1e-5,
        omega_m: float = 1.0,
        **kw,
    ) -> "SystemParams":
        """Build from frequencies in units of omega_m and ``gck / g0**2``."""
        return cls(
            kappa=kappa * omega_m,
            gamma=gamma * omega_m,
            g0=g0,
            gck=gck_scaled * g0**2 / omega_m,
            delta0=delta0 * omega_m,
            omega_m=omega_m,
            **kw,
        )

    @classmethod
    def fig2(cls, gck_scaled: float = 0.0, **kw) -> "SystemParams":
        """Preset: Delta0 = -omega_m, g0 = 1e-5, kappa = 0.6, gamma = 0.12."""
        base = dict(kappa=0.6, gamma=0.12, delta0=-1.0, g0=1e-5)
        base.update(kw)
        return cls.from_scaled(gck_scaled=gck_scaled, **base)

    @property
    def gck_scaled(self) -> float:
        return self.gck * self.omega_m / self.g0**2

    def scaled(self) -> Scaled:
        w = self.omega_m
        return Scaled(
            self.kappa / w,
            self.gamma / w,
            self.delta0 / w,
            self.gck_scaled,
            self.convention,
            self.susceptibility,
        )

    def with_gck_scaled(self, s: float) -> "SystemParams":
        return replace(self, gck=s * self.g0**2 / self.omega_m)

    def replace(self, **kw) -> "SystemParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convention"] = self.convention.value
        d["susceptibility"] = self.susceptibility.value
        return d


@dataclass(frozen=True)
class DriveSpec:
    """Input-field amplitude, real by convention.

    ``scaled=True`` means ``alpha_in`` is given in units of omega_m/g0.
    """

    alpha_in: float
    scaled: bool = True

    def __post_init__(self):
        if not math.isfinite(self.alpha_in) or self.alpha_in < 0:
            raise ValueError("alpha_in must be finite and nonnegative")

    def amplitude(self, params: SystemParams) -> float:
        """Drive in scaled units."""
        if self.scaled:
            return self.alpha_in
        return self.alpha_in * params.g0 / params.omega_m**1.5


@dataclass(frozen=True)
class SteadyState:
    """One equilibrium of the mean-field equations.

    ``alpha`` and ``beta`` are the physical amplitudes; ``n`` is the
    scaled occupation used throughout the analysis.
    """

    alpha: complex
    beta: complex
    n_a: float
    n: float
    residual: float
    degenerate: bool = False
    g0: float = 1.0
    omega_m: float = 1.0

    @property
    def alpha_scaled(self) -> complex:
        return self.alpha * self.g0 / self.omega_m

    @property
    def beta_scaled(self) -> complex:
        return self.beta * self.g0 / self.omega_m


# -- scaled kernels (accept numpy arrays) ---------------------------------


def _beta_s(sp: Scaled, n):
    w = 1.0 + sp.s * n
    return -sp.force * n / (sp.gamma_static / 2 + 1j * w)


def _delta_eff_s(sp: Scaled, n):
    b = _beta_s(sp, n)
    return sp.delta0 - 2 * b.real - sp.s * np.abs(b) ** 2


def _drive_sq_parts(sp: Scaled) -> tuple[NpPoly, NpPoly]:
    """Polynomials (P, R) with ``kappa * A**2 = P(n) / R(n)`` along the curve.

    With ``d = gamma_s/2 + i w`` and ``Q = |d|**2``, the effective
    detuning is ``N(n) / Q(n)`` where ``N`` is quadratic; clearing ``Q``
    from ``n [(kappa/2)^2 + Delta^2]`` gives ``P / Q**2``.
    """
    n = NpPoly([0.0, 1.0])
    w = NpPoly([1.0, sp.s])
    g2 = sp.gamma_static / 2
    q = g2**2 + w * w
    # Re(c * conj(d)) for c = -force
    if sp.convention is Convention.EQ14_CONSISTENT:
        re_cd = -w  # c = -i
    else:
        re_cd = NpPoly([-g2])  # c = -1
    num = sp.delta0 * q - 2 * n * re_cd - sp.s * n * n
    p = n * ((sp.kappa / 2) ** 2 * q * q + num * num)
    return p, q * q


# -- public operations ---------------------------------------------------


def beta_of_occupation(params: SystemParams, n_a: float) -> complex:
    """Mechanical amplitude enforced by a cavity occupation ``|alpha|^2``.

    Honors the convention and susceptibility switches of ``params``.
    """
    if n_a < 0:
        raise ValueError("occupation must be nonnegative")
    n = params.g0**2 * n_a / params.omega_m**2
    return complex(_beta_s(params.scaled(), n)) * params.omega_m / params.g0


def effective_detuning(params: SystemParams, n_a: float) -> float:
    """Delta0 - g0 (beta + beta*) - gck |beta|^2, in the units of ``params``."""
    if n_a < 0:
        raise ValueError("occupation must be nonnegative")
    n = params.g0**2 * n_a / params.omega_m**2
    return float(_delta_eff_s(params.scaled(), n)) * params.omega_m


def selfconsistency_poly(params: SystemParams, drive: DriveSpec) -> Polynomial:
    """Polynomial in scaled occupation whose physical roots are steady states."""
    a = drive.amplitude(params)
    sp = params.scaled()
    p, r = _drive_sq_parts(sp)
    return Polynomial.from_numpy(p - sp.kappa * a * a * r)


def drive_for_occupation(params: SystemParams, n):
    """Scaled drive that puts a steady state at scaled occupation ``n``."""
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise ValueError("occupation must be nonnegative")
    sp = params.scaled()
    d = _delta_eff_s(sp, n_arr)
    out = np.sqrt(n_arr * ((sp.kappa / 2) ** 2 + d * d) / sp.kappa)
    return float(out) if out.ndim == 0 else out


def _build_state(params: SystemParams, n: float, amp: float, degenerate: bool) -> SteadyState:
    sp = params.scaled()
    b = complex(_beta_s(sp, n))
    delta = sp.delta0 - 2 * b.real - sp.s * abs(b) ** 2
    a = math.sqrt(sp.kappa) * amp / (sp.kappa / 2 - 1j * delta)
    residual = _residual(sp, a, b, amp)
    scale = params.omega_m / params.g0
    return SteadyState(
        alpha=a * scale,
        beta=b * scale,
        n_a=n * scale**2,
        n=n,
        residual=residual,
        degenerate=degenerate,
        g0=params.g0,
        omega_m=params.omega_m,
    )


def _residual(sp: Scaled, a: complex, b: complex, amp: float) -> float:
    """Relative residuals of both fixed-point equations, whichever is larger."""
    delta = sp.delta0 - 2 * b.real - sp.s * abs(b) ** 2
    lhs = a * (sp.kappa / 2 - 1j * delta)
    rhs = math.sqrt(sp.kappa) * amp
    r1 = abs(lhs - rhs) / max(abs(rhs), abs(lhs), 1e-300)
    b_check = complex(_beta_s(sp, abs(a) ** 2))
    r2 = abs(b - b_check) / max(abs(b), abs(b_check), 1e-300)
    if abs(b) == 0 and abs(b_check) == 0:
        r2 = 0.0
    if rhs == 0 and abs(lhs) == 0:
        r1 = 0.0
    return max(r1, r2)


def state_from_occupation(params: SystemParams, n: float) -> tuple[SteadyState, float]:
    """Steady state sitting at occupation ``n`` and the scaled drive producing it."""
    amp = drive_for_occupation(params, n)
    return _build_state(params, n, amp, False), amp


def _trimmed_length(coeffs: np.ndarray, n_max: float) -> int:
    """Number of leading terms that can matter anywhere on [0, n_max].

    For vanishing but nonzero cross-Kerr strength the top coefficients
    are far below rounding level; keeping them only creates spurious
    roots near 1/s.
    """
    weights = np.abs(coeffs) * n_max ** np.arange(len(coeffs))
    top = weights.max()
    k = len(coeffs)
    while k > 2 and weights[k - 1] < 1e-14 * top:
        k -= 1
    return k


def _physical_roots(roots: np.ndarray, n_max: float) -> tuple[list[float], list[bool]]:
    """Sorted physical occupations among complex ``roots`` with degeneracy flags.

    Real roots within ``REAL_TOL`` in [0, n_max] are kept; roots closer
    than ``DEGENERATE_TOL`` are merged and flagged. A nearly real
    conjugate pair (closer than the merge distance) is a double root
    split by rounding and enters once, flagged.
    """
    scale = np.maximum(1.0, np.abs(roots))
    is_real = (np.abs(roots.imag) <= REAL_TOL * scale) & (roots.real >= -REAL_TOL * scale)
    real = np.sort(np.maximum(roots.real[is_real], 0.0))
    real = real[real <= n_max * (1 + REAL_TOL)]
    dedup: list[float] = []
    for x in real:
        if not dedup or abs(x - dedup[-1]) > REAL_TOL * max(1.0, x):
            dedup.append(float(x))
    out, flags = merge_close(dedup, DEGENERATE_TOL)
    pair = (roots.imag > REAL_TOL * scale) & (roots.imag < DEGENERATE_TOL / 2)
    pair &= (roots.real >= 0) & (roots.real <= n_max)
    for x in roots.real[pair]:
        out.append(float(x))
        flags.append(True)
    order = sorted(range(len(out)), key=out.__getitem__)
    return [out[i] for i in order], [flags[i] for i in order]


def _finish(params: SystemParams, amp: float, roots: list[float], flags: list[bool]) -> list[SteadyState]:
    states = [_build_state(params, n, amp, f) for n, f in zip(roots, flags)]
    worst = max((s.residual for s in states), default=0.0)
    if worst > RESIDUAL_TOL:
        raise SteadyStateError(
            f"steady-state residual {worst:.3e} exceeds {RESIDUAL_TOL:.0e} "
            f"(drive={amp}, roots={roots})"
        )
    if len(states) not in (1, 3) and not any(flags):
        warnings.warn(
            f"{len(states)} physical steady states at drive {amp} (roots={roots})",
            SteadyStateWarning,
            stacklevel=3,
        )
    return states


def steady_states(params: SystemParams, drive: DriveSpec) -> list[SteadyState]:
    """All physical steady states for a drive, sorted by occupation.

    Roots closer than 1e-6 in scaled occupation are merged and flagged as
    degenerate (turning points of the bistability curve). This includes
    a double root that rounding has split into a nearly real conjugate
    pair.
    """
    return steady_states_batch(params, [drive])[0]


def steady_states_batch(params: SystemParams, drives) -> list[list[SteadyState]]:
    """``steady_states`` for many drives at once; root finding is vectorized."""
    sp = params.scaled()
    p, r = _drive_sq_parts(sp)
    pc = np.asarray(p.coef, dtype=float)
    rc = np.zeros_like(pc)
    rc[: len(r.coef)] = r.coef
    amps = [d.amplitude(params) for d in drives]
    out: list[list[SteadyState] | None] = [None] * len(amps)
    groups: dict[int, list[tuple[int, np.ndarray, float]]] = {}
    for i, amp in enumerate(amps):
        # n [(kappa/2)^2 + Delta^2] = kappa A^2 bounds every physical occupation
        n_max = 4 * amp * amp / sp.kappa
        if n_max == 0:
            out[i] = _finish(params, amp, [0.0], [False])
            continue
        c = pc - sp.kappa * amp * amp * rc
        k = _trimmed_length(c, n_max)
        groups.setdefault(k, []).append((i, c[:k], n_max))
    for rows in groups.values():
        roots, _ = poly_roots_batch(np.array([c for _, c, _ in rows]))
        for (i, _, n_max), z in zip(rows, roots):
            n, flags = _physical_roots(z, n_max)
            out[i] = _finish(params, amps[i], n, flags)
    return out
