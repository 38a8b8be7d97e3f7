"""Linear stability of steady states.

Two linearizations are available:

``EXACT``
    Jacobian of the mean-field flow in the basis (da, da*, db, db*).
    The cross-Kerr term couples the cavity to ``db`` and ``db*`` with
    slightly different amplitudes ``G_a = a (1 + s b*)`` and
    ``G_b = a (1 + s b)``; both are kept.
``PAPER``
    The symmetric four-mode matrix built from the closed-form effective
    coupling, detuning and mechanical frequency of the cross-Kerr
    literature formulas, used to reproduce published stability diagrams.

Matrix entries and margins are in units of omega_m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import (
    RESIDUAL_TOL,
    Convention,
    Scaled,
    SteadyState,
    SystemParams,
    _beta_s,
    _delta_eff_s,
    drive_for_occupation,
)
from .numerics import quartic_roots, quartic_roots_batch

MARGINAL_BAND = 1e-9
EIG_BAND = 1e-8
IMAG_TOL = 1e-10
GAMMA_FORM_TOL = 1e-9


class LinearizationMode(str, Enum):
    EXACT = "exact"
    PAPER = "paper"


class Klass(str, Enum):
    STABLE = "Stable"
    UNSTABLE_STATIC = "UnstableStatic"
    UNSTABLE_OSCILLATORY = "UnstableOscillatory"
    MARGINAL = "Marginal"


class StaleStateError(ValueError):
    pass


class StabilityMismatchError(RuntimeError):
    """Routh-Hurwitz and eigenvalue verdicts disagree outside the marginal band."""


@dataclass(frozen=True)
class EffectiveParams:
    G: complex
    delta: float
    omega_e: float
    G_a: complex | None = None

    @property
    def asymmetry(self) -> float:
        return 0.0 if self.G_a is None else abs(self.G_a - self.G)


@dataclass(frozen=True)
class RouthHurwitz:
    cond_a0: float
    cond_rh: float
    h1: float  # a3
    h2: float  # a3 a2 - a1
    gamma_form: float | None = None


@dataclass(frozen=True)
class LinearizedSystem:
    G: complex
    delta: float
    omega_e: float
    A: np.ndarray
    charpoly: tuple[float, float, float, float]
    mode: LinearizationMode
    G_a: complex | None = None


@dataclass(frozen=True)
class StabilityVerdict:
    klass: Klass
    a0_margin: float
    rh_margin: float
    max_re_lambda: float
    degenerate: bool = False
    eigenvalues: tuple[complex, ...] = ()


# -- batched builders ----------------------------------------------------


def _effective_arrays(sp: Scaled, a, b, mode: LinearizationMode):
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    n = np.abs(a) ** 2
    w = 1.0 + sp.s * n
    if mode is LinearizationMode.EXACT:
        delta = sp.delta0 - 2 * b.real - sp.s * np.abs(b) ** 2
        g_a = a * (1 + sp.s * np.conj(b))
        g_b = a * (1 + sp.s * b)
        return g_b, g_a, delta, w
    g = a * (1 + sp.s * n / w)
    delta = sp.delta0 + 2 * n * (1 + sp.s * n / w**2)
    return g, None, delta, w


def _sym_matrix(kappa, gamma, G, delta, w):
    G = np.asarray(G, dtype=complex)
    shape = np.broadcast(G, delta, w).shape
    A = np.zeros(shape + (4, 4), dtype=complex)
    Gc = np.conj(G)
    A[..., 0, 0] = 1j * delta - kappa / 2
    A[..., 0, 2] = 1j * G
    A[..., 0, 3] = 1j * G
    A[..., 1, 1] = -1j * delta - kappa / 2
    A[..., 1, 2] = -1j * Gc
    A[..., 1, 3] = -1j * Gc
    A[..., 2, 0] = 1j * Gc
    A[..., 2, 1] = 1j * G
    A[..., 2, 2] = -1j * w - gamma / 2
    A[..., 3, 0] = -1j * Gc
    A[..., 3, 1] = -1j * G
    A[..., 3, 3] = 1j * w - gamma / 2
    return A


def _jacobian_batch(sp: Scaled, a, b):
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    shape = np.broadcast(a, b).shape
    J = np.zeros(shape + (4, 4), dtype=complex)
    n = np.abs(a) ** 2
    w = 1.0 + sp.s * n
    delta = sp.delta0 - 2 * b.real - sp.s * np.abs(b) ** 2
    c = sp.force
    # da/dt = i[D0 - (b + b*) - s|b|^2] a - k/2 a + sqrt(k) A
    J[..., 0, 0] = 1j * delta - sp.kappa / 2
    J[..., 0, 2] = -1j * a * (1 + sp.s * np.conj(b))
    J[..., 0, 3] = -1j * a * (1 + sp.s * b)
    # db/dt = -i(1 + s|a|^2) b - c|a|^2 - g/2 b
    J[..., 2, 0] = -np.conj(a) * (1j * sp.s * b + c)
    J[..., 2, 1] = -a * (1j * sp.s * b + c)
    J[..., 2, 2] = -1j * w - sp.gamma / 2
    # conjugate rows
    J[..., 1, 0] = np.conj(J[..., 0, 1])
    J[..., 1, 1] = np.conj(J[..., 0, 0])
    J[..., 1, 2] = np.conj(J[..., 0, 3])
    J[..., 1, 3] = np.conj(J[..., 0, 2])
    J[..., 3, 0] = np.conj(J[..., 2, 1])
    J[..., 3, 1] = np.conj(J[..., 2, 0])
    J[..., 3, 2] = np.conj(J[..., 2, 3])
    J[..., 3, 3] = np.conj(J[..., 2, 2])
    return J


def _charpoly_batch(A: np.ndarray) -> np.ndarray:
    """Faddeev-LeVerrier; returns complex (..., 4) array (a3, a2, a1, a0)."""
    n = A.shape[-1]
    eye = np.broadcast_to(np.eye(n, dtype=complex), A.shape)
    M = eye.copy()
    coeffs = []
    c_prev = 1.0 + 0j
    for k in range(1, n + 1):
        if k > 1:
            M = A @ M + c_prev[..., None, None] * eye
        AM = A @ M
        c_prev = -np.trace(AM, axis1=-2, axis2=-1) / k
        coeffs.append(c_prev)
    return np.stack(coeffs, axis=-1)


def _root_scale(coeffs) -> np.ndarray:
    c = np.abs(np.asarray(coeffs, dtype=float))
    return np.maximum.reduce(
        [c[..., 0], c[..., 1] ** 0.5, c[..., 2] ** (1 / 3), c[..., 3] ** 0.25, np.full(c.shape[:-1], 1e-300)]
    )


def _margins(coeffs: np.ndarray):
    a3, a2, a1, a0 = (coeffs[..., i] for i in range(4))
    rh = a3 * a2 * a1 - (a1**2 + a3**2 * a0)
    return a0, rh


def _state_arrays(params: SystemParams, n):
    sp = params.scaled()
    n = np.asarray(n, dtype=float)
    amp = drive_for_occupation(params, n)
    b = _beta_s(sp, n)
    delta = _delta_eff_s(sp, n)
    a = math.sqrt(sp.kappa) * amp / (sp.kappa / 2 - 1j * delta)
    return sp, a, b


def coefficients_along(params: SystemParams, n, mode: LinearizationMode = LinearizationMode.EXACT):
    """Characteristic-polynomial coefficients for states at occupations ``n``.

    Vectorized counterpart of ``charpoly(linearize(...).A)`` used for
    scans; returns a real (..., 4) array.
    """
    sp, a, b = _state_arrays(params, n)
    if mode is LinearizationMode.EXACT:
        A = _jacobian_batch(sp, a, b)
    else:
        G, _, delta, w = _effective_arrays(sp, a, b, mode)
        A = _sym_matrix(sp.kappa, sp.gamma, G, delta, w)
    return _charpoly_batch(A).real


def margins_along(params: SystemParams, n, mode: LinearizationMode = LinearizationMode.EXACT):
    """(a0 margin, Routh-Hurwitz margin) for states at occupations ``n``."""
    return _margins(coefficients_along(params, n, mode))


# -- public operations ---------------------------------------------------


def effective_params(
    params: SystemParams, ss: SteadyState, mode: LinearizationMode = LinearizationMode.EXACT
) -> EffectiveParams:
    if ss.residual > RESIDUAL_TOL:
        raise StaleStateError(f"steady state residual {ss.residual:.3e} above tolerance")
    mode = LinearizationMode(mode)
    G, G_a, delta, w = _effective_arrays(params.scaled(), ss.alpha_scaled, ss.beta_scaled, mode)
    return EffectiveParams(
        G=complex(G),
        delta=float(delta),
        omega_e=float(w),
        G_a=None if G_a is None else complex(G_a),
    )


def build_matrix(params: SystemParams, eff: EffectiveParams) -> np.ndarray:
    """Symmetric dynamical matrix over (da, da*, db, db*)."""
    sp = params.scaled()
    return _sym_matrix(sp.kappa, sp.gamma, eff.G, eff.delta, eff.omega_e)


def jacobian(params: SystemParams, ss: SteadyState) -> np.ndarray:
    """Exact Jacobian of the mean-field flow at ``ss`` over (da, da*, db, db*).

    For ``gck = 0`` this equals ``S @ build_matrix(...) @ S`` with
    ``S = diag(1, 1, -1, -1)``.
    """
    return _jacobian_batch(params.scaled(), ss.alpha_scaled, ss.beta_scaled)


def charpoly(A: np.ndarray) -> tuple[float, float, float, float]:
    """Monic characteristic polynomial coefficients (a3, a2, a1, a0) of a 4x4 matrix."""
    c = _charpoly_batch(np.asarray(A, dtype=complex))
    rho = 4 * float(np.max(np.abs(A)))
    scale = np.array([rho, rho**2, rho**3, rho**4])
    if np.any(np.abs(c.imag) > IMAG_TOL * np.maximum(scale, 1e-300)):
        raise ValueError(f"characteristic polynomial is not real: {c}")
    return tuple(float(x) for x in c.real)


def gamma_coefficients(params: SystemParams, eff: EffectiveParams) -> tuple[float, float, float, float]:
    """Closed forms (gamma + kappa, Gamma1, Gamma2, Gamma3) for the symmetric matrix."""
    sp = params.scaled()
    k, g, d, w = sp.kappa, sp.gamma, eff.delta, eff.omega_e
    g2 = abs(eff.G) ** 2
    gamma1 = g * g / 4 + d * d + g * k + k * k / 4 + w * w
    gamma2 = g * g * k / 4 + g * d * d + g * k * k / 4 + k * w * w
    gamma3 = g * g * d * d / 4 + g * g * k * k / 16 + d * d * w * w + 4 * d * g2 * w + k * k * w * w / 4
    return g + k, gamma1, gamma2, gamma3


def routh_hurwitz(coeffs, gammas=None) -> RouthHurwitz:
    """Hurwitz determinants of a monic real quartic.

    ``cond_a0`` and ``cond_rh`` are the two conditions that can fail for
    this system; ``h1`` and ``h2`` are the remaining ones. If ``gammas``
    (from ``gamma_coefficients``) is given, the closed-form expression of
    the RH margin is evaluated and must match the coefficient form.
    """
    a3, a2, a1, a0 = (float(x) for x in coeffs)
    rh = a3 * a2 * a1 - (a1 * a1 + a3 * a3 * a0)
    gform = None
    if gammas is not None:
        s, g1, g2, g3 = gammas
        gform = ((s * g1 - g2) * g2) - s * s * g3
        scale = abs(a3 * a2 * a1) + a1 * a1 + abs(a3 * a3 * a0)
        if abs(gform - rh) > GAMMA_FORM_TOL * max(scale, 1e-300):
            raise AssertionError(f"closed-form RH margin {gform} != coefficient form {rh}")
    return RouthHurwitz(cond_a0=a0, cond_rh=rh, h1=a3, h2=a3 * a2 - a1, gamma_form=gform)


def linearize(
    params: SystemParams, ss: SteadyState, mode: LinearizationMode = LinearizationMode.EXACT
) -> LinearizedSystem:
    mode = LinearizationMode(mode)
    eff = effective_params(params, ss, mode)
    A = jacobian(params, ss) if mode is LinearizationMode.EXACT else build_matrix(params, eff)
    return LinearizedSystem(
        G=eff.G,
        delta=eff.delta,
        omega_e=eff.omega_e,
        A=A,
        charpoly=charpoly(A),
        mode=mode,
        G_a=eff.G_a,
    )


def _has_symmetric_shape(params: SystemParams, mode: LinearizationMode) -> bool:
    if mode is LinearizationMode.PAPER:
        return True
    return params.gck == 0 and params.convention is Convention.EQ14_CONSISTENT


def classify(
    params: SystemParams, ss: SteadyState, mode: LinearizationMode = LinearizationMode.EXACT
) -> StabilityVerdict:
    """Routh-Hurwitz verdict, cross-checked against the quartic's roots."""
    lin = linearize(params, ss, mode)
    gammas = None
    if _has_symmetric_shape(params, lin.mode):
        gammas = gamma_coefficients(params, effective_params(params, ss, lin.mode))
    rh = routh_hurwitz(lin.charpoly, gammas)
    eig = quartic_roots(*lin.charpoly)
    return _verdict(np.asarray(lin.charpoly), eig, ss.degenerate, ss.n)


def _verdict(coeffs: np.ndarray, eig, degenerate: bool, n: float) -> StabilityVerdict:
    a0, rh = (float(x) for x in _margins(coeffs))
    max_re = float(max(z.real for z in eig))
    rho = float(_root_scale(coeffs))
    if abs(a0) < MARGINAL_BAND * rho**4 or abs(rh) < MARGINAL_BAND * rho**6:
        klass = Klass.MARGINAL
    elif a0 < 0:
        klass = Klass.UNSTABLE_STATIC
    elif rh < 0:
        klass = Klass.UNSTABLE_OSCILLATORY
    else:
        klass = Klass.STABLE
    if klass is not Klass.MARGINAL and abs(max_re) > EIG_BAND * max(1.0, rho):
        if (klass is Klass.STABLE) != (max_re < 0):
            raise StabilityMismatchError(f"RH verdict {klass.value} but max Re(lambda) = {max_re:.3e} (n={n})")
    return StabilityVerdict(
        klass=klass,
        a0_margin=a0,
        rh_margin=rh,
        max_re_lambda=max_re,
        degenerate=degenerate,
        eigenvalues=tuple(complex(z) for z in eig),
    )


def classify_along(
    params: SystemParams, n, mode: LinearizationMode = LinearizationMode.EXACT
) -> list[StabilityVerdict]:
    """``classify`` for the states at many occupations, evaluated in one batch."""
    n = np.atleast_1d(np.asarray(n, dtype=float))
    coeffs = coefficients_along(params, n, LinearizationMode(mode))
    eig = quartic_roots_batch(coeffs)
    return [_verdict(c, e, False, float(x)) for c, e, x in zip(coeffs, eig, n)]


def compare_linearizations(params: SystemParams, ss: SteadyState) -> dict:
    """Effective parameters from both linearizations and their differences."""
    ex = effective_params(params, ss, LinearizationMode.EXACT)
    pa = effective_params(params, ss, LinearizationMode.PAPER)
    return {
        "exact": ex,
        "paper": pa,
        "d_G": abs(ex.G - pa.G),
        "d_delta": ex.delta - pa.delta,
        "d_omega_e": ex.omega_e - pa.omega_e,
        "asymmetry": ex.asymmetry,
    }
