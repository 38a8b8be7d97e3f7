"""Small numerical kernels shared by the rest of the package.

Polynomial root finding (Aberth iteration with Newton polishing), a
fixed-step RK4 integrator that works on arrays of any shape, and a
bracketed scalar root finder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

ROOT_TOL = 1e-10
REAL_TOL = 1e-8
BISECT_TOL = 1e-12
OVERFLOW_GUARD = 1e12


class RootFindingError(RuntimeError):
    pass


class BracketError(ValueError):
    """Raised when a bracket does not contain a sign change."""


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial, coefficients in ascending degree.

    Trailing (highest-degree) coefficients that are exactly zero are
    trimmed on construction, so ``degree`` is always well defined.
    """

    coeffs: tuple[float, ...]

    def __post_init__(self):
        c = [float(x) for x in self.coeffs]
        if not c:
            raise ValueError("empty coefficient list")
        if not all(math.isfinite(x) for x in c):
            raise ValueError("polynomial coefficients must be finite")
        while len(c) > 1 and c[-1] == 0.0:
            c.pop()
        if len(c) > 9:
            raise ValueError("degree above 8 is not supported")
        object.__setattr__(self, "coeffs", tuple(c))

    @classmethod
    def from_numpy(cls, p: np.polynomial.Polynomial) -> "Polynomial":
        return cls(tuple(p.coef))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x):
        return _horner(np.asarray(self.coeffs[::-1]), x)

    def derivative(self) -> "Polynomial":
        if self.degree == 0:
            return Polynomial((0.0,))
        return Polynomial(tuple(k * c for k, c in enumerate(self.coeffs) if k > 0))


@dataclass(frozen=True)
class RootSet:
    roots: tuple[complex, ...]
    residuals: tuple[float, ...]
    converged: bool = True


def _horner(desc: np.ndarray, z):
    """Evaluate polynomials with descending coefficients ``desc[..., k]`` at ``z``."""
    desc = np.asarray(desc)
    z = np.asarray(z, dtype=complex)
    lead = desc[..., 0]
    acc = np.zeros(np.broadcast_shapes(lead.shape + (1,) * (z.ndim - lead.ndim), z.shape), dtype=complex)
    for k in range(desc.shape[-1]):
        c = desc[..., k]
        c = c.reshape(c.shape + (1,) * (z.ndim - c.ndim))
        acc = acc * z + c
    return acc


def _horner_with_derivative(desc: np.ndarray, z: np.ndarray):
    # desc: (B, d+1), z: (B, d)
    p = np.broadcast_to(desc[:, :1], z.shape).astype(complex)
    dp = np.zeros_like(z)
    for k in range(1, desc.shape[1]):
        dp = dp * z + p
        p = p * z + desc[:, k : k + 1]
    return p, dp


def _relative_residual(desc: np.ndarray, z: np.ndarray) -> np.ndarray:
    desc = np.asarray(desc)
    deg = desc.shape[-1] - 1
    cmax = np.max(np.abs(desc), axis=-1)
    cmax = cmax.reshape(cmax.shape + (1,) * (np.ndim(z) - cmax.ndim))
    scale = cmax * np.maximum(1.0, np.abs(z)) ** deg
    return np.abs(_horner(desc, z)) / scale


def poly_roots(p: Polynomial, tol: float = ROOT_TOL, max_iter: int = 500) -> RootSet:
    """All complex roots of ``p`` with multiplicity.

    Aberth simultaneous iteration followed by Newton polishing. Exact
    zero roots (vanishing constant terms) are split off first so that
    they come back as exact zeros. If the iteration cap is hit the best
    iterate is returned with ``converged=False``.
    """
    if p.degree < 1:
        raise ValueError("polynomial of degree zero has no roots")
    c = list(p.coeffs)
    zeros = 0
    while c[0] == 0.0:
        c.pop(0)
        zeros += 1
    roots = np.zeros(0, dtype=complex)
    converged = True
    if len(c) > 1:
        r, conv = poly_roots_batch(np.asarray([c]), tol, max_iter)
        roots, converged = r[0], bool(conv[0])
    if zeros:
        roots = np.concatenate([np.zeros(zeros, dtype=complex), roots])
    full = np.asarray(p.coeffs[::-1], dtype=float)
    res = _relative_residual(full, roots)
    converged = converged and bool(np.all(res <= tol))
    order = np.lexsort((roots.imag, roots.real))
    return RootSet(
        roots=tuple(complex(z) for z in roots[order]),
        residuals=tuple(float(r) for r in res[order]),
        converged=converged,
    )


def poly_roots_batch(coeffs, tol: float = ROOT_TOL, max_iter: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Roots of many polynomials of equal degree at once.

    ``coeffs`` is (B, d+1) in ascending order with nonzero leading terms.
    Returns roots (B, d), unsorted, and a per-row convergence flag.
    """
    asc = np.asarray(coeffs, dtype=float)
    if asc.ndim != 2 or asc.shape[1] < 2:
        raise ValueError("expected a (B, d+1) coefficient array with d >= 1")
    if np.any(asc[:, -1] == 0) or not np.all(np.isfinite(asc)):
        raise ValueError("leading coefficients must be nonzero and all coefficients finite")
    desc = asc[:, ::-1] / asc[:, -1:]
    if desc.shape[1] == 2:
        return (-desc[:, 1:] + 0j), np.ones(len(desc), dtype=bool)
    z, conv = _aberth(desc, tol, max_iter)
    z = _newton_polish(desc, z)
    conv &= np.all(_relative_residual(desc, z) <= tol, axis=1)
    return z, conv


def _aberth(desc: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    b, deg = desc.shape[0], desc.shape[1] - 1
    # start on a circle at the geometric mean of the root moduli
    r0 = np.abs(desc[:, -1]) ** (1.0 / deg)
    bound = 1.0 + np.max(np.abs(desc[:, 1:]), axis=1)
    r0 = np.minimum(np.maximum(r0, 1e-3), bound)
    k = np.arange(deg)
    z = r0[:, None] * np.exp(1j * (2 * np.pi * k / deg + 0.4))[None, :]
    done = np.zeros(b, dtype=bool)
    eye = np.eye(deg, dtype=bool)
    eps = 4 * np.finfo(float).eps
    for _ in range(max_iter):
        live = ~done
        zl, dl = z[live], desc[live]
        pz, dpz = _horner_with_derivative(dl, zl)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dpz != 0, pz / dpz, 0.0)
            diff = zl[:, :, None] - zl[:, None, :]
            diff[:, eye] = 1.0
            inv = 1.0 / diff
            inv[:, eye] = 0.0
            w = ratio / (1.0 - ratio * inv.sum(axis=2))
        w = np.where(np.isfinite(w), w, 0.0)
        zl = zl - w
        z[live] = zl
        small = np.all(np.abs(w) <= eps * np.maximum(1.0, np.abs(zl)), axis=1)
        small |= np.all(_relative_residual(dl, zl) <= tol * 1e-3, axis=1)
        done[np.flatnonzero(live)[small]] = True
        if done.all():
            break
    return z, done


def _newton_polish(desc: np.ndarray, z: np.ndarray, steps: int = 3) -> np.ndarray:
    res = _relative_residual(desc, z)
    for _ in range(steps):
        pz, dpz = _horner_with_derivative(desc, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = np.where(dpz != 0, z - pz / dpz, z)
        cand = np.where(np.isfinite(cand), cand, z)
        cres = _relative_residual(desc, cand)
        better = cres < res
        z = np.where(better, cand, z)
        res = np.where(better, cres, res)
    return z


def real_nonneg_roots(p: Polynomial, tol: float = REAL_TOL) -> list[float]:
    """Real, nonnegative roots of ``p``, sorted ascending.

    A root is accepted when its imaginary part is within ``tol`` of its
    scale and its real part is not below ``-tol``; accepted values are
    clamped to zero and deduplicated within ``tol``.
    """
    rs = poly_roots(p)
    out: list[float] = []
    for z in rs.roots:
        scale = max(1.0, abs(z))
        if abs(z.imag) <= tol * scale and z.real >= -tol * scale:
            out.append(max(z.real, 0.0))
    out.sort()
    dedup: list[float] = []
    for x in out:
        if dedup and abs(x - dedup[-1]) <= tol * max(1.0, abs(x)):
            continue
        dedup.append(x)
    return dedup


def quartic_roots(a3: float, a2: float, a1: float, a0: float) -> tuple[complex, ...]:
    """Roots of the monic quartic ``x^4 + a3 x^3 + a2 x^2 + a1 x + a0``."""
    rs = poly_roots(Polynomial((a0, a1, a2, a3, 1.0)))
    if not rs.converged:
        raise RootFindingError(f"quartic root iteration did not converge: {rs}")
    return rs.roots


def quartic_roots_batch(coeffs) -> np.ndarray:
    """Roots of many monic quartics; ``coeffs`` is (B, 4) as (a3, a2, a1, a0)."""
    c = np.asarray(coeffs, dtype=float)
    asc = np.column_stack([c[:, 3], c[:, 2], c[:, 1], c[:, 0], np.ones(len(c))])
    roots, conv = poly_roots_batch(asc)
    if not conv.all():
        bad = np.flatnonzero(~conv)[:3]
        raise RootFindingError(f"quartic root iteration did not converge for rows {bad.tolist()}")
    return roots


@dataclass
class Integration:
    times: np.ndarray
    states: np.ndarray
    diverged: bool
    stopped: bool = False


def integrate_fixed_step(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_end: float,
    dt: float,
    stride: int = 1,
    guard: float = OVERFLOW_GUARD,
    stop: Callable[[float, np.ndarray], bool] | None = None,
) -> Integration:
    """Classical fourth-order Runge-Kutta with a constant step.

    The step is shrunk slightly so that a whole number of strides lands
    exactly on ``t_end``; every ``stride``-th state is kept, so samples
    are uniformly spaced. A stride longer than the run keeps only the
    endpoints. Integration
    is truncated (``diverged=True``) when the state norm exceeds
    ``guard`` times the initial norm, and ends early when ``stop``
    returns true.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    y = np.array(y0, dtype=complex if np.iscomplexobj(y0) else float)
    if not np.all(np.isfinite(f(0.0, y))):
        raise ValueError("vector field is not finite at the initial state")
    nsteps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    stride = max(1, min(int(stride), nsteps))
    nsteps = stride * int(math.ceil(nsteps / stride))
    h = t_end / nsteps
    limit = guard * max(float(np.linalg.norm(y)), 1.0)
    times = [0.0]
    states = [y.copy()]
    diverged = stopped = False
    t = 0.0
    for i in range(1, nsteps + 1):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + (h / 2) * k1)
        k3 = f(t + h / 2, y + (h / 2) * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = i * h
        norm = float(np.linalg.norm(y))
        if not math.isfinite(norm) or norm > limit:
            diverged = True
            break
        if stop is not None and stop(t, y):
            stopped = True
        if i % stride == 0 or stopped:
            times.append(t)
            states.append(y.copy())
        if stopped:
            break
    return Integration(np.asarray(times), np.asarray(states), diverged, stopped)


def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float | None = None) -> float:
    """Root of ``f`` on ``[lo, hi]`` to an absolute width of ``tol``.

    Raises BracketError when ``f(lo)`` and ``f(hi)`` share a sign.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if not (flo * fhi < 0):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={flo}, {fhi}")
    if tol is None:
        tol = BISECT_TOL * max(abs(lo), abs(hi), 1.0)
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


def bisect_predicate(pred: Callable[[float], bool], lo: float, hi: float, tol: float) -> float:
    """Boundary between ``pred(lo)`` and ``pred(hi)`` (which must differ)."""
    plo, phi = pred(lo), pred(hi)
    if plo == phi:
        raise BracketError(f"predicate does not change on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid) == plo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def merge_close(values: Sequence[float], tol: float) -> tuple[list[float], list[bool]]:
    """Merge sorted values closer than ``tol``; returns (values, merged flags)."""
    out: list[float] = []
    flags: list[bool] = []
    for x in values:
        if out and abs(x - out[-1]) < tol:
            out[-1] = 0.5 * (out[-1] + x)
            flags[-1] = True
        else:
            out.append(x)
            flags.append(False)
    return out, flags
