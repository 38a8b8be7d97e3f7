"""Time-domain integration of the noiseless mean-field equations.

Serves as an independent check of the linear classification: a steady
state is perturbed slightly and the perturbation is followed in time
with a fixed-step RK4 integrator. Internally everything runs in scaled
variables (amplitudes in units of omega_m/g0, time in units of
1/omega_m); the public functions take and return physical amplitudes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linstab import _jacobian_batch
from .model import DriveSpec, SteadyState, SystemParams
from .numerics import OVERFLOW_GUARD, integrate_fixed_step

REL_PERTURBATION = 1e-3
HORIZON_DAMPING_TIMES = 50.0
STEPS_PER_PERIOD = 200
MAX_DT_STEPS = 50
STABLE_FACTOR = 0.1
UNSTABLE_FACTOR = 10.0
LATE_FRACTION = 0.1
NEWTON_TOL = 1e-13


class DynVerdict(str, Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class Trajectory:
    """Sampled solution; ``states[:, 0]`` is alpha, ``states[:, 1]`` beta (physical)."""

    times: np.ndarray
    states: np.ndarray
    diverged: bool
    growth_ratio: float = math.nan
    perturbation: np.ndarray | None = None


@dataclass(frozen=True)
class Probe:
    verdict: DynVerdict
    growth_ratio: float
    late_max_ratio: float
    time: float
    direction: str


# -- flow ------------------------------------------------------------------


@dataclass(frozen=True)
class _Rows:
    """Per-row scaled parameters for batched integration."""

    kappa: np.ndarray
    gamma: np.ndarray
    delta0: np.ndarray
    s: np.ndarray
    force: np.ndarray
    drive: np.ndarray

    @classmethod
    def of(cls, items: list[tuple[SystemParams, float]]) -> "_Rows":
        sps = [p.scaled() for p, _ in items]
        return cls(
            np.array([sp.kappa for sp in sps]),
            np.array([sp.gamma for sp in sps]),
            np.array([sp.delta0 for sp in sps]),
            np.array([sp.s for sp in sps]),
            np.array([sp.force for sp in sps], dtype=complex),
            np.array([amp for _, amp in items]),
        )

    def rhs(self, t, y):
        a, b = y[:, 0], y[:, 1]
        na = a.real**2 + a.imag**2
        nb = b.real**2 + b.imag**2
        delta = self.delta0 - 2 * b.real - self.s * nb
        da = (1j * delta - self.kappa / 2) * a + np.sqrt(self.kappa) * self.drive
        db = -(1j * (1 + self.s * na) + self.gamma / 2) * b - self.force * na
        return np.stack([da, db], axis=1)


def _fastest_scale(sp, a: complex, b: complex) -> float:
    na = abs(a) ** 2
    delta = sp.delta0 - 2 * b.real - sp.s * abs(b) ** 2
    return max(1.0, abs(sp.delta0), sp.kappa, sp.gamma, abs(delta), 1 + sp.s * na, 2 * abs(a) * (1 + sp.s * abs(b)))


def default_dt(params: SystemParams, a: complex = 0j, b: complex = 0j) -> float:
    """A two-hundredth of the shortest period at the given physical state."""
    sp = params.scaled()
    scale = params.g0 / params.omega_m
    return 2 * math.pi / (STEPS_PER_PERIOD * _fastest_scale(sp, a * scale, b * scale)) / params.omega_m


def simulate(
    params: SystemParams,
    a0: complex,
    b0: complex,
    drive: DriveSpec,
    t_end: float,
    dt: float | None = None,
    reference: tuple[complex, complex] | None = None,
    stride: int = 1,
) -> Trajectory:
    """Integrate the mean-field equations from physical amplitudes (a0, b0).

    ``t_end`` and ``dt`` are in the time unit of ``params`` (1/omega_m
    when omega_m = 1). If ``reference`` (a physical fixed point) is
    given, the distance from it is recorded and ``growth_ratio`` is its
    final over initial value.
    """
    w = params.omega_m
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if dt is None:
        dt = default_dt(params, a0, b0)
    limit = 2 * math.pi / (MAX_DT_STEPS * max(w, abs(params.delta0), params.kappa))
    if not 0 < dt <= limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the stability limit {limit}")
    scale = params.g0 / w
    rows = _Rows.of([(params, drive.amplitude(params))])
    y0 = np.array([[complex(a0) * scale, complex(b0) * scale]])
    res = integrate_fixed_step(rows.rhs, y0, t_end * w, dt * w, stride=stride, guard=OVERFLOW_GUARD)
    states = res.states[:, 0, :] / scale
    traj = Trajectory(res.times / w, states, res.diverged)
    if reference is not None:
        ref = np.array([complex(reference[0]), complex(reference[1])]) * scale
        dist = np.linalg.norm(res.states[:, 0, :] - ref, axis=1)
        traj.perturbation = dist
        traj.growth_ratio = float(dist[-1] / dist[0]) if dist[0] > 0 else math.nan
    return traj


# -- fixed points and perturbation directions ---------------------------------


def _flow_residual(sp, a, b, amp):
    na = abs(a) ** 2
    delta = sp.delta0 - 2 * b.real - sp.s * abs(b) ** 2
    fa = (1j * delta - sp.kappa / 2) * a + math.sqrt(sp.kappa) * amp
    fb = -(1j * (1 + sp.s * na) + sp.gamma / 2) * b - sp.force * na
    return fa, fb


def fixed_point(params: SystemParams, ss: SteadyState, drive: DriveSpec, max_iter: int = 30) -> tuple[complex, complex]:
    """Newton-polish ``ss`` to a fixed point of the flow, in scaled amplitudes.

    Needed when the steady state was computed with the static mechanical
    response stripped of damping, which shifts it slightly off the flow's
    own equilibrium.
    """
    sp = params.scaled()
    amp = drive.amplitude(params)
    a, b = ss.alpha_scaled, ss.beta_scaled
    for _ in range(max_iter):
        fa, fb = _flow_residual(sp, a, b, amp)
        size = abs(fa) + abs(fb)
        if size <= NEWTON_TOL * max(1.0, abs(a) + abs(b)):
            break
        J = _jacobian_batch(sp, np.array([a]), np.array([b]))[0]
        F = np.array([fa, np.conj(fa), fb, np.conj(fb)])
        dx = np.linalg.solve(J, -F)
        a, b = a + dx[0], b + dx[2]
    return complex(a), complex(b)


def _directions(sp, a, b):
    """Physical perturbation directions, most unstable linear mode first."""
    J = _jacobian_batch(sp, np.array([a]), np.array([b]))[0]
    lam, vec = np.linalg.eig(J)
    v = vec[:, int(np.argmax(lam.real))]
    out = []
    for label, u in (("eigenvector", v), ("eigenvector*i", 1j * v)):
        d = np.array([u[0] + np.conj(u[1]), u[2] + np.conj(u[3])])
        if np.linalg.norm(d) > 1e-6:
            out.append((label, d / np.linalg.norm(d)))
            break
    out.append(("quadratures", np.array([1.0 + 1.0j, 1.0 + 1.0j]) / 2.0))
    return out


# -- verdicts --------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    params: SystemParams
    ss: SteadyState
    drive: DriveSpec


def _probe_batch(jobs: list[_Job], rel: float, horizon: float | None, dt: float | None) -> list[Probe]:
    prepared = []
    for job in jobs:
        sp = job.params.scaled()
        a, b = fixed_point(job.params, job.ss, job.drive)
        label, d = _directions(sp, a, b)[0]
        eps = rel * max(math.hypot(abs(a), abs(b)), 1.0)
        t_end = horizon * job.params.omega_m if horizon is not None else HORIZON_DAMPING_TIMES / sp.gamma
        step = dt * job.params.omega_m if dt is not None else 2 * math.pi / (STEPS_PER_PERIOD * _fastest_scale(sp, a, b))
        prepared.append((job, np.array([a, b]), d * eps, eps, t_end, step, label))
    rows = _Rows.of([(j.params, j.drive.amplitude(j.params)) for j, *_ in prepared])
    ref = np.array([p[1] for p in prepared])
    y0 = ref + np.array([p[2] for p in prepared])
    eps = np.array([p[3] for p in prepared])
    t_ends = np.array([p[4] for p in prepared])
    t_max = float(t_ends.max())
    step = min(p[5] for p in prepared)

    k = len(prepared)
    decided = np.zeros(k, dtype=bool)
    unstable = np.zeros(k, dtype=bool)
    decided_at = np.full(k, math.nan)
    late_max = np.zeros(k)
    last = np.full(k, math.nan)

    def watch(t, y):
        ratio = np.linalg.norm(y - ref, axis=1) / eps
        live = ~decided
        grew = live & (ratio > UNSTABLE_FACTOR)
        unstable[grew] = True
        decided[grew] = True
        decided_at[grew] = t
        late = live & ~grew & (t >= (1 - LATE_FRACTION) * t_ends)
        late_max[late] = np.maximum(late_max[late], ratio[late])
        ended = live & ~grew & (t >= t_ends * (1 - 1e-12))
        last[ended] = ratio[ended]
        decided[ended] = True
        decided_at[ended] = t
        return bool(decided.all())

    res = integrate_fixed_step(rows.rhs, y0, t_max, step, stride=10**9, guard=OVERFLOW_GUARD, stop=watch)
    out = []
    for i, (job, *_rest) in enumerate(prepared):
        label = prepared[i][6]
        if unstable[i]:
            v = DynVerdict.UNSTABLE
        elif decided[i] and late_max[i] < STABLE_FACTOR:
            v = DynVerdict.STABLE
        elif res.diverged and not decided[i]:
            v = DynVerdict.UNSTABLE
        else:
            v = DynVerdict.INCONCLUSIVE
        g = float(last[i]) if math.isfinite(last[i]) else (UNSTABLE_FACTOR if unstable[i] else math.nan)
        out.append(Probe(v, g, float(late_max[i]), float(decided_at[i]) / job.params.omega_m, label))
    return out


def probe(
    params: SystemParams,
    ss: SteadyState,
    drive: DriveSpec,
    rel_perturbation: float = REL_PERTURBATION,
    horizon: float | None = None,
    dt: float | None = None,
) -> Probe:
    """Perturb ``ss`` along its most unstable mode and watch the perturbation.

    Unstable as soon as the distance from the fixed point exceeds 10x its
    initial value; Stable if over the last tenth of the horizon (default
    50/gamma) it stays below 0.1x; Inconclusive otherwise.
    """
    return _probe_batch([_Job(params, ss, drive)], rel_perturbation, horizon, dt)[0]


def dynamic_verdict(
    params: SystemParams,
    ss: SteadyState,
    drive: DriveSpec,
    rel_perturbation: float = REL_PERTURBATION,
    horizon: float | None = None,
) -> DynVerdict:
    return probe(params, ss, drive, rel_perturbation, horizon).verdict


def _run_chunk(args):
    jobs, rel, horizon, dt = args
    return _probe_batch(jobs, rel, horizon, dt)


def dynamic_verdicts(
    items: list[tuple[SystemParams, SteadyState, DriveSpec]],
    rel_perturbation: float = REL_PERTURBATION,
    horizon: float | None = None,
    workers: int | None = None,
    chunk: int = 64,
) -> list[Probe]:
    """Probe many states at once; rows are integrated together in chunks.

    Chunks are evaluated in a process pool when ``workers > 1``. The
    output order always matches ``items``.
    """
    jobs = [_Job(p, s, d) for p, s, d in items]
    chunks = [(jobs[i : i + chunk], rel_perturbation, horizon, None) for i in range(0, len(jobs), chunk)]
    if workers and workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, chunks))
    else:
        parts = [_run_chunk(c) for c in chunks]
    return [p for part in parts for p in part]
