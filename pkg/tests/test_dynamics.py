import math

import numpy as np
import pytest

from ckstab.dynamics import (
    DynVerdict,
    _directions,
    default_dt,
    dynamic_verdict,
    dynamic_verdicts,
    fixed_point,
    probe,
    simulate,
)
from ckstab.linstab import Klass, classify
from ckstab.model import DriveSpec, SystemParams, state_from_occupation, steady_states

G0 = 1e-5


def phys(z):
    return z / G0


def test_zero_drive_decay_rates(fig2):
    off = DriveSpec(0.0)
    tr = simulate(fig2, 0j, 1.0 + 0j, off, 20.0)
    assert np.allclose(np.abs(tr.states[:, 1]), np.exp(-0.06 * tr.times), rtol=1e-7)
    assert np.all(tr.states[:, 0] == 0)
    tr = simulate(fig2, 1.0 + 0j, 0j, off, 20.0)
    assert np.allclose(np.abs(tr.states[:, 0]), np.exp(-0.3 * tr.times), rtol=1e-6)
    assert np.allclose(tr.times[1:] - tr.times[:-1], tr.times[1])


def test_fixed_point_stays_put(fig2_full):
    d = DriveSpec(0.3)
    ss = steady_states(fig2_full, d)[0]
    a, b = fixed_point(fig2_full, ss, d)
    assert abs(a - ss.alpha_scaled) < 1e-10 and abs(b - ss.beta_scaled) < 1e-10
    tr = simulate(fig2_full, phys(a), phys(b), d, 100 / 0.12, stride=100, reference=(phys(a), phys(b)))
    assert np.max(tr.perturbation) / math.hypot(abs(a), abs(b)) < 1e-6


def test_fixed_point_polishes_gamma_neglected_states(fig2):
    d = DriveSpec(0.3)
    for ss in steady_states(fig2, d):
        a, b = fixed_point(fig2, ss, d)
        tr = simulate(fig2, phys(a), phys(b), d, 1.0, reference=(phys(a), phys(b)))
        assert np.max(tr.perturbation) < 1e-12


def test_static_instability_relaxes_to_another_state(fig2_full):
    d = DriveSpec(0.28)
    lo, mid, hi = steady_states(fig2_full, d)
    assert classify(fig2_full, mid).klass is Klass.UNSTABLE_STATIC
    assert classify(fig2_full, hi).klass is Klass.STABLE
    a, b = fixed_point(fig2_full, mid, d)
    (_, u), *_ = _directions(fig2_full.scaled(), a, b)
    targets = [np.array([s.alpha_scaled, s.beta_scaled]) for s in (lo, hi)]
    ends = []
    for sign in (1, -1):
        eps = sign * 1e-3 * abs(a)
        tr = simulate(fig2_full, phys(a + eps * u[0]), phys(b + eps * u[1]), d, 600.0, stride=1000)
        final = tr.states[-1] * G0
        dist = [np.linalg.norm(final - t) for t in targets]
        assert min(dist) < 1e-3 * max(1.0, abs(a))
        ends.append(int(np.argmin(dist)))
    # the two sides of the saddle lead to different attractors
    assert sorted(ends) == [0, 1]


@pytest.mark.parametrize(
    "drive, n, expected",
    [(0.0, None, DynVerdict.STABLE), (None, 0.3, DynVerdict.UNSTABLE), (None, 1.0, DynVerdict.UNSTABLE), (None, 3.5, DynVerdict.STABLE)],
)
def test_verdict_examples(fig2_full, drive, n, expected):
    if n is None:
        d = DriveSpec(drive)
        ss = steady_states(fig2_full, d)[0]
    else:
        ss, amp = state_from_occupation(fig2_full, n)
        d = DriveSpec(amp)
    assert dynamic_verdict(fig2_full, ss, d) is expected


def test_batched_verdicts_match_single(fig2_full):
    items = []
    for n in (0.05, 0.3, 0.5, 1.0):
        ss, amp = state_from_occupation(fig2_full, n)
        items.append((fig2_full, ss, DriveSpec(amp)))
    batch = dynamic_verdicts(items)
    single = [probe(*it) for it in items]
    assert [p.verdict for p in batch] == [p.verdict for p in single]
    assert [p.verdict for p in batch] == [
        DynVerdict.STABLE,
        DynVerdict.UNSTABLE,
        DynVerdict.STABLE,
        DynVerdict.UNSTABLE,
    ]


def _perturbed_run(params, n, t_end, dt=None):
    ss, amp = state_from_occupation(params, n)
    d = DriveSpec(amp)
    a, b = fixed_point(params, ss, d)
    (_, u), *_ = _directions(params.scaled(), a, b)
    eps = 1e-3 * abs(a)
    return simulate(params, phys(a + eps * u[0]), phys(b + eps * u[1]), d, t_end, dt=dt, reference=(phys(a), phys(b)))


def test_step_halving_is_converged(fig2_full):
    for n in (0.05, 0.5, 3.5):
        dt = default_dt(fig2_full)
        g1 = _perturbed_run(fig2_full, n, 50.0, dt).growth_ratio
        g2 = _perturbed_run(fig2_full, n, 50.0, dt / 2).growth_ratio
        assert abs(g1 - g2) < 0.01 * g1


def test_decay_rate_matches_leading_eigenvalue(fig2_full):
    for n in (0.05, 0.5):
        ss, _ = state_from_occupation(fig2_full, n)
        rate = -classify(fig2_full, ss).max_re_lambda
        t_end = min(12.0 / rate, 150.0)
        tr = _perturbed_run(fig2_full, n, t_end)
        # envelope: maxima over windows of one mechanical period
        width = int(round(2 * math.pi / (tr.times[1] - tr.times[0])))
        k = len(tr.times) // width
        env = tr.perturbation[: k * width].reshape(k, width)
        t = tr.times[: k * width].reshape(k, width)[np.arange(k), np.argmax(env, axis=1)]
        keep = slice(k // 4, None)
        slope = np.polyfit(t[keep], np.log(env.max(axis=1)[keep]), 1)[0]
        assert -slope == pytest.approx(rate, rel=0.10)


def test_step_size_precondition(fig2):
    with pytest.raises(ValueError):
        simulate(fig2, 0j, 0j, DriveSpec(0.1), 1.0, dt=0.2)
    with pytest.raises(ValueError):
        simulate(fig2, 0j, 0j, DriveSpec(0.1), -1.0)


def test_uniform_time_samples(fig2):
    dt = default_dt(fig2)
    tr = simulate(fig2, 0j, 0j, DriveSpec(0.3), 10.0, dt=dt, stride=7)
    steps = np.diff(tr.times)
    assert np.allclose(steps, steps[0], rtol=1e-9)
    assert steps[0] <= 7 * dt and tr.times[-1] == pytest.approx(10.0)
    assert tr.states.shape == (len(tr.times), 2)
