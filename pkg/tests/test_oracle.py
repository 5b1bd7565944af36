import math

import numpy as np
import pytest

from eulertop.field import builtin, synthesize
from eulertop.integrate import BLOW_UP, IntegratorConfig, integrate
from eulertop.oracle import (
    BlowUpError, InadmissibleStateError, blowup_time, from_invariants, reduce, reference_solution,
)

V3 = synthesize(builtin("euler3")[0])


def adaptive(x0, times, tol=1e-13):
    times = tuple(float(t) for t in times if t > 0)
    traj = integrate(V3, x0, IntegratorConfig(t_span=(0.0, max(times)), atol=tol, rtol=tol, t_eval=times))
    assert traj.completed, traj.message
    return traj.x[np.isin(traj.t, times)]


def test_reduce_123():
    red = reduce((1.0, 2.0, 3.0))
    assert (red.C1, red.C2) == (-3.0, -8.0)
    assert red.turning_points == ()
    assert red.r(1.0) == 6.0  # equals x2 x3 at t = 0
    assert red.r(2.0) == math.sqrt(7 * 12)


def test_reduce_turning_points():
    red = reduce((3.0, 1.0, 2.0))
    assert (red.C1, red.C2) == (8.0, 5.0)
    assert red.turning_points == pytest.approx((-math.sqrt(8), math.sqrt(8)), rel=1e-15)


def test_inadmissible():
    with pytest.raises(InadmissibleStateError):
        from_invariants(8.0, 5.0, 2.0)
    with pytest.raises(InadmissibleStateError):
        reduce((1.0, math.inf, 0.0))
    with pytest.raises(InadmissibleStateError):
        reduce((3.0, 1.0, 2.0)).r(1.0)


def test_from_invariants_round_trip():
    red = from_invariants(-3.0, -8.0, 1.0, 1.0, 1.0)
    assert red.x0 == (1.0, 2.0, 3.0)


def test_initial_condition_returned_exactly():
    out = reference_solution(reduce((1.0, 2.0, 3.0)), [0.0])
    assert out.tolist() == [[1.0, 2.0, 3.0]]


def test_agrees_with_integrator_at_02():
    x = reference_solution(reduce((1.0, 2.0, 3.0)), [0.2])[0]
    assert np.max(np.abs(x - adaptive((1.0, 2.0, 3.0), [0.2])[0])) <= 1e-10


@pytest.mark.parametrize("x0", [(1.0, 2.0, 3.0), (3.0, -1.0, 2.0), (0.5, -0.2, 0.3)])
def test_product_equals_derivative(x0):
    red = reduce(x0)
    span = min(1.0, 0.5 * blowup_time(red))
    h = 1e-6
    for t in np.linspace(0.1, 0.9, 5) * span:
        x = reference_solution(red, [t])[0]
        speed = math.sqrt(red.radicand(x[0]))
        assert abs(abs(x[1] * x[2]) - speed) <= 1e-10 * max(1.0, speed)
        # the sign follows the actual direction of motion
        lo, hi = reference_solution(red, [t - h, t + h])[:, 0]
        assert math.copysign(1.0, x[1] * x[2]) == math.copysign(1.0, hi - lo)


def test_invariants_exact_by_construction():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x0 = rng.uniform(-2, 2, 3)
        red = reduce(x0)
        span = min(1.0, 0.5 * blowup_time(red))
        for x in reference_solution(red, np.linspace(0, span, 10)):
            scale = max(1.0, x[0] ** 2)
            assert abs(x[0] ** 2 - x[1] ** 2 - red.C1) <= 1e-14 * scale
            assert abs(x[0] ** 2 - x[2] ** 2 - red.C2) <= 1e-14 * scale


def test_through_turning_point():
    # x1 falls to sqrt(8), x2 passes through zero and changes sign, x1 climbs again
    x0 = (3.0, -1.0, 2.0)
    red = reduce(x0)
    times = np.linspace(0.05, 0.6, 12)
    got = reference_solution(red, times)
    assert got[0, 1] < 0 < got[-1, 1]
    assert np.min(got[:, 0]) >= math.sqrt(8) - 1e-12
    assert np.max(np.abs(got - adaptive(x0, times))) <= 1e-10


def test_double_root_is_approached_not_reached():
    # C1 = C2 = 8: x1 creeps towards sqrt(8) while x2, x3 decay together
    x0 = (3.0, 1.0, -1.0)
    red = reduce(x0)
    assert blowup_time(red) == math.inf
    times = np.linspace(0.5, 4.0, 8)
    got = reference_solution(red, times)
    assert np.all(np.diff(got[:, 0]) < 0) and np.all(got[:, 0] > math.sqrt(8))
    assert np.max(np.abs(got - adaptive(x0, times))) <= 1e-10


def test_blow_up():
    red = reduce((1.0, 2.0, 3.0))
    tb = blowup_time(red)
    assert tb == pytest.approx(0.5086446185, rel=1e-9)
    with pytest.raises(BlowUpError) as info:
        reference_solution(red, [0.6])
    assert info.value.t_blowup == tb
    traj = integrate(V3, (1.0, 2.0, 3.0), IntegratorConfig(t_span=(0, 1)))
    assert traj.reason == BLOW_UP and abs(traj.t[-1] - tb) < 1e-3


def test_stationary():
    red = reduce((2.0, 0.0, 0.0))
    assert red.stationary and blowup_time(red) == math.inf
    assert reference_solution(red, [5.0, -5.0]).tolist() == [[2.0, 0.0, 0.0]] * 2


def test_negative_times_by_symmetry():
    x0 = (0.5, -0.2, 0.3)
    red = reduce(x0)
    times = np.array([0.1, 0.4, 0.8])
    back = reference_solution(red, -times)
    # x(-t) = -y(t) where y starts at -x0
    forward_from_mirror = adaptive(tuple(-v for v in x0), times)
    assert np.max(np.abs(back + forward_from_mirror)) <= 1e-10


def test_random_states_against_integrator():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        x0 = tuple(rng.uniform(-2, 2, 3))
        red = reduce(x0)
        span = min(1.0, 0.5 * blowup_time(red))
        times = np.linspace(span / 10, span, 10)
        worst = max(worst, np.max(np.abs(reference_solution(red, times) - adaptive(x0, times))))
    assert worst <= 1e-10
