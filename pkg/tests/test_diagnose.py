import json
import math

import numpy as np
import pytest

from eulertop.diagnose import (
    InvariantReport, drift_report, field_identity_suite, finite_difference_divergence,
    independence_check, is_independent, orthogonality_residuals, sample_points,
)
from eulertop.field import (
    COINCIDENCE_PLANES, BUILTINS, DeformationSpec, builtin, closed_form_field, singular_distance,
    synthesize,
)
from eulertop.integrate import IntegratorConfig, Trajectory, integrate

EULER, EULER_CLOSED = builtin("euler3")
V3 = synthesize(EULER)


def constant_trajectory(x, n=5):
    X = np.tile(np.asarray(x, dtype=float), (n, 1))
    return Trajectory(np.arange(n, dtype=float), X, np.arange(n, dtype=float), np.zeros_like(X))


# -- drift -----------------------------------------------------------------------

def test_constant_trajectory_has_zero_drift():
    rep = drift_report(constant_trajectory((2.0, 0.0, 0.0)), EULER)
    assert rep.max_drift.tolist() == [0.0, 0.0]
    assert rep.initial.tolist() == [4.0, 4.0]
    assert rep.verdicts["drift"]


def test_rk4_drift_from_123_unit_interval():
    # unreachable: the orbit escapes at t = 0.50864...
    traj = integrate(V3, (1.0, 2.0, 3.0), IntegratorConfig(method="rk4", h=1e-3, t_span=(0, 1)), EULER)
    rep = drift_report(traj, EULER, drift_tol=1e-10)
    assert traj.completed
    assert rep.verdicts["drift"]


def test_rk4_drift_from_123_before_escape():
    traj = integrate(V3, (1.0, 2.0, 3.0), IntegratorConfig(method="rk4", h=1e-3, t_span=(0, 0.25)), EULER)
    rep = drift_report(traj, EULER, drift_tol=1e-10)
    assert rep.passed, rep.to_text()


def test_corrupted_sample_is_flagged():
    traj = integrate(V3, (1.0, 2.0, 3.0), IntegratorConfig(t_span=(0, 0.2)), EULER)
    traj.x[len(traj) // 2] += 1e-3
    rep = drift_report(traj, EULER)
    assert np.max(rep.max_drift) >= 1e-4
    assert not rep.verdicts["drift"] and not rep.passed


def test_unevaluable_sample_is_reported():
    spec, _ = builtin("cube_root_deform", 3, 1.0)
    traj = constant_trajectory((1.0, 2.0, 3.0))
    traj.x[2] = (0.0, 2.0, 3.0)
    rep = drift_report(traj, spec)
    assert rep.failed_samples == [2]
    assert not rep.verdicts["evaluable"]


def test_drift_never_decreases_when_extended():
    traj = integrate(V3, (1.0, 2.0, 3.0), IntegratorConfig(method="rk4", h=1e-2, t_span=(0, 0.3)), EULER)
    previous = np.zeros(2)
    for k in range(1, len(traj) + 1):
        part = Trajectory(traj.t[:k], traj.x[:k], traj.s[:k], traj.xdot[:k])
        d = drift_report(part, EULER).max_drift
        assert np.all(d >= previous)
        previous = d


def test_empty_trajectory():
    empty = Trajectory(np.empty(0), np.empty((0, 3)), np.empty(0), np.empty((0, 3)))
    with pytest.raises(ValueError):
        drift_report(empty, EULER)


# -- independence -------------------------------------------------------------------

def test_independence_euler3():
    s = independence_check(EULER, (1.0, 2.0, 3.0))
    assert s == pytest.approx(np.linalg.svd([[2, -4, 0], [2, 0, -6]], compute_uv=False)[-1], rel=1e-14)
    assert is_independent(EULER, (1.0, 2.0, 3.0))
    assert independence_check(EULER, (0.0, 0.0, 0.0)) == 0.0
    assert not is_independent(EULER, (0.0, 0.0, 0.0))


def test_independence_cube_root_against_fd_gradients():
    spec, _ = builtin("cube_root_deform", 3, 1.0)
    x = np.array([1.0, 2.0, 3.0])
    h = 1e-5
    G = np.empty((2, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        G[:, j] = (spec.invariants(x + e) - spec.invariants(x - e)) / (2 * h)
    # smallest singular value from the 2x2 Gram matrix in closed form
    A = G @ G.T
    tr, det = A[0, 0] + A[1, 1], A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    lam = tr / 2 - math.sqrt(tr * tr / 4 - det)
    assert abs(independence_check(spec, x) - math.sqrt(lam)) <= 1e-8


# -- identity suite ---------------------------------------------------------------------

def test_euler3_identities():
    pts = np.random.default_rng(0).uniform(-2, 2, (1000, 3))
    rep = field_identity_suite(V3, EULER, pts)
    assert rep.samples == 1000
    assert np.max(rep.orthogonality) <= 1e-12 and rep.divergence <= 1e-12
    assert rep.passed


def test_quartic_identities_near_coincidence_planes():
    spec, _ = builtin("quartic_deform", 3, 1.0)
    v = synthesize(spec)
    pts = sample_points(3, 1000, np.random.default_rng(1), guards=(COINCIDENCE_PLANES,), guard_radius=0.1)
    rep = field_identity_suite(v, spec, pts, ortho_tol=1e-9, div_tol=1e-9, scaled_divergence=True)
    assert np.max(rep.orthogonality_scaled) <= 1e-9
    assert rep.divergence_scaled <= 1e-9
    assert rep.passed


@pytest.mark.parametrize("name, n", [("euler3", 3), ("euler_nd", 4), ("euler_nd", 5),
                                     ("cube_root_deform", 3), ("cube_root_deform", 4),
                                     ("cube_root_deform", 5), ("quartic_deform", 3)])
def test_all_builtins_pass(name, n):
    spec, _ = builtin(name, n, 1.0)
    v = synthesize(spec)
    radius = 0.25 if name == "quartic_deform" else 0.1
    pts = sample_points(n, 1000, np.random.default_rng(n), guards=spec.guards, guard_radius=radius)
    rep = field_identity_suite(v, spec, pts)
    assert rep.passed, rep.to_text()


def test_sign_flip_is_caught():
    bad = closed_form_field(["-x2*x3", "x1*x3", "x1*x2"])
    pts = np.random.default_rng(2).uniform(-2, 2, (200, 3))
    rep = field_identity_suite(bad, EULER, pts)
    assert np.max(rep.orthogonality_scaled) > 1e-2
    assert not rep.verdicts["orthogonality"]


def test_orthogonality_residuals_shapes():
    raw, scaled = orthogonality_residuals(V3, EULER, (1.0, 2.0, 3.0))
    assert raw.shape == scaled.shape == (2,)
    assert np.all(scaled <= raw)


def test_evaluation_failures_are_skipped():
    spec, _ = builtin("cube_root_deform", 3, 1.0)
    v = synthesize(spec)
    rep = field_identity_suite(v, spec, [(1.0, 2.0, 3.0), (0.0, 1.0, 1.0)])
    assert rep.samples == 1 and rep.skipped == 1


def test_symbolic_divergence_matches_finite_differences():
    v = closed_form_field(["sin(x1)*x2", "exp(x2/3)*x3", "x3^3*x1"])
    x = np.array([0.7, -0.4, 1.1])
    exact = v.divergence(x)
    e1 = abs(finite_difference_divergence(v, x, 1e-4) - exact)
    e2 = abs(finite_difference_divergence(v, x, 5e-5) - exact)
    assert 3.5 <= e1 / e2 <= 4.5


def test_numeric_field_uses_finite_differences():
    spec = DeformationSpec.zero(6)
    v = synthesize(spec)
    pts = np.random.default_rng(3).uniform(0.5, 1.5, (50, 6))
    rep = field_identity_suite(v, spec, pts)
    assert rep.divergence_method.startswith("central-difference")
    assert rep.passed


# -- sampling and serialization -------------------------------------------------------------

def test_sample_points_respect_guards():
    pts = sample_points(3, 500, np.random.default_rng(0), guards=(COINCIDENCE_PLANES,), guard_radius=0.3)
    assert all(singular_distance((COINCIDENCE_PLANES,), p) > 0.3 for p in pts)
    again = sample_points(3, 500, np.random.default_rng(0), guards=(COINCIDENCE_PLANES,), guard_radius=0.3)
    assert np.array_equal(pts, again)


def test_report_serialization_and_merge():
    traj = integrate(V3, (1.0, 2.0, 3.0), IntegratorConfig(t_span=(0, 0.1)), EULER)
    merged = drift_report(traj, EULER).merge(
        field_identity_suite(V3, EULER, np.random.default_rng(0).uniform(-2, 2, (50, 3))))
    data = json.loads(merged.to_json())
    assert set(data["verdicts"]) == {"drift", "independence", "evaluable", "orthogonality", "divergence"}
    assert data["passed"] is True
    text = merged.to_text()
    assert text.splitlines()[0].split()[:2] == ["integral", "C_k"]
    assert text.endswith("PASS")
    assert "FAIL" in InvariantReport(verdicts={"x": False}).to_text()


def test_builtin_names():
    assert set(BUILTINS) == {"euler3", "euler_nd", "cube_root_deform", "quartic_deform"}
