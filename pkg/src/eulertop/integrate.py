"""Time integration of (deformed) Euler-top fields.

Two steppers are provided: classical fixed-step RK4 and the Dormand-Prince
5(4) embedded pair with a PI step-size controller.  Either can be combined
with a projection back onto the level set of the deformed integrals after
every accepted step, and with a time reparametrization ``x' = f(x) V(x)``
whose clock ``s = int f dt`` is carried as an extra state component.

Runs never raise on trouble met along the way; they stop and record a
termination reason on the returned `Trajectory` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .field import DeformationSpec, VectorField, singular_distance

__all__ = [
    "IntegratorConfig", "Trajectory", "integrate", "integrate_reparametrized",
    "project_onto_invariants", "RankDeficiencyError", "ProjectionError",
    "COMPLETED", "SINGULARITY_GUARD", "STEP_FLOOR", "MAX_STEPS", "BLOW_UP",
    "REPARAMETRIZATION", "PROJECTION_FAILED",
]

COMPLETED = "completed"
SINGULARITY_GUARD = "singularity-guard"
STEP_FLOOR = "step-floor"
MAX_STEPS = "max-steps"
BLOW_UP = "blow-up"
REPARAMETRIZATION = "reparametrization-singular"
PROJECTION_FAILED = "projection-failed"

_METHODS = {"rk4": "rk4", "fixed-rk4": "rk4", "adaptive": "adaptive",
            "adaptive-embedded": "adaptive", "dopri5": "adaptive"}


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "adaptive"
    t_span: tuple[float, float] = (0.0, 1.0)
    h: float = 1e-3  # fixed step, or first trial step for the adaptive method
    atol: float = 1e-10
    rtol: float = 1e-10
    project: bool = False
    max_steps: int = 1_000_000
    guard_radius: float = 1e-6
    blowup_norm: float = 1e12
    t_eval: tuple[float, ...] = ()  # times every run must land on exactly
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 5.0

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "method", _METHODS[self.method])
        t0, t1 = (float(v) for v in self.t_span)
        object.__setattr__(self, "t_span", (t0, t1))
        if not t1 > t0:
            raise ValueError("t_span must satisfy t1 > t0")
        if not (self.h > 0 and self.atol > 0 and self.rtol > 0):
            raise ValueError("step size and tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        stops = sorted(float(t) for t in self.t_eval)
        if stops and (stops[0] < t0 or stops[-1] > t1):
            raise ValueError("t_eval must lie inside t_span")
        object.__setattr__(self, "t_eval", tuple(stops))

    def with_(self, **changes) -> "IntegratorConfig":
        return replace(self, **changes)


@dataclass
class Trajectory:
    """Accepted samples of one run.

    ``s`` is the reparametrization clock (equal to ``t`` for plain runs),
    ``xdot`` the time derivative at each sample, used for cubic Hermite
    interpolation.  ``invariants`` is present when a spec was supplied.
    """

    t: np.ndarray
    x: np.ndarray
    s: np.ndarray
    xdot: np.ndarray
    invariants: np.ndarray | None = None
    reason: str = COMPLETED
    message: str = ""
    rejected: int = 0

    @property
    def completed(self) -> bool:
        return self.reason == COMPLETED

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    def __len__(self):
        return len(self.t)

    def state_at(self, times: Sequence[float] | float) -> np.ndarray:
        """Cubic Hermite interpolation between recorded samples."""
        scalar = np.ndim(times) == 0
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(times < self.t[0]) or np.any(times > self.t[-1]):
            raise ValueError("interpolation time outside the recorded range")
        idx = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, len(self.t) - 2)
        t0, t1 = self.t[idx], self.t[idx + 1]
        h = (t1 - t0)[:, None]
        u = ((times - t0) / (t1 - t0))[:, None]
        y0, y1 = self.x[idx], self.x[idx + 1]
        d0, d1 = self.xdot[idx], self.xdot[idx + 1]
        h00 = 2 * u**3 - 3 * u**2 + 1
        h10 = u**3 - 2 * u**2 + u
        h01 = -2 * u**3 + 3 * u**2
        h11 = u**3 - u**2
        out = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
        return out[0] if scalar else out


# ---------------------------------------------------------------------------
# projection


class RankDeficiencyError(ArithmeticError):
    pass


class ProjectionError(ArithmeticError):
    pass


def project_onto_invariants(x: Sequence[float], spec: DeformationSpec, targets: Sequence[float],
                            tol: float = 1e-13, max_iter: int = 10,
                            rank_threshold: float = 1e-8) -> np.ndarray:
    """Minimum-norm Gauss-Newton correction onto ``I_k(x) = targets``.

    Raises `RankDeficiencyError` when the gradient matrix at `x` has
    smallest singular value below `rank_threshold`, and `ProjectionError`
    when the residual neither reaches `tol` nor settles at rounding level.
    """
    x = np.array(x, dtype=float)
    targets = np.asarray(targets, dtype=float)
    J = spec.gradients(x)
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= rank_threshold:
        raise RankDeficiencyError(
            f"integral gradients are dependent at {x.tolist()} (sigma_min = {sv[-1]:.3g})")
    for it in range(max_iter + 1):
        r = spec.invariants(x) - targets
        res = float(np.max(np.abs(r)))
        if res <= tol:
            return x
        if it == max_iter:
            break
        if it:
            J = spec.gradients(x)
        x = x - J.T @ np.linalg.solve(J @ J.T, r)
    # residual floor set by rounding in evaluating the integrals
    floor = 64 * np.finfo(float).eps * max(1.0, float(np.max(x * x)), float(np.max(np.abs(targets))))
    if res <= floor:
        return x
    raise ProjectionError(f"projection did not converge (residual {res:.3g})")


# ---------------------------------------------------------------------------
# steppers

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class _Stop(Exception):
    def __init__(self, reason: str, message: str):
        self.reason = reason
        self.message = message
        super().__init__(message)


def _rk4_step(rhs, y, k1, h):
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _dopri_step(rhs, y, k1, h):
    k = [k1]
    for i in range(1, 7):
        dy = sum((a * kj for a, kj in zip(_A[i], k) if a != 0.0), np.zeros_like(y))
        k.append(rhs(y + h * dy))
    y_new = y + h * sum(b * kj for b, kj in zip(_B5, k) if b != 0.0)
    err = h * sum(e * kj for e, kj in zip(_E, k) if e != 0.0)
    return y_new, err, k[6]


def _error_norm(e: np.ndarray, n_x: int, n_state: int) -> float:
    """RMS over the state; any extra components (the clock) are held to
    the same tolerance separately, so a trivial clock leaves steps alone."""
    en = float(np.sqrt(np.mean(e[:n_x] ** 2)))
    if n_state > n_x:
        en = max(en, float(np.max(np.abs(e[n_x:n_state]))))
    return en


def _initial_step(rhs, y0, f0, cfg: IntegratorConfig, n_err: int) -> float:
    scale = cfg.atol + cfg.rtol * np.abs(y0[:n_err])
    d0 = np.sqrt(np.mean((y0[:n_err] / scale) ** 2))
    d1 = np.sqrt(np.mean((f0[:n_err] / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, cfg.t_span[1] - cfg.t_span[0])
    f1 = rhs(y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0)[:n_err] / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, cfg.t_span[1] - cfg.t_span[0])


def _run(rhs: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, cfg: IntegratorConfig,
         n_state: int, check: Callable[[np.ndarray], None],
         post: Callable[[np.ndarray], np.ndarray] | None,
         n_x: int | None = None) -> tuple[list, list, list, str, str, int]:
    """Shared driver.  `rhs` may raise `_Stop`; `check` validates a
    candidate state (raising `_Stop`); `post` is the projection hook.
    The first `n_x` of the `n_state` error-controlled components are the
    coordinates."""
    n_x = n_state if n_x is None else n_x
    t0, t1 = cfg.t_span
    stops = [t for t in cfg.t_eval if t > t0] + [t1]
    stop_i = 0
    t = t0
    y = y0
    dy = rhs(y)
    ts, ys, dys = [t], [y.copy()], [dy.copy()]
    reason, message = COMPLETED, ""
    rejected = 0
    adaptive = cfg.method == "adaptive"
    h = cfg.h
    if adaptive:
        h = _initial_step(rhs, y, dy, cfg, n_x)
    err_prev = 1e-4
    steps = 0
    eps = np.finfo(float).eps
    try:
        while t < t1:
            if steps >= cfg.max_steps:
                raise _Stop(MAX_STEPS, f"max_steps={cfg.max_steps} reached at t={t:.17g}")
            while stops[stop_i] <= t:
                stop_i += 1
            target = stops[stop_i]
            h_try = h
            landing = False
            if t + h_try >= target - 1e-9 * h_try:
                h_try = target - t
                landing = True
            if h_try <= 16 * eps * max(1.0, abs(t)):
                raise _Stop(STEP_FLOOR, f"step size underflow at t={t:.17g}")
            if adaptive:
                y_new, err, dy_new = _dopri_step(rhs, y, dy, h_try)
                scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y[:n_state]), np.abs(y_new[:n_state]))
                en = _error_norm(err[:n_state] / scale, n_x, n_state)
                if not math.isfinite(en):
                    raise _Stop(BLOW_UP, f"non-finite error estimate at t={t:.17g}")
                if en > 1.0:
                    rejected += 1
                    h = h_try * max(cfg.min_factor, cfg.safety * en ** (-1 / 5))
                    continue
                # PI controller
                en_safe = max(en, 1e-10)
                factor = cfg.safety * en_safe ** (-0.7 / 5) * err_prev ** (0.4 / 5)
                factor = min(cfg.max_factor, max(cfg.min_factor, factor))
                err_prev = max(en, 1e-4)
                h_next = h_try * factor
                if landing:
                    h_next = max(h_next, h)  # do not let a short landing step shrink h
            else:
                y_new = _rk4_step(rhs, y, dy, h_try)
                dy_new = None
                h_next = cfg.h
            check(y_new)
            if post is not None:
                y_new = post(y_new)
                dy_new = None
            t = target if landing else t + h_try
            y = y_new
            dy = dy_new if dy_new is not None else rhs(y)
            ts.append(t)
            ys.append(y.copy())
            dys.append(dy.copy())
            steps += 1
            h = h_next
    except _Stop as stop:
        reason, message = stop.reason, stop.message
    return ts, ys, dys, reason, message, rejected


def _guarded_field(v: VectorField, cfg: IntegratorConfig):
    def fx(x):
        try:
            out = v(x)
        except ArithmeticError as exc:
            raise _Stop(SINGULARITY_GUARD, f"field evaluation failed at {list(x)}: {exc}") from None
        if not np.all(np.isfinite(out)):
            raise _Stop(BLOW_UP, f"non-finite field value at {list(x)}")
        return out
    return fx


def _make_check(v: VectorField, cfg: IntegratorConfig, n: int):
    def check(y):
        x = y[:n]
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > cfg.blowup_norm:
            raise _Stop(BLOW_UP, f"state exceeded {cfg.blowup_norm:g}")
        if v.guards and singular_distance(v.guards, x) < cfg.guard_radius:
            raise _Stop(SINGULARITY_GUARD,
                        f"state {x.tolist()} within {cfg.guard_radius:g} of a pole set ({', '.join(v.guards)})")
    return check


def _make_projection(spec: DeformationSpec, targets: np.ndarray, n: int):
    def post(y):
        x = y[:n]
        if np.max(np.abs(spec.invariants(x) - targets)) <= 1e-13:
            return y
        try:
            xp = project_onto_invariants(x, spec, targets)
        except ArithmeticError as exc:
            raise _Stop(PROJECTION_FAILED, str(exc)) from None
        out = y.copy()
        out[:n] = xp
        return out
    return post


def _start(v: VectorField, x0, cfg: IntegratorConfig, spec: DeformationSpec | None):
    x0 = np.array(x0, dtype=float)
    if x0.shape != (v.dimension,):
        raise ValueError(f"initial state must have length {v.dimension}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    if spec is not None and spec.dimension != v.dimension:
        raise ValueError("spec and field dimensions differ")
    if cfg.project and spec is None:
        raise ValueError("projection requires a DeformationSpec")
    if v.guards and singular_distance(v.guards, x0) < cfg.guard_radius:
        raise ValueError("initial state lies within the singularity-guard radius")
    try:
        v(x0)
    except ArithmeticError as exc:
        raise ValueError(f"field cannot be evaluated at the initial state: {exc}") from None
    return x0


def _finish(ts, ys, dys, reason, message, rejected, n, spec, s_col):
    Y = np.array(ys)
    D = np.array(dys)
    t = np.array(ts)
    s = Y[:, n] if s_col else t.copy()
    X = Y[:, :n]
    inv = None
    if spec is not None:
        rows = []
        for xi in X:
            try:
                rows.append(spec.invariants(xi))
            except ArithmeticError:
                rows.append(np.full(spec.dimension - 1, np.nan))
        inv = np.array(rows)
    return Trajectory(t, X, s, D[:, :n], inv, reason, message, rejected)


def integrate(v: VectorField, x0: Sequence[float], cfg: IntegratorConfig,
              spec: DeformationSpec | None = None, targets: Sequence[float] | None = None) -> Trajectory:
    """Integrate ``x' = V(x)`` over ``cfg.t_span``.

    With ``cfg.project`` every accepted state is projected back onto the
    level set ``I_k = targets`` (default: the values at `x0`).
    """
    x0 = _start(v, x0, cfg, spec)
    n = v.dimension
    post = None
    if cfg.project:
        tg = spec.invariants(x0) if targets is None else np.asarray(targets, dtype=float)
        post = _make_projection(spec, tg, n)
    out = _run(_guarded_field(v, cfg), x0, cfg, n, _make_check(v, cfg, n), post)
    return _finish(*out, n, spec, False)


def integrate_reparametrized(v: VectorField, f: ex.Node | str, x0: Sequence[float],
                             cfg: IntegratorConfig, spec: DeformationSpec | None = None,
                             targets: Sequence[float] | None = None) -> Trajectory:
    """Integrate ``x' = f(x) V(x)`` together with the clock ``s' = f(x)``.

    `f` must keep the sign it has at `x0` at every stage evaluation; if it
    reaches zero or changes sign the run stops with reason
    ``reparametrization-singular``.
    """
    x0 = _start(v, x0, cfg, spec)
    n = v.dimension
    if isinstance(f, str):
        f = ex.parse(f, n, v.bindings)
    f_fn = ex.compile_expressions([f], n, v.bindings)
    try:
        f0 = f_fn(x0)[0]
    except ArithmeticError as exc:
        raise ValueError(f"f cannot be evaluated at the initial state: {exc}") from None
    if f0 == 0.0 or not math.isfinite(f0):
        raise ValueError("f must be finite and nonzero at the initial state")
    sign = math.copysign(1.0, f0)
    field_fn = _guarded_field(v, cfg)

    def rhs(y):
        x = y[:n]
        try:
            fx = f_fn(x)[0]
        except ArithmeticError as exc:
            raise _Stop(SINGULARITY_GUARD, f"f evaluation failed: {exc}") from None
        if not fx * sign > 0:
            raise _Stop(REPARAMETRIZATION, f"f = {fx:.3g} lost its sign at {x.tolist()}")
        out = np.empty(n + 1)
        out[:n] = fx * field_fn(x)
        out[n] = fx
        return out

    y0 = np.append(x0, 0.0)
    post = None
    if cfg.project:
        tg = spec.invariants(x0) if targets is None else np.asarray(targets, dtype=float)
        post = _make_projection(spec, tg, n)
    out = _run(rhs, y0, cfg, n + 1, _make_check(v, cfg, n), post, n_x=n)
    return _finish(*out, n, spec, True)
