"""
An independent reference solution
=================================

The undeformed top reduces to a single quadrature in x1.  That gives a
reference solution that shares no code with the Runge-Kutta integrator,
and it also shows the finite-time escape of every moving orbit.
"""

import numpy as np

from eulertop import builtin, synthesize
from eulertop.integrate import IntegratorConfig, integrate
from eulertop.oracle import BlowUpError, blowup_time, reduce, reference_solution

spec, _ = builtin("euler3")
v = synthesize(spec)

x0 = (1.0, 2.0, 3.0)
red = reduce(x0)
print("integrals:", red.C1, red.C2)
print("escape time:", blowup_time(red))

# Compare with a tight adaptive run well before the escape.
times = np.linspace(0.05, 0.4, 8)
traj = integrate(v, x0, IntegratorConfig(t_span=(0.0, 0.4), atol=1e-13, rtol=1e-13, t_eval=tuple(times)))
numeric = traj.x[np.isin(traj.t, times)]
print("max difference:", np.max(np.abs(numeric - reference_solution(red, times))))

# Past the escape time there is no solution to compare with.
try:
    reference_solution(red, [0.6])
except BlowUpError as err:
    print(err)

# The integrator stops on its own when the state runs away.
traj = integrate(v, x0, IntegratorConfig(method="rk4", h=1e-3, t_span=(0.0, 1.0)))
print(f"rk4: {traj.reason} at t = {traj.t[-1]:.4f}")

# An orbit through a turning point: x2 changes sign while x1 bounces off sqrt(8).
red = reduce((3.0, -1.0, 2.0))
for t, x in zip([0.0, 0.2, 0.4, 0.6], reference_solution(red, [0.0, 0.2, 0.4, 0.6])):
    print(f"t = {t:.1f}  x = {x}")
