"""Numerical checks of what the construction guarantees.

* conservation of every deformed integral along a trajectory,
* orthogonality ``V . grad I_k = 0`` and zero divergence of the field,
* functional independence of the integrals (smallest singular value of the
  gradient matrix).

Results are gathered in an `InvariantReport` with pass/fail verdicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence

import numpy as np

from .field import DeformationSpec, VectorField, singular_distance
from .integrate import Trajectory

__all__ = [
    "InvariantReport", "drift_report", "independence_check", "is_independent",
    "field_identity_suite", "sample_points", "finite_difference_divergence",
    "orthogonality_residuals",
]

DEFAULT_DRIFT_TOL = 1e-8
DEFAULT_ORTHO_TOL = 1e-12
DEFAULT_DIV_TOL = 1e-10
DEFAULT_INDEPENDENCE = 1e-8


@dataclass
class InvariantReport:
    """Residuals and verdicts for one system.  Unset fields are None."""

    initial: np.ndarray | None = None
    max_drift: np.ndarray | None = None
    orthogonality: np.ndarray | None = None
    orthogonality_scaled: np.ndarray | None = None
    divergence: float | None = None
    divergence_scaled: float | None = None
    divergence_method: str | None = None
    sigma_min: float | None = None
    samples: int = 0
    skipped: int = 0
    failed_samples: list[int] = dc_field(default_factory=list)
    tolerances: dict[str, float] = dc_field(default_factory=dict)
    verdicts: dict[str, bool] = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def merge(self, other: "InvariantReport") -> "InvariantReport":
        """Combine a drift report and an identity report into one."""
        out = InvariantReport()
        for name in ("initial", "max_drift", "orthogonality", "orthogonality_scaled",
                     "divergence", "divergence_scaled", "divergence_method"):
            mine, theirs = getattr(self, name), getattr(other, name)
            setattr(out, name, mine if mine is not None else theirs)
        sig = [s for s in (self.sigma_min, other.sigma_min) if s is not None]
        out.sigma_min = min(sig) if sig else None
        out.samples = self.samples + other.samples
        out.skipped = self.skipped + other.skipped
        out.failed_samples = self.failed_samples + other.failed_samples
        out.tolerances = {**self.tolerances, **other.tolerances}
        out.verdicts = {**self.verdicts, **other.verdicts}
        return out

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return [float(a) for a in v]
            if isinstance(v, (np.floating, float)):
                return float(v)
            return v
        return {
            "initial": conv(self.initial),
            "max_drift": conv(self.max_drift),
            "orthogonality": conv(self.orthogonality),
            "orthogonality_scaled": conv(self.orthogonality_scaled),
            "divergence": conv(self.divergence),
            "divergence_scaled": conv(self.divergence_scaled),
            "divergence_method": self.divergence_method,
            "sigma_min": conv(self.sigma_min),
            "samples": self.samples,
            "skipped": self.skipped,
            "failed_samples": list(self.failed_samples),
            "tolerances": dict(self.tolerances),
            "verdicts": dict(self.verdicts),
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    def to_text(self) -> str:
        rows = []

        def fmt(v):
            return "-" if v is None else f"{v:.3e}"

        k = None
        for arr in (self.initial, self.max_drift, self.orthogonality):
            if arr is not None:
                k = len(arr)
                break
        for i in range(k or 0):
            cells = [f"I{i + 1}"]
            for arr in (self.initial, self.max_drift, self.orthogonality, self.orthogonality_scaled):
                cells.append(fmt(None if arr is None else float(arr[i])))
            rows.append(cells)
        header = ["integral", "C_k", "max drift", "|V.grad I|", "scaled"]
        widths = [max(len(h), *(len(r[j]) for r in rows)) if rows else len(h)
                  for j, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        lines.append(f"max |div V|: {fmt(self.divergence)}"
                     + (f" ({self.divergence_method})" if self.divergence_method else "")
                     + (f", scaled {fmt(self.divergence_scaled)}" if self.divergence_scaled is not None else ""))
        lines.append(f"min sigma:   {fmt(self.sigma_min)}")
        lines.append(f"samples: {self.samples}  skipped: {self.skipped}")
        for name, ok in self.verdicts.items():
            tol = self.tolerances.get(name)
            lines.append(f"{'PASS' if ok else 'FAIL'}  {name}" + (f" (tol {tol:.1e})" if tol is not None else ""))
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _sigma_min(M: np.ndarray) -> float:
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def independence_check(spec: DeformationSpec, x: Sequence[float]) -> float:
    """Smallest singular value of the (n-1) x n gradient matrix at `x`."""
    return _sigma_min(spec.gradients(x))


def is_independent(spec: DeformationSpec, x: Sequence[float],
                   threshold: float = DEFAULT_INDEPENDENCE) -> bool:
    return independence_check(spec, x) > threshold


def drift_report(traj: Trajectory, spec: DeformationSpec, drift_tol: float = DEFAULT_DRIFT_TOL,
                 independence_threshold: float = DEFAULT_INDEPENDENCE) -> InvariantReport:
    """Largest deviation of every integral from its value at the first sample.

    Samples where an integral cannot be evaluated are listed in
    ``failed_samples`` and make the ``evaluable`` verdict fail.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    values = []
    sig = math.inf
    failed = []
    for i, x in enumerate(traj.x):
        try:
            values.append(spec.invariants(x))
            sig = min(sig, independence_check(spec, x))
        except ArithmeticError:
            failed.append(i)
    if not values or failed[:1] == [0]:
        raise ValueError("integrals cannot be evaluated at the first sample")
    values = np.array(values)
    drift = np.max(np.abs(values - values[0]), axis=0)
    rep = InvariantReport(initial=values[0], max_drift=drift, sigma_min=sig,
                          samples=len(traj), failed_samples=failed)
    rep.tolerances = {"drift": drift_tol, "independence": independence_threshold}
    rep.verdicts = {
        "drift": bool(np.all(drift <= drift_tol)),
        "independence": bool(sig > independence_threshold),
        "evaluable": not failed,
    }
    return rep


def orthogonality_residuals(v: VectorField, spec: DeformationSpec, x: Sequence[float]
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``|V . grad I_k|`` and the same divided by ``|V| |grad I_k| + 1``."""
    V = v(x)
    G = spec.gradients(x)
    raw = np.abs(G @ V)
    scale = np.linalg.norm(V) * np.linalg.norm(G, axis=1) + 1.0
    return raw, raw / scale


def finite_difference_divergence(v: VectorField, x: Sequence[float], h: float = 1e-4) -> float:
    """Central-difference divergence, O(h^2)."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for i in range(v.dimension):
        e = np.zeros_like(x)
        e[i] = h
        total += (v(x + e)[i] - v(x - e)[i]) / (2 * h)
    return total


def field_identity_suite(v: VectorField, spec: DeformationSpec, samples: Iterable[Sequence[float]],
                         ortho_tol: float = DEFAULT_ORTHO_TOL, div_tol: float = DEFAULT_DIV_TOL,
                         independence_threshold: float = DEFAULT_INDEPENDENCE,
                         fd_step: float = 1e-4, scaled_divergence: bool = False) -> InvariantReport:
    """Orthogonality and divergence residuals of `v` over `samples`.

    Orthogonality passes when ``|V . grad I_k| <= ortho_tol (|V| |grad I_k| + 1)``.
    The divergence is symbolic for symbolic fields and a central difference
    otherwise; it passes when ``|div V| <= div_tol``, or, with
    `scaled_divergence`, when ``|div V| <= div_tol (sum_i |d_i V_i| + 1)``.
    Independence is judged by the smallest singular value over the samples.
    Points where evaluation fails are skipped and counted.
    """
    if v.dimension != spec.dimension:
        raise ValueError("field and spec dimensions differ")
    k = spec.dimension - 1
    ortho = np.zeros(k)
    ortho_scaled = np.zeros(k)
    div = div_scaled = 0.0
    sig = math.inf
    count = skipped = 0
    method = "symbolic" if v.symbolic else f"central-difference h={fd_step:g}"
    for x in samples:
        try:
            raw, scaled = orthogonality_residuals(v, spec, x)
            if v.symbolic:
                d, dscale = v.divergence_with_scale(x)
            else:
                d, dscale = finite_difference_divergence(v, x, fd_step), 0.0
            s = independence_check(spec, x)
        except ArithmeticError:
            skipped += 1
            continue
        if not (np.all(np.isfinite(raw)) and math.isfinite(d)):
            skipped += 1
            continue
        ortho = np.maximum(ortho, raw)
        ortho_scaled = np.maximum(ortho_scaled, scaled)
        div = max(div, abs(d))
        div_scaled = max(div_scaled, abs(d) / (dscale + 1.0))
        sig = min(sig, s)
        count += 1
    rep = InvariantReport(orthogonality=ortho, orthogonality_scaled=ortho_scaled,
                          divergence=div, divergence_method=method,
                          divergence_scaled=div_scaled if v.symbolic else None,
                          sigma_min=sig if count else None, samples=count, skipped=skipped)
    rep.tolerances = {"orthogonality": ortho_tol, "divergence": div_tol,
                      "independence": independence_threshold}
    rep.verdicts = {
        "orthogonality": bool(count and np.all(ortho_scaled <= ortho_tol)),
        "divergence": bool(count and (div_scaled if scaled_divergence and v.symbolic else div) <= div_tol),
        "independence": bool(count and sig > independence_threshold),
    }
    return rep


def sample_points(dimension: int, count: int, rng: np.random.Generator,
                  box: tuple[float, float] = (-2.0, 2.0), guards: Sequence[str] = (),
                  guard_radius: float = 0.1, max_tries: int = 1000) -> np.ndarray:
    """Uniform points in ``box^dimension`` rejected near the guarded pole sets."""
    lo, hi = box
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > max_tries * count:
            raise RuntimeError("rejection sampling failed; guard radius too large for the box")
        p = rng.uniform(lo, hi, dimension)
        if guards and singular_distance(guards, p) <= guard_radius:
            continue
        out.append(p)
    return np.array(out)
