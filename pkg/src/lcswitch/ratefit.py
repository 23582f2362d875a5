"""Switching-rate scaling in the fluctuation parameter: single- and
bi-exponential weighted fits, the effective activation exponent, and the
two-state relaxation rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import FitConvergenceError, InvalidParameterError

SINGLE = "single"
BIEXP = "biexp"


@dataclass(frozen=True)
class ScalingFit:
    """Fitted rate-vs-fluctuation model k(x).

    ``single``: k = A exp(-S x).  ``biexp``: k = A_ph exp(-S_ph x)
    + A_amp exp(-S_amp x), ordered so S_ph < S_amp (the lower-action channel
    dominates the weak-fluctuation limit).  Standard errors come from the
    weighted-fit covariance; ``gradient_norm`` is the first-order optimality
    residual at the solution.
    """

    direction: str
    form: str
    params: dict
    stderr: dict
    gradient_norm: float
    residual_norm: float
    warnings: tuple[str, ...] = ()

    def rate(self, x: np.ndarray | float) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if self.form == SINGLE:
            out = self.params["amp"] * np.exp(-self.params["action"] * x)
        else:
            out = self.params["amp_ph"] * np.exp(-self.params["action_ph"] * x) + \
                self.params["amp_amp"] * np.exp(-self.params["action_amp"] * x)
        return out if out.shape else float(out)

    def log_slope(self, x: np.ndarray | float) -> np.ndarray | float:
        """-d/dx log k(x), evaluated analytically."""
        x = np.asarray(x, dtype=float)
        if self.form == SINGLE:
            out = np.full_like(x, self.params["action"], dtype=float)
        else:
            a1, s1 = self.params["amp_ph"], self.params["action_ph"]
            a2, s2 = self.params["amp_amp"], self.params["action_amp"]
            w1 = a1 * np.exp(-s1 * x)
            w2 = a2 * np.exp(-s2 * x)
            out = (s1 * w1 + s2 * w2) / (w1 + w2)
        return out if out.shape else float(out)


def _prepare(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise InvalidParameterError("points must be rows of (x, k[, sigma])")
    x = pts[:, 0]
    k = pts[:, 1]
    sigma = pts[:, 2] if pts.shape[1] == 3 else np.ones_like(k)
    if np.any(k <= 0):
        raise InvalidParameterError("rates must be positive")
    if np.any(sigma <= 0):
        raise InvalidParameterError("sigmas must be positive")
    return x, k, sigma


def _fit_single(x, k, sigma, direction) -> ScalingFit:
    # log-linear fit is exact for noise-free data and seeds the NLSQ polish
    slope, intercept = np.polyfit(x, np.log(k), 1)
    p0 = np.array([np.exp(intercept), -slope])

    def resid(p):
        return (p[0] * np.exp(-p[1] * x) - k) / sigma

    sol = least_squares(resid, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not sol.success and np.linalg.norm(sol.fun) > 1e-8:
        raise FitConvergenceError(f"single-exponential fit failed: {sol.message}")
    amp, action = sol.x
    stderr = _param_stderr(sol)
    return ScalingFit(
        direction=direction,
        form=SINGLE,
        params={"amp": float(amp), "action": float(action)},
        stderr={"amp": stderr[0], "action": stderr[1]},
        gradient_norm=float(np.max(np.abs(sol.grad))),
        residual_norm=float(np.linalg.norm(sol.fun)),
    )


def _param_stderr(sol) -> np.ndarray:
    m, n = sol.jac.shape
    dof = max(m - n, 1)
    s2 = 2.0 * sol.cost / dof
    try:
        cov = np.linalg.inv(sol.jac.T @ sol.jac) * s2
        return np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        return np.full(n, np.nan)


def _fit_biexp(x, k, sigma, direction) -> ScalingFit:
    logk = np.log(k)
    slope, intercept = np.polyfit(x, logk, 1)
    s_mid = max(-slope, 1e-3)

    def resid(p):
        la1, s1, la2, s2 = p
        # clip the exponent so hopeless starts stay finite for the optimizer
        t1 = np.exp(np.minimum(la1 - s1 * x, 700.0))
        t2 = np.exp(np.minimum(la2 - s2 * x, 700.0))
        return (t1 + t2 - k) / sigma

    # multi-start over action-scale splits around the average log-slope
    best = None
    for f1 in (0.25, 0.5, 0.8):
        for f2 in (1.25, 2.0, 4.0):
            for a_split in (0.2, 0.5, 0.8):
                s1, s2 = f1 * s_mid, f2 * s_mid
                k0 = np.exp(intercept)
                p0 = np.array(
                    [np.log(a_split * k0), s1, np.log((1 - a_split) * k0), s2]
                )
                sol = least_squares(
                    resid, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                    max_nfev=20000,
                )
                if best is None or sol.cost < best.cost:
                    best = sol
    if best is None or (not best.success and best.cost > 1e-12):
        raise FitConvergenceError(
            "bi-exponential fit failed from every start"
            + (f" (best residual {np.sqrt(2 * best.cost):.3g})" if best else "")
        )
    la1, s1, la2, s2 = best.x
    a1, a2 = float(np.exp(la1)), float(np.exp(la2))
    err = _param_stderr(best)
    # delta method: stderr of A = A * stderr of log A
    e1, es1, e2, es2 = a1 * err[0], err[1], a2 * err[2], err[3]
    if s1 > s2:  # order so the low-action channel comes first
        a1, s1, a2, s2 = a2, s2, a1, s1
        e1, es1, e2, es2 = e2, es2, e1, es1
    warnings: tuple[str, ...] = ()
    # nested-model degeneracy: one amplitude vanishes or the actions collapse
    scale = max(a1, a2)
    if min(a1, a2) < 1e-6 * scale or abs(s2 - s1) < 1e-6 * max(s1, s2, 1e-12):
        single = _fit_single(x, k, sigma, direction)
        return ScalingFit(
            direction=direction,
            form=SINGLE,
            params=single.params,
            stderr=single.stderr,
            gradient_norm=single.gradient_norm,
            residual_norm=single.residual_norm,
            warnings=("biexponential fit degenerate; fell back to single",),
        )
    return ScalingFit(
        direction=direction,
        form=BIEXP,
        params={
            "amp_ph": a1, "action_ph": float(s1),
            "amp_amp": a2, "action_amp": float(s2),
        },
        stderr={"amp_ph": e1, "action_ph": float(es1),
                "amp_amp": e2, "action_amp": float(es2)},
        gradient_norm=float(np.max(np.abs(best.grad))),
        residual_norm=float(np.linalg.norm(best.fun)),
        warnings=warnings,
    )


def fit_scaling(points, form: str, direction: str = "12") -> ScalingFit:
    """Weighted nonlinear least squares of the rate-scaling law.

    ``points`` is an iterable of (x, k) or (x, k, sigma_k) rows; weights are
    1/sigma^2.  Requires >= 3 points for the single form and >= 5 for the
    bi-exponential form.
    """
    x, k, sigma = _prepare(points)
    if form == SINGLE:
        if len(x) < 3:
            raise InvalidParameterError("single form needs >= 3 points")
        return _fit_single(x, k, sigma, direction)
    if form == BIEXP:
        if len(x) < 5:
            raise InvalidParameterError("biexp form needs >= 5 points")
        return _fit_biexp(x, k, sigma, direction)
    raise InvalidParameterError(f"unknown form {form!r}")


def effective_action(fit: ScalingFit, x: float | np.ndarray):
    """Instantaneous activation exponent -d log k / dx of a fitted law."""
    return fit.log_slope(x)


def effective_relaxation(k12: float, k21: float) -> float:
    """Slow relaxation rate of the two-state reduction: the rate sum."""
    if not (k12 > 0 and k21 > 0):
        raise InvalidParameterError("both rates must be positive")
    return k12 + k21


def stationary_occupations(k12: float, k21: float) -> tuple[float, float]:
    """Null vector of the 2x2 rate matrix, normalized: p1/p2 = k21/k12."""
    tot = k12 + k21
    return k21 / tot, k12 / tot
