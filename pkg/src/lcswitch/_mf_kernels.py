"""Compiled adaptive Runge-Kutta kernels for the mean-field flow.

The public :mod:`lcswitch.meanfield` API integrates with SciPy; phase-diagram
scans integrate thousands of initial conditions to long horizons, which is
only practical with a compiled stepper.  Both paths share the same drift and
the same Dormand-Prince (RK45) scheme and are cross-checked in the tests.

State layout: y = (Re alpha, Im alpha, Re beta, Im beta), tilde-scale.
"""

from __future__ import annotations

import numba
import numpy as np

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, 0] = 1 / 5
_A[2, :2] = (3 / 40, 9 / 40)
_A[3, :3] = (44 / 45, -56 / 15, 32 / 9)
_A[4, :4] = (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729)
_A[5, :5] = (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656)
_A[6, :6] = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4


@numba.njit(cache=True, inline="always")
def drift(y, out, delta_a, omega_b, g, f, kappa_a, kappa_b):
    x1, x2, x3, x4 = y[0], y[1], y[2], y[3]
    rot = delta_a + g * 2.0 * x3
    n_a = x1 * x1 + x2 * x2
    out[0] = rot * x2 - 0.5 * kappa_a * x1
    out[1] = -rot * x1 - 0.5 * kappa_a * x2 - f
    out[2] = omega_b * x4
    out[3] = -omega_b * x3 - kappa_b * x4 - g * n_a


@numba.njit(cache=True)
def _step_to(
    y, t, t_end, h_start, a, b5, e, rtol, atol,
    delta_a, omega_b, g, f, kappa_a, kappa_b,
):
    """Advance y in place from t to t_end.  Returns (h_last, ok)."""
    k = np.empty((7, 4))
    y_stage = np.empty(4)
    y_new = np.empty(4)
    err = np.empty(4)
    h = h_start
    h_min = 1e-13 * max(1.0, abs(t_end))
    drift(y, k[0], delta_a, omega_b, g, f, kappa_a, kappa_b)
    while t < t_end:
        if h > t_end - t:
            h = t_end - t
        # stages
        for s in range(1, 7):
            for j in range(4):
                acc = 0.0
                for q in range(s):
                    acc += a[s, q] * k[q, j]
                y_stage[j] = y[j] + h * acc
            drift(y_stage, k[s], delta_a, omega_b, g, f, kappa_a, kappa_b)
        for j in range(4):
            acc = 0.0
            for q in range(7):
                acc += b5[q] * k[q, j]
            y_new[j] = y[j] + h * acc
            acc_e = 0.0
            for q in range(7):
                acc_e += e[q] * k[q, j]
            err[j] = h * acc_e
        # scaled RMS error
        err_norm = 0.0
        for j in range(4):
            sc = atol + rtol * max(abs(y[j]), abs(y_new[j]))
            err_norm += (err[j] / sc) ** 2
        err_norm = np.sqrt(err_norm / 4.0)
        if err_norm <= 1.0:
            t += h
            for j in range(4):
                y[j] = y_new[j]
                k[0, j] = k[6, j]  # FSAL
            if not np.isfinite(y[0] + y[1] + y[2] + y[3]):
                return h, False
            if err_norm == 0.0:
                h *= 5.0
            else:
                h *= min(5.0, max(0.2, 0.9 * err_norm ** (-0.2)))
        else:
            h *= max(0.2, 0.9 * err_norm ** (-0.2))
            if h < h_min:
                return h, False  # step-size underflow
    return h, True


@numba.njit(cache=True)
def integrate_grid(y0, t_grid, rtol, atol, delta_a, omega_b, g, f, kappa_a, kappa_b):
    """Integrate one initial condition, sampling exactly at t_grid (t_grid[0] >= 0)."""
    n_out = t_grid.shape[0]
    out = np.empty((n_out, 4))
    y = y0.copy()
    t = 0.0
    h = 1e-4
    ok = True
    for i in range(n_out):
        if t_grid[i] > t:
            h, ok = _step_to(
                y, t, t_grid[i], h, _A, _B5, _E, rtol, atol,
                delta_a, omega_b, g, f, kappa_a, kappa_b,
            )
            t = t_grid[i]
            if not ok:
                for r in range(i, n_out):
                    out[r] = np.nan
                return out, False
        out[i] = y
    return out, ok


@numba.njit(cache=True, parallel=True)
def scan_ensemble(
    y0s, t_window_start, t_grid_rel, weights, rtol, atol,
    delta_a, omega_b, g, f, kappa_a, kappa_b,
):
    """Integrate each initial condition and sample a late-time window.

    Returns diagnostics (n, 4): peak-to-peak of Re alpha and Re beta and the
    window averages of |alpha|^2 and |beta|^2, plus a per-start success flag.
    The averages use the supplied normalized ``weights`` (a tapered window),
    so they do not depend on the phase at which an orbit enters the window.
    """
    n = y0s.shape[0]
    n_out = t_grid_rel.shape[0]
    diags = np.empty((n, 4))
    status = np.zeros(n, dtype=np.int64)
    for i in numba.prange(n):
        y = y0s[i].copy()
        h = 1e-4
        h, ok = _step_to(
            y, 0.0, t_window_start, h, _A, _B5, _E, rtol, atol,
            delta_a, omega_b, g, f, kappa_a, kappa_b,
        )
        if not ok:
            diags[i] = np.nan
            status[i] = 1
            continue
        t = t_window_start
        min_x1 = y[0]
        max_x1 = y[0]
        min_x3 = y[2]
        max_x3 = y[2]
        sum_na = weights[0] * (y[0] * y[0] + y[1] * y[1])
        sum_nb = weights[0] * (y[2] * y[2] + y[3] * y[3])
        for r in range(1, n_out):
            t_next = t_window_start + t_grid_rel[r]
            h, ok = _step_to(
                y, t, t_next, h, _A, _B5, _E, rtol, atol,
                delta_a, omega_b, g, f, kappa_a, kappa_b,
            )
            t = t_next
            if not ok:
                break
            if y[0] < min_x1:
                min_x1 = y[0]
            if y[0] > max_x1:
                max_x1 = y[0]
            if y[2] < min_x3:
                min_x3 = y[2]
            if y[2] > max_x3:
                max_x3 = y[2]
            sum_na += weights[r] * (y[0] * y[0] + y[1] * y[1])
            sum_nb += weights[r] * (y[2] * y[2] + y[3] * y[3])
        if not ok:
            diags[i] = np.nan
            status[i] = 1
            continue
        diags[i, 0] = max_x1 - min_x1
        diags[i, 1] = max_x3 - min_x3
        diags[i, 2] = sum_na
        diags[i, 3] = sum_nb
    return diags, status
