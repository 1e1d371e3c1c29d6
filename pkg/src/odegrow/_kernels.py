"""Compiled numeric kernels.

Everything here is plain float64 math decorated with numba.njit so the
per-iteration cost of calibration stays in the microsecond range. The public
modules (models, solver, calibrate) wrap these with validation and friendly
errors; nothing in here raises, kernels signal failure through boolean
return values and let callers decide what that means.

Kind dispatch is by integer so a single compiled integrator serves every
model. Parameter slices passed to the ODE kernels exclude v0 and v_inf,
which enter through the initial state and the output map; their gradients
are recovered from the initial-state sensitivities by the callers.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# ODE kind ids. State layout and kernel parameter layout per kind:
#   EXP : state (v,)    params (omega,)
#   B1D : state (v,)    params (v_inf, omega, lam)
#   B2D : state (v, u)  params (omega, lam, gamma)
#   N1D : state (y,)    params theta[10], one 1-3-1 tanh layer pair
#   N2D : state (y, u)  params theta[12], one 2-2-2 tanh layer pair
KIND_EXP = 0
KIND_B1D = 1
KIND_B2D = 2
KIND_N1D = 3
KIND_N2D = 4

# Below this |lam| the direct Box-Cox quotient loses too many digits to
# cancellation and a cubic series in lam takes over.
BOX_COX_SERIES_THRESHOLD = 1e-5
# The lam-derivative cancels one order earlier, so its series window is wider.
_DBOX_SERIES_THRESHOLD = 1e-4


@njit(cache=True)
def box_cox_val(x, lam):
    lx = math.log(x)
    if abs(lam) < BOX_COX_SERIES_THRESHOLD:
        return lx + lam * lx * lx / 2.0 + lam * lam * lx * lx * lx / 6.0
    return (math.pow(x, lam) - 1.0) / lam


@njit(cache=True)
def box_cox_dlam(x, lam):
    lx = math.log(x)
    if abs(lam) < _DBOX_SERIES_THRESHOLD:
        lx2 = lx * lx
        return lx2 / 2.0 + lam * lx2 * lx / 3.0 + lam * lam * lx2 * lx2 / 8.0
    xl = math.pow(x, lam)
    return (xl * (lam * lx - 1.0) + 1.0) / (lam * lam)


@njit(cache=True)
def rhs_eval(kind, y, p, out):
    """Time derivative of the state. False when outside the model domain."""
    if kind == KIND_EXP:
        out[0] = -p[0] * y[0]
    elif kind == KIND_B1D:
        v = y[0]
        if not v > 0.0 or not p[0] > 0.0:
            return False
        out[0] = p[1] * box_cox_val(p[0] / v, p[2]) * v
    elif kind == KIND_B2D:
        v = y[0]
        u = y[1]
        if not v > 0.0 or not u > 0.0:
            return False
        out[0] = p[0] * box_cox_val(u / v, p[1]) * v
        out[1] = p[2] * p[0] * u
    elif kind == KIND_N1D:
        acc = p[9]
        for i in range(3):
            acc += p[6 + i] * math.tanh(p[i] * y[0] + p[3 + i])
        out[0] = acc
    else:
        z0 = p[0] * y[0] + p[1] * y[1] + p[4]
        z1 = p[2] * y[0] + p[3] * y[1] + p[5]
        h0 = math.tanh(z0)
        h1 = math.tanh(z1)
        out[0] = p[6] * h0 + p[7] * h1 + p[10]
        out[1] = p[8] * h0 + p[9] * h1 + p[11]
    return True


@njit(cache=True)
def jac_eval(kind, y, p, A, B):
    """Jacobians of the RHS: A = df/dstate, B = df/dparams."""
    if kind == KIND_EXP:
        A[0, 0] = -p[0]
        B[0, 0] = -y[0]
    elif kind == KIND_B1D:
        v = y[0]
        if not v > 0.0 or not p[0] > 0.0:
            return False
        x = p[0] / v
        lam = p[2]
        bc = box_cox_val(x, lam)
        xl = lam * bc + 1.0  # x ** lam, reusing the series-corrected value
        A[0, 0] = p[1] * (bc - xl)
        B[0, 0] = p[1] * xl / x
        B[0, 1] = bc * v
        B[0, 2] = p[1] * v * box_cox_dlam(x, lam)
    elif kind == KIND_B2D:
        v = y[0]
        u = y[1]
        if not v > 0.0 or not u > 0.0:
            return False
        x = u / v
        omega = p[0]
        lam = p[1]
        gamma = p[2]
        bc = box_cox_val(x, lam)
        xl = lam * bc + 1.0
        A[0, 0] = omega * (bc - xl)
        A[0, 1] = omega * xl / x
        A[1, 0] = 0.0
        A[1, 1] = gamma * omega
        B[0, 0] = bc * v
        B[0, 1] = omega * v * box_cox_dlam(x, lam)
        B[0, 2] = 0.0
        B[1, 0] = gamma * u
        B[1, 1] = 0.0
        B[1, 2] = omega * u
    elif kind == KIND_N1D:
        acc = 0.0
        for i in range(3):
            h = math.tanh(p[i] * y[0] + p[3 + i])
            t = 1.0 - h * h
            acc += p[6 + i] * t * p[i]
            B[0, i] = p[6 + i] * t * y[0]
            B[0, 3 + i] = p[6 + i] * t
            B[0, 6 + i] = h
        A[0, 0] = acc
        B[0, 9] = 1.0
    else:
        z0 = p[0] * y[0] + p[1] * y[1] + p[4]
        z1 = p[2] * y[0] + p[3] * y[1] + p[5]
        h0 = math.tanh(z0)
        h1 = math.tanh(z1)
        t0 = 1.0 - h0 * h0
        t1 = 1.0 - h1 * h1
        A[0, 0] = p[6] * t0 * p[0] + p[7] * t1 * p[2]
        A[0, 1] = p[6] * t0 * p[1] + p[7] * t1 * p[3]
        A[1, 0] = p[8] * t0 * p[0] + p[9] * t1 * p[2]
        A[1, 1] = p[8] * t0 * p[1] + p[9] * t1 * p[3]
        for j in range(12):
            B[0, j] = 0.0
            B[1, j] = 0.0
        B[0, 0] = p[6] * t0 * y[0]
        B[0, 1] = p[6] * t0 * y[1]
        B[0, 2] = p[7] * t1 * y[0]
        B[0, 3] = p[7] * t1 * y[1]
        B[0, 4] = p[6] * t0
        B[0, 5] = p[7] * t1
        B[0, 6] = h0
        B[0, 7] = h1
        B[0, 10] = 1.0
        B[1, 0] = p[8] * t0 * y[0]
        B[1, 1] = p[8] * t0 * y[1]
        B[1, 2] = p[9] * t1 * y[0]
        B[1, 3] = p[9] * t1 * y[1]
        B[1, 4] = p[8] * t0
        B[1, 5] = p[9] * t1
        B[1, 8] = h0
        B[1, 9] = h1
        B[1, 11] = 1.0
    return True


@njit(cache=True)
def rk4_forward(kind, y0, p, grid, max_mag, store, stages, traj):
    """Classical RK4 over a fixed grid.

    traj receives the state at every grid node. When store is true, the four
    stage input states of each step are recorded for the backward sweep.
    Returns False as soon as a state leaves the model domain, stops being
    finite, or exceeds max_mag in any component.
    """
    dim = y0.shape[0]
    n = grid.shape[0] - 1
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    s = np.empty(dim)
    y = np.empty(dim)
    for j in range(dim):
        y[j] = y0[j]
        traj[0, j] = y0[j]
    for i in range(n):
        h = grid[i + 1] - grid[i]
        if store:
            for j in range(dim):
                stages[i, 0, j] = y[j]
        if not rhs_eval(kind, y, p, k1):
            return False
        for j in range(dim):
            s[j] = y[j] + 0.5 * h * k1[j]
        if store:
            for j in range(dim):
                stages[i, 1, j] = s[j]
        if not rhs_eval(kind, s, p, k2):
            return False
        for j in range(dim):
            s[j] = y[j] + 0.5 * h * k2[j]
        if store:
            for j in range(dim):
                stages[i, 2, j] = s[j]
        if not rhs_eval(kind, s, p, k3):
            return False
        for j in range(dim):
            s[j] = y[j] + h * k3[j]
        if store:
            for j in range(dim):
                stages[i, 3, j] = s[j]
        if not rhs_eval(kind, s, p, k4):
            return False
        ok = True
        for j in range(dim):
            y[j] = y[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            traj[i + 1, j] = y[j]
            if not math.isfinite(y[j]) or abs(y[j]) > max_mag:
                ok = False
        if not ok:
            return False
    return True


@njit(cache=True)
def rk4_backward(kind, p, grid, stages, out_idx, gp, gy0):
    """Reverse accumulation through the recorded RK4 stage sequence.

    Seeds one identity cotangent block per output time while sweeping the
    steps backward, so a single pass yields the exact derivatives of the
    discrete trajectory at every output node with respect to the kernel
    parameters (gp) and the initial state (gy0).
    """
    n_out = out_idx.shape[0]
    dim = gy0.shape[2]
    npar = gp.shape[2]
    n = grid.shape[0] - 1
    nr_max = n_out * dim
    R = np.zeros((nr_max, dim))
    P = np.zeros((nr_max, npar))
    kb1 = np.empty((nr_max, dim))
    kb2 = np.empty((nr_max, dim))
    kb3 = np.empty((nr_max, dim))
    kb4 = np.empty((nr_max, dim))
    A = np.empty((4, dim, dim))
    Bm = np.empty((4, dim, npar))
    st = np.empty(dim)
    nr = 0
    nxt = n_out - 1
    for i in range(n - 1, -1, -1):
        while nxt >= 0 and out_idx[nxt] == i + 1:
            for j in range(dim):
                for l in range(dim):
                    R[nr + j, l] = 1.0 if l == j else 0.0
                for l in range(npar):
                    P[nr + j, l] = 0.0
            nr += dim
            nxt -= 1
        if nr == 0:
            continue
        h = grid[i + 1] - grid[i]
        for q in range(4):
            for j in range(dim):
                st[j] = stages[i, q, j]
            jac_eval(kind, st, p, A[q], Bm[q])
        for r in range(nr):
            for j in range(dim):
                kb4[r, j] = (h / 6.0) * R[r, j]
        for r in range(nr):
            for j in range(dim):
                acc = 0.0
                for l in range(dim):
                    acc += kb4[r, l] * A[3, l, j]
                kb3[r, j] = (h / 3.0) * R[r, j] + h * acc
        for r in range(nr):
            for j in range(dim):
                acc = 0.0
                for l in range(dim):
                    acc += kb3[r, l] * A[2, l, j]
                kb2[r, j] = (h / 3.0) * R[r, j] + 0.5 * h * acc
        for r in range(nr):
            for j in range(dim):
                acc = 0.0
                for l in range(dim):
                    acc += kb2[r, l] * A[1, l, j]
                kb1[r, j] = (h / 6.0) * R[r, j] + 0.5 * h * acc
        for r in range(nr):
            for j in range(npar):
                acc = 0.0
                for l in range(dim):
                    acc += (
                        kb1[r, l] * Bm[0, l, j]
                        + kb2[r, l] * Bm[1, l, j]
                        + kb3[r, l] * Bm[2, l, j]
                        + kb4[r, l] * Bm[3, l, j]
                    )
                P[r, j] += acc
        for r in range(nr):
            for j in range(dim):
                acc = 0.0
                for l in range(dim):
                    acc += (
                        kb1[r, l] * A[0, l, j]
                        + kb2[r, l] * A[1, l, j]
                        + kb3[r, l] * A[2, l, j]
                        + kb4[r, l] * A[3, l, j]
                    )
                R[r, j] += acc
    while nxt >= 0 and out_idx[nxt] == 0:
        for j in range(dim):
            for l in range(dim):
                R[nr + j, l] = 1.0 if l == j else 0.0
            for l in range(npar):
                P[nr + j, l] = 0.0
        nr += dim
        nxt -= 1
    # cotangent blocks were activated newest-output-first; unpack them back
    # into ascending output order
    for b in range(n_out):
        k = n_out - 1 - b
        for j in range(dim):
            r = b * dim + j
            for l in range(npar):
                gp[k, j, l] = P[r, l]
            for l in range(dim):
                gy0[k, j, l] = R[r, l]
    return True


@njit(cache=True)
def exponential_batch_grad(times, v0, omega, out_v, out_j):
    """v(t) = v0 exp(-omega t) with derivatives in (v0, omega) columns."""
    for i in range(times.shape[0]):
        e = math.exp(-omega * times[i])
        v = v0 * e
        if not math.isfinite(v):
            return False
        out_v[i] = v
        out_j[i, 0] = e
        out_j[i, 1] = -times[i] * v
    return True


@njit(cache=True)
def bertalanffy_batch_grad(times, v0, vinf, omega, lam, out_v, out_j):
    """Closed-form one-dimensional trajectory with its parameter gradient.

    Gradient columns are (v0, v_inf, omega, lam). The lam branches follow the
    same expm1/log1p formulation as the plain solution so the value agrees
    with it to the last unit. Returns False on a blow-up (non-positive base
    of the lam != 0 branch) or on overflow.
    """
    L = math.log(v0 / vinf)
    for i in range(times.shape[0]):
        t = times[i]
        if t == 0.0:
            out_v[i] = v0
            out_j[i, 0] = 1.0
            out_j[i, 1] = 0.0
            out_j[i, 2] = 0.0
            out_j[i, 3] = 0.0
            continue
        E = math.exp(-omega * t)
        s = math.expm1(lam * L)
        g = s * E
        base = 1.0 + g
        if not base > 0.0 or not math.isfinite(base):
            return False
        if lam == 0.0:
            w = L * E
        else:
            w = math.log1p(g) / lam
        ew = math.exp(w)
        v = vinf * ew
        if not math.isfinite(v):
            return False
        one_s = 1.0 + s
        if abs(lam) < _DBOX_SERIES_THRESHOLD:
            sol = L * (1.0 + lam * L / 2.0 + lam * lam * L * L / 6.0)
            dw_dlam = 0.5 * L * L * E * (1.0 - E) + 2.0 * lam * (L * L * L) * (
                E / 6.0 - E * E / 2.0 + E * E * E / 3.0
            )
        else:
            sol = s / lam
            dw_dlam = (L * one_s * E / base - w) / lam
        out_v[i] = v
        out_j[i, 0] = v * one_s * E / (base * v0)
        out_j[i, 1] = ew * (1.0 - one_s * E / base)
        out_j[i, 2] = v * (-t * E * sol / base)
        out_j[i, 3] = v * dw_dlam
    return True


@njit(cache=True)
def bertalanffy_batch(times, v0, vinf, omega, lam, out_v):
    """Value-only variant of bertalanffy_batch_grad, same arithmetic."""
    L = math.log(v0 / vinf)
    for i in range(times.shape[0]):
        t = times[i]
        if t == 0.0:
            out_v[i] = v0
            continue
        E = math.exp(-omega * t)
        s = math.expm1(lam * L)
        g = s * E
        base = 1.0 + g
        if not base > 0.0 or not math.isfinite(base):
            return False
        if lam == 0.0:
            w = L * E
        else:
            w = math.log1p(g) / lam
        v = vinf * math.exp(w)
        if not math.isfinite(v):
            return False
        out_v[i] = v
    return True
