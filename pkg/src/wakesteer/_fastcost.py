"""Compiled horizon cost used inside the MPC optimiser loop.

Mirrors ``MPCProblem.stage_powers`` (numpy path) term by term; the test suite
checks the two agree.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sigma(x, slope):
    return 0.5 * math.tanh(slope * x) + 0.5


@njit(cache=True)
def horizon_cost(params, current, past, rows, times, pair, turb, scalars, k_const):
    """Penalised horizon energy.

    Stage powers from step index ``k_const`` (0-based) onward are identical,
    because every ramp has finished and every delayed yaw has arrived; they
    are computed once and multiplied out.

    pair[0..3] = mask, lateral separation, linear sigma/D part, deflection shape
    (all ``[target, source]``); turb[0..4] = D, ct, power coefficient, rated
    power, cos exponent; scalars = t_ah, r_max, g_max, g_min, slope, gain,
    wind speed, dt.
    """
    t_ah, r_max, g_max, g_min, slope, gain, wind_speed, dt = (
        scalars[0], scalars[1], scalars[2], scalars[3], scalars[4], scalars[5],
        scalars[6], scalars[7])
    mask = pair[0]
    dn = pair[1]
    sigma_lin = pair[2]
    defl_shape = pair[3]
    D = turb[0]
    ct = turb[1]
    power_coef = turb[2]
    rated = turb[3]
    cos_exp = turb[4]
    K = times.shape[0]
    N = current.shape[0]
    P = past.shape[0]
    plan = np.empty((K, N))
    for i in range(N):
        o1 = params[i, 0]
        o2 = params[i, 1]
        hw = abs(o1 - 0.5)
        if hw < 1e-9:
            for k in range(K):
                plan[k, i] = current[i]
            continue
        ts = o2 * (1.0 - 2.0 * hw)
        amp = 2.0 * (o1 - 0.5) * r_max * t_ah
        for k in range(K):
            r = (times[k] / t_ah - ts) / (2.0 * hw)
            if r < 0.0:
                r = 0.0
            elif r > 1.0:
                r = 1.0
            plan[k, i] = current[i] + amp * r

    total = 0.0
    stage = 0.0
    for k in range(min(K, k_const + 1)):
        stage = 0.0
        for i in range(N):
            acc = 0.0
            for j in range(N):
                if mask[i, j] == 0.0:
                    continue
                row = rows[k, i, j]
                y = past[row, j] if row < P else plan[row - P, j]
                g = math.radians(y)
                c = math.cos(g)
                c2 = c * c
                ctj = ct[j] * c2
                root = math.sqrt(1.0 - ctj)
                beta = 0.5 * (1.0 + root) / root
                sd = sigma_lin[i, j] + 0.2 * math.sqrt(beta)
                arg = 1.0 - ctj / (8.0 * sd * sd)
                if arg < 0.0:
                    arg = 0.0
                cdef = 1.0 - math.sqrt(arg)
                centre = gain * 0.5 * ct[j] * math.sin(g) * c2 * defl_shape[i, j]
                rel = (dn[i, j] - centre) / (sd * D[j])
                d = cdef * math.exp(-0.5 * rel * rel)
                acc += d * d
            u = 1.0 - math.sqrt(acc)
            if u < 0.0:
                u = 0.0
            u *= wind_speed
            yi = plan[k, i]
            p = power_coef[i] * u * u * u * abs(math.cos(math.radians(yi))) ** cos_exp[i]
            if p > rated[i]:
                p = rated[i]
            stage += p * _sigma(g_max - yi, slope) * _sigma(yi - g_min, slope)
        total += stage
    if K > k_const + 1:
        total += (K - k_const - 1) * stage
    return dt * total
