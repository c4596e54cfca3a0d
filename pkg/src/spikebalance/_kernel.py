"""Compiled closed-loop trial simulation.

Every arithmetic expression here is written in the same order as the
object-level path (``neuron_step``, ``controller_step``, ``physics_step``),
so both produce identical floating-point trajectories. Keep them in sync.
"""
import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_TRACK = 1
STATUS_FALLEN = 2
STATUS_DIVERGED = 3

# recorded columns, matching trace.CHANNELS for two interneurons
N_REC = 21


@njit(cache=True)
def _logistic(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _sign(x):
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


@njit(cache=True)
def simulate_trial(w_s, w_i, w_m, a, b, c, d, v0, u0, windows, tau, bias, gain, f_max,
                   phys, rays, ray_width, theta0, omega0, n_steps, rec):
    """Run one trial. Returns ``(fitness, executed_steps, status)``.

    ``phys`` = (cart_mass, pole_mass, half_length, gravity, cart_friction,
    pole_friction, dt, half_track, network_dt). ``rec`` is a
    ``(n_steps, N_REC)`` buffer or a ``(0, N_REC)`` array to skip recording.
    """
    n = w_i.shape[0]
    n_s = w_s.shape[0]
    mc, mp, l, g, muc, mup, dt, half_track, ndt = (
        phys[0], phys[1], phys[2], phys[3], phys[4], phys[5], phys[6], phys[7], phys[8])
    total_mass = mc + mp
    record = rec.shape[0] > 0

    v = v0.copy()
    u = u0.copy()
    fired = np.zeros(n)
    new_fired = np.zeros(n)
    hmax = 100
    for i in range(n):
        if windows[i] > hmax:
            hmax = windows[i]
    hist = np.zeros((n, hmax))
    pos = 0
    counts = np.zeros(n, dtype=np.int64)
    rates = np.zeros(n)
    motors = np.zeros(2)
    sensors = np.zeros(n_s)

    x = 0.0
    xv = 0.0
    th = theta0
    om = omega0
    # Neumaier-compensated sum of cos(theta)
    acc = 0.0
    comp = 0.0
    status = STATUS_OK
    executed = 0

    for k in range(n_steps):
        for j in range(n_s):
            act = 1.0 - abs(th - rays[j]) / ray_width
            sensors[j] = act if act > 0.0 else 0.0

        for i in range(n):
            drive = 0.0
            for j in range(n_s):
                drive += w_s[j, i] * sensors[j]
            for j in range(n):
                drive += w_i[j, i] * fired[j]
            vv = v[i]
            uu = u[i]
            v_new = vv + ndt * (0.04 * vv * vv + 5.0 * vv + 140.0 - uu + drive)
            u_new = uu + ndt * (a[i] * (b[i] * vv - uu))
            if not (math.isfinite(v_new) and math.isfinite(u_new) and math.isfinite(drive)):
                return acc + comp, executed, STATUS_DIVERGED
            if v_new >= 30.0:
                v[i] = c[i]
                u[i] = u_new + d[i]
                new_fired[i] = 1.0
            else:
                v[i] = v_new
                u[i] = u_new
                new_fired[i] = 0.0

        for i in range(n):
            # drop the sample leaving the window, then admit the new one
            h = windows[i]
            old = hist[i, (pos - h) % hmax]
            if old != 0.0:
                counts[i] -= 1
            hist[i, pos] = new_fired[i]
            if new_fired[i] != 0.0:
                counts[i] += 1
            rates[i] = counts[i] / h
            fired[i] = new_fired[i]
        pos = (pos + 1) % hmax

        for m in range(2):
            drive = 0.0
            for j in range(n):
                drive += w_m[j, m] * rates[j]
            motors[m] = motors[m] + ndt / tau[m] * (drive - motors[m])
        force = f_max * (_logistic(gain[0] * (motors[0] + bias[0]))
                         - _logistic(gain[1] * (motors[1] + bias[1])))

        if record:
            rec[k, 0] = k
            rec[k, 1] = th
            rec[k, 2] = om
            rec[k, 3] = x
            rec[k, 4] = xv
            for j in range(7):
                rec[k, 5 + j] = sensors[j]
            rec[k, 12] = v[0]
            rec[k, 13] = v[1]
            rec[k, 14] = fired[0]
            rec[k, 15] = fired[1]
            rec[k, 16] = rates[0]
            rec[k, 17] = rates[1]
            rec[k, 18] = motors[0]
            rec[k, 19] = motors[1]
            rec[k, 20] = force

        st = math.sin(th)
        ct = math.cos(th)
        sv = _sign(xv)
        tmp = (-force - mp * l * om * om * st + muc * sv) / total_mass
        th_acc = (g * st + ct * tmp - mup * om / (mp * l)) / (
            l * (4.0 / 3.0 - mp * ct * ct / total_mass))
        x_acc = (force + mp * l * (om * om * st - th_acc * ct) - muc * sv) / total_mass
        x_next = x + dt * xv
        xv_next = xv + dt * x_acc
        th_next = th + dt * om
        om_next = om + dt * th_acc
        x, xv, th, om = x_next, xv_next, th_next, om_next
        executed += 1
        if not (math.isfinite(x) and math.isfinite(xv) and math.isfinite(th) and math.isfinite(om)):
            status = STATUS_DIVERGED
            break

        term = math.cos(th)
        t = acc + term
        if abs(acc) >= abs(term):
            comp += (acc - t) + term
        else:
            comp += (term - t) + acc
        acc = t

        if abs(x) > half_track:
            status = STATUS_TRACK
            break
        if abs(th) >= math.pi / 2:
            status = STATUS_FALLEN
            break

    return acc + comp, executed, status
