"""Event loop of the simulator.

This file is importable as plain Python and is also compiled by Cython
(pure-Python mode) into ``gpuiso._simcore_c``. Both builds run the same
source, so they produce identical results; ``gpuiso.sim`` picks the
compiled one when it is available.

Inputs are flat, per-process arrays prepared by ``gpuiso.sim``; nothing in
here knows about dataclasses or files.
"""

import math
from array import array

try:
    import cython
except ImportError:  # pragma: no cover - Cython absent at runtime
    from . import _cyshim as cython

STANDALONE = 0
MPS = 1
MIG = 2
GC = 3

INF = math.inf


@cython.cfunc
@cython.inline
def _roofline(comp: cython.double, mem: cython.double, sat: cython.double,
              sms: cython.double, fr: cython.double, bw: cython.double) -> cython.double:
    c: cython.double
    m: cython.double
    if sms > sat:
        sms = sat
    c = comp / (sms * fr)
    m = mem / bw
    return c if c >= m else m


@cython.ccall
def simulate(regime: cython.int, total_sms: cython.double,
             ims: cython.double[:], n_issue: cython.longlong[:],
             jitter: cython.double[:], jit_off: cython.longlong[:],
             part_sms: cython.double[:], part_bw: cython.double[:],
             comp: cython.double[:], mem: cython.double[:],
             sat: cython.double[:], switch: cython.double[:],
             eps_mig: cython.double, eps_mps: cython.double,
             f_max: cython.double, f_min: cython.double, f_base: cython.double,
             idle_w: cython.double, per_sm_w: cython.double, p_exp: cython.double,
             cap_w: cython.double, throttle_factor: cython.double,
             need_above: cython.int, need_below: cython.int,
             tel_dt: cython.double, t_amb: cython.double, k_th: cython.double,
             tau: cython.double, stop_time: cython.double, met_tol: cython.double,
             record_events: cython.bint):
    n: cython.Py_ssize_t = len(ims)
    p: cython.Py_ssize_t
    q: cython.Py_ssize_t
    k: cython.longlong
    t: cython.double = 0.0
    t_next: cython.double
    x: cython.double
    d: cython.double
    s: cython.double
    bw: cython.double
    infl: cython.double
    deadline: cython.double
    freq: cython.double = f_base
    fr: cython.double = f_base / f_max
    fr_pow: cython.double = fr ** p_exp
    cap_hit: cython.double = cap_w * (1.0 - 1e-9)
    acc: cython.double = 0.0
    busy: cython.double = 0.0
    power: cython.double
    temp: cython.double = t_amb
    tick: cython.longlong = 0
    t_tick: cython.double
    above: cython.int = 0
    below: cython.int = 0
    throttled: cython.bint = False
    n_active: cython.int
    pending: cython.bint
    changed: cython.bint
    late: cython.bint
    last_proc: cython.Py_ssize_t = -1
    best: cython.Py_ssize_t
    best_t: cython.double

    issued_a = array("q", [0]) * n
    started_a = array("q", [0]) * n
    completed_a = array("q", [0]) * n
    timeouts_a = array("q", [0]) * n
    running_a = array("q", [0]) * n
    start_a = array("d", [0.0]) * n
    rem_a = array("d", [0.0]) * n
    dur_a = array("d", [0.0]) * n
    last_a = array("d", [0.0]) * n
    fin_a = array("d", [INF]) * n
    sw_a = array("d", [0.0]) * n
    issued: cython.longlong[:] = issued_a
    started: cython.longlong[:] = started_a
    completed: cython.longlong[:] = completed_a
    timeouts: cython.longlong[:] = timeouts_a
    running: cython.longlong[:] = running_a
    start: cython.double[:] = start_a
    rem: cython.double[:] = rem_a
    dur: cython.double[:] = dur_a
    last: cython.double[:] = last_a
    fin: cython.double[:] = fin_a
    sw: cython.double[:] = sw_a

    tel_t = []
    tel_p = []
    tel_f = []
    tel_c = []
    throttles = []
    events = []

    while True:
        # -- next event ---------------------------------------------------
        t_next = INF
        pending = False
        for p in range(n):
            if issued[p] < n_issue[p]:
                pending = True
                x = issued[p] / ims[p]
                if x < t_next:
                    t_next = x
            if running[p]:
                pending = True
                if fin[p] < t_next:
                    t_next = fin[p]
            elif started[p] < issued[p]:
                pending = True
        if not pending:
            break
        t_tick = (tick + 1) * tel_dt
        if t_tick < t_next:
            t_next = t_tick
        if t_next > stop_time:
            acc += busy * (stop_time - t)
            t = stop_time
            break
        acc += busy * (t_next - t)
        t = t_next

        # -- completions --------------------------------------------------
        for p in range(n):
            if running[p] and fin[p] <= t:
                k = started[p] - 1
                deadline = (k + 1) / ims[p]
                late = t > deadline + met_tol
                completed[p] += 1
                if late:
                    timeouts[p] += 1
                if record_events:
                    events.append((k / ims[p], start[p], t, p, deadline, late))
                running[p] = 0
                fin[p] = INF
                dur[p] = 0.0

        # -- issues -------------------------------------------------------
        for p in range(n):
            while issued[p] < n_issue[p] and issued[p] / ims[p] <= t:
                issued[p] += 1

        # -- telemetry and DVFS -------------------------------------------
        changed = False
        if t_tick <= t:
            power = idle_w + per_sm_w * (acc / tel_dt) * fr_pow
            temp = temp + tel_dt / tau * (t_amb + k_th * power - temp)
            tel_t.append(t)
            tel_p.append(power)
            tel_f.append(freq)
            tel_c.append(temp)
            if power >= cap_hit:
                above += 1
                below = 0
            else:
                below += 1
                above = 0
            if not throttled and above >= need_above:
                throttled = True
                x = f_max * throttle_factor
                if x > f_base:
                    x = f_base
                if x < f_min:
                    x = f_min
                if x != freq:
                    freq = x
                    changed = True
                throttles.append(t)
            elif throttled and below >= need_below:
                throttled = False
                if freq != f_base:
                    freq = f_base
                    changed = True
            if changed:
                fr = freq / f_max
                fr_pow = fr ** p_exp
            acc = 0.0
            tick += 1

        # -- dispatch -----------------------------------------------------
        if regime == STANDALONE:
            best = -1
            best_t = INF
            for p in range(n):
                if running[p]:
                    best = -2
                    break
                if started[p] < issued[p]:
                    x = started[p] / ims[p]
                    if x < best_t:
                        best_t = x
                        best = p
            if best >= 0:
                p = best
                sw[p] = switch[p] if (last_proc >= 0 and last_proc != p) else 0.0
                last_proc = p
                started[p] += 1
                running[p] = 1
                start[p] = t
                rem[p] = 1.0
                last[p] = t
                dur[p] = 0.0
        else:
            for p in range(n):
                if not running[p] and started[p] < issued[p]:
                    started[p] += 1
                    running[p] = 1
                    start[p] = t
                    rem[p] = 1.0
                    last[p] = t
                    dur[p] = 0.0

        # -- progress rates -----------------------------------------------
        n_active = 0
        for p in range(n):
            if running[p]:
                n_active += 1
        busy = 0.0
        for p in range(n):
            if not running[p]:
                continue
            k = started[p] - 1
            if regime == STANDALONE:
                s = total_sms
                bw = 1.0
                infl = 1.0
            elif regime == MPS:
                s = total_sms / n_active
                bw = 1.0 / n_active
                infl = 1.0 + eps_mps if n_active > 1 else 1.0
            elif regime == MIG:
                s = part_sms[p]
                bw = part_bw[p]
                infl = 1.0 + eps_mig if n_active > 1 else 1.0
            else:
                s = part_sms[p]
                bw = 1.0 / n_active
                infl = 1.0
            d = _roofline(comp[p], mem[p], sat[p], s, fr, bw) * jitter[jit_off[p] + k] * infl
            if regime == STANDALONE:
                d = d + sw[p]
            if d != dur[p]:
                if dur[p] > 0.0:
                    rem[p] = rem[p] - (t - last[p]) / dur[p]
                    if rem[p] < 0.0:
                        rem[p] = 0.0
                last[p] = t
                dur[p] = d
                fin[p] = t + rem[p] * d
            busy += s if s < sat[p] else sat[p]

    in_flight = [0] * n
    for p in range(n):
        in_flight[p] = issued[p] - completed[p]
        if stop_time < INF:
            for q in range(completed[p], issued[p]):
                if (q + 1) / ims[p] + met_tol < stop_time:
                    timeouts[p] += 1

    return (list(issued_a), list(completed_a), list(timeouts_a), in_flight,
            tel_t, tel_p, tel_f, tel_c, throttles, events, t)


def is_compiled():
    return cython.compiled
