"""Hot loop for long chain trajectories (d=1, dstar=2).

The state lives in Fourier space in circularly polarized form
(a = f1 + i f2 with field term -iB, b = f1 - i f2 with +iB), so deterministic
evolution is an O(N) per-mode two-by-two update and an exchange event is an
O(N) rank-one update of the velocity modes -- no FFT inside the loop.  The
loop records the instantaneous total energy current on a fixed output grid.

A numba-compiled version is used when available; set MAGNON_GK_NUMBA=0 to
force the pure numpy fallback (same algorithm, vectorized over modes).
"""

from __future__ import annotations

import os

import numpy as np

_WANT_NUMBA = os.environ.get("MAGNON_GK_NUMBA", "1") != "0"
if _WANT_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        _WANT_NUMBA = False

HAVE_NUMBA = _WANT_NUMBA


def mode_tables(spec):
    """Per-mode constants for the polarized two-by-two evolution.

    Returns dict with complex arrays g, h, roots (sAp, sAm, sBp, sBm),
    inverse root gaps, degenerate-mode mask, the site<->mode phase matrix
    and the output weight array for the total current.
    """
    if spec.d != 1 or spec.dstar != 2 or spec.charge == "alternate":
        raise ValueError("fast kernel requires d=1, dstar=2, "
                         "translation-invariant charge")
    n = spec.n
    phi = 2.0 * np.pi * np.arange(n) / n
    if spec.coords == "position":
        g = np.ones(n, dtype=complex)
        h = -(2.0 - 2.0 * np.cos(phi)).astype(complex)
        wgt = -0.5j * np.sin(phi) / n
    else:
        g = np.exp(1j * phi) - 1.0
        h = 1.0 - np.exp(-1j * phi)
        wgt = -(1.0 + np.exp(-1j * phi)) / (4.0 * n)
    b = spec.b if spec.charge == "uniform" else 0.0

    def roots(m):
        disc = np.sqrt(m * m + 4.0 * g * h + 0j)
        deg = np.abs(disc) < 1e-13
        safe = np.where(deg, 1.0, disc)
        return 0.5 * (m + safe), 0.5 * (m - safe), 1.0 / safe, deg

    sAp, sAm, invA, degA = roots(-1j * b)
    sBp, sBm, invB, degB = roots(1j * b)
    x = np.arange(n)
    phase = np.exp(2j * np.pi * np.outer(x, x) / n)  # phase[x, xi]
    return {"g": g, "h": h, "sAp": sAp, "sAm": sAm, "invA": invA,
            "sBp": sBp, "sBm": sBm, "invB": invB,
            "deg": degA | degB, "phase": phase, "wgt": wgt}


def state_to_polarized(spec, state):
    F = np.fft.fft(state.pos, axis=1)
    W = np.fft.fft(state.vel, axis=1)
    return (F[0] + 1j * F[1], W[0] + 1j * W[1],
            F[0] - 1j * F[1], W[0] - 1j * W[1])


def polarized_to_state(spec, aF, aW, bF, bW, time=0.0):
    from .lattice import PhaseState
    pos = np.stack([np.fft.ifft(0.5 * (aF + bF)).real,
                    np.fft.ifft((aF - bF) / 2j).real])
    vel = np.stack([np.fft.ifft(0.5 * (aW + bW)).real,
                    np.fft.ifft((aW - bW) / 2j).real])
    return PhaseState(spec, pos, vel, time)


# ---------------------------------------------------------------------------
# numpy fallback


def _loop_numpy(aF, aW, bF, bW, ev_times, triples, t_end, dt_out, n_out,
                g, h, sAp, sAm, invA, sBp, sBm, invB, deg, phase, wgt, out):
    n = aF.shape[0]
    cphase = np.conj(phase)

    def adv(dt):
        nonlocal aF, aW, bF, bW
        for which in (0, 1):
            sp, sm, inv = (sAp, sAm, invA) if which == 0 else (sBp, sBm, invB)
            F, W = (aF, aW) if which == 0 else (bF, bW)
            ep = np.exp(sp * dt)
            em = np.exp(sm * dt)
            Fn = (F * (sp * em - sm * ep) + g * W * (ep - em)) * inv
            Wn = (F * h * (ep - em) + W * (sp * ep - sm * em)) * inv
            Fn = np.where(deg, F + dt * g * W, Fn)
            Wn = np.where(deg, W + dt * h * F, Wn)
            if which == 0:
                aF, aW = Fn, Wn
            else:
                bF, bW = Fn, Wn

    t = 0.0
    o = 0
    i = 0
    nev = ev_times.shape[0]
    while True:
        t_ev = ev_times[i] if i < nev else t_end + 1.0
        t_next = t_ev if t_ev < t_end else t_end
        while o < n_out and o * dt_out <= t_next:
            adv(o * dt_out - t)
            t = o * dt_out
            out[o] = np.sum(wgt * (aF * np.conj(aW)
                                   + bF * np.conj(bW))).real
            o += 1
        if i >= nev or t_ev > t_end:
            break
        adv(t_ev - t)
        t = t_ev
        trip = triples[i]
        j = trip // n
        x = trip % n
        y = (x + 1) % n
        if j == 0:
            vhat = 0.5 * (aW + bW)
        else:
            vhat = (aW - bW) / 2j
        vx = np.sum(phase[x] * vhat).real / n
        vy = np.sum(phase[y] * vhat).real / n
        delta = vy - vx
        u = delta * (cphase[x] - cphase[y])
        if j == 0:
            aW = aW + u
            bW = bW + u
        else:
            aW = aW + 1j * u
            bW = bW - 1j * u
        i += 1
    return aF, aW, bF, bW


# ---------------------------------------------------------------------------
# numba version (same algorithm, explicit loops)

if HAVE_NUMBA:

    @njit(cache=True)
    def _loop_numba(aF, aW, bF, bW, ev_times, triples, t_end, dt_out, n_out,
                    g, h, sAp, sAm, invA, sBp, sBm, invB, deg, phase, wgt,
                    out):  # pragma: no cover - exercised via driver
        n = aF.shape[0]
        t = 0.0
        o = 0
        i = 0
        nev = ev_times.shape[0]
        while True:
            if i < nev:
                t_ev = ev_times[i]
            else:
                t_ev = t_end + 1.0
            t_next = t_ev if t_ev < t_end else t_end
            while o < n_out and o * dt_out <= t_next:
                dt = o * dt_out - t
                for k in range(n):
                    if deg[k]:
                        aFn = aF[k] + dt * g[k] * aW[k]
                        aWn = aW[k] + dt * h[k] * aF[k]
                        bFn = bF[k] + dt * g[k] * bW[k]
                        bWn = bW[k] + dt * h[k] * bF[k]
                    else:
                        ep = np.exp(sAp[k] * dt)
                        em = np.exp(sAm[k] * dt)
                        aFn = (aF[k] * (sAp[k] * em - sAm[k] * ep)
                               + g[k] * aW[k] * (ep - em)) * invA[k]
                        aWn = (aF[k] * h[k] * (ep - em)
                               + aW[k] * (sAp[k] * ep - sAm[k] * em)) * invA[k]
                        ep = np.exp(sBp[k] * dt)
                        em = np.exp(sBm[k] * dt)
                        bFn = (bF[k] * (sBp[k] * em - sBm[k] * ep)
                               + g[k] * bW[k] * (ep - em)) * invB[k]
                        bWn = (bF[k] * h[k] * (ep - em)
                               + bW[k] * (sBp[k] * ep - sBm[k] * em)) * invB[k]
                    aF[k], aW[k], bF[k], bW[k] = aFn, aWn, bFn, bWn
                t = o * dt_out
                acc = 0.0
                for k in range(n):
                    acc += (wgt[k] * (aF[k] * np.conj(aW[k])
                                      + bF[k] * np.conj(bW[k]))).real
                out[o] = acc
                o += 1
            if i >= nev or t_ev > t_end:
                break
            dt = t_ev - t
            for k in range(n):
                if deg[k]:
                    aFn = aF[k] + dt * g[k] * aW[k]
                    aWn = aW[k] + dt * h[k] * aF[k]
                    bFn = bF[k] + dt * g[k] * bW[k]
                    bWn = bW[k] + dt * h[k] * bF[k]
                else:
                    ep = np.exp(sAp[k] * dt)
                    em = np.exp(sAm[k] * dt)
                    aFn = (aF[k] * (sAp[k] * em - sAm[k] * ep)
                           + g[k] * aW[k] * (ep - em)) * invA[k]
                    aWn = (aF[k] * h[k] * (ep - em)
                           + aW[k] * (sAp[k] * ep - sAm[k] * em)) * invA[k]
                    ep = np.exp(sBp[k] * dt)
                    em = np.exp(sBm[k] * dt)
                    bFn = (bF[k] * (sBp[k] * em - sBm[k] * ep)
                           + g[k] * bW[k] * (ep - em)) * invB[k]
                    bWn = (bF[k] * h[k] * (ep - em)
                           + bW[k] * (sBp[k] * ep - sBm[k] * em)) * invB[k]
                aF[k], aW[k], bF[k], bW[k] = aFn, aWn, bFn, bWn
            t = t_ev
            trip = triples[i]
            j = trip // n
            x = trip % n
            y = (x + 1) % n
            vx = 0.0
            vy = 0.0
            for k in range(n):
                if j == 0:
                    vh = 0.5 * (aW[k] + bW[k])
                else:
                    vh = (aW[k] - bW[k]) / 2j
                vx += (phase[x, k] * vh).real
                vy += (phase[y, k] * vh).real
            vx /= n
            vy /= n
            delta = vy - vx
            for k in range(n):
                u = delta * (np.conj(phase[x, k]) - np.conj(phase[y, k]))
                if j == 0:
                    aW[k] += u
                    bW[k] += u
                else:
                    aW[k] += 1j * u
                    bW[k] -= 1j * u
            i += 1


def run_loop(aF, aW, bF, bW, ev_times, triples, t_end, dt_out, n_out,
             tables, use_numba=None):
    """Dispatch to the compiled or fallback loop; mutates nothing, returns
    (final polarized state tuple, current series)."""
    out = np.empty(n_out)
    args = (ev_times, triples, float(t_end), float(dt_out), int(n_out),
            tables["g"], tables["h"], tables["sAp"], tables["sAm"],
            tables["invA"], tables["sBp"], tables["sBm"], tables["invB"],
            tables["deg"], tables["phase"], tables["wgt"], out)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba requested but not available")
    if use_numba:
        a1, w1, b1, w2 = (aF.copy(), aW.copy(), bF.copy(), bW.copy())
        _loop_numba(a1, w1, b1, w2, *args)
        return (a1, w1, b1, w2), out
    final = _loop_numpy(aF.copy(), aW.copy(), bF.copy(), bW.copy(), *args)
    return final, out
