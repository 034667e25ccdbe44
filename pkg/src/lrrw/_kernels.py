"""Hot loops of the path simulator.

Two interchangeable backends advance a block of paths by a chunk of steps:

* ``numba``: :func:`_advance_loop` compiled with ``@njit``, one path at a time;
* ``numpy``: :func:`_advance_vectorized`, all paths of the block in lockstep.

Both consume the same pre-drawn uniforms and perform the same IEEE
operations in the same order, so they return bitwise-identical states.
Set ``LRRW_DISABLE_NUMBA=1`` to force the numpy backend.
"""

from __future__ import annotations

import os

import numpy as np

FLAG_QSL = 1
FLAG_ASCLT = 2
FLAG_LIL = 4
FLAG_MART = 8

# layout of the ``prm`` vector handed to the kernels
P_P, P_Q, P_R, P_THETA, P_ALPHA, P_OMEGA, P_GAMMA, P_TAU, P_CENTER, P_QV1 = range(10)
N_PRM = 10

_DISABLED = os.environ.get("LRRW_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("disabled by LRRW_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

DEFAULT_BACKEND = "numba" if HAVE_NUMBA else "numpy"


def _advance_loop(n0, s, z, u, latent, prm, a, w, sc, lil, grid, flags, mart, qv, qsl, asclt, lilmax):
    p = prm[P_P]
    q = prm[P_Q]
    th = prm[P_THETA]
    al = prm[P_ALPHA]
    om = prm[P_OMEGA]
    ga = prm[P_GAMMA]
    tau = prm[P_TAU]
    center = prm[P_CENTER]
    qv1 = prm[P_QV1]
    pq = p + q
    n_paths = u.shape[0]
    n_steps = u.shape[1]
    n_grid = grid.shape[0]
    do_qsl = (flags & 1) != 0
    do_asclt = (flags & 2) != 0
    do_lil = (flags & 4) != 0
    do_mart = (flags & 8) != 0
    for i in range(n_paths):
        si = s[i]
        zi = z[i]
        for j in range(n_steps):
            k = n0 + j
            if k == 0:
                uu = u[i, j, 1] if latent else u[i, j, 0]
                if uu < p:
                    x = 1
                elif uu < pq:
                    x = -1
                else:
                    x = 0
                drift = om
                cvar = qv1
            else:
                n_plus = (zi + si) // 2
                n_minus = (zi - si) // 2
                if latent:
                    um = u[i, j, 1]
                    if um < p:
                        mark = 1
                    elif um < pq:
                        mark = -1
                    else:
                        mark = 0
                    if u[i, j, 0] < th:
                        idx = int(u[i, j, 2] * k)
                        if idx >= k:
                            idx = k - 1
                        if idx < n_plus:
                            x = mark
                        elif idx < n_plus + n_minus:
                            x = -mark
                        else:
                            x = 0
                    else:
                        x = mark
                else:
                    p_plus = (1.0 - th) * p + th * (p * n_plus + q * n_minus) / k
                    p_minus = (1.0 - th) * q + th * (q * n_plus + p * n_minus) / k
                    uu = u[i, j, 0]
                    if uu < p_plus:
                        x = 1
                    elif uu < p_plus + p_minus:
                        x = -1
                    else:
                        x = 0
                drift = al * si / k + om
                cvar = ga * zi / k + tau - drift * drift
            k1 = k + 1
            if do_mart:
                y = a[k1] * a[k1] * cvar - qv[i, 1]
                t = qv[i, 0] + y
                qv[i, 1] = (t - qv[i, 0]) - y
                qv[i, 0] = t
                y = a[k1] * (x - drift) - mart[i, 1]
                t = mart[i, 0] + y
                mart[i, 1] = (t - mart[i, 0]) - y
                mart[i, 0] = t
            si += x
            zi += x * x
            d = si / k1 - center
            v = d * sc[k1]
            wk = w[k1]
            if do_qsl and wk > 0.0:
                yy = v * v
                term = wk * yy
                for r in range(3):
                    y = term - qsl[i, r, 1]
                    t = qsl[i, r, 0] + y
                    qsl[i, r, 1] = (t - qsl[i, r, 0]) - y
                    qsl[i, r, 0] = t
                    term = term * yy
            if do_asclt and wk > 0.0:
                for g in range(n_grid):
                    if v <= grid[g]:
                        y = wk - asclt[i, g, 1]
                        t = asclt[i, g, 0] + y
                        asclt[i, g, 1] = (t - asclt[i, g, 0]) - y
                        asclt[i, g, 0] = t
            if do_lil and lil[k1] > 0.0:
                m = abs(d) * lil[k1]
                if m > lilmax[i]:
                    lilmax[i] = m
        s[i] = si
        z[i] = zi


def _kahan_add(acc, value):
    """Compensated ``acc[..., 0] += value`` with the error term in ``acc[..., 1]``."""
    y = value - acc[..., 1]
    t = acc[..., 0] + y
    acc[..., 1] = (t - acc[..., 0]) - y
    acc[..., 0] = t


def _advance_vectorized(n0, s, z, u, latent, prm, a, w, sc, lil, grid, flags, mart, qv, qsl, asclt, lilmax):
    p, q, th = prm[P_P], prm[P_Q], prm[P_THETA]
    al, om, ga, tau = prm[P_ALPHA], prm[P_OMEGA], prm[P_GAMMA], prm[P_TAU]
    center, qv1 = prm[P_CENTER], prm[P_QV1]
    pq = p + q
    n_steps = u.shape[1]
    do_mart = bool(flags & FLAG_MART)
    for j in range(n_steps):
        k = n0 + j
        if k == 0:
            uu = u[:, j, 1] if latent else u[:, j, 0]
            x = np.where(uu < p, 1, np.where(uu < pq, -1, 0))
            drift = np.full(s.shape, om)
            cvar = np.full(s.shape, qv1)
        else:
            n_plus = (z + s) // 2
            n_minus = (z - s) // 2
            if latent:
                um = u[:, j, 1]
                mark = np.where(um < p, 1, np.where(um < pq, -1, 0))
                idx = np.minimum((u[:, j, 2] * k).astype(np.int64), k - 1)
                past = np.where(idx < n_plus, 1, np.where(idx < n_plus + n_minus, -1, 0))
                x = np.where(u[:, j, 0] < th, mark * past, mark)
            else:
                p_plus = (1.0 - th) * p + th * (p * n_plus + q * n_minus) / k
                p_minus = (1.0 - th) * q + th * (q * n_plus + p * n_minus) / k
                uu = u[:, j, 0]
                x = np.where(uu < p_plus, 1, np.where(uu < p_plus + p_minus, -1, 0))
            drift = al * s / k + om
            cvar = ga * z / k + tau - drift * drift
        k1 = k + 1
        if do_mart:
            _kahan_add(qv, a[k1] * a[k1] * cvar)
            _kahan_add(mart, a[k1] * (x - drift))
        s += x
        z += x * x
        d = s / k1 - center
        v = d * sc[k1]
        wk = w[k1]
        if flags & FLAG_QSL and wk > 0.0:
            yy = v * v
            term = wk * yy
            for r in range(3):
                _kahan_add(qsl[:, r, :], term)
                term = term * yy
        if flags & FLAG_ASCLT and wk > 0.0:
            hit = v[:, None] <= grid[None, :]
            if hit.any():
                # only touched entries change, matching the scalar loop exactly
                sub = asclt[hit]
                _kahan_add(sub, np.full(sub.shape[0], wk))
                asclt[hit] = sub
        if flags & FLAG_LIL and lil[k1] > 0.0:
            np.maximum(lilmax, np.abs(d) * lil[k1], out=lilmax)


if HAVE_NUMBA:
    _advance_numba = numba.njit(cache=True, nogil=True)(_advance_loop)
else:  # pragma: no cover
    _advance_numba = None


def advance(n0, s, z, u, latent, prm, a, w, sc, lil, grid, flags, mart, qv, qsl, asclt, lilmax, backend=None):
    """Advance every path of a block by ``u.shape[1]`` steps, in place.

    ``n0`` is the number of steps already taken (identical for all paths of
    the block); ``u`` holds the uniforms, shape ``(paths, steps, 1 or 3)``.
    """
    backend = backend or DEFAULT_BACKEND
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        _advance_numba(n0, s, z, u, latent, prm, a, w, sc, lil, grid, flags, mart, qv, qsl, asclt, lilmax)
    elif backend == "numpy":
        _advance_vectorized(n0, s, z, u, latent, prm, a, w, sc, lil, grid, flags, mart, qv, qsl, asclt, lilmax)
    else:
        raise ValueError(f"unknown backend {backend!r}")
