"""Hot loops: local fields and Metropolis sweeps.

Each kernel exists twice, as a numba-compiled function and as a plain
numpy/python function with identical random-number consumption, so both
paths give bit-identical trajectories for the same generator state.
"""
import numpy as np

from . import _accel

__all__ = ["local_field", "sweeps", "USE_NUMBA"]

USE_NUMBA = _accel.USE_NUMBA


def _local_field_py(sigma, i, ptr, coef, co):
    h = 0.0
    for e in range(ptr[i], ptr[i + 1]):
        p = coef[e]
        for j in range(co.shape[1]):
            c = co[e, j]
            if c < 0:
                break
            p *= sigma[c]
        h += p
    return h


_local_field_nb = _accel.njit(_local_field_py)


def _sweeps_nb_impl(sigma, n_sweeps, beta, mu, ptr, coef, co, rng, e_total, s_total, xs, es, codes):
    n = sigma.shape[0]
    accepted = 0
    record = codes.shape[0] > 0
    for sw in range(n_sweeps):
        for _ in range(n):
            i = int(rng.random() * n)
            u = rng.random()
            h = 0.0
            for e in range(ptr[i], ptr[i + 1]):
                p = coef[e]
                for j in range(co.shape[1]):
                    c = co[e, j]
                    if c < 0:
                        break
                    p *= sigma[c]
                h += p
            s = sigma[i]
            d = -2.0 * s * (h - mu)
            if d <= 0.0 or u < np.exp(-beta * d):
                sigma[i] = -s
                e_total -= 2.0 * s * h
                s_total -= 2 * s
                accepted += 1
        xs[sw] = s_total / n
        es[sw] = e_total / n
        if record:
            code = 0
            for k in range(n):
                if sigma[k] > 0:
                    code |= 1 << k
            codes[sw] = code
    return e_total, s_total, accepted


_sweeps_nb = _accel.njit(_sweeps_nb_impl) if _accel.NUMBA_AVAILABLE else None


def _sweeps_py(sigma, n_sweeps, beta, mu, ptr, coef, co, rng, e_total, s_total, xs, es, codes):
    n = sigma.shape[0]
    accepted = 0
    record = codes.shape[0] > 0
    ptr_l = ptr.tolist()
    coef_l = coef.tolist()
    co_l = [[c for c in row if c >= 0] for row in co.tolist()]
    sig = sigma.tolist()
    e_total = float(e_total)
    s_total = int(s_total)
    weights = 1 << np.arange(n, dtype=np.int64) if record else None
    for sw in range(n_sweeps):
        draws = rng.random(2 * n)
        for k in range(n):
            i = int(draws[2 * k] * n)
            u = draws[2 * k + 1]
            h = 0.0
            for e in range(ptr_l[i], ptr_l[i + 1]):
                p = coef_l[e]
                for c in co_l[e]:
                    p *= sig[c]
                h += p
            s = sig[i]
            d = -2.0 * s * (h - mu)
            if d <= 0.0 or u < np.exp(-beta * d):
                sig[i] = -s
                e_total -= 2.0 * s * h
                s_total -= 2 * s
                accepted += 1
        xs[sw] = s_total / n
        es[sw] = e_total / n
        if record:
            codes[sw] = int(weights[np.asarray(sig) > 0].sum())
    sigma[:] = sig
    return e_total, s_total, accepted


def local_field(sigma, i, ptr, coef, co, accelerated=None):
    use = USE_NUMBA if accelerated is None else accelerated and _accel.NUMBA_AVAILABLE
    f = _local_field_nb if use else _local_field_py
    return f(sigma, i, ptr, coef, co)


def sweeps(sigma, n_sweeps, beta, mu, ptr, coef, co, rng, e_total, s_total, record_codes=False, accelerated=None):
    """Run ``n_sweeps`` sweeps of N single-site Metropolis attempts in place.

    Returns ``(e_total, s_total, accepted, xs, es, codes)`` where ``xs``/``es``
    hold x and E per site after every sweep and ``codes`` (only when
    ``record_codes``) the bit pattern of up spins, usable for N <= 62.
    """
    use = USE_NUMBA if accelerated is None else accelerated and _accel.NUMBA_AVAILABLE
    xs = np.empty(n_sweeps)
    es = np.empty(n_sweeps)
    codes = np.empty(n_sweeps if record_codes else 0, dtype=np.int64)
    f = _sweeps_nb if use else _sweeps_py
    e_total, s_total, acc = f(
        sigma, int(n_sweeps), float(beta), float(mu), ptr, coef, co, rng, float(e_total), int(s_total), xs, es, codes
    )
    return e_total, int(s_total), int(acc), xs, es, codes
