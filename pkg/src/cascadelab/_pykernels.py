"""Pure numpy implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` operation for operation.  Keys and uniforms are
bit-identical between the two; transcendental functions may differ in the
last ulp because numpy and libm use different implementations.
"""

import numpy as np

from . import _rng
from ._rng import DETERMINISTIC, DIRICHLET, DISCRETE, LOGNORMAL, ONE_HOT

TWO_PI = 6.283185307179586


def mix_offsets(keys, n, step):
    """out[r, a] = mix64(keys[r] + (a + 1) * step) for a < n."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    a = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = keys[:, None] + a[None, :] * np.uint64(step)
    return _rng.mix64(z)


def _normal(slot_keys, t):
    u0 = _rng.uniform(slot_keys, t)
    u1 = _rng.uniform(slot_keys, t + 1)
    return np.sqrt(-2.0 * np.log(u0)) * np.cos(TWO_PI * u1), t + 2


def _gamma(slot_keys, a):
    # Marsaglia-Tsang; every stream consumes three draws per attempt
    n = slot_keys.shape[0]
    t0 = 0
    if a < 1.0:
        boost = _rng.uniform(slot_keys, 0)
        t0 = 1
        shape = a + 1.0
    else:
        shape = a
    d = shape - 1.0 / 3.0
    cc = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n)
    pending = np.arange(n)
    t = t0
    while pending.size:
        keys = slot_keys[pending]
        x, _ = _normal(keys, t)
        u2 = _rng.uniform(keys, t + 2)
        t += 3
        v = 1.0 + cc * x
        ok = v > 0.0
        v3 = np.where(ok, v * v * v, 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            accept = ok & (np.log(u2) < 0.5 * x * x + d - d * v3 + d * np.log(v3))
        out[pending[accept]] = d * v3[accept]
        pending = pending[~accept]
    if a < 1.0:
        out = out * np.power(boost, 1.0 / a)
    return out


def sample_family(keys, code, c, params):
    """Weight vectors for each cell key; returns an (N, c) float array."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    params = np.asarray(params, dtype=np.float64)
    n = keys.shape[0]
    if code == DETERMINISTIC:
        return np.full((n, c), 1.0 / c)
    if code == ONE_HOT:
        u = _rng.uniform(_rng.derive(keys, 0, _rng.SLOT_STEP), 0)
        idx = np.minimum((u * c).astype(np.int64), c - 1)
        out = np.zeros((n, c))
        out[np.arange(n), idx] = 1.0
        return out
    slots = mix_offsets(keys, c, _rng.SLOT_STEP)
    if code == DISCRETE:
        m = int(params[0])
        atoms = params[1:1 + m]
        cum = params[1 + m:1 + 2 * m]
        u = _rng.uniform(slots, 0)
        idx = np.minimum(np.searchsorted(cum[:m - 1], u, side="right"), m - 1)
        return atoms[idx] / c
    if code == LOGNORMAL:
        sigma2 = params[0]
        s = np.sqrt(sigma2)
        z, _ = _normal(slots, 0)
        return np.exp(s * z - 0.5 * sigma2) / c
    if code == DIRICHLET:
        g = np.empty((n, c))
        for i in range(c):
            g[:, i] = _gamma(slots[:, i], float(params[i]))
        total = g[:, 0].copy()
        for i in range(1, c):
            total += g[:, i]
        return g / total[:, None]
    raise ValueError(f"unknown family code {code}")


def cascade_rows(replicate_keys, n, code, c, params):
    """Level-n cascade masses for each replicate key; shape (R, c^n)."""
    rkeys = np.ascontiguousarray(replicate_keys, dtype=np.uint64).ravel()
    masses = np.ones((rkeys.size, 1))
    if n == 0:
        return masses
    level_keys = mix_offsets(rkeys, n, _rng.LEVEL_STEP)
    for j in range(n):
        cells = c ** j
        cell_keys = mix_offsets(level_keys[:, j], cells, _rng.CELL_STEP)
        w = sample_family(cell_keys.ravel(), code, c, params).reshape(rkeys.size, cells, c)
        masses = (masses[:, :, None] * w).reshape(rkeys.size, cells * c)
    return masses


def coarsen_rows(masses, c):
    """Sum consecutive blocks of c cells along the last axis."""
    r = masses.shape[0]
    blocks = masses.reshape(r, -1, c)
    out = blocks[:, :, 0].copy()
    for i in range(1, c):
        out += blocks[:, :, i]
    return out


def partition_sums(masses, c, n, levels, qs):
    """S_j(q) per row for every requested level j <= n and exponent q.

    Returns an array of shape (rows, len(levels), len(qs)).
    """
    masses = np.ascontiguousarray(masses, dtype=np.float64)
    levels = [int(j) for j in levels]
    qs = np.asarray(qs, dtype=np.float64)
    out = np.empty((masses.shape[0], len(levels), qs.size))
    order = sorted(range(len(levels)), key=lambda i: -levels[i])
    cur, cur_level = masses, n
    for li in order:
        while cur_level > levels[li]:
            cur = coarsen_rows(cur, c)
            cur_level -= 1
        with np.errstate(divide="ignore"):
            logs = np.log(cur)
        for qi, q in enumerate(qs):
            if q == 0.0:
                out[:, li, qi] = cur.shape[1]
            elif q == 1.0:
                out[:, li, qi] = cur.sum(axis=1)
            elif q == 2.0:
                out[:, li, qi] = (cur * cur).sum(axis=1)
            else:
                with np.errstate(over="ignore"):
                    out[:, li, qi] = np.exp(q * logs).sum(axis=1)
    return out
