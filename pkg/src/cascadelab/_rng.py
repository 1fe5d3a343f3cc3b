"""Counter-based random streams shared by both kernel backends.

Every random number used by a simulation is a pure function of
``(master seed, replicate, level, cell, component slot, draw index)``.
Keys are derived with the splitmix64 finalizer::

    replicate key  = mix64(mix64(seed) + (k + 1) * REPLICATE_STEP)
    level key      = mix64(replicate_key + (j + 1) * LEVEL_STEP)
    cell key       = mix64(level_key + (alpha + 1) * CELL_STEP)
    slot key       = mix64(cell_key + (i + 1) * SLOT_STEP)
    uniform draw t = ((mix64(slot_key + (t + 1) * GOLDEN) >> 12) + 0.5) * 2**-52

Tensor-product generators derive one sub-stream per factor draw with
``mix64(cell_key + (s + 1) * SUB_STEP)``.  All arithmetic wraps modulo 2**64.
The Cython kernels hard-code the same constants; ``tests/test_kernels.py``
checks that the two agree bit for bit on keys and uniforms.
"""

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
REPLICATE_STEP = 0xBF58476D1CE4E5B9
LEVEL_STEP = 0x94D049BB133111EB
CELL_STEP = 0xD6E8FEB86659FD93
SLOT_STEP = 0xD1B54A32D192ED03
SUB_STEP = 0xA0761D6478BD642F

MASK64 = (1 << 64) - 1
UNIT = 2.0 ** -52

# family codes understood by the kernels
DETERMINISTIC = 0
DISCRETE = 1
LOGNORMAL = 2
DIRICHLET = 4
ONE_HOT = 5

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S12 = np.uint64(12)


def mix64(z):
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def offset(keys, index, step):
    """``keys + (index + 1) * step`` modulo 2**64, elementwise."""
    add = np.uint64(((int(index) + 1) * step) & MASK64)
    with np.errstate(over="ignore"):
        return np.asarray(keys, dtype=np.uint64) + add


def derive(keys, index, step):
    return mix64(offset(keys, index, step))


def uniform(keys, t):
    """Uniform draw number ``t`` of each stream in ``keys``; values lie in (0, 1)."""
    bits = derive(keys, t, GOLDEN) >> _S12
    return (bits.astype(np.float64) + 0.5) * UNIT


def _mix_int(z):
    return int(mix64(np.uint64(z & MASK64)))


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def replicate_stream(seed, k):
    """Stream key of replicate ``k`` under master ``seed``."""
    seed = check_seed(seed)
    if k < 0:
        raise ValueError("replicate index must be >= 0")
    base = _mix_int(seed)
    return _mix_int(base + (k + 1) * REPLICATE_STEP)


def replicate_streams(seed, replicates):
    seed = check_seed(seed)
    base = np.uint64(_mix_int(seed))
    ks = np.asarray(replicates, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(base + (ks + np.uint64(1)) * np.uint64(REPLICATE_STEP))


def level_stream(replicate_key, j):
    return _mix_int(int(replicate_key) + (j + 1) * LEVEL_STEP)


def cell_stream(level_key, alpha):
    return _mix_int(int(level_key) + (alpha + 1) * CELL_STEP)
