"""Finite-level simulation of independent random cascades.

Fields are stored as flat arrays in c-adic cell order: cell ``alpha`` of
level ``n`` covers ``[alpha c^-n, (alpha+1) c^-n)``.  Replicate ``k`` of an
ensemble depends only on ``(seed, k)``, so ensembles can be evaluated in any
order and on any number of threads with identical results.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _rng
from .errors import MemoryBoundError
from ._backend import kernels
from .generators import Family, GeneratorSpec, kernel_args, weights_from_keys

DEFAULT_MAX_CELLS = 2 ** 26
BLOCK_CELLS = 2 ** 18


def max_cells():
    """Cell budget per field; ``CASCADELAB_MAX_CELLS`` overrides the default."""
    raw = os.environ.get("CASCADELAB_MAX_CELLS")
    if raw is None:
        return DEFAULT_MAX_CELLS
    value = int(raw)
    if value < 1:
        raise ValueError("CASCADELAB_MAX_CELLS must be positive")
    return value


def check_cells(c, n):
    if n < 0:
        raise ValueError("level must be >= 0")
    cells = c ** n
    if cells > max_cells():
        raise MemoryBoundError(f"c^n = {c}^{n} = {cells} cells exceeds the bound {max_cells()}")
    return cells


@dataclass(frozen=True, eq=False)
class CascadeField:
    c: int
    n: int
    masses: np.ndarray

    def __post_init__(self):
        m = np.array(self.masses, dtype=np.float64)
        if m.ndim != 1 or m.size != self.c ** self.n:
            raise ValueError(f"expected {self.c ** self.n} cell masses, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("cell masses must be finite and non-negative")
        m.flags.writeable = False
        object.__setattr__(self, "masses", m)

    def __eq__(self, other):
        if not isinstance(other, CascadeField):
            return NotImplemented
        return self.c == other.c and self.n == other.n and np.array_equal(self.masses, other.masses)

    __hash__ = None


def simulate_rows(gen: GeneratorSpec, n, replicate_keys):
    """Level-n masses for each replicate stream key; shape (len(keys), c^n)."""
    c = gen.c
    check_cells(c, n)
    rkeys = np.ascontiguousarray(replicate_keys, dtype=np.uint64).ravel()
    if gen.family != Family.TENSOR:
        code, params = kernel_args(gen)
        return kernels.cascade_rows(rkeys, n, code, c, params)
    # composite generators sample factor by factor in Python
    masses = np.ones((rkeys.size, 1))
    if n == 0:
        return masses
    level_keys = kernels.mix_offsets(rkeys, n, _rng.LEVEL_STEP)
    for j in range(n):
        cells = c ** j
        cell_keys = kernels.mix_offsets(level_keys[:, j], cells, _rng.CELL_STEP)
        w = weights_from_keys(gen, cell_keys.ravel()).reshape(rkeys.size, cells, c)
        masses = (masses[:, :, None] * w).reshape(rkeys.size, cells * c)
    return masses


def simulate(gen: GeneratorSpec, n, rng_stream) -> CascadeField:
    """One realization at level n from the replicate stream key ``rng_stream``."""
    row = simulate_rows(gen, n, np.array([int(rng_stream) & _rng.MASK64], dtype=np.uint64))[0]
    return CascadeField(gen.c, n, row)


def coarsen_masses(masses, c, m):
    out = np.asarray(masses, dtype=np.float64)
    lead = out.shape[:-1]
    for _ in range(m):
        blocks = out.reshape(*lead, -1, c)
        acc = blocks[..., 0].copy()
        for i in range(1, c):
            acc += blocks[..., i]
        out = acc
    return out


def coarsen(field: CascadeField, m) -> CascadeField:
    """Block sums of c^m consecutive cells (level n - m)."""
    if not 0 <= m <= field.n:
        raise ValueError(f"cannot remove {m} levels from a level-{field.n} field")
    if m == 0:
        return field
    return CascadeField(field.c, field.n - m, coarsen_masses(field.masses, field.c, m))


def total_mass(field: CascadeField):
    return float(coarsen_masses(field.masses, field.c, field.n)[0])


@dataclass(frozen=True)
class EnsembleHandle:
    """R replicate fields of ``gen`` at level ``n`` under master ``seed``."""

    gen: GeneratorSpec
    n: int
    replicates: int
    seed: int
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicate count must be >= 1")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        _rng.check_seed(self.seed)
        check_cells(self.gen.c, self.n)

    @property
    def c(self):
        return self.gen.c

    def stream(self, k):
        return _rng.replicate_stream(self.seed, k)

    def field(self, k) -> CascadeField:
        if not 0 <= k < self.replicates:
            raise IndexError(f"replicate {k} out of range")
        return simulate(self.gen, self.n, self.stream(k))

    def rows(self, start, stop):
        keys = _rng.replicate_streams(self.seed, np.arange(start, stop))
        return simulate_rows(self.gen, self.n, keys)

    def blocks(self):
        # block boundaries depend only on the field size, never on workers
        step = max(1, BLOCK_CELLS // self.c ** self.n)
        return [(s, min(s + step, self.replicates)) for s in range(0, self.replicates, step)]

    def map_blocks(self, fn):
        """Apply ``fn(start, masses)`` to every replicate block; results in block order."""
        def run(bounds):
            start, stop = bounds
            return fn(start, self.rows(start, stop))

        blocks = self.blocks()
        if self.workers == 1 or len(blocks) == 1:
            return [run(b) for b in blocks]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(run, blocks))

    def per_replicate(self, fn):
        """Stack per-replicate statistics ``fn(masses) -> array (rows, ...)``."""
        return np.concatenate(self.map_blocks(lambda start, m: fn(m)), axis=0)

    def total_masses(self):
        return self.per_replicate(lambda m: coarsen_masses(m, self.c, self.n)[:, 0])


CELL_COLUMNS = ("replicate", "level", "cell_index", "mass")


def write_cells_csv(path, ensemble: EnsembleHandle, levels=None):
    """Cell dump with columns replicate, level, cell_index, mass."""
    levels = [ensemble.n] if levels is None else sorted(set(int(j) for j in levels), reverse=True)
    if any(not 0 <= j <= ensemble.n for j in levels):
        raise ValueError("dump levels must lie in [0, n]")
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CELL_COLUMNS)
        for start, stop in ensemble.blocks():
            rows = ensemble.rows(start, stop)
            for r in range(rows.shape[0]):
                for j in levels:
                    cells = coarsen_masses(rows[r], ensemble.c, ensemble.n - j)
                    for a, mass in enumerate(cells):
                        out.writerow((start + r, j, a, f"{mass:.17g}"))


def read_cells_csv(path, c):
    """Inverse of :func:`write_cells_csv`: {(replicate, level): CascadeField}."""
    cells = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["replicate"]), int(row["level"]))
            cells.setdefault(key, []).append((int(row["cell_index"]), float(row["mass"])))
    fields = {}
    for (k, j), items in cells.items():
        items.sort()
        fields[(k, j)] = CascadeField(c, j, [m for _, m in items])
    return fields
