"""Cluster-expansion Hamiltonian on a periodic supercell.

Energy per site is ``sum_o m_o V_o <corr>_o / n_basis`` where ``m_o`` counts
the orbit's distinct clusters per primitive cell.  Equivalently, the total
energy is the sum of ``V_o * prod(sigma)`` over every cluster instance in the
supercell, which is what the local-field index below evaluates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .atat_io import ClusterOrbitSpec, EciTable, LatticeSpec, TEciTable
from .lattice import ExpandedOrbit, Supercell, expand_orbit, point_symmetries

__all__ = [
    "SpinConfig",
    "SiteClusterIndex",
    "ClusterExpansion",
    "correlations",
    "energy_per_site",
    "delta_grand",
    "eci_at_temperature",
]

log = logging.getLogger(__name__)


@dataclass(eq=False)
class SpinConfig:
    sigma: np.ndarray
    supercell: Supercell

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.int8)
        if self.sigma.shape != (self.supercell.n_sites,):
            raise ValueError("spin array does not match the supercell")
        if not np.all(np.abs(self.sigma) == 1):
            raise ValueError("spins must be -1 or +1")

    @property
    def x(self) -> float:
        return float(self.sigma.sum(dtype=np.int64)) / self.sigma.size

    def copy(self) -> "SpinConfig":
        return SpinConfig(self.sigma.copy(), self.supercell)


class SiteClusterIndex:
    """Cluster instances of every orbit on one supercell.

    ``instances[o]`` is an ``(n_instances, k)`` array of site indices.  The
    CSR arrays ``ptr``/``orbit``/``co`` list, for every site, the instances
    containing it together with the co-member sites.  Sites that occur an
    even number of times in an instance (possible only in cells smaller than
    the cluster) drop out of the product and are left out of the lists.
    """

    def __init__(self, orbits: list[ExpandedOrbit], supercell: Supercell):
        self.supercell = supercell
        cells = supercell.cell_offsets
        n_sites = supercell.n_sites
        self.instances: list[np.ndarray] = []
        for orb in orbits:
            k = orb.size
            if k == 0:
                self.instances.append(np.zeros((supercell.n_cells, 0), dtype=np.int64))
                continue
            per_member = []
            for member in orb.members:
                m = np.array(member)  # (k, 4)
                offs = cells[:, None, :] + m[None, :, :3]
                per_member.append(supercell.index(offs, m[None, :, 3]))
            self.instances.append(np.concatenate(per_member, axis=0).astype(np.int64))

        width = max([1] + [inst.shape[1] - 1 for inst in self.instances])
        sites, orbit_ids, cos = [], [], []
        for o, inst in enumerate(self.instances):
            k = inst.shape[1]
            if k == 0:
                continue
            srt = np.sort(inst, axis=1)
            degenerate = np.any(srt[:, 1:] == srt[:, :-1], axis=1) if k > 1 else np.zeros(len(inst), bool)
            clean = inst[~degenerate]
            for j in range(k):
                co = -np.ones((len(clean), width), dtype=np.int64)
                co[:, : k - 1] = np.delete(clean, j, axis=1)
                sites.append(clean[:, j])
                orbit_ids.append(np.full(len(clean), o))
                cos.append(co)
            for row in inst[degenerate]:
                uniq, counts = np.unique(row, return_counts=True)
                odd = uniq[counts % 2 == 1]
                for s in odd:
                    co = -np.ones((1, width), dtype=np.int64)
                    others = odd[odd != s]
                    co[0, : len(others)] = others
                    sites.append(np.array([s]))
                    orbit_ids.append(np.array([o]))
                    cos.append(co)
        if sites:
            site_arr = np.concatenate(sites)
            orbit_arr = np.concatenate(orbit_ids)
            co_arr = np.concatenate(cos)
        else:
            site_arr = np.zeros(0, dtype=np.int64)
            orbit_arr = np.zeros(0, dtype=np.int64)
            co_arr = -np.ones((0, width), dtype=np.int64)
        order = np.argsort(site_arr, kind="stable")
        self.orbit = orbit_arr[order].astype(np.int64)
        self.co = np.ascontiguousarray(co_arr[order])
        counts = np.bincount(site_arr, minlength=n_sites)
        self.ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def coefficients(self, eci: np.ndarray) -> np.ndarray:
        return np.asarray(eci, dtype=float)[self.orbit]

    def total_energy(self, sigma: np.ndarray, eci: np.ndarray) -> float:
        s = sigma.astype(np.float64)
        total = 0.0
        for v, inst in zip(eci, self.instances):
            if inst.shape[1] == 0:
                total += v * inst.shape[0]
            else:
                total += v * float(np.prod(s[inst], axis=1).sum())
        return total


class ClusterExpansion:
    """Orbits of a lattice plus their ECIs (optionally temperature dependent)."""

    def __init__(
        self,
        lattice: LatticeSpec,
        orbits: list[ExpandedOrbit],
        eci,
        teci: TEciTable | None = None,
    ):
        self.lattice = lattice
        self.orbits = orbits
        self.eci = np.asarray(eci.values if isinstance(eci, EciTable) else eci, dtype=float)
        if len(self.eci) != len(orbits):
            raise ValueError(f"{len(self.eci)} ECIs for {len(orbits)} cluster orbits")
        if teci is not None and teci.rows.shape[1] != len(orbits):
            raise ValueError("teci rows do not match the number of cluster orbits")
        self.teci = teci
        self._index_cache: dict = {}

    @classmethod
    def from_specs(cls, lattice: LatticeSpec, clusters: list[ClusterOrbitSpec], eci, teci=None, syms=None):
        syms = point_symmetries(lattice) if syms is None else syms
        orbits = [expand_orbit(c, lattice, syms, k) for k, c in enumerate(clusters)]
        return cls(lattice, orbits, eci, teci)

    def with_eci(self, values) -> "ClusterExpansion":
        new = ClusterExpansion(self.lattice, self.orbits, values, self.teci)
        new._index_cache = self._index_cache
        return new

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([o.per_cell_multiplicity for o in self.orbits])

    def index(self, supercell: Supercell) -> SiteClusterIndex:
        key = supercell.repeats
        idx = self._index_cache.get(key)
        if idx is None:
            idx = SiteClusterIndex(self.orbits, supercell)
            self._index_cache[key] = idx
        return idx

    def orbit_of_size(self, size: int) -> list[int]:
        return [k for k, o in enumerate(self.orbits) if o.size == size]


def correlations(config: SpinConfig, ce: ClusterExpansion) -> np.ndarray:
    """Average spin product over all instances of each orbit."""
    idx = ce.index(config.supercell)
    s = config.sigma.astype(np.float64)
    out = np.empty(len(ce.orbits))
    for o, inst in enumerate(idx.instances):
        out[o] = 1.0 if inst.shape[1] == 0 else float(np.prod(s[inst], axis=1).mean())
    return out


def energy_per_site(config: SpinConfig, ce: ClusterExpansion, eci=None) -> float:
    eci = ce.eci if eci is None else np.asarray(eci, dtype=float)
    corr = correlations(config, ce)
    return float(np.sum(ce.multiplicities * eci * corr)) / ce.lattice.n_basis


def delta_grand(config: SpinConfig, site: int, mu_physical: float, ce: ClusterExpansion, eci=None) -> float:
    """Change of ``E_total - mu * sum(sigma)`` when flipping ``site``."""
    idx = ce.index(config.supercell)
    coef = idx.coefficients(ce.eci if eci is None else eci)
    h = kernels.local_field(config.sigma, int(site), idx.ptr, coef, idx.co)
    s = float(config.sigma[site])
    return -2.0 * s * (h - mu_physical)


def eci_at_temperature(ce: ClusterExpansion, T: float) -> np.ndarray:
    """Linear interpolation of temperature-dependent ECIs; clamped at the grid ends."""
    if ce.teci is None:
        return ce.eci.copy()
    t = ce.teci.temperatures
    lo, hi = min(t[0], t[-1]), max(t[0], t[-1])
    if T < lo or T > hi:
        log.warning("T=%g outside the teci grid [%g, %g]; clamping", T, lo, hi)
    order = np.argsort(t)
    rows = ce.teci.rows[order]
    ts = t[order]
    return np.array([np.interp(T, ts, rows[:, j]) for j in range(rows.shape[1])])
