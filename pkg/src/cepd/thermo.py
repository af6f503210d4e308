"""Reference thermodynamics: ground-state hull, chemical-potential conventions,
low/high temperature expansions, exact enumeration and the mean-field
miscibility estimate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .atat_io import LatticeSpec, StructureSpec
from .lattice import (
    IncommensurateError,
    Supercell,
    commensurate_repeats,
    plane_spacings,
    spin_config_from_structure,
    structure_periods,
    supercell_permutations,
)
from .model import ClusterExpansion, SpinConfig, energy_per_site

__all__ = [
    "GroundStateSet",
    "PhiPoint",
    "LTEResult",
    "ground_states",
    "boundary_mus",
    "input_mu_to_physical",
    "physical_mu_to_input",
    "flip_costs",
    "lte_phi",
    "hte_phi",
    "exact_thermo",
    "enumerate_states",
    "boltzmann_weights",
    "mean_field_tmisc",
    "hull_energy",
    "EXACT_MAX_SITES",
]

log = logging.getLogger(__name__)

EXACT_MAX_SITES = 24


@dataclass(eq=False)
class GroundStateSet:
    structures: list[StructureSpec]
    x: np.ndarray
    e: np.ndarray
    configs: list[SpinConfig]  # minimal tiling, large enough for isolated flips

    def __len__(self):
        return len(self.structures)


@dataclass
class PhiPoint:
    T: float
    beta: float
    mu: float
    phi: float
    x: float
    E: float


@dataclass
class LTEResult:
    phi: float
    x: float
    E: float
    valid: bool
    correction: float


def _isolating_supercell(ce: ClusterExpansion, structure: StructureSpec) -> Supercell:
    """Smallest diagonal supercell commensurate with ``structure`` in which no
    cluster contains two periodic images of one site."""
    lattice = ce.lattice
    diam = max([o.diameter for o in ce.orbits] + [0.0])
    d = plane_spacings(lattice)
    reps = [int(np.floor(diam / di + 1e-9)) + 1 for di in d]
    reps = commensurate_repeats(reps, [structure_periods(structure, lattice)])
    return Supercell(lattice, reps)


def ground_states(ce: ClusterExpansion, structures: list[StructureSpec], eci=None) -> GroundStateSet:
    configs, xs, es = [], [], []
    for st in structures:
        sc = _isolating_supercell(ce, st)
        cfg = spin_config_from_structure(st, ce.lattice, sc)
        configs.append(cfg)
        xs.append(cfg.x)
        es.append(energy_per_site(cfg, ce, eci))
    xs = np.array(xs)
    if len(xs) > 1 and np.any(np.diff(xs) <= 0):
        log.warning("ground states are not ordered by increasing concentration: %s", xs)
    return GroundStateSet(list(structures), xs, np.array(es), configs)


def boundary_mus(gs: GroundStateSet) -> np.ndarray:
    """T=0 coexistence chemical potentials between consecutive ground states."""
    if len(gs) < 2:
        raise ValueError("need at least two ground states")
    dx = np.diff(gs.x)
    if np.any(np.abs(dx) < 1e-12):
        raise ValueError("adjacent ground states have the same concentration")
    return np.diff(gs.e) / dx


def input_mu_to_physical(u: float, gs: GroundStateSet) -> float:
    """Map the normalized input chemical potential to physical units.

    With three or more ground states, ``u = k`` is the boundary between
    ground states ``k-1`` and ``k``, linear in between and extrapolated with
    the nearest interior slope.  With two ground states ``u`` is only shifted
    so that ``u = 0`` is their coexistence point.
    """
    knots = boundary_mus(gs)
    if len(knots) == 1:
        return float(knots[0] + u)
    ks = np.arange(1, len(knots) + 1, dtype=float)
    if u <= ks[0]:
        slope = knots[1] - knots[0]
        return float(knots[0] + (u - ks[0]) * slope)
    if u >= ks[-1]:
        slope = knots[-1] - knots[-2]
        return float(knots[-1] + (u - ks[-1]) * slope)
    return float(np.interp(u, ks, knots))


def physical_mu_to_input(mu: float, gs: GroundStateSet) -> float:
    knots = boundary_mus(gs)
    if len(knots) == 1:
        return float(mu - knots[0])
    ks = np.arange(1, len(knots) + 1, dtype=float)
    if mu <= knots[0]:
        return float(ks[0] + (mu - knots[0]) / (knots[1] - knots[0]))
    if mu >= knots[-1]:
        return float(ks[-1] + (mu - knots[-1]) / (knots[-1] - knots[-2]))
    return float(np.interp(mu, knots, ks))


def flip_costs(config: SpinConfig, ce: ClusterExpansion, eci=None) -> tuple[np.ndarray, np.ndarray]:
    """Energy change and spin-sum change for flipping each site separately."""
    idx = ce.index(config.supercell)
    coef = idx.coefficients(ce.eci if eci is None else eci)
    s = config.sigma.astype(np.float64)
    h = np.zeros(config.supercell.n_sites)
    prod = coef.copy()
    for j in range(idx.co.shape[1]):
        c = idx.co[:, j]
        mask = c >= 0
        prod[mask] *= s[c[mask]]
    site_of_entry = np.repeat(np.arange(len(h)), np.diff(idx.ptr))
    np.add.at(h, site_of_entry, prod)
    dE = -2.0 * s * h
    dn = -2.0 * s
    return dE, dn


_perm_cache: dict = {}


def _degeneracy(config: SpinConfig) -> int:
    """Number of distinct symmetry images of ``config`` within its own cell."""
    sc = config.supercell
    key = (id(sc.lattice), sc.repeats)
    perms = _perm_cache.get(key)
    if perms is None:
        perms = _perm_cache[key] = supercell_permutations(sc)
    return len(np.unique(config.sigma[perms], axis=0))


def _tiled(structure: StructureSpec, lattice, supercell: Supercell) -> SpinConfig | None:
    try:
        return spin_config_from_structure(structure, lattice, supercell)
    except IncommensurateError:
        return None


def lte_phi(
    gs_index: int,
    gs: GroundStateSet,
    ce: ClusterExpansion,
    T: float,
    mu_physical: float,
    k_B: float = 1.0,
    ltep: float = 1e-3,
    eci=None,
    supercell: Supercell | None = None,
) -> LTEResult:
    """First-order (single spin flip) low-temperature expansion around a ground state.

    Flip costs are taken in the isolating tiling unless ``supercell`` is
    given, in which case the expansion describes that finite periodic cell.
    A finite cell holds every symmetry image of the ground state, which
    shifts phi by ``-ln(g) / (beta N)``; it also holds the other ground states
    as whole-cell states, and the result is only valid while their Boltzmann
    weight is negligible.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    beta = 1.0 / (k_B * T)
    if supercell is None:
        cfg = gs.configs[gs_index]
    else:
        cfg = spin_config_from_structure(gs.structures[gs_index], ce.lattice, supercell)
    x0 = cfg.x
    e0 = energy_per_site(cfg, ce, eci)
    dE, dn = flip_costs(cfg, ce, eci)
    dphi = dE - mu_physical * dn
    w = np.exp(np.minimum(-beta * dphi, 700.0))
    phi0 = e0 - mu_physical * x0
    correction = float(np.mean(w)) / beta
    phi = phi0 - correction
    if supercell is not None:
        phi -= math.log(_degeneracy(cfg)) / (beta * supercell.n_sites)
    x = x0 + float(np.mean(dn * w))
    ebar = phi0 + float(np.mean(dphi * w))
    E = ebar + mu_physical * x
    valid = bool(np.all(dphi > 0) and correction < ltep)
    if supercell is not None and valid:
        n = supercell.n_sites
        rival = 0.0
        for j, st in enumerate(gs.structures):
            other = _tiled(st, ce.lattice, supercell) if j != gs_index else None
            if other is not None:
                gap = energy_per_site(other, ce, eci) - mu_physical * other.x - phi0
                rival += _degeneracy(other) * math.exp(min(700.0, -beta * n * gap))
        valid = rival < ltep
    return LTEResult(phi, x, E, valid, correction)


def hte_phi(ce: ClusterExpansion, T: float, mu_physical: float, k_B: float = 1.0, eci=None) -> float:
    """Point-term high-temperature expansion (multi-site orbits ignored)."""
    if T <= 0:
        raise ValueError("T must be positive")
    beta = 1.0 / (k_B * T)
    eci = ce.eci if eci is None else np.asarray(eci)
    nb = ce.lattice.n_basis
    const = sum(eci[k] * o.per_cell_multiplicity for k, o in enumerate(ce.orbits) if o.size == 0) / nb
    field = np.zeros(nb)
    for k, o in enumerate(ce.orbits):
        if o.size == 1:
            for member in o.members:
                field[member[0][3]] += eci[k]
    a = beta * (mu_physical - field)
    # ln(2 cosh a) = |a| + log1p(exp(-2|a|))
    lncosh2 = np.abs(a) + np.log1p(np.exp(-2.0 * np.abs(a)))
    return float(const - np.mean(lncosh2) / beta)


_state_cache: dict = {}


def enumerate_states(ce: ClusterExpansion, supercell: Supercell, eci=None) -> tuple[np.ndarray, np.ndarray]:
    """Energy per site and x for every configuration; index bit j = site j up."""
    n = supercell.n_sites
    if n > EXACT_MAX_SITES:
        raise ValueError(f"exact enumeration refused for {n} > {EXACT_MAX_SITES} sites")
    eci = ce.eci if eci is None else np.asarray(eci, dtype=float)
    key = (id(ce.orbits), supercell.repeats, eci.tobytes())
    hit = _state_cache.get(key)
    if hit is not None:
        return hit
    idx = ce.index(supercell)
    total = 1 << n
    E = np.empty(total)
    X = np.empty(total)
    bits = np.arange(n, dtype=np.int64)
    chunk = 1 << 15
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk), dtype=np.int64)
        s = (((codes[:, None] >> bits) & 1) * 2 - 1).astype(np.float64)
        et = np.zeros(len(codes))
        for v, inst in zip(eci, idx.instances):
            if inst.shape[1] == 0:
                et += v * inst.shape[0]
            elif v != 0.0:
                et += v * np.prod(s[:, inst], axis=2).sum(axis=1)
        E[start : start + len(codes)] = et / n
        X[start : start + len(codes)] = s.mean(axis=1)
    _state_cache[key] = (E, X)
    return E, X


def boltzmann_weights(ce, supercell, T, mu_physical, k_B=1.0, eci=None) -> np.ndarray:
    E, X = enumerate_states(ce, supercell, eci)
    n = supercell.n_sites
    a = -(n / (k_B * T)) * (E - mu_physical * X)
    return np.exp(a - logsumexp(a))


def exact_thermo(ce, supercell, T, mu_physical, k_B=1.0, eci=None) -> PhiPoint:
    """Exact grand potential per site, <x> and <E> by full enumeration."""
    if T <= 0:
        raise ValueError("T must be positive")
    E, X = enumerate_states(ce, supercell, eci)
    n = supercell.n_sites
    beta = 1.0 / (k_B * T)
    a = -beta * n * (E - mu_physical * X)
    lz = logsumexp(a)
    p = np.exp(a - lz)
    phi = -lz / (beta * n)
    return PhiPoint(T, beta, mu_physical, float(phi), float(p @ X), float(p @ E))


def mean_field_tmisc(ce: ClusterExpansion, z: int, k_B: float = 1.0, eci=None) -> float:
    """Regular-solution estimate ``0.8 * Omega / (2 k_B)`` from the nearest-neighbour pair ECI."""
    if z <= 0:
        raise ValueError("coordination number must be positive")
    eci = ce.eci if eci is None else np.asarray(eci)
    pairs = ce.orbit_of_size(2)
    if not pairs:
        raise ValueError("no pair cluster in the expansion")
    nn = min(pairs, key=lambda k: ce.orbits[k].diameter)
    v = eci[nn]
    e_aa = e_bb = v
    e_ab = -v
    omega = -(z / 2.0) * (e_aa + e_bb - 2.0 * e_ab)
    return 0.8 * omega / (2.0 * k_B)


def hull_energy(gs: GroundStateSet, x: float) -> float:
    """Lower convex hull of the declared ground states evaluated at ``x``."""
    pts = sorted(zip(gs.x, gs.e))
    hull: list[tuple[float, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    hx = np.array([h[0] for h in hull])
    hy = np.array([h[1] for h in hull])
    if x < hx[0] - 1e-12 or x > hx[-1] + 1e-12:
        raise ValueError("x outside the range of declared ground states")
    return float(np.interp(x, hx, hy))
