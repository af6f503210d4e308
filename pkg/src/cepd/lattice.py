"""Lattice geometry: symmetry operations, cluster orbits and supercells."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .atat_io import POSITION_TOL, ClusterOrbitSpec, LatticeSpec, StructureSpec

__all__ = [
    "SymOp",
    "Supercell",
    "ExpandedOrbit",
    "IncommensurateError",
    "point_symmetries",
    "expand_orbit",
    "generate_clusters",
    "build_supercell",
    "plane_spacings",
    "structure_periods",
    "commensurate_repeats",
    "spin_config_from_structure",
    "random_config",
    "supercell_permutations",
]

log = logging.getLogger(__name__)

Site = tuple[int, int, int, int]  # (n1, n2, n3, basis)


class IncommensurateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SymOp:
    """Cartesian operation ``p -> rotation @ p + translation``.

    ``W`` is the same rotation acting on lattice (fractional) coordinates.
    """

    rotation: np.ndarray
    translation: np.ndarray
    W: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


class _Geometry:
    """Cartesian helpers for one lattice, shared by all routines below."""

    def __init__(self, lattice: LatticeSpec):
        self.lattice = lattice
        self.A = lattice.cartesian_cell
        self.Ainv = np.linalg.inv(self.A)
        self.sites = lattice.cartesian_sites
        self.frac_sites = self.sites @ self.Ainv
        self.species = [s.species for s in lattice.sites]
        # tolerance is quoted in frame units; convert to a Cartesian length
        self.tol = POSITION_TOL * float(np.abs(lattice.frame.matrix).max())

    def locate(self, points: np.ndarray) -> list[Site] | None:
        """Map Cartesian points to (cell offset, basis index); None if any is off-lattice."""
        out = []
        for p in np.atleast_2d(points):
            f = p @ self.Ainv
            hit = None
            for b, fb in enumerate(self.frac_sites):
                d = f - fb
                n = np.rint(d)
                if np.linalg.norm((d - n) @ self.A) < self.tol:
                    hit = (int(n[0]), int(n[1]), int(n[2]), b)
                    break
            if hit is None:
                return None
            out.append(hit)
        return out

    def cart(self, sites) -> np.ndarray:
        arr = np.array(sites, dtype=float).reshape(-1, 4)
        return arr[:, :3] @ self.A + self.sites[arr[:, 3].astype(int)]


def _lattice_vectors_within(A: np.ndarray, rmax: float) -> np.ndarray:
    d = plane_spacings_from_cart(A)
    k = np.ceil(rmax / d).astype(int) + 1
    rng = [np.arange(-ki, ki + 1) for ki in k]
    n = np.array(np.meshgrid(*rng, indexing="ij")).reshape(3, -1).T
    v = n @ A
    keep = np.linalg.norm(v, axis=1) <= rmax + 1e-9
    return n[keep]


def plane_spacings_from_cart(A: np.ndarray) -> np.ndarray:
    vol = abs(np.linalg.det(A))
    return np.array(
        [vol / np.linalg.norm(np.cross(A[(i + 1) % 3], A[(i + 2) % 3])) for i in range(3)]
    )


def plane_spacings(lattice: LatticeSpec) -> np.ndarray:
    """Perpendicular distance between lattice planes, one per cell axis."""
    return plane_spacings_from_cart(lattice.cartesian_cell)


def point_symmetries(lattice: LatticeSpec) -> list[SymOp]:
    """Factor group of the decorated lattice.

    Candidate rotations map each cell vector onto a lattice vector of the
    same length while keeping all pairwise dot products; the survivors are
    then combined with every translation that maps the basis (with its
    species lists) onto itself.
    """
    g = _Geometry(lattice)
    A = g.A
    lengths = np.linalg.norm(A, axis=1)
    metric = A @ A.T
    scale = max(1.0, lengths.max())
    tol = 1e-6 * scale * scale

    ns = _lattice_vectors_within(A, lengths.max())
    vs = ns @ A
    norms2 = np.einsum("ij,ij->i", vs, vs)
    cands = [np.nonzero(np.abs(norms2 - lengths[i] ** 2) < tol)[0] for i in range(3)]

    Ainv_T = np.linalg.inv(A.T)
    ops: list[SymOp] = []
    seen = set()
    for i0 in cands[0]:
        for i1 in cands[1]:
            if abs(vs[i0] @ vs[i1] - metric[0, 1]) > tol:
                continue
            for i2 in cands[2]:
                if abs(vs[i0] @ vs[i2] - metric[0, 2]) > tol or abs(vs[i1] @ vs[i2] - metric[1, 2]) > tol:
                    continue
                W = np.array([ns[i0], ns[i1], ns[i2]])
                if round(abs(np.linalg.det(W))) != 1:
                    continue
                V = W @ A
                R = V.T @ Ainv_T
                if not np.allclose(R.T @ R, np.eye(3), atol=1e-8):
                    continue
                for t in _basis_translations(g, R):
                    tf = np.mod(t @ g.Ainv, 1.0)
                    tf[np.isclose(tf, 1.0, atol=1e-6)] = 0.0
                    key = (tuple(W.ravel()), tuple(np.round(tf, 5)))
                    if key in seen:
                        continue
                    seen.add(key)
                    ops.append(SymOp(R, tf @ A, W))
    return ops


def _basis_translations(g: _Geometry, R: np.ndarray):
    rotated = g.sites @ R.T
    for b, sp in enumerate(g.species):
        if sp != g.species[0]:
            continue
        t = g.sites[b] - rotated[0]
        ok = True
        for k in range(len(g.sites)):
            hit = g.locate(rotated[k] + t)
            if hit is None or g.species[hit[0][3]] != g.species[k]:
                ok = False
                break
        if ok:
            yield t


def _canonical(sites: list[Site]) -> tuple[Site, ...]:
    """Translation-canonical form: smallest sorted tuple over anchor choices."""
    best = None
    for anchor in sites:
        shifted = tuple(
            sorted((s[0] - anchor[0], s[1] - anchor[1], s[2] - anchor[2], s[3]) for s in sites)
        )
        if best is None or shifted < best:
            best = shifted
    return best if best is not None else ()


@dataclass(eq=False)
class ExpandedOrbit:
    """All symmetry-equivalent clusters of one orbit, one entry per distinct
    cluster per primitive cell (translations removed)."""

    orbit_id: int
    members: list[tuple[Site, ...]]
    diameter: float
    stated_multiplicity: int | None = None

    @property
    def per_cell_multiplicity(self) -> int:
        return len(self.members)

    @property
    def size(self) -> int:
        return len(self.members[0]) if self.members else 0


def _orbit_members(g: _Geometry, sites: list[Site], syms: list[SymOp]) -> list[tuple[Site, ...]]:
    pts = g.cart(sites)
    members = set()
    for op in syms:
        img = g.locate(op.apply(pts))
        if img is None:
            raise ValueError("symmetry operation maps a cluster point off the lattice")
        members.add(_canonical(img))
    return sorted(members)


def expand_orbit(
    orbit: ClusterOrbitSpec, lattice: LatticeSpec, syms: list[SymOp], orbit_id: int = 0
) -> ExpandedOrbit:
    """Expand an orbit representative into its per-cell member clusters."""
    if orbit.size == 0:
        return ExpandedOrbit(orbit_id, [()], 0.0, orbit.stated_multiplicity)
    g = _Geometry(lattice)
    cart = orbit.points @ lattice.frame.matrix
    sites = g.locate(cart)
    if sites is None:
        raise ValueError(f"cluster {orbit_id}: point does not lie on a lattice site")
    if len(set(sites)) != len(sites):
        raise ValueError(f"cluster {orbit_id}: repeated point")
    members = _orbit_members(g, sites, syms)
    diam = _diameter(cart)
    if orbit.stated_multiplicity is not None and orbit.stated_multiplicity != len(members):
        log.warning(
            "cluster %d: file states multiplicity %d, recomputed %d per cell",
            orbit_id,
            orbit.stated_multiplicity,
            len(members),
        )
    return ExpandedOrbit(orbit_id, members, diam, orbit.stated_multiplicity)


def _diameter(cart: np.ndarray) -> float:
    if len(cart) < 2:
        return 0.0
    d = np.linalg.norm(cart[:, None, :] - cart[None, :, :], axis=-1)
    return float(d.max())


def generate_clusters(
    lattice: LatticeSpec, max_diameter_per_size: dict[int, float], syms: list[SymOp] | None = None
) -> list[ClusterOrbitSpec]:
    """Enumerate orbit representatives up to the given diameter per cluster size.

    Empty and point clusters are always included.  Output is sorted by
    (size, diameter); ``stated_multiplicity`` holds the per-cell count.
    """
    if syms is None:
        syms = point_symmetries(lattice)
    g = _Geometry(lattice)
    finv = np.linalg.inv(lattice.frame.matrix)

    found: dict[tuple, tuple[int, float, tuple[Site, ...]]] = {}

    def orbit_key(sites):
        pts = g.cart(sites)
        best = None
        for op in syms:
            c = _canonical(g.locate(op.apply(pts)))
            if best is None or c < best:
                best = c
        return best

    # points: one orbit per inequivalent basis site
    for b in range(lattice.n_basis):
        key = orbit_key([(0, 0, 0, b)])
        if key not in found:
            found[key] = (1, 0.0, ((0, 0, 0, b),))

    rmax = max([r for k, r in max_diameter_per_size.items() if k >= 2] + [0.0])
    if rmax > 0:
        ns = _lattice_vectors_within(g.A, rmax + 2 * np.linalg.norm(g.sites, axis=1).max() + 1e-9)
        cand = [
            (int(n[0]), int(n[1]), int(n[2]), b) for n in ns for b in range(lattice.n_basis)
        ]
        cand_cart = g.cart(cand)
        for size in sorted(k for k in max_diameter_per_size if k >= 2):
            cut = max_diameter_per_size[size] + 1e-9
            for b0 in range(lattice.n_basis):
                origin = g.sites[b0]
                near = [
                    i
                    for i in range(len(cand))
                    if 1e-9 < np.linalg.norm(cand_cart[i] - origin) <= cut
                ]
                for combo in itertools.combinations(near, size - 1):
                    pts = np.vstack([origin, cand_cart[list(combo)]])
                    diam = _diameter(pts)
                    if diam > cut:
                        continue
                    sites = [(0, 0, 0, b0)] + [cand[i] for i in combo]
                    key = orbit_key(sites)
                    if key not in found:
                        found[key] = (size, diam, tuple(sites))

    specs = []
    for key, (size, diam, sites) in sorted(found.items(), key=lambda kv: (kv[1][0], round(kv[1][1], 6), kv[0])):
        pts_frame = g.cart(list(sites)) @ finv
        m = len(_orbit_members(g, list(sites), syms))
        specs.append(ClusterOrbitSpec(m, diam, pts_frame))
    empty = ClusterOrbitSpec(1, 0.0, np.zeros((0, 3)))
    return [empty] + specs


# ----------------------------------------------------------------------
# supercells


class Supercell:
    """Diagonal ``n1 x n2 x n3`` supercell of a lattice.

    Sites are numbered ``((i1 * n2 + i2) * n3 + i3) * n_basis + b``.
    """

    def __init__(self, lattice: LatticeSpec, repeats):
        self.lattice = lattice
        self.repeats = tuple(int(r) for r in repeats)
        if min(self.repeats) < 1:
            raise ValueError("supercell repeats must be positive")
        self.n_basis = lattice.n_basis
        self.n_cells = int(np.prod(self.repeats))
        self.n_sites = self.n_cells * self.n_basis

    def __repr__(self):
        return f"Supercell(repeats={self.repeats}, n_sites={self.n_sites})"

    def index(self, offsets: np.ndarray, basis: np.ndarray) -> np.ndarray:
        n1, n2, n3 = self.repeats
        o = np.asarray(offsets)
        i1 = np.mod(o[..., 0], n1)
        i2 = np.mod(o[..., 1], n2)
        i3 = np.mod(o[..., 2], n3)
        return ((i1 * n2 + i2) * n3 + i3) * self.n_basis + np.asarray(basis)

    @cached_property
    def cell_offsets(self) -> np.ndarray:
        n1, n2, n3 = self.repeats
        return np.array(np.meshgrid(np.arange(n1), np.arange(n2), np.arange(n3), indexing="ij")).reshape(3, -1).T

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.repeat(self.cell_offsets, self.n_basis, axis=0)

    @cached_property
    def basis_index(self) -> np.ndarray:
        return np.tile(np.arange(self.n_basis), self.n_cells)

    @cached_property
    def cartesian_positions(self) -> np.ndarray:
        A = self.lattice.cartesian_cell
        return self.offsets @ A + self.lattice.cartesian_sites[self.basis_index]


def build_supercell(lattice: LatticeSpec, er: float) -> Supercell:
    """Smallest diagonal supercell whose periodic box inscribes a sphere of radius ``er``."""
    if er <= 0:
        raise ValueError("er must be positive")
    d = plane_spacings(lattice)
    reps = [max(1, math.ceil(2.0 * er / di - 1e-9)) for di in d]
    return Supercell(lattice, reps)


def structure_periods(structure: StructureSpec, lattice: LatticeSpec, max_period: int = 64) -> tuple[int, int, int]:
    """Smallest p_i with p_i * a_i a translation of the structure."""
    S = structure.cartesian_cell
    Sinv = np.linalg.inv(S)
    A = lattice.cartesian_cell
    _check_structure_cell(structure, lattice)
    out = []
    for i in range(3):
        for p in range(1, max_period + 1):
            c = (p * A[i]) @ Sinv
            if np.allclose(c, np.rint(c), atol=1e-6):
                out.append(p)
                break
        else:
            raise IncommensurateError(f"no period along cell axis {i} up to {max_period}")
    return tuple(out)


def commensurate_repeats(repeats, periods_list) -> tuple[int, int, int]:
    """Round each repeat up to a multiple of every structure period."""
    out = []
    for i, n in enumerate(repeats):
        m = 1
        for per in periods_list:
            m = m * per[i] // math.gcd(m, per[i])
        out.append(int(math.ceil(n / m) * m))
    return tuple(out)


def _check_structure_cell(structure: StructureSpec, lattice: LatticeSpec):
    S = structure.cartesian_cell
    c = S @ np.linalg.inv(lattice.cartesian_cell)
    if not np.allclose(c, np.rint(c), atol=1e-6):
        raise IncommensurateError("structure cell vectors are not lattice translations")


def spin_config_from_structure(structure: StructureSpec, lattice: LatticeSpec, supercell: Supercell):
    """Tile a structure over the supercell; first-listed species -> -1."""
    from .model import SpinConfig

    _check_structure_cell(structure, lattice)
    S = structure.cartesian_cell
    Sinv = np.linalg.inv(S)
    big = np.asarray(supercell.repeats)[:, None] * lattice.cartesian_cell
    c = big @ Sinv
    if not np.allclose(c, np.rint(c), atol=1e-6):
        raise IncommensurateError(
            f"supercell {supercell.repeats} is not a multiple of the structure periodicity"
        )
    site_f = supercell.cartesian_positions @ Sinv
    atom_f = structure.cartesian_positions @ Sinv
    diff = site_f[:, None, :] - atom_f[None, :, :]
    resid = np.linalg.norm((diff - np.rint(diff)) @ S, axis=-1)
    g = _Geometry(lattice)
    match = resid < g.tol
    if not match.any(axis=1).all():
        raise IncommensurateError("structure leaves lattice sites unoccupied")
    which = match.argmax(axis=1)
    sigma = np.empty(supercell.n_sites, dtype=np.int8)
    bidx = supercell.basis_index
    for k in range(supercell.n_sites):
        name = structure.atoms[which[k]].species
        species = lattice.sites[bidx[k]].species
        if name not in species:
            raise ValueError(f"species {name!r} not allowed on lattice site {bidx[k]} {species}")
        sigma[k] = -1 if species.index(name) == 0 else 1
    return SpinConfig(sigma, supercell)


def supercell_permutations(supercell: Supercell, syms: list[SymOp] | None = None) -> np.ndarray:
    """Site permutations of ``supercell`` under its translations and the
    lattice symmetries that keep the supercell periodicity.

    Row ``k`` maps site ``i`` to site ``perm[k, i]``.
    """
    lattice = supercell.lattice
    g = _Geometry(lattice)
    syms = point_symmetries(lattice) if syms is None else syms
    D = np.diag(supercell.repeats).astype(float)
    pos = supercell.cartesian_positions
    base = []
    for op in syms:
        # supercell vectors (rows of D in lattice coordinates) must map onto themselves
        M = D @ op.W @ np.linalg.inv(D)
        if not np.allclose(M, np.rint(M), atol=1e-8):
            continue
        hits = g.locate(op.apply(pos))
        if hits is None:
            continue
        h = np.array(hits)
        base.append(supercell.index(h[:, :3], h[:, 3]))
    perms = []
    for t in supercell.cell_offsets:
        shifted = supercell.index(supercell.offsets + t, supercell.basis_index)
        perms.extend(shifted[b] for b in base)
    return np.unique(np.array(perms), axis=0)


def random_config(supercell: Supercell, x: float, rng: np.random.Generator):
    """Random configuration with ``round(N (x+1)/2)`` spins up."""
    from .model import SpinConfig

    if not -1.0 <= x <= 1.0:
        raise ValueError("x must lie in [-1, 1]")
    n = supercell.n_sites
    n_up = int(round(n * (x + 1.0) / 2.0))
    sigma = -np.ones(n, dtype=np.int8)
    sigma[rng.permutation(n)[:n_up]] = 1
    return SpinConfig(sigma, supercell)
