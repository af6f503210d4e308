"""Readers and writers for ATAT-style text files and the output tables.

Coordinates in every file are given in units of the coordinate frame
declared in the file header (either ``a b c alpha beta gamma`` or three
rows of a Cartesian matrix).  Species order on a lattice site is kept
exactly as written; the first species maps to spin -1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ParseError",
    "CoordFrame",
    "LatticeSite",
    "LatticeSpec",
    "Atom",
    "StructureSpec",
    "ClusterOrbitSpec",
    "EciTable",
    "TEciTable",
    "parse_lattice",
    "parse_structures",
    "parse_clusters",
    "parse_eci",
    "parse_teci",
    "format_structures",
    "format_clusters",
    "format_teci",
    "write_snapshot",
    "format_table",
    "parse_table",
    "SCAN_COLUMNS",
    "BOUNDARY_COLUMNS",
]

POSITION_TOL = 1e-5


class ParseError(ValueError):
    """Malformed input file; ``lineno`` is 1-based when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(eq=False)
class CoordFrame:
    """Coordinate frame; rows of ``matrix`` are the Cartesian frame axes."""

    matrix: np.ndarray
    lengths_angles: tuple[float, ...] | None = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        if abs(np.linalg.det(self.matrix)) < 1e-12:
            raise ValueError("coordinate frame matrix is singular")

    @classmethod
    def from_lengths_angles(cls, a, b, c, alpha, beta, gamma) -> "CoordFrame":
        if min(a, b, c) <= 0:
            raise ValueError("frame lengths must be positive")
        for ang in (alpha, beta, gamma):
            if not 0.0 < ang < 180.0:
                raise ValueError("frame angles must lie in (0, 180) degrees")
        ca, cb, cg = (math.cos(math.radians(t)) for t in (alpha, beta, gamma))
        sg = math.sin(math.radians(gamma))
        cy = c * (ca - cb * cg) / sg
        cz2 = c * c - (c * cb) ** 2 - cy * cy
        if cz2 <= 0:
            raise ValueError("frame angles do not describe a valid cell")
        m = np.array(
            [[a, 0.0, 0.0], [b * cg, b * sg, 0.0], [c * cb, cy, math.sqrt(cz2)]]
        )
        m[np.abs(m) < 1e-12] = 0.0
        return cls(m, (a, b, c, alpha, beta, gamma))

    def __eq__(self, other):
        if not isinstance(other, CoordFrame):
            return NotImplemented
        return bool(np.allclose(self.matrix, other.matrix, atol=1e-9))


@dataclass(eq=False)
class LatticeSite:
    position: np.ndarray  # frame units
    species: tuple[str, ...]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.species = tuple(self.species)


@dataclass(eq=False)
class LatticeSpec:
    frame: CoordFrame
    cell: np.ndarray  # rows, frame units
    sites: list[LatticeSite]

    def __post_init__(self):
        self.cell = np.asarray(self.cell, dtype=float).reshape(3, 3)

    @property
    def cartesian_cell(self) -> np.ndarray:
        return self.cell @ self.frame.matrix

    @property
    def cartesian_sites(self) -> np.ndarray:
        return np.array([s.position for s in self.sites]) @ self.frame.matrix

    @property
    def n_basis(self) -> int:
        return len(self.sites)


@dataclass(eq=False)
class Atom:
    position: np.ndarray  # frame units
    species: str

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)


@dataclass(eq=False)
class StructureSpec:
    frame: CoordFrame
    cell: np.ndarray
    atoms: list[Atom]

    def __post_init__(self):
        self.cell = np.asarray(self.cell, dtype=float).reshape(3, 3)

    @property
    def cartesian_cell(self) -> np.ndarray:
        return self.cell @ self.frame.matrix

    @property
    def cartesian_positions(self) -> np.ndarray:
        return np.array([a.position for a in self.atoms]).reshape(-1, 3) @ self.frame.matrix


@dataclass(eq=False)
class ClusterOrbitSpec:
    """One orbit representative as listed in ``clusters.out``.

    ``stated_multiplicity`` is informational only; the lattice code recomputes it.
    """

    stated_multiplicity: int
    diameter: float
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)

    @property
    def size(self) -> int:
        return len(self.points)


@dataclass(eq=False)
class EciTable:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)

    def __len__(self):
        return len(self.values)


@dataclass(eq=False)
class TEciTable:
    t_start: float
    count: int
    t_step: float
    rows: np.ndarray  # (count, n_clusters)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.count < 2:
            raise ValueError("temperature grid needs at least two points")
        if self.rows.ndim != 2 or self.rows.shape[0] != self.count:
            raise ValueError("teci row count does not match the temperature grid")

    @property
    def temperatures(self) -> np.ndarray:
        return self.t_start + self.t_step * np.arange(self.count)


# ----------------------------------------------------------------------
# parsing helpers


def _numbered_lines(text: str) -> list[tuple[int, str]]:
    return [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]


def _floats(tokens: Sequence[str], lineno: int) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected numbers, got {' '.join(tokens)!r}", lineno) from None


def _read_frame_and_cell(lines, pos):
    """Consume a frame header and three cell rows starting at ``lines[pos]``."""
    lineno, first = lines[pos]
    tokens = first.split()
    if len(tokens) == 6:
        vals = _floats(tokens, lineno)
        try:
            frame = CoordFrame.from_lengths_angles(*vals)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        pos += 1
    elif len(tokens) == 3:
        rows = []
        for k in range(3):
            if pos + k >= len(lines):
                raise ParseError("truncated coordinate frame", lineno)
            ln, txt = lines[pos + k]
            toks = txt.split()
            if len(toks) != 3:
                raise ParseError(f"frame row needs 3 numbers, got {len(toks)}", ln)
            rows.append(_floats(toks, ln))
        try:
            frame = CoordFrame(np.array(rows))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        pos += 3
    else:
        raise ParseError(f"frame header needs 3 or 6 numbers, got {len(tokens)}", lineno)

    cell = []
    for k in range(3):
        if pos + k >= len(lines):
            raise ParseError("truncated cell vectors", lines[-1][0])
        ln, txt = lines[pos + k]
        toks = txt.split()
        if len(toks) != 3:
            raise ParseError(f"cell row needs 3 numbers, got {len(toks)}", ln)
        cell.append(_floats(toks, ln))
    cell = np.array(cell)
    if abs(np.linalg.det(cell)) < 1e-12:
        raise ParseError("cell vectors are linearly dependent", lines[pos][0])
    return frame, cell, pos + 3


def parse_lattice(text: str) -> LatticeSpec:
    """Parse a ``lat.in`` file."""
    lines = [(n, s) for n, s in _numbered_lines(text) if s]
    if not lines:
        raise ParseError("empty lattice file")
    frame, cell, pos = _read_frame_and_cell(lines, 0)
    sites = []
    for lineno, txt in lines[pos:]:
        toks = txt.split(None, 3)
        if len(toks) < 4:
            raise ParseError("site line needs 3 coordinates and a species list", lineno)
        xyz = _floats(toks[:3], lineno)
        species = tuple(s.strip() for s in toks[3].split(",") if s.strip())
        if not species:
            raise ParseError("empty species list", lineno)
        sites.append(LatticeSite(np.array(xyz), species))
    if not sites:
        raise ParseError("lattice has no sites", lines[-1][0])
    return LatticeSpec(frame, cell, sites)


def parse_structures(text: str) -> list[StructureSpec]:
    """Parse ``gs_str.out``-style text: structure blocks each terminated by ``end``."""
    lines = [(n, s) for n, s in _numbered_lines(text) if s]
    out = []
    pos = 0
    while pos < len(lines):
        frame, cell, pos = _read_frame_and_cell(lines, pos)
        atoms = []
        while True:
            if pos >= len(lines):
                raise ParseError("structure block is missing 'end'", lines[-1][0])
            lineno, txt = lines[pos]
            pos += 1
            if txt.lower() == "end":
                break
            toks = txt.split()
            if len(toks) != 4:
                raise ParseError(f"atom line needs 4 tokens, got {len(toks)}", lineno)
            atoms.append(Atom(np.array(_floats(toks[:3], lineno)), toks[3]))
        out.append(StructureSpec(frame, cell, atoms))
    if not out:
        raise ParseError("no structure found")
    return out


def parse_clusters(text: str) -> list[ClusterOrbitSpec]:
    """Parse ``clusters.out``: multiplicity, diameter, point count, coordinates."""
    blocks: list[list[tuple[int, str]]] = [[]]
    for lineno, txt in _numbered_lines(text):
        if txt:
            blocks[-1].append((lineno, txt))
        elif blocks[-1]:
            blocks.append([])
    blocks = [b for b in blocks if b]
    if not blocks:
        raise ParseError("empty cluster file")

    out = []
    for block in blocks:
        if len(block) < 3:
            raise ParseError("cluster block needs multiplicity, diameter and point count", block[0][0])
        try:
            mult = int(float(block[0][1]))
            diameter = float(block[1][1])
            npts = int(block[2][1])
        except ValueError:
            raise ParseError("malformed cluster header", block[0][0]) from None
        coords = block[3:]
        if len(coords) != npts:
            raise ParseError(f"expected {npts} coordinate lines, found {len(coords)}", block[0][0])
        pts = []
        for lineno, txt in coords:
            toks = txt.split()
            if len(toks) < 3:
                raise ParseError("coordinate line needs 3 numbers", lineno)
            pts.append(_floats(toks[:3], lineno))
        out.append(ClusterOrbitSpec(mult, diameter, np.array(pts).reshape(-1, 3)))
    return out


def _all_numbers(text: str) -> list[tuple[int, float]]:
    vals = []
    for lineno, txt in _numbered_lines(text):
        for tok in txt.split():
            try:
                vals.append((lineno, float(tok)))
            except ValueError:
                raise ParseError(f"non-numeric token {tok!r}", lineno) from None
    return vals


def parse_eci(text: str, n_clusters: int | None = None) -> EciTable:
    vals = _all_numbers(text)
    if not vals:
        raise ParseError("empty ECI file")
    if n_clusters is not None and len(vals) != n_clusters:
        raise ParseError(f"{len(vals)} ECIs for {n_clusters} clusters")
    return EciTable(np.array([v for _, v in vals]))


def parse_teci(
    text: str,
    t_grid: tuple[float, int, float] | None = None,
    n_clusters: int | None = None,
) -> TEciTable:
    """Parse temperature-dependent ECIs.

    Layout: an optional header ``T_start count T_step`` followed by ``count``
    blocks of ``n_clusters`` values.  Without a header, ``t_grid`` must be given.
    """
    lines = [(n, s) for n, s in _numbered_lines(text) if s]
    if not lines:
        raise ParseError("empty teci file")
    header = None
    first = lines[0][1].split()
    if len(first) == 3:
        h = _floats(first, lines[0][0])
        header = (h[0], int(round(h[1])), h[2])
        lines = lines[1:]
    if header is None and t_grid is None:
        raise ParseError("teci file has no temperature header and no grid was supplied", 1)
    if header is not None and t_grid is not None:
        if (
            int(t_grid[1]) != header[1]
            or not math.isclose(t_grid[0], header[0])
            or not math.isclose(t_grid[2], header[2])
        ):
            raise ParseError("teci header disagrees with the supplied temperature grid", 1)
    t_start, count, t_step = header if header is not None else (float(t_grid[0]), int(t_grid[1]), float(t_grid[2]))
    vals = _all_numbers("\n".join(s for _, s in lines))
    if count < 2:
        raise ParseError("temperature grid needs at least two points", 1)
    if n_clusters is None:
        if len(vals) % count:
            raise ParseError(f"{len(vals)} values do not split into {count} temperature rows")
        n_clusters = len(vals) // count
    if len(vals) != count * n_clusters:
        raise ParseError(f"expected {count}x{n_clusters} values, found {len(vals)}")
    rows = np.array([v for _, v in vals]).reshape(count, n_clusters)
    return TEciTable(t_start, count, t_step, rows)


# ----------------------------------------------------------------------
# writers


def _fmt3(v) -> str:
    return " ".join(f"{float(c):.6f}" for c in v)


def format_structures(structures: Iterable[StructureSpec]) -> str:
    blocks = []
    for st in structures:
        lines = [_fmt3(r) for r in st.frame.matrix]
        lines += [_fmt3(r) for r in st.cell]
        lines += [f"{_fmt3(a.position)} {a.species}" for a in st.atoms]
        lines.append("end")
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def format_clusters(clusters: Iterable[ClusterOrbitSpec]) -> str:
    blocks = []
    for c in clusters:
        lines = [str(int(c.stated_multiplicity)), f"{c.diameter:.6f}", str(c.size)]
        lines += [_fmt3(p) for p in c.points]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def format_teci(table: TEciTable) -> str:
    lines = [f"{table.t_start!r} {table.count} {table.t_step!r}"]
    for row in table.rows:
        lines.extend(repr(float(v)) for v in row)
    return "\n".join(lines) + "\n"


def write_snapshot(config, supercell, lattice: LatticeSpec) -> str:
    """Emit a configuration as one ``gs_str.out``-style structure block."""
    sigma = np.asarray(config.sigma if hasattr(config, "sigma") else config)
    reps = np.asarray(supercell.repeats)
    cell = lattice.cell * reps[:, None]
    basis = np.array([s.position for s in lattice.sites])
    offsets = supercell.offsets  # (N, 3) integer cell offsets
    bidx = supercell.basis_index
    pos = basis[bidx] + offsets @ lattice.cell
    atoms = []
    for k in range(len(sigma)):
        species = lattice.sites[bidx[k]].species
        name = species[0] if sigma[k] < 0 else species[1 if len(species) > 1 else 0]
        atoms.append(Atom(pos[k], name))
    frame = CoordFrame(lattice.frame.matrix)
    return format_structures([StructureSpec(frame, cell, atoms)])


SCAN_COLUMNS = ("T", "mu", "E", "x", "phi", "stderr_x", "n_eq", "n_avg")
BOUNDARY_COLUMNS = ("T", "mu", "x1", "x2", "E1", "E2")


def _row_values(row, mode: str) -> tuple[list[float], str | None]:
    if mode == "scan":
        E = row.E if getattr(row, "g2c", False) else row.E - row.mu * row.x
        vals = [row.T, row.mu, E, row.x, row.phi, row.stderr_x, row.n_eq, row.n_avg]
    elif mode == "boundary":
        vals = [row.T, row.mu, row.x1, row.x2, row.E1, row.E2]
    else:
        raise ValueError(f"unknown table mode {mode!r}")
    return [float(v) for v in vals], getattr(row, "flag", None)


def format_table(rows, mode: str = "scan") -> str:
    """Tab-separated table with six decimals per column.

    Scan rows report ``E - mu*x`` in the energy column unless the row carries
    ``g2c=True``.  Flagged rows get a trailing ``# reason`` comment so that
    plotting tools skip nothing but readers can filter.
    """
    out = []
    for row in rows:
        vals, flag = _row_values(row, mode)
        line = "\t".join(f"{v:.6f}" for v in vals)
        if flag:
            line += f"\t# {flag}"
        out.append(line + "\n")
    return "".join(out)


def parse_table(text: str) -> np.ndarray:
    """Read a table written by :func:`format_table` back into a float array."""
    rows = []
    for lineno, txt in _numbered_lines(text):
        txt = txt.split("#", 1)[0].strip()
        if txt:
            rows.append(_floats(txt.split(), lineno))
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows)
