"""User-level procedures: (T, mu) scans, two-phase boundary tracking and
low-temperature annealing, plus the boundary-step arithmetic they share."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from .atat_io import format_table
from .lattice import Supercell, build_supercell, commensurate_repeats, random_config, spin_config_from_structure, structure_periods
from .mc import PointStats, RunControls, Walker, integrate_phi, make_rng, run_point, stats_to_phipoint
from .model import ClusterExpansion, SpinConfig, eci_at_temperature, energy_per_site
from .thermo import (
    GroundStateSet,
    PhiPoint,
    hte_phi,
    input_mu_to_physical,
    lte_phi,
)

__all__ = [
    "BoundaryPoint",
    "ScanPlan",
    "BoundaryPlan",
    "AnnealResult",
    "GapClosure",
    "SamePhaseError",
    "LTEInvalidError",
    "boundary_slope",
    "finite_difference_slope",
    "predict_mu_step",
    "solve_boundary_mu_lte",
    "auto_start",
    "driver_supercell",
    "track_boundary",
    "scan",
    "anneal_ground_state",
]

log = logging.getLogger(__name__)

KEV_BOLTZMANN = 8.617e-5


class GapClosure(Exception):
    """Both phases have the same concentration; the boundary step is undefined."""


class SamePhaseError(RuntimeError):
    pass


class LTEInvalidError(RuntimeError):
    pass


@dataclass
class BoundaryPoint:
    """One tracked row; ``E1``/``E2`` hold E - mu*x of each phase."""

    T: float
    mu: float
    x1: float
    x2: float
    E1: float
    E2: float
    stderr_x1: float = 0.0
    stderr_x2: float = 0.0
    flag: str | None = None
    stats: tuple[PointStats, PointStats] | None = field(default=None, repr=False)


@dataclass
class ScanPlan:
    gs: int
    mu0: float
    T0: float
    controls: RunControls
    mu1: float | None = None
    dmu: float | None = None
    T1: float | None = None
    dT: float | None = None
    dn: bool = False
    er: float = 20.0

    def __post_init__(self):
        if self.mu1 is not None and self.mu1 != self.mu0 and not self.dmu:
            raise ValueError("dmu must be nonzero when mu1 differs from mu0")
        if self.T1 is not None and self.T1 != self.T0 and not self.dT:
            raise ValueError("dT must be nonzero when T1 differs from T0")

    def mu_values(self) -> list[float]:
        return _grid(self.mu0, self.mu1, self.dmu)

    def temperatures(self) -> list[float]:
        ts = _grid(self.T0, self.T1, self.dT)
        ts = sorted(ts, reverse=self.dn)
        return ts


@dataclass
class BoundaryPlan:
    gs1: int
    gs2: int
    dT: float
    controls: RunControls
    er: float = 20.0
    T: float | None = None
    mu: float | None = None
    dn: bool = False
    T_stop: float | None = None
    max_rows: int = 10_000
    concurrent: bool = True

    def __post_init__(self):
        if self.gs1 == self.gs2:
            raise ValueError("gs1 and gs2 must differ")
        if self.controls.dx is None:
            raise ValueError("boundary tracking needs dx")
        if (self.T is None) != (self.mu is None):
            raise ValueError("give both T and mu to start from a known point")
        if self.dT == 0:
            raise ValueError("dT must be nonzero")


@dataclass
class AnnealResult:
    config: SpinConfig
    x: float
    e: float
    hull_e: float
    phi: float
    tangent_phi: float
    violates_hull: bool


def _grid(start: float, stop: float | None, step: float | None) -> list[float]:
    if stop is None or stop == start:
        return [float(start)]
    step = abs(step) if stop > start else -abs(step)
    n = int(math.floor((stop - start) / step + 1e-9))
    return [float(start + k * step) for k in range(n + 1)]


# boundary-step arithmetic ---------------------------------------------------


def boundary_slope(point: BoundaryPoint, k_B: float = 1.0) -> float:
    """d mu / d beta along coexistence from the stored E - mu*x columns."""
    dx = point.x2 - point.x1
    if dx == 0:
        raise GapClosure(f"x1 == x2 == {point.x1} at T={point.T}")
    beta = 1.0 / (k_B * point.T)
    E1 = point.E1 + point.mu * point.x1
    E2 = point.E2 + point.mu * point.x2
    return (E2 - E1) / (beta * dx) - point.mu / beta


def finite_difference_slope(a: BoundaryPoint, b: BoundaryPoint, k_B: float = 1.0) -> float:
    """(mu_a - mu_b) / (beta_a - beta_b) between two tabulated rows."""
    ba = 1.0 / (k_B * a.T)
    bb = 1.0 / (k_B * b.T)
    return (a.mu - b.mu) / (ba - bb)


def predict_mu_step(
    prev: BoundaryPoint, prev_dmu: float | None, T_next: float, k_B: float = 1.0
) -> tuple[float, float]:
    """Second-order extrapolation ``mu + 1.5 dmu - 0.5 prev_dmu``.

    ``prev_dmu=None`` marks the first step, which reuses ``dmu``.
    """
    slope = boundary_slope(prev, k_B)
    dbeta = 1.0 / (k_B * T_next) - 1.0 / (k_B * prev.T)
    dmu = slope * dbeta
    old = dmu if prev_dmu is None else prev_dmu
    return prev.mu + 1.5 * dmu - 0.5 * old, dmu


def _eci(ce: ClusterExpansion, T: float):
    return eci_at_temperature(ce, T) if ce.teci is not None else ce.eci


def solve_boundary_mu_lte(
    gs1: int,
    gs2: int,
    T: float,
    ce: ClusterExpansion,
    gs: GroundStateSet,
    ltep: float = 1e-3,
    k_B: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> float:
    """Newton solve of phi_LTE(gs1) = phi_LTE(gs2), started at the hull slope."""
    eci = _eci(ce, T)
    mu = (gs.e[gs2] - gs.e[gs1]) / (gs.x[gs2] - gs.x[gs1])
    for _ in range(max_iter):
        r1 = lte_phi(gs1, gs, ce, T, mu, k_B, ltep, eci)
        r2 = lte_phi(gs2, gs, ce, T, mu, k_B, ltep, eci)
        f = r1.phi - r2.phi
        if abs(f) < tol:
            break
        fp = r2.x - r1.x
        if fp == 0:
            raise LTEInvalidError("both expansions have the same concentration")
        mu -= f / fp
    else:
        raise LTEInvalidError(f"no LTE coexistence point found at T={T}")
    if not (r1.valid and r2.valid):
        raise LTEInvalidError(f"low-temperature expansion invalid at T={T}; raise ltep or lower T")
    return float(mu)


def auto_start(
    gs1: int, gs2: int, ce: ClusterExpansion, gs: GroundStateSet, ltep: float, k_B: float = 1.0
) -> tuple[float, float]:
    """Highest T on a doubling grid where both expansions stay valid."""
    vmax = float(np.max(np.abs(ce.eci))) or 1.0
    T = vmax / 100.0 / k_B
    mu = solve_boundary_mu_lte(gs1, gs2, T, ce, gs, ltep, k_B)
    for _ in range(64):
        try:
            mu_next = solve_boundary_mu_lte(gs1, gs2, 2 * T, ce, gs, ltep, k_B)
        except LTEInvalidError:
            break
        T, mu = 2 * T, mu_next
    return T, mu


def driver_supercell(ce: ClusterExpansion, structures, er: float) -> Supercell:
    """Inscribed-sphere supercell, enlarged to tile every given structure."""
    base = build_supercell(ce.lattice, er)
    periods = [structure_periods(s, ce.lattice) for s in structures]
    return Supercell(ce.lattice, commensurate_repeats(base.repeats, periods))


def _emit(out: TextIO | None, row, mode: str):
    if out is not None:
        out.write(format_table([row], mode))
        out.flush()


# boundary tracking ------------------------------------------------------------


def track_boundary(
    ce: ClusterExpansion,
    gs: GroundStateSet,
    plan: BoundaryPlan,
    out: TextIO | None = None,
    progress: Callable[[str], None] | None = None,
    accelerated: bool | None = None,
) -> list[BoundaryPoint]:
    """Follow the two-phase boundary between ``gs1`` and ``gs2`` in T.

    Each phase has its own walker that carries its configuration from step to
    step.  Rows are written to ``out`` as soon as they are measured.
    """
    c = plan.controls
    k_B = c.k_B
    if abs(plan.gs1 - plan.gs2) != 1:
        log.warning("ground states %d and %d are not adjacent in concentration", plan.gs1, plan.gs2)
    supercell = driver_supercell(ce, [gs.structures[plan.gs1], gs.structures[plan.gs2]], plan.er)
    if progress:
        progress("Supercell size: " + " ".join(str(n) for n in supercell.repeats))

    if plan.T is None:
        T, mu = auto_start(plan.gs1, plan.gs2, ce, gs, c.ltep, k_B)
    else:
        T, mu = float(plan.T), float(plan.mu)

    seeds = np.random.SeedSequence(c.seed).spawn(2)
    walkers = []
    for g, ss in zip((plan.gs1, plan.gs2), seeds):
        cfg = spin_config_from_structure(gs.structures[g], ce.lattice, supercell)
        walkers.append(Walker(ce, cfg, T, mu, k_B, rng=make_rng(ss), accelerated=accelerated))

    step = abs(plan.dT) * (-1 if plan.dn else 1)
    rows: list[BoundaryPoint] = []
    prev_dmu = None
    pool = ThreadPoolExecutor(max_workers=2) if plan.concurrent else None
    try:
        while len(rows) < plan.max_rows:
            for w in walkers:
                w.set_point(T, mu)
            if pool is not None:
                s1, s2 = pool.map(lambda w: run_point(w, c), walkers)
            else:
                s1, s2 = (run_point(w, c) for w in walkers)
            if progress:
                for k, s in enumerate((s1, s2), start=1):
                    progress(f"Phase {k} n_equil= {s.n_eq} n_avg= {s.n_avg}")
            point = BoundaryPoint(T, mu, s1.x, s2.x, s1.E_bar, s2.E_bar, s1.stderr_x, s2.stderr_x, stats=(s1, s2))
            gap = abs(s2.x - s1.x)
            if not rows and gap < 2 * c.dx:
                raise SamePhaseError(
                    f"both walkers ended in one phase at T={T}, mu={mu}: "
                    "the chemical potential does not stabilize this ground state"
                )
            if gap < 2 * c.dx:
                point.flag = "gap closure"
            elif not (s1.converged and s2.converged):
                point.flag = "not converged"
            rows.append(point)
            _emit(out, point, "boundary")
            if point.flag:
                break
            T_next = T + step
            if T_next <= 0 or (plan.T_stop is not None and (T_next - plan.T_stop) * step > 0):
                break
            mu, prev_dmu = predict_mu_step(point, prev_dmu, T_next, k_B)
            T = T_next
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


# scanning ---------------------------------------------------------------------


def _lte_or_none(gs_index, gs, ce, T, mu, c: RunControls):
    if gs_index < 0 or T <= 0:
        return None
    return lte_phi(gs_index, gs, ce, T, mu, c.k_B, c.ltep, _eci(ce, T))


def scan(
    ce: ClusterExpansion,
    gs: GroundStateSet,
    plan: ScanPlan,
    out: TextIO | None = None,
    progress: Callable[[str], None] | None = None,
    lte_out: TextIO | None = None,
    accelerated: bool | None = None,
) -> tuple[list[PointStats], SpinConfig]:
    """Scan chemical potential (outer loop) and temperature (inner loop).

    ``mu`` values in the plan are normalized input units.  Returns the
    measured rows and the final configuration.
    """
    c = plan.controls
    k_B = c.k_B
    structures = gs.structures if plan.gs < 0 else [gs.structures[plan.gs]]
    supercell = driver_supercell(ce, structures, plan.er)
    if progress:
        progress("Supercell size: " + " ".join(str(n) for n in supercell.repeats))
    rng = make_rng(c.seed)
    if plan.gs >= 0:
        config = spin_config_from_structure(gs.structures[plan.gs], ce.lattice, supercell)
    else:
        config = random_config(supercell, 0.0 if c.init_x is None else c.init_x, rng)
    if plan.gs >= 0 and c.init_x is not None:
        log.warning("init_x ignored when starting from a ground state")

    threshold = None
    if c.tstat is None or c.tstat != 0:
        mult = 3.0 if c.tstat is None else float(c.tstat)
        threshold = mult * max(c.dx or 0.0, 0.05)

    temps = plan.temperatures()
    rows: list[PointStats] = []
    column_head: tuple[PhiPoint, SpinConfig] | None = None
    walker = None
    for u in plan.mu_values():
        mu = input_mu_to_physical(u, gs) if len(gs) >= 2 else float(u)
        if column_head is not None:
            config = column_head[1].copy()
        prev_phi: PhiPoint | None = None
        for i, T in enumerate(temps):
            if walker is None:
                walker = Walker(ce, config, T, mu, k_B, rng=rng, accelerated=accelerated)
            else:
                if i == 0:
                    walker.config = config
                walker.set_point(T, mu)
                if i == 0:
                    walker.resync()
            stats = run_point(walker, c)
            lte = _lte_or_none(plan.gs, gs, ce, T, mu, c)
            if prev_phi is not None:
                phi = integrate_phi(prev_phi, stats, "along_T", k_B)
            elif c.phi0 is not None and column_head is None:
                phi = c.phi0
            elif lte is not None and lte.valid:
                phi = lte.phi
            elif column_head is not None:
                phi = integrate_phi(column_head[0], stats, "along_mu", k_B)
            elif plan.gs < 0:
                phi = hte_phi(ce, T, mu, k_B, _eci(ce, T))
            else:
                log.warning("no phi reference at T=%g mu=%g", T, mu)
                phi = float("nan")
            if prev_phi is None and lte_out is not None and lte is not None:
                lte_out.write(
                    f"{T:.6f}\t{mu:.6f}\t{lte.phi:.6f}\t{lte.x:.6f}\t{lte.E:.6f}\t{lte.correction:.6e}\t{int(lte.valid)}\n"
                )
                lte_out.flush()
            stats.phi = phi
            stats.g2c = c.g2c
            if not stats.converged:
                stats.flag = "not converged"
            walker.phi = phi
            point = stats_to_phipoint(stats, k_B)
            if progress:
                progress(f"Phase {max(plan.gs, 0)} n_equil= {stats.n_eq} n_avg= {stats.n_avg}")
            stop = False
            if threshold is not None and lte is not None and lte.valid and abs(stats.x - lte.x) > threshold:
                stats.flag = f"transition: |x - x_LTE| = {abs(stats.x - lte.x):.4f} > {threshold:.4f}"
                stop = True
            rows.append(stats)
            _emit(out, stats, "scan")
            if i == 0:
                column_head = (point, walker.config.copy())
            prev_phi = point
            if stop:
                break
    final = walker.config if walker is not None else config
    return rows, final


# annealing --------------------------------------------------------------------


def anneal_ground_state(
    ce: ClusterExpansion,
    mu_physical: float,
    T_schedule,
    er: float,
    seed=None,
    gs: GroundStateSet | None = None,
    sweeps_per_T: int = 2000,
    init_x: float = 0.0,
    k_B: float = 1.0,
    accelerated: bool | None = None,
) -> AnnealResult:
    """Cool a random configuration through ``T_schedule`` at fixed mu.

    The verdict compares the final ``e - mu*x`` with the lowest value any
    declared ground state reaches at this mu.
    """
    temps = [float(t) for t in T_schedule]
    if any(b > a for a, b in zip(temps, temps[1:])):
        raise ValueError("T_schedule must be non-increasing")
    structures = gs.structures if gs is not None else []
    supercell = driver_supercell(ce, structures, er)
    rng = make_rng(seed)
    config = random_config(supercell, init_x, rng)
    walker = Walker(ce, config, temps[0], mu_physical, k_B, rng=rng, accelerated=accelerated)
    for T in temps:
        walker.set_point(T, mu_physical)
        walker.sweep(sweeps_per_T)
    walker.resync()
    x = walker.x
    e = energy_per_site(walker.config, ce, walker.eci)
    phi = e - mu_physical * x
    if gs is None:
        return AnnealResult(walker.config, x, e, float("nan"), phi, float("nan"), False)
    tangent = float(np.min(gs.e - mu_physical * gs.x))
    hull_e = tangent + mu_physical * x
    return AnnealResult(walker.config, x, e, hull_e, phi, tangent, bool(phi < tangent - 1e-9))
