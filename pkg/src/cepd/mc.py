"""Semi-grand-canonical Metropolis walker and point measurements."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import ClusterExpansion, SpinConfig, eci_at_temperature
from .thermo import PhiPoint

__all__ = [
    "RunControls",
    "PointStats",
    "Walker",
    "BlockAverager",
    "metropolis_sweep",
    "run_point",
    "integrate_phi",
    "make_rng",
]

log = logging.getLogger(__name__)

RESYNC_FLIPS = 1 << 16


def make_rng(seed=None) -> np.random.Generator:
    """PCG64 generator (128-bit state); ``seed`` may be an int or a SeedSequence."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class RunControls:
    dx: float | None = None
    n: int | None = None
    eq: int | None = None
    tstat: float | None = None
    ltep: float = 1e-3
    k_B: float = 1.0
    seed: int | None = None
    g2c: bool = False
    phi0: float | None = None
    init_x: float | None = None
    max_sweeps: int = 1 << 24
    eq_block: int = 128
    avg_block: int = 256

    def __post_init__(self):
        if self.n is None and self.dx is None:
            raise ValueError("either dx or n must be given")
        if self.n is not None and self.n < 0:
            raise ValueError("n must be non-negative")
        if self.dx is not None and self.dx <= 0:
            raise ValueError("dx must be positive")


@dataclass
class PointStats:
    T: float
    mu: float
    E: float
    x: float
    phi: float
    stderr_x: float
    n_eq: int
    n_avg: int
    stderr_E: float = 0.0
    converged: bool = True
    g2c: bool = False
    flag: str | None = None

    @property
    def E_bar(self) -> float:
        return self.E - self.mu * self.x


class BlockAverager:
    """Streaming mean with a blocking estimate of the standard error.

    Samples are folded into at most ``2 * max_bins`` equal bins; the error is
    the largest naive error over successive pairwise-merged bin levels that
    still have ``min_bins`` bins.
    """

    def __init__(self, max_bins: int = 1024, min_bins: int = 16):
        self.max_bins = max_bins
        self.min_bins = min_bins
        self.bin_size = 1
        self.bins: list[float] = []  # bin sums
        self.partial = 0.0
        self.partial_n = 0
        self.count = 0
        self.total = 0.0

    def extend(self, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        self.count += data.size
        self.total += float(data.sum())
        pos = 0
        if self.partial_n:
            take = min(self.bin_size - self.partial_n, data.size)
            self.partial += float(data[:take].sum())
            self.partial_n += take
            pos = take
            if self.partial_n == self.bin_size:
                self.bins.append(self.partial)
                self.partial, self.partial_n = 0.0, 0
        rest = data[pos:]
        nfull = rest.size // self.bin_size
        if nfull:
            self.bins.extend(rest[: nfull * self.bin_size].reshape(nfull, self.bin_size).sum(axis=1).tolist())
        tail = rest[nfull * self.bin_size :]
        if tail.size:
            self.partial += float(tail.sum())
            self.partial_n += tail.size
        while len(self.bins) >= 2 * self.max_bins:
            self._merge()

    def _merge(self):
        b = self.bins
        if len(b) % 2:
            # odd bin out becomes the head of the new partial bin
            self.partial += b[-1]
            self.partial_n += self.bin_size
            b = b[:-1]
        arr = np.asarray(b).reshape(-1, 2).sum(axis=1)
        self.bins = arr.tolist()
        self.bin_size *= 2

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else float("nan")

    @property
    def stderr(self) -> float:
        if not self.bins or len(self.bins) < 2:
            return float("inf") if self.count > 1 else 0.0
        means = np.asarray(self.bins) / self.bin_size
        best = float(np.std(means, ddof=1) / math.sqrt(len(means)))
        while len(means) >= 2 * self.min_bins:
            if len(means) % 2:
                means = means[:-1]
            means = means.reshape(-1, 2).mean(axis=1)
            best = max(best, float(np.std(means, ddof=1) / math.sqrt(len(means))))
        return best


class Walker:
    """One Metropolis walker: owns its configuration and random stream."""

    def __init__(
        self,
        ce: ClusterExpansion,
        config: SpinConfig,
        T: float,
        mu: float,
        k_B: float = 1.0,
        rng: np.random.Generator | None = None,
        seed=None,
        phi: float = float("nan"),
        accelerated: bool | None = None,
    ):
        self.ce = ce
        self.config = config
        self.index = ce.index(config.supercell)
        self.rng = rng if rng is not None else make_rng(seed)
        self.k_B = k_B
        self.phi = phi
        self.accelerated = accelerated
        self.accepted = 0
        self._since_sync = 0
        self.T = float("nan")
        self.set_point(T, mu)

    @property
    def n_sites(self) -> int:
        return self.config.supercell.n_sites

    @property
    def beta(self) -> float:
        if self.T == 0:
            return math.inf
        return 1.0 / (self.k_B * self.T)

    def set_point(self, T: float, mu: float):
        if T < 0:
            raise ValueError("temperature must be non-negative")
        changed_T = T != self.T
        self.T = float(T)
        self.mu = float(mu)
        if changed_T or not hasattr(self, "eci"):
            self.eci = eci_at_temperature(self.ce, T) if self.ce.teci is not None else self.ce.eci
            self.coef = self.index.coefficients(self.eci)
            site_of_entry = np.repeat(np.arange(self.n_sites), np.diff(self.index.ptr))
            bound = np.zeros(self.n_sites)
            np.add.at(bound, site_of_entry, np.abs(self.coef))
            self.max_flip_energy = 2.0 * float(bound.max()) if self.n_sites else 0.0
            self.resync()

    def resync(self):
        self.e_total = self.index.total_energy(self.config.sigma, self.eci)
        self.s_total = int(self.config.sigma.sum(dtype=np.int64))
        self._since_sync = 0

    @property
    def x(self) -> float:
        return self.s_total / self.n_sites

    @property
    def energy(self) -> float:
        return self.e_total / self.n_sites

    def sweep(self, n_sweeps: int, record_codes: bool = False):
        """Run sweeps; returns per-sweep x and E (and state codes when asked)."""
        xs_all, es_all, codes_all = [], [], []
        per_chunk = max(1, RESYNC_FLIPS // self.n_sites)
        left = int(n_sweeps)
        while left > 0:
            k = min(left, per_chunk)
            self.e_total, self.s_total, acc, xs, es, codes = kernels.sweeps(
                self.config.sigma,
                k,
                self.beta,
                self.mu,
                self.index.ptr,
                self.coef,
                self.index.co,
                self.rng,
                self.e_total,
                self.s_total,
                record_codes=record_codes,
                accelerated=self.accelerated,
            )
            self.accepted += acc
            self._since_sync += k * self.n_sites
            if self._since_sync >= RESYNC_FLIPS:
                self.resync()
            xs_all.append(xs)
            es_all.append(es)
            codes_all.append(codes)
            left -= k
        if not xs_all:
            return np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64)
        return np.concatenate(xs_all), np.concatenate(es_all), np.concatenate(codes_all)


def metropolis_sweep(walker: Walker) -> Walker:
    walker.sweep(1)
    return walker


def _halves_agree(xs: np.ndarray) -> bool:
    h = len(xs) // 2
    a, b = BlockAverager(), BlockAverager()
    a.extend(xs[:h])
    b.extend(xs[h : 2 * h])
    pooled = math.sqrt(a.stderr**2 + b.stderr**2)
    return abs(a.mean - b.mean) <= pooled


def run_point(walker: Walker, controls: RunControls) -> PointStats:
    """Equilibrate, then average until the error target (or fixed count) is met."""
    used = 0
    converged = True
    cap = controls.max_sweeps

    # equilibration
    if controls.eq is not None:
        if controls.eq:
            walker.sweep(controls.eq)
        n_eq = int(controls.eq)
        used += n_eq
    else:
        block = controls.eq_block
        n_eq = 0
        while True:
            xs, _, _ = walker.sweep(block)
            n_eq += block
            used += block
            if _halves_agree(xs):
                break
            if used + 2 * block > cap:
                converged = False
                break
            block *= 2

    xa, ea = BlockAverager(), BlockAverager()
    if controls.n is not None:
        if controls.n == 0:
            xa.extend([walker.x])
            ea.extend([walker.energy])
            n_avg = 1
        else:
            xs, es, _ = walker.sweep(controls.n)
            xa.extend(xs)
            ea.extend(es)
            n_avg = controls.n
    else:
        n_avg = 0
        step = controls.avg_block
        while True:
            if used + step > cap:
                converged = False
                if n_avg:
                    break
                step = max(1, min(step, cap - used))
            xs, es, _ = walker.sweep(step)
            xa.extend(xs)
            ea.extend(es)
            n_avg += step
            used += step
            if xa.stderr < controls.dx:
                break
            step = n_avg  # doubles the total
    se_x = xa.stderr if n_avg > 1 else 0.0
    se_e = ea.stderr if n_avg > 1 else 0.0
    if controls.n != 0:
        # a run that saw no flips still cannot resolve less than one flip per window
        n_sites = walker.n_sites
        se_x = max(se_x, 2.0 / n_sites / n_avg)
        se_e = max(se_e, walker.max_flip_energy / n_sites / n_avg)
    return PointStats(
        T=walker.T,
        mu=walker.mu,
        E=ea.mean,
        x=xa.mean,
        phi=walker.phi,
        stderr_x=se_x,
        n_eq=n_eq,
        n_avg=n_avg,
        stderr_E=se_e,
        converged=converged,
        g2c=controls.g2c,
    )


def integrate_phi(prev: PhiPoint, current: PointStats, path: str, k_B: float = 1.0) -> float:
    """Trapezoidal thermodynamic-integration step from ``prev`` to ``current``.

    ``along_T``: d(beta*phi) = (E - mu x) d beta at fixed mu.
    ``along_mu``: d phi = -x d mu at fixed T.
    """
    dT = current.T - prev.T
    dmu = current.mu - prev.mu
    if path == "along_T":
        if abs(dmu) > 1e-12 * max(1.0, abs(prev.mu)):
            raise ValueError("along_T step changes mu")
        beta = 1.0 / (k_B * current.T)
        ebar_prev = prev.E - prev.mu * prev.x
        ebar_cur = current.E - current.mu * current.x
        bphi = prev.beta * prev.phi + 0.5 * (ebar_prev + ebar_cur) * (beta - prev.beta)
        return bphi / beta
    if path == "along_mu":
        if abs(dT) > 1e-12 * max(1.0, abs(prev.T)):
            raise ValueError("along_mu step changes T")
        return prev.phi - 0.5 * (prev.x + current.x) * dmu
    raise ValueError(f"unknown integration path {path!r}")


def stats_to_phipoint(stats: PointStats, k_B: float = 1.0) -> PhiPoint:
    return PhiPoint(stats.T, 1.0 / (k_B * stats.T), stats.mu, stats.phi, stats.x, stats.E)
