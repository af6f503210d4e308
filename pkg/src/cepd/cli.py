"""Command-line entry points ``cepd-scan`` and ``cepd-phb``.

Both read ``lat.in``, ``clusters.out``, ``eci.out`` (or ``teci.out``) and
``gs_str.out`` from the working directory.  Flags are accepted either GNU
style (``--gs1 0``) or in the single-dash ``-gs1=0`` form used by the
original tools.
"""
from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from . import atat_io
from .drivers import (
    KEV_BOLTZMANN,
    BoundaryPlan,
    LTEInvalidError,
    SamePhaseError,
    ScanPlan,
    scan,
    track_boundary,
)
from .mc import RunControls
from .model import ClusterExpansion
from .thermo import ground_states

log = logging.getLogger("cepd")

_SINGLE_DASH = re.compile(r"^-([A-Za-z][A-Za-z0-9_]*)(=.*)?$")


def normalize_argv(argv: list[str]) -> list[str]:
    """Rewrite ``-name[=value]`` tokens as ``--name[=value]``."""
    out = []
    for tok in argv:
        m = _SINGLE_DASH.match(tok)
        out.append("-" + tok if m and not tok.startswith("--") else tok)
    return out


def load_model(workdir: Path = Path(".")):
    """Read the input files and build the expansion plus ground states."""
    workdir = Path(workdir)
    lattice = atat_io.parse_lattice((workdir / "lat.in").read_text())
    clusters = atat_io.parse_clusters((workdir / "clusters.out").read_text())
    teci_path = workdir / "teci.out"
    teci = None
    if teci_path.exists():
        teci = atat_io.parse_teci(teci_path.read_text(), n_clusters=len(clusters))
        eci = teci.rows[0]
    else:
        eci = atat_io.parse_eci((workdir / "eci.out").read_text(), n_clusters=len(clusters))
    ce = ClusterExpansion.from_specs(lattice, clusters, eci, teci)
    structures = atat_io.parse_structures((workdir / "gs_str.out").read_text())
    return ce, ground_states(ce, structures)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--er", type=float, default=20.0, help="supercell inscribed-sphere radius")
    kb = p.add_mutually_exclusive_group()
    kb.add_argument("--k", type=float, default=None, help="Boltzmann constant (default 1)")
    kb.add_argument("--kev", "--keV", action="store_true", help="use k_B = 8.617e-5 (eV/K)")
    p.add_argument("--dx", type=float, default=None, help="target standard error of x")
    p.add_argument("--ltep", type=float, default=1e-3, help="LTE validity threshold")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dn", action="store_true", help="go downward in temperature")
    p.add_argument("--workdir", type=Path, default=Path("."), help="directory holding the input files")
    p.add_argument("-v", "--verbose", action="store_true")


def _k_B(args) -> float:
    if args.kev:
        return KEV_BOLTZMANN
    return 1.0 if args.k is None else args.k


def _say(msg: str):
    print(msg, flush=True)


def scan_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cepd-scan", description="Semi-grand-canonical Monte Carlo scan over (T, mu).", allow_abbrev=False)
    p.add_argument("--gs", type=int, default=0, help="starting ground state; -1 for a disordered start")
    p.add_argument("--mu0", type=float, required=True, help="first chemical potential (normalized units)")
    p.add_argument("--mu1", type=float, default=None)
    p.add_argument("--dmu", type=float, default=None)
    p.add_argument("--T0", type=float, required=True)
    p.add_argument("--T1", type=float, default=None)
    p.add_argument("--dT", type=float, default=None)
    p.add_argument("--n", type=int, default=None, help="fixed number of averaging sweeps")
    p.add_argument("--eq", type=int, default=None, help="fixed number of equilibration sweeps")
    p.add_argument("--tstat", type=float, default=None, help="transition check multiplier; 0 disables")
    p.add_argument("--g2c", action="store_true", help="report canonical energy E instead of E - mu x")
    p.add_argument("--phi0", type=float, default=None)
    p.add_argument("--x", type=float, default=None, help="initial concentration for a disordered start")
    p.add_argument("-o", "--o", dest="out", default="mc.out")
    _common(p)
    return p


def phb_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cepd-phb", description="Track a two-phase boundary in temperature.", allow_abbrev=False)
    p.add_argument("--gs1", type=int, required=True)
    p.add_argument("--gs2", type=int, required=True)
    p.add_argument("--T", type=float, default=None, help="start temperature (with --mu)")
    p.add_argument("--mu", type=float, default=None, help="start chemical potential, physical units")
    p.add_argument("--dT", type=float, required=True)
    p.add_argument("--Tmax", type=float, default=None, help="stop after passing this temperature")
    p.add_argument("-o", "--o", dest="out", default="phb.out")
    _common(p)
    return p


def _setup_logging(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s: %(message)s")


def scan_main(argv=None) -> int:
    argv = normalize_argv(sys.argv[1:] if argv is None else list(argv))
    args = scan_parser().parse_args(argv)
    _setup_logging(args.verbose)
    if args.dx is None and args.n is None:
        args.dx = 1e-3
    controls = RunControls(
        dx=args.dx,
        n=args.n,
        eq=args.eq,
        tstat=args.tstat,
        ltep=args.ltep,
        k_B=_k_B(args),
        seed=args.seed,
        g2c=args.g2c,
        phi0=args.phi0,
        init_x=args.x,
    )
    plan = ScanPlan(
        gs=args.gs,
        mu0=args.mu0,
        mu1=args.mu1,
        dmu=args.dmu,
        T0=args.T0,
        T1=args.T1,
        dT=args.dT,
        dn=args.dn,
        er=args.er,
        controls=controls,
    )
    ce, gs = load_model(args.workdir)
    with open(args.out, "w") as out, open(args.workdir / "ltedat.out", "w") as lte_out:
        rows, final = scan(ce, gs, plan, out=out, progress=_say, lte_out=lte_out)
    snap = atat_io.write_snapshot(final, final.supercell, ce.lattice)
    (args.workdir / "mcsnapshot.out").write_text(snap)
    if rows:
        sys.stdout.write(atat_io.format_table(rows[:1], "scan"))
    return 0


def phb_main(argv=None) -> int:
    argv = normalize_argv(sys.argv[1:] if argv is None else list(argv))
    args = phb_parser().parse_args(argv)
    _setup_logging(args.verbose)
    if (args.T is None) != (args.mu is None):
        print("cepd-phb: give both --T and --mu, or neither", file=sys.stderr)
        return 2
    controls = RunControls(dx=args.dx if args.dx is not None else 1e-3, ltep=args.ltep, k_B=_k_B(args), seed=args.seed)
    plan = BoundaryPlan(
        gs1=args.gs1,
        gs2=args.gs2,
        dT=args.dT,
        controls=controls,
        er=args.er,
        T=args.T,
        mu=args.mu,
        dn=args.dn,
        T_stop=args.Tmax,
    )
    ce, gs = load_model(args.workdir)
    try:
        with open(args.out, "w") as out:
            track_boundary(ce, gs, plan, out=out, progress=_say)
    except (SamePhaseError, LTEInvalidError) as exc:
        print(f"cepd-phb: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(scan_main())
