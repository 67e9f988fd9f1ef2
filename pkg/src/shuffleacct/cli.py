"""Command-line front end: delta/epsilon curves, PLD exports and sweeps.

Exit status is 0 on success, 2 when a parameter is out of range and 3 when
the accountant cannot reach a requested delta on the configured grid.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .accountant import (AccountantConfig, ComposedDensity, DeltaForm, DeltaRangeError,
                         compose, epsilon_for_delta, round_grid_size)
from .clones import ClonesParams, build_clones_pld
from .krr import Adversary, JointModel, KrrParams, build_krr_pld
from .oracles import gaussian_shuffle_mc
from .pld import DiscretePLD, Direction, to_csv

COLUMNS = ("eps", "delta", "n_c", "mechanism", "adversary", "direction")
EXIT_VALIDATION = 2
EXIT_RANGE = 3


@dataclass
class Record:
    eps: float
    delta: float
    n_c: int
    mechanism: str
    adversary: str
    direction: str
    std_error: float | None = None

    def as_dict(self) -> dict:
        out = {name: getattr(self, name) for name in COLUMNS}
        if self.std_error is not None:
            out["std_error"] = self.std_error
        return out


class UsageError(ValueError):
    pass


def _hetero(text: str) -> tuple[int, float, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected n,eps0,count, got {text!r}")
    try:
        return int(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad --hetero entry {text!r}: {exc}") from None


def _add_accountant(p: argparse.ArgumentParser, query: bool = True) -> None:
    p.add_argument("--nc", type=int, default=1, help="number of compositions")
    p.add_argument("--L", type=float, default=20.0, help="grid half-width in nats")
    p.add_argument("--m", type=float, default=1e7,
                   help="grid size; rounded up to a power of two (see --even-m)")
    p.add_argument("--even-m", action="store_true",
                   help="round --m up to the next even size instead of a power of two")
    p.add_argument("--direction", default="max-both",
                   choices=[d.value for d in Direction])
    if query:
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--eps", type=float, nargs="+", help="report delta at these eps")
        group.add_argument("--delta", type=float, nargs="+", help="report eps at these deltas")


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", help="output file (default: standard output)")


def _add_clones(p: argparse.ArgumentParser, subsampled: bool = False) -> None:
    p.add_argument("--n", type=int, help="number of users")
    p.add_argument("--eps0", type=float, help="local DP parameter")
    p.add_argument("--tau", type=float, default=1e-12, help="Hoeffding truncation mass")
    if subsampled:
        p.add_argument("--ratio", type=float, required=True, help="subsampling ratio in (0, 1]")
        p.add_argument("--population-rounding", choices=("nearest", "floor"),
                       default="nearest")
    else:
        p.add_argument("--hetero", type=_hetero, action="append", metavar="N,EPS0,COUNT",
                       help="compose heterogeneous clones PLDs (repeatable; replaces --n/--eps0/--nc)")


def _add_krr(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True, help="probability of randomising")
    p.add_argument("--adversary", choices=[a.value for a in Adversary], default="strong")
    p.add_argument("--joint-model", choices=[j.value for j in JointModel],
                   default=JointModel.VIEW_JOINT.value)
    p.add_argument("--tau", type=float, default=1e-12)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shuffle-acct",
        description="Numerical privacy accounting for shuffled local randomisers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clones", help="general shuffled eps0-LDP mechanism (hockey-stick form)")
    _add_clones(p)
    _add_accountant(p)
    _add_output(p)

    p = sub.add_parser("clones-subsampled", help="clones pair with user subsampling")
    _add_clones(p, subsampled=True)
    _add_accountant(p)
    _add_output(p)

    p = sub.add_parser("krr", help="shuffled k-ary randomised response (tail form)")
    _add_krr(p)
    _add_accountant(p)
    _add_output(p)

    p = sub.add_parser("gaussian-mc", help="Monte Carlo hockey-stick for shuffled Gaussians")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--eps", type=float, nargs="+", required=True)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)

    p = sub.add_parser("sweep", help="delta over an eps grid, sorted by eps")
    p.add_argument("--mechanism", choices=("clones", "clones-subsampled", "krr"), required=True)
    p.add_argument("--eps-min", type=float, default=0.0)
    p.add_argument("--eps-max", type=float, default=5.0)
    p.add_argument("--eps-num", type=int, default=51)
    # Mechanism flags are the union of the clones and k-RR ones.
    p.add_argument("--n", type=int)
    p.add_argument("--eps0", type=float)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--population-rounding", choices=("nearest", "floor"), default="nearest")
    p.add_argument("--k", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--adversary", choices=[a.value for a in Adversary], default="strong")
    p.add_argument("--joint-model", choices=[j.value for j in JointModel],
                   default=JointModel.VIEW_JOINT.value)
    p.add_argument("--tau", type=float, default=1e-12)
    _add_accountant(p, query=False)
    _add_output(p)

    p = sub.add_parser("export-pld", help="write a single-round PLD as CSV or JSON")
    p.add_argument("--mechanism", choices=("clones", "clones-subsampled", "krr"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps0", type=float)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--population-rounding", choices=("nearest", "floor"), default="nearest")
    p.add_argument("--k", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--adversary", choices=[a.value for a in Adversary], default="strong")
    p.add_argument("--joint-model", choices=[j.value for j in JointModel],
                   default=JointModel.VIEW_JOINT.value)
    p.add_argument("--tau", type=float, default=1e-12)
    p.add_argument("--direction", default=Direction.NUM_OVER_DEN.value,
                   choices=[Direction.NUM_OVER_DEN.value, Direction.DEN_OVER_NUM.value])
    _add_output(p)
    return parser


def _require(args, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def _config(args) -> AccountantConfig:
    if not args.m >= 2:
        raise UsageError(f"--m must be at least 2, got {args.m}")
    m = round_grid_size(args.m, power_of_two=not args.even_m)
    config = AccountantConfig(args.L, m)
    print(f"grid: m={m} (requested {args.m:g}), dx={config.dx:.6g}, L={args.L:g}",
          file=sys.stderr)
    return config


# A mechanism is described by a function from a concrete direction to a
# composition spec, plus labels and the delta form it is accounted in.
@dataclass
class Mechanism:
    spec_for: Callable[[Direction], list]
    name: str
    adversary: str
    form: DeltaForm
    symmetric: bool = False


def _clones_mechanism(args, subsampled: bool) -> Mechanism:
    ratio = args.ratio if subsampled else 1.0
    rounding = getattr(args, "population_rounding", "nearest")
    hetero = getattr(args, "hetero", None)
    if hetero:
        entries = hetero
    else:
        _require(args, "n", "eps0")
        entries = [(args.n, args.eps0, args.nc)]
    for _, _, count in entries:
        if count < 1:
            raise UsageError(f"composition counts must be >= 1, got {count}")
    # Validate eagerly so errors surface before any heavy work.
    for n, eps0, _ in entries:
        ClonesParams(n, eps0, args.tau, ratio, population_rounding=rounding)

    def spec_for(direction: Direction) -> list:
        return [(build_clones_pld(ClonesParams(n, eps0, args.tau, ratio, direction, rounding)),
                 count) for n, eps0, count in entries]

    name = "clones-subsampled" if ratio != 1 else "clones"
    return Mechanism(spec_for, name, "", DeltaForm.HOCKEY_STICK)


def _krr_mechanism(args) -> Mechanism:
    _require(args, "n", "k", "gamma")
    if args.nc < 1:
        raise UsageError(f"--nc must be >= 1, got {args.nc}")
    params = KrrParams(args.n, args.k, args.gamma, args.tau, Adversary(args.adversary),
                       JointModel(args.joint_model))
    if params.adversary is Adversary.WEAK and params.gamma <= 0:
        raise UsageError("the weak-adversary model needs --gamma > 0")
    cache: dict = {}

    def spec_for(direction: Direction) -> list:
        if "pld" not in cache:
            cache["pld"] = build_krr_pld(params)
        return [(cache["pld"], args.nc)]

    # Classes 1 and 2 are exchangeable, so both directions give the same PLD.
    return Mechanism(spec_for, "krr", params.adversary.value,
                     DeltaForm.TAIL_PROBABILITY, symmetric=True)


def _mechanism(args, kind: str) -> Mechanism:
    if kind == "krr":
        return _krr_mechanism(args)
    if kind == "clones-subsampled":
        _require(args, "ratio")
        return _clones_mechanism(args, subsampled=True)
    return _clones_mechanism(args, subsampled=False)


def _directions(requested: Direction, mech: Mechanism) -> list[Direction]:
    if requested is not Direction.MAX_BOTH:
        return [requested]
    if mech.symmetric:
        return [Direction.NUM_OVER_DEN]
    return [Direction.NUM_OVER_DEN, Direction.DEN_OVER_NUM]


def _composed(args, mech: Mechanism, config: AccountantConfig) -> list[ComposedDensity]:
    return [compose(mech.spec_for(d), config)
            for d in _directions(Direction(args.direction), mech)]


def _total_count(args) -> int:
    hetero = getattr(args, "hetero", None)
    return sum(c for _, _, c in hetero) if hetero else args.nc


def _query(args, mech: Mechanism, eps_values=None) -> list[Record]:
    config = _config(args)
    composed = _composed(args, mech, config)
    n_c = _total_count(args)
    label = dict(n_c=n_c, mechanism=mech.name, adversary=mech.adversary,
                 direction=args.direction)
    records = []
    if eps_values is None and args.delta is not None:
        for target in args.delta:
            eps = max(epsilon_for_delta(c, None, target, mech.form) for c in composed)
            records.append(Record(eps, target, **label))
        return records
    for eps in eps_values if eps_values is not None else args.eps:
        delta = max(c.delta(eps, mech.form) for c in composed)
        records.append(Record(float(eps), delta, **label))
    return records


def _gaussian(args) -> list[Record]:
    if args.n < 1 or args.n > 8:
        raise UsageError(f"--n must lie in [1, 8] for the Monte Carlo oracle, got {args.n}")
    out = []
    for eps in args.eps:
        est = gaussian_shuffle_mc(args.n, args.sigma, eps, args.samples, args.seed)
        out.append(Record(eps, est.estimate, 1, "gaussian-mc", "",
                          Direction.NUM_OVER_DEN.value, est.std_error))
    return out


def _sweep(args) -> list[Record]:
    if args.eps_num < 1:
        raise UsageError(f"--eps-num must be >= 1, got {args.eps_num}")
    if args.eps_max < args.eps_min:
        raise UsageError("--eps-max must not be below --eps-min")
    mech = _mechanism(args, args.mechanism)
    grid = np.linspace(args.eps_min, args.eps_max, args.eps_num)
    records = _query(args, mech, eps_values=[float(e) for e in grid])
    return sorted(records, key=lambda r: r.eps)


def _export(args) -> str:
    direction = Direction(args.direction)
    if args.mechanism == "krr":
        _require(args, "k", "gamma")
        pld = build_krr_pld(KrrParams(args.n, args.k, args.gamma, args.tau,
                                      Adversary(args.adversary), JointModel(args.joint_model)))
    else:
        _require(args, "eps0")
        ratio = args.ratio if args.mechanism == "clones-subsampled" else 1.0
        pld = build_clones_pld(ClonesParams(args.n, args.eps0, args.tau, ratio, direction,
                                            args.population_rounding))
    if args.format == "csv":
        return to_csv(pld)
    return json.dumps(_pld_json(pld), indent=2) + "\n"


def _pld_json(pld: DiscretePLD) -> dict:
    meta = {k: (v.value if hasattr(v, "value") else v) for k, v in pld.meta.items()}
    return {"losses": pld.losses.tolist(), "masses": pld.masses.tolist(),
            "infinity_mass": pld.infinity_mass, "truncated_mass": pld.truncated_mass,
            "direction": pld.direction.value, "meta": meta}


def _render(records: Sequence[Record], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([r.as_dict() for r in records], indent=2) + "\n"
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in records:
        writer.writerow([repr(r.eps), repr(r.delta), r.n_c, r.mechanism, r.adversary,
                         r.direction])
    return out.getvalue()


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            if args.command == "export-pld":
                text = _export(args)
            else:
                if args.command == "gaussian-mc":
                    records = _gaussian(args)
                elif args.command == "sweep":
                    records = _sweep(args)
                else:
                    records = _query(args, _mechanism(args, args.command))
                text = _render(records, args.format)
        except DeltaRangeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RANGE
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        finally:
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
    _emit(text, args.output)
    return 0


def main() -> None:
    sys.exit(run())
